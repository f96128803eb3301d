//! The experiment grid: main comparison, ablations, protocol comparison,
//! lifespan and hyperparameter sweeps. Every cell of a table runs the same
//! episode seeds.

use std::path::Path;

use crate::env::{env_reset, env_step, Difficulty, EnvConfig, Phase};
use crate::error::Result;
use crate::math::SeededRng;
use crate::oracle::{oracle_action, Dataset};
use crate::scheduler::{
    check_trace, lifespan_rollout, run_rollout, ControllerMode, ControllerSpec, Protocol,
    RolloutTrace,
};

use super::config::Recipe;
use super::pipeline::{train_mode_policy, Artifacts};
use super::stats::spearman;
use super::table::{ResultRow, ResultsTable};

/// Seed of episode `i` in every cell.
pub fn episode_seed(recipe: &Recipe, i: usize) -> u64 {
    recipe.eval.seed + i as u64
}

pub fn spec_for(recipe: &Recipe, mode: ControllerMode, protocol: Protocol) -> ControllerSpec {
    let mut spec = ControllerSpec::new(
        mode,
        recipe.chunking_for(mode),
        recipe.latency.with_protocol(protocol),
    );
    spec.solve_steps = recipe.eval.baseline_solve_steps;
    spec
}

fn tier_env(recipe: &Recipe, tier: Difficulty) -> EnvConfig {
    recipe.env.clone().with_difficulty(tier)
}

/// Which cell to run.
#[derive(Debug, Clone, Copy)]
pub struct Cell {
    pub mode: ControllerMode,
    pub protocol: Protocol,
    pub tier: Difficulty,
    pub lifespan: Option<usize>,
}

/// Runs one cell and returns its row together with the traces.
pub fn run_cell(
    recipe: &Recipe,
    arts: &Artifacts,
    cell: Cell,
    episodes: usize,
) -> Result<(ResultRow, Vec<RolloutTrace>)> {
    let env = tier_env(recipe, cell.tier);
    let ctl = arts.controller(recipe, cell.mode)?;
    let spec = spec_for(recipe, cell.mode, cell.protocol);
    let mut traces = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let seed = episode_seed(recipe, i);
        let tr = match cell.lifespan {
            Some(l) => lifespan_rollout(&env, ctl, &spec, l, seed)?,
            None => run_rollout(&env, ctl, &spec, seed)?,
        };
        traces.push(tr);
    }
    let outcomes: Vec<(bool, usize)> = traces
        .iter()
        .map(|t| (t.is_success(), t.final_time_step))
        .collect();
    let periods: Vec<f64> = traces.iter().flat_map(|t| t.chunk_periods()).collect();
    let hz = if periods.is_empty() {
        0.0
    } else {
        1000.0 * periods.len() as f64 / periods.iter().sum::<f64>()
    };
    let param = cell.lifespan.map_or("-".to_string(), |l| format!("l={l}"));
    let row = ResultRow::new(
        cell.mode.name(),
        cell.protocol.name(),
        cell.tier.name(),
        &param,
        &outcomes,
        hz,
        &ctl.policy.config_hash,
    );
    Ok((row, traces))
}

pub fn eval_cell(recipe: &Recipe, arts: &Artifacts, cell: Cell) -> Result<ResultRow> {
    Ok(run_cell(recipe, arts, cell, recipe.eval.episodes)?.0)
}

/// The expert itself as the controller, one action per control step.
pub fn oracle_row(recipe: &Recipe, tier: Difficulty, episodes: usize) -> Result<ResultRow> {
    let env = tier_env(recipe, tier);
    let mut outcomes = Vec::with_capacity(episodes);
    for i in 0..episodes {
        // Same world stream as the learned controllers' rollouts.
        let mut rng = SeededRng::new(episode_seed(recipe, i)).derive(0);
        let mut s = env_reset(&env, &mut rng)?;
        while !s.is_terminal() {
            s = env_step(&s, oracle_action(&s, &env), &env, &mut rng)?;
        }
        outcomes.push((s.phase == Phase::Done, s.time_step as usize));
    }
    let hz = 1000.0 / recipe.latency.control_dt;
    Ok(ResultRow::new(
        "oracle",
        Protocol::Paused.name(),
        tier.name(),
        "-",
        &outcomes,
        hz,
        &crate::hash::config_hash(&env),
    ))
}

/// Success rates of `modes` under one protocol, plus the oracle calibration
/// row.
pub fn eval_success_rate(
    recipe: &Recipe,
    arts: &Artifacts,
    modes: &[ControllerMode],
    protocol: Protocol,
    tier: Difficulty,
) -> Result<ResultsTable> {
    let mut t = ResultsTable::new(format!(
        "success rate ({} tier, {})",
        tier.name(),
        protocol.name()
    ));
    t.push(oracle_row(recipe, tier, recipe.eval.episodes)?)?;
    for &mode in modes {
        t.push(eval_cell(
            recipe,
            arts,
            Cell {
                mode,
                protocol,
                tier,
                lifespan: None,
            },
        )?)?;
    }
    Ok(t)
}

/// All four modes on the same paused episodes.
pub fn ablation_suite(recipe: &Recipe, arts: &Artifacts) -> Result<ResultsTable> {
    let mut t = ResultsTable::new(format!(
        "ablation ({} tier, paused)",
        recipe.eval.tier.name()
    ));
    for mode in ControllerMode::ALL {
        let cell = Cell {
            mode,
            protocol: Protocol::Paused,
            tier: recipe.eval.tier,
            lifespan: None,
        };
        t.push(eval_cell(recipe, arts, cell)?)?;
    }
    Ok(t)
}

/// Both protocols per mode; the non-paused row carries its retention
/// relative to the paused one.
pub fn paused_vs_nonpaused(
    recipe: &Recipe,
    arts: &Artifacts,
    modes: &[ControllerMode],
) -> Result<ResultsTable> {
    let mut t = ResultsTable::new(format!(
        "paused vs non-paused ({} tier)",
        recipe.eval.tier.name()
    ));
    for &mode in modes {
        let cell = |protocol| Cell {
            mode,
            protocol,
            tier: recipe.eval.tier,
            lifespan: None,
        };
        let mut paused = eval_cell(recipe, arts, cell(Protocol::Paused))?;
        let mut nonpaused = eval_cell(recipe, arts, cell(Protocol::Nonpaused))?;
        paused.retention = Some(1.0);
        nonpaused.retention = retention(nonpaused.success_rate, paused.success_rate);
        t.push(paused)?;
        t.push(nonpaused)?;
    }
    Ok(t)
}

fn retention(value: f64, reference: f64) -> Option<f64> {
    (reference > 0.0).then(|| value / reference)
}

/// The tidal controller across intent lifespans, with retention relative to
/// the first lifespan and the Spearman correlation of success against `l`.
pub fn lifespan_sweep(
    recipe: &Recipe,
    arts: &Artifacts,
    protocol: Protocol,
) -> Result<ResultsTable> {
    let mut t = ResultsTable::new(format!(
        "intent lifespan ({} tier, {})",
        recipe.eval.tier.name(),
        protocol.name()
    ));
    let mut reference = None;
    for &l in &recipe.lifespan.values {
        let cell = Cell {
            mode: ControllerMode::Tidal,
            protocol,
            tier: recipe.eval.tier,
            lifespan: Some(l),
        };
        let mut row = eval_cell(recipe, arts, cell)?;
        let r = *reference.get_or_insert(row.success_rate);
        row.retention = retention(row.success_rate, r);
        t.push(row)?;
    }
    let ls: Vec<f64> = recipe.lifespan.values.iter().map(|&l| l as f64).collect();
    let sr: Vec<f64> = t.rows.iter().map(|r| r.success_rate).collect();
    t.notes.push(match spearman(&ls, &sr) {
        Some(rho) => format!("spearman_rho(success, l) = {rho:.4}"),
        None => "spearman_rho(success, l) = undefined (constant column)".into(),
    });
    Ok(t)
}

pub fn lifespan_rho(table: &ResultsTable) -> Option<f64> {
    let ls: Vec<f64> = table
        .rows
        .iter()
        .filter_map(|r| r.param.strip_prefix("l=").and_then(|v| v.parse().ok()))
        .collect();
    let sr: Vec<f64> = table.rows.iter().map(|r| r.success_rate).collect();
    spearman(&ls, &sr)
}

/// Retrains the tidal policy per head-weight cell (at the recipe's alpha) and
/// per alpha cell (at the recipe's head weight) on a reduced budget, and
/// evaluates each on the same paused episodes.
pub fn hyperparam_sweep(
    recipe: &Recipe,
    data: &Dataset,
    arts: &Artifacts,
    checkpoint_root: Option<&Path>,
) -> Result<ResultsTable> {
    let steps = ((recipe.train.steps as f64 * recipe.sweep.budget_frac).round() as usize).max(1);
    let mut t = ResultsTable::new(format!(
        "horizon weight and time sampling ({} tier, paused, {} steps per cell)",
        recipe.eval.tier.name(),
        steps
    ));
    let mut cells: Vec<(String, f64, f64)> = Vec::new();
    for &w in &recipe.sweep.head_weights {
        cells.push((format!("w={w:.1}"), w, recipe.train.alpha));
    }
    for &a in &recipe.sweep.alphas {
        cells.push((format!("alpha={a:.1}"), recipe.train.head_weight, a));
    }
    let mode = ControllerMode::Tidal;
    for (label, w, alpha) in cells {
        let cfg = crate::flow::PolicyTrainConfig {
            steps,
            head_weight: w,
            alpha,
            ..recipe.train.clone()
        };
        let dir = checkpoint_root.map(|r| r.join(&label));
        let (policy, _) =
            train_mode_policy(recipe, data, &arts.motion, mode, &cfg, dir.as_deref())?;
        if let Some(d) = &dir {
            policy.save(&d.join("policy.txt"))?;
        }
        let cell_arts = Artifacts {
            motion: arts.motion.clone(),
            policies: vec![(mode, policy)],
        };
        let cell = Cell {
            mode,
            protocol: Protocol::Paused,
            tier: recipe.eval.tier,
            lifespan: None,
        };
        let mut row = eval_cell(recipe, &cell_arts, cell)?;
        row.param = label;
        t.push(row)?;
    }
    for prefix in ["w=", "alpha="] {
        let best = t
            .rows
            .iter()
            .filter(|r| r.param.starts_with(prefix))
            .max_by(|a, b| a.success_rate.total_cmp(&b.success_rate));
        if let Some(b) = best {
            t.notes.push(format!(
                "argmax {}: {} ({:.3})",
                prefix.trim_end_matches('='),
                b.param,
                b.success_rate
            ));
        }
    }
    Ok(t)
}

/// Runs `episodes` rollouts per mode and protocol and checks every trace's
/// structural guarantees.
pub fn check_invariants(recipe: &Recipe, arts: &Artifacts, episodes: usize) -> Result<usize> {
    let env = tier_env(recipe, recipe.eval.tier);
    let mut checked = 0;
    for (mode, _) in &arts.policies {
        for protocol in [Protocol::Paused, Protocol::Nonpaused] {
            let spec = spec_for(recipe, *mode, protocol);
            let ctl = arts.controller(recipe, *mode)?;
            for i in 0..episodes {
                let tr = run_rollout(&env, ctl, &spec, episode_seed(recipe, i))?;
                check_trace(&tr, &spec)?;
                checked += 1;
            }
        }
    }
    Ok(checked)
}
