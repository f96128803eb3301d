use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tidal_core::env::Difficulty;
use tidal_core::harness::{self, Artifacts, Recipe, ResultsTable};
use tidal_core::oracle::Dataset;
use tidal_core::scheduler::{ControllerMode, Protocol};
use tidal_core::{Result, TidalError};

#[derive(Parser)]
#[command(
    name = "tidal",
    version,
    about = "Dual-rate flow-matching controller experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Recipe file (TOML); defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for result tables.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalOpts {
    /// Directory holding motion.txt and policy_<mode>.txt.
    #[arg(long, default_value = "artifacts")]
    artifacts: PathBuf,
    /// Episodes per cell (overrides the recipe).
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    tier: Option<Difficulty>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an oracle dataset directory.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tier: Option<Difficulty>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset directory.
        #[arg(long, default_value = "data")]
        data: PathBuf,
    },
    /// Train the motion predictor on a dataset.
    TrainMotion {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "artifacts")]
        artifacts: PathBuf,
    },
    /// Train the policy of one or more modes (needs the motion predictor).
    TrainPolicy {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "artifacts")]
        artifacts: PathBuf,
        /// Modes to train; all four when omitted.
        #[arg(long = "mode")]
        modes: Vec<ControllerMode>,
    },
    /// Success rate of the given modes plus the oracle calibration row.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: EvalOpts,
        #[arg(long = "mode")]
        modes: Vec<ControllerMode>,
        #[arg(long, default_value = "paused")]
        protocol: Protocol,
        /// Directory for per-episode JSONL traces.
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Exit nonzero when a calibration or comparison gate fails.
        #[arg(long)]
        check: bool,
    },
    /// All four modes on the same paused episodes.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: EvalOpts,
    },
    /// Retrain and evaluate per head-weight and alpha cell.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: EvalOpts,
        #[arg(long, default_value = "data")]
        data: PathBuf,
    },
    /// Tidal success across intent lifespans.
    Lifespan {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: EvalOpts,
        #[arg(long, default_value = "paused")]
        protocol: Protocol,
    },
    /// Paused and non-paused success per mode.
    ProtocolCompare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: EvalOpts,
        #[arg(long = "mode")]
        modes: Vec<ControllerMode>,
    },
}

fn load_recipe(common: &Common) -> Result<Recipe> {
    match &common.config {
        Some(p) => Recipe::load(p),
        None => Ok(Recipe::default()),
    }
}

fn apply_eval(recipe: &mut Recipe, opts: &EvalOpts) {
    if let Some(n) = opts.episodes {
        recipe.eval.episodes = n;
    }
    if let Some(t) = opts.tier {
        recipe.eval.tier = t;
    }
}

fn emit(table: &ResultsTable, out: &Path, name: &str) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(format!("{name}.csv")), table.to_csv_string()?)?;
    let pretty = table.to_pretty();
    fs::write(out.join(format!("{name}.txt")), &pretty)?;
    print!("{pretty}");
    Ok(())
}

fn modes_or_all(modes: Vec<ControllerMode>) -> Vec<ControllerMode> {
    if modes.is_empty() {
        ControllerMode::ALL.to_vec()
    } else {
        modes
    }
}

/// Calibration and comparison gates on an eval table.
fn check_gates(table: &ResultsTable, protocol: Protocol) -> Vec<String> {
    let mut failures = Vec::new();
    let p = protocol.name();
    if let Some(o) = table.find("oracle", "paused", "-") {
        if o.success_rate < 0.95 {
            failures.push(format!("oracle success {:.3} < 0.95", o.success_rate));
        }
    }
    if protocol == Protocol::Paused {
        if let (Some(t), Some(b)) = (table.find("tidal", p, "-"), table.find("baseline", p, "-")) {
            if t.success_rate < 1.5 * b.success_rate || t.successes == 0 {
                failures.push(format!(
                    "tidal {:.3} < 1.5 x baseline {:.3}",
                    t.success_rate, b.success_rate
                ));
            }
        }
    }
    failures
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            common,
            tier,
            n,
            seed,
            data,
        } => {
            let mut r = load_recipe(&common)?;
            if let Some(t) = tier {
                r.env.difficulty = t;
            }
            if let Some(n) = n {
                r.data.episodes = n;
            }
            if let Some(s) = seed {
                r.data.seed = s;
            }
            r.validate()?;
            let ds = harness::generate_data(&r)?;
            ds.save(&data)?;
            println!(
                "{} episodes -> {} ({})",
                ds.len(),
                data.display(),
                ds.manifest.config_hash
            );
        }
        Command::TrainMotion {
            common,
            data,
            artifacts,
        } => {
            let r = load_recipe(&common)?;
            let ds = Dataset::load(&data)?;
            let (net, curve) = harness::train_motion_net(&r, &ds)?;
            fs::create_dir_all(&artifacts)?;
            fs::write(artifacts.join("motion.txt"), net.to_text())?;
            println!(
                "motion loss {:.5} -> {:.5}, checksum {}",
                curve.first().copied().unwrap_or(f64::NAN),
                curve.last().copied().unwrap_or(f64::NAN),
                net.checksum()
            );
        }
        Command::TrainPolicy {
            common,
            data,
            artifacts,
            modes,
        } => {
            let r = load_recipe(&common)?;
            let ds = Dataset::load(&data)?;
            let motion_path = artifacts.join("motion.txt");
            if !motion_path.exists() {
                return Err(TidalError::Config(format!(
                    "missing checkpoint {} (run train-motion first)",
                    motion_path.display()
                )));
            }
            let motion =
                tidal_core::motion::MotionNet::from_text(&fs::read_to_string(motion_path)?)?;
            for mode in modes_or_all(modes) {
                let ckpt = artifacts.join(format!("ckpt_{}", mode.name()));
                let (p, rep) = harness::train_mode_policy(
                    &r,
                    &ds,
                    &motion,
                    mode,
                    r.train_for(mode),
                    Some(&ckpt),
                )?;
                p.save(&harness::policy_path(&artifacts, mode))?;
                fs::create_dir_all(&ckpt)?;
                fs::write(
                    ckpt.join("loss.json"),
                    serde_json::to_string(&rep.loss_curve)?,
                )?;
                println!(
                    "{}: loss {:.4} -> {:.4}, hash {}",
                    mode.name(),
                    rep.initial_loss().unwrap_or(f64::NAN),
                    rep.final_loss().unwrap_or(f64::NAN),
                    p.config_hash
                );
            }
        }
        Command::Eval {
            common,
            opts,
            modes,
            protocol,
            traces,
            check,
        } => {
            let mut r = load_recipe(&common)?;
            apply_eval(&mut r, &opts);
            let arts = Artifacts::load(&opts.artifacts)?;
            let modes = if modes.is_empty() {
                arts.policies.iter().map(|(m, _)| *m).collect()
            } else {
                modes
            };
            let mut table = ResultsTable::new(format!(
                "success rate ({} tier, {})",
                r.eval.tier.name(),
                protocol.name()
            ));
            table.push(harness::oracle_row(&r, r.eval.tier, r.eval.episodes)?)?;
            for mode in modes {
                let cell = harness::Cell {
                    mode,
                    protocol,
                    tier: r.eval.tier,
                    lifespan: None,
                };
                let (row, trs) = harness::run_cell(&r, &arts, cell, r.eval.episodes)?;
                if let Some(dir) = &traces {
                    let dir = dir.join(format!("{}_{}", mode.name(), protocol.name()));
                    fs::create_dir_all(&dir)?;
                    for (i, tr) in trs.iter().enumerate() {
                        let f = fs::File::create(dir.join(format!("episode_{i:05}.jsonl")))?;
                        tr.write_jsonl(std::io::BufWriter::new(f))?;
                    }
                }
                table.push(row)?;
            }
            emit(&table, &common.out, &format!("eval_{}", protocol.name()))?;
            if check {
                let failures = check_gates(&table, protocol);
                if !failures.is_empty() {
                    return Err(TidalError::Analysis(format!(
                        "gate failed: {}",
                        failures.join("; ")
                    )));
                }
            }
        }
        Command::Ablate { common, opts } => {
            let mut r = load_recipe(&common)?;
            apply_eval(&mut r, &opts);
            let arts = Artifacts::load(&opts.artifacts)?;
            emit(
                &harness::ablation_suite(&r, &arts)?,
                &common.out,
                "ablation",
            )?;
        }
        Command::Sweep { common, opts, data } => {
            let mut r = load_recipe(&common)?;
            apply_eval(&mut r, &opts);
            let arts = Artifacts::load(&opts.artifacts)?;
            let ds = Dataset::load(&data)?;
            let root = opts.artifacts.join("sweep");
            emit(
                &harness::hyperparam_sweep(&r, &ds, &arts, Some(&root))?,
                &common.out,
                "sweep",
            )?;
        }
        Command::Lifespan {
            common,
            opts,
            protocol,
        } => {
            let mut r = load_recipe(&common)?;
            apply_eval(&mut r, &opts);
            let arts = Artifacts::load(&opts.artifacts)?;
            emit(
                &harness::lifespan_sweep(&r, &arts, protocol)?,
                &common.out,
                "lifespan",
            )?;
        }
        Command::ProtocolCompare {
            common,
            opts,
            modes,
        } => {
            let mut r = load_recipe(&common)?;
            apply_eval(&mut r, &opts);
            let arts = Artifacts::load(&opts.artifacts)?;
            let modes = modes_or_all(modes);
            emit(
                &harness::paused_vs_nonpaused(&r, &arts, &modes)?,
                &common.out,
                "protocol",
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                TidalError::Usage(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
