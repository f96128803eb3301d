//! Latency-free expert and demonstration datasets.
//!
//! The expert sees the full world state at every control step. During the
//! approach it pursues a lead point ahead of the target; once holding it
//! heads for the goal and opens inside the goal disc.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{
    env_reset, env_step, rasterize, Action, EnvConfig, GridObs, Phase, StepRecord, Vec2, WorldState,
};
use crate::error::{config_err, Result, TidalError};
use crate::hash::config_hash;
use crate::math::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Close once the target is within this fraction of the grasp radius.
    pub close_frac: f64,
    /// Open once the held target is within this fraction of the goal radius.
    pub release_frac: f64,
    /// Width of the linear grip ramp around each threshold, as a fraction
    /// of the grasp (or goal) radius. The command's sign, and so the
    /// gripper behaviour, is the same as a hard switch; 0 gives a hard
    /// switch.
    pub grip_ramp: f64,
    /// Std of the exploration noise added to the executed displacement, in
    /// units of the largest step. Recorded actions stay noise-free, so the
    /// data shows how the expert recovers from perturbed states.
    pub exec_noise: f64,
    /// Per-step correlation of that noise (AR(1) coefficient).
    pub noise_corr: f64,
    /// The executed gripper follows a change of the commanded state only
    /// after a delay drawn uniformly from `0..=grip_delay_max` steps, so
    /// the data holds several labelled steps around each grasp and release.
    pub grip_delay_max: u32,
    /// Per-step probability of starting a spell in which the executed
    /// gripper is the opposite of the commanded one (e.g. closed while
    /// still approaching). Labels stay clean.
    pub grip_flip_prob: f64,
    /// Longest such spell, in steps.
    pub grip_flip_max: u32,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            close_frac: 1.0,
            release_frac: 1.0,
            grip_ramp: 1.0,
            exec_noise: 0.0,
            noise_corr: 0.9,
            grip_delay_max: 0,
            grip_flip_prob: 0.0,
            grip_flip_max: 0,
        }
    }
}

/// Expert command for a non-terminal state. Displacements already satisfy
/// the speed bound, so the environment clip leaves them unchanged.
pub fn oracle_action(state: &WorldState, cfg: &EnvConfig) -> Action {
    oracle_action_with(state, cfg, &OracleConfig::default())
}

pub fn oracle_action_with(state: &WorldState, cfg: &EnvConfig, oc: &OracleConfig) -> Action {
    let step = cfg.max_step_len();
    if state.held {
        let to_goal = cfg.goal_center - state.target_pos;
        let grip = grip_command(
            to_goal.norm() - oc.release_frac * cfg.goal_radius,
            oc.grip_ramp * cfg.goal_radius,
        );
        let d = to_goal.clip_norm(step);
        Action::new(d.x, d.y, grip)
    } else {
        let dist = state.target_pos.dist(state.ee_pos);
        let lead_time = dist / cfg.robot_max_speed;
        let lead = (state.target_pos + state.target_vel * lead_time)
            .clamp(Vec2::ZERO, Vec2::new(1.0, 1.0));
        let d = (lead - state.ee_pos).clip_norm(step);
        let grip = grip_command(
            oc.close_frac * cfg.grasp_radius - dist,
            oc.grip_ramp * cfg.grasp_radius,
        );
        Action::new(d.x, d.y, grip)
    }
}

/// Closed (positive) iff `margin > 0`; linear in `margin` within `width`.
fn grip_command(margin: f64, width: f64) -> f64 {
    if width > 0.0 {
        (margin / width).clamp(-1.0, 1.0)
    } else if margin > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// One recorded rollout. `steps[t]` holds the state at time `t` and the
/// action taken from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub config: EnvConfig,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub final_phase: Phase,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_success(&self) -> bool {
        self.final_phase == Phase::Done
    }

    /// Grid observation at step `t`, rasterized on demand.
    pub fn grid(&self, t: usize) -> GridObs {
        rasterize(&self.steps[t].state(), &self.config)
    }

    pub fn action(&self, t: usize) -> Action {
        self.steps[t].action
    }
}

const NOISE_STREAM: u64 = 0x6e6f_6973_65;

/// Runs the expert from a reset with the given seed until termination.
pub fn run_oracle_episode(cfg: &EnvConfig, oc: &OracleConfig, seed: u64) -> Result<Episode> {
    if !(oc.exec_noise >= 0.0) || !(0.0..1.0).contains(&oc.noise_corr) {
        return Err(config_err(
            "exec_noise must be >= 0 and noise_corr in [0, 1)",
        ));
    }
    if !(0.0..=1.0).contains(&oc.grip_flip_prob) {
        return Err(config_err("grip_flip_prob must lie in [0, 1]"));
    }
    let mut rng = SeededRng::new(seed);
    let mut noise_rng = rng.derive(NOISE_STREAM);
    let mut state = env_reset(cfg, &mut rng)?;
    let mut steps = Vec::new();
    let mut noise = Vec2::ZERO;
    let innovation = (1.0 - oc.noise_corr * oc.noise_corr).sqrt() * oc.exec_noise;
    // Steps the pending gripper change still has to wait.
    let mut grip_wait: Option<u32> = None;
    let mut flip_left = 0u32;
    while !state.is_terminal() {
        let a = oracle_action_with(&state, cfg, oc);
        steps.push(StepRecord::new(&state, a));
        let mut executed = a;
        if oc.exec_noise > 0.0 {
            noise = noise * oc.noise_corr
                + Vec2::new(noise_rng.gaussian(), noise_rng.gaussian()) * innovation;
            let step = cfg.max_step_len();
            executed.dx += noise.x * step;
            executed.dy += noise.y * step;
        }
        if oc.grip_delay_max > 0 {
            let wants_closed = a.grip > 0.0;
            if wants_closed == state.gripper_closed {
                grip_wait = None;
            } else {
                let wait = grip_wait
                    .get_or_insert_with(|| noise_rng.index(oc.grip_delay_max as usize + 1) as u32);
                if *wait > 0 {
                    *wait -= 1;
                    executed.grip = if state.gripper_closed { 1.0 } else { -1.0 };
                } else {
                    grip_wait = None;
                }
            }
        }
        if flip_left == 0
            && oc.grip_flip_max > 0
            && oc.grip_flip_prob > 0.0
            && noise_rng.uniform() < oc.grip_flip_prob
        {
            flip_left = 1 + noise_rng.index(oc.grip_flip_max as usize) as u32;
        }
        if flip_left > 0 {
            flip_left -= 1;
            executed.grip = if a.grip > 0.0 { -1.0 } else { 1.0 };
        }
        state = env_step(&state, executed, cfg, &mut rng)?;
    }
    Ok(Episode {
        config: cfg.clone(),
        seed,
        steps,
        final_phase: state.phase,
    })
}

/// Collects exactly `n_episodes` successful expert episodes of at least
/// `min_len` steps. Failed or short rollouts are discarded and resampled,
/// up to `10 * n_episodes` attempts.
pub fn generate_dataset(
    cfg: &EnvConfig,
    oc: &OracleConfig,
    n_episodes: usize,
    min_len: usize,
    rng: &SeededRng,
) -> Result<Vec<Episode>> {
    if n_episodes == 0 {
        return Err(config_err("n_episodes must be positive"));
    }
    let budget = 10 * n_episodes as u64;
    let mut kept = Vec::with_capacity(n_episodes);
    for attempt in 0..budget {
        let seed = rng.derive(attempt).seed();
        let ep = run_oracle_episode(cfg, oc, seed)?;
        if ep.is_success() && ep.len() >= min_len {
            kept.push(ep);
            if kept.len() == n_episodes {
                return Ok(kept);
            }
        }
    }
    Err(TidalError::Generation(format!(
        "only {} of {} successful episodes after {} attempts",
        kept.len(),
        n_episodes,
        budget
    )))
}

const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub episode_count: usize,
    pub config_hash: String,
    pub seed: u64,
    pub min_len: usize,
    pub env: EnvConfig,
    pub oracle: OracleConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub episodes: Vec<Episode>,
}

#[derive(Serialize, Deserialize)]
struct EpisodeHeader {
    seed: u64,
    final_phase: Phase,
    len: usize,
}

impl Dataset {
    pub fn generate(
        cfg: &EnvConfig,
        oc: &OracleConfig,
        n_episodes: usize,
        min_len: usize,
        seed: u64,
    ) -> Result<Self> {
        let episodes = generate_dataset(cfg, oc, n_episodes, min_len, &SeededRng::new(seed))?;
        Ok(Self {
            manifest: DatasetManifest {
                format_version: DATASET_FORMAT_VERSION,
                episode_count: episodes.len(),
                config_hash: config_hash(&(cfg, oc, min_len)),
                seed,
                min_len,
                env: cfg.clone(),
                oracle: *oc,
            },
            episodes,
        })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Writes `manifest.json` plus one `episode_NNNNN.jsonl` per episode
    /// (a header line followed by one step record per line).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(dir.join("manifest.json"), manifest + "\n")?;
        for (i, ep) in self.episodes.iter().enumerate() {
            let file = File::create(dir.join(episode_file_name(i)))?;
            let mut out = BufWriter::new(file);
            let header = EpisodeHeader {
                seed: ep.seed,
                final_phase: ep.final_phase,
                len: ep.len(),
            };
            serde_json::to_writer(&mut out, &header)?;
            out.write_all(b"\n")?;
            crate::env::write_records(&mut out, &ep.steps)?;
            out.flush()?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: DatasetManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(TidalError::Parse(format!(
                "unsupported dataset format version {}",
                manifest.format_version
            )));
        }
        let mut episodes = Vec::with_capacity(manifest.episode_count);
        for i in 0..manifest.episode_count {
            let file = File::open(dir.join(episode_file_name(i)))?;
            let mut reader = BufReader::new(file);
            let mut first = String::new();
            reader.read_line(&mut first)?;
            let header: EpisodeHeader = serde_json::from_str(&first)?;
            let steps = crate::env::read_records(reader)?;
            if steps.len() != header.len {
                return Err(TidalError::Parse(format!(
                    "episode {i} declares {} steps but holds {}",
                    header.len,
                    steps.len()
                )));
            }
            episodes.push(Episode {
                config: manifest.env.clone(),
                seed: header.seed,
                steps,
                final_phase: header.final_phase,
            });
        }
        Ok(Self { manifest, episodes })
    }
}

fn episode_file_name(i: usize) -> String {
    format!("episode_{i:05}.jsonl")
}
