//! Experiment recipe: every knob of the pipeline in one TOML document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ChunkingConfig;
use crate::env::{Difficulty, EnvConfig, RasterMode};
use crate::error::{config_err, Result, TidalError};
use crate::flow::{PolicyNetConfig, PolicyTrainConfig};
use crate::hash::config_hash;
use crate::intent::IntentConfig;
use crate::math::AdamConfig;
use crate::motion::{MotionConfig, MotionTrainConfig};
use crate::oracle::OracleConfig;
use crate::scheduler::{ControllerMode, LatencyModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub episodes: usize,
    /// Shorter oracle episodes are resampled.
    pub min_len: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            min_len: 28,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Episode `i` of every cell uses seed `seed + i`.
    pub seed: u64,
    pub tier: Difficulty,
    /// Solver steps of the baseline's full inference.
    pub baseline_solve_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            seed: 10_000,
            tier: Difficulty::Easy,
            baseline_solve_steps: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub head_weights: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Training steps per cell as a fraction of the main run.
    pub budget_frac: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            head_weights: vec![1.0, 1.5, 2.0, 2.5, 3.0],
            alphas: vec![3.0, 5.0, 7.0],
            budget_frac: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifespanConfig {
    pub values: Vec<usize>,
}

impl Default for LifespanConfig {
    fn default() -> Self {
        Self {
            values: vec![28, 36, 44, 56, 64, 80, 100],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Recipe {
    /// Root seed for network initialisation and training streams.
    pub seed: u64,
    pub env: EnvConfig,
    pub oracle: OracleConfig,
    pub data: DataConfig,
    pub chunking: ChunkingConfig,
    pub motion: MotionConfig,
    pub motion_train: MotionTrainConfig,
    pub intent: IntentConfig,
    pub policy_net: PolicyNetConfig,
    /// Dual-rate policies.
    pub train: PolicyTrainConfig,
    /// Single-rate policies.
    pub baseline_train: PolicyTrainConfig,
    pub latency: LatencyModel,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub lifespan: LifespanConfig,
}

impl Default for Recipe {
    fn default() -> Self {
        let adam = AdamConfig {
            lr: 2e-3,
            ..AdamConfig::default()
        };
        let train = PolicyTrainConfig {
            steps: 20_000,
            alpha: 5.0,
            head_weight: 2.0,
            adam,
            ..PolicyTrainConfig::default()
        };
        Self {
            seed: 3,
            env: EnvConfig {
                raster: RasterMode::Bilinear,
                ..EnvConfig::default()
            },
            oracle: OracleConfig {
                exec_noise: 0.3,
                grip_delay_max: 20,
                grip_flip_prob: 0.01,
                grip_flip_max: 15,
                ..OracleConfig::default()
            },
            data: DataConfig::default(),
            chunking: ChunkingConfig::default(),
            // Velocities are ~10x smaller than positions; without the boost
            // the velocity term is lost in the loss.
            motion: MotionConfig {
                lambdas: [1.0, 100.0, 1.0],
                ..MotionConfig::default()
            },
            motion_train: MotionTrainConfig {
                steps: 20_000,
                adam: AdamConfig {
                    lr: 3e-3,
                    ..AdamConfig::default()
                },
                ..MotionTrainConfig::default()
            },
            intent: IntentConfig::default(),
            policy_net: PolicyNetConfig::default(),
            baseline_train: PolicyTrainConfig {
                alpha: 1.0,
                head_weight: 1.0,
                ..train.clone()
            },
            train,
            latency: LatencyModel::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
            lifespan: LifespanConfig::default(),
        }
    }
}

impl Recipe {
    /// Parses a recipe; keys missing at any depth keep the value of
    /// [`Recipe::default`], unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let usage = |e: &dyn std::fmt::Display| TidalError::Usage(e.to_string());
        let over: toml::Table = toml::from_str(text).map_err(|e| usage(&e))?;
        let mut base = toml::Table::try_from(Recipe::default()).map_err(|e| usage(&e))?;
        merge(&mut base, over);
        let r: Recipe = base.try_into().map_err(|e| usage(&e))?;
        r.validate()?;
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("recipe serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.chunking.validate()?;
        self.latency.validate()?;
        self.train.validate()?;
        self.baseline_train.validate()?;
        if self.data.episodes == 0 || self.eval.episodes == 0 {
            return Err(config_err(
                "data.episodes and eval.episodes must be positive",
            ));
        }
        if self.eval.baseline_solve_steps == 0 {
            return Err(config_err("eval.baseline_solve_steps must be at least 1"));
        }
        if !(self.sweep.budget_frac > 0.0 && self.sweep.budget_frac <= 1.0) {
            return Err(config_err("sweep.budget_frac must lie in (0, 1]"));
        }
        let finite = self.sweep.head_weights.iter().chain(&self.sweep.alphas);
        if finite.clone().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(config_err("sweep axes must hold positive finite values"));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }

    /// Chunking a mode trains and runs with: the dual-rate modes use the
    /// configured latency stages, the single-rate ones a single stage.
    pub fn chunking_for(&self, mode: ControllerMode) -> ChunkingConfig {
        if mode.is_dual_rate() {
            self.chunking
        } else {
            ChunkingConfig {
                stages: 1,
                ..self.chunking
            }
        }
    }

    pub fn train_for(&self, mode: ControllerMode) -> &PolicyTrainConfig {
        if mode.is_dual_rate() {
            &self.train
        } else {
            &self.baseline_train
        }
    }

    /// Everything that shapes the policy for `mode`, for checkpoint hashes.
    pub fn policy_hash(&self, mode: ControllerMode) -> String {
        config_hash(&(
            mode,
            &self.env,
            &self.oracle,
            &self.data,
            self.chunking_for(mode),
            &self.motion,
            &self.motion_train,
            &self.intent,
            &self.policy_net,
            self.train_for(mode),
            self.seed,
        ))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
