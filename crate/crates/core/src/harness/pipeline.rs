//! Data generation and training for every controller mode of a recipe.

use std::fs;
use std::path::Path;

use crate::dataset::{MotionSource, PreparedDataset};
use crate::error::{config_err, Result};
use crate::flow::{train_policy, ActionScale, PolicyBundle, PolicyTrainConfig, TrainReport};
use crate::math::SeededRng;
use crate::motion::{train_motion, MotionNet};
use crate::oracle::Dataset;
use crate::scheduler::{Controller, ControllerMode};

use super::config::Recipe;

const MOTION_STREAM: u64 = 1;
const POLICY_STREAM: u64 = 2;

pub fn generate_data(recipe: &Recipe) -> Result<Dataset> {
    Dataset::generate(
        &recipe.env,
        &recipe.oracle,
        recipe.data.episodes,
        recipe.data.min_len,
        recipe.data.seed,
    )
}

/// Trains the motion predictor; returns it with its loss curve.
pub fn train_motion_net(recipe: &Recipe, data: &Dataset) -> Result<(MotionNet, Vec<f64>)> {
    let mut rng = SeededRng::new(recipe.seed).derive(MOTION_STREAM);
    let mut net = MotionNet::new(recipe.env.grid_resolution, &recipe.motion, &mut rng)?;
    let curve = train_motion(
        &data.episodes,
        &mut net,
        &recipe.motion,
        &recipe.motion_train,
        &mut rng,
    )?;
    Ok((net, curve))
}

/// Trains the policy for `mode` with `cfg` (normally `recipe.train_for(mode)`).
/// Every mode starts from the same seed stream.
pub fn train_mode_policy(
    recipe: &Recipe,
    data: &Dataset,
    motion: &MotionNet,
    mode: ControllerMode,
    cfg: &PolicyTrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(PolicyBundle, TrainReport)> {
    let chunking = recipe.chunking_for(mode);
    let source = if mode.uses_motion() {
        MotionSource::Net {
            net: motion,
            lag: recipe.motion.lag,
        }
    } else {
        MotionSource::Disabled {
            embed_dim: motion.embed_dim(),
        }
    };
    let prepared = PreparedDataset::new(data.episodes.clone(), chunking, source)?;
    let mut rng = SeededRng::new(recipe.seed).derive(POLICY_STREAM);
    let mut bundle = PolicyBundle::new(
        recipe.env.grid_resolution,
        motion.embed_dim(),
        mode.uses_motion(),
        &recipe.intent,
        &recipe.policy_net,
        chunking,
        ActionScale::from_env(&recipe.env),
        &mut rng,
    )?;
    let report = train_policy(&prepared, &mut bundle, cfg, &mut rng, checkpoint_dir)?;
    bundle.config_hash = if cfg == recipe.train_for(mode) {
        recipe.policy_hash(mode)
    } else {
        crate::hash::config_hash(&(recipe.policy_hash(mode), cfg))
    };
    Ok((bundle, report))
}

/// Trained networks for a set of modes.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub motion: MotionNet,
    pub policies: Vec<(ControllerMode, PolicyBundle)>,
}

impl Artifacts {
    pub fn policy(&self, mode: ControllerMode) -> Result<&PolicyBundle> {
        self.policies
            .iter()
            .find(|(m, _)| *m == mode)
            .map(|(_, p)| p)
            .ok_or_else(|| config_err(format!("no checkpoint for mode {}", mode.name())))
    }

    pub fn controller(&self, recipe: &Recipe, mode: ControllerMode) -> Result<Controller<'_>> {
        Ok(Controller {
            policy: self.policy(mode)?,
            motion: Some(&self.motion),
            motion_lag: recipe.motion.lag,
        })
    }

    /// `motion.txt` plus `policy_<mode>.txt` per mode.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("motion.txt"), self.motion.to_text())?;
        for (mode, p) in &self.policies {
            p.save(&policy_path(dir, *mode))?;
        }
        Ok(())
    }

    /// Loads the motion network and whichever mode checkpoints exist.
    pub fn load(dir: &Path) -> Result<Self> {
        let motion_path = dir.join("motion.txt");
        if !motion_path.exists() {
            return Err(config_err(format!(
                "missing checkpoint {}",
                motion_path.display()
            )));
        }
        let motion = MotionNet::from_text(&fs::read_to_string(motion_path)?)?;
        let mut policies = Vec::new();
        for mode in ControllerMode::ALL {
            let path = policy_path(dir, mode);
            if path.exists() {
                policies.push((mode, PolicyBundle::load(&path)?));
            }
        }
        Ok(Self { motion, policies })
    }
}

pub fn policy_path(dir: &Path, mode: ControllerMode) -> std::path::PathBuf {
    dir.join(format!("policy_{}.txt", mode.name()))
}

/// Full pipeline: data, motion predictor and one policy per mode.
pub fn train_all(recipe: &Recipe, data: &Dataset, modes: &[ControllerMode]) -> Result<Artifacts> {
    let (motion, _) = train_motion_net(recipe, data)?;
    let mut policies = Vec::new();
    for &mode in modes {
        let (p, _) = train_mode_policy(recipe, data, &motion, mode, recipe.train_for(mode), None)?;
        policies.push((mode, p));
    }
    Ok(Artifacts { motion, policies })
}
