//! Slow intent encoder: a grid observation plus a task tag is summarized
//! into an embedding that stays frozen for a whole macro-cycle.

use serde::{Deserialize, Serialize};

use crate::env::GridObs;
use crate::error::{config_err, Result};
use crate::math::{Activation, Matrix, Mlp, SeededRng};

pub const TASK_TAG_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntentConfig {
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for IntentConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden: vec![64],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentEmbedding {
    pub vector: Vec<f64>,
    /// Environment step at which the source observation was captured.
    pub born_step: usize,
}

impl IntentEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// Bit pattern of the vector, for freeze checks.
    pub fn bits(&self) -> Vec<u64> {
        self.vector.iter().map(|v| v.to_bits()).collect()
    }
}

pub fn new_intent_net(
    grid_resolution: usize,
    cfg: &IntentConfig,
    rng: &mut SeededRng,
) -> Result<Mlp> {
    let mut dims = vec![grid_resolution * grid_resolution + TASK_TAG_DIM];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(cfg.embed_dim);
    Mlp::new(&dims, Activation::Tanh, rng)
}

/// Network input: flattened grid followed by the task tag.
pub fn intent_input(obs: &GridObs, task_tag: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(obs.cells().len() + task_tag.len());
    v.extend_from_slice(obs.cells());
    v.extend_from_slice(task_tag);
    v
}

fn check_dims(net: &Mlp, obs: &GridObs, task_tag: &[f64]) -> Result<()> {
    let need = obs.cells().len() + task_tag.len();
    if net.input_dim() != need {
        return Err(config_err(format!(
            "intent net expects {} inputs, observation provides {need}",
            net.input_dim()
        )));
    }
    Ok(())
}

pub fn encode_intent(
    net: &Mlp,
    obs: &GridObs,
    task_tag: &[f64],
    born_step: usize,
) -> Result<IntentEmbedding> {
    check_dims(net, obs, task_tag)?;
    let (vector, _) = net.forward(&intent_input(obs, task_tag))?;
    Ok(IntentEmbedding { vector, born_step })
}

/// Batched forward used in training; rows are `intent_input` vectors.
pub fn encode_batch(net: &Mlp, inputs: &Matrix) -> Result<crate::math::ForwardCache> {
    net.forward_batch(inputs)
}
