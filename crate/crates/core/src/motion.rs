//! Differential motion predictor.
//!
//! Frame differences at a fixed lag are compressed through an MLP bottleneck
//! into a small motion embedding. The bottleneck is trained by regressing
//! current position, current velocity and lagged future position of the
//! tracked object. At control time the embedding is concatenated with
//! proprioception and hard-gated off while the gripper holds the object.

use serde::{Deserialize, Serialize};

use crate::env::{GridObs, Vec2, MAX_CELL_INTENSITY};
use crate::error::{config_err, Result, TidalError};
use crate::math::{adam_step, Activation, AdamConfig, AdamState, Matrix, Mlp, SeededRng};
use crate::oracle::Episode;

pub const PROPRIO_DIM: usize = 4;
pub const AUX_DIM: usize = 6;

/// Which object the auxiliary regression tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxSubject {
    Target,
    EndEffector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionConfig {
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    /// Frame lag in control steps.
    pub lag: usize,
    /// Weights on the position, velocity and future-position terms.
    pub lambdas: [f64; 3],
    pub subject: AuxSubject,
    /// Fixed per-output scale applied to the linear head, so velocities
    /// (~0.05 units/s) and positions (~0.5 units) are learned at similar
    /// rates without changing the loss.
    pub aux_scale: [f64; AUX_DIM],
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            embed_dim: 8,
            hidden: vec![64],
            lag: 4,
            lambdas: [1.0, 1.0, 1.0],
            subject: AuxSubject::Target,
            aux_scale: [1.0, 1.0, 0.1, 0.1, 1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionEmbedding(pub Vec<f64>);

/// `(p_t, v_t, p_{t+lag})` for the tracked object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxTargets {
    pub position: Vec2,
    pub velocity: Vec2,
    pub future_position: Vec2,
}

impl AuxTargets {
    pub fn to_array(&self) -> [f64; AUX_DIM] {
        [
            self.position.x,
            self.position.y,
            self.velocity.x,
            self.velocity.y,
            self.future_position.x,
            self.future_position.y,
        ]
    }

    /// Targets at step `t` of an episode; `t + lag` must be in range.
    pub fn from_episode(ep: &Episode, t: usize, lag: usize, subject: AuxSubject) -> Result<Self> {
        if t + lag >= ep.len() {
            return Err(TidalError::Sampling(format!(
                "step {t} + lag {lag} exceeds episode length {}",
                ep.len()
            )));
        }
        let s = &ep.steps;
        Ok(match subject {
            AuxSubject::Target => AuxTargets {
                position: s[t].target_pos,
                velocity: s[t].target_vel,
                future_position: s[t + lag].target_pos,
            },
            AuxSubject::EndEffector => {
                let velocity = if t == 0 {
                    Vec2::ZERO
                } else {
                    (s[t].ee_pos - s[t - 1].ee_pos) * (1.0 / ep.config.dt)
                };
                AuxTargets {
                    position: s[t].ee_pos,
                    velocity,
                    future_position: s[t + lag].ee_pos,
                }
            }
        })
    }
}

/// Proprioception concatenated with the contact-gated motion embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedState(pub Vec<f64>);

impl FusedState {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn motion_block(&self) -> &[f64] {
        &self.0[PROPRIO_DIM..]
    }
}

/// `now - past`, flattened and divided by the largest possible cell value so
/// entries lie in `[-1, 1]`.
pub fn diff_frames(now: &GridObs, past: &GridObs) -> Result<Vec<f64>> {
    if now.resolution() != past.resolution() {
        return Err(config_err(format!(
            "frame resolutions differ: {} vs {}",
            now.resolution(),
            past.resolution()
        )));
    }
    Ok(now
        .cells()
        .iter()
        .zip(past.cells())
        .map(|(a, b)| (a - b) / MAX_CELL_INTENSITY)
        .collect())
}

/// Difference input for step `t` of an episode; history before the lag is a
/// zeros frame.
pub fn episode_diff(ep: &Episode, t: usize, lag: usize) -> Result<Vec<f64>> {
    let now = ep.grid(t);
    let past = if t >= lag {
        ep.grid(t - lag)
    } else {
        GridObs::zeros(now.resolution())
    };
    diff_frames(&now, &past)
}

/// Concatenates proprioception with `(1 - contact) * motion`. When
/// `contact == 1` the motion block is written as exact zeros.
pub fn fuse_state(
    proprio: &[f64; PROPRIO_DIM],
    motion: &MotionEmbedding,
    contact: u8,
) -> FusedState {
    let mut v = Vec::with_capacity(PROPRIO_DIM + motion.0.len());
    v.extend_from_slice(proprio);
    if contact == 0 {
        v.extend_from_slice(&motion.0);
    } else {
        v.extend(std::iter::repeat_n(0.0, motion.0.len()));
    }
    FusedState(v)
}

/// The motion network: trunk to an `embed_dim` bottleneck, linear head to
/// the six auxiliary outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionNet {
    pub net: Mlp,
    pub aux_scale: [f64; AUX_DIM],
}

impl MotionNet {
    pub fn new(grid_resolution: usize, cfg: &MotionConfig, rng: &mut SeededRng) -> Result<Self> {
        let mut dims = vec![grid_resolution * grid_resolution];
        dims.extend_from_slice(&cfg.hidden);
        dims.push(cfg.embed_dim);
        dims.push(AUX_DIM);
        Ok(Self {
            net: Mlp::new(&dims, Activation::Tanh, rng)?,
            aux_scale: cfg.aux_scale,
        })
    }

    pub fn from_mlp(net: Mlp, aux_scale: [f64; AUX_DIM]) -> Result<Self> {
        if net.output_dim() != AUX_DIM || net.num_layers() < 2 {
            return Err(config_err(
                "motion network needs a bottleneck and 6 outputs",
            ));
        }
        Ok(Self { net, aux_scale })
    }

    pub fn embed_dim(&self) -> usize {
        self.net.dims()[self.net.num_layers() - 1]
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn bottleneck_index(&self) -> usize {
        self.net.num_layers() - 1
    }

    pub fn checksum(&self) -> String {
        self.net.checksum()
    }

    /// Serialized network preceded by the fixed head scale.
    pub fn to_text(&self) -> String {
        let scale: Vec<String> = self.aux_scale.iter().map(|v| format!("{v:.16e}")).collect();
        format!("aux_scale {}\n{}", scale.join(" "), self.net.to_text())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (first, rest) = text
            .split_once('\n')
            .ok_or_else(|| TidalError::Parse("empty motion checkpoint".into()))?;
        let mut it = first.split_whitespace();
        if it.next() != Some("aux_scale") {
            return Err(TidalError::Parse("missing aux_scale line".into()));
        }
        let vals: Vec<f64> = it
            .map(|t| {
                t.parse()
                    .map_err(|_| TidalError::Parse(format!("bad scale '{t}'")))
            })
            .collect::<Result<_>>()?;
        let aux_scale: [f64; AUX_DIM] = vals
            .try_into()
            .map_err(|_| TidalError::Parse("aux_scale needs 6 values".into()))?;
        Self::from_mlp(Mlp::from_text(rest)?, aux_scale)
    }
}

/// Embedding and auxiliary prediction `(p, v, p_future)` for one difference
/// vector.
pub fn motion_forward(net: &MotionNet, diff: &[f64]) -> Result<(MotionEmbedding, [f64; AUX_DIM])> {
    let (out, cache) = net.net.forward(diff)?;
    let embed = cache.activation(net.bottleneck_index()).row(0).to_vec();
    let mut aux = [0.0; AUX_DIM];
    for (i, a) in aux.iter_mut().enumerate() {
        *a = out[i] * net.aux_scale[i];
    }
    Ok((MotionEmbedding(embed), aux))
}

/// Batched embeddings, one row per difference vector.
pub fn motion_embed_batch(net: &MotionNet, diffs: &Matrix) -> Result<Matrix> {
    let cache = net.net.forward_batch(diffs)?;
    Ok(cache.activation(net.bottleneck_index()).clone())
}

/// `l1 |p^ - p|^2 + l2 |v^ - v|^2 + l3 |p^_future - p_future|^2`
pub fn motion_aux_loss(pred: &[f64; AUX_DIM], targets: &AuxTargets, lambdas: [f64; 3]) -> f64 {
    let t = targets.to_array();
    let sq = |i: usize| (pred[i] - t[i]).powi(2) + (pred[i + 1] - t[i + 1]).powi(2);
    lambdas[0] * sq(0) + lambdas[1] * sq(2) + lambdas[2] * sq(4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub adam: AdamConfig,
}

impl Default for MotionTrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch_size: 64,
            steps_per_epoch: 200,
            adam: AdamConfig::default(),
        }
    }
}

/// Eligible `(episode, step)` pairs: free target and `t + lag` in range.
fn motion_frames(episodes: &[Episode], lag: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (e, ep) in episodes.iter().enumerate() {
        for t in 0..ep.len().saturating_sub(lag) {
            if ep.steps[t].contact == 0 {
                out.push((e, t));
            }
        }
    }
    out
}

/// Pretrains the motion network on the auxiliary loss. Frames are drawn
/// uniformly from contact-free steps, where the gate lets the embedding
/// through. Returns the mean loss of each epoch.
pub fn train_motion(
    episodes: &[Episode],
    net: &mut MotionNet,
    mcfg: &MotionConfig,
    tcfg: &MotionTrainConfig,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let frames = motion_frames(episodes, mcfg.lag);
    if frames.is_empty() {
        return Err(TidalError::Generation(
            "motion training needs at least one contact-free frame".into(),
        ));
    }
    if tcfg.batch_size == 0 || tcfg.steps_per_epoch == 0 {
        return Err(config_err(
            "batch_size and steps_per_epoch must be positive",
        ));
    }
    let in_dim = net.input_dim();
    let mut adam = AdamState::new(&net.net, tcfg.adam);
    let mut curve = Vec::new();
    let mut epoch_sum = 0.0;
    let mut epoch_n = 0usize;
    let b = tcfg.batch_size;
    for step in 0..tcfg.steps {
        let mut inputs = Matrix::zeros(b, in_dim);
        let mut targets = Vec::with_capacity(b);
        for r in 0..b {
            let (e, t) = frames[rng.index(frames.len())];
            let ep = &episodes[e];
            let diff = episode_diff(ep, t, mcfg.lag)?;
            inputs.row_mut(r).copy_from_slice(&diff);
            targets.push(AuxTargets::from_episode(ep, t, mcfg.lag, mcfg.subject)?);
        }
        let cache = net.net.forward_batch(&inputs)?;
        let out = cache.output();
        let mut grad = Matrix::zeros(b, AUX_DIM);
        let mut loss = 0.0;
        for (r, tg) in targets.iter().enumerate() {
            let mut pred = [0.0; AUX_DIM];
            for i in 0..AUX_DIM {
                pred[i] = out.get(r, i) * net.aux_scale[i];
            }
            loss += motion_aux_loss(&pred, tg, mcfg.lambdas);
            let ta = tg.to_array();
            for i in 0..AUX_DIM {
                let lambda = mcfg.lambdas[i / 2];
                grad.set(
                    r,
                    i,
                    2.0 * lambda * (pred[i] - ta[i]) * net.aux_scale[i] / b as f64,
                );
            }
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(TidalError::Training(format!(
                "motion loss diverged at step {step}"
            )));
        }
        let bp = net.net.backward(&cache, &grad)?;
        adam_step(&mut net.net, &bp.grads, &mut adam)?;
        epoch_sum += loss;
        epoch_n += 1;
        if epoch_n == tcfg.steps_per_epoch || step + 1 == tcfg.steps {
            curve.push(epoch_sum / epoch_n as f64);
            epoch_sum = 0.0;
            epoch_n = 0;
        }
    }
    Ok(curve)
}

/// Gated-free motion embeddings for every step of every episode, computed
/// once with the frozen network.
pub fn precompute_embeddings(
    episodes: &[Episode],
    net: &MotionNet,
    lag: usize,
) -> Result<Vec<Vec<MotionEmbedding>>> {
    const CHUNK: usize = 256;
    let mut all = Vec::with_capacity(episodes.len());
    for ep in episodes {
        let mut per = Vec::with_capacity(ep.len());
        let mut start = 0;
        while start < ep.len() {
            let end = (start + CHUNK).min(ep.len());
            let mut diffs = Matrix::zeros(end - start, net.input_dim());
            for t in start..end {
                diffs
                    .row_mut(t - start)
                    .copy_from_slice(&episode_diff(ep, t, lag)?);
            }
            let emb = motion_embed_batch(net, &diffs)?;
            for r in 0..emb.rows() {
                per.push(MotionEmbedding(emb.row(r).to_vec()));
            }
            start = end;
        }
        all.push(per);
    }
    Ok(all)
}

/// Root-mean-square error of the velocity prediction (vector norm) over
/// contact-free frames.
pub fn velocity_rmse(episodes: &[Episode], net: &MotionNet, cfg: &MotionConfig) -> Result<f64> {
    let frames = motion_frames(episodes, cfg.lag);
    if frames.is_empty() {
        return Err(TidalError::Analysis("no frames to evaluate".into()));
    }
    let mut sum = 0.0;
    for &(e, t) in &frames {
        let ep = &episodes[e];
        let (_, aux) = motion_forward(net, &episode_diff(ep, t, cfg.lag)?)?;
        let tg = AuxTargets::from_episode(ep, t, cfg.lag, cfg.subject)?;
        sum += (aux[2] - tg.velocity.x).powi(2) + (aux[3] - tg.velocity.y).powi(2);
    }
    Ok((sum / frames.len() as f64).sqrt())
}
