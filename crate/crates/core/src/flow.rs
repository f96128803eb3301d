//! Conditional flow-matching action policy.
//!
//! The vector field `v(x_t, t, fused, E)` is trained on the straight noise
//! to data path with a horizon-weighted loss and flow times biased toward
//! the noise end, then sampled with one Euler step from `t = 0` (or several
//! for the synchronous baseline). Actions live in a normalized space where
//! the largest per-step displacement maps to 1.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{horizon_weights, ChunkingConfig, MisalignedSample, PreparedDataset};
use crate::env::{Action, EnvConfig, GridObs};
use crate::error::{config_err, Result, TidalError};
use crate::intent::{encode_intent, intent_input, new_intent_net, IntentConfig, IntentEmbedding};
use crate::math::{
    adam_step, sample_beta_time, sample_gaussian_chunk, Activation, AdamConfig, AdamState,
    Gradients, Matrix, Mlp, SeededRng,
};
use crate::motion::{
    fuse_state, motion_aux_loss, AuxTargets, FusedState, MotionEmbedding, MotionNet, AUX_DIM,
    PROPRIO_DIM,
};

/// Per-dimension divisor mapping env actions into policy space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionScale(pub [f64; 3]);

impl ActionScale {
    pub fn from_env(cfg: &EnvConfig) -> Self {
        let m = cfg.max_step_len();
        Self([m, m, 1.0])
    }

    pub fn normalize(&self, a: &[f64; 3]) -> [f64; 3] {
        [a[0] / self.0[0], a[1] / self.0[1], a[2] / self.0[2]]
    }

    pub fn to_action(&self, row: &[f64]) -> Action {
        Action::new(row[0] * self.0[0], row[1] * self.0[1], row[2] * self.0[2])
    }
}

/// A generated chunk in policy space.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk {
    /// `H x 3`, normalized.
    pub values: Matrix,
    /// Env step at generation time.
    pub generated_at: usize,
    /// Env step at which the conditioning intent was observed.
    pub intent_born_step: usize,
}

impl ActionChunk {
    pub fn horizon(&self) -> usize {
        self.values.rows()
    }

    pub fn env_action(&self, i: usize, scale: &ActionScale) -> Action {
        scale.to_action(self.values.row(i))
    }

    pub fn is_finite(&self) -> bool {
        self.values.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub x0: Matrix,
    pub x1: Matrix,
    pub t: f64,
    pub xt: Matrix,
    pub u: Matrix,
}

impl FlowSample {
    /// Point on the straight path `(1 - t) x0 + t x1` with target `x1 - x0`.
    pub fn new(x0: Matrix, x1: Matrix, t: f64) -> Result<Self> {
        if x0.shape() != x1.shape() {
            return Err(config_err(format!(
                "noise {:?} and target {:?} shapes differ",
                x0.shape(),
                x1.shape()
            )));
        }
        let (r, c) = x0.shape();
        let a = x0.as_slice();
        let b = x1.as_slice();
        let xt = Matrix::from_vec(
            r,
            c,
            a.iter()
                .zip(b)
                .map(|(p, q)| (1.0 - t) * p + t * q)
                .collect(),
        )?;
        let u = Matrix::from_vec(r, c, a.iter().zip(b).map(|(p, q)| q - p).collect())?;
        Ok(Self { x0, x1, t, xt, u })
    }
}

/// Fresh Gaussian noise, a biased flow time, and the path quantities.
pub fn make_flow_sample(rng: &mut SeededRng, x1: &Matrix, alpha: f64) -> Result<FlowSample> {
    if !(alpha > 0.0) {
        return Err(config_err(format!("alpha must be positive, got {alpha}")));
    }
    let x0 = sample_gaussian_chunk(rng, x1.rows(), x1.cols());
    let t = sample_beta_time(rng, alpha, 1.0)?;
    FlowSample::new(x0, x1.clone(), t)
}

/// Input layout: `[x_t (H*3), t, fused, intent]`.
pub fn vf_input(x_t: &Matrix, t: f64, fused: &[f64], intent: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x_t.as_slice().len() + 1 + fused.len() + intent.len());
    v.extend_from_slice(x_t.as_slice());
    v.push(t);
    v.extend_from_slice(fused);
    v.extend_from_slice(intent);
    v
}

fn check_vf_shapes(net: &Mlp, x_t: &Matrix, fused: &[f64], intent: &[f64]) -> Result<()> {
    let need = x_t.as_slice().len() + 1 + fused.len() + intent.len();
    if net.input_dim() != need {
        return Err(config_err(format!(
            "policy expects {} inputs, got {need}",
            net.input_dim()
        )));
    }
    if net.output_dim() != x_t.as_slice().len() {
        return Err(config_err(format!(
            "policy outputs {} values for a chunk of {}",
            net.output_dim(),
            x_t.as_slice().len()
        )));
    }
    Ok(())
}

pub fn vf_forward(
    net: &Mlp,
    x_t: &Matrix,
    t: f64,
    fused: &FusedState,
    intent: &IntentEmbedding,
) -> Result<Matrix> {
    vf_forward_raw(net, x_t, t, fused.as_slice(), &intent.vector)
}

fn vf_forward_raw(
    net: &Mlp,
    x_t: &Matrix,
    t: f64,
    fused: &[f64],
    intent: &[f64],
) -> Result<Matrix> {
    check_vf_shapes(net, x_t, fused, intent)?;
    let (out, _) = net.forward(&vf_input(x_t, t, fused, intent))?;
    Matrix::from_vec(x_t.rows(), x_t.cols(), out)
}

fn chunk_shape(net: &Mlp) -> Result<(usize, usize)> {
    if net.output_dim() % 3 != 0 {
        return Err(config_err("policy output is not a whole number of actions"));
    }
    Ok((net.output_dim() / 3, 3))
}

/// `x0 + v(x0, 0, fused, E)` with fresh noise `x0`.
pub fn euler_single_step(
    net: &Mlp,
    rng: &mut SeededRng,
    fused: &FusedState,
    intent: &IntentEmbedding,
) -> Result<Matrix> {
    let (h, d) = chunk_shape(net)?;
    let x0 = sample_gaussian_chunk(rng, h, d);
    let v = vf_forward(net, &x0, 0.0, fused, intent)?;
    let mut out = x0;
    out.add_scaled(&v, 1.0);
    Ok(out)
}

/// Forward Euler over `steps` uniform increments from fresh noise.
pub fn multi_step_solve(
    net: &Mlp,
    rng: &mut SeededRng,
    fused: &FusedState,
    intent: &IntentEmbedding,
    steps: usize,
) -> Result<Matrix> {
    if steps == 0 {
        return Err(config_err("solver needs at least one step"));
    }
    let (h, d) = chunk_shape(net)?;
    let mut x = sample_gaussian_chunk(rng, h, d);
    let dt = 1.0 / steps as f64;
    for j in 0..steps {
        let t = j as f64 * dt;
        let v = vf_forward(net, &x, t, fused, intent)?;
        x.add_scaled(&v, dt);
    }
    Ok(x)
}

/// One training item for [`cfm_loss`].
#[derive(Debug, Clone)]
pub struct CfmItem {
    pub sample: FlowSample,
    pub fused: Vec<f64>,
    pub intent: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CfmOutput {
    pub loss: f64,
    pub grads: Gradients,
    /// `dL/dE`, one row per item.
    pub intent_grads: Matrix,
    /// `dL/d(fused state)`, one row per item.
    pub fused_grads: Matrix,
}

/// `mean_b sum_i w_i |v_i - u_i|^2` with gradients for the field network
/// and for each item's intent vector.
pub fn cfm_loss(net: &Mlp, items: &[CfmItem], weights: &[f64]) -> Result<CfmOutput> {
    let first = items
        .first()
        .ok_or_else(|| config_err("cfm_loss needs a non-empty batch"))?;
    let (h, d) = first.sample.xt.shape();
    if weights.len() != h {
        return Err(config_err(format!(
            "{} horizon weights for horizon {h}",
            weights.len()
        )));
    }
    let e_dim = first.intent.len();
    let in_dim = h * d + 1 + first.fused.len() + e_dim;
    let b = items.len();
    let mut inputs = Matrix::zeros(b, in_dim);
    for (r, it) in items.iter().enumerate() {
        check_vf_shapes(net, &it.sample.xt, &it.fused, &it.intent)?;
        if it.sample.xt.shape() != (h, d) || it.intent.len() != e_dim {
            return Err(config_err("batch items have inconsistent shapes"));
        }
        inputs.row_mut(r).copy_from_slice(&vf_input(
            &it.sample.xt,
            it.sample.t,
            &it.fused,
            &it.intent,
        ));
    }
    let cache = net.forward_batch(&inputs)?;
    let out = cache.output();
    let mut grad = Matrix::zeros(b, h * d);
    let mut loss = 0.0;
    let inv_b = 1.0 / b as f64;
    for (r, it) in items.iter().enumerate() {
        let v = out.row(r);
        let u = it.sample.u.as_slice();
        let g = grad.row_mut(r);
        for i in 0..h {
            let w = weights[i];
            for j in 0..d {
                let k = i * d + j;
                let e = v[k] - u[k];
                loss += w * e * e;
                g[k] = 2.0 * w * e * inv_b;
            }
        }
    }
    loss *= inv_b;
    let bp = net.backward(&cache, &grad)?;
    let start = in_dim - e_dim;
    let intent_grads = Matrix::from_fn(b, e_dim, |r, c| bp.input_grad.get(r, start + c));
    let f_start = h * d + 1;
    let fused_grads = Matrix::from_fn(b, start - f_start, |r, c| bp.input_grad.get(r, f_start + c));
    Ok(CfmOutput {
        loss,
        grads: bp.grads,
        intent_grads,
        fused_grads,
    })
}

/// Item of [`composed_cfm_loss`]: raw perception inputs instead of
/// precomputed embeddings.
#[derive(Debug, Clone)]
pub struct ComposedItem {
    pub sample: FlowSample,
    /// Flattened grid plus task tag.
    pub intent_input: Vec<f64>,
    pub proprio: [f64; PROPRIO_DIM],
    /// Normalized frame difference for the motion network.
    pub diff: Vec<f64>,
    pub contact: u8,
    pub aux: AuxTargets,
}

#[derive(Debug, Clone)]
pub struct ComposedOutput {
    pub loss: f64,
    pub policy: Gradients,
    pub intent: Gradients,
    pub motion: Gradients,
}

/// End-to-end objective over all three networks: the flow-matching loss
/// with the intent computed by `intent` and the gated motion block by
/// `motion`, plus `aux_weight` times the batch-mean auxiliary motion loss.
pub fn composed_cfm_loss(
    policy: &Mlp,
    intent: &Mlp,
    motion: &MotionNet,
    items: &[ComposedItem],
    weights: &[f64],
    lambdas: [f64; 3],
    aux_weight: f64,
) -> Result<ComposedOutput> {
    if items.is_empty() {
        return Err(config_err("composed loss needs a non-empty batch"));
    }
    let b = items.len();
    let rows = |f: &dyn Fn(&ComposedItem) -> &[f64], cols: usize| -> Result<Matrix> {
        let mut m = Matrix::zeros(b, cols);
        for (r, it) in items.iter().enumerate() {
            let v = f(it);
            if v.len() != cols {
                return Err(config_err("batch items have inconsistent shapes"));
            }
            m.row_mut(r).copy_from_slice(v);
        }
        Ok(m)
    };
    let intent_cache = intent.forward_batch(&rows(&|it| &it.intent_input, intent.input_dim())?)?;
    let motion_cache = motion
        .net
        .forward_batch(&rows(&|it| &it.diff, motion.input_dim())?)?;
    let bottleneck = motion.net.num_layers() - 1;
    let emb = motion_cache.activation(bottleneck);
    let m_dim = emb.cols();

    let cfm_items: Vec<CfmItem> = items
        .iter()
        .enumerate()
        .map(|(r, it)| CfmItem {
            sample: it.sample.clone(),
            fused: fuse_state(
                &it.proprio,
                &MotionEmbedding(emb.row(r).to_vec()),
                it.contact,
            )
            .0,
            intent: intent_cache.output().row(r).to_vec(),
        })
        .collect();
    let cfm = cfm_loss(policy, &cfm_items, weights)?;
    let intent_bp = intent.backward(&intent_cache, &cfm.intent_grads)?;

    let mut emb_grad = Matrix::zeros(b, m_dim);
    let mut aux_grad = Matrix::zeros(b, AUX_DIM);
    let mut aux_loss = 0.0;
    for (r, it) in items.iter().enumerate() {
        if it.contact == 0 {
            for j in 0..m_dim {
                emb_grad.set(r, j, cfm.fused_grads.get(r, PROPRIO_DIM + j));
            }
        }
        let out = motion_cache.output().row(r);
        let mut pred = [0.0; AUX_DIM];
        for i in 0..AUX_DIM {
            pred[i] = out[i] * motion.aux_scale[i];
        }
        aux_loss += motion_aux_loss(&pred, &it.aux, lambdas);
        let ta = it.aux.to_array();
        for i in 0..AUX_DIM {
            let g = 2.0 * lambdas[i / 2] * (pred[i] - ta[i]) * motion.aux_scale[i];
            aux_grad.set(r, i, aux_weight * g / b as f64);
        }
    }
    let motion_bp =
        motion
            .net
            .backward_tapped(&motion_cache, &aux_grad, &[(bottleneck, &emb_grad)])?;
    Ok(ComposedOutput {
        loss: cfm.loss + aux_weight * aux_loss / b as f64,
        policy: cfm.grads,
        intent: intent_bp.grads,
        motion: motion_bp.grads,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyNetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for PolicyNetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            activation: Activation::Tanh,
        }
    }
}

/// Intent encoder, field network and the metadata needed to run them.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyBundle {
    pub intent_net: Mlp,
    pub policy_net: Mlp,
    pub chunking: ChunkingConfig,
    pub scale: ActionScale,
    pub motion_dim: usize,
    /// Whether the motion block is fed at all; when off it is always zero.
    pub motion_enabled: bool,
    pub config_hash: String,
}

const BUNDLE_TAG: &str = "tidal-policy 1";

impl PolicyBundle {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid_resolution: usize,
        motion_dim: usize,
        motion_enabled: bool,
        intent_cfg: &IntentConfig,
        policy_cfg: &PolicyNetConfig,
        chunking: ChunkingConfig,
        scale: ActionScale,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        chunking.validate()?;
        let intent_net = new_intent_net(grid_resolution, intent_cfg, rng)?;
        let chunk = chunking.horizon * 3;
        let mut dims = vec![chunk + 1 + PROPRIO_DIM + motion_dim + intent_cfg.embed_dim];
        dims.extend_from_slice(&policy_cfg.hidden);
        dims.push(chunk);
        let policy_net = Mlp::new(&dims, policy_cfg.activation, rng)?;
        Ok(Self {
            intent_net,
            policy_net,
            chunking,
            scale,
            motion_dim,
            motion_enabled,
            config_hash: String::new(),
        })
    }

    pub fn encode(
        &self,
        obs: &GridObs,
        task_tag: &[f64],
        born_step: usize,
    ) -> Result<IntentEmbedding> {
        encode_intent(&self.intent_net, obs, task_tag, born_step)
    }

    /// One chunk from `solve_steps` Euler steps (1 = single step).
    pub fn generate(
        &self,
        rng: &mut SeededRng,
        fused: &FusedState,
        intent: &IntentEmbedding,
        solve_steps: usize,
        now: usize,
    ) -> Result<ActionChunk> {
        let values = if solve_steps == 1 {
            euler_single_step(&self.policy_net, rng, fused, intent)?
        } else {
            multi_step_solve(&self.policy_net, rng, fused, intent, solve_steps)?
        };
        Ok(ActionChunk {
            values,
            generated_at: now,
            intent_born_step: intent.born_step,
        })
    }

    pub fn to_text(&self) -> String {
        let c = &self.chunking;
        format!(
            "{BUNDLE_TAG}\nchunking {} {} {}\nscale {:.16e} {:.16e} {:.16e}\nmotion {} {}\nconfig_hash {}\n[intent]\n{}[policy]\n{}",
            c.horizon,
            c.exec,
            c.stages,
            self.scale.0[0],
            self.scale.0[1],
            self.scale.0[2],
            self.motion_dim,
            u8::from(self.motion_enabled),
            if self.config_hash.is_empty() { "-" } else { &self.config_hash },
            self.intent_net.to_text(),
            self.policy_net.to_text()
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |m: &str| TidalError::Parse(m.to_string());
        let (head, rest) = text
            .split_once("[intent]\n")
            .ok_or_else(|| perr("missing [intent] section"))?;
        let (intent_txt, policy_txt) = rest
            .split_once("[policy]\n")
            .ok_or_else(|| perr("missing [policy] section"))?;
        let mut lines = head.lines();
        if lines.next() != Some(BUNDLE_TAG) {
            return Err(perr("missing policy bundle header"));
        }
        let mut field = |tag: &str| -> Result<Vec<String>> {
            let line = lines
                .next()
                .ok_or_else(|| perr("truncated bundle header"))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(tag) {
                return Err(TidalError::Parse(format!("expected '{tag}' line")));
            }
            Ok(it.map(str::to_string).collect())
        };
        let num = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| TidalError::Parse(format!("bad integer '{s}'")))
        };
        let flt = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| TidalError::Parse(format!("bad number '{s}'")))
        };
        let ch = field("chunking")?;
        let sc = field("scale")?;
        let mo = field("motion")?;
        let hs = field("config_hash")?;
        if ch.len() != 3 || sc.len() != 3 || mo.len() != 2 || hs.len() != 1 {
            return Err(perr("malformed bundle header"));
        }
        let chunking = ChunkingConfig {
            horizon: num(&ch[0])?,
            exec: num(&ch[1])?,
            stages: num(&ch[2])?,
        };
        chunking.validate()?;
        let bundle = Self {
            intent_net: Mlp::from_text(intent_txt)?,
            policy_net: Mlp::from_text(policy_txt)?,
            chunking,
            scale: ActionScale([flt(&sc[0])?, flt(&sc[1])?, flt(&sc[2])?]),
            motion_dim: num(&mo[0])?,
            motion_enabled: mo[1] == "1",
            config_hash: if hs[0] == "-" {
                String::new()
            } else {
                hs[0].clone()
            },
        };
        let expect_in = chunking.horizon * 3
            + 1
            + PROPRIO_DIM
            + bundle.motion_dim
            + bundle.intent_net.output_dim();
        if bundle.policy_net.input_dim() != expect_in
            || bundle.policy_net.output_dim() != chunking.horizon * 3
        {
            return Err(perr("policy network shape does not match bundle metadata"));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Flow-time bias: `t = 1 - s`, `s ~ Beta(alpha, 1)`.
    pub alpha: f64,
    /// Weight on the first `exec` steps of the horizon.
    pub head_weight: f64,
    pub adam: AdamConfig,
    /// Learning rate at the last step as a fraction of the initial one
    /// (cosine schedule).
    pub final_lr_frac: f64,
    pub log_every: usize,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        Self {
            steps: 6000,
            batch_size: 64,
            alpha: 5.0,
            head_weight: 2.0,
            adam: AdamConfig::default(),
            final_lr_frac: 0.1,
            log_every: 100,
            checkpoint_every: 0,
        }
    }
}

impl PolicyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(config_err(
                "steps, batch_size and log_every must be positive",
            ));
        }
        if !(self.alpha > 0.0) || !(self.head_weight > 0.0) {
            return Err(config_err("alpha and head_weight must be positive"));
        }
        if !(0.0..=1.0).contains(&self.final_lr_frac) {
            return Err(config_err("final_lr_frac must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// `(step, mean loss over the preceding window)`.
    pub loss_curve: Vec<(usize, f64)>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.loss_curve.first().map(|p| p.1)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_curve.last().map(|p| p.1)
    }
}

#[derive(Serialize)]
struct DivergenceDump<'a> {
    step: usize,
    loss: f64,
    recent_losses: &'a [(usize, f64)],
    policy_grad_norm: f64,
    intent_grad_norm: f64,
    lr: f64,
}

/// Target chunk of a sample in policy space.
pub fn normalized_target(sample: &MisalignedSample, scale: &ActionScale) -> Matrix {
    let a = &sample.action_target;
    Matrix::from_fn(a.rows(), 3, |r, c| a.get(r, c) / scale.0[c])
}

/// Flow-matching items for a batch, with intent vectors from the cache rows.
fn flow_items(
    batch: &[MisalignedSample],
    intents: &Matrix,
    scale: &ActionScale,
    motion_enabled: bool,
    alpha: f64,
    rng: &mut SeededRng,
) -> Result<Vec<CfmItem>> {
    batch
        .iter()
        .enumerate()
        .map(|(r, s)| {
            let mut fused = s.fused_state.0.clone();
            if !motion_enabled {
                fused[PROPRIO_DIM..].fill(0.0);
            }
            Ok(CfmItem {
                sample: make_flow_sample(rng, &normalized_target(s, scale), alpha)?,
                fused,
                intent: intents.row(r).to_vec(),
            })
        })
        .collect()
}

fn intent_inputs(batch: &[MisalignedSample]) -> Matrix {
    let dim = batch[0].macro_obs.cells().len() + 2;
    let mut m = Matrix::zeros(batch.len(), dim);
    for (r, s) in batch.iter().enumerate() {
        m.row_mut(r)
            .copy_from_slice(&intent_input(&s.macro_obs, &s.task_tag));
    }
    m
}

/// Jointly trains the field network and the intent encoder on misaligned
/// batches. The motion features inside `data` are already frozen.
pub fn train_policy(
    data: &PreparedDataset,
    bundle: &mut PolicyBundle,
    cfg: &PolicyTrainConfig,
    rng: &mut SeededRng,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.chunking != bundle.chunking {
        return Err(config_err("dataset and policy chunking differ"));
    }
    let weights = horizon_weights(
        bundle.chunking.horizon,
        bundle.chunking.exec,
        cfg.head_weight,
    );
    let mut policy_adam = AdamState::new(&bundle.policy_net, cfg.adam);
    let mut intent_adam = AdamState::new(&bundle.intent_net, cfg.adam);
    let mut batches = data.batches(cfg.batch_size, rng.derive(1))?;
    let mut noise_rng = rng.derive(2);
    let mut report = TrainReport {
        loss_curve: Vec::new(),
        checkpoints: Vec::new(),
    };
    let mut window = 0.0;
    let mut window_n = 0usize;
    for step in 0..cfg.steps {
        let progress = step as f64 / cfg.steps as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        let lr = cfg.adam.lr * (cfg.final_lr_frac + (1.0 - cfg.final_lr_frac) * cosine);
        policy_adam.config.lr = lr;
        intent_adam.config.lr = lr;

        let batch = batches.next().expect("batch stream is infinite");
        let intent_cache = bundle.intent_net.forward_batch(&intent_inputs(&batch))?;
        let items = flow_items(
            &batch,
            intent_cache.output(),
            &bundle.scale,
            bundle.motion_enabled,
            cfg.alpha,
            &mut noise_rng,
        )?;
        let out = cfm_loss(&bundle.policy_net, &items, &weights)?;
        let intent_bp = bundle
            .intent_net
            .backward(&intent_cache, &out.intent_grads)?;
        if !out.loss.is_finite() || !out.grads.is_finite() || !intent_bp.grads.is_finite() {
            if let Some(dir) = checkpoint_dir {
                fs::create_dir_all(dir)?;
                let tail = report.loss_curve.len().saturating_sub(10);
                let dump = DivergenceDump {
                    step,
                    loss: out.loss,
                    recent_losses: &report.loss_curve[tail..],
                    policy_grad_norm: out.grads.norm(),
                    intent_grad_norm: intent_bp.grads.norm(),
                    lr,
                };
                fs::write(
                    dir.join("divergence.json"),
                    serde_json::to_string_pretty(&dump)?,
                )?;
            }
            return Err(TidalError::Training(format!(
                "loss diverged at step {step} (loss {}, last logged {:?})",
                out.loss,
                report.loss_curve.last()
            )));
        }
        adam_step(&mut bundle.policy_net, &out.grads, &mut policy_adam)?;
        adam_step(&mut bundle.intent_net, &intent_bp.grads, &mut intent_adam)?;

        window += out.loss;
        window_n += 1;
        if window_n == cfg.log_every || step + 1 == cfg.steps {
            report.loss_curve.push((step + 1, window / window_n as f64));
            window = 0.0;
            window_n = 0;
        }
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                let path = dir.join(format!("policy_step_{:06}.txt", step + 1));
                bundle.save(&path)?;
                report.checkpoints.push(path);
            }
        }
    }
    Ok(report)
}

/// Mean unweighted `|v(x_t, t) - (x1 - x0)|^2` over `n` dataset samples at a
/// fixed flow time.
pub fn probe_field_error(
    bundle: &PolicyBundle,
    data: &PreparedDataset,
    t: f64,
    n: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    if n == 0 {
        return Err(config_err("probe needs at least one sample"));
    }
    let mut total = 0.0;
    for _ in 0..n {
        let s = data.draw(rng);
        let intent = bundle.encode(&s.macro_obs, &s.task_tag, s.anchor)?;
        let x1 = normalized_target(&s, &bundle.scale);
        let x0 = sample_gaussian_chunk(rng, x1.rows(), x1.cols());
        let fs = FlowSample::new(x0, x1, t)?;
        let mut fused = s.fused_state.clone();
        if !bundle.motion_enabled {
            fused.0[PROPRIO_DIM..].fill(0.0);
        }
        let v = vf_forward(&bundle.policy_net, &fs.xt, t, &fused, &intent)?;
        total += v
            .as_slice()
            .iter()
            .zip(fs.u.as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
    }
    Ok(total / n as f64)
}
