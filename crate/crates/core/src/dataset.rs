//! Temporally misaligned training samples.
//!
//! Each sample pairs the observation at an anchor step with proprioception,
//! motion features and action targets taken `k * N` steps later, so the
//! policy learns to act on a stale intent with fresh state.

use serde::{Deserialize, Serialize};

use crate::env::GridObs;
use crate::error::{config_err, Result, TidalError};
use crate::math::{Matrix, SeededRng};
use crate::motion::{
    episode_diff, fuse_state, motion_forward, precompute_embeddings, FusedState, MotionEmbedding,
    MotionNet,
};
use crate::oracle::Episode;

/// Prediction horizon `H`, execution chunk `N`, latency stages `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChunkingConfig {
    pub horizon: usize,
    pub exec: usize,
    pub stages: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            horizon: 16,
            exec: 4,
            stages: 4,
        }
    }
}

impl ChunkingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.exec == 0 || self.stages == 0 {
            return Err(config_err("horizon, exec and stages must be at least 1"));
        }
        if self.horizon % self.exec != 0 {
            return Err(config_err(format!(
                "exec chunk {} must divide horizon {}",
                self.exec, self.horizon
            )));
        }
        Ok(())
    }

    pub fn segment_length(&self) -> usize {
        segment_length(self.horizon, self.stages, self.exec)
    }
}

/// `L = H + (K - 1) * N`
pub fn segment_length(horizon: usize, stages: usize, exec: usize) -> usize {
    horizon + (stages - 1) * exec
}

/// Uniform stage index in `0..stages`.
pub fn sample_latency_stage(rng: &mut SeededRng, stages: usize) -> usize {
    if stages <= 1 {
        return 0;
    }
    rng.index(stages)
}

/// `head_weight` for the first `exec` steps, 1 afterwards.
pub fn horizon_weights(horizon: usize, exec: usize, head_weight: f64) -> Vec<f64> {
    (0..horizon)
        .map(|i| if i < exec { head_weight } else { 1.0 })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MisalignedSample {
    pub macro_obs: GridObs,
    pub task_tag: [f64; 2],
    pub anchor: usize,
    pub stage: usize,
    /// Episode step of the proprioceptive state, `anchor + stage * exec`.
    pub state_step: usize,
    pub fused_state: FusedState,
    /// `H x 3` raw actions starting at `state_step`.
    pub action_target: Matrix,
}

/// Where motion embeddings come from when building samples.
#[derive(Debug, Clone, Copy)]
pub enum MotionSource<'a> {
    /// Evaluate the frozen network on the episode frames.
    Net { net: &'a MotionNet, lag: usize },
    /// Motion block replaced by zeros of the given width.
    Disabled { embed_dim: usize },
}

fn embedding_at(ep: &Episode, t: usize, motion: MotionSource<'_>) -> Result<MotionEmbedding> {
    match motion {
        MotionSource::Net { net, lag } => Ok(motion_forward(net, &episode_diff(ep, t, lag)?)?.0),
        MotionSource::Disabled { embed_dim } => Ok(MotionEmbedding(vec![0.0; embed_dim])),
    }
}

fn assemble(
    ep: &Episode,
    anchor: usize,
    stage: usize,
    cfg: &ChunkingConfig,
    embedding: &MotionEmbedding,
) -> MisalignedSample {
    let state_step = anchor + stage * cfg.exec;
    let rec = &ep.steps[state_step];
    let mut action_target = Matrix::zeros(cfg.horizon, 3);
    for i in 0..cfg.horizon {
        action_target
            .row_mut(i)
            .copy_from_slice(&ep.steps[state_step + i].action.to_array());
    }
    MisalignedSample {
        macro_obs: ep.grid(anchor),
        task_tag: ep.config.difficulty.task_tag(),
        anchor,
        stage,
        state_step,
        fused_state: fuse_state(&rec.proprio(), embedding, rec.contact),
        action_target,
    }
}

fn check_segment(ep: &Episode, anchor: usize, stage: usize, cfg: &ChunkingConfig) -> Result<()> {
    if stage >= cfg.stages {
        return Err(TidalError::Sampling(format!(
            "stage {stage} outside 0..{}",
            cfg.stages
        )));
    }
    let l = cfg.segment_length();
    if anchor + l > ep.len() {
        return Err(TidalError::Sampling(format!(
            "segment [{anchor}, {}) overruns episode of length {}",
            anchor + l,
            ep.len()
        )));
    }
    Ok(())
}

pub fn build_sample(
    ep: &Episode,
    anchor: usize,
    stage: usize,
    cfg: &ChunkingConfig,
    motion: MotionSource<'_>,
) -> Result<MisalignedSample> {
    check_segment(ep, anchor, stage, cfg)?;
    let emb = embedding_at(ep, anchor + stage * cfg.exec, motion)?;
    Ok(assemble(ep, anchor, stage, cfg, &emb))
}

/// Episodes with motion embeddings evaluated once for every step.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub episodes: Vec<Episode>,
    pub chunking: ChunkingConfig,
    embeddings: Vec<Vec<MotionEmbedding>>,
    eligible: Vec<usize>,
}

impl PreparedDataset {
    pub fn new(
        episodes: Vec<Episode>,
        chunking: ChunkingConfig,
        motion: MotionSource<'_>,
    ) -> Result<Self> {
        chunking.validate()?;
        let l = chunking.segment_length();
        let eligible: Vec<usize> = (0..episodes.len())
            .filter(|&i| episodes[i].len() >= l)
            .collect();
        if eligible.is_empty() {
            return Err(TidalError::Sampling(format!(
                "no episode reaches segment length {l}"
            )));
        }
        let embeddings = match motion {
            MotionSource::Net { net, lag } => precompute_embeddings(&episodes, net, lag)?,
            MotionSource::Disabled { embed_dim } => episodes
                .iter()
                .map(|ep| vec![MotionEmbedding(vec![0.0; embed_dim]); ep.len()])
                .collect(),
        };
        Ok(Self {
            episodes,
            chunking,
            embeddings,
            eligible,
        })
    }

    pub fn sample(&self, episode: usize, anchor: usize, stage: usize) -> Result<MisalignedSample> {
        let ep = &self.episodes[episode];
        check_segment(ep, anchor, stage, &self.chunking)?;
        let t = anchor + stage * self.chunking.exec;
        Ok(assemble(
            ep,
            anchor,
            stage,
            &self.chunking,
            &self.embeddings[episode][t],
        ))
    }

    /// Draws episode, anchor and stage uniformly, in that order.
    pub fn draw(&self, rng: &mut SeededRng) -> MisalignedSample {
        let e = self.eligible[rng.index(self.eligible.len())];
        let max_anchor = self.episodes[e].len() - self.chunking.segment_length();
        let anchor = rng.index(max_anchor + 1);
        let stage = sample_latency_stage(rng, self.chunking.stages);
        self.sample(e, anchor, stage)
            .expect("eligible episodes always fit a segment")
    }

    pub fn batches(&self, batch_size: usize, rng: SeededRng) -> Result<BatchIter<'_>> {
        if batch_size == 0 {
            return Err(config_err("batch_size must be positive"));
        }
        Ok(BatchIter {
            data: self,
            batch_size,
            rng,
        })
    }
}

/// Infinite stream of independently drawn sample batches.
pub struct BatchIter<'a> {
    data: &'a PreparedDataset,
    batch_size: usize,
    rng: SeededRng,
}

impl Iterator for BatchIter<'_> {
    type Item = Vec<MisalignedSample>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(
            (0..self.batch_size)
                .map(|_| self.data.draw(&mut self.rng))
                .collect(),
        )
    }
}

pub fn batch_iter(
    data: &PreparedDataset,
    batch_size: usize,
    rng: SeededRng,
) -> Result<BatchIter<'_>> {
    data.batches(batch_size, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, RasterMode};
    use crate::motion::{MotionConfig, PROPRIO_DIM};
    use crate::oracle::{Dataset, OracleConfig};

    fn episodes(n: usize) -> Vec<Episode> {
        let env = EnvConfig {
            raster: RasterMode::Bilinear,
            ..EnvConfig::default()
        };
        Dataset::generate(&env, &OracleConfig::default(), n, 28, 11)
            .unwrap()
            .episodes
    }

    #[test]
    fn segment_lengths() {
        assert_eq!(segment_length(16, 4, 4), 28);
        assert_eq!(segment_length(16, 1, 4), 16);
        assert_eq!(segment_length(8, 3, 2), 12);
        assert_eq!(ChunkingConfig::default().segment_length(), 28);
    }

    #[test]
    fn chunking_validation() {
        assert!(ChunkingConfig::default().validate().is_ok());
        let bad = ChunkingConfig {
            horizon: 10,
            exec: 4,
            stages: 2,
        };
        assert!(bad.validate().is_err());
        assert!(ChunkingConfig {
            stages: 0,
            ..ChunkingConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn stage_sampling() {
        let mut rng = SeededRng::new(4);
        assert!((0..100).all(|_| sample_latency_stage(&mut rng, 1) == 0));
        let mut counts = [0usize; 4];
        for _ in 0..100_000 {
            counts[sample_latency_stage(&mut rng, 4)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e5 - 0.25).abs() < 0.01, "{counts:?}");
        }
        let a: Vec<usize> = {
            let mut r = SeededRng::new(9);
            (0..20).map(|_| sample_latency_stage(&mut r, 4)).collect()
        };
        let b: Vec<usize> = {
            let mut r = SeededRng::new(9);
            (0..20).map(|_| sample_latency_stage(&mut r, 4)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn weights_depend_only_on_horizon_and_exec() {
        let w = horizon_weights(16, 4, 2.0);
        assert_eq!(&w[..4], &[2.0; 4]);
        assert!(w[4..].iter().all(|&v| v == 1.0));
        assert_eq!(horizon_weights(2, 1, 2.0), vec![2.0, 1.0]);
    }

    #[test]
    fn stage_offsets_state_and_targets() {
        let eps = episodes(1);
        let ep = &eps[0];
        let cfg = ChunkingConfig::default();
        let off = MotionSource::Disabled { embed_dim: 8 };
        let s0 = build_sample(ep, 5, 0, &cfg, off).unwrap();
        assert_eq!(s0.state_step, 5);
        assert_eq!(s0.macro_obs, ep.grid(5));
        assert_eq!(
            &s0.fused_state.as_slice()[..PROPRIO_DIM],
            &ep.steps[5].proprio()
        );

        let s3 = build_sample(ep, 5, 3, &cfg, off).unwrap();
        assert_eq!(s3.state_step, 17);
        assert_eq!(s3.macro_obs, ep.grid(5));
        assert_eq!(
            &s3.fused_state.as_slice()[..PROPRIO_DIM],
            &ep.steps[17].proprio()
        );
        for i in 0..16 {
            assert_eq!(s3.action_target.row(i), &ep.steps[17 + i].action.to_array());
        }
    }

    #[test]
    fn overrun_is_sampling_error() {
        let eps = episodes(1);
        let ep = &eps[0];
        let cfg = ChunkingConfig::default();
        let off = MotionSource::Disabled { embed_dim: 8 };
        let last = ep.len() - 28;
        assert!(build_sample(ep, last, 3, &cfg, off).is_ok());
        let err = build_sample(ep, last + 1, 0, &cfg, off).unwrap_err();
        assert!(matches!(err, TidalError::Sampling(_)));
        assert!(build_sample(ep, 0, 4, &cfg, off).is_err());
    }

    #[test]
    fn held_state_has_zero_motion_block() {
        let eps = episodes(1);
        let ep = &eps[0];
        let cfg = ChunkingConfig::default();
        let mcfg = MotionConfig::default();
        let net = MotionNet::new(16, &mcfg, &mut SeededRng::new(1)).unwrap();
        let src = MotionSource::Net { net: &net, lag: 4 };
        let t = (0..ep.len() - 28)
            .find(|&t| ep.steps[t].contact == 1)
            .unwrap();
        let s = build_sample(ep, t, 0, &cfg, src).unwrap();
        assert!(s
            .fused_state
            .motion_block()
            .iter()
            .all(|v| v.to_bits() == 0));
        let free = build_sample(ep, 0, 0, &cfg, src).unwrap();
        assert!(free.fused_state.motion_block().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn prepared_matches_direct_build() {
        let eps = episodes(2);
        let cfg = ChunkingConfig::default();
        let net = MotionNet::new(16, &MotionConfig::default(), &mut SeededRng::new(1)).unwrap();
        let src = MotionSource::Net { net: &net, lag: 4 };
        let prepared = PreparedDataset::new(eps.clone(), cfg, src).unwrap();
        for (e, anchor, k) in [(0, 0, 0), (1, 7, 2), (0, 30, 3)] {
            let a = prepared.sample(e, anchor, k).unwrap();
            let b = build_sample(&eps[e], anchor, k, &cfg, src).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn batch_stream_is_uniform_and_reproducible() {
        let eps = episodes(3);
        let cfg = ChunkingConfig::default();
        let data = PreparedDataset::new(eps, cfg, MotionSource::Disabled { embed_dim: 8 }).unwrap();
        let single = batch_iter(&data, 1, SeededRng::new(0))
            .unwrap()
            .next()
            .unwrap();
        assert_eq!(single.len(), 1);

        let mut counts = [0usize; 4];
        for batch in batch_iter(&data, 1, SeededRng::new(1))
            .unwrap()
            .take(10_000)
        {
            for s in &batch {
                counts[s.stage] += 1;
                assert!(s.stage * cfg.exec + cfg.horizon <= cfg.segment_length());
            }
        }
        for c in counts {
            assert!((c as f64 / 1e4 - 0.25).abs() < 0.02, "{counts:?}");
        }

        let a: Vec<_> = batch_iter(&data, 4, SeededRng::new(2))
            .unwrap()
            .take(5)
            .collect();
        let b: Vec<_> = batch_iter(&data, 4, SeededRng::new(2))
            .unwrap()
            .take(5)
            .collect();
        assert_eq!(a, b);
        assert!(batch_iter(&data, 0, SeededRng::new(0)).is_err());
    }

    #[test]
    fn short_episodes_are_rejected() {
        let mut eps = episodes(1);
        eps[0].steps.truncate(20);
        let r = PreparedDataset::new(
            eps,
            ChunkingConfig::default(),
            MotionSource::Disabled { embed_dim: 8 },
        );
        assert!(matches!(r.unwrap_err(), TidalError::Sampling(_)));
    }
}
