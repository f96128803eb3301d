//! Simulated-latency execution of the dual-rate controller and of the
//! plan-then-execute baseline.
//!
//! A rollout advances a simulated clock: inference events charge their
//! latency, executed control steps charge `control_dt` each. Under the
//! non-paused protocol the world keeps moving while the controller thinks,
//! with the robot holding position, for `ceil(latency / control_dt)` steps
//! per inference window.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::ChunkingConfig;
use crate::env::{
    contact_state, env_advance_free, env_reset, env_step, rasterize, EnvConfig, GridObs, Phase,
    WorldState,
};
use crate::error::{config_err, Result, TidalError};
use crate::flow::PolicyBundle;
use crate::intent::IntentEmbedding;
use crate::math::SeededRng;
use crate::motion::{
    diff_frames, fuse_state, motion_forward, FusedState, MotionEmbedding, MotionNet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Paused,
    Nonpaused,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Paused => "paused",
            Protocol::Nonpaused => "nonpaused",
        }
    }
}

impl FromStr for Protocol {
    type Err = TidalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paused" => Ok(Protocol::Paused),
            "nonpaused" | "non-paused" => Ok(Protocol::Nonpaused),
            other => Err(TidalError::Usage(format!("unknown protocol '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyModel {
    pub t_vlm: f64,
    /// Cost of one solver step of the action head.
    pub t_policy_step: f64,
    pub t_full_baseline: f64,
    pub control_dt: f64,
    pub protocol: Protocol,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            t_vlm: 41.0,
            t_policy_step: 19.0,
            t_full_baseline: 93.0,
            control_dt: 20.0,
            protocol: Protocol::Paused,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.t_vlm,
            self.t_policy_step,
            self.t_full_baseline,
            self.control_dt,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(config_err("latencies must be finite and non-negative"));
        }
        if self.control_dt <= 0.0 {
            return Err(config_err("control_dt must be positive"));
        }
        if self.t_full_baseline < self.t_vlm {
            return Err(config_err(
                "full inference cannot be cheaper than the encoder alone",
            ));
        }
        Ok(())
    }

    pub fn with_protocol(mut self, protocol: Protocol) -> Self {
        self.protocol = protocol;
        self
    }

    /// World steps elapsed during an inference window (rounded up).
    pub fn blind_steps(&self, latency_ms: f64) -> u32 {
        (latency_ms / self.control_dt - 1e-9).ceil().max(0.0) as u32
    }

    /// `(t_vlm + K t_policy + K N dt) / K` per chunk.
    pub fn tidal_period_ms(&self, c: &ChunkingConfig) -> f64 {
        let k = c.stages as f64;
        (self.t_vlm + k * self.t_policy_step + k * c.exec as f64 * self.control_dt) / k
    }

    pub fn tidal_effective_hz(&self, c: &ChunkingConfig) -> f64 {
        1000.0 / self.tidal_period_ms(c)
    }

    /// Fastest chunk-to-chunk rate: one micro inference plus `N` steps.
    pub fn tidal_peak_hz(&self, c: &ChunkingConfig) -> f64 {
        1000.0 / (self.t_policy_step + c.exec as f64 * self.control_dt)
    }

    pub fn baseline_period_ms(&self, c: &ChunkingConfig) -> f64 {
        self.t_full_baseline + c.horizon as f64 * self.control_dt
    }

    pub fn baseline_hz(&self, c: &ChunkingConfig) -> f64 {
        1000.0 / self.baseline_period_ms(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    Tidal,
    TidalNoMotion,
    Baseline,
    BaselinePlusMotion,
}

impl ControllerMode {
    pub const ALL: [ControllerMode; 4] = [
        ControllerMode::Baseline,
        ControllerMode::TidalNoMotion,
        ControllerMode::BaselinePlusMotion,
        ControllerMode::Tidal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerMode::Tidal => "tidal",
            ControllerMode::TidalNoMotion => "tidal_no_motion",
            ControllerMode::Baseline => "baseline",
            ControllerMode::BaselinePlusMotion => "baseline_plus_motion",
        }
    }

    pub fn is_dual_rate(self) -> bool {
        matches!(self, ControllerMode::Tidal | ControllerMode::TidalNoMotion)
    }

    pub fn uses_motion(self) -> bool {
        matches!(
            self,
            ControllerMode::Tidal | ControllerMode::BaselinePlusMotion
        )
    }
}

impl FromStr for ControllerMode {
    type Err = TidalError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| TidalError::Usage(format!("unknown controller mode '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerSpec {
    pub mode: ControllerMode,
    pub chunking: ChunkingConfig,
    pub latency: LatencyModel,
    /// Intent lifespan in trajectory steps; the intent is refreshed every
    /// `lifespan - (L - H)` executed steps.
    pub lifespan: usize,
    /// Solver steps for the baseline's full inference.
    pub solve_steps: usize,
}

impl ControllerSpec {
    pub fn new(mode: ControllerMode, chunking: ChunkingConfig, latency: LatencyModel) -> Self {
        Self {
            mode,
            chunking,
            latency,
            lifespan: chunking.segment_length(),
            solve_steps: chunking.stages,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.chunking.validate()?;
        self.latency.validate()?;
        if self.solve_steps == 0 {
            return Err(config_err("solve_steps must be at least 1"));
        }
        refresh_interval(self.lifespan, &self.chunking)?;
        Ok(())
    }

    /// Executed steps per macro-cycle.
    pub fn cycle_steps(&self) -> usize {
        if self.mode.is_dual_rate() {
            refresh_interval(self.lifespan, &self.chunking).unwrap_or(self.chunking.horizon)
        } else {
            self.chunking.horizon
        }
    }

    /// Steps executed from each chunk.
    pub fn chunk_steps(&self) -> usize {
        if self.mode.is_dual_rate() {
            self.chunking.exec
        } else {
            self.chunking.horizon
        }
    }
}

/// Executed steps between intent refreshes for lifespan `l`:
/// `l - (L - H)`. Errors when `l < L`.
pub fn refresh_interval(lifespan: usize, c: &ChunkingConfig) -> Result<usize> {
    let l_seg = c.segment_length();
    if lifespan < l_seg {
        return Err(config_err(format!(
            "intent lifespan {lifespan} is shorter than the segment length {l_seg}"
        )));
    }
    Ok(lifespan - (l_seg - c.horizon))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    MacroInfer,
    MicroInfer,
    ExecuteStep,
    WorldAdvance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub sim_time_ms: f64,
    pub duration_ms: f64,
    pub kind: EventKind,
    pub cycle: usize,
    pub chunk_id: Option<usize>,
    pub intent_born_step: Option<usize>,
    /// Env time step when the event starts.
    pub env_step: usize,
}

/// One inference window: its latency and the world steps that elapsed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceWindow {
    pub cycle: usize,
    pub latency_ms: f64,
    pub requested_steps: u32,
    pub advanced_steps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrace {
    pub mode: ControllerMode,
    pub protocol: Protocol,
    pub chunk_steps: usize,
    pub cycle_steps: usize,
    pub events: Vec<TraceEvent>,
    pub windows: Vec<InferenceWindow>,
    pub final_phase: Phase,
    pub final_time_step: usize,
    pub executed_steps: usize,
    /// Contact 0 -> 1 transitions.
    pub grasps: usize,
    /// Whether the target was still held at the end.
    pub final_held: bool,
}

impl RolloutTrace {
    pub fn is_success(&self) -> bool {
        self.final_phase == Phase::Done
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// `(chunk id, executed steps, end time of its last executed step)`.
    fn chunk_ends(&self) -> BTreeMap<usize, (usize, f64)> {
        let mut m: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        for e in &self.events {
            if e.kind == EventKind::ExecuteStep {
                if let Some(id) = e.chunk_id {
                    let entry = m.entry(id).or_insert((0, 0.0));
                    entry.0 += 1;
                    entry.1 = e.sim_time_ms + e.duration_ms;
                }
            }
        }
        m
    }

    /// Periods between the execution ends of consecutive complete chunks;
    /// the first chunk is measured from the start of the rollout.
    pub fn chunk_periods(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut prev_end = Some(0.0);
        for (_, (n, end)) in self.chunk_ends() {
            let complete = n == self.chunk_steps;
            if complete {
                if let Some(p) = prev_end {
                    out.push(end - p);
                }
                prev_end = Some(end);
            } else {
                prev_end = None;
            }
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn read_events<R: BufRead>(input: R) -> Result<Vec<TraceEvent>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// `1000 / mean chunk period`.
pub fn effective_frequency(trace: &RolloutTrace) -> Result<f64> {
    let p = trace.chunk_periods();
    if p.is_empty() {
        return Err(TidalError::Analysis("trace has no complete chunk".into()));
    }
    Ok(1000.0 * p.len() as f64 / p.iter().sum::<f64>())
}

/// `1000 / shortest chunk period`.
pub fn peak_frequency(trace: &RolloutTrace) -> Result<f64> {
    let p = trace.chunk_periods();
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(TidalError::Analysis("trace has no complete chunk".into()));
    }
    Ok(1000.0 / min)
}

/// Trained networks a rollout needs.
#[derive(Debug, Clone, Copy)]
pub struct Controller<'a> {
    pub policy: &'a PolicyBundle,
    pub motion: Option<&'a MotionNet>,
    pub motion_lag: usize,
}

/// Frames keyed by env time step, covering executed and free-advanced
/// steps alike.
struct FrameHistory {
    frames: Vec<GridObs>,
}

impl FrameHistory {
    fn new(first: GridObs) -> Self {
        Self {
            frames: vec![first],
        }
    }

    fn sync(&mut self, state: &WorldState, cfg: &EnvConfig) {
        // Steps are only ever appended one at a time by the rollout loop.
        debug_assert_eq!(self.frames.len(), state.time_step as usize);
        self.frames.push(rasterize(state, cfg));
    }

    fn pair(&self, t: usize, lag: usize) -> (&GridObs, Option<&GridObs>) {
        let now = &self.frames[t];
        (now, t.checked_sub(lag).map(|p| &self.frames[p]))
    }
}

struct Rollout<'a> {
    env: &'a EnvConfig,
    ctl: Controller<'a>,
    spec: ControllerSpec,
    env_rng: SeededRng,
    policy_rng: SeededRng,
    state: WorldState,
    history: FrameHistory,
    clock: f64,
    trace: RolloutTrace,
    next_chunk: usize,
    tag: [f64; 2],
}

impl<'a> Rollout<'a> {
    fn new(
        env: &'a EnvConfig,
        ctl: Controller<'a>,
        spec: ControllerSpec,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        env.validate()?;
        if spec.mode.uses_motion() && ctl.motion.is_none() {
            return Err(config_err(format!(
                "mode {} needs a motion network",
                spec.mode.name()
            )));
        }
        if ctl.policy.chunking != spec.chunking {
            return Err(config_err("policy chunking does not match the controller"));
        }
        let root = SeededRng::new(seed);
        let mut env_rng = root.derive(0);
        let state = env_reset(env, &mut env_rng)?;
        let history = FrameHistory::new(rasterize(&state, env));
        Ok(Self {
            env,
            ctl,
            spec,
            env_rng,
            policy_rng: root.derive(1),
            history,
            clock: 0.0,
            trace: RolloutTrace {
                mode: spec.mode,
                protocol: spec.latency.protocol,
                chunk_steps: spec.chunk_steps(),
                cycle_steps: spec.cycle_steps(),
                events: Vec::new(),
                windows: Vec::new(),
                final_phase: state.phase,
                final_time_step: 0,
                executed_steps: 0,
                grasps: 0,
                final_held: false,
            },
            state,
            next_chunk: 0,
            tag: env.difficulty.task_tag(),
        })
    }

    fn now(&self) -> usize {
        self.state.time_step as usize
    }

    fn event(
        &mut self,
        kind: EventKind,
        duration: f64,
        cycle: usize,
        chunk: Option<usize>,
        born: Option<usize>,
    ) {
        self.trace.events.push(TraceEvent {
            sim_time_ms: self.clock,
            duration_ms: duration,
            kind,
            cycle,
            chunk_id: chunk,
            intent_born_step: born,
            env_step: self.now(),
        });
        self.clock += duration;
    }

    /// Closes an inference window of `latency` ms: under the non-paused
    /// protocol the world runs on with the robot holding still.
    fn blind_window(&mut self, cycle: usize, latency: f64) {
        let lat = self.spec.latency;
        let requested = match lat.protocol {
            Protocol::Paused => 0,
            Protocol::Nonpaused => lat.blind_steps(latency),
        };
        let start = self.clock - latency;
        let mut advanced = 0;
        for i in 0..requested {
            if self.state.is_terminal() {
                break;
            }
            self.trace.events.push(TraceEvent {
                sim_time_ms: start + i as f64 * lat.control_dt,
                duration_ms: lat.control_dt,
                kind: EventKind::WorldAdvance,
                cycle,
                chunk_id: None,
                intent_born_step: None,
                env_step: self.now(),
            });
            self.state = env_advance_free(&self.state, self.env, &mut self.env_rng, 1);
            self.history.sync(&self.state, self.env);
            advanced += 1;
        }
        self.trace.windows.push(InferenceWindow {
            cycle,
            latency_ms: latency,
            requested_steps: requested,
            advanced_steps: advanced,
        });
    }

    fn encode(&self) -> Result<IntentEmbedding> {
        let obs = rasterize(&self.state, self.env);
        self.ctl.policy.encode(&obs, &self.tag, self.now())
    }

    fn fused(&self, with_motion: bool) -> Result<FusedState> {
        let dim = self.ctl.policy.motion_dim;
        let m = match (with_motion, self.ctl.motion) {
            (true, Some(net)) => {
                let (now, past) = self.history.pair(self.now(), self.ctl.motion_lag);
                let zeros;
                let past = match past {
                    Some(p) => p,
                    None => {
                        zeros = GridObs::zeros(now.resolution());
                        &zeros
                    }
                };
                motion_forward(net, &diff_frames(now, past)?)?.0
            }
            _ => MotionEmbedding(vec![0.0; dim]),
        };
        if m.0.len() != dim {
            return Err(config_err(format!(
                "motion embedding has {} entries, policy expects {dim}",
                m.0.len()
            )));
        }
        Ok(fuse_state(
            &self.state.proprio(),
            &m,
            contact_state(&self.state),
        ))
    }

    /// Executes up to `n` rows of the chunk; returns the number executed.
    fn execute(
        &mut self,
        chunk: &crate::flow::ActionChunk,
        id: usize,
        cycle: usize,
        n: usize,
    ) -> Result<usize> {
        let dt = self.spec.latency.control_dt;
        let mut done = 0;
        for i in 0..n.min(chunk.horizon()) {
            if self.state.is_terminal() {
                break;
            }
            let a = chunk.env_action(i, &self.ctl.policy.scale);
            self.event(
                EventKind::ExecuteStep,
                dt,
                cycle,
                Some(id),
                Some(chunk.intent_born_step),
            );
            let was_held = self.state.held;
            self.state = env_step(&self.state, a, self.env, &mut self.env_rng)?;
            if self.state.held && !was_held {
                self.trace.grasps += 1;
            }
            self.history.sync(&self.state, self.env);
            self.trace.executed_steps += 1;
            done += 1;
        }
        Ok(done)
    }

    fn run_dual_rate(mut self) -> Result<RolloutTrace> {
        let refresh = self.spec.cycle_steps();
        let lat = self.spec.latency;
        let with_motion = self.spec.mode.uses_motion();
        let mut cycle = 0;
        while !self.state.is_terminal() {
            let intent = self.encode()?;
            let born = intent.born_step;
            self.event(EventKind::MacroInfer, lat.t_vlm, cycle, None, Some(born));
            self.blind_window(cycle, lat.t_vlm);
            let mut executed = 0;
            while executed < refresh && !self.state.is_terminal() {
                let fused = self.fused(with_motion)?;
                let id = self.next_chunk;
                self.next_chunk += 1;
                let now = self.now();
                let chunk =
                    self.ctl
                        .policy
                        .generate(&mut self.policy_rng, &fused, &intent, 1, now)?;
                self.event(
                    EventKind::MicroInfer,
                    lat.t_policy_step,
                    cycle,
                    Some(id),
                    Some(born),
                );
                self.blind_window(cycle, lat.t_policy_step);
                let n = self.spec.chunking.exec.min(refresh - executed);
                executed += self.execute(&chunk, id, cycle, n)?;
            }
            cycle += 1;
        }
        Ok(self.finish())
    }

    fn run_baseline(mut self) -> Result<RolloutTrace> {
        let lat = self.spec.latency;
        let k = self.spec.solve_steps;
        let with_motion = self.spec.mode.uses_motion();
        // The full inference is split into the encoder share and k equal
        // solver shares so the compute budget is visible in the trace.
        let solver_share = (lat.t_full_baseline - lat.t_vlm) / k as f64;
        let mut cycle = 0;
        while !self.state.is_terminal() {
            let intent = self.encode()?;
            let born = intent.born_step;
            let fused = self.fused(with_motion)?;
            let id = self.next_chunk;
            self.next_chunk += 1;
            let now = self.now();
            let chunk = self
                .ctl
                .policy
                .generate(&mut self.policy_rng, &fused, &intent, k, now)?;
            self.event(
                EventKind::MacroInfer,
                lat.t_vlm,
                cycle,
                Some(id),
                Some(born),
            );
            for _ in 0..k {
                self.event(
                    EventKind::MicroInfer,
                    solver_share,
                    cycle,
                    Some(id),
                    Some(born),
                );
            }
            self.blind_window(cycle, lat.t_full_baseline);
            self.execute(&chunk, id, cycle, self.spec.chunking.horizon)?;
            cycle += 1;
        }
        Ok(self.finish())
    }

    fn finish(mut self) -> RolloutTrace {
        // World advances are stamped inside their inference window, which
        // may span several inference events.
        self.trace
            .events
            .sort_by(|a, b| a.sim_time_ms.total_cmp(&b.sim_time_ms));
        self.trace.final_phase = self.state.phase;
        self.trace.final_time_step = self.now();
        self.trace.final_held = self.state.held;
        self.trace
    }
}

/// Dual-rate rollout (`tidal` or `tidal_no_motion`).
pub fn run_tidal_rollout(
    env: &EnvConfig,
    ctl: Controller<'_>,
    spec: &ControllerSpec,
    seed: u64,
) -> Result<RolloutTrace> {
    if !spec.mode.is_dual_rate() {
        return Err(config_err(format!(
            "{} is not a dual-rate mode",
            spec.mode.name()
        )));
    }
    Rollout::new(env, ctl, *spec, seed)?.run_dual_rate()
}

/// Plan-then-execute rollout (`baseline` or `baseline_plus_motion`).
pub fn run_baseline_rollout(
    env: &EnvConfig,
    ctl: Controller<'_>,
    spec: &ControllerSpec,
    seed: u64,
) -> Result<RolloutTrace> {
    if spec.mode.is_dual_rate() {
        return Err(config_err(format!(
            "{} is not a baseline mode",
            spec.mode.name()
        )));
    }
    Rollout::new(env, ctl, *spec, seed)?.run_baseline()
}

pub fn run_rollout(
    env: &EnvConfig,
    ctl: Controller<'_>,
    spec: &ControllerSpec,
    seed: u64,
) -> Result<RolloutTrace> {
    if spec.mode.is_dual_rate() {
        run_tidal_rollout(env, ctl, spec, seed)
    } else {
        run_baseline_rollout(env, ctl, spec, seed)
    }
}

/// Dual-rate rollout with intent lifespan `l`.
pub fn lifespan_rollout(
    env: &EnvConfig,
    ctl: Controller<'_>,
    spec: &ControllerSpec,
    lifespan: usize,
    seed: u64,
) -> Result<RolloutTrace> {
    let spec = ControllerSpec { lifespan, ..*spec };
    refresh_interval(lifespan, &spec.chunking)?;
    run_tidal_rollout(env, ctl, &spec, seed)
}

/// Checks the structural guarantees of a trace: time ordering, one encoder
/// charge and the solver budget per cycle, a single intent per cycle,
/// executed-step conservation, chunk ownership of executed steps, and the
/// protocol's world-advance count.
pub fn check_trace(trace: &RolloutTrace, spec: &ControllerSpec) -> Result<()> {
    let fail = |m: String| Err(TidalError::Protocol(m));
    let lat = spec.latency;
    for w in trace.events.windows(2) {
        if w[1].sim_time_ms < w[0].sim_time_ms {
            return fail(format!("events out of order at {} ms", w[1].sim_time_ms));
        }
    }
    let mut cycles: BTreeMap<usize, Vec<&TraceEvent>> = BTreeMap::new();
    for e in &trace.events {
        cycles.entry(e.cycle).or_default().push(e);
    }
    let last_cycle = cycles.keys().next_back().copied();
    let mut chunk_counts: BTreeMap<usize, usize> = BTreeMap::new();
    for (&c, evs) in &cycles {
        let macros: Vec<_> = evs
            .iter()
            .filter(|e| e.kind == EventKind::MacroInfer)
            .collect();
        let micros: Vec<_> = evs
            .iter()
            .filter(|e| e.kind == EventKind::MicroInfer)
            .collect();
        let execs: Vec<_> = evs
            .iter()
            .filter(|e| e.kind == EventKind::ExecuteStep)
            .collect();
        if macros.len() != 1 || macros[0].duration_ms != lat.t_vlm {
            return fail(format!("cycle {c}: expected one encoder charge"));
        }
        let born = macros[0].intent_born_step;
        if micros
            .iter()
            .chain(&execs)
            .any(|e| e.intent_born_step != born)
        {
            return fail(format!("cycle {c}: intent changed within the cycle"));
        }
        let complete =
            Some(c) != last_cycle || trace.executed_steps > 0 && execs.len() == trace.cycle_steps;
        if spec.mode.is_dual_rate() {
            if micros.iter().any(|e| e.duration_ms != lat.t_policy_step) {
                return fail(format!("cycle {c}: micro inference charged wrongly"));
            }
            let expected_chunks = trace.cycle_steps.div_ceil(spec.chunking.exec);
            if complete && micros.len() != expected_chunks {
                return fail(format!(
                    "cycle {c}: {} micro inferences, expected {expected_chunks}",
                    micros.len()
                ));
            }
        } else {
            let total: f64 = micros.iter().map(|e| e.duration_ms).sum::<f64>() + lat.t_vlm;
            if micros.len() != spec.solve_steps || (total - lat.t_full_baseline).abs() > 1e-9 {
                return fail(format!("cycle {c}: full inference budget mismatch"));
            }
        }
        if complete && execs.len() != trace.cycle_steps {
            return fail(format!(
                "cycle {c}: executed {} steps, expected {}",
                execs.len(),
                trace.cycle_steps
            ));
        }
        if execs.len() > trace.cycle_steps {
            return fail(format!("cycle {c}: executed too many steps"));
        }
        for e in &execs {
            match e.chunk_id {
                Some(id) => *chunk_counts.entry(id).or_default() += 1,
                None => return fail(format!("cycle {c}: executed step without a chunk")),
            }
        }
    }
    if chunk_counts.values().any(|&n| n > trace.chunk_steps) {
        return fail("a chunk executed more steps than allowed".into());
    }
    let advances = trace.count(EventKind::WorldAdvance);
    match trace.protocol {
        Protocol::Paused => {
            if advances != 0 {
                return fail(format!(
                    "paused protocol advanced the world {advances} times"
                ));
            }
        }
        Protocol::Nonpaused => {
            let mut expected = 0usize;
            for (i, w) in trace.windows.iter().enumerate() {
                if w.requested_steps != lat.blind_steps(w.latency_ms) {
                    return fail(format!("window {i}: wrong blind-step count"));
                }
                let last = i + 1 == trace.windows.len();
                if w.advanced_steps != w.requested_steps
                    && !(last && trace.final_phase.is_terminal())
                {
                    return fail(format!("window {i}: world advance cut short"));
                }
                expected += w.advanced_steps as usize;
            }
            if advances != expected {
                return fail(format!(
                    "{advances} world advances, windows account for {expected}"
                ));
            }
        }
    }
    Ok(())
}
