//! Discrete-time 2D interception world.
//!
//! A velocity-controlled point end-effector with a gripper must catch a
//! target that drifts along a cardinal direction, then carry it into a fixed
//! goal disc and release it there. The workspace is the unit square. Grid
//! observations rasterize the three markers (target, end-effector, goal) for
//! the perception networks.

use std::io::{BufRead, Write};
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result, TidalError};
use crate::math::SeededRng;

pub const TARGET_INTENSITY: f64 = 1.0;
pub const EE_INTENSITY: f64 = 0.6;
pub const GOAL_INTENSITY: f64 = 0.3;
/// Largest value a single cell can hold (all three markers coincide).
pub const MAX_CELL_INTENSITY: f64 = TARGET_INTENSITY + EE_INTENSITY + GOAL_INTENSITY;
pub const ACTION_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Rotation by +90 degrees (counter-clockwise).
    pub fn rot_ccw(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rot_cw(self) -> Vec2 {
        Vec2::new(self.y, -self.x)
    }

    /// Rescales to `max_len` when longer. Idempotent: a rescaled vector may
    /// exceed `max_len` by rounding, so the check carries a 1e-12 relative
    /// tolerance.
    pub fn clip_norm(self, max_len: f64) -> Vec2 {
        let n = self.norm();
        if n > max_len * (1.0 + 1e-12) {
            self * (max_len / n)
        } else {
            self
        }
    }

    pub fn clamp(self, lo: Vec2, hi: Vec2) -> Vec2 {
        Vec2::new(self.x.clamp(lo.x, hi.x), self.y.clamp(lo.y, hi.y))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    /// Initial direction +x or +y.
    Easy,
    /// Initial direction -x or -y.
    Hard,
    /// Target never moves on its own.
    Static,
}

impl Difficulty {
    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
            Difficulty::Static => "static",
        }
    }

    /// Two-way one-hot task tag: `[dynamic, static]`.
    pub fn task_tag(self) -> [f64; 2] {
        match self {
            Difficulty::Static => [0.0, 1.0],
            _ => [1.0, 0.0],
        }
    }
}

impl std::str::FromStr for Difficulty {
    type Err = TidalError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "hard" => Ok(Difficulty::Hard),
            "static" => Ok(Difficulty::Static),
            other => Err(TidalError::Usage(format!("unknown tier '{other}'"))),
        }
    }
}

/// How markers are written into the observation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RasterMode {
    /// Whole marker intensity in the cell containing the point.
    Nearest,
    /// Intensity split over the four nearest cell centers, so sub-cell
    /// positions remain observable.
    Bilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Control period in seconds.
    pub dt: f64,
    pub target_speed_min: f64,
    pub target_speed_max: f64,
    pub turn_at_boundary: bool,
    /// A target closer than this to a wall while heading into it turns.
    pub boundary_margin: f64,
    pub robot_max_speed: f64,
    pub grasp_radius: f64,
    pub goal_center: Vec2,
    pub goal_radius: f64,
    pub max_steps: u32,
    pub difficulty: Difficulty,
    pub ee_start: Vec2,
    /// Targets spawn uniformly in `[spawn_min, spawn_max]^2`.
    pub spawn_min: f64,
    pub spawn_max: f64,
    pub grid_resolution: usize,
    pub raster: RasterMode,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            target_speed_min: 0.04,
            target_speed_max: 0.06,
            turn_at_boundary: true,
            boundary_margin: 0.002,
            robot_max_speed: 0.15,
            grasp_radius: 0.03,
            goal_center: Vec2::new(0.5, 0.9),
            goal_radius: 0.05,
            max_steps: 600,
            difficulty: Difficulty::Easy,
            ee_start: Vec2::new(0.5, 0.1),
            spawn_min: 0.2,
            spawn_max: 0.8,
            grid_resolution: 16,
            raster: RasterMode::Nearest,
        }
    }
}

impl EnvConfig {
    pub fn with_difficulty(mut self, difficulty: Difficulty) -> Self {
        self.difficulty = difficulty;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(config_err("dt must be positive"));
        }
        if !(0.0 < self.grasp_radius
            && self.grasp_radius < self.goal_radius
            && self.goal_radius < 0.5)
        {
            return Err(config_err(
                "radii must satisfy 0 < grasp_radius < goal_radius < 0.5",
            ));
        }
        if !(0.0 <= self.target_speed_min && self.target_speed_min <= self.target_speed_max) {
            return Err(config_err("target speed range is invalid"));
        }
        if !(self.robot_max_speed > self.target_speed_max) {
            return Err(config_err(
                "robot_max_speed must exceed the target speed range",
            ));
        }
        if self.grid_resolution < 2 {
            return Err(config_err("grid_resolution must be at least 2"));
        }
        if self.max_steps == 0 {
            return Err(config_err("max_steps must be positive"));
        }
        let in_unit = |p: Vec2| (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y);
        if !in_unit(self.ee_start) || !in_unit(self.goal_center) {
            return Err(config_err(
                "ee_start and goal_center must lie in the unit square",
            ));
        }
        if !(0.0 <= self.spawn_min && self.spawn_min <= self.spawn_max && self.spawn_max <= 1.0) {
            return Err(config_err("spawn region must lie in the unit square"));
        }
        Ok(())
    }

    /// Displacement bound per control step.
    pub fn max_step_len(&self) -> f64 {
        self.robot_max_speed * self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Approach,
    Carry,
    Done,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time_step: u32,
    pub ee_pos: Vec2,
    pub gripper_closed: bool,
    pub target_pos: Vec2,
    /// Free-flight velocity. Kept while held and resumed if dropped.
    pub target_vel: Vec2,
    pub held: bool,
    /// Target position relative to the end-effector, fixed at grasp time.
    pub grasp_offset: Vec2,
    pub phase: Phase,
}

impl WorldState {
    /// `[ee_x, ee_y, gripper_closed, held]`
    pub fn proprio(&self) -> [f64; 4] {
        [
            self.ee_pos.x,
            self.ee_pos.y,
            f64::from(u8::from(self.gripper_closed)),
            f64::from(u8::from(self.held)),
        ]
    }

    pub fn is_terminal(&self) -> bool {
        self.phase.is_terminal()
    }
}

/// Per-step command: displacement and gripper. `grip > 0` closes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub dx: f64,
    pub dy: f64,
    pub grip: f64,
}

impl Action {
    pub fn new(dx: f64, dy: f64, grip: f64) -> Self {
        Self { dx, dy, grip }
    }

    /// Displacement clipped to the robot speed bound and grip clamped to
    /// `[-1, 1]`. Non-finite components become zero.
    pub fn clipped(self, cfg: &EnvConfig) -> Action {
        let fin = |v: f64| if v.is_finite() { v } else { 0.0 };
        let d = Vec2::new(fin(self.dx), fin(self.dy)).clip_norm(cfg.max_step_len());
        Action::new(d.x, d.y, fin(self.grip).clamp(-1.0, 1.0))
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.dx, self.dy, self.grip]
    }
}

/// Single-channel observation grid, cell `(ix, iy)` at `iy * G + ix`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridObs {
    resolution: usize,
    cells: Vec<f64>,
}

impl GridObs {
    pub fn zeros(resolution: usize) -> Self {
        Self {
            resolution,
            cells: vec![0.0; resolution * resolution],
        }
    }

    pub fn from_cells(resolution: usize, cells: Vec<f64>) -> Result<Self> {
        if cells.len() != resolution * resolution {
            return Err(config_err(format!(
                "grid of resolution {resolution} needs {} cells, got {}",
                resolution * resolution,
                cells.len()
            )));
        }
        Ok(Self { resolution, cells })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.cells[iy * self.resolution + ix]
    }

    fn add(&mut self, ix: usize, iy: usize, v: f64) {
        self.cells[iy * self.resolution + ix] += v;
    }

    /// Indices of non-zero cells.
    pub fn marked_cells(&self) -> Vec<(usize, usize)> {
        let g = self.resolution;
        (0..g * g)
            .filter(|&i| self.cells[i] != 0.0)
            .map(|i| (i % g, i / g))
            .collect()
    }
}

/// Cell containing coordinate `v` in `[0, 1]`.
pub fn nearest_cell(v: f64, g: usize) -> usize {
    ((v * g as f64).floor().max(0.0) as usize).min(g - 1)
}

fn splat(grid: &mut GridObs, p: Vec2, intensity: f64, mode: RasterMode) {
    let g = grid.resolution;
    match mode {
        RasterMode::Nearest => grid.add(nearest_cell(p.x, g), nearest_cell(p.y, g), intensity),
        RasterMode::Bilinear => {
            // Cell centers sit at (i + 0.5) / G.
            let axis = |v: f64| {
                let u = (v * g as f64 - 0.5).clamp(0.0, (g - 1) as f64);
                let i0 = (u.floor() as usize).min(g - 2);
                let f = u - i0 as f64;
                (i0, f)
            };
            let (ix, fx) = axis(p.x);
            let (iy, fy) = axis(p.y);
            let w = [
                (ix, iy, (1.0 - fx) * (1.0 - fy)),
                (ix + 1, iy, fx * (1.0 - fy)),
                (ix, iy + 1, (1.0 - fx) * fy),
                (ix + 1, iy + 1, fx * fy),
            ];
            for (cx, cy, wt) in w {
                if wt != 0.0 {
                    grid.add(cx, cy, intensity * wt);
                }
            }
        }
    }
}

pub fn rasterize(state: &WorldState, cfg: &EnvConfig) -> GridObs {
    let mut grid = GridObs::zeros(cfg.grid_resolution);
    splat(&mut grid, state.target_pos, TARGET_INTENSITY, cfg.raster);
    splat(&mut grid, state.ee_pos, EE_INTENSITY, cfg.raster);
    splat(&mut grid, cfg.goal_center, GOAL_INTENSITY, cfg.raster);
    grid
}

pub fn contact_state(state: &WorldState) -> u8 {
    u8::from(state.held)
}

pub fn env_reset(cfg: &EnvConfig, rng: &mut SeededRng) -> Result<WorldState> {
    cfg.validate()?;
    let target_pos = Vec2::new(
        rng.uniform_range(cfg.spawn_min, cfg.spawn_max),
        rng.uniform_range(cfg.spawn_min, cfg.spawn_max),
    );
    let speed = rng.uniform_range(cfg.target_speed_min, cfg.target_speed_max);
    let along_x = rng.coin();
    let target_vel = match cfg.difficulty {
        Difficulty::Static => Vec2::ZERO,
        Difficulty::Easy if along_x => Vec2::new(speed, 0.0),
        Difficulty::Easy => Vec2::new(0.0, speed),
        Difficulty::Hard if along_x => Vec2::new(-speed, 0.0),
        Difficulty::Hard => Vec2::new(0.0, -speed),
    };
    Ok(WorldState {
        time_step: 0,
        ee_pos: cfg.ee_start,
        gripper_closed: false,
        target_pos,
        target_vel,
        held: false,
        grasp_offset: Vec2::ZERO,
        phase: Phase::Approach,
    })
}

const UNIT_LO: Vec2 = Vec2::ZERO;
const UNIT_HI: Vec2 = Vec2::new(1.0, 1.0);

/// Free flight of an unheld target for one step, including boundary turns.
fn advance_target(state: &mut WorldState, cfg: &EnvConfig, rng: &mut SeededRng) {
    let v = state.target_vel;
    if v == Vec2::ZERO {
        return;
    }
    let p = state.target_pos + v * cfg.dt;
    let m = cfg.boundary_margin;
    let hits_x = (p.x >= 1.0 - m && v.x > 0.0) || (p.x <= m && v.x < 0.0);
    let hits_y = (p.y >= 1.0 - m && v.y > 0.0) || (p.y <= m && v.y < 0.0);
    if hits_x || hits_y {
        state.target_vel = if cfg.turn_at_boundary {
            if rng.coin() {
                v.rot_ccw()
            } else {
                v.rot_cw()
            }
        } else {
            Vec2::new(
                if hits_x { -v.x } else { v.x },
                if hits_y { -v.y } else { v.y },
            )
        };
    }
    state.target_pos = p.clamp(UNIT_LO, UNIT_HI);
}

fn tick_clock(state: &mut WorldState, cfg: &EnvConfig) {
    state.time_step += 1;
    if !state.phase.is_terminal() && state.time_step >= cfg.max_steps {
        state.phase = Phase::Failed;
    }
}

/// Advances the world by one control step under `action`.
pub fn env_step(
    state: &WorldState,
    action: Action,
    cfg: &EnvConfig,
    rng: &mut SeededRng,
) -> Result<WorldState> {
    if state.is_terminal() {
        return Err(TidalError::Protocol(format!(
            "cannot step a terminal state (phase {:?})",
            state.phase
        )));
    }
    let a = action.clipped(cfg);
    let mut next = state.clone();

    // End-effector motion; while held the attached target must stay inside too.
    let (lo, hi) = if next.held {
        let o = next.grasp_offset;
        (
            Vec2::new((-o.x).max(0.0), (-o.y).max(0.0)),
            Vec2::new((1.0 - o.x).min(1.0), (1.0 - o.y).min(1.0)),
        )
    } else {
        (UNIT_LO, UNIT_HI)
    };
    next.ee_pos = (next.ee_pos + Vec2::new(a.dx, a.dy)).clamp(lo, hi);

    if next.held {
        next.target_pos = next.ee_pos + next.grasp_offset;
    } else {
        advance_target(&mut next, cfg, rng);
    }

    next.gripper_closed = a.grip > 0.0;
    if next.held && !next.gripper_closed {
        next.held = false;
        next.grasp_offset = Vec2::ZERO;
        if next.target_pos.dist(cfg.goal_center) <= cfg.goal_radius {
            next.phase = Phase::Done;
        } else {
            next.phase = Phase::Approach;
        }
    } else if !next.held
        && next.gripper_closed
        && next.ee_pos.dist(next.target_pos) <= cfg.grasp_radius
    {
        next.held = true;
        next.grasp_offset = next.target_pos - next.ee_pos;
        next.phase = Phase::Carry;
    }

    tick_clock(&mut next, cfg);
    Ok(next)
}

/// Lets the world run for `n` steps while the robot holds position and
/// gripper state. Stops early at a terminal state.
pub fn env_advance_free(
    state: &WorldState,
    cfg: &EnvConfig,
    rng: &mut SeededRng,
    n: u32,
) -> WorldState {
    let mut next = state.clone();
    for _ in 0..n {
        if next.is_terminal() {
            break;
        }
        if !next.held {
            advance_target(&mut next, cfg, rng);
        }
        tick_clock(&mut next, cfg);
    }
    next
}

/// One line of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub time_step: u32,
    pub ee_pos: Vec2,
    pub gripper_closed: bool,
    pub target_pos: Vec2,
    pub target_vel: Vec2,
    pub held: bool,
    pub phase: Phase,
    pub action: Action,
    pub contact: u8,
}

impl StepRecord {
    /// Record of `state` together with the action taken from it.
    pub fn new(state: &WorldState, action: Action) -> Self {
        Self {
            time_step: state.time_step,
            ee_pos: state.ee_pos,
            gripper_closed: state.gripper_closed,
            target_pos: state.target_pos,
            target_vel: state.target_vel,
            held: state.held,
            phase: state.phase,
            action,
            contact: contact_state(state),
        }
    }

    /// World state the record was taken from. The grasp offset is rebuilt
    /// from the positions.
    pub fn state(&self) -> WorldState {
        WorldState {
            time_step: self.time_step,
            ee_pos: self.ee_pos,
            gripper_closed: self.gripper_closed,
            target_pos: self.target_pos,
            target_vel: self.target_vel,
            held: self.held,
            grasp_offset: if self.held {
                self.target_pos - self.ee_pos
            } else {
                Vec2::ZERO
            },
            phase: self.phase,
        }
    }

    pub fn proprio(&self) -> [f64; 4] {
        [
            self.ee_pos.x,
            self.ee_pos.y,
            f64::from(u8::from(self.gripper_closed)),
            f64::from(u8::from(self.held)),
        ]
    }
}

/// Writes one JSON object per line.
pub fn write_records<W: Write>(mut out: W, records: &[StepRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<StepRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_with_target(p: Vec2, v: Vec2) -> WorldState {
        WorldState {
            time_step: 0,
            ee_pos: Vec2::new(0.5, 0.1),
            gripper_closed: false,
            target_pos: p,
            target_vel: v,
            held: false,
            grasp_offset: Vec2::ZERO,
            phase: Phase::Approach,
        }
    }

    #[test]
    fn static_tier_has_zero_velocity() {
        let cfg = EnvConfig::default().with_difficulty(Difficulty::Static);
        let s = env_reset(&cfg, &mut SeededRng::new(3)).unwrap();
        assert_eq!(s.target_vel, Vec2::ZERO);
        assert_eq!(s.ee_pos, Vec2::new(0.5, 0.1));
        assert_eq!(contact_state(&s), 0);
    }

    #[test]
    fn easy_and_hard_tiers_use_their_directions() {
        for seed in 0..200 {
            let cfg = EnvConfig::default();
            let s = env_reset(&cfg, &mut SeededRng::new(seed)).unwrap();
            let v = s.target_vel;
            let speed = v.norm();
            assert!((0.04..=0.06).contains(&speed));
            assert!((v.x > 0.0 && v.y == 0.0) || (v.x == 0.0 && v.y > 0.0));
            assert!((0.2..=0.8).contains(&s.target_pos.x));
            assert!((0.2..=0.8).contains(&s.target_pos.y));

            let cfg = cfg.with_difficulty(Difficulty::Hard);
            let v = env_reset(&cfg, &mut SeededRng::new(seed))
                .unwrap()
                .target_vel;
            assert!((v.x < 0.0 && v.y == 0.0) || (v.x == 0.0 && v.y < 0.0));
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let cfg = EnvConfig::default();
        let a = env_reset(&cfg, &mut SeededRng::new(77)).unwrap();
        let b = env_reset(&cfg, &mut SeededRng::new(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn boundary_contact_turns_ninety_degrees() {
        let cfg = EnvConfig::default();
        for (seed, v) in [(0u64, 0.04), (1, 0.05), (2, 0.06), (3, 0.05)] {
            let s = state_with_target(Vec2::new(0.999, 0.5), Vec2::new(v, 0.0));
            let n = env_step(
                &s,
                Action::new(0.0, 0.0, -1.0),
                &cfg,
                &mut SeededRng::new(seed),
            )
            .unwrap();
            assert!(
                n.target_vel == Vec2::new(0.0, v) || n.target_vel == Vec2::new(0.0, -v),
                "{:?}",
                n.target_vel
            );
            assert!(n.target_pos.x <= 1.0);
        }
    }

    #[test]
    fn idle_action_in_static_world_only_ticks_clock() {
        let cfg = EnvConfig::default().with_difficulty(Difficulty::Static);
        let s = env_reset(&cfg, &mut SeededRng::new(5)).unwrap();
        let n = env_step(
            &s,
            Action::new(0.0, 0.0, -1.0),
            &cfg,
            &mut SeededRng::new(6),
        )
        .unwrap();
        let mut expected = s.clone();
        expected.time_step = 1;
        assert_eq!(n, expected);
    }

    #[test]
    fn oversized_command_is_clipped() {
        let cfg = EnvConfig::default().with_difficulty(Difficulty::Static);
        let s = env_reset(&cfg, &mut SeededRng::new(5)).unwrap();
        let n = env_step(
            &s,
            Action::new(10.0, 0.0, -1.0),
            &cfg,
            &mut SeededRng::new(6),
        )
        .unwrap();
        let moved = n.ee_pos.dist(s.ee_pos);
        assert!((moved - 0.003).abs() < 1e-15, "moved {moved}");
    }

    #[test]
    fn terminal_states_cannot_step() {
        let cfg = EnvConfig::default();
        let mut s = env_reset(&cfg, &mut SeededRng::new(1)).unwrap();
        s.phase = Phase::Done;
        assert!(matches!(
            env_step(&s, Action::default(), &cfg, &mut SeededRng::new(0)),
            Err(TidalError::Protocol(_))
        ));
    }

    #[test]
    fn free_advance_moves_only_the_target() {
        let cfg = EnvConfig::default();
        let s = state_with_target(Vec2::new(0.3, 0.5), Vec2::new(0.05, 0.0));
        assert_eq!(env_advance_free(&s, &cfg, &mut SeededRng::new(0), 0), s);
        let n = env_advance_free(&s, &cfg, &mut SeededRng::new(0), 5);
        assert!((n.target_pos.x - 0.305).abs() < 1e-12);
        assert_eq!(n.target_pos.y, 0.5);
        assert_eq!(n.ee_pos, s.ee_pos);
        assert_eq!(n.time_step, 5);
    }

    #[test]
    fn max_steps_fails_the_episode() {
        let cfg = EnvConfig {
            max_steps: 3,
            ..EnvConfig::default()
        };
        let s = env_reset(&cfg, &mut SeededRng::new(1)).unwrap();
        let n = env_advance_free(&s, &cfg, &mut SeededRng::new(0), 10);
        assert_eq!(n.phase, Phase::Failed);
        assert_eq!(n.time_step, 3);
    }

    #[test]
    fn grasp_carry_release_in_goal_succeeds() {
        let cfg = EnvConfig::default().with_difficulty(Difficulty::Static);
        let mut s = state_with_target(Vec2::new(0.51, 0.1), Vec2::ZERO);
        let mut rng = SeededRng::new(0);
        s = env_step(&s, Action::new(0.0, 0.0, 1.0), &cfg, &mut rng).unwrap();
        assert!(s.held);
        assert_eq!(s.phase, Phase::Carry);
        assert_eq!(contact_state(&s), 1);
        let offset = s.grasp_offset;
        while s.target_pos.dist(cfg.goal_center) > 0.02 {
            let d = cfg.goal_center - s.target_pos;
            s = env_step(&s, Action::new(d.x, d.y, 1.0), &cfg, &mut rng).unwrap();
            assert!((s.target_pos - s.ee_pos - offset).norm() < 1e-12);
        }
        s = env_step(&s, Action::new(0.0, 0.0, -1.0), &cfg, &mut rng).unwrap();
        assert_eq!(s.phase, Phase::Done);
        assert!(!s.held);
    }

    #[test]
    fn release_outside_goal_drops_target() {
        let cfg = EnvConfig::default();
        let mut s = state_with_target(Vec2::new(0.51, 0.1), Vec2::new(0.05, 0.0));
        let mut rng = SeededRng::new(0);
        s = env_step(&s, Action::new(0.0, 0.0, 1.0), &cfg, &mut rng).unwrap();
        assert!(s.held);
        s = env_step(&s, Action::new(0.0, 0.0, -1.0), &cfg, &mut rng).unwrap();
        assert!(!s.held);
        assert_eq!(s.phase, Phase::Approach);
        assert_eq!(s.target_vel, Vec2::new(0.05, 0.0));
    }

    #[test]
    fn rasterize_nearest_examples() {
        let cfg = EnvConfig::default();
        let mut s = state_with_target(Vec2::new(0.0, 0.0), Vec2::ZERO);
        let g = rasterize(&s, &cfg);
        assert!(g.at(0, 0) >= TARGET_INTENSITY);
        assert_eq!(g.marked_cells().len(), 3);

        s.target_pos = Vec2::new(0.5, 0.5);
        let g = rasterize(&s, &cfg);
        assert_eq!(g.at(8, 8), 1.0);

        s.ee_pos = Vec2::new(0.51, 0.52);
        let g = rasterize(&s, &cfg);
        assert!((g.at(8, 8) - 1.6).abs() < 1e-15);
        assert_eq!(g.marked_cells().len(), 2);
        assert_eq!(rasterize(&s, &cfg), g);
    }

    #[test]
    fn bilinear_preserves_mass_and_bounds() {
        let cfg = EnvConfig {
            raster: RasterMode::Bilinear,
            ..EnvConfig::default()
        };
        let s = state_with_target(Vec2::new(0.4321, 0.777), Vec2::ZERO);
        let g = rasterize(&s, &cfg);
        let total: f64 = g.cells().iter().sum();
        assert!((total - MAX_CELL_INTENSITY).abs() < 1e-12);
        assert!(g
            .cells()
            .iter()
            .all(|&v| (0.0..=MAX_CELL_INTENSITY).contains(&v)));
        let corner = state_with_target(Vec2::new(1.0, 1.0), Vec2::ZERO);
        let g = rasterize(&corner, &cfg);
        assert!((g.at(15, 15) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_records_round_trip() {
        let cfg = EnvConfig::default();
        let mut rng = SeededRng::new(9);
        let mut s = env_reset(&cfg, &mut rng).unwrap();
        let mut recs = Vec::new();
        for i in 0..5 {
            let a = Action::new(0.001 * i as f64, -0.002, 0.3 - 0.1 * i as f64);
            recs.push(StepRecord::new(&s, a));
            s = env_step(&s, a, &cfg, &mut rng).unwrap();
        }
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 5);
        let back = read_records(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
    }
}
