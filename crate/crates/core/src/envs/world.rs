//! Point-mass dynamics, the open maze with goal bands, and the spiral world.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numcore::Rng;

pub const STATE_DIM: usize = 6;
pub const ACTION_DIM: usize = 2;

/// Goal-sampling regions: seen in demos (`Train`) or held out (`Eval`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GoalBand {
    Train,
    Eval,
}

impl GoalBand {
    pub fn tag(self) -> &'static str {
        match self {
            GoalBand::Train => "train",
            GoalBand::Eval => "eval",
        }
    }
}

impl fmt::Display for GoalBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for GoalBand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(GoalBand::Train),
            "eval" => Ok(GoalBand::Eval),
            other => Err(Error::config(format!("unknown goal band `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub goal: [f64; 2],
    pub step_index: usize,
}

impl EnvState {
    /// `(position, velocity, goal)`.
    pub fn observation(&self) -> [f64; STATE_DIM] {
        let [px, py] = self.position;
        let [vx, vy] = self.velocity;
        let [gx, gy] = self.goal;
        [px, py, vx, vy, gx, gy]
    }

    pub fn from_observation(obs: &[f64], step_index: usize) -> Result<Self> {
        let &[px, py, vx, vy, gx, gy] = obs else {
            return Err(Error::shape(format!(
                "observation has {} dims, expected {STATE_DIM}",
                obs.len()
            )));
        };
        Ok(Self {
            position: [px, py],
            velocity: [vx, vy],
            goal: [gx, gy],
            step_index,
        })
    }

    pub fn goal_distance(&self) -> f64 {
        distance(self.position, self.goal)
    }
}

pub(crate) fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Outcome of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: EnvState,
    pub done: bool,
    pub success: bool,
}

/// Double-integrator constants shared by both worlds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dynamics {
    pub dt: f64,
    pub max_speed: f64,
    pub max_accel: f64,
    pub damping: f64,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_speed: 2.0,
            max_accel: 1.0,
            damping: 0.95,
        }
    }
}

impl Dynamics {
    pub fn clamp_action(&self, action: &[f64]) -> [f64; 2] {
        let c = |v: f64| v.clamp(-self.max_accel, self.max_accel);
        [c(action[0]), c(action[1])]
    }

    /// New velocity and unclipped new position.
    fn integrate(&self, p: [f64; 2], v: [f64; 2], a: [f64; 2]) -> ([f64; 2], [f64; 2]) {
        let mut v = [
            self.damping * (v[0] + self.dt * a[0]),
            self.damping * (v[1] + self.dt * a[1]),
        ];
        let speed = v[0].hypot(v[1]);
        if speed > self.max_speed {
            let s = self.max_speed / speed;
            v = [v[0] * s, v[1] * s];
        }
        ([p[0] + self.dt * v[0], p[1] + self.dt * v[1]], v)
    }
}

/// Environment interface consumed by rollouts.
pub trait Env {
    fn name(&self) -> &'static str;
    fn dynamics(&self) -> &Dynamics;
    fn max_steps(&self) -> usize;
    fn reset(&self, rng: &mut Rng, band: GoalBand) -> EnvState;
    fn step(&self, state: &EnvState, action: &[f64]) -> Result<Step>;
    /// Whether demo collection discards failed episodes.
    fn keep_only_successes(&self) -> bool;
}

fn check_action(action: &[f64]) -> Result<()> {
    if action.len() != ACTION_DIM {
        return Err(Error::shape(format!(
            "action has {} dims, expected {ACTION_DIM}",
            action.len()
        )));
    }
    Ok(())
}

pub const MAZE_START: [f64; 2] = [5.0, 3.0];
pub const TRAIN_GOAL_CENTERS: [[f64; 2]; 2] = [[1.0, 2.0], [1.0, 4.0]];
pub const EVAL_GOAL_CENTERS: [[f64; 2]; 3] = [[1.0, 1.0], [1.0, 3.0], [1.0, 5.0]];

/// Open 5×5 point-mass maze.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMassWorld {
    pub bounds: [[f64; 2]; 2],
    pub dynamics: Dynamics,
    pub goal_radius: f64,
    pub goal_band_radius: f64,
    pub max_steps: usize,
}

impl Default for PointMassWorld {
    fn default() -> Self {
        Self {
            bounds: [[0.0, 5.0], [0.0, 5.0]],
            dynamics: Dynamics::default(),
            goal_radius: 0.15,
            goal_band_radius: 0.25,
            max_steps: 400,
        }
    }
}

impl PointMassWorld {
    pub fn band_centers(band: GoalBand) -> &'static [[f64; 2]] {
        match band {
            GoalBand::Train => &TRAIN_GOAL_CENTERS,
            GoalBand::Eval => &EVAL_GOAL_CENTERS,
        }
    }

    /// Uniform point in the disk of radius `goal_band_radius` around a
    /// uniformly chosen band center.
    pub fn sample_goal(&self, rng: &mut Rng, band: GoalBand) -> [f64; 2] {
        let centers = Self::band_centers(band);
        let c = centers[rng.below(centers.len())];
        let r = self.goal_band_radius * rng.next_f64().sqrt();
        let theta = std::f64::consts::TAU * rng.next_f64();
        [c[0] + r * theta.cos(), c[1] + r * theta.sin()]
    }
}

impl Env for PointMassWorld {
    fn name(&self) -> &'static str {
        "maze"
    }

    fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn reset(&self, rng: &mut Rng, band: GoalBand) -> EnvState {
        EnvState {
            position: MAZE_START,
            velocity: [0.0, 0.0],
            goal: self.sample_goal(rng, band),
            step_index: 0,
        }
    }

    fn step(&self, state: &EnvState, action: &[f64]) -> Result<Step> {
        check_action(action)?;
        let a = self.dynamics.clamp_action(action);
        let (p, v) = self.dynamics.integrate(state.position, state.velocity, a);
        let position = [
            p[0].clamp(self.bounds[0][0], self.bounds[0][1]),
            p[1].clamp(self.bounds[1][0], self.bounds[1][1]),
        ];
        let next = EnvState {
            position,
            velocity: v,
            goal: state.goal,
            step_index: state.step_index + 1,
        };
        let success = next.goal_distance() <= self.goal_radius;
        Ok(Step {
            state: next,
            done: success || next.step_index >= self.max_steps,
            success,
        })
    }

    fn keep_only_successes(&self) -> bool {
        true
    }
}

pub const SPIRAL_SEGMENT_LENGTH: usize = 40;
pub const SPIRAL_SCHEDULE: [[f64; 2]; 4] = [[0.5, 0.0], [0.0, 0.5], [-0.7, 0.0], [0.0, -0.7]];
pub const SPIRAL_STEPS: usize = SPIRAL_SEGMENT_LENGTH * SPIRAL_SCHEDULE.len();

/// Scripted spiral action for `step_index`.
pub fn scripted_spiral_expert(step_index: usize) -> Result<[f64; 2]> {
    SPIRAL_SCHEDULE
        .get(step_index / SPIRAL_SEGMENT_LENGTH)
        .copied()
        .ok_or_else(|| Error::Range(format!("spiral script ends at step {SPIRAL_STEPS}, got {step_index}")))
}

/// Unbounded plane; episodes start at the origin and succeed when they end
/// within `success_radius` of where the scripted expert ends.
#[derive(Debug, Clone, PartialEq)]
pub struct SpiralWorld {
    pub dynamics: Dynamics,
    pub success_radius: f64,
    expert_end: [f64; 2],
}

impl Default for SpiralWorld {
    fn default() -> Self {
        Self::new(Dynamics::default(), 0.1)
    }
}

impl SpiralWorld {
    pub fn new(dynamics: Dynamics, success_radius: f64) -> Self {
        let mut world = Self {
            dynamics,
            success_radius,
            expert_end: [0.0, 0.0],
        };
        let mut p = [0.0, 0.0];
        let mut v = [0.0, 0.0];
        for t in 0..SPIRAL_STEPS {
            let a = scripted_spiral_expert(t).expect("t within script");
            (p, v) = world.dynamics.integrate(p, v, world.dynamics.clamp_action(&a));
        }
        world.expert_end = p;
        world
    }

    pub fn expert_end(&self) -> [f64; 2] {
        self.expert_end
    }
}

impl Env for SpiralWorld {
    fn name(&self) -> &'static str {
        "spiral"
    }

    fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    fn max_steps(&self) -> usize {
        SPIRAL_STEPS
    }

    fn reset(&self, _rng: &mut Rng, _band: GoalBand) -> EnvState {
        EnvState {
            position: [0.0, 0.0],
            velocity: [0.0, 0.0],
            goal: self.expert_end,
            step_index: 0,
        }
    }

    fn step(&self, state: &EnvState, action: &[f64]) -> Result<Step> {
        check_action(action)?;
        let a = self.dynamics.clamp_action(action);
        let (position, velocity) = self.dynamics.integrate(state.position, state.velocity, a);
        let next = EnvState {
            position,
            velocity,
            goal: state.goal,
            step_index: state.step_index + 1,
        };
        let done = next.step_index >= SPIRAL_STEPS;
        Ok(Step {
            state: next,
            done,
            success: done && next.goal_distance() <= self.success_radius,
        })
    }

    fn keep_only_successes(&self) -> bool {
        false
    }
}

/// Either world, selected by name in configs.
#[derive(Debug, Clone, PartialEq)]
pub enum World {
    Maze(PointMassWorld),
    Spiral(SpiralWorld),
}

impl World {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "maze" => Ok(World::Maze(PointMassWorld::default())),
            "spiral" => Ok(World::Spiral(SpiralWorld::default())),
            other => Err(Error::config(format!("unknown env `{other}`"))),
        }
    }

    fn inner(&self) -> &dyn Env {
        match self {
            World::Maze(w) => w,
            World::Spiral(w) => w,
        }
    }
}

impl Env for World {
    fn name(&self) -> &'static str {
        self.inner().name()
    }

    fn dynamics(&self) -> &Dynamics {
        self.inner().dynamics()
    }

    fn max_steps(&self) -> usize {
        self.inner().max_steps()
    }

    fn reset(&self, rng: &mut Rng, band: GoalBand) -> EnvState {
        self.inner().reset(rng, band)
    }

    fn step(&self, state: &EnvState, action: &[f64]) -> Result<Step> {
        self.inner().step(state, action)
    }

    fn keep_only_successes(&self) -> bool {
        self.inner().keep_only_successes()
    }
}
