//! Actors, scripted experts, demo collection and evaluation rollouts.

use crate::error::{Error, Result};
use crate::harness::{DemoDataset, DemoPair};
use crate::numcore::{Matrix, Rng, Stream};

use super::world::{scripted_spiral_expert, Env, EnvState, GoalBand, ACTION_DIM, STATE_DIM};

/// Anything that maps environment states to actions.
///
/// Rollouts call `act_batch` with the live episodes in lock-step; `rngs`
/// holds one stream per state.
pub trait Actor {
    fn act_batch(&self, states: &[EnvState], rngs: &mut [Rng]) -> Result<Matrix>;

    fn act(&self, state: &EnvState, rng: &mut Rng) -> Result<Vec<f64>> {
        let out = self.act_batch(std::slice::from_ref(state), std::slice::from_mut(rng))?;
        Ok(out.row(0).to_vec())
    }
}

/// Stacks observations into a `(batch, 6)` matrix.
pub fn observations(states: &[EnvState]) -> Matrix {
    let data = states.iter().flat_map(|s| s.observation()).collect();
    Matrix::from_vec(states.len(), STATE_DIM, data).expect("fixed width")
}

pub const PD_KP: f64 = 2.0;
pub const PD_KD: f64 = 1.5;

/// PD controller toward the goal, clamped to `max_accel`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MazeExpert {
    pub kp: f64,
    pub kd: f64,
    pub max_accel: f64,
}

impl Default for MazeExpert {
    fn default() -> Self {
        Self {
            kp: PD_KP,
            kd: PD_KD,
            max_accel: 1.0,
        }
    }
}

impl MazeExpert {
    pub fn action(&self, state: &EnvState) -> [f64; 2] {
        let c = |i: usize| {
            let a = self.kp * (state.goal[i] - state.position[i]) - self.kd * state.velocity[i];
            a.clamp(-self.max_accel, self.max_accel)
        };
        [c(0), c(1)]
    }
}

pub fn scripted_maze_expert(state: &EnvState) -> [f64; 2] {
    MazeExpert::default().action(state)
}

impl Actor for MazeExpert {
    fn act_batch(&self, states: &[EnvState], _rngs: &mut [Rng]) -> Result<Matrix> {
        let data = states.iter().flat_map(|s| self.action(s)).collect();
        Matrix::from_vec(states.len(), ACTION_DIM, data)
    }
}

/// Open-loop spiral script indexed by the episode step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpiralExpert;

impl Actor for SpiralExpert {
    fn act_batch(&self, states: &[EnvState], _rngs: &mut [Rng]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(states.len() * ACTION_DIM);
        for s in states {
            data.extend(scripted_spiral_expert(s.step_index)?);
        }
        Matrix::from_vec(states.len(), ACTION_DIM, data)
    }
}

/// Always outputs zero acceleration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ZeroActor;

impl Actor for ZeroActor {
    fn act_batch(&self, states: &[EnvState], _rngs: &mut [Rng]) -> Result<Matrix> {
        Ok(Matrix::zeros(states.len(), ACTION_DIM))
    }
}

/// One finished episode with its visited states and executed actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<EnvState>,
    pub actions: Vec<[f64; 2]>,
    pub final_state: EnvState,
    pub success: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Runs one episode per rng in lock-step, batching the actor calls.
pub fn rollout<E: Env + ?Sized, A: Actor + ?Sized>(
    env: &E,
    actor: &A,
    band: GoalBand,
    mut rngs: Vec<Rng>,
) -> Result<Vec<Trajectory>> {
    let mut trajs: Vec<Trajectory> = rngs
        .iter_mut()
        .map(|rng| {
            let s = env.reset(rng, band);
            Trajectory {
                states: Vec::new(),
                actions: Vec::new(),
                final_state: s,
                success: false,
            }
        })
        .collect();
    let mut live: Vec<usize> = (0..trajs.len()).collect();
    let mut live_rngs = rngs;
    while !live.is_empty() {
        let states: Vec<EnvState> = live.iter().map(|&i| trajs[i].final_state).collect();
        let actions = actor.act_batch(&states, &mut live_rngs)?;
        actions.ensure_shape(live.len(), ACTION_DIM, "actor output")?;
        let mut still_live = Vec::with_capacity(live.len());
        let mut still_rngs = Vec::with_capacity(live.len());
        for (k, (i, rng)) in live.iter().zip(live_rngs).enumerate() {
            let traj = &mut trajs[*i];
            let a = env.dynamics().clamp_action(actions.row(k));
            let step = env.step(&states[k], &a)?;
            traj.states.push(states[k]);
            traj.actions.push(a);
            traj.final_state = step.state;
            traj.success = step.success;
            if !step.done {
                still_live.push(*i);
                still_rngs.push(rng);
            }
        }
        live = still_live;
        live_rngs = still_rngs;
    }
    Ok(trajs)
}

/// Replays every stored transition through `step` and checks the next
/// stored state is reproduced exactly.
pub fn replay_check<E: Env + ?Sized>(env: &E, traj: &Trajectory) -> Result<()> {
    for (t, (s, a)) in traj.states.iter().zip(&traj.actions).enumerate() {
        let next = env.step(s, a)?.state;
        let stored = traj.states.get(t + 1).unwrap_or(&traj.final_state);
        if next != *stored {
            return Err(Error::State(format!("replay diverged at step {t}")));
        }
    }
    Ok(())
}

/// Expert success fraction below which maze demo collection is refused.
pub const MIN_EXPERT_SUCCESS: f64 = 0.5;

/// Rolls out `expert` for `episodes` episodes and stores every pair.
///
/// Worlds that filter demos keep only successful episodes, whose trajectory
/// ids are the original episode indices.
pub fn collect_demos<E: Env + ?Sized, A: Actor + ?Sized>(
    env: &E,
    expert: &A,
    episodes: usize,
    band: GoalBand,
    rng: &Rng,
) -> Result<DemoDataset> {
    if episodes == 0 {
        return Err(Error::config("demo collection needs at least one episode"));
    }
    let rngs = (0..episodes).map(|ep| rng.fork(ep as u64)).collect();
    let trajs = rollout(env, expert, band, rngs)?;
    let successes = trajs.iter().filter(|t| t.success).count();
    if env.keep_only_successes() && (successes as f64) < MIN_EXPERT_SUCCESS * episodes as f64 {
        return Err(Error::DataQuality(format!(
            "expert succeeded in only {successes} of {episodes} episodes"
        )));
    }
    let mut pairs = Vec::new();
    for (ep, traj) in trajs.iter().enumerate() {
        if env.keep_only_successes() && !traj.success {
            continue;
        }
        replay_check(env, traj)?;
        for (t, (s, a)) in traj.states.iter().zip(&traj.actions).enumerate() {
            pairs.push(DemoPair {
                traj_id: ep,
                t,
                state: s.observation().to_vec(),
                action: a.to_vec(),
            });
        }
    }
    DemoDataset::new(STATE_DIM, ACTION_DIM, pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub success: bool,
    pub length: usize,
    pub final_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub env: String,
    pub band: GoalBand,
    pub base_seed: u64,
    pub config_digest: String,
    pub records: Vec<EpisodeRecord>,
    pub success_rate: f64,
    pub mean_episode_length: f64,
}

impl EvalReport {
    pub fn episodes(&self) -> usize {
        self.records.len()
    }

    pub fn successes(&self) -> usize {
        self.records.iter().filter(|r| r.success).count()
    }
}

/// Per-episode stream for evaluation episode `episode` under `base_seed`.
pub fn episode_rng(base_seed: u64, episode: usize) -> Rng {
    Rng::named(base_seed, Stream::Eval).fork(episode as u64)
}

/// Evaluates `actor` over `episodes` independently seeded episodes.
pub fn evaluate<E: Env + ?Sized, A: Actor + ?Sized>(
    actor: &A,
    env: &E,
    episodes: usize,
    base_seed: u64,
    band: GoalBand,
    method: &str,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::config("evaluation needs at least one episode"));
    }
    let rngs = (0..episodes).map(|ep| episode_rng(base_seed, ep)).collect();
    let trajs = rollout(env, actor, band, rngs)?;
    let records: Vec<EpisodeRecord> = trajs
        .iter()
        .enumerate()
        .map(|(episode, t)| EpisodeRecord {
            episode,
            success: t.success,
            length: t.len(),
            final_distance: t.final_state.goal_distance(),
        })
        .collect();
    let successes = records.iter().filter(|r| r.success).count();
    let total_len: usize = records.iter().map(|r| r.length).sum();
    Ok(EvalReport {
        method: method.to_string(),
        env: env.name().to_string(),
        band,
        base_seed,
        config_digest: String::new(),
        success_rate: successes as f64 / episodes as f64,
        mean_episode_length: total_len as f64 / episodes as f64,
        records,
    })
}
