//! Desk-scale worlds, scripted experts, demo collection and policy evaluation.

mod rollout;
mod world;

pub use rollout::{
    collect_demos, episode_rng, evaluate, observations, replay_check, rollout, scripted_maze_expert, Actor,
    EpisodeRecord, EvalReport, MazeExpert, SpiralExpert, Trajectory, ZeroActor, MIN_EXPERT_SUCCESS, PD_KD, PD_KP,
};
pub use world::{
    scripted_spiral_expert, Dynamics, Env, EnvState, GoalBand, PointMassWorld, SpiralWorld, Step, World, ACTION_DIM,
    EVAL_GOAL_CENTERS, MAZE_START, SPIRAL_SCHEDULE, SPIRAL_SEGMENT_LENGTH, SPIRAL_STEPS, STATE_DIM, TRAIN_GOAL_CENTERS,
};
