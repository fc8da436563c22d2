//! Noise-prediction training on expert pairs.

use super::model::{diff_loss, NoiseModel, NoisePredictor};
use super::schedule::{DiffusionSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};
use crate::error::{Error, Result};
use crate::harness::DemoDataset;
use crate::numcore::{Activation, AdamState, Matrix, Rng};
use crate::training::{epoch_batches, EpochMeter, TrainLog};

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionTrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Std (in raw action units) of Gaussian noise added once to the expert
    /// actions before training. Zero disables injection.
    pub noise_level: f64,
}

impl Default for DiffusionTrainConfig {
    /// Maze-scale settings: 5 linear layers of width 128.
    fn default() -> Self {
        Self {
            hidden: vec![128; 4],
            activation: Activation::Relu,
            lr: 1e-4,
            batch_size: 128,
            epochs: 8000,
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            noise_level: 0.0,
        }
    }
}

impl DiffusionTrainConfig {
    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(self.steps, self.beta_start, self.beta_end)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("diffusion lr, batch size and epochs must be positive"));
        }
        if self.noise_level < 0.0 {
            return Err(Error::config("noise level must be non-negative"));
        }
        Ok(())
    }
}

/// Trains a noise model on the rows of `data`, whose first `state_dim`
/// columns are the state and the rest the action.
pub fn train_diffusion_on(
    data: &Matrix,
    state_dim: usize,
    cfg: &DiffusionTrainConfig,
    rng: &Rng,
) -> Result<(NoiseModel, TrainLog)> {
    cfg.validate()?;
    if data.rows() == 0 {
        return Err(Error::config("cannot train a diffusion model on an empty dataset"));
    }
    if state_dim > data.cols() {
        return Err(Error::shape("state dim exceeds data width"));
    }
    let schedule = cfg.schedule()?;
    let mut init_rng = rng.fork(1);
    let mut order_rng = rng.fork(2);
    let mut noise_rng = rng.fork(3);

    let mut phi = NoiseModel::new(
        state_dim,
        data.cols() - state_dim,
        &cfg.hidden,
        cfg.activation,
        schedule,
        &mut init_rng,
    )?;
    let mut adam = AdamState::for_model(phi.net(), cfg.lr);
    let mut grads = vec![0.0; phi.net().num_params()];
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let mut meter = EpochMeter::default();
        for batch in epoch_batches(data.rows(), cfg.batch_size, &mut order_rng) {
            let x0 = data.select_rows(&batch);
            let levels = phi.schedule().sample_levels(batch.len(), &mut noise_rng);
            let eps = noise_rng.gaussian_matrix(batch.len(), data.cols());
            let out = diff_loss(&phi, &x0, &levels, &eps)?;
            meter.record("diffusion", epoch, out.loss)?;
            out.backward_mean(&phi, Some(&mut grads))?;
            adam.step_slices(phi.net_mut()?.params_mut(), &mut grads)?;
        }
        meter.finish(&mut log);
    }
    Ok((phi, log))
}

/// Trains on the normalized `(s ⧺ a)` pairs of `dataset`, optionally with
/// Gaussian noise injected into the expert actions first.
pub fn train_diffusion(dataset: &DemoDataset, cfg: &DiffusionTrainConfig, rng: &Rng) -> Result<(NoiseModel, TrainLog)> {
    if dataset.is_empty() {
        return Err(Error::config("cannot train a diffusion model on an empty dataset"));
    }
    let mut data = dataset.normalized_joint();
    if cfg.noise_level > 0.0 {
        let sd = dataset.state_dim();
        let stds = &dataset.norm_stats().action.std;
        let mut inject_rng = rng.fork(4);
        for r in 0..data.rows() {
            for (j, std) in stds.iter().enumerate() {
                let v = data.get(r, sd + j) + cfg.noise_level / std * inject_rng.gaussian();
                data.set(r, sd + j, v);
            }
        }
    }
    let (mut phi, log) = train_diffusion_on(&data, dataset.state_dim(), cfg, rng)?;
    phi.train_noise_level = cfg.noise_level;
    Ok((phi, log))
}
