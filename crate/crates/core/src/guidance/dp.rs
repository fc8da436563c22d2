//! Diffusion policy: a state-conditioned denoiser over actions, sampled by the reverse chain.

use crate::diffusion::{
    forward_noise, reverse_chain_rows, DiffusionSchedule, NoiseLevel, NoisePredictor, DEFAULT_BETA_END,
    DEFAULT_BETA_START, EMBED_DIM,
};
use crate::envs::{observations, Actor, EnvState};
use crate::error::{Error, Result};
use crate::harness::{DemoDataset, NormStats};
use crate::numcore::{Activation, AdamState, Matrix, MlpModel, Rng};
use crate::training::{epoch_batches, EpochMeter, TrainLog};

/// `ε̂(s, a_n, n)` over normalized states and actions.
#[derive(Debug, Clone, PartialEq)]
pub struct CondDiffusionPolicy {
    net: MlpModel,
    schedule: DiffusionSchedule,
    norm: NormStats,
}

impl CondDiffusionPolicy {
    pub fn new(
        norm: NormStats,
        schedule: DiffusionSchedule,
        hidden: &[usize],
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        let (sd, ad) = (norm.state.dim(), norm.action.dim());
        let net = MlpModel::with_hidden(sd + ad + EMBED_DIM, hidden, ad, activation, rng)?;
        Self::from_parts(net, schedule, norm)
    }

    pub fn from_parts(net: MlpModel, schedule: DiffusionSchedule, norm: NormStats) -> Result<Self> {
        let (sd, ad) = (norm.state.dim(), norm.action.dim());
        if net.input_dim() != sd + ad + EMBED_DIM || net.output_dim() != ad {
            return Err(Error::shape(
                "diffusion policy net dims do not match s ⧺ a_n ⧺ embed -> a",
            ));
        }
        Ok(Self { net, schedule, norm })
    }

    pub fn net(&self) -> &MlpModel {
        &self.net
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    fn input(&self, states: &Matrix, a_n: &Matrix, levels: &[NoiseLevel]) -> Result<Matrix> {
        Matrix::hcat(&[states, a_n, &self.schedule.embedding_matrix(levels)])
    }

    /// Mean noise-prediction loss and its parameter gradient on normalized data.
    pub fn loss(
        &self,
        states: &Matrix,
        actions: &Matrix,
        levels: &[NoiseLevel],
        eps: &Matrix,
    ) -> Result<(f64, Vec<f64>)> {
        let a_n = forward_noise(actions, levels, eps, &self.schedule)?;
        let (eps_hat, trace) = self.net.forward_traced(&self.input(states, &a_n, levels)?)?;
        let diff = eps_hat.sub(eps)?;
        let n = (diff.rows() * diff.cols()).max(1) as f64;
        let loss = diff.as_slice().iter().map(|d| d * d).sum::<f64>() / n;
        let mut grads = vec![0.0; self.net.num_params()];
        self.net
            .backward_traced(&trace, &diff.scale(2.0 / n), Some(&mut grads))?;
        Ok((loss, grads))
    }

    /// Raw actions for raw states, one rng per row.
    pub fn act_rows(&self, states: &Matrix, rngs: &mut [Rng]) -> Result<Matrix> {
        if rngs.len() != states.rows() {
            return Err(Error::shape("diffusion policy needs one rng per state"));
        }
        let cond = Conditioned {
            policy: self,
            states: self.norm.state.apply_rows(states)?,
        };
        let mut a_n = Matrix::zeros(states.rows(), self.norm.action.dim());
        for (r, rng) in rngs.iter_mut().enumerate() {
            rng.fill_gaussian(a_n.row_mut(r));
        }
        let a0 = reverse_chain_rows(&cond, a_n, self.schedule.max_level(), true, rngs)?;
        self.norm.action.invert_rows(&a0)
    }
}

/// The policy's denoiser with the state fixed, seen as a model over actions only.
struct Conditioned<'a> {
    policy: &'a CondDiffusionPolicy,
    states: Matrix,
}

impl NoisePredictor for Conditioned<'_> {
    fn data_dim(&self) -> usize {
        self.policy.norm.action.dim()
    }

    fn schedule(&self) -> &DiffusionSchedule {
        &self.policy.schedule
    }

    fn predict_noise(&self, x_n: &Matrix, levels: &[NoiseLevel]) -> Result<Matrix> {
        self.policy.net.predict(&self.policy.input(&self.states, x_n, levels)?)
    }
}

impl Actor for CondDiffusionPolicy {
    fn act_batch(&self, states: &[EnvState], rngs: &mut [Rng]) -> Result<Matrix> {
        self.act_rows(&observations(states), rngs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpTrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps: usize,
}

impl Default for DpTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256; 3],
            activation: Activation::Relu,
            lr: 1e-4,
            batch_size: 128,
            epochs: 2000,
            steps: 100,
        }
    }
}

pub fn train_diffusion_policy(
    dataset: &DemoDataset,
    cfg: &DpTrainConfig,
    rng: &Rng,
) -> Result<(CondDiffusionPolicy, TrainLog)> {
    if !(cfg.lr > 0.0) || cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::config("diffusion policy lr, batch and epochs must be positive"));
    }
    let schedule = DiffusionSchedule::new(cfg.steps, DEFAULT_BETA_START, DEFAULT_BETA_END)?;
    let mut dp = CondDiffusionPolicy::new(
        dataset.norm_stats().clone(),
        schedule,
        &cfg.hidden,
        cfg.activation,
        &mut rng.fork(1),
    )?;
    let mut order_rng = rng.fork(2);
    let mut noise_rng = rng.fork(3);
    let states = dataset.normalized_states();
    let actions = dataset.normalized_actions();
    let mut adam = AdamState::for_model(&dp.net, cfg.lr);
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let mut meter = EpochMeter::default();
        for batch in epoch_batches(states.rows(), cfg.batch_size, &mut order_rng) {
            let levels = dp.schedule.sample_levels(batch.len(), &mut noise_rng);
            let eps = noise_rng.gaussian_matrix(batch.len(), actions.cols());
            let (loss, mut grads) =
                dp.loss(&states.select_rows(&batch), &actions.select_rows(&batch), &levels, &eps)?;
            meter.record("diffusion policy", epoch, loss)?;
            adam.step_slices(dp.net.params_mut(), &mut grads)?;
        }
        meter.finish(&mut log);
    }
    Ok((dp, log))
}
