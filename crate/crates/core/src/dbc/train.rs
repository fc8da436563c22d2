//! Policy training: plain BC and BC combined with a frozen guidance model.

use crate::diffusion::{NoiseModel, NoisePredictor};
use crate::error::{Error, Result};
use crate::harness::DemoDataset;
use crate::numcore::{Activation, AdamState, Matrix, Rng};
use crate::training::{epoch_batches, EpochMeter, TrainLog};

use super::loss::{dm_term, mse_with_grad, NoiseDraw};
use super::policy::Policy;

const INIT_STREAM: u64 = 1;
const ORDER_STREAM: u64 = 2;
const GUIDANCE_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for PolicyTrainConfig {
    /// Maze-scale settings: 4 linear layers of width 256 with tanh.
    fn default() -> Self {
        Self {
            hidden: vec![256; 3],
            activation: Activation::Tanh,
            lr: 5e-5,
            batch_size: 128,
            epochs: 2000,
        }
    }
}

impl PolicyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("policy lr, batch size and epochs must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbcConfig {
    pub policy: PolicyTrainConfig,
    pub lambda: f64,
    pub use_expert_normalization: bool,
    pub share_noise: bool,
    /// Drops the BC term when false, leaving `λ·L_DM` alone.
    pub include_bc: bool,
}

impl Default for DbcConfig {
    fn default() -> Self {
        Self {
            policy: PolicyTrainConfig::default(),
            lambda: 30.0,
            use_expert_normalization: true,
            share_noise: true,
            include_bc: true,
        }
    }
}

impl DbcConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(format!(
                "lambda must be a finite value >= 0, got {}",
                self.lambda
            )));
        }
        if !self.include_bc && self.lambda == 0.0 {
            return Err(Error::config("a policy without the BC term needs lambda > 0"));
        }
        Ok(())
    }
}

/// A frozen model that scores predicted actions.
pub trait Guidance {
    /// Loss on normalized predicted actions `pred` for normalized `states`
    /// (with expert `actions` available for normalization) and its gradient
    /// with respect to `pred`.
    fn loss_and_grad(&self, states: &Matrix, pred: &Matrix, actions: &Matrix, rng: &mut Rng) -> Result<(f64, Matrix)>;
}

/// `L_DM` from a frozen noise model.
#[derive(Debug, Clone, Copy)]
pub struct DiffusionGuidance<'a> {
    phi: &'a NoiseModel,
    pub use_expert_normalization: bool,
    pub share_noise: bool,
}

impl<'a> DiffusionGuidance<'a> {
    pub fn new(phi: &'a NoiseModel, use_expert_normalization: bool, share_noise: bool) -> Result<Self> {
        if !phi.is_frozen() {
            return Err(Error::Usage("diffusion guidance needs a frozen noise model".into()));
        }
        Ok(Self {
            phi,
            use_expert_normalization,
            share_noise,
        })
    }
}

impl Guidance for DiffusionGuidance<'_> {
    fn loss_and_grad(&self, states: &Matrix, pred: &Matrix, actions: &Matrix, rng: &mut Rng) -> Result<(f64, Matrix)> {
        let dim = self.phi.data_dim();
        let agent = NoiseDraw::sample(self.phi.schedule(), states.rows(), dim, rng);
        let separate;
        let expert = if self.share_noise || !self.use_expert_normalization {
            &agent
        } else {
            separate = NoiseDraw::sample(self.phi.schedule(), states.rows(), dim, rng);
            &separate
        };
        dm_term(
            self.phi,
            states,
            pred,
            actions,
            &agent,
            expert,
            self.use_expert_normalization,
        )
    }
}

fn check_dims(policy_dims: (usize, usize), dataset: &DemoDataset) -> Result<()> {
    if policy_dims != (dataset.state_dim(), dataset.action_dim()) {
        return Err(Error::shape("dataset dims do not match the model"));
    }
    Ok(())
}

/// Minimizes `[L_BC] + weight·guidance` over shuffled minibatches.
///
/// With `guidance` absent or a zero weight the run consumes randomness
/// exactly like [`train_bc`].
pub fn train_guided(
    dataset: &DemoDataset,
    guidance: Option<(&dyn Guidance, f64)>,
    include_bc: bool,
    cfg: &PolicyTrainConfig,
    rng: &Rng,
) -> Result<(Policy, TrainLog)> {
    cfg.validate()?;
    let guidance = guidance.filter(|(_, w)| *w != 0.0);
    if !include_bc && guidance.is_none() {
        return Err(Error::config(
            "training needs the BC term or a non-zero guidance weight",
        ));
    }
    let states = dataset.normalized_states();
    let actions = dataset.normalized_actions();
    let mut policy = Policy::new(
        dataset.norm_stats().clone(),
        &cfg.hidden,
        cfg.activation,
        &mut rng.fork(INIT_STREAM),
    )?;
    check_dims((policy.state_dim(), policy.action_dim()), dataset)?;
    let mut order_rng = rng.fork(ORDER_STREAM);
    let mut guide_rng = rng.fork(GUIDANCE_STREAM);
    let mut adam = AdamState::for_model(policy.net(), cfg.lr);
    let mut grads = vec![0.0; policy.net().num_params()];
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let mut meter = EpochMeter::default();
        for batch in epoch_batches(states.rows(), cfg.batch_size, &mut order_rng) {
            let s = states.select_rows(&batch);
            let a = actions.select_rows(&batch);
            let (pred, trace) = policy.net().forward_traced(&s)?;
            let mut loss = 0.0;
            let mut grad_pred: Option<Matrix> = None;
            if include_bc {
                let (bc, g) = mse_with_grad(&pred, &a)?;
                loss += bc;
                grad_pred = Some(g);
            }
            if let Some((guide, weight)) = guidance {
                let (gl, gg) = guide.loss_and_grad(&s, &pred, &a, &mut guide_rng)?;
                loss += weight * gl;
                let scaled = gg.scale(weight);
                grad_pred = Some(match grad_pred {
                    Some(g) => g.add(&scaled)?,
                    None => scaled,
                });
            }
            meter.record("policy", epoch, loss)?;
            let grad_pred = grad_pred.expect("at least one loss term");
            policy.net().backward_traced(&trace, &grad_pred, Some(&mut grads))?;
            adam.step_slices(policy.net_mut().params_mut(), &mut grads)?;
        }
        meter.finish(&mut log);
    }
    Ok((policy, log))
}

/// Trains a policy with `L_BC + λ·L_DM` against a frozen noise model.
pub fn train_policy(dataset: &DemoDataset, phi: &NoiseModel, cfg: &DbcConfig, rng: &Rng) -> Result<(Policy, TrainLog)> {
    cfg.validate()?;
    if (phi.state_dim(), phi.action_dim()) != (dataset.state_dim(), dataset.action_dim()) {
        return Err(Error::shape("noise model dims do not match the dataset"));
    }
    let guidance = DiffusionGuidance::new(phi, cfg.use_expert_normalization, cfg.share_noise)?;
    train_guided(dataset, Some((&guidance, cfg.lambda)), cfg.include_bc, &cfg.policy, rng)
}

/// Plain behavioral cloning.
pub fn train_bc(dataset: &DemoDataset, cfg: &PolicyTrainConfig, rng: &Rng) -> Result<(Policy, TrainLog)> {
    cfg.validate()?;
    let mut init_rng = rng.fork(INIT_STREAM);
    let mut order_rng = rng.fork(ORDER_STREAM);
    let mut policy = Policy::new(dataset.norm_stats().clone(), &cfg.hidden, cfg.activation, &mut init_rng)?;
    let states = dataset.normalized_states();
    let actions = dataset.normalized_actions();
    let mut adam = AdamState::for_model(policy.net(), cfg.lr);
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let mut meter = EpochMeter::default();
        for batch in epoch_batches(states.rows(), cfg.batch_size, &mut order_rng) {
            let net = policy.net_mut();
            let pred = net.forward(&states.select_rows(&batch))?;
            let target = actions.select_rows(&batch);
            let n = (pred.rows() * pred.cols()) as f64;
            let diff = pred.sub(&target)?;
            meter.record("bc", epoch, diff.as_slice().iter().map(|d| d * d).sum::<f64>() / n)?;
            net.backward(&diff.map(|d| 2.0 * d / n))?;
            adam.step(net)?;
        }
        meter.finish(&mut log);
    }
    Ok((policy, log))
}
