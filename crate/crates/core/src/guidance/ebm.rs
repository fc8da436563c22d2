//! Energy model over state-action pairs, trained with InfoNCE against uniform negatives.

use crate::dbc::Guidance;
use crate::error::{Error, Result};
use crate::harness::{DemoDataset, NormStats};
use crate::numcore::{Activation, AdamState, LrSchedule, Matrix, MlpModel, Rng};
use crate::training::{epoch_batches, EpochMeter, TrainLog};

/// Axis-aligned action bounds in raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBox {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ActionBox {
    pub fn symmetric(dim: usize, half_width: f64) -> Self {
        Self {
            low: vec![-half_width; dim],
            high: vec![half_width; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| 0.5 * (h - l)).collect()
    }

    pub fn sample(&self, count: usize, rng: &mut Rng) -> Matrix {
        let mut m = Matrix::zeros(count, self.dim());
        for r in 0..count {
            for (j, v) in m.row_mut(r).iter_mut().enumerate() {
                *v = rng.uniform_in(self.low[j], self.high[j]);
            }
        }
        m
    }

    pub fn clamp_row(&self, row: &mut [f64]) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = v.clamp(self.low[j], self.high[j]);
        }
    }
}

/// Scalar energies for candidate actions at one raw state; lower is better.
pub trait EnergyFn {
    fn energies(&self, state: &[f64], actions: &Matrix) -> Result<Vec<f64>>;
}

/// `E(s, a)`: an MLP over normalized `s ⧺ a` with one output.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    net: MlpModel,
    norm: NormStats,
}

impl EnergyModel {
    pub fn new(norm: NormStats, hidden: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        let input = norm.state.dim() + norm.action.dim();
        let net = MlpModel::with_hidden(input, hidden, 1, activation, rng)?;
        Self::from_parts(net, norm)
    }

    pub fn from_parts(net: MlpModel, norm: NormStats) -> Result<Self> {
        if net.input_dim() != norm.state.dim() + norm.action.dim() || net.output_dim() != 1 {
            return Err(Error::shape("energy net must map s ⧺ a to a single output"));
        }
        Ok(Self { net, norm })
    }

    pub fn net(&self) -> &MlpModel {
        &self.net
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    /// Energies of normalized pairs, one per row.
    pub fn energies_normalized(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        Ok(self.net.predict(&Matrix::hcat(&[states, actions])?)?.into_vec())
    }
}

impl EnergyFn for EnergyModel {
    fn energies(&self, state: &[f64], actions: &Matrix) -> Result<Vec<f64>> {
        let s = Matrix::row_vector(&self.norm.state.apply(state)).repeat_rows(actions.rows());
        let a = self.norm.action.apply_rows(actions)?;
        self.energies_normalized(&s, &a)
    }
}

/// InfoNCE over rows of `energies`, where column 0 holds the positive and
/// the rest the negatives: `mean_i [E_i0 + logsumexp_j(−E_ij)]`. Returns the
/// loss and its gradient with respect to every energy.
pub fn info_nce_loss(energies: &Matrix) -> Result<(f64, Matrix)> {
    if energies.cols() < 2 || energies.rows() == 0 {
        return Err(Error::shape(
            "InfoNCE needs a positive and at least one negative per row",
        ));
    }
    let b = energies.rows() as f64;
    let mut grad = Matrix::zeros(energies.rows(), energies.cols());
    let mut total = 0.0;
    for (i, row) in energies.iter_rows().enumerate() {
        let max = row.iter().map(|e| -e).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|e| (-e - max).exp()).sum();
        let lse = max + sum.ln();
        total += row[0] + lse;
        for (j, (g, e)) in grad.row_mut(i).iter_mut().zip(row).enumerate() {
            let p = (-e - lse).exp();
            *g = ((j == 0) as u8 as f64 - p) / b;
        }
    }
    Ok((total / b, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EbmTrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub negatives: usize,
    /// Multiplicative learning-rate decay applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
}

impl Default for EbmTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128; 4],
            activation: Activation::Relu,
            lr: 5e-4,
            batch_size: 128,
            epochs: 8000,
            negatives: 64,
            lr_decay: 0.99,
            decay_every: 100,
        }
    }
}

impl EbmTrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.epochs == 0 || self.negatives == 0 {
            return Err(Error::config("ebm lr, batch, epochs and negatives must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.decay_every == 0 {
            return Err(Error::config("ebm lr decay must be in (0, 1] with a positive period"));
        }
        Ok(())
    }
}

/// Input rows `s ⧺ a` for each positive followed by its negatives.
fn contrastive_inputs(states: &Matrix, positives: &Matrix, negatives: &Matrix, k: usize) -> Result<Matrix> {
    let b = states.rows();
    let dim = states.cols() + positives.cols();
    let mut x = Matrix::zeros(b * (k + 1), dim);
    for i in 0..b {
        for j in 0..=k {
            let row = x.row_mut(i * (k + 1) + j);
            row[..states.cols()].copy_from_slice(states.row(i));
            let a = if j == 0 {
                positives.row(i)
            } else {
                negatives.row(i * k + j - 1)
            };
            row[states.cols()..].copy_from_slice(a);
        }
    }
    Ok(x)
}

/// InfoNCE loss of `model` on one batch with the given normalized
/// negatives (`k` per positive), plus parameter gradients.
pub fn ebm_batch_loss(
    model: &EnergyModel,
    states: &Matrix,
    actions: &Matrix,
    negatives: &Matrix,
    k: usize,
) -> Result<(f64, Vec<f64>)> {
    let x = contrastive_inputs(states, actions, negatives, k)?;
    let (e, trace) = model.net.forward_traced(&x)?;
    let energies = Matrix::from_vec(states.rows(), k + 1, e.into_vec())?;
    let (loss, grad) = info_nce_loss(&energies)?;
    let grad_out = Matrix::from_vec(x.rows(), 1, grad.into_vec())?;
    let mut grads = vec![0.0; model.net.num_params()];
    model.net.backward_traced(&trace, &grad_out, Some(&mut grads))?;
    Ok((loss, grads))
}

/// Trains an energy model with uniform negatives drawn from `action_box`.
pub fn train_ebm(
    dataset: &DemoDataset,
    action_box: &ActionBox,
    cfg: &EbmTrainConfig,
    rng: &Rng,
) -> Result<(EnergyModel, TrainLog)> {
    cfg.validate()?;
    if action_box.dim() != dataset.action_dim() {
        return Err(Error::shape("action box dims differ from dataset action dims"));
    }
    let norm = dataset.norm_stats().clone();
    let mut model = EnergyModel::new(norm.clone(), &cfg.hidden, cfg.activation, &mut rng.fork(1))?;
    let mut order_rng = rng.fork(2);
    let mut neg_rng = rng.fork(3);
    let states = dataset.normalized_states();
    let actions = dataset.normalized_actions();
    let mut adam = AdamState::for_model(&model.net, cfg.lr);
    let schedule = LrSchedule::Step {
        every_steps: cfg.decay_every as u64,
        factor: cfg.lr_decay,
    };
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        adam.lr = schedule.rate(cfg.lr, epoch as u64);
        let mut meter = EpochMeter::default();
        for batch in epoch_batches(states.rows(), cfg.batch_size, &mut order_rng) {
            let raw_neg = action_box.sample(batch.len() * cfg.negatives, &mut neg_rng);
            let neg = norm.action.apply_rows(&raw_neg)?;
            let (loss, mut grads) = ebm_batch_loss(
                &model,
                &states.select_rows(&batch),
                &actions.select_rows(&batch),
                &neg,
                cfg.negatives,
            )?;
            meter.record("ebm", epoch, loss)?;
            adam.step_slices(model.net.params_mut(), &mut grads)?;
        }
        meter.finish(&mut log);
    }
    Ok((model, log))
}

/// Energies of normalized pairs together with `∂E_i/∂a_i`.
pub trait ActionGradEnergy {
    fn energy_and_action_grad(&self, states: &Matrix, actions: &Matrix) -> Result<(Vec<f64>, Matrix)>;
}

impl ActionGradEnergy for EnergyModel {
    fn energy_and_action_grad(&self, states: &Matrix, actions: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let x = Matrix::hcat(&[states, actions])?;
        let (e, trace) = self.net.forward_traced(&x)?;
        let grad_in = self
            .net
            .backward_traced(&trace, &Matrix::filled(x.rows(), 1, 1.0), None)?;
        Ok((e.into_vec(), grad_in.columns(states.cols()..x.cols())))
    }
}

/// `mean_i E(s_i, π(s_i))` from a frozen energy.
#[derive(Clone, Copy)]
pub struct EbmGuidance<'a> {
    pub ebm: &'a dyn ActionGradEnergy,
}

impl Guidance for EbmGuidance<'_> {
    fn loss_and_grad(
        &self,
        states: &Matrix,
        pred: &Matrix,
        _actions: &Matrix,
        _rng: &mut Rng,
    ) -> Result<(f64, Matrix)> {
        let (e, grad) = self.ebm.energy_and_action_grad(states, pred)?;
        let b = e.len().max(1) as f64;
        Ok((e.iter().sum::<f64>() / b, grad.scale(1.0 / b)))
    }
}

pub const LAMBDA_EBM: f64 = 0.1;
