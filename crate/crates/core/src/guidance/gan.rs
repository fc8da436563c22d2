//! Adversarial baseline: a state-action discriminator trained jointly with a BC generator.

use crate::dbc::{mse_with_grad, Policy, PolicyTrainConfig};
use crate::error::{Error, Result};
use crate::harness::DemoDataset;
use crate::numcore::{Activation, AdamState, Matrix, MlpModel, Rng};
use crate::training::{epoch_batches, EpochMeter, TrainLog};

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Discriminator BCE on logits: `mean[−log D(real)] + mean[−log(1 − D(fake))]`.
/// Returns the loss and its gradients with respect to both logit vectors.
pub fn disc_loss(real: &[f64], fake: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::shape("discriminator loss needs non-empty batches"));
    }
    let nr = real.len() as f64;
    let nf = fake.len() as f64;
    let loss =
        real.iter().map(|l| softplus(-l)).sum::<f64>() / nr + fake.iter().map(|l| softplus(*l)).sum::<f64>() / nf;
    let d_real = real.iter().map(|l| (sigmoid(*l) - 1.0) / nr).collect();
    let d_fake = fake.iter().map(|l| sigmoid(*l) / nf).collect();
    Ok((loss, d_real, d_fake))
}

/// Non-saturating generator loss `mean[−log D(fake)]` and its logit gradient.
pub fn gen_loss(fake: &[f64]) -> Result<(f64, Vec<f64>)> {
    if fake.is_empty() {
        return Err(Error::shape("generator loss needs a non-empty batch"));
    }
    let n = fake.len() as f64;
    let loss = fake.iter().map(|l| softplus(-l)).sum::<f64>() / n;
    Ok((loss, fake.iter().map(|l| (sigmoid(*l) - 1.0) / n).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    pub policy: PolicyTrainConfig,
    pub disc_hidden: Vec<usize>,
    pub disc_lr: f64,
    /// Weight of the adversarial term added to the BC loss.
    pub lambda: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            policy: PolicyTrainConfig::default(),
            disc_hidden: vec![256; 3],
            disc_lr: 5e-5,
            lambda: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanPair {
    pub generator: Policy,
    pub discriminator: MlpModel,
}

/// Alternating updates: one discriminator step, then one generator step on
/// `L_BC + λ·L_gen` against the updated discriminator.
pub fn train_gan(dataset: &DemoDataset, cfg: &GanConfig, rng: &Rng) -> Result<(GanPair, TrainLog)> {
    if !(cfg.disc_lr > 0.0) || !(cfg.lambda >= 0.0) {
        return Err(Error::config(
            "gan needs a positive discriminator lr and non-negative weight",
        ));
    }
    let pc = &cfg.policy;
    if !(pc.lr > 0.0) || pc.batch_size == 0 || pc.epochs == 0 {
        return Err(Error::config("generator lr, batch and epochs must be positive"));
    }
    let mut policy = Policy::new(
        dataset.norm_stats().clone(),
        &pc.hidden,
        pc.activation,
        &mut rng.fork(1),
    )?;
    let sd = dataset.state_dim();
    let mut disc = MlpModel::with_hidden(
        sd + dataset.action_dim(),
        &cfg.disc_hidden,
        1,
        Activation::Relu,
        &mut rng.fork(4),
    )?;
    let mut order_rng = rng.fork(2);
    let states = dataset.normalized_states();
    let actions = dataset.normalized_actions();
    let mut g_adam = AdamState::for_model(policy.net(), pc.lr);
    let mut d_adam = AdamState::for_model(&disc, cfg.disc_lr);
    let mut g_grads = vec![0.0; policy.net().num_params()];
    let mut d_grads = vec![0.0; disc.num_params()];
    let mut log = TrainLog::default();
    for epoch in 0..pc.epochs {
        let mut meter = EpochMeter::default();
        for batch in epoch_batches(states.rows(), pc.batch_size, &mut order_rng) {
            let s = states.select_rows(&batch);
            let a = actions.select_rows(&batch);
            let b = s.rows();
            let (pred, trace) = policy.net().forward_traced(&s)?;

            let real = Matrix::hcat(&[&s, &a])?;
            let fake = Matrix::hcat(&[&s, &pred])?;
            let (logits, d_trace) = disc.forward_traced(&Matrix::vcat(&[&real, &fake])?)?;
            let (_, dr, df) = disc_loss(&logits.as_slice()[..b], &logits.as_slice()[b..])?;
            let d_out = Matrix::from_vec(2 * b, 1, [dr, df].concat())?;
            disc.backward_traced(&d_trace, &d_out, Some(&mut d_grads))?;
            d_adam.step_slices(disc.params_mut(), &mut d_grads)?;

            let (fake_logits, f_trace) = disc.forward_traced(&fake)?;
            let (gl, dg) = gen_loss(fake_logits.as_slice())?;
            let dx = disc.backward_traced(&f_trace, &Matrix::from_vec(b, 1, dg)?, None)?;
            let (bc, bc_grad) = mse_with_grad(&pred, &a)?;
            meter.record("gan", epoch, bc + cfg.lambda * gl)?;
            let grad_pred = bc_grad.add(&dx.columns(sd..dx.cols()).scale(cfg.lambda))?;
            policy.net().backward_traced(&trace, &grad_pred, Some(&mut g_grads))?;
            g_adam.step_slices(policy.net_mut().params_mut(), &mut g_grads)?;
        }
        meter.finish(&mut log);
    }
    Ok((
        GanPair {
            generator: policy,
            discriminator: disc,
        },
        log,
    ))
}
