//! BC loss, agent and expert diffusion losses, and the clamped diffusion-model loss.
//!
//! All inputs are normalized. Gradients are returned with respect to either
//! the policy parameters or the predicted actions `â`.

use crate::diffusion::{diff_loss, DiffusionSchedule, NoiseLevel, NoiseModel, NoisePredictor};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

use super::policy::Policy;

/// A scalar loss and its gradient with respect to the policy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLoss {
    pub loss: f64,
    pub grads: Vec<f64>,
}

/// Per-row noise levels and standard Gaussian noise for a diffusion term.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub levels: Vec<NoiseLevel>,
    pub eps: Matrix,
}

impl NoiseDraw {
    pub fn sample(sched: &DiffusionSchedule, rows: usize, dim: usize, rng: &mut Rng) -> Self {
        let levels = sched.sample_levels(rows, rng);
        let eps = rng.gaussian_matrix(rows, dim);
        Self { levels, eps }
    }
}

/// Mean over batch and coordinates of `(pred − target)²`, and its gradient
/// with respect to `pred`.
pub fn mse_with_grad(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    pred.ensure_same_shape(target, "mse target")?;
    let n = (pred.rows() * pred.cols()).max(1) as f64;
    let diff = pred.sub(target)?;
    let loss = diff.as_slice().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.map(|d| 2.0 * d / n)))
}

fn policy_backward(
    policy: &Policy,
    states: &Matrix,
    grad_pred_fn: impl FnOnce(&Matrix) -> Result<(f64, Matrix)>,
) -> Result<PolicyLoss> {
    let (pred, trace) = policy.net().forward_traced(states)?;
    let (loss, grad_pred) = grad_pred_fn(&pred)?;
    let mut grads = vec![0.0; policy.net().num_params()];
    policy.net().backward_traced(&trace, &grad_pred, Some(&mut grads))?;
    Ok(PolicyLoss { loss, grads })
}

/// `L_BC`: mean squared error between `π(s)` and `a`.
pub fn bc_loss(policy: &Policy, states: &Matrix, actions: &Matrix) -> Result<PolicyLoss> {
    policy_backward(policy, states, |pred| mse_with_grad(pred, actions))
}

fn ensure_frozen(phi: &NoiseModel) -> Result<()> {
    if !phi.is_frozen() {
        return Err(Error::Usage(
            "diffusion guidance needs a frozen noise model; call freeze() first".into(),
        ));
    }
    Ok(())
}

fn joint(states: &Matrix, actions: &Matrix) -> Result<Matrix> {
    Matrix::hcat(&[states, actions])
}

/// Per-sample diffusion loss of `(s, â)` and its gradient with respect to
/// `â` after weighting sample `i` by `weights[i]`.
#[allow(clippy::type_complexity)]
pub fn agent_diff_terms<'a>(
    phi: &'a NoiseModel,
    states: &Matrix,
    pred: &Matrix,
    noise: &NoiseDraw,
) -> Result<(Vec<f64>, impl Fn(&[f64]) -> Result<Matrix> + 'a)> {
    ensure_frozen(phi)?;
    let out = diff_loss(phi, &joint(states, pred)?, &noise.levels, &noise.eps)?;
    let per_sample = out.per_sample.clone();
    let state_dim = phi.state_dim();
    let data_dim = phi.data_dim();
    let grad =
        move |weights: &[f64]| -> Result<Matrix> { Ok(out.backward(phi, weights, None)?.columns(state_dim..data_dim)) };
    Ok((per_sample, grad))
}

/// `L_diff^agent`: batch-mean diffusion loss of `(s, π(s))`, with gradients
/// flowing through `â` into the policy only.
pub fn agent_diff_loss(
    policy: &Policy,
    phi: &NoiseModel,
    states: &Matrix,
    levels: &[NoiseLevel],
    eps: &Matrix,
) -> Result<PolicyLoss> {
    let noise = NoiseDraw {
        levels: levels.to_vec(),
        eps: eps.clone(),
    };
    policy_backward(policy, states, |pred| {
        let (per, grad) = agent_diff_terms(phi, states, pred, &noise)?;
        let b = per.len().max(1) as f64;
        let loss = per.iter().sum::<f64>() / b;
        Ok((loss, grad(&vec![1.0 / b; per.len()])?))
    })
}

/// Per-sample `L_diff^expert` on `(s, a)`; no gradients are produced.
pub fn expert_diff_losses(
    phi: &NoiseModel,
    states: &Matrix,
    actions: &Matrix,
    levels: &[NoiseLevel],
    eps: &Matrix,
) -> Result<Vec<f64>> {
    Ok(diff_loss(phi, &joint(states, actions)?, levels, eps)?.per_sample)
}

/// Batch-mean `L_diff^expert`.
pub fn expert_diff_loss(
    phi: &NoiseModel,
    states: &Matrix,
    actions: &Matrix,
    levels: &[NoiseLevel],
    eps: &Matrix,
) -> Result<f64> {
    let per = expert_diff_losses(phi, states, actions, levels, eps)?;
    Ok(per.iter().sum::<f64>() / per.len().max(1) as f64)
}

/// `L_DM = mean_i max(agent_i − expert_i, 0)` and `∂L_DM/∂agent_i`, which
/// is zero wherever the clamp is active (including ties).
pub fn dm_loss(agent: &[f64], expert: &[f64]) -> Result<(f64, Vec<f64>)> {
    if agent.len() != expert.len() {
        return Err(Error::shape(format!(
            "{} agent losses vs {} expert losses",
            agent.len(),
            expert.len()
        )));
    }
    let b = agent.len().max(1) as f64;
    let mut total = 0.0;
    let mut weights = vec![0.0; agent.len()];
    for ((w, a), e) in weights.iter_mut().zip(agent).zip(expert) {
        if a > e {
            total += a - e;
            *w = 1.0 / b;
        }
    }
    Ok((total / b, weights))
}

/// `L_total = L_BC + λ·L_DM`.
pub fn total_loss(bc: f64, dm: f64, lambda: f64) -> f64 {
    bc + lambda * dm
}

/// The diffusion term on predicted actions and its gradient with respect
/// to them. Without expert normalization the term is the plain batch-mean
/// agent loss.
pub fn dm_term(
    phi: &NoiseModel,
    states: &Matrix,
    pred: &Matrix,
    actions: &Matrix,
    agent_noise: &NoiseDraw,
    expert_noise: &NoiseDraw,
    use_expert_normalization: bool,
) -> Result<(f64, Matrix)> {
    let (agent, grad) = agent_diff_terms(phi, states, pred, agent_noise)?;
    if use_expert_normalization {
        let expert = expert_diff_losses(phi, states, actions, &expert_noise.levels, &expert_noise.eps)?;
        let (loss, weights) = dm_loss(&agent, &expert)?;
        Ok((loss, grad(&weights)?))
    } else {
        let b = agent.len().max(1) as f64;
        let loss = agent.iter().sum::<f64>() / b;
        Ok((loss, grad(&vec![1.0 / b; agent.len()])?))
    }
}

/// Loss components of one DBC evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DbcObjective {
    pub bc: f64,
    pub dm: f64,
    pub total: f64,
    pub grads: Vec<f64>,
}

/// `L_total` on one batch with fixed noise draws, with gradients into the
/// policy parameters.
#[allow(clippy::too_many_arguments)]
pub fn dbc_objective(
    policy: &Policy,
    phi: &NoiseModel,
    states: &Matrix,
    actions: &Matrix,
    agent_noise: &NoiseDraw,
    expert_noise: &NoiseDraw,
    lambda: f64,
    use_expert_normalization: bool,
) -> Result<DbcObjective> {
    let mut parts = (0.0, 0.0);
    let out = policy_backward(policy, states, |pred| {
        let (bc, mut grad) = mse_with_grad(pred, actions)?;
        let (dm, dm_grad) = dm_term(
            phi,
            states,
            pred,
            actions,
            agent_noise,
            expert_noise,
            use_expert_normalization,
        )?;
        for (g, d) in grad.as_mut_slice().iter_mut().zip(dm_grad.as_slice()) {
            *g += lambda * d;
        }
        parts = (bc, dm);
        Ok((total_loss(bc, dm, lambda), grad))
    })?;
    Ok(DbcObjective {
        bc: parts.0,
        dm: parts.1,
        total: out.loss,
        grads: out.grads,
    })
}
