//! Noise-prediction network over concatenated state-action vectors and its loss.

use super::schedule::{forward_noise, DiffusionSchedule, NoiseLevel, EMBED_DIM};
use crate::error::{Error, Result};
use crate::numcore::{Activation, Matrix, MlpModel, Rng, Trace};

/// Anything that predicts the injected noise from a noised sample.
pub trait NoisePredictor {
    fn data_dim(&self) -> usize;
    fn schedule(&self) -> &DiffusionSchedule;
    fn predict_noise(&self, x_n: &Matrix, levels: &[NoiseLevel]) -> Result<Matrix>;
}

/// `ε̂(x_n, n)` as an MLP over `x_n ⧺ embed(n)`.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    net: MlpModel,
    state_dim: usize,
    action_dim: usize,
    schedule: DiffusionSchedule,
    frozen: bool,
    /// Std of Gaussian noise added to expert actions before training.
    pub train_noise_level: f64,
}

impl NoiseModel {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        schedule: DiffusionSchedule,
        rng: &mut Rng,
    ) -> Result<Self> {
        let dim = state_dim + action_dim;
        let net = MlpModel::with_hidden(dim + EMBED_DIM, hidden, dim, activation, rng)?;
        Self::from_parts(net, state_dim, action_dim, schedule)
    }

    pub fn from_parts(net: MlpModel, state_dim: usize, action_dim: usize, schedule: DiffusionSchedule) -> Result<Self> {
        let dim = state_dim + action_dim;
        if net.input_dim() != dim + EMBED_DIM || net.output_dim() != dim {
            return Err(Error::shape(format!(
                "noise network must map {} -> {dim}, got {} -> {}",
                dim + EMBED_DIM,
                net.input_dim(),
                net.output_dim()
            )));
        }
        Ok(Self {
            net,
            state_dim,
            action_dim,
            schedule,
            frozen: false,
            train_noise_level: 0.0,
        })
    }

    pub fn net(&self) -> &MlpModel {
        &self.net
    }

    pub fn net_mut(&mut self) -> Result<&mut MlpModel> {
        if self.frozen {
            return Err(Error::Usage("noise model is frozen".into()));
        }
        Ok(&mut self.net)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    fn network_input(&self, x_n: &Matrix, levels: &[NoiseLevel]) -> Result<Matrix> {
        if x_n.cols() != self.data_dim() {
            return Err(Error::shape(format!(
                "noise model expects {} data columns, got {}",
                self.data_dim(),
                x_n.cols()
            )));
        }
        if levels.len() != x_n.rows() {
            return Err(Error::shape("one noise level per row required"));
        }
        Matrix::hcat(&[x_n, &self.schedule.embedding_matrix(levels)])
    }
}

impl NoisePredictor for NoiseModel {
    fn data_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    fn predict_noise(&self, x_n: &Matrix, levels: &[NoiseLevel]) -> Result<Matrix> {
        self.net.predict(&self.network_input(x_n, levels)?)
    }
}

/// Per-row `mean_j (ε̂_ij − ε_ij)²` and their mean.
pub fn noise_prediction_loss(eps_hat: &Matrix, eps: &Matrix) -> Result<(f64, Vec<f64>)> {
    eps_hat.ensure_same_shape(eps, "noise prediction")?;
    let d = eps.cols().max(1) as f64;
    let per_sample: Vec<f64> = eps_hat
        .iter_rows()
        .zip(eps.iter_rows())
        .map(|(p, e)| p.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / d)
        .collect();
    let mean = if per_sample.is_empty() {
        0.0
    } else {
        per_sample.iter().sum::<f64>() / per_sample.len() as f64
    };
    Ok((mean, per_sample))
}

/// Result of a noise-prediction loss evaluation, kept for backprop.
#[derive(Debug)]
pub struct DiffLossOutput {
    /// Mean over batch and coordinates.
    pub loss: f64,
    /// Mean over coordinates, one per row.
    pub per_sample: Vec<f64>,
    residual: Matrix,
    trace: Trace,
    signal_scale: Vec<f64>,
}

impl DiffLossOutput {
    /// Backpropagates `Σ_i weights[i] · per_sample[i]`.
    ///
    /// Parameter gradients are added to `param_grads` when given. Returns the
    /// gradient with respect to the clean input `x0`.
    pub fn backward(&self, phi: &NoiseModel, weights: &[f64], param_grads: Option<&mut [f64]>) -> Result<Matrix> {
        if weights.len() != self.per_sample.len() {
            return Err(Error::shape("one weight per sample required"));
        }
        let d = self.residual.cols() as f64;
        let mut grad_out = self.residual.clone();
        for (i, &w) in weights.iter().enumerate() {
            for g in grad_out.row_mut(i) {
                *g *= 2.0 * w / d;
            }
        }
        let grad_in = phi.net.backward_traced(&self.trace, &grad_out, param_grads)?;
        let mut grad_x0 = grad_in.columns(0..phi.data_dim());
        for (i, &s) in self.signal_scale.iter().enumerate() {
            for g in grad_x0.row_mut(i) {
                *g *= s;
            }
        }
        Ok(grad_x0)
    }

    /// Backpropagates the batch-mean loss.
    pub fn backward_mean(&self, phi: &NoiseModel, param_grads: Option<&mut [f64]>) -> Result<Matrix> {
        let b = self.per_sample.len().max(1) as f64;
        self.backward(phi, &vec![1.0 / b; self.per_sample.len()], param_grads)
    }
}

/// Noise-prediction loss of `phi` on clean rows `x0` noised with `eps` at `levels`.
pub fn diff_loss(phi: &NoiseModel, x0: &Matrix, levels: &[NoiseLevel], eps: &Matrix) -> Result<DiffLossOutput> {
    let x_n = forward_noise(x0, levels, eps, &phi.schedule)?;
    let input = phi.network_input(&x_n, levels)?;
    let (eps_hat, trace) = phi.net.forward_traced(&input)?;
    let (loss, per_sample) = noise_prediction_loss(&eps_hat, eps)?;
    let residual = eps_hat.sub(eps)?;
    let signal_scale = levels.iter().map(|&n| phi.schedule.alpha_bar(n).sqrt()).collect();
    Ok(DiffLossOutput {
        loss,
        per_sample,
        residual,
        trace,
        signal_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gradcheck::{central_difference, max_relative_error};

    fn tiny_model(seed: u64) -> NoiseModel {
        let sched = DiffusionSchedule::new(10, 0.01, 0.3).unwrap();
        let mut rng = Rng::new(seed);
        let mut m = NoiseModel::new(2, 2, &[12, 10], Activation::Tanh, sched, &mut rng).unwrap();
        for p in m.net_mut().unwrap().params_mut() {
            *p += 0.05 * rng.gaussian();
        }
        m
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let eps = Rng::new(1).gaussian_matrix(8, 4);
        let (loss, per) = noise_prediction_loss(&eps, &eps).unwrap();
        assert_eq!(loss, 0.0);
        assert!(per.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn zero_model_loss_is_mean_square_noise() {
        let sched = DiffusionSchedule::new(10, 0.01, 0.3).unwrap();
        let net = MlpModel::zeros(&[4 + EMBED_DIM, 8, 4], &[Activation::Relu]).unwrap();
        let phi = NoiseModel::from_parts(net, 2, 2, sched.clone()).unwrap();
        let mut rng = Rng::new(2);
        let x0 = rng.gaussian_matrix(6, 4);
        let eps = rng.gaussian_matrix(6, 4);
        let levels = sched.sample_levels(6, &mut rng);
        let out = diff_loss(&phi, &x0, &levels, &eps).unwrap();
        let expected = eps.map(|e| e * e).mean();
        assert!((out.loss - expected).abs() < 1e-15);
    }

    #[test]
    fn matches_straight_line_mse() {
        let phi = tiny_model(3);
        let mut rng = Rng::new(4);
        let x0 = rng.gaussian_matrix(5, 4);
        let eps = rng.gaussian_matrix(5, 4);
        let levels = phi.schedule().sample_levels(5, &mut rng);
        let out = diff_loss(&phi, &x0, &levels, &eps).unwrap();

        let mut total = 0.0;
        for (i, &n) in levels.iter().enumerate() {
            let ab = phi.schedule().alpha_bar(n);
            let mut row: Vec<f64> = (0..4)
                .map(|j| ab.sqrt() * x0.get(i, j) + (1.0 - ab).sqrt() * eps.get(i, j))
                .collect();
            row.extend_from_slice(&phi.schedule().embedding(levels[i]));
            let pred = phi.net().predict(&Matrix::row_vector(&row)).unwrap();
            for j in 0..4 {
                total += (pred.get(0, j) - eps.get(i, j)).powi(2);
            }
        }
        assert!((out.loss - total / 20.0).abs() < 1e-14);
    }

    #[test]
    fn oracle_predictor_after_forward_noise_is_exact() {
        let phi = tiny_model(5);
        let mut rng = Rng::new(6);
        let eps = rng.gaussian_matrix(4, 4);
        let levels = phi.schedule().sample_levels(4, &mut rng);
        let x0 = rng.gaussian_matrix(4, 4);
        let x_n = forward_noise(&x0, &levels, &eps, phi.schedule()).unwrap();
        // oracle: invert the forward process given the true x0
        let mut eps_hat = Matrix::zeros(4, 4);
        for (i, &n) in levels.iter().enumerate() {
            let ab = phi.schedule().alpha_bar(n);
            for j in 0..4 {
                eps_hat.set(i, j, (x_n.get(i, j) - ab.sqrt() * x0.get(i, j)) / (1.0 - ab).sqrt());
            }
        }
        let (loss, _) = noise_prediction_loss(&eps_hat, &eps).unwrap();
        assert!(loss < 1e-28);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let phi = tiny_model(7);
        let mut rng = Rng::new(8);
        let x0 = rng.gaussian_matrix(6, 4);
        let eps = rng.gaussian_matrix(6, 4);
        let levels = phi.schedule().sample_levels(6, &mut rng);

        let out = diff_loss(&phi, &x0, &levels, &eps).unwrap();
        let mut grads = vec![0.0; phi.net().num_params()];
        let dx0 = out.backward_mean(&phi, Some(&mut grads)).unwrap();

        let by_params = |p: &[f64]| {
            let mut m = phi.clone();
            m.net_mut().unwrap().set_params(p).unwrap();
            diff_loss(&m, &x0, &levels, &eps).unwrap().loss
        };
        let numeric = central_difference(&by_params, phi.net().params(), 1e-5);
        assert!(max_relative_error(&grads, &numeric) <= 1e-4);

        // gradient w.r.t. the action slice of the clean input
        let by_action = |a: &[f64]| {
            let mut x = x0.clone();
            for i in 0..6 {
                x.set(i, 2, a[2 * i]);
                x.set(i, 3, a[2 * i + 1]);
            }
            diff_loss(&phi, &x, &levels, &eps).unwrap().loss
        };
        let actions: Vec<f64> = x0.columns(2..4).into_vec();
        let numeric_a = central_difference(&by_action, &actions, 1e-5);
        let analytic_a = dx0.columns(2..4).into_vec();
        assert!(max_relative_error(&analytic_a, &numeric_a) <= 1e-4);
    }

    #[test]
    fn frozen_model_refuses_mutation() {
        let mut phi = tiny_model(9);
        phi.freeze();
        assert!(matches!(phi.net_mut(), Err(Error::Usage(_))));
    }
}
