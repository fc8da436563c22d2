//! Variational autoencoder over joint state-action vectors, usable as a guidance density.

use crate::dbc::{dm_loss, Guidance};
use crate::error::{Error, Result};
use crate::harness::{DemoDataset, NormStats};
use crate::numcore::{Activation, AdamState, Matrix, MlpModel, Rng, Trace};
use crate::training::{epoch_batches, EpochMeter, TrainLog};

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    encoder: MlpModel,
    decoder: MlpModel,
    latent_dim: usize,
    norm: NormStats,
}

impl VaeModel {
    pub fn new(
        norm: NormStats,
        hidden: &[usize],
        latent_dim: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        let d = norm.state.dim() + norm.action.dim();
        let encoder = MlpModel::with_hidden(d, hidden, 2 * latent_dim, activation, rng)?;
        let decoder = MlpModel::with_hidden(latent_dim, hidden, d, activation, rng)?;
        Self::from_parts(encoder, decoder, norm)
    }

    pub fn from_parts(encoder: MlpModel, decoder: MlpModel, norm: NormStats) -> Result<Self> {
        let d = norm.state.dim() + norm.action.dim();
        let latent_dim = decoder.input_dim();
        if encoder.input_dim() != d || decoder.output_dim() != d || encoder.output_dim() != 2 * latent_dim {
            return Err(Error::shape("vae encoder/decoder dims are inconsistent"));
        }
        Ok(Self {
            encoder,
            decoder,
            latent_dim,
            norm,
        })
    }

    pub fn encoder(&self) -> &MlpModel {
        &self.encoder
    }

    pub fn decoder(&self) -> &MlpModel {
        &self.decoder
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    /// Per-sample `‖x̂ − x‖² + KL(q(z|x) ‖ N(0, I))` with reparameterization noise `xi`.
    pub fn loss(&self, x: &Matrix, xi: &Matrix) -> Result<VaeLossOutput> {
        let l = self.latent_dim;
        xi.ensure_shape(x.rows(), l, "vae latent noise")?;
        let (h, enc_trace) = self.encoder.forward_traced(x)?;
        let mu = h.columns(0..l);
        let logvar = h.columns(l..2 * l);
        let sigma = logvar.map(|v| (0.5 * v).exp());
        let z = mu.add(&sigma.zip_map(xi, |s, e| s * e)?)?;
        let (recon, dec_trace) = self.decoder.forward_traced(&z)?;
        let diff = recon.sub(x)?;
        let per_sample = (0..x.rows())
            .map(|i| {
                let rec: f64 = diff.row(i).iter().map(|d| d * d).sum();
                let kl: f64 = mu
                    .row(i)
                    .iter()
                    .zip(logvar.row(i))
                    .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
                    .sum();
                rec + 0.5 * kl
            })
            .collect();
        Ok(VaeLossOutput {
            per_sample,
            mu,
            logvar,
            sigma,
            xi: xi.clone(),
            diff,
            enc_trace,
            dec_trace,
        })
    }
}

pub struct VaeLossOutput {
    pub per_sample: Vec<f64>,
    mu: Matrix,
    logvar: Matrix,
    sigma: Matrix,
    xi: Matrix,
    diff: Matrix,
    enc_trace: Trace,
    dec_trace: Trace,
}

impl VaeLossOutput {
    /// Gradient of `Σ_i w_i·loss_i` with respect to the input, accumulating
    /// parameter gradients into the optional buffers.
    pub fn backward(
        &self,
        vae: &VaeModel,
        weights: &[f64],
        enc_grads: Option<&mut [f64]>,
        dec_grads: Option<&mut [f64]>,
    ) -> Result<Matrix> {
        let n = self.diff.rows();
        if weights.len() != n {
            return Err(Error::shape("vae backward: one weight per sample"));
        }
        let l = vae.latent_dim;
        let mut d_recon = self.diff.clone();
        for (i, w) in weights.iter().enumerate() {
            d_recon.row_mut(i).iter_mut().for_each(|v| *v *= 2.0 * w);
        }
        let dz = vae.decoder.backward_traced(&self.dec_trace, &d_recon, dec_grads)?;
        let mut dh = Matrix::zeros(n, 2 * l);
        for (i, &w) in weights.iter().enumerate() {
            let row = dh.row_mut(i);
            for k in 0..l {
                let dzk = dz.get(i, k);
                let s = self.sigma.get(i, k);
                row[k] = dzk + w * self.mu.get(i, k);
                row[l + k] = dzk * self.xi.get(i, k) * 0.5 * s + 0.5 * w * (self.logvar.get(i, k).exp() - 1.0);
            }
        }
        let dx_enc = vae.encoder.backward_traced(&self.enc_trace, &dh, enc_grads)?;
        dx_enc.sub(&d_recon)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeTrainConfig {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128; 2],
            latent_dim: 128,
            activation: Activation::Relu,
            lr: 1e-4,
            batch_size: 128,
            epochs: 8000,
        }
    }
}

pub const LAMBDA_VAE: f64 = 1.0;

/// Trains a VAE on normalized `s ⧺ a`.
pub fn train_vae(dataset: &DemoDataset, cfg: &VaeTrainConfig, rng: &Rng) -> Result<(VaeModel, TrainLog)> {
    if !(cfg.lr > 0.0) || cfg.batch_size == 0 || cfg.epochs == 0 || cfg.latent_dim == 0 {
        return Err(Error::config("vae lr, batch, epochs and latent dim must be positive"));
    }
    let mut vae = VaeModel::new(
        dataset.norm_stats().clone(),
        &cfg.hidden,
        cfg.latent_dim,
        cfg.activation,
        &mut rng.fork(1),
    )?;
    let mut order_rng = rng.fork(2);
    let mut noise_rng = rng.fork(3);
    let data = dataset.normalized_joint();
    let mut enc_adam = AdamState::for_model(&vae.encoder, cfg.lr);
    let mut dec_adam = AdamState::for_model(&vae.decoder, cfg.lr);
    let mut enc_grads = vec![0.0; vae.encoder.num_params()];
    let mut dec_grads = vec![0.0; vae.decoder.num_params()];
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let mut meter = EpochMeter::default();
        for batch in epoch_batches(data.rows(), cfg.batch_size, &mut order_rng) {
            let x = data.select_rows(&batch);
            let xi = noise_rng.gaussian_matrix(x.rows(), cfg.latent_dim);
            let out = vae.loss(&x, &xi)?;
            let b = x.rows() as f64;
            meter.record("vae", epoch, out.per_sample.iter().sum::<f64>() / b)?;
            let w = vec![1.0 / b; x.rows()];
            out.backward(&vae, &w, Some(&mut enc_grads), Some(&mut dec_grads))?;
            enc_adam.step_slices(vae.encoder.params_mut(), &mut enc_grads)?;
            dec_adam.step_slices(vae.decoder.params_mut(), &mut dec_grads)?;
        }
        meter.finish(&mut log);
    }
    Ok((vae, log))
}

/// Clamped VAE-loss difference between agent and expert pairs, sharing the latent noise.
#[derive(Debug, Clone, Copy)]
pub struct VaeGuidance<'a> {
    pub vae: &'a VaeModel,
}

impl Guidance for VaeGuidance<'_> {
    fn loss_and_grad(&self, states: &Matrix, pred: &Matrix, actions: &Matrix, rng: &mut Rng) -> Result<(f64, Matrix)> {
        let xi = rng.gaussian_matrix(states.rows(), self.vae.latent_dim);
        let agent = self.vae.loss(&Matrix::hcat(&[states, pred])?, &xi)?;
        let expert = self.vae.loss(&Matrix::hcat(&[states, actions])?, &xi)?;
        let (loss, weights) = dm_loss(&agent.per_sample, &expert.per_sample)?;
        let dx = agent.backward(self.vae, &weights, None, None)?;
        Ok((loss, dx.columns(states.cols()..dx.cols())))
    }
}
