//! Implicit policy: derivative-free optimization of an energy model at inference time.

use super::ebm::{ActionBox, EnergyFn};
use crate::envs::{Actor, EnvState};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct IbcConfig {
    pub samples: usize,
    pub iters: usize,
    pub temperature: f64,
    /// Perturbation std per iteration as a fraction of the box half-width.
    pub noise_scales: Vec<f64>,
}

impl Default for IbcConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            iters: 3,
            temperature: 1.0,
            noise_scales: vec![0.33, 0.11, 0.037],
        }
    }
}

impl IbcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || !(self.temperature > 0.0) {
            return Err(Error::config("ibc needs samples > 0 and a positive temperature"));
        }
        if self.noise_scales.len() != self.iters {
            return Err(Error::config(format!(
                "ibc has {} iterations but {} noise scales",
                self.iters,
                self.noise_scales.len()
            )));
        }
        Ok(())
    }
}

/// `softmax(−E / T)`.
pub fn selection_probs(energies: &[f64], temperature: f64) -> Vec<f64> {
    let logits: Vec<f64> = energies.iter().map(|e| -e / temperature).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// Multinomial draw of `count` indices with replacement.
fn resample(probs: &[f64], count: usize, rng: &mut Rng) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in probs {
        acc += p;
        cdf.push(acc);
    }
    (0..count)
        .map(|_| {
            let u = rng.next_f64() * acc;
            cdf.partition_point(|c| *c <= u).min(probs.len() - 1)
        })
        .collect()
}

/// Approximate `argmin_a E(s, a)` over the box by iterated resampling and shrinking
/// Gaussian perturbation, then picking the most probable final candidate.
pub fn act_ibc(
    energy: &dyn EnergyFn,
    state: &[f64],
    action_box: &ActionBox,
    cfg: &IbcConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let hw = action_box.half_widths();
    let mut cands = action_box.sample(cfg.samples, rng);
    for scale in &cfg.noise_scales {
        let probs = selection_probs(&energy.energies(state, &cands)?, cfg.temperature);
        let picks = resample(&probs, cfg.samples, rng);
        let mut next = cands.select_rows(&picks);
        for r in 0..next.rows() {
            let row = next.row_mut(r);
            for (j, v) in row.iter_mut().enumerate() {
                *v += scale * hw[j] * rng.gaussian();
            }
            action_box.clamp_row(row);
        }
        cands = next;
    }
    let probs = selection_probs(&energy.energies(state, &cands)?, cfg.temperature);
    let best = probs
        .iter()
        .enumerate()
        .fold(0, |best, (i, p)| if *p > probs[best] { i } else { best });
    Ok(cands.row(best).to_vec())
}

/// Environment actor running `act_ibc` per state with that episode's rng.
pub struct IbcActor<'a> {
    pub energy: &'a dyn EnergyFn,
    pub action_box: ActionBox,
    pub cfg: IbcConfig,
}

impl Actor for IbcActor<'_> {
    fn act_batch(&self, states: &[EnvState], rngs: &mut [Rng]) -> Result<Matrix> {
        let mut out = Matrix::zeros(states.len(), self.action_box.dim());
        for (i, (s, rng)) in states.iter().zip(rngs.iter_mut()).enumerate() {
            let a = act_ibc(self.energy, &s.observation(), &self.action_box, &self.cfg, rng)?;
            out.row_mut(i).copy_from_slice(&a);
        }
        Ok(out)
    }
}
