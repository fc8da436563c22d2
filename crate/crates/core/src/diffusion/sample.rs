//! Reverse-process sampling and diagnostics built on it.

use std::ops::Range;

use super::model::{NoiseModel, NoisePredictor};
use super::schedule::{forward_noise, NoiseLevel};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};
use crate::textfmt::format_sig;

/// Runs the reverse chain from level `from` down to a clean sample.
///
/// With `stochastic` false every `σ_n` is treated as 0.
pub fn reverse_chain<P: NoisePredictor + ?Sized>(
    phi: &P,
    x: Matrix,
    from: NoiseLevel,
    stochastic: bool,
    rng: &mut Rng,
) -> Result<Matrix> {
    reverse_with(phi, x, from, stochastic, |_| rng.gaussian())
}

/// Like [`reverse_chain`], but row `i` draws its noise from `rngs[i]`.
pub fn reverse_chain_rows<P: NoisePredictor + ?Sized>(
    phi: &P,
    x: Matrix,
    from: NoiseLevel,
    stochastic: bool,
    rngs: &mut [Rng],
) -> Result<Matrix> {
    if rngs.len() != x.rows() {
        return Err(Error::shape("reverse chain needs one rng per row"));
    }
    reverse_with(phi, x, from, stochastic, |r| rngs[r].gaussian())
}

fn reverse_with<P: NoisePredictor + ?Sized>(
    phi: &P,
    mut x: Matrix,
    from: NoiseLevel,
    stochastic: bool,
    mut draw: impl FnMut(usize) -> f64,
) -> Result<Matrix> {
    if x.cols() != phi.data_dim() {
        return Err(Error::shape("reverse chain input width differs from model data dim"));
    }
    let sched = phi.schedule();
    let cols = x.cols().max(1);
    for step in (1..=from.get()).rev() {
        let n = sched.level(step)?;
        let levels = vec![n; x.rows()];
        let eps_hat = phi.predict_noise(&x, &levels)?;
        let inv_sqrt_alpha = 1.0 / sched.alpha(n).sqrt();
        let coef = sched.beta(n) / (1.0 - sched.alpha_bar(n)).sqrt();
        let sigma = if stochastic && step > 1 { sched.sigma(n) } else { 0.0 };
        for (k, (xv, e)) in x.as_mut_slice().iter_mut().zip(eps_hat.as_slice()).enumerate() {
            *xv = inv_sqrt_alpha * (*xv - coef * e);
            if sigma > 0.0 {
                *xv += sigma * draw(k / cols);
            }
        }
    }
    Ok(x)
}

/// Ancestral samples of the full data vector, starting from `x_N ~ N(0, I)`.
pub fn sample<P: NoisePredictor + ?Sized>(phi: &P, count: usize, rng: &mut Rng) -> Result<Matrix> {
    let x_n = rng.gaussian_matrix(count, phi.data_dim());
    reverse_chain(phi, x_n, phi.schedule().max_level(), true, rng)
}

/// Noises each row to level `N/2`, denoises deterministically, and returns
/// the mean squared error over the action columns.
pub fn reconstruction_mse(phi: &NoiseModel, data: &Matrix, rng: &mut Rng) -> Result<f64> {
    if data.cols() != phi.data_dim() {
        return Err(Error::shape("reconstruction data width differs from model data dim"));
    }
    if data.rows() == 0 {
        return Ok(0.0);
    }
    let half = phi.schedule().level((phi.schedule().steps() / 2).max(1))?;
    let eps = rng.gaussian_matrix(data.rows(), data.cols());
    let x_n = forward_noise(data, &vec![half; data.rows()], &eps, phi.schedule())?;
    let recon = reverse_chain(phi, x_n, half, false, rng)?;
    let actions = phi.state_dim()..phi.data_dim();
    let diff = recon.columns(actions.clone()).sub(&data.columns(actions))?;
    Ok(diff.map(|v| v * v).mean())
}

/// Regular grid over two coordinates of the data vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub dims: Vec<usize>,
    pub x_range: Range<f64>,
    pub y_range: Range<f64>,
    pub resolution: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldRow {
    pub x: f64,
    pub y: f64,
    pub dx: f64,
    pub dy: f64,
}

/// Denoising direction `−ε̂` at every grid point, with the remaining
/// coordinates taken from `fixed` (a full data vector).
pub fn gradient_field<P: NoisePredictor + ?Sized>(
    phi: &P,
    spec: &FieldSpec,
    n: NoiseLevel,
    fixed: &[f64],
) -> Result<Vec<FieldRow>> {
    let &[dx_dim, dy_dim] = spec.dims.as_slice() else {
        return Err(Error::config(format!(
            "gradient field needs exactly 2 grid dims, got {}",
            spec.dims.len()
        )));
    };
    let dim = phi.data_dim();
    if fixed.len() != dim {
        return Err(Error::shape(format!(
            "fixed point has {} coords, model expects {dim}",
            fixed.len()
        )));
    }
    if dx_dim >= dim || dy_dim >= dim || dx_dim == dy_dim {
        return Err(Error::config("grid dims must be distinct data coordinates"));
    }
    if spec.resolution < 2 {
        return Err(Error::config("grid resolution must be at least 2"));
    }
    phi.schedule().level(n.get())?;

    let r = spec.resolution;
    let lerp = |range: &Range<f64>, i: usize| range.start + (range.end - range.start) * i as f64 / (r - 1) as f64;
    let mut points = Matrix::zeros(r * r, dim);
    for iy in 0..r {
        for ix in 0..r {
            let row = points.row_mut(iy * r + ix);
            row.copy_from_slice(fixed);
            row[dx_dim] = lerp(&spec.x_range, ix);
            row[dy_dim] = lerp(&spec.y_range, iy);
        }
    }
    let eps_hat = phi.predict_noise(&points, &vec![n; r * r])?;
    Ok((0..r * r)
        .map(|i| FieldRow {
            x: points.get(i, dx_dim),
            y: points.get(i, dy_dim),
            dx: -eps_hat.get(i, dx_dim),
            dy: -eps_hat.get(i, dy_dim),
        })
        .collect())
}

pub fn field_csv(rows: &[FieldRow]) -> String {
    let mut out = String::from("x,y,dx,dy\n");
    for r in rows {
        let cells = [r.x, r.y, r.dx, r.dy].map(|v| format_sig(v, 6));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::{DiffusionSchedule, EMBED_DIM};
    use crate::diffusion::train::{train_diffusion_on, DiffusionTrainConfig};
    use crate::numcore::{Activation, MlpModel};

    /// `ε̂ = x_n / sqrt(1 − ᾱ_n)`: the exact predictor for data at the origin.
    struct OriginOracle(DiffusionSchedule, usize);

    impl NoisePredictor for OriginOracle {
        fn data_dim(&self) -> usize {
            self.1
        }
        fn schedule(&self) -> &DiffusionSchedule {
            &self.0
        }
        fn predict_noise(&self, x_n: &Matrix, levels: &[NoiseLevel]) -> Result<Matrix> {
            let mut out = x_n.clone();
            for (i, &n) in levels.iter().enumerate() {
                let s = 1.0 / (1.0 - self.0.alpha_bar(n)).sqrt();
                out.row_mut(i).iter_mut().for_each(|v| *v *= s);
            }
            Ok(out)
        }
    }

    fn cfg() -> DiffusionTrainConfig {
        DiffusionTrainConfig {
            hidden: vec![32, 32],
            lr: 2e-3,
            batch_size: 64,
            epochs: 40,
            steps: 20,
            beta_start: 1e-2,
            beta_end: 0.4,
            ..DiffusionTrainConfig::default()
        }
    }

    #[test]
    fn oracle_sampler_collapses_to_origin() {
        let oracle = OriginOracle(DiffusionSchedule::default_schedule(), 3);
        let x = sample(&oracle, 200, &mut Rng::new(0)).unwrap();
        assert!(x.is_finite());
        assert!(x.as_slice().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn trained_on_origin_sample_mean_near_origin() {
        let data = Matrix::zeros(512, 2);
        let (phi, _) = train_diffusion_on(&data, 1, &cfg(), &Rng::new(1)).unwrap();
        let x = sample(&phi, 1000, &mut Rng::new(2)).unwrap();
        for m in x.col_sums() {
            assert!((m / 1000.0).abs() < 0.1, "mean {m}");
        }
    }

    #[test]
    fn sampler_is_finite_and_seeded() {
        let mut rng = Rng::new(3);
        let phi = NoiseModel::new(
            2,
            2,
            &[16],
            Activation::Relu,
            DiffusionSchedule::default_schedule(),
            &mut rng,
        )
        .unwrap();
        let a = sample(&phi, 50, &mut Rng::new(4)).unwrap();
        let b = sample(&phi, 50, &mut Rng::new(4)).unwrap();
        assert!(a.is_finite());
        assert_eq!(a, b);
        assert_eq!(a.shape(), (50, 4));
    }

    #[test]
    fn reconstruction_of_repeated_pair_with_oracle_model() {
        // data all at the origin: the origin oracle reconstructs exactly
        let sched = DiffusionSchedule::new(20, 1e-2, 0.4).unwrap();
        let oracle = OriginOracle(sched.clone(), 3);
        let data = Matrix::zeros(10, 3);
        let half = sched.level(10).unwrap();
        let mut rng = Rng::new(5);
        let eps = rng.gaussian_matrix(10, 3);
        let x_n = forward_noise(&data, &[half; 10], &eps, &sched).unwrap();
        let back = reverse_chain(&oracle, x_n, half, false, &mut rng).unwrap();
        assert!(back.as_slice().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn training_improves_reconstruction() {
        let data = Matrix::from_vec(256, 2, [0.5, -0.5].repeat(256)).unwrap();
        let mut rng = Rng::new(6);
        let untrained =
            NoiseModel::new(1, 1, &[32, 32], Activation::Relu, cfg().schedule().unwrap(), &mut rng).unwrap();
        let (trained, _) = train_diffusion_on(&data, 1, &cfg(), &Rng::new(7)).unwrap();
        let before = reconstruction_mse(&untrained, &data, &mut Rng::new(8)).unwrap();
        let after = reconstruction_mse(&trained, &data, &mut Rng::new(8)).unwrap();
        assert!(after <= before, "{after} > {before}");
        assert!(after < 0.05, "{after}");
    }

    fn grid(dims: Vec<usize>, resolution: usize) -> FieldSpec {
        FieldSpec {
            dims,
            x_range: -1.0..1.0,
            y_range: -1.0..1.0,
            resolution,
        }
    }

    #[test]
    fn field_cardinality_zero_model_and_dims() {
        let sched = DiffusionSchedule::default_schedule();
        let net = MlpModel::zeros(&[2 + EMBED_DIM, 8, 2], &[Activation::Relu]).unwrap();
        let phi = NoiseModel::from_parts(net, 1, 1, sched.clone()).unwrap();
        let rows = gradient_field(&phi, &grid(vec![0, 1], 20), sched.level(10).unwrap(), &[0.0, 0.0]).unwrap();
        assert_eq!(rows.len(), 400);
        assert!(rows.iter().all(|r| r.dx == 0.0 && r.dy == 0.0));
        let bad = gradient_field(&phi, &grid(vec![0], 20), sched.level(10).unwrap(), &[0.0, 0.0]);
        assert!(matches!(bad, Err(Error::Config(_))));
    }

    #[test]
    fn field_points_toward_origin_after_training() {
        let data = Matrix::zeros(512, 2);
        let (phi, _) = train_diffusion_on(&data, 1, &cfg(), &Rng::new(9)).unwrap();
        let n = phi.schedule().level(5).unwrap();
        let rows = gradient_field(&phi, &grid(vec![0, 1], 20), n, &[0.0, 0.0]).unwrap();
        let inward = rows.iter().filter(|r| -(r.x * r.dx + r.y * r.dy) > 0.0).count();
        assert!(inward as f64 >= 0.9 * rows.len() as f64, "{inward}");
    }

    #[test]
    fn field_csv_format() {
        let rows = [FieldRow {
            x: 0.5,
            y: -1.0,
            dx: 1.0 / 3.0,
            dy: 2e-7,
        }];
        assert_eq!(field_csv(&rows), "x,y,dx,dy\n0.5,-1,0.333333,2e-07\n");
    }
}
