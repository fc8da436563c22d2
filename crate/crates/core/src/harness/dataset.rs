//! Expert demonstration storage, z-score normalization, and the dataset CSV format.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::textfmt::format_sig;

use super::io::{read_text, write_atomic};

/// Smallest standard deviation stored in [`DimStats`].
pub const STD_FLOOR: f64 = 1e-8;

/// Trajectory fractions used by the dataset-size study.
pub const FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Per-dimension mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct DimStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DimStats {
    /// Identity transform for `dim` coordinates.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn from_rows(data: &Matrix) -> Result<Self> {
        if data.rows() == 0 {
            return Err(Error::config("cannot compute normalization stats of an empty dataset"));
        }
        let n = data.rows() as f64;
        let mean: Vec<f64> = data.col_sums().into_iter().map(|s| s / n).collect();
        let mut var = vec![0.0; data.cols()];
        for row in data.iter_rows() {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn apply_rows(&self, data: &Matrix) -> Result<Matrix> {
        self.map_rows(data, |row| self.apply(row))
    }

    pub fn invert_rows(&self, data: &Matrix) -> Result<Matrix> {
        self.map_rows(data, |row| self.invert(row))
    }

    fn map_rows(&self, data: &Matrix, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Matrix> {
        if data.cols() != self.dim() {
            return Err(Error::shape(format!(
                "normalization stats cover {} dims, data has {}",
                self.dim(),
                data.cols()
            )));
        }
        let mut out = Matrix::zeros(data.rows(), data.cols());
        for (i, row) in data.iter_rows().enumerate() {
            out.row_mut(i).copy_from_slice(&f(row));
        }
        Ok(out)
    }
}

/// Normalization for states and actions, computed on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub state: DimStats,
    pub action: DimStats,
}

impl NormStats {
    pub fn identity(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state: DimStats::identity(state_dim),
            action: DimStats::identity(action_dim),
        }
    }
}

/// One expert `(state, action)` pair at time `t` of trajectory `traj_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoPair {
    pub traj_id: usize,
    pub t: usize,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    state_dim: usize,
    action_dim: usize,
    pairs: Vec<DemoPair>,
    norm_stats: NormStats,
    pub fraction_tag: Option<f64>,
}

pub fn compute_norm_stats(dataset: &DemoDataset) -> Result<NormStats> {
    Ok(NormStats {
        state: DimStats::from_rows(&dataset.states())?,
        action: DimStats::from_rows(&dataset.actions())?,
    })
}

pub fn apply_norm(x: &[f64], stats: &DimStats) -> Vec<f64> {
    stats.apply(x)
}

pub fn invert_norm(z: &[f64], stats: &DimStats) -> Vec<f64> {
    stats.invert(z)
}

impl DemoDataset {
    /// Builds a dataset and computes its normalization stats.
    pub fn new(state_dim: usize, action_dim: usize, pairs: Vec<DemoPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::config("dataset has no pairs"));
        }
        for (i, p) in pairs.iter().enumerate() {
            if p.state.len() != state_dim || p.action.len() != action_dim {
                return Err(Error::shape(format!(
                    "pair {i} has dims ({}, {}), expected ({state_dim}, {action_dim})",
                    p.state.len(),
                    p.action.len()
                )));
            }
        }
        let mut ds = Self {
            state_dim,
            action_dim,
            pairs,
            norm_stats: NormStats::identity(state_dim, action_dim),
            fraction_tag: None,
        };
        ds.norm_stats = compute_norm_stats(&ds)?;
        Ok(ds)
    }

    /// Builds a dataset from raw state and action rows, one trajectory per
    /// row (used for synthetic samples without time structure).
    pub fn from_matrices(states: &Matrix, actions: &Matrix, first_traj: usize) -> Result<Self> {
        if states.rows() != actions.rows() {
            return Err(Error::shape("state and action row counts differ"));
        }
        let pairs = states
            .iter_rows()
            .zip(actions.iter_rows())
            .enumerate()
            .map(|(i, (s, a))| DemoPair {
                traj_id: first_traj + i,
                t: 0,
                state: s.to_vec(),
                action: a.to_vec(),
            })
            .collect();
        Self::new(states.cols(), actions.cols(), pairs)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[DemoPair] {
        &self.pairs
    }

    pub fn norm_stats(&self) -> &NormStats {
        &self.norm_stats
    }

    /// Replaces the stored stats (for example with those of a training split).
    pub fn with_norm_stats(mut self, stats: NormStats) -> Result<Self> {
        if stats.state.dim() != self.state_dim || stats.action.dim() != self.action_dim {
            return Err(Error::shape("normalization stats do not match dataset dims"));
        }
        self.norm_stats = stats;
        Ok(self)
    }

    pub fn trajectory_ids(&self) -> Vec<usize> {
        self.pairs
            .iter()
            .map(|p| p.traj_id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectory_ids().len()
    }

    pub fn states(&self) -> Matrix {
        self.stack(|p| &p.state, self.state_dim)
    }

    pub fn actions(&self) -> Matrix {
        self.stack(|p| &p.action, self.action_dim)
    }

    fn stack(&self, f: impl Fn(&DemoPair) -> &Vec<f64>, dim: usize) -> Matrix {
        let data = self.pairs.iter().flat_map(|p| f(p).iter().copied()).collect();
        Matrix::from_vec(self.pairs.len(), dim, data).expect("pair dims checked at construction")
    }

    pub fn normalized_states(&self) -> Matrix {
        self.norm_stats.state.apply_rows(&self.states()).expect("dims match")
    }

    pub fn normalized_actions(&self) -> Matrix {
        self.norm_stats.action.apply_rows(&self.actions()).expect("dims match")
    }

    /// Normalized `s ⧺ a` rows.
    pub fn normalized_joint(&self) -> Matrix {
        Matrix::hcat(&[&self.normalized_states(), &self.normalized_actions()]).expect("same rows")
    }

    /// Keeps the first `floor(fraction · M)` trajectories (at least one) and
    /// recomputes the stats on the kept pairs.
    pub fn subsample_fraction(&self, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::config(format!("fraction must be in (0, 1], got {fraction}")));
        }
        let ids = self.trajectory_ids();
        let keep = ((fraction * ids.len() as f64).floor() as usize).max(1);
        let kept: BTreeSet<usize> = ids.into_iter().take(keep).collect();
        let pairs = self
            .pairs
            .iter()
            .filter(|p| kept.contains(&p.traj_id))
            .cloned()
            .collect();
        let mut ds = Self::new(self.state_dim, self.action_dim, pairs)?;
        ds.fraction_tag = Some(fraction);
        Ok(ds)
    }

    /// Appends `other`'s pairs and recomputes the stats.
    pub fn concat(&self, other: &DemoDataset) -> Result<Self> {
        if other.state_dim != self.state_dim || other.action_dim != self.action_dim {
            return Err(Error::shape("cannot concatenate datasets of different dims"));
        }
        let pairs = self.pairs.iter().chain(&other.pairs).cloned().collect();
        Self::new(self.state_dim, self.action_dim, pairs)
    }

    pub fn to_csv(&self) -> String {
        let mut header = vec!["traj_id".to_string(), "t".to_string()];
        header.extend((0..self.state_dim).map(|i| format!("s{i}")));
        header.extend((0..self.action_dim).map(|i| format!("a{i}")));
        let mut out = header.join(",");
        out.push('\n');
        for p in &self.pairs {
            let mut cells = vec![p.traj_id.to_string(), p.t.to_string()];
            cells.extend(p.state.iter().chain(&p.action).map(|v| format_sig(*v, 9)));
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.split_inclusive('\n');
        let header_line = lines.next().ok_or_else(|| Error::format(0, "empty dataset file"))?;
        let header: Vec<&str> = header_line.trim_end().split(',').collect();
        if header.len() < 2 || header[0] != "traj_id" || header[1] != "t" {
            return Err(Error::format(0, "dataset header must start with traj_id,t"));
        }
        let state_dim = header.iter().filter(|h| h.starts_with('s')).count();
        let action_dim = header.iter().filter(|h| h.starts_with('a')).count();
        let expected: Vec<String> = ["traj_id".to_string(), "t".to_string()]
            .into_iter()
            .chain((0..state_dim).map(|i| format!("s{i}")))
            .chain((0..action_dim).map(|i| format!("a{i}")))
            .collect();
        if header != expected {
            return Err(Error::format(0, "dataset header is not traj_id,t,s0..,a0.."));
        }

        let mut offset = header_line.len() as u64;
        let mut pairs = Vec::new();
        for line in lines {
            let cells: Vec<&str> = line.trim_end().split(',').collect();
            if cells.len() != expected.len() {
                return Err(Error::format(
                    offset,
                    format!("expected {} fields, found {}", expected.len(), cells.len()),
                ));
            }
            let bad = |what: &str| Error::format(offset, format!("unparseable {what}"));
            let traj_id = cells[0].parse().map_err(|_| bad("traj_id"))?;
            let t = cells[1].parse().map_err(|_| bad("t"))?;
            let values = cells[2..]
                .iter()
                .map(|c| c.parse::<f64>().map_err(|_| bad("value")))
                .collect::<Result<Vec<f64>>>()?;
            pairs.push(DemoPair {
                traj_id,
                t,
                state: values[..state_dim].to_vec(),
                action: values[state_dim..].to_vec(),
            });
            offset += line.len() as u64;
        }
        if pairs.is_empty() {
            return Err(Error::format(offset, "dataset has no rows"));
        }
        Self::new(state_dim, action_dim, pairs)
    }
}

pub fn save_dataset(dataset: &DemoDataset, path: &Path) -> Result<()> {
    write_atomic(path, dataset.to_csv().as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<DemoDataset> {
    DemoDataset::from_csv(&read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;
    use proptest::prelude::*;

    fn pair(traj_id: usize, t: usize, s: &[f64], a: &[f64]) -> DemoPair {
        DemoPair {
            traj_id,
            t,
            state: s.to_vec(),
            action: a.to_vec(),
        }
    }

    fn random_dataset(seed: u64, trajs: usize, len: usize) -> DemoDataset {
        let mut rng = Rng::new(seed);
        let mut pairs = Vec::new();
        for j in 0..trajs {
            for t in 0..len {
                let s: Vec<f64> = (0..3).map(|_| 3.0 * rng.gaussian() + 1.0).collect();
                let a: Vec<f64> = (0..2).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                pairs.push(pair(j, t, &s, &a));
            }
        }
        DemoDataset::new(3, 2, pairs).unwrap()
    }

    #[test]
    fn two_point_stats() {
        let ds = DemoDataset::new(
            2,
            1,
            vec![pair(0, 0, &[0.0, 0.0], &[0.0]), pair(0, 1, &[2.0, 2.0], &[2.0])],
        )
        .unwrap();
        assert_eq!(ds.norm_stats().state.mean, vec![1.0, 1.0]);
        assert_eq!(ds.norm_stats().state.std, vec![1.0, 1.0]);
        assert_eq!(ds.norm_stats().action.std, vec![1.0]);
    }

    #[test]
    fn constant_dim_is_floored_and_normalizes_to_zero() {
        let ds = DemoDataset::new(
            2,
            1,
            vec![pair(0, 0, &[5.0, 0.0], &[1.0]), pair(0, 1, &[5.0, 2.0], &[3.0])],
        )
        .unwrap();
        assert_eq!(ds.norm_stats().state.std[0], STD_FLOOR);
        let z = ds.normalized_states();
        assert_eq!(z.get(0, 0), 0.0);
        assert_eq!(z.get(1, 0), 0.0);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(DemoDataset::new(2, 1, vec![]), Err(Error::Config(_))));
        assert!(DimStats::from_rows(&Matrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn normalized_moments() {
        let ds = random_dataset(1, 10, 50);
        let z = ds.normalized_joint();
        let n = z.rows() as f64;
        for (j, sum) in z.col_sums().into_iter().enumerate() {
            let mean = sum / n;
            assert!(mean.abs() < 1e-9);
            let var = z.iter_rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            assert!((var.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fraction_keeps_whole_trajectories() {
        let ds = random_dataset(2, 10, 7);
        for &(f, trajs) in &[(0.25, 2), (0.5, 5), (0.75, 7), (1.0, 10), (0.01, 1)] {
            let sub = ds.subsample_fraction(f).unwrap();
            assert_eq!(sub.num_trajectories(), trajs);
            assert_eq!(sub.len(), trajs * 7);
            assert_eq!(sub.fraction_tag, Some(f));
        }
        assert!(ds.subsample_fraction(0.0).is_err());
        assert!(ds.subsample_fraction(1.5).is_err());
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let ds = random_dataset(3, 3, 4);
        let text = ds.to_csv();
        assert!(text.starts_with("traj_id,t,s0,s1,s2,a0,a1\n"));
        assert_eq!(text.lines().count(), 13);
        let again = DemoDataset::from_csv(&text).unwrap().to_csv();
        assert_eq!(text, again);
    }

    #[test]
    fn csv_format_errors_carry_offsets() {
        let good = "traj_id,t,s0,a0\n0,0,1,2\n";
        assert!(DemoDataset::from_csv(good).is_ok());
        let err = DemoDataset::from_csv("traj,t,s0,a0\n0,0,1,2\n").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
        let err = DemoDataset::from_csv("traj_id,t,s0,a0\n0,0,1\n").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 16, .. }));
        let err = DemoDataset::from_csv("traj_id,t,s0,a0\n0,0,1,2\n0,1,x,2\n").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 24, .. }));
    }

    #[test]
    fn concat_and_from_matrices() {
        let ds = random_dataset(4, 2, 3);
        let synth = DemoDataset::from_matrices(&ds.states(), &ds.actions(), 100).unwrap();
        assert_eq!(synth.num_trajectories(), 6);
        let both = ds.concat(&synth).unwrap();
        assert_eq!(both.len(), 12);
        assert_eq!(both.num_trajectories(), 8);
    }

    proptest! {
        #[test]
        fn invert_after_apply_is_identity(
            values in prop::collection::vec(-1e3f64..1e3, 3),
            seed in 0u64..1000,
        ) {
            let ds = random_dataset(seed, 2, 5);
            let stats = &ds.norm_stats().state;
            let back = invert_norm(&apply_norm(&values, stats), stats);
            for (a, b) in back.iter().zip(&values) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
