//! Deterministic MLP policy operating in normalized coordinates.

use crate::envs::{observations, Actor, EnvState};
use crate::error::{Error, Result};
use crate::harness::NormStats;
use crate::numcore::{Activation, Matrix, MlpModel, Rng};

/// `π(s)`: normalized state in, normalized action out; `act` handles the
/// conversion from and to raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    net: MlpModel,
    norm: NormStats,
}

impl Policy {
    pub fn new(norm: NormStats, hidden: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        let net = MlpModel::with_hidden(norm.state.dim(), hidden, norm.action.dim(), activation, rng)?;
        Self::from_parts(net, norm)
    }

    pub fn from_parts(net: MlpModel, norm: NormStats) -> Result<Self> {
        if net.input_dim() != norm.state.dim() || net.output_dim() != norm.action.dim() {
            return Err(Error::shape(format!(
                "policy net maps {} -> {}, normalization expects {} -> {}",
                net.input_dim(),
                net.output_dim(),
                norm.state.dim(),
                norm.action.dim()
            )));
        }
        Ok(Self { net, norm })
    }

    pub fn net(&self) -> &MlpModel {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut MlpModel {
        &mut self.net
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Normalized actions for normalized states.
    pub fn predict_normalized(&self, states: &Matrix) -> Result<Matrix> {
        self.net.predict(states)
    }

    /// Raw actions for raw state rows.
    pub fn act_rows(&self, states: &Matrix) -> Result<Matrix> {
        let z = self.norm.state.apply_rows(states)?;
        self.norm.action.invert_rows(&self.net.predict(&z)?)
    }
}

/// Single forward pass for one raw state.
pub fn act(policy: &Policy, state: &[f64]) -> Result<Vec<f64>> {
    if state.len() != policy.state_dim() {
        return Err(Error::shape(format!(
            "state has {} dims, policy expects {}",
            state.len(),
            policy.state_dim()
        )));
    }
    Ok(policy.act_rows(&Matrix::row_vector(state))?.into_vec())
}

impl Actor for Policy {
    fn act_batch(&self, states: &[EnvState], _rngs: &mut [Rng]) -> Result<Matrix> {
        self.act_rows(&observations(states))
    }
}
