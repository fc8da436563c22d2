//! Baseline learners and alternative guidance densities for comparison with DBC.

mod dp;
mod ebm;
mod gan;
mod ibc;
mod vae;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use dp::{train_diffusion_policy, CondDiffusionPolicy, DpTrainConfig};
pub use ebm::{
    ebm_batch_loss, info_nce_loss, train_ebm, ActionBox, ActionGradEnergy, EbmGuidance, EbmTrainConfig, EnergyFn,
    EnergyModel, LAMBDA_EBM,
};
pub use gan::{disc_loss, gen_loss, sigmoid, softplus, train_gan, GanConfig, GanPair};
pub use ibc::{act_ibc, selection_probs, IbcActor, IbcConfig};
pub use vae::{train_vae, VaeGuidance, VaeLossOutput, VaeModel, VaeTrainConfig, LAMBDA_VAE};

/// Every learner the harness can train and evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Bc,
    Ibc,
    Dp,
    Ebm,
    Vae,
    Gan,
    Dbc,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Bc,
        Method::Ibc,
        Method::Dp,
        Method::Ebm,
        Method::Vae,
        Method::Gan,
        Method::Dbc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bc => "bc",
            Method::Ibc => "ibc",
            Method::Dp => "dp",
            Method::Ebm => "ebm",
            Method::Vae => "vae",
            Method::Gan => "gan",
            Method::Dbc => "dbc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown method `{s}`")))
    }
}
