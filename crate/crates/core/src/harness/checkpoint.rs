//! Binary checkpoints: magic, length-prefixed `key=value` metadata, then raw parameters.

use std::collections::BTreeMap;
use std::path::Path;

use crate::dbc::Policy;
use crate::diffusion::{DiffusionSchedule, NoiseModel, NoisePredictor};
use crate::error::{Error, Result};
use crate::guidance::{CondDiffusionPolicy, EnergyModel, GanPair, VaeModel};
use crate::numcore::{Activation, MlpModel};

use super::dataset::{DimStats, NormStats};
use super::io::{read_bytes, write_atomic};

pub const MAGIC: &[u8; 8] = b"DBCCKPT1";
const HEADER_LEN: usize = MAGIC.len() + 4;

/// Named networks plus string metadata. Parameters are stored in the order
/// given by the `nets` metadata key.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub nets: Vec<(String, MlpModel)>,
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn split_list<T: std::str::FromStr>(text: &str, key: &str) -> Result<Vec<T>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|x| {
            x.parse()
                .map_err(|_| Error::format(0, format!("bad value in `{key}`: {x}")))
        })
        .collect()
}

impl Checkpoint {
    pub fn new(role: &str, digest: &str) -> Self {
        let mut meta = BTreeMap::new();
        meta.insert("role".into(), role.into());
        meta.insert("digest".into(), digest.into());
        Self { meta, nets: Vec::new() }
    }

    pub fn role(&self) -> &str {
        self.meta.get("role").map(String::as_str).unwrap_or("")
    }

    pub fn digest(&self) -> &str {
        self.meta.get("digest").map(String::as_str).unwrap_or("")
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::format(0, format!("checkpoint metadata lacks `{key}`")))
    }

    pub fn get_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        split_list(self.get(key)?, key)
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::format(0, format!("`{key}` is not a number")))
    }

    pub fn push_net(&mut self, name: &str, net: &MlpModel) {
        self.nets.push((name.to_string(), net.clone()));
        let names: Vec<&str> = self.nets.iter().map(|(n, _)| n.as_str()).collect();
        let names = names.join(",");
        self.set("nets", names);
        self.set(&format!("net.{name}.dims"), join(net.layer_dims()));
        self.set(&format!("net.{name}.activations"), join(net.activations()));
    }

    pub fn net(&self, name: &str) -> Result<&MlpModel> {
        self.nets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::format(0, format!("checkpoint has no network `{name}`")))
    }

    pub fn set_norm(&mut self, norm: &NormStats) {
        self.set("norm.state.mean", join(&norm.state.mean));
        self.set("norm.state.std", join(&norm.state.std));
        self.set("norm.action.mean", join(&norm.action.mean));
        self.set("norm.action.std", join(&norm.action.std));
    }

    pub fn norm(&self) -> Result<NormStats> {
        let dim = |m: &str, s: &str| -> Result<DimStats> {
            let stats = DimStats {
                mean: self.get_list(m)?,
                std: self.get_list(s)?,
            };
            if stats.mean.len() != stats.std.len() {
                return Err(Error::format(0, format!("`{m}` and `{s}` differ in length")));
            }
            Ok(stats)
        };
        Ok(NormStats {
            state: dim("norm.state.mean", "norm.state.std")?,
            action: dim("norm.action.mean", "norm.action.std")?,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta = String::new();
        for (k, v) in &self.meta {
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        let n_params: usize = self.nets.iter().map(|(_, m)| m.num_params()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + 8 * n_params);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        for (_, net) in &self.nets {
            for p in net.params() {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::format(0, "bad checkpoint magic"));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(bytes.len() as u64, "truncated metadata length"));
        }
        let meta_len = u32::from_le_bytes(bytes[MAGIC.len()..HEADER_LEN].try_into().expect("4 bytes")) as usize;
        let meta_end = HEADER_LEN + meta_len;
        if bytes.len() < meta_end {
            return Err(Error::format(bytes.len() as u64, "truncated metadata"));
        }
        let text = std::str::from_utf8(&bytes[HEADER_LEN..meta_end])
            .map_err(|e| Error::format((HEADER_LEN + e.valid_up_to()) as u64, "metadata is not UTF-8"))?;
        let mut meta = BTreeMap::new();
        let mut offset = HEADER_LEN;
        for line in text.split_terminator('\n') {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(offset as u64, "metadata line lacks `=`"))?;
            if meta.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::format(offset as u64, format!("duplicate metadata key `{k}`")));
            }
            offset += line.len() + 1;
        }
        let mut ckpt = Self { meta, nets: Vec::new() };
        let names: Vec<String> = ckpt.get_list("nets")?;
        let mut pos = meta_end;
        for name in names {
            let dims: Vec<usize> = ckpt.get_list(&format!("net.{name}.dims"))?;
            let acts: Vec<Activation> = ckpt.get_list(&format!("net.{name}.activations"))?;
            let mut net = MlpModel::zeros(&dims, &acts)
                .map_err(|e| Error::format(HEADER_LEN as u64, format!("network `{name}`: {e}")))?;
            let end = pos + 8 * net.num_params();
            if bytes.len() < end {
                return Err(Error::format(
                    bytes.len() as u64,
                    format!("truncated parameters for `{name}`: need {} bytes", end - pos),
                ));
            }
            for (p, chunk) in net.params_mut().iter_mut().zip(bytes[pos..end].chunks_exact(8)) {
                *p = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
            pos = end;
            ckpt.nets.push((name, net));
        }
        if pos != bytes.len() {
            return Err(Error::format(pos as u64, "trailing bytes after parameters"));
        }
        Ok(ckpt)
    }

    pub fn ensure_role(&self, roles: &[&str]) -> Result<()> {
        if roles.contains(&self.role()) {
            Ok(())
        } else {
            Err(Error::format(
                HEADER_LEN as u64,
                format!("checkpoint role `{}` is not one of {}", self.role(), roles.join(", ")),
            ))
        }
    }

    fn set_schedule(&mut self, steps: usize, beta_start: f64, beta_end: f64) {
        self.set("schedule.steps", steps);
        self.set("schedule.beta_start", beta_start);
        self.set("schedule.beta_end", beta_end);
    }

    fn schedule(&self) -> Result<DiffusionSchedule> {
        let steps = self.get_f64("schedule.steps")? as usize;
        DiffusionSchedule::new(
            steps,
            self.get_f64("schedule.beta_start")?,
            self.get_f64("schedule.beta_end")?,
        )
        .map_err(|e| Error::format(0, format!("stored schedule: {e}")))
    }

    // Typed constructors and accessors.

    pub fn from_policy(role: &str, digest: &str, policy: &Policy) -> Self {
        let mut c = Self::new(role, digest);
        c.push_net("policy", policy.net());
        c.set_norm(policy.norm());
        c
    }

    pub fn policy(&self) -> Result<Policy> {
        Policy::from_parts(self.net("policy")?.clone(), self.norm()?).map_err(as_format)
    }

    /// `beta_start`/`beta_end` must be the values the schedule was built from.
    pub fn from_noise_model(digest: &str, phi: &NoiseModel, norm: &NormStats, beta_start: f64, beta_end: f64) -> Self {
        let mut c = Self::new("dm", digest);
        c.push_net("phi", phi.net());
        c.set_norm(norm);
        c.set("state_dim", phi.state_dim());
        c.set("action_dim", phi.action_dim());
        c.set("train_noise_level", phi.train_noise_level);
        c.set_schedule(phi.schedule().steps(), beta_start, beta_end);
        c
    }

    /// The stored noise model, frozen, and the data normalization it was trained under.
    pub fn noise_model(&self) -> Result<(NoiseModel, NormStats)> {
        self.ensure_role(&["dm"])?;
        let sd = self.get_f64("state_dim")? as usize;
        let ad = self.get_f64("action_dim")? as usize;
        let mut phi = NoiseModel::from_parts(self.net("phi")?.clone(), sd, ad, self.schedule()?).map_err(as_format)?;
        phi.train_noise_level = self.get_f64("train_noise_level")?;
        Ok((phi.frozen(), self.norm()?))
    }

    pub fn from_energy(role: &str, digest: &str, ebm: &EnergyModel) -> Self {
        let mut c = Self::new(role, digest);
        c.push_net("energy", ebm.net());
        c.set_norm(ebm.norm());
        c
    }

    pub fn energy(&self) -> Result<EnergyModel> {
        EnergyModel::from_parts(self.net("energy")?.clone(), self.norm()?).map_err(as_format)
    }

    pub fn from_vae(role: &str, digest: &str, vae: &VaeModel) -> Self {
        let mut c = Self::new(role, digest);
        c.push_net("encoder", vae.encoder());
        c.push_net("decoder", vae.decoder());
        c.set_norm(vae.norm());
        c
    }

    pub fn vae(&self) -> Result<VaeModel> {
        VaeModel::from_parts(self.net("encoder")?.clone(), self.net("decoder")?.clone(), self.norm()?)
            .map_err(as_format)
    }

    pub fn from_gan(digest: &str, gan: &GanPair) -> Self {
        let mut c = Self::from_policy("gan", digest, &gan.generator);
        c.push_net("discriminator", &gan.discriminator);
        c
    }

    pub fn from_dp(digest: &str, dp: &CondDiffusionPolicy, beta_start: f64, beta_end: f64) -> Self {
        let mut c = Self::new("dp", digest);
        c.push_net("denoiser", dp.net());
        c.set_norm(dp.norm());
        c.set_schedule(dp.schedule().steps(), beta_start, beta_end);
        c
    }

    pub fn dp(&self) -> Result<CondDiffusionPolicy> {
        self.ensure_role(&["dp"])?;
        CondDiffusionPolicy::from_parts(self.net("denoiser")?.clone(), self.schedule()?, self.norm()?)
            .map_err(as_format)
    }
}

fn as_format(e: Error) -> Error {
    match e {
        Error::Format { .. } => e,
        other => Error::format(HEADER_LEN as u64, other.to_string()),
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbc::act;
    use crate::numcore::Rng;

    fn policy() -> Policy {
        let norm = NormStats {
            state: DimStats {
                mean: vec![0.1, -0.3],
                std: vec![1.5, 0.7],
            },
            action: DimStats {
                mean: vec![0.2],
                std: vec![0.9],
            },
        };
        Policy::new(norm, &[5, 4], Activation::Tanh, &mut Rng::new(0)).unwrap()
    }

    #[test]
    fn policy_round_trip_is_byte_and_bit_exact() {
        let p = policy();
        let c = Checkpoint::from_policy("dbc", "abc", &p);
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        let q = back.policy().unwrap();
        assert_eq!(q, p);
        let probe = [0.37, -1.2];
        assert_eq!(act(&q, &probe).unwrap(), act(&p, &probe).unwrap());
        assert_eq!(back.digest(), "abc");
    }

    #[test]
    fn corrupted_inputs_name_offsets() {
        let bytes = Checkpoint::from_policy("bc", "d", &policy()).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(
            Checkpoint::from_bytes(short),
            Err(Error::Format { offset, .. }) if offset == short.len() as u64
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&long),
            Err(Error::Format { offset, .. }) if offset == bytes.len() as u64
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..10]),
            Err(Error::Format { offset: 10, .. })
        ));
    }

    #[test]
    fn dims_mismatch_is_format_error() {
        let mut c = Checkpoint::from_policy("bc", "d", &policy());
        c.set("norm.state.mean", "0,0,0");
        c.set("norm.state.std", "1,1,1");
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert!(matches!(back.policy(), Err(Error::Format { .. })));
    }

    #[test]
    fn noise_model_round_trip() {
        let sched = DiffusionSchedule::new(10, 1e-3, 0.2).unwrap();
        let mut phi = NoiseModel::new(2, 1, &[6], Activation::Relu, sched, &mut Rng::new(1)).unwrap();
        phi.train_noise_level = 0.1;
        let norm = NormStats::identity(2, 1);
        let c = Checkpoint::from_noise_model("d", &phi, &norm, 1e-3, 0.2);
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        let (psi, n2) = back.noise_model().unwrap();
        assert!(psi.is_frozen());
        assert_eq!(psi.net(), phi.net());
        assert_eq!(psi.schedule(), phi.schedule());
        assert_eq!(psi.train_noise_level, 0.1);
        assert_eq!(n2, norm);
        assert!(matches!(
            Checkpoint::from_policy("bc", "d", &policy()).noise_model(),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn multi_net_round_trip() {
        let norm = NormStats::identity(2, 1);
        let vae = VaeModel::new(norm, &[4], 2, Activation::Relu, &mut Rng::new(2)).unwrap();
        let c = Checkpoint::from_vae("vae", "d", &vae);
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.vae().unwrap(), vae);
        assert_eq!(back.to_bytes(), c.to_bytes());
    }
}
