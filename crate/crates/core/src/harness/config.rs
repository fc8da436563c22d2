//! Flat `key = value` experiment configuration with range checks and a content digest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dbc::{DbcConfig, PolicyTrainConfig};
use crate::diffusion::DiffusionTrainConfig;
use crate::envs::{GoalBand, World};
use crate::error::{Error, Result};
use crate::guidance::{DpTrainConfig, EbmTrainConfig, GanConfig, IbcConfig, VaeTrainConfig};
use crate::numcore::Activation;

use super::io::read_text;

#[derive(Debug, Clone, Copy)]
enum Kind {
    Seed,
    Count { min: usize },
    Real { min: f64, max: f64, open_min: bool },
    Flag,
    Dims,
    Reals,
    Choice(&'static [&'static str]),
}

const POSITIVE: Kind = Kind::Real {
    min: 0.0,
    max: f64::INFINITY,
    open_min: true,
};
const NON_NEGATIVE: Kind = Kind::Real {
    min: 0.0,
    max: f64::INFINITY,
    open_min: false,
};
const UNIT: Kind = Kind::Real {
    min: 0.0,
    max: 1.0,
    open_min: true,
};
const ACTIVATIONS: Kind = Kind::Choice(&["relu", "tanh", "leaky_relu"]);

/// Every recognised key with its default value.
const KEYS: &[(&str, &str, Kind)] = &[
    ("seed", "0", Kind::Seed),
    ("env", "maze", Kind::Choice(&["maze", "spiral"])),
    ("demos.episodes", "100", Kind::Count { min: 1 }),
    ("demos.band", "train", Kind::Choice(&["train", "eval"])),
    ("data.fraction", "1", UNIT),
    ("eval.episodes", "100", Kind::Count { min: 1 }),
    ("dm.hidden", "128,128,128,128", Kind::Dims),
    ("dm.activation", "relu", ACTIVATIONS),
    ("dm.lr", "0.0001", POSITIVE),
    ("dm.batch", "128", Kind::Count { min: 1 }),
    ("dm.epochs", "8000", Kind::Count { min: 1 }),
    ("dm.steps", "100", Kind::Count { min: 1 }),
    ("dm.beta_start", "0.001", UNIT),
    ("dm.beta_end", "0.2", UNIT),
    ("dm.noise_level", "0", NON_NEGATIVE),
    ("policy.hidden", "256,256,256", Kind::Dims),
    ("policy.activation", "tanh", ACTIVATIONS),
    ("policy.lr", "0.00005", POSITIVE),
    ("policy.batch", "128", Kind::Count { min: 1 }),
    ("policy.epochs", "2000", Kind::Count { min: 1 }),
    ("dbc.lambda", "30", NON_NEGATIVE),
    ("dbc.use_expert_normalization", "true", Kind::Flag),
    ("dbc.share_noise", "true", Kind::Flag),
    ("dbc.include_bc", "true", Kind::Flag),
    ("ebm.hidden", "128,128,128,128", Kind::Dims),
    ("ebm.lr", "0.0005", POSITIVE),
    ("ebm.batch", "128", Kind::Count { min: 1 }),
    ("ebm.epochs", "8000", Kind::Count { min: 1 }),
    ("ebm.negatives", "64", Kind::Count { min: 1 }),
    ("ebm.lr_decay", "0.99", UNIT),
    ("ebm.decay_every", "100", Kind::Count { min: 1 }),
    ("ebm.lambda", "0.1", NON_NEGATIVE),
    ("ibc.samples", "1000", Kind::Count { min: 1 }),
    ("ibc.iters", "3", Kind::Count { min: 0 }),
    ("ibc.temperature", "1", POSITIVE),
    ("ibc.noise_scales", "0.33,0.11,0.037", Kind::Reals),
    ("vae.hidden", "128,128", Kind::Dims),
    ("vae.latent", "128", Kind::Count { min: 1 }),
    ("vae.lr", "0.0001", POSITIVE),
    ("vae.batch", "128", Kind::Count { min: 1 }),
    ("vae.epochs", "8000", Kind::Count { min: 1 }),
    ("vae.lambda", "1", NON_NEGATIVE),
    ("gan.disc_hidden", "256,256,256", Kind::Dims),
    ("gan.disc_lr", "0.00005", POSITIVE),
    ("gan.lambda", "0.2", NON_NEGATIVE),
    ("dp.hidden", "256,256,256", Kind::Dims),
    ("dp.lr", "0.0001", POSITIVE),
    ("dp.batch", "128", Kind::Count { min: 1 }),
    ("dp.epochs", "2000", Kind::Count { min: 1 }),
    ("dp.steps", "100", Kind::Count { min: 1 }),
    ("sweep.lambdas", "0,3,30,300", Kind::Reals),
    ("sweep.seeds", "3", Kind::Count { min: 1 }),
    ("field.dims", "6,7", Kind::Dims),
    ("field.range", "3", POSITIVE),
    ("field.resolution", "20", Kind::Count { min: 2 }),
    ("field.level", "10", Kind::Count { min: 1 }),
];

fn lookup(key: &str) -> Option<Kind> {
    KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, _, kind)| *kind)
}

fn parse_real(key: &str, text: &str) -> Result<f64> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("{key}: `{text}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::config(format!("{key}: value must be finite")));
    }
    Ok(v)
}

/// Validates `value` for `key` and returns its canonical text.
fn canonical(key: &str, value: &str) -> Result<String> {
    let kind = lookup(key).ok_or_else(|| Error::config(format!("unknown key `{key}`")))?;
    let value = value.trim();
    let bad = |why: &str| Error::config(format!("{key} = {value}: {why}"));
    Ok(match kind {
        Kind::Seed => value
            .parse::<u64>()
            .map_err(|_| bad("expected an unsigned integer"))?
            .to_string(),
        Kind::Count { min } => {
            let n: usize = value.parse().map_err(|_| bad("expected an unsigned integer"))?;
            if n < min {
                return Err(bad(&format!("must be at least {min}")));
            }
            n.to_string()
        }
        Kind::Real { min, max, open_min } => {
            let v = parse_real(key, value)?;
            if v < min || (open_min && v == min) || v > max {
                let lo = if open_min { "(" } else { "[" };
                return Err(bad(&format!("outside {lo}{min}, {max}]")));
            }
            v.to_string()
        }
        Kind::Flag => match value {
            "true" | "false" => value.to_string(),
            _ => return Err(bad("expected true or false")),
        },
        Kind::Dims => {
            let dims = value
                .split(',')
                .map(|d| d.trim().parse::<usize>().ok().filter(|d| *d > 0))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("expected comma-separated positive integers"))?;
            dims.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
        }
        Kind::Reals => {
            if value.is_empty() {
                return Ok(String::new());
            }
            let vals = value
                .split(',')
                .map(|v| parse_real(key, v))
                .collect::<Result<Vec<_>>>()?;
            if vals.iter().any(|v| *v < 0.0) {
                return Err(bad("values must be non-negative"));
            }
            vals.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
        }
        Kind::Choice(options) => {
            if !options.contains(&value) {
                return Err(bad(&format!("expected one of {}", options.join(", "))));
            }
            value.to_string()
        }
    })
}

/// Validated experiment configuration. Every key has a default; files only
/// list overrides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentConfig {
    values: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let values = KEYS
            .iter()
            .map(|(k, v, _)| (k.to_string(), canonical(k, v).expect("defaults are valid")))
            .collect();
        Self { values }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            if seen.insert(key.to_string(), i + 1).is_some() {
                return Err(Error::config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::config(format!("line {}: {}", i + 1, strip_prefix(&e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = canonical(key, value)?;
        self.values.insert(key.to_string(), v);
        Ok(())
    }

    /// Cross-key checks that single-key parsing cannot express.
    pub fn validate(&self) -> Result<()> {
        if self.real("dm.beta_start") >= self.real("dm.beta_end") {
            return Err(Error::config("dm.beta_start must be below dm.beta_end"));
        }
        if !self.flag("dbc.include_bc") && self.real("dbc.lambda") == 0.0 {
            return Err(Error::config("dbc.include_bc = false needs dbc.lambda > 0"));
        }
        if self.reals("ibc.noise_scales").len() != self.count("ibc.iters") {
            return Err(Error::config("ibc.noise_scales needs one entry per ibc.iters"));
        }
        if self.dims("field.dims").len() != 2 {
            return Err(Error::config("field.dims must name exactly two dimensions"));
        }
        if self.reals("sweep.lambdas").is_empty() {
            return Err(Error::config("sweep.lambdas must not be empty"));
        }
        Ok(())
    }

    /// Canonical text: every key in sorted order, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Hex SHA-256 of the canonical text.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_text().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn count(&self, key: &str) -> usize {
        self.get(key).parse().expect("validated count")
    }

    fn real(&self, key: &str) -> f64 {
        self.get(key).parse().expect("validated real")
    }

    fn flag(&self, key: &str) -> bool {
        self.get(key) == "true"
    }

    fn dims(&self, key: &str) -> Vec<usize> {
        self.get(key)
            .split(',')
            .map(|d| d.parse().expect("validated dims"))
            .collect()
    }

    fn reals(&self, key: &str) -> Vec<f64> {
        let v = self.get(key);
        if v.is_empty() {
            return Vec::new();
        }
        v.split(',').map(|x| x.parse().expect("validated reals")).collect()
    }

    fn activation(&self, key: &str) -> Activation {
        self.get(key).parse().expect("validated activation")
    }

    pub fn seed(&self) -> u64 {
        self.get("seed").parse().expect("validated seed")
    }

    pub fn world(&self) -> World {
        World::by_name(self.get("env")).expect("validated env")
    }

    pub fn demo_episodes(&self) -> usize {
        self.count("demos.episodes")
    }

    pub fn demo_band(&self) -> GoalBand {
        self.get("demos.band").parse().expect("validated band")
    }

    pub fn fraction(&self) -> f64 {
        self.real("data.fraction")
    }

    pub fn eval_episodes(&self) -> usize {
        self.count("eval.episodes")
    }

    pub fn diffusion(&self) -> DiffusionTrainConfig {
        DiffusionTrainConfig {
            hidden: self.dims("dm.hidden"),
            activation: self.activation("dm.activation"),
            lr: self.real("dm.lr"),
            batch_size: self.count("dm.batch"),
            epochs: self.count("dm.epochs"),
            steps: self.count("dm.steps"),
            beta_start: self.real("dm.beta_start"),
            beta_end: self.real("dm.beta_end"),
            noise_level: self.real("dm.noise_level"),
        }
    }

    pub fn policy(&self) -> PolicyTrainConfig {
        PolicyTrainConfig {
            hidden: self.dims("policy.hidden"),
            activation: self.activation("policy.activation"),
            lr: self.real("policy.lr"),
            batch_size: self.count("policy.batch"),
            epochs: self.count("policy.epochs"),
        }
    }

    pub fn dbc(&self) -> DbcConfig {
        DbcConfig {
            policy: self.policy(),
            lambda: self.real("dbc.lambda"),
            use_expert_normalization: self.flag("dbc.use_expert_normalization"),
            share_noise: self.flag("dbc.share_noise"),
            include_bc: self.flag("dbc.include_bc"),
        }
    }

    pub fn ebm(&self) -> EbmTrainConfig {
        EbmTrainConfig {
            hidden: self.dims("ebm.hidden"),
            activation: Activation::Relu,
            lr: self.real("ebm.lr"),
            batch_size: self.count("ebm.batch"),
            epochs: self.count("ebm.epochs"),
            negatives: self.count("ebm.negatives"),
            lr_decay: self.real("ebm.lr_decay"),
            decay_every: self.count("ebm.decay_every"),
        }
    }

    pub fn ebm_lambda(&self) -> f64 {
        self.real("ebm.lambda")
    }

    pub fn ibc(&self) -> IbcConfig {
        IbcConfig {
            samples: self.count("ibc.samples"),
            iters: self.count("ibc.iters"),
            temperature: self.real("ibc.temperature"),
            noise_scales: self.reals("ibc.noise_scales"),
        }
    }

    pub fn vae(&self) -> VaeTrainConfig {
        VaeTrainConfig {
            hidden: self.dims("vae.hidden"),
            latent_dim: self.count("vae.latent"),
            activation: Activation::Relu,
            lr: self.real("vae.lr"),
            batch_size: self.count("vae.batch"),
            epochs: self.count("vae.epochs"),
        }
    }

    pub fn vae_lambda(&self) -> f64 {
        self.real("vae.lambda")
    }

    pub fn gan(&self) -> GanConfig {
        GanConfig {
            policy: self.policy(),
            disc_hidden: self.dims("gan.disc_hidden"),
            disc_lr: self.real("gan.disc_lr"),
            lambda: self.real("gan.lambda"),
        }
    }

    pub fn dp(&self) -> DpTrainConfig {
        DpTrainConfig {
            hidden: self.dims("dp.hidden"),
            activation: Activation::Relu,
            lr: self.real("dp.lr"),
            batch_size: self.count("dp.batch"),
            epochs: self.count("dp.epochs"),
            steps: self.count("dp.steps"),
        }
    }

    pub fn sweep_lambdas(&self) -> Vec<f64> {
        self.reals("sweep.lambdas")
    }

    pub fn sweep_seeds(&self) -> usize {
        self.count("sweep.seeds")
    }

    pub fn field_dims(&self) -> Vec<usize> {
        self.dims("field.dims")
    }

    pub fn field_range(&self) -> f64 {
        self.real("field.range")
    }

    pub fn field_resolution(&self) -> usize {
        self.count("field.resolution")
    }

    pub fn field_level(&self) -> usize {
        self.count("field.level")
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
