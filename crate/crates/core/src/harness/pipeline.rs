//! Pipeline stages. Each stage reads its inputs from and writes its artifacts to one directory.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use crate::dbc::{train_bc, train_guided, train_policy, Policy};
use crate::diffusion::{
    field_csv, gradient_field, sample, train_diffusion, FieldSpec, NoiseModel, NoisePredictor, DEFAULT_BETA_END,
    DEFAULT_BETA_START,
};
use crate::envs::{
    collect_demos, evaluate, Actor, Env, EvalReport, GoalBand, MazeExpert, SpiralExpert, World, ACTION_DIM, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::guidance::{
    train_diffusion_policy, train_ebm, train_gan, train_vae, ActionBox, CondDiffusionPolicy, EbmGuidance, EnergyModel,
    IbcActor, Method, VaeGuidance,
};
use crate::numcore::{Rng, Stream};
use crate::textfmt::format_sig;

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use super::config::ExperimentConfig;
use super::dataset::{load_dataset, save_dataset, DemoDataset, FRACTIONS};
use super::io::write_atomic;
use super::report::emit_report;

pub const DEMOS_FILE: &str = "demos.csv";
pub const DM_FILE: &str = "dm.ckpt";
pub const AUGMENTED_FILE: &str = "augmented.csv";
pub const AUGMENT_CKPT: &str = "augment.ckpt";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const FIELD_FILE: &str = "field.csv";

/// Checkpoint written by training `method`.
pub fn checkpoint_file(method: Method) -> String {
    format!("{method}.ckpt")
}

pub fn action_box(world: &World) -> ActionBox {
    ActionBox::symmetric(ACTION_DIM, world.dynamics().max_accel)
}

/// Expert demonstrations for the configured world, drawn from the demos stream.
pub fn demos_for(cfg: &ExperimentConfig) -> Result<DemoDataset> {
    let world = cfg.world();
    let rng = Rng::named(cfg.seed(), Stream::Demos);
    match &world {
        World::Maze(_) => collect_demos(
            &world,
            &MazeExpert::default(),
            cfg.demo_episodes(),
            cfg.demo_band(),
            &rng,
        ),
        World::Spiral(_) => collect_demos(&world, &SpiralExpert, cfg.demo_episodes(), cfg.demo_band(), &rng),
    }
}

pub fn noise_model_for(cfg: &ExperimentConfig, data: &DemoDataset) -> Result<NoiseModel> {
    let (phi, _) = train_diffusion(data, &cfg.diffusion(), &Rng::named(cfg.seed(), Stream::DmTrain))?;
    Ok(phi.frozen())
}

pub fn dbc_policy_for(cfg: &ExperimentConfig, data: &DemoDataset, phi: &NoiseModel) -> Result<Policy> {
    Ok(train_policy(data, phi, &cfg.dbc(), &Rng::named(cfg.seed(), Stream::PolicyTrain))?.0)
}

/// Trains `method` on `data`; `phi` is required for `dbc` only.
pub fn train_method(
    cfg: &ExperimentConfig,
    method: Method,
    data: &DemoDataset,
    phi: Option<&NoiseModel>,
) -> Result<Checkpoint> {
    let digest = cfg.digest();
    let policy_rng = Rng::named(cfg.seed(), Stream::PolicyTrain);
    let aux_rng = Rng::named(cfg.seed(), Stream::Baseline);
    Ok(match method {
        Method::Bc => Checkpoint::from_policy("bc", &digest, &train_bc(data, &cfg.policy(), &policy_rng)?.0),
        Method::Dbc => {
            let phi = phi.ok_or_else(|| Error::Usage("dbc training needs a noise model".into()))?;
            Checkpoint::from_policy("dbc", &digest, &dbc_policy_for(cfg, data, phi)?)
        }
        Method::Ibc => {
            let (ebm, _) = train_ebm(data, &action_box(&cfg.world()), &cfg.ebm(), &aux_rng)?;
            Checkpoint::from_energy("ibc", &digest, &ebm)
        }
        Method::Ebm => {
            let (ebm, _) = train_ebm(data, &action_box(&cfg.world()), &cfg.ebm(), &aux_rng)?;
            let guide = EbmGuidance { ebm: &ebm };
            let (p, _) = train_guided(data, Some((&guide, cfg.ebm_lambda())), true, &cfg.policy(), &policy_rng)?;
            Checkpoint::from_policy("ebm", &digest, &p)
        }
        Method::Vae => {
            let (vae, _) = train_vae(data, &cfg.vae(), &aux_rng)?;
            let guide = VaeGuidance { vae: &vae };
            let (p, _) = train_guided(data, Some((&guide, cfg.vae_lambda())), true, &cfg.policy(), &policy_rng)?;
            Checkpoint::from_policy("vae", &digest, &p)
        }
        Method::Gan => Checkpoint::from_gan(&digest, &train_gan(data, &cfg.gan(), &policy_rng)?.0),
        Method::Dp => {
            let (dp, _) = train_diffusion_policy(data, &cfg.dp(), &aux_rng)?;
            Checkpoint::from_dp(&digest, &dp, DEFAULT_BETA_START, DEFAULT_BETA_END)
        }
    })
}

/// A trained model in the form needed to act.
pub enum TrainedActor {
    Policy(Policy),
    Ibc(EnergyModel),
    Dp(CondDiffusionPolicy),
}

impl TrainedActor {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        match ckpt.role() {
            "bc" | "dbc" | "ebm" | "vae" | "gan" => Ok(TrainedActor::Policy(ckpt.policy()?)),
            "ibc" => Ok(TrainedActor::Ibc(ckpt.energy()?)),
            "dp" => Ok(TrainedActor::Dp(ckpt.dp()?)),
            other => Err(Error::format(0, format!("checkpoint role `{other}` cannot act"))),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        let norm = match self {
            TrainedActor::Policy(p) => p.norm(),
            TrainedActor::Ibc(e) => e.norm(),
            TrainedActor::Dp(d) => d.norm(),
        };
        (norm.state.dim(), norm.action.dim())
    }

    pub fn evaluate(&self, cfg: &ExperimentConfig, band: GoalBand, method: &str, digest: &str) -> Result<EvalReport> {
        if self.dims() != (STATE_DIM, ACTION_DIM) {
            return Err(Error::shape(format!(
                "model maps {:?} but the environment needs ({STATE_DIM}, {ACTION_DIM})",
                self.dims()
            )));
        }
        let world = cfg.world();
        let ibc;
        let actor: &dyn Actor = match self {
            TrainedActor::Policy(p) => p,
            TrainedActor::Dp(d) => d,
            TrainedActor::Ibc(e) => {
                ibc = IbcActor {
                    energy: e,
                    action_box: action_box(&world),
                    cfg: cfg.ibc(),
                };
                &ibc
            }
        };
        let mut report = evaluate(actor, &world, cfg.eval_episodes(), cfg.seed(), band, method)?;
        report.config_digest = digest.to_string();
        Ok(report)
    }
}

fn load_training_data(cfg: &ExperimentConfig, dir: &Path) -> Result<DemoDataset> {
    let data = load_dataset(&dir.join(DEMOS_FILE))?;
    if cfg.fraction() < 1.0 {
        data.subsample_fraction(cfg.fraction())
    } else {
        Ok(data)
    }
}

fn load_noise_model(dir: &Path) -> Result<(NoiseModel, super::dataset::NormStats)> {
    load_checkpoint(&dir.join(DM_FILE))?.noise_model()
}

pub fn gen_demos(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(DEMOS_FILE);
    save_dataset(&demos_for(cfg)?, &path)?;
    Ok(path)
}

pub fn train_dm(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    let data = load_training_data(cfg, dir)?;
    let phi = noise_model_for(cfg, &data)?;
    let d = cfg.diffusion();
    let ckpt = Checkpoint::from_noise_model(&cfg.digest(), &phi, data.norm_stats(), d.beta_start, d.beta_end);
    let path = dir.join(DM_FILE);
    save_checkpoint(&ckpt, &path)?;
    Ok(path)
}

/// DBC policy against the stored noise model, sharing its normalization.
pub fn train_policy_stage(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    let (phi, norm) = load_noise_model(dir)?;
    let data = load_training_data(cfg, dir)?.with_norm_stats(norm)?;
    let ckpt = train_method(cfg, Method::Dbc, &data, Some(&phi))?;
    let path = dir.join(checkpoint_file(Method::Dbc));
    save_checkpoint(&ckpt, &path)?;
    Ok(path)
}

pub fn train_baseline(cfg: &ExperimentConfig, dir: &Path, method: Method) -> Result<PathBuf> {
    if method == Method::Dbc {
        return train_policy_stage(cfg, dir);
    }
    let data = load_training_data(cfg, dir)?;
    let ckpt = train_method(cfg, method, &data, None)?;
    let path = dir.join(checkpoint_file(method));
    save_checkpoint(&ckpt, &path)?;
    Ok(path)
}

/// Evaluates a checkpoint (by default the one for `method`) and writes
/// `eval_<name>_<band>.csv` plus its summary.
pub fn eval_stage(
    cfg: &ExperimentConfig,
    dir: &Path,
    method: Method,
    band: GoalBand,
    checkpoint: Option<&Path>,
) -> Result<EvalReport> {
    let default = dir.join(checkpoint_file(method));
    let path = checkpoint.unwrap_or(&default);
    let ckpt = load_checkpoint(path)?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(method.name())
        .to_string();
    let report = TrainedActor::from_checkpoint(&ckpt)?.evaluate(cfg, band, &name, ckpt.digest())?;
    emit_report(&report, &dir.join(format!("eval_{name}_{band}")))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub seed: u64,
    pub train_success: f64,
    pub eval_success: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("lambda,seed,train_success,eval_success\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.4}",
            r.lambda, r.seed, r.train_success, r.eval_success
        );
    }
    out
}

/// λ sweep over paired seeds `seed, seed+1, ...`: per seed one demo set and
/// one noise model shared by every λ.
pub fn sweep(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for k in 0..cfg.sweep_seeds() as u64 {
        let mut seeded = cfg.clone();
        seeded.set("seed", &(cfg.seed() + k).to_string())?;
        let data = demos_for(&seeded)?;
        let phi = noise_model_for(&seeded, &data)?;
        for lambda in cfg.sweep_lambdas() {
            let mut run = seeded.clone();
            run.set("dbc.lambda", &lambda.to_string())?;
            let policy = TrainedActor::Policy(dbc_policy_for(&run, &data, &phi)?);
            let digest = run.digest();
            let train = policy.evaluate(&run, GoalBand::Train, "dbc", &digest)?;
            let eval = policy.evaluate(&run, GoalBand::Eval, "dbc", &digest)?;
            rows.push(SweepRow {
                lambda,
                seed: run.seed(),
                train_success: train.success_rate,
                eval_success: eval.success_rate,
            });
        }
    }
    write_atomic(&dir.join(SWEEP_FILE), sweep_csv(&rows).as_bytes())?;
    Ok(rows)
}

/// Denoising field of the stored noise model over two normalized coordinates,
/// all others held at the data mean.
pub fn field_stage(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    let (phi, _) = load_noise_model(dir)?;
    let r = cfg.field_range();
    let range: Range<f64> = -r..r;
    let spec = FieldSpec {
        dims: cfg.field_dims(),
        x_range: range.clone(),
        y_range: range,
        resolution: cfg.field_resolution(),
    };
    let level = phi.schedule().level(cfg.field_level())?;
    let rows = gradient_field(&phi, &spec, level, &vec![0.0; phi.data_dim()])?;
    let path = dir.join(FIELD_FILE);
    write_atomic(&path, field_csv(&rows).as_bytes())?;
    Ok(path)
}

/// Samples as many synthetic pairs from the stored noise model as there are
/// real pairs, appends them, and trains BC on the union.
pub fn augment(cfg: &ExperimentConfig, dir: &Path) -> Result<(DemoDataset, PathBuf)> {
    let (phi, norm) = load_noise_model(dir)?;
    let real = load_training_data(cfg, dir)?;
    let joint = sample(&phi, real.len(), &mut Rng::named(cfg.seed(), Stream::Sampling))?;
    let sd = phi.state_dim();
    let states = norm.state.invert_rows(&joint.columns(0..sd))?;
    let actions = norm.action.invert_rows(&joint.columns(sd..phi.data_dim()))?;
    let first = real.trajectory_ids().last().map_or(0, |id| id + 1);
    let synthetic = DemoDataset::from_matrices(&states, &actions, first)?;
    let combined = real.concat(&synthetic)?;
    save_dataset(&combined, &dir.join(AUGMENTED_FILE))?;
    let ckpt = train_method(cfg, Method::Bc, &combined, None)?;
    let path = dir.join(AUGMENT_CKPT);
    save_checkpoint(&ckpt, &path)?;
    Ok((combined, path))
}

/// Writes `demos_f<fraction>.csv` for every configured dataset fraction.
pub fn fractions(dir: &Path) -> Result<Vec<PathBuf>> {
    let data = load_dataset(&dir.join(DEMOS_FILE))?;
    FRACTIONS
        .iter()
        .map(|f| {
            let path = dir.join(format!("demos_f{}.csv", format_sig(*f, 3)));
            save_dataset(&data.subsample_fraction(*f)?, &path)?;
            Ok(path)
        })
        .collect()
}
