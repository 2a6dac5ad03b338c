//! Config-to-recipe mapping: run configs are flat `[section] key = value`
//! files; these readers apply the library defaults, so a config only states
//! what it changes.

use std::path::PathBuf;
use wavectl_core::a2c::{DisturbanceSource, GcpConfig, InputVariant, LoopConfig};
use wavectl_core::config::{ConfigDoc, Section};
use wavectl_core::disturbance::{AxisCorrelation, DisturbanceParams};
use wavectl_core::dynamics::{State, VariationKind, EPISODE_STEPS};
use wavectl_core::error::{Error, Result};
use wavectl_core::exec::Parallelism;
use wavectl_core::harness::Controller;
use wavectl_core::odi::{GcpOdiConfig, OdiSource};
use wavectl_core::sysid::{CollectConfig, SysidTrainConfig};
use wavectl_core::transfer::{TransferAlgorithm, TransferConfig};

pub(crate) fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub(crate) fn req_usize(sec: &Section, key: &str) -> Result<usize> {
    sec.require(key)?;
    Ok(sec.get_usize(key)?.expect("key is present"))
}

pub(crate) fn req_u64(sec: &Section, key: &str) -> Result<u64> {
    sec.require(key)?;
    Ok(sec.get_u64(key)?.expect("key is present"))
}

pub(crate) fn req_f64(sec: &Section, key: &str) -> Result<f64> {
    sec.require(key)?;
    Ok(sec.get_f64(key)?.expect("key is present"))
}

pub(crate) fn req_triple(sec: &Section, key: &str) -> Result<[f64; 3]> {
    sec.require(key)?;
    let v = sec.get_f64_list(key)?.expect("key is present");
    if v.len() != 3 {
        return Err(Error::config(format!(
            "[{}] {key}: expected 3 comma-separated numbers, found {}",
            sec.name,
            v.len()
        )));
    }
    Ok([v[0], v[1], v[2]])
}

/// `[run] mode`: `parallel` (default) or `sequential`.
pub fn parallelism(doc: &ConfigDoc) -> Result<Parallelism> {
    match doc.section("run").and_then(|s| s.get("mode")) {
        None | Some("parallel") => Ok(Parallelism::Parallel),
        Some("sequential") => Ok(Parallelism::Sequential),
        Some(other) => Err(Error::config(format!(
            "[run] mode: unknown mode `{other}` (expected parallel or sequential)"
        ))),
    }
}

fn parse_correlation(sec: &Section, key: &str) -> Result<AxisCorrelation> {
    match sec.get(key) {
        None | Some("independent") => Ok(AxisCorrelation::Independent),
        Some("shared") => Ok(AxisCorrelation::Shared),
        Some(other) => Err(Error::config(format!(
            "[{}] {key}: unknown correlation `{other}` (expected independent or shared)",
            sec.name
        ))),
    }
}

pub fn parse_odi_source(sec: &Section, key: &str) -> Result<Option<OdiSource>> {
    match sec.get(key) {
        None => Ok(None),
        Some("model") => Ok(Some(OdiSource::Model)),
        Some("oracle") => Ok(Some(OdiSource::Oracle)),
        Some(other) => Err(Error::config(format!(
            "[{}] {key}: unknown estimate source `{other}` (expected model or oracle)",
            sec.name
        ))),
    }
}

/// `[disturbance]` knobs, defaulting to the training schedule: enabled,
/// five components per axis, independently drawn axes.
#[derive(Debug)]
pub struct DisturbanceKnobs {
    pub enabled: bool,
    pub k: usize,
    pub correlation: AxisCorrelation,
}

pub fn disturbance_knobs(doc: &ConfigDoc) -> Result<DisturbanceKnobs> {
    let mut knobs = DisturbanceKnobs {
        enabled: true,
        k: 5,
        correlation: AxisCorrelation::Independent,
    };
    if let Some(sec) = doc.section("disturbance") {
        knobs.enabled = sec.bool_or("enabled", true)?;
        knobs.k = sec.usize_or("k", knobs.k)?;
        knobs.correlation = parse_correlation(sec, "correlation")?;
    }
    Ok(knobs)
}

pub fn disturbance_source(doc: &ConfigDoc) -> Result<DisturbanceSource> {
    let knobs = disturbance_knobs(doc)?;
    if !knobs.enabled {
        return Ok(DisturbanceSource::Off);
    }
    Ok(DisturbanceSource::Sampled {
        k: knobs.k,
        correlation: knobs.correlation,
    })
}

/// `[train]` actor-critic loop knobs; anything unstated keeps the library
/// default. `gae_lambda` absent means plain n-step returns.
pub fn loop_config(doc: &ConfigDoc) -> Result<LoopConfig> {
    let base = LoopConfig::default();
    let Some(sec) = doc.section("train") else {
        return Ok(base);
    };
    Ok(LoopConfig {
        n_steps: sec.usize_or("n_steps", base.n_steps)?,
        gamma: sec.f64_or("gamma", base.gamma)?,
        entropy_coef: sec.f64_or("entropy_coef", base.entropy_coef)?,
        value_coef: sec.f64_or("value_coef", base.value_coef)?,
        learning_rate: sec.f64_or("learning_rate", base.learning_rate)?,
        gradient_clip: sec.f64_or("gradient_clip", base.gradient_clip)?,
        gae_lambda: sec.get_f64("gae_lambda")?,
        normalize_advantages: sec.bool_or("normalize_advantages", base.normalize_advantages)?,
        lr_decay: sec.bool_or("lr_decay", base.lr_decay)?,
        total_updates: sec.usize_or("updates", base.total_updates)?,
        log_every: sec.usize_or("log_every", base.log_every)?,
    })
}

/// `[policy]` + `[disturbance]` + `[train]` sections.
pub fn gcp_config(doc: &ConfigDoc) -> Result<GcpConfig> {
    let mut cfg = GcpConfig {
        loopcfg: loop_config(doc)?,
        ..GcpConfig::default()
    };
    let knobs = disturbance_knobs(doc)?;
    cfg.disturbances = knobs.enabled;
    cfg.k = knobs.k;
    cfg.correlation = knobs.correlation;
    if let Some(sec) = doc.section("policy") {
        if let Some(v) = sec.get("variant") {
            cfg.variant = InputVariant::parse(v)?;
        }
        if let Some(v) = sec.get("variation") {
            cfg.variation = VariationKind::parse(v)?;
        }
        cfg.window = sec.usize_or("window", cfg.window)?;
        if let Some(h) = sec.get_usize_list("hidden")? {
            cfg.hidden = h;
        }
        cfg.n_workers = sec.usize_or("workers", cfg.n_workers)?;
    }
    Ok(cfg)
}

/// `[identifier]` section; axis correlation of the generated shards comes
/// from `[disturbance]`.
pub fn odi_config(doc: &ConfigDoc) -> Result<GcpOdiConfig> {
    let mut cfg = GcpOdiConfig::default();
    cfg.gen.correlation = disturbance_knobs(doc)?.correlation;
    if let Some(sec) = doc.section("identifier") {
        cfg.iterations = sec.usize_or("iterations", cfg.iterations)?;
        cfg.hidden = sec.usize_or("hidden", cfg.hidden)?;
        cfg.gen.k_params = sec.usize_or("param_sets", cfg.gen.k_params)?;
        cfg.gen.episodes_per_param =
            sec.usize_or("episodes_per_param", cfg.gen.episodes_per_param)?;
        cfg.gen.steps = sec.usize_or("steps", cfg.gen.steps)?;
        cfg.train.epochs = sec.usize_or("epochs", cfg.train.epochs)?;
        cfg.train.window = sec.usize_or("window", cfg.train.window)?;
        cfg.train.learning_rate = sec.f64_or("learning_rate", cfg.train.learning_rate)?;
        cfg.train.gradient_clip = sec.f64_or("gradient_clip", cfg.train.gradient_clip)?;
        cfg.train.val_fraction = sec.f64_or("val_fraction", cfg.train.val_fraction)?;
        cfg.train.patience = sec.usize_or("patience", cfg.train.patience)?;
        cfg.eval_episodes = sec.usize_or("eval_episodes", cfg.eval_episodes)?;
    }
    Ok(cfg)
}

/// `[dynamics]` section: which ground truth to log from, the collection
/// budget, and the fit hyperparameters.
#[derive(Debug)]
pub struct DynamicsRecipe {
    pub variation: VariationKind,
    pub collect: CollectConfig,
    pub train: SysidTrainConfig,
    pub train_fraction: f64,
}

pub fn dynamics_recipe(doc: &ConfigDoc) -> Result<DynamicsRecipe> {
    let mut r = DynamicsRecipe {
        variation: VariationKind::EmpiricalGroundTruth,
        collect: CollectConfig::default(),
        train: SysidTrainConfig::default(),
        train_fraction: 0.9,
    };
    if let Some(sec) = doc.section("dynamics") {
        if let Some(v) = sec.get("variation") {
            r.variation = VariationKind::parse(v)?;
        }
        r.collect.total_steps = sec.usize_or("total_steps", r.collect.total_steps)?;
        r.collect.trajectory_steps =
            sec.usize_or("trajectory_steps", r.collect.trajectory_steps)?;
        r.collect.safety_box = sec.f64_or("safety_box", r.collect.safety_box)?;
        r.collect.recenter_gain = sec.f64_or("recenter_gain", r.collect.recenter_gain)?;
        if let Some(h) = sec.get_usize_list("hidden")? {
            r.train.hidden = h;
        }
        r.train.epochs = sec.usize_or("epochs", r.train.epochs)?;
        r.train.batch_size = sec.usize_or("batch_size", r.train.batch_size)?;
        r.train.learning_rate = sec.f64_or("learning_rate", r.train.learning_rate)?;
        r.train.gradient_clip = sec.f64_or("gradient_clip", r.train.gradient_clip)?;
        r.train.patience = sec.usize_or("patience", r.train.patience)?;
        r.train_fraction = sec.f64_or("train_fraction", r.train_fraction)?;
    }
    Ok(r)
}

/// An evaluation model reference: a named first-principle variation, or the
/// empirical model from the run directory named by `[source] empirical`.
#[derive(Debug)]
pub enum TargetRef {
    Variation(VariationKind),
    Empirical,
}

fn parse_target(name: &str) -> Result<TargetRef> {
    if name == "empirical" {
        return Ok(TargetRef::Empirical);
    }
    Ok(TargetRef::Variation(VariationKind::parse(name)?))
}

/// `[transfer]` section. The target model and the frozen sources are
/// resolved by the command layer, which owns artifact loading.
#[derive(Debug)]
pub struct TransferRecipe {
    pub algorithm: TransferAlgorithm,
    pub target: TargetRef,
    /// None defers to whether an identifier was supplied.
    pub odi_source: Option<OdiSource>,
    pub mismatch_weight: f64,
    pub feed_combined_to_source: bool,
    pub comp_hidden: Vec<usize>,
    pub comp_features: usize,
    pub n_workers: usize,
    pub episode_steps: usize,
}

pub fn transfer_recipe(doc: &ConfigDoc) -> Result<TransferRecipe> {
    let d = TransferConfig::default();
    let sec = doc.require("transfer")?;
    Ok(TransferRecipe {
        algorithm: TransferAlgorithm::parse(sec.require("algorithm")?)?,
        target: parse_target(sec.require("target")?)?,
        odi_source: parse_odi_source(sec, "odi_source")?,
        mismatch_weight: sec.f64_or("mismatch_weight", d.mismatch_weight)?,
        feed_combined_to_source: sec
            .bool_or("feed_combined_to_source", d.feed_combined_to_source)?,
        comp_hidden: sec.get_usize_list("hidden")?.unwrap_or(d.comp_hidden),
        comp_features: sec.usize_or("features", d.comp_features)?,
        n_workers: sec.usize_or("workers", d.n_workers)?,
        episode_steps: sec.usize_or("episode_steps", d.episode_steps)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Zero,
    Policy,
    GcpOdi,
    Transfer,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Zero => "zero",
            ControllerKind::Policy => "policy",
            ControllerKind::GcpOdi => "gcp_odi",
            ControllerKind::Transfer => "transfer",
        }
    }
}

/// `[evaluate]` or `[rollout]` section: which controller runs against which
/// model, for how long.
#[derive(Debug)]
pub struct EvalRecipe {
    pub controller: ControllerKind,
    pub model: TargetRef,
    pub episodes: usize,
    pub steps: usize,
    /// How many evaluated episodes to export as motion logs.
    pub trajectories: usize,
    pub odi_source: Option<OdiSource>,
}

pub fn eval_recipe(doc: &ConfigDoc, section: &str) -> Result<EvalRecipe> {
    let sec = doc.require(section)?;
    let controller = match sec.require("controller")? {
        "zero" => ControllerKind::Zero,
        "policy" => ControllerKind::Policy,
        "gcp_odi" => ControllerKind::GcpOdi,
        "transfer" => ControllerKind::Transfer,
        other => {
            return Err(Error::config(format!(
                "[{section}] controller: unknown controller `{other}` \
                 (expected zero, policy, gcp_odi or transfer)"
            )))
        }
    };
    Ok(EvalRecipe {
        controller,
        model: parse_target(sec.get("model").unwrap_or("default"))?,
        episodes: sec.usize_or("episodes", 20)?,
        steps: sec.usize_or("steps", EPISODE_STEPS)?,
        trajectories: sec.usize_or("trajectories", 0)?,
        odi_source: parse_odi_source(sec, "odi_source")?,
    })
}

/// `[source]` section: run directories holding previously trained artifacts,
/// resolved relative to the invoking process's working directory.
#[derive(Debug, Default)]
pub struct SourceRefs {
    pub gcp: Option<PathBuf>,
    pub odi: Option<PathBuf>,
    pub transfer: Option<PathBuf>,
    pub empirical: Option<PathBuf>,
}

pub fn source_refs(doc: &ConfigDoc) -> SourceRefs {
    let mut refs = SourceRefs::default();
    if let Some(sec) = doc.section("source") {
        refs.gcp = sec.get("gcp").map(PathBuf::from);
        refs.odi = sec.get("odi").map(PathBuf::from);
        refs.transfer = sec.get("transfer").map(PathBuf::from);
        refs.empirical = sec.get("empirical").map(PathBuf::from);
    }
    refs
}

/// Null baseline: zero wrench every step, so the vehicle drifts under
/// whatever disturbance is active.
pub struct ZeroController;

impl Controller for ZeroController {
    fn begin_episode(&mut self, _true_params: Option<&DisturbanceParams>) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, _state: &State, _step: usize) -> Result<[f64; 3]> {
        Ok([0.0; 3])
    }
}
