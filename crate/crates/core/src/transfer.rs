//! Compensatory-policy transfer onto a changed dynamics model.
//!
//! A policy trained on the first-principle model degrades when the dynamics
//! shift (different physics, or a learned empirical model standing in for
//! hardware). Instead of retraining, a small compensator is trained on the
//! target while the source policy and the disturbance identifier stay
//! frozen. Three combination schemes:
//!
//! - control-action compensation: the compensator's wrench is added to the
//!   source action and the sum saturated; trained on the plain task reward.
//! - transition-mismatch compensation at the control level: same action
//!   combination, but the training reward subtracts the one-step mismatch
//!   between the target and a parallel first-principle prediction.
//! - transition-mismatch compensation at the feature level: the
//!   compensator's features are fused with the frozen policy's penultimate
//!   features by a trainable linear head, initialized so the combined
//!   policy reproduces the frozen one exactly at step zero.
//!
//! Throughout, the identifier is fed the source policy's action, never the
//! combined one: its job is to keep estimating what the source policy is
//! reacting to, uncorrupted by the compensation.

use crate::a2c::{
    reward, sample_initial_state, scale_output_layer, train_a2c, ActionDist, DisturbanceSource,
    EnvStep, GcpPolicy, InputVariant, LoopConfig, MlpModel, PolicyModel, RewardWeights,
    TrainStats, TrainWorker, WorkerEnv,
};
use crate::disturbance::{sample_params_with, DisturbanceParams};
use crate::dynamics::{
    make_default_variation, make_variated, saturate, step_first_principle, wrap_angle,
    DynamicsHandle, ModelVariation, Simulator, State, VariationKind, ACTION_DIM, DT,
    EPISODE_STEPS, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::exec::{stream_rng, Parallelism, Rng};
use crate::harness::Controller;
use crate::neural::{FeedforwardSpec, Mlp, NetworkParams};
use crate::odi::{OdiModel, OdiSource};
use crate::sysid::{wrap_empirical, EmpiricalModel};

/// Per-dimension difference between two states, yaw wrapped so the two sides
/// of the ±π seam don't register as a 2π error.
pub fn state_diff(a: &State, b: &State) -> [f64; STATE_DIM] {
    [
        a.pose[0] - b.pose[0],
        a.pose[1] - b.pose[1],
        wrap_angle(a.pose[2] - b.pose[2]),
        a.vel[0] - b.vel[0],
        a.vel[1] - b.vel[1],
        a.vel[2] - b.vel[2],
    ]
}

pub fn mismatch_norm(e: &[f64; STATE_DIM]) -> f64 {
    e.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Task reward shaped by the transition mismatch: r − w·‖e‖₂.
pub fn mismatch_reward(task_reward: f64, e_next: &[f64; STATE_DIM], weight: f64) -> f64 {
    task_reward - weight * mismatch_norm(e_next)
}

/// Adds the compensatory wrench to the source action and saturates the sum
/// to the executable bounds.
pub fn combine_cac(u_hat: [f64; 3], u_c: [f64; 3], bounds: [f64; 3]) -> [f64; 3] {
    let mut u = [0.0; 3];
    for i in 0..3 {
        u[i] = (u_hat[i] + u_c[i]).clamp(-bounds[i], bounds[i]);
    }
    u
}

/// One-step prediction of the source model, re-synced to the actual target
/// state each step (not free-running). The disturbance input is the wave
/// synthesis from the current parameter estimate, so the prediction is what
/// the source policy had reason to expect.
pub fn parallel_source_step(
    source: &ModelVariation,
    state: &State,
    commanded: [f64; 3],
    disturbance_world: [f64; 3],
) -> State {
    let applied = saturate(source, commanded);
    step_first_principle(source, state, applied, disturbance_world, [0.0; 3], DT)
}

/// The three compensator schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferAlgorithm {
    Cac,
    TmcControl,
    TmcFeature,
}

impl TransferAlgorithm {
    pub fn parse(name: &str) -> Result<Self> {
        match name.replace('-', "_").as_str() {
            "cac" => Ok(TransferAlgorithm::Cac),
            "tmc_control" => Ok(TransferAlgorithm::TmcControl),
            "tmc_feature" => Ok(TransferAlgorithm::TmcFeature),
            other => Err(Error::config(format!(
                "unknown transfer algorithm '{other}' (expected cac, tmc_control or tmc_feature)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TransferAlgorithm::Cac => "cac",
            TransferAlgorithm::TmcControl => "tmc_control",
            TransferAlgorithm::TmcFeature => "tmc_feature",
        }
    }

    /// Whether the training reward carries the mismatch term.
    pub fn uses_mismatch_reward(&self) -> bool {
        !matches!(self, TransferAlgorithm::Cac)
    }
}

/// The frozen source-side bundle everything downstream reads from: the
/// identifier watches the (state, source-action) stream, the source policy
/// acts on the estimate, and the action, the penultimate features and the
/// compensator observation are all exposed per step.
pub struct SourceStack {
    pub gcp: GcpPolicy,
    odi: Option<(OdiModel, NetworkParams)>,
    source: OdiSource,
    hidden: Vec<f64>,
    prev_action: [f64; 3],
    true_params: Option<DisturbanceParams>,
}

/// Everything the source stack yields at one step.
#[derive(Debug, Clone)]
pub struct SourceProducts {
    pub estimate: DisturbanceParams,
    /// Deterministic source action û on the estimate.
    pub source_action: [f64; 3],
    /// Frozen policy's last hidden activation (feature-level fusion input).
    pub features: Vec<f64>,
    /// Compensator observation: the frozen policy's own observation followed
    /// by the normalized source action.
    pub comp_obs: Vec<f64>,
}

impl SourceStack {
    pub fn new(
        gcp: GcpPolicy,
        odi: Option<(OdiModel, NetworkParams)>,
        source: OdiSource,
    ) -> Result<Self> {
        if gcp.obs_spec.variant == InputVariant::StateOnly {
            return Err(Error::config(
                "transfer needs a disturbance-conditioned source policy",
            ));
        }
        match (&odi, source) {
            (None, OdiSource::Model) => {
                return Err(Error::config(
                    "model estimate source needs identifier parameters",
                ));
            }
            (Some((model, _)), _) if model.spec.k != gcp.obs_spec.k => {
                return Err(Error::config(format!(
                    "policy expects k = {} wave components, identifier resolves {}",
                    gcp.obs_spec.k, model.spec.k
                )));
            }
            _ => {}
        }
        let hidden = odi
            .as_ref()
            .map(|(m, _)| m.zero_hidden())
            .unwrap_or_default();
        Ok(SourceStack {
            gcp,
            odi,
            source,
            hidden,
            prev_action: [0.0; 3],
            true_params: None,
        })
    }

    pub fn comp_obs_dim(&self) -> usize {
        self.gcp.obs_spec.dim() + ACTION_DIM
    }

    /// Width of the frozen policy's penultimate layer.
    pub fn feature_dim(&self) -> usize {
        self.gcp
            .model
            .spec
            .hidden_dims
            .last()
            .copied()
            .unwrap_or(self.gcp.model.spec.input_dim)
    }

    pub fn gcp_checksum(&self) -> u64 {
        self.gcp.params.checksum()
    }

    pub fn odi_checksum(&self) -> Option<u64> {
        self.odi.as_ref().map(|(_, p)| p.checksum())
    }

    pub fn begin_episode(&mut self, true_params: Option<&DisturbanceParams>) -> Result<()> {
        if self.source == OdiSource::Oracle && true_params.is_none() {
            return Err(Error::config(
                "oracle estimate source needs the episode's true parameters",
            ));
        }
        if let Some((model, _)) = &self.odi {
            self.hidden = model.zero_hidden();
        }
        self.prev_action = [0.0; 3];
        self.true_params = true_params.cloned();
        Ok(())
    }

    /// Advances the identifier one step on (state, previous source action)
    /// and produces the source action and features for step `t`.
    pub fn advance(&mut self, state: &State, t: usize) -> Result<SourceProducts> {
        let estimate = match self.source {
            OdiSource::Oracle => self
                .true_params
                .clone()
                .ok_or_else(|| Error::state("episode not begun"))?,
            OdiSource::Model => {
                let (model, params) = self.odi.as_ref().expect("validated at construction");
                let input = model.input(state, self.prev_action);
                let (raw, h_new, _, _) = model.step(params, &input, &self.hidden)?;
                self.hidden = h_new;
                model.predict(&raw)?
            }
        };
        let obs = self.gcp.obs_spec.build(state, Some(&estimate), t)?;
        let (raw, cache) = self.gcp.model.forward(&self.gcp.params, &obs)?;
        let source_action = self.gcp.dist.mean_action(&raw);
        let features = cache.penultimate().to_vec();
        let mut comp_obs = obs;
        for i in 0..ACTION_DIM {
            comp_obs.push(source_action[i] / self.gcp.dist.bounds[i]);
        }
        self.prev_action = source_action;
        Ok(SourceProducts {
            estimate,
            source_action,
            features,
            comp_obs,
        })
    }
}

/// Feature-level combination: a compensator network maps the compensator
/// observation to a feature vector (tanh-squashed), and a single trainable
/// linear head maps [frozen features | compensator features] to the raw
/// action. Observations are laid out as [frozen features | compensator
/// observation]; the frozen trunk itself runs in the environment, so no
/// gradient can reach it.
#[derive(Debug, Clone)]
pub struct FusionPolicy {
    pub comp: Mlp,
    pub fuse: Mlp,
    /// Width of the frozen-feature block at the front of the observation.
    pub feature_dim: usize,
}

impl FusionPolicy {
    pub fn new(feature_dim: usize, comp_spec: FeedforwardSpec) -> Result<Self> {
        let fuse_spec = FeedforwardSpec::new(feature_dim + comp_spec.output_dim, &[], ACTION_DIM)?;
        Ok(FusionPolicy {
            comp: Mlp::with_prefix(comp_spec, "comp"),
            fuse: Mlp::with_prefix(fuse_spec, "fusion"),
            feature_dim,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.feature_dim + self.comp.spec.input_dim
    }

    fn split<'a>(&self, obs: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
        if obs.len() != self.obs_dim() {
            return Err(Error::dimension(format!(
                "fusion observation length {} != declared {}",
                obs.len(),
                self.obs_dim()
            )));
        }
        Ok(obs.split_at(self.feature_dim))
    }

    fn fused_input(&self, f_g: &[f64], c_raw: &[f64]) -> Vec<f64> {
        let mut fused = Vec::with_capacity(f_g.len() + c_raw.len());
        fused.extend_from_slice(f_g);
        fused.extend(c_raw.iter().map(|v| v.tanh()));
        fused
    }
}

impl PolicyModel for FusionPolicy {
    fn out_dim(&self) -> usize {
        ACTION_DIM
    }

    fn forward(&self, params: &NetworkParams, obs: &[f64]) -> Result<Vec<f64>> {
        let (f_g, comp_obs) = self.split(obs)?;
        let (c_raw, _) = self.comp.forward(params, comp_obs)?;
        Ok(self.fuse.forward(params, &self.fused_input(f_g, &c_raw))?.0)
    }

    fn backward(
        &self,
        params: &NetworkParams,
        obs: &[f64],
        d_out: &[f64],
        grads: &mut NetworkParams,
    ) -> Result<()> {
        let (f_g, comp_obs) = self.split(obs)?;
        let (c_raw, c_cache) = self.comp.forward(params, comp_obs)?;
        let fused = self.fused_input(f_g, &c_raw);
        let (_, f_cache) = self.fuse.forward(params, &fused)?;
        let d_fused = self.fuse.backward(params, &f_cache, d_out, grads)?;
        // The frozen-feature block is an input, not a parameter: its gradient
        // is dropped. The compensator block chains through the tanh squash.
        let d_c: Vec<f64> = d_fused[self.feature_dim..]
            .iter()
            .zip(fused[self.feature_dim..].iter())
            .map(|(g, c)| g * (1.0 - c * c))
            .collect();
        self.comp.backward(params, &c_cache, &d_c, grads)?;
        Ok(())
    }
}

/// Overwrites the fusion head so the combined policy reproduces the frozen
/// source policy exactly at initialization: the frozen-feature block carries
/// the source output layer unchanged, the compensator block is zero, and the
/// bias is copied. Zeros contribute nothing to the dot products, so the raw
/// outputs match bit for bit.
pub fn identity_fusion_init(
    params: &mut NetworkParams,
    gcp: &GcpPolicy,
    fusion: &FusionPolicy,
) -> Result<()> {
    let out_layer = gcp.model.spec.hidden_dims.len();
    let src_w = gcp.params.get(&format!("policy.l{out_layer}.w"))?;
    let src_b = gcp.params.get(&format!("policy.l{out_layer}.b"))?;
    let h_g = fusion.feature_dim;
    let total = fusion.fuse.spec.input_dim;
    if src_w.dims != [ACTION_DIM, h_g] {
        return Err(Error::dimension(format!(
            "source output layer {:?} does not fit a {h_g}-wide feature block",
            src_w.dims
        )));
    }
    let src_w = src_w.data.clone();
    let src_b = src_b.data.clone();
    {
        let w = params.get_mut("fusion.l0.w")?;
        w.data.fill(0.0);
        for row in 0..ACTION_DIM {
            for col in 0..h_g {
                w.data[row * total + col] = src_w[row * h_g + col];
            }
        }
    }
    params.get_mut("fusion.l0.b")?.data.copy_from_slice(&src_b);
    Ok(())
}

/// Which dynamics the compensator adapts to.
#[derive(Debug, Clone)]
pub enum TargetModel {
    /// A first-principle variation (physics-level shift).
    Variation(VariationKind),
    /// A learned empirical model (stand-in for logged hardware).
    Empirical(EmpiricalModel),
}

impl TargetModel {
    pub fn ctrl_bounds(&self) -> [f64; 3] {
        match self {
            TargetModel::Variation(kind) => make_variated(*kind).ctrl_bounds,
            TargetModel::Empirical(m) => m.ctrl_bounds,
        }
    }

    /// Whether per-worker process-noise streams are needed.
    pub fn needs_noise(&self) -> bool {
        match self {
            TargetModel::Variation(kind) => {
                make_variated(*kind).process_noise_std.iter().any(|&s| s > 0.0)
            }
            TargetModel::Empirical(_) => false,
        }
    }

    pub fn build(&self, noise_rng: Option<Rng>) -> Result<Box<dyn DynamicsHandle>> {
        match self {
            TargetModel::Variation(kind) => Ok(Box::new(Simulator::new(
                make_variated(*kind),
                State::zero(),
                noise_rng,
            )?)),
            TargetModel::Empirical(m) => Ok(Box::new(wrap_empirical(m.clone(), State::zero()))),
        }
    }
}

/// Training environment for the compensator: the frozen source stack runs
/// alongside the target model, and a re-synced first-principle prediction
/// measures the one-step transition mismatch (logged for every algorithm,
/// part of the reward only for the mismatch-compensation variants).
pub struct TransferEnv {
    algorithm: TransferAlgorithm,
    target: Box<dyn DynamicsHandle>,
    stack: SourceStack,
    source_model: ModelVariation,
    weights: RewardWeights,
    mismatch_weight: f64,
    feed_combined: bool,
    source: DisturbanceSource,
    episode_steps: usize,
    params: Option<DisturbanceParams>,
    state: State,
    products: Option<SourceProducts>,
    step: usize,
}

impl TransferEnv {
    pub fn new(
        algorithm: TransferAlgorithm,
        target: Box<dyn DynamicsHandle>,
        stack: SourceStack,
        source: DisturbanceSource,
        mismatch_weight: f64,
        feed_combined: bool,
        episode_steps: usize,
    ) -> Result<Self> {
        if episode_steps == 0 {
            return Err(Error::config("episodes need at least one step"));
        }
        let weights = RewardWeights::default_for(target.ctrl_bounds());
        Ok(TransferEnv {
            algorithm,
            target,
            stack,
            source_model: make_default_variation(),
            weights,
            mismatch_weight,
            feed_combined,
            source,
            episode_steps,
            params: None,
            state: State::zero(),
            products: None,
            step: 0,
        })
    }

    fn disturbance_at(&self, t: usize) -> [f64; 3] {
        match (&self.source, &self.params) {
            (DisturbanceSource::Off, _) => [0.0; 3],
            (DisturbanceSource::Trace(trace), _) => {
                if t < trace.len() {
                    trace.at(t)
                } else {
                    *trace.samples.last().expect("traces are non-empty")
                }
            }
            (_, Some(p)) => p.eval(t as f64 * DT),
            (_, None) => [0.0; 3],
        }
    }

    fn observe(&self, products: &SourceProducts) -> Vec<f64> {
        match self.algorithm {
            TransferAlgorithm::Cac | TransferAlgorithm::TmcControl => products.comp_obs.clone(),
            TransferAlgorithm::TmcFeature => {
                let mut obs =
                    Vec::with_capacity(products.features.len() + products.comp_obs.len());
                obs.extend_from_slice(&products.features);
                obs.extend_from_slice(&products.comp_obs);
                obs
            }
        }
    }
}

impl WorkerEnv for TransferEnv {
    fn reset(&mut self, rng: &mut Rng) -> Result<Vec<f64>> {
        let initial = sample_initial_state(rng, self.target.vel_limits());
        self.target.reset(initial);
        self.state = initial;
        self.step = 0;
        // Draws follow the source task's schedule (the stack's bounds), so
        // the frozen identifier stays in distribution.
        self.params = match &self.source {
            DisturbanceSource::Sampled { k, correlation } => Some(sample_params_with(
                rng,
                self.stack.gcp.dist.bounds,
                *k,
                *correlation,
                1.0,
            )?),
            DisturbanceSource::Fixed(p) => Some(p.clone()),
            DisturbanceSource::Off | DisturbanceSource::Trace(_) => None,
        };
        self.stack.begin_episode(self.params.as_ref())?;
        let products = self.stack.advance(&initial, 0)?;
        let obs = self.observe(&products);
        self.products = Some(products);
        Ok(obs)
    }

    fn step(&mut self, action: [f64; 3], _rng: &mut Rng) -> Result<EnvStep> {
        let products = self
            .products
            .take()
            .ok_or_else(|| Error::state("step before reset"))?;
        let combined = match self.algorithm {
            // The fused head already outputs the full action.
            TransferAlgorithm::TmcFeature => action,
            _ => combine_cac(products.source_action, action, self.target.ctrl_bounds()),
        };
        let t = self.step;
        let d_hat = products.estimate.eval(t as f64 * DT);
        let source_input = if self.feed_combined {
            combined
        } else {
            products.source_action
        };
        let predicted = parallel_source_step(&self.source_model, &self.state, source_input, d_hat);
        let result = self.target.step(combined, self.disturbance_at(t))?;
        self.step += 1;
        let next = result.next_state;
        if !next.is_finite() {
            return Ok(EnvStep {
                obs_next: vec![0.0; self.obs_dim()],
                reward: -100.0,
                done: true,
                task_reward: -100.0,
                mismatch: 0.0,
                aborted: true,
            });
        }
        let e = state_diff(&next, &predicted);
        let m = mismatch_norm(&e);
        let task_reward = reward(&next, combined, &self.weights);
        let reward_value = if self.algorithm.uses_mismatch_reward() {
            mismatch_reward(task_reward, &e, self.mismatch_weight)
        } else {
            task_reward
        };
        self.state = next;
        let done = self.step >= self.episode_steps;
        let next_products = self.stack.advance(&next, self.step)?;
        let obs_next = self.observe(&next_products);
        self.products = Some(next_products);
        Ok(EnvStep {
            obs_next,
            reward: reward_value,
            done,
            task_reward,
            mismatch: m,
            aborted: false,
        })
    }

    fn obs_dim(&self) -> usize {
        match self.algorithm {
            TransferAlgorithm::Cac | TransferAlgorithm::TmcControl => self.stack.comp_obs_dim(),
            TransferAlgorithm::TmcFeature => {
                self.stack.feature_dim() + self.stack.comp_obs_dim()
            }
        }
    }

    fn bounds(&self) -> [f64; 3] {
        self.target.ctrl_bounds()
    }
}

/// Full configuration of a transfer training run.
#[derive(Debug, Clone)]
pub struct TransferConfig {
    pub algorithm: TransferAlgorithm,
    pub target: TargetModel,
    pub disturbances: DisturbanceSource,
    /// Estimate source for the frozen stack: `Model` is the full pipeline,
    /// `Oracle` isolates transfer quality from identification error.
    pub odi_source: OdiSource,
    pub mismatch_weight: f64,
    /// Drive the parallel source model with the combined action instead of
    /// the source action.
    pub feed_combined_to_source: bool,
    pub comp_hidden: Vec<usize>,
    /// Compensator feature width (feature-level variant only).
    pub comp_features: usize,
    pub n_workers: usize,
    pub episode_steps: usize,
    pub train: LoopConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            algorithm: TransferAlgorithm::TmcFeature,
            target: TargetModel::Variation(VariationKind::Hydrodynamics),
            disturbances: DisturbanceSource::Sampled {
                k: 5,
                correlation: crate::disturbance::AxisCorrelation::Independent,
            },
            odi_source: OdiSource::Model,
            mismatch_weight: 1.0,
            feed_combined_to_source: false,
            comp_hidden: vec![128, 128],
            comp_features: 64,
            n_workers: 16,
            episode_steps: EPISODE_STEPS,
            train: LoopConfig::default(),
        }
    }
}

/// A trained compensator bundle plus the audit trail of what stayed frozen.
pub struct TransferArtifacts {
    pub algorithm: TransferAlgorithm,
    /// Trainable tensors only: `comp.*` (+ `fusion.*`), `value.*`, `log_std`.
    pub params: NetworkParams,
    pub comp_spec: FeedforwardSpec,
    pub value_spec: FeedforwardSpec,
    /// Frozen-feature block width (feature-level variant only).
    pub feature_dim: Option<usize>,
    pub mismatch_weight: f64,
    pub stats: TrainStats,
    pub gcp_checksum: u64,
    pub odi_checksum: Option<u64>,
}

/// Trains a compensator against the target model with the source policy and
/// identifier frozen. Only the compensator (+ fusion head), the critic and
/// the exploration log-std receive gradients; the frozen checksums are
/// re-verified after training and recorded in the artifacts.
pub fn train_transfer(
    cfg: &TransferConfig,
    gcp: &GcpPolicy,
    odi: Option<(&OdiModel, &NetworkParams)>,
    master_seed: u64,
    mode: Parallelism,
) -> Result<TransferArtifacts> {
    if cfg.n_workers == 0 {
        return Err(Error::config("need at least one worker"));
    }
    let make_stack = || {
        SourceStack::new(
            gcp.clone(),
            odi.map(|(m, p)| (m.clone(), p.clone())),
            cfg.odi_source,
        )
    };
    let proto = make_stack()?;
    let gcp_checksum = proto.gcp_checksum();
    let odi_checksum = proto.odi_checksum();

    let comp_obs_dim = proto.comp_obs_dim();
    let (comp_spec, fusion) = match cfg.algorithm {
        TransferAlgorithm::Cac | TransferAlgorithm::TmcControl => (
            FeedforwardSpec::new(comp_obs_dim, &cfg.comp_hidden, ACTION_DIM)?,
            None,
        ),
        TransferAlgorithm::TmcFeature => {
            let spec = FeedforwardSpec::new(comp_obs_dim, &cfg.comp_hidden, cfg.comp_features)?;
            let fusion = FusionPolicy::new(proto.feature_dim(), spec.clone())?;
            (spec, Some(fusion))
        }
    };
    let obs_dim = match &fusion {
        None => comp_obs_dim,
        Some(f) => f.obs_dim(),
    };
    let value_spec = FeedforwardSpec::new(obs_dim, &cfg.comp_hidden, 1)?;

    let mut params = NetworkParams::new();
    let mut init_rng = stream_rng(master_seed, "transfer-init", 0);
    params.adopt("comp", comp_spec.init(&mut init_rng))?;
    if let Some(f) = &fusion {
        params.adopt("fusion", f.fuse.spec.init(&mut init_rng))?;
    }
    params.adopt("value", value_spec.init(&mut init_rng))?;
    params.insert("log_std", ActionDist::init_log_std(cfg.target.ctrl_bounds()))?;
    match &fusion {
        None => {
            // Near-zero initial compensation: start at the source policy's
            // behaviour instead of thrashing against random offsets.
            scale_output_layer(&mut params, "comp", cfg.comp_hidden.len(), 0.01)?;
        }
        Some(f) => {
            // The identity head already guarantees the jumpstart; the
            // compensator features stay full-scale so the zero block gets a
            // usable gradient from the first update.
            identity_fusion_init(&mut params, gcp, f)?;
        }
    }

    let mut workers = Vec::with_capacity(cfg.n_workers);
    for w in 0..cfg.n_workers {
        let noise_rng = if cfg.target.needs_noise() {
            Some(stream_rng(master_seed, "transfer-noise", w as u64))
        } else {
            None
        };
        let env = TransferEnv::new(
            cfg.algorithm,
            cfg.target.build(noise_rng)?,
            make_stack()?,
            cfg.disturbances.clone(),
            cfg.mismatch_weight,
            cfg.feed_combined_to_source,
            cfg.episode_steps,
        )?;
        workers.push(TrainWorker::new(
            Box::new(env),
            stream_rng(master_seed, "transfer-worker", w as u64),
        )?);
    }

    let value = MlpModel::new(value_spec.clone(), "value");
    let stats = match &fusion {
        None => {
            let policy = MlpModel::new(comp_spec.clone(), "comp");
            train_a2c(&policy, &value, &mut params, &mut workers, &cfg.train, mode)?
        }
        Some(f) => train_a2c(f, &value, &mut params, &mut workers, &cfg.train, mode)?,
    };

    if gcp.params.checksum() != gcp_checksum
        || odi.map(|(_, p)| p.checksum()) != odi_checksum
    {
        return Err(Error::training(
            "frozen source parameters changed during transfer training",
        ));
    }

    Ok(TransferArtifacts {
        algorithm: cfg.algorithm,
        params,
        comp_spec,
        value_spec,
        feature_dim: fusion.map(|f| f.feature_dim),
        mismatch_weight: cfg.mismatch_weight,
        stats,
        gcp_checksum,
        odi_checksum,
    })
}

/// Deterministic closed-loop controller for an adapted policy: the frozen
/// stack produces the source action and features each step, and the trained
/// compensator modifies the behaviour per its algorithm.
pub struct TransferController {
    algorithm: TransferAlgorithm,
    stack: SourceStack,
    comp: Option<Mlp>,
    fusion: Option<FusionPolicy>,
    params: NetworkParams,
    dist: ActionDist,
}

impl TransferController {
    /// `bounds` are the executable actuator bounds of the evaluation model.
    /// The frozen inputs are checked against the checksums recorded at
    /// training time.
    pub fn new(
        art: &TransferArtifacts,
        gcp: GcpPolicy,
        odi: Option<(OdiModel, NetworkParams)>,
        source: OdiSource,
        bounds: [f64; 3],
    ) -> Result<Self> {
        if gcp.params.checksum() != art.gcp_checksum {
            return Err(Error::config(
                "source policy differs from the one the compensator was trained against",
            ));
        }
        if let (Some((_, p)), Some(expected)) = (&odi, art.odi_checksum) {
            if p.checksum() != expected {
                return Err(Error::config(
                    "identifier differs from the one the compensator was trained against",
                ));
            }
        }
        let stack = SourceStack::new(gcp, odi, source)?;
        let (comp, fusion) = match art.algorithm {
            TransferAlgorithm::Cac | TransferAlgorithm::TmcControl => (
                Some(Mlp::with_prefix(art.comp_spec.clone(), "comp")),
                None,
            ),
            TransferAlgorithm::TmcFeature => {
                let dim = art.feature_dim.ok_or_else(|| {
                    Error::config("feature-level artifacts are missing the feature width")
                })?;
                (None, Some(FusionPolicy::new(dim, art.comp_spec.clone())?))
            }
        };
        Ok(TransferController {
            algorithm: art.algorithm,
            stack,
            comp,
            fusion,
            params: art.params.clone(),
            dist: ActionDist { bounds },
        })
    }
}

impl Controller for TransferController {
    fn begin_episode(&mut self, true_params: Option<&DisturbanceParams>) -> Result<()> {
        self.stack.begin_episode(true_params)
    }

    fn act(&mut self, state: &State, step: usize) -> Result<[f64; 3]> {
        let products = self.stack.advance(state, step)?;
        match self.algorithm {
            TransferAlgorithm::Cac | TransferAlgorithm::TmcControl => {
                let comp = self.comp.as_ref().expect("set per algorithm");
                let (raw, _) = comp.forward(&self.params, &products.comp_obs)?;
                let u_c = self.dist.mean_action(&raw);
                Ok(combine_cac(products.source_action, u_c, self.dist.bounds))
            }
            TransferAlgorithm::TmcFeature => {
                let fusion = self.fusion.as_ref().expect("set per algorithm");
                let mut obs =
                    Vec::with_capacity(products.features.len() + products.comp_obs.len());
                obs.extend_from_slice(&products.features);
                obs.extend_from_slice(&products.comp_obs);
                let raw = fusion.forward(&self.params, &obs)?;
                Ok(self.dist.mean_action(&raw))
            }
        }
    }
}
