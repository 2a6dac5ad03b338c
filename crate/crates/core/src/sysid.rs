//! Empirical dynamics: fit a delta-state network to random-control motion
//! data from a ground-truth simulator and wrap the fit as a drop-in dynamics
//! handle, so transfer experiments can target "the robot as logged" instead
//! of the first-principle model.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::dynamics::{
    make_default_variation, wrap_angle, world_to_body, DynamicsHandle, ModelVariation, Simulator,
    State, StepResult, DT, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, stream_rng, Parallelism, Rng};
use crate::neural::{
    optimize_step, FeedforwardSpec, Mlp, NetworkParams, OptState, OptimizerConfig,
};
use crate::trajectory::Trajectory;

/// Transition input: state followed by the commanded wrench, in the CSV
/// column order `x,y,yaw,vx,vy,yawrate,fx,fy,tau`.
pub const SYSID_INPUT_DIM: usize = STATE_DIM + 3;

/// Random-control data collection settings.
#[derive(Debug, Clone)]
pub struct CollectConfig {
    /// Total steps across all trajectories (4 h at 20 Hz by default).
    pub total_steps: usize,
    /// Steps per trajectory; trajectories are independent and parallel.
    pub trajectory_steps: usize,
    /// Half-width of the position box the recentering controller defends.
    pub safety_box: f64,
    /// Proportional recentering gain, newtons per metre of excursion.
    pub recenter_gain: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            total_steps: 288_000,
            trajectory_steps: 600,
            safety_box: 4.0,
            recenter_gain: 200.0,
        }
    }
}

/// Drives the ground-truth model with uniform random wrenches, overriding the
/// planar force with a proportional pull toward the origin whenever the
/// vehicle strays outside the safety box. Disturbances stay off: the logged
/// water is still.
pub fn collect_random_trajectories(
    ground_truth: &ModelVariation,
    cfg: &CollectConfig,
    master_seed: u64,
    mode: Parallelism,
) -> Result<Vec<Trajectory>> {
    if cfg.total_steps == 0 || cfg.trajectory_steps == 0 {
        return Err(Error::config("collection needs a positive step budget"));
    }
    if cfg.safety_box <= 0.0 || cfg.recenter_gain <= 0.0 {
        return Err(Error::config("safety box and recenter gain must be positive"));
    }
    let n_traj = cfg.total_steps.div_ceil(cfg.trajectory_steps);
    let runs: Vec<Result<Trajectory>> = map_indexed(mode, n_traj, |i| {
        let mut rng = stream_rng(master_seed, "sysid-actions", i as u64);
        let noise_rng = stream_rng(master_seed, "sysid-noise", i as u64);
        let bounds = ground_truth.ctrl_bounds;
        let initial = State::from_pose(
            rng.gen_range(-0.5..0.5) * cfg.safety_box,
            rng.gen_range(-0.5..0.5) * cfg.safety_box,
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        let mut sim = Simulator::new(ground_truth.clone(), initial, Some(noise_rng))?;
        let mut traj = Trajectory::new(DT, initial);
        for _ in 0..cfg.trajectory_steps {
            let state = *sim.state();
            let mut action = [
                rng.gen_range(-bounds[0]..=bounds[0]),
                rng.gen_range(-bounds[1]..=bounds[1]),
                rng.gen_range(-bounds[2]..=bounds[2]),
            ];
            if state.pose[0].abs() > cfg.safety_box || state.pose[1].abs() > cfg.safety_box {
                let pull_world = [
                    -cfg.recenter_gain * state.pose[0],
                    -cfg.recenter_gain * state.pose[1],
                ];
                let pull = world_to_body(state.pose[2], pull_world);
                action[0] = pull[0].clamp(-bounds[0], bounds[0]);
                action[1] = pull[1].clamp(-bounds[1], bounds[1]);
            }
            let result = sim.step(action, [0.0; 3])?;
            if !result.next_state.is_finite() {
                return Err(Error::state("collection trajectory went non-finite"));
            }
            traj.push(action, result.next_state);
        }
        Ok(traj)
    });
    runs.into_iter().collect()
}

/// Per-feature affine normalization, std floored so constant features stay
/// finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose std hit the floor (constant in the fit data).
    pub floored: Vec<usize>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl Normalizer {
    /// Fits mean and population std over the rows selected by `idx`.
    pub fn fit(rows: &[Vec<f64>], idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::state("normalizer fit on an empty selection"));
        }
        let dim = rows[idx[0]].len();
        let n = idx.len() as f64;
        let mut mean = vec![0.0; dim];
        for &i in idx {
            for (m, v) in mean.iter_mut().zip(&rows[i]) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for &i in idx {
            for (j, v) in rows[i].iter().enumerate() {
                let d = v - mean[j];
                var[j] += d * d;
            }
        }
        let mut std = Vec::with_capacity(dim);
        let mut floored = Vec::new();
        for (j, s) in var.iter().enumerate() {
            let sd = (s / n).sqrt();
            if sd < STD_FLOOR {
                std.push(STD_FLOOR);
                floored.push(j);
            } else {
                std.push(sd);
            }
        }
        Ok(Normalizer { mean, std, floored })
    }

    /// The identity transform (mean 0, std 1).
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            floored: Vec::new(),
        }
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }
}

/// Sliced transition pairs with normalization fit on the training split only.
#[derive(Debug, Clone)]
pub struct TransitionDataset {
    /// Raw `[state, action]` rows.
    pub inputs: Vec<Vec<f64>>,
    /// Raw delta-state rows (yaw difference wrapped).
    pub labels: Vec<Vec<f64>>,
    pub input_norm: Normalizer,
    pub label_norm: Normalizer,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
}

impl TransitionDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Slices trajectories into (state, action) -> delta-state pairs and fits
/// normalization statistics on a random training split.
pub fn build_dataset(
    logs: &[Trajectory],
    train_fraction: f64,
    rng: &mut Rng,
) -> Result<TransitionDataset> {
    if !(0.0..1.0).contains(&(1.0 - train_fraction)) || train_fraction <= 0.0 {
        return Err(Error::config("training fraction must be in (0, 1)"));
    }
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for log in logs {
        log.validate()?;
        for (state, action, next) in log.transitions() {
            let mut row = Vec::with_capacity(SYSID_INPUT_DIM);
            row.extend_from_slice(&state.to_array());
            row.extend_from_slice(action);
            inputs.push(row);
            let s = state.to_array();
            let n = next.to_array();
            let mut delta: Vec<f64> = (0..STATE_DIM).map(|j| n[j] - s[j]).collect();
            delta[2] = wrap_angle(n[2] - s[2]);
            labels.push(delta);
        }
    }
    if inputs.len() < 2 {
        return Err(Error::state("dataset needs at least two transitions"));
    }
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    order.shuffle(rng);
    let n_train = ((inputs.len() as f64 * train_fraction).round() as usize)
        .clamp(1, inputs.len() - 1);
    let (train_idx, val_idx) = order.split_at(n_train);
    let input_norm = Normalizer::fit(&inputs, train_idx)?;
    let label_norm = Normalizer::fit(&labels, train_idx)?;
    Ok(TransitionDataset {
        inputs,
        labels,
        input_norm,
        label_norm,
        train_idx: train_idx.to_vec(),
        val_idx: val_idx.to_vec(),
    })
}

#[derive(Debug, Clone)]
pub struct SysidTrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gradient_clip: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for SysidTrainConfig {
    fn default() -> Self {
        SysidTrainConfig {
            hidden: vec![200, 200, 200],
            epochs: 60,
            batch_size: 512,
            learning_rate: 1e-3,
            gradient_clip: 1.0,
            patience: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SysidCurvePoint {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct SysidStats {
    pub curve: Vec<SysidCurvePoint>,
    pub best_val_mse: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Validation error of predicting no motion at all (delta = 0), the bar
    /// any useful model must clear.
    pub zoh_val_mse: f64,
}

/// The fitted one-step model: next state = state + denormalized net output.
#[derive(Debug, Clone)]
pub struct EmpiricalModel {
    pub spec: FeedforwardSpec,
    pub params: NetworkParams,
    pub input_norm: Normalizer,
    pub label_norm: Normalizer,
    pub dt: f64,
    /// Nominal rigid-body constants for disturbance injection; the data does
    /// not identify them separately.
    pub mass: f64,
    pub inertia_yaw: f64,
    pub ctrl_bounds: [f64; 3],
    pub vel_limits: [f64; 3],
}

impl EmpiricalModel {
    fn net(&self) -> Mlp {
        Mlp::with_prefix(self.spec.clone(), "dyn")
    }

    /// One-step prediction. Yaw wraps; velocities clamp to the limits, like
    /// the first-principle step.
    pub fn predict_next(&self, state: &State, action: [f64; 3]) -> Result<State> {
        if !state.is_finite() || !action.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("empirical model input".into()));
        }
        let mut row = Vec::with_capacity(SYSID_INPUT_DIM);
        row.extend_from_slice(&state.to_array());
        row.extend_from_slice(&action);
        let (out, _) = self.net().forward(&self.params, &self.input_norm.normalize(&row))?;
        let delta = self.label_norm.denormalize(&out);
        let s = state.to_array();
        let mut next = [
            s[0] + delta[0],
            s[1] + delta[1],
            wrap_angle(s[2] + delta[2]),
            s[3] + delta[3],
            s[4] + delta[4],
            s[5] + delta[5],
        ];
        for (j, lim) in self.vel_limits.iter().enumerate() {
            next[3 + j] = next[3 + j].clamp(-lim, *lim);
        }
        Ok(State::from_array(&next))
    }
}

fn mse_over(
    net: &Mlp,
    params: &NetworkParams,
    inputs: &[Vec<f64>],
    labels: &[Vec<f64>],
    idx: &[usize],
) -> Result<f64> {
    let mut sum = 0.0;
    for &i in idx {
        let (out, _) = net.forward(params, &inputs[i])?;
        for (p, l) in out.iter().zip(&labels[i]) {
            let d = p - l;
            sum += d * d;
        }
    }
    Ok(sum / (idx.len() * STATE_DIM) as f64)
}

/// Fits the delta-state network by mini-batch gradient descent on the
/// normalized labels, early-stopping on the validation split and restoring
/// the best parameters seen.
pub fn train_dynamics(
    dataset: &TransitionDataset,
    cfg: &SysidTrainConfig,
    rng: &mut Rng,
) -> Result<(EmpiricalModel, SysidStats)> {
    if dataset.train_idx.is_empty() || dataset.val_idx.is_empty() {
        return Err(Error::state("dataset must have both splits populated"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::config("batch size and epochs must be positive"));
    }
    let spec = FeedforwardSpec::new(SYSID_INPUT_DIM, &cfg.hidden, STATE_DIM)?;
    let net = Mlp::with_prefix(spec.clone(), "dyn");
    let mut params = NetworkParams::new();
    params.adopt("dyn", spec.init(rng))?;

    // Everything trains and validates in normalized space.
    let inputs: Vec<Vec<f64>> = dataset
        .inputs
        .iter()
        .map(|r| dataset.input_norm.normalize(r))
        .collect();
    let labels: Vec<Vec<f64>> = dataset
        .labels
        .iter()
        .map(|r| dataset.label_norm.normalize(r))
        .collect();

    let zero_delta = dataset.label_norm.normalize(&vec![0.0; STATE_DIM]);
    let mut zoh_sum = 0.0;
    for &i in &dataset.val_idx {
        for (z, l) in zero_delta.iter().zip(&labels[i]) {
            let d = z - l;
            zoh_sum += d * d;
        }
    }
    let zoh_val_mse = zoh_sum / (dataset.val_idx.len() * STATE_DIM) as f64;

    let opt_cfg = OptimizerConfig::adam(cfg.learning_rate).with_clip(cfg.gradient_clip);
    let mut opt = OptState::new(&params);
    let mut order = dataset.train_idx.clone();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params = params.clone();
    let mut stall = 0usize;
    let mut epochs_run = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = params.zeros_like();
            let scale = 2.0 / (batch.len() * STATE_DIM) as f64;
            for &i in batch {
                let (out, cache) = net.forward(&params, &inputs[i])?;
                let mut d_out = vec![0.0; STATE_DIM];
                for (j, (p, l)) in out.iter().zip(&labels[i]).enumerate() {
                    let d = p - l;
                    loss_sum += d * d;
                    d_out[j] = scale * d;
                }
                net.backward(&params, &cache, &d_out, &mut grads)?;
            }
            optimize_step(&mut params, &grads, &mut opt, &opt_cfg)?;
        }
        if !loss_sum.is_finite() {
            return Err(Error::Training("dynamics fit diverged".into()));
        }
        let train_mse = loss_sum / (dataset.train_idx.len() * STATE_DIM) as f64;
        let val_mse = mse_over(&net, &params, &inputs, &labels, &dataset.val_idx)?;
        curve.push(SysidCurvePoint {
            epoch,
            train_mse,
            val_mse,
        });
        epochs_run = epoch + 1;
        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best_params = params.clone();
            stall = 0;
        } else {
            stall += 1;
            if stall > cfg.patience {
                break;
            }
        }
    }
    let nominal = make_default_variation();
    let model = EmpiricalModel {
        spec,
        params: best_params,
        input_norm: dataset.input_norm.clone(),
        label_norm: dataset.label_norm.clone(),
        dt: DT,
        mass: nominal.mass,
        inertia_yaw: nominal.inertia_yaw,
        ctrl_bounds: nominal.ctrl_bounds,
        vel_limits: nominal.vel_limits,
    };
    Ok((
        model,
        SysidStats {
            curve,
            best_val_mse: best_val,
            best_epoch,
            epochs_run,
            zoh_val_mse,
        },
    ))
}

/// The empirical model as a steppable dynamics handle. The net was fit in
/// still water, so external disturbances enter as first-order acceleration
/// injections (force over nominal mass, torque over nominal inertia) applied
/// to the velocities before the learned delta.
#[derive(Debug, Clone)]
pub struct EmpiricalHandle {
    model: EmpiricalModel,
    state: State,
}

pub fn wrap_empirical(model: EmpiricalModel, initial: State) -> EmpiricalHandle {
    EmpiricalHandle {
        model,
        state: initial,
    }
}

impl DynamicsHandle for EmpiricalHandle {
    fn reset(&mut self, initial: State) {
        self.state = initial;
    }

    fn state(&self) -> &State {
        &self.state
    }

    fn step(&mut self, commanded: [f64; 3], disturbance_world: [f64; 3]) -> Result<StepResult> {
        if !commanded
            .iter()
            .chain(disturbance_world.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite("commanded wrench or disturbance".into()));
        }
        if !self.state.is_finite() {
            return Err(Error::NonFinite("empirical handle state".into()));
        }
        let b = self.model.ctrl_bounds;
        let applied = [
            commanded[0].clamp(-b[0], b[0]),
            commanded[1].clamp(-b[1], b[1]),
            commanded[2].clamp(-b[2], b[2]),
        ];
        let mut bumped = self.state;
        let planar = world_to_body(
            bumped.pose[2],
            [disturbance_world[0], disturbance_world[1]],
        );
        bumped.vel[0] += planar[0] / self.model.mass * self.model.dt;
        bumped.vel[1] += planar[1] / self.model.mass * self.model.dt;
        bumped.vel[2] += disturbance_world[2] / self.model.inertia_yaw * self.model.dt;
        for (j, lim) in self.model.vel_limits.iter().enumerate() {
            bumped.vel[j] = bumped.vel[j].clamp(-lim, *lim);
        }
        self.state = self.model.predict_next(&bumped, applied)?;
        Ok(StepResult {
            next_state: self.state,
            applied_control: applied,
            applied_disturbance: disturbance_world,
        })
    }

    fn ctrl_bounds(&self) -> [f64; 3] {
        self.model.ctrl_bounds
    }

    fn vel_limits(&self) -> [f64; 3] {
        self.model.vel_limits
    }

    fn dt(&self) -> f64 {
        self.model.dt
    }

    fn clone_handle(&self) -> Box<dyn DynamicsHandle> {
        Box::new(self.clone())
    }
}
