//! Planar rigid-body dynamics for a thruster-actuated vehicle, with a family
//! of model variations (mass, geometry, hydrodynamics, limits, actuation
//! offset, latency, process noise) used to separate training models from
//! evaluation models, plus a pluggable step interface that the learned
//! empirical model also satisfies.
//!
//! Conventions: pose (x, y, yaw) lives in the world frame, velocity
//! (vx, vy, yaw rate) in the body frame. Disturbance wrenches are specified
//! in the world frame and rotated into the body before integration; the
//! torque component is frame-invariant in the plane.

use crate::error::{Error, Result};
use crate::exec::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::VecDeque;
use std::f64::consts::PI;

pub const STATE_DIM: usize = 6;
pub const ACTION_DIM: usize = 3;

/// Simulation timestep in seconds.
pub const DT: f64 = 0.05;
/// Episode length in control steps.
pub const EPISODE_STEPS: usize = 200;
/// Episodes terminate early beyond this distance from the target.
pub const DIVERGENCE_RADIUS: f64 = 10.0;

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = a % two_pi;
    if r <= -PI {
        r += two_pi;
    } else if r > PI {
        r -= two_pi;
    }
    r
}

/// Body -> world rotation of a planar vector.
pub fn body_to_world(yaw: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = yaw.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// World -> body rotation of a planar vector.
pub fn world_to_body(yaw: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = yaw.sin_cos();
    [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
}

/// Full vehicle state: world pose and body velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct State {
    pub pose: [f64; 3],
    pub vel: [f64; 3],
}

impl State {
    pub fn zero() -> Self {
        State::default()
    }

    pub fn from_pose(x: f64, y: f64, yaw: f64) -> Self {
        State {
            pose: [x, y, yaw],
            vel: [0.0; 3],
        }
    }

    /// Planar distance from the origin (the regulation target).
    pub fn distance(&self) -> f64 {
        (self.pose[0] * self.pose[0] + self.pose[1] * self.pose[1]).sqrt()
    }

    /// Flat [x, y, yaw, vx, vy, yawrate] layout used by logs and models.
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.pose[0],
            self.pose[1],
            self.pose[2],
            self.vel[0],
            self.vel[1],
            self.vel[2],
        ]
    }

    pub fn from_array(a: &[f64; STATE_DIM]) -> Self {
        State {
            pose: [a[0], a[1], a[2]],
            vel: [a[3], a[4], a[5]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pose.iter().chain(self.vel.iter()).all(|v| v.is_finite())
    }
}

/// Physical and actuation parameters of one model instance. The baseline
/// plus an edited copy per named variation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelVariation {
    pub mass: f64,
    pub inertia_yaw: f64,
    /// Hull bounding box (length, width, height) in metres; sets inertia.
    pub geometry: [f64; 3],
    pub hydrodynamics_enabled: bool,
    /// Added-mass fractions of (mass, mass, inertia). Active only when
    /// hydrodynamics are enabled.
    pub added_mass: [f64; 3],
    pub drag_linear: [f64; 3],
    pub drag_quadratic: [f64; 3],
    /// Symmetric body-velocity limits (vx, vy, yaw rate).
    pub vel_limits: [f64; 3],
    /// Symmetric wrench saturation (Fx, Fy, Tz) in N / N·m.
    pub ctrl_bounds: [f64; 3],
    /// Constant actuation bias as a signed fraction of each bound, added
    /// before saturation.
    pub ctrl_offset_frac: f64,
    /// Actuation delay in seconds; must be a whole number of steps.
    pub ctrl_latency: f64,
    /// Per-axis std of additive body-wrench noise; zero disables the draw.
    pub process_noise_std: [f64; 3],
}

impl ModelVariation {
    pub fn validate(&self, dt: f64) -> Result<()> {
        if dt <= 0.0 {
            return Err(Error::config("timestep must be positive"));
        }
        if self.mass <= 0.0 || self.inertia_yaw <= 0.0 {
            return Err(Error::config("mass and inertia must be positive"));
        }
        if !(0.0..1.0).contains(&self.ctrl_offset_frac.abs()) {
            return Err(Error::config("control offset fraction must be in (-1, 1)"));
        }
        if self.ctrl_latency < 0.0 {
            return Err(Error::config("control latency must be >= 0"));
        }
        let steps = self.ctrl_latency / dt;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::config(
                "control latency must be an integer multiple of the timestep",
            ));
        }
        Ok(())
    }

    pub fn latency_steps(&self, dt: f64) -> usize {
        (self.ctrl_latency / dt).round() as usize
    }

    /// Absolute actuation offset per axis.
    pub fn ctrl_offset(&self) -> [f64; 3] {
        [
            self.ctrl_offset_frac * self.ctrl_bounds[0],
            self.ctrl_offset_frac * self.ctrl_bounds[1],
            self.ctrl_offset_frac * self.ctrl_bounds[2],
        ]
    }
}

/// Moment of inertia of a uniform cuboid about its vertical axis.
fn cuboid_inertia(mass: f64, geometry: [f64; 3]) -> f64 {
    mass * (geometry[0] * geometry[0] + geometry[1] * geometry[1]) / 12.0
}

/// The named model variations an experiment can select.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VariationKind {
    Default,
    SmallerMass,
    LargerMass,
    CadGeometry,
    Hydrodynamics,
    SmallerVel,
    LargerVel,
    SmallerCtrl,
    LargerCtrl,
    CtrlOffset,
    CtrlLatency,
    /// Everything at once: hydrodynamics, latency and process noise. Stands
    /// in for logged-hardware behaviour when fitting the empirical model.
    EmpiricalGroundTruth,
}

pub const VARIATION_NAMES: [(&str, VariationKind); 12] = [
    ("default", VariationKind::Default),
    ("smaller_mass", VariationKind::SmallerMass),
    ("larger_mass", VariationKind::LargerMass),
    ("cad_geometry", VariationKind::CadGeometry),
    ("hydrodynamics", VariationKind::Hydrodynamics),
    ("smaller_vel", VariationKind::SmallerVel),
    ("larger_vel", VariationKind::LargerVel),
    ("smaller_ctrl", VariationKind::SmallerCtrl),
    ("larger_ctrl", VariationKind::LargerCtrl),
    ("ctrl_offset", VariationKind::CtrlOffset),
    ("ctrl_latency", VariationKind::CtrlLatency),
    ("empirical_ground_truth", VariationKind::EmpiricalGroundTruth),
];

impl VariationKind {
    pub fn parse(name: &str) -> Result<Self> {
        VARIATION_NAMES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, k)| *k)
            .ok_or_else(|| {
                let valid: Vec<&str> = VARIATION_NAMES.iter().map(|(n, _)| *n).collect();
                Error::config(format!(
                    "unknown model variation `{name}`; valid: {}",
                    valid.join(", ")
                ))
            })
    }

    pub fn name(&self) -> &'static str {
        VARIATION_NAMES
            .iter()
            .find(|(_, k)| k == self)
            .map(|(n, _)| *n)
            .expect("every kind is in the table")
    }
}

/// Baseline model: 60 kg cuboid hull, ideal actuation, no hydrodynamic
/// coupling so closed-form motion checks hold exactly.
pub fn make_default_variation() -> ModelVariation {
    let mass = 60.0;
    let geometry = [0.68, 0.75, 0.19];
    ModelVariation {
        mass,
        inertia_yaw: cuboid_inertia(mass, geometry),
        geometry,
        hydrodynamics_enabled: false,
        added_mass: [0.5, 0.7, 0.3],
        drag_linear: [30.0, 40.0, 10.0],
        drag_quadratic: [60.0, 80.0, 15.0],
        vel_limits: [1.0, 1.0, PI / 2.0],
        ctrl_bounds: [112.0, 112.0, 82.0],
        ctrl_offset_frac: 0.0,
        ctrl_latency: 0.0,
        process_noise_std: [0.0; 3],
    }
}

/// Latency used by the latency-bearing variations, in seconds (2 steps).
pub const LATENCY_SECONDS: f64 = 0.1;

/// Builds the model for a named variation, starting from the baseline.
pub fn make_variated(kind: VariationKind) -> ModelVariation {
    let mut m = make_default_variation();
    match kind {
        VariationKind::Default => {}
        VariationKind::SmallerMass => {
            m.mass = 50.0;
            m.inertia_yaw = cuboid_inertia(m.mass, m.geometry);
        }
        VariationKind::LargerMass => {
            m.mass = 70.0;
            m.inertia_yaw = cuboid_inertia(m.mass, m.geometry);
        }
        VariationKind::CadGeometry => {
            // Alternative hull from the vehicle CAD envelope rather than the
            // bounding cuboid; shifts inertia only.
            m.geometry = [0.85, 0.60, 0.22];
            m.inertia_yaw = cuboid_inertia(m.mass, m.geometry);
        }
        VariationKind::Hydrodynamics => {
            m.hydrodynamics_enabled = true;
        }
        VariationKind::SmallerVel => {
            m.vel_limits = [0.7, 0.7, PI / 3.0];
        }
        // The paired bound variations keep the baseline values: the baseline
        // already sits at the large end of each published range.
        VariationKind::LargerVel => {}
        VariationKind::SmallerCtrl => {
            m.ctrl_bounds = [86.0, 86.0, 62.0];
        }
        VariationKind::LargerCtrl => {}
        VariationKind::CtrlOffset => {
            m.ctrl_offset_frac = 0.3;
        }
        VariationKind::CtrlLatency => {
            m.ctrl_latency = LATENCY_SECONDS;
        }
        VariationKind::EmpiricalGroundTruth => {
            m.hydrodynamics_enabled = true;
            m.ctrl_latency = LATENCY_SECONDS;
            m.process_noise_std = [
                0.01 * m.ctrl_bounds[0],
                0.01 * m.ctrl_bounds[1],
                0.01 * m.ctrl_bounds[2],
            ];
        }
    }
    m
}

/// Clamps a commanded wrench (after the constant offset) to the bounds.
pub fn saturate(model: &ModelVariation, commanded: [f64; 3]) -> [f64; 3] {
    let offset = model.ctrl_offset();
    let mut u = [0.0; 3];
    for i in 0..3 {
        u[i] = (commanded[i] + offset[i]).clamp(-model.ctrl_bounds[i], model.ctrl_bounds[i]);
    }
    u
}

/// One integration step with the wrench already resolved (offset + saturation
/// applied by the caller via [`saturate`], latency by [`Simulator`]).
///
/// Semi-implicit Euler: body acceleration from the current state, velocity
/// update + clamp, then pose advance with the new velocity rotated by the
/// pre-step yaw. `extra_wrench_body` injects process noise.
pub fn step_first_principle(
    model: &ModelVariation,
    state: &State,
    applied: [f64; 3],
    disturbance_world: [f64; 3],
    extra_wrench_body: [f64; 3],
    dt: f64,
) -> State {
    let yaw = state.pose[2];
    let d_body = world_to_body(yaw, [disturbance_world[0], disturbance_world[1]]);
    let tau = [
        applied[0] + d_body[0] + extra_wrench_body[0],
        applied[1] + d_body[1] + extra_wrench_body[1],
        applied[2] + disturbance_world[2] + extra_wrench_body[2],
    ];
    let [u, v, r] = state.vel;

    let acc = if model.hydrodynamics_enabled {
        let mx = model.mass * (1.0 + model.added_mass[0]);
        let my = model.mass * (1.0 + model.added_mass[1]);
        let iz = model.inertia_yaw * (1.0 + model.added_mass[2]);
        let drag = |i: usize, w: f64| (model.drag_linear[i] + model.drag_quadratic[i] * w.abs()) * w;
        // Coriolis/centripetal terms with effective masses; the yaw entry is
        // the Munk moment from the surge/sway added-mass asymmetry.
        [
            (tau[0] + my * v * r - drag(0, u)) / mx,
            (tau[1] - mx * u * r - drag(1, v)) / my,
            (tau[2] - (my - mx) * u * v - drag(2, r)) / iz,
        ]
    } else {
        [
            tau[0] / model.mass,
            tau[1] / model.mass,
            tau[2] / model.inertia_yaw,
        ]
    };

    let mut vel = [0.0; 3];
    for i in 0..3 {
        vel[i] = (state.vel[i] + acc[i] * dt).clamp(-model.vel_limits[i], model.vel_limits[i]);
    }
    let world_v = body_to_world(yaw, [vel[0], vel[1]]);
    State {
        pose: [
            state.pose[0] + world_v[0] * dt,
            state.pose[1] + world_v[1] * dt,
            wrap_angle(yaw + vel[2] * dt),
        ],
        vel,
    }
}

/// What one simulator step actually did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub next_state: State,
    /// Post-latency, post-offset, post-saturation wrench.
    pub applied_control: [f64; 3],
    /// The world-frame disturbance acting during the step.
    pub applied_disturbance: [f64; 3],
}

/// Uniform step interface over first-principle and learned dynamics, so
/// rollout code never cares which it drives.
pub trait DynamicsHandle: Send {
    fn reset(&mut self, initial: State);
    fn state(&self) -> &State;
    fn step(&mut self, commanded: [f64; 3], disturbance_world: [f64; 3]) -> Result<StepResult>;
    fn ctrl_bounds(&self) -> [f64; 3];
    fn vel_limits(&self) -> [f64; 3];
    fn dt(&self) -> f64;
    fn clone_handle(&self) -> Box<dyn DynamicsHandle>;
}

/// Stateful first-principle episode simulator: owns the latency queue and the
/// process-noise stream so [`step_first_principle`] stays pure.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub model: ModelVariation,
    dt: f64,
    state: State,
    queue: VecDeque<[f64; 3]>,
    noise_rng: Option<Rng>,
    steps: usize,
}

impl Simulator {
    /// `noise_rng` feeds the process-noise draw; required when the model has
    /// a nonzero noise std, ignored otherwise.
    pub fn new(model: ModelVariation, initial: State, noise_rng: Option<Rng>) -> Result<Self> {
        model.validate(DT)?;
        if model.process_noise_std.iter().any(|&s| s > 0.0) && noise_rng.is_none() {
            return Err(Error::state(
                "model has process noise but no noise RNG was provided",
            ));
        }
        let mut sim = Simulator {
            model,
            dt: DT,
            state: initial,
            queue: VecDeque::new(),
            noise_rng,
            steps: 0,
        };
        sim.fill_queue();
        Ok(sim)
    }

    fn fill_queue(&mut self) {
        self.queue.clear();
        // Pre-filled with zero wrenches: a command issued at step t takes
        // effect at exactly t + latency_steps.
        for _ in 0..self.model.latency_steps(self.dt) {
            self.queue.push_back([0.0; 3]);
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn draw_noise(&mut self) -> [f64; 3] {
        let std = self.model.process_noise_std;
        if std.iter().all(|&s| s == 0.0) {
            return [0.0; 3];
        }
        let rng = self.noise_rng.as_mut().expect("checked at construction");
        let mut out = [0.0; 3];
        for i in 0..3 {
            if std[i] > 0.0 {
                let normal = Normal::new(0.0, std[i]).expect("positive std");
                out[i] = normal.sample(rng);
            }
        }
        out
    }
}

impl DynamicsHandle for Simulator {
    fn reset(&mut self, initial: State) {
        self.state = initial;
        self.steps = 0;
        self.fill_queue();
    }

    fn state(&self) -> &State {
        &self.state
    }

    /// Advances one step: the commanded wrench enters the latency queue; the
    /// head of the queue (offset + saturated) is what actually acts.
    fn step(&mut self, commanded: [f64; 3], disturbance_world: [f64; 3]) -> Result<StepResult> {
        if !commanded.iter().chain(disturbance_world.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("commanded wrench or disturbance".into()));
        }
        if !self.state.is_finite() {
            return Err(Error::NonFinite("simulator state".into()));
        }
        self.queue.push_back(commanded);
        let effective = self.queue.pop_front().expect("queue is never empty here");
        let applied = saturate(&self.model, effective);
        let noise = self.draw_noise();
        self.state = step_first_principle(
            &self.model,
            &self.state,
            applied,
            disturbance_world,
            noise,
            self.dt,
        );
        self.steps += 1;
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
        self.dt
    }

    fn clone_handle(&self) -> Box<dyn DynamicsHandle> {
        Box::new(self.clone())
    }
}
