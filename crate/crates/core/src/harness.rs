//! Experiment harness: evaluation metrics, controller abstraction, run
//! directories, manifests, and report generation.

use crate::a2c::{
    reward, sample_initial_state, CurvePoint, DisturbanceSource, EpisodeStat, RewardWeights,
};
use crate::config::{ConfigDoc, ConfigWriter};
use crate::disturbance::{sample_params_with, DisturbanceParams, DisturbanceTrace};
use crate::dynamics::{wrap_angle, DynamicsHandle, State, DIVERGENCE_RADIUS};
use crate::error::{Error, Result};
use crate::exec::stream_rng;
use crate::odi::OdiIterationRow;
use crate::report::{BoxPlot, LinePlot, Series};
use crate::trajectory::{read_trajectory, Trajectory};
use sha2::{Digest, Sha256};
use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

/// Steps measured by the converged-region metric: the tail of a nominal
/// 200-step episode.
pub const CONVERGED_TAIL: usize = 100;

/// A deployable closed-loop controller under evaluation.
pub trait Controller: Send {
    /// Called once per episode before the first `act`. `true_params` carries
    /// the generating wave parameters when the episode has them; oracle
    /// controllers read them, identification-based controllers ignore them.
    fn begin_episode(&mut self, true_params: Option<&DisturbanceParams>) -> Result<()>;
    /// Deterministic action for the state at episode step `step`.
    fn act(&mut self, state: &State, step: usize) -> Result<[f64; 3]>;
}

/// The disturbance signal driving one evaluation episode.
#[derive(Debug, Clone, Copy)]
pub enum Disturbance<'a> {
    Off,
    /// Parametric waveform, evaluated analytically at each step.
    Waves(&'a DisturbanceParams),
    /// Precomputed per-step samples (held-out target processes).
    Trace(&'a DisturbanceTrace),
}

impl Disturbance<'_> {
    /// World-frame wrench acting during step `t` -> `t + 1`. Traces hold
    /// their last sample beyond their recorded length.
    pub fn at(&self, step: usize, dt: f64) -> [f64; 3] {
        match self {
            Disturbance::Off => [0.0; 3],
            Disturbance::Waves(p) => p.eval(step as f64 * dt),
            Disturbance::Trace(tr) => {
                if step < tr.len() {
                    tr.at(step)
                } else {
                    *tr.samples.last().expect("traces are non-empty")
                }
            }
        }
    }

    /// The generating wave parameters, when the episode has them.
    pub fn waves(&self) -> Option<&DisturbanceParams> {
        match self {
            Disturbance::Waves(p) => Some(p),
            _ => None,
        }
    }
}

/// One closed-loop episode.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub trajectory: Trajectory,
    /// The vehicle left the arena radius at some recorded state.
    pub diverged: bool,
    /// The episode was cut short by a non-finite state.
    pub aborted: bool,
}

/// Runs `controller` against `handle` for `steps` steps from `initial`.
/// Episodes always run their full length unless the state goes non-finite;
/// leaving the arena only sets the `diverged` flag.
pub fn rollout(
    handle: &mut dyn DynamicsHandle,
    controller: &mut dyn Controller,
    initial: State,
    disturbance: Disturbance<'_>,
    steps: usize,
) -> Result<Rollout> {
    if steps == 0 {
        return Err(Error::config("rollout needs at least one step"));
    }
    handle.reset(initial);
    controller.begin_episode(disturbance.waves())?;
    let dt = handle.dt();
    let mut trajectory = Trajectory::new(dt, initial);
    let mut diverged = initial.distance() > DIVERGENCE_RADIUS;
    let mut aborted = false;
    for t in 0..steps {
        let state = *handle.state();
        let action = controller.act(&state, t)?;
        let result = handle.step(action, disturbance.at(t, dt))?;
        if !result.next_state.is_finite() {
            aborted = true;
            break;
        }
        trajectory.push(action, result.next_state);
        diverged |= result.next_state.distance() > DIVERGENCE_RADIUS;
    }
    Ok(Rollout {
        trajectory,
        diverged,
        aborted,
    })
}

/// Size of the region the vehicle settles into: max minus min planar
/// distance from the target over the last [`CONVERGED_TAIL`] steps. Episodes
/// shorter than the tail use every step they have and set the flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergedRegion {
    pub size: f64,
    /// True when fewer than [`CONVERGED_TAIL`] samples were available.
    pub short_episode: bool,
}

pub fn converged_region(distances: &[f64]) -> Result<ConvergedRegion> {
    if distances.is_empty() {
        return Err(Error::state("converged region of an empty episode"));
    }
    let tail_start = distances.len().saturating_sub(CONVERGED_TAIL);
    let tail = &distances[tail_start..];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &d in tail {
        if !d.is_finite() {
            return Err(Error::state("non-finite distance in converged region"));
        }
        lo = lo.min(d);
        hi = hi.max(d);
    }
    Ok(ConvergedRegion {
        size: hi - lo,
        short_episode: distances.len() < CONVERGED_TAIL,
    })
}

/// Interpolated quantile (linear between order statistics), q in [0, 1].
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// (p25, median, p75) of an unsorted sample.
pub fn quartiles(values: &[f64]) -> Result<(f64, f64, f64)> {
    if values.is_empty() {
        return Err(Error::state("quartiles of an empty sample"));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    Ok((
        quantile(&v, 0.25),
        quantile(&v, 0.5),
        quantile(&v, 0.75),
    ))
}

/// Everything measured from one evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    /// Planar distance to the target after every recorded state (initial
    /// included); empty when read back from CSV.
    pub distances: Vec<f64>,
    pub converged_region: f64,
    pub short_episode: bool,
    pub final_distance: f64,
    /// |yaw| of the final state. Distance is planar, so heading is reported
    /// separately.
    pub final_yaw_error: f64,
    pub cumulative_reward: f64,
    /// Summed transition-mismatch norm, where the run measured one.
    pub cumulative_mismatch: Option<f64>,
    pub diverged: bool,
    pub aborted: bool,
}

/// Draws the initial state and disturbance parameters for one evaluation
/// episode. Split out of [`evaluate`] so trajectory exports can replay the
/// exact draws of a given episode: identical `(master_seed, label, episode)`
/// yields identical state and parameters.
pub fn episode_setup(
    source: &DisturbanceSource,
    master_seed: u64,
    label: &str,
    episode: usize,
    ctrl_bounds: [f64; 3],
    vel_limits: [f64; 3],
) -> Result<(State, Option<DisturbanceParams>)> {
    let mut rng = stream_rng(master_seed, label, episode as u64);
    let initial = sample_initial_state(&mut rng, vel_limits);
    let drawn = match source {
        DisturbanceSource::Sampled { k, correlation } => {
            Some(sample_params_with(&mut rng, ctrl_bounds, *k, *correlation, 1.0)?)
        }
        DisturbanceSource::Fixed(p) => Some(p.clone()),
        DisturbanceSource::Off | DisturbanceSource::Trace(_) => None,
    };
    Ok((initial, drawn))
}

/// Runs a deterministic evaluation: `n_episodes` episodes of `steps` steps,
/// each seeded as `stream_rng(master_seed, label, episode)` so the draws are
/// independent of any other stream in the run. Diverged and aborted episodes
/// are recorded with their flags, never dropped. Sequential by design —
/// concurrency lives in the training loops, not the orchestration.
pub fn evaluate(
    handle: &mut dyn DynamicsHandle,
    controller: &mut dyn Controller,
    source: &DisturbanceSource,
    n_episodes: usize,
    steps: usize,
    master_seed: u64,
    label: &str,
) -> Result<Vec<EpisodeMetrics>> {
    if n_episodes == 0 {
        return Err(Error::config("evaluation needs at least one episode"));
    }
    let weights = RewardWeights::default_for(handle.ctrl_bounds());
    let mut rows = Vec::with_capacity(n_episodes);
    for episode in 0..n_episodes {
        let (initial, drawn) = episode_setup(
            source,
            master_seed,
            label,
            episode,
            handle.ctrl_bounds(),
            handle.vel_limits(),
        )?;
        let disturbance = match (source, &drawn) {
            (DisturbanceSource::Trace(tr), _) => Disturbance::Trace(tr),
            (_, Some(p)) => Disturbance::Waves(p),
            (_, None) => Disturbance::Off,
        };
        let run = rollout(handle, controller, initial, disturbance, steps)?;
        let distances = run.trajectory.distances();
        let cr = converged_region(&distances)?;
        let last = run
            .trajectory
            .states
            .last()
            .expect("rollout always records the initial state");
        let cumulative_reward = run
            .trajectory
            .transitions()
            .map(|(_, u, next)| reward(next, *u, &weights))
            .sum();
        rows.push(EpisodeMetrics {
            episode,
            final_distance: *distances.last().expect("non-empty"),
            final_yaw_error: wrap_angle(last.pose[2]).abs(),
            distances,
            converged_region: cr.size,
            short_episode: cr.short_episode,
            cumulative_reward,
            cumulative_mismatch: None,
            diverged: run.diverged,
            aborted: run.aborted,
        });
    }
    Ok(rows)
}

/// Quantile summary of an evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub n_episodes: usize,
    pub diverged: usize,
    pub aborted: usize,
    /// (p25, median, p75) of the converged region.
    pub converged_region: (f64, f64, f64),
    /// (p25, median, p75) of the final distance.
    pub final_distance: (f64, f64, f64),
}

pub fn summarize(rows: &[EpisodeMetrics]) -> Result<EvalSummary> {
    let crs: Vec<f64> = rows.iter().map(|m| m.converged_region).collect();
    let finals: Vec<f64> = rows.iter().map(|m| m.final_distance).collect();
    Ok(EvalSummary {
        n_episodes: rows.len(),
        diverged: rows.iter().filter(|m| m.diverged).count(),
        aborted: rows.iter().filter(|m| m.aborted).count(),
        converged_region: quartiles(&crs)?,
        final_distance: quartiles(&finals)?,
    })
}

// ---------------------------------------------------------------------------
// CSV schemas. Floats are written with Rust's shortest-round-trip `Display`,
// so every file reads back bit-exact and repeated runs diff clean.

pub const CSV_METRICS: &str = "metrics.csv";
pub const CSV_SUMMARY: &str = "summary.csv";
pub const CSV_CURVE: &str = "curve.csv";
pub const CSV_TRANSFER: &str = "transfer_curve.csv";
pub const CSV_ODI: &str = "odi_iterations.csv";
/// Evaluation trajectories: `trajectory_<nnn>.csv` in the csv/ directory.
pub const TRAJECTORY_PREFIX: &str = "trajectory";

pub const METRICS_HEADER: &str = "episode,converged_region,final_distance,final_yaw_error,\
cumulative_reward,cumulative_mismatch,short_episode,diverged,aborted";
pub const CURVE_HEADER: &str = "update_idx,steps,mean_return,policy_loss,value_loss,entropy";
pub const TRANSFER_HEADER: &str = "episode,cum_task_reward,cum_mismatch";
pub const ODI_HEADER: &str = "iter,median_cr,p25_cr,p75_cr,odi_val_loss";
pub const PARAMS_HEADER: &str = "axis,component,amplitude,angular_frequency,phase";

fn expect_header(path: &Path, got: Option<&str>, want: &str) -> Result<()> {
    match got {
        Some(h) if h == want => Ok(()),
        Some(h) => Err(Error::parse(
            path,
            1,
            format!("expected header '{want}', found '{h}'"),
        )),
        None => Err(Error::parse(path, 1, "empty file")),
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, lineno: usize, s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(path, lineno, format!("bad {what}: '{s}'")))
}

pub fn write_metrics_csv(path: &Path, rows: &[EpisodeMetrics]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{METRICS_HEADER}")?;
    for m in rows {
        let mismatch = m.cumulative_mismatch.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            m.episode,
            m.converged_region,
            m.final_distance,
            m.final_yaw_error,
            m.cumulative_reward,
            mismatch,
            m.short_episode,
            m.diverged,
            m.aborted,
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads metrics written by [`write_metrics_csv`]. Per-step distances are
/// not persisted, so `distances` comes back empty.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpisodeMetrics>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    expect_header(path, lines.next(), METRICS_HEADER)?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 9 fields, found {}", f.len()),
            ));
        }
        let cumulative_mismatch = if f[5].trim().is_empty() {
            None
        } else {
            Some(parse_field(path, lineno, f[5], "cumulative_mismatch")?)
        };
        rows.push(EpisodeMetrics {
            episode: parse_field(path, lineno, f[0], "episode")?,
            distances: Vec::new(),
            converged_region: parse_field(path, lineno, f[1], "converged_region")?,
            final_distance: parse_field(path, lineno, f[2], "final_distance")?,
            final_yaw_error: parse_field(path, lineno, f[3], "final_yaw_error")?,
            cumulative_reward: parse_field(path, lineno, f[4], "cumulative_reward")?,
            cumulative_mismatch,
            short_episode: parse_field(path, lineno, f[6], "short_episode")?,
            diverged: parse_field(path, lineno, f[7], "diverged")?,
            aborted: parse_field(path, lineno, f[8], "aborted")?,
        });
    }
    Ok(rows)
}

pub fn write_summary_csv(path: &Path, s: &EvalSummary) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "metric,p25,median,p75")?;
    let (a, b, c) = s.converged_region;
    writeln!(w, "converged_region,{a},{b},{c}")?;
    let (a, b, c) = s.final_distance;
    writeln!(w, "final_distance,{a},{b},{c}")?;
    writeln!(w, "n_episodes,{0},{0},{0}", s.n_episodes)?;
    writeln!(w, "diverged,{0},{0},{0}", s.diverged)?;
    writeln!(w, "aborted,{0},{0},{0}", s.aborted)?;
    w.flush()?;
    Ok(())
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CURVE_HEADER}")?;
    for p in curve {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.update_idx, p.steps, p.mean_return, p.policy_loss, p.value_loss, p.entropy
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurvePoint>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    expect_header(path, lines.next(), CURVE_HEADER)?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 6 fields, found {}", f.len()),
            ));
        }
        rows.push(CurvePoint {
            update_idx: parse_field(path, lineno, f[0], "update_idx")?,
            steps: parse_field(path, lineno, f[1], "steps")?,
            mean_return: parse_field(path, lineno, f[2], "mean_return")?,
            policy_loss: parse_field(path, lineno, f[3], "policy_loss")?,
            value_loss: parse_field(path, lineno, f[4], "value_loss")?,
            entropy: parse_field(path, lineno, f[5], "entropy")?,
        });
    }
    Ok(rows)
}

/// Transfer learning curve: per completed episode, the within-episode sums of
/// task reward and mismatch norm.
pub fn write_transfer_curve_csv(path: &Path, episodes: &[EpisodeStat]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{TRANSFER_HEADER}")?;
    for (i, e) in episodes.iter().enumerate() {
        writeln!(w, "{},{},{}", i, e.task_reward, e.mismatch)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_transfer_curve_csv(path: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    expect_header(path, lines.next(), TRANSFER_HEADER)?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 3 fields, found {}", f.len()),
            ));
        }
        rows.push((
            parse_field(path, lineno, f[0], "episode")?,
            parse_field(path, lineno, f[1], "cum_task_reward")?,
            parse_field(path, lineno, f[2], "cum_mismatch")?,
        ));
    }
    Ok(rows)
}

/// Identification-in-the-loop quality per aggregation iteration.
pub fn write_odi_iterations_csv(path: &Path, rows: &[OdiIterationRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{ODI_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.iteration, r.median_converged, r.p25_converged, r.p75_converged, r.odi_val_loss
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_odi_iterations_csv(path: &Path) -> Result<Vec<OdiIterationRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    expect_header(path, lines.next(), ODI_HEADER)?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 5 fields, found {}", f.len()),
            ));
        }
        rows.push(OdiIterationRow {
            iteration: parse_field(path, lineno, f[0], "iter")?,
            dataset_episodes: 0,
            median_converged: parse_field(path, lineno, f[1], "median_cr")?,
            p25_converged: parse_field(path, lineno, f[2], "p25_cr")?,
            p75_converged: parse_field(path, lineno, f[3], "p75_cr")?,
            odi_val_loss: parse_field(path, lineno, f[4], "odi_val_loss")?,
        });
    }
    Ok(rows)
}

/// Wave-parameter sets as CSV, one row per (axis, component). Pairs with a
/// trajectory CSV to form one identification-dataset shard.
pub fn write_params_csv(path: &Path, sets: &[DisturbanceParams]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "set,{PARAMS_HEADER}")?;
    for (set, p) in sets.iter().enumerate() {
        for (axis, waves) in p.per_axis.iter().enumerate() {
            for (component, wave) in waves.iter().enumerate() {
                writeln!(
                    w,
                    "{set},{axis},{component},{},{},{}",
                    wave.amplitude, wave.angular_frequency, wave.phase
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_params_csv(path: &Path) -> Result<Vec<DisturbanceParams>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let want = format!("set,{PARAMS_HEADER}");
    expect_header(path, lines.next(), &want)?;
    let mut sets: Vec<DisturbanceParams> = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 6 fields, found {}", f.len()),
            ));
        }
        let set: usize = parse_field(path, lineno, f[0], "set")?;
        let axis: usize = parse_field(path, lineno, f[1], "axis")?;
        let component: usize = parse_field(path, lineno, f[2], "component")?;
        if set > sets.len() {
            return Err(Error::parse(path, lineno, "set indices must be contiguous"));
        }
        if set == sets.len() {
            sets.push(DisturbanceParams {
                per_axis: Default::default(),
            });
        }
        let p = &mut sets[set];
        if axis >= p.per_axis.len() {
            return Err(Error::parse(path, lineno, format!("axis {axis} out of range")));
        }
        if component != p.per_axis[axis].len() {
            return Err(Error::parse(
                path,
                lineno,
                "component indices must be contiguous per axis",
            ));
        }
        p.per_axis[axis].push(crate::disturbance::WaveTriple {
            amplitude: parse_field(path, lineno, f[3], "amplitude")?,
            angular_frequency: parse_field(path, lineno, f[4], "angular_frequency")?,
            phase: parse_field(path, lineno, f[5], "phase")?,
        });
    }
    Ok(sets)
}

// ---------------------------------------------------------------------------
// Run directories and manifests.

pub const MANIFEST_FILE: &str = "manifest";

/// Canonical output layout: `<root>/{manifest, checkpoints/, csv/, figures/}`.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates the directory tree (idempotent).
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["checkpoints", "csv", "figures"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(RunDir { root })
    }

    /// Opens an existing run directory.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.is_dir() {
            return Err(Error::config(format!(
                "run directory not found: {}",
                root.display()
            )));
        }
        Ok(RunDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn csv(&self, name: &str) -> PathBuf {
        self.root.join("csv").join(name)
    }

    pub fn figure(&self, name: &str) -> PathBuf {
        self.root.join("figures").join(name)
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(name)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    Ok(s)
}

/// Reproducibility record written into every run directory: the producing
/// command, its seed, the config snapshot's file name, and content hashes of
/// every artifact the run wrote. Enough to re-run the command exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    /// File name of the config snapshot stored next to the manifest.
    pub config: String,
    /// (run-relative path, sha256) per artifact.
    pub hashes: Vec<(String, String)>,
    /// Free-form result summary, (key, value).
    pub stats: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: impl Into<String>, seed: u64, config: impl Into<String>) -> Self {
        Manifest {
            command: command.into(),
            seed,
            config: config.into(),
            hashes: Vec::new(),
            stats: Vec::new(),
        }
    }

    /// Records a file's hash under its run-relative path.
    pub fn add_hash(&mut self, run: &RunDir, path: &Path) -> Result<()> {
        let rel = path
            .strip_prefix(run.root())
            .map_err(|_| Error::config(format!("{} is outside the run directory", path.display())))?;
        let rel = rel.to_string_lossy().replace('\\', "/");
        self.hashes.push((rel, sha256_hex(path)?));
        Ok(())
    }

    pub fn add_stat(&mut self, key: impl Into<String>, value: impl ToString) {
        self.stats.push((key.into(), value.to_string()));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = ConfigWriter::new();
        w.section("manifest");
        w.entry("command", &self.command);
        w.entry("seed", self.seed.to_string());
        w.entry("config", &self.config);
        w.section("hashes");
        for (name, hash) in &self.hashes {
            w.entry(name, hash);
        }
        w.section("stats");
        for (key, value) in &self.stats {
            w.entry(key, value);
        }
        fs::write(path, w.render())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let doc = ConfigDoc::load(path)?;
        let head = doc.require("manifest")?;
        let mut manifest = Manifest::new(
            head.require("command")?.to_string(),
            head.get_u64("seed")?.ok_or_else(|| {
                Error::config(format!("{}: [manifest] missing seed", path.display()))
            })?,
            head.require("config")?.to_string(),
        );
        if let Some(hashes) = doc.section("hashes") {
            for (key, value) in hashes.keys() {
                manifest.hashes.push((key.to_string(), value.to_string()));
            }
        }
        if let Some(stats) = doc.section("stats") {
            for (key, value) in stats.keys() {
                manifest.stats.push((key.to_string(), value.to_string()));
            }
        }
        Ok(manifest)
    }
}

// ---------------------------------------------------------------------------
// Report generation: renders every known CSV in the run into an SVG figure.

fn render_to(path: &Path, svg: String) -> Result<PathBuf> {
    // Render fully before touching the file so a failure leaves no partial
    // figure behind.
    fs::write(path, svg)?;
    Ok(path.to_path_buf())
}

fn render_distribution(run: &RunDir) -> Result<Option<PathBuf>> {
    let path = run.csv(CSV_METRICS);
    if !path.is_file() {
        return Ok(None);
    }
    let rows = read_metrics_csv(&path)?;
    if rows.is_empty() {
        return Err(Error::state(format!(
            "{}: no episodes to plot",
            path.display()
        )));
    }
    let plot = BoxPlot {
        title: "distance distributions".into(),
        y_label: "meters".into(),
        groups: vec![
            (
                "converged region".into(),
                rows.iter().map(|m| m.converged_region).collect(),
            ),
            (
                "final distance".into(),
                rows.iter().map(|m| m.final_distance).collect(),
            ),
        ],
    };
    render_to(&run.figure("distribution.svg"), plot.render()?).map(Some)
}

fn render_learning_curve(run: &RunDir) -> Result<Option<PathBuf>> {
    let path = run.csv(CSV_CURVE);
    if !path.is_file() {
        return Ok(None);
    }
    let rows = read_curve_csv(&path)?;
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|p| p.mean_return.is_finite())
        .map(|p| (p.update_idx as f64, p.mean_return))
        .collect();
    let plot = LinePlot {
        title: "learning curve".into(),
        x_label: "update".into(),
        y_label: "mean episode return".into(),
        series: vec![Series::new("mean return", points)],
    };
    let svg = plot
        .render()
        .map_err(|_| Error::state(format!("{}: no finite returns", path.display())))?;
    render_to(&run.figure("learning_curve.svg"), svg).map(Some)
}

fn render_transfer_curves(run: &RunDir) -> Result<Option<PathBuf>> {
    let path = run.csv(CSV_TRANSFER);
    if !path.is_file() {
        return Ok(None);
    }
    let rows = read_transfer_curve_csv(&path)?;
    let reward: Vec<(f64, f64)> = rows.iter().map(|r| (r.0 as f64, r.1)).collect();
    let mismatch: Vec<(f64, f64)> = rows.iter().map(|r| (r.0 as f64, r.2)).collect();
    let plot = LinePlot {
        title: "transfer training".into(),
        x_label: "episode".into(),
        y_label: "per-episode total".into(),
        series: vec![
            Series::new("task reward", reward),
            Series::new("mismatch", mismatch),
        ],
    };
    render_to(&run.figure("transfer_curves.svg"), plot.render()?).map(Some)
}

fn render_odi_iterations(run: &RunDir) -> Result<Option<PathBuf>> {
    let path = run.csv(CSV_ODI);
    if !path.is_file() {
        return Ok(None);
    }
    let rows = read_odi_iterations_csv(&path)?;
    let take = |f: fn(&OdiIterationRow) -> f64| -> Vec<(f64, f64)> {
        rows.iter().map(|r| (r.iteration as f64, f(r))).collect()
    };
    let plot = LinePlot {
        title: "identification in the loop".into(),
        x_label: "aggregation iteration".into(),
        y_label: "converged region (m)".into(),
        series: vec![
            Series::new("median", take(|r| r.median_converged)),
            Series::new("p25", take(|r| r.p25_converged)),
            Series::new("p75", take(|r| r.p75_converged)),
        ],
    };
    render_to(&run.figure("odi_iterations.svg"), plot.render()?).map(Some)
}

fn render_trajectories(run: &RunDir, csv_dir: &Path) -> Result<Option<PathBuf>> {
    let mut trajectory_files: Vec<PathBuf> = fs::read_dir(csv_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_stem()
                    .is_some_and(|s| s.to_string_lossy().starts_with(TRAJECTORY_PREFIX))
        })
        .collect();
    trajectory_files.sort();
    if trajectory_files.is_empty() {
        return Ok(None);
    }
    let mut series = Vec::new();
    for path in &trajectory_files {
        let traj = read_trajectory(path)?;
        let label = path
            .file_stem()
            .expect("filtered on stem")
            .to_string_lossy()
            .to_string();
        let points: Vec<(f64, f64)> =
            traj.states.iter().map(|s| (s.pose[0], s.pose[1])).collect();
        series.push(Series::new(label, points));
    }
    let plot = LinePlot {
        title: "trajectories".into(),
        x_label: "x (m)".into(),
        y_label: "y (m)".into(),
        series,
    };
    render_to(&run.figure("trajectories.svg"), plot.render()?).map(Some)
}

/// Renders figures for every recognized CSV under `<run>/csv/` into
/// `<run>/figures/`. Each table renders independently, so one bad table does
/// not block the rest; the first failure is returned after all have been
/// attempted. Errors name the offending file; a run with nothing to plot is
/// an error listing what was expected.
pub fn emit_report(run: &RunDir) -> Result<Vec<PathBuf>> {
    let csv_dir = run.root().join("csv");
    if !csv_dir.is_dir() {
        return Err(Error::config(format!(
            "no csv directory under {}",
            run.root().display()
        )));
    }
    let mut written = Vec::new();
    let mut first_err = None;
    let attempts = [
        render_distribution(run),
        render_learning_curve(run),
        render_transfer_curves(run),
        render_odi_iterations(run),
        render_trajectories(run, &csv_dir),
    ];
    for attempt in attempts {
        match attempt {
            Ok(Some(path)) => written.push(path),
            Ok(None) => {}
            Err(e) => first_err = first_err.or(Some(e)),
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    if written.is_empty() {
        return Err(Error::config(format!(
            "{}: nothing to report; expected one of {CSV_METRICS}, {CSV_CURVE}, \
             {CSV_TRANSFER}, {CSV_ODI}, or {TRAJECTORY_PREFIX}*.csv",
            csv_dir.display()
        )));
    }
    Ok(written)
}
