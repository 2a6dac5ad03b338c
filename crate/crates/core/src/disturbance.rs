//! Sinusoidal disturbance synthesis: parameter sampling from a banded
//! schedule, time-domain waveform generation, a richer held-out process for
//! target tasks, and CSV trace I/O.

use crate::error::{Error, Result};
use crate::exec::Rng;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// One sinusoidal component: d(t) = amplitude * sin(angular_frequency * t + phase).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveTriple {
    pub amplitude: f64,
    pub angular_frequency: f64,
    pub phase: f64,
}

impl WaveTriple {
    pub fn validate(&self) -> Result<()> {
        if self.amplitude < 0.0 || !self.amplitude.is_finite() {
            return Err(Error::state("wave amplitude must be finite and >= 0"));
        }
        if self.angular_frequency <= 0.0 || !self.angular_frequency.is_finite() {
            return Err(Error::state("wave angular frequency must be > 0"));
        }
        if !(-PI..PI).contains(&self.phase) {
            return Err(Error::state("wave phase must lie in [-pi, pi)"));
        }
        Ok(())
    }
}

pub const AXES: usize = 3;

/// Per-axis wave parameter sets (axes X, Y, yaw), k components each.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceParams {
    pub per_axis: [Vec<WaveTriple>; AXES],
}

impl DisturbanceParams {
    pub fn k(&self) -> usize {
        self.per_axis[0].len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        for axis in &self.per_axis {
            if axis.len() != k {
                return Err(Error::state("axes disagree on component count"));
            }
            for w in axis {
                w.validate()?;
            }
        }
        Ok(())
    }

    /// Worst-case magnitude per axis: the sum of component amplitudes.
    pub fn amplitude_sum(&self) -> [f64; AXES] {
        let mut out = [0.0; AXES];
        for (axis, waves) in self.per_axis.iter().enumerate() {
            out[axis] = waves.iter().map(|w| w.amplitude).sum();
        }
        out
    }

    /// Flat [axis][component][A, omega, phi] layout, the regression target of
    /// the disturbance identifier (3 axes x 3k values).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(AXES * 3 * self.k());
        for axis in &self.per_axis {
            for w in axis {
                v.push(w.amplitude);
                v.push(w.angular_frequency);
                v.push(w.phase);
            }
        }
        v
    }

    pub fn from_flat(flat: &[f64], k: usize) -> Result<Self> {
        if flat.len() != AXES * 3 * k {
            return Err(Error::dimension(format!(
                "flat parameter length {} != {}",
                flat.len(),
                AXES * 3 * k
            )));
        }
        let mut per_axis: [Vec<WaveTriple>; AXES] = Default::default();
        for (axis, chunk) in flat.chunks(3 * k).enumerate() {
            per_axis[axis] = chunk
                .chunks(3)
                .map(|c| WaveTriple {
                    amplitude: c[0],
                    angular_frequency: c[1],
                    phase: c[2],
                })
                .collect();
        }
        Ok(DisturbanceParams { per_axis })
    }

    /// Instantaneous disturbance at absolute time t (seconds).
    pub fn eval(&self, t: f64) -> [f64; AXES] {
        let mut d = [0.0; AXES];
        for (axis, waves) in self.per_axis.iter().enumerate() {
            d[axis] = waves
                .iter()
                .map(|w| w.amplitude * (w.angular_frequency * t + w.phase).sin())
                .sum();
        }
        d
    }
}

/// Amplitude-fraction and period ranges for one component slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentRange {
    pub amp_frac: (f64, f64),
    pub period: (f64, f64),
}

/// The five anchor rows of the sampling schedule: a weak fast band, three
/// strong mid bands, and a weak slow band.
const ANCHORS: [ComponentRange; 5] = [
    ComponentRange {
        amp_frac: (0.0, 0.5),
        period: (1.0, 2.0),
    },
    ComponentRange {
        amp_frac: (0.5, 1.0),
        period: (2.0, 4.0),
    },
    ComponentRange {
        amp_frac: (0.5, 1.0),
        period: (2.0, 4.0),
    },
    ComponentRange {
        amp_frac: (0.5, 1.0),
        period: (2.0, 4.0),
    },
    ComponentRange {
        amp_frac: (0.0, 0.5),
        period: (4.0, 8.0),
    },
];

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Component ranges for an arbitrary component count.
///
/// Deterministic rule: component i of k sits at anchor position
/// j(i) = 1 + 4 (i-1)/(k-1) on the 1..=5 anchor scale (the middle anchor when
/// k = 1); range endpoints interpolate linearly between the neighbouring
/// anchors, so k = 5 reproduces the schedule exactly. `amplitude_boost`
/// scales the upper amplitude endpoint.
pub fn schedule_ranges(k: usize, amplitude_boost: f64) -> Result<Vec<ComponentRange>> {
    if k < 1 {
        return Err(Error::config("component count k must be >= 1"));
    }
    let mut out = Vec::with_capacity(k);
    for i in 1..=k {
        let j = if k == 1 {
            3.0
        } else {
            1.0 + 4.0 * (i - 1) as f64 / (k - 1) as f64
        };
        let lo_idx = (j.floor() as usize).clamp(1, 5) - 1;
        let hi_idx = (j.ceil() as usize).clamp(1, 5) - 1;
        let frac = j - j.floor();
        let (a, b) = (ANCHORS[lo_idx], ANCHORS[hi_idx]);
        out.push(ComponentRange {
            amp_frac: (
                lerp(a.amp_frac.0, b.amp_frac.0, frac),
                lerp(a.amp_frac.1, b.amp_frac.1, frac) * amplitude_boost,
            ),
            period: (
                lerp(a.period.0, b.period.0, frac),
                lerp(a.period.1, b.period.1, frac),
            ),
        });
    }
    Ok(out)
}

/// Wraps an angle into [-pi, pi), the phase interval of [`WaveTriple`].
pub fn wrap_phase(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let w = x - two_pi * ((x + PI) / two_pi).floor();
    // Guard the half-open upper edge against rounding.
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Angular-frequency envelope over the whole schedule: (2 pi / max period,
/// 2 pi / min period). Used to squash identifier outputs into a valid range.
pub fn omega_range(k: usize) -> Result<(f64, f64)> {
    let ranges = schedule_ranges(k, 1.0)?;
    let t_min = ranges.iter().map(|r| r.period.0).fold(f64::MAX, f64::min);
    let t_max = ranges.iter().map(|r| r.period.1).fold(0.0, f64::max);
    Ok((2.0 * PI / t_max, 2.0 * PI / t_min))
}

/// Whether the three axes draw independent parameters or share one draw
/// (amplitude fractions rescaled by each axis bound).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AxisCorrelation {
    #[default]
    Independent,
    Shared,
}

fn draw_triple(rng: &mut Rng, range: &ComponentRange) -> (f64, f64, f64) {
    let frac = rng.gen_range(range.amp_frac.0..=range.amp_frac.1);
    let period = rng.gen_range(range.period.0..=range.period.1);
    let phase = rng.gen_range(-PI..PI);
    (frac, period, phase)
}

/// Draws one disturbance parameter set from the banded schedule. Amplitudes
/// are fractions of the per-axis control bound.
pub fn sample_params(rng: &mut Rng, bounds: [f64; AXES], k: usize) -> Result<DisturbanceParams> {
    sample_params_with(rng, bounds, k, AxisCorrelation::Independent, 1.0)
}

pub fn sample_params_with(
    rng: &mut Rng,
    bounds: [f64; AXES],
    k: usize,
    correlation: AxisCorrelation,
    amplitude_boost: f64,
) -> Result<DisturbanceParams> {
    let ranges = schedule_ranges(k, amplitude_boost)?;
    let mut per_axis: [Vec<WaveTriple>; AXES] = Default::default();
    match correlation {
        AxisCorrelation::Independent => {
            for (axis, waves) in per_axis.iter_mut().enumerate() {
                *waves = ranges
                    .iter()
                    .map(|range| {
                        let (frac, period, phase) = draw_triple(rng, range);
                        WaveTriple {
                            amplitude: frac * bounds[axis],
                            angular_frequency: 2.0 * PI / period,
                            phase,
                        }
                    })
                    .collect();
            }
        }
        AxisCorrelation::Shared => {
            let draws: Vec<(f64, f64, f64)> =
                ranges.iter().map(|range| draw_triple(rng, range)).collect();
            for (axis, waves) in per_axis.iter_mut().enumerate() {
                *waves = draws
                    .iter()
                    .map(|&(frac, period, phase)| WaveTriple {
                        amplitude: frac * bounds[axis],
                        angular_frequency: 2.0 * PI / period,
                        phase,
                    })
                    .collect();
            }
        }
    }
    let params = DisturbanceParams { per_axis };
    params.validate()?;
    Ok(params)
}

/// Uniformly sampled disturbance waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceTrace {
    pub dt: f64,
    pub samples: Vec<[f64; AXES]>,
}

impl DisturbanceTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn at(&self, step: usize) -> [f64; AXES] {
        self.samples[step]
    }
}

/// Evaluates the waveform over steps t0 .. t0+horizon. Time is absolute
/// (step x dt), so phases stay globally meaningful within an episode.
pub fn synthesize(
    params: &DisturbanceParams,
    t0_step: usize,
    horizon: usize,
    dt: f64,
) -> Result<DisturbanceTrace> {
    if horizon < 1 {
        return Err(Error::config("synthesis horizon must be >= 1"));
    }
    params.validate()?;
    let samples = (t0_step..t0_step + horizon)
        .map(|step| params.eval(step as f64 * dt))
        .collect();
    Ok(DisturbanceTrace { dt, samples })
}

/// Shaping knobs for the held-out target process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetTraceConfig {
    pub components: usize,
    /// Scales the upper amplitude endpoint of every band (1.0 = schedule).
    pub amplitude_boost: f64,
    /// Relative depth of the slow sinusoidal amplitude drift; 0 disables.
    pub drift_depth: f64,
    /// Period of the amplitude drift in seconds.
    pub drift_period: f64,
    /// Std of the additive band-limited noise as a fraction of each axis
    /// bound; 0 disables.
    pub noise_std_frac: f64,
    /// First-order low-pass cutoff for the noise, Hz.
    pub noise_cutoff_hz: f64,
}

impl Default for TargetTraceConfig {
    fn default() -> Self {
        TargetTraceConfig {
            components: 8,
            amplitude_boost: 1.5,
            drift_depth: 0.3,
            drift_period: 25.0,
            noise_std_frac: 0.02,
            noise_cutoff_hz: 1.0,
        }
    }
}

/// Synthesizes a held-out target trace from a richer process than the
/// training schedule: more components, boosted amplitude ranges, slow
/// amplitude drift and band-limited noise. With the degenerate configuration
/// (schedule component count, boost 1, no drift, no noise) this reduces
/// exactly to `synthesize(sample_params(..))`.
pub fn make_target_trace(
    rng: &mut Rng,
    bounds: [f64; AXES],
    length: usize,
    dt: f64,
    cfg: &TargetTraceConfig,
) -> Result<DisturbanceTrace> {
    if length < 1 {
        return Err(Error::config("target trace length must be >= 1"));
    }
    let params = sample_params_with(
        rng,
        bounds,
        cfg.components,
        AxisCorrelation::Independent,
        cfg.amplitude_boost,
    )?;

    // Per-axis, per-component drift phases; drawn only when drift is active
    // so the degenerate configuration consumes the same RNG stream as
    // sample_params alone.
    let drift_phases: Option<Vec<Vec<f64>>> = if cfg.drift_depth > 0.0 {
        Some(
            (0..AXES)
                .map(|_| (0..cfg.components).map(|_| rng.gen_range(-PI..PI)).collect())
                .collect(),
        )
    } else {
        None
    };
    let omega_drift = 2.0 * PI / cfg.drift_period;

    let mut samples = vec![[0.0; AXES]; length];
    for (axis, waves) in params.per_axis.iter().enumerate() {
        for (step, sample) in samples.iter_mut().enumerate() {
            let t = step as f64 * dt;
            let mut acc = 0.0;
            for (ci, w) in waves.iter().enumerate() {
                let gain = match &drift_phases {
                    Some(ph) => 1.0 + cfg.drift_depth * (omega_drift * t + ph[axis][ci]).sin(),
                    None => 1.0,
                };
                acc += gain * w.amplitude * (w.angular_frequency * t + w.phase).sin();
            }
            sample[axis] = acc;
        }
    }

    if cfg.noise_std_frac > 0.0 {
        let alpha = (-2.0 * PI * cfg.noise_cutoff_hz * dt).exp();
        for axis in 0..AXES {
            let normal = Normal::new(0.0, cfg.noise_std_frac * bounds[axis])
                .map_err(|_| Error::config("noise std must be finite"))?;
            let mut low = 0.0;
            for sample in samples.iter_mut() {
                low = alpha * low + (1.0 - alpha) * normal.sample(rng);
                sample[axis] += low;
            }
        }
    }

    Ok(DisturbanceTrace { dt, samples })
}

pub const TRACE_HEADER: &str = "t,fx,fy,tau";

pub fn write_trace(trace: &DisturbanceTrace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{TRACE_HEADER}")?;
    for (i, s) in trace.samples.iter().enumerate() {
        writeln!(w, "{},{},{},{}", i as f64 * trace.dt, s[0], s[1], s[2])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<DisturbanceTrace> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => return Err(Error::parse(path, 1, "empty trace file")),
    };
    if header.trim() != TRACE_HEADER {
        return Err(Error::parse(
            path,
            1,
            format!("expected header `{TRACE_HEADER}`, found `{}`", header.trim()),
        ));
    }
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let mut vals = [0.0; 4];
        for (i, f) in fields.iter().enumerate() {
            vals[i] = f.trim().parse::<f64>().map_err(|_| {
                Error::parse(path, lineno, format!("not a number: `{}`", f.trim()))
            })?;
        }
        times.push(vals[0]);
        samples.push([vals[1], vals[2], vals[3]]);
    }
    if samples.is_empty() {
        return Err(Error::parse(path, 1, "trace has no samples"));
    }
    let dt = if times.len() >= 2 {
        times[1] - times[0]
    } else {
        times[0].max(crate::dynamics::DT)
    };
    if dt <= 0.0 {
        return Err(Error::parse(path, 2, "time column must be increasing"));
    }
    for (i, &t) in times.iter().enumerate() {
        if (t - i as f64 * dt).abs() > 1e-9 {
            return Err(Error::parse(
                path,
                i + 2,
                "time column is not uniformly spaced",
            ));
        }
    }
    Ok(DisturbanceTrace { dt, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::stream_rng;
    use proptest::prelude::*;

    const BOUNDS: [f64; AXES] = [112.0, 112.0, 82.0];

    #[test]
    fn schedule_matches_anchor_table_at_k5() {
        let r = schedule_ranges(5, 1.0).unwrap();
        assert_eq!(r.len(), 5);
        for (got, want) in r.iter().zip(ANCHORS.iter()) {
            assert_eq!(got, want);
        }
    }

    #[test]
    fn schedule_k2_takes_the_extreme_bands() {
        let r = schedule_ranges(2, 1.0).unwrap();
        assert_eq!(r[0], ANCHORS[0]);
        assert_eq!(r[1], ANCHORS[4]);
    }

    #[test]
    fn schedule_k1_takes_the_middle_band() {
        let r = schedule_ranges(1, 1.0).unwrap();
        assert_eq!(r[0], ANCHORS[2]);
    }

    #[test]
    fn sampled_components_respect_their_bands() {
        let mut rng = stream_rng(42, "dist-bands", 0);
        for _ in 0..200 {
            let p = sample_params(&mut rng, BOUNDS, 5).unwrap();
            for (axis, waves) in p.per_axis.iter().enumerate() {
                let w = &waves[0];
                assert!(w.amplitude <= 0.5 * BOUNDS[axis]);
                let t = 2.0 * PI / w.angular_frequency;
                assert!((1.0..=2.0).contains(&t), "component-1 period {t}");
                let w = &waves[4];
                assert!(w.amplitude <= 0.5 * BOUNDS[axis]);
                let t = 2.0 * PI / w.angular_frequency;
                assert!((4.0..=8.0).contains(&t), "component-5 period {t}");
                for w in &waves[1..4] {
                    assert!(w.amplitude >= 0.5 * BOUNDS[axis] - 1e-9);
                    assert!(w.amplitude <= BOUNDS[axis]);
                    let t = 2.0 * PI / w.angular_frequency;
                    assert!((2.0..=4.0).contains(&t), "mid-component period {t}");
                }
            }
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let p1 = sample_params(&mut stream_rng(42, "dist", 0), BOUNDS, 5).unwrap();
        let p2 = sample_params(&mut stream_rng(42, "dist", 0), BOUNDS, 5).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn synthesize_hits_unit_peak() {
        let params = DisturbanceParams {
            per_axis: [
                vec![WaveTriple {
                    amplitude: 1.0,
                    angular_frequency: 1.0,
                    phase: 0.0,
                }],
                vec![WaveTriple {
                    amplitude: 0.0,
                    angular_frequency: 1.0,
                    phase: 0.0,
                }],
                vec![WaveTriple {
                    amplitude: 0.0,
                    angular_frequency: 1.0,
                    phase: 0.0,
                }],
            ],
        };
        // dt chosen so one step lands exactly on t = pi/2.
        let trace = synthesize(&params, 0, 2, PI / 2.0).unwrap();
        assert_eq!(trace.samples[0][0], 0.0);
        assert!((trace.samples[1][0] - 1.0).abs() < 1e-15);
        assert_eq!(trace.samples[1][1], 0.0);
    }

    #[test]
    fn synthesize_matches_per_sample_oracle() {
        let mut rng = stream_rng(7, "dist-oracle", 0);
        let p = sample_params(&mut rng, BOUNDS, 2).unwrap();
        let dt = 0.05;
        let trace = synthesize(&p, 3, 50, dt).unwrap();
        for (i, s) in trace.samples.iter().enumerate() {
            let t = (3 + i) as f64 * dt;
            for axis in 0..AXES {
                // Independent brute-force summation.
                let mut acc = 0.0;
                for w in &p.per_axis[axis] {
                    acc += w.amplitude * (w.angular_frequency * t + w.phase).sin();
                }
                assert!((acc - s[axis]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_wave_trace_repeats_after_the_common_period() {
        // Periods 1 s and 0.5 s -> repeats after 1 s = 20 steps at dt 0.05.
        let tri = |t_period: f64, amp: f64| WaveTriple {
            amplitude: amp,
            angular_frequency: 2.0 * PI / t_period,
            phase: 0.7,
        };
        let params = DisturbanceParams {
            per_axis: [
                vec![tri(1.0, 3.0), tri(0.5, 1.5)],
                vec![tri(1.0, 2.0), tri(0.5, 0.5)],
                vec![tri(1.0, 1.0), tri(0.5, 0.25)],
            ],
        };
        let trace = synthesize(&params, 0, 60, 0.05).unwrap();
        for t in 0..40 {
            for axis in 0..AXES {
                assert!(
                    (trace.samples[t][axis] - trace.samples[t + 20][axis]).abs() < 1e-9,
                    "axis {axis} step {t}"
                );
            }
        }
    }

    #[test]
    fn component2_periods_are_uniform_by_ks_test() {
        let mut rng = stream_rng(1234, "dist-ks", 0);
        let n = 10_000;
        let mut periods: Vec<f64> = (0..n)
            .map(|_| {
                let p = sample_params(&mut rng, BOUNDS, 5).unwrap();
                2.0 * PI / p.per_axis[0][1].angular_frequency
            })
            .collect();
        periods.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(periods.iter().all(|&t| (2.0..=4.0).contains(&t)));
        // KS statistic against U[2, 4].
        let mut d = 0.0_f64;
        for (i, &t) in periods.iter().enumerate() {
            let cdf = (t - 2.0) / 2.0;
            let hi = (i + 1) as f64 / n as f64;
            let lo = i as f64 / n as f64;
            d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
        }
        // 1% critical value: 1.628 / sqrt(n).
        let crit = 1.628 / (n as f64).sqrt();
        assert!(d < crit, "KS statistic {d} >= {crit}");
    }

    #[test]
    fn degenerate_target_trace_reduces_to_synthesize() {
        let cfg = TargetTraceConfig {
            components: 5,
            amplitude_boost: 1.0,
            drift_depth: 0.0,
            noise_std_frac: 0.0,
            ..TargetTraceConfig::default()
        };
        let mut rng_a = stream_rng(9, "target", 0);
        let mut rng_b = rng_a.clone();
        let got = make_target_trace(&mut rng_a, BOUNDS, 120, 0.05, &cfg).unwrap();
        let params = sample_params(&mut rng_b, BOUNDS, 5).unwrap();
        let want = synthesize(&params, 0, 120, 0.05).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn target_trace_can_exceed_the_axis_bound() {
        // Boosted bands push the worst-case sum well past the bound; verify a
        // fixed seed actually realizes an excursion beyond 100% of bound.
        let cfg = TargetTraceConfig::default();
        let mut best = 0.0_f64;
        for idx in 0..20 {
            let mut rng = stream_rng(77, "target-peak", idx);
            let trace = make_target_trace(&mut rng, BOUNDS, 2000, 0.05, &cfg).unwrap();
            let peak = trace
                .samples
                .iter()
                .map(|s| s[0].abs())
                .fold(0.0, f64::max);
            best = best.max(peak / BOUNDS[0]);
        }
        assert!(best > 1.0, "no draw exceeded the bound (best {best})");
    }

    #[test]
    fn target_trace_is_reproducible() {
        let cfg = TargetTraceConfig::default();
        let a = make_target_trace(&mut stream_rng(5, "t", 1), BOUNDS, 300, 0.05, &cfg).unwrap();
        let b = make_target_trace(&mut stream_rng(5, "t", 1), BOUNDS, 300, 0.05, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shared_axes_use_one_draw() {
        let mut rng = stream_rng(11, "dist-shared", 0);
        let p =
            sample_params_with(&mut rng, BOUNDS, 3, AxisCorrelation::Shared, 1.0).unwrap();
        for ci in 0..3 {
            let f0 = p.per_axis[0][ci].amplitude / BOUNDS[0];
            let f2 = p.per_axis[2][ci].amplitude / BOUNDS[2];
            assert!((f0 - f2).abs() < 1e-12);
            assert_eq!(
                p.per_axis[0][ci].angular_frequency,
                p.per_axis[1][ci].angular_frequency
            );
            assert_eq!(p.per_axis[0][ci].phase, p.per_axis[2][ci].phase);
        }
    }

    #[test]
    fn trace_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut rng = stream_rng(3, "dist-io", 0);
        let p = sample_params(&mut rng, BOUNDS, 5).unwrap();
        let trace = synthesize(&p, 0, 40, 0.05).unwrap();
        write_trace(&trace, &path).unwrap();
        let back = read_trace(&path).unwrap();
        assert_eq!(trace, back);
    }

    #[test]
    fn trace_header_mismatch_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "time,fx,fy,tz\n0,1,2,3\n").unwrap();
        let err = read_trace(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn hand_written_three_sample_trace() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("three.csv");
        std::fs::write(&path, "t,fx,fy,tau\n0,1.5,-2,0.25\n0.05,0,0,0\n0.1,3,4,5\n").unwrap();
        let trace = read_trace(&path).unwrap();
        assert_eq!(trace.len(), 3);
        assert_eq!(trace.dt, 0.05);
        assert_eq!(trace.at(0), [1.5, -2.0, 0.25]);
        assert_eq!(trace.at(2), [3.0, 4.0, 5.0]);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad2.csv");
        std::fs::write(&path, "t,fx,fy,tau\n0,1,2,3\n0.05,nope,2,3\n").unwrap();
        match read_trace(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other}"),
        }
    }

    proptest! {
        #[test]
        fn wrap_phase_lands_in_half_open_interval(x in -1000.0..1000.0f64) {
            let w = wrap_phase(x);
            prop_assert!((-PI..PI).contains(&w));
            // The wrap shifts by an exact multiple of 2 pi.
            let turns = (x - w) / (2.0 * PI);
            prop_assert!((turns - turns.round()).abs() < 1e-9);
        }

        #[test]
        fn magnitude_never_exceeds_amplitude_sum(seed in 0u64..500) {
            let mut rng = stream_rng(seed, "dist-prop", 0);
            let k = 1 + (seed as usize % 6);
            let p = sample_params(&mut rng, BOUNDS, k).unwrap();
            let sums = p.amplitude_sum();
            let trace = synthesize(&p, 0, 100, 0.05).unwrap();
            for s in &trace.samples {
                for axis in 0..AXES {
                    prop_assert!(s[axis].abs() <= sums[axis] + 1e-9);
                }
            }
        }

        #[test]
        fn flat_round_trip(seed in 0u64..200) {
            let mut rng = stream_rng(seed, "dist-flat", 0);
            let k = 1 + (seed as usize % 6);
            let p = sample_params(&mut rng, BOUNDS, k).unwrap();
            let q = DisturbanceParams::from_flat(&p.to_flat(), k).unwrap();
            prop_assert_eq!(p, q);
        }
    }
}
