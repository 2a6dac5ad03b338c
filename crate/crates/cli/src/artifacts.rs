//! Checkpoint bundles: each trained artifact is persisted as a binary tensor
//! checkpoint plus a `.meta` sidecar in the flat config format, holding the
//! structural facts (specs, normalization, checksums) needed to rebuild the
//! typed artifact exactly. All floats round-trip through their shortest
//! decimal form, so save/load is bit-exact.

use crate::recipes::{join, req_f64, req_triple, req_u64, req_usize};
use std::fs;
use std::path::{Path, PathBuf};
use wavectl_core::a2c::{GcpArtifacts, InputVariant, ObsSpec, TrainStats};
use wavectl_core::config::{ConfigDoc, ConfigWriter};
use wavectl_core::error::{Error, Result};
use wavectl_core::harness::RunDir;
use wavectl_core::neural::{
    load_checkpoint, save_checkpoint, FeedforwardSpec, NetworkParams, Tensor,
};
use wavectl_core::odi::OdiSpec;
use wavectl_core::sysid::{EmpiricalModel, Normalizer};
use wavectl_core::transfer::{TransferAlgorithm, TransferArtifacts};

pub const POLICY_CKPT: &str = "policy.ckpt";
pub const POLICY_META: &str = "policy.meta";
pub const ODI_CKPT: &str = "odi.ckpt";
pub const ODI_META: &str = "odi.meta";
pub const DYNAMICS_CKPT: &str = "dynamics.ckpt";
pub const DYNAMICS_META: &str = "dynamics.meta";
pub const COMP_CKPT: &str = "compensator.ckpt";
pub const COMP_META: &str = "compensator.meta";

/// Normalizer statistics ride inside the dynamics checkpoint as plain
/// tensors under these names, keeping them in the bit-exact binary format.
const NORM_TENSORS: [&str; 4] = [
    "norm.input.mean",
    "norm.input.std",
    "norm.label.mean",
    "norm.label.std",
];

/// Artifact references in configs point at a run directory; bundles live in
/// its `checkpoints/` subdirectory.
fn bundle(dir: &Path, name: &str) -> PathBuf {
    dir.join("checkpoints").join(name)
}

fn load_params(path: &Path) -> Result<NetworkParams> {
    if !path.is_file() {
        return Err(Error::config(format!(
            "missing checkpoint {}",
            path.display()
        )));
    }
    load_checkpoint(path)
}

fn write_meta(path: &Path, w: &ConfigWriter) -> Result<()> {
    fs::write(path, w.render())?;
    Ok(())
}

/// Appends `[name] input_dim/output_dim/hidden` describing a feedforward
/// stack. Empty hidden lists are omitted and read back as empty.
fn spec_section(w: &mut ConfigWriter, name: &str, spec: &FeedforwardSpec) {
    w.section(name)
        .entry("input_dim", spec.input_dim)
        .entry("output_dim", spec.output_dim);
    if !spec.hidden_dims.is_empty() {
        w.entry("hidden", join(&spec.hidden_dims));
    }
}

fn read_spec(doc: &ConfigDoc, name: &str) -> Result<FeedforwardSpec> {
    let sec = doc.require(name)?;
    Ok(FeedforwardSpec {
        input_dim: req_usize(sec, "input_dim")?,
        hidden_dims: sec.get_usize_list("hidden")?.unwrap_or_default(),
        output_dim: req_usize(sec, "output_dim")?,
    })
}

pub fn save_policy(run: &RunDir, art: &GcpArtifacts) -> Result<()> {
    save_checkpoint(&run.checkpoint(POLICY_CKPT), &art.params)?;
    let o = &art.obs_spec;
    let mut w = ConfigWriter::new();
    w.section("observation")
        .entry("variant", o.variant.name())
        .entry("k", o.k)
        .entry("window", o.window)
        .entry("bounds", join(&o.bounds))
        .entry("vel_limits", join(&o.vel_limits))
        .entry("omega_lo", o.omega.0)
        .entry("omega_hi", o.omega.1)
        .entry("dt", o.dt);
    spec_section(&mut w, "policy", &art.policy_spec);
    spec_section(&mut w, "value", &art.value_spec);
    write_meta(&run.checkpoint(POLICY_META), &w)
}

/// Loads a policy bundle from a run directory. Training statistics are not
/// persisted; the returned artifact carries empty stats.
pub fn load_policy(dir: &Path) -> Result<GcpArtifacts> {
    let params = load_params(&bundle(dir, POLICY_CKPT))?;
    let doc = ConfigDoc::load(&bundle(dir, POLICY_META))?;
    let sec = doc.require("observation")?;
    let obs_spec = ObsSpec {
        variant: InputVariant::parse(sec.require("variant")?)?,
        k: req_usize(sec, "k")?,
        window: req_usize(sec, "window")?,
        bounds: req_triple(sec, "bounds")?,
        vel_limits: req_triple(sec, "vel_limits")?,
        omega: (req_f64(sec, "omega_lo")?, req_f64(sec, "omega_hi")?),
        dt: req_f64(sec, "dt")?,
    };
    Ok(GcpArtifacts {
        params,
        obs_spec,
        policy_spec: read_spec(&doc, "policy")?,
        value_spec: read_spec(&doc, "value")?,
        stats: TrainStats::default(),
    })
}

pub fn save_identifier(run: &RunDir, spec: &OdiSpec, params: &NetworkParams) -> Result<()> {
    save_checkpoint(&run.checkpoint(ODI_CKPT), params)?;
    let mut w = ConfigWriter::new();
    w.section("identifier")
        .entry("k", spec.k)
        .entry("hidden", spec.hidden)
        .entry("bounds", join(&spec.bounds))
        .entry("vel_limits", join(&spec.vel_limits))
        .entry("omega_lo", spec.omega.0)
        .entry("omega_hi", spec.omega.1);
    write_meta(&run.checkpoint(ODI_META), &w)
}

pub fn load_identifier(dir: &Path) -> Result<(OdiSpec, NetworkParams)> {
    let params = load_params(&bundle(dir, ODI_CKPT))?;
    let doc = ConfigDoc::load(&bundle(dir, ODI_META))?;
    let sec = doc.require("identifier")?;
    let spec = OdiSpec {
        k: req_usize(sec, "k")?,
        hidden: req_usize(sec, "hidden")?,
        bounds: req_triple(sec, "bounds")?,
        vel_limits: req_triple(sec, "vel_limits")?,
        omega: (req_f64(sec, "omega_lo")?, req_f64(sec, "omega_hi")?),
    };
    Ok((spec, params))
}

fn stats_tensor(data: &[f64]) -> Tensor {
    Tensor {
        dims: vec![data.len()],
        data: data.to_vec(),
    }
}

pub fn save_dynamics(run: &RunDir, model: &EmpiricalModel) -> Result<()> {
    let mut params = model.params.clone();
    params.insert(NORM_TENSORS[0], stats_tensor(&model.input_norm.mean))?;
    params.insert(NORM_TENSORS[1], stats_tensor(&model.input_norm.std))?;
    params.insert(NORM_TENSORS[2], stats_tensor(&model.label_norm.mean))?;
    params.insert(NORM_TENSORS[3], stats_tensor(&model.label_norm.std))?;
    save_checkpoint(&run.checkpoint(DYNAMICS_CKPT), &params)?;
    let mut w = ConfigWriter::new();
    w.section("empirical")
        .entry("input_dim", model.spec.input_dim)
        .entry("output_dim", model.spec.output_dim);
    if !model.spec.hidden_dims.is_empty() {
        w.entry("hidden", join(&model.spec.hidden_dims));
    }
    w.entry("dt", model.dt)
        .entry("mass", model.mass)
        .entry("inertia_yaw", model.inertia_yaw)
        .entry("ctrl_bounds", join(&model.ctrl_bounds))
        .entry("vel_limits", join(&model.vel_limits));
    if !model.input_norm.floored.is_empty() {
        w.entry("input_floored", join(&model.input_norm.floored));
    }
    if !model.label_norm.floored.is_empty() {
        w.entry("label_floored", join(&model.label_norm.floored));
    }
    write_meta(&run.checkpoint(DYNAMICS_META), &w)
}

pub fn load_dynamics(dir: &Path) -> Result<EmpiricalModel> {
    let loaded = load_params(&bundle(dir, DYNAMICS_CKPT))?;
    let mut params = NetworkParams::new();
    let mut stats: [Option<Vec<f64>>; 4] = [None, None, None, None];
    for (name, tensor) in loaded.iter() {
        match NORM_TENSORS.iter().position(|&n| n == name) {
            Some(i) => stats[i] = Some(tensor.data.clone()),
            None => params.insert(name, tensor.clone())?,
        }
    }
    let mut take = |i: usize| -> Result<Vec<f64>> {
        stats[i]
            .take()
            .ok_or_else(|| Error::format(format!("checkpoint lacks tensor `{}`", NORM_TENSORS[i])))
    };
    let (input_mean, input_std) = (take(0)?, take(1)?);
    let (label_mean, label_std) = (take(2)?, take(3)?);
    let doc = ConfigDoc::load(&bundle(dir, DYNAMICS_META))?;
    let sec = doc.require("empirical")?;
    Ok(EmpiricalModel {
        spec: FeedforwardSpec {
            input_dim: req_usize(sec, "input_dim")?,
            hidden_dims: sec.get_usize_list("hidden")?.unwrap_or_default(),
            output_dim: req_usize(sec, "output_dim")?,
        },
        params,
        input_norm: Normalizer {
            mean: input_mean,
            std: input_std,
            floored: sec.get_usize_list("input_floored")?.unwrap_or_default(),
        },
        label_norm: Normalizer {
            mean: label_mean,
            std: label_std,
            floored: sec.get_usize_list("label_floored")?.unwrap_or_default(),
        },
        dt: req_f64(sec, "dt")?,
        mass: req_f64(sec, "mass")?,
        inertia_yaw: req_f64(sec, "inertia_yaw")?,
        ctrl_bounds: req_triple(sec, "ctrl_bounds")?,
        vel_limits: req_triple(sec, "vel_limits")?,
    })
}

pub fn save_compensator(run: &RunDir, art: &TransferArtifacts) -> Result<()> {
    save_checkpoint(&run.checkpoint(COMP_CKPT), &art.params)?;
    let mut w = ConfigWriter::new();
    w.section("compensator")
        .entry("algorithm", art.algorithm.name())
        .entry("mismatch_weight", art.mismatch_weight)
        .entry("gcp_checksum", art.gcp_checksum);
    if let Some(d) = art.feature_dim {
        w.entry("feature_dim", d);
    }
    if let Some(c) = art.odi_checksum {
        w.entry("odi_checksum", c);
    }
    spec_section(&mut w, "comp", &art.comp_spec);
    spec_section(&mut w, "value", &art.value_spec);
    write_meta(&run.checkpoint(COMP_META), &w)
}

pub fn load_compensator(dir: &Path) -> Result<TransferArtifacts> {
    let params = load_params(&bundle(dir, COMP_CKPT))?;
    let doc = ConfigDoc::load(&bundle(dir, COMP_META))?;
    let sec = doc.require("compensator")?;
    Ok(TransferArtifacts {
        algorithm: TransferAlgorithm::parse(sec.require("algorithm")?)?,
        params,
        comp_spec: read_spec(&doc, "comp")?,
        value_spec: read_spec(&doc, "value")?,
        feature_dim: sec.get_usize("feature_dim")?,
        mismatch_weight: req_f64(sec, "mismatch_weight")?,
        stats: TrainStats::default(),
        gcp_checksum: req_u64(sec, "gcp_checksum")?,
        odi_checksum: sec.get_u64("odi_checksum")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use wavectl_core::a2c::{train_gcp, GcpConfig, LoopConfig};
    use wavectl_core::exec::{stream_rng, Parallelism};
    use wavectl_core::odi::OdiModel;
    use wavectl_core::sysid::{
        build_dataset, collect_random_trajectories, train_dynamics, CollectConfig,
        SysidTrainConfig,
    };

    fn tiny_policy() -> GcpArtifacts {
        let cfg = GcpConfig {
            hidden: vec![6],
            n_workers: 1,
            loopcfg: LoopConfig {
                n_steps: 4,
                total_updates: 2,
                ..LoopConfig::default()
            },
            ..GcpConfig::default()
        };
        train_gcp(&cfg, 11, Parallelism::Sequential).unwrap()
    }

    #[test]
    fn policy_bundle_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path().join("run")).unwrap();
        let art = tiny_policy();
        save_policy(&run, &art).unwrap();
        let back = load_policy(run.root()).unwrap();
        assert_eq!(back.params.checksum(), art.params.checksum());
        assert_eq!(format!("{:?}", back.obs_spec), format!("{:?}", art.obs_spec));
        assert_eq!(back.policy_spec, art.policy_spec);
        assert_eq!(back.value_spec, art.value_spec);
    }

    #[test]
    fn identifier_bundle_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path().join("run")).unwrap();
        let spec = OdiSpec::new(2, 8, [112.0, 112.0, 82.0], [1.0, 1.0, 1.5]).unwrap();
        let model = OdiModel::new(spec.clone()).unwrap();
        let params = model.init(&mut stream_rng(3, "t", 0)).unwrap();
        save_identifier(&run, &spec, &params).unwrap();
        let (spec2, params2) = load_identifier(run.root()).unwrap();
        assert_eq!(format!("{spec2:?}"), format!("{spec:?}"));
        assert_eq!(params2.checksum(), params.checksum());
    }

    #[test]
    fn dynamics_bundle_round_trips_with_normalizers() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path().join("run")).unwrap();
        let ground = wavectl_core::dynamics::make_default_variation();
        let collect = CollectConfig {
            total_steps: 300,
            trajectory_steps: 100,
            ..CollectConfig::default()
        };
        let logs =
            collect_random_trajectories(&ground, &collect, 5, Parallelism::Sequential).unwrap();
        let dataset = build_dataset(&logs, 0.8, &mut stream_rng(5, "split", 0)).unwrap();
        let cfg = SysidTrainConfig {
            hidden: vec![8],
            epochs: 2,
            batch_size: 64,
            ..SysidTrainConfig::default()
        };
        let (model, _) = train_dynamics(&dataset, &cfg, &mut stream_rng(5, "fit", 0)).unwrap();
        save_dynamics(&run, &model).unwrap();
        let back = load_dynamics(run.root()).unwrap();
        assert_eq!(back.params.checksum(), model.params.checksum());
        assert_eq!(back.input_norm, model.input_norm);
        assert_eq!(back.label_norm, model.label_norm);
        assert_eq!(back.spec, model.spec);
        assert_eq!(back.dt.to_bits(), model.dt.to_bits());
        assert_eq!(back.mass.to_bits(), model.mass.to_bits());
        assert_eq!(back.inertia_yaw.to_bits(), model.inertia_yaw.to_bits());
    }

    #[test]
    fn compensator_bundle_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path().join("run")).unwrap();
        let mut params = NetworkParams::new();
        params
            .insert(
                "comp.w0",
                Tensor {
                    dims: vec![2, 2],
                    data: vec![0.25, -1.5, 3.0, 0.125],
                },
            )
            .unwrap();
        let art = TransferArtifacts {
            algorithm: TransferAlgorithm::TmcFeature,
            params,
            comp_spec: FeedforwardSpec::new(9, &[16], 8).unwrap(),
            value_spec: FeedforwardSpec::new(12, &[16], 1).unwrap(),
            feature_dim: Some(8),
            mismatch_weight: 0.75,
            stats: TrainStats::default(),
            gcp_checksum: 0xdead_beef_u64,
            odi_checksum: Some(42),
        };
        save_compensator(&run, &art).unwrap();
        let back = load_compensator(run.root()).unwrap();
        assert_eq!(back.algorithm, art.algorithm);
        assert_eq!(back.params.checksum(), art.params.checksum());
        assert_eq!(back.comp_spec, art.comp_spec);
        assert_eq!(back.value_spec, art.value_spec);
        assert_eq!(back.feature_dim, art.feature_dim);
        assert_eq!(back.mismatch_weight.to_bits(), art.mismatch_weight.to_bits());
        assert_eq!(back.gcp_checksum, art.gcp_checksum);
        assert_eq!(back.odi_checksum, art.odi_checksum);
    }

    #[test]
    fn missing_checkpoint_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = match load_policy(dir.path()) {
            Ok(_) => panic!("expected an error for a missing bundle"),
            Err(e) => e,
        };
        assert!(err.to_string().contains("policy.ckpt"), "{err}");
    }
}
