//! Subcommand orchestration. Every command follows the same shape: load the
//! config, create the run directory and snapshot the config into it verbatim,
//! run the core routine, persist checkpoints/CSV/figures, then write a
//! manifest hashing every file in the run. Re-running the manifest's command
//! against the snapshot and recorded seed reproduces the CSVs byte for byte.

use crate::artifacts;
use crate::recipes::{self, ControllerKind, EvalRecipe, SourceRefs, TargetRef, ZeroController};
use crate::{CommonArgs, ReportArgs};
use std::fs;
use std::path::{Path, PathBuf};
use wavectl_core::a2c::{self, DisturbanceSource, GcpPolicy, PolicyController};
use wavectl_core::config::ConfigDoc;
use wavectl_core::dynamics::make_variated;
use wavectl_core::error::{Error, Result};
use wavectl_core::exec::stream_rng;
use wavectl_core::harness::{
    self, Controller, Disturbance, Manifest, RunDir, CSV_CURVE, CSV_METRICS, CSV_ODI, CSV_SUMMARY,
    CSV_TRANSFER, TRAJECTORY_PREFIX,
};
use wavectl_core::neural::NetworkParams;
use wavectl_core::odi::{self, GcpOdiController, OdiModel, OdiSource};
use wavectl_core::sysid::{self, SysidCurvePoint};
use wavectl_core::trajectory::write_trajectory;
use wavectl_core::transfer::{self, TargetModel, TransferConfig, TransferController};

/// The original config text is copied into the run directory under this name
/// so the manifest's command can be replayed from the run itself.
pub const CONFIG_SNAPSHOT: &str = "config.cfg";

struct RunContext {
    doc: ConfigDoc,
    seed: u64,
    run: RunDir,
    command: &'static str,
}

/// Loads the config, resolves seed and output directory (flag beats config
/// beats default), creates the run directory, and snapshots the config.
fn prepare(args: &CommonArgs, command: &'static str) -> Result<RunContext> {
    let doc = ConfigDoc::load(&args.config)?;
    let raw = fs::read_to_string(&args.config).map_err(|e| {
        Error::config(format!("cannot read config {}: {e}", args.config.display()))
    })?;
    let run_sec = doc.section("run");
    let name = run_sec
        .and_then(|s| s.get("name"))
        .unwrap_or(command)
        .to_string();
    let seed = match args.seed {
        Some(s) => s,
        None => run_sec.map(|s| s.u64_or("seed", 0)).transpose()?.unwrap_or(0),
    };
    let out = match &args.out {
        Some(p) => p.clone(),
        None => match run_sec.and_then(|s| s.get("out")) {
            Some(p) => PathBuf::from(p),
            None => Path::new("out").join(&name),
        },
    };
    let run = RunDir::create(out)?;
    fs::write(run.root().join(CONFIG_SNAPSHOT), &raw)?;
    Ok(RunContext {
        doc,
        seed,
        run,
        command,
    })
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Renders figures for whatever CSV tables the run wrote. Best-effort in
/// commands: a run whose tables exist but cannot render (say, a curve with
/// no finished episode yet) is still a valid run; the `report` subcommand
/// surfaces the same message strictly.
fn emit_figures(run: &RunDir) {
    if let Err(e) = harness::emit_report(run) {
        eprintln!("warning: figures incomplete: {e}");
    }
}

/// Hashes every file in the run directory into the manifest and writes it.
fn finish(ctx: RunContext, stats: Vec<(String, String)>) -> Result<()> {
    let mut files = Vec::new();
    collect_files(ctx.run.root(), &mut files)?;
    files.sort();
    let manifest_path = ctx.run.manifest_path();
    let mut manifest = Manifest::new(ctx.command, ctx.seed, CONFIG_SNAPSHOT);
    for f in &files {
        if *f == manifest_path {
            continue;
        }
        manifest.add_hash(&ctx.run, f)?;
    }
    for (k, v) in stats {
        manifest.add_stat(k, v);
    }
    manifest.write(&manifest_path)?;
    println!("{}: {}", ctx.command, ctx.run.root().display());
    Ok(())
}

pub fn train_gcp(args: &CommonArgs) -> Result<()> {
    let ctx = prepare(args, "train-gcp")?;
    let cfg = recipes::gcp_config(&ctx.doc)?;
    let mode = recipes::parallelism(&ctx.doc)?;
    let art = a2c::train_gcp(&cfg, ctx.seed, mode)?;
    artifacts::save_policy(&ctx.run, &art)?;
    harness::write_curve_csv(&ctx.run.csv(CSV_CURVE), &art.stats.curve)?;
    emit_figures(&ctx.run);
    let mut stats = vec![
        ("variant".to_string(), cfg.variant.name().to_string()),
        ("variation".to_string(), cfg.variation.name().to_string()),
        ("total_steps".to_string(), art.stats.total_steps.to_string()),
        ("episodes".to_string(), art.stats.episodes.len().to_string()),
        (
            "aborted_episodes".to_string(),
            art.stats.aborted_episodes.to_string(),
        ),
    ];
    if let Some(last) = art.stats.curve.last() {
        stats.push(("final_mean_return".to_string(), last.mean_return.to_string()));
    }
    finish(ctx, stats)
}

pub fn train_odi(args: &CommonArgs) -> Result<()> {
    let ctx = prepare(args, "train-odi")?;
    let src = recipes::source_refs(&ctx.doc);
    let gcp_dir = src.gcp.as_ref().ok_or_else(|| {
        Error::config("[source] gcp: missing key (run directory of the trained policy)")
    })?;
    let gcp_art = artifacts::load_policy(gcp_dir)?;
    let cfg = recipes::odi_config(&ctx.doc)?;
    let mode = recipes::parallelism(&ctx.doc)?;
    let art = odi::train_gcp_odi(&gcp_art, &cfg, ctx.seed, mode)?;
    // The run carries both halves of the deployable pair, so downstream
    // configs can point a single directory at it.
    artifacts::save_policy(&ctx.run, &gcp_art)?;
    artifacts::save_identifier(&ctx.run, &art.spec, &art.params)?;
    harness::write_odi_iterations_csv(&ctx.run.csv(CSV_ODI), &art.rows)?;
    let mut stats = vec![
        ("iterations".to_string(), art.rows.len().to_string()),
        ("source_gcp".to_string(), gcp_dir.display().to_string()),
    ];
    for (i, shard) in art.shards.iter().enumerate() {
        let dir = ctx.run.root().join("csv").join(format!("shard_{}", i + 1));
        fs::create_dir_all(&dir)?;
        let sets: Vec<_> = shard.iter().map(|r| r.params.clone()).collect();
        harness::write_params_csv(&dir.join("params.csv"), &sets)?;
        for (j, rec) in shard.iter().enumerate() {
            write_trajectory(&rec.trajectory, &dir.join(format!("trajectory_{j:03}.csv")))?;
        }
        let matched = shard.iter().filter(|r| r.matched).count();
        stats.push((format!("shard_{}_records", i + 1), shard.len().to_string()));
        stats.push((format!("shard_{}_matched", i + 1), matched.to_string()));
    }
    if let Some(last) = art.rows.last() {
        stats.push(("final_val_loss".to_string(), last.odi_val_loss.to_string()));
        stats.push((
            "final_median_converged".to_string(),
            last.median_converged.to_string(),
        ));
    }
    emit_figures(&ctx.run);
    finish(ctx, stats)
}

const SYSID_CURVE_CSV: &str = "sysid_curve.csv";
const SYSID_CURVE_HEADER: &str = "epoch,train_mse,val_mse";

fn write_sysid_curve(path: &Path, curve: &[SysidCurvePoint]) -> Result<()> {
    let mut out = String::from(SYSID_CURVE_HEADER);
    out.push('\n');
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.epoch, p.train_mse, p.val_mse));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn train_dynamics(args: &CommonArgs) -> Result<()> {
    let ctx = prepare(args, "train-dynamics")?;
    let recipe = recipes::dynamics_recipe(&ctx.doc)?;
    let mode = recipes::parallelism(&ctx.doc)?;
    let ground_truth = make_variated(recipe.variation);
    let logs = sysid::collect_random_trajectories(&ground_truth, &recipe.collect, ctx.seed, mode)?;
    let mut split_rng = stream_rng(ctx.seed, "sysid-split", 0);
    let dataset = sysid::build_dataset(&logs, recipe.train_fraction, &mut split_rng)?;
    let mut train_rng = stream_rng(ctx.seed, "sysid-train", 0);
    let (model, stats) = sysid::train_dynamics(&dataset, &recipe.train, &mut train_rng)?;
    artifacts::save_dynamics(&ctx.run, &model)?;
    write_sysid_curve(&ctx.run.csv(SYSID_CURVE_CSV), &stats.curve)?;
    // A few raw logs for the coverage figure.
    for (i, t) in logs.iter().take(3).enumerate() {
        write_trajectory(t, &ctx.run.csv(&format!("{TRAJECTORY_PREFIX}_{i:03}.csv")))?;
    }
    emit_figures(&ctx.run);
    finish(
        ctx,
        vec![
            (
                "variation".to_string(),
                recipe.variation.name().to_string(),
            ),
            ("trajectories".to_string(), logs.len().to_string()),
            (
                "train_transitions".to_string(),
                dataset.train_idx.len().to_string(),
            ),
            (
                "val_transitions".to_string(),
                dataset.val_idx.len().to_string(),
            ),
            ("best_val_mse".to_string(), stats.best_val_mse.to_string()),
            ("best_epoch".to_string(), stats.best_epoch.to_string()),
            ("epochs_run".to_string(), stats.epochs_run.to_string()),
            ("zoh_val_mse".to_string(), stats.zoh_val_mse.to_string()),
        ],
    )
}

fn load_odi_pair(dir: &Path) -> Result<(OdiModel, NetworkParams)> {
    let (spec, params) = artifacts::load_identifier(dir)?;
    Ok((OdiModel::new(spec)?, params))
}

pub fn transfer(args: &CommonArgs) -> Result<()> {
    let ctx = prepare(args, "transfer")?;
    let src = recipes::source_refs(&ctx.doc);
    let gcp_dir = src.gcp.as_ref().ok_or_else(|| {
        Error::config("[source] gcp: missing key (run directory of the frozen policy)")
    })?;
    let gcp_art = artifacts::load_policy(gcp_dir)?;
    let gcp = GcpPolicy::from_artifacts(&gcp_art);
    let odi_pair = match &src.odi {
        Some(dir) => Some(load_odi_pair(dir)?),
        None => None,
    };
    let recipe = recipes::transfer_recipe(&ctx.doc)?;
    let target = target_model(&src, &recipe.target)?;
    let odi_source = recipe
        .odi_source
        .unwrap_or(if odi_pair.is_some() {
            OdiSource::Model
        } else {
            OdiSource::Oracle
        });
    if odi_source == OdiSource::Model && odi_pair.is_none() {
        return Err(Error::config(
            "[transfer] odi_source = model requires [source] odi",
        ));
    }
    let cfg = TransferConfig {
        algorithm: recipe.algorithm,
        target,
        disturbances: recipes::disturbance_source(&ctx.doc)?,
        odi_source,
        mismatch_weight: recipe.mismatch_weight,
        feed_combined_to_source: recipe.feed_combined_to_source,
        comp_hidden: recipe.comp_hidden,
        comp_features: recipe.comp_features,
        n_workers: recipe.n_workers,
        episode_steps: recipe.episode_steps,
        train: recipes::loop_config(&ctx.doc)?,
    };
    let mode = recipes::parallelism(&ctx.doc)?;
    let odi_ref = odi_pair.as_ref().map(|(m, p)| (m, p));
    let art = transfer::train_transfer(&cfg, &gcp, odi_ref, ctx.seed, mode)?;
    artifacts::save_compensator(&ctx.run, &art)?;
    harness::write_curve_csv(&ctx.run.csv(CSV_CURVE), &art.stats.curve)?;
    harness::write_transfer_curve_csv(&ctx.run.csv(CSV_TRANSFER), &art.stats.episodes)?;
    emit_figures(&ctx.run);
    let mut stats = vec![
        ("algorithm".to_string(), art.algorithm.name().to_string()),
        ("source_gcp".to_string(), gcp_dir.display().to_string()),
        ("gcp_checksum".to_string(), art.gcp_checksum.to_string()),
        ("episodes".to_string(), art.stats.episodes.len().to_string()),
        ("total_steps".to_string(), art.stats.total_steps.to_string()),
    ];
    if let Some(dir) = &src.odi {
        stats.push(("source_odi".to_string(), dir.display().to_string()));
    }
    if let Some(c) = art.odi_checksum {
        stats.push(("odi_checksum".to_string(), c.to_string()));
    }
    if let Some(dir) = &src.empirical {
        stats.push(("source_empirical".to_string(), dir.display().to_string()));
    }
    finish(ctx, stats)
}

fn target_model(src: &SourceRefs, target: &TargetRef) -> Result<TargetModel> {
    match target {
        TargetRef::Variation(kind) => Ok(TargetModel::Variation(*kind)),
        TargetRef::Empirical => {
            let dir = src.empirical.as_ref().ok_or_else(|| {
                Error::config(
                    "[source] empirical: missing key (run directory of the fitted dynamics model)",
                )
            })?;
            Ok(TargetModel::Empirical(artifacts::load_dynamics(dir)?))
        }
    }
}

fn build_controller(
    src: &SourceRefs,
    recipe: &EvalRecipe,
    bounds: [f64; 3],
) -> Result<Box<dyn Controller>> {
    let gcp = |key: &str| -> Result<GcpPolicy> {
        let dir = src.gcp.as_ref().ok_or_else(|| {
            Error::config(format!(
                "[source] gcp: missing key (required by controller = {key})"
            ))
        })?;
        Ok(GcpPolicy::from_artifacts(&artifacts::load_policy(dir)?))
    };
    match recipe.controller {
        ControllerKind::Zero => Ok(Box::new(ZeroController)),
        ControllerKind::Policy => Ok(Box::new(PolicyController::new(gcp("policy")?))),
        ControllerKind::GcpOdi => {
            let dir = src.odi.as_ref().ok_or_else(|| {
                Error::config("[source] odi: missing key (required by controller = gcp_odi)")
            })?;
            let (model, params) = load_odi_pair(dir)?;
            let source = recipe.odi_source.unwrap_or(OdiSource::Model);
            Ok(Box::new(GcpOdiController::new(
                gcp("gcp_odi")?,
                model,
                params,
                source,
            )?))
        }
        ControllerKind::Transfer => {
            let dir = src.transfer.as_ref().ok_or_else(|| {
                Error::config("[source] transfer: missing key (required by controller = transfer)")
            })?;
            let art = artifacts::load_compensator(dir)?;
            let odi_pair = match &src.odi {
                Some(d) => Some(load_odi_pair(d)?),
                None => None,
            };
            if art.odi_checksum.is_some() && odi_pair.is_none() {
                return Err(Error::config(
                    "[source] odi: missing key (the compensator was trained with an identifier)",
                ));
            }
            let source = recipe
                .odi_source
                .unwrap_or(if odi_pair.is_some() {
                    OdiSource::Model
                } else {
                    OdiSource::Oracle
                });
            Ok(Box::new(TransferController::new(
                &art,
                gcp("transfer")?,
                odi_pair,
                source,
                bounds,
            )?))
        }
    }
}

fn episode_disturbance<'a>(
    source: &'a DisturbanceSource,
    drawn: &'a Option<wavectl_core::disturbance::DisturbanceParams>,
) -> Disturbance<'a> {
    match (source, drawn) {
        (DisturbanceSource::Trace(tr), _) => Disturbance::Trace(tr),
        (_, Some(p)) => Disturbance::Waves(p),
        (_, None) => Disturbance::Off,
    }
}

pub fn evaluate(args: &CommonArgs) -> Result<()> {
    let ctx = prepare(args, "evaluate")?;
    let recipe = recipes::eval_recipe(&ctx.doc, "evaluate")?;
    let src = recipes::source_refs(&ctx.doc);
    let target = target_model(&src, &recipe.model)?;
    let mut handle = target.build(
        target
            .needs_noise()
            .then(|| stream_rng(ctx.seed, "eval-noise", 0)),
    )?;
    let mut controller = build_controller(&src, &recipe, target.ctrl_bounds())?;
    let source = recipes::disturbance_source(&ctx.doc)?;
    let metrics = harness::evaluate(
        handle.as_mut(),
        controller.as_mut(),
        &source,
        recipe.episodes,
        recipe.steps,
        ctx.seed,
        "eval",
    )?;
    harness::write_metrics_csv(&ctx.run.csv(CSV_METRICS), &metrics)?;
    let summary = harness::summarize(&metrics)?;
    harness::write_summary_csv(&ctx.run.csv(CSV_SUMMARY), &summary)?;
    if recipe.trajectories > 0 {
        // Replays the first episodes with the very draws evaluation used.
        // Targets with process noise get a fresh stream, so their exported
        // paths are representative rather than identical to the metric rows.
        let mut replay = target.build(
            target
                .needs_noise()
                .then(|| stream_rng(ctx.seed, "replay-noise", 0)),
        )?;
        for episode in 0..recipe.trajectories.min(recipe.episodes) {
            let (initial, drawn) = harness::episode_setup(
                &source,
                ctx.seed,
                "eval",
                episode,
                replay.ctrl_bounds(),
                replay.vel_limits(),
            )?;
            let disturbance = episode_disturbance(&source, &drawn);
            let rollout = harness::rollout(
                replay.as_mut(),
                controller.as_mut(),
                initial,
                disturbance,
                recipe.steps,
            )?;
            write_trajectory(
                &rollout.trajectory,
                &ctx.run.csv(&format!("{TRAJECTORY_PREFIX}_{episode:03}.csv")),
            )?;
        }
    }
    emit_figures(&ctx.run);
    finish(
        ctx,
        vec![
            ("controller".to_string(), recipe.controller.name().to_string()),
            ("episodes".to_string(), summary.n_episodes.to_string()),
            ("diverged".to_string(), summary.diverged.to_string()),
            ("aborted".to_string(), summary.aborted.to_string()),
            (
                "median_converged_region".to_string(),
                summary.converged_region.1.to_string(),
            ),
            (
                "median_final_distance".to_string(),
                summary.final_distance.1.to_string(),
            ),
        ],
    )
}

pub fn rollout(args: &CommonArgs) -> Result<()> {
    let ctx = prepare(args, "rollout")?;
    let recipe = recipes::eval_recipe(&ctx.doc, "rollout")?;
    let src = recipes::source_refs(&ctx.doc);
    let target = target_model(&src, &recipe.model)?;
    let mut handle = target.build(
        target
            .needs_noise()
            .then(|| stream_rng(ctx.seed, "eval-noise", 0)),
    )?;
    let mut controller = build_controller(&src, &recipe, target.ctrl_bounds())?;
    let source = recipes::disturbance_source(&ctx.doc)?;
    let (initial, drawn) = harness::episode_setup(
        &source,
        ctx.seed,
        "rollout",
        0,
        handle.ctrl_bounds(),
        handle.vel_limits(),
    )?;
    let disturbance = episode_disturbance(&source, &drawn);
    let episode = harness::rollout(
        handle.as_mut(),
        controller.as_mut(),
        initial,
        disturbance,
        recipe.steps,
    )?;
    let final_distance = episode
        .trajectory
        .states
        .last()
        .map(|s| s.distance())
        .unwrap_or(f64::NAN);
    write_trajectory(
        &episode.trajectory,
        &ctx.run.csv(&format!("{TRAJECTORY_PREFIX}_000.csv")),
    )?;
    emit_figures(&ctx.run);
    finish(
        ctx,
        vec![
            ("controller".to_string(), recipe.controller.name().to_string()),
            ("steps".to_string(), episode.trajectory.len().to_string()),
            ("diverged".to_string(), episode.diverged.to_string()),
            ("aborted".to_string(), episode.aborted.to_string()),
            ("final_distance".to_string(), final_distance.to_string()),
        ],
    )
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let run = RunDir::open(&args.out)?;
    let figures = harness::emit_report(&run)?;
    for f in &figures {
        println!("wrote {}", f.display());
    }
    Ok(())
}
