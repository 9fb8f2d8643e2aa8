//! `demokit`: track marker streams, validate episodes, adapt gripper
//! mechanisms, manage pyramid manifests, and run the synthetic experiments.
//!
//! Exit codes are a stable contract: 0 success/valid, 1 validation-invalid,
//! 2 input or config error, 3 internal error. Stdout carries the human
//! summary; machine-readable output goes to `--report`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use demokit_core::feasibility::{validate_episode, EpisodeVerdict};
use demokit_core::geometry::RigidTransform;
use demokit_core::mechanism::{
    flexion_adapt, flexion_forward, parallel_adapt, parallel_forward, FlexionParams,
    FlexionTargets, ParallelParams,
};
use demokit_core::pyramid::{pyramid_stats, stage_filter, Layer, ManifestEntry, PyramidManifest, Stage};
use demokit_core::tracking::{assign_identities, estimate_pose, Assignment};
use demokit::harness::{
    benchmark_model, benchmark_trajectory, default_violation_specs, tracking_experiment,
    validity_experiment, ExperimentConfig, NoiseProfile, TrackingMethod,
};
use demokit::io::{self, IoError};
use serde::Deserialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "demokit", about = "Feasibility-aware demonstration-collection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a marker stream against a labelled object model.
    Track {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Validate a dual-arm episode against chain and limit configs.
    Validate {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        limits: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Solve a gripper template for target motion requirements.
    Adapt {
        #[arg(long)]
        template: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pyramid manifest operations.
    Pyramid {
        #[command(subcommand)]
        command: PyramidCommand,
    },
    /// Run a synthetic experiment from a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Required: experiments are randomized and must be reproducible.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PyramidCommand {
    /// Create an empty manifest.
    Init {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Add an episode file to the manifest.
    Add {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        episode: PathBuf,
    },
    /// Per-task demo/recovery counts and ratios.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// List episode ids for a training stage.
    Stage {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        stage: String,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// Non-zero outcomes that are not ordinary invalid-data verdicts.
enum CliError {
    /// Bad input, schema, or config: exit 2.
    Input(String),
    /// Unexpected internal failure: exit 3.
    Internal(String),
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io(ref inner) if inner.kind() == std::io::ErrorKind::Other => {
                CliError::Internal(e.to_string())
            }
            other => CliError::Input(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Track {
            model,
            stream,
            out,
            report,
        } => cmd_track(&model, &stream, &out, report.as_deref()),
        Command::Validate {
            left,
            right,
            chain,
            limits,
            report,
        } => cmd_validate(&left, &right, &chain, &limits, report.as_deref()),
        Command::Adapt {
            template,
            config,
            out,
        } => cmd_adapt(&template, &config, &out),
        Command::Pyramid { command } => cmd_pyramid(command),
        Command::Experiment {
            config,
            seed,
            report,
        } => cmd_experiment(&config, seed, report.as_deref()),
    }
}

fn write_report(path: Option<&Path>, value: &serde_json::Value) -> Result<(), CliError> {
    if let Some(path) = path {
        std::fs::write(path, serde_json::to_string_pretty(value).map_err(|e| {
            CliError::Internal(e.to_string())
        })?)
        .map_err(|e| CliError::Input(e.to_string()))?;
    }
    Ok(())
}

fn cmd_track(
    model_path: &Path,
    stream_path: &Path,
    out_path: &Path,
    report_path: Option<&Path>,
) -> Result<u8, CliError> {
    let model = io::read_model(model_path)?;
    let frames = io::read_marker_stream(stream_path)?;
    if frames.is_empty() {
        eprintln!("warning: empty stream, writing empty output");
    }

    let mut prior: Option<(RigidTransform, Assignment)> = None;
    let mut out = String::new();
    let mut poses = 0usize;
    let mut occluded = 0usize;
    let mut failures: Vec<serde_json::Value> = Vec::new();

    for (k, frame) in frames.iter().enumerate() {
        let assignment = match assign_identities(&model, frame, prior.as_ref().map(|(p, a)| (p, a)))
        {
            Ok(a) => a,
            Err(e) => {
                failures.push(json!({ "frame": k, "error": e.to_string() }));
                continue;
            }
        };
        occluded += model.marker_count() - assignment.assigned_count();
        if assignment.assigned_count() < 3 {
            failures.push(json!({ "frame": k, "error": "fewer than 3 markers assigned" }));
            continue;
        }
        match estimate_pose(&model, frame, &assignment) {
            Ok((pose, _)) => {
                out.push_str(&io::pose_line(frame.timestamp, &pose));
                out.push('\n');
                poses += 1;
                prior = Some((pose, assignment));
            }
            Err(e) => failures.push(json!({ "frame": k, "error": e.to_string() })),
        }
    }
    std::fs::write(out_path, out).map_err(|e| CliError::Input(e.to_string()))?;
    println!(
        "tracked {poses}/{} frames ({} marker occlusions, {} failures)",
        frames.len(),
        occluded,
        failures.len()
    );
    write_report(
        report_path,
        &json!({
            "frames": frames.len(),
            "poses": poses,
            "occluded_markers": occluded,
            "failures": failures,
        }),
    )?;
    Ok(0)
}

fn cmd_validate(
    left_path: &Path,
    right_path: &Path,
    chain_path: &Path,
    limits_path: &Path,
    report_path: Option<&Path>,
) -> Result<u8, CliError> {
    let left = io::read_trajectory(left_path)?;
    let right = io::read_trajectory(right_path)?;
    let chain = io::read_chain(chain_path)?;
    let (jl, vl) = io::read_limits(limits_path)?;
    let chains = io::dual_chains(&chain);

    let (verdict, log) = validate_episode(&left, &right, &chains, &jl, &vl)
        .map_err(|e| CliError::Input(e.to_string()))?;

    let log_lines = io::verdict_lines(&log);
    let (valid, first_invalid) = match verdict {
        EpisodeVerdict::Valid => (true, None),
        EpisodeVerdict::Invalid { first_frame } => (false, Some(first_frame)),
    };
    match first_invalid {
        None => println!("valid: {} frames, no violations", left.samples.len()),
        Some(f) => {
            let status = log
                .iter()
                .find(|e| e.frame == f && !e.verdict.is_ok())
                .map(|e| e.verdict.status.as_str())
                .unwrap_or("unknown");
            println!("invalid: first violation at frame {f} ({status})");
        }
    }
    write_report(
        report_path,
        &json!({
            "valid": valid,
            "first_invalid_frame": first_invalid,
            "frames": left.samples.len(),
            "log": serde_json::to_value(&log_lines).map_err(|e| CliError::Internal(e.to_string()))?,
        }),
    )?;
    Ok(if valid { 0 } else { 1 })
}

#[derive(Deserialize)]
struct FlexionAdaptConfig {
    targets: FlexionTargetsCfg,
    fixed: FlexionFixedCfg,
}

#[derive(Deserialize)]
struct FlexionTargetsCfg {
    x1_max: f64,
    w_max: f64,
}

#[derive(Deserialize)]
struct FlexionFixedCfg {
    l1: f64,
    l2: f64,
    l3: f64,
    d: f64,
    x4: f64,
}

#[derive(Deserialize)]
struct ParallelAdaptConfig {
    targets: ParallelTargetsCfg,
    fixed: ParallelFixedCfg,
}

#[derive(Deserialize)]
struct ParallelTargetsCfg {
    w_max: f64,
}

#[derive(Deserialize)]
struct ParallelFixedCfg {
    l_c: f64,
}

fn cmd_adapt(template: &str, config_path: &Path, out_path: &Path) -> Result<u8, CliError> {
    let text =
        std::fs::read_to_string(config_path).map_err(|e| CliError::Input(e.to_string()))?;
    match template {
        "flexion" => {
            let cfg: FlexionAdaptConfig =
                toml::from_str(&text).map_err(|e| CliError::Input(e.to_string()))?;
            let fixed = FlexionParams {
                l1: cfg.fixed.l1,
                l2: cfg.fixed.l2,
                l3: cfg.fixed.l3,
                d: cfg.fixed.d,
                x3: 0.0,
                x4: cfg.fixed.x4,
                stroke_max: 1.0,
            };
            let targets = FlexionTargets {
                x1_max: cfg.targets.x1_max,
                w_max: cfg.targets.w_max,
            };
            let adapted =
                flexion_adapt(&targets, &fixed).map_err(|e| CliError::Input(e.to_string()))?;
            let params = FlexionParams {
                x3: adapted.x3,
                stroke_max: adapted.x2_max,
                ..fixed
            };
            // Forward check at the stroke endpoints.
            let s0 = flexion_forward(&params, 0.0).map_err(|e| CliError::Internal(e.to_string()))?;
            let s1 = flexion_forward(&params, adapted.x2_max)
                .map_err(|e| CliError::Internal(e.to_string()))?;
            let r_x1 = (s0.x1.max(s1.x1) - targets.x1_max).abs();
            let r_w = (s0.w.max(s1.w) - targets.w_max).abs();
            io::write_mechanism(out_path, &io::MechanismFile::from_flexion(&params))?;
            println!(
                "flexion solved: x2_max = {:.6} mm, x3 = {:.6} mm",
                adapted.x2_max, adapted.x3
            );
            println!("forward-check residuals: x1 {r_x1:.3e} mm, w {r_w:.3e} mm");
        }
        "parallel" => {
            let cfg: ParallelAdaptConfig =
                toml::from_str(&text).map_err(|e| CliError::Input(e.to_string()))?;
            let l_b = parallel_adapt(cfg.targets.w_max, cfg.fixed.l_c)
                .map_err(|e| CliError::Input(e.to_string()))?;
            let params = ParallelParams {
                l_c: cfg.fixed.l_c,
                l_b,
            };
            let w = parallel_forward(&params).map_err(|e| CliError::Internal(e.to_string()))?;
            io::write_mechanism(out_path, &io::MechanismFile::from_parallel(&params))?;
            println!("parallel solved: l_b = {l_b:.6} mm");
            println!(
                "forward-check residual: w {:.3e} mm",
                (w - cfg.targets.w_max).abs()
            );
        }
        other => {
            return Err(CliError::Input(format!(
                "unknown template {other:?} (expected flexion or parallel)"
            )))
        }
    }
    Ok(0)
}

fn cmd_pyramid(command: PyramidCommand) -> Result<u8, CliError> {
    match command {
        PyramidCommand::Init { manifest } => {
            io::write_manifest(&manifest, &PyramidManifest::default())?;
            println!("initialized empty manifest");
            Ok(0)
        }
        PyramidCommand::Add { manifest, episode } => {
            let mut m = io::read_manifest(&manifest)?;
            let record = io::read_episode(&episode)?;
            let bytes = std::fs::read(&episode).map_err(|e| CliError::Input(e.to_string()))?;
            let entry = ManifestEntry {
                episode_id: record.episode_id.clone(),
                task: record.task.clone(),
                layer: record.layer,
                checksum: io::fnv1a64(&bytes),
            };
            m.add(entry).map_err(|e| CliError::Input(e.to_string()))?;
            io::write_manifest(&manifest, &m)?;
            println!(
                "added {} ({}, {})",
                record.episode_id,
                record.task,
                record.layer.as_str()
            );
            Ok(0)
        }
        PyramidCommand::Stats { manifest, report } => {
            let m = io::read_manifest(&manifest)?;
            let stats = pyramid_stats(&m);
            let mut rows = Vec::new();
            for s in &stats {
                println!(
                    "{}: {} demos, {} recovery, ratio {:.3}",
                    s.task, s.demos, s.recovery, s.ratio
                );
                rows.push(json!({
                    "task": s.task,
                    "demo_count": s.demos,
                    "recovery_count": s.recovery,
                    "recovery_ratio": s.ratio,
                }));
            }
            let layers: serde_json::Map<String, serde_json::Value> = Layer::ALL
                .iter()
                .map(|l| (l.as_str().to_string(), json!(m.layer_count(*l))))
                .collect();
            write_report(
                report.as_deref(),
                &json!({ "tasks": rows, "layer_counts": layers }),
            )?;
            Ok(0)
        }
        PyramidCommand::Stage {
            manifest,
            stage,
            report,
        } => {
            let m = io::read_manifest(&manifest)?;
            let stage = Stage::parse(&stage).map_err(|e| CliError::Input(e.to_string()))?;
            let entries = stage_filter(&m, stage);
            let ids: Vec<&str> = entries.iter().map(|e| e.episode_id.as_str()).collect();
            println!("{} episodes", ids.len());
            for id in &ids {
                println!("{id}");
            }
            write_report(report.as_deref(), &json!({ "episode_ids": ids }))?;
            Ok(0)
        }
    }
}

fn cmd_experiment(
    config_path: &Path,
    seed: Option<u64>,
    report_path: Option<&Path>,
) -> Result<u8, CliError> {
    let seed = seed.ok_or_else(|| {
        CliError::Input("experiments are randomized: --seed is required".into())
    })?;
    let text =
        std::fs::read_to_string(config_path).map_err(|e| CliError::Input(e.to_string()))?;
    let config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Input(e.to_string()))?;

    let report = match &config {
        ExperimentConfig::Tracking {
            trials,
            frames,
            sigma,
            dropout_prob,
            spurious_rate,
            burst_len,
        } => {
            let model = benchmark_model();
            let trajectory = benchmark_trajectory(*frames);
            let profile = NoiseProfile {
                sigma: *sigma,
                dropout_prob: *dropout_prob,
                spurious_rate: *spurious_rate,
                burst_len: *burst_len,
                max_simultaneous: Some(2),
            };
            let object = tracking_experiment(
                &model,
                &trajectory,
                &profile,
                TrackingMethod::ObjectBased,
                *trials,
                seed,
            )
            .map_err(|e| CliError::Input(e.to_string()))?;
            let marker = tracking_experiment(
                &model,
                &trajectory,
                &profile,
                TrackingMethod::MarkerOnly,
                *trials,
                seed,
            )
            .map_err(|e| CliError::Input(e.to_string()))?;
            println!(
                "tracking: object_based {:.1}%, marker_only {:.1}% over {trials} trials",
                100.0 * object,
                100.0 * marker
            );
            json!({
                "config": serde_json::to_value(&config).map_err(|e| CliError::Internal(e.to_string()))?,
                "seed": seed,
                "object_based_success_rate": object,
                "marker_only_success_rate": marker,
            })
        }
        ExperimentConfig::Validity {
            n_clean,
            n_corrupted,
            frames,
            rate,
        } => {
            let chain = demokit_core::feasibility::KinematicChain::test_chain();
            let chains = io::dual_chains(&chain);
            let jl = demokit_core::feasibility::JointLimits::platform_default();
            let vl = demokit_core::feasibility::VelocityLimits::default();
            let result = validity_experiment(
                &chains,
                &jl,
                &vl,
                *n_clean,
                *n_corrupted,
                &default_violation_specs(*frames),
                *frames,
                *rate,
                seed,
            )
            .map_err(|e| CliError::Input(e.to_string()))?;
            println!(
                "validity: clean accepted {:.1}%, corrupted rejected {:.1}%",
                100.0 * result.accept_rate_clean,
                100.0 * result.reject_rate_corrupted
            );
            json!({
                "config": serde_json::to_value(&config).map_err(|e| CliError::Internal(e.to_string()))?,
                "seed": seed,
                "accept_rate_clean": result.accept_rate_clean,
                "reject_rate_corrupted": result.reject_rate_corrupted,
                "trials": serde_json::to_value(&result.trials)
                    .map_err(|e| CliError::Internal(e.to_string()))?,
            })
        }
    };
    write_report(report_path, &report)?;
    Ok(0)
}
