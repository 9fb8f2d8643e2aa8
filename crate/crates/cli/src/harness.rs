//! Synthetic stream generation and the desk-scale tracking/validity
//! experiments. Everything here is a pure function of its inputs and an
//! explicit 64-bit seed (ChaCha8); per-trial seeds are `seed + trial`.

use demokit_core::feasibility::{
    forward_kinematics, validate_episode, DualArmChains, FrameStatus, JointLimits, JointVector,
    KinematicChain, VelocityLimits, DOF,
};
use demokit_core::geometry::RigidTransform;
use demokit_core::tracking::{
    assign_identities, estimate_pose, Assignment, MarkerFrame, MarkerObjectModel, OCCLUSION_GATE,
};
use demokit_core::transfer::{Arm, FlangeSample, FlangeTrajectory};
use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("frame {frame} out of range for episode of {len} frames")]
    FrameOutOfRange { frame: usize, len: usize },
    #[error("invalid noise profile: {0}")]
    InvalidProfile(&'static str),
}

/// Measurement-noise and occlusion model for synthetic marker streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    /// Isotropic position noise sigma (m).
    pub sigma: f64,
    /// Per-frame probability that a visible marker starts an occlusion burst.
    pub dropout_prob: f64,
    /// Expected spurious points per frame.
    pub spurious_rate: f64,
    /// Occlusion burst length (frames).
    pub burst_len: usize,
    /// Optional cap on simultaneously occluded markers; `None` = unlimited.
    #[serde(default)]
    pub max_simultaneous: Option<usize>,
}

impl NoiseProfile {
    pub fn clean() -> Self {
        NoiseProfile {
            sigma: 0.0,
            dropout_prob: 0.0,
            spurious_rate: 0.0,
            burst_len: 1,
            max_simultaneous: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(HarnessError::InvalidProfile("dropout_prob outside [0,1]"));
        }
        if self.sigma < 0.0 || self.spurious_rate < 0.0 {
            return Err(HarnessError::InvalidProfile("negative rate"));
        }
        Ok(())
    }
}

/// A generated stream plus the ground-truth marker-to-observation mapping
/// per frame (`None` = occluded that frame).
#[derive(Debug, Clone)]
pub struct GeneratedStream {
    pub frames: Vec<MarkerFrame>,
    pub truth: Vec<Vec<Option<usize>>>,
}

const STREAM_RATE: f64 = 240.0;

/// Synthesize a marker stream along `trajectory`.
pub fn generate_marker_stream(
    model: &MarkerObjectModel,
    trajectory: &[RigidTransform],
    profile: &NoiseProfile,
    seed: u64,
) -> Result<GeneratedStream, HarnessError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Normal::new(0.0, profile.sigma.max(f64::MIN_POSITIVE)).unwrap();
    let n = model.marker_count();
    let max_occluded = profile.max_simultaneous.unwrap_or(n);

    let mut burst_left = vec![0usize; n];
    let mut frames = Vec::with_capacity(trajectory.len());
    let mut truth = Vec::with_capacity(trajectory.len());

    for (k, pose) in trajectory.iter().enumerate() {
        for i in 0..n {
            if burst_left[i] > 0 {
                burst_left[i] -= 1;
            }
        }
        for i in 0..n {
            let occluded_now = burst_left.iter().filter(|&&b| b > 0).count();
            if burst_left[i] == 0
                && occluded_now < max_occluded
                && rng.gen::<f64>() < profile.dropout_prob
            {
                burst_left[i] = profile.burst_len.max(1);
            }
        }

        let mut tagged: Vec<(Option<usize>, Vector3<f64>)> = Vec::new();
        for (i, r) in model.reference_positions.iter().enumerate() {
            if burst_left[i] > 0 {
                continue;
            }
            let mut p = pose.apply(r);
            if profile.sigma > 0.0 {
                p += Vector3::new(
                    gauss.sample(&mut rng),
                    gauss.sample(&mut rng),
                    gauss.sample(&mut rng),
                );
            }
            tagged.push((Some(i), p));
        }
        let mut spurious = profile.spurious_rate.floor() as usize;
        if rng.gen::<f64>() < profile.spurious_rate.fract() {
            spurious += 1;
        }
        for _ in 0..spurious {
            // Clutter lands near the scene, not on the object.
            let offset = Vector3::new(
                0.3 + 0.2 * rng.gen::<f64>(),
                0.3 + 0.2 * rng.gen::<f64>(),
                0.2 * rng.gen::<f64>(),
            );
            tagged.push((None, pose.translation + offset));
        }
        tagged.shuffle(&mut rng);

        let mut mapping = vec![None; n];
        let mut observations = Vec::with_capacity(tagged.len());
        for (o, (tag, p)) in tagged.into_iter().enumerate() {
            if let Some(i) = tag {
                mapping[i] = Some(o);
            }
            observations.push(p);
        }
        frames.push(MarkerFrame {
            timestamp: k as f64 / STREAM_RATE,
            observations,
        });
        truth.push(mapping);
    }
    Ok(GeneratedStream { frames, truth })
}

/// Which tracker runs in the robustness experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingMethod {
    /// Frame-to-frame nearest-neighbour ID propagation, no model.
    MarkerOnly,
    /// The structured-object pipeline.
    ObjectBased,
}

/// Nearest-neighbour baseline: both trackers get the ground-truth labels of
/// the first frame (the labelled-start convention); after that the baseline
/// matches each marker to the nearest observation within the gate.
fn marker_only_track(n: usize, stream: &GeneratedStream) -> Vec<Vec<Option<usize>>> {
    let mut last_pos: Vec<Option<Vector3<f64>>> = vec![None; n];
    let mut out = Vec::with_capacity(stream.frames.len());
    for (k, frame) in stream.frames.iter().enumerate() {
        let mapping = if k == 0 {
            stream.truth[0].clone()
        } else {
            let mut cands: Vec<(f64, usize, usize)> = Vec::new();
            for i in 0..n {
                if let Some(p) = last_pos[i] {
                    for (o, obs) in frame.observations.iter().enumerate() {
                        let d = (obs - p).norm();
                        if d <= OCCLUSION_GATE {
                            cands.push((d, i, o));
                        }
                    }
                }
            }
            cands.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut mapping = vec![None; n];
            let mut used = vec![false; frame.observations.len()];
            for (_, i, o) in cands {
                if mapping[i].is_none() && !used[o] {
                    mapping[i] = Some(o);
                    used[o] = true;
                }
            }
            mapping
        };
        for i in 0..n {
            if let Some(o) = mapping[i] {
                last_pos[i] = Some(frame.observations[o]);
            }
        }
        out.push(mapping);
    }
    out
}

fn object_based_track(
    model: &MarkerObjectModel,
    stream: &GeneratedStream,
) -> Option<Vec<Vec<Option<usize>>>> {
    let mut out = Vec::with_capacity(stream.frames.len());
    let mut prior: Option<(RigidTransform, Assignment)> = None;
    for frame in &stream.frames {
        let assignment = assign_identities(
            model,
            frame,
            prior.as_ref().map(|(p, a)| (p, a)),
        )
        .ok()?;
        out.push(assignment.mapping.clone());
        if assignment.assigned_count() >= 3 {
            if let Ok((pose, _)) = estimate_pose(model, frame, &assignment) {
                prior = Some((pose, assignment));
            }
        }
    }
    Some(out)
}

fn trial_succeeds(truth: &[Vec<Option<usize>>], tracked: &[Vec<Option<usize>>]) -> bool {
    truth.iter().zip(tracked).all(|(t, m)| {
        t.iter()
            .zip(m)
            .all(|(ti, mi)| ti.is_none() || ti == mi)
    })
}

/// Fraction of trials in which every non-occluded marker keeps its identity
/// in every frame.
pub fn tracking_experiment(
    model: &MarkerObjectModel,
    trajectory: &[RigidTransform],
    profile: &NoiseProfile,
    method: TrackingMethod,
    trials: usize,
    seed: u64,
) -> Result<f64, HarnessError> {
    let mut successes = 0usize;
    for trial in 0..trials {
        let stream = generate_marker_stream(model, trajectory, profile, seed + trial as u64)?;
        let tracked = match method {
            TrackingMethod::MarkerOnly => Some(marker_only_track(model.marker_count(), &stream)),
            TrackingMethod::ObjectBased => object_based_track(model, &stream),
        };
        if tracked.is_some_and(|t| trial_succeeds(&stream.truth, &t)) {
            successes += 1;
        }
    }
    Ok(successes as f64 / trials as f64)
}

/// The six-marker benchmark rig used by the robustness experiment.
pub fn benchmark_model() -> MarkerObjectModel {
    let ids = (1..=6).map(|i| format!("M{i}")).collect();
    let refs = vec![
        Vector3::new(0.000, 0.000, 0.000),
        Vector3::new(0.070, 0.010, 0.000),
        Vector3::new(0.030, 0.060, 0.010),
        Vector3::new(-0.040, 0.045, 0.025),
        Vector3::new(0.010, -0.050, 0.040),
        Vector3::new(0.055, -0.025, 0.055),
    ];
    MarkerObjectModel::new(ids, refs).unwrap()
}

/// A smooth circular sweep fast enough that a marker reappearing after a
/// burst has moved beyond the nearest-neighbour gate.
pub fn benchmark_trajectory(frames: usize) -> Vec<RigidTransform> {
    let radius = 0.15;
    let omega = 2.4; // rad/s -> ~0.36 m/s tangential
    (0..frames)
        .map(|k| {
            let t = k as f64 / STREAM_RATE;
            let rot = RigidTransform::from_axis_angle(&Vector3::z(), 0.4 * (0.9 * t).sin());
            RigidTransform::new(
                rot.rotation,
                Vector3::new(
                    radius * (omega * t).cos(),
                    radius * (omega * t).sin(),
                    0.05 * (1.3 * t).sin(),
                ),
            )
        })
        .collect()
}

// --- feasibility harness ------------------------------------------------------

/// The four corruption archetypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    TcpJump,
    JointLimitExcursion,
    OutOfReach,
    TimeGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationSpec {
    pub kind: ViolationKind,
    pub frame: usize,
    /// Meters for tcp_jump/out_of_reach, radians for the joint excursion,
    /// seconds for time_gap.
    pub magnitude: f64,
}

/// One clean arm trajectory: low-amplitude joint-space sinusoids around a
/// sampled centre configuration, with per-joint speed budgets that bound the
/// TCP speed at half its limit.
fn clean_arm(
    chain: &KinematicChain,
    frames: usize,
    rate: f64,
    arm: Arm,
    rng: &mut ChaCha8Rng,
) -> FlangeTrajectory {
    let nominal = forward_kinematics(chain, &JointVector::zeros()).translation;
    let centre: JointVector = loop {
        let mut c = JointVector::zeros();
        for j in 0..DOF {
            c[j] = f64::to_radians(rng.gen_range(-15.0..15.0));
        }
        // Keep the elbow clear of its asymmetric upper bound.
        c[3] = f64::to_radians(rng.gen_range(-30.0..0.0));
        let p = forward_kinematics(chain, &c).translation;
        if (p - nominal).norm() <= 0.6 {
            break c;
        }
    };
    // Per-joint amplitude*frequency budget: 7 joints, worst-case 1 m lever,
    // totals 0.125 m/s = half the 250 mm/s TCP limit.
    const SPEED_BUDGET: f64 = 0.125 / DOF as f64;
    let mut amp = [0.0; DOF];
    let mut omega = [0.0; DOF];
    let mut phase = [0.0; DOF];
    for j in 0..DOF {
        omega[j] = rng.gen_range(0.5..1.2);
        amp[j] = SPEED_BUDGET / omega[j];
        phase[j] = rng.gen_range(0.0..core::f64::consts::TAU);
    }
    let samples = (0..frames)
        .map(|k| {
            let t = k as f64 / rate;
            let mut q = centre;
            for j in 0..DOF {
                q[j] += amp[j] * (omega[j] * t + phase[j]).sin();
            }
            FlangeSample {
                timestamp: t,
                pose: forward_kinematics(chain, &q),
                gripper_width: 0.04 + 0.01 * (0.8 * t).sin(),
            }
        })
        .collect();
    FlangeTrajectory { rate, arm, samples }
}

/// A dual-arm episode that is feasible by construction. The joint paths are
/// smooth and in-limit, but the validator re-solves IK and can occasionally
/// land on a different solution branch, so each candidate is checked against
/// the platform limits and resampled until it passes.
pub fn clean_episode(
    chains: &DualArmChains,
    frames: usize,
    rate: f64,
    seed: u64,
) -> (FlangeTrajectory, FlangeTrajectory) {
    let jl = JointLimits::platform_default();
    let vl = VelocityLimits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let left = clean_arm(&chains.left, frames, rate, Arm::Left, &mut rng);
        let right = clean_arm(&chains.right, frames, rate, Arm::Right, &mut rng);
        if let Ok((verdict, _)) = validate_episode(&left, &right, chains, &jl, &vl) {
            if verdict.is_valid() {
                return (left, right);
            }
        }
    }
}

/// Apply exactly one corruption; every other frame stays bit-identical. The
/// pose-level kinds touch the left arm only; a time gap shifts the tail of
/// both timelines so they keep matching.
pub fn inject_violation(
    left: &FlangeTrajectory,
    right: &FlangeTrajectory,
    spec: &ViolationSpec,
    chain: &KinematicChain,
    jl: &JointLimits,
) -> Result<(FlangeTrajectory, FlangeTrajectory), HarnessError> {
    let len = left.samples.len();
    let needs_predecessor = !matches!(spec.kind, ViolationKind::OutOfReach);
    if spec.frame >= len || (needs_predecessor && spec.frame == 0) {
        return Err(HarnessError::FrameOutOfRange {
            frame: spec.frame,
            len,
        });
    }
    let mut left = left.clone();
    let mut right = right.clone();
    let k = spec.frame;
    match spec.kind {
        ViolationKind::TcpJump => {
            left.samples[k].pose.translation.z += spec.magnitude;
        }
        ViolationKind::OutOfReach => {
            let p = left.samples[k].pose.translation;
            let dir = if p.norm() > 1e-9 { p / p.norm() } else { Vector3::z() };
            left.samples[k].pose.translation = dir * spec.magnitude;
        }
        ViolationKind::JointLimitExcursion => {
            // A configuration past a shoulder soft limit; depending on how
            // the IK tracks the jump this reads back as a soft-limit or an
            // overspeed violation, always at this frame.
            let mut q = JointVector::zeros();
            q[1] = f64::to_radians(jl.upper_deg[1]) + spec.magnitude;
            left.samples[k].pose = forward_kinematics(chain, &q);
        }
        ViolationKind::TimeGap => {
            for s in &mut left.samples[k..] {
                s.timestamp += spec.magnitude;
            }
            for s in &mut right.samples[k..] {
                s.timestamp += spec.magnitude;
            }
        }
    }
    Ok((left, right))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub valid: bool,
    pub injected: Option<ViolationSpec>,
    /// Whether the verdict log flags the injected frame.
    pub injected_frame_flagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidityReport {
    pub accept_rate_clean: f64,
    pub reject_rate_corrupted: f64,
    pub trials: Vec<TrialOutcome>,
}

pub fn default_violation_specs(frames: usize) -> Vec<ViolationSpec> {
    let mid = frames / 2;
    vec![
        ViolationSpec {
            kind: ViolationKind::TcpJump,
            frame: mid,
            magnitude: 0.02,
        },
        ViolationSpec {
            kind: ViolationKind::JointLimitExcursion,
            frame: mid,
            magnitude: f64::to_radians(20.0),
        },
        ViolationSpec {
            kind: ViolationKind::OutOfReach,
            frame: mid,
            magnitude: 3.0,
        },
        ViolationSpec {
            kind: ViolationKind::TimeGap,
            frame: mid,
            magnitude: 0.5,
        },
    ]
}

/// Generate clean and corrupted populations and run the validator over both.
pub fn validity_experiment(
    chains: &DualArmChains,
    jl: &JointLimits,
    vl: &VelocityLimits,
    n_clean: usize,
    n_corrupted: usize,
    specs: &[ViolationSpec],
    frames: usize,
    rate: f64,
    seed: u64,
) -> Result<ValidityReport, HarnessError> {
    let mut trials = Vec::with_capacity(n_clean + n_corrupted);
    let mut accepted = 0usize;
    let mut rejected = 0usize;

    for i in 0..n_clean {
        let trial_seed = seed + i as u64;
        let (l, r) = clean_episode(chains, frames, rate, trial_seed);
        let (verdict, _) = validate_episode(&l, &r, chains, jl, vl)
            .expect("constructed episodes share a timeline");
        let valid = verdict.is_valid();
        if valid {
            accepted += 1;
        }
        trials.push(TrialOutcome {
            trial: i,
            seed: trial_seed,
            valid,
            injected: None,
            injected_frame_flagged: false,
        });
    }

    for i in 0..n_corrupted {
        let trial_seed = seed + (n_clean + i) as u64;
        let (l, r) = clean_episode(chains, frames, rate, trial_seed);
        let spec = specs[i % specs.len()];
        let (l, r) = inject_violation(&l, &r, &spec, &chains.left, jl)?;
        let (verdict, log) = validate_episode(&l, &r, chains, jl, vl)
            .expect("injection preserves the shared timeline");
        let valid = verdict.is_valid();
        if !valid {
            rejected += 1;
        }
        let flagged = log
            .iter()
            .any(|e| e.frame == spec.frame && e.verdict.status != FrameStatus::Ok);
        trials.push(TrialOutcome {
            trial: n_clean + i,
            seed: trial_seed,
            valid,
            injected: Some(spec),
            injected_frame_flagged: flagged,
        });
    }

    Ok(ValidityReport {
        accept_rate_clean: accepted as f64 / n_clean.max(1) as f64,
        reject_rate_corrupted: rejected as f64 / n_corrupted.max(1) as f64,
        trials,
    })
}

// --- experiment configs ------------------------------------------------------

/// CLI-facing experiment definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentConfig {
    Tracking {
        trials: usize,
        frames: usize,
        sigma: f64,
        dropout_prob: f64,
        spurious_rate: f64,
        burst_len: usize,
    },
    Validity {
        n_clean: usize,
        n_corrupted: usize,
        frames: usize,
        rate: f64,
    },
}
