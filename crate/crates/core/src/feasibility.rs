//! Online executability validation: forward/inverse kinematics for a 7-DoF
//! arm, joint soft limits, joint/TCP speed limits and stream-gap detection,
//! per frame and per episode.
//!
//! Limits are expressed in the controller's units (degrees, deg/s, mm/s);
//! joint states are radians and positions meters internally.

use alloc::vec::Vec;

use nalgebra::{Matrix6, SMatrix, SVector, Vector3, Vector6};
use thiserror::Error;

use crate::geometry::{self, RigidTransform};
use crate::transfer::{Arm, FlangeTrajectory};

pub const DOF: usize = 7;

/// Damped least-squares IK parameters.
const IK_DAMPING: f64 = 1e-3;
const IK_STEP_CLAMP: f64 = 0.2;
const IK_MAX_ITER: usize = 200;
/// Success tolerances: position (m) and orientation (rad).
pub const IK_POS_TOL: f64 = 1e-3;
pub const IK_ROT_TOL: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeasibilityError {
    #[error("trajectories do not share a timeline at frame {0}")]
    TimelineMismatch(usize),
    #[error("invalid chain: {0}")]
    InvalidChain(&'static str),
}

pub type JointVector = SVector<f64, DOF>;

/// One revolute joint: a unit rotation axis and the fixed link transform
/// that follows it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joint {
    pub axis: Vector3<f64>,
    pub link: RigidTransform,
}

/// A serial 7-DoF arm.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub base: RigidTransform,
    pub joints: [Joint; DOF],
}

impl KinematicChain {
    pub fn validate(&self) -> Result<(), FeasibilityError> {
        for j in &self.joints {
            if libm::fabs(j.axis.norm() - 1.0) > 1e-9 {
                return Err(FeasibilityError::InvalidChain("joint axis not unit-norm"));
            }
            if !j.link.is_valid() {
                return Err(FeasibilityError::InvalidChain("link transform invalid"));
            }
        }
        Ok(())
    }

    /// The documented synthetic test chain: alternating z/y axes, link
    /// offsets summing to 1.0 m reach, zero-configuration flange at
    /// (0.1, 0, 0.9) in the base frame.
    pub fn test_chain() -> Self {
        let z = Vector3::z();
        let y = Vector3::y();
        let link = |x: f64, zz: f64| RigidTransform::from_translation(Vector3::new(x, 0.0, zz));
        KinematicChain {
            base: RigidTransform::identity(),
            joints: [
                Joint { axis: z, link: link(0.0, 0.2) },
                Joint { axis: y, link: link(0.0, 0.2) },
                Joint { axis: z, link: link(0.0, 0.15) },
                Joint { axis: y, link: link(0.0, 0.15) },
                Joint { axis: z, link: link(0.0, 0.1) },
                Joint { axis: y, link: link(0.0, 0.1) },
                Joint { axis: z, link: link(0.1, 0.0) },
            ],
        }
    }
}

/// Per-joint soft limits, degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub lower_deg: [f64; DOF],
    pub upper_deg: [f64; DOF],
}

impl JointLimits {
    /// The platform's soft limits.
    pub fn platform_default() -> Self {
        JointLimits {
            lower_deg: [-360.0, -105.0, -360.0, -145.0, -360.0, -105.0, -360.0],
            upper_deg: [360.0, 105.0, 360.0, 30.0, 360.0, 105.0, 360.0],
        }
    }

    pub fn validate(&self) -> Result<(), FeasibilityError> {
        if self
            .lower_deg
            .iter()
            .zip(&self.upper_deg)
            .all(|(lo, hi)| lo < hi)
        {
            Ok(())
        } else {
            Err(FeasibilityError::InvalidChain("joint limit lower >= upper"))
        }
    }
}

/// Velocity and stream-gap limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityLimits {
    /// Max joint speed, deg/s.
    pub joint_max: f64,
    /// Max TCP translational speed, mm/s.
    pub tcp_max: f64,
    /// Max allowed timestamp gap, s.
    pub max_gap: f64,
}

impl Default for VelocityLimits {
    fn default() -> Self {
        VelocityLimits {
            joint_max: 180.0,
            tcp_max: 250.0,
            max_gap: 0.1,
        }
    }
}

/// Executability status of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameStatus {
    Ok,
    CommGap,
    IkFailure,
    SoftLimit,
    JointOverspeed,
    TcpOverspeed,
}

impl FrameStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FrameStatus::Ok => "ok",
            FrameStatus::CommGap => "comm_gap",
            FrameStatus::IkFailure => "ik_failure",
            FrameStatus::SoftLimit => "soft_limit",
            FrameStatus::JointOverspeed => "joint_overspeed",
            FrameStatus::TcpOverspeed => "tcp_overspeed",
        }
    }
}

/// One logged violation with its offending quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub status: FrameStatus,
    /// Offending joint (0-based) for joint-wise checks.
    pub joint: Option<usize>,
    /// The measured value (units of the violated limit).
    pub value: f64,
    /// The limit that was exceeded.
    pub limit: f64,
}

/// Verdict for one frame: first-failure status plus the full violation log.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameVerdict {
    pub status: FrameStatus,
    pub violations: Vec<Violation>,
}

impl FrameVerdict {
    pub fn ok() -> Self {
        FrameVerdict {
            status: FrameStatus::Ok,
            violations: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == FrameStatus::Ok
    }
}

/// Forward kinematics: base, then per-joint rotation about its axis followed
/// by the fixed link transform.
pub fn forward_kinematics(chain: &KinematicChain, q: &JointVector) -> RigidTransform {
    let mut t = chain.base;
    for (joint, &angle) in chain.joints.iter().zip(q.iter()) {
        let rot = RigidTransform::from_axis_angle(&joint.axis, angle);
        t = geometry::compose(&geometry::compose(&t, &rot), &joint.link);
    }
    t
}

/// Geometric Jacobian (6x7): rows are [linear; angular] velocity of the
/// flange per unit joint rate, in the base frame.
fn jacobian(chain: &KinematicChain, q: &JointVector) -> (SMatrix<f64, 6, DOF>, RigidTransform) {
    let mut t = chain.base;
    let mut origins = [Vector3::zeros(); DOF];
    let mut axes = [Vector3::zeros(); DOF];
    for (i, (joint, &angle)) in chain.joints.iter().zip(q.iter()).enumerate() {
        origins[i] = t.translation;
        axes[i] = t.rotation * joint.axis;
        let rot = RigidTransform::from_axis_angle(&joint.axis, angle);
        t = geometry::compose(&geometry::compose(&t, &rot), &joint.link);
    }
    let p_end = t.translation;
    let mut j = SMatrix::<f64, 6, DOF>::zeros();
    for i in 0..DOF {
        let lin = axes[i].cross(&(p_end - origins[i]));
        for r in 0..3 {
            j[(r, i)] = lin[r];
            j[(r + 3, i)] = axes[i][r];
        }
    }
    (j, t)
}

fn pose_error(current: &RigidTransform, target: &RigidTransform) -> Vector6<f64> {
    let dp = target.translation - current.translation;
    let dr = geometry::rotation_log(&(target.rotation * current.rotation.transpose()));
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

/// Outcome of an IK solve.
#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub q: JointVector,
    pub iterations: usize,
    pub pos_residual: f64,
    pub rot_residual: f64,
}

/// IK failure carrying the final iterate and residuals.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("IK did not converge: pos residual {pos_residual} m, rot residual {rot_residual} rad")]
pub struct IkFailure {
    pub q: JointVector,
    pub pos_residual: f64,
    pub rot_residual: f64,
}

/// Iterative differential IK with a damped pseudo-inverse of the geometric
/// Jacobian. Returns the seed unchanged when it already meets tolerance.
pub fn solve_ik(
    chain: &KinematicChain,
    target: &RigidTransform,
    q_seed: &JointVector,
) -> Result<IkSolution, IkFailure> {
    let mut q = *q_seed;
    let mut iterations = 0usize;
    loop {
        let (j, current) = jacobian(chain, &q);
        let e = pose_error(&current, target);
        let pos_residual = Vector3::new(e[0], e[1], e[2]).norm();
        let rot_residual = Vector3::new(e[3], e[4], e[5]).norm();
        if pos_residual < IK_POS_TOL && rot_residual < IK_ROT_TOL {
            return Ok(IkSolution {
                q,
                iterations,
                pos_residual,
                rot_residual,
            });
        }
        if iterations >= IK_MAX_ITER {
            return Err(IkFailure {
                q,
                pos_residual,
                rot_residual,
            });
        }
        let jjt = j * j.transpose() + Matrix6::identity() * (IK_DAMPING * IK_DAMPING);
        let Some(inv) = jjt.try_inverse() else {
            return Err(IkFailure {
                q,
                pos_residual,
                rot_residual,
            });
        };
        let mut dq: JointVector = j.transpose() * (inv * e);
        for v in dq.iter_mut() {
            *v = v.clamp(-IK_STEP_CLAMP, IK_STEP_CLAMP);
        }
        q += dq;
        iterations += 1;
    }
}

/// Previous frame state for velocity checks: (timestamp, solved joints).
pub type PrevState = (f64, JointVector);

/// Check one frame in the fixed order: comm gap, IK, soft limits, joint
/// speed, TCP speed. The first failure sets the status; every triggered
/// check is still logged.
pub fn check_frame(
    chain: &KinematicChain,
    jl: &JointLimits,
    vl: &VelocityLimits,
    prev: Option<&PrevState>,
    t: f64,
    target: &RigidTransform,
) -> (FrameVerdict, JointVector) {
    let mut violations = Vec::new();

    if let Some((pt, _)) = prev {
        let gap = t - pt;
        if gap > vl.max_gap {
            violations.push(Violation {
                status: FrameStatus::CommGap,
                joint: None,
                value: gap,
                limit: vl.max_gap,
            });
        }
    }

    let seed = prev.map_or_else(JointVector::zeros, |(_, q)| *q);
    let q = match solve_ik(chain, target, &seed) {
        Ok(sol) => sol.q,
        Err(fail) => {
            violations.push(Violation {
                status: FrameStatus::IkFailure,
                joint: None,
                value: fail.pos_residual,
                limit: IK_POS_TOL,
            });
            let status = violations[0].status;
            return (FrameVerdict { status, violations }, fail.q);
        }
    };

    violations.extend(post_ik_violations(chain, jl, vl, prev, t, &q));
    let status = order_first(&violations);
    (FrameVerdict { status, violations }, q)
}

/// Run the same per-frame checks on already-known joint states, skipping IK.
/// This is the path used when the controller reports joint feedback directly.
pub fn check_frame_at(
    chain: &KinematicChain,
    jl: &JointLimits,
    vl: &VelocityLimits,
    prev: Option<&PrevState>,
    t: f64,
    q: &JointVector,
) -> FrameVerdict {
    let mut violations = Vec::new();
    if let Some((pt, _)) = prev {
        let gap = t - pt;
        if gap > vl.max_gap {
            violations.push(Violation {
                status: FrameStatus::CommGap,
                joint: None,
                value: gap,
                limit: vl.max_gap,
            });
        }
    }
    violations.extend(post_ik_violations(chain, jl, vl, prev, t, q));
    let status = order_first(&violations);
    FrameVerdict { status, violations }
}

/// Soft-limit, joint-speed and TCP-speed checks on solved joints. All
/// comparisons are strict: a value exactly at its limit passes.
fn post_ik_violations(
    chain: &KinematicChain,
    jl: &JointLimits,
    vl: &VelocityLimits,
    prev: Option<&PrevState>,
    t: f64,
    q: &JointVector,
) -> Vec<Violation> {
    let mut violations = Vec::new();
    for i in 0..DOF {
        let deg = q[i].to_degrees();
        if deg < jl.lower_deg[i] || deg > jl.upper_deg[i] {
            violations.push(Violation {
                status: FrameStatus::SoftLimit,
                joint: Some(i),
                value: deg,
                limit: if deg < jl.lower_deg[i] {
                    jl.lower_deg[i]
                } else {
                    jl.upper_deg[i]
                },
            });
        }
    }

    if let Some((pt, pq)) = prev {
        let dt = t - pt;
        if dt > 0.0 {
            for i in 0..DOF {
                let speed = libm::fabs(q[i] - pq[i]).to_degrees() / dt;
                if speed > vl.joint_max {
                    violations.push(Violation {
                        status: FrameStatus::JointOverspeed,
                        joint: Some(i),
                        value: speed,
                        limit: vl.joint_max,
                    });
                }
            }
            let p_now = forward_kinematics(chain, q).translation;
            let p_prev = forward_kinematics(chain, pq).translation;
            let tcp_speed = (p_now - p_prev).norm() * 1000.0 / dt;
            if tcp_speed > vl.tcp_max {
                violations.push(Violation {
                    status: FrameStatus::TcpOverspeed,
                    joint: None,
                    value: tcp_speed,
                    limit: vl.tcp_max,
                });
            }
        }
    }
    violations
}

/// First failure in the fixed check order.
fn order_first(violations: &[Violation]) -> FrameStatus {
    const ORDER: [FrameStatus; 5] = [
        FrameStatus::CommGap,
        FrameStatus::IkFailure,
        FrameStatus::SoftLimit,
        FrameStatus::JointOverspeed,
        FrameStatus::TcpOverspeed,
    ];
    for status in ORDER {
        if violations.iter().any(|v| v.status == status) {
            return status;
        }
    }
    FrameStatus::Ok
}

/// One entry of the per-frame validation log.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLog {
    pub frame: usize,
    pub arm: Arm,
    pub verdict: FrameVerdict,
}

/// Whole-episode verdict: valid iff every frame of both arms is ok.
#[derive(Debug, Clone, PartialEq)]
pub enum EpisodeVerdict {
    Valid,
    Invalid { first_frame: usize },
}

impl EpisodeVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, EpisodeVerdict::Valid)
    }
}

/// Per-arm chains for a dual-arm platform.
#[derive(Debug, Clone, PartialEq)]
pub struct DualArmChains {
    pub left: KinematicChain,
    pub right: KinematicChain,
}

/// Validate a dual-arm episode frame by frame. Both trajectories must share
/// the timeline exactly.
pub fn validate_episode(
    left: &FlangeTrajectory,
    right: &FlangeTrajectory,
    chains: &DualArmChains,
    jl: &JointLimits,
    vl: &VelocityLimits,
) -> Result<(EpisodeVerdict, Vec<FrameLog>), FeasibilityError> {
    if left.samples.len() != right.samples.len() {
        return Err(FeasibilityError::TimelineMismatch(
            left.samples.len().min(right.samples.len()),
        ));
    }
    for (i, (l, r)) in left.samples.iter().zip(&right.samples).enumerate() {
        if libm::fabs(l.timestamp - r.timestamp) > 1e-9 {
            return Err(FeasibilityError::TimelineMismatch(i));
        }
    }

    let mut log = Vec::with_capacity(2 * left.samples.len());
    let mut first_bad: Option<usize> = None;
    let mut prev_left: Option<PrevState> = None;
    let mut prev_right: Option<PrevState> = None;

    for (i, (l, r)) in left.samples.iter().zip(&right.samples).enumerate() {
        let (vl_verdict, ql) =
            check_frame(&chains.left, jl, vl, prev_left.as_ref(), l.timestamp, &l.pose);
        let (vr_verdict, qr) =
            check_frame(&chains.right, jl, vl, prev_right.as_ref(), r.timestamp, &r.pose);
        if (!vl_verdict.is_ok() || !vr_verdict.is_ok()) && first_bad.is_none() {
            first_bad = Some(i);
        }
        log.push(FrameLog {
            frame: i,
            arm: Arm::Left,
            verdict: vl_verdict,
        });
        log.push(FrameLog {
            frame: i,
            arm: Arm::Right,
            verdict: vr_verdict,
        });
        prev_left = Some((l.timestamp, ql));
        prev_right = Some((r.timestamp, qr));
    }

    let verdict = match first_bad {
        None => EpisodeVerdict::Valid,
        Some(i) => EpisodeVerdict::Invalid { first_frame: i },
    };
    Ok((verdict, log))
}
