//! Forward kinematics and adaptation solvers for the two handheld-gripper
//! mechanism templates: flexion-extension and parallel-jaw.
//!
//! All mechanism quantities are in millimeters; angles in radians.

use libm::{acos, atan2, cos, fabs, sin, sqrt};
use thiserror::Error;

const STROKE_SAMPLES: usize = 1000;
const BISECTION_TOL: f64 = 1e-9;
const BISECTION_MAX_ITER: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
    #[error("slider displacement {x2} outside stroke [0, {stroke_max}]")]
    OutOfStroke { x2: f64, stroke_max: f64 },
    #[error("loop closure infeasible: arccos argument {0} outside [-1, 1]")]
    LoopClosureInfeasible(f64),
    #[error("target {0} unreachable")]
    TargetUnreachable(&'static str),
    #[error("fingertip displacement is not monotonic over the stroke")]
    NonMonotonicStroke,
}

/// Linkage geometry of the flexion-extension gripper interface.
///
/// `x2 = 0` is the slider's foremost position; the stroke increases rearward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlexionParams {
    /// Jaw linkage length (pivot to fingertip).
    pub l1: f64,
    /// Driving linkage length at the slider side.
    pub l2: f64,
    /// Driving linkage length at the jaw side.
    pub l3: f64,
    /// Slider foremost-position distance to the fixed pivot A.
    pub d: f64,
    /// Offset from the slider mounting axis to the gripper symmetry axis.
    pub x3: f64,
    /// Distance from the slider mounting axis to the axis through A
    /// parallel to the symmetry axis.
    pub x4: f64,
    /// Maximum slider displacement.
    pub stroke_max: f64,
}

impl FlexionParams {
    pub fn validate(&self) -> Result<(), MechanismError> {
        if !(self.l1 > 0.0 && self.l2 > 0.0 && self.l3 > 0.0 && self.d > 0.0) {
            return Err(MechanismError::InvalidParams("lengths must be positive"));
        }
        if self.x3 < 0.0 || self.x4 < 0.0 {
            return Err(MechanismError::InvalidParams("offsets must be nonnegative"));
        }
        if !(self.stroke_max > 0.0) {
            return Err(MechanismError::InvalidParams("stroke_max must be positive"));
        }
        // Triangle feasibility over the whole stroke, sampled.
        for k in 0..=STROKE_SAMPLES {
            let x2 = self.stroke_max * k as f64 / STROKE_SAMPLES as f64;
            let l4 = sqrt(self.x4 * self.x4 + (self.d + x2) * (self.d + x2));
            if l4 < fabs(self.l2 - self.l3) - 1e-12 || l4 > self.l2 + self.l3 + 1e-12 {
                return Err(MechanismError::InvalidParams(
                    "triangle inequality violated over the stroke",
                ));
            }
        }
        Ok(())
    }
}

/// Solved configuration of the flexion-extension linkage at one slider position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlexionState {
    pub x2: f64,
    /// Jaw angle.
    pub theta: f64,
    /// Jaw opening width.
    pub w: f64,
    /// Fingertip fore-aft displacement.
    pub x1: f64,
    pub phi2: f64,
    pub phi3: f64,
    /// Slider-to-pivot distance.
    pub l4: f64,
}

/// Crank-slider geometry of the parallel-jaw gripper interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParallelParams {
    /// Crank length.
    pub l_c: f64,
    /// Driving linkage length.
    pub l_b: f64,
}

impl ParallelParams {
    pub fn validate(&self) -> Result<(), MechanismError> {
        if self.l_c > 0.0 && self.l_b > 0.0 {
            Ok(())
        } else {
            Err(MechanismError::InvalidParams("l_c and l_b must be positive"))
        }
    }
}

fn arccos_argument(params: &FlexionParams, x2: f64) -> f64 {
    let l4_sq = params.x4 * params.x4 + (params.d + x2) * (params.d + x2);
    let l4 = sqrt(l4_sq);
    (params.l2 * params.l2 + l4_sq - params.l3 * params.l3) / (2.0 * params.l2 * l4)
}

/// Solve the linkage loop at slider displacement `x2`.
pub fn flexion_forward(params: &FlexionParams, x2: f64) -> Result<FlexionState, MechanismError> {
    params.validate()?;
    if !(0.0..=params.stroke_max).contains(&x2) {
        return Err(MechanismError::OutOfStroke {
            x2,
            stroke_max: params.stroke_max,
        });
    }
    let l4 = sqrt(params.x4 * params.x4 + (params.d + x2) * (params.d + x2));
    let phi3 = atan2(params.x4, params.d + x2);
    let arg = arccos_argument(params, x2);
    if !(-1.0..=1.0).contains(&arg) {
        // Clamp only exact-boundary roundoff.
        if fabs(arg) - 1.0 > 1e-12 {
            return Err(MechanismError::LoopClosureInfeasible(arg));
        }
    }
    let phi2 = acos(arg.clamp(-1.0, 1.0));
    let theta = core::f64::consts::FRAC_PI_2 - phi3 - phi2;
    Ok(FlexionState {
        x2,
        theta,
        w: params.x3 + params.l1 * sin(theta),
        x1: params.l1 * (1.0 - cos(theta)),
        phi2,
        phi3,
        l4,
    })
}

/// Fingertip displacement as a function of `x2` alone (independent of `x3`).
fn x1_of(params: &FlexionParams, x2: f64) -> Result<f64, MechanismError> {
    flexion_forward(params, x2).map(|s| s.x1)
}

/// Largest stroke keeping the loop closed, found by bisection on the
/// arccos-argument boundary.
fn feasible_stroke_upper(params: &FlexionParams) -> f64 {
    let ok = |x2: f64| fabs(arccos_argument(params, x2)) <= 1.0;
    if ok(params.stroke_max) {
        return params.stroke_max;
    }
    let (mut lo, mut hi) = (0.0_f64, params.stroke_max);
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < BISECTION_TOL {
            break;
        }
    }
    lo
}

/// Adaptation targets for the flexion-extension template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlexionTargets {
    pub x1_max: f64,
    pub w_max: f64,
}

/// Result of flexion adaptation: the required stroke and symmetry-axis offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlexionAdaptation {
    pub x2_max: f64,
    pub x3: f64,
}

/// Solve the decoupled adaptation: stroke from `x1_max`, then `x3` from
/// `w_max`. `fixed.x3` and `fixed.stroke_max` are ignored and overwritten.
pub fn flexion_adapt(
    targets: &FlexionTargets,
    fixed: &FlexionParams,
) -> Result<FlexionAdaptation, MechanismError> {
    if !(targets.x1_max > 0.0) || targets.x1_max >= fixed.l1 {
        return Err(MechanismError::TargetUnreachable(
            "x1_max must lie in (0, l1)",
        ));
    }
    // Work over the full feasible stroke regardless of the caller's stroke_max.
    let mut probe = *fixed;
    probe.x3 = 0.0;
    probe.stroke_max = 10.0 * (fixed.l2 + fixed.l3 + fixed.d);
    let upper = feasible_stroke_upper(&probe);
    probe.stroke_max = upper;
    probe.validate()?;

    // Monotonicity of x1 over the searchable range.
    let mut prev = x1_of(&probe, 0.0)?;
    let mut dir = 0.0_f64;
    for k in 1..=STROKE_SAMPLES {
        let x2 = upper * k as f64 / STROKE_SAMPLES as f64;
        let cur = x1_of(&probe, x2)?;
        let step = cur - prev;
        if step != 0.0 {
            if dir == 0.0 {
                dir = step;
            } else if dir * step < 0.0 {
                return Err(MechanismError::NonMonotonicStroke);
            }
        }
        prev = cur;
    }

    let x1_lo = x1_of(&probe, 0.0)?;
    let x1_hi = x1_of(&probe, upper)?;
    let (min_x1, max_x1) = if x1_lo <= x1_hi { (x1_lo, x1_hi) } else { (x1_hi, x1_lo) };
    if targets.x1_max < min_x1 - 1e-9 || targets.x1_max > max_x1 + 1e-9 {
        return Err(MechanismError::TargetUnreachable(
            "x1_max outside the attainable fingertip range",
        ));
    }

    // Bisection on x1(x2) - x1_max.
    let f = |x2: f64| x1_of(&probe, x2).map(|v| v - targets.x1_max);
    let (mut lo, mut hi) = (0.0_f64, upper);
    let increasing = x1_hi >= x1_lo;
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        let go_right = if increasing { fm < 0.0 } else { fm > 0.0 };
        if go_right {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < BISECTION_TOL {
            break;
        }
    }
    let x2_max = 0.5 * (lo + hi);

    // x3 from the endpoint maximum of l1 * sin(theta) over {0, x2_max}.
    let sin_term_at = |x2: f64| -> Result<f64, MechanismError> {
        let s = flexion_forward(&probe, x2)?;
        Ok(fixed.l1 * sin(s.theta))
    };
    let best = sin_term_at(0.0)?.max(sin_term_at(x2_max)?);
    let x3 = targets.w_max - best;
    if x3 < 0.0 {
        return Err(MechanismError::TargetUnreachable(
            "w_max below the jaw contribution, x3 would be negative",
        ));
    }
    Ok(FlexionAdaptation { x2_max, x3 })
}

/// Maximum jaw opening of the crank-slider parallel-jaw template.
pub fn parallel_forward(params: &ParallelParams) -> Result<f64, MechanismError> {
    params.validate()?;
    Ok(params.l_c + 2.0 * params.l_b)
}

/// Solve the driving-linkage length for a target opening at fixed crank.
pub fn parallel_adapt(w_max: f64, l_c: f64) -> Result<f64, MechanismError> {
    if !(l_c > 0.0) {
        return Err(MechanismError::InvalidParams("l_c must be positive"));
    }
    if w_max <= l_c {
        return Err(MechanismError::TargetUnreachable("w_max must exceed l_c"));
    }
    Ok((w_max - l_c) / 2.0)
}
