//! Rigid-body math foundation: SE(3) transforms, geodesic interpolation and
//! weighted point-set alignment.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Rotation3, Vector3};
use thiserror::Error;

/// Tolerance for orthonormality / equality checks in this module.
pub const GEOM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point set is degenerate: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("relative rotation is antipodal (angle = pi), geodesic is ambiguous")]
    AntipodalRotation,
    #[error("invalid point set: {0}")]
    InvalidPointSet(&'static str),
}

/// A rigid SE(3) transform: orthonormal rotation plus translation (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), translation)
    }

    /// Rotation + translation about/along a unit axis.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::from_rotation(Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(*axis),
            angle,
        )
        .into_inner())
    }

    /// `R` orthonormal with det +1, within `GEOM_TOL`.
    pub fn is_valid(&self) -> bool {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = r.determinant();
        ortho <= GEOM_TOL && libm::fabs(det - 1.0) <= GEOM_TOL && self.translation.iter().all(|v| v.is_finite())
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn invert(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Largest elementwise deviation from another transform.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let dr = (self.rotation - other.rotation).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        dr.max(dt)
    }
}

/// `compose(a, b)` applies `b` first, then `a`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

/// An ordered set of 3-D points, optionally weighted.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub points: Vec<Vector3<f64>>,
    pub weights: Option<Vec<f64>>,
}

impl PointSet {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            weights: None,
        }
    }

    pub fn with_weights(points: Vec<Vector3<f64>>, weights: Vec<f64>) -> Result<Self, GeometryError> {
        if weights.len() != points.len() {
            return Err(GeometryError::InvalidPointSet("weight count != point count"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(GeometryError::InvalidPointSet("weights must be finite and nonnegative"));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(GeometryError::InvalidPointSet("weights must sum to > 0"));
        }
        Ok(Self {
            points,
            weights: Some(weights),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    fn total_weight(&self) -> f64 {
        self.weights
            .as_ref()
            .map_or(self.points.len() as f64, |w| w.iter().sum())
    }

    fn centroid(&self) -> Vector3<f64> {
        let mut c = Vector3::zeros();
        for (i, p) in self.points.iter().enumerate() {
            c += self.weight(i) * p;
        }
        c / self.total_weight()
    }
}

/// Weighted Procrustes alignment: finds the rigid transform `T` minimizing
/// the weighted sum of squared residuals `||T * source_i - target_i||^2`.
///
/// Returns the transform and the root-mean-square residual after alignment.
pub fn kabsch_align(
    source: &PointSet,
    target: &PointSet,
) -> Result<(RigidTransform, f64), GeometryError> {
    if source.len() != target.len() {
        return Err(GeometryError::DegenerateConfiguration("point counts differ"));
    }
    if source.len() < 3 {
        return Err(GeometryError::DegenerateConfiguration("fewer than 3 points"));
    }
    if source
        .points
        .iter()
        .chain(target.points.iter())
        .any(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
    {
        return Err(GeometryError::InvalidPointSet("non-finite coordinate"));
    }

    let sc = source.centroid();
    let tc = target.centroid();
    let total_w = source.total_weight();

    // Cross-covariance of centered clouds, plus the source scatter for the
    // rank check (collinear sources leave the rotation underdetermined).
    let mut h = Matrix3::zeros();
    let mut src_scatter = Matrix3::zeros();
    for i in 0..source.len() {
        let w = source.weight(i);
        let s = source.points[i] - sc;
        let t = target.points[i] - tc;
        h += w * s * t.transpose();
        src_scatter += w * s * s.transpose();
    }

    let scatter_svd = src_scatter.svd(false, false);
    let sv = scatter_svd.singular_values;
    if sv[1] <= 1e-12 * sv[0].max(1e-300) {
        return Err(GeometryError::DegenerateConfiguration(
            "centered source has rank < 2 (collinear)",
        ));
    }

    let svd = h.svd(true, true);
    let u = svd.u.ok_or(GeometryError::DegenerateConfiguration("SVD failed"))?;
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateConfiguration("SVD failed"))?;
    let d = (v_t.transpose() * u.transpose()).determinant();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, if d < 0.0 { -1.0 } else { 1.0 }));
    let rotation = v_t.transpose() * correction * u.transpose();
    let translation = tc - rotation * sc;
    let transform = RigidTransform::new(rotation, translation);

    let mut sq_sum = 0.0;
    for i in 0..source.len() {
        let r = transform.apply(&source.points[i]) - target.points[i];
        sq_sum += source.weight(i) * r.norm_squared();
    }
    let rms = libm::sqrt(sq_sum / total_w);
    Ok((transform, rms))
}

/// Axis-angle logarithm of a rotation matrix (scaled axis, |v| = angle).
pub fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

/// Relative rotation angle between two transforms' rotations, in radians.
pub fn relative_angle(a: &RigidTransform, b: &RigidTransform) -> f64 {
    rotation_log(&(a.rotation.transpose() * b.rotation)).norm()
}

/// Geodesic pose interpolation: translation linear, rotation along the
/// constant-angular-velocity geodesic. `s` in [0, 1].
pub fn interpolate_pose(
    a: &RigidTransform,
    b: &RigidTransform,
    s: f64,
) -> Result<RigidTransform, GeometryError> {
    debug_assert!((0.0..=1.0).contains(&s));
    let rel = a.rotation.transpose() * b.rotation;
    let log = rotation_log(&rel);
    let angle = log.norm();
    if libm::fabs(angle - core::f64::consts::PI) < GEOM_TOL {
        return Err(GeometryError::AntipodalRotation);
    }
    let rotation = if angle <= 1e-15 {
        a.rotation
    } else {
        let step = Rotation3::from_scaled_axis(log * s).into_inner();
        a.rotation * step
    };
    Ok(RigidTransform {
        rotation,
        translation: a.translation * (1.0 - s) + b.translation * s,
    })
}
