//! Structured marker-object tracking: model construction, identity
//! assignment under occlusion, pose estimation, occluded-marker recovery,
//! flange-frame construction and gripper-opening estimation.
//!
//! Identity assignment minimizes a pairwise-distance inconsistency cost over
//! injective marker-to-observation mappings, solved exactly by branch and
//! bound (marker counts stay small).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{self, GeometryError, PointSet, RigidTransform};

/// Gating radius for occlusion declaration against prior predictions (m).
pub const OCCLUSION_GATE: f64 = 0.005;
/// Weight of the prior-proximity term in the assignment cost (1/m^2).
pub const PRIOR_WEIGHT: f64 = 1.0;
/// Cost margin below which two best assignments count as ambiguous (m^2).
pub const AMBIGUITY_MARGIN: f64 = 1e-9;
/// RMS pairwise-distance deviation above which a model sequence is
/// rejected as non-rigid (m).
pub const RIGIDITY_TOL: f64 = 2e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackingError {
    #[error("model sequence too short: {0} frames (need >= 10)")]
    InsufficientFrames(usize),
    #[error("sequence is not rigid: worst frame RMS distance deviation {0} m")]
    NonRigidSequence(f64),
    #[error("two best assignments are within {0} m^2 and no prior disambiguates")]
    AmbiguousAssignment(f64),
    #[error("frame marker {0} required for flange construction is missing")]
    MissingFrameMarker(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid model: {0}")]
    InvalidModel(&'static str),
}

/// A structured marker object: identities plus fixed pairwise geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerObjectModel {
    pub marker_ids: Vec<String>,
    /// Body-frame marker positions (m), centroid at the origin.
    pub reference_positions: Vec<Vector3<f64>>,
    /// Symmetric pairwise distance matrix derived from the references (m).
    pub pairwise_distances: Vec<Vec<f64>>,
}

impl MarkerObjectModel {
    pub fn new(
        marker_ids: Vec<String>,
        reference_positions: Vec<Vector3<f64>>,
    ) -> Result<Self, TrackingError> {
        if marker_ids.len() != reference_positions.len() {
            return Err(TrackingError::InvalidModel("id/position count mismatch"));
        }
        if marker_ids.len() < 4 {
            return Err(TrackingError::InvalidModel("need >= 4 markers"));
        }
        let pairwise = pairwise_matrix(&reference_positions);
        Ok(Self {
            marker_ids,
            reference_positions,
            pairwise_distances: pairwise,
        })
    }

    pub fn marker_count(&self) -> usize {
        self.marker_ids.len()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.marker_ids.iter().position(|m| m == id)
    }
}

fn pairwise_matrix(points: &[Vector3<f64>]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = (points[i] - points[j]).norm();
        }
    }
    m
}

/// One motion-capture frame: unlabeled observations, possibly with dropouts
/// and spurious points.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerFrame {
    pub timestamp: f64,
    pub observations: Vec<Vector3<f64>>,
}

/// Marker-to-observation mapping; `None` marks an occluded marker.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub mapping: Vec<Option<usize>>,
    /// Assignment inconsistency score (m).
    pub residual: f64,
}

impl Assignment {
    pub fn assigned_count(&self) -> usize {
        self.mapping.iter().filter(|m| m.is_some()).count()
    }

    pub fn occluded_markers(&self) -> impl Iterator<Item = usize> + '_ {
        self.mapping
            .iter()
            .enumerate()
            .filter(|(_, m)| m.is_none())
            .map(|(i, _)| i)
    }
}

/// Total assignment cost of a (partial, injective) mapping: pairwise-distance
/// inconsistency, plus a fixed penalty per occluded marker, plus an optional
/// prior-proximity term. Exposed so oracles can evaluate the same objective.
pub fn assignment_cost(
    model: &MarkerObjectModel,
    frame: &MarkerFrame,
    mapping: &[Option<usize>],
    predicted: Option<&[Vector3<f64>]>,
) -> f64 {
    let mut cost = 0.0;
    let n = model.marker_count();
    for i in 0..n {
        match mapping[i] {
            None => cost += occlusion_penalty(n),
            Some(oi) => {
                if let Some(pred) = predicted {
                    cost += PRIOR_WEIGHT * (frame.observations[oi] - pred[i]).norm_squared();
                }
                for j in 0..i {
                    if let Some(oj) = mapping[j] {
                        let d = (frame.observations[oi] - frame.observations[oj]).norm();
                        let dev = d - model.pairwise_distances[i][j];
                        cost += dev * dev;
                    }
                }
            }
        }
    }
    cost
}

/// Per-marker occlusion penalty, sized so that a marker whose pairwise
/// deviations all exceed the gate is cheaper to drop than to keep.
fn occlusion_penalty(marker_count: usize) -> f64 {
    OCCLUSION_GATE * OCCLUSION_GATE * (marker_count.saturating_sub(1)) as f64
}

struct AssignSearch<'a> {
    model: &'a MarkerObjectModel,
    frame: &'a MarkerFrame,
    predicted: Option<Vec<Vector3<f64>>>,
    candidates: Vec<Vec<Option<usize>>>,
    best_cost: f64,
    best: Vec<Option<usize>>,
    second_cost: f64,
    current: Vec<Option<usize>>,
    used: Vec<bool>,
}

impl<'a> AssignSearch<'a> {
    fn run(mut self) -> (Vec<Option<usize>>, f64, f64) {
        self.dfs(0, 0.0);
        (self.best, self.best_cost, self.second_cost)
    }

    fn dfs(&mut self, marker: usize, acc: f64) {
        // Prune against the second-best bound so ambiguity stays detectable.
        if acc >= self.second_cost {
            return;
        }
        if marker == self.model.marker_count() {
            if acc < self.best_cost {
                if self.current != self.best {
                    self.second_cost = self.best_cost;
                }
                self.best_cost = acc;
                self.best = self.current.clone();
            } else if self.current != self.best && acc < self.second_cost {
                self.second_cost = acc;
            }
            return;
        }
        let options = self.candidates[marker].clone();
        for opt in options {
            if let Some(oi) = opt {
                if self.used[oi] {
                    continue;
                }
                let mut step = 0.0;
                if let Some(pred) = &self.predicted {
                    step += PRIOR_WEIGHT
                        * (self.frame.observations[oi] - pred[marker]).norm_squared();
                }
                for j in 0..marker {
                    if let Some(oj) = self.current[j] {
                        let d = (self.frame.observations[oi] - self.frame.observations[oj]).norm();
                        let dev = d - self.model.pairwise_distances[marker][j];
                        step += dev * dev;
                    }
                }
                self.used[oi] = true;
                self.current[marker] = Some(oi);
                self.dfs(marker + 1, acc + step);
                self.used[oi] = false;
            } else {
                self.current[marker] = None;
                self.dfs(marker + 1, acc + occlusion_penalty(self.model.marker_count()));
            }
            self.current[marker] = None;
        }
    }
}

/// Assign marker identities to the frame's unlabeled observations.
///
/// With fewer than 3 observations the whole frame is reported occluded. A
/// prior (previous pose and assignment) gates candidates to a 5 mm radius
/// around predicted positions and adds a proximity term to the cost.
pub fn assign_identities(
    model: &MarkerObjectModel,
    frame: &MarkerFrame,
    prior: Option<(&RigidTransform, &Assignment)>,
) -> Result<Assignment, TrackingError> {
    let n = model.marker_count();
    if frame.observations.len() < 3 {
        return Ok(Assignment {
            mapping: vec![None; n],
            residual: 0.0,
        });
    }

    let predicted: Option<Vec<Vector3<f64>>> = prior.map(|(pose, _)| {
        model
            .reference_positions
            .iter()
            .map(|r| pose.apply(r))
            .collect()
    });

    // Candidate observations per marker: everything without a prior,
    // gate-filtered with one.
    let candidates: Vec<Vec<Option<usize>>> = (0..n)
        .map(|i| {
            let mut opts: Vec<Option<usize>> = (0..frame.observations.len())
                .filter(|&o| match &predicted {
                    Some(pred) => (frame.observations[o] - pred[i]).norm() <= OCCLUSION_GATE,
                    None => true,
                })
                .map(Some)
                .collect();
            opts.push(None);
            opts
        })
        .collect();

    let search = AssignSearch {
        model,
        frame,
        predicted: predicted.clone(),
        candidates,
        best_cost: f64::INFINITY,
        best: vec![None; n],
        second_cost: f64::INFINITY,
        current: vec![None; n],
        used: vec![false; frame.observations.len()],
    };
    let (best, best_cost, second_cost) = search.run();

    if prior.is_none()
        && second_cost.is_finite()
        && (second_cost - best_cost) < AMBIGUITY_MARGIN
    {
        return Err(TrackingError::AmbiguousAssignment(second_cost - best_cost));
    }

    Ok(Assignment {
        mapping: best,
        residual: libm::sqrt(best_cost.max(0.0)),
    })
}

/// Estimate the object pose from an assigned frame via point-set alignment.
pub fn estimate_pose(
    model: &MarkerObjectModel,
    frame: &MarkerFrame,
    assignment: &Assignment,
) -> Result<(RigidTransform, f64), TrackingError> {
    let mut src = Vec::new();
    let mut tgt = Vec::new();
    for (i, m) in assignment.mapping.iter().enumerate() {
        if let Some(oi) = m {
            src.push(model.reference_positions[i]);
            tgt.push(frame.observations[*oi]);
        }
    }
    let (pose, rms) = geometry::kabsch_align(&PointSet::new(src), &PointSet::new(tgt))?;
    Ok((pose, rms))
}

/// Reconstruct occluded markers from the estimated pose and the model.
pub fn recover_occluded(
    model: &MarkerObjectModel,
    pose: &RigidTransform,
    assignment: &Assignment,
) -> Vec<(String, Vector3<f64>)> {
    assignment
        .occluded_markers()
        .map(|i| {
            (
                model.marker_ids[i].clone(),
                pose.apply(&model.reference_positions[i]),
            )
        })
        .collect()
}

/// Build a marker-object model from a labeled first frame and a short
/// unlabeled sequence, averaging body-frame positions across frames.
pub fn build_model(
    first_frame_ids: &[String],
    first_frame_points: &[Vector3<f64>],
    sequence: &[MarkerFrame],
) -> Result<MarkerObjectModel, TrackingError> {
    if sequence.len() < 10 {
        return Err(TrackingError::InsufficientFrames(sequence.len()));
    }
    let n = first_frame_ids.len();
    let centroid: Vector3<f64> = first_frame_points.iter().sum::<Vector3<f64>>() / n as f64;
    let initial_refs: Vec<Vector3<f64>> =
        first_frame_points.iter().map(|p| p - centroid).collect();
    let provisional = MarkerObjectModel::new(first_frame_ids.to_vec(), initial_refs.clone())?;

    let mut sums = initial_refs.clone();
    let mut counts = vec![1usize; n];
    let mut dist_matrices: Vec<Vec<Vec<f64>>> = vec![pairwise_matrix(&initial_refs)];

    // The provisional model is centred; seed the prior at the first frame's
    // centroid so tracking starts in the capture frame.
    let mut prior_pose = RigidTransform::from_translation(centroid);
    let mut prior_assignment = Assignment {
        mapping: (0..n).map(Some).collect(),
        residual: 0.0,
    };

    for frame in sequence {
        let assignment =
            assign_identities(&provisional, frame, Some((&prior_pose, &prior_assignment)))?;
        if assignment.assigned_count() < 3 {
            continue;
        }
        let (pose, _) = estimate_pose(&provisional, frame, &assignment)?;
        let inv = pose.invert();
        let mut body = vec![None; n];
        for (i, m) in assignment.mapping.iter().enumerate() {
            if let Some(oi) = m {
                let p = inv.apply(&frame.observations[*oi]);
                sums[i] += p;
                counts[i] += 1;
                body[i] = Some(p);
            }
        }
        if body.iter().all(|b| b.is_some()) {
            let pts: Vec<Vector3<f64>> = body.into_iter().map(|b| b.unwrap()).collect();
            dist_matrices.push(pairwise_matrix(&pts));
        }
        prior_pose = pose;
        prior_assignment = assignment;
    }

    // Rigidity check: per-frame distance matrices against their mean.
    let mut mean = vec![vec![0.0; n]; n];
    for m in &dist_matrices {
        for i in 0..n {
            for j in 0..n {
                mean[i][j] += m[i][j] / dist_matrices.len() as f64;
            }
        }
    }
    let mut worst = 0.0_f64;
    for m in &dist_matrices {
        let mut sq = 0.0;
        let mut cnt = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                let dev = m[i][j] - mean[i][j];
                sq += dev * dev;
                cnt += 1;
            }
        }
        worst = worst.max(libm::sqrt(sq / cnt as f64));
    }
    if worst > RIGIDITY_TOL {
        return Err(TrackingError::NonRigidSequence(worst));
    }

    let mut refs: Vec<Vector3<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, c)| s / *c as f64)
        .collect();
    let c: Vector3<f64> = refs.iter().sum::<Vector3<f64>>() / n as f64;
    for r in &mut refs {
        *r -= c;
    }
    MarkerObjectModel::new(first_frame_ids.to_vec(), refs)
}

/// Collector side, selecting which marker pair defines the y-axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// The largest-separation marker pair named by the layout convention.
    pub fn axis_pair(&self) -> (&'static str, &'static str) {
        match self {
            Side::Right => ("R1", "R5"),
            Side::Left => ("L1", "L4"),
        }
    }
}

fn marker_index(id: &str) -> u32 {
    id.chars()
        .filter(|c| c.is_ascii_digit())
        .fold(0u32, |acc, c| acc * 10 + c.to_digit(10).unwrap())
}

/// Construct the collector's local frame from labeled markers: y along the
/// designated largest-separation pair, x the marker-plane normal (sign fixed
/// by the three lowest-index markers), z completing a right-handed triad,
/// origin at the marker centroid.
pub fn construct_flange_frame(
    side: Side,
    labeled_points: &[(String, Vector3<f64>)],
) -> Result<RigidTransform, TrackingError> {
    let (lo_id, hi_id) = side.axis_pair();
    let find = |id: &str| {
        labeled_points
            .iter()
            .find(|(m, _)| m == id)
            .map(|(_, p)| *p)
            .ok_or_else(|| TrackingError::MissingFrameMarker(String::from(id)))
    };
    let p_lo = find(lo_id)?;
    let p_hi = find(hi_id)?;
    let y_raw = p_hi - p_lo;
    if y_raw.norm() < 1e-12 {
        return Err(TrackingError::MissingFrameMarker(String::from(hi_id)));
    }
    let y = y_raw.normalize();

    let centroid: Vector3<f64> =
        labeled_points.iter().map(|(_, p)| *p).sum::<Vector3<f64>>() / labeled_points.len() as f64;

    // Least-squares plane normal: smallest singular direction of the scatter.
    let mut scatter = nalgebra::Matrix3::<f64>::zeros();
    for (_, p) in labeled_points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let svd = scatter.svd(true, false);
    let u = svd.u.ok_or(GeometryError::DegenerateConfiguration("SVD failed"))?;
    let sv = svd.singular_values;
    if sv[1] <= 1e-12 * sv[0].max(1e-300) {
        return Err(TrackingError::Geometry(GeometryError::DegenerateConfiguration(
            "markers are collinear, plane undefined",
        )));
    }
    let mut normal: Vector3<f64> = u.column(2).into();

    // Sign convention from the three lowest-index markers.
    let mut sorted: Vec<&(String, Vector3<f64>)> = labeled_points.iter().collect();
    sorted.sort_by_key(|(id, _)| marker_index(id));
    let (pa, pb, pc) = (sorted[0].1, sorted[1].1, sorted[2].1);
    let orient = (pb - pa).cross(&(pc - pa));
    if orient.norm() < 1e-12 {
        return Err(TrackingError::Geometry(GeometryError::DegenerateConfiguration(
            "lowest-index markers are collinear",
        )));
    }
    if normal.dot(&orient) < 0.0 {
        normal = -normal;
    }

    // Re-orthogonalize x against y, then complete the triad.
    let x_raw = normal - y * normal.dot(&y);
    if x_raw.norm() < 1e-9 {
        return Err(TrackingError::Geometry(GeometryError::DegenerateConfiguration(
            "plane normal parallel to the y-axis",
        )));
    }
    let x = x_raw.normalize();
    let z = x.cross(&y);
    let rotation = nalgebra::Matrix3::from_columns(&[x, y, z]);
    Ok(RigidTransform::new(rotation, centroid))
}

/// Euclidean gripper opening between the two jaw-tip markers.
pub fn gripper_opening(p_a: &Vector3<f64>, p_b: &Vector3<f64>) -> f64 {
    (p_a - p_b).norm()
}
