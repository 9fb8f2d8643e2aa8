//! File formats: JSONL streams, JSON models and manifests, TOML configs.
//!
//! Line-oriented formats keep one frame per line so partial files stay
//! inspectable; manifests are single JSON documents with a schema version.

use std::fs;
use std::path::Path;

use demokit_core::feasibility::{
    DualArmChains, FrameLog, Joint, JointLimits, KinematicChain, VelocityLimits, DOF,
};
use demokit_core::geometry::RigidTransform;
use demokit_core::mechanism::{FlexionParams, ParallelParams};
use demokit_core::feasibility::EpisodeVerdict;
use demokit_core::pyramid::{
    EpisodeFrame, EpisodeRecord, Layer, ManifestEntry, Mode, PyramidManifest, ACTION_DIM,
};
use demokit_core::tracking::{MarkerFrame, MarkerObjectModel};
use demokit_core::transfer::{Arm, FlangeSample, FlangeTrajectory};
use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Toml(String),
    #[error("checksum mismatch for {episode_id}: manifest {expected:#018x}, file {actual:#018x}")]
    ChecksumMismatch {
        episode_id: String,
        expected: u64,
        actual: u64,
    },
}

/// 64-bit FNV-1a over raw bytes; the stable episode checksum.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn vec3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn quat_of(rot: &Matrix3<f64>) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*rot));
    [q.w, q.i, q.j, q.k]
}

fn rot_of(q: &[f64; 4]) -> Result<Matrix3<f64>, IoError> {
    let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
    let norm = raw.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(IoError::Schema(format!(
            "rotation quaternion norm {norm} is not 1"
        )));
    }
    Ok(UnitQuaternion::new_normalize(raw)
        .to_rotation_matrix()
        .into_inner())
}

// --- marker streams ---------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MarkerLine {
    t: f64,
    points: Vec<[f64; 3]>,
}

pub fn read_marker_stream(path: &Path) -> Result<Vec<MarkerFrame>, IoError> {
    let text = fs::read_to_string(path)?;
    let mut frames = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: MarkerLine = serde_json::from_str(line).map_err(|e| IoError::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        frames.push(MarkerFrame {
            timestamp: rec.t,
            observations: rec.points.iter().map(|p| Vector3::from(*p)).collect(),
        });
    }
    Ok(frames)
}

pub fn write_marker_stream(path: &Path, frames: &[MarkerFrame]) -> Result<(), IoError> {
    let mut out = String::new();
    for f in frames {
        let rec = MarkerLine {
            t: f.timestamp,
            points: f.observations.iter().map(vec3).collect(),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

// --- marker object models ---------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ModelFile {
    ids: Vec<String>,
    reference_positions: Vec<[f64; 3]>,
}

pub fn read_model(path: &Path) -> Result<MarkerObjectModel, IoError> {
    let text = fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    let refs = file
        .reference_positions
        .iter()
        .map(|p| Vector3::from(*p))
        .collect();
    MarkerObjectModel::new(file.ids, refs).map_err(|e| IoError::Schema(e.to_string()))
}

pub fn write_model(path: &Path, model: &MarkerObjectModel) -> Result<(), IoError> {
    let file = ModelFile {
        ids: model.marker_ids.clone(),
        reference_positions: model.reference_positions.iter().map(vec3).collect(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

// --- pose streams -------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct PoseLine {
    t: f64,
    pos: [f64; 3],
    rot: [f64; 4],
}

/// One serialized pose-stream line (no trailing newline).
pub fn pose_line(t: f64, pose: &RigidTransform) -> String {
    serde_json::to_string(&PoseLine {
        t,
        pos: vec3(&pose.translation),
        rot: quat_of(&pose.rotation),
    })
    .expect("pose line serialization cannot fail")
}

/// JSONL pose stream: `{"t":s,"pos":[x,y,z],"rot":[w,x,y,z]}` per line, with
/// unit-norm rotations.
pub fn read_pose_stream(path: &Path) -> Result<Vec<(f64, RigidTransform)>, IoError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoseLine = serde_json::from_str(line).map_err(|e| IoError::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((
            rec.t,
            RigidTransform::new(rot_of(&rec.rot)?, Vector3::from(rec.pos)),
        ));
    }
    Ok(out)
}

// --- flange trajectories -----------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TrajectoryHeader {
    arm: String,
    rate: f64,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryLine {
    t: f64,
    pos: [f64; 3],
    rot: [f64; 4],
    width: f64,
}

fn arm_str(arm: Arm) -> &'static str {
    match arm {
        Arm::Left => "left",
        Arm::Right => "right",
    }
}

fn parse_arm(s: &str) -> Result<Arm, IoError> {
    match s {
        "left" => Ok(Arm::Left),
        "right" => Ok(Arm::Right),
        other => Err(IoError::Schema(format!("unknown arm tag {other:?}"))),
    }
}

/// First line is a header `{"arm":..,"rate":..}`; each following line is one
/// timestamped flange sample.
pub fn write_trajectory(path: &Path, traj: &FlangeTrajectory) -> Result<(), IoError> {
    let mut out = serde_json::to_string(&TrajectoryHeader {
        arm: arm_str(traj.arm).into(),
        rate: traj.rate,
    })?;
    out.push('\n');
    for s in &traj.samples {
        let line = TrajectoryLine {
            t: s.timestamp,
            pos: vec3(&s.pose.translation),
            rot: quat_of(&s.pose.rotation),
            width: s.gripper_width,
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<FlangeTrajectory, IoError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| IoError::Schema("empty trajectory file".into()))?;
    let header: TrajectoryHeader = serde_json::from_str(header_line).map_err(|e| IoError::Line {
        line: 1,
        message: e.to_string(),
    })?;
    let mut samples = Vec::new();
    for (i, line) in lines {
        let rec: TrajectoryLine = serde_json::from_str(line).map_err(|e| IoError::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        samples.push(FlangeSample {
            timestamp: rec.t,
            pose: RigidTransform::new(rot_of(&rec.rot)?, Vector3::from(rec.pos)),
            gripper_width: rec.width,
        });
    }
    Ok(FlangeTrajectory {
        rate: header.rate,
        arm: parse_arm(&header.arm)?,
        samples,
    })
}

// --- chain and limit configs --------------------------------------------------

#[derive(Serialize, Deserialize)]
struct JointCfg {
    axis: [f64; 3],
    link_translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct ChainCfg {
    base_translation: [f64; 3],
    joints: Vec<JointCfg>,
}

pub fn read_chain(path: &Path) -> Result<KinematicChain, IoError> {
    let text = fs::read_to_string(path)?;
    let cfg: ChainCfg = toml::from_str(&text).map_err(|e| IoError::Toml(e.to_string()))?;
    if cfg.joints.len() != DOF {
        return Err(IoError::Schema(format!(
            "chain must have {DOF} joints, found {}",
            cfg.joints.len()
        )));
    }
    let joints: Vec<Joint> = cfg
        .joints
        .iter()
        .map(|j| Joint {
            axis: Vector3::from(j.axis),
            link: RigidTransform::from_translation(Vector3::from(j.link_translation)),
        })
        .collect();
    let chain = KinematicChain {
        base: RigidTransform::from_translation(Vector3::from(cfg.base_translation)),
        joints: joints.try_into().unwrap(),
    };
    chain.validate().map_err(|e| IoError::Schema(e.to_string()))?;
    Ok(chain)
}

pub fn write_chain(path: &Path, chain: &KinematicChain) -> Result<(), IoError> {
    let cfg = ChainCfg {
        base_translation: vec3(&chain.base.translation),
        joints: chain
            .joints
            .iter()
            .map(|j| JointCfg {
                axis: vec3(&j.axis),
                link_translation: vec3(&j.link.translation),
            })
            .collect(),
    };
    fs::write(path, toml::to_string(&cfg).map_err(|e| IoError::Toml(e.to_string()))?)?;
    Ok(())
}

/// Limits config: joint bounds in degrees, joint speed in deg/s, TCP speed in
/// mm/s, stream gap in seconds.
#[derive(Serialize, Deserialize)]
struct LimitsCfg {
    lower_deg: Vec<f64>,
    upper_deg: Vec<f64>,
    joint_speed_deg_s: f64,
    tcp_speed_mm_s: f64,
    max_gap_s: f64,
}

pub fn read_limits(path: &Path) -> Result<(JointLimits, VelocityLimits), IoError> {
    let text = fs::read_to_string(path)?;
    let cfg: LimitsCfg = toml::from_str(&text).map_err(|e| IoError::Toml(e.to_string()))?;
    if cfg.lower_deg.len() != DOF || cfg.upper_deg.len() != DOF {
        return Err(IoError::Schema(format!(
            "limits must cover {DOF} joints ({} lower, {} upper found)",
            cfg.lower_deg.len(),
            cfg.upper_deg.len()
        )));
    }
    let jl = JointLimits {
        lower_deg: cfg.lower_deg.try_into().unwrap(),
        upper_deg: cfg.upper_deg.try_into().unwrap(),
    };
    jl.validate().map_err(|e| IoError::Schema(e.to_string()))?;
    let vl = VelocityLimits {
        joint_max: cfg.joint_speed_deg_s,
        tcp_max: cfg.tcp_speed_mm_s,
        max_gap: cfg.max_gap_s,
    };
    Ok((jl, vl))
}

pub fn write_limits(path: &Path, jl: &JointLimits, vl: &VelocityLimits) -> Result<(), IoError> {
    let cfg = LimitsCfg {
        lower_deg: jl.lower_deg.to_vec(),
        upper_deg: jl.upper_deg.to_vec(),
        joint_speed_deg_s: vl.joint_max,
        tcp_speed_mm_s: vl.tcp_max,
        max_gap_s: vl.max_gap,
    };
    fs::write(path, toml::to_string(&cfg).map_err(|e| IoError::Toml(e.to_string()))?)?;
    Ok(())
}

pub fn dual_chains(chain: &KinematicChain) -> DualArmChains {
    DualArmChains {
        left: chain.clone(),
        right: chain.clone(),
    }
}

// --- mechanism parameter files ------------------------------------------------

/// Flat key-value mechanism parameters, all lengths in millimetres.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(tag = "template", rename_all = "snake_case")]
pub enum MechanismFile {
    Flexion {
        l1: f64,
        l2: f64,
        l3: f64,
        d: f64,
        x3: f64,
        x4: f64,
        stroke_max: f64,
    },
    Parallel {
        l_c: f64,
        l_b: f64,
    },
}

impl MechanismFile {
    pub fn from_flexion(p: &FlexionParams) -> Self {
        MechanismFile::Flexion {
            l1: p.l1,
            l2: p.l2,
            l3: p.l3,
            d: p.d,
            x3: p.x3,
            x4: p.x4,
            stroke_max: p.stroke_max,
        }
    }

    pub fn from_parallel(p: &ParallelParams) -> Self {
        MechanismFile::Parallel {
            l_c: p.l_c,
            l_b: p.l_b,
        }
    }
}

pub fn read_mechanism(path: &Path) -> Result<MechanismFile, IoError> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| IoError::Toml(e.to_string()))
}

pub fn write_mechanism(path: &Path, m: &MechanismFile) -> Result<(), IoError> {
    fs::write(path, toml::to_string(m).map_err(|e| IoError::Toml(e.to_string()))?)?;
    Ok(())
}

// --- verdict logs ---------------------------------------------------------------

#[derive(Serialize, Deserialize)]
pub struct VerdictLine {
    pub frame: usize,
    pub arm: String,
    pub status: String,
    pub detail: serde_json::Value,
}

pub fn verdict_lines(log: &[FrameLog]) -> Vec<VerdictLine> {
    log.iter()
        .map(|entry| {
            let details: Vec<serde_json::Value> = entry
                .verdict
                .violations
                .iter()
                .map(|v| {
                    serde_json::json!({
                        "status": v.status.as_str(),
                        "joint": v.joint,
                        "value": v.value,
                        "limit": v.limit,
                    })
                })
                .collect();
            VerdictLine {
                frame: entry.frame,
                arm: arm_str(entry.arm).into(),
                status: entry.verdict.status.as_str().into(),
                detail: serde_json::json!({ "violations": details }),
            }
        })
        .collect()
}

pub fn write_verdict_log(path: &Path, log: &[FrameLog]) -> Result<(), IoError> {
    let mut out = String::new();
    for line in verdict_lines(log) {
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_verdict_log(path: &Path) -> Result<Vec<VerdictLine>, IoError> {
    let text = fs::read_to_string(path)?;
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        lines.push(serde_json::from_str(line).map_err(|e| IoError::Line {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(lines)
}

// --- episode files ------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct EpisodeHeader {
    episode_id: String,
    task: String,
    mode: String,
    layer: String,
    valid: bool,
    first_invalid_frame: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct EpisodeFrameLine {
    t: f64,
    left_pos: [f64; 3],
    left_rot: [f64; 4],
    right_pos: [f64; 3],
    right_rot: [f64; 4],
    left_width: f64,
    right_width: f64,
    action: Vec<f64>,
    rgb_ids: [String; 2],
    tactile_ids: Vec<String>,
}

fn mode_str(mode: Mode) -> &'static str {
    match mode {
        Mode::Precision => "precision",
        Mode::Portable => "portable",
    }
}

/// JSONL: one JSON header line, then one frame per line.
pub fn write_episode(path: &Path, ep: &EpisodeRecord) -> Result<(), IoError> {
    ep.validate().map_err(|e| IoError::Schema(e.to_string()))?;
    let (valid, first) = match ep.feasibility {
        EpisodeVerdict::Valid => (true, None),
        EpisodeVerdict::Invalid { first_frame } => (false, Some(first_frame)),
    };
    let mut out = serde_json::to_string(&EpisodeHeader {
        episode_id: ep.episode_id.clone(),
        task: ep.task.clone(),
        mode: mode_str(ep.mode).into(),
        layer: ep.layer.as_str().into(),
        valid,
        first_invalid_frame: first,
    })?;
    out.push('\n');
    for f in &ep.frames {
        let line = EpisodeFrameLine {
            t: f.timestamp,
            left_pos: vec3(&f.left_pose.translation),
            left_rot: quat_of(&f.left_pose.rotation),
            right_pos: vec3(&f.right_pose.translation),
            right_rot: quat_of(&f.right_pose.rotation),
            left_width: f.left_width,
            right_width: f.right_width,
            action: f.action.to_vec(),
            rgb_ids: f.rgb_ids.clone(),
            tactile_ids: f.tactile_ids.clone(),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_episode(path: &Path) -> Result<EpisodeRecord, IoError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| IoError::Schema("empty episode file".into()))?;
    let header: EpisodeHeader = serde_json::from_str(header_line).map_err(|e| IoError::Line {
        line: 1,
        message: e.to_string(),
    })?;
    let mode = match header.mode.as_str() {
        "precision" => Mode::Precision,
        "portable" => Mode::Portable,
        other => return Err(IoError::Schema(format!("unknown mode {other:?}"))),
    };
    let layer = Layer::parse(&header.layer)
        .ok_or_else(|| IoError::Schema(format!("unknown layer {:?}", header.layer)))?;
    let mut frames = Vec::new();
    for (i, line) in lines {
        let rec: EpisodeFrameLine = serde_json::from_str(line).map_err(|e| IoError::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        let action: [f64; ACTION_DIM] = rec.action.clone().try_into().map_err(|_| {
            IoError::Schema(format!(
                "action must have {ACTION_DIM} entries, found {}",
                rec.action.len()
            ))
        })?;
        frames.push(EpisodeFrame {
            timestamp: rec.t,
            left_pose: RigidTransform::new(rot_of(&rec.left_rot)?, Vector3::from(rec.left_pos)),
            right_pose: RigidTransform::new(rot_of(&rec.right_rot)?, Vector3::from(rec.right_pos)),
            left_width: rec.left_width,
            right_width: rec.right_width,
            action,
            rgb_ids: rec.rgb_ids,
            tactile_ids: rec.tactile_ids,
        });
    }
    let feasibility = match (header.valid, header.first_invalid_frame) {
        (true, _) => EpisodeVerdict::Valid,
        (false, Some(first_frame)) => EpisodeVerdict::Invalid { first_frame },
        (false, None) => {
            return Err(IoError::Schema(
                "invalid episode without first_invalid_frame".into(),
            ))
        }
    };
    let ep = EpisodeRecord {
        episode_id: header.episode_id,
        task: header.task,
        mode,
        layer,
        frames,
        feasibility,
    };
    ep.validate().map_err(|e| IoError::Schema(e.to_string()))?;
    Ok(ep)
}

// --- manifests --------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ManifestEntryFile {
    episode_id: String,
    task: String,
    layer: String,
    checksum: u64,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    schema_version: u32,
    entries: Vec<ManifestEntryFile>,
}

pub fn write_manifest(path: &Path, manifest: &PyramidManifest) -> Result<(), IoError> {
    let file = ManifestFile {
        schema_version: MANIFEST_SCHEMA_VERSION,
        entries: manifest
            .entries
            .iter()
            .map(|e| ManifestEntryFile {
                episode_id: e.episode_id.clone(),
                task: e.task.clone(),
                layer: e.layer.as_str().into(),
                checksum: e.checksum,
            })
            .collect(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<PyramidManifest, IoError> {
    let text = fs::read_to_string(path)?;
    let file: ManifestFile = serde_json::from_str(&text)?;
    if file.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(IoError::Schema(format!(
            "unsupported manifest schema version {}",
            file.schema_version
        )));
    }
    let mut entries = Vec::with_capacity(file.entries.len());
    for e in file.entries {
        let layer = Layer::parse(&e.layer)
            .ok_or_else(|| IoError::Schema(format!("unknown layer {:?}", e.layer)))?;
        entries.push(ManifestEntry {
            episode_id: e.episode_id,
            task: e.task,
            layer,
            checksum: e.checksum,
        });
    }
    PyramidManifest::build(entries).map_err(|e| IoError::Schema(e.to_string()))
}
