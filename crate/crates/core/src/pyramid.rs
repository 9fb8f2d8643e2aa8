//! Pyramid-structured dataset bookkeeping: episode records with layer tags,
//! manifests with per-task statistics, stage filtering for staged training,
//! and exact numeric oracles for the contrastive and action losses.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::feasibility::EpisodeVerdict;
use crate::geometry::RigidTransform;

/// Dual-arm action dimension: joint commands plus gripper actions.
pub const ACTION_DIM: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PyramidError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("embedding {0} is not unit-norm")]
    NotNormalized(usize),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("duplicate episode id {0}")]
    DuplicateEpisode(String),
    #[error("unknown stage {0:?}")]
    UnknownStage(String),
    #[error("invalid episode: {0}")]
    InvalidEpisode(&'static str),
}

/// Acquisition mode of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Precision,
    Portable,
}

/// Pyramid layer tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Layer {
    BaseSingleArm,
    TaskBimanual,
    RecoveryOnline,
    RecoveryOffline,
    NominalExtra,
}

impl Layer {
    pub const ALL: [Layer; 5] = [
        Layer::BaseSingleArm,
        Layer::TaskBimanual,
        Layer::RecoveryOnline,
        Layer::RecoveryOffline,
        Layer::NominalExtra,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Layer::BaseSingleArm => "base_single_arm",
            Layer::TaskBimanual => "task_bimanual",
            Layer::RecoveryOnline => "recovery_online",
            Layer::RecoveryOffline => "recovery_offline",
            Layer::NominalExtra => "nominal_extra",
        }
    }

    pub fn parse(s: &str) -> Option<Layer> {
        Layer::ALL.iter().copied().find(|l| l.as_str() == s)
    }
}

/// Training stage selecting which layers feed the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Task,
    Refine,
}

impl Stage {
    pub fn parse(s: &str) -> Result<Stage, PyramidError> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "task" => Ok(Stage::Task),
            "refine" => Ok(Stage::Refine),
            other => Err(PyramidError::UnknownStage(String::from(other))),
        }
    }

    fn layers(&self) -> &'static [Layer] {
        match self {
            Stage::Pretrain => &[Layer::BaseSingleArm],
            Stage::Task => &[Layer::TaskBimanual],
            Stage::Refine => &[
                Layer::TaskBimanual,
                Layer::RecoveryOnline,
                Layer::RecoveryOffline,
            ],
        }
    }
}

/// One timestamped frame of a demonstration episode. Media are stored by
/// content-addressed reference, never embedded.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeFrame {
    pub timestamp: f64,
    pub left_pose: RigidTransform,
    pub right_pose: RigidTransform,
    pub left_width: f64,
    pub right_width: f64,
    pub action: [f64; ACTION_DIM],
    pub rgb_ids: [String; 2],
    /// 2 to 4 fingertip visuo-tactile references.
    pub tactile_ids: Vec<String>,
}

/// A demonstration episode with its layer tag and feasibility verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode_id: String,
    pub task: String,
    pub mode: Mode,
    pub layer: Layer,
    pub frames: Vec<EpisodeFrame>,
    pub feasibility: EpisodeVerdict,
}

impl EpisodeRecord {
    pub fn validate(&self) -> Result<(), PyramidError> {
        for pair in self.frames.windows(2) {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(PyramidError::InvalidEpisode("frames not time-ordered"));
            }
        }
        for f in &self.frames {
            if !(2..=4).contains(&f.tactile_ids.len()) {
                return Err(PyramidError::InvalidEpisode("need 2-4 tactile references"));
            }
        }
        Ok(())
    }
}

/// Manifest entry: one episode's identity, task, layer and file checksum.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub episode_id: String,
    pub task: String,
    pub layer: Layer,
    /// 64-bit FNV-1a of the episode file bytes.
    pub checksum: u64,
}

/// The pyramid manifest: per-layer episode lists with exact partitioning.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PyramidManifest {
    pub entries: Vec<ManifestEntry>,
}

impl PyramidManifest {
    /// Build a manifest, rejecting duplicate episode ids (an episode may
    /// never appear in two layers).
    pub fn build(entries: Vec<ManifestEntry>) -> Result<Self, PyramidError> {
        let mut seen = BTreeMap::new();
        for e in &entries {
            if seen.insert(e.episode_id.clone(), ()).is_some() {
                return Err(PyramidError::DuplicateEpisode(e.episode_id.clone()));
            }
        }
        Ok(PyramidManifest { entries })
    }

    pub fn add(&mut self, entry: ManifestEntry) -> Result<(), PyramidError> {
        if self.entries.iter().any(|e| e.episode_id == entry.episode_id) {
            return Err(PyramidError::DuplicateEpisode(entry.episode_id));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn layer_count(&self, layer: Layer) -> usize {
        self.entries.iter().filter(|e| e.layer == layer).count()
    }
}

/// Per-task demonstration/recovery counts and the recovery ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStats {
    pub task: String,
    pub demos: usize,
    pub recovery: usize,
    pub ratio: f64,
}

/// Per-layer and per-task statistics of a manifest.
pub fn pyramid_stats(manifest: &PyramidManifest) -> Vec<TaskStats> {
    let mut tasks: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for e in &manifest.entries {
        let slot = tasks.entry(&e.task).or_insert((0, 0));
        match e.layer {
            Layer::TaskBimanual => slot.0 += 1,
            Layer::RecoveryOnline | Layer::RecoveryOffline => slot.1 += 1,
            _ => {}
        }
    }
    tasks
        .into_iter()
        .map(|(task, (demos, recovery))| TaskStats {
            task: String::from(task),
            demos,
            recovery,
            ratio: if demos > 0 {
                recovery as f64 / demos as f64
            } else {
                0.0
            },
        })
        .collect()
}

/// Episodes visible to a training stage.
pub fn stage_filter<'a>(manifest: &'a PyramidManifest, stage: Stage) -> Vec<&'a ManifestEntry> {
    manifest
        .entries
        .iter()
        .filter(|e| stage.layers().contains(&e.layer))
        .collect()
}

fn check_unit_norm(embeddings: &[Vec<f64>]) -> Result<(), PyramidError> {
    for (i, e) in embeddings.iter().enumerate() {
        let norm_sq: f64 = e.iter().map(|v| v * v).sum();
        if libm::fabs(libm::sqrt(norm_sq) - 1.0) > 1e-9 {
            return Err(PyramidError::NotNormalized(i));
        }
    }
    Ok(())
}

/// Multi-positive contrastive loss. For tactile embedding `t_i` the positive
/// set is the aligned visual embedding `v_i` plus the temporal positive
/// `v_{i+1}`; negatives are the remaining in-batch visual embeddings. The
/// visual list carries B+1 entries so the last element has its lookahead.
pub fn contrastive_loss(
    tactile: &[Vec<f64>],
    visual: &[Vec<f64>],
    tau: f64,
) -> Result<f64, PyramidError> {
    if !(tau > 0.0) {
        return Err(PyramidError::NonPositiveTemperature(tau));
    }
    let b = tactile.len();
    if b == 0 {
        return Err(PyramidError::DimensionMismatch("empty batch"));
    }
    if visual.len() != b + 1 {
        return Err(PyramidError::DimensionMismatch(
            "visual list must have B+1 entries",
        ));
    }
    let dim = tactile[0].len();
    if tactile.iter().any(|e| e.len() != dim) || visual.iter().any(|e| e.len() != dim) {
        return Err(PyramidError::DimensionMismatch("embedding dims differ"));
    }
    check_unit_norm(tactile)?;
    check_unit_norm(visual)?;

    let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
    let mut loss = 0.0;
    for i in 0..b {
        let mut pos = 0.0;
        let mut neg = 0.0;
        for (j, v) in visual.iter().enumerate() {
            let e = libm::exp(dot(v, &tactile[i]) / tau);
            if j == i || j == i + 1 {
                pos += e;
            } else {
                neg += e;
            }
        }
        loss -= libm::log(pos / (pos + neg));
    }
    Ok(loss / b as f64)
}

/// Supervised action loss: sum over timesteps of the L1 distance between
/// predicted and demonstrated 16-D actions.
pub fn action_loss(pred: &[[f64; ACTION_DIM]], target: &[[f64; ACTION_DIM]]) -> Result<f64, PyramidError> {
    if pred.len() != target.len() {
        return Err(PyramidError::DimensionMismatch("timestep counts differ"));
    }
    let mut loss = 0.0;
    for (p, t) in pred.iter().zip(target) {
        for (a, b) in p.iter().zip(t) {
            loss += libm::fabs(a - b);
        }
    }
    Ok(loss)
}
