//! Per-prediction geometric errors and their aggregation.

mod aggregate;

pub use aggregate::{aggregate, Aggregate, GroupKey, Stat};

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetError, Field, PieceFields, SceneAnnotation, TaskMode, TaskSpec};
use crate::geometry::{
    overlap_area, GeometryError, IouTarget, Placement, PieceType, Point,
    CANVAS_SIDE, DEFAULT_DILATION_PX, DEFAULT_RESOLUTION,
};

/// Worst-case values recorded for a prediction that could not be parsed.
pub const WORST_L2: f64 = CANVAS_SIDE * std::f64::consts::SQRT_2;
pub const WORST_ANGLE: f64 = 180.0;
pub const WORST_SIZE: f64 = 1.0;

pub fn l2_error(pred: Point, gt: Point) -> f64 {
    pred.distance(gt)
}

fn wrapped(delta: f64, period: f64) -> f64 {
    let d = delta.rem_euclid(period);
    d.min(period - d)
}

/// Smallest rotation between two angles, in `[0, 180]`. With
/// `symmetry_aware`, rotations in the piece's symmetry group count as zero.
pub fn angle_error(pred_deg: f64, gt_deg: f64, piece_type: PieceType, symmetry_aware: bool) -> f64 {
    let period = if symmetry_aware {
        piece_type.rotation_period()
    } else {
        360.0
    };
    wrapped(pred_deg - gt_deg, period)
}

/// Relative size difference `|pred - gt| / gt`.
pub fn size_error(pred: f64, gt: f64) -> f64 {
    (pred - gt).abs() / gt
}

/// Shared area over the smaller piece's area, in `[0, 1]`.
pub fn overlap_penalty(a: &Placement, b: &Placement) -> Result<f64, GeometryError> {
    let inter = overlap_area(a, b)?;
    Ok((inter / a.area().min(b.area())).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub dilation_px: u32,
    pub resolution: u32,
    pub symmetry_aware: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            dilation_px: DEFAULT_DILATION_PX,
            resolution: DEFAULT_RESOLUTION,
            symmetry_aware: true,
        }
    }
}

/// Scores for one scene. Per-piece vectors are present only for fields the
/// mode predicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub scene_id: String,
    pub mode: TaskMode,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub piece_filter: String,
    pub split: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l2_pos: Option<Vec<f64>>,
    /// Symmetry-aware when scoring is configured so; see `angle_err_raw`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub angle_err: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub angle_err_raw: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub size_err: Option<Vec<f64>>,
    pub iou: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub union_iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub overlap_penalty: Option<f64>,
    pub parse_failed: bool,
    /// Scene-level failure (backend or pipeline), scored like a parse failure.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl MetricRecord {
    fn blank(task: &TaskSpec, gt: &SceneAnnotation) -> Self {
        MetricRecord {
            scene_id: gt.scene_id.clone(),
            mode: task.mode,
            model: String::new(),
            piece_filter: gt.piece_label(),
            split: gt.split.as_str().to_string(),
            l2_pos: None,
            angle_err: None,
            angle_err_raw: None,
            size_err: None,
            iou: 0.0,
            union_iou: None,
            overlap_penalty: None,
            parse_failed: false,
            error: None,
        }
    }

    /// Record for a prediction that never produced usable fields.
    pub fn failed(task: &TaskSpec, gt: &SceneAnnotation, error: Option<String>) -> Self {
        let n = gt.pieces.len();
        let mut r = Self::blank(task, gt);
        let fill = |f: Field, v: f64| task.mode.predicts(f).then(|| vec![v; n]);
        r.l2_pos = fill(Field::Pos, WORST_L2);
        r.angle_err = fill(Field::Angle, WORST_ANGLE);
        r.angle_err_raw = fill(Field::Angle, WORST_ANGLE);
        r.size_err = fill(Field::Size, WORST_SIZE);
        if n == 2 {
            r.union_iou = Some(0.0);
            r.overlap_penalty = Some(1.0);
        }
        r.parse_failed = error.is_none();
        r.error = error;
        r
    }

    /// Mean over pieces of a per-piece metric.
    pub fn piece_mean(v: &Option<Vec<f64>>) -> Option<f64> {
        v.as_ref()
            .filter(|v| !v.is_empty())
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Merges the predicted fields over the fixed ground truth and computes
/// every metric that applies to the task. `None` means the prediction
/// failed to parse.
pub fn score_prediction(
    task: &TaskSpec,
    gt: &SceneAnnotation,
    pred: Option<&[PieceFields]>,
    opts: &ScoreOptions,
) -> Result<MetricRecord, MetricsError> {
    let Some(pred) = pred else {
        return Ok(MetricRecord::failed(task, gt, None));
    };
    let placed = task.merge(pred)?;
    let target = IouTarget::new(&gt.pieces, opts.dilation_px, opts.resolution)?;
    score_placed(task, gt, &placed, &target, opts)
}

/// Scoring with a prepared ground-truth mask.
pub fn score_placed(
    task: &TaskSpec,
    gt: &SceneAnnotation,
    placed: &[Placement],
    target: &IouTarget,
    opts: &ScoreOptions,
) -> Result<MetricRecord, MetricsError> {
    let mut r = MetricRecord::blank(task, gt);
    let pairs = || placed.iter().zip(&gt.pieces);
    if task.mode.predicts(Field::Pos) {
        r.l2_pos = Some(pairs().map(|(p, g)| l2_error(p.pos, g.pos)).collect());
    }
    if task.mode.predicts(Field::Angle) {
        r.angle_err = Some(
            pairs()
                .map(|(p, g)| angle_error(p.angle, g.angle, g.piece_type, opts.symmetry_aware))
                .collect(),
        );
        r.angle_err_raw = Some(
            pairs()
                .map(|(p, g)| angle_error(p.angle, g.angle, g.piece_type, false))
                .collect(),
        );
    }
    if task.mode.predicts(Field::Size) {
        r.size_err = Some(pairs().map(|(p, g)| size_error(p.size, g.size)).collect());
    }
    r.iou = target.score(placed)?;
    if let [a, b] = placed {
        r.union_iou = Some(r.iou);
        r.overlap_penalty = Some(overlap_penalty(a, b)?);
    }
    Ok(r)
}
