use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::annotation::SceneAnnotation;
use super::DatasetError;
use crate::geometry::{Placement, PieceType, Point};

/// Evaluation modes. Single-piece modes predict a subset of `(pos, angle,
/// size)`; two-piece modes predict per-piece positions and/or angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskMode {
    Pos,
    Angle,
    Size,
    All,
    TwoPos,
    TwoAngle,
    TwoPosAngle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Pos,
    Angle,
    Size,
}

impl Field {
    pub fn as_str(self) -> &'static str {
        match self {
            Field::Pos => "pos",
            Field::Angle => "angle",
            Field::Size => "size",
        }
    }
}

impl TaskMode {
    pub const ALL: [TaskMode; 7] = [
        TaskMode::Pos,
        TaskMode::Angle,
        TaskMode::Size,
        TaskMode::All,
        TaskMode::TwoPos,
        TaskMode::TwoAngle,
        TaskMode::TwoPosAngle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskMode::Pos => "pos",
            TaskMode::Angle => "angle",
            TaskMode::Size => "size",
            TaskMode::All => "all",
            TaskMode::TwoPos => "two-pos",
            TaskMode::TwoAngle => "two-angle",
            TaskMode::TwoPosAngle => "two-pos-angle",
        }
    }

    pub fn piece_count(self) -> usize {
        match self {
            TaskMode::Pos | TaskMode::Angle | TaskMode::Size | TaskMode::All => 1,
            _ => 2,
        }
    }

    pub fn target_fields(self) -> &'static [Field] {
        match self {
            TaskMode::Pos | TaskMode::TwoPos => &[Field::Pos],
            TaskMode::Angle | TaskMode::TwoAngle => &[Field::Angle],
            TaskMode::Size => &[Field::Size],
            TaskMode::All => &[Field::Pos, Field::Angle, Field::Size],
            TaskMode::TwoPosAngle => &[Field::Pos, Field::Angle],
        }
    }

    pub fn predicts(self, field: Field) -> bool {
        self.target_fields().contains(&field)
    }

    pub fn involves_position(self) -> bool {
        self.predicts(Field::Pos)
    }

    /// The mode to use for a scene with `pieces` pieces: pos, angle and
    /// all map onto their two-piece counterparts and back. Size has no
    /// two-piece counterpart.
    pub fn for_piece_count(self, pieces: usize) -> Option<TaskMode> {
        if self.piece_count() == pieces {
            return Some(self);
        }
        match (self, pieces) {
            (TaskMode::Pos, 2) => Some(TaskMode::TwoPos),
            (TaskMode::Angle, 2) => Some(TaskMode::TwoAngle),
            (TaskMode::All, 2) => Some(TaskMode::TwoPosAngle),
            (TaskMode::TwoPos, 1) => Some(TaskMode::Pos),
            (TaskMode::TwoAngle, 1) => Some(TaskMode::Angle),
            (TaskMode::TwoPosAngle, 1) => Some(TaskMode::All),
            _ => None,
        }
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskMode {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| DatasetError::UnknownMode(s.to_string()))
    }
}

/// A partial pose: the fields a model predicted for one piece.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PieceFields {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pos: Option<Point>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size: Option<f64>,
}

impl PieceFields {
    pub fn has(&self, field: Field) -> bool {
        match field {
            Field::Pos => self.pos.is_some(),
            Field::Angle => self.angle.is_some(),
            Field::Size => self.size.is_some(),
        }
    }

    /// The `mode`'s target fields taken from a full placement.
    pub fn from_placement(p: &Placement, mode: TaskMode) -> Self {
        PieceFields {
            pos: mode.predicts(Field::Pos).then_some(p.pos),
            angle: mode.predicts(Field::Angle).then_some(p.angle),
            size: mode.predicts(Field::Size).then_some(p.size),
        }
    }
}

/// One piece's ground truth as exposed to a task: type and flip are always
/// given, the remaining fields only when the mode holds them fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPiece {
    #[serde(rename = "type")]
    pub piece_type: PieceType,
    pub flip: bool,
    #[serde(flatten)]
    pub fields: PieceFields,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub scene_id: String,
    pub mode: TaskMode,
    pub fixed_fields: Vec<FixedPiece>,
    pub target_fields: Vec<Field>,
}

impl TaskSpec {
    pub fn piece_count(&self) -> usize {
        self.fixed_fields.len()
    }

    /// Fills the predicted fields into the fixed ground truth.
    pub fn merge(&self, pred: &[PieceFields]) -> Result<Vec<Placement>, DatasetError> {
        if pred.len() != self.fixed_fields.len() {
            return Err(DatasetError::FieldMismatch(format!(
                "expected {} piece(s), got {}",
                self.fixed_fields.len(),
                pred.len()
            )));
        }
        self.fixed_fields
            .iter()
            .zip(pred)
            .map(|(fixed, p)| {
                for f in [Field::Pos, Field::Angle, Field::Size] {
                    let target = self.target_fields.contains(&f);
                    if target != p.has(f) {
                        return Err(DatasetError::FieldMismatch(format!(
                            "field `{}` {} for mode {}",
                            f.as_str(),
                            if target { "missing" } else { "not predicted" },
                            self.mode
                        )));
                    }
                }
                // Exactly one side holds each field, checked above.
                Ok(Placement::new(
                    fixed.piece_type,
                    p.pos.or(fixed.fields.pos).unwrap_or_default(),
                    p.angle.or(fixed.fields.angle).unwrap_or_default(),
                    p.size.or(fixed.fields.size).unwrap_or_default(),
                    fixed.flip,
                ))
            })
            .collect()
    }

    /// Ground-truth values of the target fields.
    pub fn answer(&self, gt: &SceneAnnotation) -> Vec<PieceFields> {
        gt.pieces
            .iter()
            .map(|p| PieceFields::from_placement(p, self.mode))
            .collect()
    }
}

/// Splits a scene's ground truth into fixed and target fields for `mode`.
pub fn make_task(a: &SceneAnnotation, mode: TaskMode) -> Result<TaskSpec, DatasetError> {
    if mode.piece_count() != a.pieces.len() {
        return Err(DatasetError::IncompatibleMode {
            mode,
            pieces: a.pieces.len(),
        });
    }
    let fixed_fields = a
        .pieces
        .iter()
        .map(|p| FixedPiece {
            piece_type: p.piece_type,
            flip: p.flip,
            fields: PieceFields {
                pos: (!mode.predicts(Field::Pos)).then_some(p.pos),
                angle: (!mode.predicts(Field::Angle)).then_some(p.angle),
                size: (!mode.predicts(Field::Size)).then_some(p.size),
            },
        })
        .collect();
    Ok(TaskSpec {
        scene_id: a.scene_id.clone(),
        mode,
        fixed_fields,
        target_fields: mode.target_fields().to_vec(),
    })
}
