use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::geometry::{
    overlap_area, realize, Placement, PieceType, Point, CANVAS_SIDE, DEFAULT_RESOLUTION,
};

/// Largest tolerated mutual overlap of a two-piece scene, as a fraction of the
/// smaller piece's area.
pub const MAX_OVERLAP_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Single,
    TwoPiece,
}

impl Split {
    pub fn piece_count(self) -> usize {
        match self {
            Split::Single => 1,
            Split::TwoPiece => 2,
        }
    }

    pub fn from_piece_count(n: usize) -> Option<Split> {
        match n {
            1 => Some(Split::Single),
            2 => Some(Split::TwoPiece),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Single => "single",
            Split::TwoPiece => "two-piece",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    SvgImport,
    #[default]
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Canvas {
    pub frame: String,
    pub raster: u32,
}

impl Default for Canvas {
    fn default() -> Self {
        Canvas {
            frame: "unit10".to_string(),
            raster: DEFAULT_RESOLUTION,
        }
    }
}

/// Ground-truth record for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAnnotation {
    pub scene_id: String,
    pub split: Split,
    pub pieces: Vec<Placement>,
    #[serde(default)]
    pub canvas: Canvas,
    #[serde(default)]
    pub source: Source,
}

fn round6(v: f64) -> f64 {
    let r = (v * 1e6).round() / 1e6;
    // Avoid emitting "-0.0".
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

impl SceneAnnotation {
    pub fn new(scene_id: impl Into<String>, pieces: Vec<Placement>, source: Source) -> Result<Self, DatasetError> {
        let split =
            Split::from_piece_count(pieces.len()).ok_or(DatasetError::PieceCount(pieces.len()))?;
        Ok(SceneAnnotation {
            scene_id: scene_id.into(),
            split,
            pieces,
            canvas: Canvas::default(),
            source,
        })
    }

    pub fn is_two_piece(&self) -> bool {
        self.pieces.len() == 2
    }

    /// Copy with every number rounded to six decimals, as written to disk.
    pub fn rounded(&self) -> SceneAnnotation {
        let mut out = self.clone();
        for p in &mut out.pieces {
            p.pos = Point::new(round6(p.pos.x), round6(p.pos.y));
            p.angle = round6(p.angle);
            if p.angle >= 360.0 {
                p.angle = 0.0;
            }
            p.size = round6(p.size);
        }
        out
    }

    /// Structural checks only: piece count, split label and pose ranges.
    pub fn check_structure(&self) -> Result<(), DatasetError> {
        let n = self.pieces.len();
        let split = Split::from_piece_count(n).ok_or(DatasetError::PieceCount(n))?;
        if split != self.split {
            return Err(DatasetError::SplitMismatch {
                split: self.split,
                pieces: n,
            });
        }
        for p in &self.pieces {
            p.validate()?;
        }
        Ok(())
    }

    /// Full invariant check: structure, every vertex strictly inside the
    /// canvas, and the two-piece overlap limit.
    pub fn validate(&self) -> Result<(), DatasetError> {
        self.check_structure()?;
        for (i, p) in self.pieces.iter().enumerate() {
            let poly = realize(p)?;
            let inside = poly
                .vertices
                .iter()
                .all(|v| v.x > 0.0 && v.x < CANVAS_SIDE && v.y > 0.0 && v.y < CANVAS_SIDE);
            if !inside {
                return Err(DatasetError::OutsideCanvas(i));
            }
        }
        if let [a, b] = self.pieces.as_slice() {
            let frac = overlap_fraction(a, b)?;
            if frac > MAX_OVERLAP_FRACTION {
                return Err(DatasetError::Overlapping(frac));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, DatasetError> {
        Ok(serde_json::to_string_pretty(&self.rounded())?)
    }

    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        let mut a: SceneAnnotation = serde_json::from_str(text)?;
        for p in &mut a.pieces {
            p.angle = crate::geometry::normalize_angle(p.angle);
        }
        Ok(a)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())?;
        Ok(())
    }

    /// Distinct piece kinds, with paired large/small triangles collapsed to
    /// their shared name. Used as a grouping label.
    pub fn piece_label(&self) -> String {
        let mut names: Vec<&str> = self
            .pieces
            .iter()
            .map(|p| match p.piece_type {
                PieceType::LargeTriangle1 | PieceType::LargeTriangle2 => "large-triangle",
                PieceType::SmallTriangle1 | PieceType::SmallTriangle2 => "small-triangle",
                other => other.as_str(),
            })
            .collect();
        names.sort_unstable();
        names.dedup();
        names.join("+")
    }
}

/// Overlap area over the smaller piece's area.
pub fn overlap_fraction(a: &Placement, b: &Placement) -> Result<f64, DatasetError> {
    let inter = overlap_area(a, b)?;
    Ok(inter / a.area().min(b.area()))
}
