use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::polygon::{Point, Polygon};

/// The seven Tangram piece kinds.
///
/// The two large triangles (and the two small ones) are distinct pieces of the
/// set but share one template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PieceType {
    #[serde(rename = "large-triangle-1")]
    LargeTriangle1,
    #[serde(rename = "large-triangle-2")]
    LargeTriangle2,
    #[serde(rename = "medium-triangle")]
    MediumTriangle,
    #[serde(rename = "small-triangle-1")]
    SmallTriangle1,
    #[serde(rename = "small-triangle-2")]
    SmallTriangle2,
    #[serde(rename = "square")]
    Square,
    #[serde(rename = "parallelogram")]
    Parallelogram,
}

impl PieceType {
    pub const ALL: [PieceType; 7] = [
        PieceType::LargeTriangle1,
        PieceType::LargeTriangle2,
        PieceType::MediumTriangle,
        PieceType::SmallTriangle1,
        PieceType::SmallTriangle2,
        PieceType::Square,
        PieceType::Parallelogram,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PieceType::LargeTriangle1 => "large-triangle-1",
            PieceType::LargeTriangle2 => "large-triangle-2",
            PieceType::MediumTriangle => "medium-triangle",
            PieceType::SmallTriangle1 => "small-triangle-1",
            PieceType::SmallTriangle2 => "small-triangle-2",
            PieceType::Square => "square",
            PieceType::Parallelogram => "parallelogram",
        }
    }

    /// Only the parallelogram changes its point set under a mirror.
    pub fn is_chiral(self) -> bool {
        matches!(self, PieceType::Parallelogram)
    }

    /// Smallest positive rotation (degrees) mapping the template onto itself.
    pub fn rotation_period(self) -> f64 {
        match self {
            PieceType::Square => 90.0,
            PieceType::Parallelogram => 180.0,
            _ => 360.0,
        }
    }

    /// Rotation that reproduces a flipped placement without flipping.
    ///
    /// A template symmetric about a local axis at angle `phi` satisfies
    /// `mirror_vertical = rot(180 - 2 phi) . mirror_phi`, and `mirror_phi` is a
    /// no-op on it. `None` for the chiral parallelogram.
    pub fn flip_equivalent_rotation(self) -> Option<f64> {
        let axis = match self {
            PieceType::LargeTriangle1 | PieceType::LargeTriangle2 | PieceType::Square => 90.0,
            PieceType::MediumTriangle => 45.0,
            PieceType::SmallTriangle1 | PieceType::SmallTriangle2 => 0.0,
            PieceType::Parallelogram => return None,
        };
        Some(180.0 - 2.0 * axis)
    }

    /// Index of the shared template (both large and both small triangles collapse).
    fn template_slot(self) -> usize {
        match self {
            PieceType::LargeTriangle1 | PieceType::LargeTriangle2 => 0,
            PieceType::MediumTriangle => 1,
            PieceType::SmallTriangle1 | PieceType::SmallTriangle2 => 2,
            PieceType::Square => 3,
            PieceType::Parallelogram => 4,
        }
    }
}

impl fmt::Display for PieceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown piece type `{0}`")]
pub struct UnknownPieceType(pub String);

impl FromStr for PieceType {
    type Err = UnknownPieceType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PieceType::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| UnknownPieceType(s.to_string()))
    }
}

/// Canonical centroid-centered polygon for a piece kind, counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PieceTemplate {
    pub piece_type: PieceType,
    pub vertices: Vec<Point>,
    pub area: f64,
}

impl PieceTemplate {
    pub fn polygon(&self) -> Polygon {
        Polygon::new(self.vertices.clone())
    }
}

// Coordinates from the classic 4x4 square decomposition.
const RAW_TEMPLATES: [&[(f64, f64)]; 5] = [
    &[(0.0, 0.0), (4.0, 0.0), (2.0, 2.0)],
    &[(4.0, 4.0), (4.0, 2.0), (2.0, 4.0)],
    &[(4.0, 0.0), (4.0, 2.0), (3.0, 1.0)],
    &[(2.0, 2.0), (3.0, 1.0), (4.0, 2.0), (3.0, 3.0)],
    &[(0.0, 4.0), (1.0, 3.0), (3.0, 3.0), (2.0, 4.0)],
];

fn centered(raw: &[(f64, f64)]) -> Vec<Point> {
    let mut poly = Polygon::new(raw.iter().map(|&(x, y)| Point::new(x, y)).collect());
    if poly.signed_area() < 0.0 {
        poly.vertices.reverse();
    }
    let c = poly.centroid();
    poly.vertices.iter().map(|v| *v - c).collect()
}

fn templates() -> &'static [Vec<Point>; 5] {
    static CELL: OnceLock<[Vec<Point>; 5]> = OnceLock::new();
    CELL.get_or_init(|| RAW_TEMPLATES.map(centered))
}

/// Returns the canonical template for `piece_type`.
pub fn template_of(piece_type: PieceType) -> PieceTemplate {
    let vertices = templates()[piece_type.template_slot()].clone();
    let area = Polygon::new(vertices.clone()).area();
    PieceTemplate {
        piece_type,
        vertices,
        area,
    }
}
