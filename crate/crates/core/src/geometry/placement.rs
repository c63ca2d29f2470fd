use serde::{Deserialize, Serialize};

use super::piece::{template_of, PieceType};
use super::polygon::{convex_intersection, Point, Polygon};
use super::GeometryError;

/// Side length of the square world frame `[0, CANVAS_SIDE]^2`.
pub const CANVAS_SIDE: f64 = 10.0;

/// Wraps any finite angle into `[0, 360)`.
pub fn normalize_angle(deg: f64) -> f64 {
    let a = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs.
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

/// Pose of one piece on the canvas.
///
/// `pos` is the world location of the template centroid, `angle` a
/// counter-clockwise rotation in degrees, `size` a multiplier on the template
/// coordinates and `flip` a mirror about the local vertical axis applied
/// before rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    #[serde(rename = "type")]
    pub piece_type: PieceType,
    pub pos: Point,
    pub angle: f64,
    #[serde(alias = "scale")]
    pub size: f64,
    #[serde(default)]
    pub flip: bool,
}

impl Placement {
    pub fn new(piece_type: PieceType, pos: Point, angle: f64, size: f64, flip: bool) -> Self {
        Placement {
            piece_type,
            pos,
            angle: normalize_angle(angle),
            size,
            flip,
        }
    }

    /// Checks the pose invariants: finite values, position inside the
    /// canvas, angle in `[0, 360)` and positive size.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let vals = [self.pos.x, self.pos.y, self.angle, self.size];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if self.size <= 0.0 {
            return Err(GeometryError::NonPositiveSize(self.size));
        }
        let in_canvas = |v: f64| (0.0..=CANVAS_SIDE).contains(&v);
        if !in_canvas(self.pos.x) || !in_canvas(self.pos.y) {
            return Err(GeometryError::OutOfCanvas(self.pos.x, self.pos.y));
        }
        if !(0.0..360.0).contains(&self.angle) {
            return Err(GeometryError::AngleOutOfRange(self.angle));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.size * self.size * template_of(self.piece_type).area
    }

    /// Equivalent `(angle, flip)` with flips folded into rotations for
    /// mirror-symmetric pieces and the angle reduced modulo the piece's
    /// rotational symmetry period.
    pub fn canonical_orientation(&self) -> (f64, bool) {
        let (mut angle, mut flip) = (self.angle, self.flip);
        if flip {
            if let Some(rot) = self.piece_type.flip_equivalent_rotation() {
                angle += rot;
                flip = false;
            }
        }
        (angle.rem_euclid(self.piece_type.rotation_period()), flip)
    }
}

/// Places the piece's template on the canvas.
pub fn realize(p: &Placement) -> Result<Polygon, GeometryError> {
    if !p.size.is_finite() || p.size <= 0.0 {
        return Err(GeometryError::NonPositiveSize(p.size));
    }
    if !p.pos.x.is_finite() || !p.pos.y.is_finite() || !p.angle.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let template = template_of(p.piece_type);
    let mirror = if p.flip { -1.0 } else { 1.0 };
    let mut vertices: Vec<Point> = template
        .vertices
        .iter()
        .map(|v| p.pos + Point::new(mirror * v.x, v.y).rotated(p.angle) * p.size)
        .collect();
    if p.flip {
        vertices.reverse();
    }
    Ok(Polygon::new(vertices))
}

/// Area shared by two placed pieces.
pub fn overlap_area(a: &Placement, b: &Placement) -> Result<f64, GeometryError> {
    let pa = realize(a)?;
    let pb = realize(b)?;
    Ok(convex_intersection(&pa, &pb)?.map_or(0.0, |p| p.area()))
}
