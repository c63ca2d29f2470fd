//! Recovering a piece pose from a bare polygon.
//!
//! All three triangle templates are similar (right isosceles), so shape alone
//! cannot tell them apart. Without a type hint the triangle whose implied
//! size is closest to 1 wins.

use serde::{Deserialize, Serialize};

use super::annotation::SceneAnnotation;
use super::annotation::Source;
use super::svg::parse_svg;
use super::DatasetError;
use crate::geometry::{
    normalize_angle, template_of, Placement, PieceType, Point, Polygon,
};

/// Tolerated mean vertex distance, relative to the fitted size.
pub const FIT_TOLERANCE: f64 = 0.05;

/// One representative per distinct template.
const CANDIDATES: [PieceType; 5] = [
    PieceType::LargeTriangle1,
    PieceType::MediumTriangle,
    PieceType::SmallTriangle1,
    PieceType::Square,
    PieceType::Parallelogram,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub piece_type: PieceType,
    pub placement: Placement,
    /// Mean vertex distance after the fit, canvas units.
    pub residual: f64,
}

/// Counter-clockwise vertices with duplicates and collinear points removed.
fn simplify(poly: &Polygon) -> Vec<Point> {
    let mut pts = poly.to_ccw().vertices;
    pts.dedup_by(|a, b| a.distance(*b) < 1e-12);
    let scale = pts.iter().map(|p| p.norm()).fold(1.0, f64::max);
    loop {
        let n = pts.len();
        if n < 3 {
            return pts;
        }
        let drop = (0..n).find(|&i| {
            let a = pts[(i + n - 1) % n];
            let b = pts[i];
            let c = pts[(i + 1) % n];
            (b - a).cross(c - b).abs() <= 1e-12 * scale * scale
        });
        match drop {
            Some(i) => {
                pts.remove(i);
            }
            None => return pts,
        }
    }
}

fn sorted_edge_ratios(pts: &[Point]) -> Vec<f64> {
    let n = pts.len();
    let mut e: Vec<f64> = (0..n).map(|i| pts[i].distance(pts[(i + 1) % n])).collect();
    let max = e.iter().cloned().fold(0.0, f64::max);
    e.iter_mut().for_each(|v| *v /= max);
    e.sort_by(f64::total_cmp);
    e
}

struct Candidate {
    piece_type: PieceType,
    placement: Placement,
    residual: f64,
}

/// Best pose of one template against `pts` over all vertex correspondences
/// and both chiralities.
fn fit_one(pts: &[Point], area: f64, centroid: Point, piece_type: PieceType) -> Option<Candidate> {
    let template = template_of(piece_type);
    let n = pts.len();
    if template.vertices.len() != n {
        return None;
    }
    let ratios = sorted_edge_ratios(pts);
    let expected = sorted_edge_ratios(&template.vertices);
    if ratios
        .iter()
        .zip(&expected)
        .any(|(a, b)| (a - b).abs() > FIT_TOLERANCE)
    {
        return None;
    }
    let size = (area / template.area).sqrt();
    let local: Vec<Point> = pts.iter().map(|p| (*p - centroid) * (1.0 / size)).collect();
    let mut best: Option<Candidate> = None;
    for flip in [false, true] {
        let mut tv: Vec<Point> = template
            .vertices
            .iter()
            .map(|v| if flip { Point::new(-v.x, v.y) } else { *v })
            .collect();
        if flip {
            tv.reverse();
        }
        for offset in 0..n {
            let (mut sin, mut cos) = (0.0, 0.0);
            for i in 0..n {
                let t = tv[(i + offset) % n];
                sin += t.cross(local[i]);
                cos += t.dot(local[i]);
            }
            let angle = sin.atan2(cos).to_degrees();
            let residual = (0..n)
                .map(|i| local[i].distance(tv[(i + offset) % n].rotated(angle)))
                .sum::<f64>()
                / n as f64
                * size;
            // Mirror-symmetric pieces fit equally well flipped; keep the
            // unflipped form unless the flip is strictly better.
            let better = best
                .as_ref()
                .is_none_or(|b| residual < b.residual - 1e-9 * size);
            if better {
                best = Some(Candidate {
                    piece_type,
                    placement: Placement::new(
                        piece_type,
                        centroid,
                        normalize_angle(angle),
                        size,
                        flip,
                    ),
                    residual,
                });
            }
        }
    }
    best
}

/// Fits `poly` to the closest canonical template, or to `hint` when given.
pub fn fit_template_as(poly: &Polygon, hint: Option<PieceType>) -> Result<FitResult, DatasetError> {
    let pts = simplify(poly);
    if pts.len() != 3 && pts.len() != 4 {
        return Err(DatasetError::Unfittable(format!(
            "{} vertices after simplification",
            pts.len()
        )));
    }
    let simple = Polygon::new(pts.clone());
    let area = simple.area();
    let centroid = simple.centroid();
    let kinds: Vec<PieceType> = match hint {
        Some(h) => vec![h],
        None => CANDIDATES.to_vec(),
    };
    let fits: Vec<Candidate> = kinds
        .into_iter()
        .filter_map(|k| fit_one(&pts, area, centroid, k))
        .collect();
    let min_residual = fits
        .iter()
        .map(|c| c.residual / c.placement.size)
        .fold(f64::INFINITY, f64::min);
    let best = fits
        .into_iter()
        .filter(|c| c.residual / c.placement.size <= min_residual + 1e-9)
        .min_by(|a, b| {
            let ka = a.placement.size.ln().abs();
            let kb = b.placement.size.ln().abs();
            ka.total_cmp(&kb)
        })
        .ok_or_else(|| DatasetError::Unfittable("no template matches the edge ratios".into()))?;
    if best.residual > FIT_TOLERANCE * best.placement.size {
        return Err(DatasetError::Unfittable(format!(
            "residual {:.4} exceeds tolerance",
            best.residual
        )));
    }
    Ok(FitResult {
        piece_type: best.piece_type,
        placement: best.placement,
        residual: best.residual,
    })
}

pub fn fit_template(poly: &Polygon) -> Result<FitResult, DatasetError> {
    fit_template_as(poly, None)
}

/// Second copy of a paired piece kind.
fn twin(t: PieceType) -> Option<PieceType> {
    match t {
        PieceType::LargeTriangle1 => Some(PieceType::LargeTriangle2),
        PieceType::SmallTriangle1 => Some(PieceType::SmallTriangle2),
        _ => None,
    }
}

/// Parses an SVG scene and fits each polygon, mapping coordinates into the
/// canvas frame.
pub fn import_svg(document: &[u8], scene_id: &str) -> Result<SceneAnnotation, DatasetError> {
    let parsed = parse_svg(document)?;
    let mut pieces: Vec<Placement> = Vec::with_capacity(parsed.polygons.len());
    for (index, poly) in parsed.polygons.iter().enumerate() {
        let mapped = Polygon::new(poly.vertices.iter().map(|&v| parsed.to_canvas(v)).collect());
        let hint = parsed.piece_hints.get(index).copied().flatten();
        let mut fit = fit_template_as(&mapped, hint).map_err(|e| DatasetError::Polygon {
            index,
            source: Box::new(e),
        })?;
        if hint.is_none() && pieces.iter().any(|p| p.piece_type == fit.piece_type) {
            if let Some(t) = twin(fit.piece_type) {
                fit.placement.piece_type = t;
            }
        }
        pieces.push(fit.placement);
    }
    SceneAnnotation::new(scene_id, pieces, Source::SvgImport)
}
