//! Straight-edged SVG subset: `polygon`, closed `polyline`, and `path` data
//! restricted to M/L/H/V/Z. Anything curved or otherwise shaped is rejected.

use std::fmt::Write as _;
use std::str::FromStr;

use svgtypes::{PathParser, PathSegment, PointsParser, Transform, ViewBox};

use super::annotation::SceneAnnotation;
use super::DatasetError;
use crate::geometry::{realize, PieceType, Point, Polygon};

const SVG_NS: &str = "http://www.w3.org/2000/svg";

/// Elements that draw something we cannot represent as a polygon.
const UNSUPPORTED_SHAPES: &[&str] = &["rect", "circle", "ellipse", "line", "text", "image", "use"];

/// Subtrees that never render directly.
const NON_RENDERING: &[&str] = &[
    "defs", "title", "desc", "metadata", "style", "clipPath", "mask", "symbol", "pattern",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSvg {
    /// Polygons in SVG user units (y down), in document order.
    pub polygons: Vec<Polygon>,
    /// Optional `data-piece` annotation per polygon.
    pub piece_hints: Vec<Option<PieceType>>,
    pub min_x: f64,
    pub min_y: f64,
    pub width: f64,
    pub height: f64,
}

fn compose(parent: &Transform, child: &Transform) -> Transform {
    Transform::new(
        parent.a * child.a + parent.c * child.b,
        parent.b * child.a + parent.d * child.b,
        parent.a * child.c + parent.c * child.d,
        parent.b * child.c + parent.d * child.d,
        parent.a * child.e + parent.c * child.f + parent.e,
        parent.b * child.e + parent.d * child.f + parent.f,
    )
}

fn apply(t: &Transform, x: f64, y: f64) -> Point {
    Point::new(t.a * x + t.c * y + t.e, t.b * x + t.d * y + t.f)
}

fn parse_length(s: &str) -> Option<f64> {
    let s = s.trim().trim_end_matches("px");
    s.parse::<f64>().ok().filter(|v| v.is_finite() && *v > 0.0)
}

/// Drops repeated vertices, including a closing copy of the first vertex.
fn dedupe(mut pts: Vec<Point>) -> Vec<Point> {
    pts.dedup_by(|a, b| a.distance(*b) <= 1e-12 * (1.0 + b.norm()));
    while pts.len() > 1 && pts[0].distance(*pts.last().unwrap()) <= 1e-12 * (1.0 + pts[0].norm()) {
        pts.pop();
    }
    pts
}

fn parse_path(d: &str, ts: &Transform, out: &mut Vec<Polygon>) -> Result<(), DatasetError> {
    let mut current = Point::default();
    let mut start = Point::default();
    let mut sub: Vec<Point> = Vec::new();
    let finish = |sub: &mut Vec<Point>, out: &mut Vec<Polygon>| {
        let pts = dedupe(std::mem::take(sub));
        if pts.len() >= 3 {
            out.push(Polygon::new(pts.iter().map(|p| apply(ts, p.x, p.y)).collect()));
        } else if !pts.is_empty() {
            return Err(DatasetError::MalformedSvg(format!(
                "path subpath with {} vertices",
                pts.len()
            )));
        }
        Ok(())
    };
    for seg in PathParser::from(d) {
        let seg = seg.map_err(|e| DatasetError::MalformedSvg(format!("path data: {e}")))?;
        let rel = |abs: bool, p: Point, cur: Point| if abs { p } else { cur + p };
        match seg {
            PathSegment::MoveTo { abs, x, y } => {
                finish(&mut sub, out)?;
                current = rel(abs, Point::new(x, y), current);
                start = current;
                sub.push(current);
            }
            PathSegment::LineTo { abs, x, y } => {
                current = rel(abs, Point::new(x, y), current);
                sub.push(current);
            }
            PathSegment::HorizontalLineTo { abs, x } => {
                current.x = if abs { x } else { current.x + x };
                sub.push(current);
            }
            PathSegment::VerticalLineTo { abs, y } => {
                current.y = if abs { y } else { current.y + y };
                sub.push(current);
            }
            PathSegment::ClosePath { .. } => {
                finish(&mut sub, out)?;
                current = start;
            }
            other => {
                let name = match other {
                    PathSegment::CurveTo { abs, .. } => if abs { "C" } else { "c" },
                    PathSegment::SmoothCurveTo { abs, .. } => if abs { "S" } else { "s" },
                    PathSegment::Quadratic { abs, .. } => if abs { "Q" } else { "q" },
                    PathSegment::SmoothQuadratic { abs, .. } => if abs { "T" } else { "t" },
                    PathSegment::EllipticalArc { abs, .. } => if abs { "A" } else { "a" },
                    _ => "?",
                };
                return Err(DatasetError::UnsupportedFeature(format!(
                    "path command `{name}`"
                )));
            }
        }
    }
    finish(&mut sub, out)
}

fn element_transform(node: roxmltree::Node) -> Result<Transform, DatasetError> {
    match node.attribute("transform") {
        Some(t) => Transform::from_str(t)
            .map_err(|e| DatasetError::MalformedSvg(format!("transform `{t}`: {e}"))),
        None => Ok(Transform::default()),
    }
}

fn walk(
    node: roxmltree::Node,
    parent_ts: &Transform,
    polys: &mut Vec<Polygon>,
    hints: &mut Vec<Option<PieceType>>,
) -> Result<(), DatasetError> {
    for child in node.children().filter(|n| n.is_element()) {
        let tag = child.tag_name();
        if tag.namespace().is_some_and(|ns| ns != SVG_NS) {
            continue;
        }
        let name = tag.name();
        if NON_RENDERING.contains(&name) {
            continue;
        }
        if UNSUPPORTED_SHAPES.contains(&name) {
            return Err(DatasetError::UnsupportedFeature(format!("element <{name}>")));
        }
        let ts = compose(parent_ts, &element_transform(child)?);
        let before = polys.len();
        match name {
            "polygon" | "polyline" => {
                let raw: Vec<Point> = PointsParser::from(child.attribute("points").unwrap_or(""))
                    .map(|(x, y)| Point::new(x, y))
                    .collect();
                if name == "polyline" {
                    let closed = raw.len() > 3 && raw[0].distance(*raw.last().unwrap()) < 1e-9;
                    if !closed {
                        return Err(DatasetError::UnsupportedFeature(
                            "open <polyline>".to_string(),
                        ));
                    }
                }
                let pts = dedupe(raw);
                if pts.len() < 3 {
                    return Err(DatasetError::MalformedSvg(format!(
                        "<{name}> with {} vertices",
                        pts.len()
                    )));
                }
                polys.push(Polygon::new(pts.iter().map(|p| apply(&ts, p.x, p.y)).collect()));
            }
            "path" => parse_path(child.attribute("d").unwrap_or(""), &ts, polys)?,
            _ => walk(child, &ts, polys, hints)?,
        }
        if polys.len() > before && name != "g" && name != "svg" {
            let hint = child
                .attribute("data-piece")
                .map(|s| {
                    s.parse::<PieceType>()
                        .map_err(|e| DatasetError::MalformedSvg(e.to_string()))
                })
                .transpose()?;
            hints.resize(polys.len(), hint);
        }
    }
    Ok(())
}

/// Parses an SVG document into its polygons and viewBox dimensions.
pub fn parse_svg(document: &[u8]) -> Result<ParsedSvg, DatasetError> {
    let text = std::str::from_utf8(document)
        .map_err(|e| DatasetError::MalformedSvg(format!("not UTF-8: {e}")))?;
    let doc = roxmltree::Document::parse(text)?;
    let root = doc.root_element();
    if root.tag_name().name() != "svg" {
        return Err(DatasetError::MalformedSvg(format!(
            "root element is <{}>",
            root.tag_name().name()
        )));
    }
    let vb = match root.attribute("viewBox") {
        Some(v) => ViewBox::from_str(v)
            .map_err(|e| DatasetError::MalformedSvg(format!("viewBox `{v}`: {e}")))?,
        None => {
            let w = root.attribute("width").and_then(parse_length);
            let h = root.attribute("height").and_then(parse_length);
            match (w, h) {
                (Some(w), Some(h)) => ViewBox::new(0.0, 0.0, w, h),
                _ => {
                    return Err(DatasetError::MalformedSvg(
                        "missing viewBox and width/height".to_string(),
                    ))
                }
            }
        }
    };
    if !(vb.w > 0.0 && vb.h > 0.0) {
        return Err(DatasetError::MalformedSvg("empty viewBox".to_string()));
    }
    let mut polygons = Vec::new();
    let mut piece_hints = Vec::new();
    walk(root, &element_transform(root)?, &mut polygons, &mut piece_hints)?;
    Ok(ParsedSvg {
        polygons,
        piece_hints,
        min_x: vb.x,
        min_y: vb.y,
        width: vb.w,
        height: vb.h,
    })
}

impl ParsedSvg {
    /// Maps user units into the `[0,10]^2` canvas, preserving aspect ratio
    /// and centering the shorter side.
    pub fn to_canvas(&self, p: Point) -> Point {
        let side = crate::geometry::CANVAS_SIDE;
        let scale = side / self.width.max(self.height);
        let ox = (side - self.width * scale) / 2.0;
        let oy = (side - self.height * scale) / 2.0;
        Point::new(
            (p.x - self.min_x) * scale + ox,
            (p.y - self.min_y) * scale + oy,
        )
    }
}

/// Writes the scene as an SVG over the `[0,10]^2` viewBox, one `<polygon>`
/// per piece tagged with its piece type.
pub fn export_svg(scene: &SceneAnnotation) -> Result<String, DatasetError> {
    let mut out = String::new();
    let raster = scene.canvas.raster;
    writeln!(
        out,
        r#"<svg xmlns="{SVG_NS}" viewBox="0 0 10 10" width="{raster}" height="{raster}">"#
    )
    .unwrap();
    for p in &scene.pieces {
        let poly = realize(p)?;
        let pts: Vec<String> = poly
            .vertices
            .iter()
            .map(|v| format!("{},{}", v.x, v.y))
            .collect();
        writeln!(
            out,
            r#"  <polygon data-piece="{}" points="{}"/>"#,
            p.piece_type,
            pts.join(" ")
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}
