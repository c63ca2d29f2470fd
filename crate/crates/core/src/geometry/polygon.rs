use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use super::GeometryError;

/// A point in the canvas frame. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Point) -> f64 {
        (self - o).norm()
    }

    /// Counter-clockwise rotation by `deg` degrees.
    pub fn rotated(self, deg: f64) -> Point {
        let (s, c) = deg.to_radians().sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Point::new(v[0], v[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

/// Closed polygon; the last vertex connects back to the first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

// Relative slack on cross products when classifying convexity.
const CONVEXITY_EPS: f64 = 1e-9;

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        Polygon { vertices }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3 || self.area() == 0.0
    }

    fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Shoelace area, positive for counter-clockwise order.
    pub fn signed_area(&self) -> f64 {
        if self.vertices.len() < 3 {
            return 0.0;
        }
        0.5 * self.edges().map(|(a, b)| a.cross(b)).sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Area centroid. Falls back to the vertex mean for degenerate input.
    pub fn centroid(&self) -> Point {
        let n = self.vertices.len();
        if n == 0 {
            return Point::default();
        }
        let a = self.signed_area();
        if a.abs() < 1e-300 {
            let s = self
                .vertices
                .iter()
                .fold(Point::default(), |acc, &v| acc + v);
            return s * (1.0 / n as f64);
        }
        // Shift to the first vertex to limit cancellation far from the origin.
        let o = self.vertices[0];
        let (mut cx, mut cy) = (0.0, 0.0);
        for (p, q) in self.edges() {
            let (p, q) = (p - o, q - o);
            let w = p.cross(q);
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        Point::new(o.x + cx / (6.0 * a), o.y + cy / (6.0 * a))
    }

    /// Copy with counter-clockwise vertex order.
    pub fn to_ccw(&self) -> Polygon {
        let mut p = self.clone();
        if p.signed_area() < 0.0 {
            p.vertices.reverse();
        }
        p
    }

    /// True when every turn has the same orientation (collinear runs allowed).
    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let scale = self
            .vertices
            .iter()
            .map(|v| v.x.abs().max(v.y.abs()))
            .fold(1.0_f64, f64::max);
        let eps = CONVEXITY_EPS * scale * scale;
        let (mut pos, mut neg) = (false, false);
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let c = self.vertices[(i + 2) % n];
            let z = (b - a).cross(c - b);
            if z > eps {
                pos = true;
            } else if z < -eps {
                neg = true;
            }
        }
        !(pos && neg) && (pos || neg)
    }

    pub fn contains(&self, p: Point) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        (lo, hi)
    }
}

/// Keep the part of `subject` left of the directed line `a -> b`.
fn clip_half_plane(subject: &[Point], a: Point, b: Point) -> Vec<Point> {
    let n = subject.len();
    let mut out = Vec::with_capacity(n + 1);
    let dir = b - a;
    for i in 0..n {
        let s = subject[i];
        let e = subject[(i + 1) % n];
        let ds = dir.cross(s - a);
        let de = dir.cross(e - a);
        let s_in = ds >= 0.0;
        let e_in = de >= 0.0;
        if s_in != e_in {
            let t = ds / (ds - de);
            out.push(s + (e - s) * t);
        }
        if e_in {
            out.push(e);
        }
    }
    out
}

/// Intersection of two convex polygons by successive half-plane clipping.
///
/// Returns `None` when the intersection has no area.
pub fn convex_intersection(a: &Polygon, b: &Polygon) -> Result<Option<Polygon>, GeometryError> {
    if !a.is_convex() || !b.is_convex() {
        return Err(GeometryError::NonConvex);
    }
    let clip = b.to_ccw();
    let mut result = a.to_ccw().vertices;
    for (p, q) in clip.edges() {
        result = clip_half_plane(&result, p, q);
        if result.len() < 3 {
            return Ok(None);
        }
    }
    let poly = Polygon::new(result);
    if poly.area() <= 0.0 {
        Ok(None)
    } else {
        Ok(Some(poly))
    }
}

/// Intersection-over-union of two convex polygons.
pub fn exact_iou(a: &Polygon, b: &Polygon) -> Result<f64, GeometryError> {
    let inter = convex_intersection(a, b)?.map_or(0.0, |p| p.area());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}
