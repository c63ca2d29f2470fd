//! Binary occupancy masks over the `[0,10]^2` canvas.
//!
//! Pixel `(col, row)` covers world `[col, col+1) x [row, row+1)` divided by
//! `resolution / 10`; world y grows downward with the row index, so the
//! origin sits at the top-left corner of the image. A pixel is set when its
//! center lies inside a polygon under the even-odd rule with half-open
//! top-left boundary handling.

use super::placement::{realize, Placement, CANVAS_SIDE};
use super::polygon::{Point, Polygon};
use super::GeometryError;

pub const DEFAULT_RESOLUTION: u32 = 512;
pub const MIN_RESOLUTION: u32 = 64;
pub const MAX_DILATION_PX: u32 = 2;
pub const DEFAULT_DILATION_PX: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterMask {
    width: u32,
    height: u32,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl RasterMask {
    pub fn empty(resolution: u32) -> Self {
        let words_per_row = (resolution as usize).div_ceil(64);
        RasterMask {
            width: resolution,
            height: resolution,
            words_per_row,
            bits: vec![0; words_per_row * resolution as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Pixels per canvas unit.
    pub fn scale(&self) -> f64 {
        self.width as f64 / CANVAS_SIDE
    }

    pub fn pixel_area(&self) -> f64 {
        let s = self.scale();
        1.0 / (s * s)
    }

    /// Maps a world point to continuous pixel coordinates.
    pub fn world_to_pixel(&self, p: Point) -> (f64, f64) {
        (p.x * self.scale(), p.y * self.scale())
    }

    pub fn get(&self, col: u32, row: u32) -> bool {
        let w = self.bits[row as usize * self.words_per_row + col as usize / 64];
        (w >> (col % 64)) & 1 == 1
    }

    pub fn set(&mut self, col: u32, row: u32, on: bool) {
        let idx = row as usize * self.words_per_row + col as usize / 64;
        let bit = 1u64 << (col % 64);
        if on {
            self.bits[idx] |= bit;
        } else {
            self.bits[idx] &= !bit;
        }
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    fn row_mut(&mut self, row: usize) -> &mut [u64] {
        let start = row * self.words_per_row;
        &mut self.bits[start..start + self.words_per_row]
    }

    /// Sets columns `[lo, hi)` of `row`.
    fn fill_span(&mut self, row: usize, lo: usize, hi: usize) {
        if lo >= hi {
            return;
        }
        let words = self.row_mut(row);
        let (wl, wh) = (lo / 64, (hi - 1) / 64);
        for (w, word) in words.iter_mut().enumerate().take(wh + 1).skip(wl) {
            let start = if w == wl { lo % 64 } else { 0 };
            let end = if w == wh { (hi - 1) % 64 + 1 } else { 64 };
            let mask = if end - start == 64 {
                u64::MAX
            } else {
                ((1u64 << (end - start)) - 1) << start
            };
            *word |= mask;
        }
    }

    fn tail_mask(&self) -> u64 {
        match self.width % 64 {
            0 => u64::MAX,
            r => (1u64 << r) - 1,
        }
    }

    /// Set pixels as `(col, row)` pairs in row-major order.
    pub fn iter_ones(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.height).flat_map(move |r| {
            (0..self.width).filter_map(move |c| self.get(c, r).then_some((c, r)))
        })
    }

    pub fn union_with(&mut self, other: &RasterMask) -> Result<(), GeometryError> {
        check_same(self, other)?;
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
        Ok(())
    }

    /// `(|a & b|, |a | b|)`.
    pub fn overlap_counts(&self, other: &RasterMask) -> Result<(u64, u64), GeometryError> {
        check_same(self, other)?;
        let mut inter = 0u64;
        let mut union = 0u64;
        for (a, b) in self.bits.iter().zip(&other.bits) {
            inter += (a & b).count_ones() as u64;
            union += (a | b).count_ones() as u64;
        }
        Ok((inter, union))
    }

    pub fn is_superset_of(&self, other: &RasterMask) -> bool {
        self.width == other.width && self.bits.iter().zip(&other.bits).all(|(a, b)| b & !a == 0)
    }

    /// Adds the polygon's interior (even-odd) to the mask.
    pub fn fill_polygon(&mut self, poly: &Polygon) {
        let n = poly.vertices.len();
        if n < 3 {
            return;
        }
        let scale = self.scale();
        let pts: Vec<(f64, f64)> = poly
            .vertices
            .iter()
            .map(|v| (v.x * scale, v.y * scale))
            .collect();
        let (ymin, ymax) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.1), hi.max(p.1))
            });
        // Rows whose center c = row + 0.5 satisfies ymin <= c < ymax.
        let first = (ymin - 0.5).ceil().max(0.0);
        let last = ((ymax - 0.5).ceil() - 1.0).min(self.height as f64 - 1.0);
        if !(first <= last) {
            return;
        }
        let mut xs: Vec<f64> = Vec::with_capacity(n);
        for row in first as usize..=last as usize {
            let yc = row as f64 + 0.5;
            xs.clear();
            for i in 0..n {
                let (x0, y0) = pts[i];
                let (x1, y1) = pts[(i + 1) % n];
                let (lo, hi) = if y0 < y1 { (y0, y1) } else { (y1, y0) };
                if lo <= yc && yc < hi {
                    xs.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
                }
            }
            xs.sort_by(f64::total_cmp);
            for pair in xs.chunks_exact(2) {
                // Columns whose center lies in [xa, xb).
                let lo = (pair[0] - 0.5).ceil().max(0.0);
                let hi = (pair[1] - 0.5).ceil().min(self.width as f64);
                if lo < hi {
                    self.fill_span(row, lo as usize, hi as usize);
                }
            }
        }
    }
}

fn check_same(a: &RasterMask, b: &RasterMask) -> Result<(), GeometryError> {
    if a.width != b.width || a.height != b.height {
        return Err(GeometryError::ResolutionMismatch(a.width, b.width));
    }
    Ok(())
}

/// Rasterizes the union of `polys` at `resolution x resolution`.
pub fn rasterize(polys: &[Polygon], resolution: u32) -> Result<RasterMask, GeometryError> {
    if resolution < MIN_RESOLUTION {
        return Err(GeometryError::ResolutionTooSmall(resolution));
    }
    let mut mask = RasterMask::empty(resolution);
    if polys.len() == 1 {
        mask.fill_polygon(&polys[0]);
        return Ok(mask);
    }
    let mut scratch = RasterMask::empty(resolution);
    for p in polys {
        scratch.bits.fill(0);
        scratch.fill_polygon(p);
        mask.union_with(&scratch)?;
    }
    Ok(mask)
}

fn dilate_once(m: &RasterMask) -> RasterMask {
    let wpr = m.words_per_row;
    let h = m.height as usize;
    let tail = m.tail_mask();
    let mut out = m.clone();
    for r in 0..h {
        let row = &m.bits[r * wpr..(r + 1) * wpr];
        let dst = &mut out.bits[r * wpr..(r + 1) * wpr];
        for w in 0..wpr {
            let from_left = (row[w] << 1) | if w > 0 { row[w - 1] >> 63 } else { 0 };
            let from_right = (row[w] >> 1) | if w + 1 < wpr { row[w + 1] << 63 } else { 0 };
            dst[w] |= from_left | from_right;
        }
        if r > 0 {
            for w in 0..wpr {
                dst[w] |= m.bits[(r - 1) * wpr + w];
            }
        }
        if r + 1 < h {
            for w in 0..wpr {
                dst[w] |= m.bits[(r + 1) * wpr + w];
            }
        }
        dst[wpr - 1] &= tail;
    }
    out
}

/// Binary dilation by the 3x3 cross, applied `radius_px` times.
pub fn dilate(m: &RasterMask, radius_px: u32) -> Result<RasterMask, GeometryError> {
    if radius_px > MAX_DILATION_PX {
        return Err(GeometryError::DilationOutOfRange(radius_px));
    }
    let mut out = m.clone();
    for _ in 0..radius_px {
        out = dilate_once(&out);
    }
    Ok(out)
}

fn ratio(inter: u64, union: u64) -> f64 {
    if union == 0 {
        // Both empty.
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// IoU of two masks after dilating both by `dilation_px`.
///
/// Two empty masks score 1.0; exactly one empty mask scores 0.0.
pub fn raster_iou(a: &RasterMask, b: &RasterMask, dilation_px: u32) -> Result<f64, GeometryError> {
    check_same(a, b)?;
    let da = dilate(a, dilation_px)?;
    let db = dilate(b, dilation_px)?;
    let (inter, union) = da.overlap_counts(&db)?;
    Ok(ratio(inter, union))
}

pub fn realize_all(placements: &[Placement]) -> Result<Vec<Polygon>, GeometryError> {
    placements.iter().map(realize).collect()
}

/// Raster IoU between the unions of predicted and ground-truth pieces.
pub fn union_iou(
    pred: &[Placement],
    gt: &[Placement],
    dilation_px: u32,
    resolution: u32,
) -> Result<f64, GeometryError> {
    IouTarget::new(gt, dilation_px, resolution)?.score(pred)
}

/// Ground-truth mask prepared once for repeated IoU queries.
#[derive(Debug, Clone)]
pub struct IouTarget {
    gt_dilated: RasterMask,
    piece_count: usize,
    dilation_px: u32,
    resolution: u32,
}

impl IouTarget {
    pub fn new(gt: &[Placement], dilation_px: u32, resolution: u32) -> Result<Self, GeometryError> {
        if gt.is_empty() || gt.len() > 2 {
            return Err(GeometryError::InvalidPieceCount(gt.len()));
        }
        let mask = rasterize(&realize_all(gt)?, resolution)?;
        Ok(IouTarget {
            gt_dilated: dilate(&mask, dilation_px)?,
            piece_count: gt.len(),
            dilation_px,
            resolution,
        })
    }

    pub fn dilation_px(&self) -> u32 {
        self.dilation_px
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn score(&self, pred: &[Placement]) -> Result<f64, GeometryError> {
        if pred.len() != self.piece_count {
            return Err(GeometryError::PieceCountMismatch {
                pred: pred.len(),
                gt: self.piece_count,
            });
        }
        let mask = rasterize(&realize_all(pred)?, self.resolution)?;
        let mask = dilate(&mask, self.dilation_px)?;
        let (inter, union) = mask.overlap_counts(&self.gt_dilated)?;
        Ok(ratio(inter, union))
    }
}
