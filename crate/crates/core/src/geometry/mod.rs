//! Piece templates, poses, exact polygon IoU and raster IoU.

mod piece;
mod placement;
mod polygon;
mod raster;

pub use piece::{template_of, PieceTemplate, PieceType, UnknownPieceType};
pub use placement::{normalize_angle, overlap_area, realize, Placement, CANVAS_SIDE};
pub use polygon::{convex_intersection, exact_iou, Point, Polygon};
pub use raster::{
    dilate, raster_iou, rasterize, realize_all, union_iou, IouTarget, RasterMask,
    DEFAULT_DILATION_PX, DEFAULT_RESOLUTION, MAX_DILATION_PX, MIN_RESOLUTION,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("size must be positive, got {0}")]
    NonPositiveSize(f64),
    #[error("pose contains a non-finite value")]
    NonFinite,
    #[error("position ({0}, {1}) lies outside the canvas")]
    OutOfCanvas(f64, f64),
    #[error("angle {0} outside [0, 360)")]
    AngleOutOfRange(f64),
    #[error("convex polygon required")]
    NonConvex,
    #[error("resolution {0} below the minimum of {MIN_RESOLUTION}")]
    ResolutionTooSmall(u32),
    #[error("mask resolutions differ: {0} vs {1}")]
    ResolutionMismatch(u32, u32),
    #[error("dilation radius {0} outside 0..={MAX_DILATION_PX}")]
    DilationOutOfRange(u32),
    #[error("scenes hold one or two pieces, got {0}")]
    InvalidPieceCount(usize),
    #[error("predicted {pred} pieces for a {gt}-piece scene")]
    PieceCountMismatch { pred: usize, gt: usize },
}
