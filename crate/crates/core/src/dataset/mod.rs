//! Scene annotations, SVG import/export, rendering, synthetic generation and
//! task construction.

mod annotation;
mod fit;
mod render;
mod svg;
mod synth;
mod task;

pub use annotation::{
    overlap_fraction, Canvas, SceneAnnotation, Source, Split, MAX_OVERLAP_FRACTION,
};
pub use fit::{fit_template, fit_template_as, import_svg, FitResult, FIT_TOLERANCE};
pub use render::{
    decode_gray_png, encode_gray_png, mask_to_png, png_to_mask, render_overlay,
    render_placements, render_scene, BACKGROUND, FOREGROUND, OVERLAY_BOTH, OVERLAY_GT_ONLY,
    OVERLAY_PRED_ONLY,
};
pub use svg::{export_svg, parse_svg, ParsedSvg};
pub use synth::{generate_synthetic, SynthConfig, MAX_ATTEMPTS};
pub use task::{make_task, Field, FixedPiece, PieceFields, TaskMode, TaskSpec};

use crate::geometry::GeometryError;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("malformed XML: {0}")]
    Xml(#[from] roxmltree::Error),
    #[error("malformed SVG: {0}")]
    MalformedSvg(String),
    #[error("unsupported SVG feature: {0}")]
    UnsupportedFeature(String),
    #[error("unfittable polygon: {0}")]
    Unfittable(String),
    #[error("polygon {index}: {source}")]
    Polygon {
        index: usize,
        #[source]
        source: Box<DatasetError>,
    },
    #[error("scenes hold one or two pieces, got {0}")]
    PieceCount(usize),
    #[error("split {split:?} does not match {pieces} piece(s)")]
    SplitMismatch { split: Split, pieces: usize },
    #[error("piece {0} leaves the canvas")]
    OutsideCanvas(usize),
    #[error("pieces overlap by {0:.4} of the smaller area")]
    Overlapping(f64),
    #[error("no valid scene for {scene} after {attempts} attempts")]
    SamplingExhausted { scene: String, attempts: usize },
    #[error("mode {mode} needs {} piece(s), scene has {pieces}", mode.piece_count())]
    IncompatibleMode { mode: TaskMode, pieces: usize },
    #[error("unknown mode `{0}`")]
    UnknownMode(String),
    #[error("prediction does not match task: {0}")]
    FieldMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("png: {0}")]
    Png(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
