//! Evaluation pipeline, oracle calibration, ablation sweeps and reports.

mod ablation;
mod calibrate;
mod eval;
mod report;

pub use ablation::{ablation_csv, run_ablation, AblationAxes, AblationCell, AblationGrid, AblationRow, ABLATION_COLUMNS};
pub use calibrate::{calibrate_oracle, Calibration, CalibrationRequest};
pub use eval::{
    inputs_from_scenes, load_inputs, mean_iou, process_scene, run_eval, run_scenes, EvalSettings, RunConfig, RunManifest, RunSummary,
    SceneInput, SceneResult,
};
pub use report::{ablation_table, load_metrics, metrics_csv, metrics_table, read_ablation_csv};

use std::path::PathBuf;

use crate::dataset::DatasetError;
use crate::geometry::GeometryError;
use crate::proposal::ProposalError;
use crate::refine::RefineError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("directory not found: {0}")]
    MissingDir(PathBuf),
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("no scenes to evaluate in {0}")]
    NoScenes(PathBuf),
    #[error("target mean IoU {target} unreachable for sigma in [{lo}, {hi}] (means {mean_lo:.4} .. {mean_hi:.4})")]
    Unreachable {
        target: f64,
        lo: f64,
        hi: f64,
        mean_lo: f64,
        mean_hi: f64,
    },
    #[error("calibration did not reach {target} within {evaluations} evaluations (closest {closest:.4})")]
    NotConverged {
        target: f64,
        evaluations: usize,
        closest: f64,
    },
    #[error("{path}: {message}")]
    BadInput { path: PathBuf, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Proposal(#[from] ProposalError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Whether the failure stems from the supplied configuration rather
    /// than from evaluation itself.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            HarnessError::MissingDir(_)
                | HarnessError::InvalidConfig(_)
                | HarnessError::NoScenes(_)
                | HarnessError::Unreachable { .. }
                | HarnessError::BadInput { .. }
                | HarnessError::Proposal(ProposalError::InvalidConfig(_))
                | HarnessError::Refine(RefineError::InvalidConfig(_))
        )
    }
}
