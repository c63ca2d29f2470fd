//! Reward, the verifier-refiner loop and the positional grid search.

mod run;
mod search;
mod trace;

pub use run::{refine_loop, RefineOutcome};
pub use search::{local_search, local_search_with, LOCAL_SEARCH_STEPS, NEIGHBORS};
pub use trace::{IterationEntry, LocalSearchEntry, RefineTrace, StopReason, TraceLine};

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetError, Field, PieceFields, SceneAnnotation, TaskSpec};
use crate::geometry::{
    GeometryError, IouTarget, Placement, CANVAS_SIDE, DEFAULT_DILATION_PX, DEFAULT_RESOLUTION,
    MAX_DILATION_PX, MIN_RESOLUTION,
};
use crate::metrics::{angle_error, l2_error, size_error};
use crate::proposal::ProposalError;

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("invalid refinement setting: {0}")]
    InvalidConfig(String),
    #[error("backend failed at iteration {iteration}: {source}")]
    Backend {
        iteration: u32,
        #[source]
        source: ProposalError,
        trace: Box<RefineTrace>,
    },
    #[error(transparent)]
    Proposal(#[from] ProposalError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Weight of the normalized position error.
    pub lambda: f64,
    pub dilation_px: u32,
    pub resolution: u32,
    /// Optional weight on angle error / 180; zero by default.
    #[serde(default)]
    pub angle_lambda: f64,
    /// Optional weight on relative size error; zero by default.
    #[serde(default)]
    pub size_lambda: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            lambda: 0.1,
            dilation_px: DEFAULT_DILATION_PX,
            resolution: DEFAULT_RESOLUTION,
            angle_lambda: 0.0,
            size_lambda: 0.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), RefineError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(RefineError::InvalidConfig(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.angle_lambda < 0.0 || self.size_lambda < 0.0 {
            return Err(RefineError::InvalidConfig("extra penalty weights must be >= 0".into()));
        }
        if self.dilation_px > MAX_DILATION_PX {
            return Err(RefineError::InvalidConfig(GeometryError::DilationOutOfRange(self.dilation_px).to_string()));
        }
        if self.resolution < MIN_RESOLUTION {
            return Err(RefineError::InvalidConfig(GeometryError::ResolutionTooSmall(self.resolution).to_string()));
        }
        Ok(())
    }
}

/// `iou - lambda * l2 / 10`.
pub fn reward_value(iou: f64, l2: f64, lambda: f64) -> f64 {
    iou - lambda * (l2 / CANVAS_SIDE)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub reward: f64,
    pub iou: f64,
    /// Position error, averaged over pieces; zero when position is fixed.
    pub l2: f64,
}

/// Scores candidate fields for one task against a cached ground-truth mask.
pub struct Scorer<'a> {
    pub task: &'a TaskSpec,
    pub gt: &'a SceneAnnotation,
    pub params: RewardParams,
    target: IouTarget,
}

impl<'a> Scorer<'a> {
    pub fn new(task: &'a TaskSpec, gt: &'a SceneAnnotation, params: RewardParams) -> Result<Self, RefineError> {
        let target = IouTarget::new(&gt.pieces, params.dilation_px, params.resolution)?;
        Ok(Scorer { task, gt, params, target })
    }

    pub fn iou(&self, placed: &[Placement]) -> Result<f64, RefineError> {
        Ok(self.target.score(placed)?)
    }

    pub fn place(&self, fields: &[PieceFields]) -> Result<Vec<Placement>, RefineError> {
        Ok(self.task.merge(fields)?)
    }

    pub fn evaluate(&self, fields: &[PieceFields]) -> Result<Evaluation, RefineError> {
        let placed = self.place(fields)?;
        let iou = self.iou(&placed)?;
        let n = placed.len() as f64;
        let pairs = || placed.iter().zip(&self.gt.pieces);
        let mode = self.task.mode;
        let l2 = if mode.predicts(Field::Pos) {
            pairs().map(|(p, g)| l2_error(p.pos, g.pos)).sum::<f64>() / n
        } else {
            0.0
        };
        let mut reward = reward_value(iou, l2, self.params.lambda);
        if self.params.angle_lambda > 0.0 && mode.predicts(Field::Angle) {
            let e = pairs().map(|(p, g)| angle_error(p.angle, g.angle, g.piece_type, true)).sum::<f64>() / n;
            reward -= self.params.angle_lambda * e / 180.0;
        }
        if self.params.size_lambda > 0.0 && mode.predicts(Field::Size) {
            let e = pairs().map(|(p, g)| size_error(p.size, g.size)).sum::<f64>() / n;
            reward -= self.params.size_lambda * e;
        }
        Ok(Evaluation { reward, iou, l2 })
    }
}

/// Reward, IoU and position error of `fields` merged over the task.
pub fn reward(
    task: &TaskSpec,
    gt: &SceneAnnotation,
    fields: &[PieceFields],
    params: &RewardParams,
) -> Result<Evaluation, RefineError> {
    Scorer::new(task, gt, *params)?.evaluate(fields)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    /// Maximum proposals per scene.
    pub max_iters: u32,
    pub tau: f64,
    pub k: usize,
    pub temperature: f64,
    pub local_search: bool,
    pub seed: u64,
    /// Consecutive unparseable answers tolerated before stopping.
    pub parse_failure_budget: u32,
    #[serde(default)]
    pub text_only_exemplars: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_iters: 6,
            tau: 0.9,
            k: 15,
            temperature: 0.0,
            local_search: true,
            seed: 0,
            parse_failure_budget: 3,
            text_only_exemplars: false,
        }
    }
}

impl LoopConfig {
    /// One proposal, no hint, no local search.
    pub fn single_shot(k: usize, temperature: f64, seed: u64) -> Self {
        LoopConfig {
            max_iters: 1,
            k,
            temperature,
            seed,
            local_search: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), RefineError> {
        if self.max_iters == 0 {
            return Err(RefineError::InvalidConfig("loop count must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(RefineError::InvalidConfig(format!("tau {} outside (0, 1]", self.tau)));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(RefineError::InvalidConfig(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.parse_failure_budget == 0 {
            return Err(RefineError::InvalidConfig("parse-failure budget must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_task, Source, TaskMode};
    use crate::geometry::{PieceType, Point};

    #[test]
    fn reward_arithmetic() {
        assert_eq!(reward_value(0.65, 1.0, 0.1), 0.64);
        assert_eq!(reward_value(0.932, 0.0, 0.1), 0.932);
        assert_eq!(reward_value(0.932, 0.0, 7.0), 0.932);
    }

    #[test]
    fn ground_truth_scores_one() {
        let gt = SceneAnnotation::new(
            "r",
            vec![Placement::new(PieceType::Square, Point::new(4.0, 6.0), 10.0, 1.2, false)],
            Source::Synthetic,
        )
        .unwrap();
        for mode in [TaskMode::Pos, TaskMode::Angle, TaskMode::All] {
            let task = make_task(&gt, mode).unwrap();
            let e = reward(&task, &gt, &task.answer(&gt), &RewardParams::default()).unwrap();
            assert_eq!((e.reward, e.iou, e.l2), (1.0, 1.0, 0.0));
        }
    }

    #[test]
    fn position_penalty_applies() {
        let gt = SceneAnnotation::new(
            "r",
            vec![Placement::new(PieceType::Square, Point::new(4.0, 6.0), 0.0, 1.0, false)],
            Source::Synthetic,
        )
        .unwrap();
        let task = make_task(&gt, TaskMode::Pos).unwrap();
        let shifted = [PieceFields {
            pos: Some(Point::new(4.5, 6.0)),
            ..Default::default()
        }];
        let e = reward(&task, &gt, &shifted, &RewardParams::default()).unwrap();
        assert!((e.l2 - 0.5).abs() < 1e-12);
        assert!((e.reward - (e.iou - 0.005)).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(LoopConfig::default().validate().is_ok());
        assert!(LoopConfig { max_iters: 0, ..Default::default() }.validate().is_err());
        assert!(LoopConfig { tau: 0.0, ..Default::default() }.validate().is_err());
        assert!(LoopConfig { tau: 1.5, ..Default::default() }.validate().is_err());
        assert!(RewardParams { lambda: 0.0, ..Default::default() }.validate().is_err());
        let s = LoopConfig::single_shot(0, 0.0, 1);
        assert_eq!((s.max_iters, s.local_search), (1, false));
    }
}
