use serde::{Deserialize, Serialize};

use super::eval::{inputs_from_scenes, mean_iou, run_scenes, EvalSettings};
use super::HarnessError;
use crate::dataset::{SceneAnnotation, TaskMode};
use crate::proposal::{ExemplarPool, OracleBackend, OracleConfig};
use crate::refine::{LoopConfig, RewardParams};

#[derive(Debug, Clone)]
pub struct CalibrationRequest<'a> {
    pub scenes: &'a [SceneAnnotation],
    pub mode: TaskMode,
    /// Every field except `sigma_pos` is kept as given.
    pub base: OracleConfig,
    pub target_iou: f64,
    pub tolerance: f64,
    pub sigma_bounds: (f64, f64),
    pub max_evaluations: usize,
    pub reward: RewardParams,
    pub k: usize,
    pub workers: usize,
}

impl<'a> CalibrationRequest<'a> {
    pub fn new(scenes: &'a [SceneAnnotation], target_iou: f64, tolerance: f64) -> Self {
        CalibrationRequest {
            scenes,
            mode: TaskMode::Pos,
            base: OracleConfig::default(),
            target_iou,
            tolerance,
            sigma_bounds: (0.0, 5.0),
            max_evaluations: 20,
            reward: RewardParams::default(),
            k: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub sigma_pos: f64,
    pub achieved_iou: f64,
    /// Every `(sigma_pos, single-shot mean IoU)` evaluated, in order.
    pub evaluations: Vec<(f64, f64)>,
}

/// Single-shot mean IoU of the oracle at `sigma_pos` over the request's scenes.
fn single_shot_mean(req: &CalibrationRequest<'_>, sigma_pos: f64, pool: &ExemplarPool) -> Result<f64, HarnessError> {
    let cfg = OracleConfig { sigma_pos, ..req.base };
    let backend = OracleBackend::new(cfg, req.scenes)?;
    let settings = EvalSettings {
        mode: req.mode,
        loop_cfg: LoopConfig::single_shot(req.k, 0.0, cfg.seed),
        reward: req.reward,
        symmetry_aware: true,
        model: "oracle".into(),
    };
    let inputs = inputs_from_scenes(req.scenes, req.reward.resolution);
    let results = run_scenes(&inputs, &backend, pool, &settings, req.workers)?;
    Ok(mean_iou(&results).unwrap_or(0.0))
}

/// Bisects `sigma_pos` until the single-shot mean IoU is within
/// `tolerance` of the target. Mean IoU falls as sigma grows.
pub fn calibrate_oracle(req: &CalibrationRequest<'_>) -> Result<Calibration, HarnessError> {
    let (lo0, hi0) = req.sigma_bounds;
    if !(req.target_iou > 0.0 && req.target_iou <= 1.0) {
        return Err(HarnessError::InvalidConfig(format!("target IoU {} outside (0, 1]", req.target_iou)));
    }
    if !(0.0 <= lo0 && lo0 <= hi0 && hi0.is_finite()) || req.tolerance < 0.0 || req.max_evaluations < 2 {
        return Err(HarnessError::InvalidConfig("bad calibration bounds".into()));
    }
    if req.scenes.is_empty() {
        return Err(HarnessError::InvalidConfig("calibration split is empty".into()));
    }
    let pool = ExemplarPool::new(req.scenes, req.reward.resolution);
    let mut evals = Vec::new();
    let eval = |s: f64, evals: &mut Vec<(f64, f64)>| -> Result<f64, HarnessError> {
        let m = single_shot_mean(req, s, &pool)?;
        log::info!("calibration: sigma_pos={s:.5} mean IoU={m:.4}");
        evals.push((s, m));
        Ok(m)
    };
    let within = |m: f64| (m - req.target_iou).abs() <= req.tolerance;
    let done = |s: f64, m: f64, evals: Vec<(f64, f64)>| Calibration {
        sigma_pos: s,
        achieved_iou: m,
        evaluations: evals,
    };

    let mean_lo = eval(lo0, &mut evals)?;
    if within(mean_lo) {
        return Ok(done(lo0, mean_lo, evals));
    }
    let mean_hi = eval(hi0, &mut evals)?;
    if within(mean_hi) {
        return Ok(done(hi0, mean_hi, evals));
    }
    if mean_lo < req.target_iou || mean_hi > req.target_iou {
        return Err(HarnessError::Unreachable {
            target: req.target_iou,
            lo: lo0,
            hi: hi0,
            mean_lo,
            mean_hi,
        });
    }
    let (mut lo, mut hi) = (lo0, hi0);
    while evals.len() < req.max_evaluations {
        let mid = 0.5 * (lo + hi);
        let m = eval(mid, &mut evals)?;
        if within(m) {
            return Ok(done(mid, m, evals));
        }
        if m > req.target_iou {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let closest = evals
        .iter()
        .map(|e| e.1)
        .min_by(|a, b| (a - req.target_iou).abs().total_cmp(&(b - req.target_iou).abs()))
        .unwrap_or(0.0);
    Err(HarnessError::NotConverged {
        target: req.target_iou,
        evaluations: evals.len(),
        closest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, Split, SynthConfig};
    use crate::geometry::PieceType;

    fn split() -> Vec<SceneAnnotation> {
        generate_synthetic(&SynthConfig::new(12, Split::Single, 8).with_filter(&[PieceType::Square])).unwrap()
    }

    fn fast(req: &mut CalibrationRequest<'_>) {
        req.reward.resolution = 128;
        req.workers = 2;
    }

    #[test]
    fn exact_target_gives_zero_sigma() {
        let scenes = split();
        let mut req = CalibrationRequest::new(&scenes, 1.0, 1e-12);
        fast(&mut req);
        let c = calibrate_oracle(&req).unwrap();
        assert_eq!(c.sigma_pos, 0.0);
        assert_eq!(c.achieved_iou, 1.0);
        assert_eq!(c.evaluations.len(), 1);
    }

    #[test]
    fn bisection_hits_tolerance() {
        let scenes = split();
        let mut req = CalibrationRequest::new(&scenes, 0.6, 0.03);
        fast(&mut req);
        let c = calibrate_oracle(&req).unwrap();
        assert!(c.sigma_pos > 0.0);
        assert!((c.achieved_iou - 0.6).abs() <= 0.03);
        assert!(c.evaluations.len() <= 20);
    }

    #[test]
    fn raised_lower_bound_is_unreachable() {
        let scenes = split();
        let mut req = CalibrationRequest::new(&scenes, 0.99, 0.005);
        req.sigma_bounds = (2.0, 5.0);
        fast(&mut req);
        assert!(matches!(calibrate_oracle(&req), Err(HarnessError::Unreachable { .. })));
    }

    #[test]
    fn rejects_bad_targets() {
        let scenes = split();
        let req = CalibrationRequest::new(&scenes, 0.0, 0.01);
        assert!(matches!(calibrate_oracle(&req), Err(HarnessError::InvalidConfig(_))));
    }
}
