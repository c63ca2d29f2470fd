use crate::dataset::{PieceFields, SceneAnnotation, TaskSpec};
use crate::proposal::{build_prompt, propose, Backend, ExemplarPool, PromptOptions, SceneImage};

use super::search::local_search_with;
use super::{Evaluation, IterationEntry, LoopConfig, RefineError, RefineTrace, RewardParams, Scorer, StopReason};

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    /// `None` when no proposal could be parsed.
    pub best_fields: Option<Vec<PieceFields>>,
    pub best_iou: f64,
    pub trace: RefineTrace,
}

/// Runs up to `cfg.max_iters` proposals, keeping the highest-reward
/// candidate and stopping once its IoU reaches `cfg.tau`. A best below the
/// threshold is then polished by the positional grid search when the mode
/// predicts positions.
pub fn refine_loop(
    task: &TaskSpec,
    gt: &SceneAnnotation,
    backend: &dyn Backend,
    pool: &ExemplarPool,
    target_image: &SceneImage,
    cfg: &LoopConfig,
    params: &RewardParams,
) -> Result<RefineOutcome, RefineError> {
    cfg.validate()?;
    params.validate()?;
    let scorer = Scorer::new(task, gt, *params)?;
    let opts = PromptOptions {
        k: cfg.k,
        temperature: cfg.temperature,
        seed: cfg.seed,
        text_only_exemplars: cfg.text_only_exemplars,
    };
    let mut trace = RefineTrace::new(&task.scene_id, task.mode, cfg.tau);
    let mut best: Option<(Vec<PieceFields>, Evaluation)> = None;
    let mut failures = 0;

    for t in 1..=cfg.max_iters {
        let prev_iou = best.as_ref().map_or(0.0, |b| b.1.iou);
        let bundle = build_prompt(task, pool, target_image, t, prev_iou, &opts)?;
        let resp = match propose(backend, &bundle) {
            Ok(r) => r,
            Err(source) => {
                trace.error = Some(source.to_string());
                trace.best_iou = prev_iou;
                trace.best_reward = best.as_ref().map(|b| b.1.reward);
                return Err(RefineError::Backend {
                    iteration: t,
                    source,
                    trace: Box::new(trace),
                });
            }
        };
        let mut entry = IterationEntry {
            iteration: t,
            fields: resp.parsed.clone(),
            parse_error: resp.parse_error.clone(),
            clamped: resp.clamped,
            iou: None,
            reward: None,
            l2: None,
            accepted_as_best: false,
            feedback_hint_used: bundle.feedback_hint.is_some(),
            best_reward: None,
            best_iou: None,
        };
        match resp.parsed {
            Some(fields) => {
                failures = 0;
                let ev = scorer.evaluate(&fields)?;
                entry.iou = Some(ev.iou);
                entry.reward = Some(ev.reward);
                entry.l2 = Some(ev.l2);
                if best.as_ref().map_or(true, |b| ev.reward > b.1.reward) {
                    entry.accepted_as_best = true;
                    best = Some((fields, ev));
                }
            }
            None => failures += 1,
        }
        entry.best_reward = best.as_ref().map(|b| b.1.reward);
        entry.best_iou = best.as_ref().map(|b| b.1.iou);
        log::debug!(
            "{} t={t} iou={:?} best={:?}",
            task.scene_id,
            entry.iou,
            entry.best_iou
        );
        trace.iterations.push(entry);
        if best.as_ref().is_some_and(|b| b.1.iou >= cfg.tau) {
            trace.stop_reason = StopReason::Threshold;
            break;
        }
        if failures >= cfg.parse_failure_budget {
            trace.stop_reason = StopReason::ParseFailureBudget;
            break;
        }
    }

    if let Some((fields, ev)) = &mut best {
        if cfg.local_search && ev.iou < cfg.tau && task.mode.involves_position() {
            let (polished, _) = local_search_with(&scorer, fields, &mut trace.local_search)?;
            let polished_ev = scorer.evaluate(&polished)?;
            if polished_ev.reward >= ev.reward {
                *fields = polished;
                *ev = polished_ev;
                trace.local_search_adopted = true;
            }
        }
        // Final reward on the returned candidate.
        *ev = scorer.evaluate(fields)?;
    }

    trace.best_iou = best.as_ref().map_or(0.0, |b| b.1.iou);
    trace.best_reward = best.as_ref().map(|b| b.1.reward);
    debug_assert!(trace.check_invariants().is_ok(), "{:?}", trace.check_invariants());
    Ok(RefineOutcome {
        best_iou: trace.best_iou,
        best_fields: best.map(|b| b.0),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, make_task, Split, SynthConfig, TaskMode};
    use crate::proposal::{OracleBackend, OracleConfig, ReplayBackend, TraceRecord};

    fn scenes() -> Vec<SceneAnnotation> {
        generate_synthetic(&SynthConfig::new(6, Split::Single, 5)).unwrap()
    }

    fn replay(scene: &str, texts: &[&str]) -> ReplayBackend {
        ReplayBackend::from_records(texts.iter().enumerate().map(|(i, t)| TraceRecord {
            scene_id: scene.into(),
            iteration: i as u32 + 1,
            raw_text: t.to_string(),
        }))
    }

    #[test]
    fn exact_oracle_stops_at_first_iteration() {
        let scenes = scenes();
        let oracle = OracleBackend::new(OracleConfig::default(), &scenes).unwrap();
        let pool = ExemplarPool::new(&scenes, 64);
        for s in &scenes {
            let task = make_task(s, TaskMode::All).unwrap();
            let img = SceneImage::from_scene(s, 64);
            let cfg = LoopConfig { k: 5, ..Default::default() };
            let out = refine_loop(&task, s, &oracle, &pool, &img, &cfg, &RewardParams::default()).unwrap();
            assert_eq!(out.best_iou, 1.0);
            assert_eq!(out.trace.iterations.len(), 1);
            assert_eq!(out.trace.stop_reason, StopReason::Threshold);
            assert!(!out.trace.iterations[0].feedback_hint_used);
        }
    }

    #[test]
    fn parse_failures_exhaust_budget() {
        let s = &scenes()[0];
        let backend = replay(&s.scene_id, &["nope", "{\"pos\": 3}", "still no", "{\"pos\":[5,5]}"]);
        let task = make_task(s, TaskMode::Pos).unwrap();
        let img = SceneImage::from_scene(s, 64);
        let cfg = LoopConfig { k: 0, ..Default::default() };
        let out = refine_loop(&task, s, &backend, &ExemplarPool::default(), &img, &cfg, &RewardParams::default()).unwrap();
        assert_eq!(out.trace.stop_reason, StopReason::ParseFailureBudget);
        assert_eq!(out.trace.iterations.len(), 3);
        assert!(out.best_fields.is_none());
        assert_eq!(out.best_iou, 0.0);
    }

    #[test]
    fn failure_keeps_best_and_hint_quotes_it() {
        let s = &scenes()[1];
        let gt = s.pieces[0].pos;
        let near = format!("{{\"pos\":[{},{}]}}", gt.x + 0.05, gt.y);
        let backend = replay(&s.scene_id, &[&near, "garbage"]);
        let task = make_task(s, TaskMode::Pos).unwrap();
        let img = SceneImage::from_scene(s, 64);
        let cfg = LoopConfig {
            k: 0,
            tau: 1.0,
            max_iters: 2,
            local_search: false,
            ..Default::default()
        };
        let out = refine_loop(&task, s, &backend, &ExemplarPool::default(), &img, &cfg, &RewardParams::default()).unwrap();
        assert_eq!(out.trace.iterations.len(), 2);
        assert!(out.trace.iterations[1].parse_error.is_some());
        assert!(out.trace.iterations[1].feedback_hint_used);
        assert_eq!(out.trace.iterations[1].best_iou, out.trace.iterations[0].iou);
        assert_eq!(out.trace.stop_reason, StopReason::Exhausted);
    }

    #[test]
    fn backend_error_carries_partial_trace() {
        let s = &scenes()[2];
        let backend = replay(&s.scene_id, &["{\"angle\": 10}"]);
        let task = make_task(s, TaskMode::Angle).unwrap();
        let img = SceneImage::from_scene(s, 64);
        let cfg = LoopConfig { k: 0, tau: 1.0, ..Default::default() };
        match refine_loop(&task, s, &backend, &ExemplarPool::default(), &img, &cfg, &RewardParams::default()) {
            Err(RefineError::Backend { iteration, trace, .. }) => {
                assert_eq!(iteration, 2);
                assert_eq!(trace.iterations.len(), 1);
                assert!(trace.error.is_some());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn local_search_runs_below_threshold() {
        let s = &scenes()[3];
        let gt = s.pieces[0].pos;
        let off = format!("{{\"pos\":[{},{}]}}", gt.x + 0.6, gt.y - 0.3);
        let backend = replay(&s.scene_id, &[&off]);
        let task = make_task(s, TaskMode::Pos).unwrap();
        let img = SceneImage::from_scene(s, 64);
        let cfg = LoopConfig { k: 0, max_iters: 1, ..Default::default() };
        let out = refine_loop(&task, s, &backend, &ExemplarPool::default(), &img, &cfg, &RewardParams::default()).unwrap();
        assert!(out.trace.local_search_adopted);
        assert!(out.best_iou > out.trace.iterations[0].iou.unwrap());
        assert!(out.best_iou >= 0.99, "{}", out.best_iou);
        out.trace.check_invariants().unwrap();
    }

    #[test]
    fn trace_roundtrips_through_jsonl() {
        let s = &scenes()[4];
        let gt = s.pieces[0].pos;
        let off = format!("Answer: {{\"pos\":[{},{}]}}", gt.x + 0.3, gt.y);
        let backend = replay(&s.scene_id, &["bad", &off]);
        let task = make_task(s, TaskMode::Pos).unwrap();
        let img = SceneImage::from_scene(s, 64);
        let cfg = LoopConfig { k: 0, max_iters: 2, ..Default::default() };
        let out = refine_loop(&task, s, &backend, &ExemplarPool::default(), &img, &cfg, &RewardParams::default()).unwrap();
        let text = out.trace.to_jsonl().unwrap();
        assert_eq!(RefineTrace::from_jsonl(&text).unwrap(), out.trace);
        assert!(text.lines().last().unwrap().contains("\"kind\":\"summary\""));
    }
}
