use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::HarnessError;
use crate::dataset::{
    make_task, render_overlay, render_placements, render_scene, PieceFields, SceneAnnotation, TaskMode,
};
use crate::geometry::{rasterize, realize_all, IouTarget, Placement};
use crate::io::write_atomic;
use crate::metrics::{aggregate, score_placed, Aggregate, GroupKey, MetricRecord, ScoreOptions};
use crate::proposal::{Backend, BackendConfig, ExemplarPool, SceneImage, PROMPT_VERSION};
use crate::refine::{refine_loop, LoopConfig, RefineError, RefineTrace, RewardParams};

/// How each scene is evaluated, independent of where inputs live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Requested mode; scenes with the other piece count use its
    /// counterpart.
    pub mode: TaskMode,
    pub loop_cfg: LoopConfig,
    pub reward: RewardParams,
    pub symmetry_aware: bool,
    /// Label stored in every metric record.
    pub model: String,
}

impl EvalSettings {
    pub fn score_options(&self) -> ScoreOptions {
        ScoreOptions {
            dilation_px: self.reward.dilation_px,
            resolution: self.reward.resolution,
            symmetry_aware: self.symmetry_aware,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.loop_cfg.validate()?;
        self.reward.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Optional directory of `<stem>.png` silhouettes; scenes without one
    /// are rendered from their annotation.
    pub in_dir: Option<PathBuf>,
    pub gt_dir: PathBuf,
    pub out_dir: PathBuf,
    pub backend: BackendConfig,
    pub settings: EvalSettings,
    pub workers: usize,
}

#[derive(Debug)]
pub struct SceneInput {
    pub stem: String,
    pub gt: SceneAnnotation,
    pub image: SceneImage,
}

#[derive(Debug, Clone)]
pub struct SceneResult {
    pub stem: String,
    pub scene_id: String,
    /// `None` when the scene's piece count has no counterpart of the mode.
    pub record: Option<MetricRecord>,
    pub trace: Option<RefineTrace>,
    pub fields: Option<Vec<PieceFields>>,
    pub placed: Option<Vec<Placement>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenes: usize,
    pub scored: usize,
    pub parse_failures: usize,
    /// Scenes whose evaluation failed; recorded, never fatal.
    pub failed: Vec<String>,
    /// Scenes the requested mode does not apply to.
    pub skipped: Vec<String>,
    /// Images without a ground-truth annotation.
    pub unpaired: Vec<String>,
    pub mean_iou: Option<f64>,
    pub groups: Vec<Aggregate>,
}

/// Snapshot of everything needed to rerun an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub prompt_version: String,
    pub backend_identity: String,
    pub seed: u64,
    pub config: RunConfig,
}

fn read_dir_sorted(dir: &Path, ext: &str) -> Result<Vec<(String, PathBuf)>, HarnessError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Pairs annotations in `gt_dir` with images in `in_dir` by file stem.
/// Returns the inputs and the stems of images lacking an annotation.
pub fn load_inputs(
    gt_dir: &Path,
    in_dir: Option<&Path>,
    resolution: u32,
) -> Result<(Vec<SceneInput>, Vec<String>), HarnessError> {
    for d in std::iter::once(gt_dir).chain(in_dir) {
        if !d.is_dir() {
            return Err(HarnessError::MissingDir(d.to_path_buf()));
        }
    }
    let images = match in_dir {
        Some(d) => read_dir_sorted(d, "png")?,
        None => Vec::new(),
    };
    let mut inputs = Vec::new();
    let mut stems = BTreeSet::new();
    for (stem, path) in read_dir_sorted(gt_dir, "json")? {
        let gt = SceneAnnotation::load(&path).map_err(|e| HarnessError::BadInput {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let image = match images.iter().find(|(s, _)| *s == stem) {
            Some((_, png)) => SceneImage::from_png(std::fs::read(png)?),
            None => SceneImage::from_scene(&gt, resolution),
        };
        stems.insert(stem.clone());
        inputs.push(SceneInput { stem, gt, image });
    }
    let unpaired = images
        .into_iter()
        .map(|(s, _)| s)
        .filter(|s| !stems.contains(s))
        .collect();
    Ok((inputs, unpaired))
}

/// Builds inputs rendered from in-memory annotations, keyed by scene id.
pub fn inputs_from_scenes(scenes: &[SceneAnnotation], resolution: u32) -> Vec<SceneInput> {
    scenes
        .iter()
        .map(|s| SceneInput {
            stem: s.scene_id.clone(),
            gt: s.clone(),
            image: SceneImage::from_scene(s, resolution),
        })
        .collect()
}

/// Evaluates one scene: task construction, proposal or refinement, scoring.
/// Failures end up in the returned record.
pub fn process_scene(
    input: &SceneInput,
    backend: &dyn Backend,
    pool: &ExemplarPool,
    settings: &EvalSettings,
) -> SceneResult {
    let gt = &input.gt;
    let mut result = SceneResult {
        stem: input.stem.clone(),
        scene_id: gt.scene_id.clone(),
        record: None,
        trace: None,
        fields: None,
        placed: None,
    };
    let Some(mode) = settings.mode.for_piece_count(gt.pieces.len()) else {
        return result;
    };
    let task = match make_task(gt, mode) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("{}: {e}", input.stem);
            return result;
        }
    };
    let mut loop_cfg = settings.loop_cfg;
    loop_cfg.k = loop_cfg.k.min(pool.eligible(&task).count());
    let opts = settings.score_options();
    let fail = |msg: String| {
        let mut r = MetricRecord::failed(&task, gt, Some(msg));
        r.model = settings.model.clone();
        r
    };
    let outcome = refine_loop(&task, gt, backend, pool, &input.image, &loop_cfg, &settings.reward);
    let record = match outcome {
        Ok(out) => {
            result.trace = Some(out.trace);
            match out.best_fields {
                Some(fields) => {
                    let scored = task.merge(&fields).map_err(|e| e.to_string()).and_then(|placed| {
                        let target = IouTarget::new(&gt.pieces, opts.dilation_px, opts.resolution)
                            .map_err(|e| e.to_string())?;
                        let rec = score_placed(&task, gt, &placed, &target, &opts).map_err(|e| e.to_string())?;
                        Ok((placed, rec))
                    });
                    result.fields = Some(fields);
                    match scored {
                        Ok((placed, mut rec)) => {
                            rec.model = settings.model.clone();
                            result.placed = Some(placed);
                            rec
                        }
                        Err(msg) => fail(msg),
                    }
                }
                None => {
                    let mut r = MetricRecord::failed(&task, gt, None);
                    r.model = settings.model.clone();
                    r
                }
            }
        }
        Err(RefineError::Backend { source, trace, .. }) => {
            log::warn!("{}: backend failure: {source}", input.stem);
            result.trace = Some(*trace);
            fail(format!("backend: {source}"))
        }
        Err(e) => {
            log::warn!("{}: {e}", input.stem);
            fail(e.to_string())
        }
    };
    result.record = Some(record);
    result
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::InvalidConfig(e.to_string()))
}

/// Evaluates every input on a bounded pool; results come back sorted by
/// scene id regardless of completion order.
pub fn run_scenes(
    inputs: &[SceneInput],
    backend: &dyn Backend,
    pool: &ExemplarPool,
    settings: &EvalSettings,
    workers: usize,
) -> Result<Vec<SceneResult>, HarnessError> {
    settings.validate()?;
    let mut results: Vec<SceneResult> = thread_pool(workers)?.install(|| {
        inputs
            .par_iter()
            .map(|input| process_scene(input, backend, pool, settings))
            .collect()
    });
    results.sort_by(|a, b| (&a.scene_id, &a.stem).cmp(&(&b.scene_id, &b.stem)));
    Ok(results)
}

/// Mean IoU over scored scenes.
pub fn mean_iou(results: &[SceneResult]) -> Option<f64> {
    let ious: Vec<f64> = results.iter().filter_map(|r| r.record.as_ref()).map(|r| r.iou).collect();
    crate::metrics::Stat::from_values(&ious).map(|s| s.mean)
}

pub(crate) fn summarize(results: &[SceneResult], unpaired: Vec<String>) -> RunSummary {
    let records: Vec<MetricRecord> = results.iter().filter_map(|r| r.record.clone()).collect();
    RunSummary {
        scenes: results.len(),
        scored: records.len(),
        parse_failures: records.iter().filter(|r| r.parse_failed).count(),
        failed: records.iter().filter(|r| r.error.is_some()).map(|r| r.scene_id.clone()).collect(),
        skipped: results.iter().filter(|r| r.record.is_none()).map(|r| r.stem.clone()).collect(),
        unpaired,
        mean_iou: mean_iou(results),
        groups: aggregate(&records, GroupKey::of),
    }
}

fn pretty(v: &impl Serialize) -> Result<Vec<u8>, HarnessError> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn write_scene_outputs(out_dir: &Path, input: &SceneInput, r: &SceneResult, resolution: u32) -> Result<(), HarnessError> {
    let dir = out_dir.join(&r.stem);
    let record = r.record.as_ref();
    let pred = json!({
        "scene_id": r.scene_id,
        "mode": record.map(|x| x.mode),
        "model": record.map(|x| x.model.clone()),
        "fields": r.fields,
        "pieces": r.placed,
        "parse_failed": record.map(|x| x.parse_failed),
        "error": record.and_then(|x| x.error.clone()),
    });
    write_atomic(&dir.join("pred.json"), &pretty(&pred)?)?;
    write_atomic(&dir.join("gt.png"), &render_scene(&input.gt, resolution)?)?;
    let placed = r.placed.as_deref().unwrap_or(&[]);
    write_atomic(&dir.join("pred.png"), &render_placements(placed, resolution)?)?;
    let gt_mask = rasterize(&realize_all(&input.gt.pieces)?, resolution)?;
    let pred_mask = rasterize(&realize_all(placed)?, resolution)?;
    write_atomic(&dir.join("overlay.png"), &render_overlay(&gt_mask, &pred_mask)?)?;
    if let Some(trace) = &r.trace {
        write_atomic(
            &out_dir.join("traces").join(format!("{}.jsonl", r.stem)),
            trace.to_jsonl()?.as_bytes(),
        )?;
    }
    Ok(())
}

/// Runs a full evaluation from directories and writes every artifact:
/// per-scene `pred.json` and PNGs, `metrics.jsonl`, traces, `summary.json`
/// and `run_manifest.json`.
pub fn run_eval(cfg: &RunConfig) -> Result<RunSummary, HarnessError> {
    cfg.settings.validate()?;
    cfg.backend.validate()?;
    let resolution = cfg.settings.reward.resolution;
    let (inputs, unpaired) = load_inputs(&cfg.gt_dir, cfg.in_dir.as_deref(), resolution)?;
    if inputs.is_empty() {
        return Err(HarnessError::NoScenes(cfg.gt_dir.clone()));
    }
    for stem in &unpaired {
        log::warn!("{stem}: image has no ground truth; metrics skipped");
    }
    let scenes: Vec<SceneAnnotation> = inputs.iter().map(|i| i.gt.clone()).collect();
    let backend = cfg.backend.build(&scenes)?;
    let pool = ExemplarPool::new(&scenes, resolution);
    std::fs::create_dir_all(&cfg.out_dir)?;

    let manifest = RunManifest {
        tool: "tangram".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        prompt_version: PROMPT_VERSION.into(),
        backend_identity: backend.identity(),
        seed: cfg.settings.loop_cfg.seed,
        config: cfg.clone(),
    };
    write_atomic(&cfg.out_dir.join("run_manifest.json"), &pretty(&manifest)?)?;

    let results = run_scenes(&inputs, backend.as_ref(), &pool, &cfg.settings, cfg.workers)?;
    thread_pool(cfg.workers)?.install(|| {
        results.par_iter().try_for_each(|r| {
            let input = inputs.iter().find(|i| i.stem == r.stem).expect("result has an input");
            write_scene_outputs(&cfg.out_dir, input, r, resolution)
        })
    })?;

    let mut lines = String::new();
    for rec in results.iter().filter_map(|r| r.record.as_ref()) {
        lines.push_str(&serde_json::to_string(rec)?);
        lines.push('\n');
    }
    write_atomic(&cfg.out_dir.join("metrics.jsonl"), lines.as_bytes())?;
    let summary = summarize(&results, unpaired);
    write_atomic(&cfg.out_dir.join("summary.json"), &pretty(&summary)?)?;
    Ok(summary)
}
