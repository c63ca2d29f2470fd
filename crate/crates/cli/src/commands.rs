use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tangram_core::dataset::{
    export_svg, generate_synthetic, import_svg, render_scene, SceneAnnotation, Split, SynthConfig,
};
use tangram_core::geometry::{template_of, union_iou, PieceType};
use tangram_core::harness::{
    ablation_csv, ablation_table, calibrate_oracle, load_inputs, load_metrics, metrics_csv, metrics_table,
    read_ablation_csv, run_ablation, run_eval, AblationAxes, AblationGrid, CalibrationRequest, EvalSettings,
    HarnessError, RunConfig,
};
use tangram_core::io::write_atomic;
use tangram_core::proposal::{BackendConfig, OracleConfig, RemoteConfig};
use tangram_core::refine::{LoopConfig, RewardParams};

use crate::args::*;

/// What a successful command reports back for the exit code.
pub enum Outcome {
    Clean,
    PartialFailures,
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    HarnessError::InvalidConfig(msg.into()).into()
}

fn backend_config(b: &BackendArgs, seed: u64) -> Result<BackendConfig> {
    Ok(match b.backend {
        BackendKind::Oracle => BackendConfig::NoisyOracle(OracleConfig {
            sigma_pos: b.sigma_pos,
            sigma_angle: b.sigma_angle,
            sigma_size: b.sigma_size,
            gamma: b.gamma,
            seed,
            ..Default::default()
        }),
        BackendKind::Replay => match &b.trace {
            Some(p) => BackendConfig::Replay { trace_path: p.clone() },
            None => return Err(config_err("--backend replay needs --trace")),
        },
        BackendKind::Remote => {
            let mut cfg = RemoteConfig {
                endpoint: b.endpoint.clone().unwrap_or_default(),
                model: b.model.clone().unwrap_or_default(),
                log_dir: b.log_dir.clone(),
                trace_path: b.trace.clone(),
                ..Default::default()
            };
            if let Some(env) = &b.api_key_env {
                cfg.api_key_env = env.clone();
            }
            BackendConfig::Remote(cfg)
        }
    })
}

fn model_label(b: &BackendArgs) -> String {
    match (&b.model, b.backend) {
        (Some(m), _) => m.clone(),
        (None, BackendKind::Oracle) => "oracle".into(),
        (None, BackendKind::Replay) => "replay".into(),
        (None, BackendKind::Remote) => "remote".into(),
    }
}

fn workers(s: &ScoringArgs, backend: &BackendConfig) -> usize {
    s.workers.unwrap_or_else(|| match backend {
        BackendConfig::Remote(r) => r.max_concurrent,
        _ => std::thread::available_parallelism().map_or(1, |n| n.get()),
    })
}

fn reward_params(s: &ScoringArgs) -> RewardParams {
    RewardParams {
        lambda: s.lambda,
        dilation_px: s.dilation,
        resolution: s.resolution,
        ..Default::default()
    }
}

fn settings(s: &ScoringArgs, loop_cfg: LoopConfig, model: String) -> EvalSettings {
    EvalSettings {
        mode: s.mode.into(),
        loop_cfg: LoopConfig {
            text_only_exemplars: s.text_only_exemplars,
            ..loop_cfg
        },
        reward: reward_params(s),
        symmetry_aware: !s.raw_angles,
        model,
    }
}

fn load_scenes(gt_dir: &Path, resolution: u32) -> Result<Vec<SceneAnnotation>> {
    let (inputs, _) = load_inputs(gt_dir, None, resolution)?;
    if inputs.is_empty() {
        return Err(HarnessError::NoScenes(gt_dir.to_path_buf()).into());
    }
    Ok(inputs.into_iter().map(|i| i.gt).collect())
}

fn svg_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            found.retain(|f| f.extension().and_then(|e| e.to_str()) == Some("svg"));
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(HarnessError::MissingDir(p.clone()).into());
        }
    }
    Ok(out)
}

fn write_scene(out: &Path, scene: &SceneAnnotation, args: &GenerateArgs) -> Result<()> {
    scene.save(&out.join("gt").join(format!("{}.json", scene.scene_id)))?;
    write_atomic(
        &out.join("images").join(format!("{}.png", scene.scene_id)),
        &render_scene(scene, args.resolution)?,
    )?;
    if args.svg {
        write_atomic(&out.join("svg").join(format!("{}.svg", scene.scene_id)), export_svg(scene)?.as_bytes())?;
    }
    Ok(())
}

pub fn generate(args: &GenerateArgs) -> Result<Outcome> {
    if args.import.is_empty() {
        let pieces = args
            .pieces
            .iter()
            .map(|p| p.parse::<PieceType>().map_err(|e| config_err(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let split = match args.split {
            SplitArg::Single => Split::Single,
            SplitArg::TwoPiece => Split::TwoPiece,
        };
        let scenes = generate_synthetic(&SynthConfig::new(args.count, split, args.seed).with_filter(&pieces))?;
        for s in &scenes {
            write_scene(&args.out_dir, s, args)?;
        }
        println!("wrote {} scenes to {}", scenes.len(), args.out_dir.display());
        return Ok(Outcome::Clean);
    }

    let mut failed = 0;
    let files = svg_files(&args.import)?;
    for file in &files {
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("scene").to_string();
        let doc = std::fs::read(file).with_context(|| format!("reading {}", file.display()))?;
        let scene = match import_svg(&doc, &stem) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("{}: {e}", file.display());
                failed += 1;
                continue;
            }
        };
        write_scene(&args.out_dir, &scene, args)?;
        if let Some(dir) = &args.verify_outline {
            let path = dir.join(format!("{stem}.json"));
            match SceneAnnotation::load(&path) {
                Ok(outline) => {
                    let iou = union_iou(&scene.pieces, &outline.pieces, 0, args.resolution)?;
                    println!("{stem}: union_iou={iou:.6}");
                }
                Err(e) => eprintln!("{stem}: no outline ({e})"),
            }
        }
    }
    println!("imported {} of {} SVG files into {}", files.len() - failed, files.len(), args.out_dir.display());
    Ok(if failed > 0 { Outcome::PartialFailures } else { Outcome::Clean })
}

fn run(args: &EvalArgs, loop_cfg: LoopConfig) -> Result<Outcome> {
    let backend = backend_config(&args.backend, args.scoring.seed)?;
    let cfg = RunConfig {
        in_dir: args.dirs.in_dir.clone(),
        gt_dir: args.dirs.gt_dir.clone(),
        out_dir: args.dirs.out_dir.clone(),
        workers: workers(&args.scoring, &backend),
        settings: settings(&args.scoring, loop_cfg, model_label(&args.backend)),
        backend,
    };
    let summary = run_eval(&cfg)?;
    for g in &summary.groups {
        if let Some(s) = g.iou() {
            println!(
                "{} {} {} {}: IoU {:.4} ± {:.4} (n={}, parse failures {})",
                g.key.model,
                g.key.mode,
                g.key.split,
                g.key.piece_filter,
                s.mean,
                s.ci95_halfwidth,
                g.n,
                g.parse_failures
            );
        }
    }
    if let Some(m) = summary.mean_iou {
        println!("mean IoU {m:.4} over {} scenes", summary.scored);
    }
    for stem in &summary.unpaired {
        eprintln!("{stem}: image without ground truth, not scored");
    }
    if !summary.failed.is_empty() {
        eprintln!("{} scene(s) failed: {}", summary.failed.len(), summary.failed.join(", "));
        return Ok(Outcome::PartialFailures);
    }
    Ok(Outcome::Clean)
}

pub fn eval(args: &EvalArgs) -> Result<Outcome> {
    run(args, LoopConfig::single_shot(args.k, args.temperature, args.scoring.seed))
}

pub fn refine(args: &RefineArgs) -> Result<Outcome> {
    let e = &args.eval;
    run(
        e,
        LoopConfig {
            max_iters: args.loops,
            tau: args.tau,
            k: e.k,
            temperature: e.temperature,
            local_search: !args.no_local_search,
            seed: e.scoring.seed,
            parse_failure_budget: args.parse_failure_budget,
            text_only_exemplars: false,
        },
    )
}

pub fn ablate(args: &AblateArgs) -> Result<Outcome> {
    let scenes = load_scenes(&args.gt_dir, args.scoring.resolution)?;
    let mut backend = backend_config(&args.backend, args.scoring.seed)?;
    if let Some(target) = args.calibrate_to {
        let BackendConfig::NoisyOracle(base) = &mut backend else {
            return Err(config_err("--calibrate-to needs the oracle backend"));
        };
        let mut req = CalibrationRequest::new(&scenes, target, 0.03);
        req.mode = args.scoring.mode.into();
        req.base = *base;
        req.reward = reward_params(&args.scoring);
        req.workers = workers(&args.scoring, &BackendConfig::NoisyOracle(*base));
        let cal = calibrate_oracle(&req)?;
        println!("calibrated sigma_pos={:.5} (single-shot IoU {:.4})", cal.sigma_pos, cal.achieved_iou);
        base.sigma_pos = cal.sigma_pos;
    }
    let cells = match args.preset {
        Preset::Settings => AblationAxes::table3(),
        Preset::Loops => AblationAxes::table4(),
        Preset::Grid => AblationAxes {
            ks: args.k.clone(),
            loops: args.loops.clone(),
            taus: args.tau.clone(),
            temperatures: args.temperature.clone(),
            icl: args.icl.values(),
            refine: args.refine.values(),
            local_search: args.local_search.values(),
        }
        .cells(),
    };
    let grid = AblationGrid {
        cells,
        replications: args.replications,
        seed: args.scoring.seed,
        workers: workers(&args.scoring, &backend),
        settings: settings(&args.scoring, LoopConfig::default(), model_label(&args.backend)),
        backend,
    };
    let rows = run_ablation(&grid, &scenes)?;
    let csv = ablation_csv(&rows)?;
    let table = ablation_table(&rows.iter().map(|r| r.csv_fields().to_vec()).collect::<Vec<_>>());
    write_atomic(&args.out_dir.join("ablation.csv"), csv.as_bytes())?;
    write_atomic(&args.out_dir.join("ablation.txt"), table.as_bytes())?;
    let mut json = serde_json::to_string_pretty(&serde_json::json!({ "grid": grid, "rows": rows }))?;
    json.push('\n');
    write_atomic(&args.out_dir.join("ablation.json"), json.as_bytes())?;
    print!("{table}");
    let failed = rows.iter().filter(|r| r.error.is_some() || r.failed_scenes > 0).count();
    Ok(if failed > 0 { Outcome::PartialFailures } else { Outcome::Clean })
}

pub fn calibrate(args: &CalibrateArgs) -> Result<Outcome> {
    let scenes = load_scenes(&args.gt_dir, args.scoring.resolution)?;
    let mut req = CalibrationRequest::new(&scenes, args.target, args.tolerance);
    req.mode = args.scoring.mode.into();
    req.base = OracleConfig {
        seed: args.scoring.seed,
        ..Default::default()
    };
    req.sigma_bounds = (args.sigma_min, args.sigma_max);
    req.k = args.k;
    req.reward = reward_params(&args.scoring);
    req.workers = workers(&args.scoring, &BackendConfig::NoisyOracle(req.base));
    let cal = calibrate_oracle(&req)?;
    let mut json = serde_json::to_string_pretty(&cal)?;
    json.push('\n');
    if let Some(dir) = &args.out_dir {
        write_atomic(&dir.join("calibration.json"), json.as_bytes())?;
    }
    print!("{json}");
    Ok(Outcome::Clean)
}

pub fn report(args: &ReportArgs) -> Result<Outcome> {
    if args.inputs.is_empty() && args.ablation.is_empty() {
        bail!(config_err("nothing to report: pass metrics paths or --ablation files"));
    }
    let mut text = String::new();
    let mut csv = String::new();
    if !args.inputs.is_empty() {
        let mut records = Vec::new();
        for p in &args.inputs {
            records.extend(load_metrics(p)?);
        }
        text.push_str(&metrics_table(&records));
        csv.push_str(&metrics_csv(&records)?);
    }
    for p in &args.ablation {
        let rows = read_ablation_csv(p)?;
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&format!("{}\n", p.display()));
        text.push_str(&ablation_table(&rows));
    }
    if let Some(dir) = &args.out_dir {
        write_atomic(&dir.join("report.txt"), text.as_bytes())?;
        if !csv.is_empty() {
            write_atomic(&dir.join("report.csv"), csv.as_bytes())?;
        }
    }
    print!("{text}");
    Ok(Outcome::Clean)
}

pub fn dump_templates(args: &DumpArgs) -> Result<Outcome> {
    let templates: Vec<_> = PieceType::ALL.into_iter().map(template_of).collect();
    let mut json = serde_json::to_string_pretty(&templates)?;
    json.push('\n');
    match &args.out_dir {
        Some(dir) => write_atomic(&dir.join("templates.json"), json.as_bytes())?,
        None => print!("{json}"),
    }
    Ok(Outcome::Clean)
}
