use std::sync::{Arc, OnceLock};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::parse::format_answer;
use super::ProposalError;
use crate::dataset::{render_placements, Field, PieceFields, SceneAnnotation, TaskMode, TaskSpec};
use crate::geometry::Placement;
use crate::rng::keyed_rng;

/// Bumped whenever the instruction wording changes.
pub const PROMPT_VERSION: &str = "tangram-prompt-v1";

/// A silhouette PNG, either supplied or rendered on first use.
#[derive(Debug)]
pub struct SceneImage {
    source: Option<(Vec<Placement>, u32)>,
    png: OnceLock<Result<Arc<[u8]>, String>>,
}

impl SceneImage {
    pub fn from_png(bytes: Vec<u8>) -> Self {
        let png = OnceLock::new();
        let _ = png.set(Ok(Arc::from(bytes)));
        SceneImage { source: None, png }
    }

    pub fn from_scene(scene: &SceneAnnotation, resolution: u32) -> Self {
        SceneImage {
            source: Some((scene.pieces.clone(), resolution)),
            png: OnceLock::new(),
        }
    }

    pub fn png(&self) -> Result<Arc<[u8]>, ProposalError> {
        self.png
            .get_or_init(|| {
                let (pieces, res) = self.source.as_ref().expect("unset image has a source");
                render_placements(pieces, *res).map(Arc::from).map_err(|e| e.to_string())
            })
            .clone()
            .map_err(ProposalError::BadResponse)
    }
}

#[derive(Debug)]
pub struct Exemplar {
    pub scene: SceneAnnotation,
    pub image: SceneImage,
}

/// Solved scenes available for in-context examples.
#[derive(Debug, Default)]
pub struct ExemplarPool {
    entries: Vec<Exemplar>,
}

impl ExemplarPool {
    pub fn new(scenes: &[SceneAnnotation], resolution: u32) -> Self {
        ExemplarPool {
            entries: scenes
                .iter()
                .map(|s| Exemplar {
                    scene: s.clone(),
                    image: SceneImage::from_scene(s, resolution),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries usable for `task`: same piece count, never the task's scene.
    pub fn eligible<'a>(&'a self, task: &'a TaskSpec) -> impl Iterator<Item = &'a Exemplar> + 'a {
        self.entries
            .iter()
            .filter(move |e| e.scene.pieces.len() == task.piece_count() && e.scene.scene_id != task.scene_id)
    }
}

#[derive(Debug, Clone)]
pub struct ExemplarRef<'a> {
    pub scene_id: &'a str,
    pub image: &'a SceneImage,
    pub answer_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub k: usize,
    pub temperature: f64,
    pub seed: u64,
    /// Send exemplar answers without their images.
    #[serde(default)]
    pub text_only_exemplars: bool,
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions {
            k: 15,
            temperature: 0.0,
            seed: 0,
            text_only_exemplars: false,
        }
    }
}

/// Everything a backend sees for one query.
#[derive(Debug, Clone)]
pub struct PromptBundle<'a> {
    pub scene_id: String,
    pub iteration: u32,
    pub mode: TaskMode,
    pub piece_count: usize,
    pub system_text: String,
    /// Known attributes of the pieces.
    pub task_text: String,
    pub exemplars: Vec<ExemplarRef<'a>>,
    pub target_image: &'a SceneImage,
    pub feedback_hint: Option<String>,
    pub temperature: f64,
    pub text_only_exemplars: bool,
}

pub fn feedback_hint(prev_best_iou: f64) -> String {
    format!("previous IoU={prev_best_iou:.2}. Try a small correction (\u{394}x, \u{394}y).")
}

fn field_list(mode: TaskMode) -> String {
    mode.target_fields()
        .iter()
        .map(|f| match f {
            Field::Pos => "\"pos\": [x, y]",
            Field::Angle => "\"angle\": degrees",
            Field::Size => "\"size\": scale",
        })
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn system_text(mode: TaskMode) -> String {
    let shape = if mode.piece_count() == 1 {
        format!("Answer with one JSON object {{{}}}.", field_list(mode))
    } else {
        format!(
            "Answer with {{\"pieces\": [{{{f}}}, {{{f}}}]}} listing the pieces in the given order.",
            f = field_list(mode)
        )
    };
    format!(
        "You estimate the pose of Tangram pieces from a black-on-white silhouette. \
         The canvas is the square [0,10]x[0,10] with the origin at the top-left corner, \
         x growing to the right and y growing downward. \"pos\" is the piece centroid in \
         canvas units, \"angle\" is the rotation in degrees in [0,360) and \"size\" multiplies \
         the canonical piece. {shape} Output only the minimal JSON with these fields and nothing else."
    )
}

pub fn task_text(task: &TaskSpec) -> String {
    let pieces: Vec<String> = task
        .fixed_fields
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut s = format!("{}) {}, flip={}", i + 1, p.piece_type, p.flip);
            if let Some(pos) = p.fields.pos {
                s.push_str(&format!(", pos=[{:.2}, {:.2}]", pos.x, pos.y));
            }
            if let Some(a) = p.fields.angle {
                s.push_str(&format!(", angle={a:.2}"));
            }
            if let Some(z) = p.fields.size {
                s.push_str(&format!(", size={z:.2}"));
            }
            s
        })
        .collect();
    let wanted: Vec<&str> = task.target_fields.iter().map(|f| f.as_str()).collect();
    format!("Pieces: {}. Predict: {}.", pieces.join("; "), wanted.join(", "))
}

/// Assembles the prompt for `iteration` (1-based). Exemplars are a seeded
/// sample of `opts.k` eligible pool entries; from the second iteration on a
/// feedback hint quotes `prev_best_iou`.
pub fn build_prompt<'a>(
    task: &'a TaskSpec,
    pool: &'a ExemplarPool,
    target_image: &'a SceneImage,
    iteration: u32,
    prev_best_iou: f64,
    opts: &PromptOptions,
) -> Result<PromptBundle<'a>, ProposalError> {
    let eligible: Vec<&Exemplar> = pool.eligible(task).collect();
    if opts.k > eligible.len() {
        return Err(ProposalError::TooFewExemplars {
            k: opts.k,
            available: eligible.len(),
        });
    }
    let mut rng = keyed_rng(opts.seed, &format!("icl/{}", task.scene_id), iteration as u64);
    let exemplars = sample(&mut rng, eligible.len(), opts.k)
        .into_iter()
        .map(|i| {
            let e = eligible[i];
            let answer: Vec<PieceFields> = e
                .scene
                .pieces
                .iter()
                .map(|p| PieceFields::from_placement(p, task.mode))
                .collect();
            ExemplarRef {
                scene_id: &e.scene.scene_id,
                image: &e.image,
                answer_text: format_answer(&answer, 2),
            }
        })
        .collect();
    Ok(PromptBundle {
        scene_id: task.scene_id.clone(),
        iteration,
        mode: task.mode,
        piece_count: task.piece_count(),
        system_text: system_text(task.mode),
        task_text: task_text(task),
        exemplars,
        target_image,
        feedback_hint: (iteration >= 2).then(|| feedback_hint(prev_best_iou)),
        temperature: opts.temperature,
        text_only_exemplars: opts.text_only_exemplars,
    })
}
