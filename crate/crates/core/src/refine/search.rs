use crate::dataset::{PieceFields, SceneAnnotation, TaskSpec};
use crate::geometry::{Placement, Point, CANVAS_SIDE};

use super::{LocalSearchEntry, RefineError, RewardParams, Scorer};

pub const LOCAL_SEARCH_STEPS: [f64; 3] = [0.6, 0.3, 0.15];

/// The eight grid directions in row-major order.
pub const NEIGHBORS: [(f64, f64); 8] = [
    (-1.0, -1.0),
    (-1.0, 0.0),
    (-1.0, 1.0),
    (0.0, -1.0),
    (0.0, 1.0),
    (1.0, -1.0),
    (1.0, 0.0),
    (1.0, 1.0),
];

fn in_canvas(p: Point) -> bool {
    (0.0..=CANVAS_SIDE).contains(&p.x) && (0.0..=CANVAS_SIDE).contains(&p.y)
}

/// First-improvement hill climb on one piece's position at step `h`,
/// repeated until a full sweep finds nothing better.
fn climb(
    scorer: &Scorer<'_>,
    placed: &mut [Placement],
    piece: usize,
    h: f64,
    iou: &mut f64,
    log: &mut Vec<LocalSearchEntry>,
) -> Result<(), RefineError> {
    'sweep: loop {
        let center = placed[piece].pos;
        for (a, b) in NEIGHBORS {
            let cand = Point::new(center.x + a * h, center.y + b * h);
            if !in_canvas(cand) {
                continue;
            }
            placed[piece].pos = cand;
            let v = scorer.iou(placed)?;
            let accepted = v > *iou;
            log.push(LocalSearchEntry {
                piece,
                step: h,
                offset: [a * h, b * h],
                candidate: cand,
                iou: v,
                accepted,
            });
            if accepted {
                *iou = v;
                continue 'sweep;
            }
        }
        placed[piece].pos = center;
        return Ok(());
    }
}

/// Grid search over positions with a prepared scorer. Each scale climbs
/// piece 1 to a local optimum, then piece 2. Angle and size are untouched.
pub fn local_search_with(
    scorer: &Scorer<'_>,
    start: &[PieceFields],
    log: &mut Vec<LocalSearchEntry>,
) -> Result<(Vec<PieceFields>, f64), RefineError> {
    let mut placed = scorer.place(start)?;
    let mut iou = scorer.iou(&placed)?;
    if !scorer.task.mode.involves_position() {
        return Ok((start.to_vec(), iou));
    }
    for h in LOCAL_SEARCH_STEPS {
        for piece in 0..placed.len() {
            climb(scorer, &mut placed, piece, h, &mut iou, log)?;
        }
    }
    let fields = start
        .iter()
        .zip(&placed)
        .map(|(f, p)| PieceFields { pos: Some(p.pos), ..*f })
        .collect();
    Ok((fields, iou))
}

/// Positional refinement of `start`; returns the final fields and IoU.
pub fn local_search(
    start: &[PieceFields],
    gt: &SceneAnnotation,
    task: &TaskSpec,
    params: &RewardParams,
) -> Result<(Vec<PieceFields>, f64), RefineError> {
    let scorer = Scorer::new(task, gt, *params)?;
    local_search_with(&scorer, start, &mut Vec::new())
}
