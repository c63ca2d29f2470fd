use serde::{Deserialize, Serialize};

use crate::dataset::{PieceFields, TaskMode};
use crate::geometry::Point;
use crate::proposal::ParseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Threshold,
    Exhausted,
    ParseFailureBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationEntry {
    pub iteration: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fields: Option<Vec<PieceFields>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub parse_error: Option<ParseError>,
    #[serde(default)]
    pub clamped: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l2: Option<f64>,
    pub accepted_as_best: bool,
    pub feedback_hint_used: bool,
    /// Best reward after this iteration, if any candidate exists yet.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub best_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub best_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSearchEntry {
    pub piece: usize,
    pub step: f64,
    /// Move relative to the current center.
    pub offset: [f64; 2],
    pub candidate: Point,
    pub iou: f64,
    pub accepted: bool,
}

/// Per-scene log of one refinement run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineTrace {
    pub scene_id: String,
    pub mode: TaskMode,
    pub tau: f64,
    pub iterations: Vec<IterationEntry>,
    pub local_search: Vec<LocalSearchEntry>,
    /// Whether the local-search result replaced the loop's best.
    pub local_search_adopted: bool,
    pub stop_reason: StopReason,
    pub best_iou: f64,
    pub best_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// One JSONL line of a serialized trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TraceLine {
    Iteration(IterationEntry),
    LocalSearch(LocalSearchEntry),
    Summary {
        scene_id: String,
        mode: TaskMode,
        tau: f64,
        stop_reason: StopReason,
        best_iou: f64,
        best_reward: Option<f64>,
        local_search_adopted: bool,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        error: Option<String>,
    },
}

impl RefineTrace {
    pub(crate) fn new(scene_id: &str, mode: TaskMode, tau: f64) -> Self {
        RefineTrace {
            scene_id: scene_id.to_string(),
            mode,
            tau,
            iterations: Vec::new(),
            local_search: Vec::new(),
            local_search_adopted: false,
            stop_reason: StopReason::Exhausted,
            best_iou: 0.0,
            best_reward: None,
            error: None,
        }
    }

    /// Best-so-far reward after each iteration, skipping iterations before
    /// the first usable candidate.
    pub fn best_rewards(&self) -> Vec<f64> {
        self.iterations.iter().filter_map(|e| e.best_reward).collect()
    }

    /// Checks the structural guarantees of a finished trace.
    pub fn check_invariants(&self) -> Result<(), String> {
        let best = self.best_rewards();
        if let Some(w) = best.windows(2).find(|w| w[1] < w[0]) {
            return Err(format!("{}: best reward fell from {} to {}", self.scene_id, w[0], w[1]));
        }
        if let (Some(last), Some(fin)) = (best.last(), self.best_reward) {
            if fin < *last {
                return Err(format!("{}: final reward {fin} below loop best {last}", self.scene_id));
            }
        }
        let loop_best_iou = self.iterations.last().and_then(|e| e.best_iou).unwrap_or(0.0);
        if self.error.is_none() && (self.stop_reason == StopReason::Threshold) != (loop_best_iou >= self.tau) {
            return Err(format!(
                "{}: stop reason {:?} with best iou {loop_best_iou} and tau {}",
                self.scene_id, self.stop_reason, self.tau
            ));
        }
        let accepted: Vec<f64> = self.local_search.iter().filter(|e| e.accepted).map(|e| e.iou).collect();
        if accepted.windows(2).any(|w| w[1] <= w[0]) {
            return Err(format!("{}: accepted local move did not raise iou", self.scene_id));
        }
        Ok(())
    }

    pub fn to_lines(&self) -> Vec<TraceLine> {
        let mut out: Vec<TraceLine> = self.iterations.iter().cloned().map(TraceLine::Iteration).collect();
        out.extend(self.local_search.iter().cloned().map(TraceLine::LocalSearch));
        out.push(TraceLine::Summary {
            scene_id: self.scene_id.clone(),
            mode: self.mode,
            tau: self.tau,
            stop_reason: self.stop_reason,
            best_iou: self.best_iou,
            best_reward: self.best_reward,
            local_search_adopted: self.local_search_adopted,
            error: self.error.clone(),
        });
        out
    }

    pub fn to_jsonl(&self) -> Result<String, serde_json::Error> {
        let mut s = String::new();
        for line in self.to_lines() {
            s.push_str(&serde_json::to_string(&line)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        use serde::de::Error;
        let mut iterations = Vec::new();
        let mut local_search = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<TraceLine>(line)? {
                TraceLine::Iteration(e) => iterations.push(e),
                TraceLine::LocalSearch(e) => local_search.push(e),
                TraceLine::Summary {
                    scene_id,
                    mode,
                    tau,
                    stop_reason,
                    best_iou,
                    best_reward,
                    local_search_adopted,
                    error,
                } => {
                    return Ok(RefineTrace {
                        scene_id,
                        mode,
                        tau,
                        iterations,
                        local_search,
                        local_search_adopted,
                        stop_reason,
                        best_iou,
                        best_reward,
                        error,
                    })
                }
            }
        }
        Err(serde_json::Error::custom("trace has no summary line"))
    }
}
