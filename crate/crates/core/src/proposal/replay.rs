use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backend, PromptBundle, ProposalError};

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub scene_id: String,
    pub iteration: u32,
    pub raw_text: String,
}

/// Answers from a recorded trace, looked up by `(scene_id, iteration)`.
/// When a key repeats, the first record wins.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    responses: HashMap<(String, u32), String>,
    source: String,
}

impl ReplayBackend {
    pub fn from_records(records: impl IntoIterator<Item = TraceRecord>) -> Self {
        let mut responses = HashMap::new();
        for r in records {
            responses.entry((r.scene_id, r.iteration)).or_insert(r.raw_text);
        }
        ReplayBackend {
            responses,
            source: "memory".into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ProposalError> {
        let file = std::fs::File::open(path)?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: TraceRecord = serde_json::from_str(&line).map_err(|e| {
                ProposalError::InvalidConfig(format!("{}:{}: {e}", path.display(), n + 1))
            })?;
            records.push(r);
        }
        let mut b = Self::from_records(records);
        b.source = path.display().to_string();
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn identity(&self) -> String {
        format!("replay({})", self.source)
    }

    fn complete(&self, bundle: &PromptBundle<'_>) -> Result<String, ProposalError> {
        self.responses
            .get(&(bundle.scene_id.clone(), bundle.iteration))
            .cloned()
            .ok_or_else(|| ProposalError::ReplayMissing {
                scene_id: bundle.scene_id.clone(),
                iteration: bundle.iteration,
            })
    }
}
