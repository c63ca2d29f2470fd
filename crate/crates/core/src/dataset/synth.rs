use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::annotation::{SceneAnnotation, Source, Split};
use super::DatasetError;
use crate::geometry::{PieceType, Point, Placement};
use crate::rng::keyed_rng;

/// Rejection-sampling budget per scene.
pub const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    pub split: Split,
    /// Allowed piece kinds; empty means all seven.
    pub piece_filter: Vec<PieceType>,
    pub seed: u64,
    pub pos_range: (f64, f64),
    pub size_range: (f64, f64),
    pub id_prefix: String,
}

impl SynthConfig {
    pub fn new(count: usize, split: Split, seed: u64) -> Self {
        SynthConfig {
            count,
            split,
            piece_filter: Vec::new(),
            seed,
            pos_range: (2.0, 8.0),
            size_range: (0.8, 1.8),
            id_prefix: match split {
                Split::Single => "single-".to_string(),
                Split::TwoPiece => "two-".to_string(),
            },
        }
    }

    pub fn with_filter(mut self, filter: &[PieceType]) -> Self {
        self.piece_filter = filter.to_vec();
        self
    }

    fn kinds(&self) -> Vec<PieceType> {
        if self.piece_filter.is_empty() {
            PieceType::ALL.to_vec()
        } else {
            let mut k = self.piece_filter.clone();
            k.sort();
            k.dedup();
            k
        }
    }
}

fn sample_placement<R: Rng>(rng: &mut R, cfg: &SynthConfig, piece_type: PieceType) -> Placement {
    let (lo, hi) = cfg.pos_range;
    let (slo, shi) = cfg.size_range;
    let x = rng.gen_range(lo..hi);
    let y = rng.gen_range(lo..hi);
    let angle = rng.gen_range(0.0..360.0);
    let size = rng.gen_range(slo..shi);
    let flip = rng.gen_bool(0.5);
    Placement::new(piece_type, Point::new(x, y), angle, size, flip)
}

/// Seeded synthetic scenes. Each scene draws from its own stream, so scene
/// `i` does not depend on `count`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<SceneAnnotation>, DatasetError> {
    if cfg.count == 0 {
        return Err(DatasetError::InvalidConfig("count must be at least 1".into()));
    }
    let kinds = cfg.kinds();
    let n = cfg.split.piece_count();
    let mut scenes = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let scene_id = format!("{}{i:04}", cfg.id_prefix);
        let mut rng = keyed_rng(cfg.seed, cfg.split.as_str(), i as u64);
        let mut found = None;
        for _ in 0..MAX_ATTEMPTS {
            // Distinct kinds when the filter allows it; a real set has one of each.
            let types: Vec<PieceType> = if kinds.len() >= n {
                kinds.choose_multiple(&mut rng, n).copied().collect()
            } else {
                (0..n).map(|_| *kinds.choose(&mut rng).unwrap()).collect()
            };
            let pieces: Vec<Placement> = types
                .into_iter()
                .map(|t| sample_placement(&mut rng, cfg, t))
                .collect();
            let scene = SceneAnnotation::new(scene_id.clone(), pieces, Source::Synthetic)?;
            if scene.validate().is_ok() {
                found = Some(scene);
                break;
            }
        }
        match found {
            Some(s) => scenes.push(s),
            None => {
                return Err(DatasetError::SamplingExhausted {
                    scene: scene_id,
                    attempts: MAX_ATTEMPTS,
                })
            }
        }
    }
    Ok(scenes)
}
