use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, PromptBundle, ProposalError};
use crate::dataset::{Field, SceneAnnotation};
use crate::rng::keyed_rng;

/// Noise model of the simulated proposer.
///
/// Answers are the ground truth plus Gaussian noise and a fixed bias. When a
/// feedback hint is present the positional scale shrinks by `gamma` per
/// iteration: `sigma_pos * gamma^(iteration - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Canvas units, per coordinate.
    pub sigma_pos: f64,
    /// Degrees.
    pub sigma_angle: f64,
    /// Relative to the true size.
    pub sigma_size: f64,
    #[serde(default)]
    pub bias_pos: [f64; 2],
    #[serde(default)]
    pub bias_angle: f64,
    #[serde(default)]
    pub bias_size: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            sigma_pos: 0.0,
            sigma_angle: 0.0,
            sigma_size: 0.0,
            bias_pos: [0.0; 2],
            bias_angle: 0.0,
            bias_size: 0.0,
            gamma: 0.7,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), ProposalError> {
        let sigmas = [self.sigma_pos, self.sigma_angle, self.sigma_size];
        if sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(ProposalError::InvalidConfig("oracle sigmas must be finite and >= 0".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(ProposalError::InvalidConfig(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        Ok(())
    }

    /// Positional noise scale for a query.
    pub fn pos_scale(&self, iteration: u32, hinted: bool) -> f64 {
        if hinted {
            self.sigma_pos * self.gamma.powi(iteration.saturating_sub(1) as i32)
        } else {
            self.sigma_pos
        }
    }
}

/// Simulated proposer that perturbs known ground truth. Noise is keyed by
/// `(seed, scene_id, iteration)`, so answers do not depend on call order.
#[derive(Debug)]
pub struct OracleBackend {
    cfg: OracleConfig,
    scenes: HashMap<String, SceneAnnotation>,
}

impl OracleBackend {
    pub fn new(cfg: OracleConfig, scenes: &[SceneAnnotation]) -> Result<Self, ProposalError> {
        cfg.validate()?;
        Ok(OracleBackend {
            cfg,
            scenes: scenes.iter().map(|s| (s.scene_id.clone(), s.clone())).collect(),
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }
}

impl Backend for OracleBackend {
    fn identity(&self) -> String {
        format!(
            "oracle(sigma_pos={}, sigma_angle={}, sigma_size={}, gamma={})",
            self.cfg.sigma_pos, self.cfg.sigma_angle, self.cfg.sigma_size, self.cfg.gamma
        )
    }

    fn complete(&self, bundle: &PromptBundle<'_>) -> Result<String, ProposalError> {
        let gt = self
            .scenes
            .get(&bundle.scene_id)
            .ok_or_else(|| ProposalError::UnknownScene(bundle.scene_id.clone()))?;
        let c = &self.cfg;
        let scale = c.pos_scale(bundle.iteration, bundle.feedback_hint.is_some());
        let mut rng = keyed_rng(c.seed, &format!("oracle/{}", bundle.scene_id), bundle.iteration as u64);
        let pieces: Vec<Value> = gt
            .pieces
            .iter()
            .map(|p| {
                // Fixed draw order keeps streams aligned across modes.
                let [nx, ny, na, ns]: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let mut m = serde_json::Map::new();
                if bundle.mode.predicts(Field::Pos) {
                    let x = p.pos.x + c.bias_pos[0] + scale * nx;
                    let y = p.pos.y + c.bias_pos[1] + scale * ny;
                    m.insert("pos".into(), json!([x, y]));
                }
                if bundle.mode.predicts(Field::Angle) {
                    m.insert("angle".into(), json!(p.angle + c.bias_angle + c.sigma_angle * na));
                }
                if bundle.mode.predicts(Field::Size) {
                    m.insert("size".into(), json!(p.size * (1.0 + c.bias_size + c.sigma_size * ns)));
                }
                Value::Object(m)
            })
            .collect();
        let answer = match <[Value; 1]>::try_from(pieces) {
            Ok([one]) => one,
            Err(many) => json!({ "pieces": many }),
        };
        Ok(serde_json::to_string(&answer)?)
    }
}
