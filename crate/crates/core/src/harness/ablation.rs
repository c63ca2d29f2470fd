use serde::{Deserialize, Serialize};

use super::eval::{inputs_from_scenes, run_scenes, EvalSettings};
use super::HarnessError;
use crate::dataset::SceneAnnotation;
use crate::metrics::Stat;
use crate::proposal::{BackendConfig, ExemplarPool};
use crate::refine::LoopConfig;

pub const ABLATION_COLUMNS: [&str; 8] = [
    "Setting Number",
    "Description",
    "ICL (k)",
    "Loop",
    "Threshold",
    "Temp.",
    "IoU (final)",
    "Replications",
];

/// One configuration of the sweep. `k = None` means no exemplars and
/// `loops = None` means a single proposal without refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub setting: u32,
    pub description: String,
    pub k: Option<usize>,
    pub loops: Option<u32>,
    pub tau: Option<f64>,
    pub temperature: f64,
    pub local_search: bool,
}

impl AblationCell {
    pub fn new(setting: u32, k: Option<usize>, loops: Option<u32>, tau: Option<f64>, temperature: f64) -> Self {
        let mut cell = AblationCell {
            setting,
            description: String::new(),
            k,
            loops,
            tau: loops.and(tau),
            temperature,
            local_search: loops.is_some(),
        };
        cell.description = cell.describe();
        cell
    }

    fn describe(&self) -> String {
        let mut d = String::from("VLM");
        match (self.k.is_some(), self.loops.is_some()) {
            (false, false) => d.push_str(" only"),
            (icl, refine) => {
                if icl {
                    d.push_str(" + ICL");
                }
                if refine {
                    d.push_str(" + Loop");
                }
            }
        }
        if self.temperature > 0.0 {
            d.push_str(" + temp");
        }
        if self.loops.is_some() && !self.local_search {
            d.push_str(" (no local search)");
        }
        d
    }

    /// Loop configuration for this cell; threshold falls back to `base`.
    pub fn loop_config(&self, base: &LoopConfig, seed: u64) -> LoopConfig {
        let k = self.k.unwrap_or(0);
        match self.loops {
            None => LoopConfig::single_shot(k, self.temperature, seed),
            Some(t) => LoopConfig {
                max_iters: t,
                tau: self.tau.unwrap_or(base.tau),
                k,
                temperature: self.temperature,
                local_search: self.local_search,
                seed,
                ..*base
            },
        }
    }

    fn same_config(&self, other: &AblationCell) -> bool {
        self.k == other.k
            && self.loops == other.loops
            && self.tau.map(f64::to_bits) == other.tau.map(f64::to_bits)
            && self.temperature.to_bits() == other.temperature.to_bits()
            && self.local_search == other.local_search
    }
}

/// Axes whose cartesian product forms a grid. With a toggle off, the
/// axes it governs collapse to "n/a".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationAxes {
    pub ks: Vec<usize>,
    pub loops: Vec<u32>,
    pub taus: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub icl: Vec<bool>,
    pub refine: Vec<bool>,
    pub local_search: Vec<bool>,
}

impl Default for AblationAxes {
    fn default() -> Self {
        AblationAxes {
            ks: vec![15],
            loops: vec![6],
            taus: vec![0.9],
            temperatures: vec![0.0],
            icl: vec![true],
            refine: vec![true],
            local_search: vec![true],
        }
    }
}

impl AblationAxes {
    /// Enumerates cells in axis order (icl, refine, k, loops, tau,
    /// temperature, local search), drops duplicates and numbers from 1.
    pub fn cells(&self) -> Vec<AblationCell> {
        let mut out: Vec<AblationCell> = Vec::new();
        for &icl in &self.icl {
            for &refine in &self.refine {
                let ks: Vec<Option<usize>> = if icl { self.ks.iter().copied().map(Some).collect() } else { vec![None] };
                let loops: Vec<Option<u32>> = if refine { self.loops.iter().copied().map(Some).collect() } else { vec![None] };
                let taus: Vec<Option<f64>> = if refine { self.taus.iter().copied().map(Some).collect() } else { vec![None] };
                let searches: &[bool] = if refine { &self.local_search } else { &[false] };
                for &k in &ks {
                    for &t in &loops {
                        for &tau in &taus {
                            for &temp in &self.temperatures {
                                for &ls in searches {
                                    let mut cell = AblationCell::new(0, k, t, tau, temp);
                                    cell.local_search = ls;
                                    cell.description = cell.describe();
                                    if !out.iter().any(|c| c.same_config(&cell)) {
                                        cell.setting = out.len() as u32 + 1;
                                        out.push(cell);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Settings 1 to 6 of the medium-triangle study.
    pub fn table3() -> Vec<AblationCell> {
        vec![
            AblationCell::new(1, Some(15), Some(6), Some(0.9), 0.0),
            AblationCell::new(2, None, Some(6), Some(0.9), 0.0),
            AblationCell::new(3, Some(20), Some(6), Some(0.9), 0.0),
            AblationCell::new(4, Some(15), None, None, 0.0),
            AblationCell::new(5, Some(15), None, None, 0.5),
            AblationCell::new(6, None, None, None, 0.0),
        ]
    }

    /// Loop-count and threshold study: setting 1 plus settings 7 to 17.
    pub fn table4() -> Vec<AblationCell> {
        let rows: [(u32, u32, f64); 12] = [
            (1, 6, 0.9),
            (7, 4, 0.9),
            (8, 2, 0.9),
            (9, 6, 0.5),
            (10, 4, 0.5),
            (11, 2, 0.5),
            (12, 6, 0.8),
            (13, 6, 0.7),
            (14, 6, 0.6),
            (15, 8, 0.9),
            (16, 10, 0.9),
            (17, 12, 0.9),
        ];
        rows.iter()
            .map(|&(s, t, tau)| AblationCell::new(s, Some(15), Some(t), Some(tau), 0.0))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub cells: Vec<AblationCell>,
    pub replications: usize,
    /// Replication `r` uses seed `seed + r` for both exemplar sampling and
    /// oracle noise, in every cell.
    pub seed: u64,
    pub backend: BackendConfig,
    /// Mode, reward and model label; the loop part is a template that
    /// cells override.
    pub settings: EvalSettings,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub replications: usize,
    /// Pooled over every scene of every replication.
    pub iou: Option<Stat>,
    pub replication_means: Vec<f64>,
    pub failed_scenes: usize,
    pub error: Option<String>,
}

impl AblationRow {
    pub fn mean_iou(&self) -> Option<f64> {
        self.iou.map(|s| s.mean)
    }

    /// Cells in the column order of [`ABLATION_COLUMNS`].
    pub fn csv_fields(&self) -> [String; 8] {
        let na = || "n/a".to_string();
        let c = &self.cell;
        [
            c.setting.to_string(),
            c.description.clone(),
            c.k.map_or_else(na, |k| k.to_string()),
            c.loops.map_or_else(na, |t| t.to_string()),
            c.tau.map_or_else(na, |t| t.to_string()),
            c.temperature.to_string(),
            match (&self.error, self.mean_iou()) {
                (None, Some(m)) => format!("{m:.4}"),
                _ => "failed".into(),
            },
            self.replications.to_string(),
        ]
    }
}

fn reseeded(backend: &BackendConfig, seed: u64) -> BackendConfig {
    match backend {
        BackendConfig::NoisyOracle(o) => BackendConfig::NoisyOracle(crate::proposal::OracleConfig { seed, ..o.clone() }),
        other => other.clone(),
    }
}

fn run_cell(
    grid: &AblationGrid,
    cell: &AblationCell,
    scenes: &[SceneAnnotation],
    pool: &ExemplarPool,
) -> Result<(Vec<f64>, Vec<f64>, usize), HarnessError> {
    let inputs = inputs_from_scenes(scenes, grid.settings.reward.resolution);
    let (mut all, mut means, mut failed) = (Vec::new(), Vec::new(), 0);
    for r in 0..grid.replications {
        let seed = grid.seed.wrapping_add(r as u64);
        let backend = reseeded(&grid.backend, seed).build(scenes)?;
        let settings = EvalSettings {
            loop_cfg: cell.loop_config(&grid.settings.loop_cfg, seed),
            ..grid.settings.clone()
        };
        let results = run_scenes(&inputs, backend.as_ref(), pool, &settings, grid.workers)?;
        let ious: Vec<f64> = results.iter().filter_map(|r| r.record.as_ref()).map(|r| r.iou).collect();
        failed += results
            .iter()
            .filter(|r| r.record.as_ref().map_or(true, |x| x.error.is_some()))
            .count();
        if let Some(s) = Stat::from_values(&ious) {
            means.push(s.mean);
        }
        all.extend(ious);
    }
    Ok((all, means, failed))
}

/// Runs every cell over the same scenes with paired seeds. Rows come back
/// ordered by setting number; a failing cell is marked, not fatal.
pub fn run_ablation(grid: &AblationGrid, scenes: &[SceneAnnotation]) -> Result<Vec<AblationRow>, HarnessError> {
    if grid.cells.is_empty() || grid.replications == 0 {
        return Err(HarnessError::InvalidConfig("ablation grid needs at least one cell and one replication".into()));
    }
    if scenes.is_empty() {
        return Err(HarnessError::InvalidConfig("ablation split is empty".into()));
    }
    grid.backend.validate()?;
    let pool = ExemplarPool::new(scenes, grid.settings.reward.resolution);
    let mut cells = grid.cells.clone();
    cells.sort_by_key(|c| c.setting);
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let row = match run_cell(grid, &cell, scenes, &pool) {
            Ok((all, means, failed)) => AblationRow {
                replications: grid.replications,
                iou: Stat::from_values(&all),
                replication_means: means,
                failed_scenes: failed,
                error: None,
                cell,
            },
            Err(e) => {
                log::warn!("setting {}: {e}", cell.setting);
                AblationRow {
                    replications: grid.replications,
                    iou: None,
                    replication_means: Vec::new(),
                    failed_scenes: 0,
                    error: Some(e.to_string()),
                    cell,
                }
            }
        };
        log::info!("setting {} ({}): {:?}", row.cell.setting, row.cell.description, row.mean_iou());
        rows.push(row);
    }
    Ok(rows)
}

/// Serializes rows as CSV with [`ABLATION_COLUMNS`] as the header.
pub fn ablation_csv(rows: &[AblationRow]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ABLATION_COLUMNS)?;
    for row in rows {
        w.write_record(row.csv_fields())?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, Split, SynthConfig, TaskMode};
    use crate::geometry::PieceType;
    use crate::proposal::OracleConfig;
    use crate::refine::RewardParams;

    fn grid(cells: Vec<AblationCell>, sigma: f64) -> AblationGrid {
        AblationGrid {
            cells,
            replications: 2,
            seed: 4,
            backend: BackendConfig::NoisyOracle(OracleConfig { sigma_pos: sigma, ..Default::default() }),
            settings: EvalSettings {
                mode: TaskMode::Pos,
                loop_cfg: LoopConfig::default(),
                reward: RewardParams { resolution: 128, ..Default::default() },
                symmetry_aware: true,
                model: "oracle".into(),
            },
            workers: 2,
        }
    }

    fn scenes() -> Vec<SceneAnnotation> {
        generate_synthetic(&SynthConfig::new(8, Split::Single, 2).with_filter(&[PieceType::MediumTriangle])).unwrap()
    }

    #[test]
    fn presets_match_the_published_layout() {
        let t3 = AblationAxes::table3();
        assert_eq!(t3.iter().map(|c| c.setting).collect::<Vec<_>>(), [1, 2, 3, 4, 5, 6]);
        assert_eq!(t3[0].description, "VLM + ICL + Loop");
        assert_eq!(t3[1].description, "VLM + Loop");
        assert_eq!(t3[4].description, "VLM + ICL + temp");
        assert_eq!(t3[5].description, "VLM only");
        assert_eq!(t3[3].tau, None);
        let t4 = AblationAxes::table4();
        assert_eq!(t4.len(), 12);
        assert_eq!(t4.last().unwrap().loops, Some(12));
        assert!(t4.iter().all(|c| c.k == Some(15)));
    }

    #[test]
    fn cartesian_product_is_ordered_and_deduplicated() {
        let axes = AblationAxes {
            ks: vec![15, 20],
            loops: vec![2, 6],
            taus: vec![0.5, 0.9],
            icl: vec![true, false],
            refine: vec![true, false],
            ..Default::default()
        };
        let cells = axes.cells();
        // icl on: 2 ks x (2 loops x 2 taus + 1 single shot); icl off: 4 + 1.
        assert_eq!(cells.len(), 2 * 5 + 5);
        assert_eq!(cells.iter().map(|c| c.setting).collect::<Vec<_>>(), (1..=15).collect::<Vec<_>>());
        assert_eq!(cells[0].k, Some(15));
        assert_eq!(cells[0].loops, Some(2));
        assert_eq!(cells[0].tau, Some(0.5));
        assert_eq!(axes.cells(), cells);
        let single = cells.iter().filter(|c| c.loops.is_none()).count();
        assert_eq!(single, 3);
    }

    #[test]
    fn single_shot_cells_ignore_loop_fields() {
        let cell = AblationCell::new(6, None, None, Some(0.9), 0.0);
        assert_eq!(cell.tau, None);
        let cfg = cell.loop_config(&LoopConfig::default(), 9);
        assert_eq!(cfg, LoopConfig::single_shot(0, 0.0, 9));
    }

    #[test]
    fn exact_oracle_scores_one_everywhere() {
        let rows = run_ablation(&grid(AblationAxes::table3(), 0.0), &scenes()).unwrap();
        assert_eq!(rows.len(), 6);
        for row in &rows {
            assert_eq!(row.mean_iou(), Some(1.0), "{:?}", row.cell);
            assert_eq!(row.replication_means.len(), 2);
        }
    }

    #[test]
    fn too_large_window_is_clamped_not_failed() {
        let cells = vec![AblationCell::new(1, Some(50), Some(2), Some(0.9), 0.0)];
        let rows = run_ablation(&grid(cells, 0.3), &scenes()).unwrap();
        assert!(rows[0].error.is_none());
        assert_eq!(rows[0].failed_scenes, 0);
    }

    #[test]
    fn invalid_cell_is_marked() {
        let cells = vec![
            AblationCell::new(2, Some(1), Some(0), Some(0.9), 0.0),
            AblationCell::new(1, Some(1), Some(2), Some(0.9), 0.0),
        ];
        let rows = run_ablation(&grid(cells, 0.3), &scenes()).unwrap();
        assert_eq!(rows[0].cell.setting, 1);
        assert!(rows[0].error.is_none());
        assert!(rows[1].error.is_some());
        assert_eq!(rows[1].csv_fields()[6], "failed");
    }

    #[test]
    fn csv_has_the_fixed_header_and_na_cells() {
        let row = AblationRow {
            cell: AblationAxes::table3().remove(5),
            replications: 3,
            iou: Stat::from_values(&[0.65]),
            replication_means: vec![0.65],
            failed_scenes: 0,
            error: None,
        };
        let text = ablation_csv(&[row]).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "Setting Number,Description,ICL (k),Loop,Threshold,Temp.,IoU (final),Replications"
        );
        assert_eq!(lines.next().unwrap(), "6,VLM only,n/a,n/a,n/a,0,0.6500,3");
    }
}
