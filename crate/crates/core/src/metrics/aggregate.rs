use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricRecord;
use crate::dataset::TaskMode;

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Mean with a normal-approximation 95% half-width `1.96 s / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: f64,
    pub ci95_halfwidth: f64,
}

impl Stat {
    pub fn from_values(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mut s = CompensatedSum::default();
        values.iter().for_each(|&v| s.add(v));
        let mean = s.value() / n as f64;
        if n == 1 {
            return Some(Stat {
                n,
                mean,
                ci95_halfwidth: 0.0,
            });
        }
        let mut ss = CompensatedSum::default();
        values.iter().for_each(|&v| ss.add((v - mean) * (v - mean)));
        let sd = (ss.value() / (n - 1) as f64).max(0.0).sqrt();
        Some(Stat {
            n,
            mean,
            ci95_halfwidth: 1.96 * sd / (n as f64).sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub model: String,
    pub mode: TaskMode,
    pub split: String,
    pub piece_filter: String,
}

impl GroupKey {
    pub fn of(r: &MetricRecord) -> Self {
        GroupKey {
            model: r.model.clone(),
            mode: r.mode,
            split: r.split.clone(),
            piece_filter: r.piece_filter.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub key: GroupKey,
    pub n: usize,
    pub parse_failures: usize,
    pub scene_errors: usize,
    /// Metric name to statistic; only metrics present in the group appear.
    pub metrics: BTreeMap<String, Stat>,
}

impl Aggregate {
    pub fn iou(&self) -> Option<&Stat> {
        self.metrics.get("iou")
    }
}

/// Groups records by `group_key` and summarizes every metric. Parse
/// failures and scene errors stay in the IoU mean as zeros.
pub fn aggregate<F>(records: &[MetricRecord], group_key: F) -> Vec<Aggregate>
where
    F: Fn(&MetricRecord) -> GroupKey,
{
    let mut groups: BTreeMap<GroupKey, Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(group_key(r)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(key, rs)| {
            let mut columns: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for r in &rs {
                columns.entry("iou").or_default().push(r.iou);
                let per_piece = [
                    ("l2_pos", &r.l2_pos),
                    ("angle_err", &r.angle_err),
                    ("angle_err_raw", &r.angle_err_raw),
                    ("size_err", &r.size_err),
                ];
                for (name, v) in per_piece {
                    if let Some(m) = MetricRecord::piece_mean(v) {
                        columns.entry(name).or_default().push(m);
                    }
                }
                if let Some(v) = r.union_iou {
                    columns.entry("union_iou").or_default().push(v);
                }
                if let Some(v) = r.overlap_penalty {
                    columns.entry("overlap_penalty").or_default().push(v);
                }
            }
            Aggregate {
                n: rs.len(),
                parse_failures: rs.iter().filter(|r| r.parse_failed).count(),
                scene_errors: rs.iter().filter(|r| r.error.is_some()).count(),
                metrics: columns
                    .into_iter()
                    .filter_map(|(k, v)| Stat::from_values(&v).map(|s| (k.to_string(), s)))
                    .collect(),
                key,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: &str, iou: f64, parse_failed: bool) -> MetricRecord {
        MetricRecord {
            scene_id: id.into(),
            mode: TaskMode::Pos,
            model: "oracle".into(),
            piece_filter: "square".into(),
            split: "single".into(),
            l2_pos: Some(vec![1.0 - iou]),
            angle_err: None,
            angle_err_raw: None,
            size_err: None,
            iou,
            union_iou: None,
            overlap_penalty: None,
            parse_failed,
            error: None,
        }
    }

    #[test]
    fn identical_records_have_zero_width() {
        let rs: Vec<_> = (0..10).map(|i| record(&i.to_string(), 0.7, false)).collect();
        let agg = aggregate(&rs, GroupKey::of);
        assert_eq!(agg.len(), 1);
        let s = agg[0].iou().unwrap();
        assert_eq!(s.n, 10);
        assert!((s.mean - 0.7).abs() < 1e-15);
        assert!(s.ci95_halfwidth.abs() < 1e-12);
    }

    #[test]
    fn single_record_has_zero_width() {
        let s = Stat::from_values(&[0.3]).unwrap();
        assert_eq!(s.ci95_halfwidth, 0.0);
        assert!(Stat::from_values(&[]).is_none());
    }

    #[test]
    fn known_interval() {
        // Sample sd of {0, 1} is 1/sqrt 2.
        let s = Stat::from_values(&[0.0, 1.0]).unwrap();
        assert!((s.mean - 0.5).abs() < 1e-15);
        assert!((s.ci95_halfwidth - 1.96 * (0.5f64).sqrt() / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn parse_failures_count_as_zero() {
        let rs = vec![record("a", 1.0, false), record("b", 0.0, true)];
        let agg = aggregate(&rs, GroupKey::of);
        assert_eq!(agg[0].parse_failures, 1);
        assert!((agg[0].iou().unwrap().mean - 0.5).abs() < 1e-15);
    }

    #[test]
    fn groups_split_by_key() {
        let mut b = record("b", 0.2, false);
        b.model = "other".into();
        let agg = aggregate(&[record("a", 0.9, false), b], GroupKey::of);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].key.model, "oracle");
    }

    proptest! {
        #[test]
        fn order_insensitive(mut values in proptest::collection::vec(0.0f64..1.0, 1..200), seed in any::<u64>()) {
            let a = Stat::from_values(&values).unwrap();
            // Deterministic shuffle.
            let n = values.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                values.swap(i, (s >> 33) as usize % (i + 1));
            }
            let b = Stat::from_values(&values).unwrap();
            prop_assert!((a.mean - b.mean).abs() < 1e-12);
            prop_assert!((a.ci95_halfwidth - b.ci95_halfwidth).abs() < 1e-12);
        }
    }
}
