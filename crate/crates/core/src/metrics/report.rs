//! Per-stimulus evaluation and report aggregation.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::search::{found_vs_budget_curve, gsi, mean_fixations, msr, scanpath, ScanpathConfig, ScanpathResult};
use super::{auc_borji, auc_judd, cc, kl, nss, sim, FixationSet, MetricError, RegionMasks};
use crate::tensor::Tensor;

/// Every metric name that may appear in a report, in report order.
pub const METRIC_NAMES: [&str; 11] = [
    "auc_judd",
    "auc_borji",
    "nss",
    "cc",
    "kl",
    "sim",
    "msr_t",
    "msr_b",
    "gsi",
    "fixations_to_target",
    "found",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub borji_splits: usize,
    pub borji_seed: u64,
    /// Sigma of the fixation-density Gaussian as a fraction of image width.
    pub density_sigma_fraction: f64,
    pub scanpath: ScanpathConfig,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            borji_splits: 100,
            borji_seed: 0,
            density_sigma_fraction: 0.035,
            scanpath: ScanpathConfig::default(),
        }
    }
}

/// Ground truth available for one stimulus.
#[derive(Clone, Copy, Debug, Default)]
pub struct GroundTruth<'a> {
    pub fixations: Option<&'a FixationSet>,
    pub density: Option<&'a Tensor>,
    pub masks: Option<&'a RegionMasks>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricOutcome {
    pub value: Option<f64>,
    /// `ok`, `unavailable`, `not_found` or `error: <message>`.
    pub status: String,
}

impl MetricOutcome {
    pub fn ok(value: f64) -> Self {
        Self {
            value: Some(value),
            status: "ok".into(),
        }
    }

    pub fn unavailable() -> Self {
        Self {
            value: None,
            status: "unavailable".into(),
        }
    }

    fn from_result(r: Result<f64, MetricError>) -> Self {
        match r {
            Ok(v) => Self::ok(v),
            Err(e) => Self {
                value: None,
                status: format!("error: {e}"),
            },
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StimulusReport {
    pub id: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, MetricOutcome>,
    #[serde(default)]
    pub scanpath: Option<ScanpathResult>,
}

/// Compute every metric the ground truth supports; the rest are marked unavailable.
pub fn evaluate(
    id: &str,
    attributes: &BTreeMap<String, String>,
    sal: &Tensor,
    gt: GroundTruth<'_>,
    cfg: &MetricConfig,
) -> StimulusReport {
    let mut metrics = BTreeMap::new();
    let mut put = |name: &str, outcome: MetricOutcome| {
        metrics.insert(name.to_string(), outcome);
    };
    match gt.fixations {
        Some(fix) => {
            put("auc_judd", MetricOutcome::from_result(auc_judd(sal, fix)));
            put(
                "auc_borji",
                MetricOutcome::from_result(auc_borji(sal, fix, cfg.borji_splits, cfg.borji_seed)),
            );
            put("nss", MetricOutcome::from_result(nss(sal, fix)));
        }
        None => {
            for m in ["auc_judd", "auc_borji", "nss"] {
                put(m, MetricOutcome::unavailable());
            }
        }
    }
    match gt.density {
        Some(d) => {
            put("cc", MetricOutcome::from_result(cc(sal, d)));
            put("kl", MetricOutcome::from_result(kl(d, sal)));
            put("sim", MetricOutcome::from_result(sim(sal, d)));
        }
        None => {
            for m in ["cc", "kl", "sim"] {
                put(m, MetricOutcome::unavailable());
            }
        }
    }
    let mut path = None;
    match gt.masks {
        Some(masks) => {
            match msr(sal, masks) {
                Ok(m) => {
                    put(
                        "msr_t",
                        m.msr_t.map_or_else(MetricOutcome::unavailable, MetricOutcome::ok),
                    );
                    put(
                        "msr_b",
                        m.msr_b.map_or_else(MetricOutcome::unavailable, MetricOutcome::ok),
                    );
                }
                Err(e) => {
                    let msg = format!("error: {e}");
                    for m in ["msr_t", "msr_b"] {
                        put(
                            m,
                            MetricOutcome {
                                value: None,
                                status: msg.clone(),
                            },
                        );
                    }
                }
            }
            put(
                "gsi",
                if masks.distractors.is_some() {
                    MetricOutcome::from_result(gsi(sal, masks))
                } else {
                    MetricOutcome::unavailable()
                },
            );
            match scanpath(sal, masks, &cfg.scanpath) {
                Ok(r) => {
                    put(
                        "fixations_to_target",
                        match r.fixations_to_target {
                            Some(k) => MetricOutcome::ok(k as f64),
                            None => MetricOutcome {
                                value: None,
                                status: "not_found".into(),
                            },
                        },
                    );
                    put("found", MetricOutcome::ok(if r.found() { 1.0 } else { 0.0 }));
                    path = Some(r);
                }
                Err(e) => {
                    let msg = format!("error: {e}");
                    for m in ["fixations_to_target", "found"] {
                        put(
                            m,
                            MetricOutcome {
                                value: None,
                                status: msg.clone(),
                            },
                        );
                    }
                }
            }
        }
        None => {
            for m in ["msr_t", "msr_b", "gsi", "fixations_to_target", "found"] {
                put(m, MetricOutcome::unavailable());
            }
        }
    }
    StimulusReport {
        id: id.to_string(),
        attributes: attributes.clone(),
        metrics,
        scanpath: path,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEntry {
    pub mean: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub stimuli: usize,
    /// Mean of every metric over the stimuli where it is available.
    pub means: BTreeMap<String, MeanEntry>,
    /// Fraction of scanpaths that reached the target within the budget.
    pub found_fraction: Option<f64>,
    /// Mean fixations to target, a miss counting as the full budget.
    pub mean_fixations: Option<f64>,
    /// `(budget, fraction found)` for budgets 1..=configured budget.
    pub found_curve: Vec<(usize, f64)>,
    /// attribute key → attribute value → metric means.
    pub groups: BTreeMap<String, BTreeMap<String, BTreeMap<String, MeanEntry>>>,
}

fn means_of<'a>(stimuli: impl Iterator<Item = &'a StimulusReport>) -> BTreeMap<String, MeanEntry> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for s in stimuli {
        for (name, m) in &s.metrics {
            if let (true, Some(v)) = (m.is_ok(), m.value) {
                let e = acc.entry(name.clone()).or_default();
                e.0 += v;
                e.1 += 1;
            }
        }
    }
    acc.into_iter()
        .map(|(k, (sum, n))| {
            (
                k,
                MeanEntry {
                    mean: sum / n as f64,
                    count: n,
                },
            )
        })
        .collect()
}

impl Aggregates {
    pub fn compute(stimuli: &[StimulusReport]) -> Self {
        let paths: Vec<ScanpathResult> = stimuli.iter().filter_map(|s| s.scanpath.clone()).collect();
        let budget = paths.iter().map(|p| p.budget).max().unwrap_or(0);
        let found_at: Vec<Option<usize>> = paths.iter().map(|p| p.fixations_to_target).collect();
        let found_curve = found_vs_budget_curve(&found_at, &(1..=budget).collect::<Vec<_>>());
        let found_fraction =
            (!paths.is_empty()).then(|| found_at.iter().filter(|f| f.is_some()).count() as f64 / paths.len() as f64);

        let mut keys: BTreeMap<&str, BTreeMap<&str, Vec<&StimulusReport>>> = BTreeMap::new();
        for s in stimuli {
            for (k, v) in &s.attributes {
                keys.entry(k).or_default().entry(v).or_default().push(s);
            }
        }
        let groups = keys
            .into_iter()
            .map(|(k, vals)| {
                let inner = vals
                    .into_iter()
                    .map(|(v, members)| (v.to_string(), means_of(members.into_iter())))
                    .collect();
                (k.to_string(), inner)
            })
            .collect();
        Self {
            stimuli: stimuli.len(),
            means: means_of(stimuli.iter()),
            found_fraction,
            mean_fixations: mean_fixations(&paths),
            found_curve,
            groups,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub stimulus: String,
    pub metric: String,
    pub value: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// The full run configuration that produced the report.
    pub config: serde_json::Value,
    pub aggregates: Aggregates,
    pub stimuli: Vec<StimulusReport>,
}

impl EvalReport {
    /// Sorts stimuli by id and computes the aggregates from them.
    pub fn new(config: serde_json::Value, mut stimuli: Vec<StimulusReport>) -> Self {
        stimuli.sort_by(|a, b| a.id.cmp(&b.id));
        Self {
            config,
            aggregates: Aggregates::compute(&stimuli),
            stimuli,
        }
    }

    pub fn csv_rows(&self) -> Vec<CsvRow> {
        let mut rows = Vec::new();
        for s in &self.stimuli {
            for name in METRIC_NAMES {
                if let Some(m) = s.metrics.get(name) {
                    rows.push(CsvRow {
                        stimulus: s.id.clone(),
                        metric: name.to_string(),
                        value: m.value,
                        status: m.status.clone(),
                    });
                }
            }
        }
        rows
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        for row in self.csv_rows() {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(w, self)
    }

    pub fn read_json<R: Read>(r: R) -> serde_json::Result<Self> {
        serde_json::from_reader(r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GsiPoint {
    pub feature: String,
    pub difference: f64,
    pub mean_gsi: f64,
    pub count: usize,
}

/// Mean GSI per (`feature`, `difference`) attribute pair, sorted by feature
/// then difference. Stimuli without both attributes or without a GSI value are skipped.
pub fn gsi_vs_difference(report: &EvalReport) -> Vec<GsiPoint> {
    let mut acc: BTreeMap<(String, u64), (f64, f64, usize)> = BTreeMap::new();
    for s in &report.stimuli {
        let (Some(feature), Some(diff)) = (s.attributes.get("feature"), s.attributes.get("difference")) else {
            continue;
        };
        let Ok(diff) = diff.parse::<f64>() else { continue };
        let Some(g) = s.metrics.get("gsi").filter(|m| m.is_ok()).and_then(|m| m.value) else {
            continue;
        };
        // Order-preserving key for non-negative and negative floats alike.
        let bits = diff.to_bits();
        let key = if diff.is_sign_negative() {
            !bits
        } else {
            bits | (1 << 63)
        };
        let e = acc.entry((feature.clone(), key)).or_insert((diff, 0.0, 0));
        e.1 += g;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|((feature, _), (difference, sum, count))| GsiPoint {
            feature,
            difference,
            mean_gsi: sum / count as f64,
            count,
        })
        .collect()
}
