use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::error::{Error, Result};
use crate::threat::ThreatModel;

use super::cells::{cells_to_csv, write_atomic, ExperimentCell};
use super::metrics::{median, pearson};

/// A correlation coefficient, or the marker used when it cannot be computed
/// (fewer than three points or a constant series).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "CorrelationRepr", try_from = "CorrelationRepr")]
pub enum Correlation {
    Value(f64),
    InsufficientData,
}

pub const INSUFFICIENT_DATA: &str = "insufficient-data";

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CorrelationRepr {
    Value(f64),
    Marker(String),
}

impl From<Correlation> for CorrelationRepr {
    fn from(c: Correlation) -> Self {
        match c {
            Correlation::Value(v) => CorrelationRepr::Value(v),
            Correlation::InsufficientData => CorrelationRepr::Marker(INSUFFICIENT_DATA.into()),
        }
    }
}

impl TryFrom<CorrelationRepr> for Correlation {
    type Error = String;

    fn try_from(r: CorrelationRepr) -> std::result::Result<Self, String> {
        match r {
            CorrelationRepr::Value(v) => Ok(Correlation::Value(v)),
            CorrelationRepr::Marker(s) if s == INSUFFICIENT_DATA => {
                Ok(Correlation::InsufficientData)
            }
            CorrelationRepr::Marker(s) => Err(format!("unknown correlation marker {s:?}")),
        }
    }
}

impl Correlation {
    fn of(xs: &[f64], ys: &[f64]) -> Self {
        pearson(xs, ys).map_or(Correlation::InsufficientData, Correlation::Value)
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Correlation::Value(v) => Some(v),
            Correlation::InsufficientData => None,
        }
    }

    fn render(self) -> String {
        match self {
            Correlation::Value(v) => format!("{v:.4}"),
            Correlation::InsufficientData => INSUFFICIENT_DATA.into(),
        }
    }
}

/// Q1: metric distribution for one (threat, attack) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreatRow {
    pub threat: ThreatModel,
    pub attack: AttackKind,
    pub n: usize,
    pub median: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub cells: Vec<usize>,
}

/// Q2: metric for one attack on one dataset, alongside its complexity score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub attack: AttackKind,
    pub dataset: String,
    pub complexity: f64,
    pub n: usize,
    pub median: f64,
    pub cells: Vec<usize>,
}

/// One target configuration (dataset, architecture), aggregated over seeds
/// and threat models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub dataset: String,
    pub arch: String,
    pub n: usize,
    pub median_gap: f64,
    pub median_metric: f64,
    pub cells: Vec<usize>,
}

/// Q3: metric against overfitting gap for one attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSeries {
    pub attack: AttackKind,
    pub points: Vec<GapPoint>,
    pub pearson: Correlation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetRow {
    pub dataset: String,
    pub arch: String,
    pub medians: BTreeMap<AttackKind, f64>,
    pub cells: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    pub a: AttackKind,
    pub b: AttackKind,
    pub points: usize,
    pub pearson: Correlation,
}

/// Q4: cross-attack correlation over target configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackCorrelations {
    pub targets: Vec<TargetRow>,
    pub pairs: Vec<PairCorrelation>,
}

impl AttackCorrelations {
    pub fn get(&self, a: AttackKind, b: AttackKind) -> Option<Correlation> {
        self.pairs
            .iter()
            .find(|p| (p.a, p.b) == (a, b) || (p.a, p.b) == (b, a))
            .map(|p| p.pearson)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub cells: Vec<ExperimentCell>,
    pub q1_threats: Vec<ThreatRow>,
    pub q2_complexity: Vec<ComplexityRow>,
    pub q3_overfitting: Vec<GapSeries>,
    pub q4_correlations: AttackCorrelations,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn med(v: &[f64]) -> f64 {
    median(v).expect("groups are non-empty")
}

fn group_by<K: Ord>(
    cells: &[ExperimentCell],
    idx: impl IntoIterator<Item = usize>,
    key: impl Fn(&ExperimentCell) -> K,
) -> BTreeMap<K, Vec<usize>> {
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for i in idx {
        groups.entry(key(&cells[i])).or_default().push(i);
    }
    groups
}

fn pick(cells: &[ExperimentCell], idx: &[usize], f: impl Fn(&ExperimentCell) -> f64) -> Vec<f64> {
    idx.iter().map(|&i| f(&cells[i])).collect()
}

pub fn build_report(cells: &[ExperimentCell]) -> Result<RiskReport> {
    if cells.is_empty() {
        return Err(Error::EmptyInput("a report needs at least one cell".into()));
    }
    for c in cells {
        c.validate()?;
    }

    let q1_threats = group_by(cells, 0..cells.len(), |c| (c.threat, c.attack))
        .into_iter()
        .map(|((threat, attack), idx)| {
            let m = pick(cells, &idx, |c| c.metric);
            ThreatRow {
                threat,
                attack,
                n: idx.len(),
                median: med(&m),
                mean: mean(&m),
                min: m.iter().copied().fold(f64::INFINITY, f64::min),
                max: m.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                cells: idx,
            }
        })
        .collect();

    let mut q2_complexity: Vec<ComplexityRow> =
        group_by(cells, 0..cells.len(), |c| (c.attack, c.dataset.clone()))
            .into_iter()
            .map(|((attack, dataset), idx)| ComplexityRow {
                attack,
                dataset,
                complexity: med(&pick(cells, &idx, |c| c.complexity)),
                n: idx.len(),
                median: med(&pick(cells, &idx, |c| c.metric)),
                cells: idx,
            })
            .collect();
    q2_complexity.sort_by(|a, b| {
        (a.attack, a.complexity, &a.dataset)
            .partial_cmp(&(b.attack, b.complexity, &b.dataset))
            .expect("complexities are finite")
    });

    let mut q3_overfitting = Vec::new();
    for (attack, idx) in group_by(cells, 0..cells.len(), |c| c.attack) {
        let points: Vec<GapPoint> = group_by(cells, idx, |c| (c.dataset.clone(), c.arch.clone()))
            .into_iter()
            .map(|((dataset, arch), global)| GapPoint {
                dataset,
                arch,
                n: global.len(),
                median_gap: med(&pick(cells, &global, |c| c.gap)),
                median_metric: med(&pick(cells, &global, |c| c.metric)),
                cells: global,
            })
            .collect();
        let gaps: Vec<f64> = points.iter().map(|p| p.median_gap).collect();
        let metrics: Vec<f64> = points.iter().map(|p| p.median_metric).collect();
        q3_overfitting.push(GapSeries {
            attack,
            pearson: Correlation::of(&gaps, &metrics),
            points,
        });
    }

    let targets: Vec<TargetRow> = group_by(cells, 0..cells.len(), |c| {
        (c.dataset.clone(), c.arch.clone())
    })
    .into_iter()
    .map(|((dataset, arch), idx)| TargetRow {
        medians: group_by(cells, idx.iter().copied(), |c| c.attack)
            .into_iter()
            .map(|(attack, g)| (attack, med(&pick(cells, &g, |c| c.metric))))
            .collect(),
        dataset,
        arch,
        cells: idx,
    })
    .collect();
    let mut pairs = Vec::new();
    for (i, &a) in AttackKind::ALL.iter().enumerate() {
        for &b in &AttackKind::ALL[i + 1..] {
            let matched: Vec<(f64, f64)> = targets
                .iter()
                .filter_map(|t| Some((*t.medians.get(&a)?, *t.medians.get(&b)?)))
                .collect();
            let (xs, ys): (Vec<f64>, Vec<f64>) = matched.iter().copied().unzip();
            pairs.push(PairCorrelation {
                a,
                b,
                points: matched.len(),
                pearson: Correlation::of(&xs, &ys),
            });
        }
    }

    Ok(RiskReport {
        cells: cells.to_vec(),
        q1_threats,
        q2_complexity,
        q3_overfitting,
        q4_correlations: AttackCorrelations { targets, pairs },
    })
}

impl RiskReport {
    /// Plain-text document with one table per research question.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "RISK REPORT");
        let _ = writeln!(s, "cells: {}", self.cells.len());

        let _ = writeln!(
            s,
            "\n== Q1 threat models: metric by threat model and attack =="
        );
        let _ = writeln!(
            s,
            "{:<18} {:<10} {:>4} {:>8} {:>8} {:>8} {:>8}",
            "threat", "attack", "n", "median", "mean", "min", "max"
        );
        for r in &self.q1_threats {
            let _ = writeln!(
                s,
                "{:<18} {:<10} {:>4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                r.threat.to_string(),
                r.attack.as_str(),
                r.n,
                r.median,
                r.mean,
                r.min,
                r.max
            );
        }

        let _ = writeln!(
            s,
            "\n== Q2 dataset complexity: metric by dataset, ordered by complexity =="
        );
        let _ = writeln!(
            s,
            "{:<10} {:<28} {:>10} {:>4} {:>8}",
            "attack", "dataset", "complexity", "n", "median"
        );
        for r in &self.q2_complexity {
            let _ = writeln!(
                s,
                "{:<10} {:<28} {:>10.4} {:>4} {:>8.4}",
                r.attack.as_str(),
                r.dataset,
                r.complexity,
                r.n,
                r.median
            );
        }

        let _ = writeln!(s, "\n== Q3 overfitting: metric against train-test gap ==");
        for series in &self.q3_overfitting {
            let _ = writeln!(
                s,
                "{}: pearson(gap, metric) = {}",
                series.attack.as_str(),
                series.pearson.render()
            );
            let _ = writeln!(
                s,
                "  {:<28} {:<14} {:>4} {:>10} {:>10}",
                "dataset", "arch", "n", "gap", "metric"
            );
            for p in &series.points {
                let _ = writeln!(
                    s,
                    "  {:<28} {:<14} {:>4} {:>10.4} {:>10.4}",
                    p.dataset, p.arch, p.n, p.median_gap, p.median_metric
                );
            }
        }

        let _ = writeln!(s, "\n== Q4 attack correlations across target models ==");
        let _ = writeln!(s, "{:<22} {:>6} {:>18}", "pair", "points", "pearson");
        for p in &self.q4_correlations.pairs {
            let _ = writeln!(
                s,
                "{:<22} {:>6} {:>18}",
                format!("{} ~ {}", p.a.as_str(), p.b.as_str()),
                p.points,
                p.pearson.render()
            );
        }
        let _ = write!(s, "  {:<28} {:<14}", "dataset", "arch");
        for k in AttackKind::ALL {
            let _ = write!(s, " {:>10}", k.as_str());
        }
        let _ = writeln!(s);
        for t in &self.q4_correlations.targets {
            let _ = write!(s, "  {:<28} {:<14}", t.dataset, t.arch);
            for k in AttackKind::ALL {
                match t.medians.get(&k) {
                    Some(v) => {
                        let _ = write!(s, " {v:>10.4}");
                    }
                    None => {
                        let _ = write!(s, " {:>10}", "-");
                    }
                }
            }
            let _ = writeln!(s);
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_SUMMARY: &str = "summary.txt";
pub const REPORT_JSON: &str = "report.json";

/// Writes the CSV, the summary and the JSON form into `dir`.
pub fn write_report(dir: &Path, report: &RiskReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(
        &dir.join(REPORT_CSV),
        cells_to_csv(&report.cells)?.as_bytes(),
    )?;
    write_atomic(&dir.join(REPORT_SUMMARY), report.summary().as_bytes())?;
    write_atomic(&dir.join(REPORT_JSON), report.to_json()?.as_bytes())
}
