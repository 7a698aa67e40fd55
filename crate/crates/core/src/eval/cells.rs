use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::error::{Error, Result};
use crate::threat::ThreatModel;

pub const CSV_HEADER: [&str; 10] = [
    "dataset",
    "arch",
    "threat",
    "attack",
    "metric",
    "train_acc",
    "test_acc",
    "gap",
    "complexity",
    "seed",
];

/// One attack result against one target model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCell {
    pub dataset: String,
    pub arch: String,
    pub threat: ThreatModel,
    pub attack: AttackKind,
    /// Attack accuracy, or agreement for stealing.
    pub metric: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub gap: f64,
    pub complexity: f64,
    pub seed: u64,
}

impl ExperimentCell {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.metric) || !unit(self.train_acc) || !unit(self.test_acc) {
            return Err(Error::Data(format!(
                "cell {} has a value outside [0, 1]",
                self.key()
            )));
        }
        if (self.gap - (self.train_acc - self.test_acc)).abs() > 1e-12
            || !(-1.0..=1.0).contains(&self.gap)
        {
            return Err(Error::Data(format!(
                "cell {} has an inconsistent gap",
                self.key()
            )));
        }
        if !self.complexity.is_finite() {
            return Err(Error::Data(format!(
                "cell {} has a non-finite complexity",
                self.key()
            )));
        }
        if self.dataset.contains([',', '"', '\n']) || self.arch.contains([',', '"', '\n']) {
            return Err(Error::Data(
                "dataset and arch ids must not contain commas, quotes or newlines".into(),
            ));
        }
        Ok(())
    }

    fn key(&self) -> String {
        format!(
            "{}/{}/{}/{}/seed{}",
            self.dataset, self.arch, self.threat, self.attack, self.seed
        )
    }

    fn csv_fields(&self) -> [String; 10] {
        [
            self.dataset.clone(),
            self.arch.clone(),
            self.threat.to_string(),
            self.attack.to_string(),
            self.metric.to_string(),
            self.train_acc.to_string(),
            self.test_acc.to_string(),
            self.gap.to_string(),
            self.complexity.to_string(),
            self.seed.to_string(),
        ]
    }
}

/// A requested (threat, attack) pair that was not run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub dataset: String,
    pub arch: String,
    pub threat: ThreatModel,
    pub attack: AttackKind,
    pub seed: u64,
    pub reason: String,
}

pub const SKIPPED_INAPPLICABLE: &str = "skipped: inapplicable";

/// Contents of one cells file written by the attack stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellFile {
    pub cells: Vec<ExperimentCell>,
    pub skipped: Vec<SkippedCell>,
}

pub fn cells_to_csv(cells: &[ExperimentCell]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let fmt_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(CSV_HEADER).map_err(fmt_err)?;
    for c in cells {
        c.validate()?;
        w.write_record(c.csv_fields()).map_err(fmt_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn cells_from_csv(text: &str) -> Result<Vec<ExperimentCell>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Format(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Format(format!(
            "unexpected CSV header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut cells = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let bad = |what: &str| Error::Format(format!("row {}: bad {what}", line + 2));
        let num = |i: usize, what: &str| rec[i].parse::<f64>().map_err(|_| bad(what));
        let cell = ExperimentCell {
            dataset: rec[0].to_string(),
            arch: rec[1].to_string(),
            threat: rec[2].parse().map_err(|_| bad("threat"))?,
            attack: rec[3].parse().map_err(|_| bad("attack"))?,
            metric: num(4, "metric")?,
            train_acc: num(5, "train_acc")?,
            test_acc: num(6, "test_acc")?,
            gap: num(7, "gap")?,
            complexity: num(8, "complexity")?,
            seed: rec[9].parse().map_err(|_| bad("seed"))?,
        };
        cell.validate()
            .map_err(|e| Error::Format(format!("row {}: {e}", line + 2)))?;
        cells.push(cell);
    }
    Ok(cells)
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_cell_file(path: &Path, file: &CellFile) -> Result<()> {
    for c in &file.cells {
        c.validate()?;
    }
    let text = serde_json::to_string_pretty(file).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

pub fn read_cell_file(path: &Path) -> Result<CellFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CellFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for c in &file.cells {
        c.validate()?;
    }
    Ok(file)
}
