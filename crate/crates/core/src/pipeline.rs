//! Config-driven experiment runner: train targets, mount attacks, report.
//!
//! Output layout under the output directory:
//!
//! ```text
//! checkpoints/{dataset}__{arch}__seed{s}.ckpt
//! targets.json
//! cells/{dataset}__{arch}__seed{s}.json
//! report/report.csv, report/summary.txt, report/report.json
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{
    agreement, attribute_attack, mia_evaluate, mia_train_on_shadow, mia_train_partial, steal_model, AttackConfig,
    AttackKind,
};
use crate::data::{complexity_rank, four_way_split, load_idx, partial_subset, synth_generate, FourWaySplit, LabeledDataset, SynthSpec};
use crate::engine::OptimizerConfig;
use crate::error::{Error, Result};
use crate::eval::{
    build_report, read_cell_file, write_atomic, write_cell_file, write_report, CellFile, ExperimentCell, RiskReport,
    SkippedCell, SKIPPED_INAPPLICABLE,
};
use crate::seed::derive_seed;
use crate::threat::{Auxiliary, TargetAccess, ThreatModel};
use crate::zoo::{load_checkpoint, save_checkpoint, train, ArchKind, TrainConfig, TrainedModel};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    #[serde(rename = "paper-faithful")]
    PaperFaithful,
    #[serde(rename = "fast")]
    Fast,
}

impl Profile {
    /// `paper-faithful`: batch 64, 100 epochs, SGD lr 1e-3, momentum 0.9,
    /// weight decay 5e-4. `fast`: 20 epochs at lr 1e-2, otherwise identical.
    pub fn train_config(self) -> TrainConfig {
        match self {
            Profile::PaperFaithful => TrainConfig::default(),
            Profile::Fast => TrainConfig {
                epochs: 20,
                optimizer: OptimizerConfig::sgd(1e-2, 0.9, 5e-4),
                ..TrainConfig::default()
            },
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::PaperFaithful => "paper-faithful",
            Profile::Fast => "fast",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-faithful" => Ok(Profile::PaperFaithful),
            "fast" => Ok(Profile::Fast),
            _ => Err(Error::Config(format!("unknown profile {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SynthSpec),
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        attributes: Option<PathBuf>,
        /// Keep only the first `limit` samples.
        #[serde(default)]
        limit: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub id: String,
    pub source: DatasetSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub profile: Profile,
    pub output_dir: PathBuf,
    pub datasets: Vec<DatasetConfig>,
    pub architectures: Vec<ArchKind>,
    pub threats: Vec<ThreatModel>,
    pub attacks: Vec<AttackKind>,
    pub seeds: Vec<u64>,
    /// Replaces the profile's target training configuration.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default = "default_partial_fraction")]
    pub partial_fraction: f64,
}

fn default_partial_fraction() -> f64 {
    0.7
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut ids = BTreeSet::new();
        for d in &self.datasets {
            if d.id.is_empty() || d.id.contains(['/', '\\', ',', '"', '\n']) || d.id.contains("__") {
                return Err(Error::Config(format!("dataset id {:?} is not a plain name", d.id)));
            }
            if !ids.insert(&d.id) {
                return Err(Error::Config(format!("dataset id {:?} appears twice", d.id)));
            }
            if let DatasetSource::Synthetic(spec) = &d.source {
                spec.validate()?;
            }
        }
        if self.datasets.is_empty() || self.architectures.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("need at least one dataset, architecture and seed".into()));
        }
        let runnable = self
            .threats
            .iter()
            .any(|&t| self.attacks.iter().any(|a| a.applies_to(t)));
        if !runnable {
            return Err(Error::Config("no requested (threat, attack) pair is applicable".into()));
        }
        if !(self.partial_fraction > 0.0 && self.partial_fraction <= 1.0) {
            return Err(Error::Config("partial_fraction must lie in (0, 1]".into()));
        }
        self.train_config().optimizer.validate()?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.clone().unwrap_or_else(|| self.profile.train_config())
    }

    /// Every (dataset, arch, seed) target in config order.
    pub fn targets(&self) -> Vec<TargetKey> {
        let mut out = Vec::new();
        for d in &self.datasets {
            for &arch in &self.architectures {
                for &seed in &self.seeds {
                    out.push(TargetKey {
                        dataset: d.id.clone(),
                        arch,
                        seed,
                    });
                }
            }
        }
        out
    }

    fn dataset(&self, id: &str) -> Result<&DatasetConfig> {
        self.datasets
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Error::Config(format!("unknown dataset {id:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetKey {
    pub dataset: String,
    pub arch: ArchKind,
    pub seed: u64,
}

impl TargetKey {
    pub fn stem(&self) -> String {
        format!("{}__{}__seed{}", self.dataset, self.arch, self.seed)
    }

    fn component(&self, what: &str) -> String {
        format!("{what}/{}", self.stem())
    }
}

/// Training outcome of one target, as recorded in `targets.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub key: TargetKey,
    pub checkpoint: String,
    pub train_acc: f64,
    pub test_acc: f64,
    pub gap: f64,
    pub complexity: f64,
}

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const CELLS_DIR: &str = "cells";
pub const REPORT_DIR: &str = "report";
pub const TARGETS_FILE: &str = "targets.json";

pub fn load_dataset(cfg: &DatasetConfig) -> Result<LabeledDataset> {
    let mut ds = match &cfg.source {
        DatasetSource::Synthetic(spec) => synth_generate(spec)?,
        DatasetSource::Idx {
            images,
            labels,
            attributes,
            limit,
        } => {
            let ds = load_idx(images, labels, attributes.as_deref(), &cfg.id)?;
            match limit {
                Some(n) => ds.truncate(*n),
                None => ds,
            }
        }
    };
    ds.name = cfg.id.clone();
    Ok(ds)
}

struct Prepared {
    split: FourWaySplit,
    complexity: f64,
}

fn prepare(config: &ExperimentConfig, key: &TargetKey) -> Result<Prepared> {
    let ds = load_dataset(config.dataset(&key.dataset)?)?;
    let complexity = complexity_rank(&ds);
    let split = four_way_split(&ds, derive_seed(config.seed, &format!("split/{}/seed{}", key.dataset, key.seed)))?;
    Ok(Prepared { split, complexity })
}

/// The split a pipeline run uses for `key`.
pub fn target_split(config: &ExperimentConfig, key: &TargetKey) -> Result<FourWaySplit> {
    Ok(prepare(config, key)?.split)
}

fn target_train_config(config: &ExperimentConfig, key: &TargetKey) -> TrainConfig {
    config
        .train_config()
        .with_shuffle_seed(derive_seed(config.seed, &key.component("target-shuffle")))
}

fn run_pool<T: Send>(jobs: usize, work: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(work))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn train_one(config: &ExperimentConfig, out: &Path, key: &TargetKey) -> Result<TargetRecord> {
    let prep = prepare(config, key)?;
    let arch = key.arch.build(prep.split.target_train.channels(), prep.split.target_train.num_classes);
    let model = train(
        &arch,
        &prep.split.target_train,
        &target_train_config(config, key),
        derive_seed(config.seed, &key.component("target-init")),
    )?;
    let checkpoint = format!("{CHECKPOINT_DIR}/{}.ckpt", key.stem());
    save_checkpoint(&model, &out.join(&checkpoint))?;
    let train_acc = model.accuracy(&prep.split.target_train)?;
    let test_acc = model.accuracy(&prep.split.target_test)?;
    Ok(TargetRecord {
        key: key.clone(),
        checkpoint,
        train_acc,
        test_acc,
        gap: train_acc - test_acc,
        complexity: prep.complexity,
    })
}

/// Trains one target per (dataset, arch, seed) and writes checkpoints plus
/// `targets.json`.
pub fn cmd_train_target(config: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Vec<TargetRecord>> {
    config.validate()?;
    create_dir(&out.join(CHECKPOINT_DIR))?;
    let keys = config.targets();
    let records = run_pool(jobs, || {
        keys.par_iter()
            .map(|k| train_one(config, out, k))
            .collect::<Result<Vec<_>>>()
    })??;
    let text = serde_json::to_string_pretty(&records).expect("records serialize");
    write_atomic(&out.join(TARGETS_FILE), text.as_bytes())?;
    Ok(records)
}

fn cell(record: &TargetRecord, threat: ThreatModel, attack: AttackKind, metric: f64) -> ExperimentCell {
    ExperimentCell {
        dataset: record.key.dataset.clone(),
        arch: record.key.arch.to_string(),
        threat,
        attack,
        metric,
        train_acc: record.train_acc,
        test_acc: record.test_acc,
        gap: record.gap,
        complexity: record.complexity,
        seed: record.key.seed,
    }
}

fn attack_one(config: &ExperimentConfig, out: &Path, record: &TargetRecord) -> Result<CellFile> {
    let key = &record.key;
    let target = load_checkpoint(&out.join(&record.checkpoint))?;
    let prep = prepare(config, key)?;
    let split = &prep.split;
    let seed_for = |what: &str| derive_seed(config.seed, &key.component(what));
    let partial = partial_subset(&split.target_train, config.partial_fraction, seed_for("partial"))?;
    let needs_shadow = config.attacks.contains(&AttackKind::Membership)
        && config.threats.iter().any(|t| t.auxiliary == Auxiliary::Shadow);
    let shadow: Option<TrainedModel> = if needs_shadow {
        let cfg = config.train_config().with_shuffle_seed(seed_for("shadow-shuffle"));
        Some(train(&target.architecture, &split.shadow_train, &cfg, seed_for("shadow-init"))?)
    } else {
        None
    };

    let mut file = CellFile::default();
    for &threat in &config.threats {
        for &attack in &config.attacks {
            if !attack.applies_to(threat) {
                file.skipped.push(SkippedCell {
                    dataset: key.dataset.clone(),
                    arch: key.arch.to_string(),
                    threat,
                    attack,
                    seed: key.seed,
                    reason: SKIPPED_INAPPLICABLE.into(),
                });
                continue;
            }
            let access = TargetAccess::new(&target, threat);
            let attack_seed = seed_for(&format!("{attack}/{threat}"));
            let aux = match threat.auxiliary {
                Auxiliary::Partial => &partial,
                Auxiliary::Shadow => &split.shadow_train,
            };
            let metric = match attack {
                AttackKind::Membership => {
                    let model = match threat.auxiliary {
                        Auxiliary::Partial => {
                            mia_train_partial(&partial, &split.shadow_test, &access, &config.attack, attack_seed)?
                        }
                        Auxiliary::Shadow => mia_train_on_shadow(
                            shadow.as_ref().expect("shadow model trained when needed"),
                            &split.shadow_train,
                            &split.shadow_test,
                            threat,
                            &config.attack,
                            attack_seed,
                        )?,
                    };
                    mia_evaluate(&model, &access, &split.target_train, &split.target_test)?
                }
                AttackKind::Attribute => {
                    attribute_attack(&access, aux, &split.target_test, &config.attack, attack_seed)?.accuracy
                }
                AttackKind::Stealing => {
                    let cfg = config.train_config().with_shuffle_seed(seed_for(&format!("steal-shuffle/{threat}")));
                    let surrogate = steal_model(&access, aux, &target.architecture, &cfg, attack_seed)?;
                    agreement(&access, &surrogate, &split.target_test.images)?
                }
            };
            file.cells.push(cell(record, threat, attack, metric));
        }
    }
    Ok(file)
}

pub fn read_targets(out: &Path) -> Result<Vec<TargetRecord>> {
    let path = out.join(TARGETS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Runs every requested (threat, attack) pair against each trained target
/// and writes one cells file per target.
pub fn cmd_attack(config: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Vec<CellFile>> {
    config.validate()?;
    let records = read_targets(out)?;
    let wanted = config.targets();
    let records: Vec<TargetRecord> = wanted
        .iter()
        .map(|k| {
            records
                .iter()
                .find(|r| &r.key == k)
                .cloned()
                .ok_or_else(|| Error::State(format!("target {} has not been trained", k.stem())))
        })
        .collect::<Result<_>>()?;
    create_dir(&out.join(CELLS_DIR))?;
    run_pool(jobs, || {
        records
            .par_iter()
            .map(|r| {
                let file = attack_one(config, out, r)?;
                write_cell_file(&out.join(CELLS_DIR).join(format!("{}.json", r.key.stem())), &file)?;
                Ok(file)
            })
            .collect::<Result<Vec<_>>>()
    })?
}

/// Builds the report from every cells file under `out/cells`, in file-name order.
pub fn cmd_report(out: &Path) -> Result<RiskReport> {
    let dir = out.join(CELLS_DIR);
    let mut paths: Vec<PathBuf> = match std::fs::read_dir(&dir) {
        Ok(entries) => entries
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&dir, err)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(&dir, e)),
    };
    paths.sort();
    let mut cells = Vec::new();
    for p in &paths {
        cells.extend(read_cell_file(p)?.cells);
    }
    if cells.is_empty() {
        return Err(Error::EmptyInput(format!("no cells found under {}", dir.display())));
    }
    let report = build_report(&cells)?;
    write_report(&out.join(REPORT_DIR), &report)?;
    Ok(report)
}

pub fn cmd_full_suite(config: &ExperimentConfig, out: &Path, jobs: usize) -> Result<RiskReport> {
    cmd_train_target(config, out, jobs)?;
    cmd_attack(config, out, jobs)?;
    cmd_report(out)
}
