//! Experiment and sweep configuration files.
//!
//! Every table rejects unknown keys. Resolved runtime types (partition spec,
//! model, training and algorithm configs) are derived here, with all seeds
//! taken from `master_seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{load_cifar10_dir, read_records, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::fl::{AlgoConfig, Algorithm, CreffConfig};
use crate::nn::{Arch, ModelConfig, TrainConfig};
use crate::partition::{PartitionKind, PartitionSpec, DEFAULT_MIN_SHARD_SIZE};
use crate::rng::derive_seed;

/// Default dataset root for CIFAR-10 when `dir` is not given.
pub const DATA_DIR_ENV: &str = "FLTB_DATA_DIR";

fn default_eval_every() -> usize {
    1
}

fn default_min_shard() -> usize {
    DEFAULT_MIN_SHARD_SIZE
}

fn default_client_test_fraction() -> f64 {
    0.2
}

fn default_participation() -> f64 {
    1.0
}

fn default_separation() -> f64 {
    6.0
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// Evaluate every this many rounds; round 0 and the last round are
    /// always evaluated.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    pub dataset: DatasetSection,
    pub partition: PartitionSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub algorithm: AlgorithmSection,
}

/// Exactly one of `synthetic`, `cifar10` or `records` must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Long-tail the training set to this imbalance factor before
    /// partitioning. The test set stays balanced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imbalance_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cifar10: Option<CifarSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<RecordsSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub spread: f64,
    #[serde(default = "default_separation")]
    pub separation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CifarSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

/// Pre-extracted feature files in the `FLTDS1` record format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordsSection {
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKindName {
    Iid,
    Dirichlet,
    RotatedLongTail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub kind: PartitionKindName,
    pub num_clients: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_if: Option<f64>,
    #[serde(default = "default_min_shard")]
    pub min_shard_size: usize,
    /// Per-client stratified test shard, taken out of every client's data
    /// before training. Zero disables client test shards.
    #[serde(default = "default_client_test_fraction")]
    pub client_test_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearSoftmax,
    Mlp1h,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    #[serde(default)]
    pub weight_decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmName {
    FedAvg,
    FedProx,
    FedPer,
    CReFF,
}

impl AlgorithmName {
    pub fn label(self) -> &'static str {
        match self {
            AlgorithmName::FedAvg => "FedAvg",
            AlgorithmName::FedProx => "FedProx",
            AlgorithmName::FedPer => "FedPer",
            AlgorithmName::CReFF => "CReFF",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub name: AlgorithmName,
    pub rounds: usize,
    #[serde(default = "default_participation")]
    pub participation: f64,
    /// FedProx only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// CReFF only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creff: Option<CreffConfig>,
}

impl AlgorithmSection {
    pub fn algorithm(&self) -> Algorithm {
        match self.name {
            AlgorithmName::FedAvg => Algorithm::FedAvg,
            AlgorithmName::FedProx => Algorithm::FedProx {
                mu: self.mu.unwrap_or(0.01),
            },
            AlgorithmName::FedPer => Algorithm::FedPer,
            AlgorithmName::CReFF => Algorithm::CReFF(self.creff.unwrap_or_default()),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.mu.is_some() && self.name != AlgorithmName::FedProx {
            return Err(Error::Config(format!(
                "algorithm.mu is not used by {}",
                self.name.label()
            )));
        }
        if self.creff.is_some() && self.name != AlgorithmName::CReFF {
            return Err(Error::Config(format!(
                "algorithm.creff is not used by {}",
                self.name.label()
            )));
        }
        Ok(())
    }
}

/// Which dataset a config resolves to.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec, usize),
    Cifar10(PathBuf),
    Records { train: PathBuf, test: PathBuf },
}

impl DatasetSection {
    pub fn source(&self, master_seed: u64) -> Result<DataSource> {
        let given = [
            self.synthetic.is_some(),
            self.cifar10.is_some(),
            self.records.is_some(),
        ];
        if given.iter().filter(|&&g| g).count() != 1 {
            return Err(Error::Config(
                "dataset needs exactly one of [dataset.synthetic], [dataset.cifar10], [dataset.records]"
                    .into(),
            ));
        }
        if let Some(s) = &self.synthetic {
            let spec = SyntheticSpec::new(
                s.classes,
                s.per_class,
                s.dim,
                s.spread,
                derive_seed(master_seed, "dataset", 0, 0),
            )
            .with_separation(s.separation);
            return Ok(DataSource::Synthetic(spec, s.test_per_class));
        }
        if let Some(c) = &self.cifar10 {
            let dir = match &c.dir {
                Some(d) => d.clone(),
                None => std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).ok_or_else(|| {
                    Error::Config(format!(
                        "dataset.cifar10.dir is not set and {DATA_DIR_ENV} is empty"
                    ))
                })?,
            };
            return Ok(DataSource::Cifar10(dir));
        }
        let r = self.records.as_ref().expect("one source present");
        Ok(DataSource::Records {
            train: r.train.clone(),
            test: r.test.clone(),
        })
    }
}

impl DataSource {
    /// Files the source reads; all must exist before a run starts.
    pub fn required_files(&self) -> Vec<PathBuf> {
        match self {
            DataSource::Synthetic(..) => Vec::new(),
            DataSource::Cifar10(dir) => (1..=5)
                .map(|i| dir.join(format!("data_batch_{i}.bin")))
                .chain(std::iter::once(dir.join("test_batch.bin")))
                .collect(),
            DataSource::Records { train, test } => vec![train.clone(), test.clone()],
        }
    }

    /// Load `(train, test)`.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DataSource::Synthetic(spec, test_per_class) => spec.generate_split(*test_per_class),
            DataSource::Cifar10(dir) => load_cifar10_dir(dir),
            DataSource::Records { train, test } => {
                let tr = read_records(train, "records-train")?;
                let te = read_records(test, "records-test")?;
                if tr.num_classes() != te.num_classes() || tr.dim() != te.dim() {
                    return Err(Error::ShapeMismatch(format!(
                        "train ({} classes, dim {}) and test ({} classes, dim {}) disagree",
                        tr.num_classes(),
                        tr.dim(),
                        te.num_classes(),
                        te.dim()
                    )));
                }
                Ok((tr, te))
            }
        }
    }

    pub fn num_classes_and_dim(&self) -> Option<(usize, usize)> {
        match self {
            DataSource::Synthetic(spec, _) => Some((spec.classes, spec.dim)),
            DataSource::Cifar10(_) => Some((crate::dataset::CIFAR_CLASSES, crate::dataset::CIFAR_PIXELS)),
            DataSource::Records { .. } => None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Schema checks that need no data. Every failure is [`Error::Config`].
    pub fn validate(&self) -> Result<()> {
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        let source = self.dataset.source(self.master_seed)?;
        if let DataSource::Synthetic(spec, test) = &source {
            spec.validate().map_err(config_err)?;
            if *test == 0 {
                return Err(Error::Config(
                    "dataset.synthetic.test_per_class must be >= 1".into(),
                ));
            }
        }
        if let Some(f) = self.dataset.imbalance_factor {
            if !(f >= 1.0 && f.is_finite()) {
                return Err(Error::Config(format!(
                    "dataset.imbalance_factor must be >= 1, got {f}"
                )));
            }
        }
        self.partition_spec()?.validate().map_err(config_err)?;
        let p = &self.partition;
        if !(p.client_test_fraction >= 0.0 && p.client_test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "partition.client_test_fraction must lie in [0, 1), got {}",
                p.client_test_fraction
            )));
        }
        self.arch()?;
        self.train_config(0, 0).validate().map_err(config_err)?;
        self.algorithm.validate()?;
        self.algo_config().validate().map_err(config_err)?;
        Ok(())
    }

    /// Fail with the missing path before any work starts.
    pub fn check_inputs(&self) -> Result<()> {
        for path in self.dataset.source(self.master_seed)?.required_files() {
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "dataset file not found: {}",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn partition_kind(&self) -> Result<PartitionKind> {
        let p = &self.partition;
        let (kind, stray) = match p.kind {
            PartitionKindName::Iid => (PartitionKind::Iid, p.alpha.is_some() || p.local_if.is_some()),
            PartitionKindName::Dirichlet => (
                PartitionKind::Dirichlet {
                    alpha: p
                        .alpha
                        .ok_or_else(|| Error::Config("partition.alpha is required for dirichlet".into()))?,
                },
                p.local_if.is_some(),
            ),
            PartitionKindName::RotatedLongTail => (
                PartitionKind::RotatedLongTail {
                    local_if: p.local_if.ok_or_else(|| {
                        Error::Config("partition.local_if is required for rotated_long_tail".into())
                    })?,
                },
                p.alpha.is_some(),
            ),
        };
        if stray {
            return Err(Error::Config(format!(
                "partition kind {:?} takes no {}",
                p.kind,
                if p.alpha.is_some() { "alpha" } else { "local_if" }
            )));
        }
        Ok(kind)
    }

    pub fn partition_spec(&self) -> Result<PartitionSpec> {
        Ok(PartitionSpec::new(
            self.partition_kind()?,
            self.partition.num_clients,
            derive_seed(self.master_seed, "partition", 0, 0),
        )
        .with_min_shard_size(self.partition.min_shard_size))
    }

    pub fn arch(&self) -> Result<Arch> {
        match (self.model.kind, self.model.hidden) {
            (ModelKind::LinearSoftmax, None) => Ok(Arch::LinearSoftmax),
            (ModelKind::LinearSoftmax, Some(_)) => {
                Err(Error::Config("model.hidden is not used by linear_softmax".into()))
            }
            (ModelKind::Mlp1h, Some(h)) if h > 0 => Ok(Arch::Mlp1h { hidden: h }),
            (ModelKind::Mlp1h, _) => Err(Error::Config("model.hidden must be >= 1 for mlp1h".into())),
        }
    }

    pub fn model_config(&self, input_dim: usize, num_classes: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig::new(
            self.arch()?,
            input_dim,
            num_classes,
            derive_seed(self.master_seed, "init", 0, 0),
        );
        cfg.validate()?;
        Ok(cfg)
    }

    /// Training config with the shuffle stream of `(round, client)`.
    pub fn train_config(&self, round: usize, client: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            local_epochs: self.train.local_epochs,
            weight_decay: self.train.weight_decay,
            shuffle_seed: derive_seed(self.master_seed, "local-sgd", round as u64, client as u64),
        }
    }

    pub fn algo_config(&self) -> AlgoConfig {
        AlgoConfig {
            algorithm: self.algorithm.algorithm(),
            participation: self.algorithm.participation,
            rounds: self.algorithm.rounds,
        }
    }

    pub fn seed(&self, purpose: &str) -> u64 {
        derive_seed(self.master_seed, purpose, 0, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    Table2,
    Table3,
}

impl TableKind {
    pub fn file_name(self) -> &'static str {
        match self {
            TableKind::Table2 => "table2.csv",
            TableKind::Table3 => "table3.csv",
        }
    }
}

/// One column of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingSection {
    pub label: String,
    /// Overrides `dataset.imbalance_factor`; 1 disables long-tailing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imbalance_factor: Option<f64>,
    pub kind: PartitionKindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_if: Option<f64>,
}

/// A sweep: every algorithm against every setting, for every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub table: TableKind,
    pub algorithms: Vec<AlgorithmName>,
    /// Master seeds; defaults to the base config's seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creff: Option<CreffConfig>,
    pub base: ExperimentConfig,
    pub settings: Vec<SettingSection>,
}

impl GridConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let grid: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("grid serializes to TOML")
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.base.master_seed])
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() || self.settings.is_empty() {
            return Err(Error::Config(
                "a sweep needs at least one algorithm and one setting".into(),
            ));
        }
        if self.seeds.as_ref().is_some_and(|s| s.is_empty()) {
            return Err(Error::Config("seeds must not be empty when given".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.algorithms {
            if !seen.insert(*a) {
                return Err(Error::Config(format!("algorithm {} listed twice", a.label())));
            }
        }
        for row in 0..self.algorithms.len() {
            for col in 0..self.settings.len() {
                for seed in self.seeds() {
                    self.cell(row, col, seed)
                        .validate()
                        .map_err(|e| Error::Config(format!("setting {:?}: {e}", self.settings[col].label)))?;
                }
            }
        }
        Ok(())
    }

    /// The experiment config of one table cell.
    pub fn cell(&self, row: usize, col: usize, seed: u64) -> ExperimentConfig {
        let name = self.algorithms[row];
        let s = &self.settings[col];
        let mut cfg = self.base.clone();
        cfg.master_seed = seed;
        if s.imbalance_factor.is_some() {
            cfg.dataset.imbalance_factor = s.imbalance_factor;
        }
        cfg.partition.kind = s.kind;
        cfg.partition.alpha = s.alpha;
        cfg.partition.local_if = s.local_if;
        cfg.algorithm.name = name;
        cfg.algorithm.mu = if name == AlgorithmName::FedProx {
            self.mu.or(self.base.algorithm.mu)
        } else {
            None
        };
        cfg.algorithm.creff = if name == AlgorithmName::CReFF {
            self.creff.or(self.base.algorithm.creff)
        } else {
            None
        };
        cfg
    }
}
