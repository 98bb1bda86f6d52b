//! Experiment configuration, read from TOML.
//!
//! Unknown keys are rejected everywhere. A minimal synthetic config:
//!
//! ```toml
//! seed = 0
//! methods = ["vfl_spurious", "less_vfl"]
//!
//! [data.synthetic]
//! parties = 2
//! significant_per_party = 10
//! spurious_per_party = 5
//!
//! [less_vfl]
//! pretrain_epochs = 10
//! server_lambda = { scale = 0.05 }
//! party_lambda = { scale = 0.2 }
//! ```
//!
//! Regularization strengths are either a literal (`0.01`) or
//! `{ scale = c }`, meaning `c · N^(-1/4)` with `N` the number of training
//! samples.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{PartitionSpec, SyntheticSpec, Task};
use crate::error::{Error, Result};
use crate::metrics::TargetSpec;
use crate::nn::{Activation, LossKind, OptimizerConfig};
use crate::selectors::{nonnegative, positive};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    VflOriginal,
    VflSpurious,
    GroupLasso,
    LocalLasso,
    LessVfl,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::VflOriginal,
        Method::VflSpurious,
        Method::GroupLasso,
        Method::LocalLasso,
        Method::LessVfl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::VflOriginal => "vfl_original",
            Method::VflSpurious => "vfl_spurious",
            Method::GroupLasso => "group_lasso",
            Method::LocalLasso => "local_lasso",
            Method::LessVfl => "less_vfl",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("methods", format!("unknown method {s:?}")))
    }
}

/// A regularization coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegStrength {
    Value(f64),
    Scaled { scale: f64 },
}

impl RegStrength {
    pub fn resolve(self, n_train: usize) -> f64 {
        match self {
            RegStrength::Value(v) => v,
            RegStrength::Scaled { scale } => scale * (n_train as f64).powf(-0.25),
        }
    }

    fn check(self, field: &str) -> Result<()> {
        match self {
            RegStrength::Value(v) => nonnegative(field, v),
            RegStrength::Scaled { scale } => nonnegative(field, scale),
        }
    }
}

impl Default for RegStrength {
    fn default() -> Self {
        RegStrength::Value(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub label_column: String,
    #[serde(default = "yes")]
    pub has_header: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvSource>,
    /// Noise columns appended to CSV data, as a fraction of its width.
    #[serde(default = "half")]
    pub spurious_ratio: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// z-score every column with training-split statistics. Defaults to on
    /// for CSV data and off for synthetic data (already standard normal).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardize: Option<bool>,
}

fn half() -> f64 {
    0.5
}
fn default_train_fraction() -> f64 {
    0.8
}

impl DataConfig {
    pub fn standardize(&self) -> bool {
        self.standardize.unwrap_or(self.csv.is_some())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_party_hidden")]
    pub party_hidden: Vec<usize>,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default)]
    pub server_hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Defaults from the synthetic task; required for CSV data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
}

fn default_party_hidden() -> Vec<usize> {
    vec![8, 8]
}
fn default_embedding_dim() -> usize {
    4
}
fn default_activation() -> Activation {
    Activation::Tanh
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            party_hidden: default_party_hidden(),
            embedding_dim: default_embedding_dim(),
            server_hidden: Vec::new(),
            activation: default_activation(),
            loss: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Communication-epoch budget of every method.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerConfig,
}

fn default_batch_size() -> usize {
    128
}
fn default_epochs() -> usize {
    150
}
fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig::adam(0.01)
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            optimizer: default_optimizer(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LessVflParams {
    #[serde(default = "default_pretrain")]
    pub pretrain_epochs: usize,
    #[serde(default)]
    pub server_lambda: RegStrength,
    #[serde(default = "default_psgd_lr")]
    pub server_learning_rate: f64,
    #[serde(default = "default_local_epochs")]
    pub stage2_epochs: usize,
    #[serde(default)]
    pub party_lambda: RegStrength,
    #[serde(default = "default_psgd_lr")]
    pub party_learning_rate: f64,
    #[serde(default = "default_local_epochs")]
    pub stage3_epochs: usize,
    /// Mini-batch size of Stages 2 and 3; defaults to `training.batch_size`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_batch_size: Option<usize>,
    /// Defaults to the remaining communication budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine_epochs: Option<usize>,
    #[serde(default)]
    pub prune_components: bool,
    #[serde(default)]
    pub parallel_parties: bool,
}

fn default_pretrain() -> usize {
    10
}
fn default_psgd_lr() -> f64 {
    0.01
}
fn default_local_epochs() -> usize {
    150
}

impl Default for LessVflParams {
    fn default() -> Self {
        LessVflParams {
            pretrain_epochs: default_pretrain(),
            server_lambda: RegStrength::default(),
            server_learning_rate: default_psgd_lr(),
            stage2_epochs: default_local_epochs(),
            party_lambda: RegStrength::default(),
            party_learning_rate: default_psgd_lr(),
            stage3_epochs: default_local_epochs(),
            local_batch_size: None,
            refine_epochs: None,
            prune_components: false,
            parallel_parties: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalLassoParams {
    #[serde(default = "default_pretrain")]
    pub pretrain_epochs: usize,
    #[serde(default)]
    pub party_lambda: RegStrength,
    #[serde(default = "default_psgd_lr")]
    pub party_learning_rate: f64,
    #[serde(default = "default_local_epochs")]
    pub stage3_epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine_epochs: Option<usize>,
    #[serde(default)]
    pub parallel_parties: bool,
}

impl Default for LocalLassoParams {
    fn default() -> Self {
        LocalLassoParams {
            pretrain_epochs: default_pretrain(),
            party_lambda: RegStrength::default(),
            party_learning_rate: default_psgd_lr(),
            stage3_epochs: default_local_epochs(),
            local_batch_size: None,
            refine_epochs: None,
            parallel_parties: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupLassoParams {
    #[serde(default)]
    pub lambda: RegStrength,
    #[serde(default = "default_psgd_lr")]
    pub learning_rate: f64,
    /// Defaults to `training.batch_size`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

impl Default for GroupLassoParams {
    fn default() -> Self {
        GroupLassoParams {
            lambda: RegStrength::default(),
            learning_rate: default_psgd_lr(),
            batch_size: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub server_lambdas: Vec<RegStrength>,
    #[serde(default)]
    pub party_lambdas: Vec<RegStrength>,
    #[serde(default)]
    pub pretrain_epochs: Vec<usize>,
    /// Master seeds averaged per row; defaults to the config seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionSpec>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub less_vfl: LessVflParams,
    #[serde(default)]
    pub local_lasso: LocalLassoParams,
    #[serde(default)]
    pub group_lasso: GroupLassoParams,
    #[serde(default)]
    pub targets: TargetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    /// Run the methods of a suite on separate threads.
    #[serde(default)]
    pub parallel_methods: bool,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Loss for this data source.
    pub fn loss(&self) -> Result<LossKind> {
        if let Some(l) = self.model.loss {
            return Ok(l);
        }
        match &self.data.synthetic {
            Some(s) if s.task == Task::Classification => Ok(LossKind::SoftmaxCrossEntropy),
            Some(_) => Ok(LossKind::SquaredError),
            None => Err(Error::config("model.loss", "required for CSV data")),
        }
    }

    pub fn parties(&self) -> Option<usize> {
        match (&self.partition, &self.data.synthetic) {
            (Some(p), _) => Some(p.parties()),
            (None, Some(s)) => Some(s.parties),
            (None, None) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.synthetic, &self.data.csv) {
            (Some(s), None) => s.validate()?,
            (None, Some(_)) => {
                if self.partition.is_none() {
                    return Err(Error::config("partition", "required for CSV data"));
                }
            }
            _ => {
                return Err(Error::config(
                    "data",
                    "set exactly one of [data.synthetic] or [data.csv]",
                ))
            }
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(Error::config("data.train_fraction", "must lie strictly between 0 and 1"));
        }
        nonnegative("data.spurious_ratio", self.data.spurious_ratio)?;
        if self.methods.is_empty() {
            return Err(Error::config("methods", "list at least one method"));
        }
        self.loss()?;
        if self.model.embedding_dim == 0
            || self.model.party_hidden.contains(&0)
            || self.model.server_hidden.contains(&0)
        {
            return Err(Error::config("model", "layer widths must be positive"));
        }
        if self.training.batch_size == 0
            || self.less_vfl.local_batch_size == Some(0)
            || self.local_lasso.local_batch_size == Some(0)
            || self.group_lasso.batch_size == Some(0)
        {
            return Err(Error::config("training.batch_size", "must be positive"));
        }
        self.training.optimizer.validate("training.optimizer")?;

        let lv = &self.less_vfl;
        if lv.pretrain_epochs == 0 {
            return Err(Error::config("less_vfl.pretrain_epochs", "must be at least 1"));
        }
        lv.server_lambda.check("less_vfl.server_lambda")?;
        lv.party_lambda.check("less_vfl.party_lambda")?;
        positive("less_vfl.server_learning_rate", lv.server_learning_rate)?;
        positive("less_vfl.party_learning_rate", lv.party_learning_rate)?;

        let ll = &self.local_lasso;
        if ll.pretrain_epochs == 0 {
            return Err(Error::config("local_lasso.pretrain_epochs", "must be at least 1"));
        }
        ll.party_lambda.check("local_lasso.party_lambda")?;
        positive("local_lasso.party_learning_rate", ll.party_learning_rate)?;

        self.group_lasso.lambda.check("group_lasso.lambda")?;
        positive("group_lasso.learning_rate", self.group_lasso.learning_rate)?;
        self.targets.validate()?;

        if let Some(grid) = &self.grid {
            for l in grid.server_lambdas.iter().chain(&grid.party_lambdas) {
                l.check("grid lambdas")?;
            }
            if grid.pretrain_epochs.contains(&0) {
                return Err(Error::config("grid.pretrain_epochs", "must be at least 1"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 3
        methods = ["vfl_spurious", "less_vfl"]
        [data.synthetic]
        parties = 2
        significant_per_party = 10
        spurious_per_party = 5
        [less_vfl]
        pretrain_epochs = 4
        server_lambda = { scale = 0.05 }
        party_lambda = 0.02
    "#;

    #[test]
    fn parses_minimal_synthetic() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.methods, vec![Method::VflSpurious, Method::LessVfl]);
        assert_eq!(cfg.less_vfl.server_lambda, RegStrength::Scaled { scale: 0.05 });
        assert_eq!(cfg.less_vfl.party_lambda, RegStrength::Value(0.02));
        assert_eq!(cfg.loss().unwrap(), LossKind::SquaredError);
        assert_eq!(cfg.training.batch_size, 128);
        assert_eq!(cfg.training.optimizer, OptimizerConfig::adam(0.01));
        assert_eq!(cfg.model.party_hidden, vec![8, 8]);
    }

    #[test]
    fn round_trips_through_toml_and_json() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn scaled_lambda() {
        let l = RegStrength::Scaled { scale: 2.0 }.resolve(10_000);
        assert!((l - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rejects_unknown_keys_and_methods() {
        let unknown = MINIMAL.replace("seed = 3", "seed = 3\nbogus = 1");
        assert!(ExperimentConfig::from_toml_str(&unknown).is_err());
        let method = MINIMAL.replace("\"less_vfl\"]", "\"magic\"]");
        assert!(ExperimentConfig::from_toml_str(&method).is_err());
        assert!("magic".parse::<Method>().is_err());
    }

    #[test]
    fn negative_lambda_names_field() {
        let bad = MINIMAL.replace("party_lambda = 0.02", "party_lambda = -0.02");
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err();
        assert!(err.to_string().contains("less_vfl.party_lambda"), "{err}");
    }

    #[test]
    fn csv_requires_partition_and_loss() {
        let text = r#"
            methods = ["vfl_original"]
            [data.csv]
            path = "x.csv"
            label_column = "y"
        "#;
        assert!(ExperimentConfig::from_toml_str(text).is_err());
        let with = format!(
            "{text}\n[partition.scheme.even_contiguous]\nparties = 2\n"
        );
        let with = with.replace("methods = [\"vfl_original\"]", "methods = [\"vfl_original\"]\n[model]\nloss = \"softmax_cross_entropy\"");
        let cfg = ExperimentConfig::from_toml_str(&with).unwrap();
        assert!(cfg.data.standardize());
        assert_eq!(cfg.parties(), Some(2));
    }
}
