//! Run configuration, read from TOML or JSON and written verbatim next to
//! every run's outputs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{CsLosses, Schedule, TrainingConfig};
use crate::corpus::ExclusiveScope;
use crate::error::{Error, Result};
use crate::model::{LossConfig, SignConvention};
use crate::similarity::{Metric, SimilarityConfig};

/// Confident-set percentage: fixed, or derived from the weak-seed ratios.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RValue", into = "RValue")]
pub enum RSetting {
    #[default]
    Auto,
    Fixed(u32),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RValue {
    Number(u32),
    Text(String),
}

impl TryFrom<RValue> for RSetting {
    type Error = Error;

    fn try_from(v: RValue) -> Result<Self> {
        match v {
            RValue::Number(n) => RSetting::fixed(n),
            RValue::Text(s) => s.parse(),
        }
    }
}

impl From<RSetting> for RValue {
    fn from(r: RSetting) -> Self {
        match r {
            RSetting::Auto => RValue::Text("auto".into()),
            RSetting::Fixed(n) => RValue::Number(n),
        }
    }
}

impl RSetting {
    fn fixed(n: u32) -> Result<Self> {
        if n == 0 || n > 100 {
            return Err(Error::Config(format!("r must be in 1..=100, got {n}")));
        }
        Ok(RSetting::Fixed(n))
    }
}

impl FromStr for RSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(RSetting::Auto);
        }
        let n = s
            .parse()
            .map_err(|_| Error::Config(format!("r must be 'auto' or a percentage, got '{s}'")))?;
        RSetting::fixed(n)
    }
}

impl fmt::Display for RSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RSetting::Auto => f.write_str("auto"),
            RSetting::Fixed(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub taxonomy: PathBuf,
    pub corpus: PathBuf,
    pub passages: PathBuf,
    /// Prototypes built from surface names and glosses.
    pub prototypes: PathBuf,
    /// Prototypes built from surface names only, used with `no_gloss`.
    pub plain_prototypes: Option<PathBuf>,
    pub output: PathBuf,

    pub metric: Metric,
    pub k: usize,
    pub gamma: f64,
    pub sigma: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub r: RSetting,
    pub warmup_epochs: usize,
    pub bootstrap_epochs: usize,
    pub seed: u64,

    pub mapping_free: bool,
    pub no_select: bool,
    pub no_bootstrap: bool,
    pub no_gloss: bool,
    pub cs_losses: CsLosses,
    pub paper_literal_sign: bool,
    pub exclusive_scope: ExclusiveScope,
    pub strict_beta: bool,
    pub emit_confusion: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        let schedule = Schedule::default();
        let similarity = SimilarityConfig::default();
        RunConfig {
            taxonomy: PathBuf::new(),
            corpus: PathBuf::new(),
            passages: PathBuf::new(),
            prototypes: PathBuf::new(),
            plain_prototypes: None,
            output: PathBuf::new(),
            metric: similarity.metric,
            k: similarity.k,
            gamma: loss.gamma,
            sigma: loss.sigma,
            lr: loss.lr,
            weight_decay: loss.weight_decay,
            batch_size: loss.batch_size,
            r: RSetting::Auto,
            warmup_epochs: schedule.warmup_epochs,
            bootstrap_epochs: schedule.bootstrap_epochs,
            seed: 0,
            mapping_free: false,
            no_select: false,
            no_bootstrap: false,
            no_gloss: false,
            cs_losses: CsLosses::Both,
            paper_literal_sign: false,
            exclusive_scope: ExclusiveScope::Candidates,
            strict_beta: false,
            emit_confusion: false,
        }
    }
}

impl RunConfig {
    /// Reads a config file; `.json` is parsed as JSON, anything else as TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            Ok(serde_json::from_str(&text)?)
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The prototype file this run reads.
    pub fn prototype_path(&self) -> Result<&Path> {
        if self.no_gloss {
            self.plain_prototypes.as_deref().ok_or_else(|| {
                Error::Config("no_gloss needs plain_prototypes (surface-name-only prototypes)".into())
            })
        } else {
            Ok(&self.prototypes)
        }
    }

    /// Checks value ranges and that every input file exists.
    pub fn validate(&self) -> Result<()> {
        self.training(1)?;
        let inputs = [
            ("taxonomy", &self.taxonomy),
            ("corpus", &self.corpus),
            ("passages", &self.passages),
        ];
        for (name, path) in inputs.into_iter().chain([("prototypes", &self.prototype_path()?.to_path_buf())]) {
            if path.as_os_str().is_empty() {
                return Err(Error::Config(format!("missing path for {name}")));
            }
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "{name} file not found: {}",
                    path.display()
                )));
            }
        }
        if self.output.as_os_str().is_empty() {
            return Err(Error::Config("missing output directory".into()));
        }
        Ok(())
    }

    /// Training settings with the confident-set percentage resolved to `r_percent`.
    pub fn training(&self, r_percent: u32) -> Result<TrainingConfig> {
        let config = TrainingConfig {
            loss: LossConfig {
                gamma: self.gamma,
                sigma: self.sigma,
                batch_size: self.batch_size,
                lr: self.lr,
                weight_decay: self.weight_decay,
            },
            similarity: SimilarityConfig {
                metric: self.metric,
                k: self.k,
            },
            schedule: Schedule {
                warmup_epochs: self.warmup_epochs,
                bootstrap_epochs: if self.no_bootstrap { 0 } else { self.bootstrap_epochs },
            },
            r_percent,
            seed: self.seed,
            mapping_free: self.mapping_free,
            no_select: self.no_select,
            cs_losses: self.cs_losses,
            sign: if self.paper_literal_sign {
                SignConvention::PositiveFirst
            } else {
                SignConvention::IntentConsistent
            },
            strict_beta: self.strict_beta,
        };
        config.loss.validate()?;
        if config.similarity.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(config)
    }
}
