//! The TOML run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use quant_core::agents::TrainConfig;
use quant_core::env::EnvConfig;
use quant_core::indicators::RsrsParams;

/// Environment variable overriding `data.cache_dir`.
pub const CACHE_ENV: &str = "QUANT_CACHE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Per-ticker CSVs in the cache directory, filled by `quant fetch`.
    Cache,
    /// One long-format CSV file.
    Csv,
    /// A generated market.
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    /// Geometric Brownian motion on `stocks` tickers.
    Gbm,
    /// One stock rising by exactly `drift` per day.
    Drift,
    /// One stock with an up-trend, a 40% crash and a recovery.
    Crash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub kind: SyntheticKind,
    pub seed: u64,
    pub stocks: usize,
    pub days: usize,
    pub drift: f64,
    pub vol: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::Gbm,
            seed: 1,
            stocks: 3,
            days: 500,
            drift: 0.0005,
            vol: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Candidate tickers (cache source) before turnover selection.
    pub tickers: Vec<String>,
    /// Benchmark ticker; without one the baseline is the equal-weight
    /// buy-and-hold of the traded universe.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<String>,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub endpoint: String,
    pub cache_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            tickers: Vec::new(),
            index: None,
            start: NaiveDate::from_ymd_opt(2009, 1, 1).expect("valid date"),
            end: NaiveDate::from_ymd_opt(2021, 7, 3).expect("valid date"),
            endpoint: "https://query1.finance.yahoo.com/v7/finance/download".into(),
            cache_dir: PathBuf::from("data/cache"),
            csv: None,
            synthetic: SyntheticConfig::default(),
        }
    }
}

/// Train / validation / test boundaries (inclusive ends).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// First training day; earlier days only feed indicator warm-up and
    /// universe selection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_start: Option<NaiveDate>,
    pub train_end: NaiveDate,
    pub val_end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UniverseConfig {
    /// Number of lowest-turnover tickers to trade; all when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub turnover_window: usize,
    /// Turnover is ranked on the `turnover_window` days up to this date
    /// (default: the end of the training days).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection_end: Option<NaiveDate>,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        Self {
            k: None,
            turnover_window: 60,
            selection_end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// Annual risk-free rate for the Sharpe ratio.
    pub risk_free: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { risk_free: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed of run 1; run `r` uses `seed + r − 1`.
    pub seed: u64,
    /// Number of independently seeded training runs.
    pub runs: usize,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    /// Without a split every stage uses the whole calendar.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitConfig>,
    pub universe: UniverseConfig,
    pub rsrs: RsrsParams,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            runs: 1,
            out_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            split: None,
            universe: UniverseConfig::default(),
            rsrs: RsrsParams::default(),
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.runs == 0 {
            bail!("runs must be >= 1");
        }
        if self.rsrs.l < 2 || self.rsrs.m < 2 {
            bail!("rsrs windows must be >= 2");
        }
        if let Some(s) = self.split {
            if s.train_end >= s.val_end {
                bail!("split.train_end must precede split.val_end");
            }
            if s.train_start.is_some_and(|t| t >= s.train_end) {
                bail!("split.train_start must precede split.train_end");
            }
        }
        if self.data.start > self.data.end {
            bail!("data.start must not follow data.end");
        }
        if self.universe.k == Some(0) {
            bail!("universe.k must be >= 1");
        }
        if self.data.source == DataSource::Csv && self.data.csv.is_none() {
            bail!("data.csv is required for the csv source");
        }
        if self.data.source == DataSource::Cache && self.data.tickers.is_empty() {
            bail!("data.tickers is required for the cache source");
        }
        self.env.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Master seeds of all runs in order.
    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|r| self.seed.wrapping_add(r)).collect()
    }

    /// Cache directory after the environment override.
    pub fn cache_dir(&self) -> PathBuf {
        std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.data.cache_dir.clone())
    }

    /// Output directory of one variant.
    pub fn variant_dir(&self) -> PathBuf {
        self.out_dir.join(self.train.variant.to_lowercase())
    }

    pub fn run_dir(&self, run: usize) -> PathBuf {
        self.variant_dir().join(format!("run{run}"))
    }
}
