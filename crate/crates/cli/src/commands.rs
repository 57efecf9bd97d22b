//! The five workflows behind `quant`.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};

use quant_core::agents::{evaluate, train, StrategyRegistry};
use quant_core::backtest::{baseline_curve, render_table, write_report, yearly_returns, EquityCurve, MetricsReport};
use quant_core::checkpoint::Bundle;
use quant_core::dynamics::EnsembleModel;
use quant_core::env::{EnvSlice, MarketFeatures};
use quant_core::market_data::{
    crash_fixture, drift_fixture, fetch_remote, load_csv, load_series_csv, rank_by_turnover, synthetic_universe,
    FetchOptions, PriceSeries, Universe,
};
use quant_core::rng::{rng_from, stream};
use quant_core::selftest;

use crate::config::{DataSource, RunConfig, SyntheticKind};

pub const CHECKPOINT_FILE: &str = "checkpoint.qckp";
pub const HISTORY_FILE: &str = "history.csv";
pub const EPOCHS_FILE: &str = "epochs.csv";
const CURVES_FILE: &str = "curves.json";
const BASELINE: &str = "baseline";

/// Market data ready for the environment: indicator panel, the traded
/// tickers and the day ranges of each stage.
pub struct Prepared {
    pub features: Arc<MarketFeatures>,
    pub tickers: Vec<String>,
    pub train: Range<usize>,
    pub validation: Option<Range<usize>>,
    pub test: Range<usize>,
    /// Benchmark level per calendar day.
    pub index: Vec<f64>,
}

impl Prepared {
    pub fn slice(&self, range: &Range<usize>) -> anyhow::Result<EnvSlice> {
        Ok(EnvSlice::new(self.features.clone(), range.clone())?)
    }
}

fn load_universe(cfg: &RunConfig) -> anyhow::Result<Universe> {
    let d = &cfg.data;
    let u = match d.source {
        DataSource::Synthetic => {
            let s = &d.synthetic;
            match s.kind {
                SyntheticKind::Gbm => synthetic_universe(s.seed, s.stocks, s.days, s.drift, s.vol)?,
                SyntheticKind::Drift => drift_fixture(s.days, s.drift)?,
                SyntheticKind::Crash => crash_fixture(s.seed)?,
            }
        }
        DataSource::Csv => {
            let path = d.csv.as_ref().ok_or_else(|| anyhow!("data.csv is not set"))?;
            let u = load_csv(path).with_context(|| format!("loading {}", path.display()))?;
            if d.tickers.is_empty() {
                u
            } else {
                u.select_tickers(&d.tickers)?
            }
        }
        DataSource::Cache => {
            let mut series = Vec::new();
            let mut names = d.tickers.clone();
            names.extend(d.index.iter().cloned());
            for t in &names {
                series.push(cached_series(cfg, t)?);
            }
            Universe::from_series(series)?
        }
    };
    Ok(u)
}

fn cached_series(cfg: &RunConfig, ticker: &str) -> anyhow::Result<PriceSeries> {
    let path = cfg.cache_dir().join(format!("{ticker}.csv"));
    if !path.exists() {
        bail!("{} is missing; run `quant fetch` first", path.display());
    }
    let full = load_series_csv(&path)?;
    let bars = full
        .bars
        .into_iter()
        .filter(|b| b.date >= cfg.data.start && b.date <= cfg.data.end)
        .collect();
    Ok(PriceSeries::new(ticker, bars)?)
}

/// Loads the data, selects the traded tickers on the training days and
/// computes indicators over the whole calendar.
pub fn prepare(cfg: &RunConfig) -> anyhow::Result<Prepared> {
    let all = load_universe(cfg)?;
    let index_name = cfg.data.index.clone().filter(|t| all.ticker_index(t).is_some());
    let candidates: Vec<String> = all
        .tickers()
        .iter()
        .filter(|t| Some(*t) != index_name.as_ref())
        .cloned()
        .collect();
    if candidates.is_empty() {
        bail!("no tradable tickers in the dataset");
    }
    let cal = all.calendar().to_vec();
    let n = cal.len();
    let (train, validation, test) = match cfg.split {
        Some(s) => {
            let start = s.train_start.map_or(0, |t| cal.partition_point(|d| *d < t));
            let a = cal.partition_point(|d| *d <= s.train_end);
            let b = cal.partition_point(|d| *d <= s.val_end);
            if a < start + 2 || b < a + 2 || n < b + 2 {
                bail!("split {}/{} leaves a stage with fewer than 2 days", s.train_end, s.val_end);
            }
            (start..a, Some(a..b), b..n)
        }
        None => (0..n, None, 0..n),
    };
    let traded = all.select_tickers(&candidates)?;
    let tickers = match cfg.universe.k {
        Some(k) if k < candidates.len() => {
            let end = match cfg.universe.selection_end {
                Some(t) => cal.partition_point(|d| *d <= t),
                None => train.end,
            };
            if end == 0 {
                bail!("no days before the universe selection date");
            }
            let head = traded.slice_days(0..end)?;
            let window = cfg.universe.turnover_window.min(head.num_days());
            let mut picked = rank_by_turnover(&head, window, k)?;
            picked.sort();
            picked
        }
        _ => candidates,
    };
    let traded = traded.select_tickers(&tickers)?;
    let index = match &index_name {
        Some(t) => all.close.column(all.ticker_index(t).expect("index present")),
        None => equal_weight_index(&traded),
    };
    let features = MarketFeatures::build(&traded, cfg.rsrs)?;
    Ok(Prepared {
        features: Arc::new(features),
        tickers: traded.tickers().to_vec(),
        train,
        validation,
        test,
        index,
    })
}

fn equal_weight_index(u: &Universe) -> Vec<f64> {
    let d = u.num_tickers();
    let first = u.close.row(0).to_vec();
    (0..u.num_days())
        .map(|t| u.close.row(t).iter().zip(&first).map(|(p, p0)| p / p0).sum::<f64>() / d as f64)
        .collect()
}

/// Buy-and-hold benchmark over `range`.
pub fn baseline(prepared: &Prepared, range: &Range<usize>, initial_balance: f64) -> anyhow::Result<EquityCurve> {
    let dates = prepared.features.dates()[range.clone()].to_vec();
    Ok(baseline_curve(dates, &prepared.index[range.clone()], initial_balance)?)
}

/// Tickers fetched and tickers that failed.
#[derive(Debug, Default)]
pub struct FetchSummary {
    pub fetched: Vec<(String, usize)>,
    pub failed: Vec<(String, String)>,
}

pub fn cmd_fetch(cfg: &RunConfig) -> anyhow::Result<FetchSummary> {
    let mut opts = FetchOptions::new(cfg.data.endpoint.clone(), cfg.cache_dir());
    opts.max_attempts = 3;
    let mut names = cfg.data.tickers.clone();
    names.extend(cfg.data.index.iter().cloned());
    if names.is_empty() {
        bail!("data.tickers is empty");
    }
    let mut summary = FetchSummary::default();
    for t in names {
        match fetch_remote(&t, cfg.data.start, cfg.data.end, &opts) {
            Ok(s) => {
                println!("{t:<10} {:>6} rows", s.len());
                summary.fetched.push((t, s.len()));
            }
            Err(e) => {
                println!("{t:<10} failed: {e}");
                summary.failed.push((t, e.to_string()));
            }
        }
    }
    if !summary.failed.is_empty() {
        let names: Vec<&str> = summary.failed.iter().map(|(t, _)| t.as_str()).collect();
        bail!("failed to fetch {}", names.join(", "));
    }
    Ok(summary)
}

/// What one training run produced.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub run: usize,
    pub seed: u64,
    pub dir: PathBuf,
    pub overrides: usize,
    pub validation: Option<MetricsReport>,
}

pub fn cmd_train(cfg: &RunConfig) -> anyhow::Result<Vec<TrainSummary>> {
    let prepared = prepare(cfg)?;
    let registry = StrategyRegistry::with_defaults();
    std::fs::create_dir_all(cfg.variant_dir())?;
    std::fs::write(cfg.variant_dir().join("config.toml"), cfg.to_toml())?;
    let mut out = Vec::new();
    let mut validation_rows = Vec::new();
    for (i, seed) in cfg.run_seeds().into_iter().enumerate() {
        let run = i + 1;
        let outcome = train(&cfg.train, &cfg.env, prepared.slice(&prepared.train)?, seed, &registry)
            .with_context(|| format!("training run {run} (seed {seed})"))?;
        let dir = cfg.run_dir(run);
        std::fs::create_dir_all(&dir)?;
        let mut bundle = outcome.checkpoint(seed, &cfg.train);
        bundle.put_text("tickers", serde_json::to_string(&prepared.tickers)?);
        bundle.save(&dir.join(CHECKPOINT_FILE))?;
        outcome.history.write_csv(&dir.join(HISTORY_FILE))?;
        outcome.history.write_epochs_csv(&dir.join(EPOCHS_FILE))?;
        let overrides = outcome.history.total_overrides();
        let last = outcome.history.epochs.last();
        println!(
            "{} run {run} seed {seed}: {} epochs, final critic loss {}, overrides {overrides}",
            cfg.train.variant,
            outcome.history.epochs.len(),
            last.and_then(|e| e.q_loss).map_or("n/a".into(), |q| format!("{q:.6}")),
        );
        let mut validation = None;
        if let Some(range) = &prepared.validation {
            let mut strategy = outcome.strategy;
            let ev = evaluate(
                strategy.as_mut(),
                &outcome.model,
                prepared.slice(range)?,
                &cfg.env,
                &mut rng_from(seed, stream::EVAL),
            )?;
            let report = MetricsReport::compute(&ev.curve, cfg.metrics.risk_free);
            validation_rows.push((format!("{}/run{run}", cfg.train.variant), report.clone()));
            validation = Some(report);
        }
        out.push(TrainSummary {
            run,
            seed,
            dir,
            overrides,
            validation,
        });
    }
    if !validation_rows.is_empty() {
        println!("validation metrics\n{}", render_table(&validation_rows));
    }
    Ok(out)
}

/// Restores strategy, model and seed from a checkpoint written by `cmd_train`.
pub fn load_checkpoint(
    path: &Path,
    tickers: &[String],
) -> anyhow::Result<(Box<dyn quant_core::agents::Strategy>, EnsembleModel, u64)> {
    let bundle = Bundle::load(path)?;
    let saved: Vec<String> = serde_json::from_str(bundle.text("tickers")?)?;
    if saved != tickers {
        bail!(
            "checkpoint {} was trained on {} tickers {:?}, the test split has {} {:?}",
            path.display(),
            saved.len(),
            saved,
            tickers.len(),
            tickers
        );
    }
    let strategy = StrategyRegistry::with_defaults().restore(&bundle)?;
    let model = EnsembleModel::read_bundle(&bundle, "model/")?;
    let seed = bundle.text("seed")?.parse().context("checkpoint seed")?;
    Ok((strategy, model, seed))
}

/// Per-run rows, the mean row and the baseline row of one variant.
#[derive(Debug, Clone)]
pub struct BacktestSummary {
    pub rows: Vec<(String, MetricsReport)>,
    pub curves: Vec<(String, EquityCurve)>,
    pub dir: PathBuf,
}

pub fn cmd_backtest(cfg: &RunConfig) -> anyhow::Result<BacktestSummary> {
    let prepared = prepare(cfg)?;
    let variant = cfg.train.variant.to_lowercase();
    let rf = cfg.metrics.risk_free;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut reports = Vec::new();
    for run in 1..=cfg.runs {
        let path = cfg.run_dir(run).join(CHECKPOINT_FILE);
        let (mut strategy, model, seed) =
            load_checkpoint(&path, &prepared.tickers).with_context(|| format!("loading {}", path.display()))?;
        let ev = evaluate(
            strategy.as_mut(),
            &model,
            prepared.slice(&prepared.test)?,
            &cfg.env,
            &mut rng_from(seed, stream::EVAL),
        )?;
        let report = MetricsReport::compute(&ev.curve, rf);
        rows.push((format!("{variant}_run{run}"), report.clone()));
        curves.push((format!("{variant}_run{run}"), ev.curve));
        reports.push(report);
    }
    let mean = MetricsReport::mean(&reports).ok_or_else(|| anyhow!("no runs to average"))?;
    rows.push((variant.clone(), mean));
    let base = baseline(&prepared, &prepared.test, cfg.env.initial_balance)?;
    rows.push((BASELINE.into(), MetricsReport::compute(&base, rf)));
    curves.push((BASELINE.into(), base));
    let dir = cfg.variant_dir().join("backtest");
    write_report(&dir, &rows, &curves)?;
    std::fs::write(dir.join(CURVES_FILE), serde_json::to_string(&curves)?)?;
    println!("{}", render_table(&rows));
    Ok(BacktestSummary { rows, curves, dir })
}

/// Combines the backtests of every variant under `out_dir`.
pub fn cmd_report(cfg: &RunConfig) -> anyhow::Result<Vec<(String, MetricsReport)>> {
    let rf = cfg.metrics.risk_free;
    let mut per_variant: BTreeMap<String, Vec<(String, EquityCurve)>> = BTreeMap::new();
    let mut base: Option<EquityCurve> = None;
    let entries = std::fs::read_dir(&cfg.out_dir).with_context(|| format!("reading {}", cfg.out_dir.display()))?;
    for entry in entries {
        let entry = entry?;
        let path = entry.path().join("backtest").join(CURVES_FILE);
        if !path.exists() {
            continue;
        }
        let variant = entry.file_name().to_string_lossy().to_string();
        let curves: Vec<(String, EquityCurve)> = serde_json::from_str(&std::fs::read_to_string(&path)?)
            .with_context(|| format!("parsing {}", path.display()))?;
        for (name, c) in curves {
            if name == BASELINE {
                base.get_or_insert(c);
            } else {
                per_variant.entry(variant.clone()).or_default().push((name, c));
            }
        }
    }
    if per_variant.is_empty() {
        bail!("no backtests under {}; run `quant backtest` first", cfg.out_dir.display());
    }
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for (variant, runs) in &per_variant {
        let reports: Vec<MetricsReport> = runs.iter().map(|(_, c)| MetricsReport::compute(c, rf)).collect();
        if let Some(m) = MetricsReport::mean(&reports) {
            rows.push((variant.clone(), m));
        }
        curves.extend(runs.iter().cloned());
    }
    if let Some(b) = base {
        rows.push((BASELINE.into(), MetricsReport::compute(&b, rf)));
        curves.push((BASELINE.into(), b));
    }
    let dir = cfg.out_dir.join("report");
    write_report(&dir, &rows, &curves)?;
    println!("{}", render_table(&rows));
    for (name, c) in &curves {
        let years: Vec<String> = yearly_returns(c)
            .into_iter()
            .map(|y| {
                format!(
                    "{} {}",
                    y.label,
                    y.annualized_return.map_or("n/a".into(), |r| format!("{:.2}%", 100.0 * r))
                )
            })
            .collect();
        println!("{name}: {}", years.join(", "));
    }
    Ok(rows)
}

/// Runs the embedded oracles; `Ok(false)` when any failed.
pub fn cmd_selftest() -> anyhow::Result<bool> {
    let results = selftest::run_all();
    print!("{}", selftest::render(&results));
    Ok(results.iter().all(|r| r.passed))
}
