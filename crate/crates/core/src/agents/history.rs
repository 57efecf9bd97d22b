//! Per-step training log and its CSV form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AgentError;

/// One real environment step of training. Optional fields are blank in CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub step: usize,
    pub q_loss: Option<f64>,
    pub pi_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub model_holdout_nll: Option<f64>,
    pub env_reward: f64,
    /// Mean normalised action proposed by the strategy.
    pub action_mean: f64,
    /// Mean executed shares per stock.
    pub executed_mean: f64,
    /// Stocks whose order was forced by an RSRS signal.
    pub overrides: usize,
    /// Absolute one-step model error on the balance (currency).
    pub model_err_balance: Option<f64>,
    /// Mean absolute one-step model error on holdings (shares).
    pub model_err_holdings: Option<f64>,
    pub rollouts_kept: usize,
    pub updates: usize,
}

/// Per-epoch means of the step rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub q_loss: Option<f64>,
    pub pi_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub model_holdout_nll: Option<f64>,
    pub model_holdout_mse: Option<f64>,
    pub mean_reward: f64,
    pub mean_executed: f64,
    pub overrides: usize,
    pub model_err_balance: Option<f64>,
    pub model_err_holdings: Option<f64>,
    pub updates: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub rows: Vec<HistoryRow>,
    pub epochs: Vec<EpochSummary>,
}

fn mean_of(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = vals.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

const HEADER: [&str; 14] = [
    "epoch",
    "step",
    "q_loss",
    "pi_loss",
    "entropy",
    "model_holdout_nll",
    "env_reward",
    "action_mean",
    "executed_mean",
    "overrides",
    "model_err_balance",
    "model_err_holdings",
    "rollouts_kept",
    "updates",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> AgentError {
    AgentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl History {
    /// Summarises the rows of `epoch` (holdout MSE is supplied by the caller).
    pub fn summarize_epoch(&self, epoch: usize, model_holdout_mse: Option<f64>) -> EpochSummary {
        let rows: Vec<&HistoryRow> = self.rows.iter().filter(|r| r.epoch == epoch).collect();
        let n = rows.len().max(1) as f64;
        EpochSummary {
            epoch,
            q_loss: mean_of(rows.iter().map(|r| r.q_loss)),
            pi_loss: mean_of(rows.iter().map(|r| r.pi_loss)),
            entropy: mean_of(rows.iter().map(|r| r.entropy)),
            model_holdout_nll: rows.first().and_then(|r| r.model_holdout_nll),
            model_holdout_mse,
            mean_reward: rows.iter().map(|r| r.env_reward).sum::<f64>() / n,
            mean_executed: rows.iter().map(|r| r.executed_mean).sum::<f64>() / n,
            overrides: rows.iter().map(|r| r.overrides).sum(),
            model_err_balance: mean_of(rows.iter().map(|r| r.model_err_balance)),
            model_err_holdings: mean_of(rows.iter().map(|r| r.model_err_holdings)),
            updates: rows.iter().map(|r| r.updates).sum(),
        }
    }

    pub fn total_overrides(&self) -> usize {
        self.rows.iter().map(|r| r.overrides).sum()
    }

    /// Writes the per-step log. The first seven columns are
    /// `epoch,step,q_loss,pi_loss,entropy,model_holdout_nll,env_reward`.
    pub fn write_csv(&self, path: &Path) -> Result<(), AgentError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(HEADER).map_err(|e| csv_err(path, e))?;
        for r in &self.rows {
            w.write_record([
                r.epoch.to_string(),
                r.step.to_string(),
                opt(r.q_loss),
                opt(r.pi_loss),
                opt(r.entropy),
                opt(r.model_holdout_nll),
                r.env_reward.to_string(),
                r.action_mean.to_string(),
                r.executed_mean.to_string(),
                r.overrides.to_string(),
                opt(r.model_err_balance),
                opt(r.model_err_holdings),
                r.rollouts_kept.to_string(),
                r.updates.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| csv_err(path, e))
    }

    /// Reads a log written by [`write_csv`](Self::write_csv); epoch
    /// summaries are recomputed (without holdout MSE).
    pub fn read_csv(path: &Path) -> Result<Self, AgentError> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let get = |i: usize| rec.get(i).unwrap_or("");
            let f = |i: usize| -> Result<Option<f64>, AgentError> {
                let s = get(i);
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|e| csv_err(path, format!("column {}: {e}", HEADER[i])))
                }
            };
            let u = |i: usize| -> Result<usize, AgentError> {
                get(i).parse().map_err(|e| csv_err(path, format!("column {}: {e}", HEADER[i])))
            };
            rows.push(HistoryRow {
                epoch: u(0)?,
                step: u(1)?,
                q_loss: f(2)?,
                pi_loss: f(3)?,
                entropy: f(4)?,
                model_holdout_nll: f(5)?,
                env_reward: f(6)?.unwrap_or(f64::NAN),
                action_mean: f(7)?.unwrap_or(f64::NAN),
                executed_mean: f(8)?.unwrap_or(f64::NAN),
                overrides: u(9)?,
                model_err_balance: f(10)?,
                model_err_holdings: f(11)?,
                rollouts_kept: u(12)?,
                updates: u(13)?,
            });
        }
        let mut h = History { rows, epochs: Vec::new() };
        let mut epochs: Vec<usize> = h.rows.iter().map(|r| r.epoch).collect();
        epochs.dedup();
        h.epochs = epochs.into_iter().map(|e| h.summarize_epoch(e, None)).collect();
        Ok(h)
    }

    /// Writes one line per epoch summary.
    pub fn write_epochs_csv(&self, path: &Path) -> Result<(), AgentError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record([
            "epoch",
            "q_loss",
            "pi_loss",
            "entropy",
            "model_holdout_nll",
            "model_holdout_mse",
            "mean_reward",
            "mean_executed",
            "overrides",
            "model_err_balance",
            "model_err_holdings",
            "updates",
        ])
        .map_err(|e| csv_err(path, e))?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                opt(e.q_loss),
                opt(e.pi_loss),
                opt(e.entropy),
                opt(e.model_holdout_nll),
                opt(e.model_holdout_mse),
                e.mean_reward.to_string(),
                e.mean_executed.to_string(),
                e.overrides.to_string(),
                opt(e.model_err_balance),
                opt(e.model_err_holdings),
                e.updates.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| csv_err(path, e))
    }
}
