use std::collections::BTreeSet;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde_json::{Map, Value};

use super::{annualized_return, EquityCurve, MetricError, MetricsReport};

/// Formats `x` with six significant digits, without exponent where
/// practical.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{}", if x == 0.0 { 0.0 } else { x });
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = 5 - magnitude;
    if (0..=12).contains(&decimals) {
        let s = format!("{:.*}", decimals as usize, x);
        // Rounding can carry into a new digit (9.999996 → 10.00000).
        if s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len() > 6 && decimals > 0 {
            return format!("{:.*}", decimals as usize - 1, x);
        }
        s
    } else if decimals < 0 && magnitude < 15 {
        let p = 10f64.powi(-decimals);
        format!("{}", (x / p).round() * p)
    } else {
        format!("{x:.5e}")
    }
}

fn json_number(x: Option<f64>) -> Value {
    match x {
        Some(v) => format_sig6(v)
            .parse::<f64>()
            .ok()
            .and_then(serde_json::Number::from_f64)
            .map_or_else(|| Value::String("n/a".into()), Value::Number),
        None => Value::String("n/a".into()),
    }
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), format_sig6)
}

/// Annualised return over one July-to-July window.
#[derive(Debug, Clone, PartialEq)]
pub struct YearlyRow {
    /// `"YYYY-YYYY"`, the window starting on July 1 of the first year.
    pub label: String,
    pub annualized_return: Option<f64>,
}

fn window_start_year(d: NaiveDate) -> i32 {
    if d.month() >= 7 {
        d.year()
    } else {
        d.year() - 1
    }
}

/// Per-window annualised returns. Each window is chained to the last asset
/// value before it, so consecutive windows cover every return exactly once.
pub fn yearly_returns(curve: &EquityCurve) -> Vec<YearlyRow> {
    let mut rows = Vec::new();
    let mut i = 0;
    while i < curve.len() {
        let year = window_start_year(curve.dates[i]);
        let mut j = i;
        while j + 1 < curve.len() && window_start_year(curve.dates[j + 1]) == year {
            j += 1;
        }
        let base = i.saturating_sub(1);
        rows.push(YearlyRow {
            label: format!("{}-{}", year, year + 1),
            annualized_return: annualized_return(&curve.assets[base..=j]).ok(),
        });
        i = j + 1;
    }
    rows
}

/// Plain-text metrics table; undefined cells read `n/a`.
pub fn render_table(rows: &[(String, MetricsReport)]) -> String {
    let names: Vec<&str> = MetricsReport::values(&rows.first().map_or_else(empty_report, |r| r.1.clone()))
        .iter()
        .map(|(n, _)| *n)
        .collect();
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(8).max(8);
    let mut out = format!("{:<width$}", "strategy");
    for n in &names {
        out.push_str(&format!(" {n:>21}"));
    }
    out.push('\n');
    for (name, r) in rows {
        out.push_str(&format!("{name:<width$}"));
        for (_, v) in r.values() {
            out.push_str(&format!(" {:>21}", cell(v)));
        }
        out.push('\n');
    }
    out
}

fn empty_report() -> MetricsReport {
    MetricsReport {
        annualized_return: None,
        cumulative_return: None,
        annualized_volatility: None,
        sharpe: None,
        calmar: None,
        stability: None,
        max_drawdown: None,
        start: None,
        end: None,
        periods: 0,
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> MetricError {
    MetricError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes `metrics.json`, `equity_<name>.csv` per curve and `yearly.csv`
/// into `dir`. `curves` pairs each name with its curve (if any) and report.
pub fn write_report(
    dir: &Path,
    rows: &[(String, MetricsReport)],
    curves: &[(String, EquityCurve)],
) -> Result<(), MetricError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let mut root = Map::new();
    for (name, r) in rows {
        let mut m = Map::new();
        for (k, v) in r.values() {
            m.insert(k.to_string(), json_number(v));
        }
        let date = |d: Option<NaiveDate>| d.map_or(Value::Null, |d| Value::String(d.to_string()));
        m.insert("start".into(), date(r.start));
        m.insert("end".into(), date(r.end));
        m.insert("periods".into(), Value::from(r.periods));
        root.insert(name.clone(), Value::Object(m));
    }
    let path = dir.join("metrics.json");
    let text = serde_json::to_string_pretty(&Value::Object(root)).map_err(|e| io_err(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;

    for (name, c) in curves {
        let path = dir.join(format!("equity_{name}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        w.write_record(["date", "asset", "reward", "cost"]).map_err(|e| io_err(&path, e))?;
        for t in 0..c.len() {
            let step = |v: &[f64]| {
                if t == 0 || v.is_empty() {
                    String::new()
                } else {
                    format_sig6(v[t - 1])
                }
            };
            w.write_record([
                c.dates[t].to_string(),
                format_sig6(c.assets[t]),
                step(&c.rewards),
                step(&c.costs),
            ])
            .map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }

    let yearly: Vec<(String, Vec<YearlyRow>)> =
        curves.iter().map(|(n, c)| (n.clone(), yearly_returns(c))).collect();
    let labels: BTreeSet<String> = yearly
        .iter()
        .flat_map(|(_, rows)| rows.iter().map(|r| r.label.clone()))
        .collect();
    let path = dir.join("yearly.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
    let mut header = vec!["strategy".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header).map_err(|e| io_err(&path, e))?;
    for (name, rows) in &yearly {
        let mut rec = vec![name.clone()];
        for l in &labels {
            let v = rows.iter().find(|r| &r.label == l).and_then(|r| r.annualized_return);
            rec.push(cell(v));
        }
        w.write_record(&rec).map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_sig6(1.19560123), "1.19560");
        assert_eq!(format_sig6(0.000123456789), "0.000123457");
        assert_eq!(format_sig6(-25.0), "-25.0000");
        assert_eq!(format_sig6(1234567.0), "1234570");
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(9.9999996), "10.0000");
    }

    #[test]
    fn july_windows() {
        let dates = vec![
            NaiveDate::from_ymd_opt(2018, 7, 2).unwrap(),
            NaiveDate::from_ymd_opt(2019, 6, 28).unwrap(),
            NaiveDate::from_ymd_opt(2019, 7, 1).unwrap(),
            NaiveDate::from_ymd_opt(2019, 7, 2).unwrap(),
        ];
        let c = EquityCurve::new(dates, vec![100.0, 110.0, 121.0, 121.0]).unwrap();
        let rows = yearly_returns(&c);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].label, "2018-2019");
        assert_eq!(rows[1].label, "2019-2020");
        let second = (121.0f64 / 110.0).powf(252.0 / 2.0) - 1.0;
        assert!((rows[1].annualized_return.unwrap() - second).abs() < 1e-9);
    }

    #[test]
    fn flat_curve_renders_na() {
        let d = |n| NaiveDate::from_ymd_opt(2020, 1, n).unwrap();
        let c = EquityCurve::new(vec![d(1), d(2), d(3)], vec![5.0; 3]).unwrap();
        let r = MetricsReport::compute(&c, 0.0);
        let table = render_table(&[("flat".into(), r)]);
        assert!(table.contains("n/a"));
    }
}
