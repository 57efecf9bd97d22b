use chrono::{Duration, NaiveDate};
use proptest::prelude::*;
use quant_core::backtest::{
    annualized_return, annualized_volatility, baseline_curve, calmar, cumulative_return, daily_returns,
    max_drawdown, render_table, sharpe, stability, write_report, EquityCurve, MetricError, MetricsReport,
};
use quant_core::rng::rng_from;
use rand::Rng as _;

fn dates(n: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    (0..n).map(|i| start + Duration::days(i as i64)).collect()
}

/// O(n²) drawdown over every ordered pair.
fn brute_drawdown(a: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.len() {
        for j in i..a.len() {
            worst = worst.min(a[j] / a[i] - 1.0);
        }
    }
    worst
}

fn random_curve(rng: &mut quant_core::rng::Rng, n: usize) -> Vec<f64> {
    let mut a = vec![100.0];
    for _ in 1..n {
        let last = *a.last().unwrap();
        a.push(last * (1.0 + rng.random_range(-0.05..0.05)));
    }
    a
}

#[test]
fn drawdown_matches_brute_force() {
    assert_eq!(max_drawdown(&[100.0, 120.0, 90.0, 130.0]).unwrap(), -0.25);
    let mut rng = rng_from(1, 0);
    for _ in 0..1000 {
        let n = rng.random_range(1..80);
        let a = random_curve(&mut rng, n);
        let fast = max_drawdown(&a).unwrap();
        assert!((fast - brute_drawdown(&a)).abs() < 1e-12);
        assert!((-1.0..=0.0).contains(&fast));
    }
}

#[test]
fn return_metrics_match_closed_forms() {
    let a: Vec<f64> = (0..=10).map(|i| 100.0 * 1.01f64.powi(i)).collect();
    let want = 1.01f64.powf(252.0) - 1.0;
    assert!((annualized_return(&a).unwrap() - want).abs() < 1e-9 * want);
    assert!((cumulative_return(&a).unwrap() - (1.01f64.powi(10) - 1.0)).abs() < 1e-12);
    for r in daily_returns(&a).unwrap() {
        assert!((r - 0.01).abs() < 1e-12);
    }
    let flat = [7.0; 5];
    assert_eq!(annualized_return(&flat).unwrap(), 0.0);
    assert!(matches!(daily_returns(&[1.0, -1.0]), Err(MetricError::NonPositive { index: 1, .. })));
}

#[test]
fn volatility_and_sharpe_match_two_pass_oracle() {
    let mut rng = rng_from(2, 0);
    let r: Vec<f64> = (0..300).map(|_| rng.random_range(-0.03..0.04)).collect();
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let sd = (r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let vol = annualized_volatility(&r).unwrap();
    assert!((vol - sd * 252f64.sqrt()).abs() < 1e-12);
    let rf = 0.02;
    let want = (mean - rf / 252.0) * 252.0 / vol;
    assert!((sharpe(&r, rf).unwrap() - want).abs() < 1e-10);
}

#[test]
fn stability_of_exact_exponential_is_one() {
    let a: Vec<f64> = (0..500).map(|i| 1e6 * (0.0007 * i as f64).exp()).collect();
    assert!((stability(&a).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(stability(&[3.0; 10]).unwrap(), 0.0);
    assert!(stability(&[1.0, 2.0]).is_err());
}

#[test]
fn calmar_identity() {
    let mut rng = rng_from(3, 0);
    let mut checked = 0;
    for _ in 0..200 {
        let a = random_curve(&mut rng, 120);
        let mdd = max_drawdown(&a).unwrap();
        if mdd == 0.0 {
            assert!(calmar(&a).is_err());
            continue;
        }
        let ann = annualized_return(&a).unwrap();
        assert!((calmar(&a).unwrap() * mdd.abs() - ann).abs() < 1e-10 * ann.abs().max(1.0));
        checked += 1;
    }
    assert!(checked > 150);
}

#[test]
fn baseline_tracks_the_index() {
    let index = [50.0, 55.0, 45.0, 60.0];
    let c = baseline_curve(dates(4), &index, 1e6).unwrap();
    assert_eq!(c.assets, vec![1e6, 1.1e6, 0.9e6, 1.2e6]);
    assert!(baseline_curve(dates(3), &index, 1e6).is_err());
}

#[test]
fn curve_validation() {
    assert!(matches!(EquityCurve::new(dates(2), vec![1.0]), Err(MetricError::Misaligned(_))));
    let mut d = dates(3);
    d.swap(1, 2);
    assert!(matches!(EquityCurve::new(d, vec![1.0; 3]), Err(MetricError::UnorderedDates(_))));
    assert!(EquityCurve::with_trace(dates(3), vec![1.0; 3], vec![0.0; 3], vec![], vec![]).is_err());
    assert!(EquityCurve::with_trace(dates(3), vec![1.0; 3], vec![0.0; 2], vec![0.0; 2], vec![vec![0]; 2]).is_ok());
}

#[test]
fn report_composes_metric_functions() {
    let mut rng = rng_from(4, 0);
    let a = random_curve(&mut rng, 260);
    let c = EquityCurve::new(dates(260), a.clone()).unwrap();
    let r = MetricsReport::compute(&c, 0.01);
    let ret = daily_returns(&a).unwrap();
    assert_eq!(r.annualized_return, Some(annualized_return(&a).unwrap()));
    assert_eq!(r.sharpe, Some(sharpe(&ret, 0.01).unwrap()));
    assert_eq!(r.max_drawdown, Some(max_drawdown(&a).unwrap()));
    assert_eq!(r.stability, Some(stability(&a).unwrap()));
    assert_eq!(r.periods, 259);

    let flat = EquityCurve::new(dates(3), vec![5.0; 3]).unwrap();
    let f = MetricsReport::compute(&flat, 0.0);
    assert_eq!(f.sharpe, None);
    assert_eq!(f.calmar, None);

    let mean = MetricsReport::mean(&[r.clone(), f.clone()]).unwrap();
    assert_eq!(mean.sharpe, None);
    let want = (r.annualized_return.unwrap() + f.annualized_return.unwrap()) / 2.0;
    assert_eq!(mean.annualized_return, Some(want));
    assert!(MetricsReport::mean(&[]).is_none());

    let table = render_table(&[("rspo".into(), r.clone()), ("flat".into(), f.clone())]);
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains("n/a") && table.contains("max_drawdown"));

    let dir = tempfile::tempdir().unwrap();
    write_report(dir.path(), &[("rspo".into(), r)], &[("rspo".into(), c)]).unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json["rspo"]["periods"], 259);
    let equity = std::fs::read_to_string(dir.path().join("equity_rspo.csv")).unwrap();
    assert_eq!(equity.lines().count(), 261);
    assert!(dir.path().join("yearly.csv").exists());
}

proptest! {
    #[test]
    fn scale_invariance(
        steps in proptest::collection::vec(-0.08f64..0.08, 3..60),
        k in 0.01f64..100.0,
    ) {
        let mut a = vec![1.0];
        for s in &steps {
            let last = *a.last().unwrap();
            a.push(last * (1.0 + s));
        }
        let b: Vec<f64> = a.iter().map(|x| x * k).collect();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(1.0);
        prop_assert!(close(max_drawdown(&a).unwrap(), max_drawdown(&b).unwrap()));
        prop_assert!(close(annualized_return(&a).unwrap(), annualized_return(&b).unwrap()));
        prop_assert!(close(stability(&a).unwrap(), stability(&b).unwrap()));
        let (ra, rb) = (daily_returns(&a).unwrap(), daily_returns(&b).unwrap());
        prop_assert!(close(annualized_volatility(&ra).unwrap(), annualized_volatility(&rb).unwrap()));
        prop_assert!(max_drawdown(&a).unwrap() <= 0.0);
    }
}
