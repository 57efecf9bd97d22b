use std::sync::OnceLock;

use proptest::prelude::*;
use quant_core::checkpoint::Bundle;
use quant_core::dynamics::{
    mask_rollouts, EnsembleConfig, EnsembleModel, MemberChoice, ModelTrainConfig, ModelTrainReport,
    Normalizer, ReplayBuffer, Transition,
};
use quant_core::rng::{rng_from, Rng};
use rand::Rng as _;

const OBS: usize = 4;
const ACT: usize = 2;

/// obs' = obs + 0.1·a, r = −Σ|a|.
fn linear_step(obs: &[f64], a: &[f64]) -> (Vec<f64>, f64) {
    let next = obs.iter().zip(a.iter().cycle()).map(|(o, x)| o + 0.1 * x).collect();
    (next, -a.iter().map(|x| x.abs()).sum::<f64>())
}

fn linear_buffer(n: usize, seed: u64) -> ReplayBuffer {
    let mut rng = rng_from(seed, 0);
    let mut b = ReplayBuffer::new(n);
    for _ in 0..n {
        let obs: Vec<f64> = (0..OBS).map(|_| rng.random_range(-1.0..1.0)).collect();
        let action: Vec<f64> = (0..ACT).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (next_obs, reward) = linear_step(&obs, &action);
        b.push(Transition {
            obs,
            action,
            next_obs,
            reward,
            done: false,
        });
    }
    b
}

fn trained() -> &'static (EnsembleModel, ModelTrainReport) {
    static MODEL: OnceLock<(EnsembleModel, ModelTrainReport)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let mut rng = rng_from(11, 0);
        let cfg = EnsembleConfig::default();
        let mut m = EnsembleModel::new(OBS, ACT, cfg, &mut rng).unwrap();
        let train = ModelTrainConfig {
            epochs: 100,
            batch_size: 32,
            holdout_fraction: 0.1,
        };
        let report = m.train(&linear_buffer(2000, 3), &train, &mut rng).unwrap();
        (m, report)
    })
}

#[test]
fn learns_linear_system() {
    let (_, report) = trained();
    assert!(report.holdout_mse < 1e-3, "holdout mse {}", report.holdout_mse);
    assert_eq!(report.elites.len(), 3);
    assert!(report.mean_holdout_nll() <= report.holdout_nll_initial.iter().sum::<f64>() / 5.0);
}

#[test]
fn deterministic_prediction_matches_closed_form() {
    let (m, _) = trained();
    let mut rng = rng_from(5, 0);
    for _ in 0..50 {
        let obs: Vec<f64> = (0..OBS).map(|_| rng.random_range(-0.9..0.9)).collect();
        let a: Vec<f64> = (0..ACT).map(|_| rng.random_range(-0.9..0.9)).collect();
        let (truth, r) = linear_step(&obs, &a);
        let member = m.elites()[0];
        let p = m.predict(&obs, &a, MemberChoice::Index(member), false, &mut rng).unwrap();
        for (x, y) in p.next_obs.iter().zip(&truth) {
            assert!((x - y).abs() < 0.05, "{x} vs {y}");
        }
        assert!((p.reward - r).abs() < 0.05, "{} vs {r}", p.reward);
    }
}

#[test]
fn zero_noise_sample_is_the_mean() {
    let (m, _) = trained();
    let mut rng = rng_from(6, 0);
    let obs = [0.1, 0.2, -0.3, 0.0];
    let a = [0.5, -0.5];
    let (mu, _) = m.member_distribution(1, &obs, &a).unwrap();
    let p = m.predict(&obs, &a, MemberChoice::Index(1), false, &mut rng).unwrap();
    for i in 0..OBS {
        assert_eq!(p.next_obs[i], obs[i] + mu[i]);
    }
    assert_eq!(p.reward, mu[OBS]);
}

#[test]
fn rollout_counts_and_consistency() {
    let (m, _) = trained();
    let mut rng = rng_from(7, 0);
    let starts: Vec<Vec<f64>> = (0..16).map(|i| vec![i as f64 * 0.05; OBS]).collect();
    let mut policy = |_: &[f64], r: &mut Rng| vec![r.random_range(-1.0..1.0), 0.0];
    let one = m
        .rollout(&mut policy, &starts, 1, MemberChoice::RandomElite, true, &mut rng)
        .unwrap();
    assert_eq!(one.len(), 16);
    let three = m
        .rollout(&mut policy, &starts, 3, MemberChoice::RandomElite, true, &mut rng)
        .unwrap();
    assert_eq!(three.len(), 48);
    for traj in three.chunks(3) {
        for w in traj.windows(2) {
            assert_eq!(w[0].next_obs, w[1].obs);
        }
    }
}

#[test]
fn deterministic_rollouts_repeat_and_track_closed_form() {
    let (m, _) = trained();
    let k = 5;
    let starts = vec![vec![0.0, 0.2, -0.2, 0.1]];
    let policy = |_: &[f64], _: &mut Rng| vec![0.5, -0.25];
    let run = |seed| {
        let mut rng = rng_from(seed, 0);
        m.rollout(&mut policy.clone(), &starts, k, MemberChoice::Index(m.elites()[0]), false, &mut rng)
            .unwrap()
    };
    let a = run(1);
    assert_eq!(a, run(2));
    let mut truth = starts[0].clone();
    for t in &a {
        truth = linear_step(&truth, &policy(&truth, &mut rng_from(0, 0))).0;
        for (x, y) in t.next_obs.iter().zip(&truth) {
            assert!((x - y).abs() < 0.1 * k as f64);
        }
    }
}

#[test]
fn uncertainty_is_non_negative_and_flags_out_of_distribution() {
    let (m, _) = trained();
    let mut rng = rng_from(8, 0);
    let mut ordered = 0;
    for _ in 0..100 {
        let a: Vec<f64> = (0..ACT).map(|_| rng.random_range(-1.0..1.0)).collect();
        let inside: Vec<f64> = (0..OBS).map(|_| rng.random_range(-0.8..0.8)).collect();
        let outside: Vec<f64> = inside.iter().map(|x| x.signum() * 10.0 + x).collect();
        let u_in = m.uncertainty(&inside, &a).unwrap();
        let u_out = m.uncertainty(&outside, &a).unwrap();
        assert!(u_in >= 0.0 && u_out >= 0.0);
        if u_out > u_in {
            ordered += 1;
        }
    }
    assert!(ordered >= 90, "only {ordered}/100 ordered");
}

#[test]
fn identical_members_do_not_disagree() {
    let (m, _) = trained();
    let mut b = Bundle::new();
    m.write_bundle(&mut b, "");
    let first = b.mlp("member0").unwrap().clone();
    for i in 1..m.num_members() {
        b.put_mlp(format!("member{i}"), &first);
    }
    let clone = EnsembleModel::read_bundle(&b, "").unwrap();
    let obs = [0.1, 0.2, 0.3, 0.4];
    let a = [0.2, 0.1];
    let (disagreement, spread) = clone.uncertainty_terms(&obs, &a).unwrap();
    assert_eq!(disagreement, 0.0);
    assert!(spread > 0.0);
    let mut rng = rng_from(0, 0);
    let p0 = clone.predict(&obs, &a, MemberChoice::Index(0), false, &mut rng).unwrap();
    for e in clone.elites() {
        assert_eq!(clone.predict(&obs, &a, MemberChoice::Index(*e), false, &mut rng).unwrap(), p0);
    }
}

#[test]
fn duplicate_transitions_collapse_sigma() {
    let mut rng = rng_from(9, 0);
    let cfg = EnsembleConfig {
        members: 2,
        elites: 2,
        hidden: vec![16],
        lr: 1e-2,
        ..EnsembleConfig::default()
    };
    let mut m = EnsembleModel::new(OBS, ACT, cfg, &mut rng).unwrap();
    let mut b = ReplayBuffer::new(200);
    let t = linear_buffer(1, 4).get(0).unwrap().clone();
    for _ in 0..200 {
        b.push(t.clone());
    }
    let report = m
        .train(&b, &ModelTrainConfig { epochs: 8, batch_size: 32, holdout_fraction: 0.1 }, &mut rng)
        .unwrap();
    let nll = report.epoch_nll();
    for w in nll[..5].windows(2) {
        assert!(w[1] < w[0], "{nll:?}");
    }
    let (_, sd) = m.member_distribution(0, &t.obs, &t.action).unwrap();
    let (_, sd_init) = EnsembleModel::new(OBS, ACT, EnsembleConfig::default(), &mut rng_from(9, 0))
        .unwrap()
        .member_distribution(0, &t.obs, &t.action)
        .unwrap();
    assert!(sd.iter().zip(&sd_init).all(|(a, b)| a < b));
}

proptest! {
    #[test]
    fn normalizer_round_trip(rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 3), 1..20),
                             x in proptest::collection::vec(-1e3f64..1e3, 3)) {
        let n = Normalizer::fit(rows.iter().map(|r| r.as_slice()), 3);
        prop_assert!(n.std.iter().all(|s| *s > 0.0));
        let back = n.denormalize(&n.normalize(&x));
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn masking_shrinks_and_preserves_order(scores in proptest::collection::vec(0.0f64..10.0, 0..40),
                                          keep in 0.01f64..=1.0) {
        let items: Vec<usize> = (0..scores.len()).collect();
        let kept = mask_rollouts(&items, &scores, keep).unwrap();
        prop_assert!(kept.len() <= items.len());
        prop_assert_eq!(kept.len(), ((keep * items.len() as f64).ceil() as usize).min(items.len()));
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        if let Some(worst_kept) = kept.iter().map(|&i| scores[i]).reduce(f64::max) {
            for i in items.iter().filter(|i| !kept.contains(i)) {
                prop_assert!(scores[*i] >= worst_kept);
            }
        }
    }
}
