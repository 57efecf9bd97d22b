use std::sync::Arc;

use quant_core::agents::{
    entropy, evaluate, refit, train, CemConfig, CemPlanner, ImproveContext, ImproveStats, PetsStrategy,
    PolicyStrategy, SacAgent, SacConfig, Strategy, StrategyRegistry, TrainConfig,
};
use quant_core::checkpoint::Bundle;
use quant_core::dynamics::{
    EnsembleConfig, EnsembleModel, ModelError, ModelTrainConfig, ReplayBuffer, Transition, TransitionModel,
};
use quant_core::env::{asset_value, observation_dim, Action, EnvConfig, EnvSlice, MarketFeatures, TradingEnv};
use quant_core::indicators::RsrsParams;
use quant_core::market_data::synthetic_universe;
use quant_core::nn::{polyak_update, squashed_gaussian_sample, Activation, GaussianHead, Mlp};
use quant_core::rng::{rng_from, Rng};
use quant_core::selftest::{finite_difference, relative_error};
use rand::Rng as _;
use rand_distr::StandardNormal;

fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn tiny_config() -> SacConfig {
    SacConfig {
        hidden: vec![8],
        activation: Activation::Tanh,
        ..SacConfig::default()
    }
}

fn tiny_agent(obs: usize, act: usize, seed: u64) -> SacAgent {
    SacAgent::new(obs, act, tiny_config(), &mut rng_from(seed, 0)).unwrap()
}

fn transition(obs: Vec<f64>, action: Vec<f64>, next_obs: Vec<f64>, reward: f64, done: bool) -> Transition {
    Transition {
        obs,
        action,
        next_obs,
        reward,
        done,
    }
}

fn slice(seed: u64, d: usize, days: usize) -> EnvSlice {
    let u = synthetic_universe(seed, d, days, 0.0005, 0.02).unwrap();
    let f = MarketFeatures::build(&u, RsrsParams { l: 5, m: 20 }).unwrap();
    EnvSlice::full(Arc::new(f)).unwrap()
}

#[test]
fn q_targets_match_manual_evaluation() {
    let mut rng = rng_from(1, 0);
    let agent = SacAgent::from_networks(
        tiny_config(),
        Mlp::new(&[2, 8, 2], Activation::Tanh, &mut rng),
        Mlp::new(&[3, 8, 1], Activation::Tanh, &mut rng),
        Mlp::new(&[3, 8, 1], Activation::Tanh, &mut rng),
        Mlp::new(&[3, 8, 1], Activation::Tanh, &mut rng),
        Mlp::new(&[3, 8, 1], Activation::Tanh, &mut rng),
    );
    let live = transition(vec![0.1, 0.2], vec![0.5], vec![0.3, -0.4], 1.5, false);
    let terminal = transition(vec![0.1, 0.2], vec![0.5], vec![0.3, -0.4], 1.5, true);
    let noise = vec![vec![0.7], vec![0.7]];
    let ys = agent.q_targets_with_noise(&[&live, &terminal], &noise).unwrap();

    let raw = agent.policy.forward(&live.next_obs).unwrap();
    let (mean, log_std) = GaussianHead::policy().split(&raw);
    let s = squashed_gaussian_sample(&mean, &log_std, &noise[0]);
    let x = [live.next_obs[0], live.next_obs[1], s.action[0]];
    let q1 = agent.q1_target.forward(&x).unwrap()[0];
    let q2 = agent.q2_target.forward(&x).unwrap()[0];
    let want = 1.5 + 0.99 * (q1.min(q2) - 0.2 * s.log_prob);
    assert!((ys[0] - want).abs() < 1e-8, "{} vs {want}", ys[0]);
    assert_eq!(ys[1], 1.5);

    // The output bias shifts target critic 1 by exactly 10; only the minimum counts.
    let mut raised = agent;
    let last = raised.q1_target.num_params() - 1;
    raised.q1_target.params_mut()[last] += 10.0;
    let y2 = raised.q_targets_with_noise(&[&live], &noise[..1]).unwrap()[0];
    let want2 = 1.5 + 0.99 * ((q1 + 10.0).min(q2) - 0.2 * s.log_prob);
    assert!((y2 - want2).abs() < 1e-8);
    assert!(y2 <= 1.5 + 0.99 * (q2 - 0.2 * s.log_prob) + 1e-12);
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let mut rng = rng_from(2, 0);
    let mut net = Mlp::new(&[3, 32, 32, 1], Activation::Tanh, &mut rng);
    let batch: Vec<Transition> = (0..6)
        .map(|_| transition(vec![normal(&mut rng), normal(&mut rng)], vec![0.3], vec![0.0, 0.0], 0.0, true))
        .collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let targets: Vec<f64> = (0..6).map(|_| normal(&mut rng)).collect();
    let (_, grads) = SacAgent::critic_loss_grad(&net, &refs, &targets).unwrap();
    let p = net.params().to_vec();
    let fd = finite_difference(&p, 1e-5, |q| {
        net.params_mut().copy_from_slice(q);
        SacAgent::critic_loss_grad(&net, &refs, &targets).unwrap().0
    });
    assert!(relative_error(&grads, &fd) < 1e-4);
}

#[test]
fn policy_gradient_matches_finite_differences_on_toy_policy() {
    let mut rng = rng_from(3, 0);
    // Linear policy [1 → 2]: four parameters.
    let policy = Mlp::new(&[1, 2], Activation::Tanh, &mut rng);
    assert_eq!(policy.num_params(), 4);
    let q1 = Mlp::new(&[2, 8, 1], Activation::Tanh, &mut rng);
    let q2 = Mlp::new(&[2, 8, 1], Activation::Tanh, &mut rng);
    let mut agent = SacAgent::from_networks(tiny_config(), policy, q1.clone(), q2.clone(), q1, q2);
    let obs: Vec<Vec<f64>> = (0..5).map(|_| vec![normal(&mut rng)]).collect();
    let refs: Vec<&[f64]> = obs.iter().map(Vec::as_slice).collect();
    let noise: Vec<Vec<f64>> = (0..5).map(|_| vec![normal(&mut rng)]).collect();
    let (_, grads, ent) = agent.policy_loss_grad(&refs, &noise).unwrap();
    assert!(ent.is_finite());
    let p = agent.policy.params().to_vec();
    let fd = finite_difference(&p, 1e-6, |q| {
        agent.policy.params_mut().copy_from_slice(q);
        agent.policy_loss_grad(&refs, &noise).unwrap().0
    });
    assert!(relative_error(&grads, &fd) < 1e-3, "{grads:?} vs {fd:?}");
}

#[test]
fn critic_fits_a_one_step_bandit() {
    let cfg = SacConfig {
        hidden: vec![16, 16],
        lr_q: 3e-3,
        ..tiny_config()
    };
    let mut rng = rng_from(4, 0);
    let mut agent = SacAgent::new(1, 1, cfg, &mut rng).unwrap();
    let data: Vec<Transition> = (0..64)
        .map(|_| {
            let a: f64 = rng.random_range(-1.0..1.0);
            transition(vec![1.0], vec![a], vec![1.0], 0.5 * a, true)
        })
        .collect();
    let batch: Vec<&Transition> = data.iter().collect();
    let mut last = f64::INFINITY;
    for step in 0..2000 {
        last = agent.update(&batch, &mut rng).unwrap().q_loss;
        if step > 100 && last < 1e-3 {
            break;
        }
    }
    assert!(last < 1e-3, "q_loss {last}");
}

#[test]
fn polyak_endpoints() {
    let mut rng = rng_from(5, 0);
    let src = Mlp::new(&[3, 4, 1], Activation::Relu, &mut rng);
    let orig = Mlp::new(&[3, 4, 1], Activation::Relu, &mut rng);
    let mut t = orig.clone();
    polyak_update(&mut t, &src, 0.0);
    assert_eq!(t, orig);
    polyak_update(&mut t, &src, 1.0);
    assert_eq!(t.params(), src.params());
}

#[test]
fn zero_learning_rates_freeze_online_networks() {
    let cfg = SacConfig {
        lr_q: 0.0,
        lr_pi: 0.0,
        tau: 0.5,
        ..tiny_config()
    };
    let mut rng = rng_from(6, 0);
    let mut agent = SacAgent::new(2, 1, cfg, &mut rng).unwrap();
    let (pi, q1, q2) = (agent.policy.clone(), agent.q1.clone(), agent.q2.clone());
    let data: Vec<Transition> = (0..8)
        .map(|_| transition(vec![normal(&mut rng), 0.1], vec![0.2], vec![0.0, 0.3], normal(&mut rng), false))
        .collect();
    let batch: Vec<&Transition> = data.iter().collect();
    for _ in 0..5 {
        agent.update(&batch, &mut rng).unwrap();
    }
    assert_eq!(agent.policy, pi);
    assert_eq!(agent.q1, q1);
    assert_eq!(agent.q2, q2);
    assert!(agent.update(&[], &mut rng).is_err());
}

#[test]
fn entropy_examples() {
    assert_eq!(entropy(&[-1.0, -3.0]).unwrap(), 2.0);
    assert_eq!(entropy(&[0.5]).unwrap(), -0.5);
    assert!(entropy(&[]).is_err());
}

#[test]
fn select_action_is_bounded_and_reproducible() {
    let agent = tiny_agent(4, 3, 7);
    let mut rng = rng_from(7, 1);
    for _ in 0..10_000 {
        let obs: Vec<f64> = (0..4).map(|_| 10.0 * normal(&mut rng)).collect();
        for det in [false, true] {
            let a = agent.select_action(&obs, det, &mut rng).unwrap();
            assert_eq!(a.len(), 3);
            assert!(a.iter().all(|x| x.abs() <= 1.0 && x.is_finite()));
        }
    }
    let obs = [0.1, 0.2, 0.3, 0.4];
    let a = agent.select_action(&obs, false, &mut rng_from(9, 9)).unwrap();
    let b = tiny_agent(4, 3, 7).select_action(&obs, false, &mut rng_from(9, 9)).unwrap();
    assert_eq!(a, b);
    assert!(agent.select_action(&[0.0; 3], false, &mut rng).is_err());
}

/// One-step model whose reward peaks at `a = optimum`.
struct Quadratic {
    optimum: f64,
}

impl TransitionModel for Quadratic {
    fn obs_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn num_particles(&self) -> usize {
        1
    }
    fn predict_mean(&self, obs: &[f64], action: &[f64], _: usize) -> Result<(Vec<f64>, f64), ModelError> {
        Ok((obs.to_vec(), -(action[0] - self.optimum).powi(2)))
    }
}

#[test]
fn cem_recovers_quadratic_optimum() {
    let cfg = CemConfig {
        horizon: 1,
        population: 100,
        elites: 10,
        iterations: 10,
        init_std: 0.5,
        min_std: 0.01,
    };
    let planner = CemPlanner::new(cfg, 1).unwrap();
    for seed in 0..5 {
        let a = planner.plan(&Quadratic { optimum: 0.3 }, &[0.0], &mut rng_from(seed, 0)).unwrap();
        assert!((a[0] - 0.3).abs() < 0.05, "seed {seed}: {a:?}");
    }
}

#[test]
fn cem_edge_cases() {
    let zero = CemPlanner::new(
        CemConfig {
            iterations: 0,
            ..CemConfig::default()
        },
        2,
    )
    .unwrap();
    assert_eq!(zero.plan(&Quadratic { optimum: 0.3 }, &[0.0], &mut rng_from(1, 0)).unwrap(), vec![0.0, 0.0]);

    let cands = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]];
    let (mean, std) = refit(&cands, &[0.3, 0.1, 0.2], 3, 0.0);
    assert!(relative_error(&mean, &[2.0, 1.0]) < 1e-15);
    let var0 = (4.0 + 0.0 + 4.0) / 3.0f64;
    assert!((std[0] - var0.sqrt()).abs() < 1e-12);
    let (top, floor) = refit(&cands, &[0.3, 0.1, 0.2], 1, 0.05);
    assert_eq!(top, vec![0.0, 1.0]);
    assert_eq!(floor, vec![0.05, 0.05]);

    let bad = |c: CemConfig| CemPlanner::new(c, 1).is_err();
    assert!(bad(CemConfig { elites: 0, ..CemConfig::default() }));
    assert!(bad(CemConfig { elites: 65, ..CemConfig::default() }));
    assert!(bad(CemConfig { horizon: 0, ..CemConfig::default() }));
}

fn quick_train_config(variant: &str) -> TrainConfig {
    TrainConfig {
        variant: variant.into(),
        epochs: 1,
        steps_per_epoch: 1,
        rollouts_per_step: 0,
        rollout_length: 1,
        updates_per_step: 0,
        batch_size: 8,
        warmup_steps: 5,
        ensemble: EnsembleConfig {
            members: 3,
            elites: 2,
            hidden: vec![8],
            ..EnsembleConfig::default()
        },
        model_train: ModelTrainConfig {
            epochs: 1,
            batch_size: 4,
            holdout_fraction: 0.2,
        },
        sac: tiny_config(),
        cem: CemConfig {
            horizon: 1,
            population: 4,
            elites: 2,
            iterations: 1,
            ..CemConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn train_counts_transitions() {
    let registry = StrategyRegistry::with_defaults();
    let s = slice(11, 2, 60);
    for name in registry.names() {
        let out = train(&quick_train_config(name), &EnvConfig::default(), s.clone(), 3, &registry).unwrap();
        assert_eq!(out.env_transitions, 6, "{name}");
        assert_eq!(out.model_transitions, 0, "{name}");
        assert_eq!(out.history.rows.len(), 1);
        assert_eq!(out.history.epochs.len(), 1);
        assert_eq!(out.strategy.update_count(), 0);
        assert_eq!(out.strategy.name(), name);
    }

    let cfg = TrainConfig {
        rollouts_per_step: 4,
        updates_per_step: 2,
        steps_per_epoch: 3,
        ..quick_train_config("mbpo")
    };
    let out = train(&cfg, &EnvConfig::default(), s.clone(), 3, &registry).unwrap();
    assert_eq!(out.env_transitions, 8);
    assert_eq!(out.model_transitions, 12);
    assert_eq!(out.strategy.update_count(), 6);

    let masked = TrainConfig {
        keep_fraction: 0.5,
        ..TrainConfig { variant: "m2ac".into(), ..cfg.clone() }
    };
    let out = train(&masked, &EnvConfig::default(), s.clone(), 3, &registry).unwrap();
    assert_eq!(out.model_transitions, 6);

    let again = train(&cfg, &EnvConfig::default(), s, 3, &registry).unwrap();
    let first = train(&cfg, &EnvConfig::default(), slice(11, 2, 60), 3, &registry).unwrap();
    assert_eq!(again.history, first.history);
}

/// Always proposes the same normalised action.
struct Constant(Vec<f64>);

impl Strategy for Constant {
    fn name(&self) -> &str {
        "constant"
    }
    fn uses_override(&self) -> bool {
        false
    }
    fn act(&mut self, _: &[f64], _: &EnsembleModel, _: bool, _: &mut Rng) -> Result<Vec<f64>, quant_core::agents::AgentError> {
        Ok(self.0.clone())
    }
    fn improve(&mut self, _: ImproveContext<'_>) -> Result<ImproveStats, quant_core::agents::AgentError> {
        Ok(ImproveStats::default())
    }
    fn update_count(&self) -> u64 {
        0
    }
    fn write_bundle(&self, _: &mut Bundle) {}
}

fn blank_model(d: usize) -> EnsembleModel {
    EnsembleModel::new(observation_dim(d), d, EnsembleConfig::default(), &mut rng_from(0, 0)).unwrap()
}

#[test]
fn evaluate_replays_through_the_environment() {
    let s = slice(12, 3, 80);
    let cfg = EnvConfig::default();
    let model = blank_model(3);
    let mut strat = Constant(vec![0.25, -0.5, 1.0]);
    let ev = evaluate(&mut strat, &model, s.clone(), &cfg, &mut rng_from(0, 0)).unwrap();
    assert_eq!(ev.curve.len(), s.len());
    assert_eq!(ev.overrides, 0);

    let mut env = TradingEnv::new(s.clone(), cfg.clone()).unwrap();
    let mut assets = vec![asset_value(env.state())];
    loop {
        let r = env.step(&Action::from_normalized(&[0.25, -0.5, 1.0], cfg.hmax)).unwrap();
        assets.push(asset_value(&r.next_state));
        if r.done {
            break;
        }
    }
    assert_eq!(ev.curve.assets, assets);
    assert_eq!(ev.curve.actions[0], vec![25, 0, 100]);

    let mut hold = Constant(vec![0.0; 3]);
    let flat = evaluate(&mut hold, &model, s.clone(), &cfg, &mut rng_from(0, 0)).unwrap();
    assert!(flat.curve.assets.iter().all(|&a| a == cfg.initial_balance));
    assert!(flat.curve.costs.iter().all(|&c| c == 0.0));

    let mut wrong = Constant(vec![0.0; 2]);
    assert!(evaluate(&mut wrong, &model, s, &cfg, &mut rng_from(0, 0)).is_err());
}

#[test]
fn evaluate_is_deterministic_for_policy_strategies() {
    let s = slice(13, 2, 60);
    let model = blank_model(2);
    let cfg = EnvConfig::default();
    let agent = SacAgent::new(observation_dim(2), 2, tiny_config(), &mut rng_from(1, 0)).unwrap();
    let mut a = PolicyStrategy::new("rspo", agent.clone(), None, true);
    let mut b = PolicyStrategy::new("rspo", agent, None, true);
    let x = evaluate(&mut a, &model, s.clone(), &cfg, &mut rng_from(1, 1)).unwrap();
    let y = evaluate(&mut b, &model, s, &cfg, &mut rng_from(2, 2)).unwrap();
    assert_eq!(x.curve, y.curve);
    assert_eq!(x.overrides, y.overrides);
}

#[test]
fn pets_acts_randomly_until_the_model_is_trained() {
    let planner = CemPlanner::new(CemConfig::default(), 2).unwrap();
    let mut pets = PetsStrategy::new(planner, 2);
    let model = blank_model(2);
    let obs = vec![0.0; observation_dim(2)];
    let a = pets.act(&obs, &model, true, &mut rng_from(1, 0)).unwrap();
    assert_eq!(a.len(), 2);
    assert!(a.iter().all(|x| x.abs() <= 1.0));
    assert_eq!(pets.update_count(), 0);
    assert!(!pets.uses_override());

    let mut env_buffer = ReplayBuffer::new(4);
    env_buffer.push(transition(obs.clone(), a, obs.clone(), 0.0, false));
    let stats = pets
        .improve(ImproveContext {
            model: &model,
            env_buffer: &env_buffer,
            model_buffer: &mut ReplayBuffer::new(4),
            rollouts: 4,
            rollout_length: 1,
            updates: 4,
            batch_size: 1,
            real_ratio: 0.0,
            rollout_rng: &mut rng_from(1, 1),
            update_rng: &mut rng_from(1, 2),
        })
        .unwrap();
    assert_eq!(stats.updates, 0);
}

#[test]
fn registry_builds_and_restores_by_name() {
    let registry = StrategyRegistry::with_defaults();
    assert_eq!(registry.names(), vec!["m2ac", "mbpo", "pets", "rsac", "rspo"]);
    assert!(registry.contains("RSPO"));
    let spec = quick_train_config("rsac").strategy_spec(2);
    for (name, overridden) in [("pets", false), ("mbpo", false), ("m2ac", false), ("rspo", true), ("rsac", true)] {
        let s = registry.build(name, &spec, &mut rng_from(1, 0)).unwrap();
        assert_eq!(s.name(), name);
        assert_eq!(s.uses_override(), overridden, "{name}");
        let mut bundle = Bundle::new();
        s.write_bundle(&mut bundle);
        let back = registry.restore(&Bundle::from_bytes(&bundle.to_bytes()).unwrap()).unwrap();
        assert_eq!(back.name(), name);
        let mut b2 = Bundle::new();
        back.write_bundle(&mut b2);
        assert_eq!(b2.to_bytes(), bundle.to_bytes());
    }
    match registry.build("ppo", &spec, &mut rng_from(1, 0)) {
        Err(e) => assert!(e.to_string().contains("mbpo"), "{e}"),
        Ok(_) => panic!("unknown name accepted"),
    }
    let bad = quant_core::agents::StrategySpec { keep_fraction: 0.0, ..spec.clone() };
    assert!(registry.build("m2ac", &bad, &mut rng_from(1, 0)).is_err());
    assert!(registry.build("mbpo", &bad, &mut rng_from(1, 0)).is_ok());

    let mut custom = StrategyRegistry::empty();
    custom.register("hold", |spec, _| {
        Ok(Box::new(PetsStrategy::new(CemPlanner::new(spec.cem.clone(), spec.action_dim)?, spec.action_dim)))
    });
    assert_eq!(custom.names(), vec!["hold"]);
}
