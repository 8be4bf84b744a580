use fedhpd_core::env::{EnvKind, EnvSpec, PublicStateSet};
use fedhpd_core::federation::{aggregate, distillation_round, FedRunConfig, Federation, Interval};
use fedhpd_core::nn::Activation;
use fedhpd_core::policy::{DistributionBatch, HeadKind};
use fedhpd_core::presets::preset;
use fedhpd_core::reinforce::{AgentConfig, LocalAgent};
use fedhpd_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn agent(id: usize, width: usize, lr: f64) -> AgentConfig {
    AgentConfig {
        agent_id: id,
        hidden: vec![(width, Activation::Tanh)],
        head: HeadKind::Categorical,
        learning_rate: lr,
        episodes_per_round: 1,
        reward_to_go: false,
        gamma: 0.99,
    }
}

fn states(seed: u64, n: usize) -> PublicStateSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PublicStateSet::from_rows(
        (0..n).map(|_| (0..4).map(|_| rng.random_range(-0.2..0.2)).collect()).collect(),
    )
    .unwrap()
}

fn config(agents: Vec<AgentConfig>, rounds: usize, interval: Interval) -> FedRunConfig {
    FedRunConfig { env: EnvSpec::new(EnvKind::CartPoleDiscrete), agents, rounds, interval, seed: 20 }
}

#[test]
fn single_agent_distillation_is_a_fixed_point() {
    let mut fed = Federation::new(&config(vec![agent(3, 8, 1e-2)], 12, Interval::Every(3)), Some(states(1, 32))).unwrap();
    while !fed.is_finished() {
        let before = fed.agents[0].policy.clone();
        let mut shadow = fed.agents[0].clone();
        let rec = fed.step().unwrap();
        if let Some(c) = rec.consensus {
            assert_eq!(c.kl_losses, vec![0.0]);
            assert_eq!(c.kl_grad_norms, vec![0.0]);
            // The distillation step must leave the locally trained parameters untouched.
            shadow.train_round(rec.round).unwrap();
            assert_eq!(fed.agents[0].policy, shadow.policy);
            assert_ne!(fed.agents[0].policy, before);
        }
    }
}

#[test]
fn identical_agents_distillation_is_a_fixed_point() {
    let public = states(2, 24);
    let base = LocalAgent::new(agent(0, 6, 5e-3), EnvSpec::new(EnvKind::CartPoleDiscrete), 7).unwrap();
    let mut agents: Vec<LocalAgent> = (0..4).map(|_| base.clone()).collect();
    for round in 0..5 {
        let before: Vec<_> = agents.iter().map(|a| a.policy.params()).collect();
        let rec = distillation_round(&mut agents, &public, round).unwrap();
        assert!(rec.kl_losses.iter().all(|&l| l == 0.0));
        for (a, b) in agents.iter().zip(&before) {
            assert_eq!(&a.policy.params(), b);
        }
    }
}

#[test]
fn extraction_happens_before_any_digestion() {
    let public = states(3, 16);
    let env = EnvSpec::new(EnvKind::CartPoleDiscrete);
    let mut agents: Vec<LocalAgent> =
        (0..3).map(|k| LocalAgent::new(agent(k, 4 + 2 * k, 1e-2), env.clone(), 11).unwrap()).collect();
    let pre: Vec<DistributionBatch> = agents.iter().map(|a| a.policy.extract_batch(&public).unwrap()).collect();
    let expected = aggregate(&pre, None).unwrap();
    let rec = distillation_round(&mut agents, &public, 0).unwrap();
    assert_eq!(rec.consensus, expected);
    for (a, p) in agents.iter().zip(&pre) {
        assert_ne!(&a.policy.extract_batch(&public).unwrap(), p);
    }
    let per_upload = pre[0].encoded_len();
    assert_eq!(rec.bytes, 4 * per_upload);
}

#[test]
fn one_digestion_step_reduces_total_kl() {
    let public = states(4, 32);
    let env = EnvSpec::new(EnvKind::CartPoleDiscrete);
    let mut agents: Vec<LocalAgent> =
        (0..2).map(|k| LocalAgent::new(agent(k, 8, 1e-3), env.clone(), 100 + k as u64).unwrap()).collect();
    let rec = distillation_round(&mut agents, &public, 0).unwrap();
    let before: f64 = rec.kl_losses.iter().sum();
    assert!(before > 0.0);
    let after: f64 = agents.iter().map(|a| a.policy.kl_batch_loss(&public, &rec.consensus).unwrap().0).sum();
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn consensus_rows_stay_on_the_simplex() {
    let (kind, agents) = preset("cartpole-4", 0.99).unwrap();
    let cfg = FedRunConfig { env: EnvSpec::new(kind), agents, rounds: 20, interval: Interval::Every(4), seed: 25 };
    let recs = Federation::new(&cfg, Some(states(5, 64))).unwrap().run().unwrap();
    let fired: Vec<usize> = recs.iter().filter(|r| r.consensus.is_some()).map(|r| r.round).collect();
    assert_eq!(fired, vec![3, 7, 11, 15, 19]);
    for r in recs.iter().filter_map(|r| r.consensus.as_ref()) {
        r.consensus.validate(1e-9).unwrap();
    }

    let (kind, agents) = preset("pendulum-4", 0.99).unwrap();
    let cfg = FedRunConfig { env: EnvSpec::new(kind), agents, rounds: 10, interval: Interval::Every(2), seed: 25 };
    let recs = Federation::new(&cfg, Some(states(6, 64))).unwrap().run().unwrap();
    for r in recs.iter().filter_map(|r| r.consensus.as_ref()) {
        let DistributionBatch::Gaussian { var, .. } = &r.consensus else { panic!("expected Gaussian consensus") };
        assert!(var.iter().all(|&v| v > 0.0));
    }
}

#[test]
fn never_interval_matches_standalone_trainers() {
    let agents = vec![agent(1, 8, 1e-2), agent(4, 12, 3e-3)];
    let cfg = config(agents.clone(), 40, Interval::Never);
    let mut fed = Federation::new(&cfg, None).unwrap();
    let recs = fed.run().unwrap();
    let mut solo: Vec<LocalAgent> =
        agents.into_iter().map(|a| LocalAgent::new(a, cfg.env.clone(), cfg.seed).unwrap()).collect();
    for rec in &recs {
        assert!(rec.consensus.is_none());
        for (a, s) in solo.iter_mut().zip(&rec.stats) {
            let mine = a.train_round(rec.round).unwrap();
            assert_eq!(mine.episode_returns, s.episode_returns);
            assert_eq!(mine.grad_norm.to_bits(), s.grad_norm.to_bits());
        }
    }
    for (a, b) in solo.iter().zip(&fed.agents) {
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.adam, b.adam);
    }
}

#[test]
fn interval_beyond_horizon_matches_never() {
    let agents = vec![agent(1, 8, 1e-2), agent(2, 6, 2e-3)];
    let never = Federation::new(&config(agents.clone(), 15, Interval::Never), None).unwrap().run().unwrap();
    let long = Federation::new(&config(agents, 15, Interval::Every(16)), Some(states(7, 8))).unwrap().run().unwrap();
    assert_eq!(never.len(), long.len());
    for (a, b) in never.iter().zip(&long) {
        assert!(b.consensus.is_none());
        for (x, y) in a.stats.iter().zip(&b.stats) {
            assert_eq!(x.episode_returns, y.episode_returns);
            assert_eq!(x.grad_norm.to_bits(), y.grad_norm.to_bits());
        }
    }
}

#[test]
fn distillation_changes_the_trajectory() {
    let agents = vec![agent(1, 8, 1e-2), agent(2, 6, 2e-3)];
    let never = Federation::new(&config(agents.clone(), 10, Interval::Never), None).unwrap().run().unwrap();
    let every = Federation::new(&config(agents, 10, Interval::Every(1)), Some(states(8, 8))).unwrap().run().unwrap();
    assert_eq!(never[0].stats[0].episode_returns, every[0].stats[0].episode_returns);
    assert!(never.iter().zip(&every).any(|(a, b)| a.stats[0].grad_norm != b.stats[0].grad_norm));
}

#[test]
fn invalid_runs_are_rejected_up_front() {
    let ok = config(vec![agent(1, 4, 1e-2)], 5, Interval::Every(2));
    assert!(matches!(Federation::new(&ok, None), Err(Error::Config(_))));
    let mut dup = ok.clone();
    dup.agents.push(agent(1, 4, 1e-2));
    assert!(matches!(dup.validate(), Err(Error::Config(_))));
    let mut mixed = ok.clone();
    mixed.agents[0].head = HeadKind::Gaussian;
    assert!(matches!(mixed.validate(), Err(Error::Config(_))));
    let mut zero = ok.clone();
    zero.interval = Interval::Every(0);
    assert!(zero.validate().is_err());
    let mut none = ok;
    none.agents.clear();
    assert!(none.validate().is_err());
}
