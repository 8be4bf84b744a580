//! Vanilla on-policy REINFORCE: one batch of episodes per round, whole
//! trajectory return as the score weight, Adam ascent.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{discounted_return, EnvSpec, Episode, Trajectory, Transition, STATE_DIM};
use crate::error::{config, Result};
use crate::nn::{mlp_layers, Activation, Adam, LayerSpec, ParamVector};
use crate::policy::{HeadKind, Policy};

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub agent_id: usize,
    /// Hidden layers as `(width, activation)`; the output layer is linear.
    pub hidden: Vec<(usize, Activation)>,
    pub head: HeadKind,
    pub learning_rate: f64,
    pub episodes_per_round: usize,
    /// Weight step `t` by `sum_{t' >= t} gamma^t' r_t'` instead of the full return.
    pub reward_to_go: bool,
    pub gamma: f64,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return config(format!("agent {}: learning rate must be positive", self.agent_id));
        }
        if self.episodes_per_round == 0 {
            return config(format!("agent {}: episodes_per_round must be at least 1", self.agent_id));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return config(format!("agent {}: gamma must lie in (0, 1]", self.agent_id));
        }
        if self.hidden.iter().any(|&(w, _)| w == 0) {
            return config(format!("agent {}: hidden widths must be positive", self.agent_id));
        }
        Ok(())
    }

    pub fn layers(&self, action_width: usize) -> Vec<LayerSpec> {
        mlp_layers(STATE_DIM, &self.hidden, action_width)
    }

    /// `"64x64 (tanh, tanh)"` style description.
    pub fn describe(&self) -> String {
        let widths: Vec<String> = self.hidden.iter().map(|(w, _)| w.to_string()).collect();
        let acts: Vec<&str> = self.hidden.iter().map(|(_, a)| a.name()).collect();
        format!("{} ({})", widths.join("x"), acts.join(", "))
    }
}

/// Per-agent, per-round training summary.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundStats {
    pub agent_id: usize,
    pub round: usize,
    pub episode_returns: Vec<f64>,
    pub discounted_returns: Vec<f64>,
    pub grad_norm: f64,
    pub wall_time: Duration,
}

impl RoundStats {
    pub fn mean_return(&self) -> f64 {
        mean(&self.episode_returns)
    }

    pub fn mean_discounted_return(&self) -> f64 {
        mean(&self.discounted_returns)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Runs `episodes` complete episodes with actions sampled from `policy`.
pub fn collect_trajectories<R: Rng + ?Sized>(
    policy: &Policy,
    env: &EnvSpec,
    episodes: usize,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    (0..episodes).map(|_| rollout(policy, env, rng)).collect()
}

fn rollout<R: Rng + ?Sized>(policy: &Policy, env: &EnvSpec, rng: &mut R) -> Result<Trajectory> {
    let mut ep = Episode::start(env, rng);
    let mut traj = Trajectory::default();
    while !ep.is_done() {
        let state = *ep.state();
        let action = policy.sample_action(&state, rng)?;
        let out = ep.step(&action)?;
        traj.steps.push(Transition {
            state,
            action,
            reward: out.reward,
            next_state: out.next_state,
            done: out.done,
        });
    }
    Ok(traj)
}

/// REINFORCE estimate of `grad J` (ascent direction), averaged over trajectories.
pub fn policy_gradient(
    policy: &Policy,
    trajectories: &[Trajectory],
    gamma: f64,
    reward_to_go: bool,
) -> Result<ParamVector> {
    if trajectories.is_empty() {
        return config("policy gradient needs at least one trajectory");
    }
    let mut grad = ParamVector::zeros(policy.param_count());
    for traj in trajectories {
        let weights = step_weights(traj, gamma, reward_to_go);
        for (t, w) in traj.steps.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let g = policy.log_prob_grad(&t.state, &t.action)?;
            grad.axpy(w, &g);
        }
    }
    grad.scale(1.0 / trajectories.len() as f64);
    Ok(grad)
}

/// Score weight per step: the full discounted return, or the discounted reward-to-go.
pub fn step_weights(traj: &Trajectory, gamma: f64, reward_to_go: bool) -> Vec<f64> {
    if !reward_to_go {
        return vec![discounted_return(traj, gamma); traj.len()];
    }
    let mut out: Vec<f64> = Vec::with_capacity(traj.len());
    let mut discount = 1.0;
    for t in &traj.steps {
        out.push(discount * t.reward);
        discount *= gamma;
    }
    for i in (0..out.len().saturating_sub(1)).rev() {
        out[i] += out[i + 1];
    }
    out
}

/// Adam ascent on `grad` (Adam descends `-grad`).
pub fn local_update(policy: &mut Policy, adam: &mut Adam, grad: &ParamVector, lr: f64) -> Result<()> {
    let mut neg = grad.clone();
    neg.scale(-1.0);
    policy.adam_descend(adam, &neg, lr)
}

/// One agent's private state: policy, optimiser moments and RNG stream.
#[derive(Debug, Clone)]
pub struct LocalAgent {
    pub config: AgentConfig,
    pub policy: Policy,
    /// Moments used by local REINFORCE updates.
    pub adam: Adam,
    /// Moments used by distillation (digestion) updates.
    pub digest_adam: Adam,
    pub env: EnvSpec,
    rng: ChaCha8Rng,
}

impl LocalAgent {
    /// The RNG stream is `ChaCha8(seed)` on stream `agent_id`; it draws the
    /// initial weights first and then every environment and action sample.
    pub fn new(config: AgentConfig, env: EnvSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.head != env.kind.head() {
            return crate::error::config(format!(
                "agent {}: head kind does not match environment {}",
                config.agent_id,
                env.kind.name()
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(config.agent_id as u64);
        let policy = Policy::new(config.head, config.layers(env.kind.action_width()), &mut rng)?;
        let n = policy.param_count();
        Ok(Self { config, policy, adam: Adam::new(n), digest_adam: Adam::new(n), env, rng })
    }

    pub fn id(&self) -> usize {
        self.config.agent_id
    }

    /// One REINFORCE round: collect, estimate, update.
    pub fn train_round(&mut self, round: usize) -> Result<RoundStats> {
        let started = Instant::now();
        let ctx = |e: crate::Error| e.context(format!("agent {} round {round}", self.config.agent_id));
        let trajs = collect_trajectories(&self.policy, &self.env, self.config.episodes_per_round, &mut self.rng)
            .map_err(ctx)?;
        let grad = policy_gradient(&self.policy, &trajs, self.config.gamma, self.config.reward_to_go)
            .map_err(ctx)?;
        local_update(&mut self.policy, &mut self.adam, &grad, self.config.learning_rate).map_err(ctx)?;
        Ok(RoundStats {
            agent_id: self.config.agent_id,
            round,
            episode_returns: trajs.iter().map(Trajectory::undiscounted_return).collect(),
            discounted_returns: trajs.iter().map(|t| discounted_return(t, self.config.gamma)).collect(),
            grad_norm: grad.norm(),
            wall_time: started.elapsed(),
        })
    }

    /// One evaluation episode using the agent's RNG stream; no update.
    pub fn rollout(&mut self) -> Result<Trajectory> {
        rollout(&self.policy, &self.env, &mut self.rng)
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvKind;
    use crate::nn::Mlp;
    use crate::policy::Action;

    fn cfg(head: HeadKind) -> AgentConfig {
        AgentConfig {
            agent_id: 1,
            hidden: vec![(8, Activation::Tanh)],
            head,
            learning_rate: 1e-2,
            episodes_per_round: 2,
            reward_to_go: false,
            gamma: 0.99,
        }
    }

    fn discrete_agent(seed: u64) -> LocalAgent {
        LocalAgent::new(cfg(HeadKind::Categorical), EnvSpec::new(EnvKind::CartPoleDiscrete), seed).unwrap()
    }

    #[test]
    fn collection_is_deterministic_and_bounded() {
        let mut a = discrete_agent(5);
        let mut b = discrete_agent(5);
        let ta = collect_trajectories(&a.policy, &a.env, 3, &mut a.rng).unwrap();
        let tb = collect_trajectories(&b.policy, &b.env, 3, &mut b.rng).unwrap();
        assert_eq!(ta, tb);
        for t in &ta {
            assert!(!t.is_empty() && t.len() <= a.env.max_steps);
            assert!(t.is_contiguous());
            assert_eq!(t.steps.last().map(|s| s.done), Some(true));
            assert_eq!(discounted_return(t, 1.0), t.len() as f64);
        }
    }

    #[test]
    fn near_deterministic_policy_matches_scripted_replay() {
        // Always push right: logits [0, 1000] regardless of state.
        let mut params = vec![0.0; 4 * 2 + 2];
        params[9] = 1000.0;
        let net = Mlp::from_params(mlp_layers(4, &[], 2), ParamVector(params)).unwrap();
        let policy = Policy::from_net(HeadKind::Categorical, net).unwrap();
        let env = EnvSpec::new(EnvKind::CartPoleDiscrete);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let traj = collect_trajectories(&policy, &env, 1, &mut rng).unwrap().remove(0);
        let mut state = traj.steps[0].state;
        let mut len = 0;
        loop {
            let out = env.step(&state, &Action::Discrete(1)).unwrap();
            len += 1;
            state = out.next_state;
            if out.done || len == env.max_steps {
                break;
            }
        }
        assert_eq!(traj.len(), len);
    }

    fn single_step(reward: f64) -> Trajectory {
        Trajectory {
            steps: vec![Transition {
                state: [0.02, -0.01, 0.03, 0.0],
                action: Action::Discrete(1),
                reward,
                next_state: [0.0; 4],
                done: true,
            }],
        }
    }

    #[test]
    fn zero_rewards_give_zero_gradient() {
        let a = discrete_agent(1);
        let g = policy_gradient(&a.policy, &[single_step(0.0)], 0.99, false).unwrap();
        assert!(g.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_gradient_is_scaled_score() {
        let a = discrete_agent(2);
        let t = single_step(2.5);
        let g = policy_gradient(&a.policy, std::slice::from_ref(&t), 0.99, false).unwrap();
        let mut expected = a.policy.log_prob_grad(&t.steps[0].state, &Action::Discrete(1)).unwrap();
        expected.scale(2.5);
        assert_eq!(g, expected);
    }

    #[test]
    fn gradient_matches_term_by_term_rebuild() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..20 {
            let mut agent = discrete_agent(case);
            let n = 1 + case as usize % 3;
            let mut trajs = collect_trajectories(&agent.policy, &agent.env, n, &mut agent.rng).unwrap();
            for t in &mut trajs {
                for s in &mut t.steps {
                    s.reward = rng.random_range(-1.0..2.0);
                }
            }
            for rtg in [false, true] {
                let g = policy_gradient(&agent.policy, &trajs, 0.97, rtg).unwrap();
                let mut oracle = vec![0.0; agent.policy.param_count()];
                for t in &trajs {
                    let grads: Vec<ParamVector> = t
                        .steps
                        .iter()
                        .map(|s| agent.policy.log_prob_grad(&s.state, &s.action).unwrap())
                        .collect();
                    for (i, gi) in grads.iter().enumerate() {
                        let start = if rtg { i } else { 0 };
                        let coeff: f64 = (start..t.len()).map(|k| 0.97f64.powi(k as i32) * t.steps[k].reward).sum();
                        for (o, v) in oracle.iter_mut().zip(&gi.0) {
                            *o += coeff * v / trajs.len() as f64;
                        }
                    }
                }
                for (a, b) in g.0.iter().zip(&oracle) {
                    assert!((a - b).abs() <= 1e-10 * (a.abs() + b.abs()).max(1e-12), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn positive_return_gradient_raises_sequence_likelihood() {
        let mut agent = discrete_agent(4);
        let trajs = collect_trajectories(&agent.policy, &agent.env, 1, &mut agent.rng).unwrap();
        let g = policy_gradient(&agent.policy, &trajs, 0.99, false).unwrap();
        let mut score = ParamVector::zeros(agent.policy.param_count());
        for s in &trajs[0].steps {
            score.axpy(1.0, &agent.policy.log_prob_grad(&s.state, &s.action).unwrap());
        }
        assert!(g.dot(&score) > 0.0);
    }

    #[test]
    fn zero_update_and_bit_determinism() {
        let mut a = discrete_agent(3);
        let before = a.policy.clone();
        local_update(&mut a.policy, &mut a.adam, &ParamVector::zeros(before.param_count()), 1e-3).unwrap();
        assert_eq!(a.policy, before);

        let grad = ParamVector((0..before.param_count()).map(|i| (i as f64).sin()).collect());
        let (mut p1, mut s1) = (before.clone(), Adam::new(before.param_count()));
        let (mut p2, mut s2) = (before.clone(), Adam::new(before.param_count()));
        local_update(&mut p1, &mut s1, &grad, 1e-3).unwrap();
        local_update(&mut p2, &mut s2, &grad, 1e-3).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn non_finite_gradient_reports_numeric_error() {
        let mut a = discrete_agent(3);
        let mut g = ParamVector::zeros(a.policy.param_count());
        g.0[0] = f64::INFINITY;
        assert!(matches!(local_update(&mut a.policy, &mut a.adam, &g, 1e-3), Err(crate::Error::Numeric(_))));
    }

    #[test]
    fn round_stats_are_sane() {
        let mut a = discrete_agent(8);
        for r in 0..5 {
            let s = a.train_round(r).unwrap();
            assert_eq!(s.round, r);
            assert_eq!(s.episode_returns.len(), 2);
            assert!(s.episode_returns.iter().all(|&v| v >= 1.0));
            assert!(s.grad_norm.is_finite() && s.grad_norm >= 0.0);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let env = EnvSpec::new(EnvKind::CartPoleDiscrete);
        let mut c = cfg(HeadKind::Categorical);
        c.learning_rate = 0.0;
        assert!(LocalAgent::new(c, env.clone(), 0).is_err());
        assert!(LocalAgent::new(cfg(HeadKind::Gaussian), env, 0).is_err());
    }

    #[test]
    fn gaussian_agent_trains() {
        let env = EnvSpec::new(EnvKind::CartPoleContinuous);
        let mut a = LocalAgent::new(cfg(HeadKind::Gaussian), env, 1).unwrap();
        for r in 0..3 {
            a.train_round(r).unwrap();
        }
        assert!(a.policy.params().is_finite());
    }
}
