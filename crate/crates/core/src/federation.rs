//! Synchronous federated training with periodic policy distillation.
//!
//! Every round all agents run one local REINFORCE update. On rounds where
//! `(round + 1) % d == 0` the agents additionally upload their action
//! distributions on the public state set, the server averages them into a
//! consensus, and each agent takes one gradient step on
//! `KL(own || consensus)`.
//!
//! Payloads travel through the [`DistributionBatch`] wire encoding so the
//! communicated byte volume is the real one.

use rayon::prelude::*;

use crate::env::{EnvSpec, PublicStateSet};
use crate::error::{config, numeric, Error, Result};
use crate::policy::{DistributionBatch, HeadKind};
use crate::reinforce::{AgentConfig, LocalAgent, RoundStats};

/// How often distillation runs. `Never` is the independent (NoFed) baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Interval {
    Every(usize),
    Never,
}

impl Interval {
    pub fn fires(self, round: usize) -> bool {
        match self {
            Interval::Every(d) => (round + 1).is_multiple_of(d),
            Interval::Never => false,
        }
    }

    pub fn label(self) -> String {
        match self {
            Interval::Every(d) => d.to_string(),
            Interval::Never => "inf".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedRunConfig {
    pub env: EnvSpec,
    pub agents: Vec<AgentConfig>,
    pub rounds: usize,
    pub interval: Interval,
    pub seed: u64,
}

impl FedRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return config("federation needs at least one agent");
        }
        if self.rounds == 0 {
            return config("total rounds must be at least 1");
        }
        if self.interval == Interval::Every(0) {
            return config("distillation interval must be at least 1");
        }
        let head = self.env.kind.head();
        let mut ids = std::collections::BTreeSet::new();
        for a in &self.agents {
            a.validate()?;
            if a.head != head {
                return config(format!(
                    "agent {} has a {:?} head but {} needs {:?}",
                    a.agent_id,
                    a.head,
                    self.env.kind.name(),
                    head
                ));
            }
            if !ids.insert(a.agent_id) {
                return config(format!("duplicate agent id {}", a.agent_id));
            }
        }
        Ok(())
    }
}

/// Outcome of one distillation round.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusRecord {
    pub round: usize,
    pub consensus: DistributionBatch,
    /// Per-agent `KL(own || consensus)` before the digestion step.
    pub kl_losses: Vec<f64>,
    pub kl_grad_norms: Vec<f64>,
    /// K uploads plus one broadcast.
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub stats: Vec<RoundStats>,
    pub consensus: Option<ConsensusRecord>,
}

impl RoundRecord {
    /// Mean over agents of the episode return: the system objective.
    pub fn system_return(&self) -> f64 {
        self.stats.iter().map(RoundStats::mean_return).sum::<f64>() / self.stats.len() as f64
    }

    pub fn bytes(&self) -> usize {
        self.consensus.as_ref().map_or(0, |c| c.bytes)
    }
}

/// Averages K distribution batches elementwise. Categorical rows are averaged;
/// Gaussian batches average the means and the variances separately. Optional
/// weights must be non-negative and sum to one.
pub fn aggregate(batches: &[DistributionBatch], weights: Option<&[f64]>) -> Result<DistributionBatch> {
    let Some(first) = batches.first() else {
        return config("aggregation needs at least one batch");
    };
    for b in &batches[1..] {
        if b.kind() != first.kind() || b.n_states() != first.n_states() || b.dim() != first.dim() {
            return config("aggregated batches differ in kind or shape");
        }
    }
    let k = batches.len();
    let w: Vec<f64> = match weights {
        None => vec![1.0 / k as f64; k],
        Some(w) => {
            if w.len() != k {
                return config(format!("{} weights for {k} batches", w.len()));
            }
            if w.iter().any(|&x| !(x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return config("aggregation weights must be non-negative and sum to 1");
            }
            w.to_vec()
        }
    };
    // x_0 + sum_k w_k (x_k - x_0): exact when all inputs are identical.
    let average = |pick: &dyn Fn(&DistributionBatch) -> &[f64]| -> Vec<f64> {
        let base = pick(first);
        let mut out = base.to_vec();
        for (b, &wk) in batches.iter().zip(&w).skip(1) {
            for ((o, &x), &x0) in out.iter_mut().zip(pick(b)).zip(base) {
                *o += wk * (x - x0);
            }
        }
        out
    };
    Ok(match first {
        DistributionBatch::Categorical { n_states, n_actions, .. } => DistributionBatch::Categorical {
            n_states: *n_states,
            n_actions: *n_actions,
            probs: average(&|b| match b {
                DistributionBatch::Categorical { probs, .. } => probs,
                _ => unreachable!(),
            }),
        },
        DistributionBatch::Gaussian { n_states, a_dim, .. } => DistributionBatch::Gaussian {
            n_states: *n_states,
            a_dim: *a_dim,
            mean: average(&|b| match b {
                DistributionBatch::Gaussian { mean, .. } => mean,
                _ => unreachable!(),
            }),
            var: average(&|b| match b {
                DistributionBatch::Gaussian { var, .. } => var,
                _ => unreachable!(),
            }),
        },
    })
}

/// Extract, aggregate, broadcast, digest. All extractions finish before any
/// agent updates.
pub fn distillation_round(
    agents: &mut [LocalAgent],
    public: &PublicStateSet,
    round: usize,
) -> Result<ConsensusRecord> {
    let uploads: Vec<Vec<u8>> = agents
        .par_iter()
        .map(|a| {
            a.policy
                .extract_batch(public)
                .map(|b| b.encode())
                .map_err(|e| e.context(format!("agent {} round {round} extraction", a.id())))
        })
        .collect::<Result<_>>()?;

    let received: Vec<DistributionBatch> =
        uploads.iter().map(|u| DistributionBatch::decode(u)).collect::<Result<_>>()?;
    let consensus = aggregate(&received, None)?;
    consensus.validate(1e-9).map_err(|e| e.context(format!("round {round} consensus")))?;
    let broadcast = consensus.encode();
    let bytes = uploads.iter().map(Vec::len).sum::<usize>() + broadcast.len();

    let digested: Vec<(f64, f64)> = agents
        .par_iter_mut()
        .map(|a| {
            let ctx = |e: Error| e.context(format!("agent {} round {round} digestion", a.config.agent_id));
            let global = DistributionBatch::decode(&broadcast).map_err(ctx)?;
            let (loss, grad) = a.policy.kl_batch_loss(public, &global).map_err(ctx)?;
            let lr = a.config.learning_rate;
            a.policy.adam_descend(&mut a.digest_adam, &grad, lr).map_err(ctx)?;
            Ok((loss, grad.norm()))
        })
        .collect::<Result<_>>()?;

    let (kl_losses, kl_grad_norms) = digested.into_iter().unzip();
    Ok(ConsensusRecord { round, consensus, kl_losses, kl_grad_norms, bytes })
}

/// A federation in progress.
#[derive(Debug, Clone)]
pub struct Federation {
    pub agents: Vec<LocalAgent>,
    public: Option<PublicStateSet>,
    interval: Interval,
    rounds: usize,
    next_round: usize,
}

impl Federation {
    /// Every agent seeds its own stream from `config.seed`. A public set is
    /// required unless the interval is `Never`.
    pub fn new(config: &FedRunConfig, public: Option<PublicStateSet>) -> Result<Self> {
        config.validate()?;
        if let Interval::Every(_) = config.interval {
            match &public {
                None => return crate::error::config("distillation requires a public state set"),
                Some(p) if p.dim() != crate::env::STATE_DIM => {
                    return crate::error::config("public state dimension does not match the environment")
                }
                _ => {}
            }
        }
        let agents = config
            .agents
            .iter()
            .map(|a| LocalAgent::new(a.clone(), config.env.clone(), config.seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { agents, public, interval: config.interval, rounds: config.rounds, next_round: 0 })
    }

    pub fn head(&self) -> HeadKind {
        self.agents[0].config.head
    }

    pub fn next_round(&self) -> usize {
        self.next_round
    }

    pub fn is_finished(&self) -> bool {
        self.next_round >= self.rounds
    }

    /// Runs one round (local training, then distillation when scheduled).
    pub fn step(&mut self) -> Result<RoundRecord> {
        if self.is_finished() {
            return config("federation already ran all rounds");
        }
        let round = self.next_round;
        let stats: Vec<RoundStats> =
            self.agents.par_iter_mut().map(|a| a.train_round(round)).collect::<Result<_>>()?;
        let consensus = if self.interval.fires(round) {
            let public = self.public.as_ref().expect("checked at construction");
            Some(distillation_round(&mut self.agents, public, round)?)
        } else {
            None
        };
        if self.agents.iter().any(|a| !a.policy.params().is_finite()) {
            return numeric(format!("round {round}: non-finite parameters"));
        }
        self.next_round += 1;
        Ok(RoundRecord { round, stats, consensus })
    }

    /// Runs all remaining rounds, calling `observe` after each.
    pub fn run_with(&mut self, mut observe: impl FnMut(&Federation, &RoundRecord)) -> Result<Vec<RoundRecord>> {
        let mut out = Vec::with_capacity(self.rounds - self.next_round);
        while !self.is_finished() {
            let rec = self.step()?;
            observe(self, &rec);
            out.push(rec);
        }
        Ok(out)
    }

    pub fn run(&mut self) -> Result<Vec<RoundRecord>> {
        self.run_with(|_, _| {})
    }
}

/// Builds and runs a federation to completion.
pub fn run(config: &FedRunConfig, public: Option<PublicStateSet>) -> Result<Vec<RoundRecord>> {
    Federation::new(config, public)?.run()
}
