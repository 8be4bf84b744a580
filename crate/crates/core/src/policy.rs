//! Policy heads on top of [`Mlp`]: softmax over discrete actions, or a
//! diagonal Gaussian with a state-independent log standard deviation.
//!
//! Every policy exposes one flat parameter vector. For Gaussian heads it is
//! the network parameters followed by the `log_std` entries, and all
//! gradients returned here use that same layout.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::PublicStateSet;
use crate::error::{config, numeric, Error, Result};
use crate::nn::{read_f64, read_u32, Adam, LayerSpec, Mlp, ParamVector};

/// Entries of the consensus below this are floored inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    Categorical,
    Gaussian,
}

impl HeadKind {
    pub fn tag(self) -> u8 {
        match self {
            HeadKind::Categorical => 0,
            HeadKind::Gaussian => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(HeadKind::Categorical),
            1 => Ok(HeadKind::Gaussian),
            t => Err(Error::Format(format!("unknown head kind tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// Action distribution at a single state.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionDist {
    Categorical(Vec<f64>),
    Gaussian { mean: Vec<f64>, var: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalPolicy {
    pub net: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub net: Mlp,
    pub log_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Categorical(CategoricalPolicy),
    Gaussian(GaussianPolicy),
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl Policy {
    /// Fresh policy with Glorot-initialised network; Gaussian heads start at `log_std = 0`.
    pub fn new<R: Rng + ?Sized>(head: HeadKind, layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let net = Mlp::glorot(layers, rng)?;
        Self::from_net(head, net)
    }

    pub fn from_net(head: HeadKind, net: Mlp) -> Result<Self> {
        match head {
            HeadKind::Categorical => {
                if net.output_dim() < 2 {
                    return config("categorical policy needs at least two actions");
                }
                Ok(Policy::Categorical(CategoricalPolicy { net }))
            }
            HeadKind::Gaussian => {
                let a_dim = net.output_dim();
                Ok(Policy::Gaussian(GaussianPolicy { net, log_std: vec![0.0; a_dim] }))
            }
        }
    }

    pub fn head(&self) -> HeadKind {
        match self {
            Policy::Categorical(_) => HeadKind::Categorical,
            Policy::Gaussian(_) => HeadKind::Gaussian,
        }
    }

    pub fn net(&self) -> &Mlp {
        match self {
            Policy::Categorical(p) => &p.net,
            Policy::Gaussian(p) => &p.net,
        }
    }

    /// Number of actions (categorical) or action dimension (Gaussian).
    pub fn action_dim(&self) -> usize {
        self.net().output_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.net().input_dim()
    }

    pub fn param_count(&self) -> usize {
        match self {
            Policy::Categorical(p) => p.net.param_count(),
            Policy::Gaussian(p) => p.net.param_count() + p.log_std.len(),
        }
    }

    pub fn params(&self) -> ParamVector {
        match self {
            Policy::Categorical(p) => p.net.params().clone(),
            Policy::Gaussian(p) => {
                let mut v = p.net.params().0.clone();
                v.extend_from_slice(&p.log_std);
                ParamVector(v)
            }
        }
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if params.len() != self.param_count() {
            return config(format!(
                "policy expects {} parameters, got {}",
                self.param_count(),
                params.len()
            ));
        }
        match self {
            Policy::Categorical(p) => p.net.set_params(params),
            Policy::Gaussian(p) => {
                let n = p.net.param_count();
                let mut v = params.0;
                let ls = v.split_off(n);
                p.net.set_params(ParamVector(v))?;
                p.log_std = ls;
                p.clamp_log_std();
                Ok(())
            }
        }
    }

    /// One Adam step that *descends* `grad`. Gaussian `log_std` is clamped afterwards.
    pub fn adam_descend(&mut self, adam: &mut Adam, grad: &ParamVector, lr: f64) -> Result<()> {
        match self {
            Policy::Categorical(p) => adam.step(p.net.params_mut(), grad, lr),
            Policy::Gaussian(_) => {
                let mut params = self.params();
                adam.step(&mut params, grad, lr)?;
                self.set_params(params)
            }
        }
    }

    pub fn action_distribution(&self, state: &[f64]) -> Result<ActionDist> {
        let out = self.net().eval(state)?;
        if out.iter().any(|v| !v.is_finite()) {
            return numeric("policy network produced a non-finite output");
        }
        Ok(match self {
            Policy::Categorical(_) => ActionDist::Categorical(softmax(&out)),
            Policy::Gaussian(p) => ActionDist::Gaussian { mean: out, var: p.variances() },
        })
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Action> {
        match self.action_distribution(state)? {
            ActionDist::Categorical(probs) => Ok(Action::Discrete(sample_categorical(&probs, rng))),
            ActionDist::Gaussian { mean, .. } => {
                let Policy::Gaussian(p) = self else { unreachable!() };
                let a = mean
                    .iter()
                    .zip(&p.log_std)
                    .map(|(&m, &ls)| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + ls.exp() * z
                    })
                    .collect();
                Ok(Action::Continuous(a))
            }
        }
    }

    pub fn log_prob(&self, state: &[f64], action: &Action) -> Result<f64> {
        match (self.action_distribution(state)?, action) {
            (ActionDist::Categorical(_), Action::Discrete(a)) => {
                let logits = self.net().eval(state)?;
                self.check_discrete(*a)?;
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
                Ok(logits[*a] - lse)
            }
            (ActionDist::Gaussian { mean, .. }, Action::Continuous(a)) => {
                let Policy::Gaussian(p) = self else { unreachable!() };
                self.check_continuous(a)?;
                let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
                Ok(mean
                    .iter()
                    .zip(a)
                    .zip(&p.log_std)
                    .map(|((m, x), ls)| {
                        let var = (2.0 * ls).exp();
                        -half_ln_2pi - ls - (x - m) * (x - m) / (2.0 * var)
                    })
                    .sum())
            }
            _ => config("action kind does not match policy head"),
        }
    }

    /// Gradient of `log pi(action | state)` with respect to the flat parameters.
    pub fn log_prob_grad(&self, state: &[f64], action: &Action) -> Result<ParamVector> {
        let (out, cache) = self.net().forward(state)?;
        if out.iter().any(|v| !v.is_finite()) {
            return numeric("policy network produced a non-finite output");
        }
        let grad = match (self, action) {
            (Policy::Categorical(p), Action::Discrete(a)) => {
                self.check_discrete(*a)?;
                let seed = categorical_score_seed(&softmax(&out), *a);
                p.net.backward(&cache, &seed)?
            }
            (Policy::Gaussian(p), Action::Continuous(a)) => {
                self.check_continuous(a)?;
                let (mu_seed, ls_grad) = gaussian_score_seed(&out, &p.log_std, a);
                let mut g = p.net.backward(&cache, &mu_seed)?;
                g.0.extend_from_slice(&ls_grad);
                g
            }
            _ => return config("action kind does not match policy head"),
        };
        if !grad.is_finite() {
            return numeric("non-finite log-probability gradient");
        }
        Ok(grad)
    }

    /// Action distributions on every public state, in order.
    pub fn extract_batch(&self, states: &PublicStateSet) -> Result<DistributionBatch> {
        if states.dim() != self.state_dim() {
            return config(format!(
                "public states have dimension {}, policy expects {}",
                states.dim(),
                self.state_dim()
            ));
        }
        let n = states.len();
        let dim = self.action_dim();
        match self {
            Policy::Categorical(_) => {
                let mut probs = Vec::with_capacity(n * dim);
                for s in states.rows() {
                    match self.action_distribution(s)? {
                        ActionDist::Categorical(p) => probs.extend(p),
                        ActionDist::Gaussian { .. } => unreachable!(),
                    }
                }
                Ok(DistributionBatch::Categorical { n_states: n, n_actions: dim, probs })
            }
            Policy::Gaussian(p) => {
                let mut mean = Vec::with_capacity(n * dim);
                let mut var = Vec::with_capacity(n * dim);
                let row_var = p.variances();
                for s in states.rows() {
                    let out = p.net.eval(s)?;
                    if out.iter().any(|v| !v.is_finite()) {
                        return numeric("policy network produced a non-finite output");
                    }
                    mean.extend(out);
                    var.extend_from_slice(&row_var);
                }
                Ok(DistributionBatch::Gaussian { n_states: n, a_dim: dim, mean, var })
            }
        }
    }

    /// Mean over public states of `KL(self || consensus)` and its gradient.
    /// The consensus is treated as a constant.
    pub fn kl_batch_loss(
        &self,
        states: &PublicStateSet,
        consensus: &DistributionBatch,
    ) -> Result<(f64, ParamVector)> {
        if consensus.n_states() != states.len() {
            return config(format!(
                "consensus has {} rows but the public set has {} states",
                consensus.n_states(),
                states.len()
            ));
        }
        if consensus.kind() != self.head() || consensus.dim() != self.action_dim() {
            return config("consensus kind or width does not match the policy head");
        }
        if states.dim() != self.state_dim() {
            return config("public state dimension does not match the policy input");
        }
        let n = states.len();
        let inv_n = 1.0 / n as f64;
        let dim = self.action_dim();
        let mut loss = 0.0;
        let mut grad = ParamVector::zeros(self.param_count());
        match (self, consensus) {
            (Policy::Categorical(p), DistributionBatch::Categorical { probs: q_all, .. }) => {
                for (i, s) in states.rows().enumerate() {
                    let (logits, cache) = p.net.forward(s)?;
                    let probs = softmax(&logits);
                    let q = &q_all[i * dim..(i + 1) * dim];
                    let (kl, seed) = categorical_kl_seed(&probs, q);
                    loss += kl;
                    if seed.iter().any(|&v| v != 0.0) {
                        let g = p.net.backward(&cache, &seed)?;
                        grad.axpy(inv_n, &g);
                    }
                }
            }
            (Policy::Gaussian(p), DistributionBatch::Gaussian { mean: m_all, var: v_all, .. }) => {
                let var1 = p.variances();
                let ls_len = p.log_std.len();
                let net_len = p.net.param_count();
                for (i, s) in states.rows().enumerate() {
                    let (mu, cache) = p.net.forward(s)?;
                    let mu2 = &m_all[i * dim..(i + 1) * dim];
                    let var2 = &v_all[i * dim..(i + 1) * dim];
                    let mut mu_seed = vec![0.0; dim];
                    for d in 0..dim {
                        if var2[d] <= 0.0 {
                            return config("consensus variance must be positive");
                        }
                        loss += kl_gaussian_1d(mu[d], var1[d], mu2[d], var2[d]);
                        mu_seed[d] = (mu[d] - mu2[d]) / var2[d];
                        // d/d log_std of KL, using var1 = exp(2 log_std)
                        grad.0[net_len + d] += inv_n * (var1[d] / var2[d] - 1.0);
                    }
                    debug_assert_eq!(ls_len, dim);
                    if mu_seed.iter().any(|&v| v != 0.0) {
                        let g = p.net.backward(&cache, &mu_seed)?;
                        for (acc, gi) in grad.0[..net_len].iter_mut().zip(&g.0) {
                            *acc += inv_n * gi;
                        }
                    }
                }
            }
            _ => return config("consensus kind does not match the policy head"),
        }
        loss *= inv_n;
        if !loss.is_finite() || !grad.is_finite() {
            return numeric("non-finite distillation loss or gradient");
        }
        Ok((loss, grad))
    }

    fn check_discrete(&self, a: usize) -> Result<()> {
        if a >= self.action_dim() {
            return config(format!("action {a} out of range for {} actions", self.action_dim()));
        }
        Ok(())
    }

    fn check_continuous(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.action_dim() {
            return config(format!(
                "action has dimension {}, policy expects {}",
                a.len(),
                self.action_dim()
            ));
        }
        Ok(())
    }

    /// Snapshot: network snapshot followed by a head block
    /// (`u8` head tag, `u32` count, `count` f64 log-std values).
    pub fn write_snapshot<W: Write>(&self, w: &mut W) -> Result<()> {
        self.net().write_snapshot(w)?;
        w.write_all(&[self.head().tag()])?;
        let extra: &[f64] = match self {
            Policy::Categorical(_) => &[],
            Policy::Gaussian(p) => &p.log_std,
        };
        w.write_all(&(extra.len() as u32).to_le_bytes())?;
        for v in extra {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(r: &mut R) -> Result<Self> {
        let net = Mlp::read_snapshot(r)?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let head = HeadKind::from_tag(tag[0])?;
        let count = read_u32(r)? as usize;
        let mut policy = Policy::from_net(head, net).map_err(|e| Error::Format(e.to_string()))?;
        match &mut policy {
            Policy::Categorical(_) if count != 0 => {
                return Err(Error::Format("categorical snapshot carries extra parameters".into()))
            }
            Policy::Gaussian(p) => {
                if count != p.log_std.len() {
                    return Err(Error::Format("log-std count does not match action dimension".into()));
                }
                for v in p.log_std.iter_mut() {
                    *v = read_f64(r)?;
                }
            }
            _ => {}
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after policy snapshot".into()));
        }
        Ok(policy)
    }
}

impl GaussianPolicy {
    pub fn variances(&self) -> Vec<f64> {
        self.log_std.iter().map(|ls| (2.0 * ls).exp()).collect()
    }

    fn clamp_log_std(&mut self) {
        for ls in &mut self.log_std {
            *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }
}

/// Inverse-CDF draw from a probability row.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    // rounding left u beyond the final cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Output-layer seed for `grad log softmax(z)[a]`: `e_a - p`.
pub fn categorical_score_seed(probs: &[f64], action: usize) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| if i == action { 1.0 - p } else { -p })
        .collect()
}

/// Seeds for the Gaussian score: `(a - mu) / var` per mean entry and
/// `(a - mu)^2 / var - 1` per log-std entry.
pub fn gaussian_score_seed(mean: &[f64], log_std: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut mu_seed = Vec::with_capacity(mean.len());
    let mut ls_seed = Vec::with_capacity(mean.len());
    for ((&m, &ls), &a) in mean.iter().zip(log_std).zip(action) {
        let var = (2.0 * ls).exp();
        let diff = a - m;
        mu_seed.push(diff / var);
        ls_seed.push(diff * diff / var - 1.0);
    }
    (mu_seed, ls_seed)
}

/// Per-state categorical KL and its logit-space gradient
/// `p_j (l_j - KL)` with `l_j = ln p_j - ln q_j` (both floored).
fn categorical_kl_seed(p: &[f64], q: &[f64]) -> (f64, Vec<f64>) {
    let l: Vec<f64> = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| pi.max(PROB_FLOOR).ln() - qi.max(PROB_FLOOR).ln())
        .collect();
    let kl: f64 = p.iter().zip(&l).map(|(pi, li)| pi * li).sum();
    let seed = p.iter().zip(&l).map(|(pi, li)| pi * (li - kl)).collect();
    (kl, seed)
}

/// `sum_i p_i ln(p_i / q_i)` with `0 ln 0 = 0` and `q` floored at [`PROB_FLOOR`].
pub fn kl_categorical(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return config(format!("row lengths differ: {} vs {}", p.len(), q.len()));
    }
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.max(PROB_FLOOR).ln()))
        .sum();
    Ok(kl.max(0.0))
}

fn kl_gaussian_1d(mu1: f64, var1: f64, mu2: f64, var2: f64) -> f64 {
    let dm = mu2 - mu1;
    0.5 * (var1 / var2 + dm * dm / var2 - 1.0 + (var2 / var1).ln())
}

/// Closed-form `KL(N(mu1, var1) || N(mu2, var2))` summed over independent dimensions.
pub fn kl_gaussian(mu1: &[f64], var1: &[f64], mu2: &[f64], var2: &[f64]) -> Result<f64> {
    let n = mu1.len();
    if var1.len() != n || mu2.len() != n || var2.len() != n {
        return config("gaussian parameter lengths differ");
    }
    if var1.iter().chain(var2).any(|&v| !(v > 0.0)) {
        return config("gaussian variances must be positive");
    }
    Ok((0..n).map(|d| kl_gaussian_1d(mu1[d], var1[d], mu2[d], var2[d])).sum::<f64>().max(0.0))
}

/// Per-state action distributions over a public state set. This is the only
/// payload agents and the server exchange.
#[derive(Debug, Clone, PartialEq)]
pub enum DistributionBatch {
    Categorical { n_states: usize, n_actions: usize, probs: Vec<f64> },
    Gaussian { n_states: usize, a_dim: usize, mean: Vec<f64>, var: Vec<f64> },
}

impl DistributionBatch {
    pub fn kind(&self) -> HeadKind {
        match self {
            DistributionBatch::Categorical { .. } => HeadKind::Categorical,
            DistributionBatch::Gaussian { .. } => HeadKind::Gaussian,
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            DistributionBatch::Categorical { n_states, .. } | DistributionBatch::Gaussian { n_states, .. } => {
                *n_states
            }
        }
    }

    /// `|A|` for categorical batches, action dimension for Gaussian ones.
    pub fn dim(&self) -> usize {
        match self {
            DistributionBatch::Categorical { n_actions, .. } => *n_actions,
            DistributionBatch::Gaussian { a_dim, .. } => *a_dim,
        }
    }

    pub fn row(&self, i: usize) -> ActionDist {
        let d = self.dim();
        match self {
            DistributionBatch::Categorical { probs, .. } => ActionDist::Categorical(probs[i * d..(i + 1) * d].to_vec()),
            DistributionBatch::Gaussian { mean, var, .. } => ActionDist::Gaussian {
                mean: mean[i * d..(i + 1) * d].to_vec(),
                var: var[i * d..(i + 1) * d].to_vec(),
            },
        }
    }

    /// Checks row sums (within `tol`), non-negativity and positive variances.
    pub fn validate(&self, tol: f64) -> Result<()> {
        match self {
            DistributionBatch::Categorical { n_states, n_actions, probs } => {
                if probs.len() != n_states * n_actions {
                    return config("categorical batch has the wrong number of entries");
                }
                for (i, row) in probs.chunks(*n_actions).enumerate() {
                    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                        return numeric(format!("row {i} has a negative or non-finite probability"));
                    }
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > tol {
                        return numeric(format!("row {i} sums to {s}"));
                    }
                }
            }
            DistributionBatch::Gaussian { n_states, a_dim, mean, var } => {
                if mean.len() != n_states * a_dim || var.len() != n_states * a_dim {
                    return config("gaussian batch has the wrong number of entries");
                }
                if mean.iter().any(|m| !m.is_finite()) {
                    return numeric("non-finite gaussian mean");
                }
                if var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                    return numeric("gaussian variance must be positive");
                }
            }
        }
        Ok(())
    }

    /// Wire format: `u8` kind tag, `u32` n_states, `u32` width, then f64 LE
    /// rows (probabilities, or all means followed by all variances).
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.kind().tag());
        out.extend_from_slice(&(self.n_states() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        let payload: Box<dyn Iterator<Item = &f64>> = match self {
            DistributionBatch::Categorical { probs, .. } => Box::new(probs.iter()),
            DistributionBatch::Gaussian { mean, var, .. } => Box::new(mean.iter().chain(var)),
        };
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn encoded_len(&self) -> usize {
        let values = match self {
            DistributionBatch::Categorical { probs, .. } => probs.len(),
            DistributionBatch::Gaussian { mean, var, .. } => mean.len() + var.len(),
        };
        9 + 8 * values
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let kind = HeadKind::from_tag(tag[0])?;
        let n_states = read_u32(&mut r)? as usize;
        let dim = read_u32(&mut r)? as usize;
        let per = match kind {
            HeadKind::Categorical => 1,
            HeadKind::Gaussian => 2,
        };
        let count = n_states * dim * per;
        if r.len() != count * 8 {
            return Err(Error::Format(format!(
                "distribution payload has {} bytes, expected {}",
                r.len(),
                count * 8
            )));
        }
        let values: Vec<f64> = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(match kind {
            HeadKind::Categorical => DistributionBatch::Categorical { n_states, n_actions: dim, probs: values },
            HeadKind::Gaussian => {
                let mut mean = values;
                let var = mean.split_off(n_states * dim);
                DistributionBatch::Gaussian { n_states, a_dim: dim, mean, var }
            }
        })
    }
}
