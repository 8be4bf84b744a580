//! Cart-pole environments (discrete and continuous force) and the public
//! state set used as distillation input.

use std::fmt::Write as _;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config, numeric, Error, Result};
use crate::nn::Activation;
use crate::policy::{Action, HeadKind};
use crate::reinforce::{AgentConfig, LocalAgent};

pub const STATE_DIM: usize = 4;
pub type State = [f64; STATE_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    CartPoleDiscrete,
    CartPoleContinuous,
}

impl EnvKind {
    pub fn head(self) -> HeadKind {
        match self {
            EnvKind::CartPoleDiscrete => HeadKind::Categorical,
            EnvKind::CartPoleContinuous => HeadKind::Gaussian,
        }
    }

    /// Output width of a policy network for this environment.
    pub fn action_width(self) -> usize {
        match self {
            EnvKind::CartPoleDiscrete => 2,
            EnvKind::CartPoleContinuous => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::CartPoleDiscrete => "cartpole-discrete",
            EnvKind::CartPoleContinuous => "cartpole-continuous",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cartpole-discrete" | "cartpole" => Ok(EnvKind::CartPoleDiscrete),
            "cartpole-continuous" | "pendulum" => Ok(EnvKind::CartPoleContinuous),
            other => config(format!("unknown environment `{other}`")),
        }
    }
}

/// Classic cart-pole constants.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub max_steps: usize,
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_pole_length: f64,
    pub force_mag: f64,
    pub tau: f64,
    pub x_threshold: f64,
    pub theta_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next_state: State,
    pub reward: f64,
    pub done: bool,
}

impl EnvSpec {
    pub fn new(kind: EnvKind) -> Self {
        Self {
            kind,
            max_steps: 500,
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_pole_length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            x_threshold: 2.4,
            theta_threshold: 12.0 * 2.0 * std::f64::consts::PI / 360.0,
        }
    }

    pub fn with_max_steps(mut self, h: usize) -> Self {
        self.max_steps = h;
        self
    }

    /// Each component uniform in `[-0.05, 0.05]`.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let mut s = [0.0; STATE_DIM];
        for v in &mut s {
            *v = rng.random_range(-0.05..=0.05);
        }
        s
    }

    pub fn force(&self, action: &Action) -> Result<f64> {
        match (self.kind, action) {
            (EnvKind::CartPoleDiscrete, Action::Discrete(0)) => Ok(-self.force_mag),
            (EnvKind::CartPoleDiscrete, Action::Discrete(1)) => Ok(self.force_mag),
            (EnvKind::CartPoleContinuous, Action::Continuous(a)) if a.len() == 1 => {
                if !a[0].is_finite() {
                    return numeric("non-finite continuous action");
                }
                Ok(a[0].clamp(-self.force_mag, self.force_mag))
            }
            (_, a) => config(format!("action {a:?} is not valid for {}", self.kind.name())),
        }
    }

    /// Pure dynamics: one semi-implicit Euler step. `done` reflects the
    /// position/angle thresholds only; the horizon is tracked by [`Episode`].
    pub fn step(&self, state: &State, action: &Action) -> Result<StepOutcome> {
        if state.iter().any(|v| !v.is_finite()) {
            return numeric("non-finite environment state");
        }
        let force = self.force(action)?;
        let [x, x_dot, theta, theta_dot] = *state;
        let total_mass = self.cart_mass + self.pole_mass;
        let polemass_length = self.pole_mass * self.half_pole_length;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + polemass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (self.gravity * sin - cos * temp)
            / (self.half_pole_length * (4.0 / 3.0 - self.pole_mass * cos * cos / total_mass));
        let x_acc = temp - polemass_length * theta_acc * cos / total_mass;

        let x_dot = x_dot + self.tau * x_acc;
        let x = x + self.tau * x_dot;
        let theta_dot = theta_dot + self.tau * theta_acc;
        let theta = theta + self.tau * theta_dot;
        let next_state = [x, x_dot, theta, theta_dot];
        if next_state.iter().any(|v| !v.is_finite()) {
            return numeric("dynamics produced a non-finite state");
        }
        let done = x.abs() > self.x_threshold || theta.abs() > self.theta_threshold;
        Ok(StepOutcome { next_state, reward: 1.0, done })
    }
}

/// One running episode: tracks the step count against the horizon.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    spec: &'a EnvSpec,
    state: State,
    steps: usize,
    done: bool,
}

impl<'a> Episode<'a> {
    pub fn start<R: Rng + ?Sized>(spec: &'a EnvSpec, rng: &mut R) -> Self {
        Self { spec, state: spec.reset(rng), steps: 0, done: false }
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        if self.done {
            return Ok(StepOutcome { next_state: self.state, reward: 0.0, done: true });
        }
        let mut out = self.spec.step(&self.state, action)?;
        self.steps += 1;
        if self.steps >= self.spec.max_steps {
            out.done = true;
        }
        self.state = out.next_state;
        self.done = out.done;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: State,
    pub action: Action,
    pub reward: f64,
    pub next_state: State,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.steps.iter().map(|t| t.reward).sum()
    }

    /// Consecutive transitions chain and only the last one may be terminal.
    pub fn is_contiguous(&self) -> bool {
        let chained = self.steps.windows(2).all(|w| w[0].next_state == w[1].state && !w[0].done);
        chained && !self.steps.is_empty()
    }
}

/// `sum_t gamma^t r_t`.
pub fn discounted_return(traj: &Trajectory, gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    for t in &traj.steps {
        total += discount * t.reward;
        discount *= gamma;
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Generated { seed: u64, warmup_rounds: usize, rollouts: usize },
    Loaded,
    Manual,
}

/// Shared distillation inputs: `n` states of dimension `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PublicStateSet {
    dim: usize,
    data: Vec<f64>,
    pub provenance: Provenance,
}

const STATES_HEADER: &str = "# fedhpd-states v1";

impl PublicStateSet {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return config("public state set must not be empty");
        };
        let dim = first.len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return config("public state rows must share a non-zero dimension");
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return numeric("public state set contains non-finite values");
        }
        Ok(Self { dim, data: rows.concat(), provenance: Provenance::Manual })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Text format: header line, then one comma-separated row of
    /// 17-significant-digit decimals per state.
    pub fn to_text(&self) -> String {
        let mut out = format!("{STATES_HEADER} dim={} n={}\n", self.dim, self.len());
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty state file".into()))?;
        let rest = header
            .strip_prefix(STATES_HEADER)
            .ok_or_else(|| Error::Format(format!("bad state file header `{header}`")))?;
        let mut dim = None;
        let mut n = None;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("dim", v)) => dim = v.parse::<usize>().ok(),
                Some(("n", v)) => n = v.parse::<usize>().ok(),
                _ => return Err(Error::Format(format!("unexpected header field `{field}`"))),
            }
        }
        let (dim, n) = match (dim, n) {
            (Some(d), Some(n)) if d > 0 && n > 0 => (d, n),
            _ => return Err(Error::Format("state file header needs positive dim and n".into())),
        };
        let mut data = Vec::with_capacity(dim * n);
        let mut count = 0;
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let before = data.len();
            for tok in line.split(',') {
                let v: f64 = tok
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("line {}: bad number `{tok}`", lineno + 2)))?;
                data.push(v);
            }
            if data.len() - before != dim {
                return Err(Error::Format(format!("line {}: expected {dim} values", lineno + 2)));
            }
            count += 1;
        }
        if count != n {
            return Err(Error::Format(format!("header says n={n} but found {count} rows")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("state file contains non-finite values".into()));
        }
        Ok(Self { dim, data, provenance: Provenance::Loaded })
    }
}

/// Round-trippable 17-significant-digit formatting.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Virtual-agent defaults: 32x32 tanh network, learning rate 1e-3.
pub fn virtual_agent_config(kind: EnvKind) -> AgentConfig {
    AgentConfig {
        agent_id: 0,
        hidden: vec![(32, Activation::Tanh), (32, Activation::Tanh)],
        head: kind.head(),
        learning_rate: 1e-3,
        episodes_per_round: 1,
        reward_to_go: false,
        gamma: 0.99,
    }
}

pub const DEFAULT_WARMUP_ROUNDS: usize = 200;
pub const DEFAULT_PUBLIC_SET_SIZE: usize = 512;

/// Trains a virtual agent for `warmup_rounds`, rolls it out `rollouts` times
/// and subsamples `n` of the visited (pre-action) states.
pub fn generate_public_states(
    spec: &EnvSpec,
    warmup_rounds: usize,
    rollouts: usize,
    n: usize,
    seed: u64,
) -> Result<PublicStateSet> {
    if n == 0 {
        return config("public state set size must be at least 1");
    }
    if rollouts == 0 {
        return config("public state generation needs at least one rollout");
    }
    let mut agent = LocalAgent::new(virtual_agent_config(spec.kind), spec.clone(), seed)?;
    for round in 0..warmup_rounds {
        agent.train_round(round)?;
    }
    let mut visited: Vec<Vec<f64>> = Vec::new();
    for _ in 0..rollouts {
        let traj = agent.rollout()?;
        visited.extend(traj.steps.iter().map(|t| t.state.to_vec()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x05ee_d5e7);
    let rows: Vec<Vec<f64>> = if visited.len() >= n {
        let mut picks = index::sample(&mut rng, visited.len(), n).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| visited[i].clone()).collect()
    } else {
        (0..n).map(|_| visited[rng.random_range(0..visited.len())].clone()).collect()
    };
    let mut set = PublicStateSet::from_rows(rows)?;
    set.provenance = Provenance::Generated { seed, warmup_rounds, rollouts };
    Ok(set)
}
