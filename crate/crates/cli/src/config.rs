//! Experiment configuration.
//!
//! Files are TOML written with dotted keys, one setting per line:
//!
//! ```toml
//! env.kind = "cartpole-discrete"
//! fed.t = 600
//! fed.d = [5, 10, 20]
//! fed.modes = ["nofed", "fedhpd"]
//! seeds = [20, 25, 30]
//! agents.preset = "cartpole-4"
//! public.size = 512
//! output.dir = "runs/cartpole"
//! ```
//!
//! Every key is optional. Command-line flags are merged over the file, then
//! the result is resolved and validated as a whole before anything runs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use fedhpd_core::env::{EnvKind, EnvSpec, DEFAULT_PUBLIC_SET_SIZE, DEFAULT_WARMUP_ROUNDS};
use fedhpd_core::federation::Interval;
use fedhpd_core::nn::Activation;
use fedhpd_core::presets::preset;
use fedhpd_core::reinforce::AgentConfig;
use fedhpd_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEEDS: [u64; 5] = [20, 25, 30, 35, 40];
pub const DEFAULT_ROUNDS: usize = 600;
pub const DEFAULT_INTERVALS: [usize; 3] = [5, 10, 20];
pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_PUBLIC_SEED: u64 = 1;
pub const DEFAULT_ROLLOUTS: usize = 20;
pub const FINAL_WINDOW: usize = 100;

fn bad<T>(key: &str, msg: impl std::fmt::Display) -> Result<T> {
    Err(Error::Config(format!("{key}: {msg}")))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub kind: Option<String>,
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedSection {
    pub k: Option<usize>,
    pub t: Option<usize>,
    pub d: Option<Vec<usize>>,
    pub modes: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublicSection {
    pub size: Option<usize>,
    /// `generate` or `file`.
    pub source: Option<String>,
    pub path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub warmup: Option<usize>,
    pub rollouts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineAgent {
    pub id: usize,
    pub hidden: Vec<usize>,
    pub activation: Activations,
    pub lr: f64,
}

/// One activation for every hidden layer, or one per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Activations {
    Uniform(String),
    PerLayer(Vec<String>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentsSection {
    pub preset: Option<String>,
    pub inline: Option<Vec<InlineAgent>>,
    pub episodes_per_round: Option<usize>,
    pub reward_to_go: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub snapshots: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Each seed generates its own public state set; the grid is rerun per set.
    pub public_seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSection {
    pub samples: Option<usize>,
    pub repeats: Option<usize>,
    pub pairs: Option<usize>,
    pub radius: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub seed: Option<u64>,
}

/// Configuration as written: everything optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub seeds: Option<Vec<u64>>,
    pub gamma: Option<f64>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub fed: FedSection,
    #[serde(default)]
    pub public: PublicSection,
    #[serde(default)]
    pub agents: AgentsSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub diagnose: DiagnoseSection,
}

macro_rules! overlay {
    ($base:expr, $top:expr; $($field:ident).+) => {
        if $top.$($field).+.is_some() {
            $base.$($field).+ = $top.$($field).+.clone();
        }
    };
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(e).context(format!("reading {}", path.display())))?;
        Self::parse(&text).map_err(|e| e.context(path.display().to_string()))
    }

    /// Fields set in `top` replace those in `self`.
    pub fn merge(mut self, top: &RawConfig) -> Self {
        overlay!(self, top; seeds);
        overlay!(self, top; gamma);
        overlay!(self, top; workers);
        overlay!(self, top; env.kind);
        overlay!(self, top; env.max_steps);
        overlay!(self, top; fed.k);
        overlay!(self, top; fed.t);
        overlay!(self, top; fed.d);
        overlay!(self, top; fed.modes);
        overlay!(self, top; public.size);
        overlay!(self, top; public.source);
        overlay!(self, top; public.path);
        overlay!(self, top; public.seed);
        overlay!(self, top; public.warmup);
        overlay!(self, top; public.rollouts);
        if top.agents.preset.is_some() {
            self.agents.preset = top.agents.preset.clone();
            self.agents.inline = None;
        }
        if top.agents.inline.is_some() {
            self.agents.inline = top.agents.inline.clone();
            self.agents.preset = None;
        }
        overlay!(self, top; agents.episodes_per_round);
        overlay!(self, top; agents.reward_to_go);
        overlay!(self, top; output.dir);
        overlay!(self, top; output.snapshots);
        overlay!(self, top; sweep.public_seeds);
        overlay!(self, top; diagnose.samples);
        overlay!(self, top; diagnose.repeats);
        overlay!(self, top; diagnose.pairs);
        overlay!(self, top; diagnose.radius);
        overlay!(self, top; diagnose.epsilon);
        overlay!(self, top; diagnose.delta);
        overlay!(self, top; diagnose.seed);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    NoFed,
    FedHpd,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::NoFed => "nofed",
            Mode::FedHpd => "fedhpd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nofed" => Ok(Mode::NoFed),
            "fedhpd" => Ok(Mode::FedHpd),
            other => bad("fed.modes", format!("unknown mode `{other}` (expected nofed or fedhpd)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PublicSource {
    Generate,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PublicConfig {
    pub size: usize,
    pub source: PublicSource,
    pub seed: u64,
    pub warmup: usize,
    pub rollouts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseConfig {
    pub samples: usize,
    pub repeats: usize,
    pub pairs: usize,
    pub radius: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
}

/// One training run: a mode, an interval and a seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Cell {
    pub mode: Mode,
    /// Distillation interval; `None` for NoFed.
    pub d: Option<usize>,
    pub seed: u64,
}

impl Cell {
    pub fn run_id(&self) -> String {
        match self.d {
            Some(d) => format!("{}_d{d}_s{}", self.mode.name(), self.seed),
            None => format!("{}_s{}", self.mode.name(), self.seed),
        }
    }

    pub fn interval(&self) -> Interval {
        self.d.map_or(Interval::Never, Interval::Every)
    }

    pub fn d_label(&self) -> String {
        self.interval().label()
    }
}

/// Fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub max_steps: usize,
    pub rounds: usize,
    pub intervals: Vec<usize>,
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    pub gamma: f64,
    pub public: PublicConfig,
    pub preset: Option<String>,
    pub agents: Vec<AgentConfig>,
    pub output_dir: PathBuf,
    pub snapshots: bool,
    pub workers: usize,
    pub public_seeds: Vec<u64>,
    pub diagnose: DiagnoseConfig,
}

fn positive(key: &str, v: Option<usize>, default: usize) -> Result<usize> {
    match v.unwrap_or(default) {
        0 => bad(key, "must be at least 1"),
        n => Ok(n),
    }
}

fn positive_real(key: &str, v: Option<f64>, default: f64) -> Result<f64> {
    let v = v.unwrap_or(default);
    if v.is_nan() || v <= 0.0 || !v.is_finite() {
        return bad(key, format!("must be a positive finite number, got {v}"));
    }
    Ok(v)
}

fn unique<T: Ord + Copy + std::fmt::Display>(key: &str, values: &[T]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for v in values {
        if !seen.insert(*v) {
            return bad(key, format!("duplicate value {v}"));
        }
    }
    Ok(())
}

fn inline_agent(a: &InlineAgent, env: EnvKind, gamma: f64, episodes: usize, rtg: bool) -> Result<AgentConfig> {
    let key = format!("agents.inline[id={}]", a.id);
    if a.hidden.contains(&0) {
        return bad(&key, "hidden widths must be positive");
    }
    let names: Vec<&str> = match &a.activation {
        Activations::Uniform(name) => vec![name.as_str(); a.hidden.len()],
        Activations::PerLayer(list) if list.len() == a.hidden.len() => list.iter().map(String::as_str).collect(),
        Activations::PerLayer(list) => {
            return bad(&key, format!("{} activations for {} hidden layers", list.len(), a.hidden.len()))
        }
    };
    let acts = names.into_iter().map(Activation::parse).collect::<Result<Vec<_>>>().map_err(|e| e.context(&key))?;
    Ok(AgentConfig {
        agent_id: a.id,
        hidden: a.hidden.iter().copied().zip(acts).collect(),
        head: env.head(),
        learning_rate: a.lr,
        episodes_per_round: episodes,
        reward_to_go: rtg,
        gamma,
    })
}

impl ExperimentConfig {
    /// Fills defaults and validates every field.
    pub fn resolve(raw: &RawConfig) -> Result<Self> {
        let gamma = raw.gamma.unwrap_or(DEFAULT_GAMMA);
        if !(gamma > 0.0 && gamma <= 1.0) {
            return bad("gamma", format!("must lie in (0, 1], got {gamma}"));
        }

        let env_from_kind = raw.env.kind.as_deref().map(EnvKind::parse).transpose().map_err(|e| e.context("env.kind"))?;
        let episodes = positive("agents.episodes_per_round", raw.agents.episodes_per_round, 1)?;
        let rtg = raw.agents.reward_to_go.unwrap_or(false);
        let (env, preset_name, mut agents) = match (&raw.agents.preset, &raw.agents.inline) {
            (Some(_), Some(_)) => return bad("agents", "set either agents.preset or agents.inline, not both"),
            (None, Some(list)) => {
                let env = env_from_kind.unwrap_or(EnvKind::CartPoleDiscrete);
                let agents = list.iter().map(|a| inline_agent(a, env, gamma, episodes, rtg)).collect::<Result<Vec<_>>>()?;
                (env, None, agents)
            }
            (preset_name, None) => {
                let name = preset_name.clone().unwrap_or_else(|| match env_from_kind {
                    Some(EnvKind::CartPoleContinuous) => "pendulum-4".into(),
                    _ => "cartpole-4".into(),
                });
                let (env, agents) = preset(&name, gamma).map_err(|e| e.context("agents.preset"))?;
                if let Some(k) = env_from_kind {
                    if k != env {
                        return bad("env.kind", format!("{} does not match preset {name} ({})", k.name(), env.name()));
                    }
                }
                (env, Some(name), agents)
            }
        };
        if agents.is_empty() {
            return bad("agents", "at least one agent is required");
        }
        for a in &mut agents {
            a.episodes_per_round = episodes;
            a.reward_to_go = rtg;
            a.validate().map_err(|e| e.context(format!("agent {}", a.agent_id)))?;
        }
        unique("agents.id", &agents.iter().map(|a| a.agent_id).collect::<Vec<_>>())?;
        if let Some(k) = raw.fed.k {
            if k != agents.len() {
                return bad("fed.k", format!("{k} does not match the {} configured agents", agents.len()));
            }
        }

        let max_steps = positive("env.max_steps", raw.env.max_steps, EnvSpec::new(env).max_steps)?;
        let rounds = positive("fed.t", raw.fed.t, DEFAULT_ROUNDS)?;

        let modes = match &raw.fed.modes {
            None => vec![Mode::NoFed, Mode::FedHpd],
            Some(list) => list.iter().map(|m| Mode::parse(m)).collect::<Result<Vec<_>>>()?,
        };
        if modes.is_empty() {
            return bad("fed.modes", "must name at least one mode");
        }
        unique("fed.modes", &modes.iter().map(|m| *m as u8).collect::<Vec<_>>())?;

        let intervals = raw.fed.d.clone().unwrap_or_else(|| DEFAULT_INTERVALS.to_vec());
        if modes.contains(&Mode::FedHpd) && intervals.is_empty() {
            return bad("fed.d", "fedhpd mode needs at least one interval");
        }
        for &d in &intervals {
            if d == 0 || d > rounds {
                return bad("fed.d", format!("interval {d} must lie in [1, fed.t = {rounds}]"));
            }
        }
        unique("fed.d", &intervals)?;

        let seeds = raw.seeds.clone().unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
        if seeds.is_empty() {
            return bad("seeds", "must list at least one seed");
        }
        unique("seeds", &seeds)?;

        let source = match raw.public.source.as_deref().unwrap_or("generate") {
            "generate" => PublicSource::Generate,
            "file" => match &raw.public.path {
                Some(p) => PublicSource::File(p.clone()),
                None => return bad("public.path", "required when public.source = \"file\""),
            },
            other => return bad("public.source", format!("unknown source `{other}` (expected generate or file)")),
        };
        let public = PublicConfig {
            size: positive("public.size", raw.public.size, DEFAULT_PUBLIC_SET_SIZE)?,
            source,
            seed: raw.public.seed.unwrap_or(DEFAULT_PUBLIC_SEED),
            warmup: raw.public.warmup.unwrap_or(DEFAULT_WARMUP_ROUNDS),
            rollouts: positive("public.rollouts", raw.public.rollouts, DEFAULT_ROLLOUTS)?,
        };

        let workers = match raw.workers {
            Some(0) => return bad("workers", "must be at least 1"),
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        let public_seeds = raw.sweep.public_seeds.clone().unwrap_or_default();
        unique("sweep.public_seeds", &public_seeds)?;

        let dg = &raw.diagnose;
        let diagnose = DiagnoseConfig {
            samples: match dg.samples.unwrap_or(256) {
                n if n < 2 => return bad("diagnose.samples", "must be at least 2"),
                n => n,
            },
            repeats: positive("diagnose.repeats", dg.repeats, 1)?,
            pairs: positive("diagnose.pairs", dg.pairs, 200)?,
            radius: positive_real("diagnose.radius", dg.radius, 1e-2)?,
            epsilon: positive_real("diagnose.epsilon", dg.epsilon, 0.1)?,
            delta: positive_real("diagnose.delta", dg.delta, 0.1)?,
            seed: dg.seed.unwrap_or(0),
        };

        Ok(Self {
            env,
            max_steps,
            rounds,
            intervals,
            modes,
            seeds,
            gamma,
            public,
            preset: preset_name,
            agents,
            output_dir: raw.output.dir.clone().unwrap_or_else(|| PathBuf::from("runs")),
            snapshots: raw.output.snapshots.unwrap_or(true),
            workers,
            public_seeds,
            diagnose,
        })
    }

    pub fn env_spec(&self) -> EnvSpec {
        EnvSpec::new(self.env).with_max_steps(self.max_steps)
    }

    pub fn needs_public_set(&self) -> bool {
        self.modes.contains(&Mode::FedHpd)
    }

    /// Cells in a fixed order: NoFed first, then intervals as listed, seeds innermost.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for mode in [Mode::NoFed, Mode::FedHpd].into_iter().filter(|m| self.modes.contains(m)) {
            let ds: Vec<Option<usize>> = match mode {
                Mode::NoFed => vec![None],
                Mode::FedHpd => self.intervals.iter().map(|&d| Some(d)).collect(),
            };
            for d in ds {
                for &seed in &self.seeds {
                    out.push(Cell { mode, d, seed });
                }
            }
        }
        out
    }

    /// The resolved configuration in the same format it was read from.
    /// Agents are always written inline.
    pub fn to_raw(&self) -> RawConfig {
        let inline = self
            .agents
            .iter()
            .map(|a| InlineAgent {
                id: a.agent_id,
                hidden: a.hidden.iter().map(|h| h.0).collect(),
                activation: match a.hidden.first() {
                    Some(&(_, first)) if a.hidden.iter().any(|h| h.1 != first) => {
                        Activations::PerLayer(a.hidden.iter().map(|h| h.1.name().to_string()).collect())
                    }
                    Some(&(_, first)) => Activations::Uniform(first.name().to_string()),
                    None => Activations::Uniform(Activation::Tanh.name().to_string()),
                },
                lr: a.learning_rate,
            })
            .collect();
        let (source, path) = match &self.public.source {
            PublicSource::Generate => ("generate", None),
            PublicSource::File(p) => ("file", Some(p.clone())),
        };
        RawConfig {
            seeds: Some(self.seeds.clone()),
            gamma: Some(self.gamma),
            workers: Some(self.workers),
            env: EnvSection { kind: Some(self.env.name().into()), max_steps: Some(self.max_steps) },
            fed: FedSection {
                k: Some(self.agents.len()),
                t: Some(self.rounds),
                d: Some(self.intervals.clone()),
                modes: Some(self.modes.iter().map(|m| m.name().to_string()).collect()),
            },
            public: PublicSection {
                size: Some(self.public.size),
                source: Some(source.into()),
                path,
                seed: Some(self.public.seed),
                warmup: Some(self.public.warmup),
                rollouts: Some(self.public.rollouts),
            },
            agents: AgentsSection {
                preset: None,
                inline: Some(inline),
                episodes_per_round: self.agents.first().map(|a| a.episodes_per_round),
                reward_to_go: self.agents.first().map(|a| a.reward_to_go),
            },
            output: OutputSection { dir: Some(self.output_dir.clone()), snapshots: Some(self.snapshots) },
            sweep: SweepSection {
                public_seeds: if self.public_seeds.is_empty() { None } else { Some(self.public_seeds.clone()) },
            },
            diagnose: DiagnoseSection {
                samples: Some(self.diagnose.samples),
                repeats: Some(self.diagnose.repeats),
                pairs: Some(self.diagnose.pairs),
                radius: Some(self.diagnose.radius),
                epsilon: Some(self.diagnose.epsilon),
                delta: Some(self.diagnose.delta),
                seed: Some(self.diagnose.seed),
            },
        }
    }

    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        if let Some(p) = &self.preset {
            out.push_str(&format!("# agents expanded from preset {p}\n"));
        }
        out.push_str(&toml::to_string(&self.to_raw()).expect("resolved config serialises"));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::resolve(&RawConfig::parse(text)?)
    }

    #[test]
    fn defaults() {
        let c = resolve("").unwrap();
        assert_eq!(c.env, EnvKind::CartPoleDiscrete);
        assert_eq!(c.seeds, DEFAULT_SEEDS.to_vec());
        assert_eq!(c.gamma, 0.99);
        assert_eq!(c.rounds, 600);
        assert_eq!(c.public.size, 512);
        assert_eq!(c.agents.len(), 4);
        assert_eq!(c.cells().len(), 5 * 4);
    }

    #[test]
    fn dotted_keys() {
        let c = resolve(
            "env.kind = \"cartpole-continuous\"\nfed.t = 50\nfed.d = [5]\nseeds = [1, 2]\n\
             agents.preset = \"pendulum-4\"\npublic.size = 64\nworkers = 3\n",
        )
        .unwrap();
        assert_eq!(c.env, EnvKind::CartPoleContinuous);
        assert_eq!((c.rounds, c.workers, c.public.size), (50, 3, 64));
        let ids: Vec<String> = c.cells().iter().map(Cell::run_id).collect();
        assert_eq!(ids, vec!["nofed_s1", "nofed_s2", "fedhpd_d5_s1", "fedhpd_d5_s2"]);
    }

    #[test]
    fn inline_agents() {
        let c = resolve(
            "[[agents.inline]]\nid = 3\nhidden = [8, 8]\nactivation = \"relu\"\nlr = 0.01\n\
             [[agents.inline]]\nid = 5\nhidden = []\nactivation = \"tanh\"\nlr = 0.002\n",
        )
        .unwrap();
        assert_eq!(c.agents.len(), 2);
        assert_eq!(c.agents[0].hidden, vec![(8, Activation::Relu), (8, Activation::Relu)]);
        assert!(c.agents[1].hidden.is_empty());
        let mixed = resolve("[[agents.inline]]\nid = 1\nhidden = [4, 6]\nactivation = [\"tanh\", \"relu\"]\nlr = 0.1\n").unwrap();
        assert_eq!(mixed.agents[0].hidden, vec![(4, Activation::Tanh), (6, Activation::Relu)]);
        assert!(resolve("[[agents.inline]]\nid = 1\nhidden = [4, 6]\nactivation = [\"tanh\"]\nlr = 0.1\n").is_err());
    }

    #[test]
    fn rejects_malformed_fields_by_name() {
        let cases = [
            ("fed.t = 0", "fed.t"),
            ("fed.t = 10\nfed.d = [20]", "fed.d"),
            ("fed.d = [0]", "fed.d"),
            ("fed.d = [5, 5]", "fed.d"),
            ("seeds = []", "seeds"),
            ("seeds = [1, 1]", "seeds"),
            ("gamma = 1.5", "gamma"),
            ("gamma = 0.0", "gamma"),
            ("workers = 0", "workers"),
            ("public.size = 0", "public.size"),
            ("public.source = \"file\"", "public.path"),
            ("public.source = \"web\"", "public.source"),
            ("fed.modes = [\"both\"]", "fed.modes"),
            ("fed.modes = []", "fed.modes"),
            ("fed.k = 7", "fed.k"),
            ("env.kind = \"lander\"", "env.kind"),
            ("env.kind = \"cartpole-continuous\"\nagents.preset = \"cartpole-4\"", "env.kind"),
            ("agents.preset = \"cartpole-99\"", "agents.preset"),
            ("diagnose.samples = 1", "diagnose.samples"),
            ("diagnose.radius = 0.0", "diagnose.radius"),
            ("fed.rounds = 5", "config"),
            ("colour = 1", "config"),
        ];
        for (text, key) in cases {
            match resolve(text) {
                Err(Error::Config(msg)) => assert!(msg.contains(key), "{text}: {msg}"),
                other => panic!("{text}: expected config error, got {other:?}"),
            }
        }
        assert!(resolve("[[agents.inline]]\nid = 1\nhidden = [4]\nactivation = \"relu\"\nlr = -1.0\n").is_err());
        assert!(resolve("[[agents.inline]]\nid = 1\nhidden = [0]\nactivation = \"relu\"\nlr = 0.1\n").is_err());
    }

    #[test]
    fn merge_prefers_the_top_layer() {
        let base = RawConfig::parse("fed.t = 100\nseeds = [1]\nagents.preset = \"cartpole-10\"").unwrap();
        let top = RawConfig { seeds: Some(vec![9]), ..Default::default() };
        let merged = base.merge(&top);
        assert_eq!(merged.seeds, Some(vec![9]));
        assert_eq!(merged.fed.t, Some(100));
        assert_eq!(merged.agents.preset.as_deref(), Some("cartpole-10"));
    }

    #[test]
    fn resolved_config_reloads_to_itself() {
        let c = resolve("fed.t = 40\nfed.d = [4, 8]\nseeds = [3]\nworkers = 2\nsweep.public_seeds = [7, 8]").unwrap();
        let again = resolve(&c.to_toml()).unwrap();
        assert_eq!(again.agents, c.agents);
        assert_eq!(again.to_raw(), c.to_raw());
        let p = resolve("agents.preset = \"pendulum-10\"\nfed.t = 40").unwrap();
        assert_eq!(resolve(&p.to_toml()).unwrap().agents, p.agents);
    }
}
