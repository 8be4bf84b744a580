//! Heterogeneous agent line-ups.
//!
//! `cartpole-10` is the full ten-agent cart-pole table; `cartpole-4` keeps
//! agents 1, 2, 6 and 10 with hidden widths halved. `pendulum-4` keeps agents
//! 1, 2, 6 and 10 of the inverted-pendulum table at full width, and
//! `pendulum-10` is that whole table.

use crate::env::EnvKind;
use crate::error::{config, Result};
use crate::nn::Activation::{self, Relu, Tanh};
use crate::reinforce::AgentConfig;

type Row = (usize, &'static [(usize, Activation)], f64);

const CARTPOLE: &[Row] = &[
    (1, &[(128, Relu)], 1e-3),
    (2, &[(32, Relu), (32, Relu)], 2e-3),
    (3, &[(16, Tanh), (16, Tanh), (32, Tanh)], 4e-3),
    (4, &[(8, Relu), (8, Relu), (8, Relu)], 5e-4),
    (5, &[(32, Tanh), (32, Tanh), (32, Tanh)], 3e-3),
    (6, &[(8, Relu), (8, Relu)], 7e-4),
    (7, &[(64, Tanh), (64, Tanh)], 1e-3),
    (8, &[(16, Relu), (16, Relu)], 5e-4),
    (9, &[(16, Tanh), (32, Tanh), (16, Tanh)], 5e-4),
    (10, &[(32, Relu)], 8e-4),
];

const PENDULUM: &[Row] = &[
    (1, &[(16, Tanh), (32, Tanh)], 1e-4),
    (2, &[(32, Relu), (32, Relu)], 1e-4),
    (3, &[(64, Tanh), (128, Relu)], 6e-5),
    (4, &[(128, Relu), (256, Relu)], 1e-5),
    (5, &[(32, Relu), (64, Tanh)], 1e-4),
    (6, &[(64, Tanh), (64, Tanh)], 8e-5),
    (7, &[(128, Relu), (128, Relu)], 4e-5),
    (8, &[(64, Tanh), (32, Relu)], 7e-5),
    (9, &[(256, Tanh), (128, Tanh)], 2e-5),
    (10, &[(32, Relu), (128, Relu)], 5e-5),
];

pub const PRESET_NAMES: &[&str] = &["cartpole-4", "cartpole-10", "pendulum-4", "pendulum-10"];

fn build(table: &[Row], ids: Option<&[usize]>, halve: bool, env: EnvKind, gamma: f64) -> Vec<AgentConfig> {
    table
        .iter()
        .filter(|(id, _, _)| ids.is_none_or(|keep| keep.contains(id)))
        .map(|&(id, hidden, lr)| AgentConfig {
            agent_id: id,
            hidden: hidden.iter().map(|&(w, a)| (if halve { (w / 2).max(1) } else { w }, a)).collect(),
            head: env.head(),
            learning_rate: lr,
            episodes_per_round: 1,
            reward_to_go: false,
            gamma,
        })
        .collect()
}

/// Agent configs for a named preset, with the environment it was made for.
pub fn preset(name: &str, gamma: f64) -> Result<(EnvKind, Vec<AgentConfig>)> {
    let four: &[usize] = &[1, 2, 6, 10];
    Ok(match name {
        "cartpole-4" => {
            let env = EnvKind::CartPoleDiscrete;
            (env, build(CARTPOLE, Some(four), true, env, gamma))
        }
        "cartpole-10" => {
            let env = EnvKind::CartPoleDiscrete;
            (env, build(CARTPOLE, None, false, env, gamma))
        }
        "pendulum-4" => {
            let env = EnvKind::CartPoleContinuous;
            (env, build(PENDULUM, Some(four), false, env, gamma))
        }
        "pendulum-10" => {
            let env = EnvKind::CartPoleContinuous;
            (env, build(PENDULUM, None, false, env, gamma))
        }
        other => return config(format!("unknown agent preset `{other}` (known: {})", PRESET_NAMES.join(", "))),
    })
}
