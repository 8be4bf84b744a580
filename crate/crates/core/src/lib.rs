//! Federated reinforcement learning across heterogeneous black-box agents
//! through periodic policy distillation on a shared public state set.
//!
//! Modules, bottom up:
//! - [`nn`]: dense networks, flat parameters, Adam.
//! - [`policy`]: categorical and Gaussian heads, KL losses, wire format.
//! - [`env`]: cart-pole environments and public state sets.
//! - [`reinforce`]: per-agent REINFORCE trainer.
//! - [`federation`]: the round scheduler, aggregation and digestion.
//! - [`diagnostics`]: gradient variance and smoothness probes.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod env;
pub mod error;
pub mod federation;
pub mod nn;
pub mod policy;
pub mod presets;
pub mod reinforce;

pub use error::{Error, Result};
