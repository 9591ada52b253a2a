//! Polynomial graph filtering over expanding graphs, with a multi-agent
//! policy that retunes the filter taps as nodes arrive.
//!
//! The crate is `no_std` (it needs `alloc`). Everything stochastic takes an
//! explicit random stream so that an episode replays bit-identically from
//! its seed.
//!
//! Layout:
//! - [`graph`]: the expanding graph, attachment sampling and the transition kernel.
//! - [`episode`]: simulated realizations shared by all methods.
//! - [`filter`]: the order-K filter, incoming-node prediction and loss.
//! - [`autodiff`]: a small tape-based reverse-mode engine.
//! - [`policy`]: the context-aware GNN policy over the filter agents.
//! - [`trainer`]: rollouts, discounted returns, REINFORCE training and evaluation.
//! - [`baselines`]: batch filter, online filter and online GNN.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod baselines;
pub mod episode;
pub mod error;
pub mod filter;
pub mod graph;
pub mod linalg;
pub mod optim;
pub mod policy;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
