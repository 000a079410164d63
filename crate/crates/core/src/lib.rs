//! Maximal permissible strategy sets for stochastic systems learned from data.
//!
//! The system `x' = f(x, u) + w` is either known or learned by Gaussian
//! process regression. Transition probabilities between grid cells are
//! bounded by intervals, a piecewise-constant stochastic barrier certifies
//! `N`-step safety over the interval model, and pairs of state and control
//! cells are pruned until the certified bound reaches the target `p`.
//!
//! Modules follow the pipeline: [`geometry`] and [`systems`] describe the
//! problem, [`gp`] and [`transition`] build the interval model, [`barrier`]
//! and [`pruning`] synthesise the certificate and the permissible set,
//! [`validation`] simulates the result, and [`config`] with [`pipeline`]
//! drive everything from a TOML file.

pub mod barrier;
pub mod config;
pub mod error;
pub mod geometry;
pub mod gp;
pub mod pipeline;
pub mod pruning;
pub mod rng;
pub mod systems;
pub mod transition;
pub mod validation;

pub use error::{Error, Result};

/// Code in the guide under `book/` is compiled and run as doctests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/configuration.md")]
    pub mod configuration {}
    #[doc = include_str!("../../../book/src/library.md")]
    pub mod library {}
    #[doc = include_str!("../../../book/src/learning.md")]
    pub mod learning {}
    #[doc = include_str!("../../../book/src/artifacts.md")]
    pub mod artifacts {}
}
