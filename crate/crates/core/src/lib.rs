//! Bayesian multilevel CAR regression: graphs, samplers, model families,
//! MCMC orchestration, diagnostics, model comparison and simulation.

pub mod compare;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod kv;
pub mod mcmc;
pub mod models;
pub mod sampling;
pub mod simulate;
pub mod study;

pub use error::{Error, ErrorKind, Result};
