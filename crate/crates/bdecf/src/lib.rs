//! Bayesian deep ensembles for collaborative filtering.
//!
//! The crate trains two-tower rating predictors whose last layers hold
//! Gaussian weight posteriors, matches the tower embeddings with multi-head
//! self-attention, combines a diverse set of such learners through a learned
//! meta network, and evaluates the result with leave-one-out ranking metrics
//! alongside calibrated uncertainty scores.
//!
//! Start from [`data`] to load or synthesize a rating matrix, [`model`] to
//! train a single learner, [`ensemble`] for the full stack, and [`eval`] for
//! hit-rate / NDCG / MRR measurement. Every random decision flows from one
//! root seed, so training runs, checkpoints, and evaluations reproduce
//! byte-for-byte.

pub mod bayes;
pub mod commands;
pub mod config;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod seeds;
pub mod uncertainty;

pub use error::{Error, Result};
