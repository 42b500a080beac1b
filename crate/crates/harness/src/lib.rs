//! Experiment orchestration for the over-the-air federated learning
//! simulator: configuration, dataset ingestion, constant estimation,
//! trace persistence, and the lemma-check suites.

pub mod config;
pub mod constants;
pub mod experiment;
pub mod lemma;
pub mod mnist;
pub mod trace;
