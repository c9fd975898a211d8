//! Experiment harness over the lawn-core models: strict TOML configuration,
//! deterministic artifact generation, and a manifest-driven report check.
//!
//! Every run receives a config and a seed and writes CSV artifacts plus a
//! `run_manifest.json` into its output directory; rerunning with the same
//! config and seed reproduces every byte.

pub mod capacity;
pub mod config;
pub mod control_run;
pub mod corridor_run;
pub mod error;
pub mod manifest;
pub mod report;
