//! Models for low-altitude wireless networks where communication, sensing,
//! and flight control share one infrastructure.
//!
//! The crate is organized around the pipeline a network planner walks through:
//!
//! - [`airspace`]: discretize a bounded 3D volume into cells and track which
//!   UAV occupies which cell.
//! - [`channel`]: map beam sharing to SINR and per-UAV spectral efficiency,
//!   and locate the capacity regime a traffic load falls into.
//! - [`corridor`]: carve the volume into layered air corridors, derive how
//!   many concurrent flights each corridor's beam resources support, and run
//!   admission control against live occupancy.
//! - [`control`]: close the loop between link reliability, sensing accuracy,
//!   and flight-state regulation, including Lyapunov drift certificates and
//!   the instability-rate SINR floor.
//! - [`beamforming`]: uniform linear array steering, sensing gain, and the
//!   minimum-power beam design that meets both an SINR floor and a drift
//!   constraint.
//!
//! All public numeric interfaces are linear-scale; decibel conversion is the
//! caller's concern.

pub mod airspace;
pub mod beamforming;
pub mod channel;
pub mod control;
pub mod corridor;
pub mod geom;
pub mod rng;
