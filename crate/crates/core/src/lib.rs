//! Simulation and analysis toolkit for femtosecond two-electron coincidence
//! experiments at nanotip photoemission sources.
//!
//! The crate models the full measurement chain: stochastic pulsed emission
//! from a hemispherical tip apex, Coulomb-coupled trajectory propagation to a
//! two-detector apparatus, start/stop (TAC/MCA) coincidence histogramming,
//! and the analytic counterparts used to interpret the spectra — Poissonian
//! coincidence statistics, a perturbative dip map for pulse-duration
//! estimation, and quantum-degeneracy (antibunching) estimates.
//!
//! Internal unit system: nanometers, femtoseconds, electronvolts. All public
//! interfaces document their units explicitly.

pub mod config;
pub mod constants;
pub mod degeneracy;
pub mod detection;
pub mod dynamics;
pub mod emission;
pub mod pipeline;
pub mod pulse_duration;
pub mod rng;
pub mod statistics;
pub mod vec3;

pub use config::{ApparatusGeometry, ConfigError, RunConfig};
pub use vec3::Vec3;
