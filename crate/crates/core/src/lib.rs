//! Quantitative security risk management.
//!
//! * [`model`] holds the risk arithmetic: weighted levels, tolerance
//!   classification, combined and global reductions.
//! * [`delphi`] runs anonymous multi-round expert estimation.
//! * [`registry`] reads, writes and stores profiles, registers, catalogs,
//!   sessions and assessment snapshots.
//! * [`treatment`] evaluates and optimizes countermeasure plans.
//! * [`report`] renders tables in full or two-decimal rounding.

pub mod delphi;
pub mod model;
pub mod registry;
pub mod report;
pub mod treatment;

pub use model::{Classification, ImpactMatrix, Objective, ObjectiveSet, RiskLevelResult, RiskRecord};
