//! Allocation of testing sites under three criteria: population coverage,
//! D-optimality of the resulting spatial design, and equity of access
//! across sociodemographic strata.

pub mod cli;
pub mod config;
pub mod coverage;
pub mod domain;
pub mod equity;
pub mod error;
pub mod gp_design;
pub mod ingest;
pub mod objective;
pub mod run;
pub mod serde_float;
pub mod service;
pub mod solver;

pub use domain::{
    Allocation, Area, CandidateSite, Point, Region, ScoreTriple, StratumAxis, StratumKey, Weights,
};
pub use error::{Error, Result};
