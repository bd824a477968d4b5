//! Holding control for a single bus route: simulation, policies, training,
//! decision support and evaluation.

pub mod analytics;
pub mod domain;
pub mod dss;
pub mod io;
pub mod policy;
pub mod rl;
pub mod scenarios;
pub mod sim;
pub mod time;
