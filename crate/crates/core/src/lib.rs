//! Semiparametric G-computation for longitudinal trials with unobserved,
//! time-varying noncompliance.

pub mod compliance_em;
pub mod data_model;
pub mod design;
pub mod error;
pub mod estimators;
pub mod gcomp;
pub mod glm;
pub mod inference;
pub mod mixture;
pub mod pipeline;
pub mod pmm;
pub mod rng;
pub mod sim_study;
pub mod stats;

pub use error::{Error, Result};
