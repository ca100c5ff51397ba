//! Fairness-aware linear regression under group covariate shift.

pub mod allocation;
pub mod api;
pub mod bounds;
pub mod data_gen;
pub mod error;
pub mod estimators;
pub mod io;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod rng;
pub mod service;

pub use error::{ErrorClass, FafError, Result};
pub use model::{Group, PopulationModel, Weight};
pub use nalgebra;
