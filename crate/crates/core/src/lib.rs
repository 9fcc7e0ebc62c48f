//! Teacher–student toolkit for shallow networks with quadratic activation:
//! closed-form risks and gradients, energy barriers for rank-deficient
//! students, gradient-descent experiments, initialization diagnostics and
//! sample-complexity geometry.

pub mod data;
pub mod error;
pub mod geometry;
pub mod init;
pub mod io;
pub mod landscape;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod risk;
pub mod rng;

pub use data::{label_dataset, sample_dataset, Dataset};
pub use error::{Error, Result};
pub use model::{
    discrepancy, Activation, Discrepancy, Distribution, Moments, Network, StudentWeights, TeacherModel,
};
pub use risk::{Objective, RiskReport};
