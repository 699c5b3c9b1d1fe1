//! Online learning of objective weights from physical corrections, gated by
//! an estimate of whether each correction is relevant to the robot's
//! feature space.

pub mod arm;
pub mod error;
pub mod features;
pub mod harness;
pub mod human;
pub mod learner;
pub mod optim;
pub mod planner;
pub mod rationality;
pub mod scenario;
pub mod session;
pub mod trajectory;

pub use error::{Error, Result};
