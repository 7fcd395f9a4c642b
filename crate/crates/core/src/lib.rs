//! Closed-loop driving policy: kinematics, scenario replay environment,
//! policy network, imitation pre-training and reinforced post-training.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod features;
pub mod geometry;
pub mod il;
pub mod metrics;
pub mod optim;
pub mod policy;
pub mod rl;
pub mod scenario;
pub mod suite;
pub mod svg;
pub mod synth;

pub use error::{Error, Result};
