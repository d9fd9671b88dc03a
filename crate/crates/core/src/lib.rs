//! Coverage-driven scenario testing for autonomous-driving controllers.
pub mod coverage;
pub mod error;
pub mod geom;
pub mod monitors;
pub mod opendrive;
pub mod orchestrator;
pub mod param_space;
pub mod reactive;
pub mod sampler;
pub mod scene;
pub mod sim;
pub use error::{Error, Result};
