//! Cubature Kalman filtering with Huber robustification for dynamic state
//! estimation of a two-axis synchronous generator, plus the noise, scenario
//! and metric tooling to exercise it.

pub mod cubature;
pub mod error;
pub mod experiment;
pub mod machine;
pub mod metrics;
pub mod noise;
pub mod numerics;
pub mod robust;
pub mod scenario;

pub use cubature::{cubature_points, predict, run_filter, update, FilterBelief, Frame, StateSpaceModel};
pub use error::{Error, Result};
pub use machine::{GeneratorModel, GeneratorState, MachineParams};
pub use numerics::SymMatrix;
pub use robust::{robust_update, HuberConfig};
