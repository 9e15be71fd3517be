//! Maps dataflow-graph instructions onto the tiles of a streaming
//! coarse-grained reconfigurable array.
//!
//! The model and trainer are generic over the float type; the aliases at
//! the crate root fix it to `f32`, which is what the command-line tool uses.

pub mod baselines;
pub mod device;
pub mod env;
pub mod ir;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod scalar;

pub use scalar::Scalar;

/// Default float type for models.
pub type Float = f32;
pub type ActorCritic = policy::ActorCritic<Float>;
pub type Checkpoint = policy::Checkpoint<Float>;
pub type ModelPolicy<'m> = policy::ModelPolicy<'m, Float>;
pub type GraphTensors = policy::GraphTensors<Float>;
pub type Trainer = ppo::Trainer<Float>;
pub type TrainOutcome = ppo::TrainOutcome<Float>;
