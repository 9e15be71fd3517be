//! Minimal differentiable building blocks: a parameter store, a
//! reverse-mode tape over dense matrices, and Adam.

mod optim;
mod params;
mod tape;

pub use optim::Adam;
pub use params::{orthogonal, Gradients, Linear, ParamId, ParamSet};
pub use tape::{Tape, Var};
