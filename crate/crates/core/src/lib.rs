//! Differentiable programming on a dynamically recorded tape, with the
//! sequence, attention, memory and ODE modules used to model and forecast
//! discrete dynamical systems.

pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Gradients, NodeId, Op, Tape};
pub use tensor::Tensor;
