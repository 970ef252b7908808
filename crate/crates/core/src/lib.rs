//! Deep spatio-temporal point processes with low-rank neural kernels.
//!
//! The crate covers the model types, basis networks, kernel evaluation,
//! training objectives and optimization, simulation, prediction, the graph
//! and discrete-time variants, and file formats.

pub mod basis;
pub mod discrete;
pub mod error;
pub mod graph;
pub mod intensity;
pub mod io;
pub mod kernel;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod predict;
pub mod simulate;

pub use error::{Error, Result};
