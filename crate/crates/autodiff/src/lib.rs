//! Dense reverse-mode automatic differentiation for small networks.
//!
//! A [`Graph`] records every operation together with its forward value;
//! [`Graph::backward`] sweeps the record in reverse. Parameters live in plain
//! [`Tensor`]s owned by modules implementing [`Parameterized`] and are copied
//! into a graph for each forward pass.

pub mod adam;
pub mod check;
pub mod checkpoint;
pub mod error;
pub mod fd;
pub mod graph;
pub mod nn;
pub mod tensor;

pub use adam::Adam;
pub use error::{AutodiffError, Result};
pub use graph::{Gradients, Graph, OpKind, Var};
pub use nn::{Activation, BoundMlp, Linear, Mlp, Parameterized};
pub use tensor::Tensor;
