//! Reverse-mode automatic differentiation over the network primitives.

pub mod checkpoint;
mod graph;
pub mod optim;
pub mod params;

pub use graph::{BnParams, Gradients, Graph, Mode, Var};
pub use params::{ParamEntry, ParamId, ParamKind, ParamStore};
