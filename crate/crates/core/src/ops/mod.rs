//! Forward/backward numeric kernels used by the differentiation graph.

pub mod conv;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod resample;

pub use pool::IndexMap;
pub use resample::{BoxPool, Interp};
