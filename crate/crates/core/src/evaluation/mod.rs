//! Prediction, confusion matrices and boundary-eroded accuracy.

pub mod confusion;
pub mod erosion;
pub mod predict;
pub mod report;

pub use confusion::{ClassMetrics, ConfusionMatrix};
pub use erosion::{disk_offsets, erode_reference};
pub use predict::{argmax_classes, predict_logits, predict_map};
pub use report::{evaluate, write_ppm, Report, Tally};
