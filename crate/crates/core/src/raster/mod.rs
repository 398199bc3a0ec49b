//! Scene ingestion, resampling between band and label grids, tiling and
//! synthetic data.

pub mod bands;
pub mod classes;
pub mod erb1;
pub mod manifest;
pub mod resample;
pub mod scene;
pub mod synth;
pub mod tiles;

pub use bands::{Band, BandMode};
pub use classes::{ClassEntry, ClassTable, NO_DATA};
pub use manifest::{Manifest, SceneEntry, Split};
pub use resample::{interpolate_labels, LabelRaster};
pub use scene::{Normalization, Scene};
pub use synth::{synthesize_dataset, synthesize_scene};
pub use tiles::{tile_iterator, Tile};
