use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::confusion::{ClassMetrics, ConfusedPair, ConfusionMatrix};
use super::erosion::erode_reference;
use super::predict::predict_map;
use crate::error::{shape_err, Error, Result};
use crate::models::Model;
use crate::raster::{BandMode, LabelRaster, Manifest, Split, NO_DATA};
use crate::training::Strategy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub oa: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<u64>>,
    pub excluded_fraction: f64,
    pub evaluated_pixels: u64,
    pub most_confused: Vec<ConfusedPair>,
    pub strategy: Strategy,
    pub split: Split,
    pub erode_m: f64,
    /// Grid on which accuracy was measured.
    pub grid_resolution_m: f64,
    pub scenes: usize,
}

impl Report {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Accumulator for one evaluation grid.
#[derive(Clone, Debug)]
pub struct Tally {
    pub matrix: ConfusionMatrix,
    pub labelled: u64,
    pub excluded: u64,
}

impl Tally {
    pub fn new(classes: usize) -> Self {
        Self { matrix: ConfusionMatrix::new(classes), labelled: 0, excluded: 0 }
    }

    /// Adds one scene: reference pixels near a boundary are dropped first.
    pub fn add(&mut self, reference: &LabelRaster, predicted: &LabelRaster, erode_m: f64) -> Result<()> {
        if (reference.width, reference.height) != (predicted.width, predicted.height) {
            return Err(shape_err!(
                "reference {}x{} vs prediction {}x{}",
                reference.height,
                reference.width,
                predicted.height,
                predicted.width
            ));
        }
        let mask = erode_reference(reference, erode_m);
        for (&r, &m) in reference.data.iter().zip(&mask) {
            if r != NO_DATA {
                self.labelled += 1;
                self.excluded += m as u64;
            }
        }
        self.matrix.accumulate(&reference.data, &predicted.data, Some(&mask))
    }

    pub fn excluded_fraction(&self) -> f64 {
        if self.labelled == 0 {
            0.0
        } else {
            self.excluded as f64 / self.labelled as f64
        }
    }
}

/// Predicts every scene of a split and scores it against its reference:
/// nearest-replicated labels for the fine strategy, native labels for the coarse one.
pub fn evaluate(
    model: &Model<f32>,
    manifest: &Manifest,
    split: Split,
    erode_m: f64,
    strategy: Strategy,
    tile: Option<usize>,
) -> Result<(ConfusionMatrix, Report)> {
    let mode = BandMode::for_count(model.config.input_bands())?;
    let mut tally = Tally::new(manifest.num_classes());
    let mut grid = 0.0;
    let mut scenes = 0;
    for entry in manifest.entries(split) {
        let scene = manifest.prepare_scene(entry, mode)?;
        let pred = predict_map(model, &scene, strategy, tile)?;
        let reference = match strategy {
            Strategy::Fine => scene.fine_labels()?,
            Strategy::Coarse => scene.labels.clone(),
        };
        grid = reference.resolution_m;
        tally.add(&reference, &pred, erode_m)?;
        scenes += 1;
        log::info!("{}: running OA {:.4}", entry.id, tally.matrix.oa());
    }
    let table = &manifest.class_table;
    let report = Report {
        oa: tally.matrix.oa(),
        per_class: tally.matrix.per_class(|id| table.name(id).to_string()),
        confusion: tally.matrix.counts.clone(),
        excluded_fraction: tally.excluded_fraction(),
        evaluated_pixels: tally.matrix.total(),
        most_confused: tally.matrix.most_confused(5),
        strategy,
        split,
        erode_m,
        grid_resolution_m: grid,
        scenes,
    };
    Ok((tally.matrix, report))
}

/// Fixed preview color of a class id; no-data is black.
pub fn class_color(id: u16) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 24] = [
        [170, 240, 240], [255, 255, 100], [220, 240, 100], [205, 205, 102],
        [0, 100, 0], [0, 160, 0], [170, 200, 0], [0, 60, 0],
        [40, 100, 0], [120, 130, 0], [140, 160, 0], [190, 150, 0],
        [150, 100, 0], [255, 180, 50], [255, 235, 175], [0, 120, 90],
        [0, 150, 120], [0, 220, 130], [195, 20, 0], [255, 245, 215],
        [0, 70, 200], [255, 255, 255], [128, 0, 128], [200, 200, 200],
    ];
    if id == NO_DATA {
        [0, 0, 0]
    } else {
        PALETTE[id as usize % PALETTE.len()]
    }
}

/// Binary PPM (P6) rendering of a label raster.
pub fn encode_ppm(map: &LabelRaster) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.reserve(map.data.len() * 3);
    for &v in &map.data {
        out.extend_from_slice(&class_color(v));
    }
    out
}

pub fn write_ppm(path: &Path, map: &LabelRaster) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_ppm(map)).map_err(|e| Error::io(path, e))
}
