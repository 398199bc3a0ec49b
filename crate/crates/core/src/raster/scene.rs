use serde::{Deserialize, Serialize};

use super::bands::{Band, BandMode};
use super::classes::NO_DATA;
use super::resample::{interpolate_labels, LabelRaster};
use crate::error::{config_err, shape_err, Error, Result};
use crate::tensor::Tensor;

/// Working resolution of every band stack after ingestion.
pub const BAND_RESOLUTION_M: f64 = 20.0;
/// Native resolution of the reference labels.
pub const LABEL_RESOLUTION_M: f64 = 300.0;

/// One co-registered band stack and label raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    /// `[B, H, W]`.
    pub bands: Tensor<f32>,
    pub band_ids: Vec<Band>,
    pub resolution_m: f64,
    /// Contiguous class ids or [`NO_DATA`].
    pub labels: LabelRaster,
    pub acquisition_tag: String,
    pub cloud_mask: Option<Vec<bool>>,
}

impl Scene {
    pub fn height(&self) -> usize {
        self.bands.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.bands.shape()[2]
    }

    pub fn num_bands(&self) -> usize {
        self.bands.shape()[0]
    }

    /// Checks shapes, footprint agreement and label range.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let s = self.bands.shape();
        if s.len() != 3 || s[0] != self.band_ids.len() {
            return Err(shape_err!("band stack {:?} for {} band ids", s, self.band_ids.len()));
        }
        check_footprint(s[1], s[2], self.resolution_m, &self.labels)?;
        if let Some(m) = &self.cloud_mask {
            if m.len() != s[1] * s[2] {
                return Err(shape_err!("cloud mask has {} pixels, scene has {}", m.len(), s[1] * s[2]));
            }
        }
        if let Some(&bad) = self.labels.data.iter().find(|&&v| v != NO_DATA && v as usize >= num_classes) {
            return Err(config_err!("label id {bad} outside {num_classes} classes"));
        }
        Ok(())
    }

    /// Keeps the given bands, in the given order.
    pub fn select_bands(&self, wanted: &[Band]) -> Result<Scene> {
        let plane = self.height() * self.width();
        let mut data = Vec::with_capacity(wanted.len() * plane);
        for b in wanted {
            let i = self
                .band_ids
                .iter()
                .position(|x| x == b)
                .ok_or_else(|| config_err!("scene '{}' has no band {b}", self.id))?;
            data.extend_from_slice(&self.bands.data()[i * plane..(i + 1) * plane]);
        }
        Ok(Scene {
            bands: Tensor::new(vec![wanted.len(), self.height(), self.width()], data)?,
            band_ids: wanted.to_vec(),
            ..self.clone()
        })
    }

    pub fn band_subset(&self, mode: BandMode) -> Result<Scene> {
        self.select_bands(mode.bands())
    }

    /// Labels replicated onto the band grid and cropped to its extent.
    pub fn fine_labels(&self) -> Result<LabelRaster> {
        interpolate_labels(&self.labels, self.resolution_m)?.crop(self.height(), self.width())
    }

    /// Label-grid cell size in band pixels.
    pub fn label_cell(&self) -> Result<usize> {
        super::resample::integer_ratio(self.labels.resolution_m, self.resolution_m).ok_or_else(|| {
            config_err!("label resolution {} m is not a multiple of {} m", self.labels.resolution_m, self.resolution_m)
        })
    }

    /// The band stack as a `[1, B, H, W]` batch.
    pub fn as_batch(&self) -> Tensor<f32> {
        self.bands.clone().reshape(vec![1, self.num_bands(), self.height(), self.width()]).expect("same numel")
    }
}

/// Band and label footprints must agree within one label pixel.
pub fn check_footprint(h: usize, w: usize, resolution_m: f64, labels: &LabelRaster) -> Result<()> {
    let lr = labels.resolution_m;
    for (what, px, cells) in [("height", h, labels.height), ("width", w, labels.width)] {
        let d = (px as f64 * resolution_m - cells as f64 * lr).abs();
        if d >= lr - 1e-9 {
            return Err(shape_err!(
                "{what}: {px} px at {resolution_m} m vs {cells} labels at {lr} m differ by {d} m"
            ));
        }
    }
    Ok(())
}

/// Number of label cells covering `px` band pixels.
pub fn label_extent(px: usize, resolution_m: f64, label_resolution_m: f64) -> usize {
    (px as f64 * resolution_m / label_resolution_m - 1e-9).ceil() as usize
}

/// Per-band affine scaling to zero mean and unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub bands: Vec<BandStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub band: Band,
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    /// Fits statistics over every pixel of the given scenes.
    pub fn fit<'a>(scenes: impl IntoIterator<Item = &'a Scene>) -> Result<Self> {
        let mut acc: Vec<(Band, f64, f64, usize)> = Vec::new();
        for s in scenes {
            let plane = s.height() * s.width();
            for (i, &b) in s.band_ids.iter().enumerate() {
                let slot = match acc.iter().position(|a| a.0 == b) {
                    Some(p) => p,
                    None => {
                        acc.push((b, 0.0, 0.0, 0));
                        acc.len() - 1
                    }
                };
                for &v in &s.bands.data()[i * plane..(i + 1) * plane] {
                    acc[slot].1 += v as f64;
                    acc[slot].2 += (v as f64) * (v as f64);
                }
                acc[slot].3 += plane;
            }
        }
        if acc.is_empty() {
            return Err(config_err!("cannot fit normalization without scenes"));
        }
        acc.sort_by_key(|a| a.0);
        let bands = acc
            .into_iter()
            .map(|(band, s, s2, n)| {
                let mean = s / n as f64;
                let var = (s2 / n as f64 - mean * mean).max(0.0);
                BandStats { band, mean, std: var.sqrt().max(1e-6) }
            })
            .collect();
        Ok(Self { bands })
    }

    pub fn apply(&self, scene: &mut Scene) -> Result<()> {
        let plane = scene.height() * scene.width();
        let ids = scene.band_ids.clone();
        let data = scene.bands.data_mut();
        for (i, b) in ids.iter().enumerate() {
            let st = self
                .bands
                .iter()
                .find(|s| s.band == *b)
                .ok_or_else(|| Error::Load { scene: scene.id.clone(), msg: format!("no normalization for {b}") })?;
            let (m, inv) = (st.mean, 1.0 / st.std);
            for v in &mut data[i * plane..(i + 1) * plane] {
                *v = ((*v as f64 - m) * inv) as f32;
            }
        }
        Ok(())
    }
}
