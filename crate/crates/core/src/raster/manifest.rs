//! Dataset manifests: JSON index of scenes whose rasters are ERB1 files
//! stored next to the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bands::{Band, BandMode};
use super::classes::{ClassTable, NO_DATA};
use super::erb1;
use super::resample::{integer_ratio, nearest_resize, resample_band, LabelRaster};
use super::scene::{check_footprint, label_extent, Normalization, Scene, BAND_RESOLUTION_M};
use crate::error::{config_err, Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;
/// QA60 bits flagging opaque clouds and cirrus.
pub const QA60_CLOUD_BITS: u32 = (1 << 10) | (1 << 11);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(config_err!("unknown split '{other}' (train|test)")),
        }
    }
}

/// A raster file, optionally at its own resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandSource {
    File(String),
    Sampled { file: String, resolution_m: f64 },
}

impl BandSource {
    pub fn file(&self) -> &str {
        match self {
            BandSource::File(f) | BandSource::Sampled { file: f, .. } => f,
        }
    }

    fn resolution(&self, default: f64) -> f64 {
        match self {
            BandSource::File(_) => default,
            BandSource::Sampled { resolution_m, .. } => *resolution_m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub split: Split,
    /// Grid spacing that `width` and `height` refer to.
    pub resolution_m: f64,
    pub width: usize,
    pub height: usize,
    pub bands: BTreeMap<String, BandSource>,
    pub labels_file: String,
    pub label_resolution_m: f64,
    pub acquired: String,
    /// Optional QA60 quality raster (stored as f32) from which the cloud mask is derived.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa60: Option<BandSource>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub class_table: ClassTable,
    #[serde(default)]
    pub normalization: Option<Normalization>,
    pub scenes: Vec<SceneEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if m.version != MANIFEST_VERSION {
            return Err(config_err!("{}: unsupported manifest version {}", path.display(), m.version));
        }
        m.class_table.validate()?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn num_classes(&self) -> usize {
        self.class_table.len()
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &SceneEntry> {
        self.scenes.iter().filter(move |s| s.split == split)
    }

    pub fn entry(&self, id: &str) -> Result<&SceneEntry> {
        self.scenes.iter().find(|s| s.id == id).ok_or_else(|| config_err!("no scene '{id}' in manifest"))
    }

    /// Reads a scene at 20 m/px with labels mapped to contiguous ids.
    pub fn load_scene(&self, entry: &SceneEntry) -> Result<Scene> {
        let fail = |msg: String| Error::Load { scene: entry.id.clone(), msg };
        self.load_scene_inner(entry).map_err(|e| match e {
            Error::Load { .. } => e,
            other => fail(other.to_string()),
        })
    }

    fn load_scene_inner(&self, e: &SceneEntry) -> Result<Scene> {
        let to = BAND_RESOLUTION_M;
        let (oh, ow) = grid_at(e.height, e.width, e.resolution_m, to)?;
        let mut order: Vec<(Band, &BandSource)> = Vec::with_capacity(e.bands.len());
        for (name, src) in &e.bands {
            order.push((name.parse()?, src));
        }
        order.sort_by_key(|b| b.0);
        let mut data = Vec::with_capacity(order.len() * oh * ow);
        for (_, src) in &order {
            let r = src.resolution(e.resolution_m);
            let (h, w) = grid_at(e.height, e.width, e.resolution_m, r)?;
            let plane = erb1::read_f32(&self.root.join(src.file()), h * w)?;
            data.extend(resample_band(plane, h, w, r, to, oh, ow)?);
        }
        let bands = Tensor::new(vec![order.len(), oh, ow], data)?;

        let lh = label_extent(e.height, e.resolution_m, e.label_resolution_m);
        let lw = label_extent(e.width, e.resolution_m, e.label_resolution_m);
        let codes = erb1::read_u16(&self.root.join(&e.labels_file), lh * lw)?;
        let map = self.class_table.code_to_id();
        let mut ids = Vec::with_capacity(codes.len());
        for c in codes {
            if c == NO_DATA {
                ids.push(NO_DATA);
            } else {
                ids.push(*map.get(&c).ok_or_else(|| config_err!("label code {c} not in class table"))?);
            }
        }
        let labels = LabelRaster::new(lw, lh, e.label_resolution_m, ids)?;
        check_footprint(oh, ow, to, &labels)?;

        let cloud_mask = match &e.qa60 {
            None => None,
            Some(src) => {
                let r = src.resolution(e.resolution_m);
                let (h, w) = grid_at(e.height, e.width, e.resolution_m, r)?;
                let qa = erb1::read_f32(&self.root.join(src.file()), h * w)?;
                let flags: Vec<bool> = qa.iter().map(|&v| (v as u32) & QA60_CLOUD_BITS != 0).collect();
                Some(nearest_resize(&flags, h, w, oh, ow))
            }
        };
        Ok(Scene {
            id: e.id.clone(),
            bands,
            band_ids: order.into_iter().map(|b| b.0).collect(),
            resolution_m: to,
            labels,
            acquisition_tag: e.acquired.clone(),
            cloud_mask,
        })
    }

    /// Loads, selects bands and applies the stored normalization.
    pub fn prepare_scene(&self, entry: &SceneEntry, mode: BandMode) -> Result<Scene> {
        let mut s = self.load_scene(entry)?.band_subset(mode)?;
        if let Some(n) = &self.normalization {
            n.apply(&mut s)?;
        }
        Ok(s)
    }

    /// Loads every scene and checks its invariants; returns the scene count.
    pub fn validate(&self) -> Result<usize> {
        self.class_table.validate()?;
        let mut seen = std::collections::HashSet::new();
        for e in &self.scenes {
            if !seen.insert(&e.id) {
                return Err(config_err!("duplicate scene id '{}'", e.id));
            }
            let s = self.load_scene(e)?;
            s.validate(self.num_classes()).map_err(|err| Error::Load { scene: e.id.clone(), msg: err.to_string() })?;
        }
        Ok(self.scenes.len())
    }
}

/// Pixel extents of a footprint given at `from_m` when sampled at `to_m`.
fn grid_at(h: usize, w: usize, from_m: f64, to_m: f64) -> Result<(usize, usize)> {
    let scale = |n: usize| -> Result<usize> {
        let v = n as f64 * from_m / to_m;
        let r = v.round();
        if (v - r).abs() > 1e-6 || r < 1.0 {
            return Err(config_err!("{n} px at {from_m} m is not a whole number of {to_m} m pixels"));
        }
        Ok(r as usize)
    };
    Ok((scale(h)?, scale(w)?))
}

/// Writes scenes as ERB1 files plus `manifest.json` under `dir`, fitting the
/// normalization on the training split.
pub fn write_dataset(dir: &Path, scenes: &[(Scene, Split)], class_table: &ClassTable) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let id_to_code = class_table.id_to_code();
    let mut entries = Vec::with_capacity(scenes.len());
    for (s, split) in scenes {
        let plane = s.height() * s.width();
        let mut bands = BTreeMap::new();
        for (i, b) in s.band_ids.iter().enumerate() {
            let file = format!("{}_{}.erb1", s.id, b.name());
            erb1::write_f32(&dir.join(&file), &s.bands.data()[i * plane..(i + 1) * plane])?;
            bands.insert(b.name().to_string(), BandSource::File(file));
        }
        let codes: Vec<u16> = s
            .labels
            .data
            .iter()
            .map(|&id| if id == NO_DATA { Ok(NO_DATA) } else { id_to_code.get(&id).copied().ok_or(id) })
            .collect::<std::result::Result<_, u16>>()
            .map_err(|id| config_err!("scene '{}' uses id {id} outside the class table", s.id))?;
        let labels_file = format!("{}_labels.erb1", s.id);
        erb1::write_u16(&dir.join(&labels_file), &codes)?;
        let qa60 = match &s.cloud_mask {
            Some(mask) => {
                let file = format!("{}_QA60.erb1", s.id);
                let qa: Vec<f32> = mask.iter().map(|&c| if c { 1024.0 } else { 0.0 }).collect();
                erb1::write_f32(&dir.join(&file), &qa)?;
                Some(BandSource::File(file))
            }
            None => None,
        };
        integer_ratio(s.labels.resolution_m, s.resolution_m)
            .ok_or_else(|| config_err!("scene '{}': label grid is not aligned with the band grid", s.id))?;
        entries.push(SceneEntry {
            id: s.id.clone(),
            split: *split,
            resolution_m: s.resolution_m,
            width: s.width(),
            height: s.height(),
            bands,
            labels_file,
            label_resolution_m: s.labels.resolution_m,
            acquired: s.acquisition_tag.clone(),
            qa60,
        });
    }
    let train: Vec<&Scene> = scenes.iter().filter(|(_, sp)| *sp == Split::Train).map(|(s, _)| s).collect();
    let normalization = if train.is_empty() { None } else { Some(Normalization::fit(train)?) };
    let m = Manifest {
        version: MANIFEST_VERSION,
        class_table: class_table.clone(),
        normalization,
        scenes: entries,
        root: dir.to_path_buf(),
    };
    m.save(&dir.join("manifest.json"))?;
    Ok(m)
}
