use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Label value marking pixels without reference data; excluded from loss and metrics.
pub const NO_DATA: u16 = 65535;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    /// Code as stored in the label rasters.
    pub code: u16,
    /// Contiguous id used by the models, `0..C`.
    pub id: u16,
    pub name: String,
}

/// Bijection between stored class codes and contiguous model ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTable {
    pub classes: Vec<ClassEntry>,
    #[serde(default)]
    pub cloud_class: Option<u16>,
}

/// GlobCover 2009 legend, in code order.
pub const GLOBCOVER_LEGEND: [(u16, &str); 23] = [
    (11, "Post-flooding or irrigated croplands"),
    (14, "Rainfed croplands"),
    (20, "Mosaic cropland/vegetation"),
    (30, "Mosaic vegetation/cropland"),
    (40, "Closed to open broadleaved evergreen or semi-deciduous forest"),
    (50, "Closed broadleaved deciduous forest"),
    (60, "Open broadleaved deciduous forest/woodland"),
    (70, "Closed needleleaved evergreen forest"),
    (90, "Open needleleaved deciduous or evergreen forest"),
    (100, "Closed to open mixed broadleaved and needleleaved forest"),
    (110, "Mosaic forest or shrubland/grassland"),
    (120, "Mosaic grassland/forest or shrubland"),
    (130, "Closed to open shrubland"),
    (140, "Closed to open herbaceous vegetation"),
    (150, "Sparse vegetation"),
    (160, "Closed to open broadleaved forest regularly flooded"),
    (170, "Closed broadleaved forest permanently flooded"),
    (180, "Closed to open grassland or woody vegetation on regularly flooded soil"),
    (190, "Artificial surfaces and associated areas"),
    (200, "Bare areas"),
    (210, "Water bodies"),
    (220, "Permanent snow and ice"),
    (230, "No data (legend)"),
];

/// Code used for the cloud class (not part of the legend).
pub const CLOUD_CODE: u16 = 250;

impl ClassTable {
    pub fn new(classes: Vec<ClassEntry>, cloud_class: Option<u16>) -> Result<Self> {
        let t = Self { classes, cloud_class };
        t.validate()?;
        Ok(t)
    }

    /// The first `n` legend entries, plus a trailing cloud class when requested.
    pub fn globcover(n: usize, with_cloud: bool) -> Result<Self> {
        if n == 0 || n > GLOBCOVER_LEGEND.len() {
            return Err(config_err!("class count must be in 1..={}, got {n}", GLOBCOVER_LEGEND.len()));
        }
        let mut classes: Vec<ClassEntry> = GLOBCOVER_LEGEND[..n]
            .iter()
            .enumerate()
            .map(|(i, &(code, name))| ClassEntry { code, id: i as u16, name: name.to_string() })
            .collect();
        let cloud = if with_cloud {
            classes.push(ClassEntry { code: CLOUD_CODE, id: n as u16, name: "Clouds".into() });
            Some(n as u16)
        } else {
            None
        };
        Self::new(classes, cloud)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<u16> = self.classes.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if ids.iter().enumerate().any(|(i, &id)| id as usize != i) {
            return Err(config_err!("class ids must be contiguous from 0, got {ids:?}"));
        }
        let mut codes: Vec<u16> = self.classes.iter().map(|c| c.code).collect();
        codes.sort_unstable();
        codes.dedup();
        if codes.len() != self.classes.len() {
            return Err(config_err!("duplicate class codes"));
        }
        if codes.contains(&NO_DATA) {
            return Err(config_err!("code {NO_DATA} is reserved for no-data"));
        }
        if let Some(c) = self.cloud_class {
            if c as usize >= self.classes.len() {
                return Err(config_err!("cloud class {c} outside the table"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn code_to_id(&self) -> HashMap<u16, u16> {
        self.classes.iter().map(|c| (c.code, c.id)).collect()
    }

    pub fn id_to_code(&self) -> HashMap<u16, u16> {
        self.classes.iter().map(|c| (c.id, c.code)).collect()
    }

    pub fn name(&self, id: u16) -> &str {
        self.classes.iter().find(|c| c.id == id).map(|c| c.name.as_str()).unwrap_or("?")
    }
}
