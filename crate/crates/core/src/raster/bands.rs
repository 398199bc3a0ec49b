use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error};

/// Sentinel-2 MSI spectral bands in sensor order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Band {
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
    B7,
    B8,
    B8A,
    B9,
    B10,
    B11,
    B12,
}

impl Band {
    pub const ALL: [Band; 13] = [
        Band::B1,
        Band::B2,
        Band::B3,
        Band::B4,
        Band::B5,
        Band::B6,
        Band::B7,
        Band::B8,
        Band::B8A,
        Band::B9,
        Band::B10,
        Band::B11,
        Band::B12,
    ];

    /// B1..B8a: the nine bands regularly sampled along wavelength.
    pub const NINE: [Band; 9] =
        [Band::B1, Band::B2, Band::B3, Band::B4, Band::B5, Band::B6, Band::B7, Band::B8, Band::B8A];

    pub fn name(self) -> &'static str {
        match self {
            Band::B1 => "B1",
            Band::B2 => "B2",
            Band::B3 => "B3",
            Band::B4 => "B4",
            Band::B5 => "B5",
            Band::B6 => "B6",
            Band::B7 => "B7",
            Band::B8 => "B8",
            Band::B8A => "B8A",
            Band::B9 => "B9",
            Band::B10 => "B10",
            Band::B11 => "B11",
            Band::B12 => "B12",
        }
    }

    /// Native ground sampling distance in meters.
    pub fn native_resolution_m(self) -> f64 {
        match self {
            Band::B2 | Band::B3 | Band::B4 | Band::B8 => 10.0,
            Band::B5 | Band::B6 | Band::B7 | Band::B8A | Band::B11 | Band::B12 => 20.0,
            Band::B1 | Band::B9 | Band::B10 => 60.0,
        }
    }

    pub fn index(self) -> usize {
        Band::ALL.iter().position(|&b| b == self).expect("listed")
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let up = s.trim().to_ascii_uppercase();
        Band::ALL
            .iter()
            .copied()
            .find(|b| b.name() == up)
            .ok_or_else(|| config_err!("unknown band id '{s}'"))
    }
}

impl Serialize for Band {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Band {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandMode {
    /// All thirteen bands in sensor order.
    All13,
    /// B1..B8a in wavelength order.
    NineB1ToB8a,
}

impl BandMode {
    pub fn bands(self) -> &'static [Band] {
        match self {
            BandMode::All13 => &Band::ALL,
            BandMode::NineB1ToB8a => &Band::NINE,
        }
    }

    pub fn for_count(n: usize) -> Result<Self, Error> {
        match n {
            13 => Ok(BandMode::All13),
            9 => Ok(BandMode::NineB1ToB8a),
            other => Err(config_err!("no band selection with {other} bands (use 9 or 13)")),
        }
    }
}
