//! Raster and feature-point ingestion: aligned mosaics in, labeled per-cell
//! tile samples out.

mod archive;
mod grid;
mod points;
mod raster;
mod resample;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use archive::{read_npy, read_split_archive, write_npy, write_split_archive, ManifestRecord};
pub use grid::{assign_labels, gridify, Cell, GridSpec, Tile};
pub use points::{load_points, partition_by_extent, write_points, FeaturePoint};
pub use raster::{load_mosaic, write_geotiff, Extent, ModalityMosaics, RasterMosaic};
pub use resample::resample_bicubic;

use crate::error::{Error, Result};

/// One sensor stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Thermal,
    Rgb,
    Lidar,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Thermal, Modality::Rgb, Modality::Lidar];

    pub fn bands(self) -> usize {
        match self {
            Modality::Rgb => 3,
            Modality::Thermal | Modality::Lidar => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Thermal => "thermal",
            Modality::Rgb => "rgb",
            Modality::Lidar => "lidar",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Cell class. The discriminant is the class index used by models and metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Empty = 0,
    Midden = 1,
    Mound = 2,
    Water = 3,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::Empty, Label::Midden, Label::Mound, Label::Water];
    pub const FEATURES: [Label; 3] = [Label::Midden, Label::Mound, Label::Water];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Label::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Empty => "empty",
            Label::Midden => "midden",
            Label::Mound => "mound",
            Label::Water => "water",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Dataset(format!("unknown class label {s:?}")))
    }
}

/// One grid cell's co-registered tiles and its label.
#[derive(Clone, Debug, PartialEq)]
pub struct TileSample {
    pub cell: Cell,
    pub label: Label,
    pub thermal: Tile,
    pub rgb: Tile,
    pub lidar: Tile,
}

impl TileSample {
    pub fn tile(&self, modality: Modality) -> &Tile {
        match modality {
            Modality::Thermal => &self.thermal,
            Modality::Rgb => &self.rgb,
            Modality::Lidar => &self.lidar,
        }
    }

    pub fn tile_mut(&mut self, modality: Modality) -> &mut Tile {
        match modality {
            Modality::Thermal => &mut self.thermal,
            Modality::Rgb => &mut self.rgb,
            Modality::Lidar => &mut self.lidar,
        }
    }
}

/// Gridifies all three mosaics and labels every retained cell.
///
/// Points must already lie inside the grid (see [`GridSpec::contains`]).
pub fn build_samples(
    mosaics: &ModalityMosaics,
    grid: &GridSpec,
    points: &[FeaturePoint],
) -> Result<Vec<TileSample>> {
    mosaics.check_alignment()?;
    let labels = assign_labels(grid, points)?;
    let mut per_modality = Vec::with_capacity(3);
    for modality in Modality::ALL {
        let mosaic = mosaics.get(modality);
        let side = grid.tile_side(mosaic.resolution_m)?;
        let tiles = gridify(mosaic, grid)?;
        for (cell, tile) in &tiles {
            if tile.height != side || tile.width != side {
                return Err(Error::Grid(format!(
                    "{modality} tile at {cell} is {}x{}, expected {side}x{side}",
                    tile.height, tile.width
                )));
            }
        }
        per_modality.push(tiles);
    }
    let lidar = per_modality.pop().expect("three modalities");
    let rgb = per_modality.pop().expect("three modalities");
    let thermal = per_modality.pop().expect("three modalities");
    Ok(thermal
        .into_iter()
        .zip(rgb)
        .zip(lidar)
        .map(|(((cell, thermal), (_, rgb)), (_, lidar))| TileSample {
            cell,
            label: labels[&cell],
            thermal,
            rgb,
            lidar,
        })
        .collect())
}
