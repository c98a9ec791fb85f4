use std::path::Path;

use serde::{Deserialize, Serialize};

use super::raster::Extent;
use super::Label;
use crate::error::{Error, Result};

/// A surveyed landscape feature. Coordinates share the rasters' projected CRS.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturePoint {
    pub class: Label,
    pub easting: f64,
    pub northing: f64,
}

#[derive(Deserialize, Serialize)]
struct Row {
    class: String,
    easting: f64,
    northing: f64,
}

/// Reads a `class,easting,northing` CSV.
pub fn load_points(path: &Path) -> Result<Vec<FeaturePoint>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Dataset(format!("{}: {other:?}", path.display())),
    })?;
    let headers = reader.headers()?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["class", "easting", "northing"] {
        return Err(Error::Dataset(format!(
            "{}: expected header class,easting,northing, got {}",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut points = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row?;
        let class: Label = row.class.parse()?;
        if class == Label::Empty {
            return Err(Error::Dataset(format!(
                "{}: feature points cannot have class \"empty\"",
                path.display()
            )));
        }
        points.push(FeaturePoint {
            class,
            easting: row.easting,
            northing: row.northing,
        });
    }
    Ok(points)
}

pub fn write_points(path: &Path, points: &[FeaturePoint]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    if points.is_empty() {
        writer.write_record(["class", "easting", "northing"])?;
    }
    for p in points {
        writer.serialize(Row {
            class: p.class.name().to_string(),
            easting: p.easting,
            northing: p.northing,
        })?;
    }
    writer.flush().map_err(Error::io(path))?;
    Ok(())
}

/// Splits points into those inside `extent` and the count rejected.
pub fn partition_by_extent(points: Vec<FeaturePoint>, extent: &Extent) -> (Vec<FeaturePoint>, usize) {
    let total = points.len();
    let kept: Vec<FeaturePoint> = points
        .into_iter()
        .filter(|p| extent.contains(p.easting, p.northing))
        .collect();
    let rejected = total - kept.len();
    if rejected > 0 {
        log::warn!("rejected {rejected} feature point(s) outside the mosaic extent");
    }
    (kept, rejected)
}
