//! Synthetic co-registered thermal, RGB and elevation mosaics with planted
//! middens, mounds and water strips.
//!
//! Each band is a base level plus correlated noise (a coarse random lattice,
//! bilinearly interpolated, plus white noise). Features add Gaussian bumps or
//! strip offsets whose sizes are given in units of that band's noise scale.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{write_geotiff, write_points, Cell, FeaturePoint, GridSpec, Label, Modality, ModalityMosaics, RasterMosaic};

/// Signature sizes, in multiples of each band's background noise scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Signatures {
    pub midden_thermal_hotspot: f64,
    pub mound_elevation_bump: f64,
    pub water_blue_shift: f64,
    pub water_thermal_cool: f64,
}

impl Default for Signatures {
    fn default() -> Self {
        Self {
            midden_thermal_hotspot: 6.0,
            mound_elevation_bump: 6.0,
            water_blue_shift: 4.0,
            water_thermal_cool: 3.0,
        }
    }
}

impl Signatures {
    fn scaled(&self, factor: f64) -> Self {
        Self {
            midden_thermal_hotspot: self.midden_thermal_hotspot * factor,
            mound_elevation_bump: self.mound_elevation_bump * factor,
            water_blue_shift: self.water_blue_shift * factor,
            water_thermal_cool: self.water_thermal_cool * factor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCounts {
    pub midden: usize,
    pub mound: usize,
    /// Number of water cells; planted as strips of `water_strip_cells`.
    pub water: usize,
}

fn d_thermal() -> f64 {
    0.5
}
fn d_rgb() -> f64 {
    0.05
}
fn d_lidar() -> f64 {
    0.1
}
fn d_cell() -> f64 {
    20.0
}
fn d_strip() -> usize {
    4
}
fn d_noise() -> f64 {
    1.0
}
fn d_origin() -> (f64, f64) {
    (500_000.0, 7_300_000.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub n_rows: usize,
    pub n_cols: usize,
    #[serde(default = "d_cell")]
    pub cell_size_m: f64,
    #[serde(default = "d_thermal")]
    pub thermal_resolution_m: f64,
    #[serde(default = "d_rgb")]
    pub rgb_resolution_m: f64,
    #[serde(default = "d_lidar")]
    pub lidar_resolution_m: f64,
    pub counts: ClassCounts,
    #[serde(default = "d_strip")]
    pub water_strip_cells: usize,
    #[serde(default)]
    pub signatures: Signatures,
    /// Multiplies every band's noise scale.
    #[serde(default = "d_noise")]
    pub background_noise_std: f64,
    #[serde(default)]
    pub seed: u64,
    /// North-west corner (easting, northing).
    #[serde(default = "d_origin")]
    pub origin: (f64, f64),
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_rows: 24,
            n_cols: 81,
            cell_size_m: d_cell(),
            thermal_resolution_m: d_thermal(),
            rgb_resolution_m: d_rgb(),
            lidar_resolution_m: d_lidar(),
            counts: ClassCounts {
                midden: 40,
                mound: 60,
                water: 48,
            },
            water_strip_cells: d_strip(),
            signatures: Signatures::default(),
            background_noise_std: d_noise(),
            seed: 0,
            origin: d_origin(),
        }
    }
}

impl SceneSpec {
    pub fn grid(&self) -> GridSpec {
        GridSpec {
            cell_size_m: self.cell_size_m,
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            origin: self.origin,
        }
    }

    fn resolution(&self, m: Modality) -> f64 {
        match m {
            Modality::Thermal => self.thermal_resolution_m,
            Modality::Rgb => self.rgb_resolution_m,
            Modality::Lidar => self.lidar_resolution_m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_rows == 0 || self.n_cols == 0 {
            return bad("scene needs at least one row and column".into());
        }
        if !(self.background_noise_std > 0.0) {
            return bad("background_noise_std must be positive".into());
        }
        if self.water_strip_cells == 0 || self.water_strip_cells > self.n_cols {
            return bad(format!("water_strip_cells must be in 1..={}", self.n_cols));
        }
        let grid = self.grid();
        for m in Modality::ALL {
            grid.tile_side(self.resolution(m))?;
        }
        if self.cell_size_m < 6.0 * MOUND_SIGMA_M {
            return bad(format!("cells under {} m cannot hold a whole feature", 6.0 * MOUND_SIGMA_M));
        }
        let total = self.counts.midden + self.counts.mound + self.counts.water;
        if total > grid.n_cells() {
            return bad(format!("{total} feature cells requested but the grid has {}", grid.n_cells()));
        }
        Ok(())
    }
}

/// Signal strength at `level`: full at 0, none at 1, linear in between.
pub fn difficulty_dial(spec: &SceneSpec, level: f64) -> Result<SceneSpec> {
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::Config(format!("difficulty level must lie in [0, 1], got {level}")));
    }
    Ok(SceneSpec {
        signatures: spec.signatures.scaled(1.0 - level),
        ..spec.clone()
    })
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub mosaics: ModalityMosaics,
    pub points: Vec<FeaturePoint>,
    /// Planted class per feature cell; every other cell is empty.
    pub planted: BTreeMap<Cell, Label>,
}

const MIDDEN_SIGMA_M: f64 = 2.0;
const MOUND_SIGMA_M: f64 = 2.5;
const WATER_HALF_WIDTH_M: f64 = 4.0;
const LATTICE_M: f64 = 10.0;
const WHITE_FRACTION: f64 = 0.5;

/// Base level and noise scale per band: thermal, red, green, blue, lidar.
const BANDS: [(f64, f64); 5] = [(30.0, 0.8), (0.35, 0.03), (0.40, 0.03), (0.30, 0.03), (500.0, 0.15)];

fn band_index(m: Modality, b: usize) -> usize {
    match m {
        Modality::Thermal => 0,
        Modality::Rgb => 1 + b,
        Modality::Lidar => 4,
    }
}

/// Picks feature cells: whole water strips first (consecutive cells in one
/// row), then middens and mounds among the remaining cells.
fn place(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<(BTreeMap<Cell, Label>, Vec<Vec<Cell>>)> {
    let mut planted = BTreeMap::new();
    let mut strips = Vec::new();
    let mut remaining = spec.counts.water;
    let mut attempts = 0;
    while remaining > 0 {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Config("could not fit the requested water strips".into()));
        }
        let len = remaining.min(spec.water_strip_cells);
        let row = rng.random_range(0..spec.n_rows);
        let start = rng.random_range(0..=spec.n_cols - len);
        let cells: Vec<Cell> = (start..start + len).map(|c| Cell::new(row, c)).collect();
        if cells.iter().any(|c| planted.contains_key(c)) {
            continue;
        }
        for &c in &cells {
            planted.insert(c, Label::Water);
        }
        remaining -= len;
        strips.push(cells);
    }
    let mut free: Vec<Cell> = spec.grid().cells().filter(|c| !planted.contains_key(c)).collect();
    free.shuffle(rng);
    let wanted = spec.counts.midden + spec.counts.mound;
    if wanted > free.len() {
        return Err(Error::Config("not enough free cells for middens and mounds".into()));
    }
    for (i, cell) in free.into_iter().take(wanted).enumerate() {
        let label = if i < spec.counts.midden { Label::Midden } else { Label::Mound };
        planted.insert(cell, label);
    }
    Ok((planted, strips))
}

/// Coarse normal lattice anchored at the scene origin; bilinear
/// interpolation between its nodes gives a smooth background field.
struct Lattice {
    nx: usize,
    values: Vec<f64>,
}

impl Lattice {
    fn new(height: usize, width: usize, res: f64, rng: &mut ChaCha8Rng) -> Self {
        let nx = (width as f64 * res / LATTICE_M).ceil() as usize + 2;
        let ny = (height as f64 * res / LATTICE_M).ceil() as usize + 2;
        let values = (0..nx * ny).map(|_| StandardNormal.sample(rng)).collect();
        Self { nx, values }
    }

    /// Field value at a position in meters east and south of the origin.
    fn at(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / LATTICE_M, y / LATTICE_M);
        let (x0, tx) = (gx.floor() as usize, gx.fract());
        let (y0, ty) = (gy.floor() as usize, gy.fract());
        let v = |yy: usize, xx: usize| self.values[yy * self.nx + xx];
        let top = v(y0, x0) * (1.0 - tx) + v(y0, x0 + 1) * tx;
        let bottom = v(y0 + 1, x0) * (1.0 - tx) + v(y0 + 1, x0 + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// Pixel indices whose centers may fall in `[lo, hi]` meters, clipped to `0..n`.
fn window(lo: f64, hi: f64, res: f64, n: usize) -> std::ops::Range<usize> {
    (lo / res).floor().max(0.0) as usize..((hi / res).ceil().max(0.0) as usize).min(n)
}

struct Blob {
    /// Center in meters east / south of the scene origin.
    x: f64,
    y: f64,
    sigma: f64,
    band: usize,
    amplitude: f64,
}

struct Strip {
    x0: f64,
    x1: f64,
    y: f64,
    /// (band, offset in noise units)
    offsets: Vec<(usize, f64)>,
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (planted, strips) = place(spec, &mut rng)?;
    let size = spec.cell_size_m;
    let sig = &spec.signatures;

    let mut blobs = Vec::new();
    for (cell, label) in &planted {
        let (sigma, band, amplitude) = match label {
            Label::Midden => (MIDDEN_SIGMA_M, 0, sig.midden_thermal_hotspot),
            Label::Mound => (MOUND_SIGMA_M, 4, sig.mound_elevation_bump),
            _ => continue,
        };
        // keep the 3σ support inside the cell
        let margin = 3.0 * sigma;
        let x = cell.col as f64 * size + rng.random_range(margin..=size - margin);
        let y = cell.row as f64 * size + rng.random_range(margin..=size - margin);
        blobs.push(Blob {
            x,
            y,
            sigma,
            band,
            amplitude,
        });
    }
    let strips: Vec<Strip> = strips
        .iter()
        .map(|cells| {
            let first = cells[0];
            let last = cells[cells.len() - 1];
            Strip {
                x0: first.col as f64 * size + 2.0,
                x1: (last.col + 1) as f64 * size - 2.0,
                y: (first.row as f64 + 0.5) * size,
                offsets: vec![
                    (0, -sig.water_thermal_cool),
                    (1, -0.5 * sig.water_blue_shift),
                    (3, sig.water_blue_shift),
                ],
            }
        })
        .collect();

    let height_m = spec.n_rows as f64 * size;
    let width_m = spec.n_cols as f64 * size;
    let white = WHITE_FRACTION;
    let mut mosaics = Vec::with_capacity(3);
    for m in Modality::ALL {
        let res = spec.resolution(m);
        let (h, w) = ((height_m / res).round() as usize, (width_m / res).round() as usize);
        let mut pixels = Vec::with_capacity(m.bands() * h * w);
        for b in 0..m.bands() {
            let band = band_index(m, b);
            let (base, scale) = BANDS[band];
            let scale = scale * spec.background_noise_std;
            let lattice = Lattice::new(h, w, res, &mut rng);
            let start = pixels.len();
            for i in 0..h {
                let y = (i as f64 + 0.5) * res;
                for j in 0..w {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    let f = lattice.at((j as f64 + 0.5) * res, y);
                    pixels.push((base + scale * (f + white * e)) as f32);
                }
            }
            let values = &mut pixels[start..];
            for blob in blobs.iter().filter(|bl| bl.band == band && bl.amplitude != 0.0) {
                let reach = 3.0 * blob.sigma;
                let rows = window(blob.y - reach, blob.y + reach, res, h);
                let cols = window(blob.x - reach, blob.x + reach, res, w);
                for i in rows {
                    let dy = (i as f64 + 0.5) * res - blob.y;
                    for j in cols.clone() {
                        let dx = (j as f64 + 0.5) * res - blob.x;
                        let r2 = dx * dx + dy * dy;
                        if r2 <= reach * reach {
                            values[i * w + j] += (scale * blob.amplitude * (-r2 / (2.0 * blob.sigma * blob.sigma)).exp()) as f32;
                        }
                    }
                }
            }
            for strip in &strips {
                let Some(&(_, offset)) = strip.offsets.iter().find(|(bb, o)| *bb == band && *o != 0.0) else {
                    continue;
                };
                let rows = window(strip.y - WATER_HALF_WIDTH_M, strip.y + WATER_HALF_WIDTH_M, res, h);
                let cols = window(strip.x0, strip.x1, res, w);
                for i in rows {
                    let yc = (i as f64 + 0.5) * res;
                    if (yc - strip.y).abs() > WATER_HALF_WIDTH_M {
                        continue;
                    }
                    for j in cols.clone() {
                        let xc = (j as f64 + 0.5) * res;
                        if xc >= strip.x0 && xc <= strip.x1 {
                            values[i * w + j] += (scale * offset) as f32;
                        }
                    }
                }
            }
        }
        mosaics.push(RasterMosaic::new(m, res, spec.origin, m.bands(), h, w, pixels)?);
    }
    let lidar = mosaics.pop().expect("three mosaics");
    let rgb = mosaics.pop().expect("three mosaics");
    let thermal = mosaics.pop().expect("three mosaics");

    let points = planted
        .iter()
        .map(|(cell, &class)| FeaturePoint {
            class,
            easting: spec.origin.0 + (cell.col as f64 + 0.5) * size,
            northing: spec.origin.1 - (cell.row as f64 + 0.5) * size,
        })
        .collect();
    Ok(Scene {
        mosaics: ModalityMosaics { thermal, rgb, lidar },
        points,
        planted,
    })
}

/// Paths written by [`write_scene`].
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFiles {
    pub thermal: PathBuf,
    pub rgb: PathBuf,
    pub lidar: PathBuf,
    pub points: PathBuf,
}

impl SceneFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            thermal: dir.join("thermal.tif"),
            rgb: dir.join("rgb.tif"),
            lidar: dir.join("lidar.tif"),
            points: dir.join("points.csv"),
        }
    }
}

/// Writes the three GeoTIFFs and the feature-point CSV into `dir`.
pub fn write_scene(scene: &Scene, dir: &Path) -> Result<SceneFiles> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let files = SceneFiles::in_dir(dir);
    write_geotiff(&files.thermal, &scene.mosaics.thermal, None)?;
    write_geotiff(&files.rgb, &scene.mosaics.rgb, None)?;
    write_geotiff(&files.lidar, &scene.mosaics.lidar, None)?;
    write_points(&files.points, &scene.points)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{assign_labels, build_samples};

    fn small(level: f64) -> SceneSpec {
        let spec = SceneSpec {
            n_rows: 6,
            n_cols: 10,
            thermal_resolution_m: 2.0,
            rgb_resolution_m: 0.5,
            lidar_resolution_m: 1.0,
            counts: ClassCounts {
                midden: 5,
                mound: 6,
                water: 7,
            },
            water_strip_cells: 3,
            seed: 9,
            ..SceneSpec::default()
        };
        difficulty_dial(&spec, level).unwrap()
    }

    #[test]
    fn default_resolutions_give_paper_tile_sides() {
        let grid = SceneSpec::default().grid();
        assert_eq!(grid.tile_side(0.5).unwrap(), 40);
        assert_eq!(grid.tile_side(0.05).unwrap(), 400);
        assert_eq!(grid.tile_side(0.1).unwrap(), 200);
    }

    #[test]
    fn dial_interpolates_amplitudes() {
        let base = SceneSpec::default();
        assert_eq!(difficulty_dial(&base, 0.0).unwrap().signatures, base.signatures);
        let half = difficulty_dial(&base, 0.5).unwrap().signatures;
        assert_eq!(half.midden_thermal_hotspot, 3.0);
        assert_eq!(half.water_blue_shift, 2.0);
        let none = difficulty_dial(&base, 1.0).unwrap().signatures;
        assert_eq!(none, Signatures::default().scaled(0.0));
        assert!(difficulty_dial(&base, 1.5).is_err());
        assert!(difficulty_dial(&base, -0.1).is_err());
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = generate_scene(&small(0.0)).unwrap();
        let b = generate_scene(&small(0.0)).unwrap();
        assert_eq!(a.mosaics.rgb.pixels(), b.mosaics.rgb.pixels());
        assert_eq!(a.points, b.points);
        let mut other = small(0.0);
        other.seed = 10;
        assert_ne!(generate_scene(&other).unwrap().mosaics.thermal.pixels(), a.mosaics.thermal.pixels());
    }

    #[test]
    fn labels_round_trip_and_mosaics_align() {
        let spec = small(0.0);
        let scene = generate_scene(&spec).unwrap();
        scene.mosaics.check_alignment().unwrap();
        let labels = assign_labels(&spec.grid(), &scene.points).unwrap();
        for (cell, label) in labels {
            assert_eq!(label, scene.planted.get(&cell).copied().unwrap_or(Label::Empty), "{cell}");
        }
        let counts = |l: Label| scene.planted.values().filter(|&&x| x == l).count();
        assert_eq!((counts(Label::Midden), counts(Label::Mound), counts(Label::Water)), (5, 6, 7));
        let samples = build_samples(&scene.mosaics, &spec.grid(), &scene.points).unwrap();
        assert_eq!(samples.len(), 60);
        assert_eq!(samples[0].thermal.shape(), [1, 10, 10]);
        assert_eq!(samples[0].rgb.shape(), [3, 40, 40]);
        assert_eq!(samples[0].lidar.shape(), [1, 20, 20]);
    }

    #[test]
    fn no_features_means_all_empty() {
        let mut spec = small(0.0);
        spec.counts = ClassCounts {
            midden: 0,
            mound: 0,
            water: 0,
        };
        let scene = generate_scene(&spec).unwrap();
        assert!(scene.points.is_empty());
        let labels = assign_labels(&spec.grid(), &scene.points).unwrap();
        assert!(labels.values().all(|&l| l == Label::Empty));
    }

    #[test]
    fn too_many_features_is_an_error() {
        let mut spec = small(0.0);
        spec.counts.midden = 60;
        assert!(generate_scene(&spec).is_err());
    }

    #[test]
    fn signal_stays_inside_feature_cells() {
        let spec = small(0.0);
        let scene = generate_scene(&spec).unwrap();
        let level0 = build_samples(&scene.mosaics, &spec.grid(), &scene.points).unwrap();
        let flat = generate_scene(&small(1.0)).unwrap();
        let level1 = build_samples(&flat.mosaics, &spec.grid(), &flat.points).unwrap();
        // same seed, so the noise is identical and only planted cells differ
        for (a, b) in level0.iter().zip(&level1) {
            let differs = Modality::ALL.iter().any(|&m| a.tile(m) != b.tile(m));
            assert_eq!(differs, a.label != Label::Empty, "{}", a.cell);
        }
    }

    #[test]
    fn background_mean_is_stable_across_empty_cells() {
        let spec = small(0.0);
        let scene = generate_scene(&spec).unwrap();
        let samples = build_samples(&scene.mosaics, &spec.grid(), &scene.points).unwrap();
        let (base, scale) = BANDS[4];
        let values: Vec<f64> = samples
            .iter()
            .filter(|s| s.label == Label::Empty)
            .flat_map(|s| s.lidar.data.iter().map(|&v| v as f64))
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        // correlated noise: the effective sample count is the lattice-node count
        let nodes = (spec.n_rows * spec.n_cols) as f64 * (spec.cell_size_m / LATTICE_M).powi(2);
        assert!((mean - base).abs() < 3.0 * scale * (1.0 + WHITE_FRACTION) / nodes.sqrt() * 2.0, "{mean}");
    }

    #[test]
    fn scene_files_load_back() {
        let dir = tempfile::tempdir().unwrap();
        let scene = generate_scene(&small(0.0)).unwrap();
        let files = write_scene(&scene, dir.path()).unwrap();
        let lidar = crate::ingest::load_mosaic(&files.lidar, Modality::Lidar).unwrap();
        assert_eq!(lidar.pixels(), scene.mosaics.lidar.pixels());
        assert_eq!(crate::ingest::load_points(&files.points).unwrap(), scene.points);
    }
}
