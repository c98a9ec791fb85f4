use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Modality, Tile, TileSample};

/// Band order used by statistics and by the early-fusion stack.
pub const BAND_NAMES: [&str; 5] = ["thermal", "red", "green", "blue", "lidar"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandStat {
    pub mean: f64,
    pub std: f64,
}

/// Per-band mean and population standard deviation of the training tiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub bands: Vec<BandStat>,
}

/// First band index of each modality within [`BAND_NAMES`].
fn band_offset(modality: Modality) -> usize {
    match modality {
        Modality::Thermal => 0,
        Modality::Rgb => 1,
        Modality::Lidar => 4,
    }
}

/// Fits statistics over every pixel of every distinct training tile.
/// Duplicated cells are counted once.
pub fn fit_stats(train: &[TileSample]) -> Result<BandStats> {
    if train.is_empty() {
        return Err(Error::Dataset("cannot fit band statistics on an empty training set".into()));
    }
    let mut seen = HashSet::new();
    let unique: Vec<&TileSample> = train.iter().filter(|s| seen.insert(s.cell)).collect();
    let mut bands = Vec::with_capacity(BAND_NAMES.len());
    for modality in Modality::ALL {
        for b in 0..modality.bands() {
            let values = || unique.iter().flat_map(move |s| s.tile(modality).band(b).iter().map(|&v| v as f64));
            let n = values().count() as f64;
            let mean = values().sum::<f64>() / n;
            let var = values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            let name = BAND_NAMES[band_offset(modality) + b];
            if !(std > 0.0) {
                return Err(Error::Dataset(format!("band {name} has zero variance in the training split")));
            }
            bands.push(BandStat { mean, std });
        }
    }
    Ok(BandStats { bands })
}

impl BandStats {
    fn check(&self) -> Result<()> {
        if self.bands.len() != BAND_NAMES.len() {
            return Err(Error::Shape(format!(
                "band statistics have {} bands, expected {}",
                self.bands.len(),
                BAND_NAMES.len()
            )));
        }
        Ok(())
    }

    fn for_modality(&self, modality: Modality) -> &[BandStat] {
        let start = band_offset(modality);
        &self.bands[start..start + modality.bands()]
    }

    pub fn normalize_tile(&self, tile: &mut Tile, modality: Modality) -> Result<()> {
        self.map_tile(tile, modality, |v, s| (v - s.mean) / s.std)
    }

    pub fn denormalize_tile(&self, tile: &mut Tile, modality: Modality) -> Result<()> {
        self.map_tile(tile, modality, |v, s| v * s.std + s.mean)
    }

    fn map_tile(&self, tile: &mut Tile, modality: Modality, f: impl Fn(f64, &BandStat) -> f64) -> Result<()> {
        self.check()?;
        if tile.bands != modality.bands() {
            return Err(Error::Shape(format!(
                "{modality} tile has {} bands, expected {}",
                tile.bands,
                modality.bands()
            )));
        }
        for (b, stat) in self.for_modality(modality).iter().enumerate() {
            for v in tile.band_mut(b) {
                *v = f(*v as f64, stat) as f32;
            }
        }
        Ok(())
    }

    /// Maps every band `x → (x − mean) / std`.
    pub fn normalize(&self, mut sample: TileSample) -> Result<TileSample> {
        for m in Modality::ALL {
            self.normalize_tile(sample.tile_mut(m), m)?;
        }
        Ok(sample)
    }

    pub fn denormalize(&self, mut sample: TileSample) -> Result<TileSample> {
        for m in Modality::ALL {
            self.denormalize_tile(sample.tile_mut(m), m)?;
        }
        Ok(sample)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let stats: BandStats = serde_json::from_str(&text)?;
        stats.check()?;
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Cell, Label};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(row: usize, thermal: Vec<f32>, rgb: Vec<f32>, lidar: Vec<f32>) -> TileSample {
        let side = (thermal.len() as f64).sqrt() as usize;
        TileSample {
            cell: Cell::new(row, 0),
            label: Label::Empty,
            thermal: Tile::new(1, side, side, thermal).unwrap(),
            rgb: Tile::new(3, side, side, rgb).unwrap(),
            lidar: Tile::new(1, side, side, lidar).unwrap(),
        }
    }

    fn random_sample(row: usize, side: usize, rng: &mut ChaCha8Rng) -> TileSample {
        let mut draw = |n: usize, loc: f32, scale: f32| -> Vec<f32> {
            (0..n).map(|_| loc + scale * rng.random::<f32>()).collect()
        };
        let t = draw(side * side, 300.0, 5.0);
        let c = draw(3 * side * side, 120.0, 60.0);
        let l = draw(side * side, 850.0, 2.0);
        sample(row, t, c, l)
    }

    #[test]
    fn constant_tile_has_zero_variance() {
        let s = sample(0, vec![1.0; 4], vec![1.0; 12], vec![1.0; 4]);
        assert!(fit_stats(&[s]).is_err());
    }

    #[test]
    fn two_valued_band_has_unit_std() {
        let s = sample(0, vec![0.0, 2.0, 0.0, 2.0], (0..12).map(|i| i as f32).collect(), vec![0.0, 2.0, 2.0, 0.0]);
        let stats = fit_stats(&[s]).unwrap();
        assert_eq!(stats.bands[0], BandStat { mean: 1.0, std: 1.0 });
        assert_eq!(stats.bands[4], BandStat { mean: 1.0, std: 1.0 });
    }

    #[test]
    fn duplicated_cells_do_not_skew_statistics() {
        let a = sample(0, vec![0.0; 4], vec![0.0, 1.0, 2.0, 3.0].repeat(3), vec![0.0; 4]);
        let mut b = sample(1, vec![4.0; 4], vec![4.0, 5.0, 6.0, 7.0].repeat(3), vec![4.0; 4]);
        b.label = Label::Midden;
        let once = fit_stats(&[a.clone(), b.clone()]).unwrap();
        let dup = fit_stats(&[a, b.clone(), b.clone(), b]).unwrap();
        assert_eq!(once, dup);
        assert_eq!(once.bands[0].mean, 2.0);
    }

    #[test]
    fn identity_and_direct_arithmetic() {
        let unit = BandStats {
            bands: vec![BandStat { mean: 0.0, std: 1.0 }; 5],
        };
        let s = sample(0, vec![2.0, 4.0, 6.0, 8.0], vec![1.5; 12], vec![-3.0; 4]);
        assert_eq!(unit.normalize(s.clone()).unwrap(), s);
        let stats = BandStats {
            bands: vec![BandStat { mean: 3.0, std: 1.0 }; 5],
        };
        let mut tile = Tile::new(1, 1, 2, vec![2.0, 4.0]).unwrap();
        stats.normalize_tile(&mut tile, Modality::Thermal).unwrap();
        assert_eq!(tile.data, vec![-1.0, 1.0]);
        let mut flat = Tile::new(1, 1, 2, vec![3.0, 3.0]).unwrap();
        stats.normalize_tile(&mut flat, Modality::Lidar).unwrap();
        assert_eq!(flat.data, vec![0.0, 0.0]);
    }

    #[test]
    fn band_count_mismatch_is_an_error() {
        let stats = BandStats {
            bands: vec![BandStat { mean: 0.0, std: 1.0 }; 5],
        };
        let mut tile = Tile::new(3, 1, 1, vec![0.0; 3]).unwrap();
        assert!(stats.normalize_tile(&mut tile, Modality::Thermal).is_err());
        let short = BandStats {
            bands: vec![BandStat { mean: 0.0, std: 1.0 }; 3],
        };
        let mut tile = Tile::new(1, 1, 1, vec![0.0]).unwrap();
        assert!(short.normalize_tile(&mut tile, Modality::Thermal).is_err());
    }

    #[test]
    fn normalized_training_bands_are_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let train: Vec<_> = (0..20).map(|r| random_sample(r, 8, &mut rng)).collect();
        let stats = fit_stats(&train).unwrap();
        let normalized: Vec<_> = train.into_iter().map(|s| stats.normalize(s).unwrap()).collect();
        let refit = fit_stats(&normalized).unwrap();
        for b in refit.bands {
            assert!(b.mean.abs() < 1e-6, "mean {}", b.mean);
            assert!((b.std - 1.0).abs() < 1e-4, "std {}", b.std);
        }
    }

    #[test]
    fn stats_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("band_stats.json");
        let stats = BandStats {
            bands: (0..5).map(|i| BandStat { mean: i as f64 * 0.1, std: 1.0 + i as f64 }).collect(),
        };
        stats.save(&path).unwrap();
        assert_eq!(BandStats::load(&path).unwrap(), stats);
    }

    proptest! {
        #[test]
        fn denormalize_inverts_normalize(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let train: Vec<_> = (0..3).map(|r| random_sample(r, 4, &mut rng)).collect();
            let stats = fit_stats(&train).unwrap();
            for s in train {
                let back = stats.denormalize(stats.normalize(s.clone()).unwrap()).unwrap();
                for m in Modality::ALL {
                    for (a, b) in s.tile(m).data.iter().zip(&back.tile(m).data) {
                        prop_assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0));
                    }
                }
            }
        }
    }
}
