use super::grid::Tile;
use crate::error::{Error, Result};

/// Keys cubic convolution kernel with `a = -0.5`.
fn cubic_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// For each output index: four source indices (edge-clamped) and their weights.
fn taps(len: usize, factor: usize) -> Vec<([usize; 4], [f64; 4])> {
    (0..len * factor)
        .map(|i| {
            let src = (i as f64 + 0.5) / factor as f64 - 0.5;
            let base = src.floor();
            let t = src - base;
            let mut idx = [0usize; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let offset = k as isize - 1;
                idx[k] = (base as isize + offset).clamp(0, len as isize - 1) as usize;
                w[k] = cubic_weight(t - offset as f64);
            }
            (idx, w)
        })
        .collect()
}

/// Upsamples every band by an integer factor with separable bicubic
/// interpolation (pixel-center aligned, edges replicated).
pub fn resample_bicubic(tile: &Tile, factor: usize) -> Result<Tile> {
    if factor < 1 {
        return Err(Error::Shape("upsampling factor must be at least 1".into()));
    }
    if factor == 1 {
        return Ok(tile.clone());
    }
    let (h, w) = (tile.height, tile.width);
    let (oh, ow) = (h * factor, w * factor);
    let col_taps = taps(w, factor);
    let row_taps = taps(h, factor);
    let mut out = Vec::with_capacity(tile.bands * oh * ow);
    let mut horizontal = vec![0.0f64; h * ow];
    for b in 0..tile.bands {
        let band = tile.band(b);
        for y in 0..h {
            let row = &band[y * w..(y + 1) * w];
            for (x, (idx, wt)) in col_taps.iter().enumerate() {
                horizontal[y * ow + x] = (0..4).map(|k| wt[k] * row[idx[k]] as f64).sum();
            }
        }
        for (idx, wt) in &row_taps {
            for x in 0..ow {
                let v: f64 = (0..4).map(|k| wt[k] * horizontal[idx[k] * ow + x]).sum();
                out.push(v as f32);
            }
        }
    }
    Tile::new(tile.bands, oh, ow, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Non-separable reference: sum over the 4×4 neighbourhood with the
    /// closed-form kernel evaluated at each tap's distance.
    fn reference(tile: &Tile, factor: usize, oy: usize, ox: usize) -> f64 {
        let keys = |d: f64| {
            let d = d.abs();
            if d <= 1.0 {
                1.5 * d.powi(3) - 2.5 * d.powi(2) + 1.0
            } else if d < 2.0 {
                -0.5 * d.powi(3) + 2.5 * d.powi(2) - 4.0 * d + 2.0
            } else {
                0.0
            }
        };
        let sy = (oy as f64 + 0.5) / factor as f64 - 0.5;
        let sx = (ox as f64 + 0.5) / factor as f64 - 0.5;
        let (by, bx) = (sy.floor() as isize, sx.floor() as isize);
        let mut acc = 0.0;
        for j in by - 1..=by + 2 {
            for i in bx - 1..=bx + 2 {
                let cy = j.clamp(0, tile.height as isize - 1) as usize;
                let cx = i.clamp(0, tile.width as isize - 1) as usize;
                acc += keys(sy - j as f64) * keys(sx - i as f64) * tile.data[cy * tile.width + cx] as f64;
            }
        }
        acc
    }

    #[test]
    fn factor_one_is_identity() {
        let tile = Tile::new(1, 3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(resample_bicubic(&tile, 1).unwrap(), tile);
    }

    #[test]
    fn zero_factor_is_rejected() {
        let tile = Tile::new(1, 1, 1, vec![1.0]).unwrap();
        assert!(resample_bicubic(&tile, 0).is_err());
    }

    #[test]
    fn constant_tile_stays_constant() {
        let c = 3.75f32;
        let tile = Tile::new(1, 40, 40, vec![c; 1600]).unwrap();
        let up = resample_bicubic(&tile, 10).unwrap();
        assert_eq!(up.shape(), [1, 400, 400]);
        assert!(up.data.iter().all(|&v| (v - c).abs() < 1e-5));
    }

    #[test]
    fn matches_non_separable_reference() {
        let data: Vec<f32> = (0..35).map(|i| ((i * 7 % 11) as f32).sin() * 3.0).collect();
        let tile = Tile::new(1, 5, 7, data).unwrap();
        for factor in [2, 3, 4] {
            let up = resample_bicubic(&tile, factor).unwrap();
            for oy in 0..up.height {
                for ox in 0..up.width {
                    let want = reference(&tile, factor, oy, ox);
                    let got = up.data[oy * up.width + ox] as f64;
                    assert!((got - want).abs() < 1e-5, "factor {factor} ({oy},{ox}): {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn linear_ramp_is_reproduced_in_the_interior() {
        let data: Vec<f32> = (0..64).map(|i| (i % 8) as f32).collect();
        let tile = Tile::new(1, 8, 8, data).unwrap();
        let up = resample_bicubic(&tile, 4).unwrap();
        // away from the clamped borders cubic convolution is exact on linear data
        for ox in 8..24 {
            let src = (ox as f64 + 0.5) / 4.0 - 0.5;
            assert!((up.data[10 * 32 + ox] as f64 - src).abs() < 1e-5);
        }
    }
}
