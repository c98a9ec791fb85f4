use num_rational::Ratio;
use num_traits::{FromPrimitive, Num};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Maps a three-channel first convolution onto `target_channels` inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FirstLayerAdaptation {
    pub source_channels: u32,
    pub target_channels: u32,
    /// Factor applied to every adapted weight: `source / target`.
    pub rescale_factor: Ratio<u32>,
}

impl FirstLayerAdaptation {
    pub fn new(target_channels: u32) -> Result<Self> {
        if target_channels == 0 {
            return Err(Error::Shape("target channel count must be positive".into()));
        }
        Ok(Self {
            source_channels: 3,
            target_channels,
            rescale_factor: Ratio::new(3, target_channels),
        })
    }

    /// Source channel feeding target channel `c`, or `None` for the RGB mean.
    pub fn source_of(&self, c: usize) -> Option<usize> {
        (self.target_channels >= 3 && c < 3).then_some(c)
    }
}

/// Adapts a `(filters, 3, k, k)` weight array to `(filters, target, k, k)`.
///
/// With `target ≥ 3` the RGB channels are kept in place and every extra
/// channel gets the per-tap RGB mean; with `target < 3` every channel gets the
/// mean. All weights are then scaled by `3 / target`, which keeps each
/// filter's weight sum unchanged.
pub fn adapt_first_layer<T>(weights: &[T], shape: [usize; 4], target_channels: usize) -> Result<Vec<T>>
where
    T: Num + Copy + FromPrimitive,
{
    let [filters, source, kh, kw] = shape;
    if source != 3 {
        return Err(Error::Shape(format!("first layer has {source} input channels, expected 3")));
    }
    if weights.len() != filters * source * kh * kw {
        return Err(Error::Shape(format!("{} weights do not fill shape {shape:?}", weights.len())));
    }
    let plan = FirstLayerAdaptation::new(
        u32::try_from(target_channels).map_err(|_| Error::Shape("too many target channels".into()))?,
    )?;
    let lit = |x: usize| T::from_usize(x).expect("small integer converts");
    let scale = lit(3) / lit(target_channels);
    let taps = kh * kw;
    let mut out = Vec::with_capacity(filters * target_channels * taps);
    for f in 0..filters {
        let filter = &weights[f * 3 * taps..(f + 1) * 3 * taps];
        for c in 0..target_channels {
            for t in 0..taps {
                let w = match plan.source_of(c) {
                    Some(s) => filter[s * taps + t],
                    None => (filter[t] + filter[taps + t] + filter[2 * taps + t]) / lit(3),
                };
                out.push(w * scale);
            }
        }
    }
    Ok(out)
}

pub fn adapt_weight_tensor<T: Scalar>(weight: &Tensor<T>, target_channels: usize) -> Result<Tensor<T>> {
    let s = weight.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("conv weight must be 4-d, got {s:?}")));
    }
    let shape = [s[0], s[1], s[2], s[3]];
    let data = adapt_first_layer(weight.data(), shape, target_channels)?;
    Tensor::from_vec(&[s[0], target_channels, s[2], s[3]], data)
}
