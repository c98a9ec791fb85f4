use crate::error::{Error, Result};
use crate::ingest::{resample_bicubic, Tile, TileSample};
use crate::models::{FusionInput, Strategy};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Upsamples thermal and lidar to the RGB side and stacks the five bands as
/// thermal, red, green, blue, lidar.
pub fn stack_early(sample: &TileSample) -> Result<Tile> {
    let side = sample.rgb.height;
    let up = |tile: &Tile, name: &str| -> Result<Tile> {
        if tile.height != tile.width || !side.is_multiple_of(tile.height) || sample.rgb.width != side {
            return Err(Error::Shape(format!(
                "{name} tile {}x{} does not divide the {side}x{} rgb tile",
                tile.height, tile.width, sample.rgb.width
            )));
        }
        resample_bicubic(tile, side / tile.height)
    };
    let thermal = up(&sample.thermal, "thermal")?;
    let lidar = up(&sample.lidar, "lidar")?;
    let mut data = Vec::with_capacity(5 * side * side);
    data.extend_from_slice(&thermal.data);
    data.extend_from_slice(&sample.rgb.data);
    data.extend_from_slice(&lidar.data);
    Tile::new(5, side, side, data)
}

fn stack_tiles<T: Scalar>(tiles: &[&Tile]) -> Result<Tensor<T>> {
    let first = tiles.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
    let shape = first.shape();
    let mut data = Vec::with_capacity(tiles.len() * first.data.len());
    for t in tiles {
        if t.shape() != shape {
            return Err(Error::Shape(format!("tile shapes {:?} and {shape:?} in one batch", t.shape())));
        }
        data.extend(t.data.iter().map(|&v| T::lit(v as f64)));
    }
    Tensor::from_vec(&[tiles.len(), shape[0], shape[1], shape[2]], data)
}

/// Assembles the network input for `samples` in the layout `strategy` expects.
pub fn make_input<T: Scalar>(samples: &[&TileSample], strategy: Strategy) -> Result<FusionInput<T>> {
    match strategy {
        Strategy::Early => {
            let stacked = samples.iter().map(|s| stack_early(s)).collect::<Result<Vec<_>>>()?;
            Ok(FusionInput::Stacked(stack_tiles(&stacked.iter().collect::<Vec<_>>())?))
        }
        Strategy::Late | Strategy::Moe => Ok(FusionInput::Modalities {
            thermal: stack_tiles(&samples.iter().map(|s| &s.thermal).collect::<Vec<_>>())?,
            rgb: stack_tiles(&samples.iter().map(|s| &s.rgb).collect::<Vec<_>>())?,
            lidar: stack_tiles(&samples.iter().map(|s| &s.lidar).collect::<Vec<_>>())?,
        }),
    }
}
