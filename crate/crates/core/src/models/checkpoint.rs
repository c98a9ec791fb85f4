//! Single-file checkpoints: a version line, a JSON header, then raw
//! little-endian tensor data.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fusion::FusionModel;
use super::FusionModelSpec;
use crate::dataset::BandStats;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "fusionbench-ckpt-v1";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

/// Everything in a checkpoint except the weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec: FusionModelSpec,
    pub band_stats: BandStats,
    pub dtype: String,
    tensors: Vec<TensorEntry>,
}

fn bad(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {msg}", path.display()))
}

fn element_size(dtype: &str) -> Option<usize> {
    match dtype {
        "f32" => Some(4),
        "f64" => Some(8),
        _ => None,
    }
}

pub fn save_checkpoint<T: Scalar>(path: &Path, model: &FusionModel<T>, band_stats: &BandStats) -> Result<()> {
    let state = model.state();
    let mut tensors = Vec::with_capacity(state.len());
    let mut offset = 0;
    for (name, t) in &state {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
    }
    let meta = CheckpointMeta {
        spec: model.spec().clone(),
        band_stats: band_stats.clone(),
        dtype: T::DTYPE.to_string(),
        tensors,
    };
    let header = serde_json::to_vec(&meta)?;
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>, bytes: &[u8]| w.write_all(bytes).map_err(Error::io(path));
    write(&mut w, CHECKPOINT_MAGIC.as_bytes())?;
    write(&mut w, b"\n")?;
    write(&mut w, &(header.len() as u64).to_le_bytes())?;
    write(&mut w, &header)?;
    for t in state.values() {
        for &v in t.data() {
            let x = v.to_f64_lossy();
            match T::DTYPE {
                "f32" => write(&mut w, &(x as f32).to_le_bytes())?,
                _ => write(&mut w, &x.to_le_bytes())?,
            }
        }
    }
    w.flush().map_err(Error::io(path))
}

fn read_header(path: &Path, r: &mut impl Read) -> Result<CheckpointMeta> {
    let mut magic = vec![0u8; CHECKPOINT_MAGIC.len() + 1];
    r.read_exact(&mut magic).map_err(|_| bad(path, "file too short"))?;
    if &magic[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC.as_bytes() || magic[CHECKPOINT_MAGIC.len()] != b'\n' {
        return Err(bad(path, format!("missing {CHECKPOINT_MAGIC} header")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| bad(path, "truncated header"))?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| bad(path, "header too large"))?;
    if len > 1 << 30 {
        return Err(bad(path, "header too large"));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| bad(path, "truncated header"))?;
    let meta: CheckpointMeta = serde_json::from_slice(&json)?;
    if element_size(&meta.dtype).is_none() {
        return Err(bad(path, format!("unknown dtype {}", meta.dtype)));
    }
    Ok(meta)
}

/// Reads only the model spec and band statistics.
pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let file = File::open(path).map_err(Error::io(path))?;
    read_header(path, &mut BufReader::new(file))
}

/// Rebuilds the model from the stored spec and loads its weights, converting
/// to `T` if the file was written with another element type.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(FusionModel<T>, BandStats)> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut r = BufReader::new(file);
    let meta = read_header(path, &mut r)?;
    let size = element_size(&meta.dtype).expect("checked in read_header");
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(Error::io(path))?;
    let total: usize = meta.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if body.len() != total * size {
        return Err(bad(path, format!("expected {} data bytes, found {}", total * size, body.len())));
    }
    let mut state = BTreeMap::new();
    for entry in &meta.tensors {
        let n: usize = entry.shape.iter().product();
        let bytes = &body[entry.offset * size..(entry.offset + n) * size];
        let values: Vec<T> = match size {
            4 => bytes
                .chunks_exact(4)
                .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect(),
            _ => bytes
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
                .collect(),
        };
        state.insert(entry.name.clone(), Tensor::from_vec(&entry.shape, values)?);
    }
    let mut spec = meta.spec.clone();
    // stored weights already include any pretrained initialization
    spec.backbone.pretrained = false;
    let mut model = FusionModel::build(&spec, None, &mut ChaCha8Rng::seed_from_u64(0))?;
    model.load_state(&state).map_err(|e| bad(path, e))?;
    model.set_spec(meta.spec);
    Ok((model, meta.band_stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::BandStat;
    use crate::models::{BackboneSpec, FusionInput, Strategy};
    use crate::nn::Mode;

    fn stats() -> BandStats {
        BandStats {
            bands: vec![BandStat { mean: 1.0, std: 2.0 }; 5],
        }
    }

    #[test]
    fn round_trip_reproduces_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = FusionModelSpec::new(Strategy::Moe, BackboneSpec::tiny_cnn(4));
        let mut model: FusionModel<f32> = FusionModel::build(&spec, None, &mut rng).unwrap();
        save_checkpoint(&path, &model, &stats()).unwrap();
        let (mut loaded, band_stats) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(band_stats, stats());
        assert_eq!(loaded.spec(), &spec);
        let x = FusionInput::Modalities {
            thermal: Tensor::randn(&[2, 1, 4, 4], 1.0, &mut rng),
            rgb: Tensor::randn(&[2, 3, 8, 8], 1.0, &mut rng),
            lidar: Tensor::randn(&[2, 1, 4, 4], 1.0, &mut rng),
        };
        let a = model.forward(&x, Mode::Eval).unwrap();
        let b = loaded.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a.scores, b.scores);
        assert_eq!(read_checkpoint_meta(&path).unwrap().dtype, "f32");
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(load_checkpoint::<f32>(&path).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = FusionModelSpec::new(Strategy::Early, BackboneSpec::tiny_cnn(4));
        let model: FusionModel<f64> = FusionModel::build(&spec, None, &mut rng).unwrap();
        save_checkpoint(&path, &model, &stats()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        assert!(load_checkpoint::<f64>(&path).is_err());
    }
}
