//! Tile archives: one tar per split holding `manifest.jsonl` plus one `.npy`
//! array (little-endian `float32`, C order) per sample and modality.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::{Cell, Tile};
use super::{Label, Modality, TileSample};
use crate::error::{Error, Result};

const MANIFEST: &str = "manifest.jsonl";
const NPY_MAGIC: &[u8] = b"\x93NUMPY";

/// One manifest line per archived sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub row: usize,
    pub col: usize,
    pub label: Label,
    pub thermal_shape: [usize; 3],
    pub rgb_shape: [usize; 3],
    pub lidar_shape: [usize; 3],
}

fn tile_path(cell: Cell, modality: Modality) -> String {
    format!("tiles/r{}_c{}_{}.npy", cell.row, cell.col, modality)
}

/// Encodes a float32 array in NumPy `.npy` v1.0 format.
pub fn write_npy(shape: &[usize], data: &[f32]) -> Vec<u8> {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    let shape_txt = if dims.len() == 1 {
        format!("({},)", dims[0])
    } else {
        format!("({})", dims.join(", "))
    };
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {shape_txt}, }}");
    // magic(6) + version(2) + len(2) + header + '\n' must be a multiple of 64
    let unpadded = NPY_MAGIC.len() + 4 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + data.len() * 4);
    out.extend_from_slice(NPY_MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a little-endian float32, C-order `.npy` array.
pub fn read_npy(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    let bad = |m: &str| Error::Dataset(format!("npy: {m}"));
    if bytes.len() < 10 || &bytes[..6] != NPY_MAGIC {
        return Err(bad("missing magic"));
    }
    let (header_len, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(bad("truncated header"));
            }
            (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12)
        }
        v => return Err(bad(&format!("unsupported version {v}"))),
    };
    let header = std::str::from_utf8(bytes.get(start..start + header_len).ok_or_else(|| bad("truncated header"))?)
        .map_err(|_| bad("header is not utf-8"))?;
    if !header.contains("'<f4'") || header.contains("'fortran_order': True") {
        return Err(bad("only little-endian float32 C-order arrays are supported"));
    }
    let open = header.find("'shape': (").ok_or_else(|| bad("missing shape"))? + "'shape': (".len();
    let close = open + header[open..].find(')').ok_or_else(|| bad("unterminated shape"))?;
    let shape = header[open..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| bad("bad shape entry")))
        .collect::<Result<Vec<_>>>()?;
    let body = &bytes[start + header_len..];
    let count: usize = shape.iter().product();
    if body.len() != count * 4 {
        return Err(bad(&format!("expected {count} values, found {} bytes", body.len())));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((shape, data))
}

fn append(builder: &mut tar::Builder<BufWriter<File>>, name: &str, bytes: &[u8], path: &Path) -> Result<()> {
    let mut header = tar::Header::new_gnu();
    header.set_size(bytes.len() as u64);
    header.set_mode(0o644);
    header.set_cksum();
    builder
        .append_data(&mut header, name, bytes)
        .map_err(Error::io(path))
}

/// Writes samples to a tar archive with a line-delimited manifest.
pub fn write_split_archive(path: &Path, samples: &[TileSample]) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut builder = tar::Builder::new(BufWriter::new(file));
    let mut manifest = String::new();
    for s in samples {
        let record = ManifestRecord {
            row: s.cell.row,
            col: s.cell.col,
            label: s.label,
            thermal_shape: s.thermal.shape(),
            rgb_shape: s.rgb.shape(),
            lidar_shape: s.lidar.shape(),
        };
        manifest.push_str(&serde_json::to_string(&record)?);
        manifest.push('\n');
    }
    append(&mut builder, MANIFEST, manifest.as_bytes(), path)?;
    for s in samples {
        for modality in Modality::ALL {
            let tile = s.tile(modality);
            append(&mut builder, &tile_path(s.cell, modality), &write_npy(&tile.shape(), &tile.data), path)?;
        }
    }
    builder
        .into_inner()
        .and_then(|mut w| std::io::Write::flush(&mut w))
        .map_err(Error::io(path))?;
    Ok(())
}

/// Reads an archive written by [`write_split_archive`], in manifest order.
pub fn read_split_archive(path: &Path) -> Result<Vec<TileSample>> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut archive = tar::Archive::new(BufReader::new(file));
    let mut entries: HashMap<String, Vec<u8>> = HashMap::new();
    for entry in archive.entries().map_err(Error::io(path))? {
        let mut entry = entry.map_err(Error::io(path))?;
        let name = entry.path().map_err(Error::io(path))?.to_string_lossy().into_owned();
        let mut bytes = Vec::with_capacity(entry.size() as usize);
        entry.read_to_end(&mut bytes).map_err(Error::io(path))?;
        entries.insert(name, bytes);
    }
    let manifest = entries
        .get(MANIFEST)
        .ok_or_else(|| Error::Dataset(format!("{}: archive has no {MANIFEST}", path.display())))?;
    let manifest = std::str::from_utf8(manifest)
        .map_err(|_| Error::Dataset(format!("{}: manifest is not utf-8", path.display())))?;
    let mut samples = Vec::new();
    for line in manifest.lines().filter(|l| !l.trim().is_empty()) {
        let record: ManifestRecord = serde_json::from_str(line)?;
        let cell = Cell::new(record.row, record.col);
        let mut tiles = Vec::with_capacity(3);
        for (modality, expected) in Modality::ALL
            .into_iter()
            .zip([record.thermal_shape, record.rgb_shape, record.lidar_shape])
        {
            let name = tile_path(cell, modality);
            let bytes = entries
                .get(&name)
                .ok_or_else(|| Error::Dataset(format!("{}: missing {name}", path.display())))?;
            let (shape, data) = read_npy(bytes)?;
            if shape != expected {
                return Err(Error::Shape(format!("{name}: shape {shape:?}, manifest says {expected:?}")));
            }
            tiles.push(Tile::new(shape[0], shape[1], shape[2], data)?);
        }
        let lidar = tiles.pop().expect("three tiles");
        let rgb = tiles.pop().expect("three tiles");
        let thermal = tiles.pop().expect("three tiles");
        samples.push(TileSample {
            cell,
            label: record.label,
            thermal,
            rgb,
            lidar,
        });
    }
    Ok(samples)
}
