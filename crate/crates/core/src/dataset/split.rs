use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Label, TileSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Column ranges (half-open, counted from the west edge) for each split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_cols: Range<usize>,
    pub val_cols: Range<usize>,
    pub test_cols: Range<usize>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_cols: 0..50,
            val_cols: 50..59,
            test_cols: 59..81,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let named = self.ranges();
        for (name, r) in &named {
            if r.start > r.end {
                return Err(Error::Dataset(format!("{name} column range {r:?} is reversed")));
            }
        }
        for i in 0..named.len() {
            for j in i + 1..named.len() {
                let (a, b) = (&named[i].1, &named[j].1);
                if a.start < b.end && b.start < a.end {
                    return Err(Error::Dataset(format!(
                        "{} columns {a:?} overlap {} columns {b:?}",
                        named[i].0, named[j].0
                    )));
                }
            }
        }
        Ok(())
    }

    fn ranges(&self) -> [(Split, &Range<usize>); 3] {
        [
            (Split::Train, &self.train_cols),
            (Split::Val, &self.val_cols),
            (Split::Test, &self.test_cols),
        ]
    }

    pub fn split_of(&self, col: usize) -> Option<Split> {
        self.ranges()
            .into_iter()
            .find(|(_, r)| r.contains(&col))
            .map(|(s, _)| s)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<TileSample>,
    pub val: Vec<TileSample>,
    pub test: Vec<TileSample>,
}

/// Partitions samples by grid column.
pub fn split(samples: Vec<TileSample>, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let mut out = Splits::default();
    for sample in samples {
        match spec.split_of(sample.cell.col) {
            Some(Split::Train) => out.train.push(sample),
            Some(Split::Val) => out.val.push(sample),
            Some(Split::Test) => out.test.push(sample),
            None => {
                return Err(Error::Dataset(format!(
                    "cell {} lies in no split column range",
                    sample.cell
                )))
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub row: usize,
    pub col: usize,
    pub split: Split,
    pub label: Label,
}

pub fn write_split_manifest(path: &Path, splits: &Splits) -> Result<()> {
    let file = std::fs::File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    for (split, samples) in [
        (Split::Train, &splits.train),
        (Split::Val, &splits.val),
        (Split::Test, &splits.test),
    ] {
        for s in samples {
            let record = SplitRecord {
                row: s.cell.row,
                col: s.cell.col,
                split,
                label: s.label,
            };
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n").map_err(Error::io(path))?;
        }
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_split_manifest(path: &Path) -> Result<Vec<SplitRecord>> {
    let file = std::fs::File::open(path).map_err(Error::io(path))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(Error::io(path))?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line)?);
        }
    }
    Ok(records)
}
