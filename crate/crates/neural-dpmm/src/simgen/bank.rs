//! Feature banks: fixed pools of per-class item vectors.
//!
//! On disk a bank is a pair of files sharing one base path: `<base>.bin`
//! holds every item as little-endian 32-bit floats, row major, and
//! `<base>.json` is a sidecar locating each class as a row range. Loading
//! splits the classes into two disjoint halves with a seeded shuffle so
//! train-time and test-time episodes never share a class.

use crate::rng::RngStream;
use rand::seq::SliceRandom;
use rand::RngExt;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::SimGenError;

/// Which half of the class split a bank holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    MetaTrain,
    MetaTest,
}

#[derive(Debug, thiserror::Error)]
pub enum BankError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("sidecar {path} does not parse: {source}")]
    Sidecar {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("bank dimension must be at least 1")]
    ZeroDim,
    #[error("class {id} appears twice in the sidecar")]
    DuplicateClass { id: u32 },
    #[error("class {id} has no items")]
    EmptyClass { id: u32 },
    #[error("class {id} spans rows {offset}..{end} but the binary holds {rows} rows")]
    RangeOutOfBounds {
        id: u32,
        offset: u64,
        end: u64,
        rows: u64,
    },
    #[error("binary {path} holds {found} bytes, not a whole number of {dim}-float rows")]
    RaggedBinary {
        path: PathBuf,
        found: u64,
        dim: usize,
    },
    #[error("bank has no classes")]
    Empty,
}

/// Sidecar record: one class as a contiguous row range in the binary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SidecarClass {
    pub id: u32,
    pub offset: u64,
    pub count: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub dim: usize,
    pub classes: Vec<SidecarClass>,
}

/// An in-memory half of a bank: class id to its item vectors.
#[derive(Clone, Debug)]
pub struct FeatureBank {
    dim: usize,
    split: Split,
    class_table: BTreeMap<u32, Vec<Vec<f64>>>,
    ids: Vec<u32>,
}

impl FeatureBank {
    pub fn new(
        dim: usize,
        split: Split,
        class_table: BTreeMap<u32, Vec<Vec<f64>>>,
    ) -> Result<Self, BankError> {
        if dim == 0 {
            return Err(BankError::ZeroDim);
        }
        if class_table.is_empty() {
            return Err(BankError::Empty);
        }
        for (&id, items) in &class_table {
            if items.is_empty() {
                return Err(BankError::EmptyClass { id });
            }
            for item in items {
                assert_eq!(item.len(), dim, "item dimension mismatch in class {id}");
            }
        }
        let ids = class_table.keys().copied().collect();
        Ok(Self {
            dim,
            split,
            class_table,
            ids,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Class ids in ascending order.
    pub fn class_ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn items(&self, id: u32) -> Option<&[Vec<f64>]> {
        self.class_table.get(&id).map(Vec::as_slice)
    }

    pub fn total_items(&self) -> usize {
        self.class_table.values().map(Vec::len).sum()
    }
}

fn bin_path(base: &Path) -> PathBuf {
    base.with_extension("bin")
}

fn sidecar_path(base: &Path) -> PathBuf {
    base.with_extension("json")
}

/// Writes `<base>.bin` and `<base>.json` for the given classes, stored in
/// the order supplied. Values are narrowed to f32; callers that need
/// exact zeros must pass values that survive the narrowing, which 0.0
/// does.
pub fn write_bank_files(
    base: &Path,
    dim: usize,
    classes: &[(u32, Vec<Vec<f64>>)],
) -> Result<(), BankError> {
    let bin = bin_path(base);
    let mut sidecar = Sidecar {
        dim,
        classes: Vec::with_capacity(classes.len()),
    };
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0u64;
    for (id, items) in classes {
        sidecar.classes.push(SidecarClass {
            id: *id,
            offset,
            count: items.len() as u64,
        });
        offset += items.len() as u64;
        for item in items {
            for &v in item {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    std::fs::write(&bin, &payload).map_err(|source| BankError::Io { path: bin, source })?;
    let side = sidecar_path(base);
    let mut file = std::fs::File::create(&side).map_err(|source| BankError::Io {
        path: side.clone(),
        source,
    })?;
    serde_json::to_writer_pretty(&mut file, &sidecar).map_err(|source| BankError::Sidecar {
        path: side.clone(),
        source,
    })?;
    file.write_all(b"\n")
        .map_err(|source| BankError::Io { path: side, source })
}

fn read_sidecar(base: &Path) -> Result<Sidecar, BankError> {
    let path = sidecar_path(base);
    let text = std::fs::read_to_string(&path).map_err(|source| BankError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| BankError::Sidecar { path, source })
}

/// Loads one split of the bank at `base`. The full class list is
/// shuffled by `split_seed` and cut in half: the first half (rounded up)
/// is the train pool, the rest the test pool. The same seed always
/// produces the same partition.
pub fn load_feature_bank(
    base: &Path,
    split: Split,
    split_seed: u64,
) -> Result<FeatureBank, BankError> {
    let sidecar = read_sidecar(base)?;
    if sidecar.dim == 0 {
        return Err(BankError::ZeroDim);
    }
    let path = bin_path(base);
    let mut raw = Vec::new();
    std::fs::File::open(&path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|source| BankError::Io {
            path: path.clone(),
            source,
        })?;
    let row_bytes = sidecar.dim * 4;
    if raw.len() % row_bytes != 0 {
        return Err(BankError::RaggedBinary {
            path,
            found: raw.len() as u64,
            dim: sidecar.dim,
        });
    }
    let rows = (raw.len() / row_bytes) as u64;

    let mut table: BTreeMap<u32, Vec<Vec<f64>>> = BTreeMap::new();
    for class in &sidecar.classes {
        if class.count == 0 {
            return Err(BankError::EmptyClass { id: class.id });
        }
        let end = class.offset + class.count;
        if end > rows {
            return Err(BankError::RangeOutOfBounds {
                id: class.id,
                offset: class.offset,
                end,
                rows,
            });
        }
        let mut items = Vec::with_capacity(class.count as usize);
        for r in class.offset..end {
            let start = r as usize * row_bytes;
            let item: Vec<f64> = raw[start..start + row_bytes]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            items.push(item);
        }
        if table.insert(class.id, items).is_some() {
            return Err(BankError::DuplicateClass { id: class.id });
        }
    }
    if table.is_empty() {
        return Err(BankError::Empty);
    }

    let mut ids: Vec<u32> = table.keys().copied().collect();
    let mut shuffle_rng = RngStream::from_seed(split_seed);
    ids.shuffle(&mut shuffle_rng);
    let cut = ids.len().div_ceil(2);
    let keep: &[u32] = match split {
        Split::MetaTrain => &ids[..cut],
        Split::MetaTest => &ids[cut..],
    };
    if keep.is_empty() {
        return Err(BankError::Empty);
    }
    let half: BTreeMap<u32, Vec<Vec<f64>>> = keep
        .iter()
        .map(|id| (*id, table.remove(id).expect("id came from the table")))
        .collect();
    FeatureBank::new(sidecar.dim, split, half)
}

/// Synthesizes a sparse nonnegative bank. Per class and dimension the
/// generator draws a zero rate from a Beta with mean `gate_rate`, a
/// location from a standard normal, and a variance from an inverse
/// gamma; items then mix exact zeros with log-normal positives. The
/// marginal zero fraction over the whole bank is `gate_rate`.
pub fn make_sparse_bank(
    classes: u32,
    items_per_class: usize,
    dim: usize,
    gate_rate: f64,
    rng: &mut RngStream,
) -> Result<Vec<(u32, Vec<Vec<f64>>)>, SimGenError> {
    if dim == 0 {
        return Err(SimGenError::ZeroDim);
    }
    if classes == 0 || items_per_class == 0 {
        return Err(SimGenError::ZeroLen);
    }
    if !(gate_rate > 0.0 && gate_rate < 1.0) {
        return Err(SimGenError::BadGateRate(gate_rate));
    }
    // Concentration 2 spreads per-class rates around the target without
    // degenerating to all-zero or all-dense columns.
    let gate = Beta::new(2.0 * gate_rate, 2.0 * (1.0 - gate_rate)).expect("rate inside (0,1)");
    let variance = Gamma::new(3.0, 0.5).expect("fixed admissible shape");
    let mut bank = Vec::with_capacity(classes as usize);
    for id in 0..classes {
        let mut zero_rate = Vec::with_capacity(dim);
        let mut mu = Vec::with_capacity(dim);
        let mut sigma = Vec::with_capacity(dim);
        for _ in 0..dim {
            zero_rate.push(gate.sample(rng));
            let z: f64 = StandardNormal.sample(rng);
            mu.push(z);
            let v: f64 = variance.sample(rng);
            sigma.push((1.0 / v).sqrt());
        }
        let mut items = Vec::with_capacity(items_per_class);
        for _ in 0..items_per_class {
            let mut item = Vec::with_capacity(dim);
            for d in 0..dim {
                if rng.random::<f64>() < zero_rate[d] {
                    item.push(0.0);
                } else {
                    let z: f64 = StandardNormal.sample(rng);
                    item.push((mu[d] + sigma[d] * z).exp());
                }
            }
            items.push(item);
        }
        bank.push((id, items));
    }
    Ok(bank)
}
