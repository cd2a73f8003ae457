//! Checkpoint files: one JSON header line, then the parameters (and
//! optionally Adam moments) as a little-endian f32 blob in
//! [`param_shapes`](super::param_shapes) order.

use super::{param_shapes, CircuitConfig, CircuitError, CircuitParams};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Settings a resumed run must reproduce for its episode and update
/// streams to line up with the original run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub seed: u64,
    pub lr: f64,
    pub batch: usize,
    pub episode_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub floats: usize,
}

/// First line of every checkpoint file. `sections` declares the blob
/// layout that follows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub circuit: CircuitConfig,
    pub run: RunSettings,
    pub step: u64,
    pub adam_step: u64,
    pub sections: Vec<Section>,
}

/// In-memory checkpoint. Moments are either both present or both
/// absent; a params-only file cannot seed a bit-exact resume.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub circuit: CircuitConfig,
    pub run: RunSettings,
    pub step: u64,
    pub adam_step: u64,
    pub params: CircuitParams,
    pub adam_m: Option<Vec<Array2<f32>>>,
    pub adam_v: Option<Vec<Array2<f32>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path} has no header line")]
    NoHeader { path: PathBuf },
    #[error("checkpoint {path} header is not valid JSON: {source}")]
    Header {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("checkpoint {path} declares sections {found:?}; expected [params] or [params, adam_m, adam_v]")]
    BadSections { path: PathBuf, found: Vec<String> },
    #[error("checkpoint {path} section {name} declares {got} floats, config implies {want}")]
    SectionSize {
        path: PathBuf,
        name: String,
        want: usize,
        got: usize,
    },
    #[error("checkpoint {path} blob truncated at byte {byte_offset}: sections need {expected_bytes} bytes")]
    Truncated {
        path: PathBuf,
        byte_offset: usize,
        expected_bytes: usize,
    },
    #[error("checkpoint {path} has trailing bytes starting at byte {byte_offset}")]
    TrailingBytes { path: PathBuf, byte_offset: usize },
    #[error("checkpoint {path} holds a non-finite value at byte {byte_offset}")]
    NonFinite { path: PathBuf, byte_offset: usize },
    #[error(transparent)]
    Config(#[from] CircuitError),
}

impl Checkpoint {
    pub fn params_only(
        circuit: CircuitConfig,
        run: RunSettings,
        step: u64,
        params: CircuitParams,
    ) -> Self {
        Checkpoint {
            circuit,
            run,
            step,
            adam_step: 0,
            params,
            adam_m: None,
            adam_v: None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let param_floats = ckpt.params.float_count();
    let mut sections = vec![Section {
        name: "params".into(),
        floats: param_floats,
    }];
    if ckpt.adam_m.is_some() {
        for name in ["adam_m", "adam_v"] {
            sections.push(Section {
                name: name.into(),
                floats: param_floats,
            });
        }
    }
    let header = CheckpointHeader {
        circuit: ckpt.circuit,
        run: ckpt.run,
        step: ckpt.step,
        adam_step: ckpt.adam_step,
        sections,
    };
    let mut blob = serde_json::to_vec(&header).expect("header serializes");
    blob.push(b'\n');
    let mut push = |mats: &[&Array2<f32>]| {
        for mat in mats {
            for &v in mat.iter() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    };
    push(&ckpt.params.as_views());
    if let (Some(m), Some(v)) = (&ckpt.adam_m, &ckpt.adam_v) {
        push(&m.iter().collect::<Vec<_>>());
        push(&v.iter().collect::<Vec<_>>());
    }
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&blob).map_err(io_err(path))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let data = fs::read(path).map_err(io_err(path))?;
    let newline = data
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CheckpointError::NoHeader {
            path: path.to_path_buf(),
        })?;
    let header: CheckpointHeader =
        serde_json::from_slice(&data[..newline]).map_err(|source| CheckpointError::Header {
            path: path.to_path_buf(),
            source,
        })?;

    let names: Vec<String> = header.sections.iter().map(|s| s.name.clone()).collect();
    let with_moments = match names.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["params"] => false,
        ["params", "adam_m", "adam_v"] => true,
        _ => {
            return Err(CheckpointError::BadSections {
                path: path.to_path_buf(),
                found: names,
            })
        }
    };
    let shapes = param_shapes(&header.circuit);
    let param_floats: usize = shapes.iter().map(|&(r, c)| r * c).sum();
    for section in &header.sections {
        if section.floats != param_floats {
            return Err(CheckpointError::SectionSize {
                path: path.to_path_buf(),
                name: section.name.clone(),
                want: param_floats,
                got: section.floats,
            });
        }
    }

    let blob_start = newline + 1;
    let total_floats: usize = header.sections.iter().map(|s| s.floats).sum();
    let expected_bytes = total_floats * 4;
    if data.len() < blob_start + expected_bytes {
        return Err(CheckpointError::Truncated {
            path: path.to_path_buf(),
            byte_offset: data.len(),
            expected_bytes,
        });
    }
    if data.len() > blob_start + expected_bytes {
        return Err(CheckpointError::TrailingBytes {
            path: path.to_path_buf(),
            byte_offset: blob_start + expected_bytes,
        });
    }

    let mut cursor = blob_start;
    let mut read_mats = |shapes: &[(usize, usize)]| -> Result<Vec<Array2<f32>>, CheckpointError> {
        let mut mats = Vec::with_capacity(shapes.len());
        for &(rows, cols) in shapes {
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let bytes: [u8; 4] = data[cursor..cursor + 4].try_into().unwrap();
                let v = f32::from_le_bytes(bytes);
                if !v.is_finite() {
                    return Err(CheckpointError::NonFinite {
                        path: path.to_path_buf(),
                        byte_offset: cursor,
                    });
                }
                values.push(v);
                cursor += 4;
            }
            mats.push(Array2::from_shape_vec((rows, cols), values).expect("shape matches count"));
        }
        Ok(mats)
    };

    let params = CircuitParams::from_flat(&header.circuit, read_mats(&shapes)?)?;
    let (adam_m, adam_v) = if with_moments {
        (Some(read_mats(&shapes)?), Some(read_mats(&shapes)?))
    } else {
        (None, None)
    };
    Ok(Checkpoint {
        circuit: header.circuit,
        run: header.run,
        step: header.step,
        adam_step: header.adam_step,
        params,
        adam_m,
        adam_v,
    })
}
