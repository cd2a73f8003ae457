//! Episode container, label canonicalization, and JSONL serialization.
//!
//! An episode is a finite sequence of (class label, observation) pairs.
//! Labels are positive integers and must be in canonical first-use order:
//! the first observation carries label 1, and the first occurrence of label
//! `k + 1` appears only after label `k` has occurred. All observations share
//! one dimension.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Which parts of an episode an inference method gets to see.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingFlag {
    /// Labels are revealed after each prediction; methods are scored on
    /// next-label log probability.
    SequentialObservation,
    /// No labels are revealed; methods produce a full labeling of the
    /// sequence which is scored against the truth.
    FullyUnobserved,
}

/// One labeled sequence. `labels[t]` is the 1-based class of `obs[t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub labels: Vec<usize>,
    pub obs: Vec<Vec<f64>>,
}

impl Episode {
    /// Sequence length.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Observation dimension, taken from the first observation.
    pub fn dim(&self) -> usize {
        self.obs.first().map_or(0, Vec::len)
    }

    /// Number of distinct classes, assuming canonical labels.
    pub fn classes(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EpisodeError {
    #[error("episode is empty")]
    Empty,
    #[error("episode has {labels} labels but {obs} observations")]
    LengthMismatch { labels: usize, obs: usize },
    #[error("observation {index} has dimension {got}, expected {want}")]
    DimMismatch { index: usize, want: usize, got: usize },
    #[error("label {label} at position {index} breaks canonical first-use order")]
    NonCanonical { index: usize, label: usize },
}

/// Checks lengths, dimensions, and canonical label order.
///
/// # Errors
///
/// Returns the first violation found, scanning front to back.
pub fn validate_episode(episode: &Episode) -> Result<(), EpisodeError> {
    if episode.is_empty() {
        return Err(EpisodeError::Empty);
    }
    if episode.labels.len() != episode.obs.len() {
        return Err(EpisodeError::LengthMismatch {
            labels: episode.labels.len(),
            obs: episode.obs.len(),
        });
    }
    let dim = episode.dim();
    for (index, x) in episode.obs.iter().enumerate() {
        if x.len() != dim {
            return Err(EpisodeError::DimMismatch {
                index,
                want: dim,
                got: x.len(),
            });
        }
    }
    let mut seen = 0usize;
    for (index, &label) in episode.labels.iter().enumerate() {
        if label == 0 || label > seen + 1 {
            return Err(EpisodeError::NonCanonical { index, label });
        }
        if label == seen + 1 {
            seen += 1;
        }
    }
    Ok(())
}

/// Relabels into canonical first-use order, preserving the partition.
///
/// The output at each position is the 1-based rank of that label's first
/// appearance, so `[5, 4, 5, 4, 9]` becomes `[1, 2, 1, 2, 3]`.
pub fn canonicalize_labels(labels: &[usize]) -> Vec<usize> {
    let mut remap = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = remap.len() + 1;
            *remap.entry(l).or_insert(next)
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum EpisodeIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed episode record: {source}")]
    Malformed {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}:{line}: {source}")]
    Invalid {
        path: String,
        line: usize,
        source: EpisodeError,
    },
}

/// Writes episodes as JSON Lines, one `{"labels": [...], "obs": [...]}` record per line.
///
/// # Errors
///
/// Fails on I/O errors; episodes are written as given, without validation.
pub fn write_jsonl(path: &Path, episodes: &[Episode]) -> Result<(), EpisodeIoError> {
    let io_err = |source| EpisodeIoError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    for episode in episodes {
        let line = serde_json::to_string(episode).expect("episode serialization is infallible");
        w.write_all(line.as_bytes()).map_err(io_err)?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Reads and validates a JSONL episode file written by [`write_jsonl`].
///
/// # Errors
///
/// Reports the file, line, and cause for malformed JSON or invalid episodes.
pub fn read_jsonl(path: &Path) -> Result<Vec<Episode>, EpisodeIoError> {
    let file = std::fs::File::open(path).map_err(|source| EpisodeIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut episodes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| EpisodeIoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let episode: Episode =
            serde_json::from_str(&line).map_err(|source| EpisodeIoError::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })?;
        validate_episode(&episode).map_err(|source| EpisodeIoError::Invalid {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        episodes.push(episode);
    }
    Ok(episodes)
}
