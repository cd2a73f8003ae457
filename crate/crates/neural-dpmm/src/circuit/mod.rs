//! Recurrent labeling circuit: a stacked GRU that reads an observation
//! together with a one-hot encoding of the previous label and emits one
//! logit per class slot.
//!
//! Valid classes at any point are exactly `1..=1 + max(previous labels)`,
//! capped at the slot count, so the circuit's label sequences are
//! canonical by construction. Two execution paths share the parameter
//! layout: [`graph::loss_graph`] builds the differentiable teacher-forced
//! training loss on a [`Tape`](crate::autodiff::Tape), while the
//! functions here run forward-only inference on plain `f32` arrays.

use crate::autodiff::stable_sigmoid;
use crate::episode::{validate_episode, Episode, EpisodeError};
use crate::rng::RngStream;
use ndarray::{s, Array1, Array2, ArrayView1};
use rand::RngExt;
use serde::{Deserialize, Serialize};

mod checkpoint;
pub mod graph;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CheckpointHeader, RunSettings,
    Section,
};
pub use graph::loss_graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitConfig {
    /// Observation dimension fed to the first layer.
    pub input_dim: usize,
    /// Hidden units per GRU layer.
    pub hidden: usize,
    /// Stacked GRU layers; the top layer feeds the head.
    pub layers: usize,
    /// Output logits; also the width of the one-hot label input.
    pub max_classes: usize,
}

impl CircuitConfig {
    pub fn validate(&self) -> Result<(), CircuitError> {
        if self.input_dim == 0 || self.hidden == 0 || self.layers == 0 || self.max_classes == 0 {
            return Err(CircuitError::BadConfig(*self));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CircuitError {
    #[error("every config dimension must be positive, got {0:?}")]
    BadConfig(CircuitConfig),
    #[error("observation has dimension {got}, circuit expects {want}")]
    DimMismatch { want: usize, got: usize },
    #[error("previous label {prev} exceeds seen classes + 1 ({seen} seen) or slot count {slots}")]
    PrevLabelOutOfRange { prev: usize, seen: usize, slots: usize },
    #[error("expected {want} parameter matrices, got {got}")]
    ParamCount { want: usize, got: usize },
    #[error("parameter {index} has shape {got:?}, expected {want:?}")]
    ParamShape {
        index: usize,
        want: (usize, usize),
        got: (usize, usize),
    },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("episode {index} has length {got}, batch requires {want}")]
    MixedLengths {
        index: usize,
        want: usize,
        got: usize,
    },
    #[error("sequence length {len} exceeds the {max_classes} class slots")]
    TooManyClasses { len: usize, max_classes: usize },
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Tape(#[from] crate::autodiff::TapeError),
}

/// One GRU layer's parameters. Input weights cover the concatenated
/// input: the first `input_dim` rows act on the observation (or the
/// layer below's hidden state) and, for the bottom layer, the remaining
/// `max_classes` rows act on the one-hot previous label.
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer {
    pub wx_update: Array2<f32>,
    pub wh_update: Array2<f32>,
    pub b_update: Array2<f32>,
    pub wx_reset: Array2<f32>,
    pub wh_reset: Array2<f32>,
    pub b_reset: Array2<f32>,
    pub wx_cand: Array2<f32>,
    pub wh_cand: Array2<f32>,
    pub b_cand: Array2<f32>,
}

/// Full parameter set: GRU stack plus the linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct CircuitParams {
    pub layers: Vec<GruLayer>,
    /// `hidden x max_classes`; logits are `h · head_w + head_b`.
    pub head_w: Array2<f32>,
    pub head_b: Array2<f32>,
}

pub const MATS_PER_LAYER: usize = 9;

/// Shapes of every parameter matrix in serialization order: per layer
/// `wx, wh, b` for update, reset, candidate gates, then head weight and
/// head bias. Biases are stored as `1 x n` rows.
pub fn param_shapes(cfg: &CircuitConfig) -> Vec<(usize, usize)> {
    let mut shapes = Vec::with_capacity(cfg.layers * MATS_PER_LAYER + 2);
    for layer in 0..cfg.layers {
        let in_dim = if layer == 0 {
            cfg.input_dim + cfg.max_classes
        } else {
            cfg.hidden
        };
        for _gate in 0..3 {
            shapes.push((in_dim, cfg.hidden));
            shapes.push((cfg.hidden, cfg.hidden));
            shapes.push((1, cfg.hidden));
        }
    }
    shapes.push((cfg.hidden, cfg.max_classes));
    shapes.push((1, cfg.max_classes));
    shapes
}

impl CircuitParams {
    /// Uniform `±1/sqrt(fan_in)` weights, zero biases.
    pub fn init(cfg: &CircuitConfig, rng: &mut RngStream) -> Result<Self, CircuitError> {
        cfg.validate()?;
        let mats = param_shapes(cfg)
            .into_iter()
            .map(|(rows, cols)| {
                if rows == 1 {
                    Array2::zeros((rows, cols))
                } else {
                    let bound = 1.0 / (rows as f32).sqrt();
                    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
                }
            })
            .collect();
        Self::from_flat(cfg, mats)
    }

    /// Rebuilds structured parameters from matrices in [`param_shapes`]
    /// order.
    pub fn from_flat(cfg: &CircuitConfig, mats: Vec<Array2<f32>>) -> Result<Self, CircuitError> {
        let shapes = param_shapes(cfg);
        if mats.len() != shapes.len() {
            return Err(CircuitError::ParamCount {
                want: shapes.len(),
                got: mats.len(),
            });
        }
        for (index, (mat, want)) in mats.iter().zip(&shapes).enumerate() {
            if mat.dim() != *want {
                return Err(CircuitError::ParamShape {
                    index,
                    want: *want,
                    got: mat.dim(),
                });
            }
        }
        let mut it = mats.into_iter();
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            layers.push(GruLayer {
                wx_update: it.next().unwrap(),
                wh_update: it.next().unwrap(),
                b_update: it.next().unwrap(),
                wx_reset: it.next().unwrap(),
                wh_reset: it.next().unwrap(),
                b_reset: it.next().unwrap(),
                wx_cand: it.next().unwrap(),
                wh_cand: it.next().unwrap(),
                b_cand: it.next().unwrap(),
            });
        }
        let head_w = it.next().unwrap();
        let head_b = it.next().unwrap();
        Ok(CircuitParams {
            layers,
            head_w,
            head_b,
        })
    }

    /// Flattens into matrices in [`param_shapes`] order.
    pub fn flatten(&self) -> Vec<Array2<f32>> {
        self.as_views().into_iter().cloned().collect()
    }

    pub fn as_views(&self) -> Vec<&Array2<f32>> {
        let mut out = Vec::with_capacity(self.layers.len() * MATS_PER_LAYER + 2);
        for layer in &self.layers {
            out.push(&layer.wx_update);
            out.push(&layer.wh_update);
            out.push(&layer.b_update);
            out.push(&layer.wx_reset);
            out.push(&layer.wh_reset);
            out.push(&layer.b_reset);
            out.push(&layer.wx_cand);
            out.push(&layer.wh_cand);
            out.push(&layer.b_cand);
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn float_count(&self) -> usize {
        self.as_views().iter().map(|m| m.len()).sum()
    }
}

/// Per-sequence recurrent state: one hidden vector per layer plus the
/// running label bookkeeping that determines the valid class set.
#[derive(Clone, Debug, PartialEq)]
pub struct CircuitState {
    h: Vec<Array1<f32>>,
    last_label: usize,
    max_label: usize,
}

impl CircuitState {
    pub fn new(cfg: &CircuitConfig) -> Self {
        CircuitState {
            h: (0..cfg.layers).map(|_| Array1::zeros(cfg.hidden)).collect(),
            last_label: 0,
            max_label: 0,
        }
    }

    pub fn last_label(&self) -> usize {
        self.last_label
    }

    /// Highest label fed so far; 0 before any label.
    pub fn max_label(&self) -> usize {
        self.max_label
    }

    /// Number of classes a prediction may use right now.
    pub fn valid_classes(&self, cfg: &CircuitConfig) -> usize {
        (self.max_label + 1).min(cfg.max_classes)
    }
}

fn gate_preact(
    wx: &Array2<f32>,
    wh: &Array2<f32>,
    b: &Array2<f32>,
    x: &ArrayView1<f32>,
    onehot_row: Option<usize>,
    h: &Array1<f32>,
) -> Array1<f32> {
    let d = x.len();
    let mut pre = b.row(0).to_owned();
    pre += &x.dot(&wx.slice(s![..d, ..]));
    if let Some(row) = onehot_row {
        pre += &wx.row(row);
    }
    pre += &h.dot(wh);
    pre
}

fn layer_step(
    layer: &GruLayer,
    x: &ArrayView1<f32>,
    onehot_row: Option<usize>,
    h: &Array1<f32>,
) -> Array1<f32> {
    let update = gate_preact(
        &layer.wx_update,
        &layer.wh_update,
        &layer.b_update,
        x,
        onehot_row,
        h,
    )
    .mapv(stable_sigmoid);
    let reset = gate_preact(
        &layer.wx_reset,
        &layer.wh_reset,
        &layer.b_reset,
        x,
        onehot_row,
        h,
    )
    .mapv(stable_sigmoid);
    let gated = &reset * h;
    let d = x.len();
    let mut cand = layer.b_cand.row(0).to_owned();
    cand += &x.dot(&layer.wx_cand.slice(s![..d, ..]));
    if let Some(row) = onehot_row {
        cand += &layer.wx_cand.row(row);
    }
    cand += &gated.dot(&layer.wh_cand);
    let cand = cand.mapv(f32::tanh);
    h + &(&update * &(&cand - h))
}

/// Advances the circuit one step and returns the raw logits (length
/// `max_classes`, unmasked). The caller restricts to the valid prefix
/// when forming probabilities. `prev_label` is 0 at the first step and
/// the previous (true or self-emitted) label afterwards.
///
/// The concatenated input `[x; one_hot(prev_label)]` is never
/// materialized: the one-hot block contributes a single row of each
/// input weight matrix.
pub fn circuit_step(
    params: &CircuitParams,
    cfg: &CircuitConfig,
    x: &[f64],
    prev_label: usize,
    state: &mut CircuitState,
) -> Result<Array1<f32>, CircuitError> {
    if x.len() != cfg.input_dim {
        return Err(CircuitError::DimMismatch {
            want: cfg.input_dim,
            got: x.len(),
        });
    }
    if prev_label > state.max_label + 1 || prev_label > cfg.max_classes {
        return Err(CircuitError::PrevLabelOutOfRange {
            prev: prev_label,
            seen: state.max_label,
            slots: cfg.max_classes,
        });
    }
    let x32: Array1<f32> = x.iter().map(|&v| v as f32).collect();
    let onehot_row = (prev_label > 0).then(|| cfg.input_dim + prev_label - 1);
    let mut input = x32;
    for (l, (layer, h)) in params.layers.iter().zip(&mut state.h).enumerate() {
        let row = if l == 0 { onehot_row } else { None };
        let new_h = layer_step(layer, &input.view(), row, h);
        input = new_h.clone();
        *h = new_h;
    }
    let logits = input.dot(&params.head_w) + &params.head_b.row(0);
    state.last_label = prev_label;
    state.max_label = state.max_label.max(prev_label);
    Ok(logits)
}

/// Log-sum-exp of the first `count` logits, in f64.
fn logsumexp_prefix(logits: &Array1<f32>, count: usize) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    for &v in logits.iter().take(count) {
        mx = mx.max(v as f64);
    }
    let sum: f64 = logits
        .iter()
        .take(count)
        .map(|&v| (v as f64 - mx).exp())
        .sum();
    mx + sum.ln()
}

/// Teacher-forced per-step log probabilities of the true labels.
///
/// Step `t` sees the true label `z_{t-1}` as feedback and may predict
/// any class up to one past the running maximum of the true history.
pub fn sequential_log_probs(
    params: &CircuitParams,
    cfg: &CircuitConfig,
    episode: &Episode,
) -> Result<Vec<f64>, CircuitError> {
    validate_episode(episode)?;
    if episode.dim() != cfg.input_dim {
        return Err(CircuitError::DimMismatch {
            want: cfg.input_dim,
            got: episode.dim(),
        });
    }
    let mut state = CircuitState::new(cfg);
    let mut out = Vec::with_capacity(episode.len());
    for t in 0..episode.len() {
        let prev = if t == 0 { 0 } else { episode.labels[t - 1] };
        let logits = circuit_step(params, cfg, &episode.obs[t], prev, &mut state)?;
        let valid = state.valid_classes(cfg);
        let target = episode.labels[t] - 1;
        if target >= valid {
            return Err(CircuitError::TooManyClasses {
                len: episode.len(),
                max_classes: cfg.max_classes,
            });
        }
        out.push(logits[target] as f64 - logsumexp_prefix(&logits, valid));
    }
    Ok(out)
}

/// Mean teacher-forced NLL of one episode, in nats per step.
pub fn episode_nll(
    params: &CircuitParams,
    cfg: &CircuitConfig,
    episode: &Episode,
) -> Result<f64, CircuitError> {
    let lps = sequential_log_probs(params, cfg, episode)?;
    Ok(-lps.iter().sum::<f64>() / lps.len() as f64)
}

/// What the circuit hears as the previous label when no true labels are
/// available.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapFeedback {
    /// Feed back the circuit's own argmax choice.
    OwnArgmax,
    /// Always feed 0, as if every step were the first.
    Zeros,
}

fn argmax_prefix(logits: &Array1<f32>, count: usize) -> usize {
    let mut best = 0;
    for i in 1..count {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    best
}

/// Greedy label sequence for unlabeled observations: at each step take
/// the highest-probability valid class. Output is canonical because the
/// valid set only ever extends one past the running maximum.
pub fn circuit_map(
    params: &CircuitParams,
    cfg: &CircuitConfig,
    obs: &[Vec<f64>],
) -> Result<Vec<usize>, CircuitError> {
    circuit_map_with(params, cfg, obs, MapFeedback::OwnArgmax)
}

pub fn circuit_map_with(
    params: &CircuitParams,
    cfg: &CircuitConfig,
    obs: &[Vec<f64>],
    feedback: MapFeedback,
) -> Result<Vec<usize>, CircuitError> {
    if obs.is_empty() {
        return Err(CircuitError::EmptyBatch);
    }
    let mut state = CircuitState::new(cfg);
    let mut labels: Vec<usize> = Vec::with_capacity(obs.len());
    let mut chosen_max = 0usize;
    for x in obs {
        let prev = match feedback {
            MapFeedback::OwnArgmax => *labels.last().unwrap_or(&0),
            MapFeedback::Zeros => 0,
        };
        let logits = circuit_step(params, cfg, x, prev, &mut state)?;
        // With zero feedback the state never learns the history, so the
        // valid prefix is tracked from the emitted labels directly.
        let valid = (chosen_max + 1).min(cfg.max_classes);
        let label = argmax_prefix(&logits, valid) + 1;
        chosen_max = chosen_max.max(label);
        labels.push(label);
    }
    Ok(labels)
}

/// Batched greedy labeling of equal-length sequences. Matches
/// [`circuit_map`] sequence by sequence while sharing each step's matrix
/// products across the whole batch.
pub fn circuit_map_batch(
    params: &CircuitParams,
    cfg: &CircuitConfig,
    batch: &[&[Vec<f64>]],
    feedback: MapFeedback,
) -> Result<Vec<Vec<usize>>, CircuitError> {
    if batch.is_empty() || batch[0].is_empty() {
        return Err(CircuitError::EmptyBatch);
    }
    let t_len = batch[0].len();
    let d = cfg.input_dim;
    for (index, seq) in batch.iter().enumerate() {
        if seq.len() != t_len {
            return Err(CircuitError::MixedLengths {
                index,
                want: t_len,
                got: seq.len(),
            });
        }
        for x in seq.iter() {
            if x.len() != d {
                return Err(CircuitError::DimMismatch {
                    want: d,
                    got: x.len(),
                });
            }
        }
    }
    let b = batch.len();
    let mut hidden: Vec<Array2<f32>> = (0..cfg.layers)
        .map(|_| Array2::zeros((b, cfg.hidden)))
        .collect();
    let mut labels: Vec<Vec<usize>> = vec![Vec::with_capacity(t_len); b];
    let mut chosen_max = vec![0usize; b];
    for t in 0..t_len {
        let mut x = Array2::zeros((b, d));
        for (i, seq) in batch.iter().enumerate() {
            for (j, &v) in seq[t].iter().enumerate() {
                x[(i, j)] = v as f32;
            }
        }
        let prev: Vec<usize> = match feedback {
            MapFeedback::OwnArgmax => labels
                .iter()
                .map(|l| l.last().copied().unwrap_or(0))
                .collect(),
            MapFeedback::Zeros => vec![0; b],
        };
        let mut input = x;
        for (l, layer) in params.layers.iter().enumerate() {
            let onehot: Option<&[usize]> = (l == 0).then_some(&prev[..]);
            let h = &hidden[l];
            let update = batch_gate(
                &layer.wx_update,
                &layer.wh_update,
                &layer.b_update,
                &input,
                onehot,
                d,
                h,
            )
            .mapv(stable_sigmoid);
            let reset = batch_gate(
                &layer.wx_reset,
                &layer.wh_reset,
                &layer.b_reset,
                &input,
                onehot,
                d,
                h,
            )
            .mapv(stable_sigmoid);
            let gated = &reset * h;
            let mut cand = batch_gate_x(&layer.wx_cand, &layer.b_cand, &input, onehot, d);
            cand += &gated.dot(&layer.wh_cand);
            let cand = cand.mapv(f32::tanh);
            let new_h = h + &(&update * &(&cand - h));
            input = new_h.clone();
            hidden[l] = new_h;
        }
        let logits = input.dot(&params.head_w) + &params.head_b;
        for i in 0..b {
            let valid = (chosen_max[i] + 1).min(cfg.max_classes);
            let row = logits.row(i);
            let mut best = 0;
            for c in 1..valid {
                if row[c] > row[best] {
                    best = c;
                }
            }
            let label = best + 1;
            chosen_max[i] = chosen_max[i].max(label);
            labels[i].push(label);
        }
    }
    Ok(labels)
}

fn batch_gate_x(
    wx: &Array2<f32>,
    b: &Array2<f32>,
    input: &Array2<f32>,
    onehot: Option<&[usize]>,
    d: usize,
) -> Array2<f32> {
    let mut pre = if onehot.is_some() {
        input.dot(&wx.slice(s![..d, ..]))
    } else {
        input.dot(wx)
    };
    if let Some(prev) = onehot {
        for (i, &p) in prev.iter().enumerate() {
            if p > 0 {
                let row = wx.row(d + p - 1);
                pre.row_mut(i).zip_mut_with(&row, |a, &w| *a += w);
            }
        }
    }
    pre + b
}

fn batch_gate(
    wx: &Array2<f32>,
    wh: &Array2<f32>,
    b: &Array2<f32>,
    input: &Array2<f32>,
    onehot: Option<&[usize]>,
    d: usize,
    h: &Array2<f32>,
) -> Array2<f32> {
    let mut pre = batch_gate_x(wx, b, input, onehot, d);
    pre += &h.dot(wh);
    pre
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::expfam::NigHyper;
    use crate::simgen::{sample_synthetic_episode, SyntheticConfig};
    use approx::assert_relative_eq;

    fn tiny_cfg() -> CircuitConfig {
        CircuitConfig {
            input_dim: 2,
            hidden: 8,
            layers: 2,
            max_classes: 6,
        }
    }

    fn synth_cfg(len: usize) -> SyntheticConfig {
        SyntheticConfig {
            dim: 2,
            nig: NigHyper {
                m: 0.0,
                lambda: 0.01,
                a: 2.0,
                b: 2.0,
            },
            alpha: 1.0,
            len,
        }
    }

    fn episode(len: usize, seed: u64) -> Episode {
        let mut rng = RngStream::from_seed(seed);
        sample_synthetic_episode(&synth_cfg(len), &mut rng).unwrap()
    }

    #[test]
    fn shapes_and_flatten_round_trip() {
        let cfg = tiny_cfg();
        let mut rng = RngStream::from_seed(3);
        let params = CircuitParams::init(&cfg, &mut rng).unwrap();
        let shapes = param_shapes(&cfg);
        assert_eq!(shapes.len(), 2 * MATS_PER_LAYER + 2);
        assert_eq!(shapes[0], (2 + 6, 8));
        assert_eq!(shapes[MATS_PER_LAYER], (8, 8));
        assert_eq!(shapes[2 * MATS_PER_LAYER], (8, 6));
        let flat = params.flatten();
        for (m, s) in flat.iter().zip(&shapes) {
            assert_eq!(m.dim(), *s);
        }
        let back = CircuitParams::from_flat(&cfg, flat).unwrap();
        assert_eq!(back, params);
    }

    #[test]
    fn init_respects_fan_in_bounds_and_zero_biases() {
        let cfg = tiny_cfg();
        let mut rng = RngStream::from_seed(11);
        let params = CircuitParams::init(&cfg, &mut rng).unwrap();
        for layer in &params.layers {
            assert!(layer.b_update.iter().all(|&v| v == 0.0));
            assert!(layer.b_reset.iter().all(|&v| v == 0.0));
            assert!(layer.b_cand.iter().all(|&v| v == 0.0));
            let bound = 1.0 / (layer.wx_update.nrows() as f32).sqrt();
            assert!(layer.wx_update.iter().all(|&v| v.abs() <= bound));
        }
        assert!(params.head_b.iter().all(|&v| v == 0.0));
        let head_bound = 1.0 / (cfg.hidden as f32).sqrt();
        assert!(params.head_w.iter().all(|&v| v.abs() <= head_bound));
    }

    #[test]
    fn first_step_prediction_is_certain() {
        let cfg = tiny_cfg();
        let mut rng = RngStream::from_seed(5);
        let params = CircuitParams::init(&cfg, &mut rng).unwrap();
        let ep = Episode {
            labels: vec![1],
            obs: vec![vec![0.3, -1.2]],
        };
        let lps = sequential_log_probs(&params, &cfg, &ep).unwrap();
        assert_eq!(lps, vec![0.0]);
        assert_eq!(episode_nll(&params, &cfg, &ep).unwrap(), 0.0);
    }

    #[test]
    fn zero_params_give_uniform_over_valid_classes() {
        let cfg = tiny_cfg();
        let mats = param_shapes(&cfg)
            .into_iter()
            .map(Array2::zeros)
            .collect();
        let params = CircuitParams::from_flat(&cfg, mats).unwrap();
        let ep = Episode {
            labels: vec![1, 2, 1, 3],
            obs: vec![vec![0.0; 2]; 4],
        };
        let lps = sequential_log_probs(&params, &cfg, &ep).unwrap();
        assert_relative_eq!(lps[0], 0.0);
        assert_relative_eq!(lps[1], -(2.0f64).ln(), max_relative = 1e-6);
        assert_relative_eq!(lps[2], -(3.0f64).ln(), max_relative = 1e-6);
        assert_relative_eq!(lps[3], -(3.0f64).ln(), max_relative = 1e-6);
    }

    #[test]
    fn step_matches_explicit_concat_input() {
        let cfg = tiny_cfg();
        let mut rng = RngStream::from_seed(21);
        let params = CircuitParams::init(&cfg, &mut rng).unwrap();
        let x = [0.7, -0.4];
        let prev = 2usize;

        let mut state = CircuitState::new(&cfg);
        circuit_step(&params, &cfg, &x, 0, &mut state).unwrap();
        circuit_step(&params, &cfg, &x, 1, &mut state).unwrap();
        let fast = circuit_step(&params, &cfg, &x, prev, &mut state).unwrap();

        // Reference: materialize [x; one_hot(prev)] and run dense matrix
        // products, replaying the same three steps.
        let dense_step = |layer: &GruLayer, input: &Array1<f32>, h: &Array1<f32>| {
            let update = (input.dot(&layer.wx_update) + h.dot(&layer.wh_update)
                + &layer.b_update.row(0))
                .mapv(stable_sigmoid);
            let reset = (input.dot(&layer.wx_reset) + h.dot(&layer.wh_reset)
                + &layer.b_reset.row(0))
                .mapv(stable_sigmoid);
            let gated = &reset * h;
            let cand = (input.dot(&layer.wx_cand) + gated.dot(&layer.wh_cand)
                + &layer.b_cand.row(0))
                .mapv(f32::tanh);
            h + &(&update * &(&cand - h))
        };
        let mut h: Vec<Array1<f32>> = (0..cfg.layers).map(|_| Array1::zeros(cfg.hidden)).collect();
        let mut logits = Array1::zeros(cfg.max_classes);
        for p in [0usize, 1, prev] {
            let mut input = Array1::zeros(cfg.input_dim + cfg.max_classes);
            for (j, &v) in x.iter().enumerate() {
                input[j] = v as f32;
            }
            if p > 0 {
                input[cfg.input_dim + p - 1] = 1.0;
            }
            let mut carry = input;
            for (l, layer) in params.layers.iter().enumerate() {
                let new_h = dense_step(layer, &carry, &h[l]);
                carry = new_h.clone();
                h[l] = new_h;
            }
            logits = carry.dot(&params.head_w) + &params.head_b.row(0);
        }
        for (a, b) in fast.iter().zip(logits.iter()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-4, epsilon = 1e-5);
        }
    }

    #[test]
    fn replaying_a_prefix_reproduces_the_state() {
        let cfg = tiny_cfg();
        let mut rng = RngStream::from_seed(9);
        let params = CircuitParams::init(&cfg, &mut rng).unwrap();
        let ep = episode(6, 40);
        let mut full = CircuitState::new(&cfg);
        for t in 0..4 {
            let prev = if t == 0 { 0 } else { ep.labels[t - 1] };
            circuit_step(&params, &cfg, &ep.obs[t], prev, &mut full).unwrap();
        }
        let mut replay = CircuitState::new(&cfg);
        for t in 0..4 {
            let prev = if t == 0 { 0 } else { ep.labels[t - 1] };
            circuit_step(&params, &cfg, &ep.obs[t], prev, &mut replay).unwrap();
        }
        assert_eq!(full, replay);
    }

    #[test]
    fn identical_inputs_produce_identical_logits() {
        let cfg = tiny_cfg();
        let mut rng = RngStream::from_seed(2);
        let params = CircuitParams::init(&cfg, &mut rng).unwrap();
        let run = || {
            let mut state = CircuitState::new(&cfg);
            let a = circuit_step(&params, &cfg, &[0.5, 0.5], 0, &mut state).unwrap();
            let b = circuit_step(&params, &cfg, &[-0.5, 1.5], 1, &mut state).unwrap();
            (a, b)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn step_rejects_bad_inputs() {
        let cfg = tiny_cfg();
        let mut rng = RngStream::from_seed(2);
        let params = CircuitParams::init(&cfg, &mut rng).unwrap();
        let mut state = CircuitState::new(&cfg);
        assert!(matches!(
            circuit_step(&params, &cfg, &[1.0], 0, &mut state),
            Err(CircuitError::DimMismatch { want: 2, got: 1 })
        ));
        assert!(matches!(
            circuit_step(&params, &cfg, &[1.0, 2.0], 2, &mut state),
            Err(CircuitError::PrevLabelOutOfRange { prev: 2, seen: 0, .. })
        ));
    }

    #[test]
    fn map_outputs_are_canonical_for_random_params() {
        let cfg = tiny_cfg();
        for seed in 0..20 {
            let mut rng = RngStream::from_seed(seed);
            let params = CircuitParams::init(&cfg, &mut rng).unwrap();
            let ep = episode(6, 1000 + seed);
            for feedback in [MapFeedback::OwnArgmax, MapFeedback::Zeros] {
                let labels = circuit_map_with(&params, &cfg, &ep.obs, feedback).unwrap();
                let relabeled = Episode {
                    labels: labels.clone(),
                    obs: ep.obs.clone(),
                };
                validate_episode(&relabeled).unwrap();
                assert_eq!(labels[0], 1);
            }
        }
    }

    #[test]
    fn single_observation_maps_to_class_one() {
        let cfg = tiny_cfg();
        let mut rng = RngStream::from_seed(77);
        let params = CircuitParams::init(&cfg, &mut rng).unwrap();
        let labels = circuit_map(&params, &cfg, &[vec![3.0, -3.0]]).unwrap();
        assert_eq!(labels, vec![1]);
    }

    #[test]
    fn batched_map_matches_single_sequence_map() {
        let cfg = tiny_cfg();
        let mut rng = RngStream::from_seed(8);
        let params = CircuitParams::init(&cfg, &mut rng).unwrap();
        let eps: Vec<Episode> = (0..5).map(|i| episode(6, 300 + i)).collect();
        let obs_refs: Vec<&[Vec<f64>]> = eps.iter().map(|e| e.obs.as_slice()).collect();
        let batched =
            circuit_map_batch(&params, &cfg, &obs_refs, MapFeedback::OwnArgmax).unwrap();
        for (ep, got) in eps.iter().zip(&batched) {
            let single = circuit_map(&params, &cfg, &ep.obs).unwrap();
            assert_eq!(*got, single);
        }
    }

    #[test]
    fn masked_probabilities_sum_to_one_and_invalid_are_zero() {
        let cfg = tiny_cfg();
        let mut rng = RngStream::from_seed(15);
        let params = CircuitParams::init(&cfg, &mut rng).unwrap();
        let ep = episode(5, 88);
        let mut state = CircuitState::new(&cfg);
        for t in 0..ep.len() {
            let prev = if t == 0 { 0 } else { ep.labels[t - 1] };
            let logits = circuit_step(&params, &cfg, &ep.obs[t], prev, &mut state).unwrap();
            let valid = state.valid_classes(&cfg);

            let mut tape: Tape<f64> = Tape::new();
            let row = Array2::from_shape_fn((1, cfg.max_classes), |(_, j)| logits[j] as f64);
            let node = tape.leaf(row);
            let mask = Array2::from_shape_fn((1, cfg.max_classes), |(_, j)| {
                if j < valid {
                    0.0
                } else {
                    crate::autodiff::MASK_VALUE
                }
            });
            let target = ep.labels[t] - 1;
            let loss = tape.masked_softmax_nll(node, &mask, &[target]).unwrap();
            let probs: f64 = (0..cfg.max_classes)
                .map(|j| {
                    if j < valid {
                        (logits[j] as f64 - logsumexp_prefix(&logits, valid)).exp()
                    } else {
                        0.0
                    }
                })
                .sum();
            assert!((probs - 1.0).abs() < 1e-6);
            let direct = -(logits[target] as f64 - logsumexp_prefix(&logits, valid));
            assert_relative_eq!(tape.value(loss)[(0, 0)], direct, max_relative = 1e-9);
        }
    }
}
