//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] is an arena of nodes built define-by-run; [`Tape::backward`]
//! walks it once in reverse and accumulates gradients. The scalar type is
//! generic so the same graph code trains in f32 and gradient-checks in
//! f64. Everything is two-dimensional; vectors are 1xN or Nx1 matrices.

pub mod check;
pub mod opt;

use ndarray::{concatenate, s, Array2, Axis};
use num_traits::Float;

/// Element type of tape values: f32 for training, f64 for checking.
pub trait Scalar:
    ndarray::LinalgScalar + Float + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Additive mask values at or below this threshold mean "excluded".
/// The value stays far from the f32 infinity boundary so masked logits
/// never overflow into NaN during the shift.
pub const MASK_THRESHOLD: f64 = -1e29;
pub const MASK_VALUE: f64 = -1e30;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TapeError {
    #[error("{op}: shapes {lhs:?} and {rhs:?} do not combine")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("loss must be 1x1, got {0:?}")]
    LossNotScalar((usize, usize)),
    #[error("column range {start}..{end} outside width {cols}")]
    BadColumnRange {
        start: usize,
        end: usize,
        cols: usize,
    },
    #[error("row index {row} outside height {rows}")]
    RowOutOfBounds { row: usize, rows: usize },
    #[error("need one target per row: {targets} targets for {rows} rows")]
    TargetCount { targets: usize, rows: usize },
    #[error("row {row}: target class {target} is masked out")]
    TargetMasked { row: usize, target: usize },
    #[error("row {row}: every class is masked out")]
    AllMasked { row: usize },
    #[error("backward reached node {0} before its value was computed")]
    MissingGrad(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<T: Scalar> {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    ConcatCols(usize, usize),
    SliceCols {
        input: usize,
        start: usize,
    },
    SelectRows {
        input: usize,
        rows: Vec<usize>,
    },
    /// Adds a 1xC bias row to every row of the input.
    BiasAdd(usize, usize),
    MaskedSoftmaxNll {
        logits: usize,
        /// Probabilities cached at forward time; masked entries are
        /// exactly zero.
        probs: Array2<T>,
        targets: Vec<usize>,
    },
}

struct Node<T: Scalar> {
    value: Array2<T>,
    op: Op<T>,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Array2<T> {
        &self.nodes[id.0].value
    }

    /// Gradient from the last backward pass. Leaves always hold one
    /// afterwards; interior nodes not on a path to the loss hold none.
    pub fn grad(&self, id: NodeId) -> Option<&Array2<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.dim()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if ac != br {
            return Err(TapeError::ShapeMismatch {
                op: "matmul",
                lhs: (ar, ac),
                rhs: (br, bc),
            });
        }
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        Ok(self.push(value, Op::Matmul(a.0, b.0)))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), TapeError> {
        if self.dims(a) != self.dims(b) {
            return Err(TapeError::ShapeMismatch {
                op,
                lhs: self.dims(a),
                rhs: self.dims(b),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.same_shape("add", a, b)?;
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        Ok(self.push(value, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.same_shape("sub", a, b)?;
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        Ok(self.push(value, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        self.same_shape("mul", a, b)?;
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        Ok(self.push(value, Op::Mul(a.0, b.0)))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.mapv(stable_sigmoid);
        self.push(value, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.mapv(Float::tanh);
        self.push(value, Op::Tanh(a.0))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        let (ar, _) = self.dims(a);
        let (br, _) = self.dims(b);
        if ar != br {
            return Err(TapeError::ShapeMismatch {
                op: "concat_cols",
                lhs: self.dims(a),
                rhs: self.dims(b),
            });
        }
        let value = concatenate![
            Axis(1),
            self.nodes[a.0].value.view(),
            self.nodes[b.0].value.view()
        ];
        Ok(self.push(value, Op::ConcatCols(a.0, b.0)))
    }

    pub fn slice_cols(
        &mut self,
        a: NodeId,
        start: usize,
        end: usize,
    ) -> Result<NodeId, TapeError> {
        let (_, cols) = self.dims(a);
        if start >= end || end > cols {
            return Err(TapeError::BadColumnRange { start, end, cols });
        }
        let value = self.nodes[a.0].value.slice(s![.., start..end]).to_owned();
        Ok(self.push(value, Op::SliceCols { input: a.0, start }))
    }

    /// Gathers rows by index; an index may repeat.
    pub fn select_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId, TapeError> {
        let (nrows, ncols) = self.dims(a);
        for &r in rows {
            if r >= nrows {
                return Err(TapeError::RowOutOfBounds { row: r, rows: nrows });
            }
        }
        let mut value = Array2::zeros((rows.len(), ncols));
        for (i, &r) in rows.iter().enumerate() {
            value.row_mut(i).assign(&self.nodes[a.0].value.row(r));
        }
        Ok(self.push(
            value,
            Op::SelectRows {
                input: a.0,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Adds the 1xC node `bias` to every row of `a`.
    pub fn bias_add(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, TapeError> {
        let (_, ac) = self.dims(a);
        let (br, bc) = self.dims(bias);
        if br != 1 || bc != ac {
            return Err(TapeError::ShapeMismatch {
                op: "bias_add",
                lhs: self.dims(a),
                rhs: (br, bc),
            });
        }
        let value = &self.nodes[a.0].value + &self.nodes[bias.0].value.row(0);
        Ok(self.push(value, Op::BiasAdd(a.0, bias.0)))
    }

    /// Mean over rows of -log softmax(logits + mask) at the target. Mask
    /// entries at or below [`MASK_THRESHOLD`] exclude a class: its
    /// probability is exactly zero and its logit receives exactly zero
    /// gradient.
    pub fn masked_softmax_nll(
        &mut self,
        logits: NodeId,
        mask: &Array2<T>,
        targets: &[usize],
    ) -> Result<NodeId, TapeError> {
        let (rows, cols) = self.dims(logits);
        if mask.dim() != (rows, cols) {
            return Err(TapeError::ShapeMismatch {
                op: "masked_softmax_nll",
                lhs: (rows, cols),
                rhs: mask.dim(),
            });
        }
        if targets.len() != rows {
            return Err(TapeError::TargetCount {
                targets: targets.len(),
                rows,
            });
        }
        let threshold = T::from_f64(MASK_THRESHOLD);
        let mut probs = Array2::zeros((rows, cols));
        let mut total = T::zero();
        for row in 0..rows {
            let target = targets[row];
            if target >= cols {
                return Err(TapeError::RowOutOfBounds {
                    row: target,
                    rows: cols,
                });
            }
            if mask[(row, target)] <= threshold {
                return Err(TapeError::TargetMasked { row, target });
            }
            let mut mx = T::neg_infinity();
            for col in 0..cols {
                if mask[(row, col)] > threshold {
                    let shifted = self.nodes[logits.0].value[(row, col)] + mask[(row, col)];
                    if shifted > mx {
                        mx = shifted;
                    }
                }
            }
            if mx == T::neg_infinity() {
                return Err(TapeError::AllMasked { row });
            }
            let mut denom = T::zero();
            for col in 0..cols {
                if mask[(row, col)] > threshold {
                    let e = (self.nodes[logits.0].value[(row, col)] + mask[(row, col)] - mx)
                        .exp();
                    probs[(row, col)] = e;
                    denom = denom + e;
                } else {
                    probs[(row, col)] = T::zero();
                }
            }
            let log_denom = denom.ln();
            for col in 0..cols {
                probs[(row, col)] = probs[(row, col)] / denom;
            }
            let target_shifted =
                self.nodes[logits.0].value[(row, target)] + mask[(row, target)] - mx;
            total = total - (target_shifted - log_denom);
        }
        let mean = total / T::from_f64(rows as f64);
        let value = Array2::from_elem((1, 1), mean);
        Ok(self.push(
            value,
            Op::MaskedSoftmaxNll {
                logits: logits.0,
                probs,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Populates gradients of every node reachable from `loss`, then
    /// fills zeros for untouched leaves so parameter updates can read
    /// them uniformly.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TapeError> {
        if self.dims(loss) != (1, 1) {
            return Err(TapeError::LossNotScalar(self.dims(loss)));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Array2::from_elem((1, 1), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(gout) = self.grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = gout.dot(&self.nodes[b].value.t());
                    let db = self.nodes[a].value.t().dot(&gout);
                    accumulate(&mut self.grads[a], da);
                    accumulate(&mut self.grads[b], db);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut self.grads[a], gout.clone());
                    accumulate(&mut self.grads[b], gout.clone());
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut self.grads[a], gout.clone());
                    accumulate(&mut self.grads[b], gout.mapv(|g| T::zero() - g));
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = &gout * &self.nodes[b].value;
                    let db = &gout * &self.nodes[a].value;
                    accumulate(&mut self.grads[a], da);
                    accumulate(&mut self.grads[b], db);
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let s = &self.nodes[idx].value;
                    let da = &gout * &s.mapv(|v| v * (T::one() - v));
                    accumulate(&mut self.grads[a], da);
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let v = &self.nodes[idx].value;
                    let da = &gout * &v.mapv(|t| T::one() - t * t);
                    accumulate(&mut self.grads[a], da);
                }
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let split = self.nodes[a].value.ncols();
                    let da = gout.slice(s![.., ..split]).to_owned();
                    let db = gout.slice(s![.., split..]).to_owned();
                    accumulate(&mut self.grads[a], da);
                    accumulate(&mut self.grads[b], db);
                }
                Op::SliceCols { input, start } => {
                    let (input, start) = (*input, *start);
                    let width = self.nodes[idx].value.ncols();
                    let mut da = Array2::zeros(self.nodes[input].value.dim());
                    da.slice_mut(s![.., start..start + width]).assign(&gout);
                    accumulate(&mut self.grads[input], da);
                }
                Op::SelectRows { input, rows } => {
                    let input = *input;
                    let mut da = Array2::zeros(self.nodes[input].value.dim());
                    for (i, &r) in rows.iter().enumerate() {
                        ndarray::Zip::from(da.row_mut(r))
                            .and(gout.row(i))
                            .for_each(|d, &g| *d = *d + g);
                    }
                    accumulate(&mut self.grads[input], da);
                }
                Op::BiasAdd(a, bias) => {
                    let (a, bias) = (*a, *bias);
                    let db = gout
                        .sum_axis(Axis(0))
                        .insert_axis(Axis(0));
                    accumulate(&mut self.grads[a], gout.clone());
                    accumulate(&mut self.grads[bias], db);
                }
                Op::MaskedSoftmaxNll {
                    logits,
                    probs,
                    targets,
                } => {
                    let logits = *logits;
                    let scale = gout[(0, 0)] / T::from_f64(probs.nrows() as f64);
                    let mut da = probs.clone();
                    for (row, &target) in targets.iter().enumerate() {
                        da[(row, target)] = da[(row, target)] - T::one();
                    }
                    da.mapv_inplace(|v| v * scale);
                    accumulate(&mut self.grads[logits], da);
                }
            }
            self.grads[idx] = Some(gout);
        }

        for idx in 0..self.nodes.len() {
            if matches!(self.nodes[idx].op, Op::Leaf) && self.grads[idx].is_none() {
                self.grads[idx] = Some(Array2::zeros(self.nodes[idx].value.dim()));
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Array2<T>>, delta: Array2<T>) {
    match slot {
        None => *slot = Some(delta),
        Some(acc) => {
            ndarray::Zip::from(acc)
                .and(&delta)
                .for_each(|a, &d| *a = *a + d);
        }
    }
}

pub(crate) fn stable_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (T::zero() - x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
