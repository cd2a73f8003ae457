//! Differentiable teacher-forced loss, built layer by time step on a
//! tape so one batch shares every matrix product.

use super::{CircuitConfig, CircuitError, MATS_PER_LAYER};
use crate::autodiff::{NodeId, Scalar, Tape, MASK_VALUE};
use crate::episode::{validate_episode, Episode};
use ndarray::Array2;

struct GateNodes {
    wx: NodeId,
    wh: NodeId,
    b: NodeId,
}

fn gate(
    tape: &mut Tape<impl Scalar>,
    nodes: &GateNodes,
    x: NodeId,
    h: NodeId,
) -> Result<NodeId, CircuitError> {
    let from_x = tape.matmul(x, nodes.wx)?;
    let from_h = tape.matmul(h, nodes.wh)?;
    let sum = tape.add(from_x, from_h)?;
    Ok(tape.bias_add(sum, nodes.b)?)
}

/// Mean teacher-forced NLL over a batch of equal-length episodes, as a
/// differentiable scalar node.
///
/// `params` holds the parameter leaves in [`super::param_shapes`] order.
/// Step `t` feeds the true label `z_{t-1}` one-hot alongside the
/// observation, masks logits down to classes `1..=1+max(z_{1:t-1})`, and
/// scores the true `z_t`. With every episode the same length, the mean
/// over time of per-step batch means equals the batch mean of
/// per-episode NLLs.
pub fn loss_graph<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &CircuitConfig,
    params: &[NodeId],
    batch: &[&Episode],
) -> Result<NodeId, CircuitError> {
    cfg.validate()?;
    let want = cfg.layers * MATS_PER_LAYER + 2;
    if params.len() != want {
        return Err(CircuitError::ParamCount {
            want,
            got: params.len(),
        });
    }
    if batch.is_empty() {
        return Err(CircuitError::EmptyBatch);
    }
    let t_len = batch[0].len();
    for (index, ep) in batch.iter().enumerate() {
        validate_episode(ep)?;
        if ep.len() != t_len {
            return Err(CircuitError::MixedLengths {
                index,
                want: t_len,
                got: ep.len(),
            });
        }
        if ep.dim() != cfg.input_dim {
            return Err(CircuitError::DimMismatch {
                want: cfg.input_dim,
                got: ep.dim(),
            });
        }
    }
    if t_len > cfg.max_classes {
        return Err(CircuitError::TooManyClasses {
            len: t_len,
            max_classes: cfg.max_classes,
        });
    }

    let b = batch.len();
    let d = cfg.input_dim;
    let k = cfg.max_classes;
    let head_w = params[cfg.layers * MATS_PER_LAYER];
    let head_b = params[cfg.layers * MATS_PER_LAYER + 1];

    let mut hidden: Vec<NodeId> = (0..cfg.layers)
        .map(|_| tape.leaf(Array2::zeros((b, cfg.hidden))))
        .collect();
    let mut hist_max = vec![0usize; b];
    let mut total: Option<NodeId> = None;

    for t in 0..t_len {
        let mut x = Array2::zeros((b, d + k));
        for (i, ep) in batch.iter().enumerate() {
            for (j, &v) in ep.obs[t].iter().enumerate() {
                x[(i, j)] = T::from_f64(v);
            }
            if t > 0 {
                x[(i, d + ep.labels[t - 1] - 1)] = T::one();
            }
        }
        let mut carry = tape.leaf(x);
        for layer in 0..cfg.layers {
            let base = layer * MATS_PER_LAYER;
            let update_nodes = GateNodes {
                wx: params[base],
                wh: params[base + 1],
                b: params[base + 2],
            };
            let reset_nodes = GateNodes {
                wx: params[base + 3],
                wh: params[base + 4],
                b: params[base + 5],
            };
            let cand_nodes = GateNodes {
                wx: params[base + 6],
                wh: params[base + 7],
                b: params[base + 8],
            };
            let h = hidden[layer];
            let update_pre = gate(tape, &update_nodes, carry, h)?;
            let update = tape.sigmoid(update_pre);
            let reset_pre = gate(tape, &reset_nodes, carry, h)?;
            let reset = tape.sigmoid(reset_pre);
            let gated = tape.mul(reset, h)?;
            let cand_pre = gate(tape, &cand_nodes, carry, gated)?;
            let cand = tape.tanh(cand_pre);
            let shift = tape.sub(cand, h)?;
            let scaled = tape.mul(update, shift)?;
            let new_h = tape.add(h, scaled)?;
            hidden[layer] = new_h;
            carry = new_h;
        }
        let raw = tape.matmul(carry, head_w)?;
        let logits = tape.bias_add(raw, head_b)?;

        let mask_value = T::from_f64(MASK_VALUE);
        let mut mask = Array2::from_elem((b, k), mask_value);
        let mut targets = Vec::with_capacity(b);
        for (i, ep) in batch.iter().enumerate() {
            let valid = (hist_max[i] + 1).min(k);
            for c in 0..valid {
                mask[(i, c)] = T::zero();
            }
            targets.push(ep.labels[t] - 1);
        }
        let step_loss = tape.masked_softmax_nll(logits, &mask, &targets)?;
        total = Some(match total {
            None => step_loss,
            Some(acc) => tape.add(acc, step_loss)?,
        });
        for (i, ep) in batch.iter().enumerate() {
            hist_max[i] = hist_max[i].max(ep.labels[t]);
        }
    }

    let inv_t = tape.leaf(Array2::from_elem((1, 1), T::from_f64(1.0 / t_len as f64)));
    Ok(tape.mul(total.expect("batch is nonempty"), inv_t)?)
}
