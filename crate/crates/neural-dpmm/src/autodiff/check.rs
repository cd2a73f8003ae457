//! Gradient verification by central finite differences.
//!
//! The builder closure reconstructs the graph from leaf values, so the
//! checker can re-evaluate the loss at perturbed points. All checking
//! runs in f64; the step is scaled to each element's magnitude.

use super::{NodeId, Tape, TapeError};
use ndarray::Array2;

/// Largest relative disagreement between backward gradients and central
/// finite differences over every element of every leaf.
///
/// The denominator is floored so that elements whose true derivative is
/// near zero are compared at absolute scale instead of blowing up.
pub fn max_rel_error<F>(inits: &[Array2<f64>], build: F) -> Result<f64, TapeError>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId, TapeError>,
{
    let eval = |values: &[Array2<f64>]| -> Result<(Tape<f64>, Vec<NodeId>, NodeId), TapeError> {
        let mut tape = Tape::new();
        let leaves: Vec<NodeId> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let loss = build(&mut tape, &leaves)?;
        Ok((tape, leaves, loss))
    };

    let (mut tape, leaves, loss) = eval(inits)?;
    tape.backward(loss)?;
    let analytic: Vec<Array2<f64>> = leaves
        .iter()
        .map(|&l| tape.grad(l).expect("leaves hold gradients after backward").clone())
        .collect();

    let mut worst = 0.0f64;
    let mut values: Vec<Array2<f64>> = inits.to_vec();
    for leaf in 0..values.len() {
        let cols = values[leaf].ncols();
        for idx in 0..values[leaf].len() {
            let pos = (idx / cols, idx % cols);
            let saved = values[leaf][pos];
            let h = 1e-6 * (1.0 + saved.abs());
            values[leaf][pos] = saved + h;
            let (t_hi, _, l_hi) = eval(&values)?;
            let hi = t_hi.value(l_hi)[(0, 0)];
            values[leaf][pos] = saved - h;
            let (t_lo, _, l_lo) = eval(&values)?;
            let lo = t_lo.value(l_lo)[(0, 0)];
            values[leaf][pos] = saved;

            let fd = (hi - lo) / (2.0 * h);
            let ad = analytic[leaf][pos];
            let denom = fd.abs().max(ad.abs()).max(1e-6);
            worst = worst.max((fd - ad).abs() / denom);
        }
    }
    Ok(worst)
}

/// Deterministic pseudo-random fill in (-1, 1) for check inputs.
pub fn check_input(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        let mut state = seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add((i * cols + j + 1) as u64);
        state ^= state >> 33;
        state = state.wrapping_mul(0xff51_afd7_ed55_8ccd);
        state ^= state >> 33;
        (state as f64 / u64::MAX as f64) * 2.0 - 1.0
    })
}

/// Convenience for tests: checks one op family across several random
/// instances and returns the worst error seen.
pub fn sweep<F>(instances: u64, shapes: &[(usize, usize)], build: F) -> Result<f64, TapeError>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId, TapeError>,
{
    let mut worst = 0.0f64;
    for instance in 0..instances {
        let inits: Vec<Array2<f64>> = shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| check_input(r, c, instance * 131 + i as u64))
            .collect();
        worst = worst.max(max_rel_error(&inits, &build)?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::MASK_VALUE;
    use ndarray::Array2;

    const TOL: f64 = 1e-4;

    fn scalarize(
        tape: &mut Tape<f64>,
        node: NodeId,
    ) -> Result<NodeId, TapeError> {
        // Reduces an arbitrary matrix to 1x1 through fixed weights so
        // every element influences the loss differently.
        let (rows, cols) = {
            let v = tape.value(node);
            (v.nrows(), v.ncols())
        };
        let wr = tape.leaf(check_input(cols, 1, 777));
        let wl = tape.leaf(check_input(1, rows, 778));
        let reduced = tape.matmul(node, wr)?;
        tape.matmul(wl, reduced)
    }

    #[test]
    fn matmul_gradients() {
        let worst = sweep(20, &[(3, 4), (4, 2)], |tape, leaves| {
            let prod = tape.matmul(leaves[0], leaves[1])?;
            scalarize(tape, prod)
        })
        .unwrap();
        assert!(worst < TOL, "worst {worst}");
    }

    #[test]
    fn add_sub_mul_gradients() {
        let worst = sweep(20, &[(3, 3), (3, 3)], |tape, leaves| {
            let a = tape.add(leaves[0], leaves[1])?;
            let s = tape.sub(a, leaves[1])?;
            let m = tape.mul(s, leaves[0])?;
            scalarize(tape, m)
        })
        .unwrap();
        assert!(worst < TOL, "worst {worst}");
    }

    #[test]
    fn sigmoid_tanh_gradients() {
        let worst = sweep(20, &[(2, 5)], |tape, leaves| {
            let s = tape.sigmoid(leaves[0]);
            let t = tape.tanh(s);
            scalarize(tape, t)
        })
        .unwrap();
        assert!(worst < TOL, "worst {worst}");
    }

    #[test]
    fn concat_and_slice_gradients() {
        let worst = sweep(20, &[(3, 2), (3, 4)], |tape, leaves| {
            let cat = tape.concat_cols(leaves[0], leaves[1])?;
            let mid = tape.slice_cols(cat, 1, 5)?;
            scalarize(tape, mid)
        })
        .unwrap();
        assert!(worst < TOL, "worst {worst}");
    }

    #[test]
    fn select_rows_gradients() {
        let worst = sweep(20, &[(4, 3)], |tape, leaves| {
            let picked = tape.select_rows(leaves[0], &[3, 1, 3, 0])?;
            scalarize(tape, picked)
        })
        .unwrap();
        assert!(worst < TOL, "worst {worst}");
    }

    #[test]
    fn bias_add_gradients() {
        let worst = sweep(20, &[(4, 3), (1, 3)], |tape, leaves| {
            let out = tape.bias_add(leaves[0], leaves[1])?;
            scalarize(tape, out)
        })
        .unwrap();
        assert!(worst < TOL, "worst {worst}");
    }

    #[test]
    fn masked_softmax_nll_gradients() {
        let worst = sweep(20, &[(3, 5)], |tape, leaves| {
            let mut mask = Array2::zeros((3, 5));
            mask[(0, 4)] = MASK_VALUE;
            mask[(2, 0)] = MASK_VALUE;
            mask[(2, 3)] = MASK_VALUE;
            tape.masked_softmax_nll(leaves[0], &mask, &[0, 2, 4])
        })
        .unwrap();
        assert!(worst < TOL, "worst {worst}");
    }

    #[test]
    fn three_layer_composite_gradients() {
        let worst = sweep(10, &[(2, 6), (6, 5), (1, 5), (5, 4), (1, 4)], |tape, leaves| {
            let h1 = tape.matmul(leaves[0], leaves[1])?;
            let h1 = tape.bias_add(h1, leaves[2])?;
            let h1 = tape.tanh(h1);
            let h2 = tape.matmul(h1, leaves[3])?;
            let h2 = tape.bias_add(h2, leaves[4])?;
            let h2 = tape.sigmoid(h2);
            let gate = tape.mul(h2, h2)?;
            let mask = Array2::zeros((2, 4));
            tape.masked_softmax_nll(gate, &mask, &[1, 3])
        })
        .unwrap();
        assert!(worst < TOL, "worst {worst}");
    }
}
