//! Verify the reverse-mode gradients against central finite differences
//! in 64-bit, both for individual tape operations and for the complete
//! recurrent loss on a short episode.

use ndarray::Array2;
use neural_dpmm::autodiff::check::{check_input, max_rel_error, sweep};
use neural_dpmm::autodiff::{NodeId, Tape, TapeError};
use neural_dpmm::circuit::{loss_graph, param_shapes, CircuitConfig, CircuitError};
use neural_dpmm::episode::Episode;

/// Reduces a matrix node to 1x1 through fixed weights so every element
/// influences the loss differently.
fn scalarize(tape: &mut Tape<f64>, node: NodeId) -> Result<NodeId, TapeError> {
    let (rows, cols) = {
        let v = tape.value(node);
        (v.nrows(), v.ncols())
    };
    let right = tape.leaf(check_input(cols, 1, 901));
    let left = tape.leaf(check_input(1, rows, 902));
    let reduced = tape.matmul(node, right)?;
    tape.matmul(left, reduced)
}

fn main() {
    let err = sweep(5, &[(3, 4), (4, 2)], |tape, leaves| {
        let prod = tape.matmul(leaves[0], leaves[1])?;
        scalarize(tape, prod)
    })
    .unwrap();
    println!("matmul chain          max rel err {err:.2e}");

    // Saturating nonlinearities, where difference quotients are most fragile.
    let err = sweep(5, &[(2, 5)], |tape, leaves| {
        let s = tape.sigmoid(leaves[0]);
        let t = tape.tanh(s);
        scalarize(tape, t)
    })
    .unwrap();
    println!("sigmoid-tanh chain    max rel err {err:.2e}");

    // The full circuit loss on a short episode, every parameter matrix
    // perturbed. f64 throughout so the quotient itself is trustworthy.
    let cfg = CircuitConfig {
        input_dim: 2,
        hidden: 8,
        layers: 2,
        max_classes: 5,
    };
    let episode = Episode {
        labels: vec![1, 2, 1, 3],
        obs: vec![
            vec![0.5, -1.0],
            vec![-2.0, 0.3],
            vec![0.6, -1.1],
            vec![3.0, 2.0],
        ],
    };
    let shapes = param_shapes(&cfg);
    let inits: Vec<Array2<f64>> = shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| check_input(r, c, 100 + i as u64).mapv(|v| v * 0.3))
        .collect();
    let err = max_rel_error(&inits, |tape, leaves| {
        loss_graph(tape, &cfg, leaves, &[&episode]).map_err(|e| match e {
            CircuitError::Tape(t) => t,
            other => panic!("unexpected circuit error: {other}"),
        })
    })
    .unwrap();
    println!("full T=4 circuit loss max rel err {err:.2e}");
    assert!(err < 1e-4, "gradient check failed");
    println!("\nall gradients agree with finite differences");
}
