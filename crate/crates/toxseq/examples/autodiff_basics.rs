//! Tour of the tensor core: build a tiny two-layer classifier on the tape,
//! run forward and backward, read gradients, and confirm them against the
//! finite-difference oracle.
//!
//! Run with `cargo run --example autodiff_basics`.

use toxseq::rng::Rng;
use toxseq::tensor::{grad_check, Tape, Tensor, Var};

fn main() -> toxseq::Result<()> {
    let mut rng = Rng::new(42);

    // parameters live outside the tape as plain tensors
    let w1 = Tensor::randn(vec![4, 5], 0.0, 0.5, &mut rng).with_grad();
    let b1 = Tensor::zeros(vec![5]).with_grad();
    let w2 = Tensor::randn(vec![5, 2], 0.0, 0.5, &mut rng).with_grad();
    let b2 = Tensor::zeros(vec![2]).with_grad();

    // one batch of three 4-feature rows, labels 0/1/0
    let x_data = vec![
        0.2, -1.1, 0.4, 0.9, //
        1.3, 0.5, -0.2, -0.7, //
        -0.6, 0.1, 0.8, 0.3,
    ];
    let labels = [0usize, 1, 0];

    // each tape records one forward pass; leaves reference the tensors above
    let forward = |tape: &mut Tape, params: &[Var]| -> toxseq::Result<Var> {
        let [w1, b1, w2, b2] = params else {
            unreachable!()
        };
        let x = tape.constant(vec![3, 4], x_data.clone());
        let h = tape.matmul(x, *w1)?;
        let h = tape.add_bias(h, *b1)?;
        let h = tape.tanh(h);
        let z = tape.matmul(h, *w2)?;
        let z = tape.add_bias(z, *b2)?;
        let probs = tape.softmax(z, 1)?;
        tape.cross_entropy(probs, &labels)
    };

    let mut tape = Tape::new();
    let params: Vec<Var> = [&w1, &b1, &w2, &b2].map(|t| tape.leaf(t)).to_vec();
    let loss = forward(&mut tape, &params)?;
    println!("loss            {:.6}", tape.value(loss)[0]);
    println!("tape length     {} nodes", tape.len());

    tape.backward(loss)?;
    let g_b2 = tape.grad(params[3]).expect("b2 participates in the loss");
    println!("dL/db2          [{:+.6}, {:+.6}]", g_b2[0], g_b2[1]);
    // CE + softmax gradient at the logits is (p - onehot)/n, so it sums to 0
    println!("sum dL/db2      {:+.1e}", g_b2[0] + g_b2[1]);

    // the oracle rebuilds the graph per nudged entry and compares slopes
    let max_rel_err = grad_check(forward, &[w1, b1, w2, b2], 1e-5)?;
    println!("grad check      max rel err {max_rel_err:.3e} vs central differences");
    Ok(())
}
