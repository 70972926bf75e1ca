//! Record a tiny computation on the tape and read back gradients.

use cnn_mixture::tape::Tape;
use cnn_mixture::tensor::Tensor;

fn main() -> cnn_mixture::Result<()> {
    let mut tape = Tape::<f64>::new();
    // y = sigmoid(W x + b), loss = BCE(y, 1) + 0.5 * ||W||^2
    let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 0.5]), false);
    let w = tape.leaf(Tensor::new(vec![1, 3], vec![0.3, 0.1, -0.4])?, true);
    let b = tape.leaf(Tensor::vector(vec![0.05]), true);

    let z = tape.dense(x, w, b)?;
    let bce = tape.bce_with_logits(z, &[1.0], 1e-12)?;
    let l2 = tape.sum_squares(w, 0.5);
    let loss = tape.add(bce, l2)?;

    let grads = tape.backward(loss)?;
    println!("loss      = {:.6}", tape.value(loss).item()?);
    println!("dloss/dW  = {:?}", grads.get(w).map(|g| g.data().to_vec()));
    println!("dloss/db  = {:?}", grads.get(b).map(|g| g.data().to_vec()));
    println!(
        "x is a constant, gradient = {:?}",
        grads.get(x).map(|g| g.data().to_vec())
    );
    Ok(())
}
