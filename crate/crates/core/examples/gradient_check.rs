//! Reverse-mode gradients of a small expression against central differences.

use fieldforge::autodiff::{Tape, Tensor};

fn loss(x: &Tensor<f64>, w: &Tensor<f64>) -> (f64, Tensor<f64>) {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let wv = tape.constant(w.clone());
    let h = tape.matmul(xv, wv).unwrap();
    let h = tape.softplus(h).unwrap();
    let s = tape.sin(h).unwrap();
    let root = tape.mean(s).unwrap();
    let value = tape.value(root).data()[0];
    let mut grads = tape.backward(root).unwrap();
    (value, grads.take_or_zeros(xv, x.shape()))
}

fn main() {
    let x = Tensor::new(vec![2, 3], vec![0.3, -0.7, 1.1, 0.5, 0.2, -0.4]).unwrap();
    let w = Tensor::new(vec![3, 2], vec![0.9, -0.2, 0.4, 0.8, -0.6, 0.1]).unwrap();
    let (value, analytic) = loss(&x, &w);
    println!("loss {value:.6}");
    let h = 1e-6;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (loss(&plus, &w).0 - loss(&minus, &w).0) / (2.0 * h);
        println!("x[{i}]  analytic {:+.8}  numeric {numeric:+.8}", analytic.data()[i]);
    }
}
