//! Compares backprop gradients with central finite differences on a small MLP.
//!
//! cargo run --example gradient_check

use fednoisy::nn::{LayerSpec, ModelParams, Tensor};

fn main() -> fednoisy::Result<()> {
    let specs = LayerSpec::mlp(&[6, 8, 5, 3]);
    let model = ModelParams::init(&specs, 7)?;
    let x = Tensor::from_rows(&[
        [0.2, -0.1, 0.5, 0.9, -0.4, 0.3],
        [-0.7, 0.8, 0.1, -0.2, 0.6, -0.5],
        [0.4, 0.4, -0.9, 0.0, 0.1, 0.2],
    ])?;
    let labels = [2, 0, 1];

    let (loss, grad) = model.loss_and_grad(&x, &labels)?;
    let analytic = grad.flatten();
    let flat = model.flatten();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[i] += h;
        minus[i] -= h;
        let lp = ModelParams::unflatten(&specs, &plus)?.loss_and_grad(&x, &labels)?.0;
        let lm = ModelParams::unflatten(&specs, &minus)?.loss_and_grad(&x, &labels)?.0;
        let numeric = (lp - lm) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    println!("loss {loss:.6}, {} parameters", flat.len());
    println!("worst relative gradient error {worst:.2e}");
    Ok(())
}
