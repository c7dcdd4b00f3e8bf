//! Minimal reverse-mode automatic differentiation over dense `f64` matrices,
//! with double-backprop support, and the Adam optimizer.

mod adam;
mod graph;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Graph, Var, SQRT_FLOOR};
pub use tensor::Tensor;

/// Central finite-difference gradient of `f` with respect to every element of
/// every input tensor.
pub fn numeric_gradient(
    f: &mut dyn FnMut(&[Tensor]) -> f64,
    inputs: &[Tensor],
    h: f64,
) -> Vec<Tensor> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[t].rows(), inputs[t].cols());
        for i in 0..inputs[t].len() {
            let x = inputs[t].data()[i];
            work[t].data_mut()[i] = x + h;
            let up = f(&work);
            work[t].data_mut()[i] = x - h;
            let down = f(&work);
            work[t].data_mut()[i] = x;
            grad.data_mut()[i] = (up - down) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

/// Largest elementwise `|a - b| / max(|a|, |b|, floor)` over paired tensors.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Tensor], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
