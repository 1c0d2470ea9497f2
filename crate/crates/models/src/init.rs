use channelpage_tensor::Tensor;
use rand::Rng;

/// Uniform on `(-a, a)` with `a = sqrt(6 / (rows + cols))`.
pub(crate) fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
}
