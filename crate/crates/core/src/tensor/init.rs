use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;

/// Half-width `sqrt(6 / (fan_in + fan_out))` of the Xavier uniform law.
///
/// Matrices `[in, out]` use their two extents; convolution kernels
/// `[c_out, c_in, width]` count the window in both fans; vectors use their
/// length for both.
pub fn xavier_bound(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = match shape {
        [n] => (*n, *n),
        [r, c] => (*r, *c),
        [o, i, rest @ ..] => {
            let field: usize = rest.iter().product();
            (i * field, o * field)
        }
        [] => (1, 1),
    };
    libm::sqrt(6.0 / (fan_in + fan_out) as f64)
}

/// Xavier/Glorot uniform initialization, deterministic in `seed`.
pub fn xavier_init(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xavier_with(shape, &mut rng)
}

pub(crate) fn xavier_with<R: rand::Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let bound = xavier_bound(shape);
    let law = Uniform::new_inclusive(-bound, bound).expect("finite positive bound");
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| law.sample(rng)).collect();
    Tensor::new(shape, data).expect("shape and data agree")
}
