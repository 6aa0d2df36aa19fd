use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// Glorot-style `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    UniformScaled,
    Zeros,
}

/// `(fan_in, fan_out)`; leading dims of rank>=3 shapes count as a receptive field.
fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        _ => {
            let r = shape.len();
            let receptive: usize = shape[..r - 2].iter().product();
            (receptive * shape[r - 2], receptive * shape[r - 1])
        }
    }
}

/// A trainable tensor; identical `(shape, scheme, seed)` give bit-identical data.
pub fn init_param(shape: &[usize], scheme: InitScheme, seed: u64) -> Result<Tensor> {
    if shape.contains(&0) {
        return Err(Error::Invalid(format!("parameter shape {shape:?} has a zero extent")));
    }
    let n: usize = shape.iter().product();
    let data = match scheme {
        InitScheme::Zeros => vec![0.0; n],
        InitScheme::UniformScaled => {
            let (fan_in, fan_out) = fans(shape);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| rng.gen_range(-a..a)).collect()
        }
    };
    Tensor::param(shape, data)
}
