//! Seeded random streams. A single run seed fans out into independent named
//! sub-streams so each consumer can be reproduced on its own.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::real::Real;
use crate::tensor::{Shape4, Tensor4};

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Sampling = 2,
    Split = 3,
    Synth = 4,
    Test = 5,
    HeadInit = 6,
}

pub fn stream(seed: u64, which: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Tensor with entries uniform in `[-1, 1)`.
pub fn uniform_tensor<T: Real>(shape: Shape4, rng: &mut impl Rng) -> Tensor4<T> {
    Tensor4::from_fn(shape, |_| T::from_f64(rng.random_range(-1.0..1.0)))
}
