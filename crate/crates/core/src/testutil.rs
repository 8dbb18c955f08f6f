use crate::real::Real;
use crate::rng::{stream, uniform_tensor, Stream};
use crate::tensor::{Shape4, Tensor4};
use rand::Rng;

pub fn random_tensor<T: Real>(shape: Shape4, seed: u64) -> Tensor4<T> {
    uniform_tensor(shape, &mut stream(seed, Stream::Test))
}

pub fn random_vec<T: Real>(len: usize, seed: u64) -> Vec<T> {
    let mut rng = stream(seed, Stream::Test);
    (0..len).map(|_| T::from_f64(rng.random_range(-1.0..1.0))).collect()
}
