//! Parameter registration and the small layers shared by the model parts.

use dahcrf_tensor::{Float, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Creates named trainable tensors from one seeded stream, in a fixed order.
pub struct ParamStore<F: Float> {
    entries: Vec<(String, Tensor<F>)>,
    rng: ChaCha8Rng,
}

impl<F: Float> ParamStore<F> {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            entries: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// uniform(-bound, bound) entries.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Tensor<F> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| F::of(self.rng.random_range(-bound..=bound)))
            .collect();
        self.register(name, data, shape)
    }

    /// uniform(-sqrt(1/fan_in), sqrt(1/fan_in)).
    pub fn fan_in(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Tensor<F> {
        self.uniform(name, shape, (1.0 / fan_in.max(1) as f64).sqrt())
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Tensor<F> {
        self.register(name, vec![F::zero(); shape.iter().product()], shape)
    }

    /// Adopts existing values (e.g. pretrained embeddings) as a parameter.
    pub fn adopt(&mut self, name: &str, t: &Tensor<F>) -> Tensor<F> {
        self.register(name, t.to_vec(), t.shape())
    }

    fn register(&mut self, name: &str, data: Vec<F>, shape: &[usize]) -> Tensor<F> {
        debug_assert!(self.entries.iter().all(|(n, _)| n != name), "duplicate parameter {name}");
        let t = Tensor::param(data, shape).expect("shape matches data");
        self.entries.push((name.to_owned(), t.clone()));
        t
    }

    pub fn into_entries(self) -> Vec<(String, Tensor<F>)> {
        self.entries
    }
}

/// Inverted dropout. `rng` is `None` at evaluation time, which makes this
/// the identity.
pub fn dropout<F: Float>(x: &Tensor<F>, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor<F>> {
    let Some(rng) = rng else {
        return Ok(x.clone());
    };
    if p <= 0.0 {
        return Ok(x.clone());
    }
    if p >= 1.0 {
        return Err(Error::Argument(format!("dropout rate must be below 1, got {p}")));
    }
    let keep = F::of(1.0 / (1.0 - p));
    let mask: Vec<F> = (0..x.numel())
        .map(|_| if rng.random::<f64>() < p { F::zero() } else { keep })
        .collect();
    Ok(x.mul(&Tensor::new(mask, x.shape())?)?)
}

/// `x · w + b` for a row-major batch `x`.
pub fn linear<F: Float>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    Ok(x.matmul(w)?.add_row(b)?)
}
