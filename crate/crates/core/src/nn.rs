//! Small layer helpers shared by the model components.

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Dense map over the last axis: `y = x·W (+ b)` with `W` stored as `(in, out)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Uniform `±1/sqrt(in)` initialization for weight and bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform([in_dim, out_dim], bound, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), uniform([out_dim], bound, rng)));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn zeros(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros([in_dim, out_dim]));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros([out_dim])));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn num_params(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias.is_some() { self.out_dim } else { 0 }
    }

    /// FLOPs for applying the map to `rows` vectors (2 per multiply-accumulate,
    /// plus one add per output when biased).
    pub fn flops(&self, rows: u64) -> u64 {
        let mac = rows * (self.in_dim * self.out_dim) as u64;
        2 * mac + if self.bias.is_some() { rows * self.out_dim as u64 } else { 0 }
    }
}

pub fn uniform(shape: impl Into<Vec<usize>>, bound: f64, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform_range(-bound, bound))
}

/// Inverted dropout: zeroes each element with probability `p` and rescales the rest.
pub fn dropout(tape: &mut Tape, x: Var, p: f64, rng: &mut Rng) -> Result<Var> {
    if p <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - p;
    let shape = tape.value(x).shape().to_vec();
    let mask = Tensor::from_fn(shape, |_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 });
    let mask = tape.constant(mask);
    tape.mul(x, mask)
}
