use ndarray::{Array1, Array2};
use rand::distributions::Uniform;
use rand::Rng;

use crate::{Error, Result};

/// A fully-connected layer. `w` is out x in, row-major.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            w: Array2::zeros((out, inp)),
            b: Array1::zeros(out),
        }
    }

    /// Glorot-uniform weight init, zero biases.
    pub fn glorot(out: usize, inp: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: glorot_uniform(out, inp, rng),
            b: Array1::zeros(out),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }
}

/// Fan-based uniform init: U(-l, l) with l = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(out: usize, inp: usize, rng: &mut impl Rng) -> Array2<f64> {
    let limit = (6.0 / (inp + out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    Array2::from_shape_simple_fn((out, inp), || rng.sample(dist))
}

/// Inverted-dropout configuration; surviving units are scaled by 1/(1-rate)
/// at train time so inference needs no rescaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
}

impl DropoutSpec {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        Ok(Self { rate })
    }

    pub fn off() -> Self {
        Self { rate: 0.0 }
    }
}
