use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::nn::{glorot_uniform, softmax, DenseLayer, DropoutMode, Mlp};
use crate::{Error, Result};

/// Numerically stable softplus, `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// How weight realizations are drawn during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingStrategy {
    /// One draw shared by the whole mini-batch (OSBA).
    PerMinibatch,
    /// An independent draw for every example (SV).
    PerExample,
}

/// A dense layer with a diagonal-Gaussian posterior over each weight and
/// bias: `w = mu + softplus(rho) * eps`, `eps ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct VariationalDense {
    pub mu_w: Array2<f64>,
    pub rho_w: Array2<f64>,
    pub mu_b: Array1<f64>,
    pub rho_b: Array1<f64>,
}

/// One sampled weight realization, keeping the noise that produced it so
/// gradients can be routed back to (mu, rho).
#[derive(Debug, Clone)]
pub struct SampledLayer {
    pub layer: DenseLayer,
    pub eps_w: Array2<f64>,
    pub eps_b: Array1<f64>,
}

impl VariationalDense {
    /// Glorot-uniform means, constant `rho_init` pre-softplus scales.
    pub fn new(out: usize, inp: usize, rho_init: f64, rng: &mut impl Rng) -> Self {
        Self {
            mu_w: glorot_uniform(out, inp, rng),
            rho_w: Array2::from_elem((out, inp), rho_init),
            mu_b: Array1::zeros(out),
            rho_b: Array1::from_elem(out, rho_init),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.mu_w.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.mu_w.ncols()
    }

    pub fn sigma_w(&self) -> Array2<f64> {
        self.rho_w.mapv(softplus)
    }

    pub fn sigma_b(&self) -> Array1<f64> {
        self.rho_b.mapv(softplus)
    }

    /// Draw one weight realization via the reparameterization trick.
    pub fn sample(&self, rng: &mut impl Rng) -> SampledLayer {
        self.sample_with_sigma(&self.sigma_w(), &self.sigma_b(), rng)
    }

    /// Same as [`Self::sample`] but with precomputed scales (hot path).
    pub fn sample_with_sigma(
        &self,
        sigma_w: &Array2<f64>,
        sigma_b: &Array1<f64>,
        rng: &mut impl Rng,
    ) -> SampledLayer {
        let eps_w =
            Array2::from_shape_simple_fn(self.mu_w.dim(), || rng.sample::<f64, _>(StandardNormal));
        let eps_b =
            Array1::from_shape_simple_fn(self.mu_b.len(), || rng.sample::<f64, _>(StandardNormal));
        let mut w = self.mu_w.clone();
        w.zip_mut_with(&(sigma_w * &eps_w), |v, &se| *v += se);
        let mut b = self.mu_b.clone();
        b.zip_mut_with(&(sigma_b * &eps_b), |v, &se| *v += se);
        SampledLayer {
            layer: DenseLayer { w, b },
            eps_w,
            eps_b,
        }
    }

    /// Draw the weight realizations a training step needs: one for the whole
    /// batch (PerMinibatch) or one per example (PerExample).
    pub fn sample_weights(
        &self,
        rng: &mut impl Rng,
        strategy: SamplingStrategy,
        batch_size: usize,
    ) -> Vec<SampledLayer> {
        let n = match strategy {
            SamplingStrategy::PerMinibatch => 1,
            SamplingStrategy::PerExample => batch_size,
        };
        let sw = self.sigma_w();
        let sb = self.sigma_b();
        (0..n).map(|_| self.sample_with_sigma(&sw, &sb, rng)).collect()
    }

    /// KL(q || prior) summed over this layer's parameters.
    pub fn kl(&self, prior_sigma: f64) -> f64 {
        let mut total = 0.0;
        for (&mu, &rho) in self.mu_w.iter().zip(self.rho_w.iter()) {
            total += kl_gaussian(mu, softplus(rho), prior_sigma).expect("softplus > 0");
        }
        for (&mu, &rho) in self.mu_b.iter().zip(self.rho_b.iter()) {
            total += kl_gaussian(mu, softplus(rho), prior_sigma).expect("softplus > 0");
        }
        total
    }
}

/// Closed-form KL between `N(mu, sigma^2)` and the prior `N(0, prior_sigma^2)`.
pub fn kl_gaussian(mu: f64, sigma: f64, prior_sigma: f64) -> Result<f64> {
    if sigma <= 0.0 || prior_sigma <= 0.0 {
        return Err(Error::Contract(format!(
            "scales must be positive: sigma={sigma}, prior_sigma={prior_sigma}"
        )));
    }
    Ok((prior_sigma / sigma).ln() + (sigma * sigma + mu * mu) / (2.0 * prior_sigma * prior_sigma)
        - 0.5)
}

/// A fixed MLP whose dense layers all carry variational Gaussian posteriors.
/// No dropout; hidden activations are ReLU as in the deterministic engine.
#[derive(Debug, Clone)]
pub struct VarMlp {
    pub layers: Vec<VariationalDense>,
    pub prior_sigma: f64,
}

impl VarMlp {
    pub fn new(sizes: &[usize], rho_init: f64, prior_sigma: f64, rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Dimension("need at least input and output sizes".into()));
        }
        if prior_sigma <= 0.0 {
            return Err(Error::Contract("prior_sigma must be positive".into()));
        }
        let layers = sizes
            .windows(2)
            .map(|w| VariationalDense::new(w[1], w[0], rho_init, rng))
            .collect();
        Ok(Self {
            layers,
            prior_sigma,
        })
    }

    /// The posterior-mean network (used for deterministic evaluation).
    pub fn mean_network(&self) -> Mlp {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    w: l.mu_w.clone(),
                    b: l.mu_b.clone(),
                })
                .collect(),
            dropout: crate::nn::DropoutSpec::off(),
        }
    }

    /// One full-network weight draw.
    pub fn sample_network(&self, rng: &mut impl Rng) -> Vec<SampledLayer> {
        self.layers.iter().map(|l| l.sample(rng)).collect()
    }

    /// Total KL(q || prior) over all layers.
    pub fn kl(&self) -> f64 {
        self.layers.iter().map(|l| l.kl(self.prior_sigma)).sum()
    }

    /// Optimizer registration, (name, len) per tensor in
    /// (mu_w, rho_w, mu_b, rho_b) order per layer.
    pub fn param_layout(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("mu_w{i}"), l.mu_w.len()));
            out.push((format!("rho_w{i}"), l.rho_w.len()));
            out.push((format!("mu_b{i}"), l.mu_b.len()));
            out.push((format!("rho_b{i}"), l.rho_b.len()));
        }
        out
    }

    /// Mutable flat views over all parameters, same order as `param_layout`.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in self.layers.iter_mut() {
            out.push(l.mu_w.as_slice_mut().expect("standard layout"));
            out.push(l.rho_w.as_slice_mut().expect("standard layout"));
            out.push(l.mu_b.as_slice_mut().expect("standard layout"));
            out.push(l.rho_b.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

/// One stochastic dropout forward pass through softmax. The Bayesian-dropout
/// MC sample set is built by repeated calls with a fresh RNG stream.
pub fn mc_dropout_predict(
    net: &Mlp,
    x: &Array2<f64>,
    rng: &mut impl Rng,
) -> Result<Array2<f64>> {
    let (logits, _) = net.forward(x, DropoutMode::Stochastic, Some(rng))?;
    Ok(softmax(&logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_posterior_returns_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // rho -> -inf limit: sigma -> 0, sampled w = mu.
        let layer = VariationalDense::new(3, 2, -60.0, &mut rng);
        let s = layer.sample(&mut rng);
        for (a, b) in s.layer.w.iter().zip(layer.mu_w.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in s.layer.b.iter().zip(layer.mu_b.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn per_minibatch_draws_exactly_one_weight_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = VariationalDense::new(3, 2, -1.0, &mut rng);
        let s = layer.sample_weights(&mut rng, SamplingStrategy::PerMinibatch, 100);
        assert_eq!(s.len(), 1);
        let s = layer.sample_weights(&mut rng, SamplingStrategy::PerExample, 100);
        assert_eq!(s.len(), 100);
    }

    #[test]
    fn sample_mean_converges_to_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = VariationalDense::new(2, 2, 0.5, &mut rng);
        let n = 100_000;
        let mut acc = Array2::<f64>::zeros((2, 2));
        for _ in 0..n {
            acc += &layer.sample(&mut rng).layer.w;
        }
        acc /= n as f64;
        let sigma = layer.sigma_w();
        for ((&m, &s), &mean) in layer.mu_w.iter().zip(sigma.iter()).zip(acc.iter()) {
            let tol = 3.0 * s / (n as f64).sqrt();
            assert!((mean - m).abs() <= tol, "mean {mean} vs mu {m} (tol {tol})");
        }
    }

    #[test]
    fn kl_closed_form_values() {
        assert_abs_diff_eq!(kl_gaussian(0.0, 1.0, 1.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kl_gaussian(1.0, 1.0, 1.0).unwrap(), 0.5, epsilon = 1e-15);
        assert!(kl_gaussian(0.0, -1.0, 1.0).is_err());
        assert!(kl_gaussian(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn kl_matches_quadrature() {
        // Direct numerical integration of q ln(q/p) over a wide grid.
        let cases = [(0.3, 0.7, 1.0), (-1.2, 0.4, 2.0), (2.0, 1.5, 0.8)];
        for &(mu, sigma, ps) in &cases {
            let closed = kl_gaussian(mu, sigma, ps).unwrap();
            let lo = mu - 12.0 * sigma.max(ps);
            let hi = mu + 12.0 * sigma.max(ps);
            let n = 200_000;
            let h = (hi - lo) / n as f64;
            let q = |x: f64| {
                (-((x - mu) * (x - mu)) / (2.0 * sigma * sigma)).exp()
                    / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            };
            let p = |x: f64| {
                (-(x * x) / (2.0 * ps * ps)).exp() / (ps * (2.0 * std::f64::consts::PI).sqrt())
            };
            let f = |x: f64| {
                let qx = q(x);
                if qx < 1e-300 {
                    0.0
                } else {
                    qx * (qx / p(x)).ln()
                }
            };
            let mut integral = 0.0;
            for i in 0..n {
                let x0 = lo + i as f64 * h;
                integral += h * (f(x0) + 4.0 * f(x0 + h / 2.0) + f(x0 + h)) / 6.0;
            }
            assert!(
                (closed - integral).abs() < 1e-6,
                "closed {closed} vs quadrature {integral}"
            );
        }
    }

    #[test]
    fn kl_nonnegative_and_zero_only_at_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        for _ in 0..1000 {
            let mu = rng.gen_range(-3.0..3.0);
            let sigma = rng.gen_range(0.01..3.0);
            let ps = rng.gen_range(0.01..3.0);
            let kl = kl_gaussian(mu, sigma, ps).unwrap();
            assert!(kl >= -1e-12);
        }
        assert_abs_diff_eq!(kl_gaussian(0.0, 0.7, 0.7).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn mc_dropout_prediction_is_normalized_and_seed_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(&[5, 8, 3], 0.5, &mut rng).unwrap();
        let x = Array2::from_elem((2, 5), 0.3);
        let mut ra = ChaCha8Rng::seed_from_u64(10);
        let mut rb = ChaCha8Rng::seed_from_u64(10);
        let a = mc_dropout_predict(&net, &x, &mut ra).unwrap();
        let b = mc_dropout_predict(&net, &x, &mut rb).unwrap();
        assert_eq!(a, b);
        for row in a.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_rate_dropout_predict_equals_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[5, 8, 3], 0.0, &mut rng).unwrap();
        let x = Array2::from_elem((2, 5), 0.3);
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let sto = mc_dropout_predict(&net, &x, &mut r).unwrap();
        let (logits, _) = net.forward(&x, DropoutMode::Off, None).unwrap();
        assert_eq!(sto, softmax(&logits));
    }
}
