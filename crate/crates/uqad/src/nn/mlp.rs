use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::layers::{DenseLayer, DropoutSpec};
use crate::{Error, Result};

/// Whether dropout masks are drawn during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Off,
    Stochastic,
}

/// Backprop record from one forward pass.
#[derive(Debug)]
pub struct Tape {
    /// Input actually fed to each layer (after the previous layer's
    /// activation and dropout).
    pub inputs: Vec<Array2<f64>>,
    /// ReLU derivative (0/1) for each hidden layer.
    pub relu_mask: Vec<Array2<f64>>,
    /// Inverted-dropout scale mask (0 or 1/(1-rate)) for each hidden layer;
    /// `None` when dropout was off for that pass.
    pub dropout_mask: Vec<Option<Array2<f64>>>,
}

/// Per-layer parameter gradients.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub dw: Vec<Array2<f64>>,
    pub db: Vec<Array1<f64>>,
}

impl LayerGrads {
    pub fn zeros_like(layers: &[DenseLayer]) -> Self {
        Self {
            dw: layers.iter().map(|l| Array2::zeros(l.w.dim())).collect(),
            db: layers.iter().map(|l| Array1::zeros(l.b.len())).collect(),
        }
    }

    /// Flat views in (w0, b0, w1, b1, ...) order, matching `Mlp::param_slices_mut`.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.dw.len() * 2);
        for (w, b) in self.dw.iter().zip(&self.db) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }
}

/// Forward pass through a stack of dense layers with ReLU hidden activations
/// and inverted dropout after each hidden activation. The returned tape
/// suffices for an exact reverse pass.
///
/// Passing sampled weights here (instead of a model's own layers) is how the
/// variational variants reuse the same engine.
pub fn forward_layers(
    layers: &[DenseLayer],
    dropout: DropoutSpec,
    x: &Array2<f64>,
    mode: DropoutMode,
    mut rng: Option<&mut dyn rand::RngCore>,
) -> Result<(Array2<f64>, Tape)> {
    if layers.is_empty() {
        return Err(Error::Dimension("network has no layers".into()));
    }
    if x.ncols() != layers[0].in_dim() {
        return Err(Error::Dimension(format!(
            "input width {} but first layer expects {}",
            x.ncols(),
            layers[0].in_dim()
        )));
    }
    if mode == DropoutMode::Stochastic && dropout.rate > 0.0 && rng.is_none() {
        return Err(Error::Contract(
            "stochastic dropout requires an RNG".into(),
        ));
    }
    let n = layers.len();
    let mut inputs = Vec::with_capacity(n);
    let mut relu_mask = Vec::with_capacity(n - 1);
    let mut dropout_mask = Vec::with_capacity(n - 1);
    let mut act = x.clone();
    for (l, layer) in layers.iter().enumerate() {
        if act.ncols() != layer.in_dim() {
            return Err(Error::Dimension(format!(
                "layer {l} expects {} inputs, got {}",
                layer.in_dim(),
                act.ncols()
            )));
        }
        inputs.push(act.clone());
        let mut z = act.dot(&layer.w.t());
        z += &layer.b;
        if l + 1 < n {
            let mask = z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            z.zip_mut_with(&mask, |v, &m| *v *= m);
            relu_mask.push(mask);
            if mode == DropoutMode::Stochastic && dropout.rate > 0.0 {
                let rng = rng.as_mut().expect("checked above");
                let scale = 1.0 / (1.0 - dropout.rate);
                let dmask = Array2::from_shape_simple_fn(z.dim(), || {
                    if rng.gen::<f64>() < dropout.rate {
                        0.0
                    } else {
                        scale
                    }
                });
                z.zip_mut_with(&dmask, |v, &m| *v *= m);
                dropout_mask.push(Some(dmask));
            } else {
                dropout_mask.push(None);
            }
        }
        act = z;
    }
    Ok((
        act,
        Tape {
            inputs,
            relu_mask,
            dropout_mask,
        },
    ))
}

/// Reverse pass: gradients of the scalar loss whose logit gradient is
/// `dlogits`, for every layer parameter.
pub fn backward_layers(layers: &[DenseLayer], tape: &Tape, dlogits: &Array2<f64>) -> LayerGrads {
    let n = layers.len();
    let mut grads = LayerGrads::zeros_like(layers);
    let mut dy = dlogits.clone();
    for l in (0..n).rev() {
        grads.dw[l] = dy.t().dot(&tape.inputs[l]);
        grads.db[l] = dy.sum_axis(Axis(0));
        if l > 0 {
            let mut dx = dy.dot(&layers[l].w);
            if let Some(dmask) = &tape.dropout_mask[l - 1] {
                dx.zip_mut_with(dmask, |v, &m| *v *= m);
            }
            dx.zip_mut_with(&tape.relu_mask[l - 1], |v, &m| *v *= m);
            dy = dx;
        }
    }
    grads
}

/// A fixed dense MLP (deterministic weights), optionally with dropout after
/// each hidden activation.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub dropout: DropoutSpec,
}

impl Mlp {
    /// Build with Glorot-uniform weights. `sizes` lists the layer widths,
    /// e.g. `[784, 512, 512, 4]`.
    pub fn new(sizes: &[usize], dropout_rate: f64, rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Dimension("need at least input and output sizes".into()));
        }
        let dropout = DropoutSpec::new(dropout_rate)?;
        let layers = sizes
            .windows(2)
            .map(|w| DenseLayer::glorot(w[1], w[0], rng))
            .collect();
        Ok(Self { layers, dropout })
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        mode: DropoutMode,
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<(Array2<f64>, Tape)> {
        forward_layers(&self.layers, self.dropout, x, mode, rng)
    }

    pub fn backward(&self, tape: &Tape, dlogits: &Array2<f64>) -> LayerGrads {
        backward_layers(&self.layers, tape, dlogits)
    }

    /// Registration list for the optimizer, (name, len) per tensor in
    /// (w0, b0, w1, b1, ...) order.
    pub fn param_layout(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("w{i}"), l.w.len()));
            out.push((format!("b{i}"), l.b.len()));
        }
        out
    }

    /// Mutable flat views over all parameters, same order as `param_layout`.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in self.layers.iter_mut() {
            out.push(l.w.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss::softmax_cross_entropy;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_x(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
    }

    fn one_hot(labels: &[usize], k: usize) -> Array2<f64> {
        let mut t = Array2::zeros((labels.len(), k));
        for (i, &l) in labels.iter().enumerate() {
            t[[i, l]] = 1.0;
        }
        t
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(&[5, 8, 3], 0.0, &mut rng).unwrap();
        for l in net.layers.iter_mut() {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        let x = random_x(&mut rng, 4, 5);
        let (logits, _) = net.forward(&x, DropoutMode::Off, None).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_rate_stochastic_equals_off() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[5, 8, 3], 0.0, &mut rng).unwrap();
        let x = random_x(&mut rng, 4, 5);
        let (off, _) = net.forward(&x, DropoutMode::Off, None).unwrap();
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let (sto, _) = net
            .forward(&x, DropoutMode::Stochastic, Some(&mut r2))
            .unwrap();
        assert_eq!(off, sto);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[5, 8, 3], 0.0, &mut rng).unwrap();
        let x = random_x(&mut rng, 4, 6);
        assert!(matches!(
            net.forward(&x, DropoutMode::Off, None),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn seeded_forward_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[5, 8, 3], 0.5, &mut rng).unwrap();
        let x = random_x(&mut rng, 4, 5);
        let mut ra = ChaCha8Rng::seed_from_u64(99);
        let mut rb = ChaCha8Rng::seed_from_u64(99);
        let (a, _) = net
            .forward(&x, DropoutMode::Stochastic, Some(&mut ra))
            .unwrap();
        let (b, _) = net
            .forward(&x, DropoutMode::Stochastic, Some(&mut rb))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        // Mean over many mask draws must be within 3 standard errors of the
        // deterministic output, per logit.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Mlp::new(&[5, 8, 3], 0.5, &mut rng).unwrap();
        let x = random_x(&mut rng, 1, 5);
        let (det, _) = net.forward(&x, DropoutMode::Off, None).unwrap();
        let n = 100_000;
        let mut sum = vec![0.0; 3];
        let mut sumsq = vec![0.0; 3];
        let mut r = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..n {
            let (y, _) = net
                .forward(&x, DropoutMode::Stochastic, Some(&mut r))
                .unwrap();
            for k in 0..3 {
                sum[k] += y[[0, k]];
                sumsq[k] += y[[0, k]] * y[[0, k]];
            }
        }
        for k in 0..3 {
            let mean = sum[k] / n as f64;
            let var = sumsq[k] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - det[[0, k]]).abs() <= 3.0 * se.max(1e-12),
                "unit {k}: mean {mean} det {} se {se}",
                det[[0, k]]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = Mlp::new(&[5, 8, 3], 0.0, &mut rng).unwrap();
        let x = random_x(&mut rng, 4, 5);
        let targets = one_hot(&[0, 2, 1, 2], 3);

        let (_, tape) = net.forward(&x, DropoutMode::Off, None).unwrap();
        let (logits, _) = net.forward(&x, DropoutMode::Off, None).unwrap();
        let (_, dlogits) = softmax_cross_entropy(&logits, &targets).unwrap();
        let grads = net.backward(&tape, &dlogits);

        let h = 1e-5;
        for l in 0..net.layers.len() {
            let dim = net.layers[l].w.dim();
            for i in 0..dim.0 {
                for j in 0..dim.1 {
                    let orig = net.layers[l].w[[i, j]];
                    net.layers[l].w[[i, j]] = orig + h;
                    let fp = eval_loss(&net, &x, &targets);
                    net.layers[l].w[[i, j]] = orig - h;
                    let fm = eval_loss(&net, &x, &targets);
                    net.layers[l].w[[i, j]] = orig;
                    let fd = (fp - fm) / (2.0 * h);
                    let g = grads.dw[l][[i, j]];
                    let rel = (g - fd).abs() / fd.abs().max(1e-6);
                    assert!(rel < 1e-4, "w{l}[{i},{j}]: {g} vs {fd}");
                }
            }
            for i in 0..net.layers[l].b.len() {
                let orig = net.layers[l].b[i];
                net.layers[l].b[i] = orig + h;
                let fp = eval_loss(&net, &x, &targets);
                net.layers[l].b[i] = orig - h;
                let fm = eval_loss(&net, &x, &targets);
                net.layers[l].b[i] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let g = grads.db[l][i];
                let rel = (g - fd).abs() / fd.abs().max(1e-6);
                assert!(rel < 1e-4, "b{l}[{i}]: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn dropout_gradients_match_finite_differences_with_fixed_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut net = Mlp::new(&[5, 8, 3], 0.5, &mut rng).unwrap();
        let x = random_x(&mut rng, 4, 5);
        let targets = one_hot(&[1, 0, 2, 1], 3);
        let mask_seed = 21u64;

        let eval = |net: &Mlp, x: &Array2<f64>, t: &Array2<f64>| {
            let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
            let (logits, _) = net
                .forward(x, DropoutMode::Stochastic, Some(&mut r))
                .unwrap();
            softmax_cross_entropy(&logits, t).unwrap().0
        };
        let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
        let (logits, tape) = net
            .forward(&x, DropoutMode::Stochastic, Some(&mut r))
            .unwrap();
        let (_, dlogits) = softmax_cross_entropy(&logits, &targets).unwrap();
        let grads = net.backward(&tape, &dlogits);

        let h = 1e-5;
        let dim = net.layers[0].w.dim();
        for i in 0..dim.0 {
            for j in 0..dim.1 {
                let orig = net.layers[0].w[[i, j]];
                net.layers[0].w[[i, j]] = orig + h;
                let fp = eval(&net, &x, &targets);
                net.layers[0].w[[i, j]] = orig - h;
                let fm = eval(&net, &x, &targets);
                net.layers[0].w[[i, j]] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let g = grads.dw[0][[i, j]];
                if fd.abs() < 1e-10 && g.abs() < 1e-10 {
                    continue; // dropped unit, both sides zero
                }
                let rel = (g - fd).abs() / fd.abs().max(1e-6);
                assert!(rel < 1e-4, "w0[{i},{j}]: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn logits_shape_is_batch_by_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let net = Mlp::new(&[7, 6, 4], 0.0, &mut rng).unwrap();
        let x = random_x(&mut rng, 9, 7);
        let (logits, _) = net.forward(&x, DropoutMode::Off, None).unwrap();
        assert_eq!(logits.dim(), (9, 4));
        assert_abs_diff_eq!(
            crate::nn::softmax(&logits).row(0).sum(),
            1.0,
            epsilon = 1e-12
        );
    }

    fn eval_loss(net: &Mlp, x: &Array2<f64>, t: &Array2<f64>) -> f64 {
        let (logits, _) = net.forward(x, DropoutMode::Off, None).unwrap();
        softmax_cross_entropy(&logits, t).unwrap().0
    }
}
