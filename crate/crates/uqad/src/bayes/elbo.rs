use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::variational::{sigmoid, SamplingStrategy, VarMlp};
use crate::nn::{
    backward_layers, forward_layers, softmax_cross_entropy, DenseLayer, DropoutMode, DropoutSpec,
};
use crate::Result;

/// Gradients of the ELBO for one variational layer.
#[derive(Debug, Clone)]
pub struct VarLayerGrads {
    pub dmu_w: Array2<f64>,
    pub drho_w: Array2<f64>,
    pub dmu_b: Array1<f64>,
    pub drho_b: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct VarGrads {
    pub layers: Vec<VarLayerGrads>,
}

impl VarGrads {
    pub fn zeros_like(model: &VarMlp) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| VarLayerGrads {
                    dmu_w: Array2::zeros(l.mu_w.dim()),
                    drho_w: Array2::zeros(l.rho_w.dim()),
                    dmu_b: Array1::zeros(l.mu_b.len()),
                    drho_b: Array1::zeros(l.rho_b.len()),
                })
                .collect(),
        }
    }

    /// Flat views in (mu_w, rho_w, mu_b, rho_b) order per layer, matching
    /// `VarMlp::param_slices_mut`.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &self.layers {
            out.push(l.dmu_w.as_slice().expect("standard layout"));
            out.push(l.drho_w.as_slice().expect("standard layout"));
            out.push(l.dmu_b.as_slice().expect("standard layout"));
            out.push(l.drho_b.as_slice().expect("standard layout"));
        }
        out
    }

    /// All gradient entries as one flat vector (test and diagnostics use).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for s in self.slices() {
            out.extend_from_slice(s);
        }
        out
    }
}

/// ELBO objective for one mini-batch: mean cross-entropy of the sampled
/// network(s) plus `kl_weight * KL(q || prior)`, with gradients routed
/// through the reparameterization to every (mu, rho).
///
/// `PerMinibatch` draws one weight realization for the whole batch;
/// `PerExample` draws an independent realization per example. Both give the
/// same gradient in expectation over the noise.
pub fn elbo_loss(
    model: &VarMlp,
    x: &Array2<f64>,
    targets: &Array2<f64>,
    strategy: SamplingStrategy,
    kl_weight: f64,
    rng: &mut impl Rng,
) -> Result<(f64, VarGrads)> {
    let mut grads = VarGrads::zeros_like(model);
    let data_loss = match strategy {
        SamplingStrategy::PerMinibatch => {
            per_minibatch_data_term(model, x, targets, rng, &mut grads)?
        }
        SamplingStrategy::PerExample => per_example_data_term(model, x, targets, rng, &mut grads)?,
    };
    let kl = add_kl_term(model, kl_weight, &mut grads);
    Ok((data_loss + kl_weight * kl, grads))
}

fn per_minibatch_data_term(
    model: &VarMlp,
    x: &Array2<f64>,
    targets: &Array2<f64>,
    rng: &mut impl Rng,
    grads: &mut VarGrads,
) -> Result<f64> {
    let sampled = model.sample_network(rng);
    let mut dense: Vec<DenseLayer> = Vec::with_capacity(sampled.len());
    let mut eps: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(sampled.len());
    for s in sampled {
        dense.push(s.layer);
        eps.push((s.eps_w, s.eps_b));
    }
    let (logits, tape) = forward_layers(&dense, DropoutSpec::off(), x, DropoutMode::Off, None)?;
    let (loss, dlogits) = softmax_cross_entropy(&logits, targets)?;
    let g = backward_layers(&dense, &tape, &dlogits);
    for (l, vl) in model.layers.iter().enumerate() {
        accumulate_reparam(
            &mut grads.layers[l],
            &g.dw[l],
            &g.db[l],
            &eps[l].0,
            &eps[l].1,
            &vl.rho_w.mapv(sigmoid),
            &vl.rho_b.mapv(sigmoid),
        );
    }
    Ok(loss)
}

fn per_example_data_term(
    model: &VarMlp,
    x: &Array2<f64>,
    targets: &Array2<f64>,
    rng: &mut impl Rng,
    grads: &mut VarGrads,
) -> Result<f64> {
    let batch = x.nrows();
    // Scales and their derivatives only depend on the parameters; hoist them
    // out of the per-example loop.
    let sigma: Vec<_> = model
        .layers
        .iter()
        .map(|l| (l.sigma_w(), l.sigma_b()))
        .collect();
    let sgm_rho: Vec<_> = model
        .layers
        .iter()
        .map(|l| (l.rho_w.mapv(sigmoid), l.rho_b.mapv(sigmoid)))
        .collect();
    let mut total_loss = 0.0;
    for i in 0..batch {
        let xi = x.row(i).insert_axis(Axis(0)).to_owned();
        let ti = targets.row(i).insert_axis(Axis(0)).to_owned();
        let mut dense: Vec<DenseLayer> = Vec::with_capacity(model.layers.len());
        let mut eps: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(model.layers.len());
        for (l, vl) in model.layers.iter().enumerate() {
            let s = vl.sample_with_sigma(&sigma[l].0, &sigma[l].1, rng);
            dense.push(s.layer);
            eps.push((s.eps_w, s.eps_b));
        }
        let (logits, tape) =
            forward_layers(&dense, DropoutSpec::off(), &xi, DropoutMode::Off, None)?;
        let (loss_i, mut dlogits) = softmax_cross_entropy(&logits, &ti)?;
        total_loss += loss_i / batch as f64;
        dlogits /= batch as f64;
        let g = backward_layers(&dense, &tape, &dlogits);
        for l in 0..model.layers.len() {
            accumulate_reparam(
                &mut grads.layers[l],
                &g.dw[l],
                &g.db[l],
                &eps[l].0,
                &eps[l].1,
                &sgm_rho[l].0,
                &sgm_rho[l].1,
            );
        }
    }
    Ok(total_loss)
}

/// Route a sampled-weight gradient back to (mu, rho):
/// d/dmu = dw, d/drho = dw * eps * sigmoid(rho).
fn accumulate_reparam(
    out: &mut VarLayerGrads,
    dw: &Array2<f64>,
    db: &Array1<f64>,
    eps_w: &Array2<f64>,
    eps_b: &Array1<f64>,
    sgm_rho_w: &Array2<f64>,
    sgm_rho_b: &Array1<f64>,
) {
    // `dw` may be non-contiguous (transposed gemm result), so iterate in
    // logical order rather than over raw slices.
    ndarray::Zip::from(&mut out.dmu_w)
        .and(&mut out.drho_w)
        .and(dw)
        .and(eps_w)
        .and(sgm_rho_w)
        .for_each(|dmu, drho, &g, &e, &s| {
            *dmu += g;
            *drho += g * e * s;
        });
    ndarray::Zip::from(&mut out.dmu_b)
        .and(&mut out.drho_b)
        .and(db)
        .and(eps_b)
        .and(sgm_rho_b)
        .for_each(|dmu, drho, &g, &e, &s| {
            *dmu += g;
            *drho += g * e * s;
        });
}

/// Add `kl_weight * KL(q || prior)` gradients; returns the (unweighted) KL.
fn add_kl_term(model: &VarMlp, kl_weight: f64, grads: &mut VarGrads) -> f64 {
    let ps2 = model.prior_sigma * model.prior_sigma;
    let mut kl = 0.0;
    for (vl, gl) in model.layers.iter().zip(grads.layers.iter_mut()) {
        kl += vl.kl(model.prior_sigma);
        if kl_weight == 0.0 {
            continue;
        }
        for ((&mu, &rho), (dmu, drho)) in vl
            .mu_w
            .iter()
            .zip(vl.rho_w.iter())
            .zip(gl.dmu_w.iter_mut().zip(gl.drho_w.iter_mut()))
        {
            let s = super::variational::softplus(rho);
            *dmu += kl_weight * mu / ps2;
            *drho += kl_weight * (-1.0 / s + s / ps2) * sigmoid(rho);
        }
        for ((&mu, &rho), (dmu, drho)) in vl
            .mu_b
            .iter()
            .zip(vl.rho_b.iter())
            .zip(gl.dmu_b.iter_mut().zip(gl.drho_b.iter_mut()))
        {
            let s = super::variational::softplus(rho);
            *dmu += kl_weight * mu / ps2;
            *drho += kl_weight * (-1.0 / s + s / ps2) * sigmoid(rho);
        }
    }
    kl
}
