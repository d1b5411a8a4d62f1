use crate::{Error, Result};

/// ADAM hyperparameters. Defaults are the usual (1e-3, 0.9, 0.999, 1e-8).
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// ADAM with bias correction over a fixed set of named parameter tensors,
/// addressed as flat slices.
#[derive(Debug, Clone)]
pub struct Adam {
    pub hp: AdamParams,
    t: u64,
    names: Vec<String>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(hp: AdamParams, params: &[(&str, usize)]) -> Self {
        Self {
            hp,
            t: 0,
            names: params.iter().map(|(n, _)| n.to_string()).collect(),
            m: params.iter().map(|&(_, len)| vec![0.0; len]).collect(),
            v: params.iter().map(|&(_, len)| vec![0.0; len]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update step. `params` and `grads` must match the registration
    /// order and lengths. A non-finite gradient aborts with the offending
    /// parameter's name before any state is mutated.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "adam registered {} tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, g) in grads.iter().enumerate() {
            if g.len() != self.m[k].len() {
                return Err(Error::Dimension(format!(
                    "adam tensor '{}' has {} entries, gradient has {}",
                    self.names[k],
                    self.m[k].len(),
                    g.len()
                )));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric {
                    name: self.names[k].clone(),
                });
            }
        }
        self.t += 1;
        let (b1, b2) = (self.hp.beta1, self.hp.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for k in 0..self.m.len() {
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            let p = &mut *params[k];
            let g = grads[k];
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.hp.lr * m_hat / (v_hat.sqrt() + self.hp.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_like_signed_lr() {
        let hp = AdamParams::default();
        let mut adam = Adam::new(hp, &[("p", 3)]);
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.3, -0.7, 1e-6];
        adam.step(&mut [&mut p], &[&g]).unwrap();
        for (i, (&pi, &gi)) in p.iter().zip(&g).enumerate() {
            let init = [1.0, -2.0, 0.5][i];
            let update = pi - init;
            // First step: m_hat = g, v_hat = g^2, so |update| in [lr*|g|/(|g|+eps), lr].
            assert!(update * gi < 0.0, "moves opposite the gradient");
            let lo = hp.lr * gi.abs() / (gi.abs() + hp.eps);
            assert!(update.abs() >= lo - 1e-15 && update.abs() <= hp.lr + 1e-15);
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut adam = Adam::new(AdamParams::default(), &[("p", 2)]);
        let mut p = vec![3.0, -4.0];
        adam.step(&mut [&mut p], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![3.0, -4.0]);
    }

    #[test]
    fn constant_gradient_step_magnitude_shrinks_or_holds() {
        let mut adam = Adam::new(AdamParams::default(), &[("p", 1)]);
        let mut p = vec![0.0];
        let g = vec![0.42];
        adam.step(&mut [&mut p], &[&g]).unwrap();
        let first = p[0].abs();
        let before = p[0];
        adam.step(&mut [&mut p], &[&g]).unwrap();
        let second = (p[0] - before).abs();
        assert!(second <= first + 1e-12, "second {second} vs first {first}");
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut adam = Adam::new(AdamParams::default(), &[("w1", 1), ("b1", 1)]);
        let mut p1 = vec![0.0];
        let mut p2 = vec![0.0];
        let err = adam
            .step(&mut [&mut p1, &mut p2], &[&[0.1], &[f64::NAN]])
            .unwrap_err();
        match err {
            Error::Numeric { name } => assert_eq!(name, "b1"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
