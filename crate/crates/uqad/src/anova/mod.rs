//! Bayesian two-factor ANOVA over replication AUCs.
//!
//! Model: auc ~ Normal(mu[protocol] + theta[model], sigma), with
//! mu ~ Normal(0, 10), theta ~ Normal(0, sigma_theta) under a sum-to-zero
//! constraint, and Half-Cauchy(0, 10) priors on both scales. Sampling is
//! adaptive Metropolis-within-Gibbs on a log transform of the scales.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

/// Replication results in long form, with factor levels encoded as indices
/// into the name tables.
#[derive(Debug, Clone)]
pub struct AnovaData {
    pub auc: Vec<f64>,
    pub protocol: Vec<usize>,
    pub model: Vec<usize>,
    pub protocol_names: Vec<String>,
    pub model_names: Vec<String>,
}

impl AnovaData {
    pub fn new(
        auc: Vec<f64>,
        protocol: Vec<usize>,
        model: Vec<usize>,
        protocol_names: Vec<String>,
        model_names: Vec<String>,
    ) -> Result<Self> {
        let n = auc.len();
        if protocol.len() != n || model.len() != n {
            return Err(Error::Dimension(format!(
                "auc/protocol/model lengths differ: {n}/{}/{}",
                protocol.len(),
                model.len()
            )));
        }
        if n == 0 {
            return Err(Error::DegenerateData("no replication rows".into()));
        }
        if model_names.len() < 2 {
            return Err(Error::Contract("need at least two models".into()));
        }
        if protocol_names.is_empty() {
            return Err(Error::Contract("need at least one protocol".into()));
        }
        if auc.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { name: "auc".into() });
        }
        if protocol.iter().any(|&p| p >= protocol_names.len())
            || model.iter().any(|&m| m >= model_names.len())
        {
            return Err(Error::Contract("factor index out of range".into()));
        }
        for p in 0..protocol_names.len() {
            if !protocol.contains(&p) {
                return Err(Error::DegenerateData(format!(
                    "protocol {} has no rows",
                    protocol_names[p]
                )));
            }
        }
        for m in 0..model_names.len() {
            if !model.contains(&m) {
                return Err(Error::DegenerateData(format!(
                    "model {} has no rows",
                    model_names[m]
                )));
            }
        }
        Ok(Self {
            auc,
            protocol,
            model,
            protocol_names,
            model_names,
        })
    }

    pub fn n_protocols(&self) -> usize {
        self.protocol_names.len()
    }

    pub fn n_models(&self) -> usize {
        self.model_names.len()
    }
}

/// Constrained-scale parameters. The last model effect is implied by the
/// sum-to-zero constraint and not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct AnovaParams {
    pub mu: Vec<f64>,
    pub theta_free: Vec<f64>,
    pub sigma: f64,
    pub sigma_theta: f64,
}

impl AnovaParams {
    /// Full effect vector; sums to zero by construction.
    pub fn thetas(&self) -> Vec<f64> {
        let mut t = self.theta_free.clone();
        t.push(-t.iter().sum::<f64>());
        t
    }
}

fn ln_normal(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

fn ln_half_cauchy(x: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    (2.0 / (std::f64::consts::PI * scale)).ln() - (1.0 + (x / scale).powi(2)).ln()
}

/// Unnormalized log posterior density on the constrained scale. Returns
/// negative infinity outside the support (non-positive scales).
pub fn log_posterior(data: &AnovaData, p: &AnovaParams) -> f64 {
    if p.mu.len() != data.n_protocols() || p.theta_free.len() != data.n_models() - 1 {
        return f64::NEG_INFINITY;
    }
    if p.sigma <= 0.0 || p.sigma_theta <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let thetas = p.thetas();
    let mut lp = 0.0;
    for i in 0..data.auc.len() {
        let mean = p.mu[data.protocol[i]] + thetas[data.model[i]];
        lp += ln_normal(data.auc[i], mean, p.sigma);
    }
    for &m in &p.mu {
        lp += ln_normal(m, 0.0, 10.0);
    }
    for &t in &thetas {
        lp += ln_normal(t, 0.0, p.sigma_theta);
    }
    lp += ln_half_cauchy(p.sigma, 10.0);
    lp += ln_half_cauchy(p.sigma_theta, 10.0);
    lp
}

/// Per-cell sufficient statistics so the sampler's density evaluations do
/// not rescan the rows.
struct CellStats {
    n: f64,
    sum: f64,
    sumsq: f64,
}

struct Evaluator {
    cells: Vec<CellStats>,
    n_protocols: usize,
    n_models: usize,
    n_rows: f64,
}

impl Evaluator {
    fn new(data: &AnovaData) -> Self {
        let (np, nm) = (data.n_protocols(), data.n_models());
        let mut cells: Vec<CellStats> = (0..np * nm)
            .map(|_| CellStats {
                n: 0.0,
                sum: 0.0,
                sumsq: 0.0,
            })
            .collect();
        for i in 0..data.auc.len() {
            let c = &mut cells[data.protocol[i] * nm + data.model[i]];
            c.n += 1.0;
            c.sum += data.auc[i];
            c.sumsq += data.auc[i] * data.auc[i];
        }
        Self {
            cells,
            n_protocols: np,
            n_models: nm,
            n_rows: data.auc.len() as f64,
        }
    }

    /// Log posterior in the transformed space (scales as logs), including
    /// the change-of-variable Jacobian.
    fn log_density(&self, q: &[f64]) -> f64 {
        let np = self.n_protocols;
        let nm = self.n_models;
        let mu = &q[..np];
        let free = &q[np..np + nm - 1];
        let log_sigma = q[np + nm - 1];
        let log_sigma_theta = q[np + nm];
        let sigma = log_sigma.exp();
        let sigma_theta = log_sigma_theta.exp();
        if !sigma.is_finite() || !sigma_theta.is_finite() || sigma == 0.0 || sigma_theta == 0.0 {
            return f64::NEG_INFINITY;
        }
        let mut thetas = free.to_vec();
        thetas.push(-free.iter().sum::<f64>());

        let inv2s2 = 0.5 / (sigma * sigma);
        let mut lp = -self.n_rows * (0.5 * LN_2PI + log_sigma);
        for p in 0..np {
            for m in 0..nm {
                let c = &self.cells[p * nm + m];
                if c.n == 0.0 {
                    continue;
                }
                let mean = mu[p] + thetas[m];
                lp -= (c.sumsq - 2.0 * mean * c.sum + c.n * mean * mean) * inv2s2;
            }
        }
        for &m in mu {
            lp += ln_normal(m, 0.0, 10.0);
        }
        for &t in &thetas {
            lp += ln_normal(t, 0.0, sigma_theta);
        }
        lp += ln_half_cauchy(sigma, 10.0);
        lp += ln_half_cauchy(sigma_theta, 10.0);
        // Jacobian of the log transform.
        lp + log_sigma + log_sigma_theta
    }
}

/// Sampler configuration. The default is the full desk-scale run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub chains: usize,
    pub steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            steps: 20_000,
            burn_in: 2_000,
            thin: 5,
            seed: 0,
        }
    }
}

impl McmcConfig {
    fn validate(&self) -> Result<()> {
        if self.chains < 2 {
            return Err(Error::Contract("need at least 2 chains".into()));
        }
        if self.burn_in >= self.steps {
            return Err(Error::Contract("burn-in must be shorter than the run".into()));
        }
        if self.thin == 0 {
            return Err(Error::Contract("thin must be positive".into()));
        }
        Ok(())
    }
}

/// Posterior summary of one reported quantity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub hpd_low: f64,
    pub hpd_high: f64,
    pub rhat: f64,
}

/// Pairwise model-effect contrast with its 95% HPD interval. Significant
/// means zero falls outside the interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectDifference {
    pub a: String,
    pub b: String,
    pub mean: f64,
    pub hpd_low: f64,
    pub hpd_high: f64,
    pub significant: bool,
}

/// Full sampler output on the constrained scale.
#[derive(Debug, Clone)]
pub struct AnovaResult {
    /// Reported quantities: mus, all model effects, sigma, sigma_theta.
    pub param_names: Vec<String>,
    /// Per chain, a draws x params matrix of retained samples.
    pub chains: Vec<Array2<f64>>,
    pub summaries: Vec<ParamSummary>,
    pub differences: Vec<EffectDifference>,
    pub converged: bool,
    pub mean_acceptance: f64,
}

impl AnovaResult {
    /// Pooled draws of one reported parameter across chains.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        self.chains
            .iter()
            .flat_map(|c| c.column(param).to_vec())
            .collect()
    }
}

/// Shortest interval containing `mass` of the samples.
pub fn hpd_interval(samples: &[f64], mass: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::DegenerateData("hpd of empty sample".into()));
    }
    if !(0.0..1.0).contains(&mass) || mass <= 0.0 {
        return Err(Error::Contract(format!("hpd mass {mass} outside (0, 1)")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            name: "hpd samples".into(),
        });
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    let m = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (0usize, f64::INFINITY);
    for i in 0..=n - m {
        let width = s[i + m - 1] - s[i];
        if width < best.1 {
            best = (i, width);
        }
    }
    Ok((s[best.0], s[best.0 + m - 1]))
}

/// Split-R-hat over one scalar parameter. Chains are halved, and the
/// pooled-to-within variance ratio is returned; 1.0 for zero variance.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::new();
    for c in chains {
        let h = c.len() / 2;
        halves.push(&c[..h]);
        halves.push(&c[h..h * 2]);
    }
    let n = halves.iter().map(|h| h.len()).min().unwrap_or(0);
    if n < 2 {
        return f64::INFINITY;
    }
    let halves: Vec<&[f64]> = halves.iter().map(|h| &h[..n]).collect();
    let m = halves.len() as f64;
    let means: Vec<f64> = halves
        .iter()
        .map(|h| h.iter().sum::<f64>() / n as f64)
        .collect();
    let vars: Vec<f64> = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n as f64 - 1.0))
        .collect();
    let w = vars.iter().sum::<f64>() / m;
    let grand = means.iter().sum::<f64>() / m;
    let b = n as f64 * means.iter().map(|v| (v - grand) * (v - grand)).sum::<f64>() / (m - 1.0);
    if w < 1e-300 {
        return 1.0;
    }
    let var_hat = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    (var_hat / w).sqrt()
}

const RHAT_THRESHOLD: f64 = 1.05;
const TARGET_ACCEPTANCE: f64 = 0.44;

/// Run the adaptive Metropolis-within-Gibbs sampler and summarize.
pub fn run_mcmc(data: &AnovaData, cfg: &McmcConfig) -> Result<AnovaResult> {
    cfg.validate()?;
    let eval = Evaluator::new(data);
    let np = data.n_protocols();
    let nm = data.n_models();
    let dim = np + nm + 1; // transformed space: mus, free thetas, 2 log scales

    let grand_mean = data.auc.iter().sum::<f64>() / data.auc.len() as f64;
    let data_var = data
        .auc
        .iter()
        .map(|v| (v - grand_mean) * (v - grand_mean))
        .sum::<f64>()
        / data.auc.len() as f64;
    let data_sd = data_var.sqrt().max(1e-6);

    let kept_per_chain = (cfg.steps - cfg.burn_in) / cfg.thin;
    let n_report = np + nm + 2;
    let mut chains: Vec<Array2<f64>> = Vec::with_capacity(cfg.chains);
    let mut accept_total = 0.0;
    let mut proposal_total = 0.0f64;

    for chain in 0..cfg.chains {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(chain as u64 + 1));
        // Overdispersed initialization around crude data estimates.
        let mut q = vec![0.0; dim];
        for p in 0..np {
            q[p] = grand_mean + 0.2 * rng.sample::<f64, _>(StandardNormal);
        }
        for t in 0..nm - 1 {
            q[np + t] = 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
        q[np + nm - 1] = data_sd.ln() + 0.5 * rng.sample::<f64, _>(StandardNormal);
        q[np + nm] = data_sd.ln() + 0.5 * rng.sample::<f64, _>(StandardNormal);

        let mut log_step = vec![(0.1f64).ln(); dim];
        let mut lp = eval.log_density(&q);
        if !lp.is_finite() {
            return Err(Error::Numeric {
                name: "initial log density".into(),
            });
        }
        let mut kept = Array2::zeros((kept_per_chain, n_report));
        let mut kept_rows = 0;
        for step in 0..cfg.steps {
            for j in 0..dim {
                let old = q[j];
                q[j] = old + log_step[j].exp() * rng.sample::<f64, _>(StandardNormal);
                let cand_lp = eval.log_density(&q);
                let alpha = (cand_lp - lp).exp().min(1.0);
                if rng.gen::<f64>() < alpha {
                    lp = cand_lp;
                } else {
                    q[j] = old;
                }
                if step < cfg.burn_in {
                    // Robbins-Monro adaptation toward the target acceptance.
                    let gamma = (step as f64 + 1.0).powf(-0.6);
                    log_step[j] += gamma * (alpha - TARGET_ACCEPTANCE);
                } else {
                    accept_total += alpha;
                    proposal_total += 1.0;
                }
            }
            if step >= cfg.burn_in && (step - cfg.burn_in) % cfg.thin == 0 && kept_rows < kept_per_chain
            {
                let mut row = kept.row_mut(kept_rows);
                for p in 0..np {
                    row[p] = q[p];
                }
                let free = &q[np..np + nm - 1];
                for (t, v) in free.iter().enumerate() {
                    row[np + t] = *v;
                }
                row[np + nm - 1] = -free.iter().sum::<f64>();
                row[np + nm] = q[np + nm - 1].exp();
                row[np + nm + 1] = q[np + nm].exp();
                kept_rows += 1;
            }
        }
        chains.push(kept);
    }

    let mut param_names: Vec<String> = data
        .protocol_names
        .iter()
        .map(|p| format!("mu[{p}]"))
        .collect();
    param_names.extend(data.model_names.iter().map(|m| format!("theta[{m}]")));
    param_names.push("sigma".into());
    param_names.push("sigma_theta".into());

    let mut summaries = Vec::with_capacity(n_report);
    let mut converged = true;
    for j in 0..n_report {
        let per_chain: Vec<Vec<f64>> = chains.iter().map(|c| c.column(j).to_vec()).collect();
        let rhat = split_rhat(&per_chain);
        if !(rhat < RHAT_THRESHOLD) {
            converged = false;
        }
        let pooled: Vec<f64> = per_chain.into_iter().flatten().collect();
        let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
        let sd = (pooled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / pooled.len() as f64)
            .sqrt();
        let (lo, hi) = hpd_interval(&pooled, 0.95)?;
        summaries.push(ParamSummary {
            name: param_names[j].clone(),
            mean,
            sd,
            hpd_low: lo,
            hpd_high: hi,
            rhat,
        });
    }

    let mut differences = Vec::new();
    for a in 0..nm {
        for b in a + 1..nm {
            let diff: Vec<f64> = chains
                .iter()
                .flat_map(|c| {
                    let ca = c.column(np + a);
                    let cb = c.column(np + b);
                    ca.iter().zip(cb.iter()).map(|(x, y)| x - y).collect::<Vec<_>>()
                })
                .collect();
            let mean = diff.iter().sum::<f64>() / diff.len() as f64;
            let (lo, hi) = hpd_interval(&diff, 0.95)?;
            differences.push(EffectDifference {
                a: data.model_names[a].clone(),
                b: data.model_names[b].clone(),
                mean,
                hpd_low: lo,
                hpd_high: hi,
                significant: !(lo <= 0.0 && 0.0 <= hi),
            });
        }
    }

    Ok(AnovaResult {
        param_names,
        chains,
        summaries,
        differences,
        converged,
        mean_acceptance: accept_total / proposal_total.max(1.0),
    })
}
