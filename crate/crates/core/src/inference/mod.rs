//! Bayesian logistic regression with standard normal priors, sampled with
//! NUTS, plus predictive probabilities and convergence diagnostics.

pub mod diagnostics;
mod nuts;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::DesignMatrix;
use crate::par;
use crate::stats::{self, log_sigmoid, sigmoid};

pub use diagnostics::{ess, split_rhat};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("non-finite model input: {0}")]
    NonFiniteInput(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("no finite initial point found after {0} attempts")]
    Initialization(usize),
    #[error("divergence rate {rate:.4} exceeds {limit}")]
    DivergenceRateTooHigh { rate: f64, limit: f64, samples: Box<PosteriorSamples> },
    #[error("not converged: max R-hat {max_rhat:.4}, min ESS {min_ess:.1}")]
    NotConverged { max_rhat: f64, min_ess: f64, samples: Box<PosteriorSamples> },
}

impl InferenceError {
    /// Samples attached to a failed gate, if any.
    pub fn into_samples(self) -> Option<PosteriorSamples> {
        match self {
            InferenceError::DivergenceRateTooHigh { samples, .. } | InferenceError::NotConverged { samples, .. } => {
                Some(*samples)
            }
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, InferenceError>;

/// A differentiable log density on `R^dim`.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density at `theta`; writes the gradient into `grad`.
    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64;

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("theta[{i}]")).collect()
    }
}

/// Logistic regression `x_i ~ Bernoulli(sigmoid(alpha + beta . y_i))` with
/// independent N(0, 1) priors on every coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub outcomes: Vec<u8>,
    /// Row-major N x J.
    pub features: Vec<Vec<f64>>,
    pub feature_names: Vec<String>,
}

impl LogisticModel {
    pub fn new(outcomes: Vec<u8>, features: Vec<Vec<f64>>, feature_names: Vec<String>) -> Result<Self> {
        if outcomes.len() != features.len() {
            return Err(InferenceError::InvalidModel(format!(
                "{} outcomes but {} feature rows",
                outcomes.len(),
                features.len()
            )));
        }
        if let Some(x) = outcomes.iter().find(|&&x| x > 1) {
            return Err(InferenceError::InvalidModel(format!("outcome {x} is not binary")));
        }
        let j = feature_names.len();
        for (i, row) in features.iter().enumerate() {
            if row.len() != j {
                return Err(InferenceError::InvalidModel(format!("row {i} has {} features, expected {j}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(InferenceError::NonFiniteInput(format!("feature row {i}")));
            }
        }
        Ok(Self { outcomes, features, feature_names })
    }

    pub fn from_design(outcomes: Vec<u8>, design: &DesignMatrix) -> Result<Self> {
        Self::new(outcomes, design.rows.clone(), design.names().to_vec())
    }

    pub fn n_trials(&self) -> usize {
        self.outcomes.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Same data with feature `j` removed.
    pub fn without_feature(&self, j: usize) -> Self {
        let mut names = self.feature_names.clone();
        names.remove(j);
        let features = self
            .features
            .iter()
            .map(|r| r.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, v)| *v).collect())
            .collect();
        Self { outcomes: self.outcomes.clone(), features, feature_names: names }
    }

    fn linear(params: &[f64], row: &[f64]) -> f64 {
        params[0] + params[1..].iter().zip(row).map(|(b, y)| b * y).sum::<f64>()
    }

    pub fn log_likelihood(&self, params: &[f64]) -> f64 {
        self.outcomes
            .iter()
            .zip(&self.features)
            .map(|(&x, row)| {
                let eta = Self::linear(params, row);
                if x == 1 { log_sigmoid(eta) } else { log_sigmoid(-eta) }
            })
            .sum()
    }

    /// Normalised N(0, I) log prior.
    pub fn log_prior(&self, params: &[f64]) -> f64 {
        -0.5 * (params.len() as f64 * LN_2PI + params.iter().map(|v| v * v).sum::<f64>())
    }

    /// Log posterior up to the evidence, with analytic gradient.
    pub fn log_posterior(&self, params: &[f64], grad: &mut [f64]) -> Result<f64> {
        if params.len() != self.dim() || params.iter().any(|v| !v.is_finite()) {
            return Err(InferenceError::NonFiniteInput(format!("{params:?}")));
        }
        Ok(self.log_density_and_grad(params, grad))
    }
}

impl LogDensity for LogisticModel {
    fn dim(&self) -> usize {
        self.feature_names.len() + 1
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        for (g, t) in grad.iter_mut().zip(theta) {
            *g = -t;
        }
        let mut lp = self.log_prior(theta);
        for (&x, row) in self.outcomes.iter().zip(&self.features) {
            let eta = Self::linear(theta, row);
            let (ll, r) = if x == 1 { (log_sigmoid(eta), sigmoid(-eta)) } else { (log_sigmoid(-eta), -sigmoid(eta)) };
            lp += ll;
            grad[0] += r;
            for (g, y) in grad[1..].iter_mut().zip(row) {
                *g += r * y;
            }
        }
        lp
    }

    fn param_names(&self) -> Vec<String> {
        std::iter::once("alpha".to_owned()).chain(self.feature_names.iter().map(|n| format!("beta_{n}"))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub draws: usize,
    pub warmup: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_depth: usize,
    pub rhat_max: f64,
    pub ess_min: f64,
    pub max_divergence_rate: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            draws: 1000,
            warmup: 1000,
            seed: 0,
            target_accept: 0.8,
            max_depth: 10,
            rhat_max: 1.01,
            ess_min: 400.0,
            max_divergence_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChainDraws {
    /// Post-warm-up draws, one parameter vector each.
    pub draws: Vec<Vec<f64>>,
    pub log_posterior: Vec<f64>,
    pub divergent: Vec<bool>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub mean_accept: f64,
    pub n_leapfrog: usize,
    /// Transitions that stopped at the maximum tree depth.
    pub depth_saturated: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub divergences: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub param_names: Vec<String>,
    pub chains: Vec<ChainDraws>,
    pub diagnostics: Diagnostics,
}

impl PosteriorSamples {
    /// Wrap a fixed draw set as a single chain (no diagnostics).
    pub fn from_draws(param_names: Vec<String>, draws: Vec<Vec<f64>>) -> Self {
        let n = draws.len();
        Self {
            param_names,
            chains: vec![ChainDraws {
                draws,
                log_posterior: vec![f64::NAN; n],
                divergent: vec![false; n],
                ..ChainDraws::default()
            }],
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.param_names.len()
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    /// All draws, chain by chain.
    pub fn draws(&self) -> impl Iterator<Item = &[f64]> {
        self.chains.iter().flat_map(|c| c.draws.iter().map(Vec::as_slice))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws().map(|d| d[j]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| stats::mean(&self.column(j))).collect()
    }

    pub fn sd(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| stats::std_dev(&self.column(j))).collect()
    }

    /// Central interval with probability `level` for parameter `j`.
    pub fn interval(&self, j: usize, level: f64) -> (f64, f64) {
        let col = self.column(j);
        let tail = (1.0 - level) / 2.0;
        (stats::quantile(&col, tail), stats::quantile(&col, 1.0 - tail))
    }

    pub fn divergence_rate(&self) -> f64 {
        let n = self.n_draws();
        if n == 0 { 0.0 } else { self.diagnostics.divergences as f64 / n as f64 }
    }

    /// Recompute R-hat and ESS from the stored chains.
    pub fn compute_diagnostics(&mut self, cfg: &SamplerConfig) {
        let mut rhat = Vec::with_capacity(self.dim());
        let mut es = Vec::with_capacity(self.dim());
        for j in 0..self.dim() {
            let cols: Vec<Vec<f64>> = self.chains.iter().map(|c| c.draws.iter().map(|d| d[j]).collect()).collect();
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            rhat.push(split_rhat(&refs));
            es.push(ess(&refs));
        }
        let divergences = self.chains.iter().map(|c| c.divergent.iter().filter(|&&d| d).count()).sum();
        let converged = rhat.iter().all(|r| *r < cfg.rhat_max) && es.iter().all(|e| *e > cfg.ess_min);
        self.diagnostics = Diagnostics { rhat, ess: es, divergences, converged };
    }

    /// First and second half of every chain, for split-sample estimators.
    pub fn halves(&self) -> (Vec<&[f64]>, Vec<&[f64]>) {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for c in &self.chains {
            let h = c.draws.len() / 2;
            a.extend(c.draws[..h].iter().map(Vec::as_slice));
            b.extend(c.draws[h..].iter().map(Vec::as_slice));
        }
        (a, b)
    }
}

fn run_chain<D: LogDensity + ?Sized>(density: &D, cfg: &SamplerConfig, chain: usize) -> Result<ChainDraws> {
    let dim = density.dim();
    let mut sampler = nuts::Nuts::new(density, cfg.seed, chain as u64, cfg.max_depth);

    let mut grad = vec![0.0; dim];
    let mut q = vec![0.0; dim];
    let mut found = false;
    for _ in 0..100 {
        for v in q.iter_mut() {
            *v = sampler.rng().random_range(-2.0..2.0);
        }
        let lp = density.log_density_and_grad(&q, &mut grad);
        if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            found = true;
            break;
        }
    }
    if !found {
        return Err(InferenceError::Initialization(100));
    }

    sampler.init_step_size(&q);
    let mut step = nuts::StepSizeAdapter::new(cfg.target_accept);
    step.restart(sampler.step_size);
    let mut metric = nuts::MetricAdapter::new(dim, cfg.warmup);
    for _ in 0..cfg.warmup {
        let (next, _, st) = sampler.transition(&q);
        q = next;
        sampler.step_size = step.learn(st.accept_stat);
        if metric.learn(&mut sampler.inv_metric, &q) {
            sampler.init_step_size(&q);
            step.restart(sampler.step_size);
        }
    }
    if cfg.warmup > 0 {
        sampler.step_size = step.final_step_size();
    }

    let mut out = ChainDraws { step_size: sampler.step_size, inv_metric: sampler.inv_metric.clone(), ..Default::default() };
    let mut accept = 0.0;
    for _ in 0..cfg.draws {
        let (next, lp, st) = sampler.transition(&q);
        q = next;
        out.draws.push(q.clone());
        out.log_posterior.push(lp);
        out.divergent.push(st.divergent);
        accept += st.accept_stat;
        out.n_leapfrog += st.n_leapfrog;
        out.depth_saturated += usize::from(st.depth >= cfg.max_depth);
    }
    out.mean_accept = if cfg.draws > 0 { accept / cfg.draws as f64 } else { f64::NAN };
    Ok(out)
}

/// Run `cfg.chains` independent NUTS chains and apply the convergence gates.
/// Chains are seeded from `cfg.seed` with one RNG stream per chain, so the
/// result does not depend on thread scheduling.
pub fn sample_posterior<D: LogDensity + ?Sized>(density: &D, cfg: &SamplerConfig) -> Result<PosteriorSamples> {
    let chains = par::map_indexed(cfg.chains, |c| run_chain(density, cfg, c));
    let chains = chains.into_iter().collect::<Result<Vec<_>>>()?;
    let mut samples = PosteriorSamples { param_names: density.param_names(), chains, diagnostics: Diagnostics::default() };
    samples.compute_diagnostics(cfg);

    let rate = samples.divergence_rate();
    if rate > cfg.max_divergence_rate {
        return Err(InferenceError::DivergenceRateTooHigh {
            rate,
            limit: cfg.max_divergence_rate,
            samples: Box::new(samples),
        });
    }
    if !samples.diagnostics.converged {
        let max_rhat = samples.diagnostics.rhat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min_ess = samples.diagnostics.ess.iter().copied().fold(f64::INFINITY, f64::min);
        return Err(InferenceError::NotConverged { max_rhat, min_ess, samples: Box::new(samples) });
    }
    Ok(samples)
}

/// Sample, and if the gates fail rerun once with twice the draws on a fresh
/// seed stream before giving up.
pub fn sample_with_retry<D: LogDensity + ?Sized>(density: &D, cfg: &SamplerConfig) -> Result<PosteriorSamples> {
    match sample_posterior(density, cfg) {
        Err(e @ (InferenceError::NotConverged { .. } | InferenceError::DivergenceRateTooHigh { .. })) => {
            warn!("{e}; retrying with {} draws", cfg.draws * 2);
            let retry = SamplerConfig {
                draws: cfg.draws * 2,
                warmup: cfg.warmup * 2,
                seed: cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
                ..cfg.clone()
            };
            sample_posterior(density, &retry)
        }
        other => other,
    }
}

/// Posterior mean of the logistic at one feature row.
pub fn predictive_prob(samples: &PosteriorSamples, row: &[f64]) -> f64 {
    let n = samples.n_draws();
    if n == 0 {
        return f64::NAN;
    }
    samples.draws().map(|d| sigmoid(LogisticModel::linear(d, row))).sum::<f64>() / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalFit {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

/// Moment-matched Gaussian per marginal.
pub fn posterior_normal_fit(samples: &PosteriorSamples) -> Vec<NormalFit> {
    samples
        .param_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col = samples.column(j);
            NormalFit { name: name.clone(), mean: stats::mean(&col), sd: stats::std_dev(&col) }
        })
        .collect()
}

/// Histogram of a marginal's draws with the matched normal density at each
/// bin centre: `(centre, empirical density, normal density)`.
pub fn normal_overlay(samples: &PosteriorSamples, j: usize, n_bins: usize) -> Vec<(f64, f64, f64)> {
    let col = samples.column(j);
    if col.is_empty() || n_bins == 0 {
        return Vec::new();
    }
    let (m, sd) = (stats::mean(&col), stats::std_dev(&col));
    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / n_bins as f64).max(1e-12);
    let mut counts = vec![0usize; n_bins];
    for v in &col {
        counts[(((v - lo) / width) as usize).min(n_bins - 1)] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(b, &c)| {
            let x = lo + (b as f64 + 0.5) * width;
            let z = (x - m) / sd;
            let normal = (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
            (x, c as f64 / (col.len() as f64 * width), normal)
        })
        .collect()
}

/// Posterior moments of a 2-parameter density by midpoint quadrature on
/// `[lo, hi]^2`. Returns `(mean, sd)` per parameter.
pub fn grid_moments_2d<D: LogDensity + ?Sized>(density: &D, lo: f64, hi: f64, n: usize) -> [(f64, f64); 2] {
    assert_eq!(density.dim(), 2);
    let h = (hi - lo) / n as f64;
    let mut grad = [0.0; 2];
    let mut lps = Vec::with_capacity(n * n);
    for i in 0..n {
        for k in 0..n {
            let t = [lo + (i as f64 + 0.5) * h, lo + (k as f64 + 0.5) * h];
            lps.push((t, density.log_density_and_grad(&t, &mut grad)));
        }
    }
    let max = lps.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, [0.0; 2], [0.0; 2]);
    for (t, l) in &lps {
        let w = (l - max).exp();
        z += w;
        for d in 0..2 {
            m1[d] += w * t[d];
            m2[d] += w * t[d] * t[d];
        }
    }
    let mut out = [(0.0, 0.0); 2];
    for d in 0..2 {
        let mean = m1[d] / z;
        out[d] = (mean, (m2[d] / z - mean * mean).max(0.0).sqrt());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn synthetic(n: usize, alpha: f64, beta: f64, seed: u64) -> LogisticModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let y: f64 = StandardNormal.sample(&mut rng);
            let p = sigmoid(alpha + beta * y);
            xs.push(u8::from(rng.random::<f64>() < p));
            ys.push(vec![y]);
        }
        LogisticModel::new(xs, ys, vec!["y".into()]).unwrap()
    }

    #[test]
    fn zero_params_give_half() {
        let m = synthetic(37, 0.3, -1.0, 1);
        assert_abs_diff_eq!(m.log_likelihood(&[0.0, 0.0]), 37.0 * 0.5f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn single_trial_log_lik() {
        let m = LogisticModel::new(vec![1], vec![vec![1.0]], vec!["y".into()]).unwrap();
        assert_abs_diff_eq!(m.log_likelihood(&[0.0, 2.0]), -0.126_928_011_042_972_6, epsilon = 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..50 {
            let j = 1 + trial % 4;
            let n = 5 + trial;
            let xs: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let ys: Vec<Vec<f64>> = (0..n).map(|_| (0..j).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let names = (0..j).map(|k| format!("f{k}")).collect();
            let m = LogisticModel::new(xs, ys, names).unwrap();
            let theta: Vec<f64> = (0..=j).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut g = vec![0.0; j + 1];
            m.log_posterior(&theta, &mut g).unwrap();
            let mut scratch = vec![0.0; j + 1];
            for k in 0..=j {
                let h = 1e-5;
                let mut tp = theta.clone();
                tp[k] += h;
                let mut tm = theta.clone();
                tm[k] -= h;
                let fd = (m.log_density_and_grad(&tp, &mut scratch) - m.log_density_and_grad(&tm, &mut scratch)) / (2.0 * h);
                let rel = (fd - g[k]).abs() / g[k].abs().max(1e-3);
                assert!(rel < 1e-6, "trial {trial} k {k}: fd {fd} analytic {}", g[k]);
            }
        }
    }

    #[test]
    fn non_finite_rejected() {
        let m = synthetic(3, 0.0, 1.0, 0);
        let mut g = [0.0; 2];
        assert!(matches!(m.log_posterior(&[f64::NAN, 0.0], &mut g), Err(InferenceError::NonFiniteInput(_))));
        assert!(LogisticModel::new(vec![1], vec![vec![f64::INFINITY]], vec!["y".into()]).is_err());
        assert!(LogisticModel::new(vec![2], vec![vec![0.0]], vec!["y".into()]).is_err());
    }

    #[test]
    fn prior_only_recovers_standard_normal() {
        let m = LogisticModel::new(vec![], vec![], vec!["a".into(), "b".into()]).unwrap();
        let cfg = SamplerConfig { draws: 2500, seed: 11, ..Default::default() };
        let s = sample_posterior(&m, &cfg).unwrap();
        assert_eq!(s.n_draws(), 10_000);
        for (mu, sd) in s.mean().iter().zip(s.sd()) {
            assert!(mu.abs() < 0.05, "mean {mu}");
            assert!((0.95..=1.05).contains(&sd), "sd {sd}");
        }
    }

    #[test]
    fn matches_grid_quadrature() {
        let m = synthetic(20, 0.5, 1.0, 3);
        let cfg = SamplerConfig { draws: 4000, seed: 4, ..Default::default() };
        let s = sample_posterior(&m, &cfg).unwrap();
        let grid = grid_moments_2d(&m, -6.0, 6.0, 400);
        for j in 0..2 {
            assert!((s.mean()[j] - grid[j].0).abs() < 0.05, "mean {j}: {} vs {}", s.mean()[j], grid[j].0);
            assert!((s.sd()[j] - grid[j].1).abs() < 0.05, "sd {j}: {} vs {}", s.sd()[j], grid[j].1);
        }
    }

    #[test]
    fn seed_determinism() {
        let m = synthetic(50, 0.0, 1.0, 8);
        let cfg = SamplerConfig { draws: 200, warmup: 200, seed: 99, ess_min: 0.0, rhat_max: f64::INFINITY, ..Default::default() };
        let a = sample_posterior(&m, &cfg).unwrap();
        let b = sample_posterior(&m, &cfg).unwrap();
        assert_eq!(a, b);
    }

    fn moments_close(a: &PosteriorSamples, b: &PosteriorSamples, sign: [f64; 2]) {
        for j in 0..2 {
            let mc = 3.0 * a.sd()[j] / a.diagnostics.ess[j].sqrt() + 3.0 * b.sd()[j] / b.diagnostics.ess[j].sqrt();
            assert!((a.mean()[j] - sign[j] * b.mean()[j]).abs() < mc + 0.01, "param {j}: {} vs {}", a.mean()[j], b.mean()[j]);
            assert!((a.sd()[j] - b.sd()[j]).abs() < 0.05);
        }
    }

    #[test]
    fn label_flip_equivariance() {
        let m = synthetic(200, 0.4, 1.2, 21);
        let cfg = SamplerConfig { seed: 2, ..Default::default() };
        let base = sample_posterior(&m, &cfg).unwrap();

        // Flipping the outcome alone negates both coefficients.
        let flip_x = LogisticModel::new(m.outcomes.iter().map(|x| 1 - x).collect(), m.features.clone(), m.feature_names.clone())
            .unwrap();
        moments_close(&base, &sample_posterior(&flip_x, &cfg).unwrap(), [-1.0, -1.0]);

        // Flipping outcome and feature together negates only the intercept.
        let flip_xy = LogisticModel::new(
            flip_x.outcomes.clone(),
            m.features.iter().map(|r| r.iter().map(|v| -v).collect()).collect(),
            m.feature_names.clone(),
        )
        .unwrap();
        moments_close(&base, &sample_posterior(&flip_xy, &cfg).unwrap(), [-1.0, 1.0]);
    }

    #[test]
    fn predictive_prob_cases() {
        let names = vec!["alpha".to_string(), "beta".to_string()];
        let zero = PosteriorSamples::from_draws(names.clone(), vec![vec![0.0, 0.0]; 10]);
        assert_eq!(predictive_prob(&zero, &[1.3]), 0.5);
        let sym = PosteriorSamples::from_draws(names.clone(), vec![vec![1.0, 2.0], vec![-1.0, -2.0]]);
        assert_abs_diff_eq!(predictive_prob(&sym, &[0.0]), 0.5, epsilon = 1e-15);
        let one = PosteriorSamples::from_draws(names, vec![vec![0.0, 2.0]]);
        assert_abs_diff_eq!(predictive_prob(&one, &[1.0]), 0.880_797, epsilon = 1e-6);
    }

    #[test]
    fn normal_fit_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<Vec<f64>> = (0..20_000).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
        let s = PosteriorSamples::from_draws(vec!["a".into()], draws.clone());
        let fit = &posterior_normal_fit(&s)[0];
        assert!(fit.mean.abs() < 0.03 && (fit.sd - 1.0).abs() < 0.03);
        assert_eq!(fit.sd, stats::std_dev(&s.column(0)));
        let shifted = PosteriorSamples::from_draws(vec!["a".into()], draws.iter().map(|d| vec![d[0] + 3.0]).collect());
        assert!((posterior_normal_fit(&shifted)[0].mean - 3.0).abs() < 0.03);
        let overlay = normal_overlay(&s, 0, 40);
        let mass: f64 = overlay.iter().map(|(_, e, _)| e).sum::<f64>() * (overlay[1].0 - overlay[0].0);
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn without_feature_drops_column() {
        let m = LogisticModel::new(vec![1, 0], vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec!["a".into(), "b".into()]).unwrap();
        let r = m.without_feature(0);
        assert_eq!(r.features, vec![vec![2.0], vec![4.0]]);
        assert_eq!(r.feature_names, vec!["b".to_string()]);
    }
}
