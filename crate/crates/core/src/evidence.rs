//! Marginal likelihood by bridge sampling, and leave-one-feature-out
//! importance as log-odds of model evidences.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{self, diagnostics, InferenceError, LogDensity, LogisticModel, PosteriorSamples, SamplerConfig};
use crate::par;
use crate::stats::{self, log_add_exp, log_sum_exp};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error)]
pub enum EvidenceError {
    #[error("bridge iteration did not converge in {0} iterations")]
    BridgeNotConverged(usize),
    #[error("proposal overlaps the posterior poorly (importance ESS fraction {overlap:.2e} < {floor})")]
    ProposalMismatch { overlap: f64, floor: f64 },
    #[error("need at least {need} posterior draws per half, got {got}")]
    TooFewDraws { need: usize, got: usize },
    #[error("proposal covariance is not positive definite")]
    SingularProposal,
    #[error("leave-one-out needs at least 2 features, got {0}")]
    TooFewFeatures(usize),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

pub type Result<T> = std::result::Result<T, EvidenceError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvidenceConfig {
    pub seed: u64,
    /// Stop when successive log-evidence values differ by less than this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub overlap_floor: f64,
    /// Fit the proposal on the second half and estimate on the first.
    pub swap_halves: bool,
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        Self { seed: 0, tolerance: 1e-10, max_iterations: 1000, overlap_floor: 0.01, swap_halves: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate {
    /// Nats.
    pub log_evidence: f64,
    /// Expected relative squared error of the evidence.
    pub rel_mse_proxy: f64,
    /// Approximate standard error of `log_evidence`.
    pub mc_se: f64,
    pub n_iterations: usize,
    pub model_tag: Vec<String>,
    /// Importance-sampling ESS fraction of proposal draws.
    pub overlap: f64,
}

/// Multivariate normal fitted by moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalProposal {
    pub mean: Vec<f64>,
    /// Lower Cholesky factor of the covariance, row-major.
    pub chol: Vec<Vec<f64>>,
}

fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

impl NormalProposal {
    pub fn fit(draws: &[&[f64]]) -> Result<Self> {
        let n = draws.len();
        let d = draws.first().map_or(0, |x| x.len());
        if n < 2 {
            return Err(EvidenceError::TooFewDraws { need: 2, got: n });
        }
        let mean: Vec<f64> = (0..d).map(|j| draws.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
        let mut cov = vec![vec![0.0; d]; d];
        for x in draws {
            for i in 0..d {
                for j in 0..=i {
                    cov[i][j] += (x[i] - mean[i]) * (x[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..=i {
                cov[i][j] /= (n - 1) as f64;
                cov[j][i] = cov[i][j];
            }
        }
        let mut jitter = 0.0;
        for _ in 0..8 {
            let mut c = cov.clone();
            for (i, row) in c.iter_mut().enumerate() {
                row[i] += jitter;
            }
            if let Some(chol) = cholesky(&c) {
                return Ok(Self { mean, chol });
            }
            jitter = if jitter == 0.0 { 1e-10 } else { jitter * 100.0 };
        }
        Err(EvidenceError::SingularProposal)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut z = vec![0.0; d];
        for i in 0..d {
            let s: f64 = (0..i).map(|k| self.chol[i][k] * z[k]).sum();
            z[i] = (x[i] - self.mean[i] - s) / self.chol[i][i];
        }
        let log_det: f64 = (0..d).map(|i| self.chol[i][i].ln()).sum();
        -0.5 * d as f64 * LN_2PI - log_det - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        (0..d).map(|i| self.mean[i] + (0..=i).map(|k| self.chol[i][k] * z[k]).sum::<f64>()).collect()
    }
}

fn log_q<D: LogDensity + ?Sized>(density: &D, x: &[f64], grad: &mut [f64]) -> f64 {
    let v = density.log_density_and_grad(x, grad);
    if v.is_nan() { f64::NEG_INFINITY } else { v }
}

/// Bridge-sampling estimate of `log p(D)` for the unnormalised posterior
/// `density`, using a normal proposal fitted to one half of every chain and
/// the other half for estimation.
pub fn bridge_evidence<D: LogDensity + ?Sized>(
    posterior: &PosteriorSamples,
    density: &D,
    cfg: &EvidenceConfig,
) -> Result<EvidenceEstimate> {
    let dim = density.dim();
    let model_tag = posterior.param_names.clone();
    if dim == 0 {
        return Ok(EvidenceEstimate {
            log_evidence: density.log_density_and_grad(&[], &mut []),
            rel_mse_proxy: 0.0,
            mc_se: 0.0,
            n_iterations: 0,
            model_tag,
            overlap: 1.0,
        });
    }

    // Proposal half and estimation half, kept per chain for the ESS.
    let mut fit_half: Vec<&[f64]> = Vec::new();
    let mut est_chains: Vec<Vec<&[f64]>> = Vec::new();
    for c in &posterior.chains {
        let h = c.draws.len() / 2;
        let (a, b) = c.draws.split_at(h);
        let (fit, est) = if cfg.swap_halves { (&b[..h], a) } else { (a, &b[..h]) };
        fit_half.extend(fit.iter().map(Vec::as_slice));
        est_chains.push(est.iter().map(Vec::as_slice).collect());
    }
    let n1: usize = est_chains.iter().map(Vec::len).sum();
    if fit_half.len() < dim + 2 || n1 < 4 {
        return Err(EvidenceError::TooFewDraws { need: dim + 2, got: fit_half.len().min(n1) });
    }
    let proposal = NormalProposal::fit(&fit_half)?;

    let mut grad = vec![0.0; dim];
    let l1: Vec<f64> = est_chains
        .iter()
        .flatten()
        .map(|x| log_q(density, x, &mut grad) - proposal.log_density(x))
        .collect();
    let n2 = n1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1 << 32);
    let l2: Vec<f64> = (0..n2)
        .map(|_| {
            let x = proposal.sample(&mut rng);
            log_q(density, &x, &mut grad) - proposal.log_density(&x)
        })
        .collect();

    let lse2 = log_sum_exp(&l2);
    let overlap = if lse2.is_finite() {
        let w2 = log_sum_exp(&l2.iter().map(|v| 2.0 * v).collect::<Vec<_>>());
        (2.0 * lse2 - w2).exp() / n2 as f64
    } else {
        0.0
    };
    if overlap < cfg.overlap_floor {
        return Err(EvidenceError::ProposalMismatch { overlap, floor: cfg.overlap_floor });
    }

    let lstar = stats::median(&l1);
    let (s1, s2) = (n1 as f64 / (n1 + n2) as f64, n2 as f64 / (n1 + n2) as f64);
    let (ls1, ls2) = (s1.ln(), s2.ln());
    let a: Vec<f64> = l2.iter().map(|v| v - lstar).collect();
    let b: Vec<f64> = l1.iter().map(|v| v - lstar).collect();

    // Importance-sampling start value.
    let mut log_r = lse2 - (n2 as f64).ln() - lstar;
    let mut num = vec![0.0; n2];
    let mut den = vec![0.0; n1];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        iterations += 1;
        for (o, &ai) in num.iter_mut().zip(&a) {
            *o = ai - log_add_exp(ls1 + ai, ls2 + log_r);
        }
        for (o, &bi) in den.iter_mut().zip(&b) {
            *o = -log_add_exp(ls1 + bi, ls2 + log_r);
        }
        let next = (n1 as f64 / n2 as f64).ln() + log_sum_exp(&num) - log_sum_exp(&den);
        let change = (next - log_r).abs();
        log_r = next;
        if change < cfg.tolerance {
            converged = true;
            break;
        }
    }
    if !converged || !log_r.is_finite() {
        return Err(EvidenceError::BridgeNotConverged(iterations));
    }
    let log_evidence = log_r + lstar;

    // Relative mean squared error of the evidence estimate.
    let f = |l: f64| {
        let e = (l - log_evidence).exp();
        e / (s1 * e + s2)
    };
    let f1: Vec<f64> = l2.iter().map(|&l| f(l)).collect();
    let f2_chains: Vec<Vec<f64>> = {
        let mut k = 0;
        est_chains
            .iter()
            .map(|c| {
                let v = l1[k..k + c.len()].iter().map(|&l| f(l)).collect();
                k += c.len();
                v
            })
            .collect()
    };
    let f2: Vec<f64> = f2_chains.iter().flatten().copied().collect();
    let refs: Vec<&[f64]> = f2_chains.iter().map(Vec::as_slice).collect();
    let ess_f2 = diagnostics::ess(&refs);
    let ess_f2 = if ess_f2.is_finite() && ess_f2 > 0.0 { ess_f2.min(n1 as f64 * 1.5) } else { n1 as f64 };
    let rel = |v: &[f64]| stats::variance(v) / stats::mean(v).powi(2);
    let re2 = rel(&f1) / n2 as f64 + rel(&f2) / ess_f2;

    Ok(EvidenceEstimate {
        log_evidence,
        rel_mse_proxy: re2,
        mc_se: re2.max(0.0).sqrt(),
        n_iterations: iterations,
        model_tag,
        overlap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature_name: String,
    /// `log p(D | full) - log p(D | without feature)`, nats.
    pub log_odds: f64,
    pub log10_odds: f64,
    pub mc_se: f64,
    /// Set when the reduced model could not be fitted or bridged.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub full: EvidenceEstimate,
    pub features: Vec<FeatureImportance>,
}

fn fit_and_bridge(model: &LogisticModel, sampler: &SamplerConfig, cfg: &EvidenceConfig) -> Result<EvidenceEstimate> {
    let samples = inference::sample_with_retry(model, sampler)?;
    bridge_evidence(&samples, model, cfg)
}

/// Fit the full model and every leave-one-feature-out model, returning the
/// evidence log-odds per left-out feature. Positive means the feature helps.
pub fn loo_importance(model: &LogisticModel, sampler: &SamplerConfig, cfg: &EvidenceConfig) -> Result<ImportanceReport> {
    let j = model.n_features();
    if j < 2 {
        return Err(EvidenceError::TooFewFeatures(j));
    }
    let full = fit_and_bridge(model, sampler, cfg)?;
    let reduced = par::map_indexed(j, |k| {
        let sub_sampler = SamplerConfig { seed: sampler.seed.wrapping_add(k as u64 + 1), ..sampler.clone() };
        fit_and_bridge(&model.without_feature(k), &sub_sampler, cfg)
    });
    let features = reduced
        .into_iter()
        .zip(&model.feature_names)
        .map(|(r, name)| match r {
            Ok(e) => {
                let lo = full.log_evidence - e.log_evidence;
                FeatureImportance {
                    feature_name: name.clone(),
                    log_odds: lo,
                    log10_odds: lo / std::f64::consts::LN_10,
                    mc_se: (full.mc_se.powi(2) + e.mc_se.powi(2)).sqrt(),
                    error: None,
                }
            }
            Err(e) => {
                warn!("leaving out {name}: {e}");
                FeatureImportance {
                    feature_name: name.clone(),
                    log_odds: f64::NAN,
                    log10_odds: f64::NAN,
                    mc_se: f64::NAN,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();
    Ok(ImportanceReport { full, features })
}

/// Densities with closed-form evidence, used to check the estimator.
pub mod oracle {
    use super::LN_2PI;
    use crate::inference::LogDensity;
    use crate::stats::{log_sigmoid, sigmoid};

    /// Bernoulli rate with a uniform prior, sampled on the logit scale.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct BetaBernoulliLogit {
        pub ones: u32,
        pub zeros: u32,
    }

    impl BetaBernoulliLogit {
        /// `log B(ones + 1, zeros + 1)`.
        pub fn log_evidence(&self) -> f64 {
            let lf = |n: u32| (1..=n).map(|k| (k as f64).ln()).sum::<f64>();
            lf(self.ones) + lf(self.zeros) - lf(self.ones + self.zeros + 1)
        }
    }

    impl LogDensity for BetaBernoulliLogit {
        fn dim(&self) -> usize {
            1
        }

        fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
            // Likelihood times the uniform prior's logit Jacobian p (1 - p).
            let (a, b) = (self.ones as f64 + 1.0, self.zeros as f64 + 1.0);
            let t = theta[0];
            grad[0] = a * sigmoid(-t) - b * sigmoid(t);
            a * log_sigmoid(t) + b * log_sigmoid(-t)
        }
    }

    /// `y_i ~ N(mu, 1)`, `mu ~ N(0, 1)`.
    #[derive(Debug, Clone, PartialEq)]
    pub struct GaussianMean {
        pub ys: Vec<f64>,
    }

    impl GaussianMean {
        pub fn log_evidence(&self) -> f64 {
            let n = self.ys.len() as f64;
            let s: f64 = self.ys.iter().sum();
            let ss: f64 = self.ys.iter().map(|y| y * y).sum();
            -0.5 * n * LN_2PI - 0.5 * (1.0 + n).ln() - 0.5 * (ss - s * s / (1.0 + n))
        }
    }

    impl LogDensity for GaussianMean {
        fn dim(&self) -> usize {
            1
        }

        fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
            let mu = theta[0];
            grad[0] = self.ys.iter().map(|y| y - mu).sum::<f64>() - mu;
            let n = self.ys.len() as f64;
            -0.5 * (n + 1.0) * LN_2PI - 0.5 * self.ys.iter().map(|y| (y - mu).powi(2)).sum::<f64>() - 0.5 * mu * mu
        }
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn sampler(seed: u64) -> SamplerConfig {
        SamplerConfig { seed, ..Default::default() }
    }

    #[test]
    fn beta_bernoulli_constant() {
        assert_abs_diff_eq!(BetaBernoulliLogit { ones: 3, zeros: 7 }.log_evidence(), -7.18539, epsilon = 1e-5);
    }

    #[test]
    fn beta_bernoulli_bridge() {
        let m = BetaBernoulliLogit { ones: 3, zeros: 7 };
        let s = inference::sample_posterior(&m, &sampler(1)).unwrap();
        let e = bridge_evidence(&s, &m, &EvidenceConfig::default()).unwrap();
        assert!((e.log_evidence - m.log_evidence()).abs() < 0.05, "{e:?}");
        assert!(e.mc_se < 0.05);
    }

    #[test]
    fn gaussian_mean_bridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ys: Vec<f64> = (0..10).map(|_| 0.7 + rng.sample::<f64, _>(StandardNormal)).collect();
        let m = GaussianMean { ys };
        let s = inference::sample_posterior(&m, &sampler(3)).unwrap();
        let e = bridge_evidence(&s, &m, &EvidenceConfig::default()).unwrap();
        assert!((e.log_evidence - m.log_evidence()).abs() < 0.05, "{} vs {}", e.log_evidence, m.log_evidence());
    }

    #[test]
    fn zero_data_evidence_is_one() {
        let m = LogisticModel::new(vec![], vec![], vec!["a".into()]).unwrap();
        let s = inference::sample_posterior(&m, &sampler(4)).unwrap();
        let e = bridge_evidence(&s, &m, &EvidenceConfig::default()).unwrap();
        assert!(e.log_evidence.abs() < 0.05, "{e:?}");
    }

    #[test]
    fn split_half_stability() {
        let m = BetaBernoulliLogit { ones: 3, zeros: 7 };
        let s = inference::sample_posterior(&m, &sampler(5)).unwrap();
        let a = bridge_evidence(&s, &m, &EvidenceConfig::default()).unwrap();
        let b = bridge_evidence(&s, &m, &EvidenceConfig { swap_halves: true, ..Default::default() }).unwrap();
        assert!((a.log_evidence - b.log_evidence).abs() < 0.1);
    }

    #[test]
    fn mismatched_proposal_detected() {
        // A posterior sample set far from where the density lives.
        let m = GaussianMean { ys: vec![0.0; 10] };
        let draws: Vec<Vec<f64>> = (0..2000).map(|i| vec![40.0 + (i % 7) as f64 * 0.01]).collect();
        let s = PosteriorSamples::from_draws(vec!["mu".into()], draws);
        let err = bridge_evidence(&s, &m, &EvidenceConfig::default());
        assert!(matches!(err, Err(EvidenceError::ProposalMismatch { .. }) | Err(EvidenceError::BridgeNotConverged(_))), "{err:?}");
    }

    #[test]
    fn proposal_density_normalised() {
        let p = NormalProposal { mean: vec![1.0, -1.0], chol: vec![vec![2.0, 0.0], vec![0.5, 1.0]] };
        // Midpoint quadrature over a wide box.
        let h = 0.05;
        let mut total = 0.0;
        let mut x = -15.0;
        while x < 17.0 {
            let mut y = -12.0;
            while y < 10.0 {
                total += p.log_density(&[x, y]).exp() * h * h;
                y += h;
            }
            x += h;
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn too_few_features() {
        let m = LogisticModel::new(vec![1], vec![vec![0.0]], vec!["a".into()]).unwrap();
        assert!(matches!(
            loo_importance(&m, &sampler(0), &EvidenceConfig::default()),
            Err(EvidenceError::TooFewFeatures(1))
        ));
    }
}
