//! Split-R̂ and multi-chain effective sample size.

use crate::stats;

/// Split each chain in half, dropping the middle draw of odd-length chains.
fn split_chains(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Potential scale reduction on split chains.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let split = split_chains(chains);
    let n = split.first().map_or(0, Vec::len);
    if n < 2 || split.len() < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = split.iter().map(|c| stats::mean(c)).collect();
    let w = stats::mean(&split.iter().map(|c| stats::variance(c)).collect::<Vec<_>>());
    let b = n as f64 * stats::variance(&means);
    if w <= 0.0 {
        // Constant chains: agree exactly or not at all.
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1) as f64 / n as f64 * w + b / n as f64;
    (var_plus / w).sqrt()
}

/// Biased autocovariance at `lag`.
fn autocov(x: &[f64], mean: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>() / n as f64
}

/// Effective sample size over split chains with Geyer's initial monotone
/// sequence truncation.
pub fn ess(chains: &[&[f64]]) -> f64 {
    let split = split_chains(chains);
    let m = split.len();
    let n = split.first().map_or(0, Vec::len);
    if n < 4 {
        return f64::NAN;
    }
    let means: Vec<f64> = split.iter().map(|c| stats::mean(c)).collect();
    let acov = |lag: usize| -> f64 {
        split.iter().zip(&means).map(|(c, &mu)| autocov(c, mu, lag)).sum::<f64>() / m as f64
    };
    let acov0 = acov(0);
    let mean_var = acov0 * n as f64 / (n - 1) as f64;
    let mut var_plus = mean_var * (n - 1) as f64 / n as f64;
    if m > 1 {
        var_plus += stats::variance(&means);
    }
    if var_plus <= 0.0 {
        return (m * n) as f64;
    }
    let rho = |lag: usize| 1.0 - (mean_var - acov(lag)) / var_plus;

    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut t = 1;
    while t + 5 < n && even + odd > 0.0 {
        even = rho(t + 1);
        odd = rho(t + 2);
        if even + odd >= 0.0 {
            rho_hat[t + 1] = even;
            rho_hat[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 && max_t + 1 < n {
        rho_hat[max_t + 1] = even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        let prev = rho_hat[t - 1] + rho_hat[t];
        if rho_hat[t + 1] + rho_hat[t + 2] > prev {
            rho_hat[t + 1] = prev / 2.0;
            rho_hat[t + 2] = prev / 2.0;
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tail = if max_t + 1 < n { rho_hat[max_t + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho_hat[..=max_t.min(n - 1)].iter().sum::<f64>() + tail).max(1.0 / total.log10());
    total / tau
}
