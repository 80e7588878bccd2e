//! Split R-hat and effective sample size on scalar traces.
//!
//! Chains are split in half; R-hat compares between- and within-sequence
//! variance across the split halves, and ESS combines within-sequence
//! autocorrelations using Geyer's initial positive sequence.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct ScalarSummary {
    pub name: String,
    pub ess: f64,
    pub rhat: f64,
    /// True when the trace is (numerically) constant, making the
    /// autocorrelation estimates vacuous.
    pub degenerate: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceSummary {
    pub scalars: Vec<ScalarSummary>,
    pub num_chains: usize,
    pub draws_per_chain: usize,
}

impl ConvergenceSummary {
    pub fn worst_rhat(&self) -> f64 {
        self.scalars.iter().map(|s| s.rhat).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.scalars.iter().map(|s| s.ess).fold(f64::INFINITY, f64::min)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Split each chain in half, dropping one trailing element of odd chains.
fn split_halves(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[half..2 * half].to_vec());
    }
    out
}

/// Biased-at-lag autocovariance (1/n normalisation), direct evaluation.
fn autocovariance(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    let m = mean(xs);
    let mut acc = 0.0;
    for i in 0..n - lag {
        acc += (xs[i] - m) * (xs[i + lag] - m);
    }
    acc / n as f64
}

/// Split R-hat and ESS for one scalar across chains (each of equal length).
pub fn scalar_summary(name: &str, chains: &[Vec<f64>]) -> Result<ScalarSummary> {
    if chains.len() < 2 {
        return Err(Error::config("R-hat requires at least 2 chains"));
    }
    if chains.iter().any(|c| c.len() < 4) {
        return Err(Error::config("R-hat requires at least 4 draws per chain"));
    }
    let len = chains[0].len();
    if chains.iter().any(|c| c.len() != len) {
        return Err(Error::config("chains must have equal lengths"));
    }

    let seqs = split_halves(chains);
    let m = seqs.len();
    let n = seqs[0].len();
    let means: Vec<f64> = seqs.iter().map(|s| mean(s)).collect();
    let vars: Vec<f64> = seqs.iter().zip(&means).map(|(s, &mu)| sample_var(s, mu)).collect();

    let w = mean(&vars);
    let grand = mean(&means);
    let b = n as f64 / (m as f64 - 1.0)
        * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let var_hat = (n as f64 - 1.0) / n as f64 * w + b / n as f64;

    let degenerate = var_hat < f64::MIN_POSITIVE || !var_hat.is_finite();
    if degenerate {
        // Constant everywhere: the estimand is pinned; report neutrally.
        return Ok(ScalarSummary {
            name: name.to_string(),
            ess: (m * n) as f64,
            rhat: 1.0,
            degenerate: true,
        });
    }
    let rhat = if w < f64::MIN_POSITIVE {
        // Constant within chains but distinct across: no mixing at all.
        f64::INFINITY
    } else {
        (var_hat / w).sqrt()
    };

    // Combined autocorrelations rho_t = 1 - (W - mean_c acov_c,t) / var_hat,
    // truncated by Geyer's initial positive sequence on paired sums.
    let max_lag = n - 1;
    let mut rho = Vec::with_capacity(max_lag + 1);
    rho.push(1.0);
    for t in 1..=max_lag {
        let acov_t = seqs.iter().map(|s| autocovariance(s, t)).sum::<f64>() / m as f64;
        rho.push(1.0 - (w - acov_t) / var_hat);
    }

    let mut tau = rho[0];
    let mut t = 1;
    while t + 1 < rho.len() {
        let pair = rho[t] + rho[t + 1];
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        t += 2;
    }
    let ess = ((m * n) as f64 / tau).min((m * n) as f64).max(1e-12);

    Ok(ScalarSummary { name: name.to_string(), ess, rhat, degenerate: false })
}
