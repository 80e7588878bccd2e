//! Independently implemented oracles shared by the integration suites.
//!
//! Nothing here reuses the library's softmax or log-sum-exp plumbing: the
//! brute-force likelihood enumerates sense assignments directly, the
//! gradient oracle is a central finite difference, and the sampler oracle
//! is a dense quadrature over the one free likelihood direction of the
//! K=1, V=2 model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use temper::model::{Corpus, ModelConfig, ParamState, Snippet};
use temper::sampler::PosteriorDraws;

/// Plain normalised exponentials over the last axis, written naively.
fn naive_softmax(row: &[f64]) -> Vec<f64> {
    let total: f64 = row.iter().map(|x| x.exp()).sum();
    row.iter().map(|x| x.exp() / total).collect()
}

/// p(W) by summing the joint over all K^D sense assignments.
pub fn brute_force_likelihood(corpus: &Corpus, params: &ParamState) -> f64 {
    let (g, t, k) = params.phi.dim();
    let (_, _, v) = params.psi.dim();
    let d = corpus.snippets.len();

    let mut phi_tilde = vec![vec![vec![0.0; k]; t]; g];
    for gi in 0..g {
        for ti in 0..t {
            let row: Vec<f64> = (0..k).map(|ki| params.phi[[gi, ti, ki]]).collect();
            phi_tilde[gi][ti] = naive_softmax(&row);
        }
    }
    let mut psi_tilde = vec![vec![vec![0.0; v]; t]; k];
    for ki in 0..k {
        for ti in 0..t {
            let row: Vec<f64> = (0..v).map(|vi| params.psi[[ki, ti, vi]]).collect();
            psi_tilde[ki][ti] = naive_softmax(&row);
        }
    }

    let mut total = 0.0;
    let assignments = k.pow(d as u32);
    for code in 0..assignments {
        let mut joint = 1.0;
        let mut c = code;
        for snippet in &corpus.snippets {
            let z = c % k;
            c /= k;
            joint *= phi_tilde[snippet.genre][snippet.time][z];
            for &w in &snippet.words {
                joint *= psi_tilde[z][snippet.time][w];
            }
        }
        total += joint;
    }
    total
}

/// Central finite difference of the tempered log-posterior.
pub fn fd_gradient(
    corpus: &Corpus,
    params: &ParamState,
    lambda: f64,
    config: &ModelConfig,
    step: f64,
) -> Vec<f64> {
    let flat = params.flatten();
    let (g, t, k) = params.phi.dim();
    let (_, _, v) = params.psi.dim();
    let phi_shape = (g, t, k);
    let psi_shape = (k, t, v);
    let eval = |x: &[f64]| {
        let p = ParamState::from_flat(x, phi_shape, psi_shape).unwrap();
        temper::model::log_posterior_unnorm(corpus, &p, lambda, config).unwrap()
    };
    (0..flat.len())
        .map(|i| {
            let mut hi = flat.clone();
            let mut lo = flat.clone();
            hi[i] += step;
            lo[i] -= step;
            (eval(&hi) - eval(&lo)) / (2.0 * step)
        })
        .collect()
}

/// A random small instance: corpus plus a random unconstrained state.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    max_snippets: usize,
    max_senses: usize,
    max_vocab: usize,
) -> (Corpus, ModelConfig, ParamState) {
    let d = rng.random_range(1..=max_snippets);
    let k = rng.random_range(1..=max_senses);
    let v = rng.random_range(2..=max_vocab);
    let g = rng.random_range(1..=2);
    let t = rng.random_range(1..=2);
    let snippets = (0..d)
        .map(|_| {
            let len = rng.random_range(1..=3);
            Snippet {
                words: (0..len).map(|_| rng.random_range(0..v)).collect(),
                genre: rng.random_range(0..g),
                time: rng.random_range(0..t),
            }
        })
        .collect();
    let corpus = Corpus {
        snippets,
        vocab_size: v,
        num_genres: g,
        num_times: t,
        true_labels: None,
        num_true_senses: None,
    };
    let config = ModelConfig { num_senses: k, ..ModelConfig::default() };
    let mut params = ParamState::zeros(g, t, k, v);
    for x in params.phi.iter_mut() {
        *x = 3.0 * (rng.random::<f64>() - 0.5);
    }
    for x in params.psi.iter_mut() {
        *x = 3.0 * (rng.random::<f64>() - 0.5);
    }
    (corpus, config, params)
}

pub struct Moments {
    pub mean: f64,
    pub sd: f64,
}

fn log_sigmoid(x: f64) -> f64 {
    if x < -33.0 {
        x
    } else {
        -(-x).exp().ln_1p()
    }
}

/// Dense-grid moments of the word-logit contrast c = psi_0 - psi_1 under
/// density proportional to N(c; 0, 2 sd_psi^2) * [sigma(c)^n0 (1-sigma(c))^n1]^lambda.
/// For the K=1, V=2, G=T=1 model this is the exact posterior marginal:
/// the likelihood depends on psi only through c, and the prior on c is
/// N(0, 2 sd_psi^2) independent of the orthogonal direction psi_0 + psi_1.
pub fn contrast_quadrature(n0: u64, n1: u64, lambda: f64, sd_psi: f64, points: usize) -> Moments {
    let prior_sd = 2.0_f64.sqrt() * sd_psi;
    let lim = 12.0 * prior_sd;
    let width = 2.0 * lim / points as f64;
    let log_f: Vec<(f64, f64)> = (0..points)
        .map(|i| {
            let c = -lim + (i as f64 + 0.5) * width;
            let log_prior = -0.5 * (c / prior_sd).powi(2);
            let log_lik = n0 as f64 * log_sigmoid(c) + n1 as f64 * log_sigmoid(-c);
            (c, log_prior + lambda * log_lik)
        })
        .collect();
    let max = log_f.iter().map(|&(_, l)| l).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for &(c, l) in &log_f {
        let f = (l - max).exp();
        z += f;
        m1 += c * f;
        m2 += c * c * f;
    }
    let mean = m1 / z;
    let var = m2 / z - mean * mean;
    Moments { mean, sd: var.sqrt() }
}

/// Per-chain traces of the contrast psi[0,0,0] - psi[0,0,1].
pub fn contrast_chains(draws: &PosteriorDraws) -> Vec<Vec<f64>> {
    let mut chains = vec![Vec::with_capacity(draws.draws_per_chain); draws.num_chains];
    for (state, &chain) in draws.draws.iter().zip(&draws.chain_ids) {
        chains[chain].push(state.psi[[0, 0, 0]] - state.psi[[0, 0, 1]]);
    }
    chains
}

pub fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
