//! Tempered-posterior sampling and draw post-processing.
//!
//! `sample_posterior` runs independent HMC chains against the tempered
//! log-posterior, one seeded RNG stream per chain, and concatenates the
//! post-warmup draws chain-major. `relabel_draws` undoes label switching
//! with a pivot permutation match, after which posterior means and the
//! PPC diagnostics are meaningful.

pub mod diagnostics;
pub mod hmc;
pub mod io;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    log_posterior_and_grad, Corpus, ModelConfig, ParamState, ProbParams,
};
use crate::rng::{derive_seed, stream};

use diagnostics::{scalar_summary, ConvergenceSummary};
use hmc::{run_chain, ChainRun, HmcConfig, LogDensity};

/// Trajectories whose energy error exceeds this are counted as divergent.
const MAX_ENERGY_ERROR: f64 = 1000.0;

/// Divergence fraction above which a metadata warning is raised.
const DIVERGENCE_WARN_FRACTION: f64 = 0.05;

/// Initial logits are drawn N(0, INIT_SD^2) per chain.
const INIT_SD: f64 = 0.1;

/// Seed of the fixed parameter projection monitored for convergence.
/// Constant so the projection is comparable across runs.
const PROJECTION_SEED: u64 = 0x70726f6a;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    /// Post-warmup draws per chain.
    pub num_draws: usize,
    pub num_warmup: usize,
    pub num_chains: usize,
    /// Inclusive bounds of the jittered leapfrog step count.
    pub leapfrog_min: usize,
    pub leapfrog_max: usize,
    pub target_accept: f64,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            num_draws: 1000,
            num_warmup: 1000,
            num_chains: 4,
            leapfrog_min: 8,
            leapfrog_max: 24,
            target_accept: 0.8,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_draws == 0 {
            return Err(Error::config("num_draws must be >= 1"));
        }
        if self.num_chains == 0 {
            return Err(Error::config("num_chains must be >= 1"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::config("target_accept must be in (0, 1)"));
        }
        if self.leapfrog_min == 0 || self.leapfrog_min > self.leapfrog_max {
            return Err(Error::config(
                "leapfrog bounds must satisfy 1 <= leapfrog_min <= leapfrog_max",
            ));
        }
        Ok(())
    }
}

/// Post-warmup draws from all chains, chain-major, plus sampling metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    pub draws: Vec<ParamState>,
    /// Tempered log-posterior value at each draw.
    pub log_posts: Vec<f64>,
    pub chain_ids: Vec<usize>,
    pub lambda: f64,
    pub seed: u64,
    /// Realized post-warmup acceptance fraction across chains.
    pub accept_rate: f64,
    pub divergence_rate: f64,
    pub divergence_warning: bool,
    /// Frozen step size per chain.
    pub step_sizes: Vec<f64>,
    pub num_chains: usize,
    pub draws_per_chain: usize,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn num_senses(&self) -> usize {
        self.draws[0].num_senses()
    }
}

/// Adapter exposing the tempered posterior as a flat-vector log-density.
struct PosteriorTarget<'a> {
    corpus: &'a Corpus,
    config: &'a ModelConfig,
    lambda: f64,
    phi_shape: (usize, usize, usize),
    psi_shape: (usize, usize, usize),
}

impl LogDensity for PosteriorTarget<'_> {
    fn dim(&self) -> usize {
        let (g, t, k) = self.phi_shape;
        let (k2, t2, v) = self.psi_shape;
        g * t * k + k2 * t2 * v
    }

    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let params = ParamState::from_flat(x, self.phi_shape, self.psi_shape)?;
        let (value, grad) =
            log_posterior_and_grad(self.corpus, &params, self.lambda, self.config)?;
        Ok((value, grad.flatten()))
    }
}

/// Draw `num_chains * num_draws` samples from the tempered posterior.
///
/// Each chain owns the stream `stream(derive_seed(mcmc.seed, chain_id))`,
/// so adding chains never perturbs existing ones. Chains run in parallel;
/// results are identical for any worker count.
pub fn sample_posterior(
    corpus: &Corpus,
    config: &ModelConfig,
    lambda: f64,
    mcmc: &McmcConfig,
) -> Result<PosteriorDraws> {
    corpus.validate()?;
    config.validate()?;
    mcmc.validate()?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(format!(
            "learning rate must be in [0, 1], got {lambda}"
        )));
    }
    if corpus.is_empty() {
        return Err(Error::data("cannot sample from an empty corpus"));
    }

    let phi_shape = (corpus.num_genres, corpus.num_times, config.num_senses);
    let psi_shape = (config.num_senses, corpus.num_times, corpus.vocab_size);
    let target = PosteriorTarget { corpus, config, lambda, phi_shape, psi_shape };
    let hmc_cfg = HmcConfig {
        num_draws: mcmc.num_draws,
        num_warmup: mcmc.num_warmup,
        leapfrog_range: (mcmc.leapfrog_min, mcmc.leapfrog_max),
        target_accept: mcmc.target_accept,
        max_energy_error: MAX_ENERGY_ERROR,
    };
    let dim = target.dim();

    let runs: Vec<Result<ChainRun>> = (0..mcmc.num_chains)
        .into_par_iter()
        .map(|chain| {
            let mut rng = stream(derive_seed(mcmc.seed, chain as u64));
            let init: Vec<f64> = (0..dim)
                .map(|_| INIT_SD * rng.sample::<f64, _>(StandardNormal))
                .collect();
            run_chain(&target, &init, &hmc_cfg, &mut rng)
        })
        .collect();

    let mut draws = Vec::with_capacity(mcmc.num_chains * mcmc.num_draws);
    let mut log_posts = Vec::with_capacity(draws.capacity());
    let mut chain_ids = Vec::with_capacity(draws.capacity());
    let mut step_sizes = Vec::with_capacity(mcmc.num_chains);
    let mut accepted = 0usize;
    let mut divergences = 0usize;
    for (chain, run) in runs.into_iter().enumerate() {
        let run = run?;
        accepted += run.accepted;
        divergences += run.divergences;
        step_sizes.push(run.step_size);
        for (pos, lp) in run.positions.iter().zip(&run.log_densities) {
            let params = ParamState::from_flat(pos, phi_shape, psi_shape)?;
            if !params.is_finite() || !lp.is_finite() {
                return Err(Error::numeric("sampler produced a non-finite draw"));
            }
            draws.push(params);
            log_posts.push(*lp);
            chain_ids.push(chain);
        }
    }

    let total = (mcmc.num_chains * mcmc.num_draws) as f64;
    let divergence_rate = divergences as f64 / total;
    Ok(PosteriorDraws {
        draws,
        log_posts,
        chain_ids,
        lambda,
        seed: mcmc.seed,
        accept_rate: accepted as f64 / total,
        divergence_rate,
        divergence_warning: divergence_rate > DIVERGENCE_WARN_FRACTION,
        step_sizes,
        num_chains: mcmc.num_chains,
        draws_per_chain: mcmc.num_draws,
    })
}

/// Enumerate all permutations of `0..k`, calling `f` on each.
fn for_each_permutation(k: usize, f: &mut impl FnMut(&[usize])) {
    fn recurse(perm: &mut Vec<usize>, used: &mut [bool], f: &mut impl FnMut(&[usize])) {
        let k = used.len();
        if perm.len() == k {
            f(perm);
            return;
        }
        for i in 0..k {
            if !used[i] {
                used[i] = true;
                perm.push(i);
                recurse(perm, used, f);
                perm.pop();
                used[i] = false;
            }
        }
    }
    recurse(&mut Vec::with_capacity(k), &mut vec![false; k], f);
}

/// Relabel senses so draw sense `j` moves to slot `perm[j]`.
fn apply_permutation(params: &ParamState, perm: &[usize]) -> ParamState {
    let (g_dim, t_dim, k) = params.phi.dim();
    let (_, _, v_dim) = params.psi.dim();
    let mut out = ParamState::zeros(g_dim, t_dim, k, v_dim);
    for j in 0..k {
        let m = perm[j];
        for g in 0..g_dim {
            for t in 0..t_dim {
                out.phi[[g, t, m]] = params.phi[[g, t, j]];
            }
        }
        for t in 0..t_dim {
            for v in 0..v_dim {
                out.psi[[m, t, v]] = params.psi[[j, t, v]];
            }
        }
    }
    out
}

/// Exhaustive search for K <= 8 (K! <= 40320); greedy row-by-row beyond.
fn best_permutation(cost: &[Vec<f64>]) -> Vec<usize> {
    let k = cost.len();
    if k <= 8 {
        let mut best: Vec<usize> = (0..k).collect();
        let mut best_cost = f64::INFINITY;
        for_each_permutation(k, &mut |perm| {
            let c: f64 = (0..k).map(|j| cost[j][perm[j]]).sum();
            if c < best_cost {
                best_cost = c;
                best.copy_from_slice(perm);
            }
        });
        best
    } else {
        let mut used = vec![false; k];
        let mut perm = vec![0usize; k];
        for j in 0..k {
            let mut best = usize::MAX;
            let mut best_cost = f64::INFINITY;
            for m in 0..k {
                if !used[m] && cost[j][m] < best_cost {
                    best_cost = cost[j][m];
                    best = m;
                }
            }
            used[best] = true;
            perm[j] = best;
        }
        perm
    }
}

fn time_marginal_rows(params: &ParamState) -> Vec<Vec<f64>> {
    let probs = ProbParams::from_logits(params);
    let rows = probs.time_marginal_word_dists();
    let (k, v) = rows.dim();
    (0..k).map(|ki| (0..v).map(|vi| rows[[ki, vi]]).collect()).collect()
}

/// Undo label switching: permute each draw's senses to best match the
/// highest-log-posterior draw (the pivot), measured by symmetric KL between
/// time-marginal sense-word distributions. The permutation is applied
/// consistently to `phi` and `psi`, so the tempered log-posterior of every
/// draw is unchanged.
pub fn relabel_draws(mut draws: PosteriorDraws) -> PosteriorDraws {
    if draws.is_empty() || draws.num_senses() < 2 {
        return draws;
    }
    let pivot_idx = draws
        .log_posts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite log posts"))
        .map(|(i, _)| i)
        .expect("nonempty draws");
    let pivot_rows = time_marginal_rows(&draws.draws[pivot_idx]);
    let k = pivot_rows.len();

    draws.draws.par_iter_mut().for_each(|draw| {
        let rows = time_marginal_rows(draw);
        let cost: Vec<Vec<f64>> = (0..k)
            .map(|j| (0..k).map(|m| crate::model::symmetric_kl(&rows[j], &pivot_rows[m])).collect())
            .collect();
        let perm = best_permutation(&cost);
        if perm.iter().enumerate().any(|(j, &m)| j != m) {
            *draw = apply_permutation(draw, &perm);
        }
    });
    draws
}

/// Elementwise mean of the softmax-transformed parameters across draws.
/// Rows remain simplexes because each summand is one.
pub fn posterior_mean_probs(draws: &PosteriorDraws) -> Result<ProbParams> {
    if draws.is_empty() {
        return Err(Error::config("posterior mean requires at least one draw"));
    }
    let first = ProbParams::from_logits(&draws.draws[0]);
    let mut phi = first.phi_tilde;
    let mut psi = first.psi_tilde;
    for draw in &draws.draws[1..] {
        let p = ProbParams::from_logits(draw);
        phi += &p.phi_tilde;
        psi += &p.psi_tilde;
    }
    let n = draws.len() as f64;
    phi.mapv_inplace(|x| x / n);
    psi.mapv_inplace(|x| x / n);
    Ok(ProbParams { phi_tilde: phi, psi_tilde: psi })
}

/// Split R-hat and ESS on the monitored scalars: the log-posterior trace
/// and a fixed random projection of the flat parameter vector.
pub fn convergence_summary(draws: &PosteriorDraws) -> Result<ConvergenceSummary> {
    if draws.num_chains < 2 {
        return Err(Error::config("convergence summary requires >= 2 chains"));
    }
    if draws.draws_per_chain < 4 {
        return Err(Error::config("convergence summary requires >= 4 draws per chain"));
    }

    let by_chain = |trace: &[f64]| -> Vec<Vec<f64>> {
        trace.chunks(draws.draws_per_chain).map(|c| c.to_vec()).collect()
    };

    let dim = draws.draws[0].len();
    let mut proj_rng = stream(PROJECTION_SEED);
    let scale = 1.0 / (dim as f64).sqrt();
    let proj: Vec<f64> = (0..dim)
        .map(|_| scale * proj_rng.sample::<f64, _>(StandardNormal))
        .collect();
    let proj_trace: Vec<f64> = draws
        .draws
        .iter()
        .map(|d| d.flatten().iter().zip(&proj).map(|(x, u)| x * u).sum())
        .collect();

    Ok(ConvergenceSummary {
        scalars: vec![
            scalar_summary("log_posterior", &by_chain(&draws.log_posts))?,
            scalar_summary("param_projection", &by_chain(&proj_trace))?,
        ],
        num_chains: draws.num_chains,
        draws_per_chain: draws.draws_per_chain,
    })
}
