//! Hamiltonian Monte Carlo over a generic differentiable log-density.
//!
//! Single-chain engine: leapfrog integration with a jittered number of
//! steps, dual-averaging step-size adaptation during warmup, and a diagonal
//! mass matrix estimated from the middle half of warmup. Divergences
//! (non-finite trajectory state or energy error above a threshold) reject
//! the proposal and are counted, not fatal.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Differentiable unnormalised log-density.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    /// Log-density value and gradient at `x`. Called with finite `x` by the
    /// sampler; may return non-finite values, which the sampler treats as a
    /// divergence.
    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

#[derive(Clone, Debug)]
pub struct HmcConfig {
    /// Post-warmup draws to keep.
    pub num_draws: usize,
    pub num_warmup: usize,
    /// Inclusive range for the jittered leapfrog step count.
    pub leapfrog_range: (usize, usize),
    pub target_accept: f64,
    /// Energy increase treated as a divergence.
    pub max_energy_error: f64,
}

#[derive(Clone, Debug)]
pub struct ChainRun {
    pub positions: Vec<Vec<f64>>,
    pub log_densities: Vec<f64>,
    /// Accepted post-warmup transitions.
    pub accepted: usize,
    /// Divergent post-warmup transitions.
    pub divergences: usize,
    /// Step size in force after warmup.
    pub step_size: f64,
}

/// Kinetic energy for momentum `p` under inverse mass `inv_mass` (diagonal).
fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    p.iter().zip(inv_mass).map(|(pi, im)| 0.5 * im * pi * pi).sum()
}

fn sample_momentum(rng: &mut ChaCha8Rng, inv_mass: &[f64]) -> Vec<f64> {
    // p ~ N(0, M) with M = diag(1 / inv_mass).
    inv_mass
        .iter()
        .map(|im| {
            let z: f64 = rng.sample(StandardNormal);
            z / im.sqrt()
        })
        .collect()
}

struct State {
    q: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
}

/// One leapfrog trajectory. Returns `None` when the trajectory leaves the
/// finite domain (a divergence), otherwise the end state and end momentum.
pub(crate) fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    start: (&[f64], f64, &[f64]),
    p0: &[f64],
    eps: f64,
    steps: usize,
    inv_mass: &[f64],
) -> Result<Option<(Vec<f64>, f64, Vec<f64>, Vec<f64>)>> {
    let (q0, _v0, g0) = start;
    let mut q = q0.to_vec();
    let mut p = p0.to_vec();
    let mut grad = g0.to_vec();
    let mut value = 0.0;

    for (pi, gi) in p.iter_mut().zip(&grad) {
        *pi += 0.5 * eps * gi;
    }
    for step in 0..steps {
        for ((qi, pi), im) in q.iter_mut().zip(&p).zip(inv_mass) {
            *qi += eps * im * pi;
        }
        if q.iter().any(|x| !x.is_finite()) {
            return Ok(None);
        }
        let (v, g) = target.value_and_grad(&q)?;
        if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Ok(None);
        }
        value = v;
        grad = g;
        let half = if step + 1 == steps { 0.5 } else { 1.0 };
        for (pi, gi) in p.iter_mut().zip(&grad) {
            *pi += half * eps * gi;
        }
    }
    if p.iter().any(|x| !x.is_finite()) {
        return Ok(None);
    }
    Ok(Some((q, value, grad, p)))
}

/// Dual-averaging step-size adaptation (Hoffman & Gelman 2014, §3.2).
struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    m: f64,
}

const DA_GAMMA: f64 = 0.05;
const DA_T0: f64 = 10.0;
const DA_KAPPA: f64 = 0.75;

impl DualAveraging {
    fn new(eps0: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
            h_bar: 0.0,
            m: 1.0,
        }
    }

    fn update(&mut self, accept_prob: f64, target: f64) {
        let w = 1.0 / (self.m + DA_T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (target - accept_prob);
        self.log_eps = self.mu - self.m.sqrt() / DA_GAMMA * self.h_bar;
        let eta = self.m.powf(-DA_KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
        self.m += 1.0;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn adapted(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Heuristic initial step size: double or halve until the one-step
/// acceptance ratio crosses 1/2 (Hoffman & Gelman 2014, Algorithm 4).
fn find_reasonable_epsilon<T: LogDensity + ?Sized>(
    target: &T,
    state: &State,
    inv_mass: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut eps = 1.0;
    let p = sample_momentum(rng, inv_mass);
    let h0 = -state.value + kinetic(&p, inv_mass);

    let ratio_at = |eps: f64| -> Result<f64> {
        match leapfrog(target, (&state.q, state.value, &state.grad), &p, eps, 1, inv_mass)? {
            Some((_, v, _, p1)) => {
                let h1 = -v + kinetic(&p1, inv_mass);
                Ok((h0 - h1).exp())
            }
            None => Ok(0.0),
        }
    };

    let mut ratio = ratio_at(eps)?;
    let a: f64 = if ratio > 0.5 { 1.0 } else { -1.0 };
    for _ in 0..100 {
        if !(ratio.powf(a) > 2f64.powf(-a)) {
            break;
        }
        eps *= 2f64.powf(a);
        if !(1e-10..=1e10).contains(&eps) {
            break;
        }
        ratio = ratio_at(eps)?;
    }
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::numeric("step-size search failed to find a finite step"));
    }
    Ok(eps.clamp(1e-10, 1e10))
}

/// Stan-style shrinkage of a sample variance toward a small constant.
fn shrink_variance(var: f64, n: f64) -> f64 {
    (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
}

/// Run one HMC chain from `init`. Deterministic given `rng` state.
pub fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    init: &[f64],
    cfg: &HmcConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ChainRun> {
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::config(format!(
            "init has dimension {}, target expects {dim}",
            init.len()
        )));
    }
    if cfg.num_draws == 0 {
        return Err(Error::config("num_draws must be >= 1"));
    }
    if !(cfg.target_accept > 0.0 && cfg.target_accept < 1.0) {
        return Err(Error::config("target_accept must be in (0, 1)"));
    }
    let (l_lo, l_hi) = cfg.leapfrog_range;
    if l_lo == 0 || l_lo > l_hi {
        return Err(Error::config("leapfrog range must satisfy 1 <= lo <= hi"));
    }

    let (value, grad) = target.value_and_grad(init)?;
    if !value.is_finite() || grad.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric(
            "log-density or gradient non-finite at the initial point",
        ));
    }
    let mut state = State { q: init.to_vec(), value, grad };

    let mut inv_mass = vec![1.0; dim];
    let mut eps = find_reasonable_epsilon(target, &state, &inv_mass, rng)?;
    let mut da = DualAveraging::new(eps);

    // Middle-half warmup window used to estimate the diagonal mass matrix.
    let win_lo = cfg.num_warmup / 4;
    let win_hi = 3 * cfg.num_warmup / 4;
    let mut win_sum = vec![0.0; dim];
    let mut win_sumsq = vec![0.0; dim];
    let mut win_n = 0usize;

    let mut out = ChainRun {
        positions: Vec::with_capacity(cfg.num_draws),
        log_densities: Vec::with_capacity(cfg.num_draws),
        accepted: 0,
        divergences: 0,
        step_size: eps,
    };

    let total = cfg.num_warmup + cfg.num_draws;
    for iter in 0..total {
        let warming = iter < cfg.num_warmup;
        let p0 = sample_momentum(rng, &inv_mass);
        let steps = rng.random_range(l_lo..=l_hi);
        let h0 = -state.value + kinetic(&p0, &inv_mass);

        let mut accept_prob = 0.0;
        let mut diverged = true;
        let mut proposal = None;
        if let Some((q1, v1, g1, p1)) =
            leapfrog(target, (&state.q, state.value, &state.grad), &p0, eps, steps, &inv_mass)?
        {
            let h1 = -v1 + kinetic(&p1, &inv_mass);
            let delta = h1 - h0;
            if delta.is_finite() && delta <= cfg.max_energy_error {
                diverged = false;
                accept_prob = (-delta).min(0.0).exp();
                proposal = Some((q1, v1, g1));
            }
        }

        let u: f64 = rng.random();
        let accepted = if let Some((q1, v1, g1)) = proposal {
            if u < accept_prob {
                state = State { q: q1, value: v1, grad: g1 };
                true
            } else {
                false
            }
        } else {
            false
        };

        if warming {
            da.update(accept_prob, cfg.target_accept);
            eps = da.current();
            if iter >= win_lo && iter < win_hi {
                for ((s, sq), qi) in win_sum.iter_mut().zip(&mut win_sumsq).zip(&state.q) {
                    *s += qi;
                    *sq += qi * qi;
                }
                win_n += 1;
            }
            if iter + 1 == win_hi && win_n >= 2 {
                let n = win_n as f64;
                for i in 0..dim {
                    let mean = win_sum[i] / n;
                    let var = (win_sumsq[i] - n * mean * mean) / (n - 1.0);
                    inv_mass[i] = shrink_variance(var.max(0.0), n);
                }
                // Restart step-size adaptation under the new metric.
                eps = find_reasonable_epsilon(target, &state, &inv_mass, rng)?;
                da = DualAveraging::new(eps);
            }
            if iter + 1 == cfg.num_warmup {
                eps = da.adapted();
                if !eps.is_finite() || eps <= 0.0 {
                    return Err(Error::numeric("adapted step size is not positive"));
                }
            }
        } else {
            out.positions.push(state.q.clone());
            out.log_densities.push(state.value);
            out.accepted += accepted as usize;
            out.divergences += diverged as usize;
        }
    }
    out.step_size = eps;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Flat density: every proposal conserves energy exactly.
    struct Flat(usize);
    impl LogDensity for Flat {
        fn dim(&self) -> usize {
            self.0
        }
        fn value_and_grad(&self, _x: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((0.0, vec![0.0; self.0]))
        }
    }

    /// Independent Gaussians with per-coordinate standard deviations.
    struct DiagNormal(Vec<f64>);
    impl LogDensity for DiagNormal {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            let mut v = 0.0;
            let mut g = vec![0.0; x.len()];
            for (i, (xi, sd)) in x.iter().zip(&self.0).enumerate() {
                v += -0.5 * (xi / sd).powi(2);
                g[i] = -xi / (sd * sd);
            }
            Ok((v, g))
        }
    }

    fn cfg(draws: usize, warmup: usize) -> HmcConfig {
        HmcConfig {
            num_draws: draws,
            num_warmup: warmup,
            leapfrog_range: (8, 24),
            target_accept: 0.8,
            max_energy_error: 1000.0,
        }
    }

    #[test]
    fn zero_integration_error_always_accepts() {
        let target = Flat(3);
        let mut rng = crate::rng::stream(41);
        let run = run_chain(&target, &[0.0; 3], &cfg(200, 50), &mut rng).unwrap();
        assert_eq!(run.accepted, 200);
        assert_eq!(run.divergences, 0);
    }

    #[test]
    fn gaussian_moments_recovered() {
        let target = DiagNormal(vec![1.0, 2.0]);
        let mut rng = crate::rng::stream(43);
        let run = run_chain(&target, &[0.1, -0.1], &cfg(3000, 600), &mut rng).unwrap();
        assert!(run.accepted as f64 / 3000.0 > 0.6);
        for i in 0..2 {
            let xs: Vec<f64> = run.positions.iter().map(|q| q[i]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            let sd_true = target.0[i];
            assert!(mean.abs() < 0.25 * sd_true, "mean[{i}] = {mean}");
            assert!(
                (var / (sd_true * sd_true) - 1.0).abs() < 0.3,
                "var[{i}] = {var}"
            );
        }
    }

    #[test]
    fn leapfrog_energy_error_scales_quadratically() {
        let target = DiagNormal(vec![1.0, 0.5]);
        let q0 = vec![1.3, -0.4];
        let p0 = vec![0.7, 0.2];
        let inv_mass = vec![1.0, 1.0];
        let (v0, g0) = target.value_and_grad(&q0).unwrap();
        let h0 = -v0 + kinetic(&p0, &inv_mass);

        // The endpoint error oscillates along a Gaussian trajectory, so
        // measure the max |H - H0| over a full period instead.
        let energy_err = |eps: f64, steps: usize| {
            (1..=steps)
                .map(|s| {
                    let (_, v1, _, p1) =
                        leapfrog(&target, (&q0, v0, &g0), &p0, eps, s, &inv_mass)
                            .unwrap()
                            .unwrap();
                    ((-v1 + kinetic(&p1, &inv_mass)) - h0).abs()
                })
                .fold(0.0, f64::max)
        };
        // Same integration time, half the step size: error drops ~4x.
        let coarse = energy_err(0.2, 32);
        let fine = energy_err(0.1, 64);
        let ratio = coarse / fine;
        assert!(
            (3.0..=5.5).contains(&ratio),
            "expected ~4x error reduction, got {ratio} (coarse {coarse}, fine {fine})"
        );
    }

    #[test]
    fn exact_hamiltonian_flow_is_reversible_in_energy() {
        // For the flat target the Hamiltonian is pure kinetic energy and the
        // leapfrog conserves it exactly; acceptance probability is 1.
        let target = Flat(2);
        let p0 = vec![0.3, -1.1];
        let inv_mass = vec![1.0, 1.0];
        let (v0, g0) = target.value_and_grad(&[0.0, 0.0]).unwrap();
        let (_, v1, _, p1) =
            leapfrog(&target, (&[0.0, 0.0], v0, &g0), &p0, 0.7, 13, &inv_mass)
                .unwrap()
                .unwrap();
        assert_relative_eq!(
            -v1 + kinetic(&p1, &inv_mass),
            -v0 + kinetic(&p0, &inv_mass),
            epsilon = 1e-12
        );
    }

    #[test]
    fn same_seed_same_draws() {
        let target = DiagNormal(vec![1.0]);
        let mut r1 = crate::rng::stream(47);
        let mut r2 = crate::rng::stream(47);
        let a = run_chain(&target, &[0.0], &cfg(50, 50), &mut r1).unwrap();
        let b = run_chain(&target, &[0.0], &cfg(50, 50), &mut r2).unwrap();
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.log_densities, b.log_densities);
    }

    #[test]
    fn warmup_zero_still_runs() {
        let target = DiagNormal(vec![1.0]);
        let mut rng = crate::rng::stream(53);
        let run = run_chain(&target, &[0.0], &cfg(20, 0), &mut rng).unwrap();
        assert_eq!(run.positions.len(), 20);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        struct Bad;
        impl LogDensity for Bad {
            fn dim(&self) -> usize {
                1
            }
            fn value_and_grad(&self, _x: &[f64]) -> Result<(f64, Vec<f64>)> {
                Ok((f64::NAN, vec![f64::NAN]))
            }
        }
        let mut rng = crate::rng::stream(59);
        let err = run_chain(&Bad, &[0.0], &cfg(10, 10), &mut rng).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }
}
