//! Latent-sense multinomial mixture model.
//!
//! A corpus is a set of snippets, each carrying a bag of context words plus
//! genre and time covariates. Each snippet has a latent sense `z_d` drawn
//! from a sense-prevalence simplex `phi_tilde[g][t]`, and its words are
//! drawn i.i.d. from a sense-word simplex `psi_tilde[k][t]`. The sense is
//! marginalised out analytically, so the log-likelihood of a snippet is a
//! log-sum-exp over senses. Parameters live as unconstrained logits with
//! softmax transforms; the prior is independent Gaussian on every logit.
//!
//! All indices are 0-based internally. Serialized files use 1-based ids
//! (see the `data` module).

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// One text snippet: word ids (possibly empty after filtering), genre, time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snippet {
    pub words: Vec<usize>,
    pub genre: usize,
    pub time: usize,
}

/// Observed data for one target word.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub snippets: Vec<Snippet>,
    pub vocab_size: usize,
    pub num_genres: usize,
    pub num_times: usize,
    /// True sense per snippet, when known (synthetic or annotated data).
    pub true_labels: Option<Vec<usize>>,
    pub num_true_senses: Option<usize>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    /// Check all structural invariants. Messages use the 1-based ids of the
    /// serialized form.
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::data("vocab_size must be >= 1"));
        }
        if self.num_genres == 0 {
            return Err(Error::data("num_genres must be >= 1"));
        }
        if self.num_times == 0 {
            return Err(Error::data("num_times must be >= 1"));
        }
        for (d, s) in self.snippets.iter().enumerate() {
            if s.genre >= self.num_genres {
                return Err(Error::data(format!(
                    "snippet {}: genre {} out of range 1..={}",
                    d + 1,
                    s.genre + 1,
                    self.num_genres
                )));
            }
            if s.time >= self.num_times {
                return Err(Error::data(format!(
                    "snippet {}: time {} out of range 1..={}",
                    d + 1,
                    s.time + 1,
                    self.num_times
                )));
            }
            for &w in &s.words {
                if w >= self.vocab_size {
                    return Err(Error::data(format!(
                        "snippet {}: word id {} out of range 1..={}",
                        d + 1,
                        w + 1,
                        self.vocab_size
                    )));
                }
            }
        }
        match (&self.true_labels, self.num_true_senses) {
            (Some(labels), Some(kp)) => {
                if labels.len() != self.snippets.len() {
                    return Err(Error::data(format!(
                        "true_labels has length {} but corpus has {} snippets",
                        labels.len(),
                        self.snippets.len()
                    )));
                }
                if kp == 0 {
                    return Err(Error::data("num_true_senses must be >= 1"));
                }
                for (d, &o) in labels.iter().enumerate() {
                    if o >= kp {
                        return Err(Error::data(format!(
                            "snippet {}: label {} out of range 1..={}",
                            d + 1,
                            o + 1,
                            kp
                        )));
                    }
                }
            }
            (None, None) => {}
            _ => {
                return Err(Error::data(
                    "true_labels and num_true_senses must be present together",
                ));
            }
        }
        Ok(())
    }
}

/// Number of model senses and prior scales on the logits.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_senses: usize,
    pub prior_sd_phi: f64,
    pub prior_sd_psi: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_senses: 2,
            prior_sd_phi: 1.0,
            prior_sd_psi: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_senses == 0 {
            return Err(Error::config("num_senses must be >= 1"));
        }
        if !(self.prior_sd_phi > 0.0) || !(self.prior_sd_psi > 0.0) {
            return Err(Error::config("prior standard deviations must be > 0"));
        }
        Ok(())
    }
}

/// Unconstrained parameters: `phi` has shape (G, T, K), `psi` (K, T, V).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamState {
    pub phi: Array3<f64>,
    pub psi: Array3<f64>,
}

impl ParamState {
    pub fn zeros(num_genres: usize, num_times: usize, num_senses: usize, vocab_size: usize) -> Self {
        ParamState {
            phi: Array3::zeros((num_genres, num_times, num_senses)),
            psi: Array3::zeros((num_senses, num_times, vocab_size)),
        }
    }

    pub fn num_senses(&self) -> usize {
        self.psi.dim().0
    }

    pub fn len(&self) -> usize {
        self.phi.len() + self.psi.len()
    }

    pub fn is_finite(&self) -> bool {
        self.phi.iter().all(|x| x.is_finite()) && self.psi.iter().all(|x| x.is_finite())
    }

    /// Flatten to a single vector: phi entries in row-major order, then psi.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend(self.phi.iter());
        out.extend(self.psi.iter());
        out
    }

    /// Inverse of [`flatten`](Self::flatten) for the given shapes.
    pub fn from_flat(
        flat: &[f64],
        phi_shape: (usize, usize, usize),
        psi_shape: (usize, usize, usize),
    ) -> Result<Self> {
        let n_phi = phi_shape.0 * phi_shape.1 * phi_shape.2;
        let n_psi = psi_shape.0 * psi_shape.1 * psi_shape.2;
        if flat.len() != n_phi + n_psi {
            return Err(Error::data(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                n_phi + n_psi
            )));
        }
        let phi = Array3::from_shape_vec(phi_shape, flat[..n_phi].to_vec())
            .map_err(|e| Error::data(format!("phi shape: {e}")))?;
        let psi = Array3::from_shape_vec(psi_shape, flat[n_phi..].to_vec())
            .map_err(|e| Error::data(format!("psi shape: {e}")))?;
        Ok(ParamState { phi, psi })
    }
}

/// Softmax-transformed parameters: rows of `phi_tilde` (over senses) and
/// `psi_tilde` (over words) are simplexes. Also used for posterior means of
/// the transformed probabilities, which are simplexes but not softmax images.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbParams {
    pub phi_tilde: Array3<f64>,
    pub psi_tilde: Array3<f64>,
}

impl ProbParams {
    pub fn from_logits(params: &ParamState) -> Self {
        ProbParams {
            phi_tilde: softmax_rows(&params.phi),
            psi_tilde: softmax_rows(&params.psi),
        }
    }

    pub fn num_senses(&self) -> usize {
        self.psi_tilde.dim().0
    }

    /// Sense-word distributions marginalised over time: mean of
    /// `psi_tilde[k][t]` across t, one row per sense.
    pub fn time_marginal_word_dists(&self) -> Array2<f64> {
        let (k, t, v) = self.psi_tilde.dim();
        let mut out = Array2::zeros((k, v));
        for ki in 0..k {
            for ti in 0..t {
                for vi in 0..v {
                    out[[ki, vi]] += self.psi_tilde[[ki, ti, vi]] / t as f64;
                }
            }
        }
        out
    }
}

/// Symmetric KL divergence between two discrete distributions:
/// `sum_i (p_i - q_i) (ln p_i - ln q_i)`. Probabilities clamped away from
/// zero so one-hot inputs stay finite.
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> f64 {
    let floor = 1e-300;
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let (pi, qi) = (pi.max(floor), qi.max(floor));
            (pi - qi) * (pi.ln() - qi.ln())
        })
        .sum()
}

/// Numerically stable softmax with finiteness checking.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::config("softmax input must be non-empty"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::config("softmax input must be finite"));
    }
    let mut out = vec![0.0; v.len()];
    softmax_into(v, &mut out);
    Ok(out)
}

/// Max-subtracted softmax into a preallocated buffer. Input assumed finite.
pub(crate) fn softmax_into(v: &[f64], out: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(v) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Log-softmax of a slice: `v - max - ln(sum(exp(v - max)))`.
pub(crate) fn log_softmax_into(v: &[f64], out: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &x in v {
        sum += (x - max).exp();
    }
    let lse = max + sum.ln();
    for (o, &x) in out.iter_mut().zip(v) {
        *o = x - lse;
    }
}

/// Log-sum-exp of a slice.
pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = v.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Apply softmax to every last-axis row of a 3-D array.
pub(crate) fn softmax_rows(arr: &Array3<f64>) -> Array3<f64> {
    let mut out = arr.clone();
    for mut lane in out.lanes_mut(ndarray::Axis(2)) {
        let v: Vec<f64> = lane.iter().cloned().collect();
        let s = lane.as_slice_mut().expect("contiguous lane");
        softmax_into(&v, s);
    }
    out
}

fn log_softmax_rows(arr: &Array3<f64>) -> Array3<f64> {
    let mut out = arr.clone();
    for mut lane in out.lanes_mut(ndarray::Axis(2)) {
        let v: Vec<f64> = lane.iter().cloned().collect();
        let s = lane.as_slice_mut().expect("contiguous lane");
        log_softmax_into(&v, s);
    }
    out
}

/// Precomputed `log phi_tilde` and `log psi_tilde` tables shared by the
/// likelihood, gradient, sense posterior, and replicate simulation.
pub(crate) struct LogProbTables {
    pub log_phi: Array3<f64>,
    pub log_psi: Array3<f64>,
}

impl LogProbTables {
    pub fn new(params: &ParamState) -> Self {
        LogProbTables {
            log_phi: log_softmax_rows(&params.phi),
            log_psi: log_softmax_rows(&params.psi),
        }
    }

    /// Unnormalised per-sense log-weights of one snippet:
    /// `a_k = log phi_tilde[k] + sum_w log psi_tilde[w]`.
    pub fn snippet_log_weights(&self, snippet: &Snippet, buf: &mut Vec<f64>) {
        let k = self.log_phi.dim().2;
        buf.clear();
        for ki in 0..k {
            let mut a = self.log_phi[[snippet.genre, snippet.time, ki]];
            for &w in &snippet.words {
                a += self.log_psi[[ki, snippet.time, w]];
            }
            buf.push(a);
        }
    }
}

fn check_shapes(corpus: &Corpus, params: &ParamState) -> Result<usize> {
    let (g, t, k) = params.phi.dim();
    let (k2, t2, v) = params.psi.dim();
    if k != k2 || t != t2 {
        return Err(Error::config(format!(
            "phi shape ({g},{t},{k}) inconsistent with psi shape ({k2},{t2},{v})"
        )));
    }
    if g != corpus.num_genres || t != corpus.num_times || v != corpus.vocab_size {
        return Err(Error::config(format!(
            "parameter shapes (G={g}, T={t}, V={v}) do not match corpus \
             (G={}, T={}, V={})",
            corpus.num_genres, corpus.num_times, corpus.vocab_size
        )));
    }
    Ok(k)
}

/// Marginal log-likelihood: for each snippet, log-sum-exp over senses of
/// `phi_tilde[k] * prod_w psi_tilde[w]`, all in log space.
pub fn log_likelihood(corpus: &Corpus, params: &ParamState) -> Result<f64> {
    check_shapes(corpus, params)?;
    let tables = LogProbTables::new(params);
    Ok(log_likelihood_with(corpus, &tables))
}

pub(crate) fn log_likelihood_with(corpus: &Corpus, tables: &LogProbTables) -> f64 {
    let mut buf = Vec::new();
    let mut total = 0.0;
    for s in &corpus.snippets {
        tables.snippet_log_weights(s, &mut buf);
        total += log_sum_exp(&buf);
    }
    total
}

/// Log-likelihood evaluated directly at probability-space parameters, e.g.
/// posterior means of the transformed probabilities.
pub fn log_likelihood_probs(corpus: &Corpus, probs: &ProbParams) -> Result<f64> {
    let (g, t, k) = probs.phi_tilde.dim();
    let (k2, t2, v) = probs.psi_tilde.dim();
    if k != k2 || t != t2 || g != corpus.num_genres || t != corpus.num_times || v != corpus.vocab_size
    {
        return Err(Error::config("probability parameter shapes do not match corpus"));
    }
    let ln = |p: f64| p.max(f64::MIN_POSITIVE).ln();
    let mut buf = Vec::with_capacity(k);
    let mut total = 0.0;
    for s in &corpus.snippets {
        buf.clear();
        for ki in 0..k {
            let mut a = ln(probs.phi_tilde[[s.genre, s.time, ki]]);
            for &w in &s.words {
                a += ln(probs.psi_tilde[[ki, s.time, w]]);
            }
            buf.push(a);
        }
        total += log_sum_exp(&buf);
    }
    Ok(total)
}

/// Gaussian log-prior over all logits, normalising constants included.
pub fn log_prior(params: &ParamState, config: &ModelConfig) -> Result<f64> {
    config.validate()?;
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    let sd_phi = config.prior_sd_phi;
    for &x in params.phi.iter() {
        total += -0.5 * (x / sd_phi).powi(2) - sd_phi.ln() - half_ln_2pi;
    }
    let sd_psi = config.prior_sd_psi;
    for &x in params.psi.iter() {
        total += -0.5 * (x / sd_psi).powi(2) - sd_psi.ln() - half_ln_2pi;
    }
    Ok(total)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(format!(
            "learning rate must be in [0, 1], got {lambda}"
        )));
    }
    Ok(())
}

/// Unnormalised log-density of the tempered posterior:
/// `log_prior + lambda * log_likelihood`.
pub fn log_posterior_unnorm(
    corpus: &Corpus,
    params: &ParamState,
    lambda: f64,
    config: &ModelConfig,
) -> Result<f64> {
    check_lambda(lambda)?;
    let prior = log_prior(params, config)?;
    if lambda == 0.0 {
        check_shapes(corpus, params)?;
        return Ok(prior);
    }
    Ok(prior + lambda * log_likelihood(corpus, params)?)
}

/// Value and analytic gradient of the tempered log-posterior in one pass.
///
/// The likelihood part uses the per-snippet responsibilities
/// `r_dk = softmax(a_d)` (the normalised sense-posterior weights) and the
/// mixture chain rule through the softmax transforms:
/// `d/d phi[g,t,j] = sum_{d in (g,t)} (r_dj - phi_tilde[g,t,j])`,
/// `d/d psi[k,t,v] = sum_{d in t} r_dk (c_dv - |W_d| psi_tilde[k,t,v])`
/// with `c_dv` the count of word v in snippet d.
pub fn log_posterior_and_grad(
    corpus: &Corpus,
    params: &ParamState,
    lambda: f64,
    config: &ModelConfig,
) -> Result<(f64, ParamState)> {
    check_lambda(lambda)?;
    config.validate()?;
    let k = check_shapes(corpus, params)?;
    let (g_dim, t_dim, _) = params.phi.dim();
    let v_dim = corpus.vocab_size;

    // Prior value and gradient.
    let mut value = log_prior(params, config)?;
    let inv_var_phi = 1.0 / (config.prior_sd_phi * config.prior_sd_phi);
    let inv_var_psi = 1.0 / (config.prior_sd_psi * config.prior_sd_psi);
    let mut grad = ParamState {
        phi: params.phi.mapv(|x| -x * inv_var_phi),
        psi: params.psi.mapv(|x| -x * inv_var_psi),
    };

    if lambda > 0.0 {
        let tables = LogProbTables::new(params);
        let phi_tilde = softmax_rows(&params.phi);
        let psi_tilde = softmax_rows(&params.psi);

        // Accumulators: sum of responsibilities per (g,t) cell, snippet
        // counts per cell, word-occurrence responsibilities, and the
        // per-(k,t) coefficient on the dense psi_tilde term.
        let mut resp_sum = Array3::<f64>::zeros((g_dim, t_dim, k));
        let mut cell_count = Array2::<f64>::zeros((g_dim, t_dim));
        let mut word_resp = Array3::<f64>::zeros((k, t_dim, v_dim));
        let mut len_resp = Array2::<f64>::zeros((k, t_dim));

        let mut weights = Vec::with_capacity(k);
        let mut resp = vec![0.0; k];
        let mut ll = 0.0;
        for s in &corpus.snippets {
            tables.snippet_log_weights(s, &mut weights);
            let lse = log_sum_exp(&weights);
            ll += lse;
            for ki in 0..k {
                resp[ki] = (weights[ki] - lse).exp();
            }
            cell_count[[s.genre, s.time]] += 1.0;
            let snippet_len = s.words.len() as f64;
            for ki in 0..k {
                resp_sum[[s.genre, s.time, ki]] += resp[ki];
                len_resp[[ki, s.time]] += resp[ki] * snippet_len;
                for &w in &s.words {
                    word_resp[[ki, s.time, w]] += resp[ki];
                }
            }
        }
        value += lambda * ll;

        for gi in 0..g_dim {
            for ti in 0..t_dim {
                for ki in 0..k {
                    grad.phi[[gi, ti, ki]] += lambda
                        * (resp_sum[[gi, ti, ki]]
                            - cell_count[[gi, ti]] * phi_tilde[[gi, ti, ki]]);
                }
            }
        }
        for ki in 0..k {
            for ti in 0..t_dim {
                for vi in 0..v_dim {
                    grad.psi[[ki, ti, vi]] += lambda
                        * (word_resp[[ki, ti, vi]]
                            - len_resp[[ki, ti]] * psi_tilde[[ki, ti, vi]]);
                }
            }
        }
    }

    Ok((value, grad))
}

/// Analytic gradient of [`log_posterior_unnorm`].
pub fn grad_log_posterior(
    corpus: &Corpus,
    params: &ParamState,
    lambda: f64,
    config: &ModelConfig,
) -> Result<ParamState> {
    Ok(log_posterior_and_grad(corpus, params, lambda, config)?.1)
}

/// Posterior over the latent sense of one snippet:
/// `p(z = k | W_d, phi, psi)`, normalised over senses in log space.
pub fn sense_posterior(snippet: &Snippet, params: &ParamState) -> Vec<f64> {
    let tables = LogProbTables::new(params);
    sense_posterior_with(snippet, &tables)
}

pub(crate) fn sense_posterior_with(snippet: &Snippet, tables: &LogProbTables) -> Vec<f64> {
    let mut weights = Vec::new();
    tables.snippet_log_weights(snippet, &mut weights);
    let mut out = vec![0.0; weights.len()];
    softmax_into(&weights, &mut out);
    // Guard against rounding drift so the output is a simplex to ~1e-16.
    let total: f64 = out.iter().sum();
    for o in &mut out {
        *o /= total;
    }
    out
}
