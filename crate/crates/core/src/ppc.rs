//! Posterior predictive checks with the log-likelihood diagnostic.
//!
//! For every posterior draw we simulate one replicate corpus (same size,
//! lengths, and covariates as the observed data): each snippet's sense is
//! drawn from its sense posterior under the draw, then words are drawn
//! i.i.d. from that sense's word distribution. The reference distribution
//! of the diagnostic across replicates is compared against the observed
//! diagnostic with three p-value estimators; all use strict `<`, so ties
//! count as "not less".

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    self, softmax_rows, Corpus, LogProbTables, ParamState, ProbParams, Snippet,
};
use crate::rng::{derive_seed, stream};
use crate::sampler::{posterior_mean_probs, PosteriorDraws};

/// All PPC outputs for one learning rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpcResult {
    /// s(replicate_n, draw_n) for each draw.
    pub ref_diagnostics: Vec<f64>,
    /// s(observed, posterior mean of transformed probabilities).
    pub observed_at_mean: f64,
    /// s(observed, draw_n) for each draw.
    pub observed_at_draws: Vec<f64>,
    /// Fraction of ref_diagnostics below observed_at_mean; drives selection.
    pub p_mean: f64,
    /// Paired comparison: fraction of n with ref_n < observed_at_draws_n.
    pub p_paired: f64,
    /// Fraction of ref_diagnostics below mean(observed_at_draws).
    pub p_avg: f64,
    pub lambda: f64,
}

/// Diagnostic input: unconstrained logits or probability-space parameters.
pub enum DiagnosticParams<'a> {
    Logits(&'a ParamState),
    Probs(&'a ProbParams),
}

/// The diagnostic s(W, params): the marginal log-likelihood.
pub fn diagnostic(corpus: &Corpus, params: DiagnosticParams) -> Result<f64> {
    match params {
        DiagnosticParams::Logits(p) => model::log_likelihood(corpus, p),
        DiagnosticParams::Probs(p) => model::log_likelihood_probs(corpus, p),
    }
}

/// Inverse-CDF draw from a probability row. The final index absorbs any
/// floating-point shortfall in the cumulative sum.
fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn replicate_with(
    corpus: &Corpus,
    tables: &LogProbTables,
    psi_tilde: &ndarray::Array3<f64>,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Corpus {
    use rand::Rng;
    let v = psi_tilde.dim().2;
    let snippets = corpus
        .snippets
        .iter()
        .map(|s| {
            let post = model::sense_posterior_with(s, tables);
            let z = sample_categorical(&post, rng.random());
            let row: Vec<f64> = (0..v).map(|vi| psi_tilde[[z, s.time, vi]]).collect();
            let words = (0..s.words.len())
                .map(|_| sample_categorical(&row, rng.random()))
                .collect();
            Snippet { words, genre: s.genre, time: s.time }
        })
        .collect();
    Corpus {
        snippets,
        vocab_size: corpus.vocab_size,
        num_genres: corpus.num_genres,
        num_times: corpus.num_times,
        true_labels: None,
        num_true_senses: None,
    }
}

/// Simulate one replicate of `corpus` under `draw`: sense from the sense
/// posterior given the observed snippet, then words i.i.d. from that
/// sense's word distribution. Snippet count, lengths, genres, and times
/// are preserved.
pub fn replicate_dataset(
    corpus: &Corpus,
    draw: &ParamState,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Corpus> {
    let (_, t, v) = draw.psi.dim();
    if t != corpus.num_times || v != corpus.vocab_size {
        return Err(Error::config("draw shapes do not match corpus"));
    }
    let tables = LogProbTables::new(draw);
    let psi_tilde = softmax_rows(&draw.psi);
    Ok(replicate_with(corpus, &tables, &psi_tilde, rng))
}

/// Fraction of reference diagnostics strictly below the observed one.
pub fn ppc_pvalue(refs: &[f64], observed: f64) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::config("p-value requires a nonempty reference sample"));
    }
    let count = refs.iter().filter(|&&r| r < observed).count();
    Ok(count as f64 / refs.len() as f64)
}

/// Run the full check: one replicate per draw, all three p-values.
///
/// Replicate `n` uses the stream `stream(derive_seed(seed, n))`, so results
/// are identical for any parallel worker count.
pub fn run_ppc(corpus: &Corpus, draws: &PosteriorDraws, seed: u64) -> Result<PpcResult> {
    if draws.is_empty() {
        return Err(Error::config("PPC requires at least one posterior draw"));
    }
    corpus.validate()?;

    let mean_probs = posterior_mean_probs(draws)?;
    let observed_at_mean = diagnostic(corpus, DiagnosticParams::Probs(&mean_probs))?;

    let pairs: Vec<(f64, f64)> = draws
        .draws
        .par_iter()
        .enumerate()
        .map(|(n, draw)| {
            let tables = LogProbTables::new(draw);
            let psi_tilde = softmax_rows(&draw.psi);
            let mut rng = stream(derive_seed(seed, n as u64));
            let replicate = replicate_with(corpus, &tables, &psi_tilde, &mut rng);
            let reference = model::log_likelihood_with(&replicate, &tables);
            let observed = model::log_likelihood_with(corpus, &tables);
            (reference, observed)
        })
        .collect();
    let ref_diagnostics: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let observed_at_draws: Vec<f64> = pairs.iter().map(|p| p.1).collect();

    let n = ref_diagnostics.len();
    let paired_count = ref_diagnostics
        .iter()
        .zip(&observed_at_draws)
        .filter(|(r, o)| r < o)
        .count();
    let observed_avg = observed_at_draws.iter().sum::<f64>() / n as f64;

    Ok(PpcResult {
        p_mean: ppc_pvalue(&ref_diagnostics, observed_at_mean)?,
        p_paired: paired_count as f64 / n as f64,
        p_avg: ppc_pvalue(&ref_diagnostics, observed_avg)?,
        ref_diagnostics,
        observed_at_mean,
        observed_at_draws,
        lambda: draws.lambda,
    })
}

pub fn save_ppc_json(result: &PpcResult, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, result)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Companion CSV of per-draw diagnostics for external density plots.
pub fn save_ppc_csv(result: &PpcResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["draw_index", "ref_diagnostic", "observed_at_draw"])?;
    for (i, (r, o)) in result
        .ref_diagnostics
        .iter()
        .zip(&result.observed_at_draws)
        .enumerate()
    {
        w.write_record(&[i.to_string(), r.to_string(), o.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::sampler::{sample_posterior, McmcConfig};
    use approx::assert_relative_eq;

    fn corpus(snippets: Vec<Snippet>, v: usize, g: usize, t: usize) -> Corpus {
        Corpus {
            snippets,
            vocab_size: v,
            num_genres: g,
            num_times: t,
            true_labels: None,
            num_true_senses: None,
        }
    }

    #[test]
    fn replicate_preserves_structure() {
        let obs = corpus(
            vec![
                Snippet { words: vec![0, 1, 2], genre: 1, time: 0 },
                Snippet { words: vec![], genre: 0, time: 1 },
                Snippet { words: vec![2], genre: 0, time: 0 },
            ],
            3,
            2,
            2,
        );
        let mut rng = crate::rng::stream(211);
        let mut draw = ParamState::zeros(2, 2, 2, 3);
        draw.phi[[0, 0, 0]] = 0.3;
        draw.psi[[1, 1, 2]] = -0.7;
        let rep = replicate_dataset(&obs, &draw, &mut rng).unwrap();
        assert_eq!(rep.len(), obs.len());
        for (r, o) in rep.snippets.iter().zip(&obs.snippets) {
            assert_eq!(r.words.len(), o.words.len());
            assert_eq!(r.genre, o.genre);
            assert_eq!(r.time, o.time);
        }
        assert!(rep.validate().is_ok());
    }

    #[test]
    fn replicate_degenerate_word_distribution() {
        // Logit 30 saturates the softmax: all mass on word 1.
        let obs = corpus(vec![Snippet { words: vec![0, 0, 0, 0], genre: 0, time: 0 }], 3, 1, 1);
        let mut draw = ParamState::zeros(1, 1, 1, 3);
        draw.psi[[0, 0, 1]] = 30.0;
        let mut rng = crate::rng::stream(223);
        let rep = replicate_dataset(&obs, &draw, &mut rng).unwrap();
        assert_eq!(rep.snippets[0].words, vec![1, 1, 1, 1]);
    }

    #[test]
    fn replicate_word_frequencies_match_psi() {
        // K=1 so all snippets use the same word row; LLN at 4-sigma bounds.
        let len = 10;
        let snippets: Vec<Snippet> = (0..300)
            .map(|_| Snippet { words: vec![0; len], genre: 0, time: 0 })
            .collect();
        let obs = corpus(snippets, 3, 1, 1);
        let mut draw = ParamState::zeros(1, 1, 1, 3);
        draw.psi[[0, 0, 0]] = 0.8;
        draw.psi[[0, 0, 1]] = -0.3;
        let psi_tilde = crate::model::softmax(&[0.8, -0.3, 0.0]).unwrap();
        let mut rng = crate::rng::stream(227);
        let rep = replicate_dataset(&obs, &draw, &mut rng).unwrap();
        let total = (300 * len) as f64;
        for v in 0..3 {
            let count = rep
                .snippets
                .iter()
                .flat_map(|s| &s.words)
                .filter(|&&w| w == v)
                .count() as f64;
            let p = psi_tilde[v];
            let sigma = (total * p * (1.0 - p)).sqrt();
            assert!(
                (count - total * p).abs() < 4.0 * sigma,
                "word {v}: count {count}, expected {}",
                total * p
            );
        }
    }

    #[test]
    fn replicate_is_deterministic() {
        let obs = corpus(
            vec![Snippet { words: vec![0, 1], genre: 0, time: 0 }],
            2,
            1,
            1,
        );
        let draw = ParamState::zeros(1, 1, 2, 2);
        let mut r1 = crate::rng::stream(229);
        let mut r2 = crate::rng::stream(229);
        let a = replicate_dataset(&obs, &draw, &mut r1).unwrap();
        let b = replicate_dataset(&obs, &draw, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn diagnostic_equals_log_likelihood() {
        let obs = corpus(
            vec![Snippet { words: vec![0, 2], genre: 0, time: 1 }],
            3,
            1,
            2,
        );
        let mut rng = crate::rng::stream(233);
        let mut draw = ParamState::zeros(1, 2, 2, 3);
        for x in draw.phi.iter_mut() {
            use rand::Rng;
            *x = rng.random::<f64>() - 0.5;
        }
        for x in draw.psi.iter_mut() {
            use rand::Rng;
            *x = rng.random::<f64>() - 0.5;
        }
        let via_diag = diagnostic(&obs, DiagnosticParams::Logits(&draw)).unwrap();
        assert_eq!(via_diag, model::log_likelihood(&obs, &draw).unwrap());

        let probs = ProbParams::from_logits(&draw);
        let via_probs = diagnostic(&obs, DiagnosticParams::Probs(&probs)).unwrap();
        assert_relative_eq!(via_probs, via_diag, epsilon = 1e-9);
    }

    #[test]
    fn diagnostic_empty_corpus_is_zero() {
        let obs = corpus(vec![], 3, 1, 1);
        let draw = ParamState::zeros(1, 1, 2, 3);
        assert_eq!(diagnostic(&obs, DiagnosticParams::Logits(&draw)).unwrap(), 0.0);
    }

    #[test]
    fn pvalue_boundary_cases() {
        let refs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(ppc_pvalue(&refs, 0.5).unwrap(), 0.0);
        assert_eq!(ppc_pvalue(&refs, 5.0).unwrap(), 1.0);
        assert_eq!(ppc_pvalue(&refs, 2.5).unwrap(), 0.5);
        // Strict inequality: ties are not counted.
        assert_eq!(ppc_pvalue(&[2.0, 2.0], 2.0).unwrap(), 0.0);
        assert!(ppc_pvalue(&[], 1.0).is_err());
    }

    #[test]
    fn pvalue_matches_brute_force_on_random_inputs() {
        use rand::Rng;
        let mut rng = crate::rng::stream(239);
        for _ in 0..100 {
            let n = rng.random_range(1..=20);
            let refs: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
            let obs = rng.random::<f64>() * 10.0 - 5.0;
            let p = ppc_pvalue(&refs, obs).unwrap();
            let mut count = 0;
            for &r in &refs {
                if r < obs {
                    count += 1;
                }
            }
            assert_eq!(p, count as f64 / n as f64);
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn degenerate_deterministic_model_gives_zero_pvalues() {
        // V=1 forces every replicate to equal the observed corpus, so the
        // reference diagnostic ties the observed one and strict < gives 0.
        let obs = corpus(
            vec![
                Snippet { words: vec![0, 0], genre: 0, time: 0 },
                Snippet { words: vec![0], genre: 0, time: 0 },
            ],
            1,
            1,
            1,
        );
        let config = ModelConfig { num_senses: 1, ..ModelConfig::default() };
        let mcmc = McmcConfig {
            num_draws: 10,
            num_warmup: 10,
            num_chains: 1,
            seed: 241,
            ..McmcConfig::default()
        };
        let draws = sample_posterior(&obs, &config, 1.0, &mcmc).unwrap();
        let result = run_ppc(&obs, &draws, 7).unwrap();
        assert_eq!(result.p_mean, 0.0);
        assert_eq!(result.p_paired, 0.0);
        assert_eq!(result.p_avg, 0.0);
        for (r, o) in result.ref_diagnostics.iter().zip(&result.observed_at_draws) {
            assert_eq!(r, o);
        }
    }

    #[test]
    fn run_ppc_is_deterministic_and_consistent() {
        let obs = corpus(
            vec![
                Snippet { words: vec![0, 1, 1], genre: 0, time: 0 },
                Snippet { words: vec![2, 0], genre: 0, time: 1 },
            ],
            3,
            1,
            2,
        );
        let mcmc = McmcConfig {
            num_draws: 40,
            num_warmup: 40,
            num_chains: 2,
            seed: 251,
            ..McmcConfig::default()
        };
        let draws = sample_posterior(&obs, &ModelConfig::default(), 1.0, &mcmc).unwrap();
        let a = run_ppc(&obs, &draws, 13).unwrap();
        let b = run_ppc(&obs, &draws, 13).unwrap();
        assert_eq!(a, b);

        assert_eq!(a.ref_diagnostics.len(), draws.len());
        assert_eq!(a.observed_at_draws.len(), draws.len());
        for p in [a.p_mean, a.p_paired, a.p_avg] {
            assert!((0.0..=1.0).contains(&p));
        }
        // Cross-check each estimator against its direct definition.
        let brute = |obs_val: f64| {
            a.ref_diagnostics.iter().filter(|&&r| r < obs_val).count() as f64
                / a.ref_diagnostics.len() as f64
        };
        assert_eq!(a.p_mean, brute(a.observed_at_mean));
        let avg = a.observed_at_draws.iter().sum::<f64>() / a.observed_at_draws.len() as f64;
        assert_eq!(a.p_avg, brute(avg));
    }

    #[test]
    fn ppc_files_round_trip() {
        let result = PpcResult {
            ref_diagnostics: vec![-10.5, -11.25],
            observed_at_mean: -10.0,
            observed_at_draws: vec![-10.1, -10.2],
            p_mean: 1.0,
            p_paired: 1.0,
            p_avg: 1.0,
            lambda: 0.5,
        };
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("ppc.json");
        save_ppc_json(&result, &json).unwrap();
        let loaded: PpcResult =
            serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(result, loaded);

        let csv_path = dir.path().join("ppc.csv");
        save_ppc_csv(&result, &csv_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("draw_index,ref_diagnostic,observed_at_draw"));
        assert_eq!(text.lines().count(), 3);
    }
}
