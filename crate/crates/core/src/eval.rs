//! Label-based scoring and posterior summaries.
//!
//! Predictions are per-snippet sense posteriors averaged over draws. When
//! the model uses more senses than the labels distinguish, model senses
//! are grouped onto true senses by the surjection minimising the Brier
//! score. A collapsed posterior (all sense-word distributions nearly
//! identical) makes the grouping meaningless, so the Brier score is
//! reported as absent in that case.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{symmetric_kl, Corpus, LogProbTables, ProbParams};
use crate::sampler::PosteriorDraws;

/// Senses whose pairwise symmetric KL all fall below this count as
/// collapsed. A stand-in for visual inspection; configurable upstream.
pub const COLLAPSE_THRESHOLD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Absent when the posterior collapsed.
    pub brier: Option<f64>,
    /// Model sense -> true sense (0-based); length K. Absent when collapsed
    /// or when no labels are available.
    pub mapping: Option<Vec<usize>>,
    /// D x K' mapped predictive probabilities (D x K when unmapped).
    pub per_snippet_probs: Vec<Vec<f64>>,
    pub collapsed: bool,
    /// K x K symmetric KL between time-marginal sense-word distributions.
    pub pairwise_divergence: Vec<Vec<f64>>,
    pub lambda: f64,
}

/// Mean over draws of each snippet's sense posterior: a D x K matrix of
/// simplex rows.
pub fn predictive_probs(corpus: &Corpus, draws: &PosteriorDraws) -> Result<Vec<Vec<f64>>> {
    if draws.is_empty() {
        return Err(Error::config("predictive probabilities require draws"));
    }
    let tables: Vec<LogProbTables> =
        draws.draws.par_iter().map(LogProbTables::new).collect();
    let n = draws.len() as f64;
    let k = draws.num_senses();
    Ok(corpus
        .snippets
        .par_iter()
        .map(|snippet| {
            let mut acc = vec![0.0; k];
            for t in &tables {
                let post = crate::model::sense_posterior_with(snippet, t);
                for (a, p) in acc.iter_mut().zip(&post) {
                    *a += p;
                }
            }
            for a in &mut acc {
                *a /= n;
            }
            acc
        })
        .collect())
}

/// Mean squared distance between probability rows and one-hot labels,
/// averaged over snippets. Range [0, 2].
pub fn brier_score(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::config(format!(
            "{} probability rows vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::config("Brier score requires at least one snippet"));
    }
    let mut total = 0.0;
    for (row, &o) in probs.iter().zip(labels) {
        if o >= row.len() {
            return Err(Error::config(format!(
                "label {o} out of range for {} predicted senses",
                row.len()
            )));
        }
        for (kk, &p) in row.iter().enumerate() {
            let target = if kk == o { 1.0 } else { 0.0 };
            total += (p - target).powi(2);
        }
    }
    Ok(total / probs.len() as f64)
}

fn apply_mapping(probs: &[Vec<f64>], mapping: &[usize], k_true: usize) -> Vec<Vec<f64>> {
    probs
        .iter()
        .map(|row| {
            let mut out = vec![0.0; k_true];
            for (k, &p) in row.iter().enumerate() {
                out[mapping[k]] += p;
            }
            out
        })
        .collect()
}

/// Enumerate surjections {0..K} -> {0..K'} and keep the one minimising the
/// Brier score; ties resolve to the lexicographically smallest mapping.
pub fn map_senses(
    probs: &[Vec<f64>],
    labels: &[usize],
    k_true: usize,
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    if probs.is_empty() {
        return Err(Error::config("sense mapping requires predictions"));
    }
    if labels.len() != probs.len() {
        return Err(Error::config("sense mapping requires a label per snippet"));
    }
    let k = probs[0].len();
    if k_true == 0 || k < k_true {
        return Err(Error::config(format!(
            "no surjection from {k} model senses onto {k_true} true senses"
        )));
    }
    if k > 12 {
        return Err(Error::config("sense mapping search supports at most 12 senses"));
    }

    let mut best: Option<(f64, Vec<usize>, Vec<Vec<f64>>)> = None;
    let mut mapping = vec![0usize; k];
    let total = (k_true as u64).pow(k as u32);
    for code in 0..total {
        let mut c = code;
        // Decode so mapping[0] is the most significant digit: enumeration
        // order is lexicographic in the mapping vector.
        for slot in (0..k).rev() {
            mapping[slot] = (c % k_true as u64) as usize;
            c /= k_true as u64;
        }
        let mut hit = vec![false; k_true];
        for &m in &mapping {
            hit[m] = true;
        }
        if !hit.iter().all(|&h| h) {
            continue;
        }
        let mapped = apply_mapping(probs, &mapping, k_true);
        let bs = brier_score(&mapped, labels)?;
        let better = match &best {
            None => true,
            Some((cur, _, _)) => bs < *cur,
        };
        if better {
            best = Some((bs, mapping.clone(), mapped));
        }
    }
    let (_, mapping, mapped) = best.expect("surjections exist when K >= K'");
    Ok((mapping, mapped))
}

/// Pairwise symmetric KL between time-marginal sense-word distributions;
/// collapsed when every pair falls below `threshold`. K = 1 is never
/// collapsed by convention.
pub fn detect_collapse(mean: &ProbParams, threshold: f64) -> (bool, Vec<Vec<f64>>) {
    let rows = mean.time_marginal_word_dists();
    let (k, v) = rows.dim();
    let row = |i: usize| -> Vec<f64> { (0..v).map(|vi| rows[[i, vi]]).collect() };
    let mut matrix = vec![vec![0.0; k]; k];
    let mut max_div: f64 = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let d = symmetric_kl(&row(i), &row(j));
            matrix[i][j] = d;
            matrix[j][i] = d;
            max_div = max_div.max(d);
        }
    }
    let collapsed = k >= 2 && max_div < threshold;
    (collapsed, matrix)
}

/// Top `n` words per sense from the time-marginal distributions, highest
/// probability first, ties broken by the smaller word id.
pub fn top_words(mean: &ProbParams, n: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let rows = mean.time_marginal_word_dists();
    let (k, v) = rows.dim();
    if n > v {
        return Err(Error::config(format!(
            "cannot rank {n} words from a vocabulary of {v}"
        )));
    }
    Ok((0..k)
        .map(|ki| {
            let mut idx: Vec<usize> = (0..v).collect();
            idx.sort_by(|&a, &b| {
                rows[[ki, b]]
                    .partial_cmp(&rows[[ki, a]])
                    .expect("finite probabilities")
                    .then(a.cmp(&b))
            });
            idx.into_iter().take(n).map(|vi| (vi, rows[[ki, vi]])).collect()
        })
        .collect())
}

/// Shortest contiguous interval covering `ceil(mass * n)` order statistics.
/// Width ties resolve to the lowest window, so a symmetric bimodal sample
/// yields the lower cluster.
pub fn hpd_interval(samples: &[f64], mass: f64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::config("HPD interval requires at least 2 samples"));
    }
    if !(0.0 < mass && mass < 1.0) {
        return Err(Error::config("HPD mass must be in (0, 1)"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::config("HPD interval requires finite samples"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = sorted.len();
    let w = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (sorted[0], sorted[w - 1]);
    let mut best_width = best.1 - best.0;
    for i in 1..=(n - w) {
        let width = sorted[i + w - 1] - sorted[i];
        if width < best_width {
            best_width = width;
            best = (sorted[i], sorted[i + w - 1]);
        }
    }
    Ok(best)
}

/// Posterior mean and HPD interval of one sense-prevalence entry.
#[derive(Clone, Debug, PartialEq)]
pub struct PrevalenceSummary {
    pub genre: usize,
    pub time: usize,
    pub sense: usize,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Per-(genre, time, sense) prevalence summaries across draws. Requires
/// at least two draws for the interval to exist.
pub fn prevalence_intervals(
    draws: &PosteriorDraws,
    mass: f64,
) -> Result<Vec<PrevalenceSummary>> {
    if draws.len() < 2 {
        return Err(Error::config("prevalence intervals require at least 2 draws"));
    }
    let probs: Vec<ProbParams> = draws.draws.iter().map(ProbParams::from_logits).collect();
    let (g, t, k) = probs[0].phi_tilde.dim();
    let mut out = Vec::with_capacity(g * t * k);
    let mut samples = Vec::with_capacity(probs.len());
    for gi in 0..g {
        for ti in 0..t {
            for ki in 0..k {
                samples.clear();
                samples.extend(probs.iter().map(|p| p.phi_tilde[[gi, ti, ki]]));
                let mean = samples.iter().sum::<f64>() / samples.len() as f64;
                let (lo, hi) = hpd_interval(&samples, mass)?;
                out.push(PrevalenceSummary { genre: gi, time: ti, sense: ki, mean, lo, hi });
            }
        }
    }
    Ok(out)
}

/// CSV of prevalence summaries: genre, time, sense (1-based), posterior
/// mean, and HPD bounds.
pub fn save_prevalence_csv(summaries: &[PrevalenceSummary], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["genre", "time", "sense", "mean", "hpd_lo", "hpd_hi"])?;
    for s in summaries {
        w.write_record(&[
            (s.genre + 1).to_string(),
            (s.time + 1).to_string(),
            (s.sense + 1).to_string(),
            s.mean.to_string(),
            s.lo.to_string(),
            s.hi.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Full evaluation against the corpus labels (when present).
pub fn evaluate(
    corpus: &Corpus,
    draws: &PosteriorDraws,
    collapse_threshold: f64,
) -> Result<EvalReport> {
    let probs = predictive_probs(corpus, draws)?;
    let mean = crate::sampler::posterior_mean_probs(draws)?;
    let (collapsed, pairwise_divergence) = detect_collapse(&mean, collapse_threshold);

    let labelled = match (&corpus.true_labels, corpus.num_true_senses) {
        (Some(labels), Some(kp)) => Some((labels, kp)),
        _ => None,
    };
    let (brier, mapping, per_snippet_probs) = match labelled {
        Some((labels, kp)) if !collapsed => {
            let (mapping, mapped) = map_senses(&probs, labels, kp)?;
            let bs = brier_score(&mapped, labels)?;
            (Some(bs), Some(mapping), mapped)
        }
        _ => (None, None, probs),
    };

    Ok(EvalReport {
        brier,
        mapping,
        per_snippet_probs,
        collapsed,
        pairwise_divergence,
        lambda: draws.lambda,
    })
}

/// JSON layout of an [`EvalReport`]; sense indices are 1-based on disk.
pub fn save_eval_json(report: &EvalReport, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Wire<'a> {
        brier: Option<f64>,
        mapping: Option<Vec<usize>>,
        collapsed: bool,
        pairwise_divergence: &'a Vec<Vec<f64>>,
        lambda: f64,
        num_snippets: usize,
    }
    let wire = Wire {
        brier: report.brier,
        mapping: report
            .mapping
            .as_ref()
            .map(|m| m.iter().map(|t| t + 1).collect()),
        collapsed: report.collapsed,
        pairwise_divergence: &report.pairwise_divergence,
        lambda: report.lambda,
        num_snippets: report.per_snippet_probs.len(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &wire)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// CSV of per-snippet probabilities: snippet (1-based), then one column
/// per (mapped) sense.
pub fn save_probs_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let k = report.per_snippet_probs.first().map_or(0, |r| r.len());
    let mut header = vec!["snippet".to_string()];
    header.extend((1..=k).map(|i| format!("p_sense_{i}")));
    w.write_record(&header)?;
    for (i, row) in report.per_snippet_probs.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(row.iter().map(|p| p.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV of ranked context words: sense, rank, word_id (all 1-based), and
/// the time-marginal probability.
pub fn save_top_words_csv(words: &[Vec<(usize, f64)>], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sense", "rank", "word_id", "probability"])?;
    for (k, ranked) in words.iter().enumerate() {
        for (rank, (word, prob)) in ranked.iter().enumerate() {
            w.write_record(&[
                (k + 1).to_string(),
                (rank + 1).to_string(),
                (word + 1).to_string(),
                prob.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
