//! Corpus files, synthetic corpus generation, and dataset splitting.
//!
//! Wire format (`corpus.json`): a single JSON document
//! `{vocab_size, num_genres, num_times, num_true_senses?, snippets: [...]}`
//! where each snippet is `{words: [..], genre, time, label?}`. All ids in
//! the file are 1-based; in memory everything is 0-based. Labels are
//! all-or-none and require `num_true_senses`.
//!
//! The generator draws true parameters from the model's own generative
//! story (logits i.i.d. normal, softmax to simplexes) and can inject two
//! kinds of misspecification: bursty snippets built from few distinct
//! words, and exact snippet duplication. Both shrink the effective sample
//! size relative to the nominal one while keeping the fitted model's
//! snippet exchangeability assumptions intact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Corpus, ParamState, ProbParams, Snippet};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Misspecification {
    None,
    /// Each snippet draws `distinct_words` sources from its sense's word
    /// distribution without replacement, then fills all positions uniformly
    /// from those sources. Induces within-snippet correlation with the
    /// per-source marginal preserved.
    Burstiness { distinct_words: usize },
    /// Generate `D / copies` base snippets and repeat each `copies` times.
    Duplication { copies: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_snippets: usize,
    pub vocab_size: usize,
    pub num_genres: usize,
    pub num_times: usize,
    pub num_true_senses: usize,
    pub snippet_length: usize,
    /// True prevalence logits are drawn N(0, concentration_phi^2).
    pub concentration_phi: f64,
    /// True word logits are drawn N(0, concentration_psi^2).
    pub concentration_psi: f64,
    pub misspecification: Misspecification,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_snippets: 200,
            vocab_size: 50,
            num_genres: 1,
            num_times: 4,
            num_true_senses: 2,
            snippet_length: 12,
            concentration_phi: 1.0,
            concentration_psi: 1.0,
            misspecification: Misspecification::None,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_snippets", self.num_snippets),
            ("vocab_size", self.vocab_size),
            ("num_genres", self.num_genres),
            ("num_times", self.num_times),
            ("num_true_senses", self.num_true_senses),
            ("snippet_length", self.snippet_length),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be >= 1")));
            }
        }
        if !(self.concentration_phi > 0.0) || !(self.concentration_psi > 0.0) {
            return Err(Error::config("concentration values must be > 0"));
        }
        match self.misspecification {
            Misspecification::None => {}
            Misspecification::Burstiness { distinct_words } => {
                if distinct_words == 0 || distinct_words >= self.snippet_length {
                    return Err(Error::config(format!(
                        "distinct_words must be in [1, snippet_length), got {} with \
                         snippet_length {}",
                        distinct_words, self.snippet_length
                    )));
                }
                if distinct_words > self.vocab_size {
                    return Err(Error::config(
                        "distinct_words cannot exceed vocab_size",
                    ));
                }
            }
            Misspecification::Duplication { copies } => {
                if copies == 0 {
                    return Err(Error::config("copies must be >= 1"));
                }
                if self.num_snippets % copies != 0 {
                    return Err(Error::config(format!(
                        "num_snippets ({}) must be divisible by copies ({})",
                        self.num_snippets, copies
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Ground truth saved alongside a generated corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTruth {
    pub probs: ProbParams,
    pub labels: Vec<usize>,
    pub generator: GeneratorConfig,
}

/// Weighted draw without replacement: `remaining` entries are zeroed as
/// they are chosen; `total` tracks the unnormalised remaining mass.
fn sample_without_replacement(
    remaining: &mut [f64],
    total: &mut f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> usize {
    let u = rng.random::<f64>() * *total;
    let mut acc = 0.0;
    let mut pick = None;
    for (i, &p) in remaining.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        if u < acc {
            pick = Some(i);
            break;
        }
    }
    // Cumulative rounding can leave u marginally above acc; take the last
    // available index in that case.
    let idx = pick.unwrap_or_else(|| {
        remaining
            .iter()
            .rposition(|&p| p > 0.0)
            .expect("mass left to sample")
    });
    *total -= remaining[idx];
    remaining[idx] = 0.0;
    idx
}

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

/// Generate a corpus from the model's own generative process, optionally
/// misspecified. Deterministic given the config (which includes the seed).
pub fn generate_synthetic(config: &GeneratorConfig) -> Result<(Corpus, SyntheticTruth)> {
    config.validate()?;
    let mut rng = stream(config.seed);
    let (d, v, g, t, k, l) = (
        config.num_snippets,
        config.vocab_size,
        config.num_genres,
        config.num_times,
        config.num_true_senses,
        config.snippet_length,
    );

    // True parameters: logits i.i.d. normal, then softmax per row.
    let mut true_params = ParamState::zeros(g, t, k, v);
    for x in true_params.phi.iter_mut() {
        *x = config.concentration_phi * rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
    for x in true_params.psi.iter_mut() {
        *x = config.concentration_psi * rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
    let probs = ProbParams::from_logits(&true_params);

    let num_bases = match config.misspecification {
        Misspecification::Duplication { copies } => d / copies,
        _ => d,
    };

    let mut bases: Vec<(Snippet, usize)> = Vec::with_capacity(num_bases);
    for b in 0..num_bases {
        // Stratified round-robin covariates: genres cycle fastest.
        let genre = b % g;
        let time = (b / g) % t;

        let phi_row: Vec<f64> = (0..k).map(|ki| probs.phi_tilde[[genre, time, ki]]).collect();
        let z = sample_categorical(&phi_row, rng.random());
        let psi_row: Vec<f64> = (0..v).map(|vi| probs.psi_tilde[[z, time, vi]]).collect();

        let words = match config.misspecification {
            Misspecification::Burstiness { distinct_words } => {
                let mut remaining = psi_row.clone();
                let mut total: f64 = remaining.iter().sum();
                let sources: Vec<usize> = (0..distinct_words)
                    .map(|_| sample_without_replacement(&mut remaining, &mut total, &mut rng))
                    .collect();
                (0..l).map(|_| sources[rng.random_range(0..sources.len())]).collect()
            }
            _ => (0..l).map(|_| sample_categorical(&psi_row, rng.random())).collect(),
        };
        bases.push((Snippet { words, genre, time }, z));
    }

    let mut snippets = Vec::with_capacity(d);
    let mut labels = Vec::with_capacity(d);
    match config.misspecification {
        Misspecification::Duplication { copies } => {
            for (snippet, z) in &bases {
                for _ in 0..copies {
                    snippets.push(snippet.clone());
                    labels.push(*z);
                }
            }
        }
        _ => {
            for (snippet, z) in bases {
                snippets.push(snippet);
                labels.push(z);
            }
        }
    }

    let corpus = Corpus {
        snippets,
        vocab_size: v,
        num_genres: g,
        num_times: t,
        true_labels: Some(labels.clone()),
        num_true_senses: Some(k),
    };
    corpus.validate()?;
    let truth = SyntheticTruth { probs, labels, generator: config.clone() };
    Ok((corpus, truth))
}

#[derive(Serialize, Deserialize)]
struct WireSnippet {
    words: Vec<usize>,
    genre: usize,
    time: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct WireCorpus {
    vocab_size: usize,
    num_genres: usize,
    num_times: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    num_true_senses: Option<usize>,
    snippets: Vec<WireSnippet>,
}

fn field_err(snippet: usize, field: &str, value: usize, max: usize) -> Error {
    Error::data(format!(
        "snippet {snippet}: {field} {value} out of range 1..={max}"
    ))
}

/// Parse and fully validate a corpus file. Ids in the file are 1-based.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = File::open(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let wire: WireCorpus = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;

    if wire.vocab_size == 0 || wire.num_genres == 0 || wire.num_times == 0 {
        return Err(Error::data(
            "vocab_size, num_genres, and num_times must all be >= 1",
        ));
    }
    let mut snippets = Vec::with_capacity(wire.snippets.len());
    let mut labels = Vec::new();
    for (i, s) in wire.snippets.iter().enumerate() {
        let d = i + 1;
        if s.genre == 0 || s.genre > wire.num_genres {
            return Err(field_err(d, "genre", s.genre, wire.num_genres));
        }
        if s.time == 0 || s.time > wire.num_times {
            return Err(field_err(d, "time", s.time, wire.num_times));
        }
        let mut words = Vec::with_capacity(s.words.len());
        for &w in &s.words {
            if w == 0 || w > wire.vocab_size {
                return Err(field_err(d, "word id", w, wire.vocab_size));
            }
            words.push(w - 1);
        }
        if let Some(label) = s.label {
            let kp = wire.num_true_senses.ok_or_else(|| {
                Error::data(format!(
                    "snippet {d}: label present but num_true_senses missing"
                ))
            })?;
            if label == 0 || label > kp {
                return Err(field_err(d, "label", label, kp));
            }
            if labels.len() != i {
                return Err(Error::data(format!(
                    "snippet {d}: labels must be present on all snippets or none"
                )));
            }
            labels.push(label - 1);
        } else if !labels.is_empty() {
            return Err(Error::data(format!(
                "snippet {d}: labels must be present on all snippets or none"
            )));
        }
        snippets.push(Snippet { words, genre: s.genre - 1, time: s.time - 1 });
    }

    let has_labels = !labels.is_empty() || (wire.snippets.is_empty() && wire.num_true_senses.is_some());
    let corpus = Corpus {
        snippets,
        vocab_size: wire.vocab_size,
        num_genres: wire.num_genres,
        num_times: wire.num_times,
        true_labels: if has_labels { Some(labels) } else { None },
        num_true_senses: if has_labels { wire.num_true_senses } else { None },
    };
    corpus.validate()?;
    Ok(corpus)
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    corpus.validate()?;
    let wire = WireCorpus {
        vocab_size: corpus.vocab_size,
        num_genres: corpus.num_genres,
        num_times: corpus.num_times,
        num_true_senses: corpus.num_true_senses,
        snippets: corpus
            .snippets
            .iter()
            .enumerate()
            .map(|(i, s)| WireSnippet {
                words: s.words.iter().map(|w| w + 1).collect(),
                genre: s.genre + 1,
                time: s.time + 1,
                label: corpus.true_labels.as_ref().map(|l| l[i] + 1),
            })
            .collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &wire)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn probs_to_nested(arr: &ndarray::Array3<f64>) -> Vec<Vec<Vec<f64>>> {
    let (a, b, c) = arr.dim();
    (0..a)
        .map(|i| (0..b).map(|j| (0..c).map(|k| arr[[i, j, k]]).collect()).collect())
        .collect()
}

/// Persist generator ground truth: true probabilities (nested arrays),
/// 1-based labels, and the generating config.
pub fn save_truth(truth: &SyntheticTruth, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct WireTruth<'a> {
        phi_tilde: Vec<Vec<Vec<f64>>>,
        psi_tilde: Vec<Vec<Vec<f64>>>,
        labels: Vec<usize>,
        generator: &'a GeneratorConfig,
    }
    let wire = WireTruth {
        phi_tilde: probs_to_nested(&truth.probs.phi_tilde),
        psi_tilde: probs_to_nested(&truth.probs.psi_tilde),
        labels: truth.labels.iter().map(|z| z + 1).collect(),
        generator: &truth.generator,
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &wire)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Random partition into `parts` corpora with sizes differing by at most 1.
/// Labels, when present, follow their snippets.
pub fn split_corpus(corpus: &Corpus, parts: usize, seed: u64) -> Result<Vec<Corpus>> {
    if parts < 2 {
        return Err(Error::config("split requires parts >= 2"));
    }
    if parts > corpus.len() {
        return Err(Error::config(format!(
            "cannot split {} snippets into {} parts",
            corpus.len(),
            parts
        )));
    }
    let mut indices: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = stream(seed);
    // Fisher-Yates, explicit so the draw sequence is part of the contract.
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }

    let mut out = Vec::with_capacity(parts);
    for p in 0..parts {
        let take: Vec<usize> = indices.iter().skip(p).step_by(parts).cloned().collect();
        out.push(Corpus {
            snippets: take.iter().map(|&i| corpus.snippets[i].clone()).collect(),
            vocab_size: corpus.vocab_size,
            num_genres: corpus.num_genres,
            num_times: corpus.num_times,
            true_labels: corpus
                .true_labels
                .as_ref()
                .map(|l| take.iter().map(|&i| l[i]).collect()),
            num_true_senses: corpus.num_true_senses,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn burst_config(m: usize) -> GeneratorConfig {
        GeneratorConfig {
            num_snippets: 40,
            vocab_size: 12,
            num_genres: 2,
            num_times: 2,
            num_true_senses: 2,
            snippet_length: 8,
            misspecification: Misspecification::Burstiness { distinct_words: m },
            seed: 301,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let config = GeneratorConfig { seed: 311, ..GeneratorConfig::default() };
        let (c1, t1) = generate_synthetic(&config).unwrap();
        let (c2, t2) = generate_synthetic(&config).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(t1, t2);

        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        save_corpus(&c1, &p1).unwrap();
        save_corpus(&c2, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn single_sense_word_frequencies_match_truth() {
        let config = GeneratorConfig {
            num_snippets: 400,
            vocab_size: 2,
            num_genres: 1,
            num_times: 1,
            num_true_senses: 1,
            snippet_length: 10,
            seed: 313,
            ..GeneratorConfig::default()
        };
        let (corpus, truth) = generate_synthetic(&config).unwrap();
        let total = (400 * 10) as f64;
        let count0 = corpus
            .snippets
            .iter()
            .flat_map(|s| &s.words)
            .filter(|&&w| w == 0)
            .count() as f64;
        let p = truth.probs.psi_tilde[[0, 0, 0]];
        let sigma = (total * p * (1.0 - p)).sqrt();
        assert!(
            (count0 - total * p).abs() < 4.0 * sigma,
            "count {count0}, expected {}",
            total * p
        );
    }

    #[test]
    fn duplication_produces_exact_copies() {
        let config = GeneratorConfig {
            num_snippets: 30,
            misspecification: Misspecification::Duplication { copies: 2 },
            seed: 317,
            ..GeneratorConfig::default()
        };
        let (corpus, truth) = generate_synthetic(&config).unwrap();
        assert_eq!(corpus.len(), 30);
        let mut counts = std::collections::HashMap::new();
        for s in &corpus.snippets {
            *counts.entry((s.words.clone(), s.genre, s.time)).or_insert(0usize) += 1;
        }
        for (_, c) in counts {
            assert_eq!(c % 2, 0, "every snippet must appear an even number of times");
        }
        // Copies carry the base label.
        for pair in truth.labels.chunks(2) {
            assert_eq!(pair[0], pair[1]);
        }
    }

    #[test]
    fn duplication_requires_divisibility() {
        let config = GeneratorConfig {
            num_snippets: 31,
            misspecification: Misspecification::Duplication { copies: 2 },
            ..GeneratorConfig::default()
        };
        assert!(generate_synthetic(&config).is_err());
    }

    #[test]
    fn burstiness_single_source_makes_constant_snippets() {
        let (corpus, _) = generate_synthetic(&burst_config(1)).unwrap();
        for s in &corpus.snippets {
            assert!(s.words.iter().all(|&w| w == s.words[0]));
        }
    }

    #[test]
    fn burstiness_bounds_type_token_ratio() {
        let m = 3;
        let (corpus, _) = generate_synthetic(&burst_config(m)).unwrap();
        for s in &corpus.snippets {
            let distinct: std::collections::HashSet<_> = s.words.iter().collect();
            assert!(distinct.len() <= m);
        }
    }

    #[test]
    fn burstiness_validates_source_count() {
        let mut config = burst_config(8);
        assert!(generate_synthetic(&config).is_err(), "m == L must be rejected");
        config.misspecification = Misspecification::Burstiness { distinct_words: 0 };
        assert!(generate_synthetic(&config).is_err());
    }

    #[test]
    fn covariates_are_stratified_round_robin() {
        let config = GeneratorConfig {
            num_snippets: 12,
            num_genres: 2,
            num_times: 3,
            seed: 331,
            ..GeneratorConfig::default()
        };
        let (corpus, _) = generate_synthetic(&config).unwrap();
        let mut cell_counts = vec![vec![0usize; 3]; 2];
        for s in &corpus.snippets {
            cell_counts[s.genre][s.time] += 1;
        }
        for g in 0..2 {
            for t in 0..3 {
                assert_eq!(cell_counts[g][t], 2, "cell ({g},{t})");
            }
        }
    }

    #[test]
    fn minimal_corpus_file_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"vocab_size": 3, "num_genres": 1, "num_times": 2,
                "snippets": [{"words": [1, 3], "genre": 1, "time": 2}]}"#,
        )
        .unwrap();
        let corpus = load_corpus(&path).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.snippets[0].words, vec![0, 2]);
        assert_eq!(corpus.snippets[0].time, 1);
        assert!(corpus.true_labels.is_none());
    }

    #[test]
    fn out_of_range_ids_name_the_snippet_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"vocab_size": 3, "num_genres": 1, "num_times": 1, "snippets": [
                {"words": [1], "genre": 1, "time": 1},
                {"words": [4], "genre": 1, "time": 1}]}"#,
        )
        .unwrap();
        let err = load_corpus(&path).unwrap_err().to_string();
        assert!(err.contains("snippet 2"), "{err}");
        assert!(err.contains("word id 4"), "{err}");

        std::fs::write(
            &path,
            r#"{"vocab_size": 3, "num_genres": 2, "num_times": 1, "snippets": [
                {"words": [], "genre": 3, "time": 1}]}"#,
        )
        .unwrap();
        let err = load_corpus(&path).unwrap_err().to_string();
        assert!(err.contains("snippet 1"), "{err}");
        assert!(err.contains("genre 3"), "{err}");
    }

    #[test]
    fn labels_are_all_or_none() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"vocab_size": 2, "num_genres": 1, "num_times": 1, "num_true_senses": 2,
                "snippets": [
                {"words": [1], "genre": 1, "time": 1, "label": 1},
                {"words": [2], "genre": 1, "time": 1}]}"#,
        )
        .unwrap();
        let err = load_corpus(&path).unwrap_err().to_string();
        assert!(err.contains("all snippets or none"), "{err}");

        std::fs::write(
            &path,
            r#"{"vocab_size": 2, "num_genres": 1, "num_times": 1,
                "snippets": [{"words": [1], "genre": 1, "time": 1, "label": 1}]}"#,
        )
        .unwrap();
        let err = load_corpus(&path).unwrap_err().to_string();
        assert!(err.contains("num_true_senses"), "{err}");
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let config = GeneratorConfig {
            num_snippets: 25,
            misspecification: Misspecification::Burstiness { distinct_words: 3 },
            seed: 337,
            ..GeneratorConfig::default()
        };
        let (corpus, _) = generate_synthetic(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("one.json");
        let p2 = dir.path().join("two.json");
        save_corpus(&corpus, &p1).unwrap();
        let loaded = load_corpus(&p1).unwrap();
        assert_eq!(loaded, corpus);
        save_corpus(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn split_sizes_and_multiset() {
        let (corpus, _) = generate_synthetic(&GeneratorConfig {
            num_snippets: 11,
            seed: 347,
            ..GeneratorConfig::default()
        })
        .unwrap();
        let parts = split_corpus(&corpus, 5, 999).unwrap();
        let mut sizes: Vec<usize> = parts.iter().map(|p| p.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);

        let mut original: Vec<_> = corpus.snippets.iter().map(|s| s.words.clone()).collect();
        let mut recovered: Vec<_> = parts
            .iter()
            .flat_map(|p| p.snippets.iter().map(|s| s.words.clone()))
            .collect();
        original.sort();
        recovered.sort();
        assert_eq!(original, recovered);

        // Labels travel with their snippets.
        for part in &parts {
            let labels = part.true_labels.as_ref().unwrap();
            assert_eq!(labels.len(), part.len());
        }

        let ten = split_corpus(&corpus, 11, 1).unwrap();
        assert!(ten.iter().all(|p| p.len() == 1));
        assert!(split_corpus(&corpus, 12, 1).is_err());
        assert!(split_corpus(&corpus, 1, 1).is_err());
    }

    #[test]
    fn split_even_case() {
        let (corpus, _) = generate_synthetic(&GeneratorConfig {
            num_snippets: 10,
            seed: 349,
            ..GeneratorConfig::default()
        })
        .unwrap();
        let parts = split_corpus(&corpus, 5, 7).unwrap();
        assert!(parts.iter().all(|p| p.len() == 2));
    }

    #[test]
    fn truth_file_is_written() {
        let (_, truth) = generate_synthetic(&GeneratorConfig {
            num_snippets: 6,
            seed: 353,
            ..GeneratorConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.json");
        save_truth(&truth, &path).unwrap();
        let value: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert!(value["phi_tilde"].is_array());
        assert_eq!(value["labels"].as_array().unwrap().len(), 6);
        // Labels in the file are 1-based.
        assert!(value["labels"].as_array().unwrap().iter().all(|v| v.as_u64().unwrap() >= 1));
    }
}
