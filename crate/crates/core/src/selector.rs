//! Learning-rate sweep and selection.
//!
//! For each grid rate the pipeline is fit, relabel, PPC, and (when labels
//! exist) scoring; the selected rate is the one minimising the p-value
//! among those exceeding alpha. Tempering too far drives the p-value to
//! zero, so the constraint keeps the strongest admissible tempering.

use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::model::{Corpus, ModelConfig};
use crate::ppc;
use crate::rng::{derive_seed, lambda_salt, PPC_SALT};
use crate::sampler::{self, McmcConfig};

fn default_grid() -> Vec<f64> {
    (1..=10).rev().map(|i| i as f64 / 10.0).collect()
}

fn default_alpha() -> f64 {
    0.1
}

fn default_collapse_threshold() -> f64 {
    eval::COLLAPSE_THRESHOLD
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    /// Candidate rates, starting at 1.0 and strictly decreasing.
    pub grid: Vec<f64>,
    pub alpha: f64,
    pub mcmc: McmcConfig,
    /// Skip remaining smaller rates once a zero p-value is observed.
    pub early_stop: bool,
    pub collapse_threshold: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            grid: default_grid(),
            alpha: default_alpha(),
            mcmc: McmcConfig::default(),
            early_stop: false,
            collapse_threshold: default_collapse_threshold(),
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::config("grid must be nonempty"));
        }
        if self.grid[0] != 1.0 {
            return Err(Error::config(format!(
                "grid must start at 1.0, got {}",
                self.grid[0]
            )));
        }
        for pair in self.grid.windows(2) {
            if !(pair[1] < pair[0]) {
                return Err(Error::config(format!(
                    "grid must be strictly decreasing, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if let Some(&last) = self.grid.last() {
            if !(last > 0.0) {
                return Err(Error::config(format!(
                    "grid values must be in (0, 1], got {last}"
                )));
            }
        }
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(Error::config(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(0.0 < self.collapse_threshold) {
            return Err(Error::config("collapse threshold must be positive"));
        }
        Ok(())
    }
}

/// Outcome of one grid point. A failed fit leaves the p-value fields
/// empty; a skipped point (early stop) leaves everything but `lambda`
/// empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRecord {
    pub lambda: f64,
    pub p_mean: Option<f64>,
    pub p_paired: Option<f64>,
    pub p_avg: Option<f64>,
    pub draws_file: Option<String>,
    pub ppc_json: Option<String>,
    pub ppc_csv: Option<String>,
    pub brier: Option<f64>,
    pub collapsed: Option<bool>,
    pub failed: bool,
    pub error: Option<String>,
    pub skipped: bool,
}

impl LambdaRecord {
    fn empty(lambda: f64) -> Self {
        LambdaRecord {
            lambda,
            p_mean: None,
            p_paired: None,
            p_avg: None,
            draws_file: None,
            ppc_json: None,
            ppc_csv: None,
            brier: None,
            collapsed: None,
            failed: false,
            error: None,
            skipped: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaReport {
    pub records: Vec<LambdaRecord>,
    /// The selected rate, if any p-value exceeded alpha.
    pub selected: Option<f64>,
    pub alpha: f64,
}

/// Minimise p subject to p > alpha over (lambda, p) pairs; ties on p go
/// to the smaller lambda. Returns none when no p exceeds alpha.
pub fn choose(pvalues: &[(f64, f64)], alpha: f64) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &(lambda, p) in pvalues {
        if !(p > alpha) {
            continue;
        }
        let replace = match best {
            None => true,
            Some((bl, bp)) => p < bp || (p == bp && lambda < bl),
        };
        if replace {
            best = Some((lambda, p));
        }
    }
    best.map(|(lambda, _)| lambda)
}

struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn acquire_lock(dir: &Path) -> Result<LockGuard> {
    let path = dir.join(".sweep.lock");
    match OpenOptions::new().write(true).create_new(true).open(&path) {
        Ok(mut file) => {
            let _ = writeln!(file, "{}", std::process::id());
            Ok(LockGuard { path })
        }
        Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::config(format!(
            "{}: another sweep appears to be running in this directory; \
             remove the lock file if that run is dead",
            path.display()
        ))),
        Err(e) => Err(e.into()),
    }
}

pub(crate) fn lambda_tag(lambda: f64) -> String {
    format!("{lambda:.4}")
}

/// Sweep the grid: fit, relabel, PPC, and score each rate, persisting
/// every artifact under `out_dir` and writing `report.json`/`report.csv`.
/// A sampler failure at one rate is recorded and the sweep continues.
pub fn select_lambda(
    corpus: &Corpus,
    model: &ModelConfig,
    sel: &SelectorConfig,
    out_dir: &Path,
) -> Result<LambdaReport> {
    sel.validate()?;
    model.validate()?;
    corpus.validate()?;
    fs::create_dir_all(out_dir)?;
    let _lock = acquire_lock(out_dir)?;

    let mut records = Vec::with_capacity(sel.grid.len());
    let mut hit_zero = false;
    for &lambda in &sel.grid {
        let mut record = LambdaRecord::empty(lambda);
        if sel.early_stop && hit_zero {
            record.skipped = true;
            records.push(record);
            continue;
        }
        match run_grid_point(corpus, model, sel, lambda, out_dir, &mut record) {
            Ok(()) => {
                if record.p_mean == Some(0.0) {
                    hit_zero = true;
                }
            }
            Err(e) => {
                record.failed = true;
                record.error = Some(e.to_string());
            }
        }
        records.push(record);
    }

    let pvalues: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.p_mean.map(|p| (r.lambda, p)))
        .collect();
    let report = LambdaReport {
        records,
        selected: choose(&pvalues, sel.alpha),
        alpha: sel.alpha,
    };
    save_report_json(&report, &out_dir.join("report.json"))?;
    save_report_csv(&report, &out_dir.join("report.csv"))?;
    Ok(report)
}

fn run_grid_point(
    corpus: &Corpus,
    model: &ModelConfig,
    sel: &SelectorConfig,
    lambda: f64,
    out_dir: &Path,
    record: &mut LambdaRecord,
) -> Result<()> {
    let mut mcmc = sel.mcmc.clone();
    mcmc.seed = derive_seed(sel.mcmc.seed, lambda_salt(lambda));
    let draws = sampler::sample_posterior(corpus, model, lambda, &mcmc)?;
    let draws = sampler::relabel_draws(draws);

    let tag = lambda_tag(lambda);
    let draws_name = format!("draws_lambda_{tag}.jsonl");
    sampler::io::save_draws(&draws, &out_dir.join(&draws_name))?;
    record.draws_file = Some(draws_name);

    let ppc_result = ppc::run_ppc(corpus, &draws, derive_seed(mcmc.seed, PPC_SALT))?;
    let json_name = format!("ppc_lambda_{tag}.json");
    let csv_name = format!("ppc_lambda_{tag}.csv");
    ppc::save_ppc_json(&ppc_result, &out_dir.join(&json_name))?;
    ppc::save_ppc_csv(&ppc_result, &out_dir.join(&csv_name))?;
    record.p_mean = Some(ppc_result.p_mean);
    record.p_paired = Some(ppc_result.p_paired);
    record.p_avg = Some(ppc_result.p_avg);
    record.ppc_json = Some(json_name);
    record.ppc_csv = Some(csv_name);

    let eval_report = eval::evaluate(corpus, &draws, sel.collapse_threshold)?;
    record.brier = eval_report.brier;
    record.collapsed = Some(eval_report.collapsed);
    Ok(())
}

pub fn save_report_json(report: &LambdaReport, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_report_json(path: &Path) -> Result<LambdaReport> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::data(format!("{}: bad report: {e}", path.display())))
}

fn opt_cell<T: ToString>(value: &Option<T>) -> String {
    value.as_ref().map_or_else(String::new, T::to_string)
}

pub fn save_report_csv(report: &LambdaReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "lambda", "p_mean", "p_paired", "p_avg", "brier", "collapsed", "selected",
    ])?;
    for r in &report.records {
        w.write_record(&[
            r.lambda.to_string(),
            opt_cell(&r.p_mean),
            opt_cell(&r.p_paired),
            opt_cell(&r.p_avg),
            opt_cell(&r.brier),
            opt_cell(&r.collapsed),
            (report.selected == Some(r.lambda)).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
