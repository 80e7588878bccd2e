//! Command-line orchestration of the pipeline.
//!
//! Every command reads one JSON config file; `--seed`, `--out-dir`, and
//! `--jobs` override it. The run seed governs all stages: a fit at rate
//! lambda is seeded with derive_seed(seed, lambda_salt(lambda)), and its
//! PPC stream derives from the seed stored in the draw file, so running a
//! stage standalone reproduces the matching sweep artifact byte for byte.
//! `run_meta.json` holds the only timestamp; every other output is a pure
//! function of config and seed.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{self, GeneratorConfig};
use crate::error::{Error, Result};
use crate::eval;
use crate::model::ModelConfig;
use crate::ppc;
use crate::rng::{derive_seed, lambda_salt, PPC_SALT};
use crate::sampler::{self, McmcConfig};
use crate::selector::{self, lambda_tag, SelectorConfig};

#[derive(Parser)]
#[command(name = "temper", version, about = "Learning-rate selection for \
generalised Bayesian inference via posterior predictive checks")]
struct Cli {
    /// JSON run configuration (required).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Cap the worker thread count; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus plus ground truth.
    Simulate,
    /// Fit the tempered posterior at one learning rate.
    Fit {
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Corpus file; defaults to the config path, then out_dir/corpus.json.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Posterior predictive check on a saved draw file.
    Ppc {
        #[arg(long)]
        draws: PathBuf,
    },
    /// Sweep the learning-rate grid and select.
    Select,
    /// Score a saved draw file against corpus labels.
    Score {
        #[arg(long)]
        draws: PathBuf,
    },
    /// Emit plot-ready p-vs-lambda and Brier-vs-lambda curves from a report.
    Report {
        /// Report file; defaults to out_dir/report.json.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// Selector options as they appear in the config file. The sweep reuses
/// the top-level mcmc section, so it is not repeated here.
#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SelectorSection {
    grid: Vec<f64>,
    alpha: f64,
    early_stop: bool,
    collapse_threshold: f64,
}

impl Default for SelectorSection {
    fn default() -> Self {
        let base = SelectorConfig::default();
        SelectorSection {
            grid: base.grid,
            alpha: base.alpha,
            early_stop: base.early_stop,
            collapse_threshold: base.collapse_threshold,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    /// The run seed; governs every stage. Section-level seeds are
    /// overwritten by it.
    seed: u64,
    #[serde(default)]
    out_dir: Option<PathBuf>,
    #[serde(default)]
    corpus: Option<PathBuf>,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    mcmc: McmcConfig,
    #[serde(default)]
    selector: SelectorSection,
    #[serde(default)]
    generator: GeneratorConfig,
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

struct Run {
    config: RunConfig,
    out_dir: PathBuf,
}

impl Run {
    fn corpus_path(&self, flag: Option<&PathBuf>) -> PathBuf {
        flag.or(self.config.corpus.as_ref())
            .cloned()
            .unwrap_or_else(|| self.out_dir.join("corpus.json"))
    }

    fn selector_config(&self) -> SelectorConfig {
        let s = &self.config.selector;
        SelectorConfig {
            grid: s.grid.clone(),
            alpha: s.alpha,
            mcmc: self.config.mcmc.clone(),
            early_stop: s.early_stop,
            collapse_threshold: s.collapse_threshold,
        }
    }
}

fn write_json_pretty<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// The one file allowed to differ between identical runs.
fn write_run_meta(run: &Run, command: &str, jobs: Option<usize>) -> Result<()> {
    #[derive(Serialize)]
    struct RunMeta<'a> {
        command: &'a str,
        timestamp: String,
        seed: u64,
        jobs: Option<usize>,
    }
    let meta = RunMeta {
        command,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        seed: run.config.seed,
        jobs,
    };
    write_json_pretty(&meta, &run.out_dir.join("run_meta.json"))
}

fn cmd_simulate(run: &Run) -> Result<()> {
    let (corpus, truth) = data::generate_synthetic(&run.config.generator)?;
    let corpus_path = run.out_dir.join("corpus.json");
    let truth_path = run.out_dir.join("truth.json");
    data::save_corpus(&corpus, &corpus_path)?;
    data::save_truth(&truth, &truth_path)?;
    println!(
        "wrote {} snippets to {} and ground truth to {}",
        corpus.snippets.len(),
        corpus_path.display(),
        truth_path.display()
    );
    Ok(())
}

fn cmd_fit(run: &Run, lambda: f64, corpus_flag: Option<&PathBuf>) -> Result<()> {
    let corpus = data::load_corpus(&run.corpus_path(corpus_flag))?;
    let mut mcmc = run.config.mcmc.clone();
    mcmc.seed = derive_seed(run.config.seed, lambda_salt(lambda));
    let draws = sampler::sample_posterior(&corpus, &run.config.model, lambda, &mcmc)?;
    let draws = sampler::relabel_draws(draws);

    let tag = lambda_tag(lambda);
    let draws_path = run.out_dir.join(format!("draws_lambda_{tag}.jsonl"));
    sampler::io::save_draws(&draws, &draws_path)?;

    #[derive(Serialize)]
    struct FitMeta<'a> {
        lambda: f64,
        seed: u64,
        num_chains: usize,
        draws_per_chain: usize,
        accept_rate: f64,
        divergence_rate: f64,
        divergence_warning: bool,
        step_sizes: &'a [f64],
        convergence: Option<sampler::diagnostics::ConvergenceSummary>,
    }
    let convergence = if draws.num_chains >= 2 {
        Some(sampler::convergence_summary(&draws)?)
    } else {
        None
    };
    let meta = FitMeta {
        lambda,
        seed: mcmc.seed,
        num_chains: draws.num_chains,
        draws_per_chain: draws.draws_per_chain,
        accept_rate: draws.accept_rate,
        divergence_rate: draws.divergence_rate,
        divergence_warning: draws.divergence_warning,
        step_sizes: &draws.step_sizes,
        convergence,
    };
    write_json_pretty(&meta, &run.out_dir.join(format!("fit_meta_lambda_{tag}.json")))?;

    println!(
        "lambda {lambda}: {} draws to {}, accept rate {:.3}",
        draws.len(),
        draws_path.display(),
        draws.accept_rate
    );
    if draws.divergence_warning {
        println!(
            "warning: {:.1}% divergent trajectories; treat results with suspicion",
            100.0 * draws.divergence_rate
        );
    }
    Ok(())
}

fn cmd_ppc(run: &Run, draws_path: &Path) -> Result<()> {
    let corpus = data::load_corpus(&run.corpus_path(None))?;
    let draws = sampler::io::load_draws(draws_path)?;
    let result = ppc::run_ppc(&corpus, &draws, derive_seed(draws.seed, PPC_SALT))?;
    let tag = lambda_tag(draws.lambda);
    ppc::save_ppc_json(&result, &run.out_dir.join(format!("ppc_lambda_{tag}.json")))?;
    ppc::save_ppc_csv(&result, &run.out_dir.join(format!("ppc_lambda_{tag}.csv")))?;
    println!(
        "lambda {}: p_mean {} p_paired {} p_avg {}",
        draws.lambda, result.p_mean, result.p_paired, result.p_avg
    );
    Ok(())
}

fn cmd_select(run: &Run) -> Result<()> {
    let corpus = data::load_corpus(&run.corpus_path(None))?;
    let report =
        selector::select_lambda(&corpus, &run.config.model, &run.selector_config(), &run.out_dir)?;
    for rec in &report.records {
        let status = if rec.skipped {
            "skipped".to_string()
        } else if rec.failed {
            format!("failed: {}", rec.error.as_deref().unwrap_or("unknown"))
        } else {
            format!(
                "p_mean {}{}",
                rec.p_mean.expect("completed record has p_mean"),
                rec.brier.map_or_else(String::new, |b| format!(", brier {b}"))
            )
        };
        println!("lambda {}: {status}", rec.lambda);
    }
    match report.selected {
        Some(l) => println!("selected lambda {l}"),
        None => println!("no learning rate exceeded alpha {}", report.alpha),
    }
    Ok(())
}

fn cmd_score(run: &Run, draws_path: &Path) -> Result<()> {
    let corpus = data::load_corpus(&run.corpus_path(None))?;
    if corpus.true_labels.is_none() {
        return Err(Error::data(
            "corpus has no true sense labels; scoring requires a labelled \
             corpus (simulate writes one)",
        ));
    }
    let draws = sampler::io::load_draws(draws_path)?;
    let report = eval::evaluate(&corpus, &draws, run.config.selector.collapse_threshold)?;

    let tag = lambda_tag(draws.lambda);
    eval::save_eval_json(&report, &run.out_dir.join(format!("eval_lambda_{tag}.json")))?;
    eval::save_probs_csv(&report, &run.out_dir.join(format!("probs_lambda_{tag}.csv")))?;
    let mean = sampler::posterior_mean_probs(&draws)?;
    let top = eval::top_words(&mean, corpus.vocab_size.min(10))?;
    eval::save_top_words_csv(&top, &run.out_dir.join(format!("top_words_lambda_{tag}.csv")))?;
    if draws.len() >= 2 {
        let prevalence = eval::prevalence_intervals(&draws, 0.95)?;
        eval::save_prevalence_csv(
            &prevalence,
            &run.out_dir.join(format!("prevalence_lambda_{tag}.csv")),
        )?;
    }

    match report.brier {
        Some(b) => println!("lambda {}: brier {b}", draws.lambda),
        None => println!(
            "lambda {}: posterior collapsed; Brier score not reported",
            draws.lambda
        ),
    }
    Ok(())
}

fn cmd_report(run: &Run, report_flag: Option<&PathBuf>) -> Result<()> {
    let path = report_flag
        .cloned()
        .unwrap_or_else(|| run.out_dir.join("report.json"));
    let report = selector::load_report_json(&path)?;

    selector::save_report_csv(&report, &run.out_dir.join("curves.csv"))?;

    let mut w = csv::Writer::from_path(run.out_dir.join("curve_pvalue.csv"))?;
    w.write_record(["lambda", "p_mean", "p_paired", "p_avg"])?;
    for r in report.records.iter().filter(|r| r.p_mean.is_some()) {
        w.write_record(&[
            r.lambda.to_string(),
            r.p_mean.unwrap().to_string(),
            r.p_paired.map_or_else(String::new, |p| p.to_string()),
            r.p_avg.map_or_else(String::new, |p| p.to_string()),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(run.out_dir.join("curve_brier.csv"))?;
    w.write_record(["lambda", "brier"])?;
    for r in report.records.iter().filter(|r| r.brier.is_some()) {
        w.write_record(&[r.lambda.to_string(), r.brier.unwrap().to_string()])?;
    }
    w.flush()?;

    println!(
        "wrote curves for {} grid points to {}",
        report.records.len(),
        run.out_dir.display()
    );
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::config("--config is required"))?;
    let mut config = load_config(config_path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.mcmc.seed = config.seed;
    config.generator.seed = config.seed;

    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::config("--jobs must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    }

    let out_dir = cli
        .out_dir
        .or(config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out_dir)?;
    let run = Run { config, out_dir };

    let name = match &cli.command {
        Command::Simulate => "simulate",
        Command::Fit { .. } => "fit",
        Command::Ppc { .. } => "ppc",
        Command::Select => "select",
        Command::Score { .. } => "score",
        Command::Report { .. } => "report",
    };
    write_run_meta(&run, name, cli.jobs)?;

    match &cli.command {
        Command::Simulate => cmd_simulate(&run),
        Command::Fit { lambda, corpus } => cmd_fit(&run, *lambda, corpus.as_ref()),
        Command::Ppc { draws } => cmd_ppc(&run, draws),
        Command::Select => cmd_select(&run),
        Command::Score { draws } => cmd_score(&run, draws),
        Command::Report { report } => cmd_report(&run, report.as_ref()),
    }
}

/// Entry point: clap handles usage errors (exit 2); domain errors map to
/// exit 2 (config), 3 (data), or 4 (numerical).
pub fn main() {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
