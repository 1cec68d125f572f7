//! Command-line front end. All logic lives in `pamem::report`.
//!
//! Settings resolve as flags, then the `--config` settings file, then the
//! environment (`PAMEM_ENDPOINT`, `PAMEM_ENDPOINT_TOKEN`, `PAMEM_SEED`).
//! Exit status: 0 success, 1 pipeline failure, 2 configuration or input
//! error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use pamem::prior::{PriorConfig, DEFAULT_SAMPLES, DEFAULT_TRIALS};
use pamem::remote::{EndpointConfig, ScoreMode, ENV_ENDPOINT, ENV_ENDPOINT_TOKEN};
use pamem::report::{
    cmd_audit, cmd_calibrate, cmd_counterfactual, cmd_report, cmd_targets, cmd_train, AuditArgs, BackendArgs,
    CalibrateArgs, CounterfactualArgs, ReportArgs, TargetsArgs, TargetsKind, ThresholdSource, TrainArgs,
};
use pamem::{Error, Result};

#[derive(Parser)]
#[command(name = "pamem", version, about = "Prior-aware memorization audits")]
struct Cli {
    /// Root seed; every sampler derives its own seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Settings file (JSON) with defaults for seed, jobs, endpoint, c, trials.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an n-gram model on a text corpus (one document per line).
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify targets as prior-aware memorized or not.
    Audit {
        #[command(flatten)]
        backend: BackendFlags,
        #[command(flatten)]
        prior: PriorFlags,
        /// Target JSONL: {"id","prefix_tokens","suffix_tokens"} per line.
        #[arg(long)]
        targets: PathBuf,
        /// Thresholds file from `calibrate`.
        #[arg(long, conflicts_with = "calibrate")]
        thresholds: Option<PathBuf>,
        /// Calibrate n for this model before auditing.
        #[arg(long)]
        calibrate: bool,
        /// Generic sequences for --calibrate (default: bundled set).
        #[arg(long, requires = "calibrate")]
        generic: Option<PathBuf>,
        /// Extra m threshold as SUFFIX_LEN=VALUE; repeatable.
        #[arg(long = "m", value_parser = parse_m)]
        m: Vec<(usize, f64)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate the ratio threshold n on generic sequences.
    Calibrate {
        #[command(flatten)]
        backend: BackendFlags,
        #[command(flatten)]
        prior: PriorFlags,
        /// Generic sequences: text lines or target JSONL (default: bundled set).
        #[arg(long)]
        generic: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the counterfactual composition sweep.
    Counterfactual {
        /// Experiment configuration (JSON).
        experiment: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a markdown report for an audit or counterfactual run directory.
    Report {
        run_dir: PathBuf,
        /// Rows in each of the highest and lowest tables.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Build a target file.
    Targets {
        #[command(subcommand)]
        kind: TargetsCommand,
        /// Model JSON or vocabulary list used for tokenization.
        #[arg(long, global = true)]
        vocab: Option<PathBuf>,
        #[arg(long, global = true)]
        corpus: Option<PathBuf>,
        #[arg(long, global = true)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TargetsCommand {
    /// Uniform corpus windows split into prefix and suffix.
    Long {
        #[arg(long, default_value_t = 50)]
        prefix_len: usize,
        #[arg(long, default_value_t = 50)]
        suffix_len: usize,
        #[arg(short, long)]
        k: usize,
    },
    /// Entity targets drawn evenly across frequency buckets.
    Entities {
        /// Entity surfaces, one per line (default: capitalized spans, demo only).
        #[arg(long)]
        entities: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        per_bucket: usize,
        #[arg(long, default_value_t = 50)]
        prefix_len: usize,
        /// Comma-separated ascending bucket boundaries.
        #[arg(long, value_delimiter = ',')]
        buckets: Option<Vec<u64>>,
    },
    /// Generic calibration targets.
    Generic {
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    TokenIds,
    Text,
}

#[derive(Args)]
struct BackendFlags {
    /// Model JSON from `train`.
    #[arg(long, conflicts_with = "endpoint")]
    model: Option<PathBuf>,
    /// Scoring endpoint base URL.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, value_enum, default_value_t = Mode::TokenIds)]
    mode: Mode,
    /// Vocabulary for endpoints: model JSON or one surface per line.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    /// Concurrent requests per batch.
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
}

#[derive(Args)]
struct PriorFlags {
    /// Corpus the prior's prefixes are sampled from.
    #[arg(long)]
    sampler_corpus: PathBuf,
    /// Prefixes per trial.
    #[arg(short = 'c', long = "samples")]
    c: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// Sampled prefix length (default: each target's prefix length).
    #[arg(long)]
    prefix_length: Option<usize>,
}

/// Defaults loaded from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Settings {
    seed: Option<u64>,
    jobs: Option<usize>,
    endpoint: Option<String>,
    endpoint_token: Option<String>,
    c: Option<usize>,
    trials: Option<usize>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Settings::default()) };
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading settings {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("settings {}: {e}", path.display())))
    }
}

fn env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

fn parse_m(s: &str) -> std::result::Result<(usize, f64), String> {
    let (len, m) = s.split_once('=').ok_or("expected SUFFIX_LEN=VALUE")?;
    Ok((
        len.trim().parse().map_err(|e| format!("suffix length: {e}"))?,
        m.trim().parse().map_err(|e| format!("m: {e}"))?,
    ))
}

struct Resolved {
    seed: u64,
    settings: Settings,
}

impl Resolved {
    fn backend(&self, flags: &BackendFlags) -> Result<BackendArgs> {
        if flags.model.is_some() {
            return Ok(BackendArgs { model: flags.model.clone(), endpoint: None, vocab: flags.vocab.clone() });
        }
        let url = flags
            .endpoint
            .clone()
            .or_else(|| self.settings.endpoint.clone())
            .or_else(|| env(ENV_ENDPOINT))
            .ok_or_else(|| Error::Config("give --model or --endpoint".into()))?;
        let mode = match flags.mode {
            Mode::TokenIds => ScoreMode::TokenIds,
            Mode::Text => ScoreMode::Text,
        };
        let mut cfg = EndpointConfig::new(url, mode);
        cfg.auth_token = self.settings.endpoint_token.clone().or_else(|| env(ENV_ENDPOINT_TOKEN));
        cfg.max_retries = flags.max_retries;
        cfg.batch_size = flags.batch_size;
        Ok(BackendArgs { model: None, endpoint: Some(cfg), vocab: flags.vocab.clone() })
    }

    fn prior(&self, flags: &PriorFlags) -> PriorConfig {
        PriorConfig {
            c: flags.c.or(self.settings.c).unwrap_or(DEFAULT_SAMPLES),
            trials: flags.trials.or(self.settings.trials).unwrap_or(DEFAULT_TRIALS),
            prefix_length: flags.prefix_length,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    let env_seed = match env("PAMEM_SEED") {
        Some(s) => Some(s.parse().map_err(|e| Error::Config(format!("PAMEM_SEED: {e}")))?),
        None => None,
    };
    let seed_flag = cli.seed;
    let seed = seed_flag.or(settings.seed).or(env_seed).unwrap_or(0);
    if let Some(jobs) = cli.jobs.or(settings.jobs) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let r = Resolved { seed, settings };

    match cli.command {
        Command::Train { corpus, order, alpha, out } => {
            let m = cmd_train(&TrainArgs { corpus, order, alpha, out: out.clone() })?;
            println!("{} -> {}", m.model_id, out.display());
        }
        Command::Audit { backend, prior, targets, thresholds, calibrate, generic, m, out } => {
            let thresholds = match (thresholds, calibrate) {
                (Some(path), false) => ThresholdSource::File(path),
                (None, true) => ThresholdSource::Calibrate(generic),
                _ => return Err(Error::Config("give --thresholds FILE or --calibrate".into())),
            };
            let outcome = cmd_audit(&AuditArgs {
                backend: r.backend(&backend)?,
                targets,
                sampler_corpus: prior.sampler_corpus.clone(),
                prior: r.prior(&prior),
                thresholds,
                m_overrides: m,
                out_dir: out.clone(),
                seed: r.seed,
            })?;
            println!("suffix_class n_targets n_extractable n_pa");
            for row in &outcome.summary {
                println!("{:>12} {:>9} {:>13} {:>4}", row.suffix_class, row.n_targets, row.n_extractable, row.n_pa);
            }
            println!("results in {}", out.display());
        }
        Command::Calibrate { backend, prior, generic, out } => {
            let (t, _) = cmd_calibrate(&CalibrateArgs {
                backend: r.backend(&backend)?,
                generic,
                sampler_corpus: prior.sampler_corpus.clone(),
                prior: r.prior(&prior),
                seed: r.seed,
                out: out.clone(),
            })?;
            println!("n = {} for {} -> {}", t.n, t.model_id, out.display());
        }
        Command::Counterfactual { experiment, out } => {
            // the experiment file carries its own seed; only an explicit
            // flag or environment value overrides it
            let seed = seed_flag.or(r.settings.seed).or(env_seed);
            cmd_counterfactual(&CounterfactualArgs { config: experiment, out_dir: out.clone(), seed })?;
            println!("results in {}", out.display());
        }
        Command::Report { run_dir, top } => {
            let (text, _) = cmd_report(&ReportArgs { run_dir, k: top })?;
            print!("{text}");
        }
        Command::Targets { kind, vocab, corpus, out } => {
            let vocab = vocab.ok_or_else(|| Error::Config("--vocab is required".into()))?;
            let out = out.ok_or_else(|| Error::Config("--out is required".into()))?;
            let kind = match kind {
                TargetsCommand::Long { prefix_len, suffix_len, k } => TargetsKind::Long { prefix_len, suffix_len, k },
                TargetsCommand::Entities { entities, per_bucket, prefix_len, buckets } => {
                    TargetsKind::Entities { entities, per_bucket, prefix_len, buckets }
                }
                TargetsCommand::Generic { file } => TargetsKind::Generic { file },
            };
            let (targets, _) = cmd_targets(&TargetsArgs { kind, vocab, corpus, out: out.clone(), seed: r.seed })?;
            println!("{} targets -> {}", targets.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
