//! `curio`: single entry point for corpus generation, training protocols,
//! ablations, inference, and report rendering.
//!
//! Exit codes are a stable contract: 0 success, 1 internal error, 2 user or
//! configuration error.

use clap::{Args, Parser, Subcommand};
use curio::config::{load_corpora, ConfigError, RunConfig};
use curio::data::save_corpus;
use curio::harness::{run_ablation, run_crossval, run_ood, ArmSelect, HarnessError};
use curio::icm::{save_scores, IcmModel};
use curio::judge::{infer_pipeline, save_predictions, Judge, JudgeMode, PredMode};
use curio::params::load_checkpoint_file;
use curio::report::render_report;
use curio::synth::{generate_corpus, save_ground_truth, SyntheticSpec};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "curio",
    version,
    about = "Curiosity-conditioned creativity judging: synthetic corpora, \
             cross-validated training, ablations, and reports",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic multi-annotator corpus plus ground-truth sidecar
    Synth(SynthArgs),
    /// Parse, normalize, and validate a run configuration
    Validate(ConfigArgs),
    /// K-fold comparison of the curiosity judge against the baseline
    Crossval(ConfigArgs),
    /// Train on the other dimensions, evaluate on the held-out one
    Ood(ConfigArgs),
    /// Attribution-loss ablation grid over clean and noise-injected corpora
    Ablate(AblateArgs),
    /// Render report.md and SVG figures from finished run directories
    Report(ReportArgs),
    /// Score and judge a corpus with checkpoints from a finished run
    Infer(InferArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override a config field by dotted path, value parsed as TOML:
    /// --set icm.lambda=0.5 --set seeds=[1,2,3] --set output_dir="runs/x"
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Shorthand for --set output_dir=<DIR>
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Generator spec (TOML); omitted = default 48-story x 5-dimension
    /// x 3-annotator corpus (720 examples)
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for corpus.jsonl, stories.jsonl, ground_truth.jsonl,
    /// and the resolved spec.toml
    #[arg(long)]
    out: PathBuf,
    /// Inline story texts into corpus.jsonl instead of a stories.jsonl sidecar
    #[arg(long)]
    inline_stories: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Restrict the grid to the rows without the attribution loss (lambda=0)
    #[arg(long)]
    no_inverse: bool,
    /// Restrict the grid to the rows with an injected noise annotator
    #[arg(long)]
    with_noise_annotator: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// A run directory, or a parent whose children are runs of one
    /// configuration family
    run_dir: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    /// Run configuration matching the checkpoints (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Same override syntax as the training commands
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Directory holding the checkpoints of one fold
    /// (e.g. <run>/seed-42/fold-0)
    #[arg(long)]
    checkpoints: PathBuf,
    /// Corpus file(s) to judge; defaults to the corpus listed in the config
    #[arg(long)]
    corpus: Vec<PathBuf>,
    /// Predictions output file (JSONL)
    #[arg(long)]
    out: PathBuf,
    /// Also write the curiosity score records (JSONL)
    #[arg(long, value_name = "FILE")]
    scores_out: Option<PathBuf>,
    /// Load checkpoints whose config hash does not match the config
    /// (tensor shape checks still apply)
    #[arg(long)]
    force: bool,
}

enum CliError {
    User(String),
    Internal(String),
}

fn chain(err: &(dyn std::error::Error + 'static)) -> String {
    let mut s = err.to_string();
    let mut cur = err.source();
    while let Some(e) = cur {
        s.push_str(": ");
        s.push_str(&e.to_string());
        cur = e.source();
    }
    s
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::User(chain(&e))
    }
}

impl From<curio::synth::SynthError> for CliError {
    fn from(e: curio::synth::SynthError) -> Self {
        CliError::User(chain(&e))
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        if e.is_user_error() {
            CliError::User(chain(&e))
        } else {
            CliError::Internal(chain(&e))
        }
    }
}

impl From<curio::report::ReportError> for CliError {
    fn from(e: curio::report::ReportError) -> Self {
        CliError::User(chain(&e))
    }
}

fn user_err(e: impl std::error::Error + 'static) -> CliError {
    CliError::User(chain(&e))
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::User(format!("failed to access {}: {source}", path.display()))
}

/// Apply one `path=value` override to the parsed config document. The value
/// is parsed as a TOML literal; intermediate tables are created as needed.
fn apply_set(doc: &mut toml::Value, spec: &str) -> Result<(), CliError> {
    let (path, raw_value) = spec
        .split_once('=')
        .ok_or_else(|| CliError::User(format!("--set {spec:?}: expected PATH=VALUE")))?;
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw_value}"))
        .map(|t| t["v"].clone())
        .or_else(|_| {
            toml::from_str::<toml::Table>(&format!("v = {raw_value:?}")).map(|t| t["v"].clone())
        })
        .map_err(|e| CliError::User(format!("--set {spec:?}: bad value: {e}")))?;

    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::User(format!("--set {spec:?}: empty path segment")));
    }
    let mut cursor = doc;
    for key in &keys[..keys.len() - 1] {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| CliError::User(format!("--set {spec:?}: {key} is not a table")))?;
        cursor = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cursor
        .as_table_mut()
        .ok_or_else(|| CliError::User(format!("--set {spec:?}: parent is not a table")))?;
    table.insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let raw = std::fs::read_to_string(&args.config).map_err(|e| io_err(&args.config, e))?;
    let mut doc: toml::Value = toml::from_str(&raw)
        .map_err(|e| CliError::User(format!("{}: {e}", args.config.display())))?;
    for spec in &args.set {
        apply_set(&mut doc, spec)?;
    }
    if let Some(dir) = &args.output_dir {
        apply_set(&mut doc, &format!("output_dir={:?}", dir.display().to_string()))?;
    }
    let cfg: RunConfig = doc
        .try_into()
        .map_err(|e| CliError::User(format!("{}: {e}", args.config.display())))?;
    Ok(cfg.finish()?)
}

fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let spec = match &args.spec {
        Some(path) => {
            let raw = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            SyntheticSpec::from_toml_str(&raw)?
        }
        None => SyntheticSpec::default(),
    };
    let generated = generate_corpus(&spec)?;
    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let corpus_path = args.out.join("corpus.jsonl");
    save_corpus(&generated.corpus, &corpus_path, args.inline_stories).map_err(user_err)?;
    save_ground_truth(&generated.ground_truth, args.out.join("ground_truth.jsonl"))?;
    std::fs::write(args.out.join("spec.toml"), spec.to_toml_string())
        .map_err(|e| io_err(&args.out, e))?;
    println!(
        "wrote {} examples ({} stories x {} dimensions x {} annotators) to {}",
        generated.corpus.examples.len(),
        generated.corpus.stories.len(),
        spec.dimensions.len(),
        spec.annotators.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_validate(args: &ConfigArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let corpus = load_corpora(&cfg.corpus)?;
    println!("config ok");
    println!("config_hash: {}", cfg.hash());
    println!("family_hash: {}", cfg.family_hash());
    println!(
        "corpus: {} examples, {} stories, {} dimensions",
        corpus.examples.len(),
        corpus.stories.len(),
        corpus.questions.len()
    );
    Ok(())
}

fn cmd_crossval(args: &ConfigArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let manifest = run_crossval(&cfg)?;
    println!("config_hash: {}", manifest.config_hash);
    println!("wrote {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_ood(args: &ConfigArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let manifest = run_ood(&cfg)?;
    println!("config_hash: {}", manifest.config_hash);
    println!("wrote {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config)?;
    let select = ArmSelect {
        no_inverse_only: args.no_inverse,
        with_noise_only: args.with_noise_annotator,
    };
    let run = run_ablation(&cfg, select)?;
    println!("config_hash: {}", run.config_hash);
    println!("{} ablation arms written to {}", run.arms.len(), cfg.output_dir.display());
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let written = render_report(&args.run_dir)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_infer(args: &InferArgs) -> Result<(), CliError> {
    let cfg = load_config(&ConfigArgs {
        config: args.config.clone(),
        set: args.set.clone(),
        output_dir: None,
    })?;
    let corpus_paths = if args.corpus.is_empty() { cfg.corpus.clone() } else { args.corpus.clone() };
    let corpus = load_corpora(&corpus_paths)?;
    let hash = cfg.hash();
    let expected = if args.force { None } else { Some(hash.as_str()) };

    let load = |name: &str, kind: &str| -> Result<curio::params::Checkpoint, CliError> {
        let path = args.checkpoints.join(name);
        let ckpt = load_checkpoint_file(&path).map_err(user_err)?;
        if ckpt.model_kind != kind {
            return Err(CliError::User(format!(
                "{}: holds a {} checkpoint, expected {kind}",
                path.display(),
                ckpt.model_kind
            )));
        }
        Ok(ckpt)
    };
    let apply = |params: &mut curio::params::ParamVec,
                 ckpt: &curio::params::Checkpoint,
                 kind: &str|
     -> Result<(), CliError> {
        params.load_checkpoint(ckpt, kind, expected).map_err(user_err)
    };

    let mut predictions = Vec::new();
    match cfg.mode {
        JudgeMode::Icm => {
            let icm_ckpt = load("icm.ckpt.json", "icm-scorer")?;
            let judge_ckpt = load("judge.ckpt.json", "judge-icm")?;
            let mut icm =
                IcmModel::new(cfg.encoder.clone(), cfg.icm.clone(), 0).map_err(user_err)?;
            apply(&mut icm.scorer.params, &icm_ckpt, "icm-scorer")?;
            let mut judge =
                Judge::new(cfg.encoder.clone(), cfg.judge.clone(), 0).map_err(user_err)?;
            apply(&mut judge.params, &judge_ckpt, "judge-icm")?;

            let mut scores = Vec::new();
            for idx in 0..corpus.examples.len() {
                let (pred, score) = infer_pipeline(&icm, &judge, &corpus, idx, cfg.infer_mode)
                    .map_err(user_err)?;
                predictions.push(pred);
                scores.push(score.to_score_record());
            }
            if let Some(path) = &args.scores_out {
                save_scores(&scores, path).map_err(user_err)?;
                println!("wrote {}", path.display());
            }
        }
        JudgeMode::Baseline => {
            let judge_ckpt = load("baseline.ckpt.json", "judge-baseline")?;
            let mut judge =
                Judge::new(cfg.encoder.clone(), cfg.judge.clone(), 0).map_err(user_err)?;
            apply(&mut judge.params, &judge_ckpt, "judge-baseline")?;
            if args.scores_out.is_some() {
                return Err(CliError::User(
                    "baseline mode produces no curiosity scores; drop --scores-out".into(),
                ));
            }
            for idx in 0..corpus.examples.len() {
                predictions
                    .push(judge.predict_example(&corpus, idx, None, PredMode::Baseline)
                        .map_err(user_err)?);
            }
        }
    }
    save_predictions(&predictions, &args.out).map_err(user_err)?;
    println!("wrote {} predictions to {}", predictions.len(), args.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::Synth(args) => cmd_synth(args),
        Cmd::Validate(args) => cmd_validate(args),
        Cmd::Crossval(args) => cmd_crossval(args),
        Cmd::Ood(args) => cmd_ood(args),
        Cmd::Ablate(args) => cmd_ablate(args),
        Cmd::Report(args) => cmd_report(args),
        Cmd::Infer(args) => cmd_infer(args),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(1)
        }
    }
}
