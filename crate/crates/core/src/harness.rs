//! Experiment harness: cross-validated, held-out-dimension, and ablation
//! comparisons of the curiosity-conditioned judge against the
//! identity-conditioned baseline.
//!
//! Every run is a pure function of its `RunConfig`: fold plans come from the
//! split seed, model and shuffle seeds derive from the run seeds, and all
//! artifacts are written with fixed formats so a rerun is byte-identical.

use crate::config::{
    invalid, load_corpora, sha256_file, ConfigError, RunConfig, SplitSpec,
};
use crate::data::{make_kfold, make_ood_split, save_corpus, Corpus, DataError, Dimension, FoldPlan};
use crate::icm::{save_scores, train_icm, IcmError, IcmModel, ScoreRecord};
use crate::judge::{
    infer_pipeline, save_predictions, train_baseline, train_judge, Judge, JudgeError, JudgeMode,
    PredMode, PredictionRecord,
};
use crate::metrics::{
    aggregate, curiosity_histogram, format_mean_sd, paired_t_test, pearson, sample_sd,
    AggregateCell, CuriosityHistogram, FoldMetrics, TTest, METRIC_NAMES,
};
use crate::optim::OptimizerConfig;
use crate::params::{save_checkpoint_file, Checkpoint, CheckpointError};
use crate::rng::derive_seed;
use crate::synth::{inject_noise_annotator, noise_profile, SynthError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const CONFIG_FILE: &str = "run_config.toml";
pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const FOLD_PLAN_FILE: &str = "fold_plan.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SIGNIFICANCE_CSV: &str = "significance.csv";
pub const HISTOGRAM_CSV: &str = "curiosity_hist.csv";
pub const ABLATION_CSV: &str = "ablation.csv";

/// Bins for the curiosity-score histogram artifact.
pub const HIST_BINS: usize = 20;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Icm(#[from] IcmError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("evaluation set is empty after excluding the noise annotator")]
    EmptyEvalSet,
    #[error("seed {seed} fold {fold}: {source}")]
    Fold {
        seed: u64,
        fold: usize,
        source: Box<HarnessError>,
    },
}

impl HarnessError {
    /// Whether the error traces to user input (config, corpus files, paths)
    /// rather than an internal failure; drives the CLI exit code.
    pub fn is_user_error(&self) -> bool {
        match self {
            HarnessError::Config(_) | HarnessError::Data(_) | HarnessError::Synth(_) => true,
            HarnessError::Io { .. } => true,
            HarnessError::Checkpoint(CheckpointError::ConfigHash { .. }) => true,
            HarnessError::Fold { source, .. } => source.is_user_error(),
            _ => false,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

/// Outcome of one (seed, fold) cell of the protocol.
#[derive(Debug, Clone)]
pub struct FoldRun {
    pub seed: u64,
    pub fold: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub icm_metrics: FoldMetrics,
    pub baseline_metrics: Option<FoldMetrics>,
    /// Attribution accuracy over the whole test split.
    pub attribution_accuracy: f64,
    /// Attribution accuracy over noise-authored test examples only.
    pub noise_attribution_accuracy: Option<f64>,
    pub train_scores: Vec<ScoreRecord>,
    /// Evaluation-set scores under the configured inference mode.
    pub test_scores: Vec<ScoreRecord>,
    /// Per eval example: did the pre-explanation prediction match the verdict?
    pub base_match: Vec<bool>,
    pub icm_predictions: Vec<PredictionRecord>,
    pub baseline_predictions: Vec<PredictionRecord>,
    pub icm_checkpoint: Checkpoint,
    pub judge_checkpoint: Checkpoint,
    pub baseline_checkpoint: Option<Checkpoint>,
}

/// ICM-vs-baseline comparison of one metric across all (seed, fold) cells.
#[derive(Debug, Clone, Serialize)]
pub struct MetricComparison {
    pub metric: String,
    pub icm_mean: f64,
    pub baseline_mean: f64,
    pub test: TTest,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct CorpusFileRecord {
    pub path: String,
    pub sha256: String,
}

/// Full result of a comparison protocol (cross-validation or held-out run).
#[derive(Debug, Clone)]
pub struct ComparisonRun {
    pub command: String,
    pub config_hash: String,
    pub family_hash: String,
    pub split: SplitSpec,
    pub corpus_files: Vec<CorpusFileRecord>,
    pub plan_warnings: Vec<String>,
    /// Ordered by the config seed list, then fold index.
    pub folds: Vec<FoldRun>,
    pub icm_aggregate: BTreeMap<String, AggregateCell>,
    pub baseline_aggregate: Option<BTreeMap<String, AggregateCell>>,
    pub significance: Vec<MetricComparison>,
    pub histogram: CuriosityHistogram,
}

/// Run manifest: enough to audit identity, data provenance, and artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub family_hash: String,
    pub command: String,
    pub split: SplitSpec,
    pub seeds: Vec<u64>,
    pub corpus: Vec<CorpusFileRecord>,
    /// Echoed so hyperparameter parity between the heads is auditable.
    pub icm_optim: OptimizerConfig,
    pub judge_optim: OptimizerConfig,
    /// `seed-S/fold-F/<model>` -> SHA-256 of the checkpoint file.
    pub checkpoints: BTreeMap<String, String>,
    /// Relative artifact path -> SHA-256 (the manifest itself excluded).
    pub files: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<RunManifest, HarnessError> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&content).map_err(|e| HarnessError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })
    }
}

fn verdict_bool(corpus: &Corpus, idx: usize) -> bool {
    corpus.examples[idx].annotation.verdict.as_u8() == 1
}

/// Sign aligning the prior logit channel with verdicts on the train split.
/// The readout is randomly initialized and gets no gradient, so its sign is
/// an init artifact that must be estimated in-sample.
fn prior_orientation(train_scores: &[ScoreRecord], truth: &[f64]) -> f64 {
    let s: Vec<f64> = train_scores.iter().map(|r| r.s_a).collect();
    if pearson(&s, truth).value < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Train and evaluate both judges on one fold.
#[allow(clippy::too_many_arguments)]
pub fn run_fold(
    cfg: &RunConfig,
    config_hash: &str,
    corpus: &Corpus,
    train_idx: &[usize],
    test_idx: &[usize],
    seed: u64,
    fold: usize,
    noise_expert: Option<u32>,
    with_baseline: bool,
) -> Result<FoldRun, HarnessError> {
    let enc = cfg.encoder.clone();

    // Each (seed, fold) cell gets independent init and shuffle streams so a
    // pathological initialization cannot dominate every fold of a run.
    let mut icm_cfg = cfg.icm.clone();
    icm_cfg.optim.seed = derive_seed(seed, &format!("icm/optim/fold-{fold}"));
    let mut icm =
        IcmModel::new(enc.clone(), icm_cfg, derive_seed(seed, &format!("icm/init/fold-{fold}")))?;
    train_icm(&mut icm, corpus, train_idx)?;

    let train_scores: Vec<ScoreRecord> = icm
        .score_corpus(corpus, train_idx)?
        .iter()
        .map(|r| r.to_score_record())
        .collect();

    let mut judge_cfg = cfg.judge.clone();
    judge_cfg.mode = JudgeMode::Icm;
    judge_cfg.optim.seed = derive_seed(seed, &format!("judge/optim/fold-{fold}"));
    let mut judge = Judge::new(
        enc.clone(),
        judge_cfg,
        derive_seed(seed, &format!("judge/init/fold-{fold}")),
    )?;
    train_judge(&mut judge, corpus, train_idx, &train_scores)?;

    let baseline = if with_baseline {
        let mut base_cfg = cfg.judge.clone();
        base_cfg.mode = JudgeMode::Baseline;
        base_cfg.optim.seed = derive_seed(seed, &format!("baseline/optim/fold-{fold}"));
        let mut b = Judge::new(
            enc.clone(),
            base_cfg,
            derive_seed(seed, &format!("baseline/init/fold-{fold}")),
        )?;
        train_baseline(&mut b, corpus, train_idx)?;
        Some(b)
    } else {
        None
    };

    // Noise-annotator examples train the models but are excluded from the
    // verdict metrics: their verdicts are coin flips by construction, so
    // they would dilute both methods equally.
    let eval_idx: Vec<usize> = test_idx
        .iter()
        .copied()
        .filter(|&i| noise_expert != Some(corpus.examples[i].annotation.expert_id))
        .collect();
    if eval_idx.is_empty() {
        return Err(HarnessError::EmptyEvalSet);
    }

    let mut icm_predictions = Vec::with_capacity(eval_idx.len());
    let mut test_scores = Vec::with_capacity(eval_idx.len());
    for &i in &eval_idx {
        let (pred, record) = infer_pipeline(&icm, &judge, corpus, i, cfg.infer_mode)?;
        test_scores.push(record.to_score_record());
        icm_predictions.push(pred);
    }

    let truth: Vec<bool> = eval_idx.iter().map(|&i| verdict_bool(corpus, i)).collect();
    let icm_pred_bools: Vec<bool> =
        icm_predictions.iter().map(|p| p.verdict.as_u8() == 1).collect();
    let icm_metrics = FoldMetrics::compute(fold, &icm_pred_bools, &truth);

    let mut baseline_predictions = Vec::new();
    let baseline_metrics = match &baseline {
        Some(b) => {
            for &i in &eval_idx {
                baseline_predictions.push(b.predict_example(corpus, i, None, PredMode::Baseline)?);
            }
            let pred_bools: Vec<bool> =
                baseline_predictions.iter().map(|p| p.verdict.as_u8() == 1).collect();
            Some(FoldMetrics::compute(fold, &pred_bools, &truth))
        }
        None => None,
    };

    let attribution_accuracy = icm.attribution_accuracy(corpus, test_idx)?;
    let noise_attribution_accuracy = match noise_expert {
        Some(id) => {
            let noise_idx: Vec<usize> = test_idx
                .iter()
                .copied()
                .filter(|&i| corpus.examples[i].annotation.expert_id == id)
                .collect();
            if noise_idx.is_empty() {
                None
            } else {
                Some(icm.attribution_accuracy(corpus, &noise_idx)?)
            }
        }
        None => None,
    };

    let train_truth: Vec<f64> =
        train_idx.iter().map(|&i| verdict_bool(corpus, i) as u8 as f64).collect();
    let orient = prior_orientation(&train_scores, &train_truth);
    let base_match: Vec<bool> = test_scores
        .iter()
        .zip(&truth)
        .map(|(s, &t)| (orient * s.s_a >= 0.0) == t)
        .collect();

    let icm_checkpoint = icm.scorer.params.to_checkpoint("icm-scorer", config_hash);
    let judge_checkpoint = judge.params.to_checkpoint("judge-icm", config_hash);
    let baseline_checkpoint =
        baseline.map(|b| b.params.to_checkpoint("judge-baseline", config_hash));

    Ok(FoldRun {
        seed,
        fold,
        n_train: train_idx.len(),
        n_eval: eval_idx.len(),
        icm_metrics,
        baseline_metrics,
        attribution_accuracy,
        noise_attribution_accuracy,
        train_scores,
        test_scores,
        base_match,
        icm_predictions,
        baseline_predictions,
        icm_checkpoint,
        judge_checkpoint,
        baseline_checkpoint,
    })
}

/// Paired t with a flagged fallback when there are fewer than 2 pairs.
fn safe_paired_t(a: &[f64], b: &[f64]) -> TTest {
    if a.len() < 2 {
        let mean_delta = match (a.first(), b.first()) {
            (Some(x), Some(y)) => x - y,
            _ => 0.0,
        };
        return TTest {
            mean_delta,
            t: f64::NAN,
            df: 0,
            p: f64::NAN,
            significant_at_05: false,
            flag: Some("fewer than 2 paired folds; p undefined".to_string()),
        };
    }
    paired_t_test(a, b)
}

fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn expert_coverage_check(cfg: &RunConfig, corpus: &Corpus) -> Result<(), HarnessError> {
    let missing: Vec<u32> = corpus
        .examples
        .iter()
        .map(|ex| ex.annotation.expert_id)
        .filter(|id| !cfg.encoder.expert_ids.contains(id))
        .collect::<std::collections::BTreeSet<u32>>()
        .into_iter()
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(invalid(
            "encoder.expert_ids",
            format!(
                "corpus has annotator ids {missing:?} not listed in encoder.expert_ids {:?}",
                cfg.encoder.expert_ids
            ),
        )
        .into())
    }
}

/// Run the full seeds x folds protocol over one corpus and fold plan.
pub fn run_protocol(
    cfg: &RunConfig,
    command: &str,
    corpus: &Corpus,
    plan: &FoldPlan,
    noise_expert: Option<u32>,
    with_baseline: bool,
) -> Result<ComparisonRun, HarnessError> {
    expert_coverage_check(cfg, corpus)?;
    let config_hash = cfg.hash();

    let mut folds: Vec<FoldRun> = Vec::new();
    for &seed in &cfg.seeds {
        for fold in 0..plan.num_folds() {
            let (train_idx, test_idx) = plan.train_test_indices(corpus, fold)?;
            let cell = run_fold(
                cfg,
                &config_hash,
                corpus,
                &train_idx,
                &test_idx,
                seed,
                fold,
                noise_expert,
                with_baseline,
            )
            .map_err(|e| HarnessError::Fold { seed, fold, source: Box::new(e) })?;
            folds.push(cell);
        }
    }

    let icm_folds: Vec<FoldMetrics> = folds.iter().map(|f| f.icm_metrics.clone()).collect();
    let icm_aggregate = aggregate(&icm_folds);
    let baseline_folds: Vec<FoldMetrics> =
        folds.iter().filter_map(|f| f.baseline_metrics.clone()).collect();
    let baseline_aggregate =
        (!baseline_folds.is_empty()).then(|| aggregate(&baseline_folds));

    let significance = if baseline_folds.len() == folds.len() {
        METRIC_NAMES
            .iter()
            .map(|&name| {
                let a: Vec<f64> = icm_folds.iter().map(|f| f.get(name).value).collect();
                let b: Vec<f64> = baseline_folds.iter().map(|f| f.get(name).value).collect();
                MetricComparison {
                    metric: name.to_string(),
                    icm_mean: mean_of(&a),
                    baseline_mean: mean_of(&b),
                    test: safe_paired_t(&a, &b),
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let pooled_scores: Vec<f64> =
        folds.iter().flat_map(|f| f.test_scores.iter().map(|s| s.score)).collect();
    let pooled_match: Vec<bool> = folds.iter().flat_map(|f| f.base_match.clone()).collect();
    let histogram = curiosity_histogram(&pooled_scores, &pooled_match, HIST_BINS);

    Ok(ComparisonRun {
        command: command.to_string(),
        config_hash,
        family_hash: cfg.family_hash(),
        split: cfg.split.clone(),
        corpus_files: corpus_file_records(&cfg.corpus)?,
        plan_warnings: plan.warnings().to_vec(),
        folds,
        icm_aggregate,
        baseline_aggregate,
        significance,
        histogram,
    })
}

fn corpus_file_records(paths: &[PathBuf]) -> Result<Vec<CorpusFileRecord>, HarnessError> {
    let mut records: BTreeMap<String, String> = BTreeMap::new();
    for path in paths {
        records.insert(path.display().to_string(), sha256_file(path)?);
        let sidecar = path.parent().unwrap_or_else(|| Path::new(".")).join("stories.jsonl");
        if sidecar.is_file() {
            records.insert(sidecar.display().to_string(), sha256_file(&sidecar)?);
        }
    }
    Ok(records.into_iter().map(|(path, sha256)| CorpusFileRecord { path, sha256 }).collect())
}

fn fold_flags(m: &FoldMetrics) -> String {
    METRIC_NAMES
        .iter()
        .filter(|&&name| m.get(name).is_flagged())
        .copied()
        .collect::<Vec<_>>()
        .join(";")
}

fn aggregate_flags(cells: &BTreeMap<String, AggregateCell>) -> String {
    METRIC_NAMES
        .iter()
        .filter_map(|&name| {
            let c = &cells[name];
            (c.flagged_folds > 0).then(|| format!("{name}:{}", c.flagged_folds))
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn fold_metrics_row(
    out: &mut String,
    f: &FoldRun,
    method: &str,
    m: &FoldMetrics,
    attr: Option<(f64, Option<f64>)>,
) {
    let cells: Vec<String> =
        METRIC_NAMES.iter().map(|&n| format!("{:.6}", m.get(n).value)).collect();
    let (attr_cell, noise_cell) = match attr {
        Some((a, noise)) => {
            (format!("{a:.6}"), noise.map(|v| format!("{v:.6}")).unwrap_or_default())
        }
        None => (String::new(), String::new()),
    };
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{}",
        f.seed,
        f.fold,
        method,
        f.n_train,
        f.n_eval,
        cells.join(","),
        attr_cell,
        noise_cell,
        fold_flags(m),
    )
    .expect("write to String");
}

fn aggregate_row(
    out: &mut String,
    method: &str,
    cells: &BTreeMap<String, AggregateCell>,
    attr: Option<(String, String)>,
) {
    let metric_cells: Vec<String> =
        METRIC_NAMES.iter().map(|&n| cells[n].display.clone()).collect();
    let (attr_cell, noise_cell) = attr.unwrap_or_default();
    writeln!(
        out,
        "all,aggregate,{},,,{},{},{},{}",
        method,
        metric_cells.join(","),
        attr_cell,
        noise_cell,
        aggregate_flags(cells),
    )
    .expect("write to String");
}

/// Render `metrics.csv`: one row per (seed, fold, method), then aggregates.
pub fn metrics_csv(run: &ComparisonRun) -> String {
    let mut out = String::new();
    writeln!(out, "# config_hash={}", run.config_hash).unwrap();
    writeln!(
        out,
        "seed,fold,method,n_train,n_eval,{},attr_acc,noise_attr_acc,flags",
        METRIC_NAMES.join(",")
    )
    .unwrap();
    for f in &run.folds {
        fold_metrics_row(
            &mut out,
            f,
            "icm",
            &f.icm_metrics,
            Some((f.attribution_accuracy, f.noise_attribution_accuracy)),
        );
        if let Some(b) = &f.baseline_metrics {
            fold_metrics_row(&mut out, f, "baseline", b, None);
        }
    }
    let attr_vals: Vec<f64> = run.folds.iter().map(|f| f.attribution_accuracy).collect();
    let noise_vals: Vec<f64> =
        run.folds.iter().filter_map(|f| f.noise_attribution_accuracy).collect();
    let attr_display = format_mean_sd(mean_of(&attr_vals), sample_sd(&attr_vals));
    let noise_display = if noise_vals.is_empty() {
        String::new()
    } else {
        format_mean_sd(mean_of(&noise_vals), sample_sd(&noise_vals))
    };
    aggregate_row(&mut out, "icm", &run.icm_aggregate, Some((attr_display, noise_display)));
    if let Some(b) = &run.baseline_aggregate {
        aggregate_row(&mut out, "baseline", b, None);
    }
    out
}

/// Render `significance.csv`: the paired comparison per metric.
pub fn significance_csv(run: &ComparisonRun) -> String {
    let mut out = String::new();
    writeln!(out, "# config_hash={}", run.config_hash).unwrap();
    writeln!(out, "metric,icm_mean,baseline_mean,mean_delta,t,df,p,significant_at_05,flag")
        .unwrap();
    for c in &run.significance {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{},{:.6e},{},{}",
            c.metric,
            c.icm_mean,
            c.baseline_mean,
            c.test.mean_delta,
            c.test.t,
            c.test.df,
            c.test.p,
            c.test.significant_at_05,
            c.test.flag.as_deref().unwrap_or(""),
        )
        .unwrap();
    }
    out
}

/// Render `curiosity_hist.csv`: binned match/mismatch counts plus the
/// magnitude summary in header comments.
pub fn histogram_csv(run: &ComparisonRun) -> String {
    let h = &run.histogram;
    let mut out = String::new();
    writeln!(out, "# config_hash={}", run.config_hash).unwrap();
    writeln!(out, "# match_n={} mismatch_n={}", h.match_n, h.mismatch_n).unwrap();
    writeln!(out, "# match_mean_abs={:.6}", h.match_mean_abs).unwrap();
    writeln!(out, "# mismatch_mean_abs={:.6}", h.mismatch_mean_abs).unwrap();
    writeln!(out, "bin_lo,bin_hi,match_count,mismatch_count").unwrap();
    for i in 0..h.match_counts.len() {
        writeln!(
            out,
            "{:.6},{:.6},{},{}",
            h.edges[i],
            h.edges[i + 1],
            h.match_counts[i],
            h.mismatch_counts[i]
        )
        .unwrap();
    }
    out
}

fn write_text(path: &Path, content: &str) -> Result<(), HarnessError> {
    std::fs::write(path, content).map_err(io_err(path))
}

fn mkdirs(path: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

struct ArtifactLog<'a> {
    root: &'a Path,
    files: BTreeMap<String, String>,
}

impl ArtifactLog<'_> {
    fn record(&mut self, path: &Path) -> Result<(), HarnessError> {
        let rel = path
            .strip_prefix(self.root)
            .expect("artifact under run dir")
            .to_string_lossy()
            .into_owned();
        self.files.insert(rel, sha256_file(path)?);
        Ok(())
    }
}

/// Persist all artifacts of a comparison run under `cfg.output_dir` and
/// return the manifest that was written.
pub fn write_comparison(
    cfg: &RunConfig,
    run: &ComparisonRun,
    plan: &FoldPlan,
) -> Result<RunManifest, HarnessError> {
    let out = cfg.output_dir.as_path();
    mkdirs(out)?;
    let mut log = ArtifactLog { root: out, files: BTreeMap::new() };

    // The config file is written for reruns but not hashed into the
    // manifest: its bytes vary with the chosen output location, while its
    // experiment content is already identified by config_hash.
    cfg.save(out.join(CONFIG_FILE))?;

    let plan_path = out.join(FOLD_PLAN_FILE);
    write_text(&plan_path, &plan.to_json_string())?;
    log.record(&plan_path)?;

    let mut checkpoints: BTreeMap<String, String> = BTreeMap::new();
    for f in &run.folds {
        let dir = out.join(format!("seed-{}", f.seed)).join(format!("fold-{}", f.fold));
        mkdirs(&dir)?;
        let scores_train = dir.join("scores_train.jsonl");
        save_scores(&f.train_scores, &scores_train)?;
        log.record(&scores_train)?;
        let scores_test = dir.join("scores_test.jsonl");
        save_scores(&f.test_scores, &scores_test)?;
        log.record(&scores_test)?;
        let preds_icm = dir.join("predictions_icm.jsonl");
        save_predictions(&f.icm_predictions, &preds_icm)?;
        log.record(&preds_icm)?;
        if f.baseline_metrics.is_some() {
            let preds_base = dir.join("predictions_baseline.jsonl");
            save_predictions(&f.baseline_predictions, &preds_base)?;
            log.record(&preds_base)?;
        }
        let mut save_ckpt = |name: &str, ckpt: &Checkpoint| -> Result<(), HarnessError> {
            let path = dir.join(format!("{name}.ckpt.json"));
            save_checkpoint_file(ckpt, &path)?;
            let sha = sha256_file(&path)?;
            log.files.insert(
                path.strip_prefix(out).expect("under run dir").to_string_lossy().into_owned(),
                sha.clone(),
            );
            checkpoints.insert(format!("seed-{}/fold-{}/{name}", f.seed, f.fold), sha);
            Ok(())
        };
        save_ckpt("icm", &f.icm_checkpoint)?;
        save_ckpt("judge", &f.judge_checkpoint)?;
        if let Some(b) = &f.baseline_checkpoint {
            save_ckpt("baseline", b)?;
        }
    }

    let metrics_path = out.join(METRICS_CSV);
    write_text(&metrics_path, &metrics_csv(run))?;
    log.record(&metrics_path)?;

    if !run.significance.is_empty() {
        let sig_path = out.join(SIGNIFICANCE_CSV);
        write_text(&sig_path, &significance_csv(run))?;
        log.record(&sig_path)?;
    }

    let hist_path = out.join(HISTOGRAM_CSV);
    write_text(&hist_path, &histogram_csv(run))?;
    log.record(&hist_path)?;

    let manifest = RunManifest {
        config_hash: run.config_hash.clone(),
        family_hash: run.family_hash.clone(),
        command: run.command.clone(),
        split: run.split.clone(),
        seeds: cfg.seeds.clone(),
        corpus: run.corpus_files.clone(),
        icm_optim: cfg.icm.optim.clone(),
        judge_optim: cfg.judge.optim.clone(),
        checkpoints,
        files: log.files,
        warnings: run.plan_warnings.clone(),
    };
    let manifest_path = out.join(MANIFEST_FILE);
    write_text(
        &manifest_path,
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(manifest)
}

/// Cross-validated comparison: for each fold, train the belief-shift model
/// on the train split, score both splits, train the curiosity judge and the
/// identity baseline, and evaluate both on the test split.
pub fn run_crossval(cfg: &RunConfig) -> Result<ComparisonRun, HarnessError> {
    cfg.validate()?;
    let SplitSpec::Kfold { k, seed } = cfg.split else {
        return Err(invalid("split", "crossval requires kind = \"kfold\"").into());
    };
    let corpus = load_corpora(&cfg.corpus)?;
    let plan = make_kfold(&corpus, k, seed)?;
    let run = run_protocol(cfg, "crossval", &corpus, &plan, None, true)?;
    write_comparison(cfg, &run, &plan)?;
    Ok(run)
}

/// Held-out-dimension comparison. A k-fold split spec falls back to the
/// default held-out dimension; artifacts record the effective config.
pub fn run_ood(cfg: &RunConfig) -> Result<ComparisonRun, HarnessError> {
    cfg.validate()?;
    let heldout = match cfg.split {
        SplitSpec::Ood { heldout } => heldout,
        SplitSpec::Kfold { .. } => Dimension::OriginalityInThought,
    };
    let mut effective = cfg.clone();
    effective.split = SplitSpec::Ood { heldout };
    let corpus = load_corpora(&effective.corpus)?;
    let plan = make_ood_split(&corpus, heldout)?;
    let run = run_protocol(&effective, "ood", &corpus, &plan, None, true)?;
    write_comparison(&effective, &run, &plan)?;
    Ok(run)
}

/// Which rows of the ablation grid to run; default is the full grid.
#[derive(Debug, Clone, Copy, Default)]
pub struct ArmSelect {
    /// Restrict to the attribution-disabled (lambda = 0) rows.
    pub no_inverse_only: bool,
    /// Restrict to the injected-noise-annotator rows.
    pub with_noise_only: bool,
}

/// One row of the ablation grid, aggregated over seeds x folds.
#[derive(Debug, Clone)]
pub struct AblationArm {
    pub with_inverse: bool,
    pub with_noise: bool,
    pub aggregate: BTreeMap<String, AggregateCell>,
    pub attribution_mean: f64,
    pub attribution_sd: f64,
    pub noise_attribution_mean: Option<f64>,
    pub noise_attribution_sd: Option<f64>,
}

impl AblationArm {
    pub fn method_label(&self) -> &'static str {
        if self.with_inverse {
            "with-inverse"
        } else {
            "without-inverse"
        }
    }

    pub fn annotation_label(&self) -> &'static str {
        if self.with_noise {
            "with-noise"
        } else {
            "clean"
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub config_hash: String,
    pub arms: Vec<AblationArm>,
    /// Uniform-guess attribution accuracy in the noise arms.
    pub chance_attribution: f64,
}

/// Render `ablation.csv`: the method x annotation grid, one row per arm.
pub fn ablation_csv(run: &AblationRun) -> String {
    let mut out = String::new();
    writeln!(out, "# config_hash={}", run.config_hash).unwrap();
    writeln!(out, "# chance_attribution={:.6}", run.chance_attribution).unwrap();
    writeln!(out, "method,annotation,{},attr_acc,noise_attr_acc", METRIC_NAMES.join(","))
        .unwrap();
    for arm in &run.arms {
        let cells: Vec<String> =
            METRIC_NAMES.iter().map(|&n| arm.aggregate[n].display.clone()).collect();
        let noise_cell = match (arm.noise_attribution_mean, arm.noise_attribution_sd) {
            (Some(m), Some(s)) => format_mean_sd(m, s),
            _ => String::new(),
        };
        writeln!(
            out,
            "{},{},{},{},{}",
            arm.method_label(),
            arm.annotation_label(),
            cells.join(","),
            format_mean_sd(arm.attribution_mean, arm.attribution_sd),
            noise_cell,
        )
        .unwrap();
    }
    out
}

/// Attribution ablation: the full lambda x annotation grid under the
/// cross-validation protocol, judged on the curiosity-conditioned head only.
pub fn run_ablation(cfg: &RunConfig, select: ArmSelect) -> Result<AblationRun, HarnessError> {
    cfg.validate()?;
    let SplitSpec::Kfold { k, seed: split_seed } = cfg.split else {
        return Err(invalid("split", "ablation runs cross-validation; set kind = \"kfold\"").into());
    };
    let base_corpus = load_corpora(&cfg.corpus)?;

    // Data-level randomness anchors to the first run seed so every model
    // seed trains against the same injected corpus.
    let noise_id = base_corpus
        .examples
        .iter()
        .map(|ex| ex.annotation.expert_id)
        .max()
        .unwrap_or(3)
        .max(3)
        + 1;
    let profile = noise_profile(noise_id);
    let injected = inject_noise_annotator(
        &base_corpus,
        &profile,
        derive_seed(cfg.seeds[0], "ablate/noise-annotator"),
    )?;
    let mut noise_encoder = cfg.encoder.clone();
    noise_encoder.expert_ids.push(noise_id);
    noise_encoder.expert_ids.sort_unstable();
    let chance_attribution = 1.0 / noise_encoder.expert_ids.len() as f64;

    let config_hash = cfg.hash();
    let mut arms = Vec::new();
    for with_noise in [false, true] {
        if select.with_noise_only && !with_noise {
            continue;
        }
        let corpus = if with_noise { &injected } else { &base_corpus };
        let plan = make_kfold(corpus, k, split_seed)?;
        for with_inverse in [true, false] {
            if select.no_inverse_only && with_inverse {
                continue;
            }
            let mut arm_cfg = cfg.clone();
            arm_cfg.icm.lambda = if with_inverse { 1.0 } else { 0.0 };
            if with_noise {
                arm_cfg.encoder = noise_encoder.clone();
            }
            let run = run_protocol(
                &arm_cfg,
                "ablate",
                corpus,
                &plan,
                with_noise.then_some(noise_id),
                false,
            )?;
            let attr: Vec<f64> = run.folds.iter().map(|f| f.attribution_accuracy).collect();
            let noise_attr: Vec<f64> =
                run.folds.iter().filter_map(|f| f.noise_attribution_accuracy).collect();
            arms.push(AblationArm {
                with_inverse,
                with_noise,
                aggregate: run.icm_aggregate,
                attribution_mean: mean_of(&attr),
                attribution_sd: sample_sd(&attr),
                noise_attribution_mean: (!noise_attr.is_empty()).then(|| mean_of(&noise_attr)),
                noise_attribution_sd: (!noise_attr.is_empty()).then(|| sample_sd(&noise_attr)),
            });
        }
    }

    let run = AblationRun { config_hash, arms, chance_attribution };
    write_ablation(cfg, &run, &injected)?;
    Ok(run)
}

fn write_ablation(
    cfg: &RunConfig,
    run: &AblationRun,
    injected: &Corpus,
) -> Result<(), HarnessError> {
    let out = cfg.output_dir.as_path();
    mkdirs(out)?;
    let mut log = ArtifactLog { root: out, files: BTreeMap::new() };

    cfg.save(out.join(CONFIG_FILE))?;

    let table_path = out.join(ABLATION_CSV);
    write_text(&table_path, &ablation_csv(run))?;
    log.record(&table_path)?;

    // Every arm filter keeps at least one injected-noise row, so the noise
    // corpus is always part of the run's provenance.
    let noise_dir = out.join("arms").join("with-noise");
    mkdirs(&noise_dir)?;
    let corpus_path = noise_dir.join("corpus.jsonl");
    save_corpus(injected, &corpus_path, true)?;
    log.record(&corpus_path)?;

    let manifest = RunManifest {
        config_hash: run.config_hash.clone(),
        family_hash: cfg.family_hash(),
        command: "ablate".to_string(),
        split: cfg.split.clone(),
        seeds: cfg.seeds.clone(),
        corpus: corpus_file_records(&cfg.corpus)?,
        icm_optim: cfg.icm.optim.clone(),
        judge_optim: cfg.judge.optim.clone(),
        checkpoints: BTreeMap::new(),
        files: log.files,
        warnings: Vec::new(),
    };
    let manifest_path = out.join(MANIFEST_FILE);
    write_text(
        &manifest_path,
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(())
}
