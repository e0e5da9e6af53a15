//! Verdict classifiers. The curiosity-conditioned judge reads the combined
//! story/question features plus a learned delimiter embedding shifted by
//! score * injection-vector in hidden space; the baseline reads the same
//! features plus a per-annotator embedding and never sees explanations or
//! scores. Both share one layout, so the two models differ only in which
//! conditioning block is active (the inactive block is frozen at init).

use crate::data::{Corpus, Dimension, ExampleKey, Verdict};
use crate::encoder::{
    adapted_matvec_sparse, hidden_stack, init_params, push_adapter_layout, push_mlp_layout,
    EncoderConfig, EncoderError,
};
use crate::features::{featurize, FeatureVector};
use crate::icm::{CuriosityRecord, IcmError, IcmModel, ScoreRecord};
use crate::optim::{train_loop, OptimError, OptimizerConfig};
use crate::params::{Layout, ParamVec};
use crate::rng::seeded_rng;
use crate::tape::{softmax, NodeId, Tape};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum JudgeMode {
    #[default]
    Icm,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub mode: JudgeMode,
    /// Render the curiosity score as text ("<CREAT> {:.4}") into the
    /// feature stream instead of the scalar-injection conditioning.
    pub score_as_text: bool,
    pub optim: OptimizerConfig,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self { mode: JudgeMode::Icm, score_as_text: false, optim: OptimizerConfig::default() }
    }
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("curiosity score missing for {key} (required in ICM mode)")]
    MissingScore { key: String },
    #[error("curiosity score given for {key} but the baseline conditions on annotator identity only")]
    UnexpectedScore { key: String },
    #[error("score records do not match the training split: {message}")]
    ScoreCorpusMismatch { message: String },
    #[error("explanation required for {key} in explanation-available inference")]
    ExplanationRequired { key: String },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Icm(#[from] IcmError),
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed prediction record at line {line}: {message}")]
    MalformedPrediction { line: usize, message: String },
}

/// One conditioning variant is always present, never both.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Conditioning {
    Curiosity {
        score: f64,
        /// Featurized "<CREAT> {:.4}" rendering (score-as-text mode only).
        #[serde(skip_serializing_if = "Option::is_none")]
        rendered: Option<FeatureVector>,
    },
    Expert { class: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JudgeInput {
    pub story_features: FeatureVector,
    pub question_features: FeatureVector,
    pub conditioning: Conditioning,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerdictPrediction {
    pub prob_yes: f64,
    pub verdict: Verdict,
}

/// Provenance of a prediction: which judge and which inference reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredMode {
    IcmExplanation,
    IcmExpertPrior,
    Baseline,
}

/// The serialized (JSONL) form of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub story_id: String,
    pub dimension: Dimension,
    pub expert_id: u32,
    pub prob_yes: f64,
    pub verdict: Verdict,
    pub curiosity_score: Option<f64>,
    pub mode: PredMode,
}

/// Layout shared by both judge variants; parity holds by construction.
pub fn judge_layout(enc: &EncoderConfig) -> Layout {
    let mut layout = Layout::new();
    push_mlp_layout(&mut layout, enc);
    layout.register("out_w", 2, enc.hidden_width);
    layout.register("out_b", 1, 2);
    layout.register("delim_emb", 1, enc.hidden_width);
    layout.register("score_inject", 1, enc.hidden_width);
    // [mu, sigma] of the train-split curiosity scores; never trained.
    layout.register("score_norm", 1, 2);
    layout.register("expert_cond", enc.n_experts(), enc.hidden_width);
    if let Some(a) = &enc.adapters {
        push_adapter_layout(&mut layout, enc, a.rank);
    }
    layout
}

#[derive(Debug, Clone)]
pub struct Judge {
    pub enc: EncoderConfig,
    pub cfg: JudgeConfig,
    pub params: ParamVec,
}

impl Judge {
    pub fn new(enc: EncoderConfig, cfg: JudgeConfig, seed: u64) -> Result<Judge, JudgeError> {
        let mut params = init_params(judge_layout(&enc), seed);
        crate::encoder::apply_adapter_freeze(&mut params, &enc)?;
        let frozen: &[&str] = match (cfg.mode, cfg.score_as_text) {
            (JudgeMode::Icm, false) => &["expert_cond"],
            (JudgeMode::Icm, true) => &["expert_cond", "delim_emb", "score_inject"],
            (JudgeMode::Baseline, _) => &["delim_emb", "score_inject"],
        };
        for name in frozen {
            params.set_trainable(name, false);
        }
        params.set_trainable("score_norm", false);
        params.tensor_mut("score_norm").copy_from_slice(&[0.0, 1.0]);
        Ok(Judge { enc, cfg, params })
    }

    /// Affine normalization fitted on the train-split scores, applied to
    /// every raw curiosity score before it reaches the input. The
    /// belief-shift magnitude is an initialization artifact that varies by
    /// orders of magnitude across scorer seeds; fixing the injection scale
    /// from the training scores is the continuous analog of rendering the
    /// score as scale-free digits.
    pub fn score_norm(&self) -> (f64, f64) {
        let t = self.params.tensor("score_norm");
        (t[0], t[1])
    }

    pub fn normalize_score(&self, score: f64) -> f64 {
        let (mu, sigma) = self.score_norm();
        (score - mu) / sigma
    }

    fn fit_score_norm(&mut self, scores: &BTreeMap<ExampleKey, f64>) {
        let n = scores.len() as f64;
        let mu = scores.values().sum::<f64>() / n;
        let var = scores.values().map(|s| (s - mu) * (s - mu)).sum::<f64>() / n;
        let sd = var.sqrt();
        let sigma = if sd.is_finite() && sd > 1e-12 { sd } else { 1.0 };
        self.params.tensor_mut("score_norm").copy_from_slice(&[mu, sigma]);
    }

    pub fn featurize_text(&self, text: &str) -> FeatureVector {
        featurize(text, self.enc.feature_dim, self.enc.max_chars)
    }

    /// Assemble the model input for one example. `key` only labels errors.
    pub fn build_input(
        &self,
        key: &str,
        story_text: &str,
        question_text: &str,
        expert_id: u32,
        score: Option<f64>,
    ) -> Result<JudgeInput, JudgeError> {
        let conditioning = match self.cfg.mode {
            JudgeMode::Icm => {
                let score =
                    score.ok_or_else(|| JudgeError::MissingScore { key: key.to_string() })?;
                assert!(score.is_finite(), "curiosity score must be finite");
                let rendered = self
                    .cfg
                    .score_as_text
                    .then(|| self.featurize_text(&format!("<CREAT> {score:.4}")));
                Conditioning::Curiosity { score, rendered }
            }
            JudgeMode::Baseline => {
                if score.is_some() {
                    return Err(JudgeError::UnexpectedScore { key: key.to_string() });
                }
                Conditioning::Expert { class: self.enc.expert_class(expert_id)? }
            }
        };
        Ok(JudgeInput {
            story_features: self.featurize_text(story_text),
            question_features: self.featurize_text(question_text),
            conditioning,
        })
    }

    /// Two-class logits (no, yes) for an input.
    pub fn logits(&self, input: &JudgeInput) -> [f64; 2] {
        let mut tape = Tape::new(&self.params);
        let node = judge_forward(&mut tape, &self.enc, input, None);
        let v = tape.value(node);
        [v[0], v[1]]
    }

    pub fn predict_input(&self, input: &JudgeInput) -> VerdictPrediction {
        let p = softmax(&self.logits(input));
        let prob_yes = p[1];
        VerdictPrediction { prob_yes, verdict: Verdict::from_bool(prob_yes >= 0.5) }
    }

    /// Predict one corpus example. ICM mode requires `score`; the baseline
    /// forbids it.
    pub fn predict_example(
        &self,
        corpus: &Corpus,
        idx: usize,
        score: Option<f64>,
        mode: PredMode,
    ) -> Result<PredictionRecord, JudgeError> {
        let ex = &corpus.examples[idx];
        let story = corpus.story(&ex.story_ref).expect("story resolved at load time");
        let question = corpus.question_text(ex.dimension);
        let key = ex.key().to_string();
        let normalized = score.map(|s| self.normalize_score(s));
        let input =
            self.build_input(&key, &story.text, &question, ex.annotation.expert_id, normalized)?;
        let pred = self.predict_input(&input);
        Ok(PredictionRecord {
            story_id: ex.story_ref.clone(),
            dimension: ex.dimension,
            expert_id: ex.annotation.expert_id,
            prob_yes: pred.prob_yes,
            verdict: pred.verdict,
            curiosity_score: score,
            mode,
        })
    }
}

/// Build the judge forward pass on a tape; returns the 2-logit node.
pub fn judge_forward(
    tape: &mut Tape<'_>,
    enc: &EncoderConfig,
    input: &JudgeInput,
    dropout: Option<&mut crate::encoder::AdapterDropout<'_>>,
) -> NodeId {
    let mut x = input.story_features.add(&input.question_features);
    let cond_hidden = match &input.conditioning {
        Conditioning::Curiosity { rendered: Some(r), .. } => {
            x = x.add(r);
            None
        }
        Conditioning::Curiosity { score, rendered: None } => {
            let d = tape.param("delim_emb");
            let inj = tape.param("score_inject");
            let scaled = tape.affine(inj, *score, 0.0);
            Some(tape.add(d, scaled))
        }
        Conditioning::Expert { class } => Some(tape.param_row("expert_cond", *class)),
    };
    let proj = adapted_matvec_sparse(tape, enc, "input_w", &x, dropout);
    let b = tape.param("input_b");
    let mut pre0 = tape.add(proj, b);
    if let Some(c) = cond_hidden {
        pre0 = tape.add(pre0, c);
    }
    let h = hidden_stack(tape, enc, pre0);
    let w = tape.matvec("out_w", h);
    let ob = tape.param("out_b");
    tape.add(w, ob)
}

/// Index score records by example key; rejects duplicates.
pub fn score_map(scores: &[ScoreRecord]) -> Result<BTreeMap<ExampleKey, f64>, JudgeError> {
    let mut map = BTreeMap::new();
    for r in scores {
        let key = ExampleKey {
            story_id: r.story_id.clone(),
            dimension: r.dimension,
            expert_id: r.expert_id,
        };
        if map.insert(key.clone(), r.score).is_some() {
            return Err(JudgeError::ScoreCorpusMismatch {
                message: format!("duplicate score record for {key}"),
            });
        }
    }
    Ok(map)
}

struct PreparedJudgeExample {
    input: JudgeInput,
    target: usize,
}

fn prepare(
    judge: &Judge,
    corpus: &Corpus,
    train_idx: &[usize],
    scores: Option<&BTreeMap<ExampleKey, f64>>,
) -> Result<Vec<PreparedJudgeExample>, JudgeError> {
    let mut prepared = Vec::with_capacity(train_idx.len());
    for &i in train_idx {
        let ex = &corpus.examples[i];
        let key = ex.key();
        let score = match scores {
            Some(m) => Some(*m.get(&key).ok_or_else(|| JudgeError::ScoreCorpusMismatch {
                message: format!("missing score record for train example {key}"),
            })?),
            None => None,
        };
        let story = corpus.story(&ex.story_ref).expect("story resolved at load time");
        let question = corpus.question_text(ex.dimension);
        let input = judge.build_input(
            &key.to_string(),
            &story.text,
            &question,
            ex.annotation.expert_id,
            score,
        )?;
        prepared.push(PreparedJudgeExample {
            input,
            target: ex.annotation.verdict.as_u8() as usize,
        });
    }
    Ok(prepared)
}

fn train(
    judge: &mut Judge,
    corpus: &Corpus,
    train_idx: &[usize],
    scores: Option<&BTreeMap<ExampleKey, f64>>,
) -> Result<Vec<f64>, JudgeError> {
    assert!(!train_idx.is_empty(), "training on an empty split");
    let prepared = prepare(judge, corpus, train_idx, scores)?;
    let enc = judge.enc.clone();
    let optim_cfg = judge.cfg.optim.clone();
    let mut shuffle_rng = seeded_rng(optim_cfg.seed, "judge/shuffle");
    let mut dropout_rng = seeded_rng(optim_cfg.seed, "judge/adapter-dropout");
    let batch_grad = |params: &ParamVec, batch: &[usize], grad: &mut [f64]| {
        let mut tape = Tape::new(params);
        let mut terms: Vec<NodeId> = Vec::with_capacity(batch.len());
        for &pos in batch {
            let p = &prepared[pos];
            let mut dropout = crate::encoder::AdapterDropout { rng: &mut dropout_rng };
            let logits = judge_forward(&mut tape, &enc, &p.input, Some(&mut dropout));
            terms.push(tape.softmax_ce(logits, p.target));
        }
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = tape.add(acc, t);
        }
        let mean = tape.affine(acc, 1.0 / terms.len() as f64, 0.0);
        tape.backward(mean, grad);
        Ok::<f64, JudgeError>(tape.scalar(mean))
    };
    train_loop(&mut judge.params, train_idx.len(), &optim_cfg, &mut shuffle_rng, batch_grad)
}

/// Train the curiosity-conditioned judge. `scores` must cover the train
/// split exactly: every train example once, nothing else (this is the
/// no-leakage guard; test-fold scores are rejected as extras).
pub fn train_judge(
    judge: &mut Judge,
    corpus: &Corpus,
    train_idx: &[usize],
    scores: &[ScoreRecord],
) -> Result<Vec<f64>, JudgeError> {
    assert!(judge.cfg.mode == JudgeMode::Icm, "train_judge requires an ICM-mode judge");
    let map = score_map(scores)?;
    let train_keys: std::collections::BTreeSet<ExampleKey> =
        train_idx.iter().map(|&i| corpus.examples[i].key()).collect();
    let extras: Vec<String> = map
        .keys()
        .filter(|k| !train_keys.contains(k))
        .take(3)
        .map(|k| k.to_string())
        .collect();
    if !extras.is_empty() {
        return Err(JudgeError::ScoreCorpusMismatch {
            message: format!(
                "{} score records for {} train examples; extras include {}",
                map.len(),
                train_idx.len(),
                extras.join(", ")
            ),
        });
    }
    judge.fit_score_norm(&map);
    let normalized: BTreeMap<ExampleKey, f64> =
        map.into_iter().map(|(k, s)| (k, judge.normalize_score(s))).collect();
    train(judge, corpus, train_idx, Some(&normalized))
}

/// Train the annotator-conditioned baseline (no explanations, no scores).
pub fn train_baseline(
    judge: &mut Judge,
    corpus: &Corpus,
    train_idx: &[usize],
) -> Result<Vec<f64>, JudgeError> {
    assert!(judge.cfg.mode == JudgeMode::Baseline, "train_baseline requires a baseline judge");
    train(judge, corpus, train_idx, None)
}

/// Cross-entropy loss and full parameter gradient for one batch with adapter
/// dropout off, so the result is a deterministic function of the parameters
/// and can be verified against central finite differences. `scores` must
/// cover the batch when the judge runs in ICM mode; pass `None` for the
/// baseline.
pub fn judge_batch_grad(
    judge: &Judge,
    corpus: &Corpus,
    batch: &[usize],
    scores: Option<&BTreeMap<ExampleKey, f64>>,
) -> Result<(f64, Vec<f64>), JudgeError> {
    assert!(!batch.is_empty(), "gradient over an empty batch");
    let prepared = prepare(judge, corpus, batch, scores)?;
    let mut tape = Tape::new(&judge.params);
    let mut terms: Vec<NodeId> = Vec::with_capacity(prepared.len());
    for p in &prepared {
        let logits = judge_forward(&mut tape, &judge.enc, &p.input, None);
        terms.push(tape.softmax_ce(logits, p.target));
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t);
    }
    let mean = tape.affine(acc, 1.0 / terms.len() as f64, 0.0);
    let mut grad = vec![0.0; judge.params.len()];
    tape.backward(mean, &mut grad);
    Ok((tape.scalar(mean), grad))
}

/// Inference reading: where the curiosity score comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferMode {
    /// Score the provided held-out explanation (paper-protocol default).
    ExplanationAvailable,
    /// No explanation: the expert embedding rides the explanation pathway,
    /// making the score 0 by construction.
    ExpertPrior,
}

/// Curiosity scoring composed with judge prediction for one example.
pub fn infer_pipeline(
    icm: &IcmModel,
    judge: &Judge,
    corpus: &Corpus,
    idx: usize,
    mode: InferMode,
) -> Result<(PredictionRecord, CuriosityRecord), JudgeError> {
    let ex = &corpus.examples[idx];
    let record = match mode {
        InferMode::ExplanationAvailable => {
            if ex.annotation.explanation.trim().is_empty() {
                return Err(JudgeError::ExplanationRequired { key: ex.key().to_string() });
            }
            icm.score_example(corpus, idx)?
        }
        InferMode::ExpertPrior => icm.expert_prior_record(corpus, idx)?,
    };
    let pred_mode = match mode {
        InferMode::ExplanationAvailable => PredMode::IcmExplanation,
        InferMode::ExpertPrior => PredMode::IcmExpertPrior,
    };
    let pred = judge.predict_example(corpus, idx, Some(record.curiosity_score), pred_mode)?;
    Ok((pred, record))
}

pub fn save_predictions(records: &[PredictionRecord], path: &Path) -> Result<(), JudgeError> {
    let io_err = |source| JudgeError::Io { path: path.display().to_string(), source };
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("prediction record serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(&out).map_err(io_err)?;
    Ok(())
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>, JudgeError> {
    let content = fs::read_to_string(path)
        .map_err(|source| JudgeError::Io { path: path.display().to_string(), source })?;
    load_predictions_str(&content)
}

pub fn load_predictions_str(content: &str) -> Result<Vec<PredictionRecord>, JudgeError> {
    let mut records = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let r: PredictionRecord = serde_json::from_str(line).map_err(|e| {
            JudgeError::MalformedPrediction { line: line_no, message: e.to_string() }
        })?;
        if !(0.0..=1.0).contains(&r.prob_yes) {
            return Err(JudgeError::MalformedPrediction {
                line: line_no,
                message: format!("prob_yes {} outside [0, 1]", r.prob_yes),
            });
        }
        if let Some(s) = r.curiosity_score {
            if !s.is_finite() {
                return Err(JudgeError::MalformedPrediction {
                    line: line_no,
                    message: "non-finite curiosity_score".to_string(),
                });
            }
        }
        records.push(r);
    }
    Ok(records)
}
