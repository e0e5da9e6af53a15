//! Curiosity model: a forward belief-shift loss (cosine distance between
//! the expert-conditioned prior representation and the explanation-
//! conditioned posterior representation), a backward attribution loss
//! (cross-entropy of predicting the explanation's author from the
//! posterior representation), and the curiosity score s_B - s_A.
//!
//! The attribution head weight is stored as (K, R) row-major, so its
//! logits are `attribution_w . h + attribution_b`; this is the transposed
//! application of an R x K matrix.

use crate::data::Corpus;
use crate::encoder::{
    init_params, scorer_forward, scorer_layout, AdapterDropout, CondInput, EncoderConfig,
    EncoderError, Scorer,
};
use crate::features::FeatureVector;
use crate::optim::{train_loop, OptimError, OptimizerConfig};
use crate::params::{Layout, ParamVec};
use crate::rng::seeded_rng;
use crate::tape::{softmax, NodeId, Tape};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

/// Representations with norm below this are treated as collapsed.
pub const DEGENERATE_NORM_THRESHOLD: f64 = 1e-12;

/// Which vectors feed the forward cosine loss. `Repr` compares the R-dim
/// representations; `LogitSign` compares the scalar logits, whose cosine is
/// just their sign agreement (kept for fidelity to the scalar reading of
/// the objective; it carries no useful gradient).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardLossSpace {
    #[default]
    Repr,
    LogitSign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ICMConfig {
    /// Weight of the backward attribution loss; 0 disables it.
    pub lambda: f64,
    pub forward_loss_space: ForwardLossSpace,
    /// Attribute authorship from a separately-parameterized encoding of
    /// state B instead of the shared representation. Unvalidated variant.
    pub separate_attribution_encoder: bool,
    /// Condition state A on a zero vector instead of the expert embedding.
    /// Unvalidated variant.
    pub expert_agnostic_prior: bool,
    pub optim: OptimizerConfig,
}

impl Default for ICMConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            forward_loss_space: ForwardLossSpace::Repr,
            separate_attribution_encoder: false,
            expert_agnostic_prior: false,
            optim: OptimizerConfig::default(),
        }
    }
}

impl ICMConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(format!("lambda must be a nonnegative real, got {}", self.lambda));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum IcmError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(
        "degenerate representation norm {norm:.3e} in {which}; the encoder has collapsed \
         (all-zero output), so the cosine objective is undefined. Training aborted."
    )]
    DegenerateNorm { which: String, norm: f64 },
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed score record at line {line}: {message}")]
    MalformedScore { line: usize, message: String },
}

/// Full per-example curiosity output, including both representations.
#[derive(Debug, Clone, PartialEq)]
pub struct CuriosityRecord {
    pub story_id: String,
    pub dimension: crate::data::Dimension,
    pub expert_id: u32,
    pub h_a: Vec<f64>,
    pub h_b: Vec<f64>,
    pub s_a: f64,
    pub s_b: f64,
    pub curiosity_score: f64,
}

impl CuriosityRecord {
    pub fn to_score_record(&self) -> ScoreRecord {
        ScoreRecord {
            story_id: self.story_id.clone(),
            dimension: self.dimension,
            expert_id: self.expert_id,
            s_a: self.s_a,
            s_b: self.s_b,
            score: self.curiosity_score,
        }
    }
}

/// The serialized (JSONL) form of a curiosity score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRecord {
    pub story_id: String,
    pub dimension: crate::data::Dimension,
    pub expert_id: u32,
    pub s_a: f64,
    pub s_b: f64,
    pub score: f64,
}

pub fn save_scores(records: &[ScoreRecord], path: &Path) -> Result<(), IcmError> {
    let io_err = |source| IcmError::Io { path: path.display().to_string(), source };
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("score record serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(&out).map_err(io_err)?;
    Ok(())
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreRecord>, IcmError> {
    let content = fs::read_to_string(path)
        .map_err(|source| IcmError::Io { path: path.display().to_string(), source })?;
    load_scores_str(&content)
}

pub fn load_scores_str(content: &str) -> Result<Vec<ScoreRecord>, IcmError> {
    let mut records = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let r: ScoreRecord = serde_json::from_str(line)
            .map_err(|e| IcmError::MalformedScore { line: line_no, message: e.to_string() })?;
        for (name, v) in [("s_a", r.s_a), ("s_b", r.s_b), ("score", r.score)] {
            if !v.is_finite() {
                return Err(IcmError::MalformedScore {
                    line: line_no,
                    message: format!("non-finite {name}"),
                });
            }
        }
        let drift = (r.score - (r.s_b - r.s_a)).abs();
        if drift > 1e-9 {
            return Err(IcmError::MalformedScore {
                line: line_no,
                message: format!("score differs from s_b - s_a by {drift:.3e}"),
            });
        }
        records.push(r);
    }
    Ok(records)
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_norm(v: &[f64], which: &str) -> Result<(), IcmError> {
    let norm = l2(v);
    if norm < DEGENERATE_NORM_THRESHOLD {
        return Err(IcmError::DegenerateNorm { which: which.to_string(), norm });
    }
    Ok(())
}

/// 1 - cos(h_A, h_B); range [0, 2].
pub fn forward_loss(h_a: &[f64], h_b: &[f64]) -> Result<f64, IcmError> {
    check_norm(h_a, "state A")?;
    check_norm(h_b, "state B")?;
    let dot: f64 = h_a.iter().zip(h_b).map(|(a, b)| a * b).sum();
    Ok(1.0 - dot / (l2(h_a) * l2(h_b)))
}

/// -ln softmax(attribution_w . h_B + attribution_b)[class].
pub fn backward_loss(params: &ParamVec, h_b: &[f64], class: usize) -> f64 {
    let logits = attribution_logits(params, h_b);
    assert!(class < logits.len(), "attribution class out of range");
    let p = softmax(&logits);
    -(p[class].max(f64::MIN_POSITIVE)).ln()
}

pub fn attribution_logits(params: &ParamVec, h_b: &[f64]) -> Vec<f64> {
    let w = params.layout.slot("attribution_w");
    assert_eq!(h_b.len(), w.cols, "representation length mismatch");
    let bias = params.tensor("attribution_b");
    (0..w.rows)
        .map(|k| {
            let row = params.row("attribution_w", k);
            let dot: f64 = row.iter().zip(h_b).map(|(a, b)| a * b).sum();
            dot + bias[k]
        })
        .collect()
}

/// Mean over (forward, backward) loss pairs of fwd + lambda * bwd.
pub fn combined_loss(pairs: &[(f64, f64)], lambda: f64) -> f64 {
    assert!(!pairs.is_empty(), "combined loss over an empty batch");
    pairs.iter().map(|(f, b)| f + lambda * b).sum::<f64>() / pairs.len() as f64
}

/// Layout for the curiosity model: the scorer arena plus, when configured,
/// a separate attribution trunk.
pub fn icm_layout(enc: &EncoderConfig, cfg: &ICMConfig) -> Layout {
    let mut layout = scorer_layout(enc);
    if cfg.separate_attribution_encoder {
        layout.register("attr_input_w", enc.hidden_width, enc.feature_dim);
        layout.register("attr_input_b", 1, enc.hidden_width);
        for l in 0..enc.hidden_layers {
            layout.register(&format!("attr_hidden{l}_w"), enc.hidden_width, enc.hidden_width);
            layout.register(&format!("attr_hidden{l}_b"), 1, enc.hidden_width);
        }
        layout.register("attr_repr_w", enc.repr_dim, enc.hidden_width);
    }
    layout
}

/// A scorer plus the curiosity objective configuration.
#[derive(Debug, Clone)]
pub struct IcmModel {
    pub scorer: Scorer,
    pub cfg: ICMConfig,
}

impl IcmModel {
    pub fn new(enc: EncoderConfig, cfg: ICMConfig, seed: u64) -> Result<Self, IcmError> {
        let mut params = init_params(icm_layout(&enc, &cfg), seed);
        crate::encoder::apply_adapter_freeze(&mut params, &enc)?;
        Ok(Self { scorer: Scorer { cfg: enc, params }, cfg })
    }

    /// Wrap an existing scorer arena (e.g. loaded from a checkpoint).
    pub fn from_scorer(scorer: Scorer, cfg: ICMConfig) -> Self {
        Self { scorer, cfg }
    }

    /// Score one corpus example: run both states and form s_B - s_A.
    pub fn score_example(&self, corpus: &Corpus, idx: usize) -> Result<CuriosityRecord, IcmError> {
        let ex = &corpus.examples[idx];
        let story = corpus
            .story(&ex.story_ref)
            .unwrap_or_else(|| panic!("story {} resolved at load time", ex.story_ref));
        let question = corpus.question_text(ex.dimension);
        let a = self.prior_output(&story.text, &question, ex.annotation.expert_id)?;
        let b = self.scorer.score_state_b(&story.text, &question, &ex.annotation.explanation);
        Ok(CuriosityRecord {
            story_id: ex.story_ref.clone(),
            dimension: ex.dimension,
            expert_id: ex.annotation.expert_id,
            curiosity_score: b.logit - a.logit,
            s_a: a.logit,
            s_b: b.logit,
            h_a: a.representation,
            h_b: b.representation,
        })
    }

    fn prior_output(
        &self,
        story: &str,
        question: &str,
        expert_id: u32,
    ) -> Result<crate::encoder::ScorerOutput, IcmError> {
        if self.cfg.expert_agnostic_prior {
            // Still reject unknown experts so both variants share a contract.
            self.scorer.cfg.expert_class(expert_id)?;
            Ok(self.scorer.score_state_b(story, question, ""))
        } else {
            Ok(self.scorer.score_state_a(story, question, expert_id)?)
        }
    }

    /// Expert-prior record: the explanation pathway receives the expert
    /// embedding itself, so states A and B coincide and the score is 0.
    pub fn expert_prior_record(
        &self,
        corpus: &Corpus,
        idx: usize,
    ) -> Result<CuriosityRecord, IcmError> {
        let ex = &corpus.examples[idx];
        let story = corpus.story(&ex.story_ref).expect("story resolved at load time");
        let question = corpus.question_text(ex.dimension);
        let a = self.prior_output(&story.text, &question, ex.annotation.expert_id)?;
        Ok(CuriosityRecord {
            story_id: ex.story_ref.clone(),
            dimension: ex.dimension,
            expert_id: ex.annotation.expert_id,
            h_a: a.representation.clone(),
            h_b: a.representation,
            s_a: a.logit,
            s_b: a.logit,
            curiosity_score: 0.0,
        })
    }

    /// Score many examples; output order is input order.
    pub fn score_corpus(
        &self,
        corpus: &Corpus,
        indices: &[usize],
    ) -> Result<Vec<CuriosityRecord>, IcmError> {
        indices.iter().map(|&i| self.score_example(corpus, i)).collect()
    }

    /// Fraction of examples whose attribution argmax matches the true
    /// annotator.
    pub fn attribution_accuracy(
        &self,
        corpus: &Corpus,
        indices: &[usize],
    ) -> Result<f64, IcmError> {
        assert!(!indices.is_empty(), "attribution accuracy over an empty set");
        let mut hits = 0usize;
        for &i in indices {
            let ex = &corpus.examples[i];
            let class = self.scorer.cfg.expert_class(ex.annotation.expert_id)?;
            let h_b = self.attribution_input(corpus, i);
            let logits = attribution_logits(&self.scorer.params, &h_b);
            let argmax = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(k, _)| k)
                .expect("nonempty logits");
            if argmax == class {
                hits += 1;
            }
        }
        Ok(hits as f64 / indices.len() as f64)
    }

    /// The representation the attribution head reads for one example.
    fn attribution_input(&self, corpus: &Corpus, idx: usize) -> Vec<f64> {
        let ex = &corpus.examples[idx];
        let story = corpus.story(&ex.story_ref).expect("story resolved at load time");
        let question = corpus.question_text(ex.dimension);
        if self.cfg.separate_attribution_encoder {
            let base = self.scorer.base_features(&story.text, &question);
            let expl = self.scorer.featurize_text(&ex.annotation.explanation);
            let x = base.add(&expl);
            let mut tape = Tape::new(&self.scorer.params);
            let h = attr_trunk_forward(&mut tape, &self.scorer.cfg, &x);
            tape.value(h).to_vec()
        } else {
            self.scorer
                .score_state_b(&story.text, &question, &ex.annotation.explanation)
                .representation
        }
    }
}

/// Plain (unadapted) tanh trunk over the attr_* tensors.
fn attr_trunk_forward(tape: &mut Tape<'_>, enc: &EncoderConfig, x: &FeatureVector) -> NodeId {
    let proj = tape.matvec_sparse("attr_input_w", x);
    let b = tape.param("attr_input_b");
    let pre = tape.add(proj, b);
    let mut h = tape.tanh(pre);
    for l in 0..enc.hidden_layers {
        let w = tape.matvec(&format!("attr_hidden{l}_w"), h);
        let b = tape.param(&format!("attr_hidden{l}_b"));
        let pre = tape.add(w, b);
        h = tape.tanh(pre);
    }
    tape.matvec("attr_repr_w", h)
}

struct PreparedExample {
    base: FeatureVector,
    expl: FeatureVector,
    class: usize,
}

/// Optimize the combined objective over the given train examples.
/// Returns the per-epoch mean loss curve.
pub fn train_icm(
    model: &mut IcmModel,
    corpus: &Corpus,
    train_idx: &[usize],
) -> Result<Vec<f64>, IcmError> {
    assert!(!train_idx.is_empty(), "training on an empty split");
    model.cfg.validate().expect("validated config");
    let enc = model.scorer.cfg.clone();
    let cfg = model.cfg.clone();
    let mut prepared = Vec::with_capacity(train_idx.len());
    for &i in train_idx {
        let ex = &corpus.examples[i];
        assert!(
            !ex.annotation.explanation.trim().is_empty(),
            "belief-shift training requires explanation text on every example"
        );
        let story = corpus.story(&ex.story_ref).expect("story resolved at load time");
        let question = corpus.question_text(ex.dimension);
        prepared.push(PreparedExample {
            base: model.scorer.base_features(&story.text, &question),
            expl: model.scorer.featurize_text(&ex.annotation.explanation),
            class: model.scorer.cfg.expert_class(ex.annotation.expert_id)?,
        });
    }
    let zero_cond = FeatureVector::zeros(enc.feature_dim);
    let mut shuffle_rng = seeded_rng(cfg.optim.seed, "icm/shuffle");
    let mut dropout_rng = seeded_rng(cfg.optim.seed, "icm/adapter-dropout");

    let optim_cfg = cfg.optim.clone();
    let batch_grad = |params: &ParamVec, batch: &[usize], grad: &mut [f64]| {
        let mut tape = Tape::new(params);
        let mut terms: Vec<NodeId> = Vec::with_capacity(batch.len());
        for &pos in batch {
            let p = &prepared[pos];
            let mut dropout = AdapterDropout { rng: &mut dropout_rng };
            let prior_cond = if cfg.expert_agnostic_prior {
                CondInput::Text(&zero_cond)
            } else {
                CondInput::Expert(p.class)
            };
            let (h_a, s_a) =
                scorer_forward(&mut tape, &enc, &p.base, prior_cond, Some(&mut dropout));
            let (h_b, s_b) = scorer_forward(
                &mut tape,
                &enc,
                &p.base,
                CondInput::Text(&p.expl),
                Some(&mut dropout),
            );
            let (fa, fb) = match cfg.forward_loss_space {
                ForwardLossSpace::Repr => (h_a, h_b),
                ForwardLossSpace::LogitSign => (s_a, s_b),
            };
            check_norm(tape.value(fa), "state A")?;
            check_norm(tape.value(fb), "state B")?;
            let cos = tape.cosine(fa, fb);
            let fwd = tape.affine(cos, -1.0, 1.0);
            let term = if cfg.lambda > 0.0 {
                let h_attr = if cfg.separate_attribution_encoder {
                    let x_b = p.base.add(&p.expl);
                    attr_trunk_forward(&mut tape, &enc, &x_b)
                } else {
                    h_b
                };
                let wh = tape.matvec("attribution_w", h_attr);
                let bias = tape.param("attribution_b");
                let logits = tape.add(wh, bias);
                let ce = tape.softmax_ce(logits, p.class);
                let weighted = tape.affine(ce, cfg.lambda, 0.0);
                tape.add(fwd, weighted)
            } else {
                fwd
            };
            terms.push(term);
        }
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = tape.add(acc, t);
        }
        let mean = tape.affine(acc, 1.0 / terms.len() as f64, 0.0);
        tape.backward(mean, grad);
        Ok::<f64, IcmError>(tape.scalar(mean))
    };
    train_loop(
        &mut model.scorer.params,
        train_idx.len(),
        &optim_cfg,
        &mut shuffle_rng,
        batch_grad,
    )
}

/// Combined loss and full parameter gradient for one batch with adapter
/// dropout off, so the result is a deterministic function of the parameters
/// and can be verified against central finite differences.
pub fn icm_batch_grad(
    model: &IcmModel,
    corpus: &Corpus,
    batch: &[usize],
) -> Result<(f64, Vec<f64>), IcmError> {
    assert!(!batch.is_empty(), "gradient over an empty batch");
    model.cfg.validate().expect("validated config");
    let enc = &model.scorer.cfg;
    let cfg = &model.cfg;
    let mut prepared = Vec::with_capacity(batch.len());
    for &i in batch {
        let ex = &corpus.examples[i];
        assert!(
            !ex.annotation.explanation.trim().is_empty(),
            "belief-shift training requires explanation text on every example"
        );
        let story = corpus.story(&ex.story_ref).expect("story resolved at load time");
        let question = corpus.question_text(ex.dimension);
        prepared.push(PreparedExample {
            base: model.scorer.base_features(&story.text, &question),
            expl: model.scorer.featurize_text(&ex.annotation.explanation),
            class: enc.expert_class(ex.annotation.expert_id)?,
        });
    }
    let zero_cond = FeatureVector::zeros(enc.feature_dim);
    let mut tape = Tape::new(&model.scorer.params);
    let mut terms: Vec<NodeId> = Vec::with_capacity(prepared.len());
    for p in &prepared {
        let prior_cond = if cfg.expert_agnostic_prior {
            CondInput::Text(&zero_cond)
        } else {
            CondInput::Expert(p.class)
        };
        let (h_a, s_a) = scorer_forward(&mut tape, enc, &p.base, prior_cond, None);
        let (h_b, s_b) =
            scorer_forward(&mut tape, enc, &p.base, CondInput::Text(&p.expl), None);
        let (fa, fb) = match cfg.forward_loss_space {
            ForwardLossSpace::Repr => (h_a, h_b),
            ForwardLossSpace::LogitSign => (s_a, s_b),
        };
        check_norm(tape.value(fa), "state A")?;
        check_norm(tape.value(fb), "state B")?;
        let cos = tape.cosine(fa, fb);
        let fwd = tape.affine(cos, -1.0, 1.0);
        let term = if cfg.lambda > 0.0 {
            let h_attr = if cfg.separate_attribution_encoder {
                let x_b = p.base.add(&p.expl);
                attr_trunk_forward(&mut tape, enc, &x_b)
            } else {
                h_b
            };
            let wh = tape.matvec("attribution_w", h_attr);
            let bias = tape.param("attribution_b");
            let logits = tape.add(wh, bias);
            let ce = tape.softmax_ce(logits, p.class);
            let weighted = tape.affine(ce, cfg.lambda, 0.0);
            tape.add(fwd, weighted)
        } else {
            fwd
        };
        terms.push(term);
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t);
    }
    let mean = tape.affine(acc, 1.0 / terms.len() as f64, 0.0);
    let mut grad = vec![0.0; model.scorer.params.len()];
    tape.backward(mean, &mut grad);
    Ok((tape.scalar(mean), grad))
}
