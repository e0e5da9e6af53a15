//! The differentiable scoring function: hashed n-gram features through a
//! tanh MLP to a representation vector h and a scalar judgment logit s.
//!
//! Weight tensors are stored row-major as (output, input); `y = W x` via
//! `Tape::matvec`. State A conditions on a learned per-expert embedding row
//! in feature space; state B conditions on the featurized explanation
//! through the identical network. Optional low-rank adapters wrap the input
//! projection and hidden matrices as `W + (alpha/r) A B` with the base
//! matrix frozen.

use crate::features::{featurize, FeatureVector};
use crate::params::{Layout, ParamVec};
use crate::rng::seeded_rng;
use crate::tape::{NodeId, Tape};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self { rank: 16, alpha: 32.0, dropout: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Feature (hash bucket) dimension D.
    pub feature_dim: usize,
    /// Hidden width H.
    pub hidden_width: usize,
    /// Representation dimension R.
    pub repr_dim: usize,
    /// Number of H x H hidden layers after the input projection.
    pub hidden_layers: usize,
    /// Texts are truncated to this many characters before featurization.
    pub max_chars: usize,
    /// Annotator ids, ascending; position defines the embedding row and the
    /// attribution class.
    pub expert_ids: Vec<u32>,
    pub adapters: Option<AdapterConfig>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            feature_dim: 4096,
            hidden_width: 64,
            repr_dim: 32,
            hidden_layers: 1,
            max_chars: 4096,
            expert_ids: vec![1, 2, 3],
            adapters: None,
        }
    }
}

impl EncoderConfig {
    pub fn n_experts(&self) -> usize {
        self.expert_ids.len()
    }

    pub fn expert_class(&self, expert_id: u32) -> Result<usize, EncoderError> {
        self.expert_ids
            .iter()
            .position(|&id| id == expert_id)
            .ok_or(EncoderError::UnknownExpert { expert_id })
    }
}

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("unknown expert id {expert_id}")]
    UnknownExpert { expert_id: u32 },
    #[error("adapter rank {rank} exceeds min dimension of {name} ({rows}x{cols})")]
    RankTooLarge { name: String, rank: usize, rows: usize, cols: usize },
}

/// Representation vector plus the scalar logit derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerOutput {
    pub representation: Vec<f64>,
    pub logit: f64,
}

/// Conditioning slot content for one scorer state.
pub enum CondInput<'a> {
    /// State A: learned embedding row for an expert class index.
    Expert(usize),
    /// State B: featurized explanation text.
    Text(&'a FeatureVector),
}

/// Names of matrices that receive low-rank adapters.
pub(crate) fn adapted_matrices(cfg: &EncoderConfig) -> Vec<(String, usize, usize)> {
    let mut v = vec![("input_w".to_string(), cfg.hidden_width, cfg.feature_dim)];
    for l in 0..cfg.hidden_layers {
        v.push((format!("hidden{l}_w"), cfg.hidden_width, cfg.hidden_width));
    }
    v
}

pub(crate) fn push_mlp_layout(layout: &mut Layout, cfg: &EncoderConfig) {
    layout.register("input_w", cfg.hidden_width, cfg.feature_dim);
    layout.register("input_b", 1, cfg.hidden_width);
    for l in 0..cfg.hidden_layers {
        layout.register(&format!("hidden{l}_w"), cfg.hidden_width, cfg.hidden_width);
        layout.register(&format!("hidden{l}_b"), 1, cfg.hidden_width);
    }
}

pub(crate) fn push_adapter_layout(layout: &mut Layout, cfg: &EncoderConfig, rank: usize) {
    for (name, rows, cols) in adapted_matrices(cfg) {
        layout.register(&format!("{name}.lora_a"), rows, rank);
        layout.register(&format!("{name}.lora_b"), rank, cols);
    }
}

/// Scorer tensor layout: MLP trunk, representation head, logit head, expert
/// embedding, attribution (backward) head, optional adapters.
pub fn scorer_layout(cfg: &EncoderConfig) -> Layout {
    let mut layout = Layout::new();
    push_mlp_layout(&mut layout, cfg);
    layout.register("repr_w", cfg.repr_dim, cfg.hidden_width);
    layout.register("logit_w", 1, cfg.repr_dim);
    layout.register("logit_b", 1, 1);
    layout.register("expert_emb", cfg.n_experts(), cfg.feature_dim);
    layout.register("attribution_w", cfg.n_experts(), cfg.repr_dim);
    layout.register("attribution_b", 1, cfg.n_experts());
    if let Some(a) = &cfg.adapters {
        push_adapter_layout(&mut layout, cfg, a.rank);
    }
    layout
}

const INIT_RANGE: f64 = 0.05;

/// Uniform(-0.05, 0.05) everywhere except zero logit bias and zero adapter
/// A matrices; each tensor draws from its own labeled stream.
pub fn init_params(layout: Layout, seed: u64) -> ParamVec {
    let mut params = ParamVec::zeros(layout);
    for name in params.layout.names().to_vec() {
        if name == "logit_b" || name.ends_with(".lora_a") {
            continue;
        }
        let mut rng = seeded_rng(seed, &format!("init/{name}"));
        for v in params.tensor_mut(&name) {
            *v = rng.gen_range(-INIT_RANGE..INIT_RANGE);
        }
    }
    params
}

/// Validate adapter rank and freeze the wrapped base matrices.
pub fn apply_adapter_freeze(
    params: &mut ParamVec,
    cfg: &EncoderConfig,
) -> Result<(), EncoderError> {
    let Some(a) = &cfg.adapters else {
        return Ok(());
    };
    for (name, rows, cols) in adapted_matrices(cfg) {
        if a.rank > rows.min(cols) || a.rank == 0 {
            return Err(EncoderError::RankTooLarge { name, rank: a.rank, rows, cols });
        }
        params.set_trainable(&name, false);
    }
    Ok(())
}

/// The scorer: configuration plus its parameter arena.
#[derive(Debug, Clone)]
pub struct Scorer {
    pub cfg: EncoderConfig,
    pub params: ParamVec,
}

impl Scorer {
    pub fn new(cfg: EncoderConfig, seed: u64) -> Result<Scorer, EncoderError> {
        let mut params = init_params(scorer_layout(&cfg), seed);
        apply_adapter_freeze(&mut params, &cfg)?;
        Ok(Scorer { cfg, params })
    }

    pub fn featurize_text(&self, text: &str) -> FeatureVector {
        featurize(text, self.cfg.feature_dim, self.cfg.max_chars)
    }

    /// Combined story + question features (the shared half of both states).
    pub fn base_features(&self, story_text: &str, question_text: &str) -> FeatureVector {
        self.featurize_text(story_text).add(&self.featurize_text(question_text))
    }

    /// State A: (story, question, expert embedding).
    pub fn score_state_a(
        &self,
        story_text: &str,
        question_text: &str,
        expert_id: u32,
    ) -> Result<ScorerOutput, EncoderError> {
        let class = self.cfg.expert_class(expert_id)?;
        let base = self.base_features(story_text, question_text);
        let mut tape = Tape::new(&self.params);
        let (h, s) =
            scorer_forward(&mut tape, &self.cfg, &base, CondInput::Expert(class), None);
        Ok(ScorerOutput {
            representation: tape.value(h).to_vec(),
            logit: tape.scalar(s),
        })
    }

    /// State B: (story, question, featurized explanation).
    pub fn score_state_b(
        &self,
        story_text: &str,
        question_text: &str,
        explanation: &str,
    ) -> ScorerOutput {
        let base = self.base_features(story_text, question_text);
        let expl = self.featurize_text(explanation);
        let mut tape = Tape::new(&self.params);
        let (h, s) = scorer_forward(&mut tape, &self.cfg, &base, CondInput::Text(&expl), None);
        ScorerOutput {
            representation: tape.value(h).to_vec(),
            logit: tape.scalar(s),
        }
    }
}

/// Dropout mask over adapter inputs during training; None disables dropout.
pub struct AdapterDropout<'a> {
    pub rng: &'a mut rand_chacha::ChaCha8Rng,
}

/// Matvec through a possibly-adapted matrix: `W x + (alpha/r) A (B x)`.
///
/// The dense-input variant takes a node; the sparse variant a constant
/// feature vector. Adapter dropout, when given, zeroes the adapter branch
/// with probability p (inverted scaling), drawn once per call.
pub(crate) fn adapted_matvec_sparse(
    tape: &mut Tape<'_>,
    cfg: &EncoderConfig,
    name: &str,
    x: &FeatureVector,
    dropout: Option<&mut AdapterDropout<'_>>,
) -> NodeId {
    let base = tape.matvec_sparse(name, x);
    let Some(a) = &cfg.adapters else {
        return base;
    };
    let scale = adapter_branch_scale(a, dropout);
    if scale == 0.0 {
        return base;
    }
    let bx = tape.matvec_sparse(&format!("{name}.lora_b"), x);
    let abx = tape.matvec(&format!("{name}.lora_a"), bx);
    let delta = tape.affine(abx, scale, 0.0);
    tape.add(base, delta)
}

fn adapted_matvec(
    tape: &mut Tape<'_>,
    cfg: &EncoderConfig,
    name: &str,
    x: NodeId,
    dropout: Option<&mut AdapterDropout<'_>>,
) -> NodeId {
    let base = tape.matvec(name, x);
    let Some(a) = &cfg.adapters else {
        return base;
    };
    let scale = adapter_branch_scale(a, dropout);
    if scale == 0.0 {
        return base;
    }
    let bx = tape.matvec(&format!("{name}.lora_b"), x);
    let abx = tape.matvec(&format!("{name}.lora_a"), bx);
    let delta = tape.affine(abx, scale, 0.0);
    tape.add(base, delta)
}

fn adapter_branch_scale(a: &AdapterConfig, dropout: Option<&mut AdapterDropout<'_>>) -> f64 {
    let lora_scale = a.alpha / a.rank as f64;
    match dropout {
        Some(d) if a.dropout > 0.0 => {
            if d.rng.gen::<f64>() < a.dropout {
                0.0
            } else {
                lora_scale / (1.0 - a.dropout)
            }
        }
        _ => lora_scale,
    }
}

/// Shared tanh stack after the (conditioned) input projection.
pub fn hidden_stack(tape: &mut Tape<'_>, cfg: &EncoderConfig, pre0: NodeId) -> NodeId {
    let mut h = tape.tanh(pre0);
    for l in 0..cfg.hidden_layers {
        let w = adapted_matvec(tape, cfg, &format!("hidden{l}_w"), h, None);
        let b = tape.param(&format!("hidden{l}_b"));
        let pre = tape.add(w, b);
        h = tape.tanh(pre);
    }
    h
}

/// Build the scorer forward pass on a tape; returns (h, s) node ids.
pub fn scorer_forward(
    tape: &mut Tape<'_>,
    cfg: &EncoderConfig,
    base_features: &FeatureVector,
    cond: CondInput<'_>,
    mut dropout: Option<&mut AdapterDropout<'_>>,
) -> (NodeId, NodeId) {
    let pre0 = match cond {
        CondInput::Expert(class) => {
            assert!(class < cfg.n_experts(), "expert class out of range");
            let base_proj =
                adapted_matvec_sparse(tape, cfg, "input_w", base_features, dropout.as_deref_mut());
            let emb = tape.param_row("expert_emb", class);
            let emb_proj = adapted_matvec(tape, cfg, "input_w", emb, dropout.as_deref_mut());
            let sum = tape.add(base_proj, emb_proj);
            let b = tape.param("input_b");
            tape.add(sum, b)
        }
        CondInput::Text(expl) => {
            let x = base_features.add(expl);
            let proj = adapted_matvec_sparse(tape, cfg, "input_w", &x, dropout.as_deref_mut());
            let b = tape.param("input_b");
            tape.add(proj, b)
        }
    };
    let h_last = hidden_stack(tape, cfg, pre0);
    let h = tape.matvec("repr_w", h_last);
    let w = tape.param("logit_w");
    let dot = tape.dot(w, h);
    let b = tape.param("logit_b");
    let s = tape.add(dot, b);
    (h, s)
}

/// Rank of a matrix via Gaussian elimination (test utility for the adapter
/// low-rank property).
pub fn matrix_rank(mut m: Vec<Vec<f64>>, tol: f64) -> usize {
    let rows = m.len();
    if rows == 0 {
        return 0;
    }
    let cols = m[0].len();
    let mut rank = 0;
    let mut row = 0;
    for col in 0..cols {
        let pivot = (row..rows).max_by(|&a, &b| {
            m[a][col].abs().partial_cmp(&m[b][col].abs()).expect("finite")
        });
        let Some(p) = pivot else { break };
        if m[p][col].abs() <= tol {
            continue;
        }
        m.swap(row, p);
        for r in 0..rows {
            if r != row && m[r][col].abs() > 0.0 {
                let f = m[r][col] / m[row][col];
                for c in col..cols {
                    m[r][c] -= f * m[row][c];
                }
            }
        }
        rank += 1;
        row += 1;
        if row == rows {
            break;
        }
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_cfg() -> EncoderConfig {
        EncoderConfig {
            feature_dim: 8,
            hidden_width: 2,
            repr_dim: 2,
            hidden_layers: 1,
            max_chars: 4096,
            expert_ids: vec![1, 2, 3],
            adapters: None,
        }
    }

    /// All weights and biases 0.1 (including the logit bias), as used by the
    /// recorded forward-pass goldens.
    fn toy_scorer() -> Scorer {
        let cfg = toy_cfg();
        let mut params = ParamVec::zeros(scorer_layout(&cfg));
        for v in params.values.iter_mut() {
            *v = 0.1;
        }
        Scorer { cfg, params }
    }

    #[test]
    fn state_a_golden_forward() {
        let s = toy_scorer();
        let out = s.score_state_a("a", "b", 1).unwrap();
        assert_relative_eq!(out.logit, 0.10539163354937871, max_relative = 1e-12);
        for h in &out.representation {
            assert_relative_eq!(*h, 0.026958167746893521, max_relative = 1e-12);
        }
    }

    #[test]
    fn state_b_golden_forward() {
        let s = toy_scorer();
        let out = s.score_state_b("a", "b", "good");
        assert_relative_eq!(out.logit, 0.1060852292392752, max_relative = 1e-12);
        for h in &out.representation {
            assert_relative_eq!(*h, 0.030426146196375955, max_relative = 1e-12);
        }
    }

    #[test]
    fn scoring_is_pure() {
        let s = toy_scorer();
        let a = s.score_state_a("a", "b", 2).unwrap();
        let b = s.score_state_a("a", "b", 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_expert_is_rejected() {
        let s = toy_scorer();
        let err = s.score_state_a("a", "b", 9).unwrap_err();
        assert!(matches!(err, EncoderError::UnknownExpert { expert_id: 9 }));
    }

    #[test]
    fn zero_logit_head_means_zero_logit() {
        let mut s = toy_scorer();
        for v in s.params.tensor_mut("logit_w") {
            *v = 0.0;
        }
        s.params.tensor_mut("logit_b")[0] = 0.0;
        let out = s.score_state_b("some longer story text here", "why?", "an explanation");
        assert_eq!(out.logit, 0.0);
    }

    #[test]
    fn logit_equals_head_dot_representation() {
        let s = Scorer::new(EncoderConfig::default(), 42).unwrap();
        let out = s.score_state_b("a winding road through autumn", "is it fresh?", "vivid");
        let w = s.params.tensor("logit_w");
        let b = s.params.tensor("logit_b")[0];
        let dot: f64 = w.iter().zip(&out.representation).map(|(a, b)| a * b).sum();
        assert_relative_eq!(out.logit, dot + b, max_relative = 1e-12);
    }

    #[test]
    fn empty_explanation_equals_zero_conditioning() {
        // State B with empty text uses a zero conditioning vector, which is
        // just the base features through the network.
        let s = Scorer::new(EncoderConfig::default(), 42).unwrap();
        let out = s.score_state_b("story body text", "question?", "");
        let base = s.base_features("story body text", "question?");
        let mut tape = Tape::new(&s.params);
        let zero = FeatureVector::zeros(s.cfg.feature_dim);
        let (h, _) = scorer_forward(&mut tape, &s.cfg, &base, CondInput::Text(&zero), None);
        assert_eq!(out.representation, tape.value(h));
    }

    #[test]
    fn default_init_has_zero_logit_bias() {
        let s = Scorer::new(EncoderConfig::default(), 42).unwrap();
        assert_eq!(s.params.tensor("logit_b"), &[0.0]);
        let w = s.params.tensor("input_w");
        assert!(w.iter().all(|v| v.abs() < INIT_RANGE));
        assert!(w.iter().any(|v| v.abs() > 1e-4));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = Scorer::new(EncoderConfig::default(), 42).unwrap();
        let b = Scorer::new(EncoderConfig::default(), 42).unwrap();
        assert_eq!(a.params.values, b.params.values);
        let c = Scorer::new(EncoderConfig::default(), 43).unwrap();
        assert_ne!(a.params.values, c.params.values);
    }

    fn adapter_cfg(rank: usize) -> EncoderConfig {
        EncoderConfig {
            feature_dim: 8,
            hidden_width: 8,
            repr_dim: 4,
            hidden_layers: 1,
            adapters: Some(AdapterConfig { rank, alpha: 32.0, dropout: 0.0 }),
            ..toy_cfg()
        }
    }

    #[test]
    fn fresh_adapters_are_identity() {
        let base = Scorer::new(EncoderConfig { adapters: None, ..adapter_cfg(2) }, 42).unwrap();
        let adapted = Scorer::new(adapter_cfg(2), 42).unwrap();
        let a = base.score_state_b("story text for this", "question?", "because vivid");
        let b = adapted.score_state_b("story text for this", "question?", "because vivid");
        assert_relative_eq!(a.logit, b.logit, max_relative = 1e-12);
    }

    #[test]
    fn adapters_freeze_base_matrices() {
        let s = Scorer::new(adapter_cfg(2), 42).unwrap();
        let slot = s.params.layout.slot("input_w");
        assert!(!s.params.trainable[slot.offset]);
        let slot = s.params.layout.slot("input_w.lora_a");
        assert!(s.params.trainable[slot.offset]);
        let slot = s.params.layout.slot("logit_w");
        assert!(s.params.trainable[slot.offset]);
    }

    #[test]
    fn rank_too_large_is_rejected() {
        let err = Scorer::new(adapter_cfg(9), 42).unwrap_err();
        assert!(matches!(err, EncoderError::RankTooLarge { rank: 9, .. }));
    }

    #[test]
    fn adapter_delta_has_low_rank() {
        let mut s = Scorer::new(adapter_cfg(2), 42).unwrap();
        // Give A nonzero values so the delta is nontrivial.
        let mut rng = seeded_rng(5, "fill-lora-a");
        for v in s.params.tensor_mut("input_w.lora_a") {
            *v = rng.gen_range(-0.5..0.5);
        }
        let a = s.params.tensor("input_w.lora_a").to_vec();
        let b = s.params.tensor("input_w.lora_b").to_vec();
        let (rows, rank, cols) = (8, 2, 8);
        let scale = 32.0 / rank as f64;
        let mut delta = vec![vec![0.0; cols]; rows];
        for i in 0..rows {
            for j in 0..cols {
                for t in 0..rank {
                    delta[i][j] += scale * a[i * rank + t] * b[t * cols + j];
                }
            }
        }
        assert!(matrix_rank(delta, 1e-9) <= rank);
    }

    #[test]
    fn matrix_rank_basics() {
        assert_eq!(matrix_rank(vec![vec![1.0, 2.0], vec![2.0, 4.0]], 1e-9), 1);
        assert_eq!(matrix_rank(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1e-9), 2);
        assert_eq!(matrix_rank(vec![vec![0.0, 0.0], vec![0.0, 0.0]], 1e-9), 0);
    }

    #[test]
    fn gradient_check_full_scorer() {
        // FD over every parameter of a small scorer on the state-A pathway
        // composed with a quadratic readout of (h, s).
        let cfg = EncoderConfig {
            feature_dim: 16,
            hidden_width: 3,
            repr_dim: 2,
            hidden_layers: 2,
            ..toy_cfg()
        };
        let scorer = Scorer::new(cfg.clone(), 9).unwrap();
        let base = scorer.base_features("a short tale of tin and tar", "is it new?");
        let loss_of = |params: &ParamVec| -> f64 {
            let mut tape = Tape::new(params);
            let (h, s) = scorer_forward(&mut tape, &cfg, &base, CondInput::Expert(1), None);
            let hs = tape.dot(h, h);
            let ss = tape.dot(s, s);
            let sum = tape.add(hs, ss);
            tape.scalar(sum)
        };
        let mut params = scorer.params.clone();
        let analytic = {
            let mut tape = Tape::new(&params);
            let (h, s) = scorer_forward(&mut tape, &cfg, &base, CondInput::Expert(1), None);
            let hs = tape.dot(h, h);
            let ss = tape.dot(s, s);
            let sum = tape.add(hs, ss);
            let mut g = vec![0.0; params.len()];
            tape.backward(sum, &mut g);
            g
        };
        let eps = 1e-4;
        for i in 0..params.len() {
            let orig = params.values[i];
            params.values[i] = orig + eps;
            let hi = loss_of(&params);
            params.values[i] = orig - eps;
            let lo = loss_of(&params);
            params.values[i] = orig;
            let fd = (hi - lo) / (2.0 * eps);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
            assert!(
                (analytic[i] - fd).abs() / denom < 1e-3,
                "param {i}: analytic {} vs fd {fd}",
                analytic[i]
            );
        }
    }
}
