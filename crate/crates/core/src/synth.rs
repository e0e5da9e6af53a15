//! Synthetic multi-annotator test bed with controllable ground truth.
//!
//! Every story carries a latent trait vector that leaks into its text through
//! sign-specific descriptor words; per-dimension evidence weights map the
//! latents to a verdict log-odds, and each annotator adds a personal bias
//! before the verdict is sampled. Explanations mix three channels:
//!
//! - private style words, the authorship signal for expert attribution;
//! - a shared direction vocabulary arguing one verdict side, the evidence
//!   signal a belief-shift score can pick up (one global feature axis, the
//!   same for every dimension, so it also survives held-out dimensions);
//! - recap intensity scaled by how surprising the realized verdict was under
//!   the annotator's own prior, so off-prior verdicts come with louder
//!   evidence and larger expected belief shifts.
//!
//! The explanation direction matches the verdict with probability
//! sigmoid(explanation_evidence), which makes the true log-odds increment of
//! an explanation exactly `direction * explanation_evidence`; that quantity
//! is recorded per example and drives the weight-of-evidence check.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    AnnotatedExample, Annotation, Corpus, Dimension, Story, Verdict, EXPERT_IDS,
};
use crate::encoder::EncoderConfig;
use crate::icm::{train_icm, ICMConfig, IcmError, IcmModel};
use crate::metrics::{pearson, Flagged};
use crate::rng::seeded_rng;

/// Latent axes covered by the descriptor lexicons.
pub const DESCRIPTOR_LINES: usize = 8;

const STYLE_POOLS: [&str; 3] = [
    include_str!("../data/lexicons/style_annotator1.txt"),
    include_str!("../data/lexicons/style_annotator2.txt"),
    include_str!("../data/lexicons/style_annotator3.txt"),
];
const NOISE_POOL: &str = include_str!("../data/lexicons/style_noise.txt");
const DESCRIPTORS_POS: &str = include_str!("../data/lexicons/descriptors_pos.txt");
const DESCRIPTORS_NEG: &str = include_str!("../data/lexicons/descriptors_neg.txt");
const DIRECTION_POS: &str = include_str!("../data/lexicons/direction_pos.txt");
const DIRECTION_NEG: &str = include_str!("../data/lexicons/direction_neg.txt");

const PROTAGONISTS: [&str; 8] = [
    "archivist",
    "beekeeper",
    "surveyor",
    "printer",
    "organist",
    "falconer",
    "glassblower",
    "milliner",
];
const SETTINGS: [&str; 8] = [
    "canalside",
    "hillside quarter",
    "stationhouse",
    "observatory",
    "millpond",
    "courtyard",
    "boulevard",
    "esplanade",
];
const YES_PHRASES: [&str; 3] = [
    "decidedly earns approval with room to spare",
    "a convincing success that repays rereading",
    "genuine accomplishment carried from start to finish",
];
const NO_PHRASES: [&str; 3] = [
    "withholding endorsement after repeated doubtful passages",
    "a flawed outcome that squanders its premise",
    "persistent shortfalls undermine the whole attempt",
];

/// Explanation recap length: CUE_BASE + round(CUE_EXTRA * (1 - p(verdict))).
const CUE_BASE: usize = 3;
const CUE_EXTRA: f64 = 6.0;
const STYLE_WORDS_PER_EXPLANATION: usize = 3;
/// Descriptor repetitions in story text per unit of |latent|.
const LEAK_REPEAT_SCALE: f64 = 3.0;
const MAX_LEAK_REPEATS: usize = 6;

fn pool_lines(raw: &'static str) -> Vec<&'static str> {
    raw.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

fn style_pool(index: usize) -> Vec<&'static str> {
    pool_lines(STYLE_POOLS[index % STYLE_POOLS.len()])
}

fn noise_pool() -> Vec<&'static str> {
    pool_lines(NOISE_POOL)
}

/// Words signalling that latent axis `line` is positive resp. negative.
fn descriptor_pool(line: usize, positive: bool) -> Vec<&'static str> {
    let raw = if positive { DESCRIPTORS_POS } else { DESCRIPTORS_NEG };
    pool_lines(raw)[line].split_whitespace().collect()
}

/// Evidence vocabulary arguing for resp. against a yes verdict; shared
/// across dimensions and annotators.
fn direction_pool(positive: bool) -> Vec<&'static str> {
    pool_lines(if positive { DIRECTION_POS } else { DIRECTION_NEG })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {field}: {message}")]
    SpecInvalid { field: String, message: String },
    #[error("annotator id {id} already present in the corpus")]
    IdCollision { id: u32 },
    #[error("control variate has zero variance")]
    DegenerateControl,
    #[error(transparent)]
    Icm(#[from] IcmError),
    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed ground truth line {line}: {message}")]
    MalformedGroundTruth { line: usize, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> SynthError {
    SynthError::SpecInvalid { field: field.to_string(), message: message.into() }
}

/// One simulated annotator: verdict bias in log-odds plus a private style
/// vocabulary. Empty `style_words` selects a builtin pool (by position among
/// non-noise annotators, or the filler pool for noise annotators).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotatorProfile {
    pub annotator_id: u32,
    /// Constant verdict bias, in log-odds.
    pub bias: f64,
    /// Optional linear bias in the story latents (length <= latent_dim).
    pub bias_slope: Vec<f64>,
    pub style_words: Vec<String>,
    /// Noise annotators answer uniformly at random and explain with filler.
    pub noise: bool,
}

impl Default for AnnotatorProfile {
    fn default() -> Self {
        Self {
            annotator_id: 0,
            bias: 0.0,
            bias_slope: Vec::new(),
            style_words: Vec::new(),
            noise: false,
        }
    }
}

/// The three canonical experts: lenient, neutral, strict.
pub fn default_profiles() -> Vec<AnnotatorProfile> {
    [(1u32, 1.5f64), (2, 0.0), (3, -1.5)]
        .into_iter()
        .map(|(annotator_id, bias)| AnnotatorProfile {
            annotator_id,
            bias,
            ..AnnotatorProfile::default()
        })
        .collect()
}

pub fn noise_profile(annotator_id: u32) -> AnnotatorProfile {
    AnnotatorProfile { annotator_id, noise: true, ..AnnotatorProfile::default() }
}

/// Full recipe for one synthetic corpus; the seed determines every byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_stories: usize,
    pub dimensions: Vec<Dimension>,
    pub annotators: Vec<AnnotatorProfile>,
    /// Latent trait axes per story (bounded by descriptor lexicon coverage).
    pub latent_dim: usize,
    /// Scale of the per-dimension evidence weights.
    pub evidence_scale: f64,
    /// Verdict sampling temperature; p(yes) = sigmoid((f + b) / temperature).
    pub temperature: f64,
    /// How strongly story text repeats descriptor words per unit |latent|.
    pub leak_strength: f64,
    /// Reliability of the explanation direction, in log-odds: the direction
    /// matches the verdict with probability sigmoid(explanation_evidence).
    pub explanation_evidence: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_stories: 48,
            dimensions: Dimension::ALL.to_vec(),
            annotators: default_profiles(),
            latent_dim: 6,
            evidence_scale: 2.0,
            temperature: 1.0,
            leak_strength: 1.0,
            explanation_evidence: 2.0,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_stories == 0 || self.n_stories > 9999 {
            return Err(invalid(
                "n_stories",
                format!("must be in 1..=9999, got {}", self.n_stories),
            ));
        }
        if self.dimensions.is_empty() {
            return Err(invalid("dimensions", "at least one dimension required"));
        }
        let mut dims = self.dimensions.clone();
        dims.sort_unstable();
        dims.dedup();
        if dims.len() != self.dimensions.len() {
            return Err(invalid("dimensions", "duplicate dimension"));
        }
        if self.latent_dim == 0 || self.latent_dim > DESCRIPTOR_LINES {
            return Err(invalid(
                "latent_dim",
                format!(
                    "must be in 1..={DESCRIPTOR_LINES} (descriptor lexicon coverage), got {}",
                    self.latent_dim
                ),
            ));
        }
        if !(self.evidence_scale.is_finite() && self.evidence_scale >= 0.0) {
            return Err(invalid("evidence_scale", "must be finite and >= 0"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(invalid("temperature", "must be finite and > 0"));
        }
        if !(self.leak_strength.is_finite() && self.leak_strength >= 0.0) {
            return Err(invalid("leak_strength", "must be finite and >= 0"));
        }
        if !(self.explanation_evidence.is_finite() && self.explanation_evidence >= 0.0) {
            return Err(invalid("explanation_evidence", "must be finite and >= 0"));
        }
        if self.annotators.is_empty() {
            return Err(invalid("annotators", "at least one annotator required"));
        }
        let mut ids = BTreeSet::new();
        for prof in &self.annotators {
            if !ids.insert(prof.annotator_id) {
                return Err(invalid(
                    "annotators",
                    format!("duplicate annotator_id {}", prof.annotator_id),
                ));
            }
            if prof.noise && EXPERT_IDS.contains(&prof.annotator_id) {
                return Err(invalid(
                    "annotators",
                    format!(
                        "noise annotator id {} collides with the reserved expert ids {:?}",
                        prof.annotator_id, EXPERT_IDS
                    ),
                ));
            }
            if !prof.bias.is_finite() {
                return Err(invalid(
                    "annotators",
                    format!("annotator {} has non-finite bias", prof.annotator_id),
                ));
            }
            if prof.bias_slope.len() > self.latent_dim {
                return Err(invalid(
                    "annotators",
                    format!(
                        "annotator {} bias_slope has {} entries but latent_dim is {}",
                        prof.annotator_id,
                        prof.bias_slope.len(),
                        self.latent_dim
                    ),
                ));
            }
            if prof.bias_slope.iter().any(|w| !w.is_finite()) {
                return Err(invalid(
                    "annotators",
                    format!("annotator {} has non-finite bias_slope", prof.annotator_id),
                ));
            }
        }
        let non_noise = self.annotators.iter().filter(|p| !p.noise).count();
        if non_noise < 2 {
            return Err(invalid(
                "annotators",
                format!("need at least 2 non-noise annotators, got {non_noise}"),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(raw: &str) -> Result<SyntheticSpec, SynthError> {
        let spec: SyntheticSpec =
            toml::from_str(raw).map_err(|e| invalid("spec", e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("spec serializes")
    }
}

/// Per-example generator state, written alongside the corpus so checks can
/// compare model outputs against the quantities that produced the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub story_id: String,
    pub dimension: Dimension,
    pub expert_id: u32,
    /// Dimension evidence f(x) from the story latents.
    pub evidence: f64,
    /// Annotator bias b_a(x).
    pub bias: f64,
    /// (f + b) / temperature; 0 for noise annotators.
    pub prior_log_odds: f64,
    pub p_yes: f64,
    pub verdict: Verdict,
    /// Direction the explanation argues: +1 toward yes, -1 toward no.
    pub expl_direction: f64,
    /// True log-odds increment the explanation carries about the verdict;
    /// 0 when the explanation is uninformative.
    pub expl_increment: f64,
}

pub fn save_ground_truth(
    records: &[GroundTruthRecord],
    path: impl AsRef<Path>,
) -> Result<(), SynthError> {
    let path = path.as_ref();
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec).expect("ground truth serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)
        .map_err(|source| SynthError::Io { path: path.display().to_string(), source })
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthRecord>, SynthError> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path)
        .map_err(|source| SynthError::Io { path: path.display().to_string(), source })?;
    load_ground_truth_str(&raw)
}

pub fn load_ground_truth_str(raw: &str) -> Result<Vec<GroundTruthRecord>, SynthError> {
    let mut records = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: GroundTruthRecord = serde_json::from_str(line).map_err(|e| {
            SynthError::MalformedGroundTruth { line: lineno, message: e.to_string() }
        })?;
        let bad = |message: &str| SynthError::MalformedGroundTruth {
            line: lineno,
            message: message.to_string(),
        };
        if !(rec.evidence.is_finite()
            && rec.bias.is_finite()
            && rec.prior_log_odds.is_finite()
            && rec.expl_increment.is_finite())
        {
            return Err(bad("non-finite field"));
        }
        if !(0.0..=1.0).contains(&rec.p_yes) {
            return Err(bad("p_yes outside [0, 1]"));
        }
        if rec.expl_direction.abs() != 1.0 {
            return Err(bad("expl_direction must be +1 or -1"));
        }
        records.push(rec);
    }
    Ok(records)
}

/// A generated corpus plus the hidden quantities behind every example.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub ground_truth: Vec<GroundTruthRecord>,
}

fn story_id(index: usize) -> String {
    format!("story-{index:04}")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Resolve each profile's style vocabulary; builtin pools rotate over the
/// non-noise annotators in listed order.
fn resolved_styles(spec: &SyntheticSpec) -> Vec<Vec<&str>> {
    let mut non_noise_seen = 0usize;
    spec.annotators
        .iter()
        .map(|prof| {
            if !prof.style_words.is_empty() {
                prof.style_words.iter().map(String::as_str).collect()
            } else if prof.noise {
                noise_pool()
            } else {
                let pool = style_pool(non_noise_seen);
                non_noise_seen += 1;
                pool
            }
        })
        .collect()
}

/// Babble vocabulary for noise annotators: filler plus every builtin style
/// pool, so babble overlaps expert voices without copying any single one.
fn babble_pool() -> Vec<&'static str> {
    let mut pool = noise_pool();
    for i in 0..STYLE_POOLS.len() {
        pool.extend(style_pool(i));
    }
    pool
}

fn pick<'a>(pool: &[&'a str], rng: &mut ChaCha8Rng) -> &'a str {
    pool[rng.gen_range(0..pool.len())]
}

fn story_text(spec: &SyntheticSpec, index: usize, latents: &[f64], rng: &mut ChaCha8Rng) -> String {
    let prot = PROTAGONISTS[index % PROTAGONISTS.len()];
    let setting = SETTINGS[(index / PROTAGONISTS.len()) % SETTINGS.len()];
    let mut text = format!("The {prot} of the {setting} kept a yearlong journal.");
    for (line, &x) in latents.iter().enumerate() {
        let reps = ((x.abs() * LEAK_REPEAT_SCALE * spec.leak_strength).round() as usize)
            .min(MAX_LEAK_REPEATS);
        if reps == 0 {
            continue;
        }
        let pool = descriptor_pool(line, x >= 0.0);
        let words: Vec<&str> = (0..reps).map(|_| pick(&pool, rng)).collect();
        text.push_str(&format!(" Its pages feel {}.", words.join(" and ")));
    }
    text.push_str(&format!(" Entry {index} closes the season."));
    text
}

/// Evidence recap arguing direction `e`, drawn from the shared direction
/// vocabulary; length carries the intensity signal.
fn recap_words(e: f64, cue_repeats: usize, rng: &mut ChaCha8Rng) -> Vec<&'static str> {
    let pool = direction_pool(e > 0.0);
    (0..cue_repeats).map(|_| pick(&pool, rng)).collect()
}

fn assemble_explanation(
    style: [&str; STYLE_WORDS_PER_EXPLANATION],
    recap: &[&str],
    e: f64,
    rng: &mut ChaCha8Rng,
) -> String {
    let phrases = if e > 0.0 { &YES_PHRASES } else { &NO_PHRASES };
    let phrase = phrases[rng.gen_range(0..phrases.len())];
    format!(
        "{} and {}, {}; {}, {}.",
        style[0],
        style[1],
        style[2],
        recap.join(" "),
        phrase
    )
}

fn pick_style<'a>(pool: &[&'a str], rng: &mut ChaCha8Rng) -> [&'a str; STYLE_WORDS_PER_EXPLANATION] {
    std::array::from_fn(|_| pick(pool, rng))
}

/// Uninformative but fluent-looking annotation: uniform verdict, babble
/// words, and an evidence recap arguing a random direction. The random
/// recap reuses the shared direction vocabulary, so noise annotations
/// pollute exactly the channel a belief-shift model relies on.
fn noise_annotation(
    babble: &[&str],
    rng_verdict: &mut ChaCha8Rng,
    rng_text: &mut ChaCha8Rng,
) -> (Verdict, String, f64) {
    let verdict = Verdict::from_bool(rng_verdict.gen_bool(0.5));
    let e = if rng_text.gen_bool(0.5) { 1.0 } else { -1.0 };
    let cue_repeats = CUE_BASE + rng_text.gen_range(0..=CUE_EXTRA as usize);
    let recap = recap_words(e, cue_repeats, rng_text);
    let style = pick_style(babble, rng_text);
    let text = assemble_explanation(style, &recap, e, rng_text);
    (verdict, text, e)
}

/// Generate a corpus from the spec; the spec seed determines every byte.
pub fn generate_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus, SynthError> {
    spec.validate()?;
    let mut rng_lat = seeded_rng(spec.seed, "synth/latents");
    let latents: Vec<Vec<f64>> = (0..spec.n_stories)
        .map(|_| (0..spec.latent_dim).map(|_| rng_lat.gen_range(-1.0..1.0)).collect())
        .collect();
    // Evidence weights cover all canonical dimensions so that restricting
    // spec.dimensions never changes the weights of the ones kept.
    let mut rng_w = seeded_rng(spec.seed, "synth/evidence");
    let weights: BTreeMap<Dimension, Vec<f64>> = Dimension::ALL
        .iter()
        .map(|&d| (d, (0..spec.latent_dim).map(|_| rng_w.gen_range(-1.0..1.0)).collect()))
        .collect();

    let mut rng_story = seeded_rng(spec.seed, "synth/stories");
    let mut stories = BTreeMap::new();
    for (i, x) in latents.iter().enumerate() {
        let id = story_id(i);
        let text = story_text(spec, i, x, &mut rng_story);
        stories.insert(id.clone(), Story { story_id: id, text });
    }

    let styles = resolved_styles(spec);
    let babble = babble_pool();
    let mut rng_verdict = seeded_rng(spec.seed, "synth/verdicts");
    let mut rng_text = seeded_rng(spec.seed, "synth/explanations");
    let mut examples = Vec::new();
    let mut ground_truth = Vec::new();
    for (i, x) in latents.iter().enumerate() {
        for &dim in &spec.dimensions {
            let w = &weights[&dim];
            let evidence = spec.evidence_scale * dot(w, x);
            for (a, prof) in spec.annotators.iter().enumerate() {
                let (verdict, explanation, gt) = if prof.noise {
                    let (verdict, text, e) =
                        noise_annotation(&babble, &mut rng_verdict, &mut rng_text);
                    let gt = GroundTruthRecord {
                        story_id: story_id(i),
                        dimension: dim,
                        expert_id: prof.annotator_id,
                        evidence,
                        bias: 0.0,
                        prior_log_odds: 0.0,
                        p_yes: 0.5,
                        verdict,
                        expl_direction: e,
                        expl_increment: 0.0,
                    };
                    (verdict, text, gt)
                } else {
                    let bias = prof.bias + dot(&prof.bias_slope, &x[..prof.bias_slope.len()]);
                    let prior_log_odds = (evidence + bias) / spec.temperature;
                    let p_yes = sigmoid(prior_log_odds);
                    let verdict = Verdict::from_bool(rng_verdict.gen_bool(p_yes));
                    let realized = if verdict == Verdict::Yes { 1.0 } else { -1.0 };
                    let p_realized = sigmoid(realized * prior_log_odds);
                    let keep = rng_text.gen_bool(sigmoid(spec.explanation_evidence));
                    let e = if keep { realized } else { -realized };
                    let cue_repeats =
                        CUE_BASE + (CUE_EXTRA * (1.0 - p_realized)).round() as usize;
                    let recap = recap_words(e, cue_repeats, &mut rng_text);
                    let style = pick_style(&styles[a], &mut rng_text);
                    let text = assemble_explanation(style, &recap, e, &mut rng_text);
                    let gt = GroundTruthRecord {
                        story_id: story_id(i),
                        dimension: dim,
                        expert_id: prof.annotator_id,
                        evidence,
                        bias,
                        prior_log_odds,
                        p_yes,
                        verdict,
                        expl_direction: e,
                        expl_increment: e * spec.explanation_evidence,
                    };
                    (verdict, text, gt)
                };
                examples.push(AnnotatedExample {
                    story_ref: story_id(i),
                    dimension: dim,
                    annotation: Annotation {
                        expert_id: prof.annotator_id,
                        explanation,
                        verdict,
                    },
                });
                ground_truth.push(gt);
            }
        }
    }
    let questions = spec
        .dimensions
        .iter()
        .map(|&d| (d, d.canonical_question().to_string()))
        .collect();
    Ok(SyntheticCorpus {
        corpus: Corpus { stories, examples, questions, metadata: BTreeMap::new() },
        ground_truth,
    })
}

/// Add one noise annotator to an existing corpus: one uniform verdict plus
/// babble explanation per (story, dimension) pair, appended after the
/// original examples so existing indices stay valid.
pub fn inject_noise_annotator(
    corpus: &Corpus,
    profile: &AnnotatorProfile,
    seed: u64,
) -> Result<Corpus, SynthError> {
    if !profile.noise {
        return Err(invalid("noise", "injected annotator must set noise = true"));
    }
    if EXPERT_IDS.contains(&profile.annotator_id) {
        return Err(invalid(
            "annotator_id",
            format!(
                "noise annotator id {} collides with the reserved expert ids {:?}",
                profile.annotator_id, EXPERT_IDS
            ),
        ));
    }
    if corpus.expert_ids().contains(&profile.annotator_id) {
        return Err(SynthError::IdCollision { id: profile.annotator_id });
    }
    let pairs: BTreeSet<(String, Dimension)> = corpus
        .examples
        .iter()
        .map(|ex| (ex.story_ref.clone(), ex.dimension))
        .collect();
    let babble: Vec<&str> = if profile.style_words.is_empty() {
        babble_pool()
    } else {
        let mut pool: Vec<&str> = profile.style_words.iter().map(String::as_str).collect();
        pool.extend(babble_pool());
        pool
    };
    let mut rng_verdict = seeded_rng(seed, "synth/noise/verdicts");
    let mut rng_text = seeded_rng(seed, "synth/noise/text");
    let mut out = corpus.clone();
    for (story_ref, dimension) in pairs {
        let (verdict, explanation, _) =
            noise_annotation(&babble, &mut rng_verdict, &mut rng_text);
        out.examples.push(AnnotatedExample {
            story_ref,
            dimension,
            annotation: Annotation {
                expert_id: profile.annotator_id,
                explanation,
                verdict,
            },
        });
    }
    Ok(out)
}

/// Variance accounting for a control variate: how much of Var(Z) the best
/// linear adjustment by C removes. In-sample, ratio = 1 - rho^2 exactly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlVariateReport {
    pub rho: f64,
    pub alpha_star: f64,
    pub var_z: f64,
    pub var_adjusted: f64,
    pub ratio: f64,
}

pub fn control_variate_check(z: &[f64], c: &[f64]) -> Result<ControlVariateReport, SynthError> {
    assert_eq!(z.len(), c.len(), "control variate series must have equal length");
    assert!(z.len() >= 3, "control variate check needs at least 3 points");
    let n = z.len() as f64;
    let mean_z = z.iter().sum::<f64>() / n;
    let mean_c = c.iter().sum::<f64>() / n;
    let var_z = z.iter().map(|x| (x - mean_z) * (x - mean_z)).sum::<f64>() / (n - 1.0);
    let var_c = c.iter().map(|x| (x - mean_c) * (x - mean_c)).sum::<f64>() / (n - 1.0);
    if var_c == 0.0 {
        return Err(SynthError::DegenerateControl);
    }
    let cov = z
        .iter()
        .zip(c)
        .map(|(x, y)| (x - mean_z) * (y - mean_c))
        .sum::<f64>()
        / (n - 1.0);
    let alpha_star = cov / var_c;
    let rho = if var_z == 0.0 { 0.0 } else { cov / (var_z * var_c).sqrt() };
    let var_adjusted = z
        .iter()
        .zip(c)
        .map(|(x, y)| {
            let adj = (x - mean_z) - alpha_star * (y - mean_c);
            adj * adj
        })
        .sum::<f64>()
        / (n - 1.0);
    let ratio = if var_z == 0.0 { f64::NAN } else { var_adjusted / var_z };
    Ok(ControlVariateReport { rho, alpha_star, var_z, var_adjusted, ratio })
}

/// Outcome of the weight-of-evidence probe: correlation between trained
/// curiosity scores and the true per-explanation log-odds increments.
///
/// The sign of the score axis is a free convention (the scalar readout gets
/// no gradient from the belief-shift losses), so the report carries both the
/// raw correlation and one oriented by the sign that makes curiosity scores
/// agree with the realized verdicts on the training examples.
#[derive(Debug, Clone, PartialEq)]
pub struct WoeReport {
    pub n: usize,
    pub pearson_raw: Flagged,
    pub orientation: f64,
    pub pearson_oriented: f64,
}

pub fn weight_of_evidence_check(
    spec: &SyntheticSpec,
    enc: &EncoderConfig,
    icm_cfg: &ICMConfig,
    train_seed: u64,
) -> Result<WoeReport, SynthError> {
    let synth = generate_corpus(spec)?;
    let corpus = &synth.corpus;
    let mut enc = enc.clone();
    enc.expert_ids = corpus.expert_ids();
    let mut model = IcmModel::new(enc, icm_cfg.clone(), train_seed)?;
    let all: Vec<usize> = (0..corpus.examples.len()).collect();
    train_icm(&mut model, corpus, &all)?;
    let records = model.score_corpus(corpus, &all)?;
    let scores: Vec<f64> = records.iter().map(|r| r.curiosity_score).collect();
    let increments: Vec<f64> = synth.ground_truth.iter().map(|g| g.expl_increment).collect();
    let pearson_raw = pearson(&scores, &increments);
    let verdicts: Vec<f64> =
        corpus.examples.iter().map(|ex| ex.annotation.verdict.as_f64()).collect();
    let agreement = pearson(&scores, &verdicts);
    let orientation = if agreement.value < 0.0 { -1.0 } else { 1.0 };
    Ok(WoeReport {
        n: all.len(),
        pearson_oriented: orientation * pearson_raw.value,
        pearson_raw,
        orientation,
    })
}
