//! Run configuration: one TOML document fully determines a pipeline run.
//!
//! The canonical JSON rendering of a config is hashed with SHA-256 and that
//! hash is embedded in every artifact the run writes, so outputs from
//! different configurations cannot be silently mixed. All randomness flows
//! from the `seeds` list; nothing reads the clock or OS entropy.

use crate::data::{load_corpus, Corpus, DataError, Dimension};
use crate::encoder::EncoderConfig;
use crate::icm::ICMConfig;
use crate::judge::{InferMode, JudgeConfig, JudgeMode};
use crate::optim::OptimizerConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("config parse: {message}")]
    Parse { message: String },
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {key} conflicts with an earlier corpus file")]
    CorpusOverlap { path: String, key: String },
}

pub(crate) fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), message: message.into() }
}

/// How the corpus is split for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SplitSpec {
    /// Story-grouped, verdict-stratified k-fold cross-validation.
    Kfold { k: usize, seed: u64 },
    /// Hold out every example of one dimension as the test set.
    Ood { heldout: Dimension },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Kfold { k: 5, seed: 42 }
    }
}

/// Full description of a run. `[optimizer]` is the single training schedule;
/// it is copied into the ICM and judge heads so the baseline always trains
/// under hyperparameters matched to the ICM judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Corpus JSONL paths, merged in listed order.
    pub corpus: Vec<PathBuf>,
    /// Judge variant used by single-method commands; comparison commands
    /// always run both variants.
    pub mode: JudgeMode,
    pub icm: ICMConfig,
    pub optimizer: OptimizerConfig,
    pub encoder: EncoderConfig,
    pub judge: JudgeConfig,
    pub split: SplitSpec,
    pub infer_mode: InferMode,
    pub output_dir: PathBuf,
    /// Master seeds; the whole protocol repeats once per seed.
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: Vec::new(),
            mode: JudgeMode::Icm,
            icm: ICMConfig::default(),
            optimizer: OptimizerConfig::default(),
            encoder: EncoderConfig::default(),
            judge: JudgeConfig::default(),
            split: SplitSpec::default(),
            infer_mode: InferMode::ExplanationAvailable,
            output_dir: PathBuf::from("runs/default"),
            seeds: vec![42],
        }
    }
}

impl RunConfig {
    /// Copy the shared schedule into both heads and align the judge mode.
    pub fn normalized(mut self) -> Self {
        self.icm.optim = self.optimizer.clone();
        self.judge.optim = self.optimizer.clone();
        self.judge.mode = self.mode;
        self
    }

    /// Cross-field checks, normalization, and validation; shared by file
    /// parsing and programmatic construction (e.g. after CLI overrides).
    pub fn finish(self) -> Result<RunConfig, ConfigError> {
        let default_optim = OptimizerConfig::default();
        if self.icm.optim != default_optim && self.icm.optim != self.optimizer {
            return Err(invalid(
                "icm.optim",
                "the training schedule is set once in [optimizer]; remove the [icm.optim] override",
            ));
        }
        if self.judge.optim != default_optim && self.judge.optim != self.optimizer {
            return Err(invalid(
                "judge.optim",
                "the training schedule is set once in [optimizer]; remove the [judge.optim] override",
            ));
        }
        if self.judge.mode != JudgeMode::default() && self.judge.mode != self.mode {
            return Err(invalid(
                "judge.mode",
                "the judge variant is set once in top-level `mode`; remove the [judge] override",
            ));
        }
        let cfg = self.normalized();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Field-level validation. Assumes a normalized config.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.corpus.is_empty() {
            return Err(invalid("corpus", "at least one corpus path is required"));
        }
        if self.corpus.iter().any(|p| p.as_os_str().is_empty()) {
            return Err(invalid("corpus", "corpus paths must be nonempty"));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(invalid("output_dir", "output directory must be nonempty"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(invalid("seeds", "seeds must be distinct"));
        }
        if let SplitSpec::Kfold { k, .. } = self.split {
            if k < 2 {
                return Err(invalid("split.k", format!("k-fold needs k >= 2, got {k}")));
            }
        }
        let enc = &self.encoder;
        if enc.feature_dim == 0 || enc.hidden_width == 0 || enc.repr_dim == 0 {
            return Err(invalid("encoder", "feature_dim, hidden_width, and repr_dim must be >= 1"));
        }
        if enc.max_chars == 0 {
            return Err(invalid("encoder.max_chars", "must be >= 1"));
        }
        if enc.expert_ids.is_empty() {
            return Err(invalid("encoder.expert_ids", "at least one annotator id is required"));
        }
        let ids: BTreeSet<u32> = enc.expert_ids.iter().copied().collect();
        if ids.len() != enc.expert_ids.len() {
            return Err(invalid("encoder.expert_ids", "annotator ids must be distinct"));
        }
        if let Some(a) = &enc.adapters {
            if a.rank == 0 {
                return Err(invalid("encoder.adapters.rank", "must be >= 1"));
            }
            if !a.alpha.is_finite() || a.alpha <= 0.0 {
                return Err(invalid("encoder.adapters.alpha", "must be a positive real"));
            }
            if !a.dropout.is_finite() || !(0.0..1.0).contains(&a.dropout) {
                return Err(invalid("encoder.adapters.dropout", "must lie in [0, 1)"));
            }
        }
        let o = &self.optimizer;
        if !o.base_lr.is_finite() || o.base_lr <= 0.0 {
            return Err(invalid("optimizer.base_lr", "must be a positive real"));
        }
        if !o.warmup_ratio.is_finite() || !(0.0..=1.0).contains(&o.warmup_ratio) {
            return Err(invalid("optimizer.warmup_ratio", "must lie in [0, 1]"));
        }
        if !o.weight_decay.is_finite() || o.weight_decay < 0.0 {
            return Err(invalid("optimizer.weight_decay", "must be a nonnegative real"));
        }
        if !o.max_grad_norm.is_finite() || o.max_grad_norm <= 0.0 {
            return Err(invalid("optimizer.max_grad_norm", "must be a positive real"));
        }
        if o.batch_size == 0 || o.grad_accum_steps == 0 {
            return Err(invalid("optimizer", "batch_size and grad_accum_steps must be >= 1"));
        }
        if o.epochs == 0 {
            return Err(invalid("optimizer.epochs", "must be >= 1"));
        }
        self.icm.validate().map_err(|message| invalid("icm", message))?;
        if self.icm.optim != self.optimizer || self.judge.optim != self.optimizer {
            return Err(invalid("optimizer", "config is not normalized; call finish()"));
        }
        if self.judge.mode != self.mode {
            return Err(invalid("mode", "config is not normalized; call finish()"));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<RunConfig, ConfigError> {
        let parsed: RunConfig =
            toml::from_str(s).map_err(|e| ConfigError::Parse { message: e.to_string() })?;
        parsed.finish()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("RunConfig serializes to TOML")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        RunConfig::from_toml_str(&content)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ConfigError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string())
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })
    }

    fn hash_stripped(&self, strip: &[&str]) -> String {
        let mut value = serde_json::to_value(self).expect("RunConfig serializes to JSON");
        let map = value.as_object_mut().expect("RunConfig is a JSON object");
        for key in strip {
            map.remove(*key);
        }
        sha256_hex(canonical_json(&value).as_bytes())
    }

    /// SHA-256 of the canonical JSON rendering; the identity of the run.
    /// The output directory is excluded: it locates artifacts, it does not
    /// change the experiment, and reruns into scratch directories must
    /// produce byte-identical artifacts.
    pub fn hash(&self) -> String {
        self.hash_stripped(&["output_dir"])
    }

    /// Identity with the split also excluded. In-distribution and held-out
    /// runs of the same setup share this; reports may group sibling runs by
    /// it while rejecting any other config difference.
    pub fn family_hash(&self) -> String {
        self.hash_stripped(&["output_dir", "split"])
    }
}

/// Canonical JSON: object keys sorted, no whitespace. Hash input only;
/// artifacts on disk use ordinary serializers.
pub fn canonical_json(value: &serde_json::Value) -> String {
    fn write(v: &serde_json::Value, out: &mut String) {
        match v {
            serde_json::Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort_unstable();
                out.push('{');
                for (i, key) in keys.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::Value::String((*key).clone()).to_string());
                    out.push(':');
                    write(&map[key.as_str()], out);
                }
                out.push('}');
            }
            serde_json::Value::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(item, out);
                }
                out.push(']');
            }
            other => out.push_str(&other.to_string()),
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let mut out = String::with_capacity(64);
    for b in hasher.finalize() {
        write!(out, "{b:02x}").expect("write to String");
    }
    out
}

/// SHA-256 of a file on disk (artifact integrity records).
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String, ConfigError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    Ok(sha256_hex(&bytes))
}

/// Load one or more corpus shards and merge them in listed order.
///
/// A story id may repeat across shards only with identical text; example
/// keys must be globally unique; question text per dimension must agree.
pub fn load_corpora(paths: &[PathBuf]) -> Result<Corpus, ConfigError> {
    if paths.is_empty() {
        return Err(invalid("corpus", "at least one corpus path is required"));
    }
    let mut merged: Option<Corpus> = None;
    for path in paths {
        let shard = load_corpus(path)?;
        let Some(acc) = merged.as_mut() else {
            merged = Some(shard);
            continue;
        };
        let overlap = |key: String| ConfigError::CorpusOverlap {
            path: path.display().to_string(),
            key,
        };
        for (id, story) in shard.stories {
            match acc.stories.get(&id) {
                Some(existing) if existing.text != story.text => {
                    return Err(overlap(format!("story {id:?} with different text")));
                }
                Some(_) => {}
                None => {
                    acc.stories.insert(id, story);
                }
            }
        }
        for (dim, question) in shard.questions {
            match acc.questions.get(&dim) {
                Some(existing) if *existing != question => {
                    return Err(overlap(format!("question for {dim} with different text")));
                }
                Some(_) => {}
                None => {
                    acc.questions.insert(dim, question);
                }
            }
        }
        let seen: BTreeSet<String> =
            acc.examples.iter().map(|ex| ex.key().to_string()).collect();
        for ex in shard.examples {
            let key = ex.key().to_string();
            if seen.contains(&key) {
                return Err(overlap(format!("example {key}")));
            }
            acc.examples.push(ex);
        }
        acc.metadata.extend(shard.metadata);
    }
    let mut corpus = merged.expect("paths is nonempty");
    if paths.len() > 1 {
        let joined =
            paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
        corpus.metadata.insert("source".to_string(), joined);
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::save_corpus;
    use crate::synth::{SynthError, SyntheticSpec};

    fn ready(mut cfg: RunConfig) -> RunConfig {
        if cfg.corpus.is_empty() {
            cfg.corpus = vec![PathBuf::from("corpus.jsonl")];
        }
        cfg.finish().expect("config is valid")
    }

    #[test]
    fn sha256_matches_published_test_vector() {
        // FIPS 180-2 appendix B.1.
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn canonical_json_sorts_keys_recursively() {
        let value: serde_json::Value = serde_json::from_str(
            r#"{"b": 1, "a": [1.5, true, null, {"z": "s", "y": 2}]}"#,
        )
        .unwrap();
        assert_eq!(canonical_json(&value), r#"{"a":[1.5,true,null,{"y":2,"z":"s"}],"b":1}"#);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let cfg = ready(RunConfig::default());
        assert_eq!(cfg.hash(), cfg.clone().hash());
        assert_eq!(cfg.hash().len(), 64);

        let mut other = cfg.clone();
        other.seeds = vec![43];
        assert_ne!(cfg.hash(), other.finish().unwrap().hash());

        let mut other = cfg.clone();
        other.optimizer.epochs += 1;
        assert_ne!(cfg.hash(), other.finish().unwrap().hash());

        // Where artifacts land is not part of the experiment's identity.
        let mut moved = cfg.clone();
        moved.output_dir = PathBuf::from("somewhere/else");
        assert_eq!(cfg.hash(), moved.finish().unwrap().hash());
    }

    #[test]
    fn family_hash_ignores_split_only() {
        let id_run = ready(RunConfig::default());
        let mut ood_run = id_run.clone();
        ood_run.split = SplitSpec::Ood { heldout: Dimension::OriginalityInThought };
        let ood_run = ood_run.finish().unwrap();

        assert_ne!(id_run.hash(), ood_run.hash());
        assert_eq!(id_run.family_hash(), ood_run.family_hash());

        let mut other = id_run.clone();
        other.icm.lambda = 0.0;
        assert_ne!(id_run.family_hash(), other.finish().unwrap().family_hash());
    }

    #[test]
    fn toml_roundtrip_preserves_config() {
        let mut cfg = RunConfig::default();
        cfg.corpus = vec![PathBuf::from("a.jsonl"), PathBuf::from("b.jsonl")];
        cfg.mode = JudgeMode::Baseline;
        cfg.split = SplitSpec::Ood { heldout: Dimension::StructuralFlexibility };
        cfg.infer_mode = InferMode::ExpertPrior;
        cfg.seeds = vec![7, 8, 9];
        cfg.optimizer.epochs = 5;
        let cfg = cfg.finish().unwrap();

        let text = cfg.to_toml_string();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        // Normalization survived the roundtrip.
        assert_eq!(back.icm.optim.epochs, 5);
        assert_eq!(back.judge.optim.epochs, 5);
        assert_eq!(back.judge.mode, JudgeMode::Baseline);
    }

    #[test]
    fn minimal_toml_fills_defaults() {
        let cfg = RunConfig::from_toml_str("corpus = [\"c.jsonl\"]\n").unwrap();
        assert_eq!(cfg.mode, JudgeMode::Icm);
        assert_eq!(cfg.split, SplitSpec::Kfold { k: 5, seed: 42 });
        assert_eq!(cfg.infer_mode, InferMode::ExplanationAvailable);
        assert_eq!(cfg.seeds, vec![42]);
        assert_eq!(cfg.encoder.feature_dim, 4096);
        assert_eq!(cfg.icm.lambda, 1.0);
    }

    #[test]
    fn unknown_and_invalid_fields_are_named() {
        let err = RunConfig::from_toml_str("corpus = [\"c.jsonl\"]\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { ref message } if message.contains("bogus")));

        let cases: &[(&str, &str)] = &[
            ("", "corpus"),
            ("corpus = [\"c.jsonl\"]\nseeds = []\n", "seeds"),
            ("corpus = [\"c.jsonl\"]\nseeds = [1, 1]\n", "seeds"),
            (
                "corpus = [\"c.jsonl\"]\n[split]\nkind = \"kfold\"\nk = 1\nseed = 0\n",
                "split.k",
            ),
            ("corpus = [\"c.jsonl\"]\n[optimizer]\nbase_lr = 0.0\n", "optimizer.base_lr"),
            ("corpus = [\"c.jsonl\"]\n[optimizer]\nepochs = 0\n", "optimizer.epochs"),
            ("corpus = [\"c.jsonl\"]\n[icm]\nlambda = -0.5\n", "icm"),
            ("corpus = [\"c.jsonl\"]\n[encoder]\nrepr_dim = 0\n", "encoder"),
            (
                "corpus = [\"c.jsonl\"]\n[encoder]\nexpert_ids = [1, 1]\n",
                "encoder.expert_ids",
            ),
        ];
        for (text, field) in cases {
            let err = RunConfig::from_toml_str(text).unwrap_err();
            match err {
                ConfigError::Invalid { field: ref f, .. } => {
                    assert_eq!(&f.as_str(), field, "config: {text:?}")
                }
                other => panic!("expected Invalid for {text:?}, got {other}"),
            }
        }
    }

    #[test]
    fn conflicting_optimizer_override_is_rejected() {
        let text = "corpus = [\"c.jsonl\"]\n[optimizer]\nepochs = 4\n[icm.optim]\nepochs = 9\n";
        let err = RunConfig::from_toml_str(text).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref field, .. } if field == "icm.optim"));

        // Writing the shared schedule into [icm.optim] verbatim is accepted.
        let text = "corpus = [\"c.jsonl\"]\n[optimizer]\nepochs = 4\n[icm.optim]\nepochs = 4\n";
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.icm.optim.epochs, 4);
    }

    #[test]
    fn ood_split_parses_dimension_name() {
        let text = "corpus = [\"c.jsonl\"]\n[split]\nkind = \"ood\"\nheldout = \"OriginalityInThought\"\n";
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.split, SplitSpec::Ood { heldout: Dimension::OriginalityInThought });
    }

    #[test]
    fn merged_corpora_keep_all_examples_once() -> Result<(), SynthError> {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SyntheticSpec::default();
        spec.n_stories = 4;
        let full = crate::synth::generate_corpus(&spec)?.corpus;

        // Split examples into two shards sharing stories and questions.
        let mut a = full.clone();
        let mut b = full.clone();
        a.examples = full.examples[..30].to_vec();
        b.examples = full.examples[30..].to_vec();
        let path_a = dir.path().join("a.jsonl");
        let path_b = dir.path().join("b.jsonl");
        save_corpus(&a, &path_a, true).unwrap();
        save_corpus(&b, &path_b, true).unwrap();

        let merged = load_corpora(&[path_a.clone(), path_b.clone()]).unwrap();
        assert_eq!(merged.examples.len(), full.examples.len());
        assert_eq!(merged.stories.len(), full.stories.len());

        // The same shard twice duplicates example keys.
        let err = load_corpora(&[path_a.clone(), path_a.clone()]).unwrap_err();
        assert!(matches!(err, ConfigError::CorpusOverlap { .. }));

        // A story id reused with different text is a conflict. Inline saving
        // only writes stories that examples reference, so the shard must
        // carry examples of the mutated story.
        let mut c = a.clone();
        c.stories.get_mut("story-0000").unwrap().text = "Different text.".to_string();
        c.examples = full.examples[..15].to_vec();
        let path_c = dir.path().join("c.jsonl");
        save_corpus(&c, &path_c, true).unwrap();
        let err = load_corpora(&[path_a, path_c]).unwrap_err();
        assert!(
            matches!(err, ConfigError::CorpusOverlap { ref key, .. } if key.contains("story-0000"))
        );
        Ok(())
    }
}
