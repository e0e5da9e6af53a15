//! Corpus JSONL ingestion and serialization.
//!
//! One record per annotated example. `story_text` may repeat on every line
//! or live once per story in a `stories.jsonl` sidecar next to the corpus
//! file; the loader accepts both and rejects conflicting texts.

use super::schema::{AnnotatedExample, Annotation, Corpus, Dimension, Story, Verdict};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("line {line}: story_id {story_id:?} has no story text (inline or sidecar)")]
    DanglingStoryRef { line: usize, story_id: String },
    #[error("line {line}: duplicate example for {key}")]
    DuplicateExample { line: usize, key: String },
    #[error("line {line}: invalid verdict {value:?} (expected \"yes\" or \"no\")")]
    InvalidVerdict { line: usize, value: String },
    #[error("need at least {k} groups for {k} folds, corpus has {groups}")]
    TooFewGroups { groups: usize, k: usize },
    #[error("dimension {dimension} absent from corpus")]
    DimensionAbsent { dimension: String },
    #[error("fold plan does not cover the corpus: {message}")]
    PlanMismatch { message: String },
}

fn malformed(line: usize, message: impl Into<String>) -> DataError {
    DataError::MalformedRecord { line, message: message.into() }
}

/// On-disk corpus record. Field order here fixes the output column order.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusRecord {
    story_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    story_text: Option<String>,
    dimension: String,
    question: String,
    expert_id: u32,
    explanation: String,
    verdict: String,
}

/// Sidecar record: `{"story_id", "text"}`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarRecord {
    story_id: String,
    text: String,
}

/// Load a corpus from a JSONL file, consulting a `stories.jsonl` sidecar in
/// the same directory when present.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, DataError> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let sidecar_path = path.parent().unwrap_or_else(|| Path::new(".")).join("stories.jsonl");
    let sidecar = if sidecar_path.is_file() {
        Some(std::fs::read_to_string(&sidecar_path).map_err(|source| DataError::Io {
            path: sidecar_path.display().to_string(),
            source,
        })?)
    } else {
        None
    };
    let mut corpus = load_corpus_str(&content, sidecar.as_deref())?;
    corpus
        .metadata
        .insert("source".to_string(), path.display().to_string());
    Ok(corpus)
}

/// Parse corpus (and optional sidecar) content. This is the validation entry
/// point; all schema invariants are enforced here.
pub fn load_corpus_str(content: &str, sidecar: Option<&str>) -> Result<Corpus, DataError> {
    let mut stories: BTreeMap<String, Story> = BTreeMap::new();
    if let Some(sidecar) = sidecar {
        for (i, line) in sidecar.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SidecarRecord = serde_json::from_str(line)
                .map_err(|e| malformed(lineno, format!("sidecar: {e}")))?;
            if rec.story_id.is_empty() {
                return Err(malformed(lineno, "sidecar: empty story_id"));
            }
            if rec.text.is_empty() {
                return Err(malformed(lineno, "sidecar: empty story text"));
            }
            if let Some(prev) = stories.get(&rec.story_id) {
                if prev.text != rec.text {
                    return Err(malformed(
                        lineno,
                        format!("sidecar: conflicting text for story {:?}", rec.story_id),
                    ));
                }
            }
            stories.insert(
                rec.story_id.clone(),
                Story { story_id: rec.story_id, text: rec.text },
            );
        }
    }

    let mut examples = Vec::new();
    let mut questions: BTreeMap<Dimension, String> = BTreeMap::new();
    let mut seen: BTreeSet<(String, Dimension, u32)> = BTreeSet::new();
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord =
            serde_json::from_str(line).map_err(|e| malformed(lineno, e.to_string()))?;
        if rec.story_id.is_empty() {
            return Err(malformed(lineno, "empty story_id"));
        }
        let dimension = Dimension::parse(&rec.dimension).ok_or_else(|| {
            malformed(lineno, format!("unknown dimension {:?}", rec.dimension))
        })?;
        let verdict = Verdict::parse(&rec.verdict)
            .ok_or(DataError::InvalidVerdict { line: lineno, value: rec.verdict.clone() })?;
        if rec.expert_id == 0 {
            return Err(malformed(lineno, "expert_id must be positive"));
        }
        if rec.explanation.is_empty() && (1..=3).contains(&rec.expert_id) {
            return Err(malformed(
                lineno,
                format!("empty explanation for expert {}", rec.expert_id),
            ));
        }
        match &rec.story_text {
            Some(text) => {
                if text.is_empty() {
                    return Err(malformed(lineno, "empty story_text"));
                }
                if let Some(prev) = stories.get(&rec.story_id) {
                    if &prev.text != text {
                        return Err(malformed(
                            lineno,
                            format!("conflicting text for story {:?}", rec.story_id),
                        ));
                    }
                } else {
                    stories.insert(
                        rec.story_id.clone(),
                        Story { story_id: rec.story_id.clone(), text: text.clone() },
                    );
                }
            }
            None => {
                if !stories.contains_key(&rec.story_id) {
                    return Err(DataError::DanglingStoryRef {
                        line: lineno,
                        story_id: rec.story_id,
                    });
                }
            }
        }
        match questions.get(&dimension) {
            Some(prev) if prev != &rec.question => {
                return Err(malformed(
                    lineno,
                    format!("question text for {dimension} differs from an earlier line"),
                ));
            }
            Some(_) => {}
            None => {
                if rec.question.is_empty() {
                    return Err(malformed(lineno, "empty question"));
                }
                questions.insert(dimension, rec.question.clone());
            }
        }
        let key = (rec.story_id.clone(), dimension, rec.expert_id);
        if !seen.insert(key) {
            return Err(DataError::DuplicateExample {
                line: lineno,
                key: format!("{}/{}/{}", rec.story_id, dimension, rec.expert_id),
            });
        }
        examples.push(AnnotatedExample {
            story_ref: rec.story_id,
            dimension,
            annotation: Annotation {
                expert_id: rec.expert_id,
                explanation: rec.explanation,
                verdict,
            },
        });
    }
    if examples.is_empty() {
        return Err(malformed(0, "empty corpus"));
    }
    Ok(Corpus { stories, examples, questions, metadata: BTreeMap::new() })
}

/// Write a corpus as JSONL. With `inline_stories`, every line carries the
/// story text; otherwise a `stories.jsonl` sidecar is written next to it.
pub fn save_corpus(
    corpus: &Corpus,
    path: impl AsRef<Path>,
    inline_stories: bool,
) -> Result<(), DataError> {
    let path = path.as_ref();
    let io_err = |p: &Path| {
        let p = p.display().to_string();
        move |source| DataError::Io { path: p.clone(), source }
    };
    let mut out = String::new();
    for ex in &corpus.examples {
        let story_text = if inline_stories {
            Some(
                corpus
                    .story(&ex.story_ref)
                    .map(|s| s.text.clone())
                    .ok_or_else(|| DataError::DanglingStoryRef {
                        line: 0,
                        story_id: ex.story_ref.clone(),
                    })?,
            )
        } else {
            None
        };
        let rec = CorpusRecord {
            story_id: ex.story_ref.clone(),
            story_text,
            dimension: ex.dimension.name().to_string(),
            question: corpus.question_text(ex.dimension).to_string(),
            expert_id: ex.annotation.expert_id,
            explanation: ex.annotation.explanation.clone(),
            verdict: ex.annotation.verdict.as_str().to_string(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("corpus record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io_err(path))?;
    if !inline_stories {
        let sidecar_path =
            path.parent().unwrap_or_else(|| Path::new(".")).join("stories.jsonl");
        let mut out = String::new();
        for story in corpus.stories.values() {
            let rec = SidecarRecord {
                story_id: story.story_id.clone(),
                text: story.text.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("sidecar record serializes"));
            out.push('\n');
        }
        std::fs::write(&sidecar_path, out).map_err(io_err(&sidecar_path))?;
    }
    Ok(())
}
