//! Core corpus types: stories, dimensions, annotations, examples.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// The three canonical expert annotator ids. Synthetic noise annotators use
/// ids outside this set.
pub const EXPERT_IDS: [u32; 3] = [1, 2, 3];

/// The five evaluated creativity dimensions.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Dimension {
    OriginalityInThought,
    OriginalityInForm,
    OriginalityInThemeAndContent,
    StructuralFlexibility,
    PerspectiveAndVoiceFlexibility,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::OriginalityInThought,
        Dimension::OriginalityInForm,
        Dimension::OriginalityInThemeAndContent,
        Dimension::StructuralFlexibility,
        Dimension::PerspectiveAndVoiceFlexibility,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::OriginalityInThought => "OriginalityInThought",
            Dimension::OriginalityInForm => "OriginalityInForm",
            Dimension::OriginalityInThemeAndContent => "OriginalityInThemeAndContent",
            Dimension::StructuralFlexibility => "StructuralFlexibility",
            Dimension::PerspectiveAndVoiceFlexibility => "PerspectiveAndVoiceFlexibility",
        }
    }

    /// Canonical evaluation question for the dimension.
    pub fn canonical_question(self) -> &'static str {
        match self {
            Dimension::OriginalityInThought => {
                "Is the story an original piece of writing without any cliches?"
            }
            Dimension::OriginalityInForm => {
                "Does the story show originality in its form and/or structure?"
            }
            Dimension::OriginalityInThemeAndContent => {
                "Will an average reader of this story obtain a unique and original idea \
                 from reading it?"
            }
            Dimension::StructuralFlexibility => {
                "Does the story contain turns that are both surprising and appropriate?"
            }
            Dimension::PerspectiveAndVoiceFlexibility => {
                "Does the story provide diverse perspectives, and if there are unlikeable \
                 characters, are their perspectives presented convincingly and accurately?"
            }
        }
    }

    pub fn parse(s: &str) -> Option<Dimension> {
        Dimension::ALL.into_iter().find(|d| d.name() == s)
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Binary verdict. Disk representation is "yes"/"no"; the in-memory numeric
/// encoding {1, 0} goes through these methods only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Verdict {
    Yes,
    No,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Yes => "yes",
            Verdict::No => "no",
        }
    }

    pub fn parse(s: &str) -> Option<Verdict> {
        match s {
            "yes" => Some(Verdict::Yes),
            "no" => Some(Verdict::No),
            _ => None,
        }
    }

    /// {yes -> 1, no -> 0}.
    pub fn as_u8(self) -> u8 {
        match self {
            Verdict::Yes => 1,
            Verdict::No => 0,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.as_u8())
    }

    pub fn from_bool(yes: bool) -> Verdict {
        if yes {
            Verdict::Yes
        } else {
            Verdict::No
        }
    }
}

impl Serialize for Verdict {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Verdict {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Verdict::parse(&raw)
            .ok_or_else(|| serde::de::Error::custom(format!("verdict must be yes|no, got {raw:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Story {
    pub story_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub expert_id: u32,
    pub explanation: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedExample {
    pub story_ref: String,
    pub dimension: Dimension,
    pub annotation: Annotation,
}

impl AnnotatedExample {
    pub fn key(&self) -> ExampleKey {
        ExampleKey {
            story_id: self.story_ref.clone(),
            dimension: self.dimension,
            expert_id: self.annotation.expert_id,
        }
    }
}

/// Identity of one example: the (story, dimension, expert) triple.
#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct ExampleKey {
    pub story_id: String,
    pub dimension: Dimension,
    pub expert_id: u32,
}

impl fmt::Display for ExampleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.story_id, self.dimension, self.expert_id)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    /// Keyed by story_id; ordered for deterministic iteration.
    pub stories: BTreeMap<String, Story>,
    /// File order preserved.
    pub examples: Vec<AnnotatedExample>,
    /// Question text per dimension as found in the corpus.
    pub questions: BTreeMap<Dimension, String>,
    pub metadata: BTreeMap<String, String>,
}

impl Corpus {
    pub fn question_text(&self, dim: Dimension) -> &str {
        self.questions
            .get(&dim)
            .map(String::as_str)
            .unwrap_or_else(|| dim.canonical_question())
    }

    pub fn story(&self, story_id: &str) -> Option<&Story> {
        self.stories.get(story_id)
    }

    pub fn yes_count(&self) -> usize {
        self.examples
            .iter()
            .filter(|e| e.annotation.verdict == Verdict::Yes)
            .count()
    }

    /// Distinct expert ids in ascending order; defines attribution classes.
    pub fn expert_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.examples.iter().map(|e| e.annotation.expert_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn dimensions(&self) -> Vec<Dimension> {
        let mut dims: Vec<Dimension> = self.examples.iter().map(|e| e.dimension).collect();
        dims.sort_unstable();
        dims.dedup();
        dims
    }

    /// Structural warnings for partial corpora; hard invariants are enforced
    /// at load time instead.
    pub fn validate_warnings(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        if self.stories.len() != 48 {
            warnings.push(format!(
                "corpus has {} stories (a complete corpus has 48)",
                self.stories.len()
            ));
        }
        let dims = self.dimensions();
        if dims.len() != 5 {
            warnings.push(format!(
                "corpus covers {} dimensions (a complete corpus has 5)",
                dims.len()
            ));
        }
        let experts = self.expert_ids();
        if experts != EXPERT_IDS {
            warnings.push(format!(
                "corpus annotator ids {experts:?} differ from the canonical {EXPERT_IDS:?}"
            ));
        }
        let expected = self.stories.len() * dims.len() * experts.len();
        if self.examples.len() != expected {
            warnings.push(format!(
                "corpus has {} examples; full cross product would be {expected}",
                self.examples.len()
            ));
        }
        warnings
    }
}
