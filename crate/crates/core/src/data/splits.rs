//! Deterministic stratified k-fold and held-out-dimension splits.
//!
//! Folds are built over (story, dimension) groups so that all annotations of
//! one story/dimension pair stay on the same side of every train/test
//! boundary. Stratification target: each fold's yes count stays within one
//! example of the fold-size-scaled corpus yes ratio.

use super::loader::DataError;
use super::schema::{Corpus, Dimension, ExampleKey, Verdict};
use crate::rng::seeded_rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KFoldAssign {
    pub story_id: String,
    pub dimension: Dimension,
    pub expert_id: u32,
    pub fold: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OodPart {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OodAssign {
    pub story_id: String,
    pub dimension: Dimension,
    pub expert_id: u32,
    pub part: OodPart,
}

/// A reproducible split assignment over example identities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FoldPlan {
    KFold {
        k: usize,
        seed: u64,
        assignment: Vec<KFoldAssign>,
        /// Set when the stratification bound could not be met exactly.
        #[serde(skip_serializing_if = "Vec::is_empty", default)]
        warnings: Vec<String>,
    },
    Ood {
        heldout_dimension: Dimension,
        seed: u64,
        assignment: Vec<OodAssign>,
    },
}

impl FoldPlan {
    pub fn num_folds(&self) -> usize {
        match self {
            FoldPlan::KFold { k, .. } => *k,
            FoldPlan::Ood { .. } => 1,
        }
    }

    pub fn warnings(&self) -> &[String] {
        match self {
            FoldPlan::KFold { warnings, .. } => warnings,
            FoldPlan::Ood { .. } => &[],
        }
    }

    /// Example indices for (train, test) of the given fold.
    pub fn train_test_indices(
        &self,
        corpus: &Corpus,
        fold: usize,
    ) -> Result<(Vec<usize>, Vec<usize>), DataError> {
        let index = example_index(corpus);
        let lookup = |key: &ExampleKey| -> Result<usize, DataError> {
            index.get(key).copied().ok_or_else(|| DataError::PlanMismatch {
                message: format!("plan references {key} which is not in the corpus"),
            })
        };
        let mut train = Vec::new();
        let mut test = Vec::new();
        match self {
            FoldPlan::KFold { k, assignment, .. } => {
                if fold >= *k {
                    return Err(DataError::PlanMismatch {
                        message: format!("fold {fold} out of range for k={k}"),
                    });
                }
                if assignment.len() != corpus.examples.len() {
                    return Err(DataError::PlanMismatch {
                        message: format!(
                            "plan covers {} examples, corpus has {}",
                            assignment.len(),
                            corpus.examples.len()
                        ),
                    });
                }
                for a in assignment {
                    let key = ExampleKey {
                        story_id: a.story_id.clone(),
                        dimension: a.dimension,
                        expert_id: a.expert_id,
                    };
                    let idx = lookup(&key)?;
                    if a.fold == fold {
                        test.push(idx);
                    } else {
                        train.push(idx);
                    }
                }
            }
            FoldPlan::Ood { assignment, .. } => {
                if fold != 0 {
                    return Err(DataError::PlanMismatch {
                        message: "held-out-dimension plans have a single fold".to_string(),
                    });
                }
                if assignment.len() != corpus.examples.len() {
                    return Err(DataError::PlanMismatch {
                        message: format!(
                            "plan covers {} examples, corpus has {}",
                            assignment.len(),
                            corpus.examples.len()
                        ),
                    });
                }
                for a in assignment {
                    let key = ExampleKey {
                        story_id: a.story_id.clone(),
                        dimension: a.dimension,
                        expert_id: a.expert_id,
                    };
                    let idx = lookup(&key)?;
                    match a.part {
                        OodPart::Train => train.push(idx),
                        OodPart::Test => test.push(idx),
                    }
                }
            }
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((train, test))
    }

    pub fn to_json_string(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("fold plan serializes");
        out.push('\n');
        out
    }

    pub fn from_json_str(s: &str) -> Result<FoldPlan, DataError> {
        serde_json::from_str(s)
            .map_err(|e| DataError::MalformedRecord { line: 0, message: format!("fold plan: {e}") })
    }
}

fn example_index(corpus: &Corpus) -> BTreeMap<ExampleKey, usize> {
    corpus
        .examples
        .iter()
        .enumerate()
        .map(|(i, e)| (e.key(), i))
        .collect()
}

struct Group {
    story_id: String,
    dimension: Dimension,
    example_indices: Vec<usize>,
    yes: usize,
}

impl Group {
    fn size(&self) -> usize {
        self.example_indices.len()
    }
}

fn collect_groups(corpus: &Corpus) -> Vec<Group> {
    let mut map: BTreeMap<(String, Dimension), (Vec<usize>, usize)> = BTreeMap::new();
    for (i, ex) in corpus.examples.iter().enumerate() {
        let entry = map
            .entry((ex.story_ref.clone(), ex.dimension))
            .or_insert_with(|| (Vec::new(), 0));
        entry.0.push(i);
        if ex.annotation.verdict == Verdict::Yes {
            entry.1 += 1;
        }
    }
    map.into_iter()
        .map(|((story_id, dimension), (example_indices, yes))| Group {
            story_id,
            dimension,
            example_indices,
            yes,
        })
        .collect()
}

/// Deterministic stratified, grouped k-fold assignment.
pub fn make_kfold(corpus: &Corpus, k: usize, seed: u64) -> Result<FoldPlan, DataError> {
    assert!(k >= 2, "k must be at least 2");
    let mut groups = collect_groups(corpus);
    if groups.len() < k {
        return Err(DataError::TooFewGroups { groups: groups.len(), k });
    }
    let n = corpus.examples.len();
    let yes_total = corpus.yes_count();
    let ratio = yes_total as f64 / n as f64;

    let mut rng = seeded_rng(seed, "kfold-assignment");
    groups.shuffle(&mut rng);
    // Largest groups first so the greedy pass can still balance sizes;
    // stable sort keeps the shuffled order within equal sizes.
    groups.sort_by_key(|g| std::cmp::Reverse(g.size()));

    let mut fold_size = vec![0usize; k];
    let mut fold_yes = vec![0usize; k];
    let mut fold_of_group = vec![0usize; groups.len()];
    for (gi, g) in groups.iter().enumerate() {
        let mut best: Option<(usize, f64, usize)> = None;
        for f in 0..k {
            let size = fold_size[f] + g.size();
            let dev = (fold_yes[f] as f64 + g.yes as f64 - ratio * size as f64).abs();
            let cand = (size, dev, f);
            let better = match &best {
                None => true,
                Some((bs, bd, _)) => {
                    size < *bs || (size == *bs && dev < *bd - 1e-12)
                }
            };
            if better {
                best = Some(cand);
            }
        }
        let f = best.expect("k >= 2").2;
        fold_of_group[gi] = f;
        fold_size[f] += g.size();
        fold_yes[f] += g.yes;
    }

    // Swap repair: exchange same-size groups between folds while any fold
    // misses the stratification bound. Sizes are preserved by construction.
    let violation = |yes: &[usize], size: &[usize]| -> f64 {
        (0..k)
            .map(|f| (yes[f] as f64 - ratio * size[f] as f64).abs() - 1.0)
            .map(|d| d.max(0.0))
            .sum()
    };
    let mut passes = 0;
    while violation(&fold_yes, &fold_size) > 1e-9 && passes < 200 {
        let mut improved = false;
        'outer: for a in 0..groups.len() {
            for b in (a + 1)..groups.len() {
                let (fa, fb) = (fold_of_group[a], fold_of_group[b]);
                if fa == fb || groups[a].size() != groups[b].size() {
                    continue;
                }
                let before = violation(&fold_yes, &fold_size);
                let (ya, yb) = (groups[a].yes, groups[b].yes);
                fold_yes[fa] = fold_yes[fa] - ya + yb;
                fold_yes[fb] = fold_yes[fb] - yb + ya;
                let after = violation(&fold_yes, &fold_size);
                if after < before - 1e-12 {
                    fold_of_group.swap(a, b);
                    improved = true;
                    break 'outer;
                }
                fold_yes[fa] = fold_yes[fa] + ya - yb;
                fold_yes[fb] = fold_yes[fb] + yb - ya;
            }
        }
        if !improved {
            break;
        }
        passes += 1;
    }
    let mut warnings = Vec::new();
    let residual = violation(&fold_yes, &fold_size);
    if residual > 1e-9 {
        warnings.push(format!(
            "stratification bound not attainable under grouping; residual {residual:.3}"
        ));
    }

    let mut assignment: Vec<KFoldAssign> = Vec::with_capacity(n);
    for (gi, g) in groups.iter().enumerate() {
        for &ei in &g.example_indices {
            assignment.push(KFoldAssign {
                story_id: g.story_id.clone(),
                dimension: g.dimension,
                expert_id: corpus.examples[ei].annotation.expert_id,
                fold: fold_of_group[gi],
            });
        }
    }
    assignment.sort_by(|a, b| {
        (&a.story_id, a.dimension, a.expert_id).cmp(&(&b.story_id, b.dimension, b.expert_id))
    });
    Ok(FoldPlan::KFold { k, seed, assignment, warnings })
}

/// Train on four dimensions, test on the held-out fifth.
pub fn make_ood_split(corpus: &Corpus, heldout: Dimension) -> Result<FoldPlan, DataError> {
    if !corpus.examples.iter().any(|e| e.dimension == heldout) {
        return Err(DataError::DimensionAbsent { dimension: heldout.name().to_string() });
    }
    let mut assignment: Vec<OodAssign> = corpus
        .examples
        .iter()
        .map(|e| OodAssign {
            story_id: e.story_ref.clone(),
            dimension: e.dimension,
            expert_id: e.annotation.expert_id,
            part: if e.dimension == heldout { OodPart::Test } else { OodPart::Train },
        })
        .collect();
    assignment.sort_by(|a, b| {
        (&a.story_id, a.dimension, a.expert_id).cmp(&(&b.story_id, b.dimension, b.expert_id))
    });
    Ok(FoldPlan::Ood { heldout_dimension: heldout, seed: 0, assignment })
}
