//! Corpus schema, ingestion, validation, and deterministic splits.

mod loader;
mod schema;
mod splits;

pub use loader::{load_corpus, load_corpus_str, save_corpus, DataError};
pub use schema::{
    AnnotatedExample, Annotation, Corpus, Dimension, ExampleKey, Story, Verdict, EXPERT_IDS,
};
pub use splits::{make_kfold, make_ood_split, FoldPlan, KFoldAssign, OodAssign, OodPart};
