//! Curiosity-conditioned judging for expert-annotated creative-writing
//! verdicts: an intrinsic-curiosity scorer over (story, question, context)
//! states, a verdict classifier conditioned on the resulting belief-shift
//! score, a synthetic multi-annotator corpus generator, and the evaluation
//! harness tying them together.

pub mod config;
pub mod data;
pub mod encoder;
pub mod features;
pub mod harness;
pub mod icm;
pub mod judge;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod report;
pub mod rng;
pub mod synth;
pub mod tape;
