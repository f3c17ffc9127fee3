//! Personalized visual emotion recognition by discrete prompt tuning.
//!
//! A text model writes candidate prompts, a vision model scores them on a
//! user's labelled images, and the best prompts are refined over several
//! rounds. Inference classifies a new image with the top prompts and takes a
//! majority vote.

pub mod backend;
pub mod cli;
pub mod config;
pub mod datastore;
pub mod emotion;
pub mod error;
pub mod inference;
pub mod keyed;
pub mod metrics;
pub mod simkit;
pub mod tuner;

pub use emotion::{parse_label, EmotionLabel, EmotionWheel, ParsedOutput, Polarity};
pub use error::{Error, Result};
pub use metrics::{ConfusionMatrix, MetricReport};
