use rayon::prelude::*;

use crate::backend::{BackendObserver, DecodeParams, ImageRef, VisionClient};
use crate::datastore::LabeledSample;
use crate::emotion::{parse_label, EmotionLabel, ParsedOutput};
use crate::error::{Error, Result};

/// Correct count over a training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Score {
    pub correct: u64,
    pub total: u64,
}

impl Score {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Runs classifier calls and turns replies into labels. Per-sample calls fan
/// out over a bounded thread pool.
pub struct Evaluator<'a> {
    client: &'a VisionClient,
    decode: DecodeParams,
    labels: Vec<EmotionLabel>,
    threads: rayon::ThreadPool,
    observer: Option<&'a dyn BackendObserver>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        client: &'a VisionClient,
        decode: DecodeParams,
        labels: Vec<EmotionLabel>,
        parallelism: usize,
    ) -> Result<Self> {
        let threads = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism.max(1))
            .build()
            .map_err(|e| Error::Logic(format!("cannot start worker pool: {e}")))?;
        Ok(Evaluator {
            client,
            decode,
            labels,
            threads,
            observer: None,
        })
    }

    pub fn with_observer(mut self, observer: &'a dyn BackendObserver) -> Self {
        self.observer = Some(observer);
        self
    }

    pub fn labels(&self) -> &[EmotionLabel] {
        &self.labels
    }

    pub fn classify(&self, image: &ImageRef, prompt: &str) -> Result<ParsedOutput> {
        let raw = self
            .client
            .classify_image(image, prompt, &self.decode, self.observer)?;
        Ok(parse_label(&raw, &self.labels))
    }

    /// Runs `f` inside the evaluator's worker pool.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.threads.install(f)
    }

    /// Fraction of `train` whose parsed reply equals the user's label.
    /// Non-target replies count as wrong.
    pub fn score(&self, prompt: &str, train: &[LabeledSample]) -> Result<Score> {
        if train.is_empty() {
            return Err(Error::Precondition("training set is empty".into()));
        }
        let hits: Result<Vec<bool>> = self.threads.install(|| {
            train
                .par_iter()
                .map(|s| Ok(self.classify(&s.image, prompt)?.is_label(s.label)))
                .collect()
        });
        let hits = hits.map_err(|e| match e {
            Error::Backend(source) => Error::Scoring {
                prompt: prompt.to_string(),
                source,
            },
            other => other,
        })?;
        Ok(Score {
            correct: hits.iter().filter(|&&h| h).count() as u64,
            total: train.len() as u64,
        })
    }
}
