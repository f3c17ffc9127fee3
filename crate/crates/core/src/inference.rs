//! Final recognition: pick the H best prompts, classify with each, vote.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::ImageRef;
use crate::datastore::journal::{EventPayload, Journal};
use crate::datastore::LabeledSample;
use crate::emotion::{EmotionLabel, ParsedOutput};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::tuner::{Evaluator, PromptPool, ScoredPrompt};

/// The `h` best prompts, chosen one at a time as the argmax over the prompts
/// not yet used. Ties go to the older prompt. A pool smaller than `h` yields
/// all of it plus a warning.
pub fn select_optimal_prompts(pool: &PromptPool, h: usize) -> Result<(Vec<ScoredPrompt>, Option<String>)> {
    if pool.is_empty() {
        return Err(Error::InferenceSetup("the prompt pool is empty".into()));
    }
    let mut used = vec![false; pool.len()];
    let mut picked = Vec::new();
    for _ in 0..h.min(pool.len()) {
        let mut best: Option<usize> = None;
        for (i, p) in pool.entries().iter().enumerate() {
            if used[i] {
                continue;
            }
            best = match best {
                Some(b) if pool.entries()[b].rank_cmp(p).is_le() => Some(b),
                _ => Some(i),
            };
        }
        let b = best.expect("fewer picks than prompts");
        used[b] = true;
        picked.push(pool.entries()[b].clone());
    }
    let warning = (pool.len() < h).then(|| {
        format!("pool holds {} prompts, fewer than h = {h}; voting with all of them", pool.len())
    });
    Ok((picked, warning))
}

/// Majority vote over results in selection order. Non-target results
/// abstain. A tie goes to the label whose first supporter comes earliest.
/// If every result abstains the outcome is non-target.
pub fn majority_vote(results: &[ParsedOutput]) -> Result<ParsedOutput> {
    if results.is_empty() {
        return Err(Error::Logic("majority vote over no results".into()));
    }
    let mut count = [0usize; 8];
    let mut first = [usize::MAX; 8];
    for (i, r) in results.iter().enumerate() {
        if let Some(l) = r.label() {
            count[l.index()] += 1;
            first[l.index()] = first[l.index()].min(i);
        }
    }
    let winner = (0..8)
        .filter(|&l| count[l] > 0)
        .max_by(|&a, &b| count[a].cmp(&count[b]).then(first[b].cmp(&first[a])));
    Ok(match winner {
        Some(l) => ParsedOutput::Label(EmotionLabel::from_index(l).expect("index < 8")),
        None => ParsedOutput::NonTarget(String::new()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteEntry {
    pub prompt: String,
    pub accuracy: f64,
    pub output: ParsedOutput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub image: ImageRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<EmotionLabel>,
    pub results: Vec<VoteEntry>,
    #[serde(rename = "final")]
    pub final_output: ParsedOutput,
}

/// Classifies `image` with every selected prompt and votes. A call that
/// fails after retries fills its slot with a non-target output and keeps the
/// error text.
pub fn infer(image: &ImageRef, selected: &[ScoredPrompt], evaluator: &Evaluator<'_>) -> Result<VoteRecord> {
    if selected.is_empty() {
        return Err(Error::InferenceSetup("no prompts selected".into()));
    }
    if !image.is_resolvable() {
        return Err(Error::Input(format!("image {:?} cannot be resolved", image.as_str())));
    }
    let results: Vec<Result<VoteEntry>> = evaluator.install(|| {
        selected
            .par_iter()
            .map(|p| {
                let (output, error) = match evaluator.classify(image, &p.text) {
                    Ok(out) => (out, None),
                    Err(Error::Backend(e)) => (ParsedOutput::NonTarget(String::new()), Some(e.to_string())),
                    Err(e) => return Err(e),
                };
                Ok(VoteEntry { prompt: p.text.clone(), accuracy: p.accuracy, output, error })
            })
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let outputs: Vec<ParsedOutput> = results.iter().map(|r| r.output.clone()).collect();
    Ok(VoteRecord {
        image: image.clone(),
        sample_id: None,
        truth: None,
        final_output: majority_vote(&outputs)?,
        results,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub records: Vec<VoteRecord>,
    pub confusion: ConfusionMatrix,
    pub warnings: Vec<String>,
}

/// Runs [`infer`] over a test set. Records keep input order; with a journal
/// attached, recorded votes are replayed instead of recomputed.
pub fn infer_batch(
    user_id: &str,
    samples: &[LabeledSample],
    pool: &PromptPool,
    h: usize,
    evaluator: &Evaluator<'_>,
    journal: Option<&Journal>,
) -> Result<BatchOutcome> {
    let (selected, warning) = select_optimal_prompts(pool, h)?;
    let mut warnings: Vec<String> = warning.into_iter().collect();
    if let Some(j) = journal {
        j.ensure(EventPayload::InferenceStarted {
            user_id: user_id.to_string(),
            h: selected.len(),
            images: samples.len(),
        })?;
        for w in &warnings {
            j.ensure(EventPayload::Warning { message: w.clone() })?;
        }
    }
    let mut records = Vec::with_capacity(samples.len());
    let mut confusion = ConfusionMatrix::new();
    for s in samples {
        let compute = || -> Result<EventPayload> {
            let mut record = infer(&s.image, &selected, evaluator)?;
            record.sample_id = Some(s.sample_id.clone());
            record.truth = Some(s.label);
            Ok(EventPayload::VoteRecorded { record })
        };
        let payload = match journal {
            Some(j) => j.replay_or_append("vote_recorded", compute)?,
            None => compute()?,
        };
        let EventPayload::VoteRecorded { record } = payload else {
            unreachable!("replay returns the requested kind");
        };
        let same_prompts = record.results.len() == selected.len()
            && record.results.iter().zip(&selected).all(|(r, p)| r.prompt == p.text);
        if record.sample_id.as_deref() != Some(s.sample_id.as_str()) || !same_prompts {
            let path = journal.map(|j| j.path().to_path_buf()).unwrap_or_default();
            return Err(Error::journal(
                path,
                format!(
                    "recorded vote for {:?} does not match this run (expected {} with the current prompts); start a fresh inference journal",
                    record.sample_id, s.sample_id
                ),
            ));
        }
        for r in &record.results {
            if let Some(e) = &r.error {
                warnings.push(format!("{}: prompt {:?} failed: {e}", s.sample_id, r.prompt));
            }
        }
        confusion.record(s.label, &record.final_output);
        records.push(record);
    }
    Ok(BatchOutcome { records, confusion, warnings })
}
