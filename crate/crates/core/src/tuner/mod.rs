//! Recursive discrete prompt tuning.
//!
//! Three nested loops:
//!
//! * outer (`i3`): ask the generator for a fresh initial prompt set;
//! * middle (`i2`): reset the ranked set to that initial set;
//! * inner (`i1`): pick the top-k and worst-k prompts, ask the generator for
//!   improved prompts, score them and add them to the ranked set.
//!
//! After every middle iteration the ranked set is merged into the global
//! pool, which inference later draws from.

mod replay;
mod scoring;
pub mod templates;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use replay::{journal_replay, RunState};
pub use scoring::{Evaluator, Score};
pub use templates::{render_init_template, render_mod_template};

use crate::backend::{normalize_prompt, parse_prompt_list, BackendObserver, DecodeParams, TextClient};
use crate::datastore::journal::{EventPayload, Journal};
use crate::datastore::LabeledSample;
use crate::emotion::EmotionLabel;
use crate::error::{Error, Result};
use crate::keyed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Initial,
    Modified,
}

/// Where a prompt was first produced. Indices are 1-based; initial prompts
/// carry `i2 = i1 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Lineage {
    pub i3: u32,
    pub i2: u32,
    pub i1: u32,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrompt {
    pub text: String,
    pub accuracy: f64,
    pub correct: u64,
    pub total: u64,
    pub lineage: Lineage,
    /// Registration order over the whole run.
    pub created_seq: u64,
}

impl ScoredPrompt {
    /// Ranking order: higher accuracy first, then older first.
    pub fn rank_cmp(&self, other: &ScoredPrompt) -> std::cmp::Ordering {
        other
            .accuracy
            .total_cmp(&self.accuracy)
            .then(self.created_seq.cmp(&other.created_seq))
    }
}

/// Insertion-ordered prompt set, unique by normalized text. Inserting a
/// duplicate keeps the earlier entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptPool {
    entries: Vec<ScoredPrompt>,
    index: HashMap<String, usize>,
}

impl PromptPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false when an entry with the same normalized text exists.
    pub fn insert(&mut self, prompt: ScoredPrompt) -> bool {
        let key = normalize_prompt(&prompt.text);
        if self.index.contains_key(&key) {
            return false;
        }
        self.index.insert(key, self.entries.len());
        self.entries.push(prompt);
        true
    }

    pub fn extend_from(&mut self, other: &PromptPool) {
        for p in &other.entries {
            self.insert(p.clone());
        }
    }

    pub fn get(&self, text: &str) -> Option<&ScoredPrompt> {
        self.index.get(&normalize_prompt(text)).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, text: &str) -> bool {
        self.index.contains_key(&normalize_prompt(text))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ScoredPrompt> {
        self.entries.iter()
    }

    pub fn entries(&self) -> &[ScoredPrompt] {
        &self.entries
    }

    pub fn best_accuracy(&self) -> Option<f64> {
        self.entries.iter().map(|p| p.accuracy).max_by(f64::total_cmp)
    }

    /// Entries in ranking order.
    pub fn ranked(&self) -> Vec<&ScoredPrompt> {
        let mut v: Vec<_> = self.entries.iter().collect();
        v.sort_by(|a, b| a.rank_cmp(b));
        v
    }
}

impl FromIterator<ScoredPrompt> for PromptPool {
    fn from_iter<I: IntoIterator<Item = ScoredPrompt>>(iter: I) -> Self {
        let mut pool = PromptPool::new();
        for p in iter {
            pool.insert(p);
        }
        pool
    }
}

fn default_n() -> usize {
    6
}
fn default_t() -> usize {
    5
}
fn default_k() -> usize {
    3
}
fn default_i1() -> u32 {
    20
}
fn default_i2() -> u32 {
    2
}
fn default_i3() -> u32 {
    3
}
fn default_h() -> usize {
    5
}
fn default_parallelism() -> usize {
    4
}
fn default_labels() -> Vec<EmotionLabel> {
    EmotionLabel::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    #[serde(default = "default_n")]
    pub n_initial: usize,
    #[serde(default = "default_t")]
    pub t_modified: usize,
    #[serde(default = "default_k")]
    pub k_select: usize,
    #[serde(default = "default_i1")]
    pub i1: u32,
    #[serde(default = "default_i2")]
    pub i2: u32,
    #[serde(default = "default_i3")]
    pub i3: u32,
    #[serde(default = "default_h")]
    pub h_vote: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_labels")]
    pub labels: Vec<EmotionLabel>,
    #[serde(default = "DecodeParams::generation")]
    pub generation: DecodeParams,
    #[serde(default = "DecodeParams::evaluation")]
    pub evaluation: DecodeParams,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            n_initial: default_n(),
            t_modified: default_t(),
            k_select: default_k(),
            i1: default_i1(),
            i2: default_i2(),
            i3: default_i3(),
            h_vote: default_h(),
            seed: 0,
            parallelism: default_parallelism(),
            labels: default_labels(),
            generation: DecodeParams::generation(),
            evaluation: DecodeParams::evaluation(),
        }
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tuning.n_initial", self.n_initial as u64),
            ("tuning.t_modified", self.t_modified as u64),
            ("tuning.k_select", self.k_select as u64),
            ("tuning.i1", self.i1 as u64),
            ("tuning.i2", self.i2 as u64),
            ("tuning.i3", self.i3 as u64),
            ("tuning.h_vote", self.h_vote as u64),
            ("tuning.parallelism", self.parallelism as u64),
        ];
        for (path, v) in positive {
            if v == 0 {
                return Err(Error::config(path, "must be at least 1"));
            }
        }
        if self.labels.is_empty() {
            return Err(Error::config("tuning.labels", "must not be empty"));
        }
        let mut seen = self.labels.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.labels.len() {
            return Err(Error::config("tuning.labels", "labels must be distinct"));
        }
        self.generation.validate("tuning.generation")?;
        self.evaluation.validate("tuning.evaluation")
    }
}

/// Top-k and worst-k prompts. `k` is clamped to the pool size, so the two
/// lists overlap when the pool holds fewer than `2k` prompts.
pub fn select_extremes(pool: &PromptPool, k: usize) -> Result<(Vec<ScoredPrompt>, Vec<ScoredPrompt>)> {
    if pool.is_empty() {
        return Err(Error::Logic("cannot select extremes from an empty pool".into()));
    }
    let k = k.clamp(1, pool.len());
    let ranked = pool.ranked();
    let top = ranked.iter().take(k).map(|&p| p.clone()).collect();
    let mut worst: Vec<&ScoredPrompt> = pool.iter().collect();
    worst.sort_by(|a, b| {
        a.accuracy
            .total_cmp(&b.accuracy)
            .then(a.created_seq.cmp(&b.created_seq))
    });
    let bottom = worst.into_iter().take(k).cloned().collect();
    Ok((top, bottom))
}

fn init_seed(config: &TuningConfig, i3: u32, attempt: u32) -> u64 {
    derive_seed(
        config.seed,
        &[b"init", &i3.to_le_bytes(), &attempt.to_le_bytes()],
    )
}

fn mod_seed(config: &TuningConfig, i3: u32, i2: u32, i1: u32, attempt: u32) -> u64 {
    derive_seed(
        config.seed,
        &[
            b"modify",
            &i3.to_le_bytes(),
            &i2.to_le_bytes(),
            &i1.to_le_bytes(),
            &attempt.to_le_bytes(),
        ],
    )
}

/// Prompts returned by the generator for one request.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub prompts: Vec<String>,
    pub attempts: u32,
    pub warning: Option<String>,
}

fn merge_unique(into: &mut Vec<String>, more: Vec<String>, cap: usize) {
    for p in more {
        if into.len() >= cap {
            break;
        }
        if !into.iter().any(|q| normalize_prompt(q) == normalize_prompt(&p)) {
            into.push(p);
        }
    }
}

/// Asks the generator for `n_initial` prompts. With fewer than that, asks
/// once more and merges; zero prompts after the second try is a setup error.
pub fn generate_initial_prompts(
    llm: &TextClient,
    config: &TuningConfig,
    i3: u32,
    observer: Option<&dyn BackendObserver>,
) -> Result<Generated> {
    let instruction = render_init_template(config.n_initial, &config.labels);
    let mut prompts = Vec::new();
    let mut attempts = 0;
    for attempt in 0..2u32 {
        attempts += 1;
        let decode = config.generation.with_seed(init_seed(config, i3, attempt));
        let raw = llm.generate_text(&instruction, &decode, observer)?;
        match parse_prompt_list(&raw) {
            Ok(list) => merge_unique(&mut prompts, list, config.n_initial),
            Err(Error::Extraction) => {}
            Err(e) => return Err(e),
        }
        if prompts.len() >= config.n_initial {
            break;
        }
    }
    if prompts.is_empty() {
        return Err(Error::TuningSetup(format!(
            "the generator returned no usable initial prompts for outer iteration {i3}"
        )));
    }
    Ok(Generated {
        prompts,
        attempts,
        warning: None,
    })
}

/// Asks the generator for up to `t_modified` improved prompts. An empty
/// extraction is retried once; if it stays empty, or the backend fails, the
/// iteration yields nothing and carries a warning instead of an error.
pub fn generate_modified_prompts(
    llm: &TextClient,
    good: &[ScoredPrompt],
    bad: &[ScoredPrompt],
    config: &TuningConfig,
    at: (u32, u32, u32),
    observer: Option<&dyn BackendObserver>,
) -> Result<Generated> {
    let (i3, i2, i1) = at;
    let instruction = render_mod_template(good, bad, config.t_modified);
    let mut attempts = 0;
    let mut last_problem = String::new();
    for attempt in 0..2u32 {
        attempts += 1;
        let decode = config.generation.with_seed(mod_seed(config, i3, i2, i1, attempt));
        match llm.generate_text(&instruction, &decode, observer) {
            Ok(raw) => match parse_prompt_list(&raw) {
                Ok(list) => {
                    let mut prompts = Vec::new();
                    merge_unique(&mut prompts, list, config.t_modified);
                    return Ok(Generated {
                        prompts,
                        attempts,
                        warning: None,
                    });
                }
                Err(Error::Extraction) => last_problem = "no prompts in generator output".into(),
                Err(e) => return Err(e),
            },
            Err(Error::Backend(e)) => {
                last_problem = e.to_string();
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Generated {
        prompts: Vec::new(),
        attempts,
        warning: Some(format!(
            "modification ({i3},{i2},{i1}) skipped: {last_problem}"
        )),
    })
}

/// Best training accuracy of one `(i3, i2)` ranked set: index 0 is the
/// initial set, index `i` is after inner iteration `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageTrace {
    pub i3: u32,
    pub i2: u32,
    pub best: Vec<f64>,
}

impl LineageTrace {
    pub fn is_non_decreasing(&self) -> bool {
        self.best.windows(2).all(|w| w[1] >= w[0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningOutcome {
    /// Every prompt ever ranked, each with its training accuracy.
    pub pool: PromptPool,
    /// The initial prompt sets of all outer iterations, deduplicated.
    pub initial: PromptPool,
    pub traces: Vec<LineageTrace>,
    /// Distinct prompts scored (each scored exactly once).
    pub scored: usize,
    pub modification_requests: usize,
}

pub struct TuningContext<'a> {
    pub config: &'a TuningConfig,
    pub train: &'a [LabeledSample],
    pub llm: &'a TextClient,
    pub evaluator: &'a Evaluator<'a>,
    pub journal: Option<&'a Journal>,
}

impl TuningContext<'_> {
    fn observer(&self) -> Option<&dyn BackendObserver> {
        self.journal.map(|j| j as &dyn BackendObserver)
    }

    fn step(&self, kind: &str, compute: impl FnOnce() -> Result<EventPayload>) -> Result<EventPayload> {
        match self.journal {
            Some(j) => j.replay_or_append(kind, compute),
            None => compute(),
        }
    }

    fn emit(&self, payload: EventPayload) -> Result<()> {
        match self.journal {
            Some(j) => j.ensure(payload),
            None => Ok(()),
        }
    }
}

struct Registry {
    /// Every distinct prompt scored so far, in registration order.
    scored: PromptPool,
}

impl Registry {
    /// Returns the registered entry for `text`, scoring it first if new.
    fn ensure_scored(&mut self, ctx: &TuningContext<'_>, text: &str, lineage: Lineage) -> Result<ScoredPrompt> {
        if let Some(p) = self.scored.get(text) {
            return Ok(p.clone());
        }
        let seq = self.scored.len() as u64;
        let payload = ctx.step("prompt_scored", || {
            let score = ctx.evaluator.score(text, ctx.train)?;
            Ok(EventPayload::PromptScored {
                seq,
                text: text.to_string(),
                correct: score.correct,
                total: score.total,
                accuracy: score.accuracy(),
                lineage,
            })
        })?;
        let EventPayload::PromptScored { seq: rseq, text: rtext, correct, total, accuracy, lineage: rlineage } = payload
        else {
            unreachable!("step returns the requested kind");
        };
        if rseq != seq || rtext != text {
            return Err(Error::Logic(format!(
                "journal scored {rtext:?} as #{rseq}, run expected {text:?} as #{seq}"
            )));
        }
        let prompt = ScoredPrompt {
            text: rtext,
            accuracy,
            correct,
            total,
            lineage: rlineage,
            created_seq: seq,
        };
        self.scored.insert(prompt.clone());
        Ok(prompt)
    }
}

/// Runs the full tuning loop and returns the scored global pool.
///
/// With a journal attached, recorded steps are replayed instead of
/// recomputed, so an interrupted run resumes where it stopped.
pub fn run_tuning(ctx: &TuningContext<'_>) -> Result<TuningOutcome> {
    let config = ctx.config;
    config.validate()?;
    if ctx.train.is_empty() {
        return Err(Error::Precondition("training set is empty".into()));
    }
    let mut registry = Registry { scored: PromptPool::new() };
    let mut all = PromptPool::new();
    let mut initial_all = PromptPool::new();
    let mut traces = Vec::new();
    let mut modification_requests = 0;

    for i3 in 1..=config.i3 {
        let payload = ctx.step("init_generated", || {
            let g = generate_initial_prompts(ctx.llm, config, i3, ctx.observer())?;
            Ok(EventPayload::InitGenerated {
                i3,
                prompts: g.prompts,
                attempts: g.attempts,
            })
        })?;
        let EventPayload::InitGenerated { prompts, .. } = payload else {
            unreachable!("step returns the requested kind");
        };
        let mut initial = PromptPool::new();
        for text in &prompts {
            let lineage = Lineage { i3, i2: 0, i1: 0, origin: Origin::Initial };
            initial.insert(registry.ensure_scored(ctx, text, lineage)?);
        }
        initial_all.extend_from(&initial);

        for i2 in 1..=config.i2 {
            let mut rank = initial.clone();
            let mut best = vec![rank.best_accuracy().unwrap_or(0.0)];
            for i1 in 1..=config.i1 {
                let (good, bad) = select_extremes(&rank, config.k_select)?;
                modification_requests += 1;
                let payload = ctx.step("modification_generated", || {
                    let g = generate_modified_prompts(ctx.llm, &good, &bad, config, (i3, i2, i1), ctx.observer())?;
                    Ok(EventPayload::ModificationGenerated {
                        i3,
                        i2,
                        i1,
                        prompts: g.prompts,
                        attempts: g.attempts,
                        warning: g.warning,
                    })
                })?;
                let EventPayload::ModificationGenerated { prompts, .. } = payload else {
                    unreachable!("step returns the requested kind");
                };
                for text in &prompts {
                    if rank.contains(text) {
                        continue;
                    }
                    let lineage = Lineage { i3, i2, i1, origin: Origin::Modified };
                    rank.insert(registry.ensure_scored(ctx, text, lineage)?);
                }
                best.push(rank.best_accuracy().unwrap_or(0.0));
            }
            all.extend_from(&rank);
            ctx.emit(EventPayload::IterationFinished {
                i3,
                i2,
                rank_size: rank.len(),
                all_size: all.len(),
                best_accuracy: rank.best_accuracy().unwrap_or(0.0),
            })?;
            traces.push(LineageTrace { i3, i2, best });
        }
    }
    ctx.emit(EventPayload::RunFinished { prompts: all.len() })?;
    Ok(TuningOutcome {
        pool: all,
        initial: initial_all,
        traces,
        scored: registry.scored.len(),
        modification_requests,
    })
}

#[cfg(test)]
mod tests;
