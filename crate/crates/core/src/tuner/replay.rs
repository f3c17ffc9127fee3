use super::PromptPool;
use crate::datastore::journal::{EventPayload, JournalEvent};
use crate::error::{Error, Result};

/// State of a tuning run rebuilt from its journal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunState {
    pub user_id: Option<String>,
    pub config: Option<serde_json::Value>,
    /// Global pool as of the last finished middle iteration.
    pub pool: PromptPool,
    /// Every prompt scored so far.
    pub scored: PromptPool,
    pub finished: bool,
    pub warnings: Vec<String>,
}

/// Folds tuning events into a [`RunState`] without calling any backend.
pub fn journal_replay(events: &[JournalEvent]) -> Result<RunState> {
    let mut state = RunState::default();
    let mut initial: Vec<String> = Vec::new();
    let mut modified: Vec<String> = Vec::new();
    for ev in events {
        match &ev.payload {
            EventPayload::RunStarted { user_id, config } => {
                state.user_id = Some(user_id.clone());
                state.config = Some(config.clone());
            }
            EventPayload::Warning { message } => state.warnings.push(message.clone()),
            EventPayload::InitGenerated { prompts, .. } => {
                initial = prompts.clone();
                modified.clear();
            }
            EventPayload::ModificationGenerated { prompts, warning, .. } => {
                modified.extend(prompts.iter().cloned());
                if let Some(w) = warning {
                    state.warnings.push(w.clone());
                }
            }
            EventPayload::PromptScored { seq, text, correct, total, accuracy, lineage } => {
                state.scored.insert(super::ScoredPrompt {
                    text: text.clone(),
                    accuracy: *accuracy,
                    correct: *correct,
                    total: *total,
                    lineage: *lineage,
                    created_seq: *seq,
                });
            }
            EventPayload::IterationFinished { i3, i2, .. } => {
                let mut rank = PromptPool::new();
                for text in initial.iter().chain(&modified) {
                    let p = state.scored.get(text).ok_or_else(|| {
                        Error::Logic(format!(
                            "journal event {}: prompt {text:?} of iteration ({i3},{i2}) was never scored",
                            ev.index
                        ))
                    })?;
                    rank.insert(p.clone());
                }
                state.pool.extend_from(&rank);
                modified.clear();
            }
            EventPayload::RunFinished { .. } => state.finished = true,
            EventPayload::BackendRetry { .. }
            | EventPayload::InferenceStarted { .. }
            | EventPayload::VoteRecorded { .. } => {}
        }
    }
    Ok(state)
}
