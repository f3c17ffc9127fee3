//! Append-only run journal: one JSON event per line.
//!
//! Every prefix of the file that ends in a newline is a valid journal.
//! Opening an existing journal loads its valid prefix (dropping a corrupted
//! or partial tail) and enters replay mode: the run re-executes from the
//! start, and each step that already has a recorded event takes its result
//! from the journal instead of calling a backend. Once the recorded events
//! are exhausted, new events are appended with gapless indices.

use std::collections::VecDeque;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendObserver, RetryNotice};
use crate::error::{Error, Result};
use crate::inference::VoteRecord;
use crate::tuner::Lineage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventPayload {
    RunStarted {
        user_id: String,
        config: serde_json::Value,
    },
    Warning {
        message: String,
    },
    InitGenerated {
        i3: u32,
        prompts: Vec<String>,
        attempts: u32,
    },
    ModificationGenerated {
        i3: u32,
        i2: u32,
        i1: u32,
        prompts: Vec<String>,
        attempts: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        warning: Option<String>,
    },
    PromptScored {
        seq: u64,
        text: String,
        correct: u64,
        total: u64,
        accuracy: f64,
        lineage: Lineage,
    },
    IterationFinished {
        i3: u32,
        i2: u32,
        rank_size: usize,
        all_size: usize,
        best_accuracy: f64,
    },
    RunFinished {
        prompts: usize,
    },
    BackendRetry {
        backend: String,
        attempt: u32,
        error: String,
    },
    InferenceStarted {
        user_id: String,
        h: usize,
        images: usize,
    },
    VoteRecorded {
        record: VoteRecord,
    },
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            EventPayload::RunStarted { .. } => "run_started",
            EventPayload::Warning { .. } => "warning",
            EventPayload::InitGenerated { .. } => "init_generated",
            EventPayload::ModificationGenerated { .. } => "modification_generated",
            EventPayload::PromptScored { .. } => "prompt_scored",
            EventPayload::IterationFinished { .. } => "iteration_finished",
            EventPayload::RunFinished { .. } => "run_finished",
            EventPayload::BackendRetry { .. } => "backend_retry",
            EventPayload::InferenceStarted { .. } => "inference_started",
            EventPayload::VoteRecorded { .. } => "vote_recorded",
        }
    }

    /// Retry notices depend on transport luck, not on the algorithm, so replay
    /// skips over them.
    fn is_incidental(&self) -> bool {
        matches!(self, EventPayload::BackendRetry { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEvent {
    pub index: u64,
    pub ts: u64,
    #[serde(flatten)]
    pub payload: EventPayload,
}

/// Timestamp source. `Logical` stamps each event with its index so journals
/// of deterministic runs are byte-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    Logical,
    System,
}

impl Clock {
    fn stamp(self, index: u64) -> u64 {
        match self {
            Clock::Logical => index,
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        }
    }
}

/// Valid events of a journal file plus whether a bad tail was dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct JournalContents {
    pub events: Vec<JournalEvent>,
    pub dropped_tail: bool,
    valid_len: u64,
}

fn parse_contents(bytes: &[u8]) -> JournalContents {
    let mut events = Vec::new();
    let mut offset = 0usize;
    while offset < bytes.len() {
        let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            break;
        };
        let line = &bytes[offset..offset + nl];
        match serde_json::from_slice::<JournalEvent>(line) {
            Ok(ev) if ev.index == events.len() as u64 => events.push(ev),
            _ => break,
        }
        offset += nl + 1;
    }
    JournalContents {
        events,
        dropped_tail: offset < bytes.len(),
        valid_len: offset as u64,
    }
}

/// Reads the valid prefix of a journal without locking it. A missing file
/// reads as empty.
pub fn read_journal(path: &Path) -> Result<JournalContents> {
    match fs::read(path) {
        Ok(bytes) => Ok(parse_contents(&bytes)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(parse_contents(&[])),
        Err(e) => Err(Error::io(path, e)),
    }
}

struct LockFile(PathBuf);

impl LockFile {
    fn acquire(journal: &Path) -> Result<Self> {
        let mut name = journal.as_os_str().to_owned();
        name.push(".lock");
        let path = PathBuf::from(name);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(LockFile(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::journal(
                journal,
                format!(
                    "journal is locked by another run; remove {} if that run is gone",
                    path.display()
                ),
            )),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for LockFile {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

struct Inner {
    file: File,
    next_index: u64,
    recorded: VecDeque<JournalEvent>,
    appended: u64,
    limit: Option<u64>,
    write_error: Option<String>,
}

/// Exclusive writer for one journal file.
pub struct Journal {
    path: PathBuf,
    clock: Clock,
    inner: Mutex<Inner>,
    _lock: LockFile,
}

impl Journal {
    /// Opens for resumption: existing valid events become the replay queue.
    pub fn open(path: &Path, clock: Clock) -> Result<Self> {
        Self::open_inner(path, clock, true)
    }

    /// Starts a fresh journal, discarding any existing file.
    pub fn create(path: &Path, clock: Clock) -> Result<Self> {
        Self::open_inner(path, clock, false)
    }

    fn open_inner(path: &Path, clock: Clock, resume: bool) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let lock = LockFile::acquire(path)?;
        let contents = if resume { read_journal(path)? } else { parse_contents(&[]) };
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(false)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        file.set_len(contents.valid_len).map_err(|e| Error::io(path, e))?;
        let mut file = file;
        use std::io::Seek;
        file.seek(std::io::SeekFrom::End(0)).map_err(|e| Error::io(path, e))?;
        Ok(Journal {
            path: path.to_path_buf(),
            clock,
            inner: Mutex::new(Inner {
                file,
                next_index: contents.events.len() as u64,
                recorded: contents.events.into(),
                appended: 0,
                limit: None,
                write_error: None,
            }),
            _lock: lock,
        })
    }

    /// Stops the run with [`Error::Interrupted`] after this many newly
    /// appended events, as if the process had been killed there.
    pub fn with_event_limit(self, limit: u64) -> Self {
        self.inner.lock().expect("journal lock").limit = Some(limit);
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn is_replaying(&self) -> bool {
        let inner = self.inner.lock().expect("journal lock");
        inner.recorded.iter().any(|e| !e.payload.is_incidental())
    }

    /// Number of events in the file so far.
    pub fn len(&self) -> u64 {
        self.inner.lock().expect("journal lock").next_index
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn append_locked(&self, inner: &mut Inner, payload: EventPayload) -> Result<()> {
        let event = JournalEvent {
            index: inner.next_index,
            ts: self.clock.stamp(inner.next_index),
            payload,
        };
        let mut line = serde_json::to_vec(&event).expect("event encodes");
        line.push(b'\n');
        inner
            .file
            .write_all(&line)
            .map_err(|e| Error::io(&self.path, e))?;
        inner.next_index += 1;
        inner.appended += 1;
        if let Some(limit) = inner.limit {
            if inner.appended >= limit {
                return Err(Error::Interrupted(inner.appended));
            }
        }
        Ok(())
    }

    fn pop_recorded(&self, inner: &mut Inner, kind: &str) -> Result<Option<EventPayload>> {
        while inner.recorded.front().is_some_and(|e| e.payload.is_incidental()) {
            inner.recorded.pop_front();
        }
        match inner.recorded.pop_front() {
            None => Ok(None),
            Some(ev) if ev.payload.kind() == kind => Ok(Some(ev.payload)),
            Some(ev) => Err(Error::journal(
                &self.path,
                format!(
                    "replay diverged at event {}: journal has {}, run expected {kind}",
                    ev.index,
                    ev.payload.kind()
                ),
            )),
        }
    }

    /// Returns the recorded event of `kind` when replaying; otherwise runs
    /// `compute` and appends its result.
    pub fn replay_or_append(
        &self,
        kind: &str,
        compute: impl FnOnce() -> Result<EventPayload>,
    ) -> Result<EventPayload> {
        {
            let mut inner = self.inner.lock().expect("journal lock");
            if let Some(recorded) = self.pop_recorded(&mut inner, kind)? {
                return Ok(recorded);
            }
        }
        // the lock is released here: compute may report retries
        let payload = compute()?;
        if payload.kind() != kind {
            return Err(Error::Logic(format!(
                "computed {} where {kind} was expected",
                payload.kind()
            )));
        }
        let mut inner = self.inner.lock().expect("journal lock");
        if let Some(msg) = inner.write_error.take() {
            return Err(Error::journal(&self.path, msg));
        }
        self.append_locked(&mut inner, payload.clone())?;
        Ok(payload)
    }

    /// Appends a deterministic event, or checks it against the recording when
    /// replaying.
    pub fn ensure(&self, payload: EventPayload) -> Result<()> {
        let kind = payload.kind();
        let mut inner = self.inner.lock().expect("journal lock");
        match self.pop_recorded(&mut inner, kind)? {
            Some(recorded) if recorded == payload => Ok(()),
            Some(recorded) => Err(Error::journal(
                &self.path,
                format!("replay diverged: journal has {recorded:?}, run produced {payload:?}"),
            )),
            None => self.append_locked(&mut inner, payload),
        }
    }
}

impl BackendObserver for Journal {
    fn on_retry(&self, notice: &RetryNotice) {
        let mut inner = self.inner.lock().expect("journal lock");
        let payload = EventPayload::BackendRetry {
            backend: notice.backend.clone(),
            attempt: notice.attempt,
            error: notice.error.clone(),
        };
        if let Err(e) = self.append_locked(&mut inner, payload) {
            if !matches!(e, Error::Interrupted(_)) {
                inner.write_error = Some(e.to_string());
            }
        }
    }
}
