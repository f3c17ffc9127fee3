use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::*;
use crate::backend::{BackendError, BackendIdentity, ImageRef, TextGenBackend, VisionClassifyBackend, VisionClient};
use crate::keyed::digest_hex;

fn sp(text: &str, accuracy: f64, seq: u64) -> ScoredPrompt {
    ScoredPrompt {
        text: text.into(),
        accuracy,
        correct: 0,
        total: 0,
        lineage: Lineage { i3: 1, i2: 0, i1: 0, origin: Origin::Initial },
        created_seq: seq,
    }
}

/// Writes numbered prompts; `seed` keeps different requests apart.
struct CountingLlm {
    calls: AtomicUsize,
    per_call: usize,
    prose: bool,
}

impl CountingLlm {
    fn new(per_call: usize) -> Self {
        CountingLlm { calls: AtomicUsize::new(0), per_call, prose: false }
    }
}

impl TextGenBackend for CountingLlm {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity::new("counting", "v1")
    }

    fn generate(&self, instruction: &str, decode: &DecodeParams) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.prose {
            return Ok("I would rather talk about something else.".into());
        }
        let tag = if instruction.starts_with(templates::INIT_PREFIX) { "init" } else { "mod" };
        let seed = decode.seed.unwrap_or(0);
        Ok((0..self.per_call)
            .map(|i| format!("- {tag} prompt {seed:x} #{i}\n"))
            .collect())
    }
}

/// Correct when a hash of (prompt, image) is even.
struct CoinVision;

impl VisionClassifyBackend for CoinVision {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity::new("coin", "v1")
    }

    fn classify(&self, image: &ImageRef, prompt: &str, _: &DecodeParams) -> Result<String, BackendError> {
        let truth = image.as_str().rsplit('/').nth(1).unwrap_or("awe").to_string();
        let h = digest_hex(&format!("{prompt}|{}", image.as_str()));
        if u8::from_str_radix(&h[..2], 16).unwrap().is_multiple_of(2) {
            Ok(format!("The answer is {truth}."))
        } else {
            Ok("I see nothing in particular.".into())
        }
    }
}

fn train_set(n: usize) -> Vec<LabeledSample> {
    (0..n)
        .map(|i| {
            let label = EmotionLabel::ALL[i % 8];
            LabeledSample {
                sample_id: format!("s{i}"),
                image: ImageRef(format!("sim://u/{}/{i}", label.name())),
                user_id: "u".into(),
                label,
            }
        })
        .collect()
}

fn small_config() -> TuningConfig {
    TuningConfig {
        n_initial: 3,
        t_modified: 2,
        k_select: 2,
        i1: 3,
        i2: 2,
        i3: 2,
        parallelism: 2,
        ..TuningConfig::default()
    }
}

#[test]
fn defaults_match_published_settings() {
    let c = TuningConfig::default();
    assert_eq!(
        (c.n_initial, c.t_modified, c.k_select, c.i1, c.i2, c.i3, c.h_vote),
        (6, 5, 3, 20, 2, 3, 5)
    );
    c.validate().unwrap();
    let bad = TuningConfig { i1: 0, ..TuningConfig::default() };
    assert!(matches!(bad.validate(), Err(Error::Config { path, .. }) if path == "tuning.i1"));
}

#[test]
fn pool_keeps_earlier_duplicate() {
    let mut pool = PromptPool::new();
    assert!(pool.insert(sp("Name the  Emotion", 0.5, 0)));
    assert!(!pool.insert(sp("name the emotion ", 0.9, 1)));
    assert_eq!(pool.len(), 1);
    assert_eq!(pool.get("NAME THE EMOTION").unwrap().accuracy, 0.5);
}

#[test]
fn extremes_of_six_are_disjoint() {
    let pool: PromptPool = (0..6).map(|i| sp(&format!("p{i}"), i as f64 / 10.0, i)).collect();
    let (top, bottom) = select_extremes(&pool, 3).unwrap();
    let t: Vec<_> = top.iter().map(|p| p.text.as_str()).collect();
    let b: Vec<_> = bottom.iter().map(|p| p.text.as_str()).collect();
    assert_eq!(t, ["p5", "p4", "p3"]);
    assert_eq!(b, ["p0", "p1", "p2"]);
}

#[test]
fn extremes_overlap_when_pool_is_small() {
    let pool: PromptPool = (0..4).map(|i| sp(&format!("p{i}"), i as f64 / 10.0, i)).collect();
    let (top, bottom) = select_extremes(&pool, 3).unwrap();
    assert_eq!(top.len(), 3);
    assert_eq!(bottom.len(), 3);
    let shared = top.iter().filter(|p| bottom.contains(p)).count();
    assert_eq!(shared, 2);
    let (top, _) = select_extremes(&pool, 10).unwrap();
    assert_eq!(top.len(), 4);
}

#[test]
fn extremes_break_ties_by_age() {
    let pool: PromptPool = [sp("new", 0.7, 5), sp("old", 0.7, 2), sp("low", 0.1, 0)].into_iter().collect();
    let (top, _) = select_extremes(&pool, 1).unwrap();
    assert_eq!(top[0].text, "old");
    assert!(matches!(select_extremes(&PromptPool::new(), 3), Err(Error::Logic(_))));
}

#[test]
fn initial_generation_truncates_to_n() {
    let llm = TextClient::new(Arc::new(CountingLlm::new(8)));
    let config = TuningConfig::default();
    let g = generate_initial_prompts(&llm, &config, 1, None).unwrap();
    assert_eq!(g.prompts.len(), 6);
    assert_eq!(g.attempts, 1);
    assert!(g.prompts[0].ends_with("#0"));
}

#[test]
fn initial_generation_retries_once_then_merges() {
    let backend = Arc::new(CountingLlm::new(4));
    let llm = TextClient::new(backend.clone());
    let g = generate_initial_prompts(&llm, &TuningConfig::default(), 1, None).unwrap();
    assert_eq!(backend.calls.load(Ordering::SeqCst), 2);
    assert_eq!(g.prompts.len(), 6);
}

#[test]
fn prose_twice_is_a_setup_error() {
    let backend = Arc::new(CountingLlm { prose: true, ..CountingLlm::new(0) });
    let llm = TextClient::new(backend.clone());
    let err = generate_initial_prompts(&llm, &TuningConfig::default(), 1, None).unwrap_err();
    assert!(matches!(err, Error::TuningSetup(_)));
    assert_eq!(backend.calls.load(Ordering::SeqCst), 2);
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn modification_failure_is_skipped_with_warning() {
    let backend = Arc::new(CountingLlm { prose: true, ..CountingLlm::new(0) });
    let llm = TextClient::new(backend);
    let good = [sp("g", 0.5, 0)];
    let g = generate_modified_prompts(&llm, &good, &good, &TuningConfig::default(), (1, 1, 1), None).unwrap();
    assert!(g.prompts.is_empty());
    assert_eq!(g.attempts, 2);
    assert!(g.warning.unwrap().contains("(1,1,1)"));
}

#[test]
fn partial_yield_is_accepted() {
    let llm = TextClient::new(Arc::new(CountingLlm::new(2)));
    let good = [sp("g", 0.5, 0)];
    let g = generate_modified_prompts(&llm, &good, &good, &TuningConfig::default(), (1, 1, 1), None).unwrap();
    assert_eq!(g.prompts.len(), 2);
    assert!(g.warning.is_none());
}

#[test]
fn score_counts_hits() {
    struct Fixed(usize);
    impl VisionClassifyBackend for Fixed {
        fn identity(&self) -> BackendIdentity {
            BackendIdentity::new("fixed", "v1")
        }
        fn classify(&self, image: &ImageRef, _: &str, _: &DecodeParams) -> Result<String, BackendError> {
            let i: usize = image.as_str().rsplit('/').next().unwrap().parse().unwrap();
            Ok(if i < self.0 { "fear".into() } else { "sad".into() })
        }
    }
    let train: Vec<_> = (0..30)
        .map(|i| LabeledSample {
            sample_id: format!("s{i}"),
            image: ImageRef(format!("sim://u/{i}")),
            user_id: "u".into(),
            label: EmotionLabel::Fear,
        })
        .collect();
    let client = VisionClient::new(Arc::new(Fixed(9)));
    let ev = Evaluator::new(&client, DecodeParams::evaluation(), EmotionLabel::ALL.to_vec(), 4).unwrap();
    assert_eq!(ev.score("p", &train).unwrap().accuracy(), 0.3);
    let client = VisionClient::new(Arc::new(Fixed(0)));
    let ev = Evaluator::new(&client, DecodeParams::evaluation(), EmotionLabel::ALL.to_vec(), 4).unwrap();
    assert_eq!(ev.score("p", &train).unwrap().accuracy(), 0.0);
    assert!(matches!(ev.score("p", &[]), Err(Error::Precondition(_))));
}

fn run(config: &TuningConfig, per_call: usize) -> (TuningOutcome, usize) {
    let backend = Arc::new(CountingLlm::new(per_call));
    let llm = TextClient::new(backend.clone());
    let vision = VisionClient::new(Arc::new(CoinVision));
    let ev = Evaluator::new(&vision, config.evaluation.clone(), config.labels.clone(), config.parallelism).unwrap();
    let train = train_set(16);
    let ctx = TuningContext { config, train: &train, llm: &llm, evaluator: &ev, journal: None };
    let out = run_tuning(&ctx).unwrap();
    (out, backend.calls.load(Ordering::SeqCst))
}

#[test]
fn loop_structure_and_pool_bound() {
    let config = small_config();
    let (out, calls) = run(&config, 3);
    assert_eq!(out.modification_requests, 2 * 2 * 3);
    assert_eq!(calls, 2 + 2 * 2 * 3);
    assert_eq!(out.traces.len(), 4);
    assert!(out.pool.len() <= 2 * (3 + 2 * 3 * 2));
    assert_eq!(out.pool.len(), out.scored);
    assert!(out.traces.iter().all(LineageTrace::is_non_decreasing));
    for w in out.pool.entries().windows(2) {
        assert!(w[0].created_seq != w[1].created_seq);
    }
}

#[test]
fn degenerate_loop() {
    let config = TuningConfig { i1: 1, i2: 1, i3: 1, ..TuningConfig::default() };
    let (out, _) = run(&config, 8);
    assert_eq!(out.pool.len(), 6 + 5);
    assert_eq!(out.initial.len(), 6);
}

#[test]
fn runs_are_reproducible() {
    let config = small_config();
    assert_eq!(run(&config, 3).0, run(&config, 3).0);
}

#[test]
fn replay_rebuilds_the_pool() {
    use crate::datastore::journal::{read_journal, Clock, Journal};
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let config = small_config();
    let llm = TextClient::new(Arc::new(CountingLlm::new(3)));
    let vision = VisionClient::new(Arc::new(CoinVision));
    let ev = Evaluator::new(&vision, config.evaluation.clone(), config.labels.clone(), 2).unwrap();
    let train = train_set(16);
    let journal = Journal::create(&path, Clock::Logical).unwrap();
    let ctx = TuningContext { config: &config, train: &train, llm: &llm, evaluator: &ev, journal: Some(&journal) };
    let out = run_tuning(&ctx).unwrap();
    drop(journal);
    let state = journal_replay(&read_journal(&path).unwrap().events).unwrap();
    assert!(state.finished);
    assert_eq!(state.pool, out.pool);
    assert_eq!(journal_replay(&[]).unwrap(), RunState::default());
}
