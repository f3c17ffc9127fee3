//! Frozen outputs of the simulated backends and end-to-end properties of
//! tuning and voting on top of them.
//!
//! Set `EMOTUNE_BLESS=1` to rewrite `tests/golden/mock_outputs.json` after a
//! deliberate change to the simulator.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use serde_json::{json, Value};

use emotune::backend::{
    parse_prompt_list, BackendError, BackendIdentity, DecodeParams, ImageRef, RetryPolicy, TextGenBackend,
    VisionClassifyBackend, VisionClient,
};
use emotune::datastore::{samples_for_user, split, SplitSpec};
use emotune::inference::{infer, infer_batch, majority_vote};
use emotune::metrics::{aggregate, MetricReport};
use emotune::simkit::{MockLlm, MockMllm, PromptFeatures, SimulationSpec};
use emotune::tuner::{
    render_init_template, render_mod_template, run_tuning, Evaluator, Lineage, Origin, PromptPool, ScoredPrompt,
    TuningConfig, TuningContext,
};
use emotune::{EmotionLabel, ParsedOutput};

fn labels() -> Vec<EmotionLabel> {
    EmotionLabel::ALL.to_vec()
}

fn sp(text: &str, accuracy: f64, seq: u64) -> ScoredPrompt {
    ScoredPrompt {
        text: text.into(),
        accuracy,
        correct: (accuracy * 30.0).round() as u64,
        total: 30,
        lineage: Lineage { i3: 1, i2: 0, i1: 0, origin: Origin::Initial },
        created_seq: seq,
    }
}

const PROMPTS: [&str; 3] = [
    "As a psychologist, name the emotion this photo evokes.",
    "Which emotion does this image evoke? Answer with one word.",
    "Describe the image.",
];

fn spec42() -> SimulationSpec {
    SimulationSpec { seed: 42, noise: 0.05, users: 2, size: 80, imbalance: false }
}

fn current_outputs() -> Value {
    let llm = MockLlm::new(7, labels());
    let init = llm
        .generate(&render_init_template(6, &labels()), &DecodeParams::generation().with_seed(0))
        .unwrap();
    let good = [sp(PROMPTS[0], 0.6, 0), sp(PROMPTS[1], 0.5, 1)];
    let bad = [sp(PROMPTS[2], 0.1, 2)];
    let modified = llm
        .generate(&render_mod_template(&good, &bad, 5), &DecodeParams::generation().with_seed(0))
        .unwrap();

    let spec = spec42();
    let data = spec.dataset().unwrap();
    let mllm = MockMllm::for_manifest(&spec, &data, labels()).unwrap();
    let replies: Vec<String> = PROMPTS
        .iter()
        .map(|p| mllm.classify(&data[0].image, p, &DecodeParams::evaluation()).unwrap())
        .collect();

    let u01 = samples_for_user(&data, "u01");
    let parts = split(&u01, &SplitSpec { train_fraction: 0.3, seed: 42, stratified: true }).unwrap();
    let client = VisionClient::new(Arc::new(mllm));
    let ev = Evaluator::new(&client, DecodeParams::evaluation(), labels(), 4).unwrap();
    let scores: Vec<Value> = PROMPTS
        .iter()
        .map(|p| {
            let s = ev.score(p, &parts.train).unwrap();
            json!([s.correct, s.total])
        })
        .collect();
    let selected: Vec<ScoredPrompt> = PROMPTS.iter().enumerate().map(|(i, p)| sp(p, 0.5, i as u64)).collect();
    let mut record = infer(&parts.test[0].image, &selected, &ev).unwrap();
    record.sample_id = Some(parts.test[0].sample_id.clone());

    json!({
        "llm_init_seed7": init,
        "llm_mod_seed7": modified,
        "mllm_replies_seed42": replies,
        "train_scores_seed42": scores,
        "vote_record_seed42": serde_json::to_string(&record).unwrap(),
    })
}

#[test]
fn mock_outputs_match_frozen_goldens() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/mock_outputs.json");
    let now = current_outputs();
    if std::env::var_os("EMOTUNE_BLESS").is_some() {
        fs::write(&path, serde_json::to_string_pretty(&now).unwrap() + "\n").unwrap();
    }
    let frozen: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    for key in frozen.as_object().unwrap().keys() {
        assert_eq!(now[key], frozen[key], "{key} drifted from the golden");
    }
    assert_eq!(now, frozen);
}

#[test]
fn seed_seven_gives_six_distinct_prompts() {
    let llm = MockLlm::new(7, labels());
    let out = llm
        .generate(&render_init_template(6, &labels()), &DecodeParams::generation().with_seed(0))
        .unwrap();
    let prompts = parse_prompt_list(&out).unwrap();
    assert_eq!(prompts.len(), 6);
    let mut unique = prompts.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), 6);
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn centroid(texts: &[String]) -> Vec<f64> {
    let mut c = vec![0.0; 14];
    for t in texts {
        for (acc, v) in c.iter_mut().zip(PromptFeatures::extract(t, &labels()).vector()) {
            *acc += v / texts.len() as f64;
        }
    }
    c
}

#[test]
fn modified_prompts_sit_closer_to_the_good_list() {
    let llm = MockLlm::new(11, labels());
    let good: Vec<String> = [
        "As a psychologist, which emotion from amusement, awe, contentment, excitement, anger, disgust, fear, sadness does this image evoke? Explain why.",
        "As a psychologist, identify the single emotion the image evokes. Select from amusement, awe, contentment, excitement, anger, disgust, fear, sadness.",
        "As a psychologist, name the emotion this photo evokes. Select from amusement, awe, contentment, excitement, anger, disgust, fear, sadness.",
    ]
    .map(String::from)
    .to_vec();
    let bad: Vec<String> = ["Describe the image.", "What is in this picture?", "Tell me the mood."]
        .map(String::from)
        .to_vec();
    let g: Vec<ScoredPrompt> = good.iter().enumerate().map(|(i, t)| sp(t, 0.6, i as u64)).collect();
    let b: Vec<ScoredPrompt> = bad.iter().enumerate().map(|(i, t)| sp(t, 0.1, 3 + i as u64)).collect();
    let (cg, cb) = (centroid(&good), centroid(&bad));
    let mut closer = 0;
    for call in 0..20 {
        let out = llm
            .generate(&render_mod_template(&g, &b, 5), &DecodeParams::generation().with_seed(call))
            .unwrap();
        let prompts = parse_prompt_list(&out).unwrap();
        assert_eq!(prompts.len(), 5);
        let c = centroid(&prompts);
        if distance(&c, &cg) < distance(&c, &cb) {
            closer += 1;
        }
    }
    assert_eq!(closer, 20);
}

#[test]
fn seed_42_trace_is_non_decreasing() {
    let spec = spec42();
    let data = spec.dataset().unwrap();
    let u01 = samples_for_user(&data, "u01");
    let parts = split(&u01, &SplitSpec { train_fraction: 0.3, seed: 42, stratified: true }).unwrap();
    let config = TuningConfig { seed: 42, ..TuningConfig::default() };
    let llm = emotune::backend::TextClient::new(Arc::new(MockLlm::new(42, labels())));
    let client = VisionClient::new(Arc::new(MockMllm::for_manifest(&spec, &data, labels()).unwrap()));
    let ev = Evaluator::new(&client, DecodeParams::evaluation(), labels(), 4).unwrap();
    let ctx = TuningContext { config: &config, train: &parts.train, llm: &llm, evaluator: &ev, journal: None };
    let outcome = run_tuning(&ctx).unwrap();
    assert_eq!(outcome.traces.len(), 6);
    for t in &outcome.traces {
        assert!(t.is_non_decreasing(), "{t:?}");
    }
    assert!(outcome.pool.len() <= 3 * (6 + 2 * 20 * 5));
}

/// Answers "fear" except for prompts containing "broken", which always fail.
struct FlakyVision;

impl VisionClassifyBackend for FlakyVision {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity::new("test", "flaky")
    }

    fn classify(&self, _: &ImageRef, prompt: &str, _: &DecodeParams) -> Result<String, BackendError> {
        if prompt.contains("broken") {
            Err(BackendError::Transient("connection reset".into()))
        } else if prompt.contains("awe") {
            Ok("awe".into())
        } else {
            Ok("It is fear.".into())
        }
    }
}

#[test]
fn two_failures_out_of_five_vote_over_the_rest() {
    let client = VisionClient::new(Arc::new(FlakyVision)).with_retry(RetryPolicy::immediate(2));
    let ev = Evaluator::new(&client, DecodeParams::evaluation(), labels(), 2).unwrap();
    // the two broken prompts would otherwise outvote fear with awe
    let selected = [
        sp("say awe, broken", 0.9, 0),
        sp("plain", 0.8, 1),
        sp("awe, broken again", 0.7, 2),
        sp("say awe", 0.6, 3),
        sp("another", 0.5, 4),
    ];
    let record = infer(&ImageRef::new("sim://u/x/1"), &selected, &ev).unwrap();
    assert_eq!(record.results.len(), 5);
    let failed: Vec<usize> = (0..5).filter(|&i| record.results[i].error.is_some()).collect();
    assert_eq!(failed, [0, 2]);
    assert!(record.results[0].error.as_ref().unwrap().contains("after 2 attempts"));
    assert_eq!(record.final_output, ParsedOutput::Label(EmotionLabel::Fear));
    let surviving: Vec<ParsedOutput> = [1, 3, 4].iter().map(|&i| record.results[i].output.clone()).collect();
    assert_eq!(majority_vote(&surviving).unwrap(), record.final_output);
}

#[test]
fn batch_warns_about_failed_calls() {
    let client = VisionClient::new(Arc::new(FlakyVision)).with_retry(RetryPolicy::immediate(1));
    let ev = Evaluator::new(&client, DecodeParams::evaluation(), labels(), 2).unwrap();
    let pool: PromptPool = [sp("plain", 0.8, 0), sp("broken", 0.7, 1)].into_iter().collect();
    let samples = vec![emotune::datastore::LabeledSample {
        sample_id: "s1".into(),
        image: ImageRef::new("sim://u/fear/1"),
        user_id: "u".into(),
        label: EmotionLabel::Fear,
    }];
    let out = infer_batch("u", &samples, &pool, 5, &ev, None).unwrap();
    assert_eq!(out.confusion.n_correct(), 1);
    // one warning for the small pool, one for the failed prompt
    assert_eq!(out.warnings.len(), 2, "{:?}", out.warnings);
}

/// Textbook two-pass mean and population deviation over a column, as a
/// spreadsheet would compute them.
fn column_stats(xs: &[f64]) -> (f64, f64) {
    let mut sum = 0.0;
    for x in xs {
        sum += x;
    }
    let mean = sum / xs.len() as f64;
    let mut sq = 0.0;
    for x in xs {
        sq += (x - mean) * (x - mean);
    }
    (mean, (sq / xs.len() as f64).sqrt())
}

#[test]
fn aggregate_of_fifteen_users_matches_recomputation() {
    let reports: Vec<MetricReport> = (0..15u64)
        .map(|i| {
            let n_test = 96;
            let n_correct = 40 + (i * 37) % 50;
            let acc = n_correct as f64 / n_test as f64;
            MetricReport {
                accuracy: acc,
                ecc: acc + (1.0 - acc) * ((i % 4) as f64 + 1.0) / 10.0,
                emc: (i % 5 != 0).then(|| 0.2 + (i as f64) / 40.0),
                n_test,
                n_correct,
            }
        })
        .collect();
    let agg = aggregate(&reports).unwrap();
    let col = |f: &dyn Fn(&MetricReport) -> Option<f64>| -> Vec<f64> { reports.iter().filter_map(f).collect() };
    let (am, asd) = column_stats(&col(&|r| Some(r.accuracy)));
    let (em, esd) = column_stats(&col(&|r| Some(r.ecc)));
    let emc = col(&|r| r.emc);
    let (mm, msd) = column_stats(&emc);
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    assert!(close(agg.accuracy.mean, am) && close(agg.accuracy.std, asd));
    assert!(close(agg.ecc.mean, em) && close(agg.ecc.std, esd));
    let m = agg.emc.unwrap();
    assert!(close(m.mean, mm) && close(m.std, msd));
    assert_eq!((agg.users, agg.emc_users), (15, 12));
}
