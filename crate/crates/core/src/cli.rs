//! Command implementations behind the `emotune` binary.
//!
//! Files written under `work_dir`:
//!
//! ```text
//! journals/<user>.tune.jsonl    tuning journal (resumable)
//! journals/<user>.infer.jsonl   inference journal (resumable)
//! <user>/prompts.tsv            every tuned prompt, best first
//! <user>/trace.tsv              best training accuracy per generation
//! <user>/votes.jsonl            one vote record per test image
//! <user>/confusion.json         confusion matrix of the test set
//! report.jsonl, report.tsv      per-user metrics plus mean and std
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::backend::ImageRef;
use crate::config::{BackendConfig, RunConfig};
use crate::datastore::journal::{read_journal, EventPayload, Journal};
use crate::datastore::{load_manifest, samples_for_user, split, user_ids, write_manifest, LabeledSample};
use crate::emotion::EmotionWheel;
use crate::error::{Error, Result};
use crate::inference::{infer, infer_batch, select_optimal_prompts, VoteRecord};
use crate::metrics::{aggregate, render_table, write_report, ConfusionFile, MetricReport};
use crate::tuner::{journal_replay, run_tuning, Evaluator, LineageTrace, PromptPool, TuningContext};

#[derive(Debug, Parser)]
#[command(name = "emotune", version, about = "Personalized emotion recognition by prompt tuning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override a configuration value, e.g. `--set tuning.i1=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Use this seed for tuning, splitting and simulation.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(&self.config, &self.overrides)?;
        if let Some(seed) = self.seed {
            config.reseed(seed);
        }
        Ok(config)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic manifest for the simulated users.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Manifest destination; defaults to the configured manifest path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tune prompts for one user.
    Tune {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        user: String,
        /// Discard an existing journal instead of resuming it.
        #[arg(long)]
        fresh: bool,
    },
    /// Classify a user's test images (or one image) with the tuned prompts.
    Infer {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        user: String,
        /// Classify a single image instead of the test split.
        #[arg(long, conflicts_with = "manifest")]
        image: Option<String>,
        /// Classify this user's rows of another manifest instead of the test split.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        fresh: bool,
    },
    /// Compute metrics from confusion files.
    Evaluate {
        #[arg(required = true)]
        confusion: Vec<PathBuf>,
        /// Directory for report.jsonl and report.tsv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Take the emotion wheel from this run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Summarize tuning journals without calling any backend.
    Report {
        #[command(flatten)]
        config: ConfigArgs,
        /// Only this user; defaults to every user with a tuning journal.
        #[arg(long)]
        user: Option<String>,
    },
    /// simulate (when needed), tune, infer and evaluate every user.
    Pipeline {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        fresh: bool,
    },
}

pub fn tune_journal_path(config: &RunConfig, user_id: &str) -> PathBuf {
    config.journal_dir().join(format!("{user_id}.tune.jsonl"))
}

pub fn infer_journal_path(config: &RunConfig, user_id: &str) -> PathBuf {
    config.journal_dir().join(format!("{user_id}.infer.jsonl"))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Loads the configured manifest. Relative local image paths are taken
/// relative to the manifest's directory.
pub fn load_samples(path: &Path) -> Result<Vec<LabeledSample>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut samples = load_manifest(path)?;
    for s in &mut samples {
        if !s.image.is_remote() && Path::new(s.image.as_str()).is_relative() {
            s.image = ImageRef(base.join(s.image.as_str()).to_string_lossy().into_owned());
        }
    }
    Ok(samples)
}

fn user_samples(all: &[LabeledSample], user_id: &str) -> Result<Vec<LabeledSample>> {
    let mine = samples_for_user(all, user_id);
    if mine.is_empty() {
        return Err(Error::Input(format!(
            "user {user_id:?} is not in the manifest; available users: {}",
            user_ids(all).join(", ")
        )));
    }
    Ok(mine)
}

fn open_journal(path: &Path, config: &RunConfig, fresh: bool) -> Result<Journal> {
    if fresh {
        Journal::create(path, config.clock)
    } else {
        Journal::open(path, config.clock)
    }
}

pub fn cmd_simulate(config: &RunConfig, out: Option<&Path>) -> Result<(PathBuf, usize)> {
    let samples = config.simulation.dataset()?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| config.manifest.clone());
    write_manifest(&path, &samples)?;
    Ok((path, samples.len()))
}

#[derive(Debug, Clone, Default)]
pub struct TuneOptions {
    pub fresh: bool,
    /// Stop after this many new journal events, as if killed.
    pub max_events: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneSummary {
    pub user_id: String,
    pub pool: PromptPool,
    pub traces: Vec<LineageTrace>,
    pub scored: usize,
    pub train_size: usize,
    pub test_size: usize,
}

pub fn render_prompt_table(pool: &PromptPool) -> String {
    let mut s = String::from("rank\taccuracy\tcorrect\ttotal\ti3\ti2\ti1\torigin\tseq\ttext\n");
    for (i, p) in pool.ranked().iter().enumerate() {
        let origin = match p.lineage.origin {
            crate::tuner::Origin::Initial => "initial",
            crate::tuner::Origin::Modified => "modified",
        };
        let _ = writeln!(
            s,
            "{}\t{:.4}\t{}\t{}\t{}\t{}\t{}\t{origin}\t{}\t{}",
            i + 1,
            p.accuracy,
            p.correct,
            p.total,
            p.lineage.i3,
            p.lineage.i2,
            p.lineage.i1,
            p.created_seq,
            p.text.replace(['\t', '\n'], " ")
        );
    }
    s
}

fn render_trace(traces: &[LineageTrace]) -> String {
    let mut s = String::from("i3\ti2\tgeneration\tbest_accuracy\n");
    for t in traces {
        for (g, b) in t.best.iter().enumerate() {
            let _ = writeln!(s, "{}\t{}\t{g}\t{b:.4}", t.i3, t.i2);
        }
    }
    s
}

pub fn cmd_tune(config: &RunConfig, user_id: &str, options: &TuneOptions) -> Result<TuneSummary> {
    let all = load_samples(&config.manifest)?;
    let mine = user_samples(&all, user_id)?;
    let parts = split(&mine, &config.split)?;
    let cache = config.cache()?;
    let llm = config.text_client(cache.clone());
    let mllm = config.vision_client(cache, &all)?;

    let mut journal = open_journal(&tune_journal_path(config, user_id), config, options.fresh)?;
    if let Some(n) = options.max_events {
        journal = journal.with_event_limit(n);
    }
    journal.ensure(EventPayload::RunStarted {
        user_id: user_id.to_string(),
        config: config.fingerprint(&llm, &mllm),
    })?;
    for w in &parts.warnings {
        journal.ensure(EventPayload::Warning { message: w.clone() })?;
    }
    let evaluator = Evaluator::new(
        &mllm,
        config.tuning.evaluation.clone(),
        config.tuning.labels.clone(),
        config.tuning.parallelism,
    )?
    .with_observer(&journal);
    let ctx = TuningContext {
        config: &config.tuning,
        train: &parts.train,
        llm: &llm,
        evaluator: &evaluator,
        journal: Some(&journal),
    };
    let outcome = run_tuning(&ctx)?;
    let dir = config.user_dir(user_id);
    write_file(&dir.join("prompts.tsv"), render_prompt_table(&outcome.pool).as_bytes())?;
    write_file(&dir.join("trace.tsv"), render_trace(&outcome.traces).as_bytes())?;
    Ok(TuneSummary {
        user_id: user_id.to_string(),
        pool: outcome.pool,
        traces: outcome.traces,
        scored: outcome.scored,
        train_size: parts.train.len(),
        test_size: parts.test.len(),
    })
}

/// P^all of a finished tuning run, read back from its journal.
pub fn tuned_pool(config: &RunConfig, user_id: &str) -> Result<PromptPool> {
    let path = tune_journal_path(config, user_id);
    if !path.exists() {
        return Err(Error::Input(format!(
            "no tuning journal for user {user_id:?} at {}; run `emotune tune --user {user_id}` first",
            path.display()
        )));
    }
    let state = journal_replay(&read_journal(&path)?.events)?;
    if !state.finished {
        return Err(Error::Input(format!(
            "tuning for user {user_id:?} has not finished; rerun `emotune tune --user {user_id}` to resume it"
        )));
    }
    Ok(state.pool)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferSummary {
    pub records: Vec<VoteRecord>,
    pub report: Option<MetricReport>,
    pub warnings: Vec<String>,
}

pub enum InferTarget<'a> {
    TestSplit,
    Manifest(&'a Path),
    Image(&'a str),
}

pub fn cmd_infer(config: &RunConfig, user_id: &str, target: InferTarget<'_>, fresh: bool) -> Result<InferSummary> {
    let pool = tuned_pool(config, user_id)?;
    let all = load_samples(&config.manifest)?;
    let cache = config.cache()?;
    let mllm = config.vision_client(cache, &all)?;
    let evaluator = Evaluator::new(
        &mllm,
        config.tuning.evaluation.clone(),
        config.tuning.labels.clone(),
        config.tuning.parallelism,
    )?;
    let dir = config.user_dir(user_id);

    let samples = match target {
        InferTarget::Image(image) => {
            let (selected, warning) = select_optimal_prompts(&pool, config.tuning.h_vote)?;
            let record = infer(&ImageRef::new(image), &selected, &evaluator)?;
            let mut line = serde_json::to_vec(&record).expect("record encodes");
            line.push(b'\n');
            let path = dir.join("single_votes.jsonl");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .and_then(|mut f| f.write_all(&line))
                .map_err(|e| Error::io(&path, e))?;
            return Ok(InferSummary {
                records: vec![record],
                report: None,
                warnings: warning.into_iter().collect(),
            });
        }
        InferTarget::Manifest(path) => user_samples(&load_samples(path)?, user_id)?,
        InferTarget::TestSplit => split(&user_samples(&all, user_id)?, &config.split)?.test,
    };
    if samples.is_empty() {
        return Err(Error::Input(format!("no test images for user {user_id:?}")));
    }

    let journal = open_journal(&infer_journal_path(config, user_id), config, fresh)?;
    let evaluator = evaluator.with_observer(&journal);
    let batch = infer_batch(user_id, &samples, &pool, config.tuning.h_vote, &evaluator, Some(&journal))?;

    let mut votes = Vec::new();
    for r in &batch.records {
        serde_json::to_writer(&mut votes, r).expect("record encodes");
        votes.push(b'\n');
    }
    write_file(&dir.join("votes.jsonl"), &votes)?;
    let mut confusion = serde_json::to_vec_pretty(&ConfusionFile::new(user_id, &batch.confusion)).expect("encodes");
    confusion.push(b'\n');
    write_file(&dir.join("confusion.json"), &confusion)?;
    let wheel = config.wheel.build()?;
    Ok(InferSummary {
        report: Some(MetricReport::from_confusion(&batch.confusion, &wheel)?),
        records: batch.records,
        warnings: batch.warnings,
    })
}

/// Per-user reports in input order, written to `out/report.jsonl` and
/// `out/report.tsv`. Returns the table text.
pub fn cmd_evaluate(files: &[PathBuf], wheel: &EmotionWheel, out: &Path) -> Result<String> {
    if files.is_empty() {
        return Err(Error::EmptyEvaluation("no confusion files given".into()));
    }
    let mut users = Vec::new();
    for path in files {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ConfusionFile = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let report = MetricReport::from_confusion(&file.to_matrix()?, wheel)?;
        users.push((file.user_id, report));
    }
    let reports: Vec<MetricReport> = users.iter().map(|(_, r)| r.clone()).collect();
    let agg = aggregate(&reports)?;
    let mut jsonl = Vec::new();
    write_report(&mut jsonl, &users, &agg).expect("writing to memory");
    write_file(&out.join("report.jsonl"), &jsonl)?;
    let table = render_table(&users, &agg);
    write_file(&out.join("report.tsv"), table.as_bytes())?;
    Ok(table)
}

pub fn cmd_report(config: &RunConfig, user: Option<&str>) -> Result<String> {
    let users: Vec<String> = match user {
        Some(u) => vec![u.to_string()],
        None => {
            let mut found = Vec::new();
            if let Ok(entries) = fs::read_dir(config.journal_dir()) {
                for e in entries.flatten() {
                    let name = e.file_name().to_string_lossy().into_owned();
                    if let Some(u) = name.strip_suffix(".tune.jsonl") {
                        found.push(u.to_string());
                    }
                }
            }
            found.sort();
            found
        }
    };
    if users.is_empty() {
        return Err(Error::Input(format!(
            "no tuning journals under {}",
            config.journal_dir().display()
        )));
    }
    let mut out = String::new();
    for u in users {
        let path = tune_journal_path(config, &u);
        let contents = read_journal(&path)?;
        if contents.events.is_empty() {
            let _ = writeln!(out, "{u}: no events in {}", path.display());
            continue;
        }
        let state = journal_replay(&contents.events)?;
        let status = if state.finished { "finished" } else { "incomplete" };
        let _ = writeln!(
            out,
            "{u}: {status}, {} prompts in pool, {} scored, {} warnings",
            state.pool.len(),
            state.scored.len(),
            state.warnings.len()
        );
        for p in state.pool.ranked().iter().take(config.tuning.h_vote) {
            let _ = writeln!(out, "  {:.4}  {}", p.accuracy, p.text);
        }
        if !state.pool.is_empty() {
            write_file(
                &config.user_dir(&u).join("prompts.tsv"),
                render_prompt_table(&state.pool).as_bytes(),
            )?;
        }
    }
    Ok(out)
}

/// Every step for every user in the manifest. A simulated classifier with a
/// missing manifest gets one generated first.
pub fn cmd_pipeline(config: &RunConfig, fresh: bool) -> Result<String> {
    if !config.manifest.exists() && config.mllm == BackendConfig::Simulate {
        cmd_simulate(config, None)?;
    }
    let all = load_samples(&config.manifest)?;
    let mut confusion = Vec::new();
    for u in user_ids(&all) {
        cmd_tune(config, &u, &TuneOptions { fresh, max_events: None })?;
        cmd_infer(config, &u, InferTarget::TestSplit, fresh)?;
        confusion.push(config.user_dir(&u).join("confusion.json"));
    }
    cmd_evaluate(&confusion, &config.wheel.build()?, &config.work_dir)
}

/// Runs a parsed command, printing a short summary to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => {
            let config = config.load()?;
            let (path, n) = cmd_simulate(&config, out.as_deref())?;
            println!("wrote {n} samples to {}", path.display());
        }
        Command::Tune { config, user, fresh } => {
            let config = config.load()?;
            let s = cmd_tune(&config, &user, &TuneOptions { fresh, max_events: None })?;
            println!(
                "{}: {} train / {} test, {} prompts scored, pool of {}",
                s.user_id,
                s.train_size,
                s.test_size,
                s.scored,
                s.pool.len()
            );
            for p in s.pool.ranked().iter().take(config.tuning.h_vote) {
                println!("  {:.4}  {}", p.accuracy, p.text);
            }
            println!("prompt table: {}", config.user_dir(&user).join("prompts.tsv").display());
        }
        Command::Infer { config, user, image, manifest, fresh } => {
            let config = config.load()?;
            let target = match (&image, &manifest) {
                (Some(i), _) => InferTarget::Image(i),
                (None, Some(m)) => InferTarget::Manifest(m),
                (None, None) => InferTarget::TestSplit,
            };
            let s = cmd_infer(&config, &user, target, fresh)?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            match s.report {
                Some(r) => {
                    let emc = r.emc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
                    println!(
                        "{user}: {} images, accuracy {:.4}, ECC {:.4}, EMC {emc}",
                        r.n_test, r.accuracy, r.ecc
                    );
                }
                None => println!("{}", serde_json::to_string(&s.records[0]).expect("record encodes")),
            }
        }
        Command::Evaluate { confusion, out, config } => {
            let wheel = match config {
                Some(path) => RunConfig::load(&path, &[])?.wheel.build()?,
                None => EmotionWheel::default(),
            };
            print!("{}", cmd_evaluate(&confusion, &wheel, &out)?);
        }
        Command::Report { config, user } => {
            let config = config.load()?;
            print!("{}", cmd_report(&config, user.as_deref())?);
        }
        Command::Pipeline { config, fresh } => {
            let config = config.load()?;
            print!("{}", cmd_pipeline(&config, fresh)?);
        }
    }
    Ok(())
}
