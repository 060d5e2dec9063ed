//! End-to-end run: load, match, partition, predict, evaluate, persist.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::BaselineKind;
use crate::config::{MethodSelector, RunConfig};
use crate::context::extract_context;
use crate::corpus::{load_version, Label, VersionSet};
use crate::debate::{run_debate, DebateInput, DebateTranscript};
use crate::diffing::{diff_paths, ChangeSet};
use crate::error::{Error, Result};
use crate::llm::{parse_prediction, ChatRequest, Expect, HttpTransport, LlmClient, ParsePath, RetryPolicy, ScriptedStub, Transport};
use crate::matching::{match_files, partition, EvolutionRecord, Matches, PartitionStats, Subset};
use crate::metrics::{evaluate, EvaluationReport, LabeledRecord, Prediction};
use crate::prompting::{build_method_prompt, sample_exemplars, MethodId};
use crate::TOOL_VERSION;

/// Reply used by the stub when no script is configured.
pub const DEFAULT_STUB_REPLY: &str = "{\"explanation\": \"stub reply\", \"prediction\": \"Benign\"}";

/// An error tagged with the pipeline stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

trait Stage<T> {
    fn stage(self, name: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, name: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage: name, error })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: EvaluationReport,
    pub stats: PartitionStats,
    pub predictions: Vec<Prediction>,
    pub out_dir: PathBuf,
}

pub fn load_pair(cfg: &RunConfig) -> Result<(VersionSet, VersionSet)> {
    let old = cfg.old_csv.as_deref().ok_or_else(|| Error::Config("old_csv is not set".into()))?;
    let new = cfg.new_csv.as_deref().ok_or_else(|| Error::Config("new_csv is not set".into()))?;
    let old = load_version(old, &cfg.columns, &cfg.dataset, &cfg.old_version)?;
    let new = load_version(new, &cfg.columns, &cfg.dataset, &cfg.new_version)?;
    Ok((old, new))
}

/// Stub when `cfg.stub` is set, otherwise an HTTP client configured from the environment.
pub fn build_client(cfg: &RunConfig) -> Result<LlmClient> {
    let transport: Arc<dyn Transport> = if cfg.stub {
        match &cfg.stub_script {
            Some(p) => Arc::new(ScriptedStub::from_file(p)?),
            None => Arc::new(ScriptedStub::constant(DEFAULT_STUB_REPLY)),
        }
    } else {
        Arc::new(HttpTransport::from_env(Some(&cfg.api_base), Duration::from_secs(cfg.timeout_secs))?)
    };
    let policy = RetryPolicy { max_attempts: cfg.max_attempts, ..RetryPolicy::default() };
    Ok(LlmClient::new(transport, policy, cfg.max_in_flight))
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Per-record seed derived from the run seed, stable across runs and record orderings.
pub fn record_seed(seed: u64, record_id: &str) -> u64 {
    seed ^ fnv1a(record_id)
}

/// Keeps at most `caps[s]` records of each subset, chosen with a seeded draw.
/// Input order is preserved.
pub fn apply_caps(indices: &[usize], subsets: &[Subset], caps: &BTreeMap<Subset, usize>, seed: u64) -> Vec<usize> {
    let mut keep = vec![true; indices.len()];
    for (&subset, &cap) in caps {
        let members: Vec<usize> = (0..indices.len()).filter(|&i| subsets[indices[i]] == subset).collect();
        if members.len() <= cap {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(subset.as_str()));
        let chosen = sample(&mut rng, members.len(), cap);
        for &m in &members {
            keep[m] = false;
        }
        for c in chosen.into_iter() {
            keep[members[c]] = true;
        }
    }
    indices.iter().zip(keep).filter(|(_, k)| *k).map(|(&i, _)| i).collect()
}

pub fn record_diff(rec: &EvolutionRecord, context_lines: usize) -> ChangeSet {
    match &rec.old_file {
        Some(old) => diff_paths(&old.path, &rec.new_file.path, &old.source, &rec.new_file.source, context_lines),
        None => diff_paths(&rec.new_file.path, &rec.new_file.path, "", &rec.new_file.source, context_lines),
    }
}

/// Records scored by the selector: every file for baselines, changed-source
/// common files with a non-empty diff for model-based methods.
pub fn select_population(records: &[EvolutionRecord], cfg: &RunConfig, sel: MethodSelector) -> Vec<usize> {
    let eligible: Vec<usize> = match sel {
        MethodSelector::Baseline(_) => (0..records.len()).collect(),
        _ => (0..records.len())
            .filter(|&i| records[i].is_changed_source() && !record_diff(&records[i], 0).is_empty())
            .collect(),
    };
    let subsets: Vec<Subset> = records.iter().map(|r| r.subset).collect();
    apply_caps(&eligible, &subsets, &cfg.caps, cfg.seed)
}

struct Outcome {
    prediction: Prediction,
    transcript: Option<DebateTranscript>,
}

/// A failed record keeps whatever transcript existed when it failed.
type Attempt = std::result::Result<Outcome, (Error, Option<Box<DebateTranscript>>)>;

fn predict_one(
    rec: &EvolutionRecord,
    cfg: &RunConfig,
    sel: MethodSelector,
    old_set: &VersionSet,
    client: &LlmClient,
) -> Attempt {
    let cs = record_diff(rec, cfg.diff_context);
    let id = rec.id().to_string();
    match sel {
        MethodSelector::Baseline(kind) => Ok(Outcome {
            prediction: Prediction { record_id: id, label: Some(kind.predict(rec)), confidence: None, parse_path: None },
            transcript: None,
        }),
        MethodSelector::Method(method) => {
            let ctx = method
                .requires(crate::prompting::InputBlock::LocalContext)
                .then(|| extract_context(&cs, &rec.new_file.source, cfg.debate.depth, cfg.debate.max_lines));
            let exemplars = (method == MethodId::M7).then(|| {
                let defective: Vec<_> = old_set.files().iter().filter(|f| f.label == Label::Defective).collect();
                let exclude = rec.old_file.as_ref().map(|f| f.path.as_str());
                sample_exemplars(&defective, exclude, cfg.exemplars, record_seed(cfg.seed, &id))
            });
            let bundle = build_method_prompt(method, rec, &cs, ctx.as_ref(), exemplars.as_deref()).map_err(|e| (e, None))?;
            let reply = client.complete(&ChatRequest::from_bundle(&cfg.model, &bundle, &id)).map_err(|e| (e, None))?;
            let p = parse_prediction(&reply.text, Expect::JsonShape);
            Ok(Outcome {
                prediction: Prediction { record_id: id, label: p.label, confidence: p.confidence, parse_path: Some(p.parse_path) },
                transcript: None,
            })
        }
        MethodSelector::Debate => {
            let ctx = extract_context(&cs, &rec.new_file.source, cfg.debate.depth, cfg.debate.max_lines);
            let input = DebateInput::new(rec, &cs, &ctx).map_err(|e| (e, None))?;
            match run_debate(&input, &cfg.debate, client) {
                Ok(t) => Ok(Outcome {
                    prediction: Prediction {
                        record_id: id,
                        label: t.verdict.label,
                        confidence: t.verdict.confidence,
                        parse_path: Some(t.verdict.parse_path),
                    },
                    transcript: Some(t),
                }),
                Err(e) => {
                    let partial = DebateTranscript {
                        record_id: id,
                        messages: e.partial,
                        verdict: crate::llm::ParsedPrediction::failed(),
                        judge_reask: None,
                        config: cfg.debate.clone(),
                    };
                    Err((e.error, Some(Box::new(partial))))
                }
            }
        }
    }
}

/// File name for a record's transcript.
pub fn transcript_file_name(record_id: &str) -> String {
    let safe: String = record_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect();
    format!("{safe}-{:08x}.json", fnv1a(record_id) as u32)
}

fn write_transcript(dir: &Path, t: &DebateTranscript, partial: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut name = transcript_file_name(&t.record_id);
    if partial {
        name = name.replace(".json", ".partial.json");
    }
    fs::write(dir.join(name), serde_json::to_string_pretty(t)? + "\n")?;
    Ok(())
}

/// Predicts every record with at most `client.max_in_flight()` records in progress.
///
/// Results come back in input order. The first error (in input order) aborts;
/// transcripts finished before it are still written.
pub fn predict_records(
    records: &[&EvolutionRecord],
    cfg: &RunConfig,
    sel: MethodSelector,
    old_set: &VersionSet,
    client: &LlmClient,
    transcripts_dir: Option<&Path>,
) -> Result<Vec<Prediction>> {
    let slots: Vec<Mutex<Option<Attempt>>> =
        records.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = if sel.uses_llm() { client.max_in_flight().min(records.len()).max(1) } else { 1 };
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= records.len() {
                    break;
                }
                let out = predict_one(records[i], cfg, sel, old_set, client);
                *slots[i].lock().unwrap() = Some(out);
            });
        }
    });

    let mut preds = Vec::with_capacity(records.len());
    let mut first_err = None;
    for slot in slots {
        match slot.into_inner().unwrap().expect("every slot is filled") {
            Ok(o) => {
                if let (Some(dir), Some(t)) = (transcripts_dir, &o.transcript) {
                    write_transcript(dir, t, false)?;
                }
                preds.push(o.prediction);
            }
            Err((e, partial)) => {
                if let (Some(dir), Some(t)) = (transcripts_dir, partial.as_deref()) {
                    write_transcript(dir, t, true)?;
                }
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(preds),
    }
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_matches(path: &Path, matches: &Matches, records: &[EvolutionRecord]) -> Result<()> {
    write_matches_to(fs::File::create(path)?, matches, records)
}

pub fn write_matches_to<W: std::io::Write>(out: W, matches: &Matches, records: &[EvolutionRecord]) -> Result<()> {
    let subsets: BTreeMap<&str, Subset> = records.iter().map(|r| (r.id(), r.subset)).collect();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["new_path", "old_path", "match_kind", "similarity", "subset"])?;
    for m in &matches.entries {
        let subset = subsets.get(m.new_path.as_str()).map(|s| s.as_str()).unwrap_or("");
        w.write_record([
            m.new_path.as_str(),
            m.old_path.as_deref().unwrap_or(""),
            m.kind.as_str(),
            &opt_f64(m.similarity),
            subset,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records(path: &Path, records: &[EvolutionRecord]) -> Result<()> {
    write_records_to(fs::File::create(path)?, records)
}

pub fn write_records_to<W: std::io::Write>(out: W, records: &[EvolutionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["record_id", "old_path", "match_kind", "similarity", "subset", "old_label", "new_label"])?;
    for r in records {
        w.write_record([
            r.id(),
            r.old_file.as_ref().map(|f| f.path.as_str()).unwrap_or(""),
            r.match_kind.as_str(),
            &opt_f64(r.similarity),
            r.subset.as_str(),
            r.old_label().map(|l| l.as_str()).unwrap_or(""),
            r.new_label().as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_label_cell(s: &str) -> Result<Option<Label>> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" => Ok(None),
        "defective" | "1" => Ok(Some(Label::Defective)),
        "benign" | "0" => Ok(Some(Label::Benign)),
        other => Err(Error::Data(format!("unknown label `{other}`"))),
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| Error::Data(format!("missing column `{name}`")))
}

/// Reads `records.csv` back as the ground truth needed for scoring.
pub fn read_records(path: &Path) -> Result<Vec<LabeledRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let h = r.headers()?.clone();
    let (id, subset, label) = (column(&h, "record_id")?, column(&h, "subset")?, column(&h, "new_label")?);
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let truth = parse_label_cell(&row[label])?
            .ok_or_else(|| Error::Data(format!("record `{}` has no label", &row[id])))?;
        out.push(LabeledRecord { id: row[id].to_string(), subset: row[subset].parse()?, truth });
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    write_predictions_to(fs::File::create(path)?, preds)
}

pub fn write_predictions_to<W: std::io::Write>(out: W, preds: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["record_id", "prediction", "confidence", "parse_path"])?;
    for p in preds {
        w.write_record([
            p.record_id.as_str(),
            p.label.map(|l| l.as_str()).unwrap_or(""),
            &opt_f64(p.confidence),
            p.parse_path.map(|pp| pp.as_str()).unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let mut r = csv::Reader::from_path(path)?;
    let h = r.headers()?.clone();
    let (id, pred) = (column(&h, "record_id")?, column(&h, "prediction")?);
    let conf = column(&h, "confidence").ok();
    let pp = column(&h, "parse_path").ok();
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let confidence = match conf.map(|c| row[c].trim()).filter(|c| !c.is_empty()) {
            Some(c) => Some(c.parse::<f64>().map_err(|_| Error::Data(format!("bad confidence `{c}`")))?),
            None => None,
        };
        let parse_path = match pp.map(|c| row[c].trim()).filter(|c| !c.is_empty()) {
            Some(c) => Some(c.parse::<ParsePath>()?),
            None => None,
        };
        out.push(Prediction { record_id: row[id].to_string(), label: parse_label_cell(&row[pred])?, confidence, parse_path });
    }
    Ok(out)
}

pub fn manifest_text(cfg: &RunConfig) -> String {
    format!("tool_version = {TOOL_VERSION}\n{}", cfg.to_kv_string())
}

/// Executes a full run and writes all artifacts under `cfg.out_dir`.
///
/// With `client = None` a client is built from the config when the selector needs one.
pub fn run(cfg: &RunConfig, client: Option<&LlmClient>) -> std::result::Result<RunOutput, StageError> {
    let start = Instant::now();
    cfg.validate().stage("config")?;
    let sel = cfg.selector().stage("config")?;
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out).map_err(Error::from).stage("setup")?;
    fs::write(out.join("manifest.txt"), manifest_text(cfg)).map_err(Error::from).stage("setup")?;

    let (old_set, new_set) = load_pair(cfg).stage("load")?;
    log::info!("loaded {} old and {} new files", old_set.len(), new_set.len());

    let matches = match_files(&old_set, &new_set, &cfg.match_params);
    let (records, stats) = partition(&old_set, &new_set, &matches);
    write_matches(&out.join("matches.csv"), &matches, &records).stage("match")?;
    write_records(&out.join("records.csv"), &records).stage("partition")?;
    log::info!("partition: {}", stats.table_row(&cfg.dataset));

    let population = select_population(&records, cfg, sel);
    let selected: Vec<&EvolutionRecord> = population.iter().map(|&i| &records[i]).collect();
    log::info!("{} record(s) selected for {}", selected.len(), sel.name());

    let owned_client;
    let client = match (client, sel.uses_llm()) {
        (Some(c), _) => c,
        (None, true) => {
            owned_client = build_client(cfg).stage("client")?;
            &owned_client
        }
        (None, false) => {
            owned_client = LlmClient::new(Arc::new(ScriptedStub::constant(DEFAULT_STUB_REPLY)), RetryPolicy::default(), 1);
            &owned_client
        }
    };
    let before = client.stats();
    let transcripts = (sel == MethodSelector::Debate).then(|| out.join("transcripts"));
    let preds = predict_records(&selected, cfg, sel, &old_set, client, transcripts.as_deref()).stage("predict")?;
    write_predictions(&out.join("predictions.csv"), &preds).stage("predict")?;

    let truth: Vec<LabeledRecord> = selected.iter().map(|r| LabeledRecord::from(*r)).collect();
    let mut report = evaluate(&truth, &preds, &sel.name()).stage("evaluate")?;
    let after = client.stats();
    report.timing.wall_secs = start.elapsed().as_secs_f64();
    report.timing.llm_calls = after.calls - before.calls;
    report.timing.llm_attempts = after.attempts - before.attempts;
    report.timing.llm_latency_secs = after.latency_secs - before.latency_secs;
    report.timing.total_tokens = after.total_tokens - before.total_tokens;
    fs::write(out.join("report.txt"), report.to_text()).map_err(Error::from).stage("report")?;
    fs::write(out.join("report.csv"), report.to_csv()).map_err(Error::from).stage("report")?;

    Ok(RunOutput { report, stats, predictions: preds, out_dir: out })
}

/// Convenience used by the `baseline` subcommand: predictions for every record.
pub fn baseline_predictions(records: &[EvolutionRecord], kind: BaselineKind) -> Vec<Prediction> {
    records
        .iter()
        .map(|r| Prediction { record_id: r.id().to_string(), label: Some(kind.predict(r)), confidence: None, parse_path: None })
        .collect()
}
