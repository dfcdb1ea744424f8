//! End-to-end campaigns: synthesize variants, generate their inputs, run
//! them on every (backend, mode) combination, diff against the reference
//! run and persist everything needed to replay any single variant.
//!
//! A campaign directory holds:
//!
//! - `campaign.toml`: the resolved configuration
//! - `profiles/`, `pipelines/`: copies of every profile and pipeline file
//! - `graphs/`, `inputs/`: one graph and one input bundle per variant
//! - `ledger.jsonl`: one deterministic record per variant
//! - `reports.jsonl`: every divergence report, with timings
//! - `summary.json`: the tallies and clusters over the whole ledger

mod ledger;
mod replay;
mod report;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendProfile, Engine, ExecutionTrace, Mode, ProfileError};
use crate::corpus::{generate_seed_corpus, Corpus, CorpusError};
use crate::diff::{
    compare_traces, failure_labels, summarize_parts, CampaignSummary, RunLabel, ToleranceConfig,
};
use crate::digest::sha256_hex;
use crate::graph::{Graph, Tensor};
use crate::inputgen::{generate_inputs, write_bundle, InputPolicy};
use crate::rng::{derive_seed, rng_from_seed};
use crate::synth::{synthesize, SynthesisConfig};

pub use ledger::{
    index_records, read_ledger, read_reports, LedgerRecord, PairOutcome, ReportLine, RunRecord,
};
pub use replay::{regenerate, replay, replay_unchecked};
pub use report::{render_report, report};

pub const CONFIG_FILE: &str = "campaign.toml";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const REPORTS_FILE: &str = "reports.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

const BUILTIN_MODES: [&str; 4] = ["eager", "jit", "full", "compiled"];

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid campaign config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("{path}:{line}: corrupt record: {detail}")]
    Ledger {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("ledger has no record for variant {0}")]
    UnknownVariant(usize),
    #[error("variant {variant} has no run {run}")]
    UnknownRun { variant: usize, run: String },
    #[error("variant {variant} cannot be regenerated: {detail}")]
    Regenerate { variant: usize, detail: String },
    #[error("digest mismatch for variant {variant} on {run}: ledger {expected}, replay {actual}")]
    DigestMismatch {
        variant: usize,
        run: String,
        expected: String,
        actual: String,
    },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    /// Directory of seed graphs. Without one, `seed_corpus` template graphs
    /// are generated from the master seed.
    pub corpus: Option<PathBuf>,
    pub seed_corpus: usize,
    /// Builtin profile names or profile file paths. The first one is the
    /// reference backend.
    pub profiles: Vec<String>,
    /// `eager`, `jit`, `full` or pipeline file paths. Eager always runs.
    pub modes: Vec<String>,
    pub variants: usize,
    pub master_seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub out: PathBuf,
    /// Compare every pair of runs, not only against the reference.
    pub all_pairs: bool,
    /// Also write the full trace of every run under `traces/`.
    pub keep_traces: bool,
    pub synthesis: SynthesisConfig,
    pub inputs: InputPolicy,
    pub tolerance: ToleranceConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            corpus: None,
            seed_corpus: 40,
            profiles: ["reference", "parallel", "relaxed-a", "relaxed-b"]
                .map(String::from)
                .to_vec(),
            modes: vec!["eager".into()],
            variants: 100,
            master_seed: 0,
            workers: 0,
            out: PathBuf::from("campaign-out"),
            all_pairs: false,
            keep_traces: false,
            synthesis: SynthesisConfig {
                threshold: 50,
                ..Default::default()
            },
            inputs: InputPolicy::default(),
            tolerance: ToleranceConfig::default(),
        }
    }
}

impl CampaignConfig {
    pub fn from_toml(text: &str) -> Result<Self, CampaignError> {
        toml::from_str(text).map_err(|e| CampaignError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    /// Reads a config file. Relative paths in it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let text = fs::read_to_string(path).map_err(io(path))?;
        let mut cfg = CampaignConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.corpus = cfg.corpus.map(|c| base.join(c));
        cfg.out = base.join(&cfg.out);
        for p in &mut cfg.profiles {
            if BackendProfile::builtin(p).is_err() {
                *p = base.join(&*p).display().to_string();
            }
        }
        for m in &mut cfg.modes {
            if !BUILTIN_MODES.contains(&m.as_str()) {
                *m = base.join(&*m).display().to_string();
            }
        }
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), CampaignError> {
        let bad = |m: String| Err(CampaignError::Config(m));
        if self.variants == 0 {
            return bad("variants must be >= 1".into());
        }
        if self.profiles.is_empty() {
            return bad("at least one profile is required".into());
        }
        if self.corpus.is_none() && self.seed_corpus == 0 {
            return bad("either a corpus directory or seed_corpus >= 1 is required".into());
        }
        self.synthesis
            .check()
            .map_err(|e| CampaignError::Config(e.to_string()))?;
        self.inputs
            .check()
            .map_err(|e| CampaignError::Config(e.to_string()))?;
        if self.master_seed > i64::MAX as u64 {
            return bad("master_seed must fit in a signed 64-bit integer".into());
        }
        if !(self.tolerance.atol >= 0.0 && self.tolerance.rtol >= 0.0) {
            return bad("tolerances must be non-negative".into());
        }
        Ok(())
    }
}

/// Per-variant seeds: synthesis uses `derive_seed(master, i)`, inputs a
/// seed derived from that one.
pub fn variant_seeds(master: u64, variant: usize) -> (u64, u64) {
    let synth = derive_seed(master, variant as u64);
    (synth, derive_seed(synth, 1))
}

/// Everything a worker needs, resolved once.
pub(crate) struct Plan {
    cfg: CampaignConfig,
    corpus: Corpus,
    engines: Vec<Engine>,
    modes: Vec<Mode>,
}

impl Plan {
    pub(crate) fn new(cfg: &CampaignConfig, base: &Path) -> Result<Self, CampaignError> {
        cfg.check()?;
        let corpus = match &cfg.corpus {
            Some(dir) => Corpus::load_dir(&base.join(dir))?.0,
            None => generate_seed_corpus(&mut rng_from_seed(cfg.master_seed), cfg.seed_corpus),
        };
        if corpus.is_empty() {
            return Err(CorpusError::EmptyCorpus.into());
        }

        let mut engines = Vec::new();
        let mut names = BTreeSet::new();
        for p in &cfg.profiles {
            let profile = match BackendProfile::builtin(p) {
                Ok(p) => p,
                Err(_) => BackendProfile::load(&base.join(p))?,
            };
            if !names.insert(profile.name.clone()) {
                return Err(CampaignError::Config(format!(
                    "duplicate profile name `{}`",
                    profile.name
                )));
            }
            engines.push(Engine::new(profile));
        }

        let mut modes = vec![Mode::Eager];
        let mut labels = BTreeSet::from(["eager".to_string()]);
        for m in &cfg.modes {
            let mode = if BUILTIN_MODES.contains(&m.as_str()) {
                Mode::parse(m)?
            } else {
                Mode::parse(&base.join(m).display().to_string())?
            };
            if labels.insert(mode.label().to_string()) {
                modes.push(mode);
            }
        }
        if engines.len() * modes.len() < 2 {
            return Err(CampaignError::Config(
                "need at least two (backend, mode) combinations to compare".into(),
            ));
        }
        Ok(Plan {
            cfg: cfg.clone(),
            corpus,
            engines,
            modes,
        })
    }

    /// (profile, mode) index pairs in run order; the first is the reference.
    fn runs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for p in 0..self.engines.len() {
            for m in 0..self.modes.len() {
                out.push((p, m));
            }
        }
        out
    }

    /// Candidate/reference run index pairs to compare.
    fn comparisons(&self) -> Vec<(usize, usize)> {
        let runs = self.runs();
        let mut out = Vec::new();
        if self.cfg.all_pairs {
            for b in 0..runs.len() {
                for a in b + 1..runs.len() {
                    out.push((a, b));
                }
            }
            return out;
        }
        for (k, &(p, m)) in runs.iter().enumerate().skip(1) {
            out.push((k, 0));
            // Compiled runs also against eager on their own backend.
            if m != 0 && p != 0 {
                let eager = runs
                    .iter()
                    .position(|&r| r == (p, 0))
                    .expect("eager runs everywhere");
                out.push((k, eager));
            }
        }
        out
    }

    pub(crate) fn regenerate(
        &self,
        variant: usize,
    ) -> Result<(Graph, InputPolicy, Vec<Tensor>), String> {
        let (synth_seed, input_seed) = variant_seeds(self.cfg.master_seed, variant);
        let synth = SynthesisConfig {
            seed: synth_seed,
            ..self.cfg.synthesis.clone()
        };
        let graph = synthesize(&self.corpus, &synth).map_err(|e| format!("synthesis: {e}"))?;
        let policy = InputPolicy {
            seed: input_seed,
            ..self.cfg.inputs.clone()
        };
        let inputs =
            generate_inputs(&graph, &policy).map_err(|e| format!("input generation: {e}"))?;
        Ok((graph, policy, inputs))
    }

    pub(crate) fn engine(&self, backend: &str) -> Option<&Engine> {
        self.engines.iter().find(|e| e.profile().name == backend)
    }

    pub(crate) fn mode(&self, label: &str) -> Option<&Mode> {
        self.modes.iter().find(|m| m.label() == label)
    }
}

/// Totals over a campaign directory, written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub variants: usize,
    pub harness_faults: usize,
    /// Variants whose synthesis or input generation failed.
    pub variant_errors: usize,
    /// SHA-256 of `ledger.jsonl`.
    pub ledger_digest: String,
    pub summary: CampaignSummary,
}

fn variant_name(variant: usize) -> String {
    format!("v{variant:06}")
}

struct VariantOutput {
    record: LedgerRecord,
    reports: Vec<ReportLine>,
}

fn run_variant(plan: &Plan, out: &Path, variant: usize) -> Result<VariantOutput, CampaignError> {
    let (synth_seed, input_seed) = variant_seeds(plan.cfg.master_seed, variant);
    let mut record = LedgerRecord::new(variant, synth_seed, input_seed);
    let (graph, policy, inputs) = match plan.regenerate(variant) {
        Ok(v) => v,
        Err(e) => {
            record.error = Some(e);
            return Ok(VariantOutput {
                record,
                reports: Vec::new(),
            });
        }
    };
    let name = variant_name(variant);
    let graph_file = format!("graphs/{name}.json");
    let inputs_file = format!("inputs/{name}.bin");
    let path = out.join(&graph_file);
    fs::write(&path, graph.to_canonical_json()).map_err(io(&path))?;
    let path = out.join(&inputs_file);
    write_bundle(&path, &policy, &inputs).map_err(|e| CampaignError::Io {
        path: path.clone(),
        source: std::io::Error::other(e.to_string()),
    })?;
    record.graph_id = Some(graph.graph_id());
    record.graph_file = Some(graph_file);
    record.inputs_file = Some(inputs_file);
    record.inputs_id = Some(crate::backend::inputs_digest(&inputs));
    record.op_count = graph.op_count();

    let traces: Vec<ExecutionTrace> = plan
        .runs()
        .into_iter()
        .map(|(p, m)| plan.engines[p].execute_mode(&plan.modes[m], &graph, &inputs))
        .collect();
    for t in &traces {
        record.runs.push(RunRecord {
            backend: t.backend.clone(),
            mode: t.mode.clone(),
            digest: t.digest(),
            failures: failure_labels(t).into_iter().collect(),
        });
        if plan.cfg.keep_traces {
            let path = out.join(format!("traces/{name}-{}-{}.json", t.backend, t.mode));
            let text = serde_json::to_string(t).expect("traces serialize");
            fs::write(&path, text).map_err(io(&path))?;
        }
    }

    let mut reports = Vec::new();
    for (a, b) in plan.comparisons() {
        let (cand, reference) = (&traces[a], &traces[b]);
        let mut report = match compare_traces(&graph, cand, reference, &plan.cfg.tolerance) {
            Ok(r) => r,
            Err(e) => {
                record.error = Some(format!(
                    "{} vs {}: {e}",
                    RunLabel::of(cand),
                    RunLabel::of(reference)
                ));
                continue;
            }
        };
        report.seed = Some(synth_seed);
        for t in [cand, reference] {
            report
                .timings
                .insert(RunLabel::of(t).to_string(), t.total_micros());
        }
        let id = format!("{name}:{}", reports.len());
        record.outcomes.push(PairOutcome {
            id: id.clone(),
            candidate: RunLabel::of(cand),
            reference: RunLabel::of(reference),
            category: report.category(),
            cluster_key: report.cluster_key.clone(),
        });
        reports.push(ReportLine {
            variant,
            id,
            report,
        });
    }
    Ok(VariantOutput { record, reports })
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic with a non-string payload".into()
    }
}

/// Runs one variant with panics contained. A panic becomes a record
/// carrying `harness_fault`; only I/O errors escape.
fn run_isolated(plan: &Plan, out: &Path, variant: usize) -> Result<VariantOutput, CampaignError> {
    match panic::catch_unwind(AssertUnwindSafe(|| run_variant(plan, out, variant))) {
        Ok(r) => r,
        Err(payload) => {
            let (s, i) = variant_seeds(plan.cfg.master_seed, variant);
            let mut record = LedgerRecord::new(variant, s, i);
            record.harness_fault = Some(panic_message(payload));
            Ok(VariantOutput {
                record,
                reports: Vec::new(),
            })
        }
    }
}

/// Copies profiles and pipeline files into the campaign directory and
/// returns the config rewritten to point at the copies.
fn stored_config(plan: &Plan, out: &Path) -> Result<CampaignConfig, CampaignError> {
    let mut cfg = plan.cfg.clone();
    cfg.out = PathBuf::from(".");
    if let Some(c) = &cfg.corpus {
        cfg.corpus = Some(fs::canonicalize(c).map_err(io(c))?);
    }
    cfg.profiles = Vec::new();
    for e in &plan.engines {
        let rel = format!("profiles/{}.json", e.profile().name);
        let path = out.join(&rel);
        fs::write(&path, e.profile().to_json_pretty()).map_err(io(&path))?;
        cfg.profiles.push(rel);
    }
    cfg.modes = Vec::new();
    for src in &plan.cfg.modes {
        if BUILTIN_MODES.contains(&src.as_str()) {
            cfg.modes.push(src.clone());
        } else {
            let rel = format!("pipelines/{}.json", Mode::parse(src)?.label());
            let path = out.join(&rel);
            fs::copy(src, &path).map_err(io(&path))?;
            cfg.modes.push(rel);
        }
    }
    Ok(cfg)
}

/// Runs (or resumes) the campaign described by `cfg` and writes
/// `summary.json`. Variants already in the ledger are skipped, so an
/// interrupted campaign continues where it stopped.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignResult, CampaignError> {
    let plan = Plan::new(cfg, Path::new(""))?;
    let out = cfg.out.clone();
    for dir in ["", "graphs", "inputs", "profiles", "pipelines", "traces"] {
        let d = out.join(dir);
        if dir == "traces" && !cfg.keep_traces {
            continue;
        }
        fs::create_dir_all(&d).map_err(io(&d))?;
    }

    let stored = stored_config(&plan, &out)?;
    // A directory may be resumed, or extended to more variants, but never
    // reused for a different campaign.
    let config_path = out.join(CONFIG_FILE);
    if let Ok(existing) = fs::read_to_string(&config_path) {
        let same = CampaignConfig::from_toml(&existing).is_ok_and(|old| {
            let key = |c: &CampaignConfig| CampaignConfig {
                variants: 0,
                workers: 0,
                ..c.clone()
            };
            key(&old) == key(&stored)
        });
        if !same {
            return Err(CampaignError::Config(format!(
                "{} holds a different campaign; use a fresh output directory",
                out.display()
            )));
        }
    }
    fs::write(&config_path, stored.to_toml()).map_err(io(&config_path))?;

    let ledger_path = out.join(LEDGER_FILE);
    let reports_path = out.join(REPORTS_FILE);
    let done: BTreeSet<usize> = ledger::recover(&ledger_path, &reports_path)?
        .iter()
        .map(|r| r.variant)
        .collect();
    let todo: Vec<usize> = (0..cfg.variants).filter(|v| !done.contains(v)).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CampaignError::Config(e.to_string()))?;
    let chunk = (pool.current_num_threads() * 4).max(16);
    let mut appender = ledger::Appender::open(&ledger_path, &reports_path)?;
    for batch in todo.chunks(chunk) {
        let results: Vec<Result<VariantOutput, CampaignError>> = pool.install(|| {
            batch
                .par_iter()
                .map(|&v| run_isolated(&plan, &out, v))
                .collect()
        });
        for r in results {
            let r = r?;
            appender.append(&r.record, &r.reports)?;
        }
    }

    let result = load_result(&out)?;
    let path = out.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&result).expect("summaries serialize");
    fs::write(&path, text + "\n").map_err(io(&path))?;
    Ok(result)
}

/// Recomputes the campaign totals from the ledger and report files.
pub fn load_result(out: &Path) -> Result<CampaignResult, CampaignError> {
    let ledger_path = out.join(LEDGER_FILE);
    let bytes = fs::read(&ledger_path).map_err(io(&ledger_path))?;
    let records = read_ledger(&ledger_path)?;
    let reports: Vec<_> = read_reports(&out.join(REPORTS_FILE))?
        .into_iter()
        .map(|l| l.report)
        .collect();
    let runs = records.iter().flat_map(|r| {
        r.runs.iter().map(|run| {
            (
                run.label().to_string(),
                run.failures.iter().cloned().collect(),
            )
        })
    });
    let summary = summarize_parts(&reports, runs);
    Ok(CampaignResult {
        variants: records.len(),
        harness_faults: records.iter().filter(|r| r.harness_fault.is_some()).count(),
        variant_errors: records.iter().filter(|r| r.error.is_some()).count(),
        ledger_digest: sha256_hex(&bytes),
        summary,
    })
}
