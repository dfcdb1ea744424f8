use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CampaignError;
use crate::diff::{Category, ClusterKey, DivergenceReport, RunLabel};

/// One run of a variant on a (backend, mode) combination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub backend: String,
    pub mode: String,
    pub digest: String,
    /// Distinct failure labels of the run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

impl RunRecord {
    pub fn label(&self) -> RunLabel {
        RunLabel::new(&self.backend, &self.mode)
    }
}

/// Verdict summary of one comparison; the full report lives in
/// `reports.jsonl` under `id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub id: String,
    pub candidate: RunLabel,
    pub reference: RunLabel,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_key: Option<ClusterKey>,
}

/// One ledger line. Holds nothing timing-dependent, so two runs of the same
/// campaign write identical ledgers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub variant: usize,
    pub synth_seed: u64,
    pub input_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_id: Option<String>,
    /// Relative to the campaign directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs_id: Option<String>,
    #[serde(default)]
    pub op_count: usize,
    #[serde(default)]
    pub runs: Vec<RunRecord>,
    #[serde(default)]
    pub outcomes: Vec<PairOutcome>,
    /// Typed per-variant error (synthesis or input generation).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Panic message caught at the worker boundary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harness_fault: Option<String>,
}

impl LedgerRecord {
    pub fn new(variant: usize, synth_seed: u64, input_seed: u64) -> Self {
        LedgerRecord {
            variant,
            synth_seed,
            input_seed,
            graph_id: None,
            graph_file: None,
            inputs_file: None,
            inputs_id: None,
            op_count: 0,
            runs: Vec::new(),
            outcomes: Vec::new(),
            error: None,
            harness_fault: None,
        }
    }

    pub fn run(&self, backend: &str, mode: &str) -> Option<&RunRecord> {
        self.runs
            .iter()
            .find(|r| r.backend == backend && r.mode == mode)
    }
}

/// A line of `reports.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub variant: usize,
    pub id: String,
    #[serde(flatten)]
    pub report: DivergenceReport,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads complete JSON lines. A trailing line without its newline is an
/// interrupted write: it is ignored and its byte offset returned so the
/// caller can cut it off.
fn read_lines<T: for<'de> Deserialize<'de>>(
    path: &Path,
) -> Result<(Vec<T>, Option<u64>), CampaignError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), None)),
        Err(e) => return Err(io(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut offset = 0u64;
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(io(path))?;
        if n == 0 {
            return Ok((out, None));
        }
        number += 1;
        if !line.ends_with('\n') {
            return Ok((out, Some(offset)));
        }
        let value = serde_json::from_str(line.trim_end()).map_err(|e| CampaignError::Ledger {
            path: path.to_path_buf(),
            line: number,
            detail: e.to_string(),
        })?;
        out.push(value);
        offset += n as u64;
    }
}

fn truncate(path: &Path, len: u64) -> Result<(), CampaignError> {
    let f = OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(io(path))?;
    f.set_len(len).map_err(io(path))
}

pub fn read_ledger(path: &Path) -> Result<Vec<LedgerRecord>, CampaignError> {
    read_lines(path).map(|(v, _)| v)
}

pub fn read_reports(path: &Path) -> Result<Vec<ReportLine>, CampaignError> {
    read_lines(path).map(|(v, _)| v)
}

/// Brings an interrupted campaign directory back to a consistent state:
/// drops a partial trailing ledger line and every report of a variant the
/// ledger does not record. Returns the recorded variants.
pub(super) fn recover(ledger: &Path, reports: &Path) -> Result<Vec<LedgerRecord>, CampaignError> {
    let (records, partial) = read_lines::<LedgerRecord>(ledger)?;
    if let Some(len) = partial {
        truncate(ledger, len)?;
    }
    let done: BTreeSet<usize> = records.iter().map(|r| r.variant).collect();
    let (lines, partial) = read_lines::<ReportLine>(reports)?;
    let kept: Vec<&ReportLine> = lines.iter().filter(|l| done.contains(&l.variant)).collect();
    if partial.is_some() || kept.len() != lines.len() {
        let mut text = String::new();
        for l in kept {
            text.push_str(&serde_json::to_string(l).expect("reports serialize"));
            text.push('\n');
        }
        fs::write(reports, text).map_err(io(reports))?;
    }
    Ok(records)
}

/// The single serialized appender. Reports are written before the ledger
/// line that commits them.
pub(super) struct Appender {
    ledger: File,
    reports: File,
    ledger_path: std::path::PathBuf,
    reports_path: std::path::PathBuf,
}

impl Appender {
    pub fn open(ledger_path: &Path, reports_path: &Path) -> Result<Self, CampaignError> {
        let open = |p: &Path| {
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(io(p))
        };
        Ok(Appender {
            ledger: open(ledger_path)?,
            reports: open(reports_path)?,
            ledger_path: ledger_path.to_path_buf(),
            reports_path: reports_path.to_path_buf(),
        })
    }

    pub fn append(
        &mut self,
        record: &LedgerRecord,
        reports: &[ReportLine],
    ) -> Result<(), CampaignError> {
        let mut text = String::new();
        for r in reports {
            text.push_str(&serde_json::to_string(r).expect("reports serialize"));
            text.push('\n');
        }
        self.reports
            .write_all(text.as_bytes())
            .map_err(io(&self.reports_path))?;
        self.reports.flush().map_err(io(&self.reports_path))?;
        let mut line = serde_json::to_string(record).expect("ledger records serialize");
        line.push('\n');
        self.ledger
            .write_all(line.as_bytes())
            .map_err(io(&self.ledger_path))?;
        self.ledger.flush().map_err(io(&self.ledger_path))
    }
}

/// Ledger records keyed by variant. Later duplicates are ignored.
pub fn index_records(records: &[LedgerRecord]) -> BTreeMap<usize, &LedgerRecord> {
    let mut out = BTreeMap::new();
    for r in records {
        out.entry(r.variant).or_insert(r);
    }
    out
}
