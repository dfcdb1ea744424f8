use std::fs;
use std::path::Path;

use super::{
    io, read_ledger, CampaignConfig, CampaignError, LedgerRecord, Plan, CONFIG_FILE, LEDGER_FILE,
};
use crate::backend::ExecutionTrace;
use crate::diff::RunLabel;
use crate::graph::{Graph, Tensor};

fn open(out: &Path, variant: usize) -> Result<(Plan, LedgerRecord), CampaignError> {
    let path = out.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    let cfg = CampaignConfig::from_toml(&text)?;
    let plan = Plan::new(&cfg, out)?;
    let record = read_ledger(&out.join(LEDGER_FILE))?
        .into_iter()
        .find(|r| r.variant == variant)
        .ok_or(CampaignError::UnknownVariant(variant))?;
    Ok((plan, record))
}

fn rebuild(plan: &Plan, record: &LedgerRecord) -> Result<(Graph, Vec<Tensor>), CampaignError> {
    let variant = record.variant;
    let (graph, _, inputs) = plan
        .regenerate(variant)
        .map_err(|detail| CampaignError::Regenerate { variant, detail })?;
    let id = graph.graph_id();
    if let Some(expected) = &record.graph_id {
        if *expected != id {
            return Err(CampaignError::DigestMismatch {
                variant,
                run: "graph".into(),
                expected: expected.clone(),
                actual: id,
            });
        }
    }
    Ok((graph, inputs))
}

/// Regenerates the graph and inputs of a recorded variant from its seeds
/// and checks the graph against the ledger.
pub fn regenerate(out: &Path, variant: usize) -> Result<(Graph, Vec<Tensor>), CampaignError> {
    let (plan, record) = open(out, variant)?;
    rebuild(&plan, &record)
}

/// Re-executes one recorded run. Returns the trace and the digest the
/// ledger holds for it, without comparing them.
pub fn replay_unchecked(
    out: &Path,
    variant: usize,
    backend: &str,
    mode: &str,
) -> Result<(ExecutionTrace, String), CampaignError> {
    let (plan, record) = open(out, variant)?;
    let unknown = || CampaignError::UnknownRun {
        variant,
        run: RunLabel::new(backend, mode).to_string(),
    };
    let expected = record
        .run(backend, mode)
        .ok_or_else(unknown)?
        .digest
        .clone();
    let engine = plan.engine(backend).ok_or_else(unknown)?;
    let mode = plan.mode(mode).ok_or_else(unknown)?;
    let (graph, inputs) = rebuild(&plan, &record)?;
    Ok((engine.execute_mode(mode, &graph, &inputs), expected))
}

/// Re-executes one recorded run and fails with
/// [`CampaignError::DigestMismatch`] unless its digest equals the ledger's.
pub fn replay(
    out: &Path,
    variant: usize,
    backend: &str,
    mode: &str,
) -> Result<ExecutionTrace, CampaignError> {
    let (trace, expected) = replay_unchecked(out, variant, backend, mode)?;
    let actual = trace.digest();
    if actual != expected {
        return Err(CampaignError::DigestMismatch {
            variant,
            run: RunLabel::of(&trace).to_string(),
            expected,
            actual,
        });
    }
    Ok(trace)
}
