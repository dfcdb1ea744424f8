use std::fmt::Write as _;
use std::path::Path;

use super::{load_result, read_ledger, CampaignError, CampaignResult, LedgerRecord, LEDGER_FILE};
use crate::diff::PairTally;

/// Clusters listed in the text report.
const TOP_CLUSTERS: usize = 10;

/// Text report and totals of the campaign in `out`, recomputed from the
/// ledger.
pub fn report(out: &Path) -> Result<(String, CampaignResult), CampaignError> {
    let result = load_result(out)?;
    let records = read_ledger(&out.join(LEDGER_FILE))?;
    Ok((render_report(&result, &records, out), result))
}

fn tally_line(out: &mut String, pair: &str, t: &PairTally) {
    let agreement = match t.agreement() {
        Some(a) => format!("agreement {:.1}%", a * 100.0),
        None => "agreement n/a".into(),
    };
    let _ = writeln!(
        out,
        "  {pair}: {agreement} ({} equivalent, {} divergent, {} failure-divergent, {} both failed)",
        t.equivalent, t.divergent, t.failure_divergent, t.both_failed
    );
}

pub fn render_report(result: &CampaignResult, records: &[LedgerRecord], out_dir: &Path) -> String {
    let s = &result.summary;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} variants, {} comparisons, {} harness faults, {} variant errors",
        result.variants, s.comparisons, result.harness_faults, result.variant_errors
    );
    let _ = writeln!(out, "ledger sha256 {}", result.ledger_digest);

    let _ = writeln!(out, "\nagreement against the reference run");
    for (pair, t) in &s.pairs {
        tally_line(&mut out, pair, t);
    }
    if !s.mode_pairs.is_empty() {
        let _ = writeln!(out, "\ncompiled against eager");
        for (pair, t) in &s.mode_pairs {
            tally_line(&mut out, pair, t);
        }
    }

    let _ = writeln!(out, "\nfailures per run (graphs affected)");
    for (run, table) in &s.failures {
        if table.is_empty() {
            let _ = writeln!(out, "  {run}: none");
            continue;
        }
        let _ = writeln!(out, "  {run}");
        for (label, n) in table {
            let _ = writeln!(out, "    {label}: {n}");
        }
    }

    let _ = writeln!(out, "\ntop divergence clusters");
    if s.clusters.is_empty() {
        let _ = writeln!(out, "  none");
    }
    for (rank, c) in s.clusters.iter().take(TOP_CLUSTERS).enumerate() {
        let _ = writeln!(out, "  {}. {} x{}", rank + 1, c.key, c.count);
        let variant = records.iter().find(|r| {
            Some(r.synth_seed) == c.seed && r.graph_id.as_deref() == Some(c.graph_id.as_str())
        });
        if let Some(r) = variant {
            let run = &c.backends[0];
            let _ = writeln!(
                out,
                "     replay: graphdiff replay --ledger {} --variant {} --backend {} --mode {}",
                out_dir.display(),
                r.variant,
                run.backend,
                run.mode
            );
        }
    }
    out
}
