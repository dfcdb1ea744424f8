use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::backend::ExecutionTrace;

use super::localize::Category;
use super::{cluster, ClusterKey, DivergenceReport, RunLabel};

/// Graph-level outcome counts for one candidate/reference pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairTally {
    pub equivalent: usize,
    pub divergent: usize,
    pub failure_divergent: usize,
    pub both_failed: usize,
}

impl PairTally {
    pub fn add(&mut self, category: Category) {
        match category {
            Category::Equivalent => self.equivalent += 1,
            Category::Divergent => self.divergent += 1,
            Category::FailureDivergent => self.failure_divergent += 1,
            Category::BothFailed => self.both_failed += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.equivalent + self.divergent + self.failure_divergent + self.both_failed
    }

    /// Share of comparable graphs (both runs produced outputs) that agreed.
    pub fn agreement(&self) -> Option<f64> {
        let comparable = self.equivalent + self.divergent;
        (comparable > 0).then(|| self.equivalent as f64 / comparable as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub key: ClusterKey,
    pub count: usize,
    pub graph_id: String,
    pub seed: Option<u64>,
    pub backends: [RunLabel; 2],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub comparisons: usize,
    /// Keyed by `candidate vs reference`.
    pub pairs: BTreeMap<String, PairTally>,
    /// Compiled against eager on the same backend.
    pub mode_pairs: BTreeMap<String, PairTally>,
    /// Per run label: failure label to number of graphs that hit it.
    pub failures: BTreeMap<String, BTreeMap<String, usize>>,
    pub clusters: Vec<ClusterSummary>,
}

pub fn pair_label(backends: &[RunLabel; 2]) -> String {
    format!("{} vs {}", backends[0], backends[1])
}

/// Distinct failure labels of one run: node error kinds plus the compile
/// failure, if any.
pub fn failure_labels(trace: &ExecutionTrace) -> BTreeSet<String> {
    let mut labels: BTreeSet<String> = trace.failures().map(|(_, e)| e.kind.to_string()).collect();
    if let Some(f) = &trace.compile_failure {
        labels.insert(f.label().to_string());
    }
    labels
}

/// Tallies reports per pair and traces per run. Each trace counts once per
/// distinct failure label it contains.
pub fn summarize_campaign<'a>(
    reports: &[DivergenceReport],
    traces: impl IntoIterator<Item = &'a ExecutionTrace>,
) -> CampaignSummary {
    summarize_parts(
        reports,
        traces
            .into_iter()
            .map(|t| (RunLabel::of(t).to_string(), failure_labels(t))),
    )
}

/// [`summarize_campaign`] over per-run failure label sets instead of full
/// traces, as stored in a campaign ledger.
pub fn summarize_parts(
    reports: &[DivergenceReport],
    runs: impl IntoIterator<Item = (String, BTreeSet<String>)>,
) -> CampaignSummary {
    let mut summary = CampaignSummary {
        comparisons: reports.len(),
        ..Default::default()
    };
    for r in reports {
        let [a, b] = &r.backends;
        let table = if a.backend == b.backend && a.mode != b.mode {
            &mut summary.mode_pairs
        } else {
            &mut summary.pairs
        };
        table
            .entry(pair_label(&r.backends))
            .or_default()
            .add(r.category());
    }
    for (run, labels) in runs {
        let entry = summary.failures.entry(run).or_default();
        for l in labels {
            *entry.entry(l).or_default() += 1;
        }
    }
    summary.clusters = cluster(reports)
        .into_iter()
        .map(|c| ClusterSummary {
            key: c.key,
            count: c.count,
            graph_id: c.representative.graph_id,
            seed: c.representative.seed,
            backends: c.representative.backends,
        })
        .collect();
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{execute, execute_reference, BackendProfile};
    use crate::diff::{compare_traces, ToleranceConfig};
    use crate::graph::{fixtures, DType, GraphBuilder, Op, Tensor, TensorSpec};

    #[test]
    fn agreement_counts_only_comparable_graphs() {
        let t = PairTally {
            equivalent: 9,
            divergent: 1,
            failure_divergent: 5,
            both_failed: 2,
        };
        assert_eq!(t.agreement(), Some(0.9));
        assert_eq!(PairTally::default().agreement(), None);
    }

    #[test]
    fn unsupported_failures_are_counted_per_graph() {
        // Ten graphs, four of them with two Relus each.
        let mut p = BackendProfile::builtin("reference").unwrap();
        p.name = "norelu".into();
        p.unsupported_ops.insert("Relu".parse().unwrap());
        let mut traces = Vec::new();
        let mut reports = Vec::new();
        for i in 0..10 {
            let mut b = GraphBuilder::new();
            let x = b.input(TensorSpec::new([3], DType::F64));
            let mut y = b.op(Op::Sigmoid, &[x]).unwrap();
            if i < 4 {
                y = b.op(Op::Relu, &[y]).unwrap();
                y = b.op(Op::Relu, &[y]).unwrap();
            }
            b.output(y);
            let g = b.finish().unwrap();
            let inputs = vec![Tensor::from_f64([3], vec![i as f64; 3]).unwrap()];
            let a = execute(&p, &g, &inputs);
            let r = execute_reference(&g, &inputs);
            reports.push(compare_traces(&g, &a, &r, &ToleranceConfig::default()).unwrap());
            traces.push(a);
        }
        let s = summarize_campaign(&reports, &traces);
        assert_eq!(s.failures["norelu/eager"]["Unsupported"], 4);
        let tally = &s.pairs["norelu/eager vs reference/eager"];
        assert_eq!((tally.equivalent, tally.failure_divergent), (6, 4));
        assert_eq!(tally.agreement(), Some(1.0));
        assert_eq!(s.clusters[0].count, 4);
    }

    #[test]
    fn mode_pairs_are_kept_apart() {
        let g = fixtures::linear_layer();
        let t = execute_reference(&g, &fixtures::linear_layer_inputs());
        let mut c = t.clone();
        c.mode = "full".into();
        let r = compare_traces(&g, &c, &t, &ToleranceConfig::default()).unwrap();
        let s = summarize_campaign(&[r], [&t, &c]);
        assert!(s.pairs.is_empty());
        assert_eq!(
            s.mode_pairs["reference/full vs reference/eager"].equivalent,
            1
        );
    }
}
