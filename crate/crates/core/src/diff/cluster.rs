use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{DivergenceClass, DivergenceReport};

/// Groups reports by the operator where the divergence grew fastest and by
/// what kind of divergence it was.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterKey {
    pub op: String,
    pub class: DivergenceClass,
}

impl fmt::Display for ClusterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.op, self.class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub key: ClusterKey,
    pub count: usize,
    /// Member with the largest culprit MAD.
    pub representative: DivergenceReport,
}

fn tie_key(r: &DivergenceReport) -> (&str, Option<u64>, &super::RunLabel, &super::RunLabel) {
    (&r.graph_id, r.seed, &r.backends[0], &r.backends[1])
}

/// Clusters the reports that carry a key, largest cluster first, ties by
/// key.
pub fn cluster(reports: &[DivergenceReport]) -> Vec<Cluster> {
    let mut groups: BTreeMap<&ClusterKey, (usize, &DivergenceReport)> = BTreeMap::new();
    for r in reports {
        let Some(key) = &r.cluster_key else { continue };
        groups
            .entry(key)
            .and_modify(|(count, rep)| {
                *count += 1;
                let better = r
                    .culprit_mad()
                    .total_cmp(&rep.culprit_mad())
                    .then_with(|| tie_key(rep).cmp(&tie_key(r)))
                    .is_gt();
                if better {
                    *rep = r;
                }
            })
            .or_insert((1, r));
    }
    let mut clusters: Vec<Cluster> = groups
        .into_iter()
        .map(|(key, (count, rep))| Cluster {
            key: key.clone(),
            count,
            representative: rep.clone(),
        })
        .collect();
    clusters.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.key.cmp(&b.key)));
    clusters
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::RunLabel;

    fn report(id: &str, key: Option<(&str, DivergenceClass)>, mad: f64) -> DivergenceReport {
        DivergenceReport {
            graph_id: id.into(),
            seed: None,
            backends: [RunLabel::new("a", "eager"), RunLabel::new("b", "eager")],
            verdicts: vec![],
            culprit: None,
            culprit_op: None,
            mad_chain: vec![crate::diff::ChainStep {
                node: crate::graph::NodeId(0),
                op: "x".into(),
                mad,
                rate: 0.0,
            }],
            failure: None,
            cluster_key: key.map(|(op, class)| ClusterKey {
                op: op.into(),
                class,
            }),
            timings: Default::default(),
        }
    }

    #[test]
    fn sorted_by_count_then_key() {
        use DivergenceClass::*;
        let reports = vec![
            report("1", Some(("Sum", Numeric)), 0.1),
            report("2", Some(("Reshape", ExceptionalClass)), 1.0),
            report("3", Some(("Sum", Numeric)), 0.3),
            report("4", None, 9.0),
            report("5", Some(("Add", Numeric)), 0.2),
        ];
        let c = cluster(&reports);
        assert_eq!(c.len(), 3);
        assert_eq!(c[0].key.op, "Sum");
        assert_eq!(c[0].count, 2);
        assert_eq!(c[0].representative.graph_id, "3");
        assert_eq!(c[1].key.op, "Add");
        assert_eq!(c[2].key.op, "Reshape");
    }

    #[test]
    fn representative_ties_break_by_graph_id() {
        use DivergenceClass::*;
        let reports = vec![
            report("b", Some(("Sum", Numeric)), 0.5),
            report("a", Some(("Sum", Numeric)), 0.5),
        ];
        assert_eq!(cluster(&reports)[0].representative.graph_id, "a");
        let reversed: Vec<_> = reports.into_iter().rev().collect();
        assert_eq!(cluster(&reversed)[0].representative.graph_id, "a");
    }
}
