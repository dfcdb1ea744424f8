//! Seed an offset into one operator kind, compare against the reference and
//! localize the culprit from the per-node MAD chain.
//!
//!     cargo run --example localize_divergence

use graphdiff::backend::{execute, execute_reference, BackendProfile, Flaw};
use graphdiff::corpus::generate_seed_corpus;
use graphdiff::diff::{cluster, compare_traces, ToleranceConfig};
use graphdiff::graph::OpKind;
use graphdiff::inputgen::{generate_inputs, InputPolicy};
use graphdiff::rng::rng_from_seed;
use graphdiff::synth::{synthesize, SynthesisConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_seed_corpus(&mut rng_from_seed(0), 20);
    let mut flawed = BackendProfile::reference();
    flawed.name = "flawed".into();
    flawed
        .flawed_ops
        .insert(OpKind::Sigmoid, Flaw::Offset { delta: 0.01 });
    flawed
        .flawed_ops
        .insert(OpKind::MatMul, Flaw::Offset { delta: 0.01 });

    let tol = ToleranceConfig::default();
    let mut reports = Vec::new();
    for seed in 0..30 {
        let cfg = SynthesisConfig {
            threshold: 25,
            seed,
            ..Default::default()
        };
        let g = synthesize(&corpus, &cfg)?;
        let inputs = generate_inputs(&g, &InputPolicy::with_seed(seed))?;
        let report = compare_traces(
            &g,
            &execute(&flawed, &g, &inputs),
            &execute_reference(&g, &inputs),
            &tol,
        )?;
        if let (true, Some(culprit)) = (reports.is_empty(), report.culprit) {
            println!(
                "variant {seed}: culprit {} at {culprit}",
                report.culprit_op.as_deref().unwrap_or("?"),
            );
            for step in &report.mad_chain {
                println!(
                    "  {:>4} {:<12} mad {:>10.3e}  rate {:>10.3e}",
                    step.node, step.op, step.mad, step.rate
                );
            }
        }
        reports.push(report);
    }
    println!("clusters over {} comparisons:", reports.len());
    for c in cluster(&reports) {
        println!("  {} x{}", c.key, c.count);
    }
    Ok(())
}
