//! Apply operator mutations (in-place variants, activation swaps and
//! reformulations) to a graph.
//!
//!     cargo run --example mutate

use graphdiff::corpus::generate_seed_corpus;
use graphdiff::rng::rng_from_seed;
use graphdiff::synth::{mutate, synthesize, MutationTable, SynthesisConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_seed_corpus(&mut rng_from_seed(3), 14);
    let cfg = SynthesisConfig {
        threshold: 30,
        mutation_prob: 0.0,
        seed: 4,
        ..Default::default()
    };
    let g = synthesize(&corpus, &cfg)?;

    let (mutated, applied) = mutate(&g, &MutationTable::default(), 0.5, &mut rng_from_seed(9));
    mutated.validate()?;
    for m in &applied {
        let before = g
            .node(m.node)
            .and_then(|n| n.op_kind())
            .map(|k| k.to_string())
            .unwrap_or_default();
        let after = mutated
            .node(m.node)
            .and_then(|n| n.op_kind())
            .map(|k| k.to_string())
            .unwrap_or_default();
        println!("{:>3}  {:?}: {before} -> {after}", m.node, m.rule);
    }
    println!("{} of {} ops rewritten", applied.len(), g.op_count());
    Ok(())
}
