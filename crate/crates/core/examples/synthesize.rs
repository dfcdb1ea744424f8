//! Grow a variant graph from corpus samples and print the merge log.
//!
//!     cargo run --example synthesize -- [THRESHOLD] [SEED]

use graphdiff::corpus::generate_seed_corpus;
use graphdiff::rng::rng_from_seed;
use graphdiff::synth::{synthesize_with_log, SynthesisConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let threshold = args.next().map(|a| a.parse()).transpose()?.unwrap_or(60);
    let seed = args.next().map(|a| a.parse()).transpose()?.unwrap_or(5);

    let corpus = generate_seed_corpus(&mut rng_from_seed(0), 30);
    let cfg = SynthesisConfig {
        threshold,
        seed,
        ..Default::default()
    };
    let (g, log) = synthesize_with_log(&corpus, &cfg)?;
    for (i, step) in log.steps.iter().enumerate() {
        let glue: Vec<String> = step.connections.iter().map(|c| c.glue.join("+")).collect();
        println!(
            "step {i:>2}: +{:>2} ops -> {:>3}  connections {}  glue [{}]",
            step.sampled_ops,
            step.op_count,
            step.connections.len(),
            glue.join(", ")
        );
    }
    println!(
        "{} ops after {} mutations (threshold {threshold}), graph id {}",
        g.op_count(),
        log.mutations.len(),
        g.graph_id()
    );
    Ok(())
}
