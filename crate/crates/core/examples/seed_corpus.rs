//! Generate a template corpus, write it to a directory, load it back and
//! sample connected subgraphs from it.
//!
//!     cargo run --example seed_corpus -- [DIR]

use graphdiff::corpus::{generate_seed_corpus, sample_subgraph, Corpus};
use graphdiff::rng::rng_from_seed;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let dir = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| tmp.path().to_path_buf());

    let corpus = generate_seed_corpus(&mut rng_from_seed(1), 24);
    let files = corpus.save_dir(&dir)?;
    println!("wrote {} graphs to {}", files.len(), dir.display());

    let (loaded, stats) = Corpus::load_dir(&dir)?;
    println!("loaded {} entries ({stats:?})", loaded.len());
    for e in loaded.entries().take(5) {
        println!("  {:<20} {:>3} ops", e.origin, e.graph.op_count());
    }

    let mut rng = rng_from_seed(2);
    for _ in 0..3 {
        let s = sample_subgraph(&loaded, &mut rng, 8)?;
        println!(
            "sample of {}: {} ops, {} inputs, {} outputs",
            &s.source[..12],
            s.graph.op_count(),
            s.graph.inputs().len(),
            s.graph.outputs().len()
        );
    }
    Ok(())
}
