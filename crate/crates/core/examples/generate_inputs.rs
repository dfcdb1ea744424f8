//! Draw seeded inputs for a graph and save them as a bundle.
//!
//!     cargo run --example generate_inputs

use graphdiff::graph::fixtures;
use graphdiff::inputgen::{
    classify_index_inputs, generate_inputs, read_bundle, write_bundle, InputPolicy,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let g = fixtures::linear_layer();
    let index_inputs = classify_index_inputs(&g);
    let policy = InputPolicy {
        float_range: (-1.0, 1.0),
        seed: 42,
        ..Default::default()
    };
    let inputs = generate_inputs(&g, &policy)?;
    for (id, t) in g.inputs().iter().zip(&inputs) {
        let role = if index_inputs.contains(id) {
            "index"
        } else {
            "data"
        };
        let head: Vec<String> = (0..t.len().min(4))
            .map(|i| format!("{:.3}", t.data().get_f64(i)))
            .collect();
        println!(
            "{id:>3} {role:<5} {:?} {}  [{} ...]",
            t.spec().shape,
            t.spec().dtype,
            head.join(", ")
        );
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("inputs.bin");
    write_bundle(&path, &policy, &inputs)?;
    let back = read_bundle(&path)?;
    assert!(back
        .tensors
        .iter()
        .zip(&inputs)
        .all(|(a, b)| a.bitwise_eq(b)));
    println!(
        "bundle of {} bytes round-trips bitwise",
        std::fs::metadata(&path)?.len()
    );
    Ok(())
}
