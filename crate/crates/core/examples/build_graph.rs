//! Build a small graph with the builder, inspect it, and round-trip it
//! through the canonical JSON form.
//!
//!     cargo run --example build_graph

use graphdiff::corpus::arch_hash;
use graphdiff::graph::{fixtures, DType, Graph, GraphBuilder, NodeKind, Op, TensorSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut b = GraphBuilder::new();
    let x = b.input(TensorSpec::new([4, 8], DType::F32));
    let w = b.input(TensorSpec::new([8, 3], DType::F32));
    let h = b.op(Op::MatMul, &[x, w])?;
    let y = b.op(Op::Relu, &[h])?;
    b.output(y);
    let g = b.finish()?;

    for n in g.nodes() {
        let what = match &n.kind {
            NodeKind::Op(op) => op.kind().to_string(),
            other => format!("{other:?}")
                .split('(')
                .next()
                .unwrap_or_default()
                .to_string(),
        };
        let shape = n
            .outputs
            .first()
            .map(|s| format!("{:?} {}", s.shape, s.dtype))
            .unwrap_or_default();
        println!("{:>3}  {what:<10} {shape}", n.id);
    }

    let bytes = g.to_canonical_json();
    let back = Graph::from_json(&bytes)?;
    assert_eq!(back.to_canonical_json(), bytes);
    println!(
        "graph id {}, {} bytes of canonical JSON",
        g.graph_id(),
        bytes.len()
    );

    // Two graphs with the same structure but different extents share an
    // architecture hash.
    let layer = fixtures::linear_layer();
    println!(
        "fixture: {} ops, arch {}",
        layer.op_count(),
        &arch_hash(&layer)[..16]
    );
    Ok(())
}
