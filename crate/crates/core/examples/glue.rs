//! Reconcile mismatched tensor specs with glue operator chains.
//!
//!     cargo run --example glue

use graphdiff::backend::execute_reference;
use graphdiff::graph::{
    DType, GraphBuilder, NodeKind, Op, Tensor, TensorSpec, DEFAULT_ELEMENT_CAP,
};
use graphdiff::synth::{append_chain, insert_glue};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pairs = [
        (
            TensorSpec::new([2, 3], DType::F32),
            TensorSpec::new([3, 2], DType::F32),
        ),
        (
            TensorSpec::new([2, 3], DType::F32),
            TensorSpec::new([4], DType::I64),
        ),
        (
            TensorSpec::new([5], DType::I32),
            TensorSpec::new([2, 4], DType::F64),
        ),
    ];
    for (producer, consumer) in &pairs {
        let chain = insert_glue(producer, consumer, DEFAULT_ELEMENT_CAP)?;
        let names: Vec<_> = chain.iter().map(|op| op.kind().to_string()).collect();
        println!(
            "{:?} {} -> {:?} {}: {}",
            producer.shape,
            producer.dtype,
            consumer.shape,
            consumer.dtype,
            names.join(" -> ")
        );
    }

    // A transposed producer is made contiguous before it is reshaped.
    let mut b = GraphBuilder::new();
    let x = b.input(TensorSpec::new([2, 3], DType::F64));
    let t = b.op(Op::Transpose { dim0: 0, dim1: 1 }, &[x])?;
    let mut g = b.graph().clone();
    let target = TensorSpec::new([8], DType::F64);
    let chain = insert_glue(g.port_spec(t).unwrap(), &target, DEFAULT_ELEMENT_CAP)?;
    let end = append_chain(&mut g, t, &chain);
    let out = g.add_node(NodeKind::Output, vec![end], vec![target]);
    g.validate()?;

    let input = Tensor::from_f64([2, 3], vec![1., 2., 3., 4., 5., 6.])?;
    let trace = execute_reference(&g, &[input]);
    let y = trace
        .outcome(out)
        .and_then(|o| o.tensor())
        .expect("chain runs");
    let values: Vec<f64> = (0..y.len()).map(|i| y.data().get_f64(i)).collect();
    println!("transpose then glue: {values:?}");
    Ok(())
}
