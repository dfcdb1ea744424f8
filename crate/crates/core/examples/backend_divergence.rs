//! Run the same graph on every builtin backend profile and show where they
//! part ways: bounds checks, undefined-behaviour tables and reduction order.
//!
//!     cargo run --example backend_divergence

use graphdiff::backend::{execute, BackendProfile, ReductionOrder};
use graphdiff::graph::{fixtures, DType, GraphBuilder, Op, Tensor, TensorSpec};

const PROFILES: [&str; 4] = ["reference", "parallel", "relaxed-a", "relaxed-b"];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Integer division by zero and a float to integer cast of +Inf.
    let mut b = GraphBuilder::new();
    let n = b.input(TensorSpec::new([2], DType::I64));
    let d = b.input(TensorSpec::new([2], DType::I64));
    let x = b.input(TensorSpec::new([1], DType::F64));
    let q = b.op(Op::Div, &[n, d])?;
    let c = b.op(Op::Cast { to: DType::I64 }, &[x])?;
    b.output(q);
    b.output(c);
    let g = b.finish()?;
    let inputs = [
        Tensor::from_i64([2], vec![7, -3])?,
        Tensor::from_i64([2], vec![0, 0])?,
        Tensor::from_f64([1], vec![f64::INFINITY])?,
    ];
    println!("7 / 0, -3 / 0 and (int) +inf:");
    for name in PROFILES {
        let trace = execute(&BackendProfile::builtin(name)?, &g, &inputs);
        let show = |id| match trace.outcome(id).and_then(|o| o.tensor()) {
            Some(t) => format!(
                "{:?}",
                (0..t.len())
                    .map(|i| t.data().get_i64(i).unwrap())
                    .collect::<Vec<_>>()
            ),
            None => trace.outcome(id).map(|o| o.label()).unwrap_or_default(),
        };
        println!("  {name:<10} {} {}", show(q.node), show(c.node));
    }

    // Out-of-range gather indices.
    let (g, inputs) = (fixtures::linear_layer(), fixtures::linear_layer_inputs());
    println!("fixture graph:");
    for name in PROFILES {
        let trace = execute(&BackendProfile::builtin(name)?, &g, &inputs);
        let failures: Vec<String> = trace
            .failures()
            .map(|(id, e)| format!("{id} {}", e.kind.name()))
            .collect();
        println!(
            "  {name:<10} digest {}  failures {failures:?}",
            &trace.digest()[..12]
        );
    }

    // Scatter with duplicate indices depends on write order.
    let (g, inputs) = fixtures::unpool_duplicate_indices();
    let out = g.outputs()[0];
    let mut seen = std::collections::BTreeSet::new();
    for seed in 0..20 {
        let mut p = BackendProfile::reference();
        p.reduction_order = ReductionOrder::SeededPermutation { seed };
        let t = execute(&p, &g, &inputs);
        seen.insert(
            t.outcome(out)
                .and_then(|o| o.tensor())
                .unwrap()
                .data()
                .to_le_bytes(),
        );
    }
    println!(
        "unpool with duplicate indices: {} distinct results over 20 schedules",
        seen.len()
    );
    Ok(())
}
