//! Compile a graph through pass pipelines and watch an adversarial pair of
//! passes stall.
//!
//!     cargo run --example compile_pipeline

use graphdiff::backend::{compile, BackendProfile, Engine, Mode, Pipeline};
use graphdiff::corpus::generate_seed_corpus;
use graphdiff::diff::{compare_traces, ToleranceConfig};
use graphdiff::graph::{fixtures, DType, GraphBuilder, Op, Tensor, TensorSpec};
use graphdiff::inputgen::{generate_inputs, InputPolicy};
use graphdiff::rng::rng_from_seed;
use graphdiff::synth::{synthesize, SynthesisConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Something for each pass: a foldable constant sum, `x + 0`, `* 1`, a
    // repeated Relu and a dead Sigmoid.
    let spec = TensorSpec::new([4], DType::F32);
    let mut b = GraphBuilder::new();
    let x = b.input(spec.clone());
    let zero = b.constant(Tensor::full(&spec, 0.0));
    let one = b.constant(Tensor::full(&spec, 1.0));
    let two = b.constant(Tensor::full(&spec, 2.0));
    let three = b.op(Op::Add, &[one, two])?;
    let x0 = b.op(Op::Add, &[x, zero])?;
    let r1 = b.op(Op::Relu, &[x0])?;
    let r2 = b.op(Op::Relu, &[x0])?;
    let m = b.op(Op::Mul, &[r1, one])?;
    let s = b.op(Op::Add, &[m, r2])?;
    let y = b.op(Op::Mul, &[s, three])?;
    b.op(Op::Sigmoid, &[x])?;
    b.output(y);
    let toy = b.finish()?;

    let profile = BackendProfile::reference();
    for pipeline in [Pipeline::jit(), Pipeline::full()] {
        let compiled = compile(&pipeline, &profile, &toy)?;
        let changed: Vec<String> = compiled
            .log
            .iter()
            .filter(|e| e.changed > 0)
            .map(|e| format!("{}x{}", e.pass, e.changed))
            .collect();
        println!(
            "{:<5} {} -> {} ops  [{}]",
            pipeline.label(),
            toy.op_count(),
            compiled.graph.op_count(),
            changed.join(" ")
        );
    }

    let corpus = generate_seed_corpus(&mut rng_from_seed(0), 20);
    let g = synthesize(
        &corpus,
        &SynthesisConfig {
            threshold: 40,
            seed: 8,
            ..Default::default()
        },
    )?;
    // Compiled and eager runs agree on the reference profile.
    let inputs = generate_inputs(&g, &InputPolicy::with_seed(8))?;
    let engine = Engine::new(profile.clone());
    let eager = engine.execute(&g, &inputs);
    let full = engine.execute_mode(&Mode::parse("full")?, &g, &inputs);
    let report = compare_traces(&g, &full, &eager, &ToleranceConfig::default())?;
    println!("full vs eager: {:?}", report.category());

    let p = Pipeline::from_names("adversarial", &["PredicateHoist", "PredicateSink"], 16)?;
    match compile(&p, &profile, &fixtures::select_of_relus()) {
        Err(e) => println!("adversarial pipeline: {e}"),
        Ok(c) => println!("adversarial pipeline settled after {} entries", c.log.len()),
    }
    Ok(())
}
