//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line straight to stdout (bypassing the test harness capture) and then
//! asserts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng as _;

use graphdiff::backend::{
    compile, execute, execute_reference, BackendProfile, CompileFailure, Engine, ErrorKind,
    ExecutionTrace, Flaw, Mode, NodeOutcome, Pipeline, ReductionOrder, UbTable,
};
use graphdiff::campaign::{
    read_ledger, read_reports, replay, run_campaign, variant_seeds, CampaignConfig, CampaignResult,
    LEDGER_FILE, REPORTS_FILE,
};
use graphdiff::corpus::{generate_seed_corpus, Corpus};
use graphdiff::diff::{
    cluster, compare_tensors, localize, Category, ClusterKey, Comparison, DivergenceClass,
    ToleranceConfig,
};
use graphdiff::graph::{
    fixtures, DType, Graph, GraphBuilder, NodeId, NodeKind, Op, OpKind, Tensor, TensorSpec,
    DEFAULT_ELEMENT_CAP,
};
use graphdiff::inputgen::{generate_inputs, InputPolicy};
use graphdiff::rng::{derive_seed, rng_from_seed};
use graphdiff::synth::{
    append_chain, insert_glue, synthesize, synthesize_with_log, SynthesisConfig,
};

fn verdict(id: &str, pass: bool, detail: impl std::fmt::Display) {
    let mut out = std::io::stdout().lock();
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(out, "criterion {id}: {status} ({detail})");
}

fn corpora() -> &'static Vec<Corpus> {
    static C: OnceLock<Vec<Corpus>> = OnceLock::new();
    C.get_or_init(|| {
        [(11, 10), (12, 20), (13, 30), (14, 40), (15, 60)]
            .iter()
            .map(|&(seed, n)| generate_seed_corpus(&mut rng_from_seed(seed), n))
            .collect()
    })
}

fn output_tensor(trace: &ExecutionTrace, out: NodeId) -> Option<&NodeOutcome> {
    trace.by_original_id().get(&out).copied()
}

// ---------------------------------------------------------------- 1

/// The comparison formula evaluated element by element: finite pairs pass
/// when |a - b| <= atol + rtol * |b|; NaN only matches NaN; infinities only
/// match themselves.
fn formula_first_violation(a: &[f64], b: &[f64], tol: &ToleranceConfig) -> Option<usize> {
    (0..a.len()).find(|&i| {
        let (x, y) = (a[i], b[i]);
        let ok = if x.is_nan() || y.is_nan() {
            x.is_nan() && y.is_nan()
        } else if x.is_infinite() || y.is_infinite() {
            x == y
        } else {
            (x - y).abs() <= tol.atol + tol.rtol * y.abs()
        };
        !ok
    })
}

#[test]
fn criterion_1_comparator_matches_formula() {
    let start = Instant::now();
    let mut rng = rng_from_seed(0xC1);
    let mut disagreements = 0;
    let mut divergent = 0;
    let mut exceptional = 0;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=48);
        let single = rng.gen_bool(0.5);
        let tol = if rng.gen_bool(0.5) {
            ToleranceConfig::default()
        } else {
            ToleranceConfig {
                atol: 10f64.powf(rng.gen_range(-9.0..0.0)),
                rtol: 10f64.powf(rng.gen_range(-9.0..0.0)),
            }
        };
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for _ in 0..n {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let y: f64 = sign * 10f64.powf(rng.gen_range(-4.0..6.0));
            let bound = tol.atol + tol.rtol * y.abs();
            let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let x = match rng.gen_range(0..5) {
                0 => y,
                1 => y + s * bound * rng.gen_range(0.0..1.0),
                2 => y + s * bound * rng.gen_range(1.0..4.0),
                3 => y + s * bound * (1.0 + rng.gen_range(-1e-9..1e-9)),
                _ => y * rng.gen_range(0.5..1.5),
            };
            let special = [f64::NAN, f64::INFINITY, f64::NEG_INFINITY];
            let x = if rng.gen_bool(0.04) {
                *special.choose(&mut rng).unwrap()
            } else {
                x
            };
            let y = if rng.gen_bool(0.04) {
                *special.choose(&mut rng).unwrap()
            } else {
                y
            };
            a.push(x);
            b.push(y);
        }
        let (ta, tb) = if single {
            let fa: Vec<f32> = a.iter().map(|&v| v as f32).collect();
            let fb: Vec<f32> = b.iter().map(|&v| v as f32).collect();
            a = fa.iter().map(|&v| f64::from(v)).collect();
            b = fb.iter().map(|&v| f64::from(v)).collect();
            (
                Tensor::from_f32([n], fa).unwrap(),
                Tensor::from_f32([n], fb).unwrap(),
            )
        } else {
            (
                Tensor::from_f64([n], a.clone()).unwrap(),
                Tensor::from_f64([n], b.clone()).unwrap(),
            )
        };
        let expected = formula_first_violation(&a, &b, &tol);
        let got = compare_tensors(&ta, &tb, &tol);
        let agree = match (&got, expected) {
            (Comparison::Equivalent, None) => true,
            (Comparison::Divergent { index, class, .. }, Some(i)) => {
                divergent += 1;
                if *class == DivergenceClass::ExceptionalClass {
                    exceptional += 1;
                }
                *index == i
            }
            _ => false,
        };
        if !agree {
            disagreements += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = disagreements == 0 && elapsed < Duration::from_secs(10);
    verdict(
        "1",
        pass,
        format!(
            "10000 pairs, {disagreements} disagreements, {divergent} divergent ({exceptional} exceptional), {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_synthesis_conformance() {
    let start = Instant::now();
    let mut violations = Vec::new();
    for trial in 0..500u64 {
        let corpus = &corpora()[trial as usize % 5];
        let t = [10, 50, 100][trial as usize % 3];
        let cfg = SynthesisConfig {
            threshold: t,
            seed: derive_seed(0xC2, trial),
            ..Default::default()
        };
        let (g, log) = match synthesize_with_log(corpus, &cfg) {
            Ok(v) => v,
            Err(e) => {
                violations.push(format!("trial {trial}: {e}"));
                continue;
            }
        };
        let n = g.op_count();
        let glue = log.steps.last().map_or(0, |s| s.glue_ops());
        if g.validate().is_err() {
            violations.push(format!("trial {trial}: invalid graph"));
        }
        if n < t || n > t + 12 + glue {
            violations.push(format!("trial {trial}: {n} ops for T={t}, glue {glue}"));
        }
        if log.steps.iter().skip(1).any(|s| s.connections.is_empty()) {
            violations.push(format!("trial {trial}: merge without connection"));
        }
    }
    let elapsed = start.elapsed();
    let pass = violations.is_empty() && elapsed < Duration::from_secs(120);
    verdict(
        "2",
        pass,
        format!(
            "500 syntheses, {} violations, {:.2}s {:?}",
            violations.len(),
            elapsed.as_secs_f64(),
            violations.first()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

fn random_shape(rng: &mut graphdiff::rng::Rng) -> Vec<usize> {
    let rank = rng.gen_range(1..=4);
    (0..rank).map(|_| rng.gen_range(1..=6)).collect()
}

/// Row-major values of `x` transposed over (d0, d1), by coordinate walk.
fn transposed_values(values: &[f64], in_shape: &[usize], d0: usize, d1: usize) -> Vec<f64> {
    let mut out_shape = in_shape.to_vec();
    out_shape.swap(d0, d1);
    let n = values.len();
    let mut out = Vec::with_capacity(n);
    for flat in 0..n {
        let mut rem = flat;
        let mut coord = vec![0; out_shape.len()];
        for d in (0..out_shape.len()).rev() {
            coord[d] = rem % out_shape[d];
            rem /= out_shape[d];
        }
        coord.swap(d0, d1);
        let mut src = 0;
        for d in 0..in_shape.len() {
            src = src * in_shape[d] + coord[d];
        }
        out.push(values[src]);
    }
    out
}

fn tensor_of(dtype: DType, shape: &[usize], values: &[f64]) -> Tensor {
    let shape = shape.to_vec();
    match dtype {
        DType::F64 => Tensor::from_f64(shape, values.to_vec()),
        DType::F32 => Tensor::from_f32(shape, values.iter().map(|&v| v as f32).collect()),
        DType::I64 => Tensor::from_i64(shape, values.iter().map(|&v| v as i64).collect()),
        DType::I32 => Tensor::from_i32(shape, values.iter().map(|&v| v as i32).collect()),
        DType::Bool => Tensor::from_bool(shape, values.iter().map(|&v| v != 0.0).collect()),
    }
    .unwrap()
}

#[test]
fn criterion_3_glue_chains() {
    let start = Instant::now();
    let mut rng = rng_from_seed(0xC3);
    let numeric = [DType::F64, DType::F32, DType::I64, DType::I32];
    let (mut failures, mut sliced, mut padded, mut transposed) = (Vec::new(), 0, 0, 0);
    for trial in 0..1000 {
        let in_shape = random_shape(&mut rng);
        let pd = *numeric.choose(&mut rng).unwrap();
        let cd = if rng.gen_bool(0.7) {
            pd
        } else {
            *numeric.choose(&mut rng).unwrap()
        };
        let consumer = TensorSpec::new(random_shape(&mut rng), cd);

        // Integral, non-zero values survive every cast exactly and stand out
        // from padding.
        let values: Vec<f64> = (0..in_shape.iter().product::<usize>())
            .map(|i| (i + 1) as f64)
            .collect();
        let mut b = GraphBuilder::new();
        let x = b.input(TensorSpec::new(in_shape.clone(), pd));
        let (mut port, mut logical) = (x, values.clone());
        if in_shape.len() >= 2 && rng.gen_bool(0.4) {
            let d0 = rng.gen_range(0..in_shape.len());
            let d1 = (d0 + 1 + rng.gen_range(0..in_shape.len() - 1)) % in_shape.len();
            port = b.op(Op::Transpose { dim0: d0, dim1: d1 }, &[x]).unwrap();
            logical = transposed_values(&values, &in_shape, d0, d1);
            transposed += 1;
        }
        // Validated once the chain and output are attached.
        let mut g = b.graph().clone();
        let producer = g.port_spec(port).unwrap().clone();
        let chain = insert_glue(&producer, &consumer, DEFAULT_ELEMENT_CAP).unwrap();
        let end = append_chain(&mut g, port, &chain);
        g.add_node(NodeKind::Output, vec![end], vec![consumer.clone()]);
        if let Err(e) = g.validate() {
            failures.push(format!("trial {trial}: {e}"));
            continue;
        }

        let trace = execute_reference(&g, &[tensor_of(pd, &in_shape, &values)]);
        let out = g.outputs()[0];
        let Some(NodeOutcome::Ok(t)) = trace.outcome(out) else {
            failures.push(format!("trial {trial}: chain failed"));
            continue;
        };
        if t.spec() != &consumer {
            failures.push(format!("trial {trial}: {:?} != {:?}", t.spec(), consumer));
            continue;
        }
        let (pc, cc) = (logical.len(), consumer.element_count());
        let expected = tensor_of(cd, &[pc], &logical);
        let data = t.to_contiguous();
        let keep = pc.min(cc);
        let leading_ok = (0..keep)
            .all(|i| data.data().get_f64(i).to_bits() == expected.data().get_f64(i).to_bits());
        let pad_ok = (pc..cc).all(|i| data.data().get_f64(i).to_bits() == 0);
        if pc > cc {
            sliced += 1;
        }
        if pc < cc {
            padded += 1;
        }
        if !leading_ok || !pad_ok {
            failures.push(format!("trial {trial}: leading {leading_ok}, pad {pad_ok}"));
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(30);
    verdict(
        "3",
        pass,
        format!(
            "1000 pairs ({sliced} slice, {padded} pad, {transposed} transposed), {} failures, {:.2}s {:?}",
            failures.len(),
            elapsed.as_secs_f64(),
            failures.first()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4

/// Same outcome at every graph output: bitwise-equal tensors or the same
/// failure label.
fn outputs_bitwise_equal(g: &Graph, a: &ExecutionTrace, b: &ExecutionTrace) -> bool {
    g.outputs()
        .iter()
        .all(|&o| match (output_tensor(a, o), output_tensor(b, o)) {
            (Some(NodeOutcome::Ok(x)), Some(NodeOutcome::Ok(y))) => {
                x.to_contiguous().bitwise_eq(&y.to_contiguous())
            }
            (Some(x), Some(y)) => x.tensor().is_none() && y.tensor().is_none(),
            _ => false,
        })
}

#[test]
fn criterion_4_pass_soundness() {
    let start = Instant::now();
    let engine = Engine::reference();
    let dce = Pipeline::from_names("dce", &["DeadCodeElimination"], 64).unwrap();
    let cse = Pipeline::from_names("cse", &["CommonSubexpressionElimination"], 64).unwrap();
    let (mut full_bad, mut jit_bad, mut dce_bad, mut cse_bad, mut failed_runs) = (0, 0, 0, 0, 0);
    let tol = ToleranceConfig::default();
    for i in 0..1000u64 {
        let corpus = &corpora()[i as usize % 5];
        let seed = derive_seed(0xC4, i);
        let g = synthesize(
            corpus,
            &SynthesisConfig {
                threshold: 30,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let inputs = generate_inputs(&g, &InputPolicy::with_seed(seed)).unwrap();
        let eager = engine.execute(&g, &inputs);
        if eager.failures().next().is_some() {
            failed_runs += 1;
        }
        for (pipeline, bad) in [
            (Pipeline::full(), &mut full_bad),
            (Pipeline::jit(), &mut jit_bad),
        ] {
            let compiled = engine.execute_compiled(&pipeline, &g, &inputs);
            let ok = compiled.compile_failure.is_none()
                && graphdiff::diff::compare_traces(&g, &compiled, &eager, &tol)
                    .map(|r| matches!(r.category(), Category::Equivalent | Category::BothFailed))
                    .unwrap_or(false);
            if !ok {
                *bad += 1;
            }
        }
        if !outputs_bitwise_equal(&g, &engine.execute_compiled(&dce, &g, &inputs), &eager) {
            dce_bad += 1;
        }
        if !outputs_bitwise_equal(&g, &engine.execute_compiled(&cse, &g, &inputs), &eager) {
            cse_bad += 1;
        }
    }
    let pass = full_bad + jit_bad + dce_bad + cse_bad == 0;
    verdict(
        "4",
        pass,
        format!(
            "1000 graphs ({failed_runs} with reference failures); non-equivalent full {full_bad}, jit {jit_bad}; \
             non-bitwise dce {dce_bad}, cse {cse_bad}; {:.2}s",
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_5_localization_accuracy() {
    let start = Instant::now();
    let tol = ToleranceConfig::default();
    let mut rng = rng_from_seed(0xC5);
    let (mut trials, mut correct, mut minimal, mut attempts) = (0, 0, 0, 0);
    let mut misses = Vec::new();
    let mut carriers: BTreeMap<String, usize> = BTreeMap::new();
    while trials < 1000 && attempts < 50_000 {
        attempts += 1;
        let corpus = &corpora()[rng.gen_range(0..5)];
        let seed = rng.gen();
        let Ok(g) = synthesize(
            corpus,
            &SynthesisConfig {
                threshold: rng.gen_range(5..=40),
                seed,
                ..Default::default()
            },
        ) else {
            continue;
        };
        let inputs = generate_inputs(&g, &InputPolicy::with_seed(seed)).unwrap();
        let reference = execute_reference(&g, &inputs);

        // Carrier: an operator whose kind occurs once, so the flaw touches
        // exactly one node.
        let mut counts: BTreeMap<OpKind, usize> = BTreeMap::new();
        for n in g.nodes() {
            if let Some(k) = n.op_kind() {
                *counts.entry(k).or_default() += 1;
            }
        }
        let candidates: Vec<NodeId> = g
            .nodes()
            .filter(|n| n.op_kind().is_some_and(|k| counts[&k] == 1))
            .filter(|n| matches!(reference.outcome(n.id), Some(NodeOutcome::Ok(_))))
            .map(|n| n.id)
            .collect();
        let Some(&carrier) = candidates.choose(&mut rng) else {
            continue;
        };
        let kind = g.node(carrier).unwrap().op_kind().unwrap();
        let mut profile = BackendProfile::reference();
        profile.name = "flawed".into();
        profile.flawed_ops.insert(kind, Flaw::Offset { delta: 1.0 });
        let flawed = execute(&profile, &g, &inputs);

        // Only trials where the seeded operator itself diverges count.
        let diverges_here = match (flawed.outcome(carrier), reference.outcome(carrier)) {
            (Some(NodeOutcome::Ok(a)), Some(NodeOutcome::Ok(b))) => {
                !compare_tensors(a, b, &tol).is_equivalent()
            }
            _ => false,
        };
        if !diverges_here {
            continue;
        }
        let Ok(report) = localize(&g, &flawed, &reference, &tol) else {
            continue;
        };
        if report.culprit.is_none() && report.failure.is_some() {
            // The offset only surfaced as a downstream failure.
            continue;
        }
        trials += 1;
        *carriers.entry(kind.to_string()).or_default() += 1;
        if report.culprit == Some(carrier) {
            correct += 1;
        } else if misses.len() < 3 {
            misses.push(format!("{kind} at {carrier}: got {:?}", report.culprit_op));
        }
        let ancestors_equal =
            g.ancestors(carrier)
                .iter()
                .all(|&a| match (flawed.outcome(a), reference.outcome(a)) {
                    (Some(NodeOutcome::Ok(x)), Some(NodeOutcome::Ok(y))) => {
                        compare_tensors(x, y, &tol).is_equivalent()
                    }
                    _ => false,
                });
        if ancestors_equal {
            minimal += 1;
        }
    }
    let pass = trials == 1000 && correct == trials && minimal == trials;
    verdict(
        "5",
        pass,
        format!(
            "{trials} trials ({attempts} attempts, {} carrier kinds), culprit correct {correct}, ancestors equivalent {minimal}, {:.2}s {misses:?}",
            carriers.len(),
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- shared campaign

const MASTER_SEED: u64 = 20_240_601;

fn campaign_config(out: &Path) -> CampaignConfig {
    CampaignConfig {
        seed_corpus: 40,
        profiles: ["reference", "parallel", "relaxed-a", "relaxed-b"]
            .map(String::from)
            .to_vec(),
        modes: vec!["eager".into()],
        variants: 1000,
        master_seed: MASTER_SEED,
        out: out.to_path_buf(),
        synthesis: SynthesisConfig {
            threshold: 50,
            ..Default::default()
        },
        ..Default::default()
    }
}

struct SharedCampaign {
    dir: tempfile::TempDir,
    result: CampaignResult,
    elapsed: Duration,
}

fn shared_campaign() -> &'static SharedCampaign {
    static C: OnceLock<SharedCampaign> = OnceLock::new();
    C.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let start = Instant::now();
        let result = run_campaign(&campaign_config(dir.path())).unwrap();
        SharedCampaign {
            dir,
            result,
            elapsed: start.elapsed(),
        }
    })
}

/// Graph, inputs and reference-profile traces of a campaign variant,
/// regenerated from the master seed without the campaign code.
fn regenerate_variant(variant: usize) -> (Graph, Vec<Tensor>) {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    let corpus = CORPUS.get_or_init(|| generate_seed_corpus(&mut rng_from_seed(MASTER_SEED), 40));
    let (s, i) = variant_seeds(MASTER_SEED, variant);
    let g = synthesize(
        corpus,
        &SynthesisConfig {
            threshold: 50,
            seed: s,
            ..Default::default()
        },
    )
    .unwrap();
    let inputs = generate_inputs(
        &g,
        &InputPolicy {
            seed: i,
            ..Default::default()
        },
    )
    .unwrap();
    (g, inputs)
}

// ---------------------------------------------------------------- 6a

/// Operators a profile rejects, found by reading the graph against the
/// profile's declared exclusions.
fn statically_rejected(g: &Graph, p: &BackendProfile) -> bool {
    g.nodes().any(|n| {
        let Some(kind) = n.op_kind() else {
            return false;
        };
        let specs: Vec<&TensorSpec> = n
            .inputs
            .iter()
            .map(|port| g.port_spec(*port).unwrap())
            .chain(n.outputs.iter())
            .collect();
        p.unsupported_ops.contains(&kind)
            || p.unsupported_dtypes
                .get(&kind)
                .is_some_and(|ds| specs.iter().any(|s| ds.contains(&s.dtype)))
            || (p.contiguity_required_ops.contains(&kind)
                && n.inputs
                    .iter()
                    .any(|port| !g.port_spec(*port).unwrap().contiguous))
    })
}

#[test]
fn criterion_6a_unsupported_tally() {
    let c = shared_campaign();
    let records = read_ledger(&c.dir.path().join(LEDGER_FILE)).unwrap();
    let profile = BackendProfile::relaxed_b();
    let mut runtime = BTreeSet::new();
    let mut scanned = BTreeSet::new();
    for r in &records {
        let run = r.run("relaxed-b", "eager").unwrap();
        if run.failures.iter().any(|f| f == "Unsupported") {
            runtime.insert(r.variant);
        }
        let g = Graph::load(&c.dir.path().join(r.graph_file.as_ref().unwrap())).unwrap();
        if statically_rejected(&g, &profile) {
            scanned.insert(r.variant);
        }
    }
    let pass = records.len() == 1000 && runtime == scanned;
    verdict(
        "6a",
        pass,
        format!(
            "{} variants, {} with Unsupported at runtime, {} by static scan, symmetric difference {}",
            records.len(),
            runtime.len(),
            scanned.len(),
            runtime.symmetric_difference(&scanned).count()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6b

#[test]
fn criterion_6b_bounds_asymmetry() {
    let c = shared_campaign();
    let records = read_ledger(&c.dir.path().join(LEDGER_FILE)).unwrap();
    let relaxed_a = BackendProfile::relaxed_a();
    let (mut oob, mut ok) = (0, 0);
    let mut bad = Vec::new();
    for r in &records {
        let reference = r.run("reference", "eager").unwrap();
        if !reference.failures.iter().any(|f| f == "OutOfBounds") {
            continue;
        }
        oob += 1;
        let outcome = r
            .outcomes
            .iter()
            .find(|o| o.candidate.backend == "relaxed-a" && o.reference.backend == "reference")
            .unwrap();
        // Every node that failed the bounds check on the reference runs on
        // relaxed-a.
        let (g, inputs) = regenerate_variant(r.variant);
        let ref_trace = execute_reference(&g, &inputs);
        let a_trace = execute(&relaxed_a, &g, &inputs);
        let recovered = ref_trace
            .failures()
            .filter(|(_, e)| e.kind == ErrorKind::OutOfBounds)
            .all(|(id, _)| matches!(a_trace.outcome(id), Some(NodeOutcome::Ok(_))));
        let no_oob = !a_trace
            .failures()
            .any(|(_, e)| e.kind == ErrorKind::OutOfBounds);
        if recovered && no_oob && outcome.category == Category::FailureDivergent {
            ok += 1;
        } else if bad.len() < 3 {
            bad.push(format!("variant {}: {:?}", r.variant, outcome.category));
        }
    }
    let pass = oob > 0 && ok == oob;
    verdict(
        "6b",
        pass,
        format!("{oob} variants fail OutOfBounds on reference, {ok} run on relaxed-a as IncomparableFailure {bad:?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6c

#[test]
fn criterion_6c_exceptional_rewriting() {
    let c = shared_campaign();
    let reports = read_reports(&c.dir.path().join(REPORTS_FILE)).unwrap();
    let mut selected = BTreeSet::new();
    for v in 0..1000 {
        let (g, inputs) = regenerate_variant(v);
        let trace = execute_reference(&g, &inputs);
        let nan_into_reshape = g.nodes().filter(|n| n.op_kind() == Some(OpKind::Reshape)).any(|n| {
            matches!(trace.outcome(n.inputs[0].node), Some(NodeOutcome::Ok(t)) if (0..t.len()).any(|i| t.data().get_f64(i).is_nan()))
        });
        if nan_into_reshape {
            selected.insert(v);
        }
    }
    let subset: Vec<_> = reports
        .iter()
        .filter(|l| selected.contains(&l.variant))
        .filter(|l| {
            l.report.backends[0].backend == "relaxed-a"
                && l.report.backends[1].backend == "reference"
        })
        .map(|l| l.report.clone())
        .collect();
    let diverged = subset.iter().filter(|r| !r.is_equivalent()).count();
    let clusters = cluster(&subset);
    let expected = ClusterKey {
        op: "Reshape".into(),
        class: DivergenceClass::ExceptionalClass,
    };
    let top: Vec<String> = clusters
        .iter()
        .take(3)
        .map(|c| format!("{} x{}", c.key, c.count))
        .collect();
    let pass = !selected.is_empty() && clusters.first().is_some_and(|c| c.key == expected);
    verdict(
        "6c",
        pass,
        format!("{} variants carry NaN into Reshape, {diverged} diverge on relaxed-a, top clusters {top:?}", selected.len()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6d

#[test]
fn criterion_6d_scheduling_nondeterminism() {
    let (g, inputs) = fixtures::unpool_duplicate_indices();
    let out = g.outputs()[0];
    let bytes = |t: &ExecutionTrace| match t.outcome(out) {
        Some(NodeOutcome::Ok(x)) => x.to_contiguous().data().to_le_bytes(),
        other => panic!("unpool failed: {other:?}"),
    };
    let mut permuted = BTreeSet::new();
    for seed in 0..100 {
        let mut p = BackendProfile::reference();
        p.reduction_order = ReductionOrder::SeededPermutation { seed };
        permuted.insert(bytes(&execute(&p, &g, &inputs)));
    }
    let engine = Engine::reference();
    let mut sequential = BTreeSet::new();
    for _ in 0..10_000 {
        sequential.insert(bytes(&engine.execute(&g, &inputs)));
    }
    let pass = permuted.len() >= 2 && sequential.len() == 1;
    verdict(
        "6d",
        pass,
        format!(
            "{} distinct outputs over 100 permutation seeds, {} over 10000 sequential runs",
            permuted.len(),
            sequential.len()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6e

#[test]
fn criterion_6e_undefined_behaviour_table() {
    let mut b = GraphBuilder::new();
    let num = b.input(TensorSpec::new([3], DType::I64));
    let den = b.input(TensorSpec::new([3], DType::I64));
    let x = b.input(TensorSpec::new([2], DType::F64));
    let q = b.op(Op::Div, &[num, den]).unwrap();
    let c = b.op(Op::Cast { to: DType::I64 }, &[x]).unwrap();
    b.output(q);
    b.output(c);
    let g = b.finish().unwrap();
    let dividends = [7i64, -3, 0];
    let inputs = vec![
        Tensor::from_i64([3], dividends.to_vec()).unwrap(),
        Tensor::from_i64([3], vec![0; 3]).unwrap(),
        Tensor::from_f64([2], vec![f64::INFINITY, f64::INFINITY]).unwrap(),
    ];
    let ints = |t: &ExecutionTrace, port: NodeId| -> Vec<i64> {
        match t.outcome(port) {
            Some(NodeOutcome::Ok(v)) => {
                (0..v.len()).map(|i| v.data().get_i64(i).unwrap()).collect()
            }
            other => panic!("{other:?}"),
        }
    };
    // Values a vendor table pins down for Div(int, 0) and Cast(+Inf -> int).
    let table: [(&str, UbTable, [i64; 3], i64); 3] = [
        (
            "nvidia-like",
            UbTable::nvidia_like(),
            [4_294_967_295; 3],
            i64::MAX,
        ),
        (
            "amd-like",
            UbTable::amd_like(),
            dividends.map(|d| d + 1),
            -4_294_967_296,
        ),
        ("mac-like", UbTable::mac_like(), [0; 3], 0),
    ];
    let mut rows = Vec::new();
    let mut pass = true;
    for (name, ub, div, cast) in table {
        let mut p = BackendProfile::reference();
        p.ub_table = ub;
        let t = execute(&p, &g, &inputs);
        let (got_div, got_cast) = (ints(&t, q.node), ints(&t, c.node));
        let ok = got_div == div && got_cast.iter().all(|&v| v == cast);
        pass &= ok;
        rows.push(format!("{name} div {got_div:?} cast {}", got_cast[0]));
    }
    // The builtin profiles carry these tables.
    pass &= BackendProfile::reference().ub_table == UbTable::nvidia_like()
        && BackendProfile::parallel().ub_table == UbTable::amd_like()
        && BackendProfile::relaxed_a().ub_table == UbTable::mac_like();
    verdict("6e", pass, rows.join("; "));
    assert!(pass);
}

// ---------------------------------------------------------------- 6f

#[test]
fn criterion_6f_stalled_compilation() {
    let g = fixtures::select_of_relus();
    let p = Pipeline::from_names("adversarial", &["PredicateHoist", "PredicateSink"], 32).unwrap();
    let got = compile(&p, &BackendProfile::reference(), &g);
    let (pass, detail) = match &got {
        Err(CompileFailure::Stalled { iterations, cycle }) => (
            cycle.len() == 2,
            format!(
                "stalled after {iterations} iterations, cycle {}",
                cycle.join(" -> ")
            ),
        ),
        Err(other) => (false, format!("unexpected failure {other}")),
        Ok(_) => (false, "pipeline settled".into()),
    };
    let trace = Engine::reference().execute_mode(&Mode::Compiled(p), &g, &[]);
    let pass = pass && matches!(trace.compile_failure, Some(CompileFailure::Stalled { .. }));
    verdict("6f", pass, detail);
    assert!(pass);
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_7_determinism_and_replay() {
    let first = shared_campaign();
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let second = run_campaign(&campaign_config(dir.path())).unwrap();
    let elapsed = start.elapsed();
    let same_summary = first.result == second;
    let same_files = std::fs::read(first.dir.path().join(LEDGER_FILE)).unwrap()
        == std::fs::read(dir.path().join(LEDGER_FILE)).unwrap();

    let mut rng = rng_from_seed(0xC7);
    let backends = ["reference", "parallel", "relaxed-a", "relaxed-b"];
    let mut matched = 0;
    for _ in 0..20 {
        let v = rng.gen_range(0..1000);
        let b = backends.choose(&mut rng).unwrap();
        if replay(first.dir.path(), v, b, "eager").is_ok() {
            matched += 1;
        }
    }
    let limit = Duration::from_secs(15 * 60);
    let pass =
        same_summary && same_files && matched == 20 && first.elapsed < limit && elapsed < limit;
    verdict(
        "7",
        pass,
        format!(
            "summaries equal {same_summary}, ledgers equal {same_files} (sha256 {}), {matched}/20 replays match, runs {:.1}s and {:.1}s",
            &second.ledger_digest[..16],
            first.elapsed.as_secs_f64(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_robustness() {
    let start = Instant::now();
    let mut rng = rng_from_seed(0xC8);
    let profiles: Vec<BackendProfile> = ["reference", "parallel", "relaxed-a", "relaxed-b"]
        .iter()
        .map(|n| BackendProfile::builtin(n).unwrap())
        .collect();
    let modes = ["eager", "jit", "full"];
    let (mut panics, mut runs, mut failed_runs) = (0, 0, 0);
    while runs < 10_000 {
        let corpus = &corpora()[rng.gen_range(0..5)];
        let seed: u64 = rng.gen();
        let cfg = SynthesisConfig {
            threshold: rng.gen_range(1..=60),
            mutation_prob: rng.gen_range(0.0..=1.0),
            seed,
            ..Default::default()
        };
        let policy = InputPolicy {
            float_range: *[(0.0, 1.0), (-1.0, 1.0), (-1e6, 1e6), (-1e-30, 1e-30)]
                .choose(&mut rng)
                .unwrap(),
            index_range: *[(0, 4), (0, 16), (0, 0)].choose(&mut rng).unwrap(),
            int_range: *[(0, 16), (-16, 16), (0, 0)].choose(&mut rng).unwrap(),
            seed,
        };
        let profile = profiles.choose(&mut rng).unwrap();
        let mode = Mode::parse(modes.choose(&mut rng).unwrap()).unwrap();
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| {
            let g = synthesize(corpus, &cfg).ok()?;
            let inputs = generate_inputs(&g, &policy).ok()?;
            Some(Engine::new(profile.clone()).execute_mode(&mode, &g, &inputs))
        }));
        runs += 1;
        match outcome {
            Err(_) => panics += 1,
            Ok(Some(t)) if t.failures().next().is_some() || t.compile_failure.is_some() => {
                failed_runs += 1
            }
            Ok(_) => {}
        }
    }
    let pass = panics == 0;
    verdict(
        "8",
        pass,
        format!(
            "{runs} executions, {panics} panics, {failed_runs} with typed failures, {:.2}s",
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}
