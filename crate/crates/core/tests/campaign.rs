use std::fs;
use std::path::Path;

use graphdiff::campaign::{read_ledger, report, run_campaign, CampaignConfig, LEDGER_FILE};
use graphdiff::graph::fixtures;
use graphdiff::synth::SynthesisConfig;

fn stall_setup(root: &Path) -> CampaignConfig {
    let corpus = root.join("corpus");
    fs::create_dir_all(&corpus).unwrap();
    fixtures::select_of_relus()
        .save(&corpus.join("select.json"))
        .unwrap();
    let pipeline = root.join("adversarial.json");
    fs::write(
        &pipeline,
        r#"{"name": "adversarial", "passes": ["PredicateHoist", "PredicateSink"], "cap": 16}"#,
    )
    .unwrap();
    CampaignConfig {
        corpus: Some(corpus),
        profiles: vec!["reference".into()],
        modes: vec![pipeline.display().to_string()],
        variants: 1,
        out: root.join("out"),
        synthesis: SynthesisConfig {
            threshold: 1,
            mutation_prob: 0.0,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn an_adversarial_pipeline_shows_up_as_a_stall() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = stall_setup(dir.path());
    run_campaign(&cfg).unwrap();
    let records = read_ledger(&cfg.out.join(LEDGER_FILE)).unwrap();
    let run = records[0].run("reference", "adversarial").unwrap();
    assert_eq!(run.failures, vec!["Stalled Compilation".to_string()]);

    let (text, result) = report(&cfg.out).unwrap();
    assert!(
        text.lines().any(|l| l.trim() == "Stalled Compilation: 1"),
        "{text}"
    );
    assert_eq!(result.harness_faults, 0);
}

#[test]
fn campaigns_can_be_extended() {
    let dir = tempfile::tempdir().unwrap();
    let base = CampaignConfig {
        seed_corpus: 10,
        profiles: vec!["reference".into(), "parallel".into()],
        variants: 4,
        master_seed: 3,
        out: dir.path().join("out"),
        synthesis: SynthesisConfig {
            threshold: 12,
            ..Default::default()
        },
        ..Default::default()
    };
    run_campaign(&base).unwrap();
    let extended = run_campaign(&CampaignConfig {
        variants: 9,
        ..base.clone()
    })
    .unwrap();

    let fresh_dir = tempfile::tempdir().unwrap();
    let fresh = run_campaign(&CampaignConfig {
        variants: 9,
        out: fresh_dir.path().join("out"),
        ..base
    })
    .unwrap();
    assert_eq!(extended, fresh);
}
