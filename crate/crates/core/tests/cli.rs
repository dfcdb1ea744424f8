use std::path::Path;
use std::process::Command;

fn graphdiff(args: &[&str], cwd: &Path) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_graphdiff"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
    )
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(
        root.join("campaign.toml"),
        "profiles = [\"reference\", \"relaxed-a\"]\nvariants = 3\nseed_corpus = 8\nout = \"runs\"\n\n[synthesis]\nthreshold = 10\n",
    )
    .unwrap();

    let (code, text) = graphdiff(&["campaign", "--config", "campaign.toml"], root);
    assert_eq!(code, 0);
    assert!(text.starts_with("3 variants"), "{text}");

    let replay = [
        "replay",
        "--ledger",
        "runs",
        "--variant",
        "1",
        "--backend",
        "relaxed-a",
    ];
    assert_eq!(graphdiff(&replay, root).0, 0);

    // Unknown variant and missing config are plain errors.
    assert_eq!(
        graphdiff(
            &[
                "replay",
                "--ledger",
                "runs",
                "--variant",
                "99",
                "--backend",
                "reference"
            ],
            root
        )
        .0,
        1
    );
    assert_eq!(
        graphdiff(&["campaign", "--config", "missing.toml"], root).0,
        1
    );

    // A recorded digest that no longer matches.
    let ledger = root.join("runs/ledger.jsonl");
    let text = std::fs::read_to_string(&ledger).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut rec: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
    for run in rec["runs"].as_array_mut().unwrap() {
        run["digest"] = "0".repeat(64).into();
    }
    lines[1] = rec.to_string();
    std::fs::write(&ledger, lines.join("\n") + "\n").unwrap();
    assert_eq!(graphdiff(&replay, root).0, 2);
}

#[test]
fn synth_run_diff_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (code, _) = graphdiff(
        &[
            "synth",
            "--count",
            "1",
            "--threshold",
            "15",
            "--seed",
            "4",
            "--out",
            "g",
        ],
        root,
    );
    assert_eq!(code, 0);
    for profile in ["reference", "parallel"] {
        let out = format!("{profile}.json");
        let args = [
            "run",
            "--graph",
            "g/variant-00000.json",
            "--seed",
            "4",
            "--profile",
            profile,
            "--out",
            &out,
        ];
        assert_eq!(graphdiff(&args, root).0, 0);
    }
    let (code, text) = graphdiff(
        &[
            "diff",
            "--traces",
            "parallel.json",
            "reference.json",
            "--graph",
            "g/variant-00000.json",
        ],
        root,
    );
    assert_eq!(code, 0);
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(report["verdicts"].is_array());
}
