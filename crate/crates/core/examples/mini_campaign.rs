//! Run a small campaign across the builtin profiles, print its report and
//! replay one recorded run.
//!
//!     cargo run --release --example mini_campaign -- [OUT_DIR]

use graphdiff::campaign::{read_ledger, replay, report, run_campaign, CampaignConfig, LEDGER_FILE};
use graphdiff::synth::SynthesisConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| tmp.path().join("campaign"));
    let cfg = CampaignConfig {
        profiles: ["reference", "parallel", "relaxed-a", "relaxed-b"]
            .map(String::from)
            .to_vec(),
        modes: vec!["eager".into(), "full".into()],
        variants: 50,
        master_seed: 11,
        out,
        synthesis: SynthesisConfig {
            threshold: 30,
            ..Default::default()
        },
        ..Default::default()
    };
    print!("{}", cfg.to_toml());
    println!();

    run_campaign(&cfg)?;
    let (text, _) = report(&cfg.out)?;
    print!("{text}");

    let records = read_ledger(&cfg.out.join(LEDGER_FILE))?;
    let record = &records[records.len() / 2];
    let trace = replay(&cfg.out, record.variant, "relaxed-a", "eager")?;
    println!(
        "replayed variant {} on relaxed-a: digest {} matches",
        record.variant,
        &trace.digest()[..16]
    );
    Ok(())
}
