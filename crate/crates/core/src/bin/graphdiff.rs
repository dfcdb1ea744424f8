use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use graphdiff::backend::{BackendProfile, Engine, ExecutionTrace, Mode};
use graphdiff::campaign::{self, CampaignConfig, CampaignError};
use graphdiff::corpus::{generate_seed_corpus, Corpus};
use graphdiff::diff::{compare_traces, ToleranceConfig};
use graphdiff::graph::Graph;
use graphdiff::inputgen::{generate_inputs, read_bundle, write_bundle, InputPolicy};
use graphdiff::rng::{derive_seed, rng_from_seed};
use graphdiff::synth::{synthesize, SynthesisConfig};

#[derive(Parser)]
#[command(
    name = "graphdiff",
    version,
    about = "Differential testing of tensor graphs across backends"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize variant graphs from a corpus.
    Synth {
        /// Corpus directory; without it a template corpus is generated.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 40)]
        seed_corpus: usize,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 100)]
        threshold: usize,
        #[arg(long, default_value_t = 0.25)]
        mutation_prob: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute one graph on one backend and write the trace as JSON.
    Run {
        #[arg(long)]
        graph: PathBuf,
        /// Input bundle; without it inputs are generated from `--seed`.
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to save generated inputs.
        #[arg(long)]
        save_inputs: Option<PathBuf>,
        /// Builtin profile name or profile file.
        #[arg(long, default_value = "reference")]
        profile: String,
        /// `eager`, `jit`, `full` or a pipeline file.
        #[arg(long, default_value = "eager")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two traces of the same graph; the second is the reference.
    Diff {
        #[arg(long, num_args = 2, value_names = ["CANDIDATE", "REFERENCE"])]
        traces: Vec<PathBuf>,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value = "atol=5e-4,rtol=1e-4")]
        tol: String,
    },
    /// Run or resume a campaign.
    Campaign {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarize a campaign directory.
    Report {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Re-execute one recorded run and check its digest.
    Replay {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        variant: usize,
        #[arg(long)]
        backend: String,
        #[arg(long, default_value = "eager")]
        mode: String,
        /// Also write the replayed trace.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Error(String),
    Mismatch(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Error(e.to_string())
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Failure::Error(format!("{}: {e}", path.display())))
}

fn read_trace(path: &Path) -> Result<ExecutionTrace, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Error(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct SynthManifest {
    seed: u64,
    config: SynthesisConfig,
    variants: Vec<SynthVariant>,
}

#[derive(Serialize)]
struct SynthVariant {
    index: usize,
    seed: u64,
    file: String,
    graph_id: String,
    op_count: usize,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth {
            corpus,
            seed_corpus,
            count,
            threshold,
            mutation_prob,
            seed,
            out,
        } => {
            let corpus = match corpus {
                Some(dir) => Corpus::load_dir(&dir)?.0,
                None => generate_seed_corpus(&mut rng_from_seed(seed), seed_corpus),
            };
            fs::create_dir_all(&out)?;
            let mut manifest = SynthManifest {
                seed,
                config: SynthesisConfig {
                    threshold,
                    mutation_prob,
                    ..Default::default()
                },
                variants: Vec::new(),
            };
            for index in 0..count {
                let cfg = SynthesisConfig {
                    seed: derive_seed(seed, index as u64),
                    ..manifest.config.clone()
                };
                let g = synthesize(&corpus, &cfg)?;
                let file = format!("variant-{index:05}.json");
                g.save(&out.join(&file))?;
                manifest.variants.push(SynthVariant {
                    index,
                    seed: cfg.seed,
                    file,
                    graph_id: g.graph_id(),
                    op_count: g.op_count(),
                });
            }
            write_json(&out.join("synth.manifest.json"), &manifest)?;
            println!("wrote {count} graphs to {}", out.display());
        }
        Command::Run {
            graph,
            inputs,
            seed,
            save_inputs,
            profile,
            mode,
            out,
        } => {
            let g = Graph::load(&graph)?;
            let tensors = match inputs {
                Some(path) => read_bundle(&path)?.tensors,
                None => {
                    let policy = InputPolicy::with_seed(seed);
                    let t = generate_inputs(&g, &policy)?;
                    if let Some(path) = save_inputs {
                        write_bundle(&path, &policy, &t)?;
                    }
                    t
                }
            };
            let engine = Engine::new(BackendProfile::resolve(&profile)?);
            let trace = engine.execute_mode(&Mode::parse(&mode)?, &g, &tensors);
            write_json(&out, &trace)?;
            let failures = trace.failures().count();
            println!(
                "{} {}: {failures} failed nodes, digest {}",
                trace.backend,
                trace.mode,
                trace.digest()
            );
        }
        Command::Diff { traces, graph, tol } => {
            let tol = ToleranceConfig::parse(&tol).map_err(Failure::Error)?;
            let g = Graph::load(&graph)?;
            let a = read_trace(&traces[0])?;
            let b = read_trace(&traces[1])?;
            let report = compare_traces(&g, &a, &b, &tol)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Campaign { config } => {
            let cfg = CampaignConfig::load(&config)?;
            let result = campaign::run_campaign(&cfg)?;
            let (text, _) = campaign::report(&cfg.out)?;
            print!("{text}");
            if result.harness_faults > 0 {
                eprintln!("warning: {} harness faults recorded", result.harness_faults);
            }
        }
        Command::Report { ledger, json } => {
            let (text, result) = campaign::report(&ledger)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&result)?);
            } else {
                print!("{text}");
            }
        }
        Command::Replay {
            ledger,
            variant,
            backend,
            mode,
            out,
        } => match campaign::replay(&ledger, variant, &backend, &mode) {
            Ok(trace) => {
                println!(
                    "variant {variant} {backend}/{mode}: digest {} matches",
                    trace.digest()
                );
                if let Some(path) = out {
                    write_json(&path, &trace)?;
                }
            }
            Err(e @ CampaignError::DigestMismatch { .. }) => {
                return Err(Failure::Mismatch(e.to_string()))
            }
            Err(e) => return Err(e.into()),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Mismatch(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
