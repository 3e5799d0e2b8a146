use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use famas::abstraction::{load_raw_logs, logs_to_jsonl, parse_primitives, RawLog};
use famas::clustering::{parse_cluster_map, ClusterMap};
use famas::config::{FileConfig, InputSpec, Overrides, Settings};
use famas::evaluation::{aggregate_accuracy, judge_attribution, parse_ground_truth, parse_who_when, GroundTruth};
use famas::pipeline::{abstract_logs, cluster_primitives, keep_replays, primitives_to_json, run_pipeline, Diagnostics};
use famas::replay::{replay_task, SubprocessRunner};
use famas::simulate::{benchmark_scenario, generate_synthetic_suite, parse_scenario, render_raw_logs, SyntheticScenario};
use famas::spectrum::{rank_triples, Lambda, ScoringMode};
use famas::suite_file::{parse_suite, suite_to_json};
use famas::sweep::{k_sweep, lambda_sweep, mode_at, synthetic_corpus, sweep_to_tsv};

#[derive(Parser, Debug)]
#[command(name = "famas", version, about = "Spectrum-based failure attribution for multi-agent runs")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct GlobalArgs {
    /// TOML config file; flags override environment, which overrides it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Number of replays besides the failing run.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Decay factor in (0.5, 1].
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// famas, famas-k, famas-obeta, famas-ogamma, famas-olambda, ochiai,
    /// tarantula, jaccard, dstar2 or kulczynski2.
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// rules or llm.
    #[arg(long, global = true)]
    extractor: Option<String>,
    /// exact or llm.
    #[arg(long, global = true)]
    judge: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Debug, Clone)]
struct LogArgs {
    /// JSON Lines log records.
    #[arg(long)]
    records: PathBuf,
    /// Manifest listing runs and outcomes.
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic suite with known decisive error.
    Simulate {
        /// Scenario JSON; the built-in benchmark scenario when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Collect k replays of a failing run through the runner command.
    Replay {
        #[command(flatten)]
        logs: LogArgs,
    },
    /// Turn raw logs into agent/action/state primitives.
    Abstract {
        #[command(flatten)]
        logs: Option<LogArgs>,
        /// A Who&When style annotated log instead of records and manifest.
        #[arg(long, conflicts_with_all = ["records", "manifest"])]
        who_when: Option<PathBuf>,
    },
    /// Cluster primitives into a refined trajectory suite.
    Cluster {
        #[arg(long)]
        primitives: PathBuf,
    },
    /// Rank the triples of a refined suite.
    Analyze {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Score attribution accuracy over analyzed cases.
    Evaluate {
        /// Ground-truth JSON, one object or a list.
        #[arg(long)]
        ground_truth: PathBuf,
        /// Evaluate every scoring mode instead of just --mode.
        #[arg(long)]
        all_modes: bool,
        /// Directories holding suite.json and clusters.json.
        #[arg(required = true)]
        cases: Vec<PathBuf>,
    },
    /// Run every stage end to end.
    Pipeline {
        #[arg(long, conflicts_with_all = ["suite", "records"])]
        scenario: Option<PathBuf>,
        #[arg(long, conflicts_with = "records")]
        suite: Option<PathBuf>,
        #[arg(long, requires = "manifest")]
        records: Option<PathBuf>,
        #[arg(long, requires = "records")]
        manifest: Option<PathBuf>,
        /// Treat the logs as the failing run only and collect replays.
        #[arg(long, requires = "records")]
        replay: bool,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Sweep lambda or k over a synthetic corpus and write a TSV.
    Sweep {
        #[arg(value_enum)]
        parameter: SweepParameter,
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Number of suites in the corpus.
        #[arg(long, default_value_t = 200)]
        cases: u64,
        /// Comma-separated parameter values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Replay subsamples per k.
        #[arg(long, default_value_t = 5)]
        resamples: usize,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SweepParameter {
    Lambda,
    K,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.global.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_env("FAMAS_LOG").unwrap_or_else(|_| default.into());
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn settings(global: &GlobalArgs, input: Option<InputSpec>, ground_truth: Option<PathBuf>) -> Result<Settings> {
    let file = match &global.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let cli = Overrides {
        k: global.k,
        lambda: global.lambda,
        mode: global.mode.clone(),
        seed: global.seed,
        extractor: global.extractor.clone(),
        judge: global.judge.clone(),
        out: global.out.clone(),
        input,
        ground_truth,
    };
    Ok(Settings::from_process_env(&file, &cli)?)
}

fn out_dir(s: &Settings) -> Result<&Path> {
    std::fs::create_dir_all(&s.out).with_context(|| format!("creating {}", s.out.display()))?;
    Ok(&s.out)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("values serialize") + "\n"
}

fn write_logs(dir: &Path, logs: &[RawLog]) -> Result<()> {
    let (records, manifest) = logs_to_jsonl(logs);
    write(dir, "records.jsonl", &records)?;
    write(dir, "manifest.json", &json(&manifest))
}

fn load_scenario(path: Option<&Path>, seed: Option<u64>) -> Result<SyntheticScenario> {
    let scenario = match path {
        Some(p) => parse_scenario(&read(p)?)?,
        None => benchmark_scenario(0),
    };
    Ok(match seed {
        Some(seed) => scenario.with_seed(seed),
        None => scenario,
    })
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Simulate { scenario } => {
            let s = settings(g, None, None)?;
            let scenario = load_scenario(scenario.as_deref(), s.seed)?;
            let case = generate_synthetic_suite(&scenario, s.k)?;
            let dir = out_dir(&s)?;
            write(dir, "scenario.json", &json(&scenario))?;
            write(dir, "suite.json", &suite_to_json(&case.suite))?;
            write(dir, "truth.json", &json(&case.truth))?;
            write(dir, "ground_truth.json", &json(&case.truth.ground_truth()))?;
            write_logs(dir, &render_raw_logs(&case.suite))?;
            let failing = case.suite.trajectories.iter().filter(|t| t.outcome.is_failure()).count();
            println!(
                "{}: {} runs, {} failing, decisive [{}] {} => {}",
                case.truth.task_id,
                case.suite.trajectories.len(),
                failing,
                case.truth.agent,
                case.truth.action,
                case.truth.state
            );
        }
        Command::Replay { logs } => {
            let s = settings(g, None, None)?;
            let mut root = load_raw_logs(&logs.records, &logs.manifest)?;
            root.retain(|l| l.run_id == 0);
            let Some(first) = root.first() else {
                bail!("the logs contain no run 0");
            };
            let runner = match &s.runner_command {
                Some(cmd) => SubprocessRunner::new(cmd.clone()),
                None => SubprocessRunner::from_env()?,
            };
            let outcome = replay_task(&first.task_id.clone(), s.k, &runner, s.seed.unwrap_or(0), s.parallelism)?;
            root.extend(outcome.logs);
            let dir = out_dir(&s)?;
            write_logs(dir, &root)?;
            write(dir, "dropped.json", &json(&outcome.dropped))?;
            println!("{} usable replays, {} dropped", root.len() - 1, outcome.dropped.len());
        }
        Command::Abstract { logs, who_when } => {
            let s = settings(g, None, None)?;
            let mut diag = Diagnostics::default();
            let dir = out_dir(&s)?;
            match (logs, who_when) {
                (_, Some(path)) => {
                    let fallback = path.file_stem().and_then(|n| n.to_str()).unwrap_or("task");
                    let case = parse_who_when(&read(&path)?, fallback)?;
                    let (doc, _) = abstract_logs(&s, std::slice::from_ref(&case.log), &mut diag)?;
                    let (alignment, truth) = case.ground_truth(&doc.runs[0]);
                    write(dir, "primitives.json", &primitives_to_json(&doc))?;
                    write(dir, "alignment.json", &json(&alignment))?;
                    match truth {
                        Some(t) => write(dir, "ground_truth.json", &json(&t))?,
                        None => tracing::warn!(?alignment, "annotated message has no unique step"),
                    }
                    println!("{}: {} steps", doc.task_id, doc.runs[0].primitives.len());
                }
                (Some(logs), None) => {
                    let raw = keep_replays(load_raw_logs(&logs.records, &logs.manifest)?, s.k, &mut diag);
                    let (doc, _) = abstract_logs(&s, &raw, &mut diag)?;
                    write(dir, "primitives.json", &primitives_to_json(&doc))?;
                    let steps: usize = doc.runs.iter().map(|r| r.primitives.len()).sum();
                    println!("{}: {} runs, {} steps", doc.task_id, doc.runs.len(), steps);
                }
                (None, None) => bail!("give --records and --manifest, or --who-when"),
            }
            write(dir, "diagnostics.json", &json(&diag))?;
        }
        Command::Cluster { primitives } => {
            let s = settings(g, None, None)?;
            let doc = parse_primitives(&read(&primitives)?)?;
            let (suite, clusters, _) = cluster_primitives(&s, &doc)?;
            let dir = out_dir(&s)?;
            write(dir, "suite.json", &suite_to_json(&suite))?;
            write(dir, "clusters.json", &clusters.to_json())?;
            println!("{}: {} clusters over {} runs", suite.task_id, clusters.clusters.len(), suite.trajectories.len());
        }
        Command::Analyze { suite, ground_truth } => {
            let s = settings(g, Some(InputSpec::Suite(suite)), ground_truth)?;
            print!("{}", run_pipeline(&s)?.report.to_text());
        }
        Command::Pipeline {
            scenario,
            suite,
            records,
            manifest,
            replay,
            ground_truth,
        } => {
            let input = match (scenario, suite, records, manifest) {
                (Some(p), _, _, _) => Some(InputSpec::Scenario(p)),
                (_, Some(p), _, _) => Some(InputSpec::Suite(p)),
                (_, _, Some(records), Some(manifest)) if replay => Some(InputSpec::Replay { records, manifest }),
                (_, _, Some(records), Some(manifest)) => Some(InputSpec::Logs { records, manifest }),
                _ => None,
            };
            let s = settings(g, input, ground_truth)?;
            print!("{}", run_pipeline(&s)?.report.to_text());
        }
        Command::Evaluate {
            ground_truth,
            all_modes,
            cases,
        } => {
            let s = settings(g, None, None)?;
            evaluate(&s, &ground_truth, all_modes, &cases)?;
        }
        Command::Sweep {
            parameter,
            scenario,
            cases,
            values,
            resamples,
        } => {
            let s = settings(g, None, None)?;
            let scenario = load_scenario(scenario.as_deref(), None)?;
            let base = s.seed.unwrap_or(0);
            let (points, name) = match parameter {
                SweepParameter::Lambda => {
                    let values = if values.is_empty() {
                        (0..=9).map(|i| 0.55 + 0.05 * i as f64).collect()
                    } else {
                        values
                    };
                    let lambdas = values.into_iter().map(Lambda::new).collect::<famas::Result<Vec<_>>>()?;
                    let corpus = synthetic_corpus(&scenario, base..base + cases, s.k)?;
                    (lambda_sweep(&corpus, &lambdas, s.mode, s.parallelism)?, "lambda_sweep.tsv")
                }
                SweepParameter::K => {
                    let ks: Vec<usize> = if values.is_empty() {
                        vec![5, 10, 15, 20]
                    } else {
                        values.iter().map(|&v| as_k(v)).collect::<Result<_>>()?
                    };
                    let max_k = ks.iter().copied().max().unwrap_or(s.k);
                    let corpus = synthetic_corpus(&scenario, base..base + cases, max_k)?;
                    (k_sweep(&corpus, &ks, resamples, base, s.lambda, s.mode, s.parallelism)?, "k_sweep.tsv")
                }
            };
            let tsv = sweep_to_tsv(&points);
            write(out_dir(&s)?, name, &tsv)?;
            print!("{tsv}");
        }
    }
    Ok(())
}

fn as_k(v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        bail!("k values must be positive integers, got {v}")
    }
}

fn evaluate(s: &Settings, ground_truth: &Path, all_modes: bool, dirs: &[PathBuf]) -> Result<()> {
    let truths = parse_ground_truth(&read(ground_truth)?)?;
    let mut cases = Vec::new();
    for dir in dirs {
        let suite = parse_suite(&read(&dir.join("suite.json"))?)?;
        let clusters_path = dir.join("clusters.json");
        let clusters = if clusters_path.exists() {
            parse_cluster_map(&read(&clusters_path)?)?
        } else {
            ClusterMap::from_suite(&suite)
        };
        let truth: &GroundTruth = match truths.iter().find(|t| t.task_id == suite.task_id) {
            Some(t) => t,
            None => bail!("no ground truth for task `{}` in {}", suite.task_id, dir.display()),
        };
        cases.push((suite, clusters, truth.clone()));
    }
    let modes: Vec<ScoringMode> = if all_modes { ScoringMode::ALL.to_vec() } else { vec![s.mode] };
    let mut rows = Vec::new();
    let mut text = String::new();
    for mode in modes {
        let mode = mode_at(mode, s.lambda);
        let mut verdicts = Vec::new();
        for (suite, clusters, truth) in &cases {
            let ranking = rank_triples(suite, s.lambda, mode)?;
            verdicts.push(judge_attribution(&ranking, clusters, truth)?);
        }
        let acc = aggregate_accuracy(&verdicts)?;
        text.push_str(&format!("{:<14} {acc}\n", mode.to_string()));
        rows.push(serde_json::json!({ "mode": mode, "lambda": s.lambda.value(), "accuracy": acc, "verdicts": verdicts }));
    }
    let dir = out_dir(s)?;
    write(dir, "evaluation.json", &json(&rows))?;
    write(dir, "evaluation.txt", &text)?;
    print!("{text}");
    Ok(())
}
