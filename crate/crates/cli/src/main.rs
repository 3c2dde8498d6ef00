//! `poqk`: demos and the seeded experiment runner.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use poqk_core::aap::{run_completeness_experiment, InputStrategy, MoneyProtocol, OracleMode, Reply, Role, Scenario};
use poqk_core::experiment::{self, Report, RunConfig};
use poqk_core::provers::ProverKind;
use poqk_core::subspace::{self, SubspaceScenario};
use poqk_core::wiesner::{self, WiesnerScenario};
use poqk_core::{Error, StateVector};

/// Directory for report files when no output path is configured.
const OUTPUT_DIR_VAR: &str = "POQK_OUTPUT_DIR";

const EXIT_MISMATCH: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(name = "poqk", version, about = "Simulation lab for classical proofs of quantum knowledge")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mint one bill and print its record and Ver acceptance.
    MintDemo(DemoArgs),
    /// Mint a bill and run the agree and prove phases against a prover.
    VerifyDemo {
        #[command(flatten)]
        demo: DemoArgs,
        /// Prover as JSON, e.g. '{"kind":"pauli-attack","xset":"10","zset":"00"}'.
        #[arg(long, default_value = r#"{"kind":"honest"}"#)]
        prover: String,
    },
    /// Run or replay experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Wiesner,
    Subspace,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, value_enum, default_value = "wiesner")]
    scenario: SchemeArg,
    #[arg(long, default_value_t = 2)]
    lambda: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Run the experiment described by a JSON config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        lambda: Option<usize>,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Prover as JSON.
        #[arg(long)]
        prover: Option<String>,
        #[arg(long)]
        kappa: Option<f64>,
        /// Output path stem; `.csv` and `.json` are appended.
        #[arg(long)]
        output: Option<String>,
    },
    /// Rerun the config embedded in a JSON report and compare.
    Replay {
        report: PathBuf,
        /// Rerun with another seed; the result is flagged as a non-replay.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MintDemo(a) => mint_demo(&a),
        Command::VerifyDemo { demo, prover } => verify_demo(&demo, &prover),
        Command::Experiment(ExperimentCommand::Run {
            config,
            lambda,
            trials,
            seed,
            prover,
            kappa,
            output,
        }) => {
            let overrides = Overrides {
                lambda,
                trials,
                seed,
                prover,
                kappa,
                output,
            };
            run_experiment(&config, overrides)
        }
        Command::Experiment(ExperimentCommand::Replay { report, seed }) => replay(&report, seed),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("{}", json!({ "error": f.kind, "message": f.message }));
            ExitCode::from(f.code)
        }
    }
}

struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn config(message: impl ToString) -> Self {
        Self {
            code: EXIT_CONFIG,
            kind: "config",
            message: message.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse(_) | Error::TooLarge { .. } => Failure::config(e),
            _ => Self {
                code: EXIT_INVARIANT,
                kind: "invariant",
                message: e.to_string(),
            },
        }
    }
}

type CliResult = std::result::Result<u8, Failure>;

fn print(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value"));
}

fn mint_demo(a: &DemoArgs) -> CliResult {
    let mut world = StateVector::new();
    let out = match a.scenario {
        SchemeArg::Wiesner => {
            check_lambda(a.lambda, 1, 12)?;
            let mut scen = WiesnerScenario::new(a.lambda, OracleMode::Real, a.seed);
            let input = scen.honest_input(&mut world)?;
            let id = input.id.expect("honest input has an id");
            let reg = input.witness.expect("honest input has a bill");
            let Reply::Secret(s) = scen.oracle(Role::V, "secret", Some(id), &mut world) else {
                return Err(Error::Oracle("secret query failed".into()).into());
            };
            json!({
                "scenario": "wiesner",
                "lambda": a.lambda,
                "id": id,
                "secret": s,
                "register": reg,
                "ver_acceptance": wiesner::ver_probability(&s, &world, &reg)?,
            })
        }
        SchemeArg::Subspace => {
            if a.lambda % 2 != 0 {
                return Err(Failure::config(format!("subspace λ must be even, got {}", a.lambda)));
            }
            check_lambda(a.lambda, 2, 6)?;
            let mut scen = SubspaceScenario::new(a.lambda, OracleMode::Real, a.seed)?;
            let input = scen.honest_input(&mut world)?;
            let id = input.id.expect("honest input has an id");
            let reg = input.witness.expect("honest input has a bill");
            let Reply::Secret(s) = scen.oracle(Role::V, "secret", Some(id), &mut world) else {
                return Err(Error::Oracle("secret query failed".into()).into());
            };
            json!({
                "scenario": "subspace",
                "lambda": a.lambda,
                "id": id,
                "secret": s,
                "register": reg,
                "ver_acceptance": subspace::subspace_ver_probability(&s, &world, &reg)?,
            })
        }
    };
    print(&out);
    Ok(0)
}

fn check_lambda(l: usize, lo: usize, hi: usize) -> std::result::Result<(), Failure> {
    if (lo..=hi).contains(&l) {
        Ok(())
    } else {
        Err(Failure::config(format!("λ={l} outside {lo}..={hi}")))
    }
}

fn verify_demo(a: &DemoArgs, prover: &str) -> CliResult {
    use rand::SeedableRng;
    let kind: ProverKind = serde_json::from_str(prover).map_err(Failure::config)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
    let r = match a.scenario {
        SchemeArg::Wiesner => {
            check_lambda(a.lambda, 1, 6)?;
            let mut scen = WiesnerScenario::new(a.lambda, OracleMode::Real, a.seed);
            run_completeness_experiment(&mut scen, &kind, InputStrategy::Honest, &mut rng)?
        }
        SchemeArg::Subspace => {
            check_lambda(a.lambda, 2, 6)?;
            let mut scen = SubspaceScenario::new(a.lambda, OracleMode::Real, a.seed)?;
            run_completeness_experiment(&mut scen, &kind, InputStrategy::Honest, &mut rng)?
        }
    };
    let transcript: Value = serde_json::from_str(&r.transcript.to_json()).expect("transcript json");
    print(&json!({
        "prover": kind.label(),
        "id": r.x,
        "agree": r.agree,
        "prove": r.prove,
        "transcript": transcript,
    }));
    Ok(0)
}

struct Overrides {
    lambda: Option<usize>,
    trials: Option<u64>,
    seed: Option<u64>,
    prover: Option<String>,
    kappa: Option<f64>,
    output: Option<String>,
}

fn load_config(path: &Path, o: Overrides) -> std::result::Result<RunConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let obj = v.as_object_mut().ok_or_else(|| Failure::config("config must be a JSON object"))?;
    if let Some(x) = o.lambda {
        obj.insert("lambda".into(), json!(x));
    }
    if let Some(x) = o.trials {
        obj.insert("trials".into(), json!(x));
    }
    if let Some(x) = o.seed {
        obj.insert("seed".into(), json!(x));
    }
    if let Some(x) = o.prover {
        let p: Value = serde_json::from_str(&x).map_err(|e| Failure::config(format!("--prover: {e}")))?;
        obj.insert("prover".into(), p);
    }
    if let Some(x) = o.kappa {
        obj.insert("kappa".into(), json!(x));
    }
    if let Some(x) = o.output {
        obj.insert("output".into(), json!(x));
    }
    Ok(RunConfig::from_json(&v.to_string())?)
}

fn output_stem(cfg: &RunConfig) -> PathBuf {
    let dir = std::env::var_os(OUTPUT_DIR_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    let name = cfg.output.clone().unwrap_or_else(|| {
        format!("{}-{}-l{}-s{}", cfg.experiment.name(), cfg.scenario.name(), cfg.lambda, cfg.seed)
    });
    dir.join(name)
}

fn run_experiment(path: &Path, o: Overrides) -> CliResult {
    let cfg = load_config(path, o)?;
    let ts = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let report = experiment::run(&cfg, &ts)?;
    let stem = output_stem(&cfg);
    if let Some(parent) = stem.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::config(format!("{}: {e}", parent.display())))?;
    }
    let csv = stem.with_extension("csv");
    let js = stem.with_extension("json");
    let write = |p: &Path, s: String| fs::write(p, s).map_err(|e| Failure::config(format!("{}: {e}", p.display())));
    write(&csv, report.to_csv())?;
    write(&js, report.to_json())?;
    let violations = report.invariant_violations();
    print(&json!({
        "csv": csv,
        "json": js,
        "summary": report.summary,
        "violations": violations,
    }));
    if violations.is_empty() {
        Ok(0)
    } else {
        Ok(EXIT_INVARIANT)
    }
}

fn replay(path: &Path, seed: Option<u64>) -> CliResult {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let report = Report::from_json(&text)?;
    let (outcome, _) = experiment::replay(&report, seed)?;
    print(&serde_json::to_value(&outcome).expect("outcome json"));
    Ok(if outcome.exit_code() == 0 { 0 } else { EXIT_MISMATCH })
}
