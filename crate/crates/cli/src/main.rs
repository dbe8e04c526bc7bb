use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hashcond::data::toy::ToySpec;
use hashcond::harness::{
    AblationReport, GeneralizeReport, JobRequest, Method, RunRecord, SpecInput, SummaryReport, TimingReport, ToyData,
};
use hashcond::retrieval::{format_results_table, EvalReport};
use hashcond_client::Client;
use serde_json::Value;

#[derive(Parser)]
#[command(name = "hashcond", version, about = "Dataset condensation for deep hashing retrieval")]
struct Cli {
    /// Job service to talk to; without it an in-process server is started.
    #[arg(long, global = true, env = "HASHCOND_SERVER")]
    server: Option<String>,
    /// Print raw JSON results instead of tables.
    #[arg(long, global = true)]
    json: bool,
    /// Log progress to stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SpecArgs {
    /// Experiment spec (JSON).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `condense.iterations=50`. Repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, env = "DATA_ROOT", hide_env_values = true)]
    data_root: Option<PathBuf>,
    #[arg(long, env = "OUTPUT_ROOT", hide_env_values = true)]
    output_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Condense the train split with the spec's method.
    Condense(SpecArgs),
    /// Train hashing models on an archive and score retrieval mAP.
    Evaluate {
        #[command(flatten)]
        spec: SpecArgs,
        /// Archive directory; defaults to the spec's run layout.
        #[arg(long)]
        archive: Option<PathBuf>,
    },
    /// Random or herding coreset selection.
    Baseline {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        method: Method,
    },
    /// NA x DA ablation grid.
    Ablate(SpecArgs),
    /// mAP at wall-clock checkpoints for several methods.
    Timing(SpecArgs),
    /// One archive scored under several hashing losses.
    Generalize {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        archive: Option<PathBuf>,
        /// Comma-separated plugin names; defaults to every registered loss.
        #[arg(long, value_delimiter = ',')]
        plugins: Option<Vec<String>>,
    },
    /// Collect every evaluation under a directory into one table.
    Report {
        #[arg(long, env = "OUTPUT_ROOT", default_value = "outputs")]
        root: PathBuf,
    },
    /// Write a synthetic PNG dataset for smoke runs.
    MakeToy {
        #[arg(long, env = "DATA_ROOT", default_value = "data")]
        root: PathBuf,
        #[arg(long, default_value = "toy")]
        name: String,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 16)]
        side: usize,
        #[arg(long, default_value_t = 10)]
        test_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the job service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Concurrent jobs; defaults to the number of CPUs.
        #[arg(long)]
        workers: Option<usize>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: String) -> Self {
        Failure { code: 1, message }
    }
}

impl From<hashcond_client::ClientError> for Failure {
    fn from(e: hashcond_client::ClientError) -> Self {
        Failure { code: e.exit_code() as u8, message: e.to_string() }
    }
}

impl SpecArgs {
    fn input(&self) -> Result<SpecInput, Failure> {
        let doc = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::config(format!("cannot read {}: {e}", p.display())))?;
                Some(
                    serde_json::from_str(&text)
                        .map_err(|e| Failure::config(format!("{} is not valid JSON: {e}", p.display())))?,
                )
            }
            None => None,
        };
        // Environment roots sit between the file and explicit --set values.
        let mut overrides = Vec::new();
        if let Some(d) = &self.data_root {
            overrides.push(format!("data_root={}", Value::String(d.display().to_string())));
        }
        if let Some(o) = &self.output_root {
            overrides.push(format!("output_dir={}", Value::String(o.display().to_string())));
        }
        overrides.extend(self.overrides.iter().cloned());
        Ok(SpecInput { doc, overrides })
    }
}

fn request(cmd: &Command) -> Result<JobRequest, Failure> {
    Ok(match cmd {
        Command::Condense(s) => JobRequest::Condense { spec: s.input()? },
        Command::Evaluate { spec, archive } => JobRequest::Evaluate { spec: spec.input()?, archive: archive.clone() },
        Command::Baseline { spec, method } => JobRequest::Baseline { spec: spec.input()?, method: *method },
        Command::Ablate(s) => JobRequest::Ablate { spec: s.input()? },
        Command::Timing(s) => JobRequest::Timing { spec: s.input()? },
        Command::Generalize { spec, archive, plugins } => JobRequest::Generalize {
            spec: spec.input()?,
            archive: archive.clone(),
            plugins: plugins.clone(),
        },
        Command::Report { root } => JobRequest::Report { root: root.clone() },
        Command::MakeToy { root, name, classes, per_class, side, test_per_class, seed } => JobRequest::MakeToy {
            root: root.clone(),
            name: name.clone(),
            toy: ToyData {
                spec: ToySpec { classes: *classes, per_class: *per_class, side: *side, seed: *seed },
                test_per_class: *test_per_class,
            },
        },
        Command::Serve { .. } => unreachable!("serve is handled before dispatch"),
    })
}

fn parse<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, Failure> {
    serde_json::from_value(v).map_err(|e| Failure { code: 2, message: format!("malformed result: {e}") })
}

fn render(cmd: &Command, v: Value) -> Result<String, Failure> {
    Ok(match cmd {
        Command::Condense(_) | Command::Baseline { .. } => {
            let runs: Vec<RunRecord> = parse(v)?;
            let mut out = String::new();
            for r in runs {
                let loss = match (r.first_loss, r.last_loss) {
                    (Some(a), Some(b)) => format!(" loss {a:.4} -> {b:.4}"),
                    _ => String::new(),
                };
                out.push_str(&format!(
                    "{} seed {}: {} rows, f={}, ratio {:.4}%, {} iterations{} ({:.1}s)\n  {}\n",
                    r.method,
                    r.seed,
                    r.manifest.rows,
                    r.manifest.formation_factor,
                    r.manifest.provenance.ratio * 100.0,
                    r.iterations,
                    loss,
                    r.seconds,
                    r.archive.display()
                ));
            }
            out
        }
        Command::Evaluate { .. } => {
            let reports: Vec<EvalReport> = parse(v)?;
            format_results_table(&reports)
        }
        Command::Ablate(_) => parse::<AblationReport>(v)?.table,
        Command::Generalize { .. } => parse::<GeneralizeReport>(v)?.table,
        Command::Timing(_) => {
            let rep: TimingReport = parse(v)?;
            let mut out = String::from("| Method | Seed | Checkpoint | Seconds | Iteration | mAP (%) |\n|---|---|---|---|---|---|\n");
            for s in &rep.series {
                for p in &s.points {
                    out.push_str(&format!(
                        "| {} | {} | {} | {:.2} | {} | {:.2} |\n",
                        s.method,
                        s.seed,
                        p.checkpoint,
                        p.seconds,
                        p.iteration,
                        p.map_value * 100.0
                    ));
                }
            }
            out
        }
        Command::Report { .. } => {
            let rep: SummaryReport = parse(v)?;
            let note = if rep.fair { "" } else { "WARNING: reports disagree on query/database checksums\n" };
            format!("{note}{}", rep.table)
        }
        Command::MakeToy { root, name, .. } => format!("wrote {}\n", root.join(name).display()),
        Command::Serve { .. } => String::new(),
    })
}

async fn run(cli: Cli) -> Result<(), Failure> {
    if let Command::Serve { addr, workers } = &cli.command {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Failure { code: 2, message: format!("cannot bind {addr}: {e}") })?;
        let state = workers.map_or_else(hashcond_service::AppState::default, hashcond_service::AppState::new);
        eprintln!("listening on {}", listener.local_addr().map_or(addr.clone(), |a| a.to_string()));
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        return hashcond_service::serve(listener, state, shutdown)
            .await
            .map_err(|e| Failure { code: 2, message: e.to_string() });
    }

    let req = request(&cli.command)?;
    let client = match &cli.server {
        Some(url) => Client::new(url),
        None => {
            let (addr, _) = hashcond_service::spawn_local()
                .await
                .map_err(|e| Failure { code: 2, message: format!("cannot start local service: {e}") })?;
            Client::new(&format!("http://{addr}"))
        }
    };
    let result = client.run(&req).await?;
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&result).expect("json value serializes"));
    } else {
        print!("{}", render(&cli.command, result)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    match rt.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
