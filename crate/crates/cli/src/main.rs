mod config;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::{parse_config, resolve, ConfigError, Overrides, RunConfig};
use output::{RunManifest, Sources};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const WORKERS_ENV: &str = "THERMBATH_WORKERS";

#[derive(Parser)]
#[command(name = "thermbath", version, about = "Engineered-bath simulations and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config (or re-run a manifest) and write its outputs.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Also write the final density matrix as JSON.
        #[arg(long)]
        dump_state: bool,
    },
    /// Print the config with every default filled in.
    Resolve { config: PathBuf },
}

fn config_failure(e: &ConfigError) -> ExitCode {
    let body = json!({ "status": "error", "kind": "config", "message": e.message, "path": e.path, "hint": e.hint });
    eprintln!("{body}");
    ExitCode::from(EXIT_CONFIG)
}

fn runtime_failure(message: String, failures: serde_json::Value) -> ExitCode {
    eprintln!("{}", json!({ "status": "error", "kind": "runtime", "message": message, "failures": failures }));
    ExitCode::from(EXIT_RUNTIME)
}

fn load(path: &PathBuf) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        message: format!("cannot read {}: {e}", path.display()),
        path: None,
        hint: None,
    })?;
    parse_config(&text)
}

/// Flag > config > environment > available parallelism.
fn worker_count(flag: Option<usize>, config: Option<usize>) -> Result<(usize, &'static str), ConfigError> {
    if let Some(n) = flag {
        return Ok((n, "flag"));
    }
    if let Some(n) = config {
        return Ok((n, "config"));
    }
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok((n, "env")),
            _ => Err(ConfigError {
                message: format!("{WORKERS_ENV}={v:?} is not a positive integer"),
                path: None,
                hint: None,
            }),
        };
    }
    Ok((std::thread::available_parallelism().map_or(1, |n| n.get()), "default"))
}

fn source(flag: bool, config: bool) -> &'static str {
    if flag {
        "flag"
    } else if config {
        "config"
    } else {
        "default"
    }
}

fn run(path: &PathBuf, overrides: Overrides) -> ExitCode {
    let started = Instant::now();
    let raw = match load(path) {
        Ok(c) => c,
        Err(e) => return config_failure(&e),
    };
    let resolved = match resolve(&raw, &overrides) {
        Ok(r) => r,
        Err(e) => return config_failure(&e),
    };
    let (workers, workers_source) = match worker_count(overrides.workers, raw.workers) {
        Ok(w) => w,
        Err(e) => return config_failure(&e),
    };
    let sources = Sources {
        seed: source(overrides.seed.is_some(), raw.seed.is_some()),
        out_dir: source(overrides.out_dir.is_some(), raw.out_dir.is_some()),
        workers: workers_source,
        dump_state: source(overrides.dump_state, raw.dump_state.is_some()),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(p) => p,
        Err(e) => return runtime_failure(format!("cannot start worker pool: {e}"), json!([])),
    };
    let outcome = match pool.install(|| run::execute(&resolved)) {
        Ok(o) => o,
        Err(e) => return runtime_failure(e.to_string(), json!([])),
    };
    let out_dir = resolved.config.out_dir.clone().expect("resolved");
    let outputs = match outcome.artifacts.write_all(&out_dir) {
        Ok(o) => o,
        Err(e) => return runtime_failure(format!("cannot write outputs to {}: {e}", out_dir.display()), json!([])),
    };
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: resolved.config.clone(),
        workers,
        sources,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        outputs,
        failures: outcome.failures,
        warnings: outcome.warnings,
        summary: outcome.summary,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    if let Err(e) = output::write_atomic(&out_dir, "manifest.json", &bytes) {
        return runtime_failure(format!("cannot write manifest: {e}"), json!([]));
    }
    for w in &manifest.warnings {
        eprintln!("{}", json!({ "status": "warning", "message": w }));
    }
    if !manifest.failures.is_empty() {
        return runtime_failure(
            format!("{} grid point(s) failed; partial outputs written", manifest.failures.len()),
            serde_json::to_value(&manifest.failures).expect("failures serialize"),
        );
    }
    let files: Vec<&str> = manifest.outputs.iter().map(|o| o.file.as_str()).collect();
    println!("{}", json!({ "status": "ok", "out_dir": out_dir, "outputs": files }));
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let body = json!({ "status": "error", "kind": "config", "message": e.kind().to_string(), "detail": e.to_string() });
            eprintln!("{body}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match cli.command {
        Command::Run { config, seed, out_dir, workers, dump_state } => {
            if workers == Some(0) {
                return config_failure(&ConfigError { message: "--workers must be positive".into(), path: None, hint: None });
            }
            run(&config, Overrides { seed, out_dir, workers, dump_state })
        }
        Command::Resolve { config } => {
            let resolved = match load(&config).and_then(|c| resolve(&c, &Overrides::default())) {
                Ok(r) => r,
                Err(e) => return config_failure(&e),
            };
            println!("{}", serde_json::to_string_pretty(&resolved.config).expect("config serializes"));
            ExitCode::SUCCESS
        }
    }
}
