use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spectrum_market::config::{parse_config, Preset, ScenarioConfig};
use spectrum_market::io::{
    config_digest, read_round_csv, rows_for_run, run_csv_path, summarize, unix_now, write_round_csv, RunManifest,
};
use spectrum_market::sim::run_many;
use spectrum_market::{verify, MarketError};

/// Deterministic subcarrier auction simulator.
#[derive(Parser)]
#[command(name = "spectrum-market", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate scenarios, writing per-round ledgers and a summary.
    Run(RunArgs),
    /// Run the oracle and invariant suites.
    Verify,
    /// Rebuild the summary from stored ledgers.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file; unspecified keys take the preset defaults.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// full-competition, collusion or collusion-and-coopetition. All three when neither this nor --config is given.
    #[arg(long)]
    preset: Option<String>,
    /// Run a single master seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Run master seeds 0..N.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long, env = "SPECTRUM_MARKET_OUT", default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    train_episodes: Option<u32>,
    #[arg(long)]
    eval_episodes: Option<u32>,
    /// Scenario runs executed in parallel.
    #[arg(long, env = "SPECTRUM_MARKET_JOBS")]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, env = "SPECTRUM_MARKET_OUT", default_value = "results")]
    out: PathBuf,
    /// Print the machine-readable report instead of the table.
    #[arg(long)]
    json: bool,
}

/// Process exit status with its message.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<MarketError> for Failure {
    fn from(e: MarketError) -> Self {
        match e {
            MarketError::InvalidConfig(_) => Self::config(e.to_string()),
            _ => Self::runtime(e.to_string()),
        }
    }
}

fn io_failure(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::runtime(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Verify => verify_suites(),
        Command::Report(args) => report(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn base_configs(args: &RunArgs) -> Result<Vec<ScenarioConfig>, Failure> {
    let mut configs = if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        vec![parse_config(&text)?]
    } else if let Some(name) = &args.preset {
        vec![ScenarioConfig::preset(name.parse::<Preset>()?)]
    } else {
        [Preset::FullCompetition, Preset::Collusion, Preset::CollusionAndCoopetition].map(ScenarioConfig::preset).to_vec()
    };
    for c in &mut configs {
        if let Some(n) = args.train_episodes {
            c.hyperparameters.train_episodes = n;
        }
        if let Some(n) = args.eval_episodes {
            c.hyperparameters.eval_episodes = n;
        }
        c.validate()?;
    }
    Ok(configs)
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let started_at = unix_now();
    let bases = base_configs(&args)?;
    let seeds: Vec<u64> = match (args.seed, args.seeds) {
        (Some(s), _) => vec![s],
        (None, Some(n)) => (0..n).collect(),
        (None, None) if args.config.is_some() => vec![bases[0].seed],
        (None, None) => (0..10).collect(),
    };
    if seeds.is_empty() {
        return Err(Failure::config("--seeds must be at least 1"));
    }
    let jobs = match args.jobs {
        Some(0) => return Err(Failure::config("jobs must be at least 1")),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };

    let mut digest_text = String::new();
    for c in &bases {
        digest_text.push_str(&c.to_toml()?);
    }
    let configs: Vec<ScenarioConfig> =
        bases.iter().flat_map(|b| seeds.iter().map(move |&seed| ScenarioConfig { seed, ..b.clone() })).collect();

    fs::create_dir_all(&args.out).map_err(io_failure(&args.out))?;
    let mut outputs = Vec::new();
    let mut rows = Vec::new();
    // Chunks keep at most `jobs` finished runs in memory at once.
    for chunk in configs.chunks(jobs) {
        for run in run_many(chunk, jobs) {
            let run = run?;
            let path = run_csv_path(&args.out, run.scenario.name(), run.seed);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(io_failure(dir))?;
            }
            let run_rows = rows_for_run(&run);
            write_round_csv(&run_rows, &path).map_err(io_failure(&path))?;
            eprintln!("wrote {}", path.display());
            outputs.push(path);
            rows.extend(run_rows);
        }
    }

    let summary = summarize(&rows);
    let json_path = args.out.join("summary.json");
    let table_path = args.out.join("summary.txt");
    fs::write(&json_path, summary.to_json()).map_err(io_failure(&json_path))?;
    fs::write(&table_path, summary.to_table()).map_err(io_failure(&table_path))?;
    outputs.push(json_path);
    outputs.push(table_path);

    let mut scenarios: Vec<String> = bases.iter().map(|c| c.scenario.name().to_string()).collect();
    scenarios.dedup();
    let manifest = RunManifest {
        config_digest: config_digest(&digest_text),
        master_seeds: seeds,
        scenarios,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        finished_at: unix_now(),
        outputs,
    };
    let manifest_path = args.out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::runtime(e.to_string()))?;
    fs::write(&manifest_path, text).map_err(io_failure(&manifest_path))?;

    print!("{}", summary.to_table());
    Ok(())
}

fn verify_suites() -> Result<(), Failure> {
    let checks = verify::smoke_suite()?;
    for c in &checks {
        println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure { code: 3, message: format!("failed checks: {}", failed.join(", ")) })
    }
}

fn ledger_files(out: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    let entries = fs::read_dir(out).map_err(|e| Failure::config(format!("{}: {e}", out.display())))?;
    for dir in entries.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()) {
        for f in fs::read_dir(&dir).map_err(io_failure(&dir))?.filter_map(|e| e.ok()).map(|e| e.path()) {
            let is_ledger = f.extension().is_some_and(|x| x == "csv")
                && f.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seed-"));
            if is_ledger {
                files.push(f);
            }
        }
    }
    files.sort();
    Ok(files)
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    let files = ledger_files(&args.out)?;
    if files.is_empty() {
        return Err(Failure::config(format!("no ledgers under {}", args.out.display())));
    }
    let mut rows = Vec::new();
    for f in &files {
        rows.extend(read_round_csv(f).map_err(|e| Failure::runtime(format!("{}: {e}", f.display())))?);
    }
    let summary = summarize(&rows);

    // A stored summary must agree with the ledgers it was written from.
    let stored_path = args.out.join("summary.json");
    if let Ok(text) = fs::read_to_string(&stored_path) {
        if text != summary.to_json() {
            return Err(Failure::runtime(format!("{} disagrees with the ledgers", stored_path.display())));
        }
    }
    if args.json {
        println!("{}", summary.to_json());
    } else {
        print!("{}", summary.to_table());
    }
    Ok(())
}
