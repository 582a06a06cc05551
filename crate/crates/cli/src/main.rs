use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fuzztherest_core::mock_sut::{oas_document, serve, MockOptions};
use fuzztherest_core::runner::{run, validate, FileConfig, RunConfig, Severity};

const EXIT_CONFIG: u8 = 2;

/// Black-box REST API fuzzer steered by per-datatype Q-learning.
#[derive(Parser)]
#[command(name = "fuzztherest", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuzz the scenarios and write report.json / report.md.
    Run(RunArgs),
    /// Check the OpenAPI document, scenarios and settings without sending requests.
    Validate(RunArgs),
    /// Serve the bundled mock pet store.
    MockSut(MockArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with any of the settings below; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// OpenAPI 3.x document (JSON or YAML).
    #[arg(long)]
    oas: Option<PathBuf>,
    /// Scenarios file (JSON).
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Output directory [default: ./fuzz-report]
    #[arg(long)]
    report_dir: Option<PathBuf>,
    /// Episodes per agent [default: 500]
    #[arg(long)]
    episodes: Option<usize>,
    /// Requests per episode [default: 10]
    #[arg(long)]
    max_steps: Option<usize>,
    /// Initial exploration rate [default: 1.0]
    #[arg(long)]
    epsilon: Option<f64>,
    /// Relative epsilon decay per episode [default: 0.01]
    #[arg(long)]
    epsilon_decay: Option<f64>,
    /// Epsilon floor [default: 0.01]
    #[arg(long)]
    epsilon_min: Option<f64>,
    /// Learning rate [default: 0.1]
    #[arg(long)]
    alpha: Option<f64>,
    /// Discount factor [default: 0.95]
    #[arg(long)]
    gamma: Option<f64>,
    /// Seed for every random choice; random when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Per-request timeout in milliseconds [default: 5000]
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// Extra header sent with every request, as `Name: value`. Repeatable.
    #[arg(long = "header", value_name = "HEADER")]
    headers: Vec<String>,
    /// Extra dictionary entries, one per line.
    #[arg(long)]
    dictionary: Option<PathBuf>,
    /// Run scenarios concurrently.
    #[arg(long)]
    parallel_scenarios: bool,
    /// Elements per instantiated array [default: 1]
    #[arg(long)]
    array_len: Option<usize>,
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig, String> {
        let file = match &self.config {
            Some(path) => FileConfig::load(path).map_err(|e| e.to_string())?,
            None => FileConfig::default(),
        };
        let flags = FileConfig {
            oas: self.oas,
            scenarios: self.scenarios,
            report_dir: self.report_dir,
            episodes: self.episodes,
            max_steps: self.max_steps,
            epsilon: self.epsilon,
            epsilon_decay: self.epsilon_decay,
            epsilon_min: self.epsilon_min,
            alpha: self.alpha,
            gamma: self.gamma,
            seed: self.seed,
            timeout_ms: self.timeout_ms,
            headers: self.headers,
            dictionary: self.dictionary,
            parallel_scenarios: self.parallel_scenarios.then_some(true),
            array_len: self.array_len,
        };
        RunConfig::from_settings(flags.or(file)).map_err(|e| e.to_string())
    }
}

#[derive(Args)]
struct MockArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Echoed by /ping.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Serve a well-behaved API without the planted defects.
    #[arg(long)]
    no_vulns: bool,
    /// Print the mock's OpenAPI document and exit.
    #[arg(long)]
    print_oas: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let config = match args.resolve() {
                Ok(c) => c,
                Err(e) => return config_error(&e),
            };
            match run(&config) {
                Ok(outcome) => {
                    eprintln!(
                        "{} unique vulnerabilities; wrote {} and {}",
                        outcome.report.vulnerabilities.len(),
                        outcome.paths.json.display(),
                        outcome.paths.markdown.display()
                    );
                    ExitCode::from(outcome.exit_code() as u8)
                }
                Err(e) => config_error(&e.to_string()),
            }
        }
        Command::Validate(args) => {
            let config = match args.resolve() {
                Ok(c) => c,
                Err(e) => return config_error(&e),
            };
            let diagnostics = validate(&config);
            for d in &diagnostics {
                println!("{d}");
            }
            if diagnostics.iter().any(|d| d.severity == Severity::Error) {
                ExitCode::from(EXIT_CONFIG)
            } else {
                if diagnostics.is_empty() {
                    println!("ok");
                }
                ExitCode::SUCCESS
            }
        }
        Command::MockSut(args) => {
            if args.print_oas {
                print!("{}", oas_document());
                return ExitCode::SUCCESS;
            }
            let options = MockOptions {
                seed: args.seed,
                vulnerable: !args.no_vulns,
            };
            match serve(args.port, options) {
                Ok(server) => {
                    println!("mock SUT listening on {}", server.base_url());
                    server.wait();
                    ExitCode::SUCCESS
                }
                Err(e) => config_error(&e.to_string()),
            }
        }
    }
}

fn config_error(message: &str) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(EXIT_CONFIG)
}
