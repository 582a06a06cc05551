//! Whole-run orchestration: load inputs, train one agent per scenario step,
//! and assemble the report.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::executor::{HttpExecutor, Transport};
use crate::identity::{IdentifierStore, SharedIdentifierStore};
use crate::mutation::DictionarySource;
use crate::oas::{
    parse_oas, ApiFunction, DocumentFormat, Location, OasError, ParsedSpec, SampleOptions,
};
use crate::report::{
    dedupe, emit_report, AgentReport, ReportError, ReportPaths, RunReport, RunSummary, Timing,
};
use crate::rl::{derive_seed, train_agent, AgentConfig, AgentResult, Environment, State};
use crate::scenario::{
    parse_scenarios, read_back_target, resolve_sequence, ScenarioError, ScenarioSet,
};

pub const TOOL_NAME: &str = "fuzztherest";
pub const DEFAULT_REPORT_DIR: &str = "./fuzz-report";
pub const DEFAULT_TIMEOUT_MS: u64 = 5000;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{0}")]
    Setting(String),
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Oas { path: PathBuf, source: OasError },
    #[error("{path}: {source}")]
    Scenario {
        path: PathBuf,
        source: ScenarioError,
    },
    #[error("scenario `{scenario}`, step `{operation_id}`: {source}")]
    Agent {
        scenario: String,
        operation_id: String,
        source: OasError,
    },
    #[error(transparent)]
    Report(#[from] ReportError),
}

/// Settings as they may appear in a TOML config file or on the command
/// line. Unset fields fall through to the next layer.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub oas: Option<PathBuf>,
    pub scenarios: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub episodes: Option<usize>,
    pub max_steps: Option<usize>,
    pub epsilon: Option<f64>,
    pub epsilon_decay: Option<f64>,
    pub epsilon_min: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
    pub timeout_ms: Option<u64>,
    #[serde(default)]
    pub headers: Vec<String>,
    pub dictionary: Option<PathBuf>,
    pub parallel_scenarios: Option<bool>,
    pub array_len: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Invalid {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Fills every field unset here from `lower`.
    pub fn or(self, lower: FileConfig) -> FileConfig {
        FileConfig {
            oas: self.oas.or(lower.oas),
            scenarios: self.scenarios.or(lower.scenarios),
            report_dir: self.report_dir.or(lower.report_dir),
            episodes: self.episodes.or(lower.episodes),
            max_steps: self.max_steps.or(lower.max_steps),
            epsilon: self.epsilon.or(lower.epsilon),
            epsilon_decay: self.epsilon_decay.or(lower.epsilon_decay),
            epsilon_min: self.epsilon_min.or(lower.epsilon_min),
            alpha: self.alpha.or(lower.alpha),
            gamma: self.gamma.or(lower.gamma),
            seed: self.seed.or(lower.seed),
            timeout_ms: self.timeout_ms.or(lower.timeout_ms),
            headers: if self.headers.is_empty() {
                lower.headers
            } else {
                self.headers
            },
            dictionary: self.dictionary.or(lower.dictionary),
            parallel_scenarios: self.parallel_scenarios.or(lower.parallel_scenarios),
            array_len: self.array_len.or(lower.array_len),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub oas: PathBuf,
    pub scenarios: PathBuf,
    pub report_dir: PathBuf,
    /// `agent.seed` is ignored in favour of `seed`.
    pub agent: AgentConfig,
    /// Drawn from OS entropy when absent; the value used is recorded in the
    /// report.
    pub seed: Option<u64>,
    pub timeout_ms: u64,
    pub headers: Vec<(String, String)>,
    pub dictionary: Option<PathBuf>,
    pub parallel_scenarios: bool,
    pub array_len: usize,
}

impl RunConfig {
    pub fn new(oas: impl Into<PathBuf>, scenarios: impl Into<PathBuf>) -> Self {
        RunConfig {
            oas: oas.into(),
            scenarios: scenarios.into(),
            report_dir: PathBuf::from(DEFAULT_REPORT_DIR),
            agent: AgentConfig::default(),
            seed: None,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            headers: Vec::new(),
            dictionary: None,
            parallel_scenarios: false,
            array_len: SampleOptions::default().array_len,
        }
    }

    /// Applies defaults to a merged set of settings.
    pub fn from_settings(s: FileConfig) -> Result<Self, ConfigError> {
        let oas = s
            .oas
            .ok_or_else(|| ConfigError::Setting("no OpenAPI document given (--oas)".into()))?;
        let scenarios = s
            .scenarios
            .ok_or_else(|| ConfigError::Setting("no scenarios file given (--scenarios)".into()))?;
        let d = AgentConfig::default();
        let headers = s
            .headers
            .iter()
            .map(|h| parse_header(h))
            .collect::<Result<_, _>>()?;
        let mut cfg = RunConfig::new(oas, scenarios);
        cfg.report_dir = s.report_dir.unwrap_or(cfg.report_dir);
        cfg.agent = AgentConfig {
            episodes: s.episodes.unwrap_or(d.episodes),
            max_steps: s.max_steps.unwrap_or(d.max_steps),
            epsilon0: s.epsilon.unwrap_or(d.epsilon0),
            epsilon_decay: s.epsilon_decay.unwrap_or(d.epsilon_decay),
            epsilon_min: s.epsilon_min.unwrap_or(d.epsilon_min),
            alpha: s.alpha.unwrap_or(d.alpha),
            gamma: s.gamma.unwrap_or(d.gamma),
            seed: d.seed,
        };
        cfg.seed = s.seed;
        cfg.timeout_ms = s.timeout_ms.unwrap_or(cfg.timeout_ms);
        cfg.headers = headers;
        cfg.dictionary = s.dictionary;
        cfg.parallel_scenarios = s.parallel_scenarios.unwrap_or(false);
        cfg.array_len = s.array_len.unwrap_or(cfg.array_len);
        Ok(cfg)
    }

    fn problems(&self) -> Vec<String> {
        let mut out = self.agent.problems();
        if self.timeout_ms == 0 {
            out.push("timeout_ms must be positive".into());
        }
        out
    }
}

/// Parses a `Name: value` header.
pub fn parse_header(text: &str) -> Result<(String, String), ConfigError> {
    match text.split_once(':') {
        Some((name, value))
            if !name.trim().is_empty() && !name.trim().contains(char::is_whitespace) =>
        {
            Ok((name.trim().to_string(), value.trim().to_string()))
        }
        _ => Err(ConfigError::Setting(format!(
            "header `{text}` is not of the form `Name: value`"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}: {}: {}", self.location, self.message)
    }
}

fn error(location: impl Into<String>, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        severity: Severity::Error,
        location: location.into(),
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_oas(path: &Path) -> Result<ParsedSpec, RunError> {
    let text = read_text(path)?;
    parse_oas(&text, DocumentFormat::detect(path, &text)).map_err(|source| RunError::Oas {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_scenarios(path: &Path) -> Result<ScenarioSet, RunError> {
    let text = read_text(path)?;
    parse_scenarios(&text).map_err(|source| RunError::Scenario {
        path: path.to_path_buf(),
        source,
    })
}

/// Dry run: checks documents, scenario resolution and settings without
/// sending any request.
pub fn validate(config: &RunConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let cfg_loc = "config";
    out.extend(config.problems().into_iter().map(|p| error(cfg_loc, p)));
    if let Some(dict) = &config.dictionary {
        if let Err(e) = DictionarySource::load(dict) {
            out.push(error(dict.display().to_string(), e.to_string()));
        }
    }

    let spec = match load_oas(&config.oas) {
        Ok(spec) => {
            out.extend(spec.warnings.iter().map(|w| Diagnostic {
                severity: Severity::Warning,
                location: w.location.clone(),
                message: w.message.clone(),
            }));
            Some(spec)
        }
        Err(e) => {
            out.push(error(config.oas.display().to_string(), e.to_string()));
            None
        }
    };
    let scenarios = match load_scenarios(&config.scenarios) {
        Ok(s) => Some(s),
        Err(e) => {
            out.push(error(config.scenarios.display().to_string(), e.to_string()));
            None
        }
    };

    if let (Some(spec), Some(set)) = (spec, scenarios) {
        let options = SampleOptions {
            array_len: config.array_len,
        };
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        for scenario in &set.scenarios {
            for step in &scenario.steps {
                let location = format!("scenario `{}`", scenario.name);
                match spec.function(&step.operation_id) {
                    None => out.push(error(
                        location.clone(),
                        format!("unknown operation `{}`", step.operation_id),
                    )),
                    Some(f) => {
                        if let Err(e) = f.instantiate(&mut rng, &options) {
                            out.push(error(
                                location.clone(),
                                format!("`{}` cannot be sampled: {e}", step.operation_id),
                            ));
                        }
                        for name in step.fixed.keys() {
                            if [Location::Path, Location::Query, Location::Header]
                                .iter()
                                .all(|l| f.parameter(*l, name).is_none())
                            {
                                out.push(Diagnostic {
                                    severity: Severity::Warning,
                                    location: location.clone(),
                                    message: format!(
                                        "`{}` has no parameter `{name}` to pin",
                                        step.operation_id
                                    ),
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub paths: ReportPaths,
}

impl RunOutcome {
    /// 1 when anything was found, else 0.
    pub fn exit_code(&self) -> i32 {
        if self.report.vulnerabilities.is_empty() {
            0
        } else {
            1
        }
    }
}

/// Runs against the live SUT over HTTP.
pub fn run(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let transport = HttpExecutor::new(config.timeout_ms, config.headers.clone());
    run_with_transport(config, &transport)
}

struct Plan<'a> {
    scenario: &'a str,
    index: usize,
    steps: Vec<(
        &'a ApiFunction,
        Option<&'a ApiFunction>,
        BTreeMap<String, crate::value::FieldValue>,
    )>,
}

pub fn run_with_transport(
    config: &RunConfig,
    transport: &dyn Transport,
) -> Result<RunOutcome, RunError> {
    let started = Instant::now();
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(ConfigError::Setting(problems.join("; ")).into());
    }
    let spec = load_oas(&config.oas)?;
    let set = load_scenarios(&config.scenarios)?;
    let dictionary = match &config.dictionary {
        Some(path) => DictionarySource::load(path).map_err(|source| ConfigError::Read {
            path: path.clone(),
            source,
        })?,
        None => DictionarySource::builtin(),
    };
    let seed = config.seed.unwrap_or_else(rand::random);
    let agent_config = AgentConfig {
        seed,
        ..config.agent
    };

    let mut plans = Vec::new();
    for (index, scenario) in set.scenarios.iter().enumerate() {
        let seq =
            resolve_sequence(scenario, &spec.functions).map_err(|source| RunError::Scenario {
                path: config.scenarios.clone(),
                source,
            })?;
        let steps = seq
            .iter()
            .enumerate()
            .map(|(k, f)| {
                (
                    *f,
                    read_back_target(&seq, k),
                    scenario.steps[k].fixed_values(),
                )
            })
            .collect();
        plans.push(Plan {
            scenario: &scenario.name,
            index,
            steps,
        });
    }

    for w in &spec.warnings {
        log::warn!("{}: {}", w.location, w.message);
    }
    let store = IdentifierStore::new().shared();
    let sample_options = SampleOptions {
        array_len: config.array_len,
    };
    let ctx = RunContext {
        base_url: &set.base_url,
        transport,
        store: &store,
        dictionary: &dictionary,
        sample_options,
        config: &agent_config,
    };
    let per_scenario: Vec<Result<Vec<AgentResult>, RunError>> = if config.parallel_scenarios {
        std::thread::scope(|s| {
            let handles: Vec<_> = plans
                .iter()
                .map(|p| s.spawn(|| ctx.run_scenario(p)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("scenario thread panicked"))
                .collect()
        })
    } else {
        plans.iter().map(|p| ctx.run_scenario(p)).collect()
    };
    let mut results = Vec::new();
    for r in per_scenario {
        results.extend(r?);
    }

    let findings: Vec<_> = results
        .iter()
        .flat_map(|r| r.findings.iter().cloned())
        .collect();
    let vulnerabilities = dedupe(&findings);
    let agents: Vec<AgentReport> = results.iter().map(AgentReport::from_result).collect();
    let mut warnings: Vec<String> = spec
        .warnings
        .iter()
        .map(|w| format!("{}: {}", w.location, w.message))
        .collect();
    for a in &agents {
        let failed = a.status_totals[State::Transport.label()];
        if failed > 0 {
            let w = format!(
                "{}/{}: {failed} of {} requests failed at the transport level",
                a.scenario, a.operation_id, a.requests
            );
            log::warn!("{w}");
            warnings.push(w);
        }
    }
    let summary = RunSummary {
        requests: agents.iter().map(|a| a.requests + a.read_backs).sum(),
        server_errors: agents
            .iter()
            .map(|a| a.status_totals[State::S5xx.label()])
            .sum(),
        findings: findings.len(),
        unique_vulnerabilities: vulnerabilities.len(),
        warnings,
    };
    let report = RunReport {
        tool: TOOL_NAME.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: report_config(config, &set.base_url, &agent_config),
        summary,
        vulnerabilities,
        agents,
        identifier_store: store
            .read()
            .expect("identifier store lock poisoned")
            .clone(),
        timing: Timing {
            generated_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            duration_ms: started.elapsed().as_millis() as u64,
        },
    };
    let paths = emit_report(&report, &config.report_dir)?;
    log::info!(
        "{} requests, {} unique vulnerabilities; report in {}",
        report.summary.requests,
        report.summary.unique_vulnerabilities,
        config.report_dir.display()
    );
    Ok(RunOutcome { report, paths })
}

/// The settings that shaped the run. The report directory is left out so
/// that runs writing to different places stay comparable.
fn report_config(config: &RunConfig, base_url: &str, agent: &AgentConfig) -> serde_json::Value {
    serde_json::json!({
        "oas": config.oas.display().to_string(),
        "scenarios": config.scenarios.display().to_string(),
        "base_url": base_url,
        "episodes": agent.episodes,
        "max_steps": agent.max_steps,
        "epsilon": agent.epsilon0,
        "epsilon_decay": agent.epsilon_decay,
        "epsilon_min": agent.epsilon_min,
        "alpha": agent.alpha,
        "gamma": agent.gamma,
        "seed": agent.seed,
        "timeout_ms": config.timeout_ms,
        "headers": config.headers.iter().map(|(n, _)| n).collect::<Vec<_>>(),
        "dictionary": config.dictionary.as_ref().map(|p| p.display().to_string()),
        "parallel_scenarios": config.parallel_scenarios,
        "array_len": config.array_len,
    })
}

struct RunContext<'a> {
    base_url: &'a str,
    transport: &'a dyn Transport,
    store: &'a SharedIdentifierStore,
    dictionary: &'a DictionarySource,
    sample_options: SampleOptions,
    config: &'a AgentConfig,
}

impl RunContext<'_> {
    fn run_scenario(&self, plan: &Plan<'_>) -> Result<Vec<AgentResult>, RunError> {
        let mut out = Vec::new();
        for (k, (function, read_back, fixed)) in plan.steps.iter().enumerate() {
            log::info!(
                "scenario `{}` step {}/{}: training agent for {}",
                plan.scenario,
                k + 1,
                plan.steps.len(),
                function.operation_id
            );
            let env = Environment {
                scenario: plan.scenario,
                function,
                base_url: self.base_url,
                transport: self.transport,
                store: self.store,
                dictionary: self.dictionary,
                fixed,
                read_back: *read_back,
                sample_options: self.sample_options,
            };
            let seed = derive_seed(self.config.seed, plan.index, k);
            let result =
                train_agent(&env, self.config, seed).map_err(|source| RunError::Agent {
                    scenario: plan.scenario.to_string(),
                    operation_id: function.operation_id.clone(),
                    source,
                })?;
            log::info!(
                "scenario `{}` {}: {} findings",
                plan.scenario,
                function.operation_id,
                result.findings.len()
            );
            out.push(result);
        }
        Ok(out)
    }
}
