use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::VulnerabilityRecord;
use crate::identity::IdentifierStore;
use crate::mutation::MutationAction;
use crate::rl::{AgentResult, QSummary, QTableSet, State};
use crate::value::DataType;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("cannot write report to {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("cannot serialize report: {0}")]
    Serialize(#[from] serde_json::Error),
}

const OUTCOME_LABELS: [State; 6] = [
    State::S1xx,
    State::S2xx,
    State::S3xx,
    State::S4xx,
    State::S5xx,
    State::Transport,
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub epsilon: f64,
    pub steps: usize,
    pub total_reward: i64,
    pub status_counts: BTreeMap<&'static str, usize>,
    pub action_counts: BTreeMap<&'static str, usize>,
    pub q: BTreeMap<DataType, QSummary>,
}

/// Per-agent performance series plus the final policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentReport {
    pub scenario: String,
    pub operation_id: String,
    pub seed: u64,
    pub requests: usize,
    pub read_backs: usize,
    pub findings: usize,
    pub status_totals: BTreeMap<&'static str, usize>,
    /// Greedy action per table and state after training.
    pub greedy_policy: BTreeMap<DataType, BTreeMap<&'static str, MutationAction>>,
    pub q_tables: QTableSet,
    pub episodes: Vec<EpisodeSummary>,
}

fn empty_status_counts() -> BTreeMap<&'static str, usize> {
    OUTCOME_LABELS.iter().map(|s| (s.label(), 0)).collect()
}

impl AgentReport {
    pub fn from_result(result: &AgentResult) -> Self {
        let mut totals = empty_status_counts();
        let episodes: Vec<EpisodeSummary> = result
            .traces
            .iter()
            .map(|t| {
                let mut status_counts = empty_status_counts();
                let mut action_counts = BTreeMap::new();
                for s in &t.steps {
                    *status_counts.entry(s.state_after.label()).or_default() += 1;
                    *totals.entry(s.state_after.label()).or_default() += 1;
                    for a in s.actions.values() {
                        *action_counts.entry(a.name()).or_default() += 1;
                    }
                }
                EpisodeSummary {
                    episode: t.episode,
                    epsilon: t.epsilon,
                    steps: t.steps.len(),
                    total_reward: t.total_reward(),
                    status_counts,
                    action_counts,
                    q: t.q_after.clone(),
                }
            })
            .collect();
        let greedy_policy = result
            .tables
            .tables()
            .map(|t| {
                let policy = State::ALL
                    .iter()
                    .map(|s| (s.label(), t.greedy(*s)))
                    .collect();
                (t.datatype(), policy)
            })
            .collect();
        AgentReport {
            scenario: result.scenario.clone(),
            operation_id: result.operation_id.clone(),
            seed: result.seed,
            requests: episodes.iter().map(|e| e.steps).sum(),
            read_backs: result.read_backs,
            findings: result.findings.len(),
            status_totals: totals,
            greedy_policy,
            q_tables: result.tables.clone(),
            episodes,
        }
    }

    /// 2XX plus 5XX responses over a window of episodes.
    pub fn productive_responses(&self, range: std::ops::Range<usize>) -> usize {
        self.episodes[range.start.min(self.episodes.len())..range.end.min(self.episodes.len())]
            .iter()
            .map(|e| e.status_counts["2XX"] + e.status_counts["5XX"])
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub requests: usize,
    pub server_errors: usize,
    pub findings: usize,
    pub unique_vulnerabilities: usize,
    pub warnings: Vec<String>,
}

/// Fields that legitimately differ between otherwise identical runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub generated_at: String,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub config: serde_json::Value,
    pub summary: RunSummary,
    pub vulnerabilities: Vec<VulnerabilityRecord>,
    pub agents: Vec<AgentReport>,
    pub identifier_store: IdentifierStore,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub json: PathBuf,
    pub markdown: PathBuf,
}

/// Writes `report.json` and `report.md` into `dir`, creating it if needed.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<ReportPaths, ReportError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let json = dir.join("report.json");
    let markdown = dir.join("report.md");
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(&json, text).map_err(io_err(&json))?;
    std::fs::write(&markdown, render_markdown(report)).map_err(io_err(&markdown))?;
    Ok(ReportPaths { json, markdown })
}

fn cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

pub fn render_markdown(report: &RunReport) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# {} report\n", report.tool);
    let _ = writeln!(md, "- Generated: {}", report.timing.generated_at);
    if let Some(seed) = report.config.get("seed") {
        let _ = writeln!(md, "- Seed: {seed}");
    }
    let s = &report.summary;
    let _ = writeln!(md, "- Requests: {}", s.requests);
    let _ = writeln!(md, "- 5XX responses: {}", s.server_errors);
    let _ = writeln!(
        md,
        "- Findings: {} ({} unique)\n",
        s.findings, s.unique_vulnerabilities
    );

    if report.vulnerabilities.is_empty() {
        md.push_str("## No vulnerabilities found\n\nNo 5XX responses or unfetchable records were observed.\n\n");
    } else {
        md.push_str("## Vulnerabilities\n\n");
        md.push_str("| Vulnerability | Status Code | Description | Faulty Framework |\n");
        md.push_str("|---|---|---|---|\n");
        for v in &report.vulnerabilities {
            let codes: Vec<String> = v.status_codes.iter().map(u16::to_string).collect();
            let codes = if codes.is_empty() {
                v.status_class.label().to_string()
            } else {
                codes.join(", ")
            };
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} |",
                cell(&v.name),
                codes,
                cell(&v.description),
                cell(&v.faulty_framework)
            );
        }
        md.push('\n');
        md.push_str(
            "| Vulnerability | Occurrences | Operations | First seen |\n|---|---|---|---|\n",
        );
        for v in &report.vulnerabilities {
            let ops: Vec<&str> = v.operations.iter().map(String::as_str).collect();
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} episode {} step {} |",
                cell(&v.name),
                v.count,
                ops.join(", "),
                v.first_seen.operation_id,
                v.first_seen.episode,
                v.first_seen.step
            );
        }
        md.push('\n');
    }

    if !s.warnings.is_empty() {
        md.push_str("## Warnings\n\n");
        for w in &s.warnings {
            let _ = writeln!(md, "- {w}");
        }
        md.push('\n');
    }

    md.push_str("## Agents\n\n");
    for a in &report.agents {
        let _ = writeln!(md, "### {} / {}\n", a.scenario, a.operation_id);
        let totals: Vec<String> = a
            .status_totals
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect();
        let _ = writeln!(
            md,
            "- Episodes: {}, requests: {}, findings: {}",
            a.episodes.len(),
            a.requests,
            a.findings
        );
        let _ = writeln!(md, "- Responses: {}", totals.join(", "));
        let n = a.episodes.len();
        if n > 0 {
            let window = n.min(100);
            let first = a.productive_responses(0..window);
            let last = a.productive_responses(n - window..n);
            let _ = writeln!(
                md,
                "- 2XX+5XX responses, first {window} episodes: {first}; last {window}: {last}"
            );
            let mean = |r: &[EpisodeSummary]| {
                r.iter().map(|e| e.total_reward as f64).sum::<f64>() / r.len() as f64
            };
            let _ = writeln!(
                md,
                "- Mean episode reward, first {window}: {:.2}; last {window}: {:.2}",
                mean(&a.episodes[..window]),
                mean(&a.episodes[n - window..])
            );
            let _ = writeln!(md, "- Final epsilon: {:.4}", a.episodes[n - 1].epsilon);
        }
        for (dt, policy) in &a.greedy_policy {
            let _ = writeln!(md, "- Greedy {dt} action at INIT: {}", policy["INIT"]);
        }
        md.push('\n');
    }
    md
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_report() -> RunReport {
        RunReport {
            tool: "fuzztherest".into(),
            version: "0".into(),
            config: serde_json::json!({"seed": 1}),
            summary: RunSummary {
                requests: 0,
                server_errors: 0,
                findings: 0,
                unique_vulnerabilities: 0,
                warnings: vec![],
            },
            vulnerabilities: vec![],
            agents: vec![],
            identifier_store: IdentifierStore::new(),
            timing: Timing {
                generated_at: "t".into(),
                duration_ms: 0,
            },
        }
    }

    #[test]
    fn zero_findings_says_so() {
        let md = render_markdown(&empty_report());
        assert!(md.contains("## No vulnerabilities found"));
    }

    #[test]
    fn emitting_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let r = empty_report();
        let p = emit_report(&r, dir.path()).unwrap();
        let a = std::fs::read(&p.json).unwrap();
        emit_report(&r, dir.path()).unwrap();
        assert_eq!(a, std::fs::read(&p.json).unwrap());
        assert!(p.markdown.exists());
    }
}
