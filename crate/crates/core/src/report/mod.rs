//! Findings, deduplication and the run report.

mod emit;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;

use crate::executor::{HttpExchange, HttpRequest, Observation};
use crate::rl::{classify_state, State};

pub use emit::{
    emit_report, AgentReport, EpisodeSummary, ReportError, ReportPaths, RunReport, RunSummary,
    Timing,
};

/// Examples kept per vulnerability record.
pub const MAX_EXAMPLES: usize = 3;

const NOT_APPLICABLE: &str = "Not applicable";

static CLASS_TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?:[a-z_][a-z0-9_]*\.)*[A-Z][a-z0-9_]+(?:[A-Z][A-Za-z0-9_]*)+")
        .expect("valid pattern")
});

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct VulnFingerprint {
    pub operation_id: String,
    pub status_class: State,
    pub signature: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    /// A 5XX response.
    ServerError,
    /// A 2XX creation whose object could not be fetched back.
    UnfetchableRecord,
    /// The SUT stopped answering after having answered successfully.
    PotentialCrash,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub fingerprint: VulnFingerprint,
    pub scenario: String,
    pub episode: usize,
    pub step: usize,
    /// Raw class-like token the signature came from, if any.
    pub exception: Option<String>,
    pub exchange: HttpExchange,
    pub read_back: Option<HttpExchange>,
}

/// Where an exchange happened.
#[derive(Debug, Clone, Copy)]
pub struct FindingContext<'a> {
    pub operation_id: &'a str,
    pub scenario: &'a str,
    pub episode: usize,
    pub step: usize,
}

/// First class-like token in `body` (e.g. `com.acme.FooException`).
pub fn exception_token(body: &str) -> Option<&str> {
    CLASS_TOKEN.find(body).map(|m| m.as_str())
}

/// Normalized error signature: the first class-like token lowercased with
/// digits removed, or else the first 40 normalized characters of the body.
pub fn error_signature(body: &str) -> String {
    match exception_token(body) {
        Some(token) => normalize(token),
        None => {
            let flat = body.split_whitespace().collect::<Vec<_>>().join(" ");
            normalize(&flat).chars().take(40).collect()
        }
    }
}

fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_ascii_digit())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Package prefix of a class-like token, or "Not applicable".
pub fn faulty_component(exception: Option<&str>) -> String {
    exception
        .and_then(|t| t.rsplit_once('.'))
        .map_or_else(|| NOT_APPLICABLE.to_string(), |(pkg, _)| pkg.to_string())
}

fn finding(
    kind: FindingKind,
    status_class: State,
    evidence_body: &str,
    exchange: &HttpExchange,
    read_back: Option<&HttpExchange>,
    ctx: &FindingContext<'_>,
) -> Finding {
    Finding {
        kind,
        fingerprint: VulnFingerprint {
            operation_id: ctx.operation_id.to_string(),
            status_class,
            signature: error_signature(evidence_body),
        },
        scenario: ctx.scenario.to_string(),
        episode: ctx.episode,
        step: ctx.step,
        exception: exception_token(evidence_body).map(str::to_string),
        exchange: exchange.clone(),
        read_back: read_back.cloned(),
    }
}

/// Every 5XX exchange is a finding.
pub fn record_finding(exchange: &HttpExchange, ctx: &FindingContext<'_>) -> Option<Finding> {
    matches!(classify_state(exchange.observation), Ok(State::S5xx)).then(|| {
        finding(
            FindingKind::ServerError,
            State::S5xx,
            &exchange.response_body,
            exchange,
            None,
            ctx,
        )
    })
}

/// A successful creation whose read-back did not succeed is a 2XX-class
/// finding; the signature comes from the read-back response.
pub fn record_read_back(
    created: &HttpExchange,
    read_back: &HttpExchange,
    ctx: &FindingContext<'_>,
) -> Option<Finding> {
    if !created.observation.is_success() || read_back.observation.is_success() {
        return None;
    }
    let evidence = match read_back.observation {
        Observation::Transport(t) => format!("transport failure {t:?}"),
        Observation::Status(_) => read_back.response_body.clone(),
    };
    Some(finding(
        FindingKind::UnfetchableRecord,
        State::S2xx,
        &evidence,
        created,
        Some(read_back),
        ctx,
    ))
}

pub fn record_potential_crash(
    exchange: &HttpExchange,
    ctx: &FindingContext<'_>,
) -> Option<Finding> {
    let Observation::Transport(t) = exchange.observation else {
        return None;
    };
    let evidence = format!("transport failure {t:?}");
    Some(finding(
        FindingKind::PotentialCrash,
        State::Transport,
        &evidence,
        exchange,
        None,
        ctx,
    ))
}

/// Request/response pair kept as evidence on a record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evidence {
    pub operation_id: String,
    pub scenario: String,
    pub episode: usize,
    pub step: usize,
    pub request: HttpRequest,
    pub observation: Observation,
    pub response_body: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub read_back: Option<HttpExchange>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Occurrence {
    pub scenario: String,
    pub operation_id: String,
    pub episode: usize,
    pub step: usize,
}

/// One unique vulnerability: all findings sharing a status class and error
/// signature, across operations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VulnerabilityRecord {
    pub name: String,
    pub status_class: State,
    pub signature: String,
    pub status_codes: BTreeSet<u16>,
    pub description: String,
    pub faulty_framework: String,
    pub operations: BTreeSet<String>,
    pub count: usize,
    pub first_seen: Occurrence,
    pub examples: Vec<Evidence>,
}

impl VulnerabilityRecord {
    pub fn from_finding(f: &Finding) -> Self {
        let name = match &f.exception {
            Some(token) => token.rsplit('.').next().unwrap_or(token).to_string(),
            None => match f.kind {
                FindingKind::PotentialCrash => "PotentialCrash".to_string(),
                _ => "UnclassifiedError".to_string(),
            },
        };
        VulnerabilityRecord {
            name,
            status_class: f.fingerprint.status_class,
            signature: f.fingerprint.signature.clone(),
            status_codes: f.exchange.observation.status().into_iter().collect(),
            description: describe(f),
            faulty_framework: faulty_component(f.exception.as_deref()),
            operations: BTreeSet::from([f.fingerprint.operation_id.clone()]),
            count: 1,
            first_seen: Occurrence {
                scenario: f.scenario.clone(),
                operation_id: f.fingerprint.operation_id.clone(),
                episode: f.episode,
                step: f.step,
            },
            examples: vec![Evidence {
                operation_id: f.fingerprint.operation_id.clone(),
                scenario: f.scenario.clone(),
                episode: f.episode,
                step: f.step,
                request: f.exchange.request.clone(),
                observation: f.exchange.observation,
                response_body: f.exchange.response_body.clone(),
                read_back: f.read_back.clone(),
            }],
        }
    }

    fn key(&self) -> (State, &str) {
        (self.status_class, &self.signature)
    }
}

fn describe(f: &Finding) -> String {
    match f.kind {
        FindingKind::ServerError => first_line(&f.exchange.response_body),
        FindingKind::UnfetchableRecord => {
            let rb = f.read_back.as_ref();
            let status = rb
                .and_then(|r| r.observation.status())
                .map_or_else(|| "no response".to_string(), |s| s.to_string());
            let detail = rb.map(|r| first_line(&r.response_body)).unwrap_or_default();
            format!(
                "Stored by {} but fetching it back fails ({status}): {detail}",
                f.fingerprint.operation_id
            )
        }
        FindingKind::PotentialCrash => format!(
            "{} stopped responding after earlier successful requests",
            f.fingerprint.operation_id
        ),
    }
}

/// Human-oriented one-liner from a response body. JSON bodies with a
/// `message` field use that field.
fn first_line(body: &str) -> String {
    let text = serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| {
            v.get("message")
                .and_then(|m| m.as_str())
                .map(str::to_string)
        })
        .unwrap_or_else(|| body.to_string());
    let line = text.lines().next().unwrap_or("").trim();
    let mut out: String = line.chars().take(160).collect();
    if line.chars().count() > 160 {
        out.push_str("...");
    }
    out
}

/// Groups findings into unique vulnerabilities.
pub fn dedupe(findings: &[Finding]) -> Vec<VulnerabilityRecord> {
    merge_records(findings.iter().map(VulnerabilityRecord::from_finding))
}

/// Merges records with equal (status class, signature), keeping the first
/// record's description and earliest examples. Output is sorted by key.
pub fn merge_records(
    records: impl IntoIterator<Item = VulnerabilityRecord>,
) -> Vec<VulnerabilityRecord> {
    let mut grouped: BTreeMap<(State, String), VulnerabilityRecord> = BTreeMap::new();
    for r in records {
        let key = (r.key().0, r.key().1.to_string());
        match grouped.get_mut(&key) {
            None => {
                grouped.insert(key, r);
            }
            Some(existing) => {
                existing.count += r.count;
                existing.operations.extend(r.operations);
                existing.status_codes.extend(r.status_codes);
                for ex in r.examples {
                    if existing.examples.len() < MAX_EXAMPLES {
                        existing.examples.push(ex);
                    }
                }
            }
        }
    }
    grouped.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::TransportFailure;
    use crate::oas::HttpMethod;

    fn exchange(status: u16, body: &str, payload: &str) -> HttpExchange {
        HttpExchange {
            request: HttpRequest {
                method: HttpMethod::Get,
                url: format!("http://h/pet/{payload}"),
                headers: vec![],
                body: None,
            },
            observation: Observation::Status(status),
            response_body: body.to_string(),
            latency_ms: 1,
        }
    }

    fn ctx(op: &str) -> FindingContext<'_> {
        FindingContext {
            operation_id: op,
            scenario: "s",
            episode: 0,
            step: 1,
        }
    }

    #[test]
    fn number_format_signature() {
        let f = record_finding(
            &exchange(
                500,
                "NumberFormatException: For input string: \"abc\"",
                "abc",
            ),
            &ctx("getPetById"),
        )
        .unwrap();
        assert_eq!(
            f.fingerprint,
            VulnFingerprint {
                operation_id: "getPetById".into(),
                status_class: State::S5xx,
                signature: "numberformatexception".into(),
            }
        );
        assert_eq!(faulty_component(f.exception.as_deref()), "Not applicable");
    }

    #[test]
    fn healthy_response_is_no_finding() {
        assert!(record_finding(&exchange(200, "{}", "1"), &ctx("getPetById")).is_none());
        assert!(record_finding(&exchange(404, "nope", "1"), &ctx("getPetById")).is_none());
    }

    #[test]
    fn packaged_signature_names_framework() {
        let body = "com.fasterxml.jackson.core.JsonParseException: Illegal surrogate pair";
        assert_eq!(
            error_signature(body),
            "com.fasterxml.jackson.core.jsonparseexception"
        );
        assert_eq!(
            faulty_component(exception_token(body)),
            "com.fasterxml.jackson.core"
        );
    }

    #[test]
    fn fallback_signature_is_first_40_chars() {
        let body = "Internal   server error 42 happened while processing the request body";
        let sig = error_signature(body);
        assert_eq!(sig, "internal server error  happened while pr");
        assert_eq!(sig.chars().count(), 40);
    }

    #[test]
    fn unfetchable_record_is_2xx_class() {
        let created = exchange(200, r#"{"id":1}"#, "");
        let rb = exchange(
            404,
            "com.fasterxml.jackson.core.JsonParseException: Illegal character",
            "1",
        );
        let f = record_read_back(&created, &rb, &ctx("createPet")).unwrap();
        assert_eq!(f.fingerprint.status_class, State::S2xx);
        assert!(record_read_back(&created, &exchange(200, "{}", "1"), &ctx("createPet")).is_none());
    }

    #[test]
    fn crash_after_transport_failure() {
        let mut ex = exchange(200, "", "");
        ex.observation = Observation::Transport(TransportFailure::ConnectionRefused);
        let f = record_potential_crash(&ex, &ctx("getPetById")).unwrap();
        assert_eq!(f.fingerprint.status_class, State::Transport);
    }

    #[test]
    fn dedupe_groups_by_signature() {
        assert!(dedupe(&[]).is_empty());
        let a = record_finding(
            &exchange(500, "NumberFormatException: x", "a"),
            &ctx("getPetById"),
        )
        .unwrap();
        let b = record_finding(
            &exchange(500, "NumberFormatException: y", "b"),
            &ctx("getPetById"),
        )
        .unwrap();
        let records = dedupe(&[a.clone(), b]);
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].count, 2);
        assert_eq!(records[0].examples.len(), 2);

        let c = record_finding(
            &exchange(500, "NumberFormatException: z", "c"),
            &ctx("deleteOrder"),
        )
        .unwrap();
        let records = dedupe(&[a.clone(), a.clone(), a.clone(), a, c]);
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].count, 5);
        assert_eq!(records[0].examples.len(), MAX_EXAMPLES);
        assert_eq!(records[0].operations.len(), 2);
    }

    #[test]
    fn dedupe_is_idempotent_and_count_preserving() {
        let bodies = [
            "NumberFormatException: a",
            "IllegalStateException: b",
            "NumberFormatException: c",
            "plain",
        ];
        let findings: Vec<Finding> = bodies
            .iter()
            .enumerate()
            .map(|(i, b)| record_finding(&exchange(500 + i as u16, b, "x"), &ctx("op")).unwrap())
            .collect();
        let once = dedupe(&findings);
        let twice = merge_records(once.clone());
        assert_eq!(once, twice);
        assert_eq!(once.iter().map(|r| r.count).sum::<usize>(), findings.len());
    }
}
