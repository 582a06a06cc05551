//! Request building and HTTP execution.

use std::io::Read;
use std::time::{Duration, Instant};

use percent_encoding::{percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::Serialize;

use crate::oas::{ApiFunction, HttpMethod, SchemaNode};
use crate::value::FieldValue;

/// Everything but RFC 3986 unreserved characters gets escaped.
const COMPONENT: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'.')
    .remove(b'_')
    .remove(b'~');

/// Stored response bodies are cut at this many bytes.
pub const MAX_BODY_BYTES: u64 = 64 * 1024;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("{operation_id}: no sample for {slot}")]
    MissingSample { operation_id: String, slot: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportFailure {
    Timeout,
    ConnectionRefused,
    ProtocolError,
}

/// What came back: a status code, or why nothing did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    Status(u16),
    Transport(TransportFailure),
}

impl Observation {
    pub fn status(self) -> Option<u16> {
        match self {
            Observation::Status(s) => Some(s),
            Observation::Transport(_) => None,
        }
    }

    pub fn is_success(self) -> bool {
        matches!(self, Observation::Status(200..=299))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HttpRequest {
    pub method: HttpMethod,
    pub url: String,
    pub headers: Vec<(String, String)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HttpExchange {
    pub request: HttpRequest,
    pub observation: Observation,
    pub response_body: String,
    #[serde(skip)]
    pub latency_ms: u64,
}

/// Anything that can answer a request. The HTTP client is the real one;
/// tests substitute stubs.
pub trait Transport: Sync {
    fn execute(&self, request: &HttpRequest) -> HttpExchange;
}

/// Turns an instantiated function into a concrete request.
pub fn build_request(function: &ApiFunction, base_url: &str) -> Result<HttpRequest, BuildError> {
    let missing = |slot: &str| BuildError::MissingSample {
        operation_id: function.operation_id.clone(),
        slot: slot.to_string(),
    };

    let mut path = function.path_template.clone();
    for p in &function.path_parameters {
        let values = leaf_values(&p.schema).ok_or_else(|| missing(&format!("path:{}", p.name)))?;
        let encoded: Vec<String> = values.iter().map(encode_component).collect();
        path = path.replace(&format!("{{{}}}", p.name), &encoded.join(","));
    }

    let mut query = Vec::new();
    for p in &function.query_parameters {
        let values = leaf_values(&p.schema).ok_or_else(|| missing(&format!("query:{}", p.name)))?;
        for v in values {
            query.push(format!("{}={}", encode_str(&p.name), encode_component(&v)));
        }
    }

    let mut headers = Vec::new();
    for p in &function.headers {
        let values =
            leaf_values(&p.schema).ok_or_else(|| missing(&format!("header:{}", p.name)))?;
        let joined: Vec<String> = values.iter().map(header_value).collect();
        headers.push((p.name.clone(), joined.join(",")));
    }

    let body = match &function.body {
        Some(schema) => {
            headers.push(("Content-Type".to_string(), "application/json".to_string()));
            Some(schema.to_json().ok_or_else(|| missing("body"))?)
        }
        None => None,
    };

    let mut url = format!("{}{}", base_url.trim_end_matches('/'), path);
    if !query.is_empty() {
        url.push('?');
        url.push_str(&query.join("&"));
    }
    Ok(HttpRequest {
        method: function.method,
        url,
        headers,
        body,
    })
}

/// Leaf samples of a parameter, in document order; `None` if any is missing.
fn leaf_values(schema: &SchemaNode) -> Option<Vec<FieldValue>> {
    let mut out = Vec::new();
    let mut complete = true;
    schema.visit_leaves(&mut Default::default(), &mut |_, leaf| match &leaf.sample {
        Some(v) => out.push(v.clone()),
        None => complete = false,
    });
    complete.then_some(out)
}

fn encode_component(value: &FieldValue) -> String {
    percent_encode(&value.plain_bytes(), COMPONENT).to_string()
}

fn encode_str(s: &str) -> String {
    percent_encode(s.as_bytes(), COMPONENT).to_string()
}

/// Header values must be visible ASCII; anything else (and `%`) is escaped.
fn header_value(value: &FieldValue) -> String {
    let mut out = String::new();
    for b in value.plain_bytes() {
        if (0x20..0x7F).contains(&b) && b != b'%' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

/// Blocking HTTP/1.1 client. Redirects are not followed and nothing is
/// retried.
pub struct HttpExecutor {
    agent: ureq::Agent,
    extra_headers: Vec<(String, String)>,
}

impl HttpExecutor {
    pub fn new(timeout_ms: u64, extra_headers: Vec<(String, String)>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .max_redirects(0)
            .timeout_global(Some(Duration::from_millis(timeout_ms)))
            .build()
            .new_agent();
        HttpExecutor {
            agent,
            extra_headers,
        }
    }

    fn send(&self, request: &HttpRequest) -> Result<(u16, String), TransportFailure> {
        let mut builder = ureq::http::Request::builder()
            .method(request.method.as_str())
            .uri(&request.url);
        for (name, value) in self.extra_headers.iter().chain(&request.headers) {
            builder = builder.header(name, value);
        }
        let response = match &request.body {
            Some(body) => {
                let req = builder
                    .body(body.clone().into_bytes())
                    .map_err(|_| TransportFailure::ProtocolError)?;
                self.agent.run(req)
            }
            None => {
                let req = builder
                    .body(())
                    .map_err(|_| TransportFailure::ProtocolError)?;
                self.agent.run(req)
            }
        }
        .map_err(classify_error)?;
        let status = response.status().as_u16();
        let mut buf = Vec::new();
        response
            .into_body()
            .into_reader()
            .take(MAX_BODY_BYTES)
            .read_to_end(&mut buf)
            .map_err(|e| classify_io(&e))?;
        Ok((status, String::from_utf8_lossy(&buf).into_owned()))
    }
}

impl Transport for HttpExecutor {
    fn execute(&self, request: &HttpRequest) -> HttpExchange {
        let start = Instant::now();
        let (observation, response_body) = match self.send(request) {
            Ok((status, body)) if (100..=599).contains(&status) => {
                (Observation::Status(status), body)
            }
            Ok(_) => (
                Observation::Transport(TransportFailure::ProtocolError),
                String::new(),
            ),
            Err(failure) => (Observation::Transport(failure), String::new()),
        };
        HttpExchange {
            request: request.clone(),
            observation,
            response_body,
            latency_ms: start.elapsed().as_millis() as u64,
        }
    }
}

fn classify_error(e: ureq::Error) -> TransportFailure {
    match e {
        ureq::Error::Timeout(_) => TransportFailure::Timeout,
        ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
            TransportFailure::ConnectionRefused
        }
        ureq::Error::Io(io) => classify_io(&io),
        _ => TransportFailure::ProtocolError,
    }
}

fn classify_io(e: &std::io::Error) -> TransportFailure {
    use std::io::ErrorKind;
    match e.kind() {
        ErrorKind::TimedOut | ErrorKind::WouldBlock => TransportFailure::Timeout,
        ErrorKind::ConnectionRefused | ErrorKind::ConnectionReset | ErrorKind::NotConnected => {
            TransportFailure::ConnectionRefused
        }
        _ => TransportFailure::ProtocolError,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oas::{Leaf, Parameter};
    use crate::value::DataType;

    fn leaf(v: FieldValue) -> SchemaNode {
        let mut l = Leaf::new(v.datatype());
        l.sample = Some(v);
        SchemaNode::Leaf(l)
    }

    fn function(method: HttpMethod, path: &str) -> ApiFunction {
        ApiFunction {
            operation_id: "op".into(),
            method,
            path_template: path.into(),
            headers: vec![],
            query_parameters: vec![],
            path_parameters: vec![],
            body: None,
        }
    }

    #[test]
    fn substitutes_path_template() {
        let mut f = function(HttpMethod::Get, "/pet/{petId}");
        f.path_parameters.push(Parameter {
            name: "petId".into(),
            required: true,
            schema: leaf(FieldValue::Integer(7)),
        });
        let req = build_request(&f, "http://localhost:8080").unwrap();
        assert_eq!(req.method, HttpMethod::Get);
        assert_eq!(req.url, "http://localhost:8080/pet/7");
        assert!(req.body.is_none());
    }

    #[test]
    fn no_inputs_means_no_query_and_no_body() {
        let req = build_request(&function(HttpMethod::Get, "/ping"), "http://h:1/").unwrap();
        assert_eq!(req.url, "http://h:1/ping");
        assert!(req.headers.is_empty());
        assert!(req.body.is_none());
    }

    #[test]
    fn reserved_characters_are_percent_encoded() {
        let mut f = function(HttpMethod::Get, "/user/{username}");
        f.path_parameters.push(Parameter {
            name: "username".into(),
            required: true,
            schema: leaf(FieldValue::string("a/b c")),
        });
        f.query_parameters.push(Parameter {
            name: "q".into(),
            required: false,
            schema: leaf(FieldValue::string("x&y=z")),
        });
        let req = build_request(&f, "http://h").unwrap();
        assert_eq!(req.url, "http://h/user/a%2Fb%20c?q=x%26y%3Dz");
    }

    #[test]
    fn body_is_json_with_content_type() {
        let mut f = function(HttpMethod::Post, "/pet");
        f.body = Some(SchemaNode::object(vec![
            ("id".into(), leaf(FieldValue::Integer(1))),
            ("photo".into(), leaf(FieldValue::Byte(vec![0xFF]))),
        ]));
        let req = build_request(&f, "http://h").unwrap();
        assert_eq!(req.body.as_deref(), Some(r#"{"id":1,"photo":"/w=="}"#));
        assert!(req
            .headers
            .contains(&("Content-Type".into(), "application/json".into())));
    }

    #[test]
    fn missing_sample_is_an_error() {
        let mut f = function(HttpMethod::Get, "/pet/{petId}");
        f.path_parameters.push(Parameter {
            name: "petId".into(),
            required: true,
            schema: SchemaNode::leaf(DataType::Integer),
        });
        assert!(matches!(
            build_request(&f, "http://h"),
            Err(BuildError::MissingSample { .. })
        ));
    }

    #[test]
    fn header_values_escape_control_bytes() {
        assert_eq!(header_value(&FieldValue::string("a\nb%")), "a%0Ab%25");
    }

    #[test]
    fn closed_port_is_connection_refused() {
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let exec = HttpExecutor::new(2000, vec![]);
        let req = build_request(
            &function(HttpMethod::Get, "/ping"),
            &format!("http://127.0.0.1:{port}"),
        )
        .unwrap();
        let ex = exec.execute(&req);
        assert_eq!(
            ex.observation,
            Observation::Transport(TransportFailure::ConnectionRefused)
        );
    }
}
