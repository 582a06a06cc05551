use std::collections::BTreeMap;

use percent_encoding::percent_decode_str;
use serde_json::{json, Map, Value};

/// The six planted defects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SeededVuln {
    StringToNumber,
    MaliciousContent,
    IllegalSurrogatePair,
    UnmatchedSurrogatePair,
    InvalidWhitespaceStore,
    FetchStatusError,
}

impl SeededVuln {
    pub const ALL: [SeededVuln; 6] = [
        SeededVuln::StringToNumber,
        SeededVuln::MaliciousContent,
        SeededVuln::IllegalSurrogatePair,
        SeededVuln::UnmatchedSurrogatePair,
        SeededVuln::InvalidWhitespaceStore,
        SeededVuln::FetchStatusError,
    ];

    /// Class-like token the defect puts in its error body.
    pub fn signature(self) -> &'static str {
        match self {
            SeededVuln::StringToNumber => "NumberFormatException",
            SeededVuln::MaliciousContent => {
                "org.springframework.security.web.firewall.SecurityFilterException"
            }
            SeededVuln::IllegalSurrogatePair | SeededVuln::InvalidWhitespaceStore => {
                "com.fasterxml.jackson.core.JsonParseException"
            }
            SeededVuln::UnmatchedSurrogatePair => "com.fasterxml.jackson.core.io.JsonEOFException",
            SeededVuln::FetchStatusError => "IllegalStateException",
        }
    }

    /// Status class a fuzzer should file the defect under: the whitespace
    /// defect shows up as a successful creation that cannot be read back.
    pub fn status_class(self) -> u16 {
        match self {
            SeededVuln::InvalidWhitespaceStore => 2,
            _ => 5,
        }
    }
}

pub struct Reply {
    pub status: u16,
    pub content_type: &'static str,
    pub body: String,
}

fn reply(status: u16, body: Value) -> Reply {
    Reply {
        status,
        content_type: "application/json",
        body: body.to_string(),
    }
}

fn message(status: u16, text: &str) -> Reply {
    reply(status, json!({ "code": status, "message": text }))
}

const PET_STATUSES: [&str; 3] = ["available", "pending", "sold"];
const FIND_LIMIT: usize = 20;

/// In-memory store. Ids are handed out sequentially from 1.
#[derive(Debug, Default)]
pub struct MockState {
    pub vulnerable: bool,
    pub seed: u64,
    pets: BTreeMap<i64, Map<String, Value>>,
    orders: BTreeMap<i64, Map<String, Value>>,
    users: BTreeMap<String, Map<String, Value>>,
    next_pet: i64,
    next_order: i64,
    next_user: i64,
}

impl MockState {
    pub fn new(seed: u64, vulnerable: bool) -> Self {
        MockState {
            vulnerable,
            seed,
            next_pet: 1,
            next_order: 1,
            next_user: 1,
            ..Default::default()
        }
    }
}

/// Routes served, as (method, OAS path template).
pub const ROUTES: &[(&str, &str)] = &[
    ("GET", "/ping"),
    ("POST", "/pet"),
    ("PUT", "/pet"),
    ("GET", "/pet/findByStatus"),
    ("GET", "/pet/{petId}"),
    ("DELETE", "/pet/{petId}"),
    ("POST", "/store/order"),
    ("GET", "/store/order/{orderId}"),
    ("DELETE", "/store/order/{orderId}"),
    ("POST", "/user"),
    ("GET", "/user/{username}"),
    ("PUT", "/user/{username}"),
    ("DELETE", "/user/{username}"),
];

/// Handles one request. `raw_url` is the request target exactly as sent.
pub fn handle(state: &mut MockState, method: &str, raw_url: &str, body: &str) -> Reply {
    let (raw_path, raw_query) = raw_url.split_once('?').unwrap_or((raw_url, ""));

    if state.vulnerable && firewall_rejects(raw_path) {
        return message(
            500,
            &format!(
                "{}: The request was rejected because the URL contained a potentially malicious String",
                SeededVuln::MaliciousContent.signature()
            ),
        );
    }

    let segments: Vec<String> = raw_path
        .split('/')
        .filter(|s| !s.is_empty())
        .map(|s| percent_decode_str(s).decode_utf8_lossy().into_owned())
        .collect();
    let segs: Vec<&str> = segments.iter().map(String::as_str).collect();

    match (method, segs.as_slice()) {
        ("GET", ["ping"]) => reply(200, json!({ "status": "ok", "seed": state.seed })),
        ("POST", ["pet"]) => with_json(state, body, create_pet),
        ("PUT", ["pet"]) => with_json(state, body, update_pet),
        ("GET", ["pet", "findByStatus"]) => find_by_status(state, raw_query),
        ("GET", ["pet", id]) => with_id(state, id, get_pet),
        ("DELETE", ["pet", id]) => with_id(state, id, |st, id| match st.pets.remove(&id) {
            Some(_) => message(200, &format!("pet {id} deleted")),
            None => message(404, "Pet not found"),
        }),
        ("POST", ["store", "order"]) => with_json(state, body, place_order),
        ("GET", ["store", "order", id]) => with_id(state, id, |st, id| match st.orders.get(&id) {
            Some(o) => reply(200, Value::Object(o.clone())),
            None => message(404, "Order not found"),
        }),
        ("DELETE", ["store", "order", id]) => {
            with_id(state, id, |st, id| match st.orders.remove(&id) {
                Some(_) => message(200, &format!("order {id} deleted")),
                None => message(404, "Order not found"),
            })
        }
        ("POST", ["user"]) => with_json(state, body, create_user),
        ("GET", ["user", name]) => match state.users.get(*name) {
            Some(u) => reply(200, Value::Object(u.clone())),
            None => message(404, "User not found"),
        },
        ("PUT", ["user", name]) => {
            let name = name.to_string();
            with_json(state, body, move |st, v| update_user(st, &name, v))
        }
        ("DELETE", ["user", name]) => match state.users.remove(*name) {
            Some(_) => message(200, "user deleted"),
            None => message(404, "User not found"),
        },
        (
            _,
            ["ping" | "pet" | "user"]
            | ["pet", _]
            | ["store", "order"]
            | ["store", "order", _]
            | ["user", _],
        ) => message(405, "Method not allowed"),
        _ => message(404, "No such route"),
    }
}

/// Strict-firewall style URL screening on the raw (still encoded) path.
fn firewall_rejects(raw_path: &str) -> bool {
    let lower = raw_path.to_ascii_lowercase();
    const BLOCKED: [&str; 7] = ["%2f", "%5c", "%25", ";", "%3b", "%00", "//"];
    BLOCKED.iter().any(|b| lower.contains(b)) || raw_path.split('/').any(|s| s == "." || s == "..")
}

fn with_id(
    state: &mut MockState,
    raw: &str,
    f: impl FnOnce(&mut MockState, i64) -> Reply,
) -> Reply {
    match raw.parse::<i64>() {
        Ok(id) => f(state, id),
        Err(_) if state.vulnerable => message(
            500,
            &format!(
                "{}: For input string: \"{raw}\"",
                SeededVuln::StringToNumber.signature()
            ),
        ),
        Err(_) => message(400, "Invalid ID supplied"),
    }
}

fn with_json(
    state: &mut MockState,
    body: &str,
    f: impl FnOnce(&mut MockState, Map<String, Value>) -> Reply,
) -> Reply {
    if state.vulnerable {
        if let Some(fault) = surrogate_fault(body) {
            return message(500, &fault);
        }
    }
    match serde_json::from_str::<Value>(body) {
        Ok(Value::Object(map)) => f(state, map),
        Ok(_) => message(400, "Request body must be a JSON object"),
        Err(e) => message(400, &format!("Malformed JSON: {e}")),
    }
}

/// Scans `\uXXXX` escapes for surrogates that do not pair up.
fn surrogate_fault(body: &str) -> Option<String> {
    let bytes = body.as_bytes();
    let unit_at = |i: usize| -> Option<u16> {
        if bytes.get(i) == Some(&b'\\') && bytes.get(i + 1) == Some(&b'u') {
            let hex = body.get(i + 2..i + 6)?;
            u16::from_str_radix(hex, 16).ok()
        } else {
            None
        }
    };
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'\\' {
            i += 1;
            continue;
        }
        let Some(unit) = unit_at(i) else {
            i += 2;
            continue;
        };
        match unit {
            0xD800..=0xDBFF => match unit_at(i + 6) {
                Some(0xDC00..=0xDFFF) => i += 12,
                _ => {
                    return Some(format!(
                        "{}: Unexpected end-of-input: second part of surrogate pair missing (0x{unit:x})",
                        SeededVuln::UnmatchedSurrogatePair.signature()
                    ))
                }
            },
            0xDC00..=0xDFFF => {
                return Some(format!(
                    "{}: Illegal surrogate pair: unexpected second part 0x{unit:x} without first part",
                    SeededVuln::IllegalSurrogatePair.signature()
                ))
            }
            _ => i += 6,
        }
    }
    None
}

/// Whitespace other than plain space, tab, CR and LF.
fn has_control_whitespace(s: &str) -> bool {
    s.chars()
        .any(|c| c.is_whitespace() && !matches!(c, ' ' | '\t' | '\n' | '\r'))
}

fn check_pet(state: &MockState, pet: &Map<String, Value>) -> Result<(), Reply> {
    let Some(name) = pet.get("name").and_then(Value::as_str) else {
        return Err(message(400, "Pet name is required"));
    };
    if let Some(status) = pet.get("status") {
        let Some(status) = status.as_str() else {
            return Err(message(400, "Pet status must be a string"));
        };
        if !state.vulnerable && !PET_STATUSES.contains(&status) {
            return Err(message(400, "Invalid pet status"));
        }
    }
    if !state.vulnerable && has_control_whitespace(name) {
        return Err(message(400, "Pet name contains invalid whitespace"));
    }
    Ok(())
}

fn create_pet(state: &mut MockState, mut pet: Map<String, Value>) -> Reply {
    if let Err(r) = check_pet(state, &pet) {
        return r;
    }
    let id = state.next_pet;
    state.next_pet += 1;
    pet.insert("id".into(), json!(id));
    state.pets.insert(id, pet.clone());
    reply(200, Value::Object(pet))
}

fn update_pet(state: &mut MockState, pet: Map<String, Value>) -> Reply {
    let Some(id) = pet.get("id").and_then(Value::as_i64) else {
        return message(400, "Pet id is required");
    };
    if !state.pets.contains_key(&id) {
        return message(404, "Pet not found");
    }
    if let Err(r) = check_pet(state, &pet) {
        return r;
    }
    state.pets.insert(id, pet.clone());
    reply(200, Value::Object(pet))
}

fn get_pet(state: &mut MockState, id: i64) -> Reply {
    let Some(pet) = state.pets.get(&id) else {
        return message(404, "Pet not found");
    };
    if state.vulnerable {
        let name = pet.get("name").and_then(Value::as_str).unwrap_or("");
        if let Some(c) = name
            .chars()
            .find(|c| c.is_whitespace() && !matches!(c, ' ' | '\t' | '\n' | '\r'))
        {
            return message(
                404,
                &format!(
                    "{}: Illegal character ((CTRL-CHAR, code {})): only regular white space allowed between tokens",
                    SeededVuln::InvalidWhitespaceStore.signature(),
                    c as u32
                ),
            );
        }
        let status = pet.get("status").and_then(Value::as_str);
        if status.is_some_and(|s| !PET_STATUSES.contains(&s)) {
            return message(
                500,
                &format!(
                    "{}: unexpected status for pet record {id}",
                    SeededVuln::FetchStatusError.signature()
                ),
            );
        }
    }
    reply(200, Value::Object(pet.clone()))
}

fn find_by_status(state: &MockState, raw_query: &str) -> Reply {
    let status = raw_query
        .split('&')
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| *k == "status")
        .map(|(_, v)| percent_decode_str(v).decode_utf8_lossy().into_owned());
    let Some(status) = status.filter(|s| PET_STATUSES.contains(&s.as_str())) else {
        return message(400, "Invalid status value");
    };
    let pets: Vec<Value> = state
        .pets
        .values()
        .filter(|p| p.get("status").and_then(Value::as_str) == Some(status.as_str()))
        .take(FIND_LIMIT)
        .map(|p| Value::Object(p.clone()))
        .collect();
    reply(200, Value::Array(pets))
}

fn place_order(state: &mut MockState, mut order: Map<String, Value>) -> Reply {
    let pet_ok = order
        .get("petId")
        .and_then(Value::as_i64)
        .is_some_and(|id| state.pets.contains_key(&id));
    if !pet_ok {
        return message(400, "Order must reference an existing pet");
    }
    let id = state.next_order;
    state.next_order += 1;
    order.insert("id".into(), json!(id));
    state.orders.insert(id, order.clone());
    reply(200, Value::Object(order))
}

fn create_user(state: &mut MockState, mut user: Map<String, Value>) -> Reply {
    let Some(name) = user
        .get("username")
        .and_then(Value::as_str)
        .map(str::to_string)
    else {
        return message(400, "Username is required");
    };
    if name.is_empty() {
        return message(400, "Username is required");
    }
    if state.users.contains_key(&name) {
        return message(400, "Username already taken");
    }
    let id = state.next_user;
    state.next_user += 1;
    user.insert("id".into(), json!(id));
    state.users.insert(name, user.clone());
    reply(200, Value::Object(user))
}

fn update_user(state: &mut MockState, name: &str, mut user: Map<String, Value>) -> Reply {
    let Some(existing) = state.users.get(name) else {
        return message(404, "User not found");
    };
    user.insert(
        "id".into(),
        existing.get("id").cloned().unwrap_or(Value::Null),
    );
    user.insert("username".into(), json!(name));
    state.users.insert(name.to_string(), user.clone());
    reply(200, Value::Object(user))
}
