//! Identifier harvesting for dependent functions.
//!
//! Successful creational responses are scanned for keys that are, or end in,
//! `id`. The key prefix names the resource (`userId` -> `user`), plural forms
//! are folded to singular, and the values are kept so that later functions
//! can draw real identifiers from the dictionary mutator.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use indexmap::IndexSet;
use rand::Rng;
use serde::Serialize;
use serde_json::Value;

use crate::oas::{path_placeholders, ApiFunction, Location, Slot};
use crate::value::FieldValue;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct IdentifierStore {
    entries: BTreeMap<String, IndexSet<FieldValue>>,
}

/// Single-writer / multi-reader handle shared by concurrently running agents.
pub type SharedIdentifierStore = Arc<RwLock<IdentifierStore>>;

impl IdentifierStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn shared(self) -> SharedIdentifierStore {
        Arc::new(RwLock::new(self))
    }

    /// Returns `true` if the value was not already stored.
    pub fn insert(&mut self, resource: &str, value: FieldValue) -> bool {
        let key = singularize(&resource.to_lowercase());
        self.entries.entry(key).or_default().insert(value)
    }

    pub fn extend(&mut self, harvested: impl IntoIterator<Item = (String, FieldValue)>) {
        for (resource, value) in harvested {
            self.insert(&resource, value);
        }
    }

    /// Stored identifiers for `resource` (singular or plural) in insertion
    /// order.
    pub fn values(&self, resource: &str) -> impl Iterator<Item = &FieldValue> {
        self.entries
            .get(&singularize(&resource.to_lowercase()))
            .into_iter()
            .flat_map(|set| set.iter())
    }

    pub fn get(&self, resource: &str, index: usize) -> Option<&FieldValue> {
        self.entries
            .get(&singularize(&resource.to_lowercase()))?
            .get_index(index)
    }

    pub fn count(&self, resource: &str) -> usize {
        self.entries
            .get(&singularize(&resource.to_lowercase()))
            .map_or(0, IndexSet::len)
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(IndexSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn resources(&self) -> impl Iterator<Item = (&str, usize)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.len()))
    }
}

/// Uniformly random stored identifier for `resource_name`.
pub fn lookup<R: Rng + ?Sized>(
    store: &IdentifierStore,
    resource_name: &str,
    rng: &mut R,
) -> Option<FieldValue> {
    let set = store
        .entries
        .get(&singularize(&resource_name.to_lowercase()))?;
    if set.is_empty() {
        return None;
    }
    set.get_index(rng.random_range(0..set.len())).cloned()
}

/// Scans a response body for identifier-like keys.
///
/// A top-level `id` belongs to the function's own resource; a nested `id`
/// belongs to the enclosing object key (`category.id` -> `category`).
/// Non-JSON bodies harvest nothing.
pub fn harvest_identifiers(
    function: &ApiFunction,
    response_body: &str,
) -> Vec<(String, FieldValue)> {
    let Ok(body) = serde_json::from_str::<Value>(response_body) else {
        return Vec::new();
    };
    let primary = function.primary_resource();
    let mut out = Vec::new();
    walk(&body, None, primary.as_deref(), &mut out);
    out
}

fn walk(
    value: &Value,
    parent: Option<&str>,
    primary: Option<&str>,
    out: &mut Vec<(String, FieldValue)>,
) {
    match value {
        Value::Object(map) => {
            for (key, child) in map {
                if let Some(resource) = identifier_resource(key, parent, primary) {
                    let harvested = match child {
                        Value::Number(n) => n.as_i64().map(FieldValue::Integer),
                        Value::String(s) => Some(FieldValue::string(s)),
                        _ => None,
                    };
                    if let Some(v) = harvested {
                        out.push((resource, v));
                    }
                }
                if child.is_object() || child.is_array() {
                    walk(child, Some(key), primary, out);
                }
            }
        }
        Value::Array(items) => {
            for item in items {
                walk(item, parent, primary, out);
            }
        }
        _ => {}
    }
}

/// Resource named by an identifier key, or `None` if the key is not
/// identifier-like.
fn identifier_resource(key: &str, parent: Option<&str>, primary: Option<&str>) -> Option<String> {
    let lower = key.to_lowercase();
    let prefix = lower.strip_suffix("id")?;
    let prefix = prefix.trim_end_matches(['_', '-', '.']);
    if !prefix.is_empty() {
        return Some(singularize(prefix));
    }
    match parent {
        Some(p) => Some(singularize(&p.to_lowercase())),
        None => primary.map(str::to_string),
    }
}

/// Resource whose identifiers may fill `slot`, if the slot is
/// identifier-like: a key ending in `id`, or any path parameter (named after
/// the literal segment preceding it).
pub fn slot_resource(function: &ApiFunction, slot: &Slot) -> Option<String> {
    let key = slot.key.as_deref()?;
    let primary = function.primary_resource();
    let parent = if slot.id.location == Location::Body {
        slot.parent_key.as_deref()
    } else {
        None
    };
    if let Some(r) = identifier_resource(key, parent, primary.as_deref()) {
        return Some(r);
    }
    if slot.id.location == Location::Path {
        return segment_before_placeholder(&function.path_template, &slot.id.parameter).or(primary);
    }
    None
}

fn segment_before_placeholder(template: &str, name: &str) -> Option<String> {
    let needle = format!("{{{name}}}");
    let segments: Vec<&str> = template.split('/').filter(|s| !s.is_empty()).collect();
    let idx = segments.iter().position(|s| *s == needle)?;
    segments[..idx]
        .iter()
        .rev()
        .find(|s| path_placeholders(s).is_empty())
        .map(|s| singularize(&s.to_lowercase()))
}

/// Resource a path operates on: its last literal segment, singularized.
pub fn primary_resource(path_template: &str) -> Option<String> {
    path_template
        .split('/')
        .rfind(|s| !s.is_empty() && path_placeholders(s).is_empty())
        .map(|s| singularize(&s.to_lowercase()))
}

/// Suffix-rule singularization: `-ies` -> `-y`, `-ses` -> `-se`, otherwise a
/// trailing `s` is dropped (but not from `-ss`).
pub fn singularize(word: &str) -> String {
    if let Some(stem) = word.strip_suffix("ies") {
        if !stem.is_empty() {
            return format!("{stem}y");
        }
    }
    if let Some(stem) = word.strip_suffix("ses") {
        if !stem.is_empty() {
            return format!("{stem}se");
        }
    }
    if word.len() > 1 && word.ends_with('s') && !word.ends_with("ss") {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

/// Inverse of [`singularize`] for regular nouns.
pub fn pluralize(word: &str) -> String {
    let bytes = word.as_bytes();
    if let [.., prev, b'y'] = bytes {
        if !b"aeiou".contains(prev) {
            return format!("{}ies", &word[..word.len() - 1]);
        }
    }
    format!("{word}s")
}
