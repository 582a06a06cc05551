use std::io;
use std::path::Path;

use rand::Rng;

use crate::identity::{self, IdentifierStore};
use crate::oas::{ApiFunction, Location, Slot};
use crate::value::{DataType, FieldValue, RawText};

/// Replacement material for the dictionary mutator.
///
/// `dynamic_entries` are harvested identifiers; when any exist they are
/// preferred with probability 0.5.
#[derive(Debug, Clone)]
pub struct Dictionary<'a> {
    pub static_entries: Vec<FieldValue>,
    pub dynamic_entries: DynamicEntries<'a>,
}

#[derive(Debug, Clone)]
pub enum DynamicEntries<'a> {
    Values(Vec<FieldValue>),
    /// Live view of one resource in the identifier store, converted to
    /// `datatype` on draw.
    Store {
        store: &'a IdentifierStore,
        resource: String,
        datatype: DataType,
    },
}

impl Dictionary<'static> {
    pub fn builtin(datatype: DataType) -> Self {
        Dictionary {
            static_entries: static_entries(datatype),
            dynamic_entries: DynamicEntries::Values(Vec::new()),
        }
    }

    pub fn with_dynamic(datatype: DataType, dynamic: Vec<FieldValue>) -> Self {
        Dictionary {
            static_entries: static_entries(datatype),
            dynamic_entries: DynamicEntries::Values(dynamic),
        }
    }
}

impl Dictionary<'_> {
    pub fn dynamic_len(&self) -> usize {
        match &self.dynamic_entries {
            DynamicEntries::Values(v) => v.len(),
            DynamicEntries::Store {
                store, resource, ..
            } => store.count(resource),
        }
    }

    fn dynamic_at(&self, index: usize) -> Option<FieldValue> {
        match &self.dynamic_entries {
            DynamicEntries::Values(v) => v.get(index).cloned(),
            DynamicEntries::Store {
                store,
                resource,
                datatype,
            } => store.get(resource, index)?.convert_to(*datatype),
        }
    }

    /// Draws one entry. `None` only when both entry lists are empty.
    pub fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<FieldValue> {
        let dynamic = self.dynamic_len();
        if dynamic > 0 && rng.random_bool(0.5) {
            if let Some(v) = self.dynamic_at(rng.random_range(0..dynamic)) {
                return Some(v);
            }
        }
        if self.static_entries.is_empty() {
            return None;
        }
        Some(self.static_entries[rng.random_range(0..self.static_entries.len())].clone())
    }
}

/// Built-in boundary and attack values for a datatype.
pub fn static_entries(datatype: DataType) -> Vec<FieldValue> {
    match datatype {
        DataType::Integer => [0, -1, i64::from(i32::MAX), i64::from(i32::MIN), i64::MAX]
            .into_iter()
            .map(FieldValue::Integer)
            .collect(),
        DataType::Float => [0.0, -0.0, f64::NAN, 1e308, -1e308]
            .into_iter()
            .map(FieldValue::Float)
            .collect(),
        DataType::Boolean => vec![FieldValue::Boolean(true), FieldValue::Boolean(false)],
        DataType::String => vec![
            FieldValue::string(""),
            FieldValue::string(&"A".repeat(4096)),
            FieldValue::string("%s%n%x"),
            FieldValue::string("' OR 1=1;--"),
            FieldValue::string("../../etc/passwd"),
            // lone low surrogate
            FieldValue::String(RawText::from_utf16(&[0xDC00])),
            // high surrogate with nothing after it
            FieldValue::String(RawText::from_utf16(&[0x61, 0xD800])),
            FieldValue::string("a\u{000B}b"),
            FieldValue::string("\u{000C}\u{00A0}"),
        ],
        DataType::Byte => vec![
            FieldValue::Byte(Vec::new()),
            FieldValue::Byte(vec![0; 16]),
            FieldValue::Byte(vec![0xFF; 16]),
        ],
    }
}

/// Builds per-slot dictionaries: built-in entries, user-supplied lines, the
/// slot's own enum members, and harvested identifiers for identifier-like
/// slots.
#[derive(Debug, Clone, Default)]
pub struct DictionarySource {
    user_entries: Vec<String>,
}

impl DictionarySource {
    pub fn builtin() -> Self {
        Self::default()
    }

    pub fn with_user_entries(entries: Vec<String>) -> Self {
        DictionarySource {
            user_entries: entries,
        }
    }

    /// One entry per line; blank lines are skipped.
    pub fn load(path: &Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::with_user_entries(
            text.lines()
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        ))
    }

    pub fn user_entries(&self) -> &[String] {
        &self.user_entries
    }

    pub fn dictionary<'a>(
        &self,
        function: &ApiFunction,
        slot: &Slot,
        store: Option<&'a IdentifierStore>,
    ) -> Dictionary<'a> {
        let mut entries = static_entries(slot.datatype);
        for line in &self.user_entries {
            if let Some(v) = parse_user_entry(slot.datatype, line) {
                if !entries.contains(&v) {
                    entries.push(v);
                }
            }
        }
        for v in &slot.enum_values {
            if !entries.contains(v) {
                entries.push(v.clone());
            }
        }
        let dynamic_entries = match (store, identity::slot_resource(function, slot)) {
            (Some(store), Some(resource)) if is_identifier_like(slot) => DynamicEntries::Store {
                store,
                resource,
                datatype: slot.datatype,
            },
            _ => DynamicEntries::Values(Vec::new()),
        };
        Dictionary {
            static_entries: entries,
            dynamic_entries,
        }
    }
}

fn is_identifier_like(slot: &Slot) -> bool {
    slot.id.location == Location::Path
        || slot
            .key
            .as_deref()
            .is_some_and(|k| k.to_lowercase().ends_with("id"))
}

fn parse_user_entry(datatype: DataType, line: &str) -> Option<FieldValue> {
    match datatype {
        DataType::Integer => line.trim().parse().ok().map(FieldValue::Integer),
        DataType::Float => line.trim().parse().ok().map(FieldValue::Float),
        DataType::Boolean => line.trim().parse().ok().map(FieldValue::Boolean),
        DataType::String => Some(FieldValue::string(line)),
        DataType::Byte => Some(FieldValue::Byte(line.as_bytes().to_vec())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_datatype_has_static_entries() {
        for dt in DataType::ALL {
            let entries = static_entries(dt);
            assert!(!entries.is_empty());
            assert!(entries.iter().all(|v| v.datatype() == dt));
        }
    }

    #[test]
    fn dynamic_entries_drawn_about_half_the_time() {
        let dict = Dictionary::with_dynamic(DataType::Integer, vec![FieldValue::Integer(424242)]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hits = (0..10_000)
            .filter(|_| dict.pick(&mut rng) == Some(FieldValue::Integer(424242)))
            .count();
        assert!((4_500..5_500).contains(&hits), "{hits}");
    }

    #[test]
    fn user_entries_parse_per_datatype() {
        assert_eq!(
            parse_user_entry(DataType::Integer, "12"),
            Some(FieldValue::Integer(12))
        );
        assert_eq!(parse_user_entry(DataType::Integer, "x"), None);
        assert_eq!(
            parse_user_entry(DataType::Boolean, "true"),
            Some(FieldValue::Boolean(true))
        );
        assert_eq!(
            parse_user_entry(DataType::String, " a "),
            Some(FieldValue::string(" a "))
        );
    }
}
