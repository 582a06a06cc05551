//! The eight mutation methods and the datatype-to-action matrix.
//!
//! Byte-level methods operate on a value's canonical encoding (see
//! [`FieldValue::canonical_bytes`]) and decode the result back into the same
//! datatype.

mod dictionary;

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::Serialize;

use crate::identity::IdentifierStore;
use crate::oas::{ApiFunction, SlotId};
use crate::value::{DataType, FieldValue, RawText};

pub use dictionary::{static_entries, Dictionary, DictionarySource, DynamicEntries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum MutationAction {
    BitFlip,
    ByteShuffle,
    ByteInjectDelete,
    ByteSubstitute,
    Truncate,
    Dictionary,
    Arithmetic,
    RandomGen,
}

impl MutationAction {
    pub const ALL: [MutationAction; 8] = [
        MutationAction::BitFlip,
        MutationAction::ByteShuffle,
        MutationAction::ByteInjectDelete,
        MutationAction::ByteSubstitute,
        MutationAction::Truncate,
        MutationAction::Dictionary,
        MutationAction::Arithmetic,
        MutationAction::RandomGen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MutationAction::BitFlip => "BitFlip",
            MutationAction::ByteShuffle => "ByteShuffle",
            MutationAction::ByteInjectDelete => "ByteInjectDelete",
            MutationAction::ByteSubstitute => "ByteSubstitute",
            MutationAction::Truncate => "Truncate",
            MutationAction::Dictionary => "Dictionary",
            MutationAction::Arithmetic => "Arithmetic",
            MutationAction::RandomGen => "RandomGen",
        }
    }
}

impl fmt::Display for MutationAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MutationError {
    #[error("{action} cannot mutate a {datatype} value")]
    InapplicableAction {
        action: MutationAction,
        datatype: DataType,
    },
    #[error("slot {0} has no sample to mutate")]
    MissingSample(String),
}

const NUMERIC: &[MutationAction] = &[
    MutationAction::BitFlip,
    MutationAction::Arithmetic,
    MutationAction::Dictionary,
    MutationAction::RandomGen,
];
const BOOLEAN: &[MutationAction] = &[MutationAction::Dictionary, MutationAction::RandomGen];
const BYTES: &[MutationAction] = &[
    MutationAction::BitFlip,
    MutationAction::ByteShuffle,
    MutationAction::ByteInjectDelete,
    MutationAction::ByteSubstitute,
    MutationAction::Truncate,
    MutationAction::Dictionary,
    MutationAction::RandomGen,
];

/// Actions available to a datatype's Q-table, in table column order.
pub fn applicable_actions(datatype: DataType) -> &'static [MutationAction] {
    match datatype {
        DataType::Integer | DataType::Float => NUMERIC,
        DataType::Boolean => BOOLEAN,
        DataType::String | DataType::Byte => BYTES,
    }
}

const ARITHMETIC_CONSTANTS: [i64; 5] = [1, 2, 16, 255, (1 << 31) - 1];

pub fn mutate<R: Rng + ?Sized>(
    value: &FieldValue,
    action: MutationAction,
    rng: &mut R,
    dict: &Dictionary<'_>,
) -> Result<FieldValue, MutationError> {
    let datatype = value.datatype();
    if !applicable_actions(datatype).contains(&action) {
        return Err(MutationError::InapplicableAction { action, datatype });
    }
    let out = match action {
        MutationAction::BitFlip => {
            let mut bytes = value.canonical_bytes();
            flip_random_bits(&mut bytes, rng);
            from_bytes(datatype, bytes)
        }
        MutationAction::ByteShuffle => {
            let mut bytes = value.canonical_bytes();
            bytes.shuffle(rng);
            from_bytes(datatype, bytes)
        }
        MutationAction::ByteInjectDelete => {
            let mut bytes = value.canonical_bytes();
            inject_or_delete(&mut bytes, rng);
            from_bytes(datatype, bytes)
        }
        MutationAction::ByteSubstitute => {
            let mut bytes = value.canonical_bytes();
            if !bytes.is_empty() {
                let n = rng.random_range(1..=4usize).min(bytes.len());
                for pos in index::sample(rng, bytes.len(), n) {
                    bytes[pos] = rng.random();
                }
            }
            from_bytes(datatype, bytes)
        }
        MutationAction::Truncate => {
            let mut bytes = value.canonical_bytes();
            if !bytes.is_empty() {
                let len = rng.random_range(0..bytes.len());
                bytes.truncate(len);
            }
            from_bytes(datatype, bytes)
        }
        MutationAction::Dictionary => dict
            .pick(rng)
            .filter(|v| v.datatype() == datatype)
            .unwrap_or_else(|| random_value(datatype, rng)),
        MutationAction::Arithmetic => arithmetic(value, rng),
        MutationAction::RandomGen => random_value(datatype, rng),
    };
    Ok(out)
}

fn from_bytes(datatype: DataType, bytes: Vec<u8>) -> FieldValue {
    FieldValue::from_canonical_bytes(datatype, bytes)
        .expect("byte mutators keep fixed-width encodings intact")
}

/// Flips between one and four distinct bits. The positions depend only on
/// the rng and the buffer length.
pub fn flip_random_bits<R: Rng + ?Sized>(bytes: &mut [u8], rng: &mut R) {
    let bits = bytes.len() * 8;
    if bits == 0 {
        return;
    }
    let k = rng.random_range(1..=4usize).min(bits);
    for bit in index::sample(rng, bits, k) {
        bytes[bit / 8] ^= 1 << (bit % 8);
    }
}

fn inject_or_delete<R: Rng + ?Sized>(bytes: &mut Vec<u8>, rng: &mut R) {
    let n = rng.random_range(1..=4usize);
    if bytes.is_empty() || rng.random_bool(0.5) {
        for _ in 0..n {
            let pos = rng.random_range(0..=bytes.len());
            bytes.insert(pos, rng.random());
        }
    } else {
        for _ in 0..n.min(bytes.len()) {
            let pos = rng.random_range(0..bytes.len());
            bytes.remove(pos);
        }
    }
}

fn arithmetic<R: Rng + ?Sized>(value: &FieldValue, rng: &mut R) -> FieldValue {
    let op = rng.random_range(0..4u8);
    let c = ARITHMETIC_CONSTANTS[rng.random_range(0..ARITHMETIC_CONSTANTS.len())];
    match value {
        FieldValue::Integer(v) => FieldValue::Integer(match op {
            0 => v.wrapping_add(c),
            1 => v.wrapping_sub(c),
            2 => v.wrapping_mul(c),
            _ => v.wrapping_neg(),
        }),
        FieldValue::Float(v) => {
            let c = c as f64;
            FieldValue::Float(match op {
                0 => v + c,
                1 => v - c,
                2 => v * c,
                _ => -v,
            })
        }
        other => other.clone(),
    }
}

/// Fresh value ignoring any schema constraint.
pub fn random_value<R: Rng + ?Sized>(datatype: DataType, rng: &mut R) -> FieldValue {
    match datatype {
        DataType::Integer => FieldValue::Integer(rng.random()),
        DataType::Float => FieldValue::Float(f64::from_bits(rng.random())),
        DataType::Boolean => FieldValue::Boolean(rng.random()),
        DataType::String => {
            let len = rng.random_range(0..=32usize);
            let bytes = (0..len).map(|_| rng.random_range(0x20u8..=0x7E)).collect();
            FieldValue::String(RawText::from_bytes(bytes))
        }
        DataType::Byte => {
            let len = rng.random_range(0..=32usize);
            FieldValue::Byte((0..len).map(|_| rng.random()).collect())
        }
    }
}

/// Returns a copy of `function` with every slot in `chosen` mutated. Slots
/// are visited in [`ApiFunction::slots`] order so the rng stream is stable.
pub fn mutate_function_inputs<R: Rng + ?Sized>(
    function: &ApiFunction,
    chosen: &BTreeMap<SlotId, MutationAction>,
    rng: &mut R,
    source: &DictionarySource,
    store: Option<&IdentifierStore>,
) -> Result<ApiFunction, MutationError> {
    let slots = function.slots();
    let mut out = function.clone();
    let mut i = 0;
    let mut result = Ok(());
    out.for_each_leaf_mut(&mut |id, leaf| {
        let slot = &slots[i];
        i += 1;
        if result.is_err() {
            return;
        }
        let Some(&action) = chosen.get(id) else {
            return;
        };
        let Some(sample) = leaf.sample.as_ref() else {
            result = Err(MutationError::MissingSample(id.to_string()));
            return;
        };
        let dict = if action == MutationAction::Dictionary {
            source.dictionary(function, slot, store)
        } else {
            Dictionary {
                static_entries: Vec::new(),
                dynamic_entries: DynamicEntries::Values(Vec::new()),
            }
        };
        match mutate(sample, action, rng, &dict) {
            Ok(v) => leaf.sample = Some(v),
            Err(e) => result = Err(e),
        }
    });
    result.map(|()| out)
}
