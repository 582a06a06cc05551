use rand::seq::IndexedRandom;
use rand::Rng;

use super::schema::{Constraints, Leaf, SchemaNode};
use super::OasError;
use crate::value::{DataType, FieldValue, RawText};

const DEFAULT_INT_SPAN: i64 = 1 << 31;
const DEFAULT_FLOAT_BOUND: f64 = 1e6;
const DEFAULT_STRING_LEN: usize = 12;
const ALNUM: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleOptions {
    /// Number of elements given to each instantiated array, clamped to the
    /// schema's `minItems`/`maxItems`.
    pub array_len: usize,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions { array_len: 1 }
    }
}

/// Draws a sample for every leaf of `schema` with default options.
pub fn instantiate_sample<R: Rng + ?Sized>(
    schema: &SchemaNode,
    rng: &mut R,
) -> Result<SchemaNode, OasError> {
    instantiate_sample_with(schema, rng, &SampleOptions::default())
}

pub fn instantiate_sample_with<R: Rng + ?Sized>(
    schema: &SchemaNode,
    rng: &mut R,
    options: &SampleOptions,
) -> Result<SchemaNode, OasError> {
    instantiate(schema, rng, options, "")
}

fn instantiate<R: Rng + ?Sized>(
    schema: &SchemaNode,
    rng: &mut R,
    options: &SampleOptions,
    location: &str,
) -> Result<SchemaNode, OasError> {
    match schema {
        SchemaNode::Leaf(leaf) => {
            Ok(SchemaNode::Leaf(Leaf {
                datatype: leaf.datatype,
                constraints: leaf.constraints.clone(),
                sample: Some(sample_leaf(leaf.datatype, &leaf.constraints, rng).map_err(
                    |reason| OasError::UnsatisfiableConstraint {
                        location: location.to_string(),
                        reason,
                    },
                )?),
            }))
        }
        SchemaNode::Object { properties } => {
            let mut out = Vec::with_capacity(properties.len());
            for (name, child) in properties {
                let loc = if location.is_empty() {
                    name.clone()
                } else {
                    format!("{location}.{name}")
                };
                out.push((name.clone(), instantiate(child, rng, options, &loc)?));
            }
            Ok(SchemaNode::Object { properties: out })
        }
        SchemaNode::Array {
            items, constraints, ..
        } => {
            let min = constraints.min_items.unwrap_or(0);
            let max = constraints.max_items.unwrap_or(usize::MAX);
            if min > max {
                return Err(OasError::UnsatisfiableConstraint {
                    location: location.to_string(),
                    reason: format!("minItems {min} > maxItems {max}"),
                });
            }
            let count = options.array_len.clamp(min, max);
            let loc = format!("{location}[]");
            let elements = (0..count)
                .map(|_| instantiate(items, rng, options, &loc))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SchemaNode::Array {
                items: items.clone(),
                constraints: constraints.clone(),
                elements,
            })
        }
    }
}

fn sample_leaf<R: Rng + ?Sized>(
    datatype: DataType,
    c: &Constraints,
    rng: &mut R,
) -> Result<FieldValue, String> {
    if !c.enum_values.is_empty() {
        return Ok(c.enum_values.choose(rng).cloned().expect("non-empty enum"));
    }
    match datatype {
        DataType::Boolean => Ok(FieldValue::Boolean(rng.random_bool(0.5))),
        DataType::Integer => {
            let (lo, hi) = integer_bounds(c)?;
            Ok(FieldValue::Integer(rng.random_range(lo..=hi)))
        }
        DataType::Float => {
            let lo = c.minimum.unwrap_or(match c.maximum {
                Some(max) => max - 2.0 * DEFAULT_FLOAT_BOUND,
                None => -DEFAULT_FLOAT_BOUND,
            });
            let hi = c.maximum.unwrap_or(match c.minimum {
                Some(min) => min + 2.0 * DEFAULT_FLOAT_BOUND,
                None => DEFAULT_FLOAT_BOUND,
            });
            let open = c.exclusive_minimum || c.exclusive_maximum;
            if lo > hi || (lo == hi && open) {
                return Err(format!("empty numeric range [{lo}, {hi}]"));
            }
            if lo == hi {
                return Ok(FieldValue::Float(lo));
            }
            let mut v = lo + (hi - lo) * rng.random::<f64>();
            if (c.exclusive_minimum && v <= lo) || (c.exclusive_maximum && v >= hi) || v > hi {
                v = lo + (hi - lo) / 2.0;
            }
            Ok(FieldValue::Float(v))
        }
        DataType::String => {
            let len = pick_length(c, rng)?;
            if let Some(s) = formatted(c.format.as_deref(), rng) {
                if c.min_length.is_none_or(|m| s.len() >= m)
                    && c.max_length.is_none_or(|m| s.len() <= m)
                {
                    return Ok(FieldValue::string(&s));
                }
            }
            let bytes = (0..len)
                .map(|_| *ALNUM.choose(rng).expect("alphabet"))
                .collect();
            Ok(FieldValue::String(RawText::from_bytes(bytes)))
        }
        DataType::Byte => {
            let len = pick_length(c, rng)?;
            Ok(FieldValue::Byte((0..len).map(|_| rng.random()).collect()))
        }
    }
}

fn integer_bounds(c: &Constraints) -> Result<(i64, i64), String> {
    let lo = c.minimum.map(|m| {
        let v = m.ceil();
        let v = if c.exclusive_minimum && v == m {
            v + 1.0
        } else {
            v
        };
        v.clamp(i64::MIN as f64, i64::MAX as f64) as i64
    });
    let hi = c.maximum.map(|m| {
        let v = m.floor();
        let v = if c.exclusive_maximum && v == m {
            v - 1.0
        } else {
            v
        };
        v.clamp(i64::MIN as f64, i64::MAX as f64) as i64
    });
    let (lo, hi) = match (lo, hi) {
        (Some(lo), Some(hi)) => (lo, hi),
        (Some(lo), None) => (lo, lo.saturating_add(DEFAULT_INT_SPAN - 1)),
        (None, Some(hi)) => (hi.saturating_sub(DEFAULT_INT_SPAN - 1), hi),
        (None, None) => (-DEFAULT_INT_SPAN, DEFAULT_INT_SPAN - 1),
    };
    if lo > hi {
        return Err(format!("empty integer range [{lo}, {hi}]"));
    }
    Ok((lo, hi))
}

fn pick_length<R: Rng + ?Sized>(c: &Constraints, rng: &mut R) -> Result<usize, String> {
    let min = c.min_length.unwrap_or(0);
    let max = c.max_length.unwrap_or(min.max(1) + DEFAULT_STRING_LEN - 1);
    if min > max {
        return Err(format!("minLength {min} > maxLength {max}"));
    }
    let lo = min.max(1).min(max);
    Ok(rng.random_range(lo..=max))
}

fn formatted<R: Rng + ?Sized>(format: Option<&str>, rng: &mut R) -> Option<String> {
    let word = |rng: &mut R, n: usize| -> String {
        (0..n)
            .map(|_| char::from(ALNUM[rng.random_range(0..26)]))
            .collect()
    };
    match format? {
        "date-time" => Some(format!(
            "20{:02}-{:02}-{:02}T{:02}:{:02}:{:02}Z",
            rng.random_range(0..30),
            rng.random_range(1..=12),
            rng.random_range(1..=28),
            rng.random_range(0..24),
            rng.random_range(0..60),
            rng.random_range(0..60)
        )),
        "date" => Some(format!(
            "20{:02}-{:02}-{:02}",
            rng.random_range(0..30),
            rng.random_range(1..=12),
            rng.random_range(1..=28)
        )),
        "email" => Some(format!("{}@example.com", word(rng, 8))),
        "uuid" => {
            let b: [u8; 16] = rng.random();
            let h: String = b.iter().map(|x| format!("{x:02x}")).collect();
            Some(format!(
                "{}-{}-{}-{}-{}",
                &h[..8],
                &h[8..12],
                &h[12..16],
                &h[16..20],
                &h[20..]
            ))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn leaf_with(datatype: DataType, constraints: Constraints) -> SchemaNode {
        SchemaNode::Leaf(Leaf {
            datatype,
            constraints,
            sample: None,
        })
    }

    fn sample_of(node: &SchemaNode) -> &FieldValue {
        node.as_leaf().unwrap().sample.as_ref().unwrap()
    }

    #[test]
    fn boolean_sample_is_a_boolean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let node = instantiate_sample(&SchemaNode::leaf(DataType::Boolean), &mut rng).unwrap();
        assert!(matches!(sample_of(&node), FieldValue::Boolean(_)));
    }

    #[test]
    fn enum_sample_is_a_member() {
        let members: Vec<_> = [1, 2, 3].into_iter().map(FieldValue::Integer).collect();
        let node = leaf_with(
            DataType::Integer,
            Constraints {
                enum_values: members.clone(),
                ..Default::default()
            },
        );
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = instantiate_sample(&node, &mut rng).unwrap();
            assert!(members.contains(sample_of(&out)));
        }
    }

    #[test]
    fn object_samples_respect_constraints_over_many_draws() {
        let node = SchemaNode::object(vec![
            (
                "name".into(),
                leaf_with(
                    DataType::String,
                    Constraints {
                        max_length: Some(8),
                        ..Default::default()
                    },
                ),
            ),
            ("id".into(), SchemaNode::leaf(DataType::Integer)),
        ]);
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let SchemaNode::Object { properties } = instantiate_sample(&node, &mut rng).unwrap()
            else {
                panic!("object expected");
            };
            match sample_of(&properties[0].1) {
                FieldValue::String(s) => assert!(s.len() <= 8),
                other => panic!("unexpected {other:?}"),
            }
            assert!(matches!(
                sample_of(&properties[1].1),
                FieldValue::Integer(_)
            ));
        }
    }

    #[test]
    fn identical_seeds_give_identical_samples() {
        let node = SchemaNode::object(vec![
            ("a".into(), SchemaNode::leaf(DataType::Float)),
            (
                "b".into(),
                SchemaNode::array(SchemaNode::leaf(DataType::Byte)),
            ),
        ]);
        let a = instantiate_sample(&node, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = instantiate_sample(&node, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn arrays_default_to_one_element() {
        let node = SchemaNode::array(SchemaNode::leaf(DataType::Integer));
        let out = instantiate_sample(&node, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let SchemaNode::Array { elements, .. } = out else {
            panic!()
        };
        assert_eq!(elements.len(), 1);
        let out = instantiate_sample_with(
            &node,
            &mut ChaCha8Rng::seed_from_u64(0),
            &SampleOptions { array_len: 3 },
        )
        .unwrap();
        let SchemaNode::Array { elements, .. } = out else {
            panic!()
        };
        assert_eq!(elements.len(), 3);
    }

    #[test]
    fn inverted_bounds_are_unsatisfiable() {
        let node = leaf_with(
            DataType::Integer,
            Constraints {
                minimum: Some(5.0),
                maximum: Some(1.0),
                ..Default::default()
            },
        );
        assert!(matches!(
            instantiate_sample(&node, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(OasError::UnsatisfiableConstraint { .. })
        ));
        let node = leaf_with(
            DataType::String,
            Constraints {
                min_length: Some(4),
                max_length: Some(2),
                ..Default::default()
            },
        );
        assert!(instantiate_sample(&node, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn exclusive_integer_bounds() {
        let node = leaf_with(
            DataType::Integer,
            Constraints {
                minimum: Some(0.0),
                maximum: Some(2.0),
                exclusive_minimum: true,
                exclusive_maximum: true,
                ..Default::default()
            },
        );
        for seed in 0..20 {
            let out = instantiate_sample(&node, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(sample_of(&out), &FieldValue::Integer(1));
        }
    }
}
