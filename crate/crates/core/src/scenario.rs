//! Scenario files: ordered sequences of operations to fuzz against one SUT.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::oas::{ApiFunction, HttpMethod};
use crate::value::{FieldValue, RawText};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("malformed scenarios file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenarios file declares no scenarios")]
    NoScenarios,
    #[error("scenario `{0}` has no steps")]
    EmptyScenario(String),
    #[error("base_url `{0}` is not an absolute http(s) URL")]
    InvalidBaseUrl(String),
    #[error("scenario `{scenario}` references unknown operation `{operation_id}`")]
    UnknownOperation {
        scenario: String,
        operation_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSet {
    pub base_url: String,
    pub scenarios: Vec<Scenario>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub steps: Vec<Step>,
}

/// A step is either a bare operation id or an object that also pins some
/// parameters to fixed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "StepRepr", into = "StepRepr")]
pub struct Step {
    pub operation_id: String,
    pub fixed: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum StepRepr {
    Bare(String),
    Full {
        operation_id: String,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        fixed: BTreeMap<String, serde_json::Value>,
    },
}

impl From<StepRepr> for Step {
    fn from(r: StepRepr) -> Self {
        match r {
            StepRepr::Bare(operation_id) => Step {
                operation_id,
                fixed: BTreeMap::new(),
            },
            StepRepr::Full {
                operation_id,
                fixed,
            } => Step {
                operation_id,
                fixed,
            },
        }
    }
}

impl From<Step> for StepRepr {
    fn from(s: Step) -> Self {
        if s.fixed.is_empty() {
            StepRepr::Bare(s.operation_id)
        } else {
            StepRepr::Full {
                operation_id: s.operation_id,
                fixed: s.fixed,
            }
        }
    }
}

impl Step {
    pub fn new(operation_id: &str) -> Self {
        Step {
            operation_id: operation_id.to_string(),
            fixed: BTreeMap::new(),
        }
    }

    /// Pinned values as field values; nulls, arrays and objects are dropped.
    pub fn fixed_values(&self) -> BTreeMap<String, FieldValue> {
        self.fixed
            .iter()
            .filter_map(|(k, v)| {
                let fv = match v {
                    serde_json::Value::Bool(b) => FieldValue::Boolean(*b),
                    serde_json::Value::Number(n) => match n.as_i64() {
                        Some(i) => FieldValue::Integer(i),
                        None => FieldValue::Float(n.as_f64()?),
                    },
                    serde_json::Value::String(s) => FieldValue::String(RawText::new(s)),
                    _ => return None,
                };
                Some((k.clone(), fv))
            })
            .collect()
    }
}

pub fn parse_scenarios(text: &str) -> Result<ScenarioSet, ScenarioError> {
    let set: ScenarioSet = serde_json::from_str(text)?;
    if set.scenarios.is_empty() {
        return Err(ScenarioError::NoScenarios);
    }
    if let Some(s) = set.scenarios.iter().find(|s| s.steps.is_empty()) {
        return Err(ScenarioError::EmptyScenario(s.name.clone()));
    }
    match url::Url::parse(&set.base_url) {
        Ok(u) if matches!(u.scheme(), "http" | "https") && u.has_host() => Ok(set),
        _ => Err(ScenarioError::InvalidBaseUrl(set.base_url)),
    }
}

/// Looks up each step's function, preserving order.
pub fn resolve_sequence<'a>(
    scenario: &Scenario,
    functions: &'a [ApiFunction],
) -> Result<Vec<&'a ApiFunction>, ScenarioError> {
    scenario
        .steps
        .iter()
        .map(|step| {
            functions
                .iter()
                .find(|f| f.operation_id == step.operation_id)
                .ok_or_else(|| ScenarioError::UnknownOperation {
                    scenario: scenario.name.clone(),
                    operation_id: step.operation_id.clone(),
                })
        })
        .collect()
}

/// For a creational step, the first later GET with path parameters on the
/// same resource; its responses tell whether a created object is readable.
pub fn read_back_target<'a>(sequence: &[&'a ApiFunction], index: usize) -> Option<&'a ApiFunction> {
    let creator = sequence.get(index)?;
    if !creator.is_creational() {
        return None;
    }
    let resource = creator.primary_resource()?;
    sequence[index + 1..].iter().copied().find(|f| {
        f.method == HttpMethod::Get
            && !f.path_parameters.is_empty()
            && f.primary_resource().as_deref() == Some(&resource)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock_sut::oas_document;
    use crate::oas::{parse_oas, DocumentFormat};

    fn crud(steps: &[&str]) -> String {
        serde_json::json!({
            "base_url": "http://127.0.0.1:8080",
            "scenarios": [{ "name": "pet", "steps": steps }]
        })
        .to_string()
    }

    #[test]
    fn parses_one_crud_scenario() {
        let set = parse_scenarios(&crud(&[
            "createPet",
            "getPetById",
            "updatePet",
            "deletePet",
        ]))
        .unwrap();
        assert_eq!(set.scenarios.len(), 1);
        assert_eq!(set.scenarios[0].steps.len(), 4);
        assert_eq!(set.scenarios[0].steps[1], Step::new("getPetById"));
    }

    #[test]
    fn zero_scenarios_rejected() {
        let err = parse_scenarios(r#"{"base_url": "http://h", "scenarios": []}"#).unwrap_err();
        assert!(matches!(err, ScenarioError::NoScenarios));
        let err = parse_scenarios(&crud(&[])).unwrap_err();
        assert!(matches!(err, ScenarioError::EmptyScenario(_)));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_scenarios(
            r#"{"base_url": "http://h", "scenarios": [{"name": "a", "steps": ["x"]}], "extra": 1}"#,
        );
        assert!(matches!(err, Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn base_url_must_be_absolute_http() {
        for bad in ["localhost:8080", "ftp://h/", "/relative"] {
            let text = format!(
                r#"{{"base_url": "{bad}", "scenarios": [{{"name": "a", "steps": ["x"]}}]}}"#
            );
            assert!(
                matches!(
                    parse_scenarios(&text),
                    Err(ScenarioError::InvalidBaseUrl(_))
                ),
                "{bad}"
            );
        }
    }

    #[test]
    fn steps_may_pin_values() {
        let text = r#"{"base_url": "http://h", "scenarios": [{"name": "a", "steps": [
            {"operation_id": "deletePet", "fixed": {"api_key": "secret", "petId": 3}}, "ping"]}]}"#;
        let set = parse_scenarios(text).unwrap();
        let fixed = set.scenarios[0].steps[0].fixed_values();
        assert_eq!(fixed["api_key"], FieldValue::string("secret"));
        assert_eq!(fixed["petId"], FieldValue::Integer(3));
        let round: ScenarioSet =
            serde_json::from_str(&serde_json::to_string(&set).unwrap()).unwrap();
        assert_eq!(round, set);
    }

    #[test]
    fn resolution_keeps_order() {
        let spec = parse_oas(oas_document(), DocumentFormat::Yaml).unwrap();
        let set = parse_scenarios(&crud(&[
            "createPet",
            "getPetById",
            "updatePet",
            "deletePet",
        ]))
        .unwrap();
        let seq = resolve_sequence(&set.scenarios[0], &spec.functions).unwrap();
        let ids: Vec<&str> = seq.iter().map(|f| f.operation_id.as_str()).collect();
        assert_eq!(ids, ["createPet", "getPetById", "updatePet", "deletePet"]);

        let single = resolve_sequence(
            &Scenario {
                name: "s".into(),
                steps: vec![Step::new("createPet")],
            },
            &spec.functions,
        )
        .unwrap();
        assert_eq!(single[0].operation_id, "createPet");

        let err = resolve_sequence(
            &Scenario {
                name: "s".into(),
                steps: vec![Step::new("noSuchOp")],
            },
            &spec.functions,
        );
        assert!(matches!(err, Err(ScenarioError::UnknownOperation { .. })));
    }

    #[test]
    fn read_back_is_next_get_on_same_resource() {
        let spec = parse_oas(oas_document(), DocumentFormat::Yaml).unwrap();
        let get = |id: &str| spec.function(id).unwrap();
        let seq = [
            get("createPet"),
            get("findPetsByStatus"),
            get("getUserByName"),
            get("getPetById"),
            get("deletePet"),
        ];
        assert_eq!(
            read_back_target(&seq, 0).unwrap().operation_id,
            "getPetById"
        );
        assert!(read_back_target(&seq, 3).is_none());
        let seq = [get("createUser"), get("updateUser"), get("getUserByName")];
        assert_eq!(
            read_back_target(&seq, 0).unwrap().operation_id,
            "getUserByName"
        );
        let seq = [get("getPetById"), get("createPet")];
        assert!(read_back_target(&seq, 1).is_none());
    }
}
