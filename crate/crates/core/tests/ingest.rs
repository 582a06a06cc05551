use std::collections::BTreeSet;
use std::path::Path;

use fuzztherest_core::oas::{parse_oas, DocumentFormat, HttpMethod, Location, SampleOptions};
use fuzztherest_core::value::DataType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> String {
    std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("tests/fixtures")
            .join(name),
    )
    .unwrap()
}

#[test]
fn petstore_v3_reduces_to_one_function_per_operation() {
    let text = fixture("petstore3.json");
    let spec = parse_oas(&text, DocumentFormat::Json).unwrap();
    assert!(spec.functions.len() >= 18, "{}", spec.functions.len());

    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    let declared: BTreeSet<String> = doc["paths"]
        .as_object()
        .unwrap()
        .values()
        .flat_map(|item| item.as_object().unwrap().values())
        .map(|op| op["operationId"].as_str().unwrap().to_string())
        .collect();
    let parsed: BTreeSet<String> = spec
        .functions
        .iter()
        .map(|f| f.operation_id.clone())
        .collect();
    assert_eq!(parsed, declared);

    let prefixes: BTreeSet<&str> = spec
        .functions
        .iter()
        .map(|f| f.path_template.split('/').nth(1).unwrap())
        .collect();
    assert_eq!(prefixes, BTreeSet::from(["pet", "store", "user"]));
}

#[test]
fn petstore_functions_are_fully_resolved() {
    let spec = parse_oas(&fixture("petstore3.json"), DocumentFormat::Json).unwrap();
    let get = spec.function("getPetById").unwrap();
    assert_eq!(get.method, HttpMethod::Get);
    assert_eq!(get.path_template, "/pet/{petId}");
    let delete = spec.function("deletePet").unwrap();
    assert!(delete.parameter(Location::Header, "api_key").is_some());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pet = spec
        .function("addPet")
        .unwrap()
        .instantiate(&mut rng, &SampleOptions::default())
        .unwrap();
    let keys: BTreeSet<String> = pet.slots().into_iter().filter_map(|s| s.key).collect();
    for k in ["id", "name", "photoUrls", "status"] {
        assert!(keys.contains(k), "{k} missing from {keys:?}");
    }
    let upload = spec
        .function("uploadFile")
        .unwrap()
        .instantiate(&mut rng, &SampleOptions::default())
        .unwrap();
    assert!(upload
        .slots()
        .iter()
        .any(|s| s.id.location == Location::Body && s.datatype == DataType::Byte));
}

#[test]
fn parsing_is_pure() {
    let text = fixture("petstore3.json");
    assert_eq!(
        parse_oas(&text, DocumentFormat::Json).unwrap(),
        parse_oas(&text, DocumentFormat::Json).unwrap()
    );
}

#[test]
fn one_of_is_reduced_with_a_warning() {
    let spec = parse_oas(&fixture("one_of.yaml"), DocumentFormat::Yaml).unwrap();
    assert_eq!(spec.functions.len(), 1);
    assert_eq!(spec.warnings.len(), 1);
    assert!(
        spec.warnings[0].location.contains("/payments"),
        "{:?}",
        spec.warnings[0]
    );
}
