use std::collections::HashSet;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use super::schema::{Constraints, Leaf, SchemaNode};
use super::{path_placeholders, ApiFunction, HttpMethod, OasError, Parameter};
use crate::value::{DataType, FieldValue};

const MAX_REF_HOPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocumentFormat {
    Json,
    Yaml,
}

impl DocumentFormat {
    /// Picks the format from a file extension, falling back to sniffing the
    /// first non-blank character.
    pub fn detect(path: &Path, text: &str) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => DocumentFormat::Json,
            Some("yaml") | Some("yml") => DocumentFormat::Yaml,
            _ if text.trim_start().starts_with('{') => DocumentFormat::Json,
            _ => DocumentFormat::Yaml,
        }
    }
}

/// Non-fatal note produced while reducing a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Warning {
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSpec {
    pub functions: Vec<ApiFunction>,
    pub warnings: Vec<Warning>,
}

impl ParsedSpec {
    pub fn function(&self, operation_id: &str) -> Option<&ApiFunction> {
        self.functions
            .iter()
            .find(|f| f.operation_id == operation_id)
    }
}

/// Parses an OAS 3.x document into one [`ApiFunction`] per (path, method).
pub fn parse_oas(document_text: &str, format: DocumentFormat) -> Result<ParsedSpec, OasError> {
    let root: Value = match format {
        DocumentFormat::Json => {
            serde_json::from_str(document_text).map_err(|e| OasError::Parse(e.to_string()))?
        }
        DocumentFormat::Yaml => {
            serde_yaml::from_str(document_text).map_err(|e| OasError::Parse(e.to_string()))?
        }
    };
    let Some(obj) = root.as_object() else {
        return Err(OasError::Parse("document root is not an object".into()));
    };
    match obj.get("openapi").and_then(Value::as_str) {
        Some(v) if v.starts_with("3.") => {}
        Some(v) => return Err(OasError::Parse(format!("unsupported OpenAPI version {v}"))),
        None if obj.contains_key("swagger") => {
            return Err(OasError::Parse(
                "Swagger 2.0 documents are not supported".into(),
            ))
        }
        None => return Err(OasError::Parse("missing `openapi` version field".into())),
    }

    let mut reducer = Reducer {
        root: &root,
        warnings: Vec::new(),
        stack: Vec::new(),
    };
    let mut functions = Vec::new();
    let paths = match obj.get("paths") {
        None | Some(Value::Null) => {
            return Ok(ParsedSpec {
                functions,
                warnings: Vec::new(),
            })
        }
        Some(Value::Object(p)) => p,
        Some(_) => return Err(OasError::Parse("`paths` is not an object".into())),
    };

    let mut seen = HashSet::new();
    for (path, item) in paths {
        let item = reducer.deref(item, path)?;
        let Some(item) = item.as_object() else {
            return Err(OasError::Parse(format!(
                "path item `{path}` is not an object"
            )));
        };
        for (key, op) in item {
            let Some(method) = HttpMethod::from_key(key) else {
                continue;
            };
            let function = reducer.function(path, method, item, op)?;
            if !seen.insert(function.operation_id.clone()) {
                return Err(OasError::Parse(format!(
                    "duplicate operationId `{}`",
                    function.operation_id
                )));
            }
            functions.push(function);
        }
    }
    Ok(ParsedSpec {
        functions,
        warnings: reducer.warnings,
    })
}

struct Reducer<'r> {
    root: &'r Value,
    warnings: Vec<Warning>,
    stack: Vec<String>,
}

impl<'r> Reducer<'r> {
    fn warn(&mut self, location: &str, message: impl Into<String>) {
        self.warnings.push(Warning {
            location: location.to_string(),
            message: message.into(),
        });
    }

    fn lookup(&self, reference: &str, location: &str) -> Result<&'r Value, OasError> {
        let unresolved = || OasError::UnresolvableRef {
            reference: reference.to_string(),
            location: location.to_string(),
        };
        let pointer = reference.strip_prefix('#').ok_or_else(unresolved)?;
        if let Some(v) = self.root.pointer(pointer) {
            return Ok(v);
        }
        let decoded = percent_encoding::percent_decode_str(pointer)
            .decode_utf8()
            .map_err(|_| unresolved())?;
        self.root.pointer(&decoded).ok_or_else(unresolved)
    }

    /// Follows `$ref` chains on non-schema objects (parameters, bodies,
    /// path items).
    fn deref<'v>(&self, mut v: &'v Value, location: &str) -> Result<&'v Value, OasError>
    where
        'r: 'v,
    {
        for _ in 0..MAX_REF_HOPS {
            match v.get("$ref").and_then(Value::as_str) {
                Some(r) => v = self.lookup(r, location)?,
                None => return Ok(v),
            }
        }
        Err(OasError::UnresolvableRef {
            reference: "<cyclic $ref chain>".into(),
            location: location.to_string(),
        })
    }

    fn function(
        &mut self,
        path: &str,
        method: HttpMethod,
        item: &'r Map<String, Value>,
        op: &'r Value,
    ) -> Result<ApiFunction, OasError> {
        let operation_id = op
            .get("operationId")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| synthesize_operation_id(method, path));
        let loc = format!("{} {path}", method.as_str());

        // path-level parameters first, overridden by operation-level ones
        let mut raw: Vec<(String, String, &'r Value)> = Vec::new();
        for source in [item.get("parameters"), op.get("parameters")]
            .into_iter()
            .flatten()
        {
            let Some(list) = source.as_array() else {
                return Err(OasError::Parse(format!(
                    "{loc}: `parameters` is not an array"
                )));
            };
            for p in list {
                let p = self.deref(p, &loc)?;
                let name = p
                    .get("name")
                    .and_then(Value::as_str)
                    .ok_or_else(|| OasError::Parse(format!("{loc}: parameter without a name")))?;
                let place = p.get("in").and_then(Value::as_str).ok_or_else(|| {
                    OasError::Parse(format!("{loc}: parameter `{name}` without `in`"))
                })?;
                raw.retain(|(n, i, _)| !(n == name && i == place));
                raw.push((name.to_string(), place.to_string(), p));
            }
        }

        let mut function = ApiFunction {
            operation_id,
            method,
            path_template: path.to_string(),
            headers: Vec::new(),
            query_parameters: Vec::new(),
            path_parameters: Vec::new(),
            body: None,
        };

        let placeholders = path_placeholders(path);
        for (name, place, p) in raw {
            let ploc = format!("{loc} parameter `{name}`");
            let schema = match (
                p.get("schema"),
                p.get("content").and_then(first_media_schema),
            ) {
                (Some(s), _) | (None, Some(s)) => self.schema(s, &ploc)?,
                (None, None) => {
                    self.warn(&ploc, "parameter has no schema; treated as string");
                    SchemaNode::leaf(DataType::String)
                }
            };
            let required = p
                .get("required")
                .and_then(Value::as_bool)
                .unwrap_or(place == "path");
            let param = Parameter {
                name: name.clone(),
                required,
                schema,
            };
            match place.as_str() {
                "path" => {
                    if placeholders.contains(&name.as_str()) {
                        function.path_parameters.push(param);
                    } else {
                        self.warn(
                            &ploc,
                            "path parameter does not appear in the path template; ignored",
                        );
                    }
                }
                "query" => function.query_parameters.push(param),
                "header" => {
                    let lower = name.to_ascii_lowercase();
                    if !matches!(lower.as_str(), "accept" | "content-type" | "authorization") {
                        function.headers.push(param);
                    }
                }
                "cookie" => self.warn(&ploc, "cookie parameters are not sent; ignored"),
                other => {
                    return Err(OasError::Parse(format!(
                        "{ploc}: unknown parameter location `{other}`"
                    )))
                }
            }
        }
        for name in placeholders {
            if !function.path_parameters.iter().any(|p| p.name == name) {
                self.warn(
                    &loc,
                    format!(
                        "placeholder `{{{name}}}` has no declared parameter; treated as string"
                    ),
                );
                function.path_parameters.push(Parameter {
                    name: name.to_string(),
                    required: true,
                    schema: SchemaNode::leaf(DataType::String),
                });
            }
        }

        if let Some(body) = op.get("requestBody") {
            let body = self.deref(body, &loc)?;
            if let Some(schema) = body.get("content").and_then(preferred_media_schema) {
                function.body = Some(self.schema(schema, &format!("{loc} request body"))?);
            }
        }
        Ok(function)
    }

    fn schema(&mut self, v: &Value, location: &str) -> Result<SchemaNode, OasError> {
        if let Some(r) = v.get("$ref").and_then(Value::as_str) {
            if self.stack.iter().any(|s| s == r) {
                self.warn(
                    location,
                    format!("recursive reference `{r}` cut to an empty object"),
                );
                return Ok(SchemaNode::object(Vec::new()));
            }
            let target = self.lookup(r, location)?;
            self.stack.push(r.to_string());
            let node = self.schema(target, location);
            self.stack.pop();
            return node;
        }
        if v.get("allOf").is_some() {
            let merged = self.flatten_all_of(v, location, 0)?;
            return self.schema(&merged, location);
        }
        for key in ["oneOf", "anyOf"] {
            if let Some(alts) = v.get(key) {
                let first = alts.as_array().and_then(|a| a.first()).ok_or_else(|| {
                    OasError::UnsupportedSchema {
                        construct: format!("empty {key}"),
                        location: location.to_string(),
                    }
                })?;
                self.warn(
                    location,
                    format!("`{key}` reduced to its first alternative"),
                );
                return self.schema(first, location);
            }
        }
        if v.get("not").is_some() {
            return Err(OasError::UnsupportedSchema {
                construct: "not".into(),
                location: location.to_string(),
            });
        }
        let Some(obj) = v.as_object() else {
            return Err(OasError::UnsupportedSchema {
                construct: format!("schema `{v}`"),
                location: location.to_string(),
            });
        };

        let declared = match obj.get("type") {
            None => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(Value::Array(types)) => {
                let non_null: Vec<&str> = types
                    .iter()
                    .filter_map(Value::as_str)
                    .filter(|t| *t != "null")
                    .collect();
                match non_null.as_slice() {
                    [one] => Some(one.to_string()),
                    _ => {
                        return Err(OasError::UnsupportedSchema {
                            construct: format!("type {}", Value::Array(types.clone())),
                            location: location.to_string(),
                        })
                    }
                }
            }
            Some(other) => {
                return Err(OasError::UnsupportedSchema {
                    construct: format!("type {other}"),
                    location: location.to_string(),
                })
            }
        };
        let declared = match declared {
            Some(t) => t,
            None if obj.contains_key("properties") || obj.contains_key("additionalProperties") => {
                "object".into()
            }
            None if obj.contains_key("items") => "array".into(),
            None => match obj
                .get("enum")
                .and_then(Value::as_array)
                .and_then(|e| e.iter().find(|x| !x.is_null()))
            {
                Some(Value::Number(n)) if n.is_i64() => "integer".into(),
                Some(Value::Number(_)) => "number".into(),
                Some(Value::Bool(_)) => "boolean".into(),
                Some(_) => "string".into(),
                None => {
                    self.warn(location, "untyped schema treated as string");
                    "string".into()
                }
            },
        };

        let format = obj.get("format").and_then(Value::as_str);
        let datatype = match declared.as_str() {
            "integer" => DataType::Integer,
            "number" => DataType::Float,
            "boolean" => DataType::Boolean,
            "string" if matches!(format, Some("byte") | Some("binary")) => DataType::Byte,
            "string" => DataType::String,
            "object" => {
                let mut properties = Vec::new();
                if let Some(props) = obj.get("properties") {
                    let Some(props) = props.as_object() else {
                        return Err(OasError::Parse(format!(
                            "{location}: `properties` is not an object"
                        )));
                    };
                    for (name, child) in props {
                        let node = self.schema(child, &format!("{location}.{name}"))?;
                        properties.push((name.clone(), node));
                    }
                }
                return Ok(SchemaNode::object(properties));
            }
            "array" => {
                let items = match obj.get("items") {
                    Some(items) => self.schema(items, &format!("{location}[]"))?,
                    None => {
                        self.warn(
                            location,
                            "array without `items`; elements treated as strings",
                        );
                        SchemaNode::leaf(DataType::String)
                    }
                };
                let constraints = Constraints {
                    min_items: obj
                        .get("minItems")
                        .and_then(Value::as_u64)
                        .map(|n| n as usize),
                    max_items: obj
                        .get("maxItems")
                        .and_then(Value::as_u64)
                        .map(|n| n as usize),
                    ..Constraints::default()
                };
                return Ok(SchemaNode::Array {
                    items: Box::new(items),
                    constraints,
                    elements: Vec::new(),
                });
            }
            other => {
                return Err(OasError::UnsupportedSchema {
                    construct: format!("type {other}"),
                    location: location.to_string(),
                })
            }
        };
        Ok(SchemaNode::Leaf(Leaf {
            datatype,
            constraints: leaf_constraints(obj, datatype, location)?,
            sample: None,
        }))
    }

    /// Merges `allOf` members into a single schema object. Keys on the
    /// outer schema win; `properties` are unioned and `required` concatenated.
    fn flatten_all_of(
        &mut self,
        v: &Value,
        location: &str,
        depth: usize,
    ) -> Result<Value, OasError> {
        if depth > MAX_REF_HOPS {
            return Err(OasError::UnsupportedSchema {
                construct: "deeply nested allOf".into(),
                location: location.to_string(),
            });
        }
        let mut base = v.as_object().cloned().unwrap_or_default();
        let members = base
            .remove("allOf")
            .and_then(|m| m.as_array().cloned())
            .unwrap_or_default();
        for member in members {
            let member = match member.get("$ref").and_then(Value::as_str) {
                Some(r) => self.lookup(r, location)?.clone(),
                None => member,
            };
            let member = if member.get("allOf").is_some() {
                self.flatten_all_of(&member, location, depth + 1)?
            } else {
                member
            };
            let Value::Object(member) = member else {
                continue;
            };
            for (key, value) in member {
                match (key.as_str(), base.get_mut(&key)) {
                    ("properties", Some(Value::Object(props))) => {
                        if let Value::Object(extra) = value {
                            for (k, v) in extra {
                                props.insert(k, v);
                            }
                        }
                    }
                    ("required", Some(Value::Array(req))) => {
                        if let Value::Array(extra) = value {
                            for r in extra {
                                if !req.contains(&r) {
                                    req.push(r);
                                }
                            }
                        }
                    }
                    (_, Some(_)) => {}
                    (_, None) => {
                        base.insert(key, value);
                    }
                }
            }
        }
        Ok(Value::Object(base))
    }
}

fn leaf_constraints(
    obj: &Map<String, Value>,
    datatype: DataType,
    location: &str,
) -> Result<Constraints, OasError> {
    let mut c = Constraints::default();
    if let Some(values) = obj.get("enum").and_then(Value::as_array) {
        for v in values.iter().filter(|v| !v.is_null()) {
            let fv =
                FieldValue::from_json(datatype, v).ok_or_else(|| OasError::UnsupportedSchema {
                    construct: format!("enum member {v} for {datatype} schema"),
                    location: location.to_string(),
                })?;
            c.enum_values.push(fv);
        }
    }
    c.minimum = obj.get("minimum").and_then(Value::as_f64);
    c.maximum = obj.get("maximum").and_then(Value::as_f64);
    match obj.get("exclusiveMinimum") {
        Some(Value::Bool(b)) => c.exclusive_minimum = *b,
        Some(Value::Number(n)) => {
            c.minimum = n.as_f64();
            c.exclusive_minimum = true;
        }
        _ => {}
    }
    match obj.get("exclusiveMaximum") {
        Some(Value::Bool(b)) => c.exclusive_maximum = *b,
        Some(Value::Number(n)) => {
            c.maximum = n.as_f64();
            c.exclusive_maximum = true;
        }
        _ => {}
    }
    c.min_length = obj
        .get("minLength")
        .and_then(Value::as_u64)
        .map(|n| n as usize);
    c.max_length = obj
        .get("maxLength")
        .and_then(Value::as_u64)
        .map(|n| n as usize);
    c.format = obj
        .get("format")
        .and_then(Value::as_str)
        .map(str::to_string);
    Ok(c)
}

fn first_media_schema(content: &Value) -> Option<&Value> {
    content.as_object()?.values().find_map(|m| m.get("schema"))
}

fn preferred_media_schema(content: &Value) -> Option<&Value> {
    let media = content.as_object()?;
    media
        .get("application/json")
        .and_then(|m| m.get("schema"))
        .or_else(|| {
            media
                .iter()
                .find(|(k, _)| k.contains("json"))
                .and_then(|(_, m)| m.get("schema"))
        })
        .or_else(|| first_media_schema(content))
}

fn synthesize_operation_id(method: HttpMethod, path: &str) -> String {
    let mut id = method.as_str().to_ascii_lowercase();
    for seg in path.split('/').filter(|s| !s.is_empty()) {
        id.push('_');
        id.extend(
            seg.chars()
                .filter(|c| c.is_ascii_alphanumeric() || *c == '_'),
        );
    }
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oas::NodeType;

    const SINGLE: &str = r#"{
  "openapi": "3.0.3",
  "info": { "title": "t", "version": "1" },
  "paths": {
    "/pets/{petId}": {
      "get": {
        "operationId": "getPet",
        "parameters": [
          { "name": "petId", "in": "path", "required": true,
            "schema": { "type": "integer", "format": "int64" } }
        ],
        "responses": { "200": { "description": "ok" } }
      }
    }
  }
}"#;

    #[test]
    fn single_path_with_integer_parameter() {
        let spec = parse_oas(SINGLE, DocumentFormat::Json).unwrap();
        assert_eq!(spec.functions.len(), 1);
        let f = &spec.functions[0];
        assert_eq!(f.operation_id, "getPet");
        assert_eq!(f.method, HttpMethod::Get);
        assert_eq!(f.path_parameters.len(), 1);
        assert_eq!(f.path_parameters[0].name, "petId");
        assert_eq!(
            f.path_parameters[0].schema.node_type(),
            NodeType::Leaf(DataType::Integer)
        );
        assert!(f.query_parameters.is_empty() && f.headers.is_empty() && f.body.is_none());
        assert!(spec.warnings.is_empty());
    }

    #[test]
    fn zero_paths_yield_no_functions() {
        let doc = r#"{"openapi":"3.0.0","info":{"title":"t","version":"1"},"paths":{}}"#;
        assert!(parse_oas(doc, DocumentFormat::Json)
            .unwrap()
            .functions
            .is_empty());
    }

    #[test]
    fn swagger_two_is_rejected() {
        let doc = r#"{"swagger":"2.0","paths":{}}"#;
        assert!(matches!(
            parse_oas(doc, DocumentFormat::Json),
            Err(OasError::Parse(_))
        ));
    }

    #[test]
    fn malformed_text_is_a_parse_error() {
        assert!(matches!(
            parse_oas("{nope", DocumentFormat::Json),
            Err(OasError::Parse(_))
        ));
    }

    #[test]
    fn dangling_ref_is_reported() {
        let doc = r##"
openapi: 3.0.0
info: {title: t, version: "1"}
paths:
  /a:
    post:
      requestBody:
        content:
          application/json:
            schema: {$ref: "#/components/schemas/Missing"}
      responses: {"200": {description: ok}}
"##;
        match parse_oas(doc, DocumentFormat::Yaml) {
            Err(OasError::UnresolvableRef { reference, .. }) => {
                assert_eq!(reference, "#/components/schemas/Missing")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn all_of_merges_and_one_of_picks_first() {
        let doc = r##"
openapi: 3.0.0
info: {title: t, version: "1"}
paths:
  /a:
    post:
      operationId: makeA
      requestBody:
        content:
          application/json:
            schema:
              allOf:
                - $ref: "#/components/schemas/Base"
                - type: object
                  properties:
                    extra: {type: boolean}
                    choice:
                      oneOf:
                        - {type: integer}
                        - {type: string}
      responses: {"200": {description: ok}}
components:
  schemas:
    Base:
      type: object
      properties:
        id: {type: integer}
        blob: {type: string, format: byte}
"##;
        let spec = parse_oas(doc, DocumentFormat::Yaml).unwrap();
        let body = spec.functions[0].body.as_ref().unwrap();
        let SchemaNode::Object { properties } = body else {
            panic!("object expected")
        };
        let names: Vec<_> = properties.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["id", "blob", "extra", "choice"]);
        assert_eq!(properties[1].1.node_type(), NodeType::Leaf(DataType::Byte));
        assert_eq!(
            properties[3].1.node_type(),
            NodeType::Leaf(DataType::Integer)
        );
        assert_eq!(spec.warnings.len(), 1);
        assert!(spec.warnings[0].message.contains("oneOf"));
        assert!(spec.warnings[0].location.contains("POST /a"));
    }

    #[test]
    fn recursive_schema_is_cut() {
        let doc = r##"
openapi: 3.1.0
info: {title: t, version: "1"}
paths:
  /n:
    post:
      requestBody:
        content:
          application/json:
            schema: {$ref: "#/components/schemas/Node"}
      responses: {"200": {description: ok}}
components:
  schemas:
    Node:
      type: object
      properties:
        value: {type: [string, "null"]}
        next: {$ref: "#/components/schemas/Node"}
"##;
        let spec = parse_oas(doc, DocumentFormat::Yaml).unwrap();
        assert_eq!(spec.functions[0].operation_id, "post_n");
        assert_eq!(spec.warnings.len(), 1);
    }

    #[test]
    fn not_is_unsupported() {
        let doc = r#"{"openapi":"3.0.0","paths":{"/x":{"get":{"parameters":[
            {"name":"q","in":"query","schema":{"not":{"type":"string"}}}]}}}}"#;
        assert!(matches!(
            parse_oas(doc, DocumentFormat::Json),
            Err(OasError::UnsupportedSchema { .. })
        ));
    }

    #[test]
    fn duplicate_operation_ids_are_rejected() {
        let doc = r#"{"openapi":"3.0.0","paths":{
            "/a":{"get":{"operationId":"x"}},
            "/b":{"get":{"operationId":"x"}}}}"#;
        assert!(matches!(
            parse_oas(doc, DocumentFormat::Json),
            Err(OasError::Parse(_))
        ));
    }

    #[test]
    fn parameters_split_by_location_and_override() {
        let doc = r#"{"openapi":"3.0.0","paths":{"/u/{name}":{
            "parameters":[{"name":"limit","in":"query","schema":{"type":"integer"}}],
            "delete":{"operationId":"del","parameters":[
               {"name":"name","in":"path","required":true,"schema":{"type":"string"}},
               {"name":"limit","in":"query","schema":{"type":"number"}},
               {"name":"api_key","in":"header","schema":{"type":"string"}},
               {"name":"Accept","in":"header","schema":{"type":"string"}}]}}}}"#;
        let f = &parse_oas(doc, DocumentFormat::Json).unwrap().functions[0];
        assert_eq!(f.path_parameters[0].name, "name");
        assert_eq!(f.query_parameters.len(), 1);
        assert_eq!(
            f.query_parameters[0].schema.node_type(),
            NodeType::Leaf(DataType::Float)
        );
        assert_eq!(f.headers.len(), 1);
        assert_eq!(f.headers[0].name, "api_key");
    }

    #[test]
    fn undeclared_placeholder_gets_string_parameter() {
        let doc = r#"{"openapi":"3.0.0","paths":{"/a/{b}":{"get":{"operationId":"g"}}}}"#;
        let spec = parse_oas(doc, DocumentFormat::Json).unwrap();
        assert_eq!(spec.functions[0].path_parameters[0].name, "b");
        assert_eq!(spec.warnings.len(), 1);
    }
}
