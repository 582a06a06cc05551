//! OpenAPI ingestion: parses an OAS 3.x document and reduces it to the compact
//! per-operation form the fuzzer works on.
//!
//! Everything outside the paths section (API information, servers, security
//! schemes, response schemas) is discarded. Component references are inlined,
//! so every [`ApiFunction`] is self-contained.

mod parse;
mod sample;
mod schema;

use std::fmt;

use rand::Rng;
use serde::Serialize;

use crate::identity;
use crate::value::{DataType, FieldValue};

pub use parse::{parse_oas, DocumentFormat, ParsedSpec, Warning};
pub use sample::{instantiate_sample, instantiate_sample_with, SampleOptions};
pub use schema::{Constraints, Leaf, LeafPath, NodeType, PathSegment, SchemaNode};

#[derive(Debug, thiserror::Error)]
pub enum OasError {
    #[error("malformed OpenAPI document: {0}")]
    Parse(String),
    #[error("unresolvable reference `{reference}` at {location}")]
    UnresolvableRef { reference: String, location: String },
    #[error("unsupported schema construct `{construct}` at {location}")]
    UnsupportedSchema { construct: String, location: String },
    #[error("unsatisfiable constraint at {location}: {reason}")]
    UnsatisfiableConstraint { location: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HttpMethod {
    Get,
    Put,
    Post,
    Delete,
    Options,
    Head,
    Patch,
    Trace,
}

impl HttpMethod {
    pub fn from_key(key: &str) -> Option<Self> {
        Some(match key {
            "get" => HttpMethod::Get,
            "put" => HttpMethod::Put,
            "post" => HttpMethod::Post,
            "delete" => HttpMethod::Delete,
            "options" => HttpMethod::Options,
            "head" => HttpMethod::Head,
            "patch" => HttpMethod::Patch,
            "trace" => HttpMethod::Trace,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HttpMethod::Get => "GET",
            HttpMethod::Put => "PUT",
            HttpMethod::Post => "POST",
            HttpMethod::Delete => "DELETE",
            HttpMethod::Options => "OPTIONS",
            HttpMethod::Head => "HEAD",
            HttpMethod::Patch => "PATCH",
            HttpMethod::Trace => "TRACE",
        }
    }
}

impl fmt::Display for HttpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Parameter {
    pub name: String,
    pub required: bool,
    pub schema: SchemaNode,
}

/// One callable API operation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiFunction {
    pub operation_id: String,
    pub method: HttpMethod,
    pub path_template: String,
    pub headers: Vec<Parameter>,
    pub query_parameters: Vec<Parameter>,
    pub path_parameters: Vec<Parameter>,
    pub body: Option<SchemaNode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Location {
    Path,
    Query,
    Header,
    Body,
}

impl Location {
    pub fn as_str(self) -> &'static str {
        match self {
            Location::Path => "path",
            Location::Query => "query",
            Location::Header => "header",
            Location::Body => "body",
        }
    }
}

/// Identifies one leaf slot of a function, e.g. `path:petId` or
/// `body:tags[0].name`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotId {
    pub location: Location,
    /// Parameter name; empty for the request body.
    pub parameter: String,
    pub path: LeafPath,
}

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.location.as_str())?;
        let inner = self.path.to_string();
        match (self.parameter.is_empty(), inner.is_empty()) {
            (true, _) => write!(f, "{inner}"),
            (false, true) => write!(f, "{}", self.parameter),
            (false, false) if inner.starts_with('[') => write!(f, "{}{inner}", self.parameter),
            (false, false) => write!(f, "{}.{inner}", self.parameter),
        }
    }
}

impl Serialize for SlotId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// A leaf slot together with the names used to tie it to a resource.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub id: SlotId,
    pub datatype: DataType,
    /// Object key (or parameter name) naming the leaf.
    pub key: Option<String>,
    /// Enclosing object key, for nested leaves.
    pub parent_key: Option<String>,
    pub enum_values: Vec<FieldValue>,
}

impl ApiFunction {
    fn parameter_groups(&self) -> [(Location, &Vec<Parameter>); 3] {
        [
            (Location::Path, &self.path_parameters),
            (Location::Query, &self.query_parameters),
            (Location::Header, &self.headers),
        ]
    }

    /// Every instantiated leaf slot, in a fixed order: path, query, header,
    /// then body.
    pub fn slots(&self) -> Vec<Slot> {
        let mut out = Vec::new();
        for (location, params) in self.parameter_groups() {
            for p in params {
                let mut path = LeafPath::new();
                p.schema.visit_leaves(&mut path, &mut |lp, leaf| {
                    let (key, parent_key) = if lp.segments().is_empty() {
                        (Some(p.name.clone()), None)
                    } else {
                        (
                            lp.last_key().map(str::to_string),
                            lp.parent_key()
                                .map(str::to_string)
                                .or_else(|| Some(p.name.clone())),
                        )
                    };
                    out.push(Slot {
                        id: SlotId {
                            location,
                            parameter: p.name.clone(),
                            path: lp.clone(),
                        },
                        datatype: leaf.datatype,
                        key: key.or_else(|| Some(p.name.clone())),
                        parent_key,
                        enum_values: leaf.constraints.enum_values.clone(),
                    });
                });
            }
        }
        if let Some(body) = &self.body {
            let mut path = LeafPath::new();
            body.visit_leaves(&mut path, &mut |lp, leaf| {
                out.push(Slot {
                    id: SlotId {
                        location: Location::Body,
                        parameter: String::new(),
                        path: lp.clone(),
                    },
                    datatype: leaf.datatype,
                    key: lp.last_key().map(str::to_string),
                    parent_key: lp.parent_key().map(str::to_string),
                    enum_values: leaf.constraints.enum_values.clone(),
                });
            });
        }
        out
    }

    /// Applies `f` to every leaf together with its slot id.
    pub fn for_each_leaf_mut(&mut self, f: &mut dyn FnMut(&SlotId, &mut Leaf)) {
        for (location, params) in [
            (Location::Path, &mut self.path_parameters),
            (Location::Query, &mut self.query_parameters),
            (Location::Header, &mut self.headers),
        ] {
            for p in params.iter_mut() {
                let name = p.name.clone();
                let mut path = LeafPath::new();
                p.schema.visit_leaves_mut(&mut path, &mut |lp, leaf| {
                    let id = SlotId {
                        location,
                        parameter: name.clone(),
                        path: lp.clone(),
                    };
                    f(&id, leaf)
                });
            }
        }
        if let Some(body) = &mut self.body {
            let mut path = LeafPath::new();
            body.visit_leaves_mut(&mut path, &mut |lp, leaf| {
                let id = SlotId {
                    location: Location::Body,
                    parameter: String::new(),
                    path: lp.clone(),
                };
                f(&id, leaf)
            });
        }
    }

    pub fn parameter(&self, location: Location, name: &str) -> Option<&Parameter> {
        let list = match location {
            Location::Path => &self.path_parameters,
            Location::Query => &self.query_parameters,
            Location::Header => &self.headers,
            Location::Body => return None,
        };
        list.iter().find(|p| p.name == name)
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.path_parameters
            .iter_mut()
            .chain(self.query_parameters.iter_mut())
            .chain(self.headers.iter_mut())
            .find(|p| p.name == name)
    }

    /// Creational functions (POST) are the ones whose responses are
    /// harvested for identifiers.
    pub fn is_creational(&self) -> bool {
        self.method == HttpMethod::Post
    }

    /// Resource this function acts on, from its path template.
    pub fn primary_resource(&self) -> Option<String> {
        identity::primary_resource(&self.path_template)
    }

    /// Fresh copy with samples drawn for every leaf.
    pub fn instantiate<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        options: &SampleOptions,
    ) -> Result<ApiFunction, OasError> {
        let mut out = self.clone();
        for p in out
            .path_parameters
            .iter_mut()
            .chain(out.query_parameters.iter_mut())
            .chain(out.headers.iter_mut())
        {
            p.schema = instantiate_sample_with(&p.schema, rng, options)
                .map_err(|e| e.at(&format!("{} parameter `{}`", self.operation_id, p.name)))?;
        }
        if let Some(body) = &mut out.body {
            *body = instantiate_sample_with(body, rng, options)
                .map_err(|e| e.at(&format!("{} request body", self.operation_id)))?;
        }
        Ok(out)
    }
}

impl OasError {
    fn at(self, prefix: &str) -> Self {
        match self {
            OasError::UnsatisfiableConstraint { location, reason } => {
                OasError::UnsatisfiableConstraint {
                    location: if location.is_empty() {
                        prefix.to_string()
                    } else {
                        format!("{prefix} / {location}")
                    },
                    reason,
                }
            }
            other => other,
        }
    }
}

/// Placeholders (`{name}`) appearing in a path template, in order.
pub fn path_placeholders(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else {
            break;
        };
        out.push(&rest[start + 1..start + len]);
        rest = &rest[start + len + 1..];
    }
    out
}
