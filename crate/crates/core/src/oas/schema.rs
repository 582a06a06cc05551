use std::fmt;

use serde::Serialize;

use crate::value::{DataType, FieldValue};

/// Declared constraints on a schema node. Only the subset the fuzzer needs to
/// draw valid initial samples is kept.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Constraints {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub enum_values: Vec<FieldValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub minimum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maximum: Option<f64>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub exclusive_minimum: bool,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub exclusive_maximum: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_length: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_length: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_items: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_items: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
}

/// A mutable leaf slot: one of the five datatypes plus its current sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Leaf {
    pub datatype: DataType,
    pub constraints: Constraints,
    pub sample: Option<FieldValue>,
}

impl Leaf {
    pub fn new(datatype: DataType) -> Self {
        Leaf {
            datatype,
            constraints: Constraints::default(),
            sample: None,
        }
    }
}

/// Reduced schema tree. Only leaves carry samples; arrays keep their element
/// template in `items` and the instantiated elements in `elements`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SchemaNode {
    Leaf(Leaf),
    Object {
        properties: Vec<(String, SchemaNode)>,
    },
    Array {
        items: Box<SchemaNode>,
        constraints: Constraints,
        elements: Vec<SchemaNode>,
    },
}

/// Node kind as named in the reduced data schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeType {
    Leaf(DataType),
    Object,
    Array,
}

impl SchemaNode {
    pub fn leaf(datatype: DataType) -> Self {
        SchemaNode::Leaf(Leaf::new(datatype))
    }

    pub fn object(properties: Vec<(String, SchemaNode)>) -> Self {
        SchemaNode::Object { properties }
    }

    pub fn array(items: SchemaNode) -> Self {
        SchemaNode::Array {
            items: Box::new(items),
            constraints: Constraints::default(),
            elements: Vec::new(),
        }
    }

    pub fn node_type(&self) -> NodeType {
        match self {
            SchemaNode::Leaf(l) => NodeType::Leaf(l.datatype),
            SchemaNode::Object { .. } => NodeType::Object,
            SchemaNode::Array { .. } => NodeType::Array,
        }
    }

    pub fn as_leaf(&self) -> Option<&Leaf> {
        match self {
            SchemaNode::Leaf(l) => Some(l),
            _ => None,
        }
    }

    /// Visits every instantiated leaf in document order.
    pub fn visit_leaves<'a>(&'a self, path: &mut LeafPath, f: &mut dyn FnMut(&LeafPath, &'a Leaf)) {
        match self {
            SchemaNode::Leaf(l) => f(path, l),
            SchemaNode::Object { properties } => {
                for (name, child) in properties {
                    path.push(PathSegment::Key(name.clone()));
                    child.visit_leaves(path, f);
                    path.pop();
                }
            }
            SchemaNode::Array { elements, .. } => {
                for (i, child) in elements.iter().enumerate() {
                    path.push(PathSegment::Index(i));
                    child.visit_leaves(path, f);
                    path.pop();
                }
            }
        }
    }

    pub fn visit_leaves_mut(
        &mut self,
        path: &mut LeafPath,
        f: &mut dyn FnMut(&LeafPath, &mut Leaf),
    ) {
        match self {
            SchemaNode::Leaf(l) => f(path, l),
            SchemaNode::Object { properties } => {
                for (name, child) in properties {
                    path.push(PathSegment::Key(name.clone()));
                    child.visit_leaves_mut(path, f);
                    path.pop();
                }
            }
            SchemaNode::Array { elements, .. } => {
                for (i, child) in elements.iter_mut().enumerate() {
                    path.push(PathSegment::Index(i));
                    child.visit_leaves_mut(path, f);
                    path.pop();
                }
            }
        }
    }

    /// Writes the instantiated tree as JSON. Returns `None` when some leaf has
    /// no sample.
    pub fn to_json(&self) -> Option<String> {
        let mut out = String::new();
        self.write_json(&mut out)?;
        Some(out)
    }

    fn write_json(&self, out: &mut String) -> Option<()> {
        match self {
            SchemaNode::Leaf(l) => out.push_str(&l.sample.as_ref()?.to_json_token()),
            SchemaNode::Object { properties } => {
                out.push('{');
                for (i, (name, child)) in properties.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::to_string(name).ok()?);
                    out.push(':');
                    child.write_json(out)?;
                }
                out.push('}');
            }
            SchemaNode::Array { elements, .. } => {
                out.push('[');
                for (i, child) in elements.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    child.write_json(out)?;
                }
                out.push(']');
            }
        }
        Some(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PathSegment {
    Key(String),
    Index(usize),
}

/// Location of a leaf inside a schema tree, e.g. `tags[0].name`.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LeafPath(Vec<PathSegment>);

impl LeafPath {
    pub fn new() -> Self {
        LeafPath(Vec::new())
    }

    pub fn push(&mut self, seg: PathSegment) {
        self.0.push(seg);
    }

    pub fn pop(&mut self) {
        self.0.pop();
    }

    pub fn segments(&self) -> &[PathSegment] {
        &self.0
    }

    /// Nearest object key, skipping array indices.
    pub fn last_key(&self) -> Option<&str> {
        self.0.iter().rev().find_map(|s| match s {
            PathSegment::Key(k) => Some(k.as_str()),
            PathSegment::Index(_) => None,
        })
    }

    /// Object key enclosing the leaf's own key, if any.
    pub fn parent_key(&self) -> Option<&str> {
        let mut keys = self.0.iter().rev().filter_map(|s| match s {
            PathSegment::Key(k) => Some(k.as_str()),
            PathSegment::Index(_) => None,
        });
        keys.next();
        keys.next()
    }
}

impl fmt::Display for LeafPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, seg) in self.0.iter().enumerate() {
            match seg {
                PathSegment::Key(k) if i == 0 => write!(f, "{k}")?,
                PathSegment::Key(k) => write!(f, ".{k}")?,
                PathSegment::Index(n) => write!(f, "[{n}]")?,
            }
        }
        Ok(())
    }
}
