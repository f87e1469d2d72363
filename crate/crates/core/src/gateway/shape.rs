//! Declarative description of an expected JSON response and its checker.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    String {
        /// Reject strings that are empty after trimming.
        #[serde(default)]
        non_empty: bool,
    },
    Number,
    Boolean,
    Array {
        items: Box<Shape>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min_items: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_items: Option<usize>,
    },
    Object {
        fields: Vec<Field>,
    },
    /// Object with arbitrary keys whose values all share one shape.
    Map {
        values: Box<Shape>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub shape: Shape,
    #[serde(default = "default_required")]
    pub required: bool,
}

fn default_required() -> bool {
    true
}

impl Field {
    pub fn required(name: impl Into<String>, shape: Shape) -> Self {
        Self {
            name: name.into(),
            shape,
            required: true,
        }
    }

    pub fn optional(name: impl Into<String>, shape: Shape) -> Self {
        Self {
            name: name.into(),
            shape,
            required: false,
        }
    }
}

impl Shape {
    pub fn string() -> Self {
        Shape::String { non_empty: false }
    }

    pub fn non_empty_string() -> Self {
        Shape::String { non_empty: true }
    }

    pub fn array(items: Shape) -> Self {
        Shape::Array {
            items: Box::new(items),
            min_items: None,
            max_items: None,
        }
    }

    pub fn bounded_array(items: Shape, min_items: Option<usize>, max_items: Option<usize>) -> Self {
        Shape::Array {
            items: Box::new(items),
            min_items,
            max_items,
        }
    }

    pub fn object(fields: Vec<Field>) -> Self {
        Shape::Object { fields }
    }

    pub fn map(values: Shape) -> Self {
        Shape::Map {
            values: Box::new(values),
        }
    }

    /// Structural sanity of the description itself.
    pub fn well_formed(&self) -> Result<(), String> {
        match self {
            Shape::String { .. } | Shape::Number | Shape::Boolean => Ok(()),
            Shape::Array {
                items,
                min_items,
                max_items,
            } => {
                if let (Some(lo), Some(hi)) = (min_items, max_items) {
                    if lo > hi {
                        return Err(format!("array bounds inverted: min {lo} > max {hi}"));
                    }
                }
                items.well_formed()
            }
            Shape::Object { fields } => {
                let mut seen = HashSet::new();
                for field in fields {
                    if field.name.is_empty() {
                        return Err("object field with empty name".into());
                    }
                    if !seen.insert(field.name.as_str()) {
                        return Err(format!("duplicate object field `{}`", field.name));
                    }
                    field.shape.well_formed()?;
                }
                Ok(())
            }
            Shape::Map { values } => values.well_formed(),
        }
    }

    /// Returns every violation, each prefixed with its JSON path.
    /// Extra object members are tolerated.
    pub fn violations(&self, value: &Value) -> Vec<String> {
        let mut out = Vec::new();
        self.walk(value, "$", &mut out);
        out
    }

    fn walk(&self, value: &Value, path: &str, out: &mut Vec<String>) {
        match (self, value) {
            (Shape::String { non_empty }, Value::String(s)) => {
                if *non_empty && s.trim().is_empty() {
                    out.push(format!("{path}: expected non-empty string"));
                }
            }
            (Shape::Number, Value::Number(_)) | (Shape::Boolean, Value::Bool(_)) => {}
            (
                Shape::Array {
                    items,
                    min_items,
                    max_items,
                },
                Value::Array(elems),
            ) => {
                if let Some(lo) = min_items {
                    if elems.len() < *lo {
                        out.push(format!("{path}: expected at least {lo} items, got {}", elems.len()));
                    }
                }
                if let Some(hi) = max_items {
                    if elems.len() > *hi {
                        out.push(format!("{path}: expected at most {hi} items, got {}", elems.len()));
                    }
                }
                for (i, elem) in elems.iter().enumerate() {
                    items.walk(elem, &format!("{path}[{i}]"), out);
                }
            }
            (Shape::Object { fields }, Value::Object(map)) => {
                for field in fields {
                    let child = format!("{path}.{}", field.name);
                    match map.get(&field.name) {
                        Some(Value::Null) | None if field.required => {
                            out.push(format!("{child}: missing required field"))
                        }
                        Some(Value::Null) | None => {}
                        Some(v) => field.shape.walk(v, &child, out),
                    }
                }
            }
            (Shape::Map { values }, Value::Object(map)) => {
                for (key, v) in map {
                    values.walk(v, &format!("{path}.{key}"), out);
                }
            }
            (expected, got) => out.push(format!(
                "{path}: expected {}, got {}",
                expected.type_name(),
                json_type_name(got)
            )),
        }
    }

    fn type_name(&self) -> &'static str {
        match self {
            Shape::String { .. } => "string",
            Shape::Number => "number",
            Shape::Boolean => "boolean",
            Shape::Array { .. } => "array",
            Shape::Object { .. } | Shape::Map { .. } => "object",
        }
    }

    /// Equivalent JSON Schema document, for providers that accept one.
    pub fn to_json_schema(&self) -> Value {
        match self {
            Shape::String { non_empty } => {
                if *non_empty {
                    json!({"type": "string", "minLength": 1})
                } else {
                    json!({"type": "string"})
                }
            }
            Shape::Number => json!({"type": "number"}),
            Shape::Boolean => json!({"type": "boolean"}),
            Shape::Array {
                items,
                min_items,
                max_items,
            } => {
                let mut m = Map::new();
                m.insert("type".into(), json!("array"));
                m.insert("items".into(), items.to_json_schema());
                if let Some(lo) = min_items {
                    m.insert("minItems".into(), json!(lo));
                }
                if let Some(hi) = max_items {
                    m.insert("maxItems".into(), json!(hi));
                }
                Value::Object(m)
            }
            Shape::Object { fields } => {
                let mut props = Map::new();
                let mut required = Vec::new();
                for field in fields {
                    props.insert(field.name.clone(), field.shape.to_json_schema());
                    if field.required {
                        required.push(json!(field.name));
                    }
                }
                json!({"type": "object", "properties": props, "required": required})
            }
            Shape::Map { values } => {
                json!({"type": "object", "additionalProperties": values.to_json_schema()})
            }
        }
    }
}

fn json_type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Pulls a JSON value out of model output, tolerating markdown code fences
/// and prose around a single top-level object.
pub fn parse_model_json(raw: &str) -> Result<Value, String> {
    let trimmed = raw.trim();
    let unfenced = strip_fence(trimmed).unwrap_or(trimmed);
    match serde_json::from_str(unfenced) {
        Ok(v) => Ok(v),
        Err(first) => {
            let start = unfenced.find(['{', '[']);
            let end = unfenced.rfind(['}', ']']);
            if let (Some(s), Some(e)) = (start, end) {
                if s < e {
                    if let Ok(v) = serde_json::from_str(&unfenced[s..=e]) {
                        return Ok(v);
                    }
                }
            }
            Err(format!("$: invalid JSON: {first}"))
        }
    }
}

fn strip_fence(text: &str) -> Option<&str> {
    let body = text.strip_prefix("```")?;
    let body = body.strip_suffix("```")?;
    // drop an info string such as `json`
    let body = match body.find('\n') {
        Some(i) if !body[..i].trim_start().starts_with(['{', '[']) => &body[i + 1..],
        _ => body,
    };
    Some(body.trim())
}
