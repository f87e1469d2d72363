//! Shared domain types, name normalization and schema validation.
//!
//! Every type here serializes to a single JSON object whose field names are
//! the snake_case names used throughout the record streams.

use std::collections::{BTreeMap, HashSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// One video clip as listed in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipManifestEntry {
    pub clip_id: String,
    /// Opaque media reference handed to the vision model as-is.
    pub media_uri: String,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_text: Option<String>,
    /// Free-form user prompt fragment used to steer categorization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steering_hint: Option<String>,
}

impl ClipManifestEntry {
    pub fn new(clip_id: impl Into<String>, media_uri: impl Into<String>, duration_s: f64) -> Self {
        Self {
            clip_id: clip_id.into(),
            media_uri: media_uri.into(),
            duration_s,
            transcript_text: None,
            caption_text: None,
            steering_hint: None,
        }
    }
}

/// Checks the manifest-level invariants: non-empty unique ids and
/// non-negative durations. Returns the first offending clip.
pub fn check_manifest(entries: &[ClipManifestEntry]) -> Result<(), ManifestError> {
    let mut seen = HashSet::new();
    for entry in entries {
        if entry.clip_id.trim().is_empty() {
            return Err(ManifestError::EmptyClipId);
        }
        if entry.duration_s.is_nan() || entry.duration_s < 0.0 {
            return Err(ManifestError::NegativeDuration(entry.clip_id.clone()));
        }
        if !seen.insert(entry.clip_id.as_str()) {
            return Err(ManifestError::DuplicateClipId(entry.clip_id.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest entry with empty clip_id")]
    EmptyClipId,
    #[error("duplicate clip_id `{0}` in manifest")]
    DuplicateClipId(String),
    #[error("clip `{0}` has a negative or invalid duration")]
    NegativeDuration(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub value: String,
}

impl Attribute {
    pub fn new(name: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value: value.into(),
        }
    }
}

/// An entity instance. The type vocabulary is open (Person, Object,
/// Background, or any schema entity name).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenericEntity {
    pub entity_type: String,
    #[serde(default)]
    pub attributes: Vec<Attribute>,
}

impl GenericEntity {
    pub fn new(entity_type: impl Into<String>, attributes: Vec<Attribute>) -> Self {
        Self {
            entity_type: entity_type.into(),
            attributes,
        }
    }

    pub fn attribute(&self, name: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|a| a.name == name)
            .map(|a| a.value.as_str())
    }

    /// Violations of the instance invariants (non-empty type, unique
    /// attribute names).
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.entity_type.trim().is_empty() {
            out.push("entity_type empty".to_string());
        }
        let mut seen = HashSet::new();
        for attr in &self.attributes {
            if !seen.insert(attr.name.as_str()) {
                out.push(format!(
                    "{}.{}: duplicate attribute name",
                    self.entity_type, attr.name
                ));
            }
        }
        out
    }
}

/// First-stage output for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCategorization {
    pub clip_id: String,
    pub raw_category: String,
    #[serde(default)]
    pub generic_entities: Vec<GenericEntity>,
    pub model_id: String,
    pub created_at: DateTime<Utc>,
}

/// Canonical category list plus the raw-to-canonical mapping it was built
/// from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalCatalog {
    pub version: u64,
    pub canonical_categories: Vec<String>,
    pub mapping: BTreeMap<String, String>,
    pub model_id: String,
}

impl CanonicalCatalog {
    /// Looks a raw name up in the mapping, first verbatim then by
    /// normalized form.
    pub fn map_raw(&self, raw: &str) -> Option<&str> {
        if let Some(target) = self.mapping.get(raw) {
            return Some(target);
        }
        let key = normalize_category_name(raw);
        self.mapping
            .iter()
            .find(|(k, _)| normalize_category_name(k) == key)
            .map(|(_, v)| v.as_str())
    }

    /// Invariant violations over the given raw inputs (totality is only
    /// checked for `raw_inputs`).
    pub fn violations<'a>(&self, raw_inputs: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        let mut out = Vec::new();
        let listed: HashSet<&str> = self.canonical_categories.iter().map(String::as_str).collect();
        for (raw, target) in &self.mapping {
            if !listed.contains(target.as_str()) {
                out.push(format!("mapping `{raw}` -> `{target}`: target not in catalog"));
            }
        }
        let mut normalized = HashSet::new();
        for name in &self.canonical_categories {
            if !normalized.insert(normalize_category_name(name)) {
                out.push(format!("canonical `{name}` duplicates another under normalization"));
            }
        }
        for raw in raw_inputs {
            if !self.mapping.contains_key(raw) {
                out.push(format!("raw `{raw}` unmapped"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDefinition {
    pub name: String,
    pub description: String,
    pub examples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDefinition {
    pub name: String,
    pub attributes: Vec<AttributeDefinition>,
}

impl EntityDefinition {
    pub fn attribute(&self, name: &str) -> Option<&AttributeDefinition> {
        self.attributes.iter().find(|a| a.name == name)
    }
}

/// Per-category list of typical entities and their attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySchema {
    pub category: String,
    pub schema_version: u64,
    pub entities: Vec<EntityDefinition>,
}

impl EntitySchema {
    pub fn entity(&self, name: &str) -> Option<&EntityDefinition> {
        self.entities.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<String>,
}

/// Checks every [`EntitySchema`] invariant. Violations name the offending
/// `entity` or `entity.attribute` path.
pub fn validate_schema(schema: &EntitySchema) -> ValidationReport {
    let mut violations = Vec::new();
    if schema.category.trim().is_empty() {
        violations.push("category empty".to_string());
    }
    if schema.entities.is_empty() {
        violations.push("entities empty".to_string());
    }
    let mut entity_names = HashSet::new();
    for (i, entity) in schema.entities.iter().enumerate() {
        let path = if entity.name.trim().is_empty() {
            format!("entities[{i}]")
        } else {
            entity.name.clone()
        };
        if entity.name.trim().is_empty() {
            violations.push(format!("{path}: entity name empty"));
        } else if !entity_names.insert(entity.name.as_str()) {
            violations.push(format!("{path}: duplicate entity name"));
        }
        if entity.attributes.is_empty() {
            violations.push(format!("{path}: attributes empty"));
        }
        let mut attr_names = HashSet::new();
        for (j, attr) in entity.attributes.iter().enumerate() {
            let attr_path = if attr.name.trim().is_empty() {
                format!("{path}.attributes[{j}]")
            } else {
                format!("{path}.{}", attr.name)
            };
            if attr.name.trim().is_empty() {
                violations.push(format!("{attr_path}: attribute name empty"));
            } else if !attr_names.insert(attr.name.as_str()) {
                violations.push(format!("{attr_path}: duplicate attribute name"));
            }
            if attr.description.trim().is_empty() {
                violations.push(format!("{attr_path}: description empty"));
            }
            if attr.examples.is_empty() {
                violations.push(format!("{attr_path}: examples empty"));
            }
        }
    }
    ValidationReport {
        ok: violations.is_empty(),
        violations,
    }
}

/// Second-stage output for one clip: schema-conformant entities plus the
/// retrieval metadata that picked the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub clip_id: String,
    pub raw_category: String,
    pub canonical_category: String,
    pub retrieval_similarity: f64,
    pub schema_version: u64,
    pub entities: Vec<GenericEntity>,
    pub model_id: String,
    pub created_at: DateTime<Utc>,
}

impl EntityRecord {
    /// Conformance of this record against the schema it cites.
    pub fn conformance_violations(&self, schema: &EntitySchema) -> Vec<String> {
        let mut out = Vec::new();
        if schema.category != self.canonical_category {
            out.push(format!(
                "record category `{}` does not match schema `{}`",
                self.canonical_category, schema.category
            ));
        }
        if schema.schema_version != self.schema_version {
            out.push(format!(
                "record cites schema v{} but schema is v{}",
                self.schema_version, schema.schema_version
            ));
        }
        for entity in &self.entities {
            out.extend(entity.violations());
            match schema.entity(&entity.entity_type) {
                None => out.push(format!("{}: entity not in schema", entity.entity_type)),
                Some(def) => {
                    for attr in &entity.attributes {
                        if def.attribute(&attr.name).is_none() {
                            out.push(format!(
                                "{}.{}: attribute not in schema",
                                entity.entity_type, attr.name
                            ));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Folds a category name into its comparison key: NFKC, lowercase, `&` to
/// `and`, punctuation to spaces, whitespace collapsed and trimmed.
pub fn normalize_category_name(raw: &str) -> String {
    let folded: String = raw.nfkc().collect::<String>().to_lowercase();
    // Lowercasing can leave compatibility forms behind (e.g. final sigma
    // contexts, ligature case pairs); fold once more.
    let folded: String = folded.nfkc().collect::<String>().to_lowercase();
    let folded = folded.replace('&', " and ");

    let mut out = String::with_capacity(folded.len());
    let mut pending_space = false;
    for ch in folded.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        } else {
            pending_space = true;
        }
    }
    out
}

/// Same folding as [`normalize_category_name`], applied to extracted values.
pub fn normalize_entity_value(value: &str) -> String {
    normalize_category_name(value)
}

/// File-name slug for a category: normalized words joined by hyphens.
pub fn category_slug(category: &str) -> String {
    normalize_category_name(category).replace(' ', "-")
}
