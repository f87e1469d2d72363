//! First pass over the clips: one vision prompt per clip infers a free-form
//! category and, optionally, generic entities; the results are then tallied
//! by normalized category name.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clock::Clock;
use crate::gateway::{Field, Gateway, GatewayError, Part, PromptRequest, Role, Shape};
use crate::model::{normalize_category_name, Attribute, ClipManifestEntry, GenericEntity, RawCategorization};
use crate::templates::{self, TemplateError};

/// Raw names sent on to canonicalization when not configured.
pub const DEFAULT_TOP_K: usize = 50;

const ENTITY_INSTRUCTIONS: &str = "Also list the general-purpose entities present in the clip: \
people (entity_type \"Person\"), objects (\"Object\"), locations (\"Location\") and the \
background setting (\"Background\"). Describe each entity with attribute name/value pairs, \
for example Name, Role, Gender, Age, Appearance and Mood for people, Type, Color and Size \
for objects, and Setting for backgrounds.";

fn attributes_shape() -> Shape {
    Shape::array(Shape::object(vec![
        Field::required("name", Shape::string()),
        Field::required("value", Shape::string()),
    ]))
}

/// `[{entity_type, attributes: [{name, value}]}]`
pub(crate) fn entity_list_shape() -> Shape {
    Shape::array(Shape::object(vec![
        Field::required("entity_type", Shape::string()),
        Field::optional("attributes", attributes_shape()),
    ]))
}

pub fn categorization_shape(generic_entities: bool) -> Shape {
    let mut fields = vec![Field::required("raw_category", Shape::non_empty_string())];
    if generic_entities {
        fields.push(Field::required("generic_entities", entity_list_shape()));
    }
    Shape::object(fields)
}

/// Splits a filled template around `{media}` so the media reference sits
/// where the template put it.
pub(crate) fn parts_around_media(filled: &str, media_uri: &str) -> Vec<Part> {
    let mut parts = Vec::new();
    let mut pieces = filled.split("{media}").peekable();
    while let Some(piece) = pieces.next() {
        if !piece.trim().is_empty() {
            parts.push(Part::Text(piece.to_string()));
        }
        if pieces.peek().is_some() {
            parts.push(Part::MediaRef(media_uri.to_string()));
        }
    }
    parts
}

/// Vision request for one clip: the template with `{steering}` replaced by
/// the clip's hint (or removed) and `{media}` turned into a media part.
pub fn build_categorization_prompt(
    clip: &ClipManifestEntry,
    template: &str,
    generic_entities: bool,
) -> Result<PromptRequest, TemplateError> {
    templates::require(template, &["media", "steering"])?;
    let steering = clip.steering_hint.as_deref().unwrap_or("");
    let entity_text = if generic_entities { ENTITY_INSTRUCTIONS } else { "" };
    let filled = templates::fill(
        template,
        &[("steering", steering), ("entity_instructions", entity_text)],
    );
    Ok(PromptRequest::new(Role::Vlm, parts_around_media(&filled, &clip.media_uri))
        .with_schema(categorization_shape(generic_entities)))
}

/// Reads entity objects leniently: blank types and attribute names are
/// skipped, values trimmed, and repeated attribute names keep the first.
pub(crate) fn entities_from_json(value: Option<&Value>) -> Vec<GenericEntity> {
    let Some(Value::Array(items)) = value else {
        return Vec::new();
    };
    items
        .iter()
        .filter_map(|item| {
            let entity_type = item.get("entity_type")?.as_str()?.trim();
            if entity_type.is_empty() {
                return None;
            }
            let mut attributes: Vec<Attribute> = Vec::new();
            if let Some(Value::Array(attrs)) = item.get("attributes") {
                for attr in attrs {
                    let (Some(name), Some(value)) = (
                        attr.get("name").and_then(Value::as_str),
                        attr.get("value").and_then(Value::as_str),
                    ) else {
                        continue;
                    };
                    let name = name.trim();
                    if name.is_empty() || attributes.iter().any(|a| a.name == name) {
                        continue;
                    }
                    attributes.push(Attribute::new(name, value.trim()));
                }
            }
            Some(GenericEntity::new(entity_type, attributes))
        })
        .collect()
}

pub struct Categorizer<'a> {
    pub gateway: &'a Gateway,
    pub template: &'a str,
    pub generic_entities: bool,
    pub clock: &'a dyn Clock,
}

impl Categorizer<'_> {
    pub fn categorize_clip(&self, clip: &ClipManifestEntry) -> Result<RawCategorization, CategorizeError> {
        let request = build_categorization_prompt(clip, self.template, self.generic_entities)?;
        let response = self.gateway.complete_structured(&request)?;
        let parsed = response.parsed.unwrap_or_default();
        let raw_category = parsed["raw_category"].as_str().unwrap_or("").trim().to_string();
        let generic_entities = if self.generic_entities {
            entities_from_json(parsed.get("generic_entities"))
        } else {
            Vec::new()
        };
        Ok(RawCategorization {
            clip_id: clip.clip_id.clone(),
            raw_category,
            generic_entities,
            model_id: response.model_id,
            created_at: self.clock.now(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CategorizeError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl CategorizeError {
    pub fn kind(&self) -> &'static str {
        match self {
            CategorizeError::Template(_) => "template_error",
            CategorizeError::Gateway(e) => e.kind(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TallyEntry {
    pub count: u64,
    /// Original spellings and how often each occurred.
    pub spellings: BTreeMap<String, u64>,
}

impl TallyEntry {
    /// Most frequent original spelling; ties go to the lexicographically
    /// smallest.
    pub fn representative(&self) -> &str {
        self.spellings
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(s, _)| s.as_str())
            .unwrap_or("")
    }
}

/// Frequency table keyed by normalized raw category name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryTally {
    pub entries: BTreeMap<String, TallyEntry>,
}

impl CategoryTally {
    pub fn total(&self) -> u64 {
        self.entries.values().map(|e| e.count).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn tally_raw_categories<'a>(records: impl IntoIterator<Item = &'a RawCategorization>) -> CategoryTally {
    let mut tally = CategoryTally::default();
    for record in records {
        let spelling = record.raw_category.trim();
        let entry = tally.entries.entry(normalize_category_name(spelling)).or_default();
        entry.count += 1;
        *entry.spellings.entry(spelling.to_string()).or_default() += 1;
    }
    tally
}

/// The `k` most frequent names as (representative spelling, count),
/// ordered by count descending then normalized name ascending.
pub fn top_k(tally: &CategoryTally, k: usize) -> Vec<(String, u64)> {
    let mut rows: Vec<(&String, &TallyEntry)> = tally.entries.iter().collect();
    rows.sort_by(|a, b| b.1.count.cmp(&a.1.count).then_with(|| a.0.cmp(b.0)));
    rows.into_iter()
        .take(k)
        .map(|(_, e)| (e.representative().to_string(), e.count))
        .collect()
}
