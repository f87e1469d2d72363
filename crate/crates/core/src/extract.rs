//! Second pass over the clips: each clip is prompted with the schema of its
//! canonical category, and whatever comes back is filtered down to the
//! entity and attribute names that schema allows.

use serde_json::{json, Value};

use crate::categorize::entity_list_shape;
use crate::categorize::parts_around_media;
use crate::clock::Clock;
use crate::gateway::{Embedder, Field, Gateway, GatewayError, Part, PromptRequest, Role, Shape};
use crate::index::{cosine, retrieve, IndexError, Retrieval, SchemaIndex};
use crate::model::{
    normalize_category_name, Attribute, CanonicalCatalog, ClipManifestEntry, EntityRecord, EntitySchema,
    GenericEntity,
};
use crate::templates::{self, TemplateError};

pub const DEFAULT_MAX_EXAMPLES_INLINE: usize = 3;

/// The schema as prompt text: one heading per entity, one line per
/// attribute with its description and the first `max_examples` examples.
pub fn render_schema_block(schema: &EntitySchema, max_examples: usize) -> String {
    let mut out = String::new();
    for entity in &schema.entities {
        out.push_str(&format!("Entity \"{}\":\n", entity.name));
        for attr in &entity.attributes {
            out.push_str(&format!("- {}.{}: {}", entity.name, attr.name, attr.description.trim()));
            let shown: Vec<String> = attr
                .examples
                .iter()
                .take(max_examples)
                .map(|e| format!("\"{e}\""))
                .collect();
            if !shown.is_empty() {
                out.push_str(&format!(" (examples: {})", shown.join(", ")));
            }
            out.push('\n');
        }
    }
    out.trim_end().to_string()
}

pub fn render_schema_prompt(
    schema: &EntitySchema,
    template: &str,
    max_examples: usize,
) -> Result<String, TemplateError> {
    templates::require(template, &["schema_block"])?;
    let block = render_schema_block(schema, max_examples);
    Ok(templates::fill(
        template,
        &[("category", schema.category.as_str()), ("schema_block", block.as_str())],
    ))
}

pub fn extraction_shape() -> Shape {
    Shape::object(vec![Field::required("entities", entity_list_shape())])
}

/// Vision request for one clip. Transcript and caption text, when present
/// and enabled, follow the prompt as extra text parts.
pub fn build_extraction_prompt(
    clip: &ClipManifestEntry,
    schema: &EntitySchema,
    template: &str,
    max_examples: usize,
    text_sidechannel: bool,
) -> Result<PromptRequest, TemplateError> {
    templates::require(template, &["media", "schema_block"])?;
    let filled = render_schema_prompt(schema, template, max_examples)?;
    let mut parts = parts_around_media(&filled, &clip.media_uri);
    if text_sidechannel {
        if let Some(t) = clip.transcript_text.as_deref().filter(|t| !t.trim().is_empty()) {
            parts.push(Part::Text(format!("\n\nTranscript of the clip's audio:\n{}", t.trim())));
        }
        if let Some(c) = clip.caption_text.as_deref().filter(|c| !c.trim().is_empty()) {
            parts.push(Part::Text(format!("\n\nCaption text:\n{}", c.trim())));
        }
    }
    Ok(PromptRequest::new(Role::Vlm, parts).with_schema(extraction_shape()))
}

/// A member of the model output that did not survive repair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dropped {
    pub member: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Repair {
    pub entities: Vec<GenericEntity>,
    pub dropped: Vec<Dropped>,
}

impl Repair {
    pub fn dropped_count(&self) -> usize {
        self.dropped.len()
    }
}

/// Keeps the entities and attributes whose names match the schema after
/// normalization, renamed to the schema's spelling. Values are trimmed;
/// blank values, repeated attributes and entities left with no attributes
/// are dropped. Accepts either `{"entities": [...]}` or a bare array.
pub fn repair_conformance(parsed: &Value, schema: &EntitySchema) -> Repair {
    let mut repair = Repair::default();
    let items = match parsed {
        Value::Array(items) => items.as_slice(),
        Value::Object(map) => match map.get("entities") {
            Some(Value::Array(items)) => items.as_slice(),
            Some(Value::Null) | None => &[],
            Some(other) => {
                repair.dropped.push(Dropped {
                    member: "entities".into(),
                    reason: format!("expected an array, got {other}"),
                });
                &[]
            }
        },
        _ => &[],
    };

    for item in items {
        let Some(raw_type) = item.get("entity_type").and_then(Value::as_str) else {
            repair.dropped.push(Dropped {
                member: item.to_string(),
                reason: "entity without an entity_type".into(),
            });
            continue;
        };
        let key = normalize_category_name(raw_type);
        let Some(def) = schema
            .entities
            .iter()
            .find(|e| normalize_category_name(&e.name) == key)
        else {
            repair.dropped.push(Dropped {
                member: raw_type.to_string(),
                reason: format!("entity type `{raw_type}` not in schema"),
            });
            continue;
        };

        let mut attributes: Vec<Attribute> = Vec::new();
        let attrs = match item.get("attributes") {
            Some(Value::Array(a)) => a.as_slice(),
            _ => &[],
        };
        for attr in attrs {
            let name = attr.get("name").and_then(Value::as_str);
            let value = attr.get("value").and_then(Value::as_str);
            let (Some(name), Some(value)) = (name, value) else {
                repair.dropped.push(Dropped {
                    member: format!("{}.{}", def.name, attr),
                    reason: "attribute without a string name and value".into(),
                });
                continue;
            };
            let member = format!("{}.{}", def.name, name);
            let attr_key = normalize_category_name(name);
            let Some(attr_def) = def
                .attributes
                .iter()
                .find(|a| normalize_category_name(&a.name) == attr_key)
            else {
                repair.dropped.push(Dropped {
                    member,
                    reason: format!("attribute `{name}` not in schema entity `{}`", def.name),
                });
                continue;
            };
            let value = value.trim();
            if value.is_empty() {
                repair.dropped.push(Dropped {
                    member,
                    reason: "empty value".into(),
                });
            } else if attributes.iter().any(|a| a.name == attr_def.name) {
                repair.dropped.push(Dropped {
                    member,
                    reason: "repeated attribute".into(),
                });
            } else {
                attributes.push(Attribute::new(attr_def.name.clone(), value));
            }
        }
        if attributes.is_empty() {
            repair.dropped.push(Dropped {
                member: def.name.clone(),
                reason: "entity has no schema attributes".into(),
            });
            continue;
        }
        repair.entities.push(GenericEntity::new(def.name.clone(), attributes));
    }
    repair
}

/// Serializes entities back into the response form `repair_conformance`
/// reads.
pub fn entities_to_json(entities: &[GenericEntity]) -> Value {
    json!({ "entities": entities })
}

/// How a clip's canonical category was chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaChoice {
    pub raw_category: String,
    pub retrieval: Retrieval,
    /// Chosen through the catalog mapping rather than nearest neighbour.
    pub via_mapping: bool,
}

/// Picks the index entry for a raw category. A raw name the catalog maps
/// goes to its mapped category when that category has a schema; anything
/// else is matched by embedding.
pub fn choose_schema(
    raw_category: &str,
    catalog: Option<&CanonicalCatalog>,
    index: &SchemaIndex,
    embedder: &dyn Embedder,
    min_similarity: f64,
) -> Result<SchemaChoice, IndexError> {
    let mapped = catalog.and_then(|c| c.map_raw(raw_category)).and_then(|target| {
        index
            .entries
            .iter()
            .position(|e| e.canonical_category == target)
    });
    let retrieval = match mapped {
        Some(position) => {
            let entry = &index.entries[position];
            let exact = normalize_category_name(raw_category) == normalize_category_name(&entry.canonical_category);
            let similarity = if exact {
                1.0
            } else {
                let query = embedder
                    .embed(&[raw_category.to_string()])?
                    .pop()
                    .ok_or(IndexError::EmptyQuery)?;
                cosine(&query, &entry.embedding)?
            };
            Retrieval {
                canonical_category: entry.canonical_category.clone(),
                schema_ref: entry.schema_ref.clone(),
                similarity,
                position,
                exact,
                low_confidence: similarity < min_similarity,
            }
        }
        None => retrieve(raw_category, index, embedder, min_similarity)?,
    };
    Ok(SchemaChoice {
        raw_category: raw_category.to_string(),
        retrieval,
        via_mapping: mapped.is_some(),
    })
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExtractError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] IndexError),
    #[error("no schema loaded for category `{0}`")]
    MissingSchema(String),
}

impl ExtractError {
    pub fn kind(&self) -> &'static str {
        match self {
            ExtractError::Template(_) => "template_error",
            ExtractError::Gateway(e) => e.kind(),
            ExtractError::Retrieval(_) => "retrieval_error",
            ExtractError::MissingSchema(_) => "missing_schema",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub record: EntityRecord,
    pub dropped: Vec<Dropped>,
    pub attempt_count: u32,
}

pub struct Extractor<'a> {
    pub gateway: &'a Gateway,
    pub template: &'a str,
    pub max_examples_inline: usize,
    pub text_sidechannel: bool,
    pub clock: &'a dyn Clock,
}

impl Extractor<'_> {
    pub fn extract_entities(
        &self,
        clip: &ClipManifestEntry,
        schema: &EntitySchema,
        choice: &SchemaChoice,
    ) -> Result<Extraction, ExtractError> {
        let request = build_extraction_prompt(
            clip,
            schema,
            self.template,
            self.max_examples_inline,
            self.text_sidechannel,
        )?;
        let response = self.gateway.complete_structured(&request)?;
        let repair = repair_conformance(&response.parsed.unwrap_or_default(), schema);
        Ok(Extraction {
            record: EntityRecord {
                clip_id: clip.clip_id.clone(),
                raw_category: choice.raw_category.clone(),
                canonical_category: schema.category.clone(),
                retrieval_similarity: choice.retrieval.similarity,
                schema_version: schema.schema_version,
                entities: repair.entities,
                model_id: response.model_id,
                created_at: self.clock.now(),
            },
            dropped: repair.dropped,
            attempt_count: response.attempt_count,
        })
    }
}
