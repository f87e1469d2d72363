//! Second half of the first flow: consolidate raw category names into a
//! canonical catalog, generate one entity schema per canonical category,
//! and persist both as versioned, immutable files.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::{Embedder, Field, Gateway, GatewayError, Part, PromptRequest, Role, Shape};
use crate::index::{best_match, cosine, SchemaIndex};
use crate::model::{
    category_slug, normalize_category_name, validate_schema, AttributeDefinition, CanonicalCatalog,
    EntityDefinition, EntitySchema,
};
use crate::store::{self, io_err, StoreError};
use crate::templates::{self, TemplateError};

/// Upper bounds requested from the model and enforced on its answer.
pub const MAX_ENTITIES: usize = 12;
pub const MAX_ATTRIBUTES: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum SchemaStageError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no raw category names to canonicalize")]
    NoInput,
    #[error("the model returned no usable canonical categories")]
    CatalogEmpty,
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl SchemaStageError {
    pub fn kind(&self) -> &'static str {
        match self {
            SchemaStageError::Template(_) => "template_error",
            SchemaStageError::Gateway(e) => e.kind(),
            SchemaStageError::NoInput => "no_input",
            SchemaStageError::CatalogEmpty => "catalog_empty",
            SchemaStageError::Store(_) => "store_error",
        }
    }
}

fn catalog_shape() -> Shape {
    Shape::object(vec![
        Field::required("canonical_categories", Shape::array(Shape::string())),
        Field::required("mapping", Shape::map(Shape::string())),
    ])
}

pub fn build_canonicalization_prompt(
    top_raw: &[(String, u64)],
    template: &str,
) -> Result<PromptRequest, TemplateError> {
    templates::require(template, &["categories"])?;
    let lines: Vec<String> = top_raw
        .iter()
        .map(|(name, count)| format!("- {}: {count}", Value::String(name.clone())))
        .collect();
    let text = templates::fill(template, &[("categories", &lines.join("\n"))]);
    Ok(PromptRequest::new(Role::Llm, vec![Part::Text(text)]).with_schema(catalog_shape()))
}

/// Asks the text model to merge the raw names, then repairs its answer so
/// the catalog invariants hold.
pub fn canonicalize(
    gateway: &Gateway,
    top_raw: &[(String, u64)],
    template: &str,
    version: u64,
) -> Result<CanonicalCatalog, SchemaStageError> {
    if top_raw.is_empty() {
        return Err(SchemaStageError::NoInput);
    }
    let request = build_canonicalization_prompt(top_raw, template)?;
    let response = gateway.complete_structured(&request)?;
    let parsed = response.parsed.unwrap_or_default();
    let raw_names: Vec<String> = top_raw.iter().map(|(n, _)| n.clone()).collect();
    repair_catalog(&raw_names, &parsed, gateway, &response.model_id, version)
}

/// Deterministic repair of a model-proposed catalog:
///
/// 1. blank canonical names are dropped and names equal under
///    normalization merge into the first spelling;
/// 2. each raw name takes its mapped target when that target (after
///    normalization) is a canonical category;
/// 3. any raw name still unmapped goes to the canonical category whose
///    embedding is most similar, ties to the earlier category.
pub fn repair_catalog(
    raw_names: &[String],
    proposal: &Value,
    embedder: &dyn Embedder,
    model_id: &str,
    version: u64,
) -> Result<CanonicalCatalog, SchemaStageError> {
    let mut canonical: Vec<String> = Vec::new();
    let mut by_key: HashMap<String, usize> = HashMap::new();
    for name in proposal["canonical_categories"].as_array().into_iter().flatten() {
        let Some(name) = name.as_str().map(str::trim) else { continue };
        let key = normalize_category_name(name);
        if key.is_empty() || by_key.contains_key(&key) {
            continue;
        }
        by_key.insert(key, canonical.len());
        canonical.push(name.to_string());
    }
    if canonical.is_empty() {
        return Err(SchemaStageError::CatalogEmpty);
    }

    let proposed: Vec<(&str, &str)> = proposal["mapping"]
        .as_object()
        .into_iter()
        .flatten()
        .filter_map(|(k, v)| Some((k.as_str(), v.as_str()?)))
        .collect();
    let lookup = |raw: &str| -> Option<usize> {
        let target = proposed
            .iter()
            .find(|(k, _)| *k == raw)
            .or_else(|| {
                let key = normalize_category_name(raw);
                proposed.iter().find(|(k, _)| normalize_category_name(k) == key)
            })
            .map(|(_, v)| *v)?;
        by_key.get(&normalize_category_name(target)).copied()
    };

    let mut mapping = BTreeMap::new();
    let mut unresolved = Vec::new();
    for raw in raw_names {
        match lookup(raw) {
            Some(i) => {
                mapping.insert(raw.clone(), canonical[i].clone());
            }
            None => unresolved.push(raw.clone()),
        }
    }

    if !unresolved.is_empty() {
        let targets = embedder.embed(&canonical)?;
        let queries = embedder.embed(&unresolved)?;
        for (raw, q) in unresolved.iter().zip(&queries) {
            let sims: Vec<f64> = targets
                .iter()
                .map(|t| cosine(q, t).unwrap_or(f64::NEG_INFINITY))
                .collect();
            let (best, best_sim) = best_match(&sims).unwrap_or((0, f64::NEG_INFINITY));
            tracing::debug!(raw = %raw, target = %canonical[best], sim = best_sim, "repaired unmapped raw name");
            mapping.insert(raw.clone(), canonical[best].clone());
        }
    }

    Ok(CanonicalCatalog {
        version,
        canonical_categories: canonical,
        mapping,
        model_id: model_id.to_string(),
    })
}

fn schema_shape() -> Shape {
    let attribute = Shape::object(vec![
        Field::required("name", Shape::non_empty_string()),
        Field::required("description", Shape::non_empty_string()),
        Field::required("examples", Shape::bounded_array(Shape::non_empty_string(), Some(1), None)),
    ]);
    let entity = Shape::object(vec![
        Field::required("name", Shape::non_empty_string()),
        Field::required(
            "attributes",
            Shape::bounded_array(attribute, Some(1), Some(MAX_ATTRIBUTES)),
        ),
    ]);
    Shape::object(vec![Field::required(
        "entities",
        Shape::bounded_array(entity, Some(1), Some(MAX_ENTITIES)),
    )])
}

pub fn build_schema_prompt(category: &str, template: &str) -> Result<PromptRequest, TemplateError> {
    templates::require(template, &["category"])?;
    let text = templates::fill(
        template,
        &[
            ("category", category),
            ("max_entities", &MAX_ENTITIES.to_string()),
            ("max_attributes", &MAX_ATTRIBUTES.to_string()),
        ],
    );
    Ok(PromptRequest::new(Role::Llm, vec![Part::Text(text)]).with_schema(schema_shape()))
}

/// Reads a schema from a shape-conforming model answer. Names and
/// examples are trimmed.
pub fn schema_from_json(category: &str, version: u64, value: &Value) -> EntitySchema {
    let text = |v: &Value| v.as_str().unwrap_or("").trim().to_string();
    let entities = value["entities"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|e| EntityDefinition {
            name: text(&e["name"]),
            attributes: e["attributes"]
                .as_array()
                .into_iter()
                .flatten()
                .map(|a| AttributeDefinition {
                    name: text(&a["name"]),
                    description: text(&a["description"]),
                    examples: a["examples"].as_array().into_iter().flatten().map(text).collect(),
                })
                .collect(),
        })
        .collect();
    EntitySchema {
        category: category.to_string(),
        schema_version: version,
        entities,
    }
}

/// Generates the schema for one canonical category. Answers failing
/// [`validate_schema`] go back through the corrective retry loop, so the
/// result is always valid.
pub fn generate_schema(
    gateway: &Gateway,
    category: &str,
    template: &str,
    version: u64,
) -> Result<EntitySchema, SchemaStageError> {
    let request = build_schema_prompt(category, template)?;
    let response = gateway.complete_structured_with(&request, |v| {
        validate_schema(&schema_from_json(category, version, v)).violations
    })?;
    Ok(schema_from_json(
        category,
        version,
        &response.parsed.unwrap_or_default(),
    ))
}

/// Current schema per canonical category.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaManifest {
    pub catalog_version: u64,
    pub schemas: Vec<SchemaManifestEntry>,
    /// Categories whose schema generation failed.
    #[serde(default)]
    pub failed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaManifestEntry {
    pub category: String,
    pub schema_version: u64,
    /// Path relative to the catalog directory.
    pub file: String,
}

impl SchemaManifest {
    pub fn entry(&self, category: &str) -> Option<&SchemaManifestEntry> {
        self.schemas.iter().find(|e| e.category == category)
    }
}

/// Versioned catalog, schema and schema-index files:
///
/// ```text
/// catalog.v<N>.json
/// index.v<N>.json
/// schemas/<slug>.v<M>.json
/// schemas/manifest.json
/// ```
///
/// Versioned files are immutable. Persisting content equal to the latest
/// version reuses that version, so identical reruns produce identical
/// bytes.
#[derive(Debug, Clone)]
pub struct CatalogDir {
    root: PathBuf,
}

impl CatalogDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn catalog_path(&self, version: u64) -> PathBuf {
        self.root.join(format!("catalog.v{version}.json"))
    }

    pub fn index_path(&self, catalog_version: u64) -> PathBuf {
        self.root.join(format!("index.v{catalog_version}.json"))
    }

    pub fn schema_file_name(category: &str, version: u64) -> String {
        format!("schemas/{}.v{version}.json", category_slug(category))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("schemas").join("manifest.json")
    }

    fn versions_of(&self, dir: &Path, stem: &str) -> Result<Vec<u64>, StoreError> {
        let entries = match fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(dir)(e)),
        };
        let prefix = format!("{stem}.v");
        let mut versions = Vec::new();
        for entry in entries {
            let name = entry.map_err(io_err(dir))?.file_name();
            let Some(name) = name.to_str() else { continue };
            if let Some(v) = name
                .strip_prefix(&prefix)
                .and_then(|rest| rest.strip_suffix(".json"))
                .and_then(|n| n.parse::<u64>().ok())
            {
                versions.push(v);
            }
        }
        versions.sort_unstable();
        Ok(versions)
    }

    pub fn latest_catalog(&self) -> Result<Option<CanonicalCatalog>, StoreError> {
        match self.versions_of(&self.root, "catalog")?.last() {
            Some(v) => store::read_json(&self.catalog_path(*v)).map(Some),
            None => Ok(None),
        }
    }

    /// Version a new catalog should carry: the latest version when the
    /// content is unchanged, otherwise one past it.
    pub fn resolve_catalog_version(&self, candidate: &CanonicalCatalog) -> Result<u64, StoreError> {
        Ok(match self.latest_catalog()? {
            Some(latest) => {
                let same = CanonicalCatalog {
                    version: latest.version,
                    ..candidate.clone()
                };
                if same == latest {
                    latest.version
                } else {
                    latest.version + 1
                }
            }
            None => 1,
        })
    }

    pub fn persist_catalog(&self, catalog: &CanonicalCatalog) -> Result<PathBuf, StoreError> {
        let path = self.catalog_path(catalog.version);
        write_immutable(&path, &store::to_pretty_json(catalog, &path)?)?;
        Ok(path)
    }

    pub fn latest_schema(&self, category: &str) -> Result<Option<EntitySchema>, StoreError> {
        let dir = self.root.join("schemas");
        match self.versions_of(&dir, &category_slug(category))?.last() {
            Some(v) => self.load_schema(category, *v).map(Some),
            None => Ok(None),
        }
    }

    pub fn resolve_schema_version(&self, candidate: &EntitySchema) -> Result<u64, StoreError> {
        Ok(match self.latest_schema(&candidate.category)? {
            Some(latest) => {
                let same = EntitySchema {
                    schema_version: latest.schema_version,
                    ..candidate.clone()
                };
                if same == latest {
                    latest.schema_version
                } else {
                    latest.schema_version + 1
                }
            }
            None => 1,
        })
    }

    pub fn load_schema(&self, category: &str, version: u64) -> Result<EntitySchema, StoreError> {
        store::read_json(&self.root.join(Self::schema_file_name(category, version)))
    }

    /// Writes each schema file and then the manifest pointing at them.
    pub fn persist_schemas(
        &self,
        schemas: &[EntitySchema],
        catalog_version: u64,
        failed: &[String],
    ) -> Result<Vec<PathBuf>, StoreError> {
        let mut paths = Vec::with_capacity(schemas.len());
        let mut manifest = SchemaManifest {
            catalog_version,
            schemas: Vec::new(),
            failed: failed.to_vec(),
        };
        for schema in schemas {
            let file = Self::schema_file_name(&schema.category, schema.schema_version);
            let path = self.root.join(&file);
            write_immutable(&path, &store::to_pretty_json(schema, &path)?)?;
            manifest.schemas.push(SchemaManifestEntry {
                category: schema.category.clone(),
                schema_version: schema.schema_version,
                file,
            });
            paths.push(path);
        }
        let path = self.manifest_path();
        store::write_atomic(&path, &store::to_pretty_json(&manifest, &path)?)?;
        Ok(paths)
    }

    pub fn load_manifest(&self) -> Result<Option<SchemaManifest>, StoreError> {
        let path = self.manifest_path();
        if !path.exists() {
            return Ok(None);
        }
        store::read_json(&path).map(Some)
    }

    /// The schemas the manifest points at, keyed by category.
    pub fn load_current_schemas(&self, manifest: &SchemaManifest) -> Result<BTreeMap<String, EntitySchema>, StoreError> {
        manifest
            .schemas
            .iter()
            .map(|e| Ok((e.category.clone(), store::read_json(&self.root.join(&e.file))?)))
            .collect()
    }

    pub fn persist_index(&self, index: &SchemaIndex) -> Result<PathBuf, StoreError> {
        let path = self.index_path(index.catalog_version);
        store::write_atomic(&path, &store::to_pretty_json(index, &path)?)?;
        Ok(path)
    }

    pub fn load_index(&self, catalog_version: u64) -> Result<Option<SchemaIndex>, StoreError> {
        let path = self.index_path(catalog_version);
        if !path.exists() {
            return Ok(None);
        }
        store::read_json(&path).map(Some)
    }
}

fn write_immutable(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    match fs::read(path) {
        Ok(existing) if existing == bytes => Ok(()),
        Ok(_) => Err(StoreError::Conflict {
            path: path.to_path_buf(),
        }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => store::write_atomic(path, bytes),
        Err(e) => Err(io_err(path)(e)),
    }
}
