//! Embedding lookup from a raw category name to the closest canonical
//! category and its schema. A linear scan: catalogs are tens of entries.

use serde::{Deserialize, Serialize};

use crate::gateway::{Embedder, GatewayError};
use crate::model::{normalize_category_name, CanonicalCatalog};
use crate::schema_gen::SchemaManifest;

/// Matches below this similarity are flagged, not rejected.
pub const DEFAULT_MIN_SIMILARITY: f64 = 0.30;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IndexError {
    #[error("vector dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("schema index is empty")]
    IndexEmpty,
    #[error("empty query")]
    EmptyQuery,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Similarities this close count as a tie. Mathematically equal cosines
/// can differ in the last bits depending on summation order.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Position and value of the best similarity, the earliest position among
/// those within [`TIE_TOLERANCE`] of the maximum.
pub fn best_match(similarities: &[f64]) -> Option<(usize, f64)> {
    let max = similarities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    similarities
        .iter()
        .position(|&s| s >= max - TIE_TOLERANCE)
        .map(|i| (i, similarities[i]))
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, IndexError> {
    if u.len() != v.len() {
        return Err(IndexError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(IndexError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub canonical_category: String,
    pub embedding: Vec<f64>,
    /// Schema file relative to the catalog directory.
    pub schema_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexWarning {
    pub category: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaIndex {
    pub dimension: usize,
    pub catalog_version: u64,
    pub entries: Vec<IndexEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<IndexWarning>,
}

impl SchemaIndex {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// One entry per catalog category that has a current schema, in catalog
/// order. Categories without a schema are skipped with a warning.
pub fn build_index(
    catalog: &CanonicalCatalog,
    manifest: &SchemaManifest,
    embedder: &dyn Embedder,
) -> Result<SchemaIndex, IndexError> {
    if catalog.canonical_categories.is_empty() {
        return Err(IndexError::IndexEmpty);
    }
    let mut included = Vec::new();
    let mut warnings = Vec::new();
    for category in &catalog.canonical_categories {
        match manifest.entry(category) {
            Some(entry) => included.push((category.clone(), entry.file.clone())),
            None => {
                tracing::warn!(%category, "no current schema; left out of the index");
                warnings.push(IndexWarning {
                    category: category.clone(),
                    reason: "no current schema".into(),
                });
            }
        }
    }
    if included.is_empty() {
        return Err(IndexError::IndexEmpty);
    }
    let names: Vec<String> = included.iter().map(|(c, _)| c.clone()).collect();
    let embeddings = embedder.embed(&names)?;
    let dimension = embeddings.first().map_or(0, Vec::len);
    let entries = included
        .into_iter()
        .zip(embeddings)
        .map(|((canonical_category, schema_ref), embedding)| IndexEntry {
            canonical_category,
            embedding,
            schema_ref,
        })
        .collect();
    Ok(SchemaIndex {
        dimension,
        catalog_version: catalog.version,
        entries,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub canonical_category: String,
    pub schema_ref: String,
    pub similarity: f64,
    /// Position of the entry in the index.
    pub position: usize,
    /// Matched on normalized name rather than by embedding.
    pub exact: bool,
    pub low_confidence: bool,
}

/// Best canonical category for a raw name. Exact normalized-name matches
/// short-circuit with similarity 1.0; otherwise the cosine argmax wins,
/// earlier entries winning ties (see [`best_match`]).
pub fn retrieve(
    raw_category: &str,
    index: &SchemaIndex,
    embedder: &dyn Embedder,
    min_similarity: f64,
) -> Result<Retrieval, IndexError> {
    if index.is_empty() {
        return Err(IndexError::IndexEmpty);
    }
    let key = normalize_category_name(raw_category);
    if key.is_empty() {
        return Err(IndexError::EmptyQuery);
    }
    let hit = |position: usize, similarity: f64, exact: bool| {
        let entry = &index.entries[position];
        Retrieval {
            canonical_category: entry.canonical_category.clone(),
            schema_ref: entry.schema_ref.clone(),
            similarity,
            position,
            exact,
            low_confidence: similarity < min_similarity,
        }
    };
    if let Some(pos) = index
        .entries
        .iter()
        .position(|e| normalize_category_name(&e.canonical_category) == key)
    {
        return Ok(hit(pos, 1.0, true));
    }

    let query = embedder
        .embed(&[raw_category.to_string()])?
        .pop()
        .ok_or(IndexError::EmptyQuery)?;
    let sims = index
        .entries
        .iter()
        .map(|e| cosine(&query, &e.embedding))
        .collect::<Result<Vec<_>, _>>()?;
    let (pos, sim) = best_match(&sims).ok_or(IndexError::IndexEmpty)?;
    Ok(hit(pos, sim, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::trigram_embedding;
    use crate::schema_gen::SchemaManifestEntry;
    use std::collections::BTreeMap;

    #[test]
    fn best_match_breaks_near_ties_by_position() {
        assert_eq!(best_match(&[0.5, 0.5 + 1e-15, 0.2]), Some((0, 0.5)));
        assert_eq!(best_match(&[0.2, 0.5, 0.5 + 1e-9]), Some((2, 0.5 + 1e-9)));
        assert_eq!(best_match(&[]), None);
    }

    struct Trigram;

    impl Embedder for Trigram {
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
            texts
                .iter()
                .map(|t| trigram_embedding(t).ok_or(GatewayError::EmptyInput))
                .collect()
        }
    }

    /// Returns the same vector for every text.
    struct Constant;

    impl Embedder for Constant {
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
            Ok(texts.iter().map(|_| vec![0.6, 0.8]).collect())
        }
    }

    fn catalog(names: &[&str]) -> CanonicalCatalog {
        CanonicalCatalog {
            version: 4,
            canonical_categories: names.iter().map(|s| s.to_string()).collect(),
            mapping: BTreeMap::new(),
            model_id: "m".into(),
        }
    }

    fn manifest(names: &[&str]) -> SchemaManifest {
        SchemaManifest {
            catalog_version: 4,
            schemas: names
                .iter()
                .map(|n| SchemaManifestEntry {
                    category: n.to_string(),
                    schema_version: 1,
                    file: format!("schemas/{}.v1.json", crate::model::category_slug(n)),
                })
                .collect(),
            failed: vec![],
        }
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -1.2, 4.0];
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap() - 8.0 / 9.0).abs() <= 1e-9);
        assert_eq!(
            cosine(&[1.0], &[1.0, 2.0]),
            Err(IndexError::DimensionMismatch { left: 1, right: 2 })
        );
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), Err(IndexError::ZeroVector));
    }

    const YOUTUBE_15: [&str; 15] = [
        "Autos & Vehicles",
        "Comedy",
        "Education",
        "Entertainment",
        "Film & Animation",
        "Gaming",
        "How-To",
        "Music",
        "News & Politics",
        "Nonprofits & Activism",
        "People & Blogs",
        "Pets & Animals",
        "Science & Technology",
        "Sports",
        "Travel & Events",
    ];

    #[test]
    fn builds_one_entry_per_category() {
        let index = build_index(&catalog(&YOUTUBE_15), &manifest(&YOUTUBE_15), &Trigram).unwrap();
        assert_eq!(index.len(), 15);
        assert_eq!(index.dimension, 256);
        assert_eq!(index.catalog_version, 4);
        for e in &index.entries {
            let norm: f64 = e.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn empty_catalog_is_an_error() {
        assert_eq!(
            build_index(&catalog(&[]), &manifest(&[]), &Trigram),
            Err(IndexError::IndexEmpty)
        );
    }

    #[test]
    fn missing_schema_is_excluded_with_warning() {
        let index = build_index(
            &catalog(&["History", "Cooking", "Travel"]),
            &manifest(&["History", "Travel"]),
            &Trigram,
        )
        .unwrap();
        assert_eq!(index.len(), 2);
        assert_eq!(
            index.warnings,
            vec![IndexWarning {
                category: "Cooking".into(),
                reason: "no current schema".into()
            }]
        );
    }

    #[test]
    fn exact_name_fast_path() {
        let names = ["History", "Cooking"];
        let index = build_index(&catalog(&names), &manifest(&names), &Trigram).unwrap();
        let hit = retrieve("history!", &index, &Trigram, DEFAULT_MIN_SIMILARITY).unwrap();
        assert_eq!(hit.canonical_category, "History");
        assert_eq!(hit.similarity, 1.0);
        assert!(hit.exact);
        assert_eq!(hit.schema_ref, "schemas/history.v1.json");
        // independent of the embedder
        let hit = retrieve("COOKING", &index, &Constant, DEFAULT_MIN_SIMILARITY).unwrap();
        assert_eq!((hit.canonical_category.as_str(), hit.similarity), ("Cooking", 1.0));
    }

    #[test]
    fn semantic_match_equals_brute_force() {
        let names = ["Cooking", "History", "Travel", "Sports"];
        let index = build_index(&catalog(&names), &manifest(&names), &Trigram).unwrap();
        let query = "Historical documentaries";
        let q = trigram_embedding(query).unwrap();
        let mut best = (0, f64::MIN);
        for (i, n) in names.iter().enumerate() {
            let e = trigram_embedding(n).unwrap();
            let dot: f64 = q.iter().zip(&e).map(|(a, b)| a * b).sum();
            if dot > best.1 {
                best = (i, dot);
            }
        }
        assert_eq!(names[best.0], "History");
        let hit = retrieve(query, &index, &Trigram, DEFAULT_MIN_SIMILARITY).unwrap();
        assert_eq!(hit.canonical_category, "History");
        assert!((hit.similarity - best.1).abs() < 1e-12);
        assert!(!hit.exact);
    }

    #[test]
    fn ties_go_to_catalog_order_and_low_confidence_flags() {
        let names = ["Alpha", "Beta"];
        let index = build_index(&catalog(&names), &manifest(&names), &Constant).unwrap();
        let a = retrieve("gamma", &index, &Constant, 0.3).unwrap();
        let b = retrieve("gamma", &index, &Constant, 0.3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.canonical_category, "Alpha");
        assert!(!a.low_confidence);
        let c = retrieve("gamma", &index, &Constant, 1.5).unwrap();
        assert!(c.low_confidence);
    }

    #[test]
    fn empty_index_and_query() {
        let index = SchemaIndex {
            dimension: 256,
            catalog_version: 1,
            entries: vec![],
            warnings: vec![],
        };
        assert_eq!(retrieve("x", &index, &Trigram, 0.3), Err(IndexError::IndexEmpty));
        let names = ["History"];
        let index = build_index(&catalog(&names), &manifest(&names), &Trigram).unwrap();
        assert_eq!(retrieve("  ", &index, &Trigram, 0.3), Err(IndexError::EmptyQuery));
    }

    #[test]
    fn persisted_form_round_trips_exactly() {
        let index = build_index(&catalog(&YOUTUBE_15), &manifest(&YOUTUBE_15), &Trigram).unwrap();
        let text = serde_json::to_string(&index).unwrap();
        let back: SchemaIndex = serde_json::from_str(&text).unwrap();
        assert_eq!(back, index);
    }
}
