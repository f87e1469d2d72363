//! Offline evaluation: entity recall of each method against hand-labelled
//! ground truth, distributions over the extracted records and per-clip
//! side-by-side comparisons.

mod case_study;
mod distribution;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::model::{normalize_category_name, normalize_entity_value, Attribute, EntityRecord, RawCategorization};

pub use case_study::{case_study, CaseRow, CaseStudy, CASE_STUDY_OURS};
pub use distribution::{
    attribute_distribution, category_distribution, entity_type_distribution, histogram_csv, top_values,
};

/// Entity types the recall protocol reports on.
pub const RECALL_ENTITY_TYPES: [&str; 3] = ["Person", "Location", "Object"];

/// Method name under which the pipeline's own output is evaluated.
pub const OURS: &str = "ours";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub clip_id: String,
    pub entity_type: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodOutput {
    pub method: String,
    pub clip_id: String,
    pub entity_type: String,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<Attribute>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("unknown clip `{0}`")]
    UnknownClip(String),
    #[error("duplicate ground-truth entry ({clip_id}, {entity_type}, {value})")]
    DuplicateTruth {
        clip_id: String,
        entity_type: String,
        value: String,
    },
    #[error("method `{0}` is not in the configured method set")]
    UnknownMethod(String),
    #[error("csv: {0}")]
    Csv(String),
}

/// Fuzzy-match thresholds; both comparisons are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub jaccard: f64,
    pub levenshtein: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            jaccard: 0.5,
            levenshtein: 0.85,
        }
    }
}

/// Jaccard index of the whitespace-separated token sets.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let ta: HashSet<&str> = a.split_whitespace().collect();
    let tb: HashSet<&str> = b.split_whitespace().collect();
    let union = ta.union(&tb).count();
    if union == 0 {
        return 0.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

/// Whether a predicted value names the same entity as a truth value: equal
/// after normalization, or close enough by token Jaccard or normalized
/// Levenshtein similarity. Blank values never match.
pub fn match_entity(predicted: &str, truth: &str, config: &MatchConfig) -> bool {
    let p = normalize_entity_value(predicted);
    let t = normalize_entity_value(truth);
    if p.is_empty() || t.is_empty() {
        return false;
    }
    p == t
        || token_jaccard(&p, &t) >= config.jaccard
        || strsim::normalized_levenshtein(&p, &t) >= config.levenshtein
}

/// Rejects ground truth that repeats a (clip, type, value) triple after
/// normalization.
pub fn check_ground_truth(truth: &[GroundTruthEntry]) -> Result<(), EvalError> {
    let mut seen = HashSet::new();
    for entry in truth {
        let key = (
            entry.clip_id.clone(),
            normalize_category_name(&entry.entity_type),
            normalize_entity_value(&entry.value),
        );
        if !seen.insert(key) {
            return Err(EvalError::DuplicateTruth {
                clip_id: entry.clip_id.clone(),
                entity_type: entry.entity_type.clone(),
                value: entry.value.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recall {
    /// `None` when there is no truth of this type.
    pub recall: Option<f64>,
    pub matched: u64,
    pub total: u64,
}

/// Micro-averaged recall of `method` on `entity_type`: the share of truth
/// entries with at least one matching output for the same clip and type.
/// Entity types compare after name normalization.
pub fn entity_recall(
    outputs: &[MethodOutput],
    truth: &[GroundTruthEntry],
    method: &str,
    entity_type: &str,
    config: &MatchConfig,
) -> Recall {
    let type_key = normalize_category_name(entity_type);
    let mut by_clip: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for out in outputs {
        if out.method == method && normalize_category_name(&out.entity_type) == type_key {
            by_clip.entry(out.clip_id.as_str()).or_default().push(out.value.as_str());
        }
    }
    let mut matched = 0;
    let mut total = 0;
    for entry in truth {
        if normalize_category_name(&entry.entity_type) != type_key {
            continue;
        }
        total += 1;
        let hit = by_clip
            .get(entry.clip_id.as_str())
            .is_some_and(|values| values.iter().any(|v| match_entity(v, &entry.value, config)));
        if hit {
            matched += 1;
        }
    }
    Recall {
        recall: (total > 0).then(|| matched as f64 / total as f64),
        matched,
        total,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub method: String,
    pub entity_type: String,
    #[serde(flatten)]
    pub recall: Recall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub match_config: MatchConfig,
    pub methods: Vec<String>,
    pub entity_types: Vec<String>,
    pub truth_entries: usize,
    pub truth_clips: usize,
    pub results: Vec<RecallRow>,
}

impl EvalReport {
    pub fn get(&self, method: &str, entity_type: &str) -> Option<&Recall> {
        self.results
            .iter()
            .find(|r| r.method == method && r.entity_type == entity_type)
            .map(|r| &r.recall)
    }

    /// `method,entity_type,recall,matched,total`, with an empty recall cell
    /// when there is no truth.
    pub fn recall_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| EvalError::Csv(e.to_string());
        w.write_record(["method", "entity_type", "recall", "matched", "total"])
            .map_err(csv_err)?;
        for row in &self.results {
            let recall = row.recall.recall.map(|r| format!("{r}")).unwrap_or_default();
            w.write_record([
                row.method.as_str(),
                row.entity_type.as_str(),
                recall.as_str(),
                &row.recall.matched.to_string(),
                &row.recall.total.to_string(),
            ])
            .map_err(csv_err)?;
        }
        into_string(w)
    }
}

pub(crate) fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String, EvalError> {
    let bytes = w.into_inner().map_err(|e| EvalError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| EvalError::Csv(e.to_string()))
}

/// Recall for every method and entity type, in the given orders. Outputs
/// naming a method outside `methods` are rejected.
pub fn evaluate(
    outputs: &[MethodOutput],
    truth: &[GroundTruthEntry],
    methods: &[String],
    entity_types: &[String],
    config: &MatchConfig,
) -> Result<EvalReport, EvalError> {
    check_ground_truth(truth)?;
    if let Some(stray) = outputs.iter().find(|o| !methods.contains(&o.method)) {
        return Err(EvalError::UnknownMethod(stray.method.clone()));
    }
    let mut results = Vec::new();
    for method in methods {
        for entity_type in entity_types {
            results.push(RecallRow {
                method: method.clone(),
                entity_type: entity_type.clone(),
                recall: entity_recall(outputs, truth, method, entity_type, config),
            });
        }
    }
    let clips: BTreeSet<&str> = truth.iter().map(|t| t.clip_id.as_str()).collect();
    Ok(EvalReport {
        match_config: *config,
        methods: methods.to_vec(),
        entity_types: entity_types.to_vec(),
        truth_entries: truth.len(),
        truth_clips: clips.len(),
        results,
    })
}

/// The pipeline's own output as method outputs: one per attribute value of
/// every generic and extracted entity, carrying the entity's attributes.
pub fn ours_outputs(categorizations: &[RawCategorization], records: &[EntityRecord]) -> Vec<MethodOutput> {
    let mut out = Vec::new();
    let generic = categorizations
        .iter()
        .flat_map(|c| c.generic_entities.iter().map(move |e| (c.clip_id.as_str(), e)));
    let extracted = records
        .iter()
        .flat_map(|r| r.entities.iter().map(move |e| (r.clip_id.as_str(), e)));
    for (clip_id, entity) in generic.chain(extracted) {
        for attr in &entity.attributes {
            out.push(MethodOutput {
                method: OURS.into(),
                clip_id: clip_id.into(),
                entity_type: entity.entity_type.clone(),
                value: attr.value.clone(),
                attributes: Some(entity.attributes.clone()),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(clip: &str, t: &str, v: &str) -> GroundTruthEntry {
        GroundTruthEntry {
            clip_id: clip.into(),
            entity_type: t.into(),
            value: v.into(),
        }
    }

    fn out(method: &str, clip: &str, t: &str, v: &str) -> MethodOutput {
        MethodOutput {
            method: method.into(),
            clip_id: clip.into(),
            entity_type: t.into(),
            value: v.into(),
            attributes: None,
        }
    }

    #[test]
    fn matching_examples() {
        let cfg = MatchConfig::default();
        assert!(match_entity("Neil Armstrong", "neil armstrong", &cfg));
        assert_eq!(token_jaccard("train car", "train"), 0.5);
        assert!(match_entity("Train Car", "Train", &cfg));
        assert!(!match_entity("knife", "camera", &cfg));
        assert!(!match_entity("", "", &cfg));
        // one edit in ten characters
        assert!(match_entity("washingtom", "washington", &cfg));
        let strict = MatchConfig {
            jaccard: 0.75,
            levenshtein: 0.95,
        };
        assert!(!match_entity("Train Car", "Train", &strict));
    }

    #[test]
    fn recall_counts_each_truth_once() {
        let truth = vec![
            truth("c1", "Person", "Abraham Lincoln"),
            truth("c1", "Person", "Ulysses S. Grant"),
            truth("c2", "Person", "Robert E. Lee"),
            truth("c2", "Person", "Mary Todd Lincoln"),
            truth("c2", "Location", "Appomattox"),
        ];
        let outputs = vec![
            out("speech", "c1", "Person", "President Lincoln"),
            out("speech", "c1", "Person", "Abraham Lincoln"),
            out("speech", "c1", "Person", "Abraham Lincoln"),
            out("speech", "c1", "Person", "Ulysses Grant"),
            out("speech", "c2", "person", "Robert E. Lee"),
            // wrong clip
            out("speech", "c1", "Person", "Mary Todd Lincoln"),
        ];
        let cfg = MatchConfig::default();
        let r = entity_recall(&outputs, &truth, "speech", "Person", &cfg);
        assert_eq!((r.recall, r.matched, r.total), (Some(0.75), 3, 4));
        let r = entity_recall(&outputs, &truth, "ocr", "Person", &cfg);
        assert_eq!((r.recall, r.matched, r.total), (Some(0.0), 0, 4));
        let r = entity_recall(&outputs, &truth, "speech", "Object", &cfg);
        assert_eq!((r.recall, r.matched, r.total), (None, 0, 0));
    }

    #[test]
    fn duplicate_truth_and_unknown_method_are_rejected() {
        let cfg = MatchConfig::default();
        let dup = vec![truth("c", "Person", "Lincoln"), truth("c", "person", "LINCOLN ")];
        assert!(matches!(
            evaluate(&[], &dup, &[OURS.into()], &["Person".into()], &cfg),
            Err(EvalError::DuplicateTruth { .. })
        ));
        let t = vec![truth("c", "Person", "Lincoln")];
        assert_eq!(
            evaluate(&[out("clip", "c", "Person", "x")], &t, &[OURS.into()], &["Person".into()], &cfg),
            Err(EvalError::UnknownMethod("clip".into()))
        );
    }

    #[test]
    fn report_and_csv() {
        let cfg = MatchConfig::default();
        let t = vec![truth("c", "Person", "Lincoln"), truth("c", "Object", "Train")];
        let outputs = vec![out("yolo", "c", "Object", "train")];
        let methods = vec![OURS.to_string(), "yolo".to_string()];
        let types = vec!["Person".to_string(), "Object".to_string(), "Location".to_string()];
        let report = evaluate(&outputs, &t, &methods, &types, &cfg).unwrap();
        assert_eq!(report.results.len(), 6);
        assert_eq!(report.get("yolo", "Object").unwrap().recall, Some(1.0));
        assert_eq!(report.truth_clips, 1);
        let csv = report.recall_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "method,entity_type,recall,matched,total");
        assert_eq!(lines[1], "ours,Person,0,0,1");
        assert_eq!(lines[3], "ours,Location,,0,0");
        assert_eq!(lines[5], "yolo,Object,1,1,1");
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["results"][2]["recall"], serde_json::Value::Null);
    }
}
