use std::collections::BTreeMap;

use crate::model::{normalize_category_name, normalize_entity_value, EntityRecord, GenericEntity};

use super::{into_string, EvalError};

/// Count descending, then key ascending.
fn sorted(counts: BTreeMap<String, u64>) -> Vec<(String, u64)> {
    let mut rows: Vec<(String, u64)> = counts.into_iter().collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    rows
}

/// Records per canonical category.
pub fn category_distribution(records: &[EntityRecord]) -> Vec<(String, u64)> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.canonical_category.clone()).or_insert(0) += 1;
    }
    sorted(counts)
}

/// Entities per entity type.
pub fn entity_type_distribution<'a>(entities: impl IntoIterator<Item = &'a GenericEntity>) -> Vec<(String, u64)> {
    let mut counts = BTreeMap::new();
    for e in entities {
        *counts.entry(e.entity_type.clone()).or_insert(0) += 1;
    }
    sorted(counts)
}

/// Attribute-name occurrences within entities of `entity_type` (compared
/// after normalization).
pub fn attribute_distribution<'a>(
    entities: impl IntoIterator<Item = &'a GenericEntity>,
    entity_type: &str,
) -> Vec<(String, u64)> {
    let key = normalize_category_name(entity_type);
    let mut counts = BTreeMap::new();
    for e in entities {
        if normalize_category_name(&e.entity_type) != key {
            continue;
        }
        for a in &e.attributes {
            *counts.entry(a.name.clone()).or_insert(0) += 1;
        }
    }
    sorted(counts)
}

/// The `n` most frequent normalized values of one attribute.
pub fn top_values(
    records: &[EntityRecord],
    category: &str,
    entity_type: &str,
    attribute: &str,
    n: usize,
) -> Vec<(String, u64)> {
    let mut counts = BTreeMap::new();
    for r in records.iter().filter(|r| r.canonical_category == category) {
        for e in r.entities.iter().filter(|e| e.entity_type == entity_type) {
            for a in e.attributes.iter().filter(|a| a.name == attribute) {
                let v = normalize_entity_value(&a.value);
                if !v.is_empty() {
                    *counts.entry(v).or_insert(0) += 1;
                }
            }
        }
    }
    let mut rows = sorted(counts);
    rows.truncate(n);
    rows
}

/// Two-column CSV with a header row.
pub fn histogram_csv(header: [&str; 2], rows: &[(String, u64)]) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| EvalError::Csv(e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for (key, count) in rows {
        w.write_record([key.as_str(), &count.to_string()]).map_err(csv_err)?;
    }
    into_string(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Attribute;
    use chrono::DateTime;
    use proptest::prelude::*;

    fn record(category: &str, entities: Vec<GenericEntity>) -> EntityRecord {
        EntityRecord {
            clip_id: "c".into(),
            raw_category: category.into(),
            canonical_category: category.into(),
            retrieval_similarity: 1.0,
            schema_version: 1,
            entities,
            model_id: "m".into(),
            created_at: DateTime::UNIX_EPOCH,
        }
    }

    fn figure(name: &str) -> GenericEntity {
        GenericEntity::new("Figure", vec![Attribute::new("Name", name)])
    }

    #[test]
    fn categories() {
        let records = vec![record("History", vec![]), record("Travel", vec![]), record("History", vec![])];
        assert_eq!(
            category_distribution(&records),
            vec![("History".to_string(), 2), ("Travel".to_string(), 1)]
        );
        assert!(category_distribution(&[]).is_empty());
    }

    #[test]
    fn attributes_of_person() {
        let people = vec![
            GenericEntity::new(
                "Person",
                vec![Attribute::new("Role", "President"), Attribute::new("Mood", "sad")],
            ),
            GenericEntity::new("Person", vec![Attribute::new("Role", "General")]),
            GenericEntity::new("Object", vec![Attribute::new("Type", "train")]),
        ];
        assert_eq!(
            attribute_distribution(&people, "Person"),
            vec![("Role".to_string(), 2), ("Mood".to_string(), 1)]
        );
        assert!(attribute_distribution(&people, "Location").is_empty());
        assert_eq!(
            entity_type_distribution(&people),
            vec![("Person".to_string(), 2), ("Object".to_string(), 1)]
        );
    }

    #[test]
    fn top_values_rank_and_tie_break() {
        let records = vec![
            record("History", vec![figure("Neil Armstrong"), figure("Abraham Lincoln")]),
            record("History", vec![figure("neil armstrong"), figure("Adolf Hitler")]),
            record("Travel", vec![figure("Abraham Lincoln"), figure("Abraham Lincoln")]),
        ];
        assert_eq!(
            top_values(&records, "History", "Figure", "Name", 3),
            vec![
                ("neil armstrong".to_string(), 2),
                ("abraham lincoln".to_string(), 1),
                ("adolf hitler".to_string(), 1)
            ]
        );
        assert!(top_values(&records, "History", "Figure", "Name", 0).is_empty());
    }

    #[test]
    fn csv_quotes_commas() {
        let csv = histogram_csv(["value", "count"], &[("a, b".to_string(), 2)]).unwrap();
        assert_eq!(csv, "value,count\n\"a, b\",2\n");
    }

    proptest! {
        #[test]
        fn sums_and_permutation_invariance(
            cats in prop::collection::vec(prop::sample::select(vec!["History", "Travel", "How-To", "Sports"]), 0..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let records: Vec<EntityRecord> = cats
                .iter()
                .enumerate()
                .map(|(i, c)| record(c, (0..i % 3).map(|j| figure(&format!("n{j}"))).collect()))
                .collect();
            let hist = category_distribution(&records);
            prop_assert_eq!(hist.iter().map(|(_, n)| n).sum::<u64>(), records.len() as u64);
            let entities: Vec<&GenericEntity> = records.iter().flat_map(|r| &r.entities).collect();
            let attrs = attribute_distribution(entities.iter().copied(), "Figure");
            prop_assert_eq!(attrs.iter().map(|(_, n)| n).sum::<u64>(), entities.len() as u64);

            let mut shuffled = records.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(category_distribution(&shuffled), hist);
            let shuffled_entities: Vec<&GenericEntity> = shuffled.iter().flat_map(|r| &r.entities).collect();
            prop_assert_eq!(attribute_distribution(shuffled_entities.iter().copied(), "Figure"), attrs);
            prop_assert_eq!(
                top_values(&shuffled, "History", "Figure", "Name", 5),
                top_values(&records, "History", "Figure", "Name", 5)
            );
        }
    }
}
