//! A small offline corpus and the stub fixture that answers every request
//! the pipeline makes over it. Used by the tests and by
//! `cargo run --example demo`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};

use raven_core::categorize::{build_categorization_prompt, tally_raw_categories, top_k};
use raven_core::eval::{GroundTruthEntry, MethodOutput};
use raven_core::extract::{build_extraction_prompt, choose_schema};
use raven_core::gateway::{Fixture, Gateway, RetryPolicy, StubProvider};
use raven_core::index::build_index;
use raven_core::model::{Attribute, ClipManifestEntry, RawCategorization};
use raven_core::schema_gen::{
    build_canonicalization_prompt, build_schema_prompt, repair_catalog, schema_from_json, CatalogDir,
    SchemaManifest, SchemaManifestEntry,
};

use crate::config::{PipelineConfig, ProviderKind, ProviderSettings};

/// One clip and the canned model answers about it.
#[derive(Debug, Clone)]
pub struct DemoClip {
    pub entry: ClipManifestEntry,
    /// Categorization answer; `None` makes the request fail.
    pub categorization: Option<Value>,
    /// Extraction answers by attempt; the last one repeats.
    pub extraction: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct DemoCorpus {
    pub clips: Vec<DemoClip>,
    /// The text model's merge proposal.
    pub catalog_proposal: Value,
    /// Schema answer per canonical category.
    pub schemas: BTreeMap<String, Value>,
}

impl DemoCorpus {
    pub fn manifest(&self) -> Vec<ClipManifestEntry> {
        self.clips.iter().map(|c| c.entry.clone()).collect()
    }

    /// Replays the pipeline's prompt construction under `config` and keys
    /// every canned answer by the request it answers.
    pub fn fixture(&self, config: &PipelineConfig) -> Result<Fixture, String> {
        let templates = config.templates().map_err(|e| e.to_string())?;
        let mut fixture = Fixture::default();
        let embedder = Gateway::new(Arc::new(StubProvider::new(Fixture::default())), RetryPolicy::default());

        let mut records = Vec::new();
        for clip in &self.clips {
            let Some(answer) = &clip.categorization else { continue };
            let req = build_categorization_prompt(&clip.entry, &templates.categorize, config.generic_entities)
                .map_err(|e| e.to_string())?;
            fixture.insert(&req, answer.to_string());
            records.push(RawCategorization {
                clip_id: clip.entry.clip_id.clone(),
                raw_category: answer["raw_category"].as_str().unwrap_or("").trim().to_string(),
                generic_entities: Vec::new(),
                model_id: String::new(),
                created_at: chrono::DateTime::UNIX_EPOCH,
            });
        }

        let top = top_k(&tally_raw_categories(&records), config.k_top_categories);
        let req = build_canonicalization_prompt(&top, &templates.canonicalize).map_err(|e| e.to_string())?;
        fixture.insert(&req, self.catalog_proposal.to_string());
        let raw_names: Vec<String> = top.iter().map(|(n, _)| n.clone()).collect();
        let catalog = repair_catalog(&raw_names, &self.catalog_proposal, &embedder, "", 1).map_err(|e| e.to_string())?;

        let mut schemas = BTreeMap::new();
        let mut manifest = SchemaManifest {
            catalog_version: 1,
            ..Default::default()
        };
        for category in &catalog.canonical_categories {
            let answer = self
                .schemas
                .get(category)
                .ok_or_else(|| format!("no schema answer for `{category}`"))?;
            let req = build_schema_prompt(category, &templates.schema).map_err(|e| e.to_string())?;
            fixture.insert(&req, answer.to_string());
            schemas.insert(category.clone(), schema_from_json(category, 1, answer));
            manifest.schemas.push(SchemaManifestEntry {
                category: category.clone(),
                schema_version: 1,
                file: CatalogDir::schema_file_name(category, 1),
            });
        }
        let index = build_index(&catalog, &manifest, &embedder).map_err(|e| e.to_string())?;

        for (clip, record) in self
            .clips
            .iter()
            .filter(|c| c.categorization.is_some())
            .zip(&records)
        {
            let choice = choose_schema(
                &record.raw_category,
                Some(&catalog),
                &index,
                &embedder,
                config.min_similarity,
            )
            .map_err(|e| e.to_string())?;
            let schema = &schemas[&choice.retrieval.canonical_category];
            let req = build_extraction_prompt(
                &clip.entry,
                schema,
                &templates.extract,
                config.max_examples_inline,
                config.text_sidechannel,
            )
            .map_err(|e| e.to_string())?;
            match clip.extraction.as_slice() {
                [] => {}
                [one] => {
                    fixture.insert(&req, one.clone());
                }
                many => {
                    fixture.insert_sequence(&req, many.to_vec());
                }
            }
        }
        Ok(fixture)
    }
}

fn entity(entity_type: &str, attributes: &[(&str, &str)]) -> Value {
    let attrs: Vec<Value> = attributes
        .iter()
        .map(|(n, v)| json!({"name": n, "value": v}))
        .collect();
    json!({"entity_type": entity_type, "attributes": attrs})
}

fn categorization(raw_category: &str, generic: Vec<Value>) -> Option<Value> {
    Some(json!({"raw_category": raw_category, "generic_entities": generic}))
}

fn extraction(entities: Vec<Value>) -> Vec<String> {
    vec![json!({ "entities": entities }).to_string()]
}

type AttrSpec<'a> = (&'a str, &'a str, &'a [&'a str]);

fn schema(entities: &[(&str, &[AttrSpec])]) -> Value {
    let entities: Vec<Value> = entities
        .iter()
        .map(|(name, attrs)| {
            let attrs: Vec<Value> = attrs
                .iter()
                .map(|(n, d, ex)| json!({"name": n, "description": d, "examples": ex}))
                .collect();
            json!({"name": name, "attributes": attrs})
        })
        .collect();
    json!({ "entities": entities })
}

fn clip(id: &str, transcript: Option<&str>, caption: Option<&str>) -> ClipManifestEntry {
    let mut entry = ClipManifestEntry::new(id, format!("file://clips/{id}.mp4"), 12.0);
    entry.transcript_text = transcript.map(String::from);
    entry.caption_text = caption.map(String::from);
    entry
}

/// The Lincoln documentary clip used for the case study.
pub const LINCOLN_CLIP: &str = "lincoln-01";

/// Twelve clips over six topics. The merge proposal repeats one canonical
/// name and leaves one raw name unmapped; one extraction answer is
/// malformed on the first attempt; one answer carries an entity and an
/// attribute the schema does not know.
pub fn demo_corpus() -> DemoCorpus {
    let clips = vec![
        DemoClip {
            entry: clip(
                LINCOLN_CLIP,
                Some("On April 9, 1865, General Lee surrendered to General Grant at Appomattox. President Lincoln ..."),
                Some("PRESIDENT LINCOLN"),
            ),
            categorization: categorization(
                "History",
                vec![
                    entity(
                        "Person",
                        &[
                            ("Name", "Abraham Lincoln"),
                            ("Role", "President"),
                            ("Gender", "Male"),
                            ("Age", "Mid 50s"),
                            ("Appearance", "Wearing a Dark Suit"),
                            ("Mood", "Sad Reflective"),
                        ],
                    ),
                    entity(
                        "Object",
                        &[("Type", "Train Car"), ("Color", "Black & White"), ("Size", "Large")],
                    ),
                ],
            ),
            extraction: extraction(vec![
                entity(
                    "Historical Event",
                    &[
                        ("Description", "Surrender of the Army of Northern Virginia"),
                        ("Date", "April 9, 1865"),
                        ("Location", "Appomattox Courthouse, Virginia"),
                        ("Key Figures", "Robert E. Lee, Ulysses S. Grant"),
                    ],
                ),
                entity(
                    "Historical Site",
                    &[
                        ("Name", "Lincoln Memorial"),
                        ("Location", "Washington, D. C."),
                        ("Era", "Early 20th Century"),
                        ("Architectural Features", "Marble structure, neoclassical design"),
                    ],
                ),
            ]),
        },
        DemoClip {
            entry: clip("apollo-11", Some("The Eagle has landed."), None),
            categorization: categorization(
                "history",
                vec![entity("Person", &[("Name", "Neil Armstrong"), ("Role", "Astronaut")])],
            ),
            extraction: vec![
                r#"{"entities": [{"entity_type": "Figure", "attributes": "Neil Armstrong"}]}"#.to_string(),
                json!({"entities": [
                    entity("Figure", &[("Name", "Neil Armstrong"), ("Role", "Astronaut")]),
                    entity("Historical Event", &[("Description", "First crewed Moon landing"), ("Date", "July 20, 1969")]),
                ]})
                .to_string(),
            ],
        },
        DemoClip {
            entry: clip("ww2-doc", None, Some("Berlin, 1945")),
            categorization: categorization(
                "Historical Documentary",
                vec![entity("Location", &[("Name", "Berlin")])],
            ),
            extraction: extraction(vec![
                entity("Figure", &[("Name", "Adolf Hitler"), ("Role", "Dictator")]),
                entity("Historical Event", &[("Description", "Fall of Berlin"), ("Date", "May 1945")]),
                entity("Spaceship", &[("Name", "none")]),
            ]),
        },
        DemoClip {
            entry: clip("pasta", Some("Salt the water generously."), None),
            categorization: categorization(
                "Cooking",
                vec![
                    entity("Person", &[("Role", "Chef"), ("Mood", "Cheerful")]),
                    entity("Background", &[("Setting", "Kitchen")]),
                ],
            ),
            extraction: extraction(vec![
                entity("Dish", &[("Name", "Spaghetti Carbonara"), ("Cuisine", "Italian")]),
                entity("Ingredient", &[("Name", "Pecorino"), ("Quantity", "50 g"), ("Colour", "white")]),
            ]),
        },
        DemoClip {
            entry: clip("bread", None, None),
            categorization: categorization(
                "cooking & recipes",
                vec![entity("Object", &[("Type", "Oven"), ("Color", "Silver")])],
            ),
            extraction: extraction(vec![
                entity("Dish", &[("Name", "Sourdough Bread"), ("Cuisine", "French")]),
                entity("Utensil", &[("Type", "Dutch oven")]),
            ]),
        },
        DemoClip {
            entry: clip("shelf", Some("First, mark the wall studs."), None),
            categorization: categorization(
                "How-To",
                vec![entity("Object", &[("Type", "Drill"), ("Color", "Yellow")])],
            ),
            extraction: extraction(vec![
                entity("Tool", &[("Type", "Cordless drill"), ("Brand", "DeWalt")]),
                entity("Step", &[("Action", "Mark the wall studs"), ("Order", "1")]),
            ]),
        },
        DemoClip {
            entry: clip("bike", None, None),
            categorization: categorization(
                "DIY / How to",
                vec![entity("Object", &[("Type", "Bicycle"), ("Color", "Red")])],
            ),
            extraction: extraction(vec![
                entity("Tool", &[("Type", "Tyre lever")]),
                entity("Material", &[("Name", "Inner tube")]),
            ]),
        },
        DemoClip {
            entry: clip("kyoto", None, Some("Fushimi Inari")),
            categorization: categorization(
                "Travel",
                vec![entity("Location", &[("Name", "Kyoto"), ("Type", "City")])],
            ),
            extraction: extraction(vec![
                entity("Destination", &[("Name", "Kyoto"), ("Country", "Japan")]),
                entity("Landmark", &[("Name", "Fushimi Inari Shrine")]),
            ]),
        },
        DemoClip {
            entry: clip("alps", None, None),
            categorization: categorization(
                "Travel & Events",
                vec![entity("Location", &[("Name", "Zermatt")])],
            ),
            extraction: extraction(vec![
                entity("Destination", &[("Name", "Zermatt"), ("Country", "Switzerland")]),
                entity("Activity", &[("Type", "Hiking")]),
            ]),
        },
        DemoClip {
            entry: clip("marathon", Some("Kipchoge crosses the line."), None),
            categorization: categorization(
                "Sports",
                vec![entity("Person", &[("Name", "Eliud Kipchoge"), ("Role", "Runner")])],
            ),
            extraction: extraction(vec![
                entity("Athlete", &[("Name", "Eliud Kipchoge"), ("Sport", "Marathon")]),
                entity("Event", &[("Name", "Berlin Marathon"), ("Result", "2:01:09")]),
            ]),
        },
        DemoClip {
            entry: clip("tennis", None, None),
            categorization: categorization(
                "sports",
                vec![entity("Object", &[("Type", "Tennis racket")])],
            ),
            extraction: extraction(vec![entity(
                "Athlete",
                &[("Name", "Serena Williams"), ("Sport", "Tennis")],
            )]),
        },
        DemoClip {
            entry: clip("jazz", None, None),
            categorization: categorization(
                "Music performance",
                vec![entity("Person", &[("Role", "Saxophonist")])],
            ),
            extraction: extraction(vec![]),
        },
    ];

    let catalog_proposal = json!({
        "canonical_categories": ["History", "Cooking", "cooking", "How-To", "Travel", "Sports", "Music"],
        "mapping": {
            "History": "History",
            "Historical Documentary": "History",
            "Cooking": "Cooking",
            "cooking & recipes": "Cooking",
            "How-To": "How-To",
            "Travel": "Travel",
            "Travel & Events": "Travel",
            "Sports": "Sports",
            "Music performance": "Music"
        }
    });

    let mut schemas = BTreeMap::new();
    schemas.insert(
        "History".to_string(),
        schema(&[
            (
                "Figure",
                &[
                    ("Name", "Full name of the person", &["neil armstrong", "abraham lincoln", "adolf hitler", "joan of arc"]),
                    ("Role", "Office, rank or occupation", &["president", "general"]),
                ],
            ),
            (
                "Historical Event",
                &[
                    ("Description", "What happened", &["moon landing", "signing of the constitution"]),
                    ("Date", "When it happened", &["July 20, 1969"]),
                    ("Location", "Where it happened", &["Philadelphia"]),
                    ("Key Figures", "People who took part", &["George Washington"]),
                ],
            ),
            (
                "Historical Site",
                &[
                    ("Name", "Name of the site", &["Mount Rushmore"]),
                    ("Location", "City or region", &["South Dakota"]),
                    ("Era", "Period it dates from", &["19th century"]),
                    ("Architectural Features", "Notable design elements", &["granite carving"]),
                ],
            ),
        ]),
    );
    schemas.insert(
        "Cooking".to_string(),
        schema(&[
            (
                "Dish",
                &[
                    ("Name", "Name of the dish", &["pad thai", "lasagna"]),
                    ("Cuisine", "Culinary tradition", &["Thai", "Italian"]),
                ],
            ),
            (
                "Ingredient",
                &[
                    ("Name", "Ingredient name", &["garlic", "olive oil"]),
                    ("Quantity", "Amount used", &["2 cloves"]),
                ],
            ),
            ("Utensil", &[("Type", "Kind of utensil", &["whisk", "cast iron pan"])]),
        ]),
    );
    schemas.insert(
        "How-To".to_string(),
        schema(&[
            (
                "Tool",
                &[
                    ("Type", "Kind of tool", &["screwdriver", "hammer"]),
                    ("Brand", "Manufacturer", &["Bosch"]),
                ],
            ),
            (
                "Step",
                &[
                    ("Action", "What is done", &["sand the surface"]),
                    ("Order", "Position in the sequence", &["3"]),
                ],
            ),
            ("Material", &[("Name", "Material used", &["plywood", "wood glue"])]),
        ]),
    );
    schemas.insert(
        "Travel".to_string(),
        schema(&[
            (
                "Destination",
                &[
                    ("Name", "Place visited", &["Lisbon"]),
                    ("Country", "Country of the place", &["Portugal"]),
                ],
            ),
            ("Landmark", &[("Name", "Named sight", &["Eiffel Tower"])]),
            ("Activity", &[("Type", "What travellers do", &["snorkeling"])]),
        ]),
    );
    schemas.insert(
        "Sports".to_string(),
        schema(&[
            (
                "Athlete",
                &[
                    ("Name", "Athlete's name", &["Usain Bolt"]),
                    ("Sport", "Discipline", &["sprint"]),
                ],
            ),
            (
                "Event",
                &[
                    ("Name", "Competition", &["Wimbledon"]),
                    ("Result", "Score or time", &["9.58 s"]),
                ],
            ),
        ]),
    );
    schemas.insert(
        "Music".to_string(),
        schema(&[
            (
                "Performer",
                &[
                    ("Name", "Performer or band", &["Miles Davis"]),
                    ("Instrument", "Instrument played", &["trumpet"]),
                ],
            ),
            ("Song", &[("Title", "Song title", &["So What"])]),
        ]),
    );

    DemoCorpus {
        clips,
        catalog_proposal,
        schemas,
    }
}

fn baseline(method: &str, clip_id: &str, entity_type: &str, value: &str, attributes: &[(&str, &str)]) -> MethodOutput {
    MethodOutput {
        method: method.into(),
        clip_id: clip_id.into(),
        entity_type: entity_type.into(),
        value: value.into(),
        attributes: (!attributes.is_empty())
            .then(|| attributes.iter().map(|(n, v)| Attribute::new(*n, *v)).collect()),
    }
}

/// Baseline outputs for the demo clips, by method.
pub fn demo_baselines() -> BTreeMap<String, Vec<MethodOutput>> {
    let l = LINCOLN_CLIP;
    let all = vec![
        baseline("speech", l, "Person", "Abraham Lincoln", &[]),
        baseline("speech", l, "Person", "President Lincoln", &[]),
        baseline("speech", l, "Object", "Train", &[]),
        baseline("speech", l, "Historical Event", "Battle of Appomattox courthouse", &[]),
        baseline("speech", l, "Historical Site", "Lincoln Memorial", &[]),
        baseline("speech", l, "Location", "Appomattox", &[]),
        baseline("speech", "apollo-11", "Person", "Neil Armstrong", &[]),
        baseline("ocr", l, "Person", "PRESIDENT LINCOLN", &[]),
        baseline("ocr", "ww2-doc", "Location", "Berlin", &[]),
        baseline("caption", l, "Person", "Abraham Lincoln", &[("Gender", "Man")]),
        baseline("caption", l, "Object", "Train Car", &[]),
        baseline("caption", "kyoto", "Location", "Fushimi Inari", &[]),
        baseline("yolo", l, "Person", "Person", &[]),
        baseline("yolo", l, "Object", "Train", &[]),
        baseline("yolo", "bike", "Object", "Bicycle", &[]),
        baseline("yolo", "tennis", "Object", "Tennis racket", &[]),
    ];
    let mut by_method: BTreeMap<String, Vec<MethodOutput>> = BTreeMap::new();
    for out in all {
        by_method.entry(out.method.clone()).or_default().push(out);
    }
    by_method
}

pub fn demo_truth() -> Vec<GroundTruthEntry> {
    let t = |clip: &str, entity_type: &str, value: &str| GroundTruthEntry {
        clip_id: clip.into(),
        entity_type: entity_type.into(),
        value: value.into(),
    };
    vec![
        t(LINCOLN_CLIP, "Person", "Abraham Lincoln"),
        t(LINCOLN_CLIP, "Object", "Train"),
        t(LINCOLN_CLIP, "Location", "Appomattox Courthouse"),
        t("apollo-11", "Person", "Neil Armstrong"),
        t("ww2-doc", "Location", "Berlin"),
        t("pasta", "Person", "Chef"),
        t("bread", "Object", "Oven"),
        t("shelf", "Object", "Drill"),
        t("bike", "Object", "Bicycle"),
        t("kyoto", "Location", "Kyoto"),
        t("alps", "Location", "Zermatt"),
        t("marathon", "Person", "Eliud Kipchoge"),
        t("tennis", "Object", "Tennis racket"),
        t("jazz", "Person", "Saxophonist"),
    ]
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> std::io::Result<()> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row).map_err(std::io::Error::other)?);
        text.push('\n');
    }
    fs::write(path, text)
}

/// The demo corpus repeated until it holds `n` clips. Copies get an
/// index suffix on their ids so every request is distinct.
pub fn scaled_demo_corpus(n: usize) -> DemoCorpus {
    let mut corpus = demo_corpus();
    let base = std::mem::take(&mut corpus.clips);
    corpus.clips = (0..n)
        .map(|i| {
            let mut clip = base[i % base.len()].clone();
            let id = format!("{}-{i:05}", clip.entry.clip_id);
            clip.entry.media_uri = format!("file://clips/{id}.mp4");
            clip.entry.clip_id = id;
            clip
        })
        .collect();
    corpus
}

/// Stub config reading `fixture.json` and writing to `store`.
pub fn demo_config() -> PipelineConfig {
    PipelineConfig {
        provider: ProviderSettings {
            kind: ProviderKind::Stub,
            fixture_path: Some("fixture.json".into()),
            ..Default::default()
        },
        store_root: "store".into(),
        ..Default::default()
    }
}

/// Writes `raven.json`, `fixture.json` and `manifest.jsonl` for `corpus`
/// into `dir`. Returns the config path.
pub fn write_corpus(dir: &Path, corpus: &DemoCorpus, config: &PipelineConfig) -> Result<std::path::PathBuf, String> {
    let io = |e: std::io::Error| e.to_string();
    fs::create_dir_all(dir).map_err(io)?;
    let fixture = corpus.fixture(config)?;
    fixture.save(&dir.join("fixture.json")).map_err(io)?;
    let config_path = dir.join("raven.json");
    let text = serde_json::to_string_pretty(config).map_err(|e| e.to_string())?;
    fs::write(&config_path, text + "\n").map_err(io)?;
    write_jsonl(&dir.join("manifest.jsonl"), &corpus.manifest()).map_err(io)?;
    Ok(config_path)
}

/// Writes a ready-to-run demo into `dir`: `raven.json`, `fixture.json`,
/// `manifest.jsonl`, `truth.jsonl` and `methods/<name>.jsonl`. Returns the
/// config path.
pub fn write_demo(dir: &Path) -> Result<std::path::PathBuf, String> {
    let io = |e: std::io::Error| e.to_string();
    let config_path = write_corpus(dir, &demo_corpus(), &demo_config())?;
    fs::create_dir_all(dir.join("methods")).map_err(io)?;
    write_jsonl(&dir.join("truth.jsonl"), &demo_truth()).map_err(io)?;
    for (method, rows) in demo_baselines() {
        write_jsonl(&dir.join("methods").join(format!("{method}.jsonl")), &rows).map_err(io)?;
    }
    Ok(config_path)
}
