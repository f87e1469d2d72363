mod common;

use std::fs;

use raven_cli::demo::{demo_baselines, demo_config, demo_corpus, demo_truth, write_corpus, DemoClip};
use raven_core::eval::{MatchConfig, MethodOutput};
use raven_core::gateway::Fixture;
use raven_core::model::{EntityRecord, RawCategorization};
use raven_core::store::RecordStore;

use common::{oracle_recall, raven, snapshot, stderr, stdout, Demo, METHODS};

fn demo() -> (tempfile::TempDir, Demo) {
    let dir = tempfile::tempdir().unwrap();
    let demo = Demo::new(dir.path());
    (dir, demo)
}

#[test]
fn full_pipeline_runs_green() {
    let (_dir, demo) = demo();
    demo.pipeline(&[]);
    let verify = demo.run(&["verify"]);
    assert!(verify.status.success(), "{}", stderr(&verify));
    let entities = fs::read_to_string(demo.store().join("streams/entities.jsonl")).unwrap();
    assert_eq!(entities.lines().count(), 12);
}

#[test]
fn duplicate_clip_id_is_a_data_error() {
    let (_dir, demo) = demo();
    let manifest = demo.path("manifest.jsonl");
    let mut text = fs::read_to_string(&manifest).unwrap();
    let first = text.lines().next().unwrap().to_string();
    text.push_str(&first);
    text.push('\n');
    fs::write(&manifest, text).unwrap();

    let out = demo.run(&["categorize", "--manifest", &manifest]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("lincoln-01"), "{}", stderr(&out));
}

#[test]
fn failure_budget_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut corpus = demo_corpus();
    for clip in corpus.clips.iter_mut().step_by(2) {
        clip.categorization = None;
    }
    let config = write_corpus(dir.path(), &corpus, &demo_config()).unwrap();
    let config = config.to_str().unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    let manifest = manifest.to_str().unwrap();

    // 6 of 12 fail: 50% is over 20%.
    let out = raven(&["--config", config, "--max-failure-rate", "0.2", "categorize", "--manifest", manifest]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("6 of 12 clips failed"), "{}", stderr(&out));
    let failures = fs::read_to_string(dir.path().join("store/streams/categorize.failures.jsonl")).unwrap();
    assert_eq!(failures.lines().count(), 6);

    // Exactly at the limit is still within budget.
    let out = raven(&[
        "--config", config, "--overwrite", "--max-failure-rate", "0.5", "categorize", "--manifest", manifest,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn extract_without_catalog_names_the_missing_step() {
    let (_dir, demo) = demo();
    let manifest = demo.path("manifest.jsonl");
    assert!(demo.run(&["categorize", "--manifest", &manifest]).status.success());
    let out = demo.run(&["extract"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("run canonicalize first"), "{}", stderr(&out));
}

#[test]
fn refuses_to_clobber_and_overwrite_is_idempotent() {
    let (_dir, demo) = demo();
    demo.pipeline(&[]);
    let before = snapshot(&demo.store());

    let out = demo.run(&["extract"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--overwrite"), "{}", stderr(&out));
    assert_eq!(snapshot(&demo.store()), before);

    let out = demo.run(&["extract", "--overwrite"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(snapshot(&demo.store()), before);
}

#[test]
fn recall_csv_matches_oracle() {
    let (_dir, demo) = demo();
    demo.pipeline(&[]);
    let store = RecordStore::open(demo.store()).unwrap();
    let categorizations: Vec<RawCategorization> = store.read_all("categorization").unwrap();
    let records: Vec<EntityRecord> = store.read_all("entities").unwrap();

    let mut outputs: Vec<MethodOutput> = demo_baselines().into_values().flatten().collect();
    let generic = categorizations.iter().flat_map(|c| c.generic_entities.iter().map(move |e| (&c.clip_id, e)));
    let extracted = records.iter().flat_map(|r| r.entities.iter().map(move |e| (&r.clip_id, e)));
    for (clip, entity) in generic.chain(extracted) {
        for attr in &entity.attributes {
            outputs.push(MethodOutput {
                method: "ours".into(),
                clip_id: clip.clone(),
                entity_type: entity.entity_type.clone(),
                value: attr.value.clone(),
                attributes: None,
            });
        }
    }

    let truth = demo_truth();
    let cfg = MatchConfig::default();
    let mut expected = vec!["method,entity_type,recall,matched,total".to_string()];
    for method in std::iter::once("ours").chain(METHODS) {
        for t in ["Person", "Location", "Object"] {
            let (matched, total) = oracle_recall(&outputs, &truth, method, t, &cfg);
            expected.push(format!("{method},{t},{},{matched},{total}", matched as f64 / total as f64));
        }
    }
    let csv = fs::read_to_string(demo.store().join("eval/recall.csv")).unwrap();
    assert_eq!(csv.lines().collect::<Vec<_>>(), expected);

    let out = demo.run(&["report"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(demo.store().join("report/recall.csv")).unwrap();
    assert_eq!(csv.lines().collect::<Vec<_>>(), expected);
}

#[test]
fn eval_rejects_unconfigured_method() {
    let (_dir, demo) = demo();
    demo.pipeline(&[]);
    let truth = demo.path("truth.jsonl");
    let speech = format!("whisper={}", demo.path("methods/speech.jsonl"));
    let out = demo.run(&["eval", "--overwrite", "--truth", &truth, "--method", &speech]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown method `whisper`"), "{}", stderr(&out));

    let out = demo.run(&["eval", "--overwrite", "--truth", &truth, "--method", "speech"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("NAME=PATH"), "{}", stderr(&out));
}

#[test]
fn no_generic_entities_flag_matches_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = demo_config();
    config.generic_entities = false;
    let config_path = write_corpus(dir.path(), &demo_corpus(), &config).unwrap();
    let demo = Demo {
        dir: dir.path().to_path_buf(),
        config: config_path.to_string_lossy().into_owned(),
    };
    let manifest = demo.path("manifest.jsonl");

    // The fixture was recorded without generic entities, so the flag has
    // to agree with it for every request to be answered.
    let out = demo.run(&["categorize", "--manifest", &manifest, "--generic-entities"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let out = demo.run(&["categorize", "--overwrite", "--manifest", &manifest, "--no-generic-entities"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let records: Vec<RawCategorization> = RecordStore::open(demo.store()).unwrap().read_all("categorization").unwrap();
    assert_eq!(records.len(), 12);
    assert!(records.iter().all(|r| r.generic_entities.is_empty()));
}

#[test]
fn extra_manifest_clips_use_retrieval() {
    let dir = tempfile::tempdir().unwrap();
    let demo = Demo::new(dir.path());

    let mut extended = demo_corpus();
    let mut extra: DemoClip = extended.clips.iter().find(|c| c.entry.clip_id == "kyoto").unwrap().clone();
    extra.entry.clip_id = "kyoto-night".into();
    extra.entry.media_uri = "file://clips/kyoto-night.mp4".into();
    extended.clips.push(extra.clone());
    let scratch = tempfile::tempdir().unwrap();
    write_corpus(scratch.path(), &extended, &demo_config()).unwrap();
    let mut fixture = Fixture::load(&dir.path().join("fixture.json")).unwrap();
    fixture.merge(Fixture::load(&scratch.path().join("fixture.json")).unwrap());
    fixture.save(&dir.path().join("fixture.json")).unwrap();
    let extra_manifest = dir.path().join("extra.jsonl");
    fs::write(&extra_manifest, serde_json::to_string(&extra.entry).unwrap() + "\n").unwrap();

    demo.pipeline(&[]);
    let out = demo.run(&["extract", "--overwrite", "--extra-manifest", extra_manifest.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("13 records"), "{}", stdout(&out));
    let records: Vec<EntityRecord> = RecordStore::open(demo.store()).unwrap().read_all("entities").unwrap();
    let added = records.iter().find(|r| r.clip_id == "kyoto-night").unwrap();
    let original = records.iter().find(|r| r.clip_id == "kyoto").unwrap();
    assert_eq!(added.canonical_category, original.canonical_category);
    assert_eq!(added.entities, original.entities);
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(raven(&["--help"]).status.code(), Some(0));
    assert_eq!(raven(&["frobnicate"]).status.code(), Some(1));
    let out = raven(&["--config", "/nonexistent/raven.json", "verify"]);
    assert_eq!(out.status.code(), Some(1));
}
