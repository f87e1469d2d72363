use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use raven_core::categorize::{tally_raw_categories, top_k, Categorizer};
use raven_core::eval::{
    self, attribute_distribution, case_study, category_distribution, entity_type_distribution, evaluate,
    histogram_csv, ours_outputs, top_values, EvalReport, GroundTruthEntry, MethodOutput, RECALL_ENTITY_TYPES,
};
use raven_core::extract::{choose_schema, Extraction, Extractor};
use raven_core::index::build_index;
use raven_core::model::{
    category_slug, check_manifest, ClipManifestEntry, EntityRecord, EntitySchema, GenericEntity, RawCategorization,
};
use raven_core::parallel::run_ordered;
use raven_core::schema_gen::{canonicalize, generate_schema, CatalogDir, SchemaStageError};
use raven_core::store::{
    self, read_jsonl_file, DropRecord, FailureRecord, IndexKey, RecordStore, StoreError, StreamWriter, WriteMode,
    CATEGORIZATION, CATEGORIZE_FAILURES, DROPS, ENTITIES, EXTRACT_FAILURES, GENSCHEMA_FAILURES, MANIFEST,
};

use crate::config::PipelineConfig;
use crate::error::{check_budget, CliError};
use crate::{Cli, Command};

/// Everything a command needs, resolved from flags and config.
pub struct Context {
    pub config: PipelineConfig,
    pub store: RecordStore,
    pub catalog: CatalogDir,
    pub overwrite: bool,
}

impl Context {
    pub fn new(cli: &Cli) -> Result<Self, CliError> {
        let g = &cli.global;
        let mut config = match &g.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(store) = &g.store {
            config.store_root = store.clone();
        }
        if let Some(rate) = g.max_failure_rate {
            config.max_failure_rate = rate;
        }
        if let Some(n) = g.max_in_flight {
            config.max_in_flight = n;
        }
        match &cli.command {
            Command::Categorize {
                generic_entities,
                no_generic_entities,
                ..
            } => {
                if *generic_entities {
                    config.generic_entities = true;
                }
                if *no_generic_entities {
                    config.generic_entities = false;
                }
            }
            Command::Canonicalize { k: Some(k) } => config.k_top_categories = *k,
            Command::Extract {
                min_similarity,
                no_text_sidechannel,
                ..
            } => {
                if let Some(m) = min_similarity {
                    config.min_similarity = *m;
                }
                if *no_text_sidechannel {
                    config.text_sidechannel = false;
                }
            }
            Command::Eval {
                match_jaccard,
                match_levenshtein,
                ..
            } => {
                if let Some(j) = match_jaccard {
                    config.match_config.jaccard = *j;
                }
                if let Some(l) = match_levenshtein {
                    config.match_config.levenshtein = *l;
                }
            }
            _ => {}
        }
        config.validate()?;
        let store = RecordStore::open(&config.store_root)?;
        let catalog = CatalogDir::new(config.store_root.join("catalog"));
        Ok(Self {
            config,
            store,
            catalog,
            overwrite: g.overwrite,
        })
    }

    fn refuse_clobber(&self, what: &str, exists: bool) -> Result<(), CliError> {
        if exists && !self.overwrite {
            return Err(CliError::Usage(format!(
                "{what} already exists; pass --overwrite to replace it"
            )));
        }
        Ok(())
    }

    fn writer(&self, name: &str) -> Result<StreamWriter, CliError> {
        let mut w = self.store.writer(name, WriteMode::Truncate)?;
        w.set_sync(self.config.fsync);
        Ok(w)
    }

    fn require_stream<T: serde::de::DeserializeOwned>(&self, name: &str, hint: &str) -> Result<Vec<T>, CliError> {
        if !self.store.exists(name) {
            return Err(CliError::Data(format!("no {name} stream in the store; {hint}")));
        }
        Ok(self.store.read_all(name)?)
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::Categorize { manifest, .. } => categorize(&ctx, manifest),
        Command::Canonicalize { .. } => canonicalize_cmd(&ctx),
        Command::Genschema => genschema(&ctx),
        Command::Extract { extra_manifest, .. } => extract(&ctx, extra_manifest.as_deref()),
        Command::Eval { truth, methods, .. } => eval_cmd(&ctx, truth, methods),
        Command::Report {
            case_studies,
            methods,
            top_n,
        } => report(&ctx, case_studies, methods, *top_n),
        Command::Verify => verify(&ctx),
    }
}

fn read_manifest(path: &Path) -> Result<Vec<ClipManifestEntry>, CliError> {
    let clips: Vec<ClipManifestEntry> = read_jsonl_file(path)?;
    check_manifest(&clips).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(clips)
}

pub fn categorize(ctx: &Context, manifest: &Path) -> Result<(), CliError> {
    let clips = read_manifest(manifest)?;
    if clips.is_empty() {
        return Err(CliError::Data(format!("{}: manifest is empty", manifest.display())));
    }
    ctx.refuse_clobber("categorization stream", ctx.store.exists(CATEGORIZATION))?;
    let config = &ctx.config;
    let gateway = config.gateway()?;
    let templates = config.templates()?;
    let clock = config.clock();

    let mut manifest_w = ctx.writer(MANIFEST)?;
    for clip in &clips {
        manifest_w.append(clip)?;
    }
    drop(manifest_w);

    let categorizer = Categorizer {
        gateway: &gateway,
        template: &templates.categorize,
        generic_entities: config.generic_entities,
        clock: clock.as_ref(),
    };
    let mut records_w = ctx.writer(CATEGORIZATION)?;
    let mut failures_w = ctx.writer(CATEGORIZE_FAILURES)?;
    let mut records: Vec<RawCategorization> = Vec::with_capacity(clips.len());
    let mut failed = 0;
    run_ordered(
        &clips,
        config.max_in_flight,
        |clip| categorizer.categorize_clip(clip),
        |i, result| {
            match result {
                Ok(record) => {
                    records_w.append(&record)?;
                    records.push(record);
                }
                Err(e) => {
                    failed += 1;
                    tracing::warn!(clip_id = %clips[i].clip_id, error = %e, "categorization failed");
                    failures_w.append(&FailureRecord::for_clip(
                        "categorize",
                        &clips[i].clip_id,
                        e.kind(),
                        e.to_string(),
                    ))?;
                }
            }
            Ok::<(), StoreError>(())
        },
    )?;
    let tally = tally_raw_categories(&records);
    println!(
        "categorize: {} clips, {} categorized, {} failed, {} distinct raw categories",
        clips.len(),
        records.len(),
        failed,
        tally.len()
    );
    check_budget(failed, clips.len(), config.max_failure_rate, "clips")
}

fn stage_error(e: SchemaStageError) -> CliError {
    match e {
        SchemaStageError::Gateway(g) => CliError::Provider(g.to_string()),
        SchemaStageError::Template(t) => CliError::Config(t.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

pub fn canonicalize_cmd(ctx: &Context) -> Result<(), CliError> {
    let records: Vec<RawCategorization> = ctx.require_stream(CATEGORIZATION, "run categorize first")?;
    let tally = tally_raw_categories(&records);
    let k = ctx.config.k_top_categories;
    let top = top_k(&tally, k);
    let gateway = ctx.config.gateway()?;
    let templates = ctx.config.templates()?;
    let mut catalog = canonicalize(&gateway, &top, &templates.canonicalize, 0).map_err(stage_error)?;
    catalog.version = ctx.catalog.resolve_catalog_version(&catalog)?;
    let path = ctx.catalog.persist_catalog(&catalog)?;
    println!(
        "canonicalize: {} of {} raw categories merged into {} canonical categories; catalog v{} at {}",
        top.len(),
        tally.len(),
        catalog.canonical_categories.len(),
        catalog.version,
        path.display()
    );
    Ok(())
}

pub fn genschema(ctx: &Context) -> Result<(), CliError> {
    let catalog = ctx
        .catalog
        .latest_catalog()?
        .ok_or_else(|| CliError::Data("no catalog found; run canonicalize first".into()))?;
    ctx.refuse_clobber("schema manifest", ctx.catalog.manifest_path().exists())?;
    let config = &ctx.config;
    let gateway = config.gateway()?;
    let templates = config.templates()?;

    let categories = &catalog.canonical_categories;
    let mut failures_w = ctx.writer(GENSCHEMA_FAILURES)?;
    let mut schemas: Vec<EntitySchema> = Vec::new();
    let mut failed: Vec<String> = Vec::new();
    run_ordered(
        categories,
        config.max_in_flight,
        |category| generate_schema(&gateway, category, &templates.schema, 0),
        |i, result| {
            match result {
                Ok(schema) => schemas.push(schema),
                Err(e) => {
                    tracing::warn!(category = %categories[i], error = %e, "schema generation failed");
                    failures_w.append(&FailureRecord::for_category(
                        "genschema",
                        &categories[i],
                        e.kind(),
                        e.to_string(),
                    ))?;
                    failed.push(categories[i].clone());
                }
            }
            Ok::<(), StoreError>(())
        },
    )?;
    drop(failures_w);
    for schema in &mut schemas {
        schema.schema_version = ctx.catalog.resolve_schema_version(schema)?;
    }
    ctx.catalog.persist_schemas(&schemas, catalog.version, &failed)?;
    check_budget(failed.len(), categories.len(), config.max_failure_rate, "categories")?;

    let manifest = ctx
        .catalog
        .load_manifest()?
        .ok_or_else(|| CliError::Data("schema manifest missing after write".into()))?;
    let index = build_index(&catalog, &manifest, &gateway).map_err(|e| CliError::Data(format!("schema index: {e}")))?;
    let path = ctx.catalog.persist_index(&index)?;
    println!(
        "genschema: {} categories, {} schemas, {} failed; index of {} entries at {}",
        categories.len(),
        schemas.len(),
        failed.len(),
        index.len(),
        path.display()
    );
    Ok(())
}

struct ExtractJob<'a> {
    clip: &'a ClipManifestEntry,
    /// Set for clips categorized in the first stage.
    raw_category: Option<&'a str>,
    extra: bool,
}

pub fn extract(ctx: &Context, extra_manifest: Option<&Path>) -> Result<(), CliError> {
    let catalog = ctx
        .catalog
        .latest_catalog()?
        .ok_or_else(|| CliError::Data("no catalog found; run canonicalize first".into()))?;
    let no_schemas = || CliError::Data(format!("no schemas for catalog v{}; run genschema first", catalog.version));
    let manifest = ctx
        .catalog
        .load_manifest()?
        .filter(|m| m.catalog_version == catalog.version)
        .ok_or_else(no_schemas)?;
    let index = ctx.catalog.load_index(catalog.version)?.ok_or_else(no_schemas)?;
    let schemas = ctx.catalog.load_current_schemas(&manifest)?;

    let clips: Vec<ClipManifestEntry> = ctx.require_stream(MANIFEST, "run categorize first")?;
    let categorizations: Vec<RawCategorization> = ctx.require_stream(CATEGORIZATION, "run categorize first")?;
    let extra = match extra_manifest {
        Some(path) => read_manifest(path)?,
        None => Vec::new(),
    };
    let combined: Vec<ClipManifestEntry> = clips.iter().chain(&extra).cloned().collect();
    check_manifest(&combined).map_err(|e| CliError::Data(format!("stored plus extra manifest: {e}")))?;
    ctx.refuse_clobber("entities stream", ctx.store.exists(ENTITIES))?;

    let raw_by_clip: HashMap<&str, &str> = categorizations
        .iter()
        .map(|c| (c.clip_id.as_str(), c.raw_category.as_str()))
        .collect();
    let jobs: Vec<ExtractJob> = clips
        .iter()
        .map(|clip| ExtractJob {
            clip,
            raw_category: raw_by_clip.get(clip.clip_id.as_str()).copied(),
            extra: false,
        })
        .chain(extra.iter().map(|clip| ExtractJob {
            clip,
            raw_category: None,
            extra: true,
        }))
        .collect();

    let config = &ctx.config;
    let gateway = config.gateway()?;
    let templates = config.templates()?;
    let clock = config.clock();
    let categorizer = Categorizer {
        gateway: &gateway,
        template: &templates.categorize,
        generic_entities: config.generic_entities,
        clock: clock.as_ref(),
    };
    let extractor = Extractor {
        gateway: &gateway,
        template: &templates.extract,
        max_examples_inline: config.max_examples_inline,
        text_sidechannel: config.text_sidechannel,
        clock: clock.as_ref(),
    };

    let work = |job: &ExtractJob| -> Result<Extraction, (String, String)> {
        let fail = |kind: &str, message: String| (kind.to_string(), message);
        let raw_category = if job.extra {
            categorizer
                .categorize_clip(job.clip)
                .map_err(|e| fail(e.kind(), e.to_string()))?
                .raw_category
        } else {
            job.raw_category
                .ok_or_else(|| fail("not_categorized", "clip has no categorization record".into()))?
                .to_string()
        };
        // extra clips have no catalog mapping and go by retrieval alone
        let mapping = (!job.extra).then_some(&catalog);
        let choice = choose_schema(&raw_category, mapping, &index, &gateway, config.min_similarity)
            .map_err(|e| fail("retrieval_error", e.to_string()))?;
        let schema = schemas.get(&choice.retrieval.canonical_category).ok_or_else(|| {
            fail(
                "missing_schema",
                format!("no schema loaded for `{}`", choice.retrieval.canonical_category),
            )
        })?;
        if choice.retrieval.low_confidence {
            tracing::warn!(
                clip_id = %job.clip.clip_id,
                raw_category = %raw_category,
                similarity = choice.retrieval.similarity,
                "low-confidence schema match"
            );
        }
        extractor
            .extract_entities(job.clip, schema, &choice)
            .map_err(|e| fail(e.kind(), e.to_string()))
    };

    let mut entities_w = ctx.writer(ENTITIES)?;
    let mut drops_w = ctx.writer(DROPS)?;
    let mut failures_w = ctx.writer(EXTRACT_FAILURES)?;
    let (mut written, mut failed, mut dropped, mut low_confidence, mut retried) = (0, 0, 0, 0, 0);
    run_ordered(&jobs, config.max_in_flight, work, |i, result| {
        let clip_id = &jobs[i].clip.clip_id;
        match result {
            Ok(extraction) => {
                entities_w.append(&extraction.record)?;
                for d in &extraction.dropped {
                    drops_w.append(&DropRecord {
                        clip_id: clip_id.clone(),
                        member: d.member.clone(),
                        reason: d.reason.clone(),
                    })?;
                }
                written += 1;
                dropped += extraction.dropped.len();
                if extraction.record.retrieval_similarity < config.min_similarity {
                    low_confidence += 1;
                }
                if extraction.attempt_count > 1 {
                    retried += 1;
                }
            }
            Err((kind, message)) => {
                failed += 1;
                tracing::warn!(%clip_id, %kind, %message, "extraction failed");
                failures_w.append(&FailureRecord::for_clip("extract", clip_id, &kind, message))?;
            }
        }
        Ok::<(), StoreError>(())
    })?;
    drop((entities_w, drops_w, failures_w));
    for key in IndexKey::ALL {
        ctx.store.build_inverted_index(key)?;
    }
    println!(
        "extract: {} clips, {} records, {} failed, {} members dropped, {} retried, {} low-confidence matches",
        jobs.len(),
        written,
        failed,
        dropped,
        retried,
        low_confidence
    );
    check_budget(failed, jobs.len(), config.max_failure_rate, "clips")
}

/// Parses repeated `name=path` flags.
fn parse_method_flags(flags: &[String], config: &PipelineConfig) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut out: Vec<(String, PathBuf)> = Vec::new();
    for flag in flags {
        let (name, path) = flag
            .split_once('=')
            .filter(|(n, p)| !n.is_empty() && !p.is_empty())
            .ok_or_else(|| CliError::Usage(format!("--method expects NAME=PATH, got `{flag}`")))?;
        if !config.methods.iter().any(|m| m == name) {
            return Err(CliError::Usage(format!(
                "unknown method `{name}`; configured methods are {}",
                config.methods.join(", ")
            )));
        }
        if out.iter().any(|(n, _)| n == name) {
            return Err(CliError::Usage(format!("method `{name}` given twice")));
        }
        out.push((name.to_string(), PathBuf::from(path)));
    }
    Ok(out)
}

fn load_method_outputs(flags: &[(String, PathBuf)]) -> Result<Vec<MethodOutput>, CliError> {
    let mut outputs = Vec::new();
    for (name, path) in flags {
        let rows: Vec<MethodOutput> = read_jsonl_file(path)?;
        if let Some(stray) = rows.iter().find(|r| &r.method != name) {
            return Err(CliError::Data(format!(
                "{}: expected outputs of `{name}`, found `{}`",
                path.display(),
                stray.method
            )));
        }
        outputs.extend(rows);
    }
    Ok(outputs)
}

fn write_output(path: &Path, text: &str) -> Result<(), CliError> {
    store::write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn eval_cmd(ctx: &Context, truth_path: &Path, method_flags: &[String]) -> Result<(), CliError> {
    let config = &ctx.config;
    let flags = parse_method_flags(method_flags, config)?;
    let truth: Vec<GroundTruthEntry> = read_jsonl_file(truth_path)?;
    let out_dir = config.store_root.join("eval");
    let report_path = out_dir.join("report.json");
    ctx.refuse_clobber("eval report", report_path.exists())?;

    let mut outputs = load_method_outputs(&flags)?;
    if !flags.iter().any(|(n, _)| n == eval::OURS) {
        let categorizations: Vec<RawCategorization> = ctx.store.read_all_or_empty(CATEGORIZATION)?;
        let records: Vec<EntityRecord> = ctx.store.read_all_or_empty(ENTITIES)?;
        outputs.extend(ours_outputs(&categorizations, &records));
    }
    let methods: Vec<String> = config
        .methods
        .iter()
        .filter(|m| m.as_str() == eval::OURS || flags.iter().any(|(n, _)| n == *m))
        .cloned()
        .collect();
    let entity_types: Vec<String> = RECALL_ENTITY_TYPES.map(String::from).to_vec();
    let report = evaluate(&outputs, &truth, &methods, &entity_types, &config.match_config)
        .map_err(|e| CliError::Data(e.to_string()))?;

    write_output(&report_path, &String::from_utf8_lossy(&store::to_pretty_json(&report, &report_path)?))?;
    let csv = report.recall_csv().map_err(|e| CliError::Data(e.to_string()))?;
    write_output(&out_dir.join("recall.csv"), &csv)?;
    println!(
        "eval: {} truth entries over {} clips",
        report.truth_entries, report.truth_clips
    );
    for row in &report.results {
        let recall = row
            .recall
            .recall
            .map_or_else(|| "n/a".to_string(), |r| format!("{r:.3}"));
        println!(
            "  {:<10} {:<10} {:>6}  ({}/{})",
            row.method, row.entity_type, recall, row.recall.matched, row.recall.total
        );
    }
    Ok(())
}

/// File-system friendly rendering of a clip id.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn csv_err(e: raven_core::eval::EvalError) -> CliError {
    CliError::Data(e.to_string())
}

pub fn report(ctx: &Context, clip_ids: &[String], method_flags: &[String], top_n: usize) -> Result<(), CliError> {
    let config = &ctx.config;
    let flags = parse_method_flags(method_flags, config)?;
    let records: Vec<EntityRecord> = ctx.store.read_all_or_empty(ENTITIES)?;
    let categorizations: Vec<RawCategorization> = ctx.store.read_all_or_empty(CATEGORIZATION)?;
    if records.is_empty() && categorizations.is_empty() {
        return Err(CliError::Data("nothing to report; run categorize and extract first".into()));
    }
    let out_dir = config.store_root.join("report");
    ctx.refuse_clobber("report directory", out_dir.exists())?;
    if out_dir.exists() {
        fs::remove_dir_all(&out_dir).map_err(|e| CliError::Data(format!("{}: {e}", out_dir.display())))?;
    }
    let dist = out_dir.join("distributions");

    let categories = category_distribution(&records);
    write_output(
        &dist.join("categories.csv"),
        &histogram_csv(["category", "count"], &categories).map_err(csv_err)?,
    )?;
    let all_entities: Vec<&GenericEntity> = categorizations
        .iter()
        .flat_map(|c| &c.generic_entities)
        .chain(records.iter().flat_map(|r| &r.entities))
        .collect();
    let types = entity_type_distribution(all_entities.iter().copied());
    write_output(
        &dist.join("entity_types.csv"),
        &histogram_csv(["entity_type", "count"], &types).map_err(csv_err)?,
    )?;
    for (entity_type, _) in &types {
        let attrs = attribute_distribution(all_entities.iter().copied(), entity_type);
        write_output(
            &dist.join(format!("attributes.{}.csv", category_slug(entity_type))),
            &histogram_csv(["attribute", "count"], &attrs).map_err(csv_err)?,
        )?;
    }

    // (category, entity type, attribute) in first-seen order
    let mut triples: Vec<(&str, &str, &str)> = Vec::new();
    for r in &records {
        for e in &r.entities {
            for a in &e.attributes {
                let t = (r.canonical_category.as_str(), e.entity_type.as_str(), a.name.as_str());
                if !triples.contains(&t) {
                    triples.push(t);
                }
            }
        }
    }
    triples.sort_unstable();
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_data = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(["category", "entity_type", "attribute", "value", "count"])
        .map_err(to_data)?;
    for (category, entity_type, attribute) in &triples {
        for (value, count) in top_values(&records, category, entity_type, attribute, top_n) {
            w.write_record([category, entity_type, attribute, value.as_str(), &count.to_string()])
                .map_err(to_data)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    store::write_atomic(&dist.join("top_values.csv"), &bytes)?;

    let eval_path = config.store_root.join("eval").join("report.json");
    if eval_path.exists() {
        let report: EvalReport = store::read_json(&eval_path)?;
        write_output(&out_dir.join("recall.csv"), &report.recall_csv().map_err(csv_err)?)?;
    }

    if !clip_ids.is_empty() {
        let schemas: BTreeMap<String, EntitySchema> = match ctx.catalog.load_manifest()? {
            Some(m) => ctx.catalog.load_current_schemas(&m)?,
            None => BTreeMap::new(),
        };
        let baselines = load_method_outputs(&flags)?;
        let columns: Vec<String> = config
            .methods
            .iter()
            .filter(|m| m.as_str() != eval::OURS)
            .cloned()
            .collect();
        for clip_id in clip_ids {
            let study = case_study(clip_id, &categorizations, &records, &schemas, &baselines, &columns)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let stem = file_stem(clip_id);
            let dir = out_dir.join("case_study");
            write_output(&dir.join(format!("{stem}.csv")), &study.to_csv().map_err(csv_err)?)?;
            let text = study.to_text();
            write_output(&dir.join(format!("{stem}.txt")), &text)?;
            println!("case study {clip_id}:\n{text}");
        }
    }
    println!(
        "report: {} records over {} categories, {} entity types; written to {}",
        records.len(),
        categories.len(),
        types.len(),
        out_dir.display()
    );
    Ok(())
}

pub fn verify(ctx: &Context) -> Result<(), CliError> {
    for (name, count) in ctx.store.verify()? {
        println!("verify: {name}: {count} records parse");
    }
    let records: Vec<EntityRecord> = ctx.store.read_all_or_empty(ENTITIES)?;
    let mut cache: HashMap<(String, u64), EntitySchema> = HashMap::new();
    let mut problems = Vec::new();
    for record in &records {
        let key = (record.canonical_category.clone(), record.schema_version);
        if !cache.contains_key(&key) {
            match ctx.catalog.load_schema(&key.0, key.1) {
                Ok(schema) => {
                    cache.insert(key.clone(), schema);
                }
                Err(e) => {
                    problems.push(format!("{}: {e}", record.clip_id));
                    continue;
                }
            }
        }
        for v in record.conformance_violations(&cache[&key]) {
            problems.push(format!("{}: {v}", record.clip_id));
        }
    }
    println!(
        "verify: {} entity records checked, {} conformance problems",
        records.len(),
        problems.len()
    );
    if let Some(first) = problems.first() {
        return Err(CliError::Data(format!(
            "{} conformance problems, first: {first}",
            problems.len()
        )));
    }
    Ok(())
}
