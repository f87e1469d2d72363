//! Append-only JSONL record streams with derived inverted indexes.
//!
//! Layout under the store root:
//!
//! ```text
//! streams/<name>.jsonl   one JSON object per line, LF terminated
//! indexes/<name>.json    rebuildable lookups, never the source of truth
//! locks/<name>.lock      held while a writer or index build is active
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::model::{
    normalize_category_name, normalize_entity_value, ClipManifestEntry, EntityRecord, RawCategorization,
};

pub const MANIFEST: &str = "manifest";
pub const CATEGORIZATION: &str = "categorization";
pub const ENTITIES: &str = "entities";
pub const DROPS: &str = "drops";
pub const CATEGORIZE_FAILURES: &str = "categorize.failures";
pub const GENSCHEMA_FAILURES: &str = "genschema.failures";
pub const EXTRACT_FAILURES: &str = "extract.failures";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("stream `{stream}` has a corrupt line {} (offset {offset}): {message}", offset + 1)]
    CorruptLine {
        stream: String,
        offset: u64,
        message: String,
    },
    #[error("stream `{0}` does not exist")]
    MissingStream(String),
    #[error("{} is locked by another writer", path.display())]
    Locked { path: PathBuf },
    #[error("{} already exists with different content", path.display())]
    Conflict { path: PathBuf },
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A clip that could not be processed by a stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub error_kind: String,
    pub message: String,
}

impl FailureRecord {
    pub fn for_clip(stage: &str, clip_id: &str, error_kind: &str, message: impl Into<String>) -> Self {
        Self {
            stage: stage.into(),
            clip_id: Some(clip_id.into()),
            category: None,
            error_kind: error_kind.into(),
            message: message.into(),
        }
    }

    pub fn for_category(stage: &str, category: &str, error_kind: &str, message: impl Into<String>) -> Self {
        Self {
            stage: stage.into(),
            clip_id: None,
            category: Some(category.into()),
            error_kind: error_kind.into(),
            message: message.into(),
        }
    }
}

/// An extracted member discarded by conformance repair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRecord {
    pub clip_id: String,
    pub member: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteMode {
    Append,
    /// Start the stream over; used by `--overwrite`.
    Truncate,
}

#[derive(Debug, Clone)]
pub struct RecordStore {
    root: PathBuf,
}

impl RecordStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["streams", "indexes", "locks"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stream_path(&self, name: &str) -> PathBuf {
        self.root.join("streams").join(format!("{name}.jsonl"))
    }

    pub fn index_path(&self, name: &str) -> PathBuf {
        self.root.join("indexes").join(format!("{name}.json"))
    }

    fn lock_path(&self, name: &str) -> PathBuf {
        self.root.join("locks").join(format!("{name}.lock"))
    }

    pub fn exists(&self, name: &str) -> bool {
        self.stream_path(name).is_file()
    }

    /// Number of records in a stream, zero if it does not exist.
    pub fn len(&self, name: &str) -> Result<u64> {
        let path = self.stream_path(name);
        if !path.exists() {
            return Ok(0);
        }
        count_lines(&path)
    }

    /// Opens the single writer for a stream.
    pub fn writer(&self, name: &str, mode: WriteMode) -> Result<StreamWriter> {
        let lock = LockGuard::acquire(self.lock_path(name))?;
        let path = self.stream_path(name);
        let next_offset = match mode {
            WriteMode::Truncate => 0,
            WriteMode::Append if path.exists() => count_lines(&path)?,
            WriteMode::Append => 0,
        };
        let mut options = OpenOptions::new();
        options.create(true);
        match mode {
            WriteMode::Append => options.append(true),
            WriteMode::Truncate => options.write(true).truncate(true),
        };
        let file = options.open(&path).map_err(io_err(&path))?;
        Ok(StreamWriter {
            file,
            path,
            next_offset,
            sync: true,
            _lock: lock,
        })
    }

    /// Appends one record and returns its 0-based line offset.
    pub fn append<T: Serialize>(&self, name: &str, record: &T) -> Result<u64> {
        self.writer(name, WriteMode::Append)?.append(record)
    }

    /// Records in append order, each with its offset.
    pub fn scan<T: DeserializeOwned>(&self, name: &str) -> Result<StreamIter<T>> {
        let path = self.stream_path(name);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::MissingStream(name.to_string()))
            }
            Err(e) => return Err(StoreError::Io { path, source: e }),
        };
        Ok(StreamIter {
            lines: BufReader::new(file).lines(),
            stream: name.to_string(),
            path,
            offset: 0,
            _marker: std::marker::PhantomData,
        })
    }

    /// Records matching `predicate`, in append order.
    pub fn scan_where<T, P>(&self, name: &str, mut predicate: P) -> Result<Vec<T>>
    where
        T: DeserializeOwned,
        P: FnMut(&T) -> bool,
    {
        let mut out = Vec::new();
        for item in self.scan::<T>(name)? {
            let (_, record) = item?;
            if predicate(&record) {
                out.push(record);
            }
        }
        Ok(out)
    }

    pub fn read_all<T: DeserializeOwned>(&self, name: &str) -> Result<Vec<T>> {
        self.scan_where(name, |_| true)
    }

    /// Like [`RecordStore::read_all`] but an absent stream is empty.
    pub fn read_all_or_empty<T: DeserializeOwned>(&self, name: &str) -> Result<Vec<T>> {
        match self.read_all(name) {
            Err(StoreError::MissingStream(_)) => Ok(Vec::new()),
            other => other,
        }
    }

    /// Parses every line of every known stream present on disk.
    pub fn verify(&self) -> Result<Vec<(String, u64)>> {
        let mut counts = Vec::new();
        for name in [MANIFEST, CATEGORIZATION, ENTITIES, DROPS] {
            if !self.exists(name) {
                continue;
            }
            let n = match name {
                MANIFEST => self.count_valid::<ClipManifestEntry>(name)?,
                CATEGORIZATION => self.count_valid::<RawCategorization>(name)?,
                ENTITIES => self.count_valid::<EntityRecord>(name)?,
                _ => self.count_valid::<DropRecord>(name)?,
            };
            counts.push((name.to_string(), n));
        }
        for name in [CATEGORIZE_FAILURES, GENSCHEMA_FAILURES, EXTRACT_FAILURES] {
            if self.exists(name) {
                counts.push((name.to_string(), self.count_valid::<FailureRecord>(name)?));
            }
        }
        Ok(counts)
    }

    fn count_valid<T: DeserializeOwned>(&self, name: &str) -> Result<u64> {
        let mut n = 0;
        for item in self.scan::<T>(name)? {
            item?;
            n += 1;
        }
        Ok(n)
    }

    /// Builds `indexes/entities.<key>.json`, a map from key value to the
    /// sorted offsets of entity records containing it. The entities stream
    /// is verified first and no writer may be active.
    pub fn build_inverted_index(&self, key: IndexKey) -> Result<PathBuf> {
        let _lock = LockGuard::acquire(self.lock_path(ENTITIES))?;
        let mut map: BTreeMap<String, BTreeSet<u64>> = BTreeMap::new();
        let records = match self.scan::<EntityRecord>(ENTITIES) {
            Ok(iter) => iter.collect::<Result<Vec<_>>>()?,
            Err(StoreError::MissingStream(_)) => Vec::new(),
            Err(e) => return Err(e),
        };
        for (offset, record) in &records {
            for value in key.values(record) {
                map.entry(value).or_default().insert(*offset);
            }
        }
        let path = self.index_path(&format!("entities.{}", key.as_str()));
        let mut text = serde_json::to_string(&map).map_err(|source| StoreError::Json {
            path: path.clone(),
            source,
        })?;
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn load_inverted_index(&self, key: IndexKey) -> Result<BTreeMap<String, Vec<u64>>> {
        let path = self.index_path(&format!("entities.{}", key.as_str()));
        read_json(&path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKey {
    CanonicalCategory,
    EntityType,
    AttributeValueNormalized,
}

impl IndexKey {
    pub const ALL: [IndexKey; 3] = [
        IndexKey::CanonicalCategory,
        IndexKey::EntityType,
        IndexKey::AttributeValueNormalized,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IndexKey::CanonicalCategory => "canonical_category",
            IndexKey::EntityType => "entity_type",
            IndexKey::AttributeValueNormalized => "attribute_value_normalized",
        }
    }

    /// Normalized key values a record is filed under.
    pub fn values(self, record: &EntityRecord) -> BTreeSet<String> {
        let raw: Vec<String> = match self {
            IndexKey::CanonicalCategory => vec![normalize_category_name(&record.canonical_category)],
            IndexKey::EntityType => record
                .entities
                .iter()
                .map(|e| normalize_category_name(&e.entity_type))
                .collect(),
            IndexKey::AttributeValueNormalized => record
                .entities
                .iter()
                .flat_map(|e| e.attributes.iter().map(|a| normalize_entity_value(&a.value)))
                .collect(),
        };
        raw.into_iter().filter(|v| !v.is_empty()).collect()
    }
}

pub struct StreamWriter {
    file: File,
    path: PathBuf,
    next_offset: u64,
    sync: bool,
    _lock: LockGuard,
}

impl StreamWriter {
    /// When off, appends are flushed to the OS but not fsynced.
    pub fn set_sync(&mut self, sync: bool) {
        self.sync = sync;
    }

    pub fn next_offset(&self) -> u64 {
        self.next_offset
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<u64> {
        let mut line = serde_json::to_vec(record).map_err(|source| StoreError::Json {
            path: self.path.clone(),
            source,
        })?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        if self.sync {
            self.file.sync_data().map_err(io_err(&self.path))?;
        }
        let offset = self.next_offset;
        self.next_offset += 1;
        Ok(offset)
    }
}

pub struct StreamIter<T> {
    lines: io::Lines<BufReader<File>>,
    stream: String,
    path: PathBuf,
    offset: u64,
    _marker: std::marker::PhantomData<T>,
}

impl<T: DeserializeOwned> Iterator for StreamIter<T> {
    type Item = Result<(u64, T)>;

    fn next(&mut self) -> Option<Self::Item> {
        let line = match self.lines.next()? {
            Ok(line) => line,
            Err(source) => {
                return Some(Err(StoreError::Io {
                    path: self.path.clone(),
                    source,
                }))
            }
        };
        let offset = self.offset;
        self.offset += 1;
        Some(
            serde_json::from_str(&line)
                .map(|record| (offset, record))
                .map_err(|e| StoreError::CorruptLine {
                    stream: self.stream.clone(),
                    offset,
                    message: e.to_string(),
                }),
        )
    }
}

/// Exclusive lock file, removed on drop.
pub struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    pub fn acquire(path: PathBuf) -> Result<Self> {
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(StoreError::Locked { path }),
            Err(source) => Err(StoreError::Io { path, source }),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn count_lines(path: &Path) -> Result<u64> {
    let mut reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut n = 0;
    loop {
        let buf = reader.fill_buf().map_err(io_err(path))?;
        if buf.is_empty() {
            break;
        }
        n += buf.iter().filter(|b| **b == b'\n').count() as u64;
        let len = buf.len();
        reader.consume(len);
    }
    Ok(n)
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| StoreError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty JSON with a trailing newline; the on-disk form of catalog, schema
/// and report files.
pub fn to_pretty_json<T: Serialize>(value: &T, path: &Path) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| StoreError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Reads JSONL records from an arbitrary file (manifests, ground truth,
/// method outputs). Line numbers in errors are 1-based.
pub fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| StoreError::CorruptLine {
            stream: path.display().to_string(),
            offset: i as u64,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Attribute, GenericEntity};
    use chrono::DateTime;
    use proptest::prelude::*;

    fn record(clip: &str, category: &str, value: &str) -> EntityRecord {
        EntityRecord {
            clip_id: clip.into(),
            raw_category: category.into(),
            canonical_category: category.into(),
            retrieval_similarity: 0.5,
            schema_version: 1,
            entities: vec![GenericEntity::new("Figure", vec![Attribute::new("Name", value)])],
            model_id: "m".into(),
            created_at: DateTime::UNIX_EPOCH,
        }
    }

    #[test]
    fn append_offsets_start_at_zero() {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        assert_eq!(store.append(ENTITIES, &record("a", "History", "x")).unwrap(), 0);
        assert_eq!(store.append(ENTITIES, &record("b", "History", "y")).unwrap(), 1);
        let mut w = store.writer(ENTITIES, WriteMode::Append).unwrap();
        assert_eq!(w.next_offset(), 2);
        assert_eq!(w.append(&record("c", "Travel", "z")).unwrap(), 2);
    }

    #[test]
    fn append_then_scan_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        let r = record("a", "History", "Abraham Lincoln");
        store.append(ENTITIES, &r).unwrap();
        let back: Vec<EntityRecord> = store.read_all(ENTITIES).unwrap();
        assert_eq!(back, vec![r]);
        let text = fs::read_to_string(store.stream_path(ENTITIES)).unwrap();
        assert!(text.ends_with('\n') && !text.contains('\r'));
    }

    #[test]
    fn scan_with_predicate() {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        for (c, cat) in [("a", "History"), ("b", "Travel"), ("c", "History")] {
            store.append(ENTITIES, &record(c, cat, "v")).unwrap();
        }
        let all: Vec<EntityRecord> = store.read_all(ENTITIES).unwrap();
        assert_eq!(all.iter().map(|r| r.clip_id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        let history: Vec<EntityRecord> = store
            .scan_where(ENTITIES, |r: &EntityRecord| r.canonical_category == "History")
            .unwrap();
        assert_eq!(history.len(), 2);
    }

    #[test]
    fn corrupt_line_is_cited() {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        store.append(ENTITIES, &record("a", "History", "v")).unwrap();
        let mut f = OpenOptions::new().append(true).open(store.stream_path(ENTITIES)).unwrap();
        f.write_all(b"{\"clip_id\": trunc\n").unwrap();
        store.append(ENTITIES, &record("c", "History", "v")).unwrap();
        match store.read_all::<EntityRecord>(ENTITIES) {
            Err(StoreError::CorruptLine { offset, stream, .. }) => {
                assert_eq!(offset, 1);
                assert_eq!(stream, ENTITIES);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(store.verify(), Err(StoreError::CorruptLine { offset: 1, .. })));
    }

    #[test]
    fn missing_stream() {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        assert!(matches!(
            store.read_all::<EntityRecord>(ENTITIES),
            Err(StoreError::MissingStream(_))
        ));
        assert!(store.read_all_or_empty::<EntityRecord>(ENTITIES).unwrap().is_empty());
    }

    #[test]
    fn single_writer_lock() {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        let w = store.writer(ENTITIES, WriteMode::Append).unwrap();
        assert!(matches!(store.writer(ENTITIES, WriteMode::Append), Err(StoreError::Locked { .. })));
        assert!(matches!(
            store.build_inverted_index(IndexKey::CanonicalCategory),
            Err(StoreError::Locked { .. })
        ));
        drop(w);
        store.writer(ENTITIES, WriteMode::Append).unwrap();
    }

    #[test]
    fn truncate_resets_stream() {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        store.append(ENTITIES, &record("a", "History", "v")).unwrap();
        let mut w = store.writer(ENTITIES, WriteMode::Truncate).unwrap();
        assert_eq!(w.append(&record("b", "History", "v")).unwrap(), 0);
        drop(w);
        assert_eq!(store.len(ENTITIES).unwrap(), 1);
    }

    #[test]
    fn inverted_index_over_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        store.append(ENTITIES, &record("a", "History", "Abraham Lincoln")).unwrap();
        store.append(ENTITIES, &record("b", "Travel", "Bangkok")).unwrap();
        store.append(ENTITIES, &record("c", "History", "abraham  LINCOLN!")).unwrap();
        let path = store.build_inverted_index(IndexKey::CanonicalCategory).unwrap();
        let first = fs::read(&path).unwrap();
        let index = store.load_inverted_index(IndexKey::CanonicalCategory).unwrap();
        assert_eq!(index["history"], vec![0, 2]);
        assert_eq!(index["travel"], vec![1]);
        store.build_inverted_index(IndexKey::CanonicalCategory).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);

        store.build_inverted_index(IndexKey::AttributeValueNormalized).unwrap();
        let values = store.load_inverted_index(IndexKey::AttributeValueNormalized).unwrap();
        assert_eq!(values["abraham lincoln"], vec![0, 2]);
        store.build_inverted_index(IndexKey::EntityType).unwrap();
        let types = store.load_inverted_index(IndexKey::EntityType).unwrap();
        assert_eq!(types["figure"], vec![0, 1, 2]);
    }

    #[test]
    fn empty_stream_gives_empty_index() {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        store.build_inverted_index(IndexKey::EntityType).unwrap();
        assert!(store.load_inverted_index(IndexKey::EntityType).unwrap().is_empty());
        let _ = store.writer(ENTITIES, WriteMode::Truncate).unwrap();
        store.build_inverted_index(IndexKey::EntityType).unwrap();
        assert!(store.load_inverted_index(IndexKey::EntityType).unwrap().is_empty());
    }

    fn arb_record() -> impl Strategy<Value = EntityRecord> {
        (
            "[a-z0-9]{1,6}",
            prop_oneof![Just("History"), Just("How-To"), Just("Travel & Events")],
            proptest::collection::vec(("[A-Z][a-z]{0,5}", "\\PC{0,12}"), 0..4),
            -1.0f64..=1.0,
        )
            .prop_map(|(clip, cat, attrs, sim)| EntityRecord {
                clip_id: clip,
                raw_category: cat.to_lowercase(),
                canonical_category: cat.to_string(),
                retrieval_similarity: sim,
                schema_version: 2,
                entities: vec![GenericEntity::new(
                    "Figure",
                    attrs
                        .into_iter()
                        .enumerate()
                        .map(|(i, (n, v))| Attribute::new(format!("{n}{i}"), v))
                        .collect(),
                )],
                model_id: "m".into(),
                created_at: DateTime::from_timestamp(1_700_000_000, 0).unwrap(),
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_and_index_offsets_point_at_matches(records in proptest::collection::vec(arb_record(), 0..12)) {
            let dir = tempfile::tempdir().unwrap();
            let store = RecordStore::open(dir.path()).unwrap();
            for r in &records {
                store.append(ENTITIES, r).unwrap();
            }
            let back: Vec<EntityRecord> = store.read_all_or_empty(ENTITIES).unwrap();
            prop_assert_eq!(&back, &records);
            for key in IndexKey::ALL {
                store.build_inverted_index(key).unwrap();
                for (value, offsets) in store.load_inverted_index(key).unwrap() {
                    for off in offsets {
                        let r = &records[off as usize];
                        prop_assert!(key.values(r).contains(&value));
                    }
                }
            }
        }
    }
}
