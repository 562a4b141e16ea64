//! On-disk layout of one log database: the five tables as partitioned,
//! immutable segment files.
//!
//! ```text
//! <root>/<log_name>/manifest.json
//!                   traces.seg                      trace id -> ordinal registry
//!                   index/<interval>/<first_type>.seg
//!                   single/<interval>/<type>.seg
//!                   seq/<range>.seg
//!                   last/<range>.seg
//!                   count/all.seg
//! ```
//!
//! Segments are never modified in place. A rewrite produces a complete new
//! file under a temporary name and renames it over the old one, so readers
//! always see either the old or the new contents.

mod audit;
pub mod format;
mod tables;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{audit, AuditReport};
pub use tables::{
    CountRecord, CountTable, IndexTableSegment, IndexedPair, Interval, LastCheckedSegment, SequenceTableSegment,
    SingleEntry, SingleTableSegment, TraceRange,
};

use crate::model::{EtPair, Timestamp, Trace, TraceId};
use format::{decode_segment, encode_segment, escape_name, unescape_name, write_atomic, write_atomic_with};

pub const DAY_MS: i64 = 86_400_000;
const MANIFEST: &str = "manifest.json";
const REGISTRY: &str = "traces.seg";
const LOCK: &str = "LOCK";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt segment {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("store config mismatch on `{field}`: manifest has {existing}, requested {requested}")]
    ConfigMismatch { field: &'static str, existing: String, requested: String },
    #[error("invalid store config: {0}")]
    InvalidConfig(String),
    #[error("no log database `{0}` under this root")]
    NotFound(String),
    #[error("log database is locked by another writer ({0})")]
    Locked(PathBuf),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// What the IndexTable stores for each event of a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StoreMode {
    /// Positions within the trace.
    #[default]
    Pos,
    /// Timestamps in milliseconds.
    Ts,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Compression {
    #[default]
    None,
    Deflate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub log_name: String,
    pub mode: StoreMode,
    pub split_every_days: u32,
    pub trace_split: u32,
    /// Maximum separation, in days, of two events forming a pair.
    pub lookback: u32,
    pub compression: Compression,
}

impl StoreConfig {
    pub fn new(log_name: impl Into<String>) -> Self {
        StoreConfig {
            log_name: log_name.into(),
            mode: StoreMode::Pos,
            split_every_days: 30,
            trace_split: 10_000,
            lookback: 30,
            compression: Compression::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.log_name.is_empty() || escape_name(&self.log_name) != self.log_name {
            return Err(StoreError::InvalidConfig(format!(
                "log name `{}` must be non-empty and use only [A-Za-z0-9._-]",
                self.log_name
            )));
        }
        for (name, v) in [
            ("split_every_days", self.split_every_days),
            ("trace_split", self.trace_split),
            ("lookback", self.lookback),
        ] {
            if v < 1 {
                return Err(StoreError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    pub fn lookback_ms(&self) -> i64 {
        self.lookback as i64 * DAY_MS
    }

    pub fn split_ms(&self) -> i64 {
        self.split_every_days as i64 * DAY_MS
    }
}

/// Persisted form of [`StoreConfig`] plus the interval alignment origin.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub config: StoreConfig,
    /// Midnight (UTC) of the day holding the first event ever indexed.
    pub origin_ts: Option<Timestamp>,
}

/// Every segment kind, keyed by what identifies its file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SegmentContents {
    Index(IndexTableSegment),
    Single(SingleTableSegment),
    Sequence(SequenceTableSegment),
    LastChecked(LastCheckedSegment),
    Count(CountTable),
}

/// Exclusive writer lock; the lock file is removed on drop.
#[derive(Debug)]
pub struct WriterLock {
    path: PathBuf,
}

impl Drop for WriterLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Clone, Debug, Default)]
struct TraceRegistry {
    ordinals: HashMap<TraceId, u64>,
    ids: Vec<TraceId>,
}

/// Handle on one log database.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    manifest: Manifest,
    registry: TraceRegistry,
}

impl Store {
    /// Opens `<root>/<log_name>`, creating it with default settings when it
    /// does not exist yet.
    pub fn open(root: impl AsRef<Path>, log_name: &str) -> Result<Store> {
        let dir = root.as_ref().join(log_name);
        if dir.join(MANIFEST).exists() {
            Self::load(dir)
        } else {
            Self::create(root.as_ref(), StoreConfig::new(log_name))
        }
    }

    /// Opens an existing log database; fails with [`StoreError::NotFound`]
    /// otherwise.
    pub fn open_existing(root: impl AsRef<Path>, log_name: &str) -> Result<Store> {
        let dir = root.as_ref().join(log_name);
        if !dir.join(MANIFEST).exists() {
            return Err(StoreError::NotFound(log_name.to_string()));
        }
        Self::load(dir)
    }

    /// Opens or creates a log database with an explicit configuration. An
    /// existing manifest must agree on every partitioning parameter; only
    /// the compression codec may change between sessions.
    pub fn open_with(root: impl AsRef<Path>, config: StoreConfig) -> Result<Store> {
        config.validate()?;
        let dir = root.as_ref().join(&config.log_name);
        if !dir.join(MANIFEST).exists() {
            return Self::create(root.as_ref(), config);
        }
        let mut store = Self::load(dir)?;
        let have = &store.manifest.config;
        let checks: [(&'static str, String, String); 4] = [
            ("mode", format!("{:?}", have.mode), format!("{:?}", config.mode)),
            ("lookback", have.lookback.to_string(), config.lookback.to_string()),
            ("split_every_days", have.split_every_days.to_string(), config.split_every_days.to_string()),
            ("trace_split", have.trace_split.to_string(), config.trace_split.to_string()),
        ];
        for (field, existing, requested) in checks {
            if existing != requested {
                return Err(StoreError::ConfigMismatch { field, existing, requested });
            }
        }
        if have.compression != config.compression {
            store.manifest.config.compression = config.compression;
            store.write_manifest()?;
        }
        Ok(store)
    }

    fn create(root: &Path, config: StoreConfig) -> Result<Store> {
        config.validate()?;
        let dir = root.join(&config.log_name);
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io { path: dir.clone(), source })?;
        let store = Store {
            dir,
            manifest: Manifest { config, origin_ts: None },
            registry: TraceRegistry::default(),
        };
        store.write_manifest()?;
        Ok(store)
    }

    fn load(dir: PathBuf) -> Result<Store> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|source| StoreError::Io { path: path.clone(), source })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| StoreError::Corrupt { path: path.clone(), reason: e.to_string() })?;
        manifest.config.validate()?;
        let mut store = Store { dir, manifest, registry: TraceRegistry::default() };
        store.registry = store.load_registry()?;
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &StoreConfig {
        &self.manifest.config
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn mode(&self) -> StoreMode {
        self.manifest.config.mode
    }

    pub fn origin(&self) -> Option<Timestamp> {
        self.manifest.origin_ts
    }

    pub(crate) fn set_origin(&mut self, origin: Timestamp) -> Result<()> {
        self.manifest.origin_ts = Some(origin);
        self.write_manifest()
    }

    fn write_manifest(&self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        write_atomic(&self.dir.join(MANIFEST), text.as_bytes())
    }

    pub fn lock_writer(&self) -> Result<WriterLock> {
        let path = self.dir.join(LOCK);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(WriterLock { path }),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(StoreError::Locked(path)),
            Err(source) => Err(StoreError::Io { path, source }),
        }
    }

    // ---- trace registry ----

    fn load_registry(&self) -> Result<TraceRegistry> {
        let path = self.dir.join(REGISTRY);
        let mut reg = TraceRegistry::default();
        let Some(records) = self.read_records(&path)? else {
            return Ok(reg);
        };
        for rec in records {
            let mut r = format::RecordReader::new(&rec);
            let id = TraceId::new(r.str().map_err(|reason| StoreError::Corrupt { path: path.clone(), reason })?);
            reg.ordinals.insert(id.clone(), reg.ids.len() as u64);
            reg.ids.push(id);
        }
        Ok(reg)
    }

    /// Assigns ordinals to unseen trace ids and persists the registry when
    /// anything changed.
    pub(crate) fn register_traces<'a>(&mut self, ids: impl IntoIterator<Item = &'a TraceId>) -> Result<()> {
        let before = self.registry.ids.len();
        for id in ids {
            if !self.registry.ordinals.contains_key(id) {
                self.registry.ordinals.insert(id.clone(), self.registry.ids.len() as u64);
                self.registry.ids.push(id.clone());
            }
        }
        if self.registry.ids.len() == before {
            return Ok(());
        }
        let records: Vec<Vec<u8>> = self
            .registry
            .ids
            .iter()
            .map(|id| {
                let mut w = format::RecordWriter::new();
                w.str(id.as_str());
                w.finish()
            })
            .collect();
        write_atomic(&self.dir.join(REGISTRY), &encode_segment(&records, self.config().compression))
    }

    pub fn trace_ordinal(&self, id: &TraceId) -> Option<u64> {
        self.registry.ordinals.get(id).copied()
    }

    /// Trace ids in registration order.
    pub fn trace_ids(&self) -> &[TraceId] {
        &self.registry.ids
    }

    pub fn trace_range(&self, id: &TraceId) -> Option<TraceRange> {
        self.trace_ordinal(id).map(|o| TraceRange::for_ordinal(o, self.config().trace_split as u64))
    }

    /// Interval holding `ts`, aligned to the origin in steps of
    /// `split_every_days`.
    pub fn interval_for(&self, ts: Timestamp) -> Interval {
        let origin = self.origin().unwrap_or(0);
        interval_for(ts, origin, self.config().split_ms())
    }

    // ---- paths ----

    fn index_path(&self, interval: Interval, first: &str) -> PathBuf {
        self.dir.join("index").join(interval.dir_name()).join(format!("{}.seg", escape_name(first)))
    }

    fn single_path(&self, interval: Interval, ty: &str) -> PathBuf {
        self.dir.join("single").join(interval.dir_name()).join(format!("{}.seg", escape_name(ty)))
    }

    fn seq_path(&self, range: TraceRange) -> PathBuf {
        self.dir.join("seq").join(format!("{}.seg", range.file_stem()))
    }

    fn last_path(&self, range: TraceRange) -> PathBuf {
        self.dir.join("last").join(format!("{}.seg", range.file_stem()))
    }

    fn count_path(&self) -> PathBuf {
        self.dir.join("count").join("all.seg")
    }

    fn segment_path(&self, contents: &SegmentContents) -> PathBuf {
        match contents {
            SegmentContents::Index(s) => self.index_path(s.interval, &s.partition_key),
            SegmentContents::Single(s) => self.single_path(s.interval, &s.event_type),
            SegmentContents::Sequence(s) => self.seq_path(s.range),
            SegmentContents::LastChecked(s) => self.last_path(s.range),
            SegmentContents::Count(_) => self.count_path(),
        }
    }

    fn read_records(&self, path: &Path) -> Result<Option<Vec<Vec<u8>>>> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(StoreError::Io { path: path.to_path_buf(), source }),
        };
        decode_segment(&bytes)
            .map(Some)
            .map_err(|reason| StoreError::Corrupt { path: path.to_path_buf(), reason })
    }

    fn list_dir(&self, dir: &Path) -> Result<Vec<String>> {
        let rd = match fs::read_dir(dir) {
            Ok(rd) => rd,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(StoreError::Io { path: dir.to_path_buf(), source }),
        };
        let mut names = Vec::new();
        for entry in rd {
            let entry = entry.map_err(|source| StoreError::Io { path: dir.to_path_buf(), source })?;
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
        names.sort();
        Ok(names)
    }

    fn intervals_in(&self, table: &str, window: Option<(Timestamp, Timestamp)>) -> Result<Vec<Interval>> {
        let mut out: Vec<Interval> = self
            .list_dir(&self.dir.join(table))?
            .iter()
            .filter_map(|n| Interval::parse(n))
            .filter(|i| window.is_none_or(|w| i.intersects(w)))
            .collect();
        out.sort();
        Ok(out)
    }

    fn segment_keys_in(&self, dir: &Path) -> Result<Vec<String>> {
        Ok(self
            .list_dir(dir)?
            .iter()
            .filter_map(|n| n.strip_suffix(".seg"))
            .filter_map(unescape_name)
            .collect())
    }

    // ---- IndexTable ----

    pub fn index_intervals(&self) -> Result<Vec<Interval>> {
        self.intervals_in("index", None)
    }

    pub fn index_partition_keys(&self, interval: Interval) -> Result<Vec<String>> {
        self.segment_keys_in(&self.dir.join("index").join(interval.dir_name()))
    }

    pub fn read_index_segment(&self, interval: Interval, first: &str) -> Result<Option<IndexTableSegment>> {
        let path = self.index_path(interval, first);
        let Some(records) = self.read_records(&path)? else {
            return Ok(None);
        };
        IndexTableSegment::decode(interval, first, &records, None)
            .map(Some)
            .map_err(|reason| StoreError::Corrupt { path, reason })
    }

    /// All indexed pairs of `et` from segments meeting `window` (every
    /// segment when `window` is `None`), ordered by trace id then second
    /// value. Values are positions or timestamps depending on the mode.
    pub fn read_inverted_list(&self, et: &EtPair, window: Option<(Timestamp, Timestamp)>) -> Result<Vec<IndexedPair>> {
        let mut out = Vec::new();
        for interval in self.intervals_in("index", window)? {
            let path = self.index_path(interval, &et.first);
            let Some(records) = self.read_records(&path)? else {
                continue;
            };
            let seg = IndexTableSegment::decode(interval, &et.first, &records, Some(&et.second))
                .map_err(|reason| StoreError::Corrupt { path, reason })?;
            if let Some(list) = seg.entries.into_values().next() {
                out.extend(list);
            }
        }
        tables::sort_pairs(&mut out);
        Ok(out)
    }

    // ---- SingleTable ----

    pub fn single_intervals(&self) -> Result<Vec<Interval>> {
        self.intervals_in("single", None)
    }

    pub fn read_single_segment(&self, interval: Interval, ty: &str) -> Result<Option<SingleTableSegment>> {
        let path = self.single_path(interval, ty);
        let Some(records) = self.read_records(&path)? else {
            return Ok(None);
        };
        SingleTableSegment::decode(interval, ty, &records)
            .map(Some)
            .map_err(|reason| StoreError::Corrupt { path, reason })
    }

    /// Occurrences of `ty` from segments meeting `window`, ordered by trace
    /// id then timestamp.
    pub fn read_single(&self, ty: &str, window: Option<(Timestamp, Timestamp)>) -> Result<Vec<SingleEntry>> {
        let mut out = Vec::new();
        for interval in self.intervals_in("single", window)? {
            if let Some(seg) = self.read_single_segment(interval, ty)? {
                out.extend(seg.entries);
            }
        }
        out.sort();
        Ok(out)
    }

    /// Every event type that has been indexed.
    pub fn event_types(&self) -> Result<BTreeSet<String>> {
        let mut out = BTreeSet::new();
        for interval in self.single_intervals()? {
            out.extend(self.segment_keys_in(&self.dir.join("single").join(interval.dir_name()))?);
        }
        Ok(out)
    }

    // ---- SequenceTable ----

    pub fn read_sequence_segment(&self, range: TraceRange) -> Result<Option<SequenceTableSegment>> {
        let path = self.seq_path(range);
        let Some(records) = self.read_records(&path)? else {
            return Ok(None);
        };
        SequenceTableSegment::decode(range, &records)
            .map(Some)
            .map_err(|reason| StoreError::Corrupt { path, reason })
    }

    /// The requested traces that exist; unknown ids are simply absent.
    pub fn read_sequences<'a>(&self, ids: impl IntoIterator<Item = &'a TraceId>) -> Result<HashMap<TraceId, Trace>> {
        let mut by_range: BTreeMap<TraceRange, Vec<&TraceId>> = BTreeMap::new();
        for id in ids {
            if let Some(range) = self.trace_range(id) {
                by_range.entry(range).or_default().push(id);
            }
        }
        let mut out = HashMap::new();
        for (range, wanted) in by_range {
            if let Some(mut seg) = self.read_sequence_segment(range)? {
                for id in wanted {
                    if let Some(t) = seg.entries.remove(id) {
                        out.insert(id.clone(), t);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn sequence_ranges(&self) -> Result<Vec<TraceRange>> {
        Ok(self
            .list_dir(&self.dir.join("seq"))?
            .iter()
            .filter_map(|n| n.strip_suffix(".seg"))
            .filter_map(TraceRange::parse)
            .collect())
    }

    // ---- LastChecked ----

    pub fn read_last_checked_segment(&self, range: TraceRange) -> Result<Option<LastCheckedSegment>> {
        let path = self.last_path(range);
        let Some(records) = self.read_records(&path)? else {
            return Ok(None);
        };
        LastCheckedSegment::decode(range, &records)
            .map(Some)
            .map_err(|reason| StoreError::Corrupt { path, reason })
    }

    pub fn last_checked_ranges(&self) -> Result<Vec<TraceRange>> {
        Ok(self
            .list_dir(&self.dir.join("last"))?
            .iter()
            .filter_map(|n| n.strip_suffix(".seg"))
            .filter_map(TraceRange::parse)
            .collect())
    }

    // ---- CountTable ----

    pub fn read_counts(&self) -> Result<CountTable> {
        let path = self.count_path();
        let Some(records) = self.read_records(&path)? else {
            return Ok(CountTable::default());
        };
        CountTable::decode(&records).map_err(|reason| StoreError::Corrupt { path, reason })
    }

    // ---- writes ----

    /// Atomically replaces the segment file identified by `contents`.
    /// Identical contents produce a byte-identical file.
    pub fn rewrite_segment(&self, contents: &SegmentContents) -> Result<()> {
        self.rewrite_segment_with(contents, || Ok(()))
    }

    /// [`Store::rewrite_segment`] with a hook that runs after the temporary
    /// file is written and before it is renamed into place; an error from
    /// the hook aborts the rewrite. Used to exercise crash safety.
    pub fn rewrite_segment_with<F>(&self, contents: &SegmentContents, before_rename: F) -> Result<()>
    where
        F: FnOnce() -> io::Result<()>,
    {
        let records = match contents {
            SegmentContents::Index(s) => {
                let mut s = s.clone();
                s.normalize();
                s.encode()
            }
            SegmentContents::Single(s) => {
                let mut s = s.clone();
                s.normalize();
                s.encode()
            }
            SegmentContents::Sequence(s) => s.encode(),
            SegmentContents::LastChecked(s) => s.encode(),
            SegmentContents::Count(c) => c.encode(),
        };
        let bytes = encode_segment(&records, self.config().compression);
        write_atomic_with(&self.segment_path(contents), &bytes, before_rename)
    }

    /// Paths of every segment file, sorted.
    pub fn segment_files(&self) -> Result<Vec<PathBuf>> {
        fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
            for entry in fs::read_dir(dir)? {
                let p = entry?.path();
                if p.is_dir() {
                    walk(&p, out)?;
                } else if p.extension().is_some_and(|e| e == "seg") {
                    out.push(p);
                }
            }
            Ok(())
        }
        let mut out = Vec::new();
        walk(&self.dir, &mut out).map_err(|source| StoreError::Io { path: self.dir.clone(), source })?;
        out.sort();
        Ok(out)
    }
}

/// Interval of length `span_ms` holding `ts`, aligned to `origin`.
pub fn interval_for(ts: Timestamp, origin: Timestamp, span_ms: i64) -> Interval {
    let k = (ts - origin).div_euclid(span_ms);
    let start = origin + k * span_ms;
    Interval { start, end: start + span_ms }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: StoreMode) -> StoreConfig {
        StoreConfig { mode, ..StoreConfig::new("main") }
    }

    #[test]
    fn open_empty_creates_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path(), "main").unwrap();
        assert!(store.dir().join("manifest.json").exists());
        assert!(store.trace_ids().is_empty());
        assert!(store.read_counts().unwrap().records.is_empty());
    }

    #[test]
    fn reopen_same_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open_with(dir.path(), cfg(StoreMode::Ts)).unwrap();
        s.register_traces([&TraceId::new("t1")]).unwrap();
        let s2 = Store::open_with(dir.path(), cfg(StoreMode::Ts)).unwrap();
        assert_eq!(s2.trace_ids(), &[TraceId::new("t1")]);
    }

    #[test]
    fn mode_change_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        Store::open_with(dir.path(), cfg(StoreMode::Pos)).unwrap();
        let err = Store::open_with(dir.path(), cfg(StoreMode::Ts)).unwrap_err();
        assert!(matches!(err, StoreError::ConfigMismatch { field: "mode", .. }));
        let err = Store::open_with(dir.path(), StoreConfig { lookback: 3, ..cfg(StoreMode::Pos) }).unwrap_err();
        assert!(matches!(err, StoreError::ConfigMismatch { field: "lookback", .. }));
    }

    #[test]
    fn open_existing_requires_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Store::open_existing(dir.path(), "main"), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn invalid_config_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bad = StoreConfig { trace_split: 0, ..StoreConfig::new("main") };
        assert!(matches!(Store::open_with(dir.path(), bad), Err(StoreError::InvalidConfig(_))));
        assert!(Store::open_with(dir.path(), StoreConfig::new("a/b")).is_err());
    }

    #[test]
    fn writer_lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path(), "main").unwrap();
        let lock = s.lock_writer().unwrap();
        assert!(matches!(s.lock_writer(), Err(StoreError::Locked(_))));
        drop(lock);
        s.lock_writer().unwrap();
    }

    #[test]
    fn interval_alignment() {
        let day = DAY_MS;
        assert_eq!(interval_for(3 * day, 0, 30 * day), Interval { start: 0, end: 30 * day });
        assert_eq!(interval_for(6 * day, 0, 5 * day), Interval { start: 5 * day, end: 10 * day });
        assert_eq!(interval_for(-1, 0, day), Interval { start: -day, end: 0 });
    }

    #[test]
    fn rewrite_is_deterministic_and_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open_with(dir.path(), cfg(StoreMode::Ts)).unwrap();
        let interval = Interval { start: 0, end: DAY_MS };
        let mut seg = IndexTableSegment::new(interval, "A");
        seg.entries.insert(EtPair::new("A", "B"), vec![IndexedPair::new("t2", 5, 6), IndexedPair::new("t1", 1, 2)]);
        s.rewrite_segment(&SegmentContents::Index(seg.clone())).unwrap();
        let path = s.index_path(interval, "A");
        let first = fs::read(&path).unwrap();
        s.rewrite_segment(&SegmentContents::Index(seg.clone())).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);

        seg.entries.get_mut(&EtPair::new("A", "B")).unwrap().push(IndexedPair::new("t1", 3, 4));
        s.rewrite_segment(&SegmentContents::Index(seg)).unwrap();
        let list = s.read_inverted_list(&EtPair::new("A", "B"), None).unwrap();
        assert_eq!(
            list,
            vec![IndexedPair::new("t1", 1, 2), IndexedPair::new("t1", 3, 4), IndexedPair::new("t2", 5, 6)]
        );
    }

    #[test]
    fn crash_before_rename_keeps_old_segment() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open_with(dir.path(), cfg(StoreMode::Ts)).unwrap();
        let interval = Interval { start: 0, end: DAY_MS };
        let mut seg = IndexTableSegment::new(interval, "A");
        seg.entries.insert(EtPair::new("A", "B"), vec![IndexedPair::new("t1", 1, 2)]);
        s.rewrite_segment(&SegmentContents::Index(seg.clone())).unwrap();
        let before = fs::read(s.index_path(interval, "A")).unwrap();

        seg.entries.get_mut(&EtPair::new("A", "B")).unwrap().push(IndexedPair::new("t9", 7, 8));
        let res = s.rewrite_segment_with(&SegmentContents::Index(seg), || Err(io::Error::other("injected crash")));
        assert!(res.is_err());
        assert_eq!(fs::read(s.index_path(interval, "A")).unwrap(), before);
        assert_eq!(s.read_inverted_list(&EtPair::new("A", "B"), None).unwrap().len(), 1);
    }

    #[test]
    fn window_selects_segments() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open_with(dir.path(), cfg(StoreMode::Ts)).unwrap();
        let day0 = Interval { start: 0, end: DAY_MS };
        let day1 = Interval { start: DAY_MS, end: 2 * DAY_MS };
        for (interval, pair) in [(day0, IndexedPair::new("t1", 1, 2)), (day1, IndexedPair::new("t1", 3, DAY_MS + 5))] {
            let mut seg = IndexTableSegment::new(interval, "A");
            seg.entries.insert(EtPair::new("A", "B"), vec![pair]);
            s.rewrite_segment(&SegmentContents::Index(seg)).unwrap();
        }
        let et = EtPair::new("A", "B");
        assert_eq!(s.read_inverted_list(&et, None).unwrap().len(), 2);
        let only2 = s.read_inverted_list(&et, Some((DAY_MS + 1, 2 * DAY_MS))).unwrap();
        assert_eq!(only2, vec![IndexedPair::new("t1", 3, DAY_MS + 5)]);
        assert!(s.read_inverted_list(&EtPair::new("Z", "Z"), None).unwrap().is_empty());
    }

    #[test]
    fn sequences_across_partitions() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open_with(dir.path(), StoreConfig { trace_split: 1, ..cfg(StoreMode::Ts) }).unwrap();
        let t1 = Trace::from_types("t1", &[("A", 1), ("B", 2)]);
        let t2 = Trace::from_types("t2", &[("C", 3)]);
        s.register_traces([&t1.trace_id, &t2.trace_id]).unwrap();
        for t in [&t1, &t2] {
            let range = s.trace_range(&t.trace_id).unwrap();
            let seg = SequenceTableSegment { range, entries: BTreeMap::from([(t.trace_id.clone(), t.clone())]) };
            s.rewrite_segment(&SegmentContents::Sequence(seg)).unwrap();
        }
        assert_eq!(s.sequence_ranges().unwrap().len(), 2);
        let got = s.read_sequences([&t1.trace_id, &t2.trace_id, &TraceId::new("t99")]).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[&t1.trace_id], t1);
        assert_eq!(got[&t2.trace_id], t2);
    }
}
