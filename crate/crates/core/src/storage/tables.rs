//! In-memory forms of the five tables and their record layouts.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::format::{RecordReader, RecordWriter};
use crate::model::{EtPair, Event, Timestamp, Trace, TraceId};

/// Half-open time interval `[start, end)` in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[derive(Default)]
pub struct Interval {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Interval {
    pub fn contains(&self, ts: Timestamp) -> bool {
        self.start <= ts && ts < self.end
    }

    /// Whether the interval meets the inclusive window `[a, b]`.
    pub fn intersects(&self, window: (Timestamp, Timestamp)) -> bool {
        self.start <= window.1 && window.0 < self.end
    }

    pub fn dir_name(&self) -> String {
        format!("{}_{}", self.start, self.end)
    }

    pub fn parse(name: &str) -> Option<Interval> {
        let (s, e) = name.split_once('_')?;
        Some(Interval { start: s.parse().ok()?, end: e.parse().ok()? })
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// Half-open range of trace ordinals `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TraceRange {
    pub lo: u64,
    pub hi: u64,
}

impl TraceRange {
    pub fn for_ordinal(ordinal: u64, trace_split: u64) -> Self {
        let lo = ordinal / trace_split * trace_split;
        TraceRange { lo, hi: lo + trace_split }
    }

    pub fn contains(&self, ordinal: u64) -> bool {
        self.lo <= ordinal && ordinal < self.hi
    }

    pub fn file_stem(&self) -> String {
        format!("{}-{}", self.lo, self.hi)
    }

    pub fn parse(stem: &str) -> Option<TraceRange> {
        let (lo, hi) = stem.split_once('-')?;
        Some(TraceRange { lo: lo.parse().ok()?, hi: hi.parse().ok()? })
    }
}

/// An event pair as persisted: two values in the store's unit (positions in
/// `pos` mode, milliseconds in `ts` mode).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IndexedPair {
    pub trace_id: TraceId,
    pub first: i64,
    pub second: i64,
}

impl IndexedPair {
    pub fn new(trace_id: impl Into<TraceId>, first: i64, second: i64) -> Self {
        IndexedPair { trace_id: trace_id.into(), first, second }
    }
}

fn pair_order(a: &IndexedPair, b: &IndexedPair) -> std::cmp::Ordering {
    (&a.trace_id, a.second, a.first).cmp(&(&b.trace_id, b.second, b.first))
}

pub(crate) fn sort_pairs(pairs: &mut [IndexedPair]) {
    pairs.sort_by(pair_order);
}

/// IndexTable partition: one time interval, one first event type.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct IndexTableSegment {
    pub interval: Interval,
    pub partition_key: String,
    pub entries: BTreeMap<EtPair, Vec<IndexedPair>>,
}


impl IndexTableSegment {
    pub fn new(interval: Interval, partition_key: impl Into<String>) -> Self {
        IndexTableSegment { interval, partition_key: partition_key.into(), entries: BTreeMap::new() }
    }

    pub fn pair_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub(crate) fn normalize(&mut self) {
        self.entries.retain(|_, v| !v.is_empty());
        for list in self.entries.values_mut() {
            sort_pairs(list);
            list.dedup();
        }
    }

    /// One record per `(second type, trace)`:
    /// `second: str, trace: str, n: u32, n × (first: i64, second: i64)`.
    pub(crate) fn encode(&self) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        for (et, list) in &self.entries {
            for chunk in list.chunk_by(|a, b| a.trace_id == b.trace_id) {
                let mut w = RecordWriter::new();
                w.str(&et.second).str(chunk[0].trace_id.as_str()).u32(chunk.len() as u32);
                for p in chunk {
                    w.i64(p.first).i64(p.second);
                }
                out.push(w.finish());
            }
        }
        out
    }

    pub(crate) fn decode(
        interval: Interval,
        partition_key: &str,
        records: &[Vec<u8>],
        only_second: Option<&str>,
    ) -> Result<Self, String> {
        let mut seg = IndexTableSegment::new(interval, partition_key);
        let mut trace_cache: Option<TraceId> = None;
        for rec in records {
            let mut r = RecordReader::new(rec);
            let second = r.str()?;
            if only_second.is_some_and(|want| want != second) {
                continue;
            }
            let trace = r.str()?;
            let trace_id = match &trace_cache {
                Some(t) if t.as_str() == trace => t.clone(),
                _ => {
                    let t = TraceId::new(trace);
                    trace_cache = Some(t.clone());
                    t
                }
            };
            let n = r.u32()? as usize;
            let list = seg.entries.entry(EtPair::new(partition_key, second)).or_default();
            for _ in 0..n {
                let first = r.i64()?;
                let second = r.i64()?;
                list.push(IndexedPair { trace_id: trace_id.clone(), first, second });
            }
            if !r.is_done() {
                return Err("trailing bytes in index record".into());
            }
        }
        Ok(seg)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SingleEntry {
    pub trace_id: TraceId,
    pub ts: Timestamp,
    pub pos: u32,
}

/// SingleTable partition: one time interval, one event type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SingleTableSegment {
    pub interval: Interval,
    pub event_type: String,
    pub entries: Vec<SingleEntry>,
}

impl SingleTableSegment {
    pub(crate) fn normalize(&mut self) {
        self.entries.sort();
        self.entries.dedup();
    }

    /// One record per trace: `trace: str, n: u32, n × (ts: i64, pos: u32)`.
    pub(crate) fn encode(&self) -> Vec<Vec<u8>> {
        self.entries
            .chunk_by(|a, b| a.trace_id == b.trace_id)
            .map(|chunk| {
                let mut w = RecordWriter::new();
                w.str(chunk[0].trace_id.as_str()).u32(chunk.len() as u32);
                for e in chunk {
                    w.i64(e.ts).u32(e.pos);
                }
                w.finish()
            })
            .collect()
    }

    pub(crate) fn decode(interval: Interval, event_type: &str, records: &[Vec<u8>]) -> Result<Self, String> {
        let mut entries = Vec::new();
        for rec in records {
            let mut r = RecordReader::new(rec);
            let trace_id = TraceId::new(r.str()?);
            let n = r.u32()?;
            for _ in 0..n {
                let ts = r.i64()?;
                let pos = r.u32()?;
                entries.push(SingleEntry { trace_id: trace_id.clone(), ts, pos });
            }
        }
        Ok(SingleTableSegment { interval, event_type: event_type.to_string(), entries })
    }
}

/// SequenceTable partition: full traces for one ordinal range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceTableSegment {
    pub range: TraceRange,
    pub entries: BTreeMap<TraceId, Trace>,
}

impl SequenceTableSegment {
    /// One record per trace: `trace: str, n: u32, n × (type: str, ts: i64)`.
    /// Positions are implied by order.
    pub(crate) fn encode(&self) -> Vec<Vec<u8>> {
        self.entries
            .values()
            .map(|t| {
                let mut w = RecordWriter::new();
                w.str(t.trace_id.as_str()).u32(t.events.len() as u32);
                for e in &t.events {
                    w.str(&e.event_type).i64(e.ts);
                }
                w.finish()
            })
            .collect()
    }

    pub(crate) fn decode(range: TraceRange, records: &[Vec<u8>]) -> Result<Self, String> {
        let mut entries = BTreeMap::new();
        for rec in records {
            let mut r = RecordReader::new(rec);
            let trace_id = TraceId::new(r.str()?);
            let n = r.u32()?;
            let mut events = Vec::with_capacity(n as usize);
            for i in 0..n {
                let ty = r.str()?;
                let ts = r.i64()?;
                events.push(Event::new(trace_id.clone(), ty, ts, i + 1));
            }
            entries.insert(trace_id.clone(), Trace { trace_id, events });
        }
        Ok(SequenceTableSegment { range, entries })
    }
}

/// LastChecked partition: per `(et-pair, trace)` timestamp of the latest
/// completed pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LastCheckedSegment {
    pub range: TraceRange,
    pub entries: BTreeMap<(EtPair, TraceId), Timestamp>,
}

impl LastCheckedSegment {
    /// One record per trace: `trace: str, n: u32, n × (first: str, second: str, ts_last: i64)`.
    pub(crate) fn encode(&self) -> Vec<Vec<u8>> {
        let mut by_trace: BTreeMap<&TraceId, Vec<(&EtPair, Timestamp)>> = BTreeMap::new();
        for ((et, trace), ts) in &self.entries {
            by_trace.entry(trace).or_default().push((et, *ts));
        }
        by_trace
            .into_iter()
            .map(|(trace, items)| {
                let mut w = RecordWriter::new();
                w.str(trace.as_str()).u32(items.len() as u32);
                for (et, ts) in items {
                    w.str(&et.first).str(&et.second).i64(ts);
                }
                w.finish()
            })
            .collect()
    }

    pub(crate) fn decode(range: TraceRange, records: &[Vec<u8>]) -> Result<Self, String> {
        let mut entries = BTreeMap::new();
        for rec in records {
            let mut r = RecordReader::new(rec);
            let trace_id = TraceId::new(r.str()?);
            let n = r.u32()?;
            for _ in 0..n {
                let first = r.str()?;
                let second = r.str()?;
                let ts = r.i64()?;
                entries.insert((EtPair::new(first, second), trace_id.clone()), ts);
            }
        }
        Ok(LastCheckedSegment { range, entries })
    }
}

/// Per et-pair completion statistics. Durations are milliseconds in both
/// storage modes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRecord {
    pub et_pair: EtPair,
    pub total_completions: u64,
    pub sum_durations: i64,
    pub min_duration: i64,
    pub max_duration: i64,
}

impl CountRecord {
    pub fn from_durations(et_pair: EtPair, durations: &[i64]) -> Option<Self> {
        let min = *durations.iter().min()?;
        let max = *durations.iter().max()?;
        Some(CountRecord {
            et_pair,
            total_completions: durations.len() as u64,
            sum_durations: durations.iter().sum(),
            min_duration: min,
            max_duration: max,
        })
    }

    pub fn absorb(&mut self, duration: i64) {
        self.total_completions += 1;
        self.sum_durations += duration;
        self.min_duration = self.min_duration.min(duration);
        self.max_duration = self.max_duration.max(duration);
    }

    pub fn mean_duration(&self) -> f64 {
        if self.total_completions == 0 {
            0.0
        } else {
            self.sum_durations as f64 / self.total_completions as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CountTable {
    pub records: BTreeMap<EtPair, CountRecord>,
}

impl CountTable {
    pub fn get(&self, et: &EtPair) -> Option<&CountRecord> {
        self.records.get(et)
    }

    /// `first: str, second: str, total: u64, sum: i64, min: i64, max: i64`.
    pub(crate) fn encode(&self) -> Vec<Vec<u8>> {
        self.records
            .values()
            .map(|c| {
                let mut w = RecordWriter::new();
                w.str(&c.et_pair.first)
                    .str(&c.et_pair.second)
                    .u64(c.total_completions)
                    .i64(c.sum_durations)
                    .i64(c.min_duration)
                    .i64(c.max_duration);
                w.finish()
            })
            .collect()
    }

    pub(crate) fn decode(records: &[Vec<u8>]) -> Result<Self, String> {
        let mut out = CountTable::default();
        for rec in records {
            let mut r = RecordReader::new(rec);
            let et = EtPair::new(r.str()?, r.str()?);
            let c = CountRecord {
                et_pair: et.clone(),
                total_completions: r.u64()?,
                sum_durations: r.i64()?,
                min_duration: r.i64()?,
                max_duration: r.i64()?,
            };
            out.records.insert(et, c);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_names_round_trip() {
        let i = Interval { start: -86_400_000, end: 0 };
        assert_eq!(Interval::parse(&i.dir_name()), Some(i));
        assert!(i.intersects((-1, 5)));
        assert!(!i.intersects((0, 5)));
    }

    #[test]
    fn trace_ranges() {
        assert_eq!(TraceRange::for_ordinal(0, 10), TraceRange { lo: 0, hi: 10 });
        assert_eq!(TraceRange::for_ordinal(25, 10), TraceRange { lo: 20, hi: 30 });
        let r = TraceRange { lo: 20, hi: 30 };
        assert_eq!(TraceRange::parse(&r.file_stem()), Some(r));
    }

    #[test]
    fn index_segment_filters_on_decode() {
        let mut seg = IndexTableSegment::new(Interval { start: 0, end: 10 }, "A");
        seg.entries.insert(EtPair::new("A", "B"), vec![IndexedPair::new("t1", 1, 2)]);
        seg.entries.insert(EtPair::new("A", "C"), vec![IndexedPair::new("t1", 1, 3), IndexedPair::new("t2", 4, 5)]);
        let recs = seg.encode();
        let all = IndexTableSegment::decode(seg.interval, "A", &recs, None).unwrap();
        assert_eq!(all, seg);
        let only = IndexTableSegment::decode(seg.interval, "A", &recs, Some("C")).unwrap();
        assert_eq!(only.entries.len(), 1);
        assert_eq!(only.pair_count(), 2);
    }

    #[test]
    fn count_record_updates() {
        let mut c = CountRecord::from_durations(EtPair::new("A", "B"), &[10, 30]).unwrap();
        assert_eq!((c.total_completions, c.sum_durations, c.min_duration, c.max_duration), (2, 40, 10, 30));
        assert_eq!(c.mean_duration(), 20.0);
        c.absorb(5);
        assert_eq!(c.min_duration, 5);
    }
}
