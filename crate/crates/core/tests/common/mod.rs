#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use logsieve::indexer::{ingest, IngestBatch, LogRecord};
use logsieve::model::{Constraint, ConstraintKind, ConstraintMode, EtPair, Event, Operator, QueryEvent, Trace, TraceId};
use logsieve::planner::{GroupItem, Query, Window};
use logsieve::storage::{Store, StoreConfig, StoreMode};
use rand::seq::IndexedRandom;
use rand::Rng;

pub const T0: i64 = 1_700_000_000_000;
pub const LETTERS: [&str; 6] = ["A", "B", "C", "D", "E", "F"];

/// Up to `max_traces` traces of up to `max_len` events over the first
/// `alphabet` letters, numeric trace ids, strictly increasing timestamps.
pub fn random_log(rng: &mut impl Rng, max_traces: usize, max_len: usize, alphabet: usize) -> Vec<LogRecord> {
    let n = rng.random_range(1..=max_traces);
    let mut out = Vec::new();
    for t in 1..=n {
        let len = rng.random_range(1..=max_len);
        let mut ts = T0 + rng.random_range(0..200);
        for _ in 0..len {
            out.push(LogRecord { trace_id: t.to_string(), event_type: LETTERS[rng.random_range(0..alphabet)].into(), ts });
            ts += rng.random_range(1..=60);
        }
    }
    out
}

/// Traces as the input describes them: events ordered by timestamp and
/// numbered from 1.
pub fn to_traces(records: &[LogRecord]) -> Vec<Trace> {
    let mut by: BTreeMap<&str, Vec<&LogRecord>> = BTreeMap::new();
    for r in records {
        by.entry(&r.trace_id).or_default().push(r);
    }
    by.into_iter()
        .map(|(id, mut rs)| {
            rs.sort_by_key(|r| r.ts);
            Trace {
                trace_id: TraceId::new(id),
                events: rs.iter().enumerate().map(|(i, r)| Event::new(id, r.event_type.as_str(), r.ts, i as u32 + 1)).collect(),
            }
        })
        .collect()
}

pub fn store_with(dir: &Path, config: StoreConfig, batches: &[Vec<LogRecord>]) -> Store {
    let mut store = Store::open_with(dir, config).expect("open store");
    for b in batches {
        ingest(&mut store, &IngestBatch::new(b.clone())).expect("ingest");
    }
    store
}

pub fn config(name: &str, mode: StoreMode) -> StoreConfig {
    StoreConfig { mode, ..StoreConfig::new(name) }
}

fn letter(rng: &mut impl Rng, alphabet: usize) -> &'static str {
    LETTERS[rng.random_range(0..alphabet)]
}

fn random_element(rng: &mut impl Rng, alphabet: usize) -> QueryEvent {
    match rng.random_range(0..20) {
        0..=8 => QueryEvent::simple(letter(rng, alphabet)),
        9..=11 => QueryEvent::new(letter(rng, alphabet), Operator::KleenePlus),
        12..=14 => QueryEvent::new(letter(rng, alphabet), Operator::KleeneStar),
        _ => {
            let a = letter(rng, alphabet);
            let b = letter(rng, alphabet);
            QueryEvent::or(a, &[b])
        }
    }
}

/// A random valid query mixing every operator, constraints, windows,
/// return-all and (rarely) groups.
pub fn random_query(rng: &mut impl Rng, log: &str, alphabet: usize, traces: usize) -> Query {
    loop {
        let positives = rng.random_range(1..=4);
        let mut pattern = Vec::new();
        for p in 0..positives {
            if p > 0 && rng.random_bool(0.2) {
                pattern.push(QueryEvent::new(letter(rng, alphabet), Operator::Negation));
            }
            pattern.push(random_element(rng, alphabet));
        }
        let mut q = Query::new(log, pattern);
        let pos: Vec<usize> = q.pattern.iter().enumerate().filter(|(_, e)| e.is_positive()).map(|(i, _)| i + 1).collect();
        if pos.len() >= 2 && rng.random_bool(0.35) {
            for _ in 0..rng.random_range(1..=2) {
                let a = rng.random_range(0..pos.len() - 1);
                let b = rng.random_range(a + 1..pos.len());
                let (kind, value) = if rng.random_bool(0.6) {
                    (ConstraintKind::Time, rng.random_range(1..=150))
                } else {
                    (ConstraintKind::Gap, rng.random_range(1..=6))
                };
                let mode = if rng.random_bool(0.5) { ConstraintMode::Within } else { ConstraintMode::Atleast };
                q.constraints.push(Constraint::new(kind, mode, value, pos[a], pos[b]));
            }
        }
        if rng.random_bool(0.2) {
            let start = T0 + rng.random_range(0..600);
            q.window = Some(Window { start, end: start + rng.random_range(0..800) });
        }
        q.return_all = rng.random_bool(0.2);
        if rng.random_bool(0.1) {
            let groups = (0..rng.random_range(1..=3))
                .map(|_| {
                    let lo = rng.random_range(1..=traces as u64);
                    let hi = rng.random_range(lo..=traces as u64);
                    let mut g = vec![GroupItem::Range(lo, hi)];
                    if rng.random_bool(0.3) {
                        g.push(GroupItem::Id(rng.random_range(1..=traces).to_string()));
                    }
                    g
                })
                .collect();
            q.groups = Some(groups);
        }
        if q.validate().is_ok() {
            return q;
        }
    }
}

pub type IndexDump = BTreeMap<(i64, i64, EtPair), Vec<(TraceId, i64, i64)>>;

/// Logical contents of the pair tables, independent of file layout.
#[derive(Debug, PartialEq, Eq)]
pub struct TableDump {
    pub index: IndexDump,
    pub last_checked: BTreeMap<(EtPair, TraceId), i64>,
    pub counts: BTreeMap<EtPair, (u64, i64, i64, i64)>,
}

pub fn dump(store: &Store) -> TableDump {
    let mut index = BTreeMap::new();
    for interval in store.index_intervals().unwrap() {
        for key in store.index_partition_keys(interval).unwrap() {
            let seg = store.read_index_segment(interval, &key).unwrap().unwrap();
            for (et, list) in seg.entries {
                let mut v: Vec<(TraceId, i64, i64)> = list.into_iter().map(|p| (p.trace_id, p.first, p.second)).collect();
                v.sort();
                index.insert((interval.start, interval.end, et), v);
            }
        }
    }
    let mut last_checked = BTreeMap::new();
    for range in store.last_checked_ranges().unwrap() {
        if let Some(seg) = store.read_last_checked_segment(range).unwrap() {
            last_checked.extend(seg.entries);
        }
    }
    let counts = store
        .read_counts()
        .unwrap()
        .records
        .into_iter()
        .map(|(k, r)| (k, (r.total_completions, r.sum_durations, r.min_duration, r.max_duration)))
        .collect();
    TableDump { index, last_checked, counts }
}

/// Pairs listed more than once within one inverted list.
pub fn duplicate_pairs(d: &TableDump) -> usize {
    let mut dups = 0;
    let mut seen: BTreeMap<&EtPair, BTreeSet<&(TraceId, i64, i64)>> = BTreeMap::new();
    for ((_, _, et), list) in &d.index {
        let set = seen.entry(et).or_default();
        for p in list {
            if !set.insert(p) {
                dups += 1;
            }
        }
    }
    dups
}

pub fn pick<'a, T>(rng: &mut impl Rng, items: &'a [T]) -> &'a T {
    items.choose(rng).expect("non-empty")
}
