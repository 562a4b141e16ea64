//! Incremental ingest: append new events to the SequenceTable and
//! SingleTable, extract only the event pairs that are new since the last
//! batch (guided by LastChecked), assign them to time partitions and refresh
//! the CountTable.

pub mod input;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{validate_trace, EtPair, Event, EventPair, Timestamp, Trace, TraceId, TypeInterner};
use crate::storage::{
    interval_for, CountRecord, CountTable, IndexTableSegment, IndexedPair, Interval, LastCheckedSegment,
    SegmentContents, SequenceTableSegment, SingleEntry, SingleTableSegment, Store, StoreError, StoreMode, TraceRange,
    DAY_MS,
};

pub use input::{parse_log, InputFormat, LogRecord};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("batch already indexed: trace {trace} already holds these events")]
    AlreadyIndexed { trace: TraceId },
    #[error("out-of-order event for trace {trace}: ts {ts} is not after stored ts {stored_max}")]
    OutOfOrder { trace: TraceId, ts: Timestamp, stored_max: Timestamp },
    #[error("trace {trace} has two events at ts {ts}")]
    DuplicateTimestamp { trace: TraceId, ts: Timestamp },
}

/// A batch of raw log records, possibly spanning many traces and possibly
/// extending traces indexed by earlier batches.
#[derive(Clone, Debug, Default)]
pub struct IngestBatch {
    pub events: Vec<LogRecord>,
}

impl IngestBatch {
    pub fn new(events: Vec<LogRecord>) -> Self {
        IngestBatch { events }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub traces_touched: u64,
    pub events_ingested: u64,
    pub pairs_created: u64,
    pub segments_rewritten: u64,
    pub wall_time_ms: u64,
}

/// Pairs `firsts` with `seconds` for one et-pair of one trace.
///
/// Values before `ts_last` are dropped from both lists. Each remaining first
/// value takes the earliest later second value within `lookback_ms`, and a
/// first value may only start a pair after the previous pair's second value,
/// so pairs never overlap. When both lists hold the same type (identical
/// lists) the previous pair's second value may itself start the next pair.
/// Both lists must be strictly increasing.
pub fn extract_pairs(firsts: &[Timestamp], seconds: &[Timestamp], ts_last: Option<Timestamp>, lookback_ms: i64) -> Vec<(Timestamp, Timestamp)> {
    let same_type = firsts == seconds;
    chain_pairs(firsts, seconds, |t| *t, ts_last, lookback_ms, same_type)
        .into_iter()
        .map(|(a, b)| (*a, *b))
        .collect()
}

fn chain_pairs<'a, T>(
    firsts: &'a [T],
    seconds: &'a [T],
    ts: impl Fn(&T) -> Timestamp,
    ts_last: Option<Timestamp>,
    lookback_ms: i64,
    same_type: bool,
) -> Vec<(&'a T, &'a T)> {
    debug_assert!(firsts.windows(2).all(|w| ts(&w[0]) < ts(&w[1])), "firsts not sorted");
    debug_assert!(seconds.windows(2).all(|w| ts(&w[0]) < ts(&w[1])), "seconds not sorted");
    let floor = ts_last.unwrap_or(Timestamp::MIN);
    let firsts = &firsts[firsts.partition_point(|x| ts(x) < floor)..];
    let seconds = &seconds[seconds.partition_point(|x| ts(x) < floor)..];

    let mut out = Vec::new();
    let mut prev_second: Option<Timestamp> = None;
    let mut j = 0;
    for f in firsts {
        let tf = ts(f);
        if let Some(p) = prev_second {
            if tf < p || (tf == p && !same_type) {
                continue;
            }
        }
        while j < seconds.len() && ts(&seconds[j]) <= tf {
            j += 1;
        }
        let Some(s) = seconds.get(j) else { break };
        if ts(s) - tf <= lookback_ms {
            out.push((f, s));
            prev_second = Some(ts(s));
        }
    }
    out
}

/// All new pairs of one trace, ordered by et-pair then first timestamp.
///
/// `last_checked` holds the trace's LastChecked entries. When `fresh_types`
/// is given, only et-pairs whose second type is in it are examined: a pair
/// can only be new if its second event is new, since new events always
/// follow every stored one.
pub fn extract_pairs_for_trace(
    trace: &Trace,
    last_checked: &HashMap<EtPair, Timestamp>,
    lookback_ms: i64,
) -> Vec<(EtPair, EventPair)> {
    extract_pairs_filtered(trace, last_checked, lookback_ms, None)
}

fn extract_pairs_filtered(
    trace: &Trace,
    last_checked: &HashMap<EtPair, Timestamp>,
    lookback_ms: i64,
    fresh_types: Option<&BTreeSet<String>>,
) -> Vec<(EtPair, EventPair)> {
    let mut interner = TypeInterner::new();
    let mut by_type: Vec<Vec<(Timestamp, u32)>> = Vec::new();
    for ev in &trace.events {
        let id = interner.intern(&ev.event_type) as usize;
        if id == by_type.len() {
            by_type.push(Vec::new());
        }
        by_type[id].push((ev.ts, ev.pos));
    }
    let mut ids: Vec<u32> = (0..interner.len() as u32).collect();
    ids.sort_by(|a, b| interner.name(*a).cmp(interner.name(*b)));

    let mut out = Vec::new();
    for &a in &ids {
        for &b in &ids {
            let second_name = interner.name(b);
            if fresh_types.is_some_and(|f| !f.contains(second_name)) {
                continue;
            }
            let et = EtPair::new(interner.name(a), second_name);
            let ts_last = last_checked.get(&et).copied();
            let pairs = chain_pairs(&by_type[a as usize], &by_type[b as usize], |x| x.0, ts_last, lookback_ms, a == b);
            for (f, s) in pairs {
                out.push((
                    et.clone(),
                    EventPair {
                        trace_id: trace.trace_id.clone(),
                        first_ts: f.0,
                        second_ts: s.0,
                        first_pos: f.1,
                        second_pos: s.1,
                    },
                ));
            }
        }
    }
    out
}

/// Tags each pair with the interval holding its second event.
pub fn assign_intervals(
    pairs: Vec<(EtPair, EventPair)>,
    split_every_days: u32,
    origin_ts: Timestamp,
) -> Vec<(Interval, EtPair, EventPair)> {
    let span = split_every_days as i64 * DAY_MS;
    pairs
        .into_iter()
        .map(|(et, p)| (interval_for(p.second_ts, origin_ts, span), et, p))
        .collect()
}

/// Folds new pairs into the per et-pair statistics.
pub fn update_counts<'a>(table: &mut CountTable, new_pairs: impl IntoIterator<Item = (&'a EtPair, &'a EventPair)>) {
    for (et, p) in new_pairs {
        let d = p.duration();
        table
            .records
            .entry(et.clone())
            .and_modify(|c| c.absorb(d))
            .or_insert_with(|| CountRecord::from_durations(et.clone(), &[d]).expect("one duration"));
    }
}

/// Ingests one batch. The batch is checked in full before anything is
/// written, so a rejected batch leaves the store untouched.
pub fn ingest(store: &mut Store, batch: &IngestBatch) -> Result<IngestReport, IngestError> {
    let started = Instant::now();
    if batch.events.is_empty() {
        return Ok(IngestReport::default());
    }
    let _lock = store.lock_writer()?;

    // Group by trace, keeping first-appearance order, and sort each group.
    let mut order: Vec<TraceId> = Vec::new();
    let mut groups: HashMap<TraceId, Vec<&LogRecord>> = HashMap::new();
    for rec in &batch.events {
        let id = TraceId::new(&rec.trace_id);
        groups
            .entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push(rec);
    }
    for g in groups.values_mut() {
        g.sort_by_key(|r| r.ts);
    }

    let stored = store.read_sequences(order.iter())?;
    let mut updated: Vec<(Trace, usize)> = Vec::with_capacity(order.len());
    for id in &order {
        let recs = &groups[id];
        let mut trace = stored.get(id).cloned().unwrap_or_else(|| Trace { trace_id: id.clone(), events: Vec::new() });
        let old_len = trace.events.len();
        if let Some(max) = trace.max_ts() {
            if recs[0].ts <= max {
                let all_present = recs.iter().all(|r| {
                    trace.events.iter().any(|e| e.ts == r.ts && e.event_type == r.event_type)
                });
                return Err(if all_present {
                    IngestError::AlreadyIndexed { trace: id.clone() }
                } else {
                    IngestError::OutOfOrder { trace: id.clone(), ts: recs[0].ts, stored_max: max }
                });
            }
        }
        for r in recs {
            let pos = trace.events.len() as u32 + 1;
            trace.events.push(Event::new(id.clone(), r.event_type.clone(), r.ts, pos));
        }
        if let Err(v) = validate_trace(&trace) {
            let ts = trace.events[v.pos as usize - 1].ts;
            return Err(IngestError::DuplicateTimestamp { trace: id.clone(), ts });
        }
        updated.push((trace, old_len));
    }

    if store.origin().is_none() {
        let min_ts = batch.events.iter().map(|r| r.ts).min().expect("non-empty batch");
        store.set_origin(min_ts.div_euclid(DAY_MS) * DAY_MS)?;
    }
    store.register_traces(order.iter())?;
    let origin = store.origin().expect("origin set");
    let config = store.config().clone();
    let split_ms = config.split_ms();
    let mut segments_rewritten = 0u64;

    // SequenceTable.
    let mut by_range: BTreeMap<TraceRange, Vec<&Trace>> = BTreeMap::new();
    for (t, _) in &updated {
        by_range.entry(store.trace_range(&t.trace_id).expect("registered")).or_default().push(t);
    }
    for (range, traces) in &by_range {
        let mut seg = store
            .read_sequence_segment(*range)?
            .unwrap_or(SequenceTableSegment { range: *range, entries: BTreeMap::new() });
        for t in traces {
            seg.entries.insert(t.trace_id.clone(), (*t).clone());
        }
        store.rewrite_segment(&SegmentContents::Sequence(seg))?;
        segments_rewritten += 1;
    }

    // SingleTable.
    let mut singles: BTreeMap<(Interval, &str), Vec<SingleEntry>> = BTreeMap::new();
    for (t, old_len) in &updated {
        for e in &t.events[*old_len..] {
            singles
                .entry((interval_for(e.ts, origin, split_ms), e.event_type.as_str()))
                .or_default()
                .push(SingleEntry { trace_id: e.trace_id.clone(), ts: e.ts, pos: e.pos });
        }
    }
    for ((interval, ty), entries) in singles {
        let mut seg = store.read_single_segment(interval, ty)?.unwrap_or(SingleTableSegment {
            interval,
            event_type: ty.to_string(),
            entries: Vec::new(),
        });
        seg.entries.extend(entries);
        store.rewrite_segment(&SegmentContents::Single(seg))?;
        segments_rewritten += 1;
    }

    // LastChecked drives extraction; load the partitions of touched traces.
    let mut last_segments: BTreeMap<TraceRange, LastCheckedSegment> = BTreeMap::new();
    for range in by_range.keys() {
        let seg = store
            .read_last_checked_segment(*range)?
            .unwrap_or(LastCheckedSegment { range: *range, entries: BTreeMap::new() });
        last_segments.insert(*range, seg);
    }
    let mut per_trace_last: HashMap<&TraceId, HashMap<EtPair, Timestamp>> = HashMap::new();
    for seg in last_segments.values() {
        for ((et, trace), ts) in &seg.entries {
            if groups.contains_key(trace) {
                per_trace_last.entry(trace).or_default().insert(et.clone(), *ts);
            }
        }
    }
    let empty = HashMap::new();
    let lookback_ms = config.lookback_ms();
    let new_pairs: Vec<(EtPair, EventPair)> = updated
        .par_iter()
        .map(|(t, old_len)| {
            let last = per_trace_last.get(&t.trace_id).unwrap_or(&empty);
            let fresh: BTreeSet<String> = t.events[*old_len..].iter().map(|e| e.event_type.clone()).collect();
            extract_pairs_filtered(t, last, lookback_ms, Some(&fresh))
        })
        .flatten()
        .collect();

    for (et, p) in &new_pairs {
        let range = store.trace_range(&p.trace_id).expect("registered");
        let slot = last_segments
            .get_mut(&range)
            .expect("loaded")
            .entries
            .entry((et.clone(), p.trace_id.clone()))
            .or_insert(p.second_ts);
        *slot = (*slot).max(p.second_ts);
    }
    for seg in last_segments.into_values() {
        store.rewrite_segment(&SegmentContents::LastChecked(seg))?;
        segments_rewritten += 1;
    }

    // CountTable uses millisecond durations regardless of mode.
    let mut counts = store.read_counts()?;
    update_counts(&mut counts, new_pairs.iter().map(|(e, p)| (e, p)));

    // IndexTable.
    let tagged = assign_intervals(new_pairs, config.split_every_days, origin);
    let pairs_created = tagged.len() as u64;
    let mut by_segment: BTreeMap<(Interval, String), Vec<(EtPair, IndexedPair)>> = BTreeMap::new();
    for (interval, et, p) in tagged {
        let stored = match config.mode {
            StoreMode::Pos => IndexedPair { trace_id: p.trace_id, first: p.first_pos as i64, second: p.second_pos as i64 },
            StoreMode::Ts => IndexedPair { trace_id: p.trace_id, first: p.first_ts, second: p.second_ts },
        };
        by_segment.entry((interval, et.first.clone())).or_default().push((et, stored));
    }
    for ((interval, first), items) in by_segment {
        let mut seg = store
            .read_index_segment(interval, &first)?
            .unwrap_or_else(|| IndexTableSegment::new(interval, first.clone()));
        for (et, p) in items {
            seg.entries.entry(et).or_default().push(p);
        }
        store.rewrite_segment(&SegmentContents::Index(seg))?;
        segments_rewritten += 1;
    }
    if pairs_created > 0 {
        store.rewrite_segment(&SegmentContents::Count(counts))?;
        segments_rewritten += 1;
    }

    Ok(IngestReport {
        traces_touched: updated.len() as u64,
        events_ingested: batch.events.len() as u64,
        pairs_created,
        segments_rewritten,
        wall_time_ms: started.elapsed().as_millis() as u64,
    })
}
