//! Full-scan consistency audit of a log database.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;

use super::{Result, Store, StoreMode};
use crate::model::{EtPair, Timestamp, Trace, TraceId};

#[derive(Clone, Debug, Default, Serialize)]
pub struct AuditReport {
    pub pairs_checked: u64,
    pub singles_checked: u64,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn flag(&mut self, msg: String) {
        // Past a point more messages only hide the first cause.
        if self.violations.len() < 100 {
            self.violations.push(msg);
        }
    }
}

/// Verifies interval containment of IndexTable and SingleTable entries,
/// absence of duplicate pairs, LastChecked = max completion per
/// `(et-pair, trace)`, and CountTable = recomputation from the inverted
/// lists (durations resolved through the SequenceTable in `pos` mode).
pub fn audit(store: &Store) -> Result<AuditReport> {
    let mut report = AuditReport::default();
    let mut traces: HashMap<TraceId, Trace> = HashMap::new();
    for range in store.sequence_ranges()? {
        if let Some(seg) = store.read_sequence_segment(range)? {
            traces.extend(seg.entries);
        }
    }
    let ts_index: HashMap<&TraceId, HashMap<Timestamp, usize>> = traces
        .iter()
        .map(|(id, t)| (id, t.events.iter().enumerate().map(|(i, e)| (e.ts, i)).collect()))
        .collect();

    let mode = store.mode();
    let mut last_seen: BTreeMap<(EtPair, TraceId), Timestamp> = BTreeMap::new();
    let mut durations: BTreeMap<EtPair, Vec<i64>> = BTreeMap::new();
    let mut seen: HashSet<(EtPair, TraceId, i64, i64)> = HashSet::new();

    for interval in store.index_intervals()? {
        for key in store.index_partition_keys(interval)? {
            let Some(seg) = store.read_index_segment(interval, &key)? else { continue };
            for (et, list) in &seg.entries {
                if et.first != seg.partition_key {
                    report.flag(format!("index {interval} {key}: entry {et} in wrong partition"));
                }
                for p in list {
                    report.pairs_checked += 1;
                    let Some(trace) = traces.get(&p.trace_id) else {
                        report.flag(format!("index {et}: unknown trace {}", p.trace_id));
                        continue;
                    };
                    let resolve = |v: i64| -> Option<usize> {
                        match mode {
                            StoreMode::Pos => usize::try_from(v - 1).ok().filter(|&i| i < trace.events.len()),
                            StoreMode::Ts => ts_index[&p.trace_id].get(&v).copied(),
                        }
                    };
                    let (Some(i), Some(j)) = (resolve(p.first), resolve(p.second)) else {
                        report.flag(format!("index {et}: pair {p:?} does not resolve to events"));
                        continue;
                    };
                    let (a, b) = (&trace.events[i], &trace.events[j]);
                    if a.event_type != et.first || b.event_type != et.second || i >= j {
                        report.flag(format!("index {et}: pair {p:?} has wrong types or order"));
                    }
                    if !interval.contains(b.ts) {
                        report.flag(format!("index {et}: pair {p:?} completes at {} outside {interval}", b.ts));
                    }
                    if !seen.insert((et.clone(), p.trace_id.clone(), p.first, p.second)) {
                        report.flag(format!("index {et}: duplicate pair {p:?}"));
                    }
                    let slot = last_seen.entry((et.clone(), p.trace_id.clone())).or_insert(b.ts);
                    *slot = (*slot).max(b.ts);
                    durations.entry(et.clone()).or_default().push(b.ts - a.ts);
                }
            }
        }
    }

    let types = store.event_types()?;
    for interval in store.single_intervals()? {
        for ty in &types {
            let Some(seg) = store.read_single_segment(interval, ty)? else { continue };
            for e in &seg.entries {
                report.singles_checked += 1;
                if !interval.contains(e.ts) {
                    report.flag(format!("single {ty}: {e:?} outside {interval}"));
                }
                let ok = traces
                    .get(&e.trace_id)
                    .and_then(|t| t.events.get((e.pos as usize).checked_sub(1)?))
                    .is_some_and(|ev| ev.ts == e.ts && &ev.event_type == ty);
                if !ok {
                    report.flag(format!("single {ty}: {e:?} disagrees with sequence table"));
                }
            }
        }
    }

    let mut stored_last: BTreeMap<(EtPair, TraceId), Timestamp> = BTreeMap::new();
    for range in store.last_checked_ranges()? {
        if let Some(seg) = store.read_last_checked_segment(range)? {
            for ((et, trace), ts) in seg.entries {
                if store.trace_range(&trace) != Some(range) {
                    report.flag(format!("last-checked ({et},{trace}) stored in wrong range"));
                }
                stored_last.insert((et, trace), ts);
            }
        }
    }
    if stored_last != last_seen {
        let missing = last_seen.iter().find(|(k, v)| stored_last.get(*k) != Some(*v));
        let extra = stored_last.iter().find(|(k, _)| !last_seen.contains_key(*k));
        report.flag(format!(
            "last-checked disagrees with index scan (first mismatch: {:?}, first extra: {:?})",
            missing, extra
        ));
    }

    let counts = store.read_counts()?;
    for (et, ds) in &durations {
        match counts.get(et) {
            None => report.flag(format!("count {et}: missing record")),
            Some(c) => {
                let expect = super::CountRecord::from_durations(et.clone(), ds).expect("non-empty");
                if *c != expect {
                    report.flag(format!("count {et}: stored {c:?}, recomputed {expect:?}"));
                }
            }
        }
    }
    for et in counts.records.keys() {
        if !durations.contains_key(et) {
            report.flag(format!("count {et}: record without pairs"));
        }
    }
    Ok(report)
}
