//! Query planning: derive the et-pairs a query needs, prune traces through
//! the pair index and assemble per-trace event streams for validation.

pub mod query;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

pub use crate::cep::CandidateStream;
use crate::model::{Constraint, ConstraintKind, ConstraintMode, EtPair, Event, Operator, QueryEvent, Timestamp, Trace, TraceId};
use crate::storage::{Store, StoreError, StoreMode};
pub use query::{group_label, ExplainParams, Group, GroupItem, Query, QueryError, Window};

/// Every combination of or-alternatives, with or elements replaced by
/// simple elements of the chosen type.
pub fn expand_or(pattern: &[QueryEvent]) -> Vec<Vec<QueryEvent>> {
    let mut out: Vec<Vec<QueryEvent>> = vec![Vec::new()];
    for e in pattern {
        if e.operator == Operator::Or {
            let mut next = Vec::with_capacity(out.len() * (1 + e.alternatives.len()));
            for prefix in &out {
                for ty in e.accepted_types() {
                    let mut p = prefix.clone();
                    p.push(QueryEvent::simple(ty));
                    next.push(p);
                }
            }
            out = next;
        } else {
            for p in &mut out {
                p.push(e.clone());
            }
        }
    }
    out
}

/// One or-free variant of the pattern.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Alternative {
    /// Types of the elements that must occur, in pattern order.
    pub required: Vec<String>,
    /// Consecutive pairs of `required`.
    pub pairs: BTreeSet<EtPair>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PairSets {
    /// Pairs every matching trace must hold.
    pub true_pairs: BTreeSet<EtPair>,
    /// Pairs whose events are fetched for validation.
    pub all_pairs: BTreeSet<EtPair>,
    pub alternatives: Vec<Alternative>,
}

pub fn compute_pair_sets(pattern: &[QueryEvent], constraints: &[Constraint]) -> PairSets {
    let mut sets = PairSets::default();
    for alt in expand_or(pattern) {
        let mut required = Vec::new();
        for e in &alt {
            match e.operator {
                Operator::Negation | Operator::KleeneStar => {
                    sets.all_pairs.insert(EtPair::diagonal(&e.event_type));
                }
                _ => required.push(e.event_type.clone()),
            }
        }
        let pairs: BTreeSet<EtPair> = required.windows(2).map(|w| EtPair::new(&w[0], &w[1])).collect();
        for e in &alt {
            if e.operator == Operator::KleenePlus {
                sets.all_pairs.insert(EtPair::diagonal(&e.event_type));
            }
        }
        for c in constraints {
            let anchor = match c.mode {
                ConstraintMode::Within => c.i,
                ConstraintMode::Atleast => c.j,
            };
            if let Some(e) = alt.get(anchor - 1) {
                sets.all_pairs.insert(EtPair::diagonal(&e.event_type));
            }
        }
        sets.all_pairs.extend(pairs.iter().cloned());
        sets.alternatives.push(Alternative { required, pairs });
    }
    let mut iter = sets.alternatives.iter();
    if let Some(first) = iter.next() {
        sets.true_pairs = iter.fold(first.pairs.clone(), |acc, a| acc.intersection(&a.pairs).cloned().collect());
    }
    sets
}

/// Types whose every event (inside the window) is fetched from the
/// SingleTable rather than only the events covered by fetched pairs.
pub fn full_fetch_types(query: &Query, sets: &PairSets) -> BTreeSet<String> {
    let mut out: BTreeSet<String> =
        sets.all_pairs.iter().filter(|p| p.is_diagonal()).map(|p| p.first.clone()).collect();
    let pattern = &query.pattern;
    let types_at = |i: usize| pattern[i].accepted_types().into_iter().map(String::from);
    let positive_left = |i: usize| (0..i).rev().find(|&k| pattern[k].is_positive());
    let positive_right = |i: usize| (i + 1..pattern.len()).find(|&k| pattern[k].is_positive());
    for (i, e) in pattern.iter().enumerate() {
        match e.operator {
            Operator::Negation => {
                if let Some(l) = positive_left(i) {
                    out.extend(types_at(l));
                }
            }
            Operator::KleeneStar => {
                for k in [positive_left(i), positive_right(i)].into_iter().flatten() {
                    out.extend(types_at(k));
                }
            }
            _ => {}
        }
    }
    let mandatory: Vec<usize> = (0..pattern.len())
        .filter(|&i| !matches!(pattern[i].operator, Operator::Negation | Operator::KleeneStar))
        .collect();
    if query.window.is_some() {
        let upto = mandatory.first().copied().unwrap_or(pattern.len() - 1);
        for e in pattern.iter().take(upto + 1).filter(|e| e.is_positive()) {
            out.extend(e.accepted_types().into_iter().map(String::from));
        }
    }
    if mandatory.len() < 2 {
        for (i, e) in pattern.iter().enumerate() {
            if e.is_positive() {
                out.extend(types_at(i));
            }
        }
    }
    out
}

/// Window passed to index reads: only timestamps can be compared against
/// segment intervals without resolving positions.
fn read_window(store: &Store, window: Option<Window>) -> Option<(Timestamp, Timestamp)> {
    match store.mode() {
        StoreMode::Ts => window.map(|w| (w.start, w.end)),
        StoreMode::Pos => None,
    }
}

fn traces_with_type(store: &Store, ty: &str, window: Option<Window>) -> Result<BTreeSet<TraceId>, StoreError> {
    Ok(store
        .read_single(ty, window.map(|w| (w.start, w.end)))?
        .into_iter()
        .filter(|e| window.is_none_or(|w| w.contains(e.ts)))
        .map(|e| e.trace_id)
        .collect())
}

fn traces_with_pairs(
    store: &Store,
    pairs: &BTreeSet<EtPair>,
    window: Option<Window>,
    cache: &mut HashMap<EtPair, BTreeSet<TraceId>>,
) -> Result<BTreeSet<TraceId>, StoreError> {
    let counts = store.read_counts()?;
    let mut acc: Option<BTreeSet<TraceId>> = None;
    for et in pairs {
        if counts.get(et).is_none() {
            return Ok(BTreeSet::new());
        }
        if !cache.contains_key(et) {
            let ids = store
                .read_inverted_list(et, read_window(store, window))?
                .into_iter()
                .map(|p| p.trace_id)
                .collect();
            cache.insert(et.clone(), ids);
        }
        let ids = &cache[et];
        acc = Some(match acc {
            None => ids.clone(),
            Some(a) => a.intersection(ids).cloned().collect(),
        });
        if acc.as_ref().is_some_and(|a| a.is_empty()) {
            break;
        }
    }
    Ok(acc.unwrap_or_default())
}

/// Candidate traces: those holding every pair of `true_pairs`. When that
/// set is empty (or-expansion left nothing common), a trace qualifies if it
/// holds every pair of at least one alternative; alternatives with a single
/// required element are looked up in the SingleTable.
pub fn prune(store: &Store, sets: &PairSets, window: Option<Window>) -> Result<BTreeSet<TraceId>, StoreError> {
    let mut cache = HashMap::new();
    if !sets.true_pairs.is_empty() {
        return traces_with_pairs(store, &sets.true_pairs, window, &mut cache);
    }
    let mut out = BTreeSet::new();
    for alt in &sets.alternatives {
        let ids = if alt.pairs.is_empty() {
            match alt.required.first() {
                Some(ty) => traces_with_type(store, ty, window)?,
                None => BTreeSet::new(),
            }
        } else {
            traces_with_pairs(store, &alt.pairs, window, &mut cache)?
        };
        out.extend(ids);
    }
    Ok(out)
}

/// Traces containing every type that must occur in at least one
/// alternative. Used when pair-based pruning cannot apply.
pub fn prune_by_types(store: &Store, sets: &PairSets, window: Option<Window>) -> Result<BTreeSet<TraceId>, StoreError> {
    let mut by_type: HashMap<&str, BTreeSet<TraceId>> = HashMap::new();
    for alt in &sets.alternatives {
        for ty in &alt.required {
            if !by_type.contains_key(ty.as_str()) {
                by_type.insert(ty, traces_with_type(store, ty, window)?);
            }
        }
    }
    let mut out = BTreeSet::new();
    for alt in &sets.alternatives {
        let mut acc: Option<BTreeSet<TraceId>> = None;
        for ty in &alt.required {
            let ids = &by_type[ty.as_str()];
            acc = Some(match acc {
                None => ids.clone(),
                Some(a) => a.intersection(ids).cloned().collect(),
            });
        }
        out.extend(acc.unwrap_or_default());
    }
    Ok(out)
}

/// How stream events identify stored events.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamSource {
    /// Real timestamps and positions read from the SequenceTable.
    Sequence,
    /// Values taken from the index: in `pos` mode `ts` holds the position,
    /// in `ts` mode `pos` is zero. Matched events are resolved afterwards.
    Surrogate,
}

/// Whether a query needs real timestamps and positions during matching.
pub fn stream_source(store: &Store, query: &Query) -> StreamSource {
    let time = query.constraints.iter().any(|c| c.kind == ConstraintKind::Time);
    let gap = query.constraints.iter().any(|c| c.kind == ConstraintKind::Gap);
    let needs_sequence = query.groups.is_some()
        || query.explain.is_some()
        || match store.mode() {
            StoreMode::Pos => time || query.window.is_some(),
            StoreMode::Ts => gap,
        };
    if needs_sequence {
        StreamSource::Sequence
    } else {
        StreamSource::Surrogate
    }
}

fn type_filter(query: &Query) -> BTreeSet<String> {
    query.event_types().into_iter().map(String::from).collect()
}

/// Builds one stream per candidate trace, ordered by trace id.
///
/// Events come from the inverted lists of `all_pairs` plus every event of
/// the [`full_fetch_types`]. With [`StreamSource::Sequence`] the collected
/// events are re-read from the SequenceTable to carry real timestamps and
/// positions.
pub fn assemble_streams(
    store: &Store,
    candidates: &BTreeSet<TraceId>,
    sets: &PairSets,
    query: &Query,
) -> Result<Vec<CandidateStream>, StoreError> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let mode = store.mode();
    let window = query.window;
    let full = full_fetch_types(query, sets);
    // (trace) -> (value in store unit) -> type
    let mut collected: BTreeMap<&TraceId, BTreeMap<i64, String>> = candidates.iter().map(|t| (t, BTreeMap::new())).collect();

    for et in &sets.all_pairs {
        if full.contains(&et.first) && full.contains(&et.second) {
            continue;
        }
        for p in store.read_inverted_list(et, read_window(store, window))? {
            if let Some(evs) = collected.get_mut(&p.trace_id) {
                evs.insert(p.first, et.first.clone());
                evs.insert(p.second, et.second.clone());
            }
        }
    }
    for ty in &full {
        for e in store.read_single(ty, window.map(|w| (w.start, w.end)))? {
            if let Some(evs) = collected.get_mut(&e.trace_id) {
                let key = match mode {
                    StoreMode::Pos => e.pos as i64,
                    StoreMode::Ts => e.ts,
                };
                evs.insert(key, ty.clone());
            }
        }
    }

    match stream_source(store, query) {
        StreamSource::Surrogate => Ok(collected
            .into_iter()
            .map(|(id, evs)| CandidateStream {
                trace_id: id.clone(),
                events: evs
                    .into_iter()
                    .map(|(v, ty)| match mode {
                        StoreMode::Pos => Event::new(id.clone(), ty, v, v as u32),
                        StoreMode::Ts => Event::new(id.clone(), ty, v, 0),
                    })
                    .collect(),
            })
            .collect()),
        StreamSource::Sequence => {
            let traces = store.read_sequences(candidates.iter())?;
            let mut out = Vec::with_capacity(collected.len());
            for (id, evs) in collected {
                let trace = traces.get(id).ok_or_else(|| missing_trace(store, id))?;
                let events = trace
                    .events
                    .iter()
                    .filter(|e| {
                        let key = match mode {
                            StoreMode::Pos => e.pos as i64,
                            StoreMode::Ts => e.ts,
                        };
                        evs.contains_key(&key)
                    })
                    .cloned()
                    .collect();
                out.push(CandidateStream { trace_id: id.clone(), events });
            }
            Ok(out)
        }
    }
}

fn missing_trace(store: &Store, id: &TraceId) -> StoreError {
    StoreError::Corrupt {
        path: store.dir().join("seq"),
        reason: format!("trace {id} is indexed but missing from the sequence table"),
    }
}

/// Full stored traces restricted to the query's types, ordered by trace id.
pub fn sequence_streams(store: &Store, candidates: &BTreeSet<TraceId>, query: &Query) -> Result<Vec<CandidateStream>, StoreError> {
    let types = type_filter(query);
    let traces = store.read_sequences(candidates.iter())?;
    candidates
        .iter()
        .map(|id| {
            let t = traces.get(id).ok_or_else(|| missing_trace(store, id))?;
            Ok(restrict(t, &types))
        })
        .collect()
}

fn restrict(trace: &Trace, types: &BTreeSet<String>) -> CandidateStream {
    CandidateStream {
        trace_id: trace.trace_id.clone(),
        events: trace.events.iter().filter(|e| types.contains(&e.event_type)).cloned().collect(),
    }
}

/// Merges the member traces of a group into one pseudo-trace: events
/// ordered by (ts, trace id, pos) and renumbered from 1.
pub fn merge_group(label: &str, members: &[&Trace]) -> Trace {
    let mut events: Vec<Event> = members.iter().flat_map(|t| t.events.iter().cloned()).collect();
    events.sort_by(|a, b| (a.ts, &a.trace_id, a.pos).cmp(&(b.ts, &b.trace_id, b.pos)));
    for (i, e) in events.iter_mut().enumerate() {
        e.pos = i as u32 + 1;
    }
    Trace { trace_id: TraceId::new(label), events }
}

/// One stream per group whose members together hold every required type
/// of some alternative. Stream ids are the group labels.
pub fn group_streams(store: &Store, groups: &[Group], sets: &PairSets, query: &Query) -> Result<Vec<CandidateStream>, StoreError> {
    let members_of = |g: &Group| -> Vec<TraceId> {
        store.trace_ids().iter().filter(|t| g.iter().any(|item| item.contains(t))).cloned().collect()
    };
    let mut type_sets: HashMap<String, BTreeSet<TraceId>> = HashMap::new();
    for alt in &sets.alternatives {
        for ty in &alt.required {
            if !type_sets.contains_key(ty) {
                type_sets.insert(ty.clone(), traces_with_type(store, ty, query.window)?);
            }
        }
    }
    let types = type_filter(query);
    let mut out = Vec::new();
    let mut labels = BTreeSet::new();
    for g in groups {
        // A group listed twice is one stream.
        if !labels.insert(group_label(g)) {
            continue;
        }
        let members = members_of(g);
        if members.is_empty() {
            continue;
        }
        // Members may each hold only part of the pattern, so trace-level
        // pruning does not apply; check type presence over the union.
        let holds = sets.alternatives.iter().any(|alt| {
            alt.required.iter().all(|ty| members.iter().any(|m| type_sets[ty].contains(m)))
        });
        if !holds {
            continue;
        }
        let traces = store.read_sequences(members.iter())?;
        let member_traces: Vec<&Trace> = members.iter().filter_map(|m| traces.get(m)).collect();
        let merged = merge_group(&group_label(g), &member_traces);
        out.push(restrict(&merged, &types));
    }
    Ok(out)
}

/// Statistics for one consecutive pair of a pattern.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairStats {
    pub et_pair: EtPair,
    pub seen: bool,
    pub total_completions: u64,
    pub sum_durations: i64,
    pub min_duration: i64,
    pub max_duration: i64,
    pub mean_duration: f64,
}

pub fn stats_query(store: &Store, pattern: &[QueryEvent]) -> Result<Vec<PairStats>, StoreError> {
    let counts = store.read_counts()?;
    Ok(pattern
        .windows(2)
        .map(|w| {
            let et = EtPair::new(&w[0].event_type, &w[1].event_type);
            match counts.get(&et) {
                Some(c) => PairStats {
                    et_pair: et,
                    seen: true,
                    total_completions: c.total_completions,
                    sum_durations: c.sum_durations,
                    min_duration: c.min_duration,
                    max_duration: c.max_duration,
                    mean_duration: c.mean_duration(),
                },
                None => PairStats {
                    et_pair: et,
                    seen: false,
                    total_completions: 0,
                    sum_durations: 0,
                    min_duration: 0,
                    max_duration: 0,
                    mean_duration: 0.0,
                },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indexer::{ingest, IngestBatch, LogRecord};
    use crate::storage::StoreConfig;

    fn pat(text: &str) -> Vec<QueryEvent> {
        Query::parse(&format!("FROM x PATTERN {text}")).unwrap().pattern
    }

    fn set(pairs: &[(&str, &str)]) -> BTreeSet<EtPair> {
        pairs.iter().map(|(a, b)| EtPair::new(*a, *b)).collect()
    }

    #[test]
    fn expand_or_examples() {
        assert_eq!(expand_or(&pat("A;C")), vec![pat("A;C")]);
        assert_eq!(expand_or(&pat("A|B;C")), vec![pat("A;C"), pat("B;C")]);
        assert_eq!(expand_or(&pat("A|B;C|D")).len(), 4);
    }

    #[test]
    fn pair_sets_examples() {
        let s = compute_pair_sets(&pat("A;!B;C;D+"), &[Constraint::time_within(5000, 1, 3)]);
        assert_eq!(s.true_pairs, set(&[("A", "C"), ("C", "D")]));
        assert_eq!(s.all_pairs, set(&[("A", "C"), ("C", "D"), ("B", "B"), ("D", "D"), ("A", "A")]));

        let s = compute_pair_sets(&pat("A;B"), &[]);
        assert_eq!(s.true_pairs, set(&[("A", "B")]));
        assert_eq!(s.all_pairs, s.true_pairs);

        let s = compute_pair_sets(&pat("A|B;C"), &[]);
        assert!(s.true_pairs.is_empty());
        assert_eq!(s.all_pairs, set(&[("A", "C"), ("B", "C")]));
    }

    #[test]
    fn atleast_anchors_second_position() {
        let c = Constraint::new(ConstraintKind::Time, ConstraintMode::Atleast, 5, 1, 2);
        let s = compute_pair_sets(&pat("A;B"), &[c]);
        assert!(s.all_pairs.contains(&EtPair::diagonal("B")));
        assert!(!s.all_pairs.contains(&EtPair::diagonal("A")));
    }

    fn store_with(traces: &[(&str, &[(&str, i64)])], mode: StoreMode) -> (tempfile::TempDir, Store) {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open_with(
            dir.path(),
            StoreConfig { mode, lookback: 36_500, ..StoreConfig::new("main") },
        )
        .unwrap();
        let mut events = Vec::new();
        for (id, evs) in traces {
            for (ty, ts) in *evs {
                events.push(LogRecord { trace_id: id.to_string(), event_type: ty.to_string(), ts: *ts });
            }
        }
        ingest(&mut store, &IngestBatch::new(events)).unwrap();
        (dir, store)
    }

    #[test]
    fn prune_keeps_traces_with_all_true_pairs() {
        let (_d, store) = store_with(
            &[
                ("t1", &[("A", 1), ("B", 2)]),
                ("t2", &[("A", 1), ("B", 2), ("C", 3)]),
                ("t3", &[("B", 1), ("C", 2)]),
            ],
            StoreMode::Pos,
        );
        let sets = compute_pair_sets(&pat("A;B;C"), &[]);
        assert_eq!(prune(&store, &sets, None).unwrap(), BTreeSet::from([TraceId::new("t2")]));
        let sets = compute_pair_sets(&pat("A;Z"), &[]);
        assert!(prune(&store, &sets, None).unwrap().is_empty());
        let sets = compute_pair_sets(&pat("A|C;B"), &[]);
        assert_eq!(
            prune(&store, &sets, None).unwrap(),
            BTreeSet::from([TraceId::new("t1"), TraceId::new("t2")])
        );
    }

    #[test]
    fn streams_include_all_events_of_constrained_type() {
        let min = 60_000;
        let (_d, store) = store_with(&[("t1", &[("A", min), ("A", 2 * min), ("B", 3 * min), ("C", 4 * min)])], StoreMode::Ts);
        let q = Query::simple("main", &["A", "B", "C"]).with_constraint(Constraint::time_within(min, 1, 2));
        let sets = compute_pair_sets(&q.pattern, &q.constraints);
        let cands = prune(&store, &sets, None).unwrap();
        let streams = assemble_streams(&store, &cands, &sets, &q).unwrap();
        let types: Vec<&str> = streams[0].events.iter().map(|e| e.event_type.as_str()).collect();
        assert_eq!(types, ["A", "A", "B", "C"]);
    }

    #[test]
    fn stream_is_exactly_the_pair_events() {
        let (_d, store) = store_with(&[("t1", &[("A", 1), ("X", 2), ("B", 3), ("Y", 4)])], StoreMode::Pos);
        let q = Query::simple("main", &["A", "B"]);
        let sets = compute_pair_sets(&q.pattern, &q.constraints);
        let cands = prune(&store, &sets, None).unwrap();
        let streams = assemble_streams(&store, &cands, &sets, &q).unwrap();
        let got: Vec<(&str, i64, u32)> = streams[0].events.iter().map(|e| (e.event_type.as_str(), e.ts, e.pos)).collect();
        assert_eq!(got, [("A", 1, 1), ("B", 3, 3)]);
    }

    #[test]
    fn groups_merge_by_timestamp() {
        let (_d, store) = store_with(&[("1", &[("A", 1)]), ("2", &[("B", 2)]), ("3", &[("B", 0)])], StoreMode::Pos);
        let mut q = Query::simple("main", &["A", "B"]);
        q.groups = Some(vec![vec![GroupItem::Range(1, 2)]]);
        let sets = compute_pair_sets(&q.pattern, &q.constraints);
        let streams = group_streams(&store, q.groups.as_ref().unwrap(), &sets, &q).unwrap();
        assert_eq!(streams.len(), 1);
        assert_eq!(streams[0].trace_id.as_str(), "(1-2)");
        let got: Vec<(&str, i64, u32)> = streams[0].events.iter().map(|e| (e.event_type.as_str(), e.ts, e.pos)).collect();
        assert_eq!(got, [("A", 1, 1), ("B", 2, 2)]);
    }

    #[test]
    fn stats_examples() {
        let (_d, store) = store_with(&[("t1", &[("A", 0), ("B", 10)]), ("t2", &[("A", 0), ("B", 30)])], StoreMode::Ts);
        let stats = stats_query(&store, &pat("A;B;C")).unwrap();
        assert_eq!(stats.len(), 2);
        assert_eq!((stats[0].total_completions, stats[0].sum_durations), (2, 40));
        assert_eq!(stats[0].mean_duration, 20.0);
        assert!(!stats[1].seen);
        assert!(stats_query(&store, &pat("A")).unwrap().is_empty());
    }
}
