//! End-to-end query execution over a store.

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cep::{compile, match_stream, CandidateStream, MatchPolicy};
use crate::explainer::{check_consistency, explain, ConsistencyReport, Explanation};
use crate::model::{Event, Occurrence, Trace, TraceId};
use crate::planner::{
    assemble_streams, compute_pair_sets, group_streams, prune, prune_by_types, sequence_streams, stream_source, Query,
    QueryError, StreamSource,
};
use crate::storage::{Store, StoreError, StoreMode};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("query is inconsistent with the indexed log")]
    Inconsistent(ConsistencyReport),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// What to do when the consistency check finds problems.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConsistencyGate {
    /// Refuse the query. With explain only unknown types refuse, since
    /// the other findings are part of the answer.
    #[default]
    Reject,
    /// Attach the report to the result and run the query anyway.
    Report,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Timing {
    pub fetch_prune_ms: f64,
    pub validation_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct QueryResult {
    pub log_name: String,
    /// Trace ids (or group labels) with at least one occurrence, sorted.
    pub matching: Vec<TraceId>,
    pub occurrences: Vec<Occurrence>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub explanations: Vec<Explanation>,
    pub candidates: usize,
    pub consistency: ConsistencyReport,
    pub timing: Timing,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

pub fn execute(store: &Store, query: &Query, gate: ConsistencyGate) -> Result<QueryResult, EngineError> {
    let start = Instant::now();
    query.validate()?;
    let log_name = &store.config().log_name;
    if &query.log_name != log_name {
        return Err(QueryError::Invalid(format!("query targets `{}` but the store holds `{log_name}`", query.log_name)).into());
    }

    let consistency = check_consistency(store, query)?;
    let refuse = match (gate, query.explain.is_some()) {
        (ConsistencyGate::Report, _) => false,
        (ConsistencyGate::Reject, true) => !consistency.unknown_types.is_empty(),
        (ConsistencyGate::Reject, false) => !consistency.is_consistent(),
    };
    if refuse {
        return Err(EngineError::Inconsistent(consistency));
    }

    let cp = compile(&query.pattern, &query.constraints)?.with_window(query.window);
    let sets = compute_pair_sets(&query.pattern, &query.constraints);
    let (streams, candidates) = if let Some(groups) = &query.groups {
        let s = group_streams(store, groups, &sets, query)?;
        let n = s.len();
        (s, n)
    } else if query.explain.is_some() {
        // Non-matching traces need their full event lists, and the
        // timestamps they would be shifted to are unknown in advance.
        let ids = prune_by_types(store, &sets, None)?;
        (sequence_streams(store, &ids, query)?, ids.len())
    } else {
        let ids = prune(store, &sets, query.window)?;
        (assemble_streams(store, &ids, &sets, query)?, ids.len())
    };

    let validation_start = Instant::now();
    let policy = if query.return_all { MatchPolicy::all() } else { MatchPolicy::first() };
    let per_stream: Vec<Vec<Occurrence>> = streams.par_iter().map(|s| match_stream(&cp, s, policy)).collect();
    let explanations = match query.explain {
        Some(p) => {
            let misses: Vec<&CandidateStream> =
                streams.iter().zip(&per_stream).filter(|(_, o)| o.is_empty()).map(|(s, _)| s).collect();
            let found: Result<Vec<Option<Explanation>>, QueryError> =
                misses.par_iter().map(|s| explain(s, &cp, p.k, p.uncertainty, p.step)).collect();
            found?.into_iter().flatten().collect()
        }
        None => Vec::new(),
    };
    let mut validation_ms = ms(validation_start);

    let mut occurrences: Vec<Occurrence> = per_stream.into_iter().flatten().collect();
    if query.groups.is_none() && stream_source(store, query) == StreamSource::Surrogate {
        resolve(store, &mut occurrences)?;
    }
    let matching: Vec<TraceId> = occurrences.iter().map(|o| o.trace_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();

    let total_ms = ms(start);
    validation_ms = validation_ms.min(total_ms);
    Ok(QueryResult {
        log_name: log_name.clone(),
        matching,
        occurrences,
        explanations,
        candidates,
        consistency,
        timing: Timing { fetch_prune_ms: total_ms - validation_ms, validation_ms, total_ms },
    })
}

/// Replaces surrogate events with the stored ones: by position in `pos`
/// mode, by timestamp in `ts` mode.
fn resolve(store: &Store, occurrences: &mut [Occurrence]) -> Result<(), StoreError> {
    let ids: BTreeSet<TraceId> = occurrences.iter().map(|o| o.trace_id.clone()).collect();
    let traces: HashMap<TraceId, Trace> = store.read_sequences(ids.iter())?;
    let mode = store.mode();
    for occ in occurrences {
        let trace = traces.get(&occ.trace_id).ok_or_else(|| StoreError::Corrupt {
            path: store.dir().join("seq"),
            reason: format!("trace {} is indexed but missing from the sequence table", occ.trace_id),
        })?;
        for ev in occ.matches.iter_mut().flatten() {
            let found: Option<&Event> = match mode {
                StoreMode::Pos => trace.events.get((ev.pos as usize).wrapping_sub(1)),
                StoreMode::Ts => trace
                    .events
                    .binary_search_by_key(&ev.ts, |e| e.ts)
                    .ok()
                    .map(|i| &trace.events[i]),
            };
            match found {
                Some(real) if real.event_type == ev.event_type => *ev = real.clone(),
                _ => {
                    return Err(StoreError::Corrupt {
                        path: store.dir().join("seq"),
                        reason: format!("indexed event {} of trace {} not found in the sequence table", ev.ts, occ.trace_id),
                    })
                }
            }
        }
    }
    Ok(())
}
