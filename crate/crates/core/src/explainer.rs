//! Why-not support: query consistency checks against the store's metadata,
//! and data explanations that find the cheapest timestamp shifts under which
//! a non-matching trace would match.

use std::collections::BTreeSet;

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::cep::{CandidateStream, CompiledPattern, StateKind};
use crate::model::{Constraint, ConstraintKind, ConstraintMode, EtPair, Event, Timestamp, TraceId};
use crate::planner::{compute_pair_sets, Query, QueryError};
use crate::storage::{Store, StoreError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UnsatisfiableConstraint {
    pub constraint: Constraint,
    pub min_duration: i64,
    pub max_duration: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConsistencyReport {
    pub unknown_types: Vec<String>,
    pub missing_pairs: Vec<EtPair>,
    pub unsatisfiable_constraints: Vec<UnsatisfiableConstraint>,
}

impl ConsistencyReport {
    pub fn is_consistent(&self) -> bool {
        self.unknown_types.is_empty() && self.missing_pairs.is_empty() && self.unsatisfiable_constraints.is_empty()
    }
}

/// Runs the three checks: every type is indexed, every pair a match
/// requires has been seen, and every time constraint fits the recorded
/// duration range of its pair. A constraint whose endpoints accept several
/// types is reported only when all recorded combinations rule it out.
pub fn check_consistency(store: &Store, query: &Query) -> Result<ConsistencyReport, StoreError> {
    let known = store.event_types()?;
    let counts = store.read_counts()?;
    let mut report = ConsistencyReport::default();
    for ty in query.event_types() {
        if !known.contains(ty) {
            report.unknown_types.push(ty.to_string());
        }
    }
    let sets = compute_pair_sets(&query.pattern, &query.constraints);
    // Pairs with an unknown type are implied by that finding.
    let unknown = |p: &EtPair| report.unknown_types.iter().any(|t| *t == p.first || *t == p.second);
    report.missing_pairs =
        sets.true_pairs.iter().filter(|p| !unknown(p) && counts.get(p).is_none()).cloned().collect();

    for c in &query.constraints {
        if c.kind != ConstraintKind::Time {
            continue;
        }
        let mut records = Vec::new();
        for a in query.pattern[c.i - 1].accepted_types() {
            for b in query.pattern[c.j - 1].accepted_types() {
                if let Some(r) = counts.get(&EtPair::new(a, b)) {
                    records.push(r);
                }
            }
        }
        if records.is_empty() {
            continue;
        }
        let ruled_out = |min: i64, max: i64| match c.mode {
            ConstraintMode::Within => c.value < min,
            ConstraintMode::Atleast => c.value > max,
        };
        if records.iter().all(|r| ruled_out(r.min_duration, r.max_duration)) {
            report.unsatisfiable_constraints.push(UnsatisfiableConstraint {
                constraint: *c,
                min_duration: records.iter().map(|r| r.min_duration).min().unwrap(),
                max_duration: records.iter().map(|r| r.max_duration).max().unwrap(),
            });
        }
    }
    Ok(report)
}

/// One timestamp variant of a stream event.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModifiedEvent {
    pub original: Event,
    /// Index of `original` in the source stream.
    pub origin: usize,
    pub modified_ts: Timestamp,
    pub delta: i64,
}

impl Serialize for ModifiedEvent {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("ModifiedEvent", 5)?;
        s.serialize_field("event_type", &self.original.event_type)?;
        s.serialize_field("pos", &self.original.pos)?;
        s.serialize_field("original_ts", &self.original.ts)?;
        s.serialize_field("modified_ts", &self.modified_ts)?;
        s.serialize_field("delta", &self.delta)?;
        s.end()
    }
}

/// Every event at `ts + m·step` for all integers `m` with
/// `|m·step| <= uncertainty`, ordered by modified timestamp, then source
/// index, then delta.
pub fn generate_modified_stream(stream: &[Event], uncertainty: i64, step: i64) -> Vec<ModifiedEvent> {
    assert!(step >= 1 && uncertainty >= 0, "step must be positive and uncertainty non-negative");
    let m_max = uncertainty / step;
    let mut out = Vec::with_capacity(stream.len() * (2 * m_max as usize + 1));
    for (origin, ev) in stream.iter().enumerate() {
        for m in -m_max..=m_max {
            out.push(ModifiedEvent { original: ev.clone(), origin, modified_ts: ev.ts + m * step, delta: (m * step).abs() });
        }
    }
    out.sort_by_key(|v| (v.modified_ts, v.origin, v.delta));
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Explanation {
    pub trace_id: TraceId,
    /// One modified event per pattern position.
    pub events: Vec<ModifiedEvent>,
    pub cost: i64,
}

struct Search<'a> {
    cp: &'a CompiledPattern,
    variants: &'a [ModifiedEvent],
    k: i64,
    used: Vec<bool>,
    chosen: Vec<usize>,
    best: Option<(i64, Vec<usize>)>,
}

impl Search<'_> {
    fn bound(&self) -> i64 {
        self.best.as_ref().map_or(self.k + 1, |b| b.0)
    }

    fn constraints_hold(&self, s: usize, v: &ModifiedEvent) -> bool {
        self.cp.constraints.iter().filter(|c| c.second == s).all(|c| {
            let a = &self.variants[self.chosen[c.first]];
            let diff = match c.constraint.kind {
                ConstraintKind::Time => v.modified_ts - a.modified_ts,
                ConstraintKind::Gap => v.original.pos as i64 - a.original.pos as i64,
            };
            c.constraint.holds_for_difference(diff)
        })
    }

    fn run(&mut self, s: usize, from: usize, cost: i64) {
        if s == self.cp.states.len() {
            // Depth-first order visits assignments in lexicographic order of
            // modified timestamps, so only a strictly cheaper one replaces.
            if cost < self.bound() {
                self.best = Some((cost, self.chosen.clone()));
            }
            return;
        }
        let prev_ts = self.chosen.last().map(|&i| self.variants[i].modified_ts);
        for idx in from..self.variants.len() {
            let v = &self.variants[idx];
            if prev_ts.is_some_and(|p| v.modified_ts <= p) || self.used[v.origin] {
                continue;
            }
            if !self.cp.states[s].types.contains(&v.original.event_type) {
                continue;
            }
            let c = cost + v.delta;
            if c >= self.bound() {
                continue;
            }
            if !self.constraints_hold(s, v) {
                continue;
            }
            self.used[v.origin] = true;
            self.chosen.push(idx);
            self.run(s + 1, idx + 1, c);
            self.chosen.pop();
            self.used[self.variants[idx].origin] = false;
        }
    }
}

/// Cheapest set of timestamp shifts, each within `uncertainty` and a
/// multiple of `step`, that makes `stream` match `cp` with total cost at
/// most `k`. Ties go to the lexicographically earliest modified timestamps.
/// Only patterns of simple (or single-type) elements are supported.
pub fn explain(
    stream: &CandidateStream,
    cp: &CompiledPattern,
    k: i64,
    uncertainty: i64,
    step: i64,
) -> Result<Option<Explanation>, QueryError> {
    if !cp.guards.is_empty() || cp.states.iter().any(|s| s.kind != StateKind::Single || s.types.len() != 1) {
        return Err(QueryError::Invalid("explanations are only available for simple patterns".into()));
    }
    if k < 0 || uncertainty < 0 || step < 1 {
        return Err(QueryError::Invalid("explain parameters need k >= 0, uncertainty >= 0, step >= 1".into()));
    }
    let types: BTreeSet<&str> = cp.states.iter().map(|s| s.types[0].as_str()).collect();
    let relevant: Vec<Event> = stream.events.iter().filter(|e| types.contains(e.event_type.as_str())).cloned().collect();
    let variants = generate_modified_stream(&relevant, uncertainty, step);
    let mut search = Search {
        cp,
        variants: &variants,
        k,
        used: vec![false; relevant.len()],
        chosen: Vec::with_capacity(cp.states.len()),
        best: None,
    };
    search.run(0, 0, 0);
    Ok(search.best.map(|(cost, chosen)| Explanation {
        trace_id: stream.trace_id.clone(),
        events: chosen.into_iter().map(|i| variants[i].clone()).collect(),
        cost,
    }))
}
