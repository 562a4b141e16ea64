//! Exhaustive reference detector for small inputs. It enumerates every
//! assignment of events to pattern positions and checks the match rules
//! directly, without indexes, automata or pruning. Tests compare the
//! indexed pipeline against it.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{Constraint, ConstraintKind, Event, Operator, QueryEvent, Trace, TraceId};
use crate::planner::query::{group_label, Query, QueryError};

/// Traces with more query-relevant events than this are refused.
pub const MAX_ORACLE_EVENTS: usize = 25;
/// Upper bound on the assignments the explanation oracle may visit.
pub const MAX_EXPLAIN_WORK: u64 = 50_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("trace {trace} has {events} relevant events, more than the oracle handles")]
    TooLarge { trace: TraceId, events: usize },
    #[error("query has no explain parameters")]
    NoExplain,
}

/// All valid assignments per matching trace (or group label). Each
/// assignment lists the events of every positive pattern position.
#[derive(Clone, Debug, Default)]
pub struct OracleResult {
    pub assignments: BTreeMap<TraceId, Vec<Vec<Vec<Event>>>>,
}

impl OracleResult {
    pub fn matching(&self) -> BTreeSet<TraceId> {
        self.assignments.keys().cloned().collect()
    }

    pub fn contains(&self, trace: &TraceId, matches: &[Vec<Event>]) -> bool {
        self.assignments.get(trace).is_some_and(|all| all.iter().any(|a| a == matches))
    }

    /// Largest number of pairwise non-overlapping assignments in `trace`,
    /// where two assignments overlap unless one ends strictly before the
    /// other starts.
    pub fn max_disjoint(&self, trace: &TraceId) -> usize {
        let Some(all) = self.assignments.get(trace) else { return 0 };
        let mut spans: Vec<(i64, i64)> = all
            .iter()
            .filter_map(|a| {
                let evs: Vec<&Event> = a.iter().flatten().collect();
                Some((evs.first()?.ts, evs.last()?.ts))
            })
            .collect();
        spans.sort_by_key(|s| (s.1, s.0));
        let mut count = 0;
        let mut last: Option<i64> = None;
        for (a, b) in spans {
            if last.is_none_or(|l| a > l) {
                count += 1;
                last = Some(b);
            }
        }
        count
    }
}

fn alternatives(pattern: &[QueryEvent]) -> Vec<Vec<QueryEvent>> {
    let mut out = vec![Vec::new()];
    for e in pattern {
        let choices: Vec<QueryEvent> = if e.operator == Operator::Or {
            e.accepted_types().into_iter().map(QueryEvent::simple).collect()
        } else {
            vec![e.clone()]
        };
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<QueryEvent>| {
                choices.iter().map(move |c| {
                    let mut p = prefix.clone();
                    p.push(c.clone());
                    p
                })
            })
            .collect();
    }
    out
}

/// Streams the oracle works on: whole traces, or merged groups whose
/// events are ordered by (ts, trace id, pos) and renumbered from 1.
fn subjects(traces: &[Trace], query: &Query) -> Vec<Trace> {
    let Some(groups) = &query.groups else { return traces.to_vec() };
    groups
        .iter()
        .filter_map(|g| {
            let mut events: Vec<Event> = traces
                .iter()
                .filter(|t| g.iter().any(|item| item.contains(&t.trace_id)))
                .flat_map(|t| t.events.iter().cloned())
                .collect();
            if events.is_empty() {
                return None;
            }
            events.sort_by(|a, b| a.ts.cmp(&b.ts).then_with(|| a.trace_id.cmp(&b.trace_id)).then(a.pos.cmp(&b.pos)));
            for (i, e) in events.iter_mut().enumerate() {
                e.pos = i as u32 + 1;
            }
            Some(Trace { trace_id: TraceId::new(group_label(g)), events })
        })
        .collect()
}

struct Detect<'a> {
    alt: &'a [QueryEvent],
    constraints: &'a [Constraint],
    query: &'a Query,
    events: &'a [Event],
    out: Vec<Vec<Vec<Event>>>,
}

impl Detect<'_> {
    /// `picks[p]` holds the event indices chosen for pattern position `p`;
    /// negated positions stay empty.
    fn enumerate(&mut self, p: usize, after: Option<i64>, picks: &mut Vec<Vec<usize>>) {
        if p == self.alt.len() {
            if self.valid(picks) {
                let occ = self
                    .alt
                    .iter()
                    .zip(picks.iter())
                    .filter(|(e, _)| e.is_positive())
                    .map(|(_, idx)| idx.iter().map(|&i| self.events[i].clone()).collect())
                    .collect();
                self.out.push(occ);
            }
            return;
        }
        let elem = &self.alt[p];
        let ty = elem.event_type.as_str();
        let own: Vec<usize> = (0..self.events.len())
            .filter(|&i| self.events[i].event_type == ty && after.is_none_or(|a| self.events[i].ts > a))
            .collect();
        match elem.operator {
            Operator::Negation => {
                picks.push(Vec::new());
                self.enumerate(p + 1, after, picks);
                picks.pop();
            }
            Operator::Simple | Operator::Or => {
                for &i in &own {
                    picks.push(vec![i]);
                    self.enumerate(p + 1, Some(self.events[i].ts), picks);
                    picks.pop();
                }
            }
            Operator::KleenePlus | Operator::KleeneStar => {
                if elem.operator == Operator::KleeneStar {
                    picks.push(Vec::new());
                    self.enumerate(p + 1, after, picks);
                    picks.pop();
                }
                for a in 0..own.len() {
                    for b in a..own.len() {
                        // Every own-type event between first and last joins.
                        let span: Vec<usize> = own[a..=b].to_vec();
                        if span.windows(2).any(|w| self.events[w[0]].ts >= self.events[w[1]].ts) {
                            continue;
                        }
                        let last = self.events[own[b]].ts;
                        picks.push(span);
                        self.enumerate(p + 1, Some(last), picks);
                        picks.pop();
                    }
                }
            }
        }
    }

    fn valid(&self, picks: &[Vec<usize>]) -> bool {
        let ev = |i: usize| &self.events[i];
        for (q, elem) in self.alt.iter().enumerate() {
            if elem.operator != Operator::Negation {
                continue;
            }
            let before = picks[..q].iter().rev().find_map(|p| p.last().copied());
            let after = picks[q + 1..].iter().find_map(|p| p.first().copied());
            if let (Some(l), Some(r)) = (before, after) {
                let (lo, hi) = (ev(l).ts, ev(r).ts);
                if self.events.iter().any(|e| e.event_type == elem.event_type && lo < e.ts && e.ts < hi) {
                    return false;
                }
            }
        }
        for c in self.constraints {
            let (Some(&a), Some(&b)) = (picks[c.i - 1].first(), picks[c.j - 1].first()) else { continue };
            let diff = match c.kind {
                ConstraintKind::Time => ev(b).ts - ev(a).ts,
                ConstraintKind::Gap => ev(b).pos as i64 - ev(a).pos as i64,
            };
            if !c.holds_for_difference(diff) {
                return false;
            }
        }
        if let Some(w) = self.query.window {
            if picks.iter().flatten().any(|&i| !w.contains(ev(i).ts)) {
                return false;
            }
        }
        true
    }
}

/// Every valid assignment of every alternative, for every trace (or group).
pub fn brute_force_detect(traces: &[Trace], query: &Query) -> Result<OracleResult, OracleError> {
    query.validate()?;
    let types: BTreeSet<&str> = query.event_types().into_iter().collect();
    let alts = alternatives(&query.pattern);
    let mut result = OracleResult::default();
    for subject in subjects(traces, query) {
        // Positions stay those of the full trace, so dropping unrelated
        // events does not change gap constraints.
        let events: Vec<Event> = subject.events.iter().filter(|e| types.contains(e.event_type.as_str())).cloned().collect();
        if events.len() > MAX_ORACLE_EVENTS {
            return Err(OracleError::TooLarge { trace: subject.trace_id, events: events.len() });
        }
        let mut found: Vec<Vec<Vec<Event>>> = Vec::new();
        for alt in &alts {
            let mut d = Detect { alt, constraints: &query.constraints, query, events: &events, out: Vec::new() };
            d.enumerate(0, None, &mut Vec::new());
            for occ in d.out {
                if !found.contains(&occ) {
                    found.push(occ);
                }
            }
        }
        if !found.is_empty() {
            result.assignments.insert(subject.trace_id, found);
        }
    }
    Ok(result)
}

/// Minimum total shift that makes `trace` match the simple pattern of
/// `query`, or `None` when no shift within the budget works. Each event
/// may move by any multiple of the step up to the uncertainty; the cost is
/// the sum of absolute shifts of the matched events.
pub fn brute_force_explain(trace: &Trace, query: &Query) -> Result<Option<i64>, OracleError> {
    query.validate()?;
    let params = query.explain.ok_or(OracleError::NoExplain)?;
    let types: BTreeSet<&str> = query.event_types().into_iter().collect();
    let events: Vec<&Event> = trace.events.iter().filter(|e| types.contains(e.event_type.as_str())).collect();
    let m_max = params.uncertainty / params.step;
    let shifts: Vec<i64> = (-m_max..=m_max).map(|m| m * params.step).collect();
    let n = query.pattern.len();
    let work = (events.len() as u64 * shifts.len() as u64).saturating_pow(n as u32);
    if work > MAX_EXPLAIN_WORK {
        return Err(OracleError::TooLarge { trace: trace.trace_id.clone(), events: events.len() });
    }

    fn go(
        p: usize,
        query: &Query,
        events: &[&Event],
        shifts: &[i64],
        chosen: &mut Vec<(usize, i64)>,
        best: &mut Option<i64>,
        k: i64,
    ) {
        if p == query.pattern.len() {
            let modified: Vec<i64> = chosen.iter().map(|&(i, d)| events[i].ts + d).collect();
            if modified.windows(2).any(|w| w[0] >= w[1]) {
                return;
            }
            for c in &query.constraints {
                let (a, b) = (chosen[c.i - 1], chosen[c.j - 1]);
                let diff = match c.kind {
                    ConstraintKind::Time => modified[c.j - 1] - modified[c.i - 1],
                    ConstraintKind::Gap => events[b.0].pos as i64 - events[a.0].pos as i64,
                };
                if !c.holds_for_difference(diff) {
                    return;
                }
            }
            let cost: i64 = chosen.iter().map(|&(_, d)| d.abs()).sum();
            if cost <= k && best.is_none_or(|b| cost < b) {
                *best = Some(cost);
            }
            return;
        }
        let accepted = query.pattern[p].accepted_types();
        for (i, e) in events.iter().enumerate() {
            if !accepted.contains(&e.event_type.as_str()) || chosen.iter().any(|&(j, _)| j == i) {
                continue;
            }
            for &d in shifts {
                chosen.push((i, d));
                go(p + 1, query, events, shifts, chosen, best, k);
                chosen.pop();
            }
        }
    }

    let mut best = None;
    go(0, query, &events, &shifts, &mut Vec::new(), &mut best, params.k);
    Ok(best)
}
