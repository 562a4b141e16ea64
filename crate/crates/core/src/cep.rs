//! Pattern validation over per-trace event streams.
//!
//! A pattern is compiled into an ordered list of positive states (one per
//! non-negated element) with negation guards on the edges between them.
//! Matching walks the stream with skip-till-next-match preference: every
//! state first tries the earliest eligible event, and the search backtracks
//! only when a guard or constraint fails further on. Failed sub-searches are
//! memoised on the part of the partial match that can still influence the
//! remaining states, so a stream is matched in polynomial time for patterns
//! without constraints.
//!
//! Kleene states match a contiguous span of the stream and absorb every
//! event of their own type inside it. The preferred span for `A+` starts at
//! the first eligible `A` and extends up to the last `A` before the next
//! state's type shows up.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::model::{Constraint, ConstraintKind, ConstraintMode, Event, Occurrence, Operator, QueryEvent, Timestamp, TraceId};
use crate::planner::query::{QueryError, Window, MAX_PATTERN_LEN};

/// Events of one trace (or one group of traces), sorted by timestamp.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateStream {
    pub trace_id: TraceId,
    pub events: Vec<Event>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    StnmConsume,
    SkipTillAnyMatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchPolicy {
    pub strategy: Strategy,
    pub return_all: bool,
}

impl MatchPolicy {
    pub fn first() -> Self {
        MatchPolicy { strategy: Strategy::StnmConsume, return_all: false }
    }

    pub fn all() -> Self {
        MatchPolicy { strategy: Strategy::StnmConsume, return_all: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Single,
    Plus,
    Star,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct State {
    pub types: Vec<String>,
    pub kind: StateKind,
    /// 1-based position of the element in the original pattern.
    pub position: usize,
}

/// Forbids events of `types` between the end of the last non-empty state
/// before `before` and the start of the first non-empty state from
/// `before` on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guard {
    pub types: Vec<String>,
    pub before: usize,
}

/// A constraint rewritten against state indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateConstraint {
    pub constraint: Constraint,
    pub first: usize,
    pub second: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledPattern {
    pub states: Vec<State>,
    pub guards: Vec<Guard>,
    pub constraints: Vec<StateConstraint>,
    pub window: Option<Window>,
}

pub fn compile(pattern: &[QueryEvent], constraints: &[Constraint]) -> Result<CompiledPattern, QueryError> {
    let bad = |m: String| Err(QueryError::Invalid(m));
    if pattern.is_empty() {
        return bad("pattern is empty".into());
    }
    if pattern.len() > MAX_PATTERN_LEN {
        return bad(format!("pattern longer than {MAX_PATTERN_LEN} elements"));
    }
    if !pattern[0].is_positive() || !pattern[pattern.len() - 1].is_positive() {
        return bad("negation may not open or close a pattern".into());
    }
    let mut states: Vec<State> = Vec::new();
    let mut guards = Vec::new();
    let mut state_of = vec![None; pattern.len() + 1];
    for (idx, e) in pattern.iter().enumerate() {
        let kind = match e.operator {
            Operator::Negation => {
                guards.push(Guard { types: vec![e.event_type.clone()], before: states.len() });
                continue;
            }
            Operator::KleenePlus => StateKind::Plus,
            Operator::KleeneStar => StateKind::Star,
            Operator::Simple | Operator::Or => StateKind::Single,
        };
        state_of[idx + 1] = Some(states.len());
        states.push(State {
            types: e.accepted_types().into_iter().map(String::from).collect(),
            kind,
            position: idx + 1,
        });
    }
    if states.iter().all(|s| s.kind == StateKind::Star) {
        return bad("pattern needs at least one element that must occur".into());
    }
    let mut rewritten = Vec::new();
    for c in constraints {
        if !(1 <= c.i && c.i < c.j && c.j <= pattern.len()) {
            return bad(format!("constraint positions {} {} out of range", c.i, c.j));
        }
        match (state_of[c.i], state_of[c.j]) {
            (Some(first), Some(second)) => rewritten.push(StateConstraint { constraint: *c, first, second }),
            _ => return bad(format!("constraint between {} and {} references a negated position", c.i, c.j)),
        }
    }
    Ok(CompiledPattern { states, guards, constraints: rewritten, window: None })
}

impl CompiledPattern {
    pub fn with_window(mut self, window: Option<Window>) -> Self {
        self.window = window;
        self
    }

    /// Evaluates one constraint on a full occurrence of this pattern.
    pub fn check_constraint(&self, c: &StateConstraint, occ: &Occurrence) -> bool {
        check_constraint(&c.constraint, &occ.matches[c.first], &occ.matches[c.second])
    }
}

/// Evaluates `c` between the events matched at its two positions. Kleene
/// positions are represented by their first event; an empty position
/// satisfies every constraint.
pub fn check_constraint(c: &Constraint, at_i: &[Event], at_j: &[Event]) -> bool {
    match (at_i.first(), at_j.first()) {
        (Some(a), Some(b)) => c.holds(a, b),
        _ => true,
    }
}

/// Greedy interval scheduling by ascending last-event timestamp. Keeps a
/// maximum set of pairwise non-overlapping occurrences.
pub fn select_non_overlapping(occs: Vec<Occurrence>) -> Vec<Occurrence> {
    let mut spans: Vec<(usize, Timestamp, Timestamp)> = occs
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.span().map(|(a, b)| (i, a, b)))
        .collect();
    spans.sort_by_key(|&(i, _, end)| (end, i));
    let mut keep = vec![false; occs.len()];
    let mut last_end: Option<Timestamp> = None;
    for (i, start, end) in spans {
        if last_end.is_none_or(|e| start > e) {
            keep[i] = true;
            last_end = Some(end);
        }
    }
    let mut out: Vec<Occurrence> = occs.into_iter().zip(keep).filter_map(|(o, k)| k.then_some(o)).collect();
    out.sort_by_key(|o| o.span().map(|s| s.1));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Choice {
    Empty,
    Span { first: usize, end: usize },
}

struct Matcher<'a> {
    cp: &'a CompiledPattern,
    events: &'a [Event],
    /// Per event: bit `s` set when state `s` accepts it.
    accept: Vec<u64>,
    /// Per state: indices of accepted events.
    own: Vec<Vec<usize>>,
    /// Per guard: timestamps of guarded events.
    guard_ts: Vec<Vec<Timestamp>>,
    /// Per state: guards on the edge into it.
    guards_before: Vec<u64>,
    /// Per state: predicates that may follow it (up to the next mandatory
    /// state).
    next_mask: Vec<u64>,
    /// Per state `s`: states before `s` whose choice still matters to a
    /// constraint ending at or after `s`.
    open: Vec<Vec<usize>>,
    strategy: Strategy,
    memo: HashSet<Vec<u32>>,
    found: Vec<Vec<Choice>>,
}

impl<'a> Matcher<'a> {
    fn new(cp: &'a CompiledPattern, events: &'a [Event], strategy: Strategy) -> Self {
        let n = cp.states.len();
        let mut type_mask: HashMap<&str, (u64, u64)> = HashMap::new();
        for (s, st) in cp.states.iter().enumerate() {
            for t in &st.types {
                type_mask.entry(t).or_default().0 |= 1 << s;
            }
        }
        for (g, guard) in cp.guards.iter().enumerate() {
            for t in &guard.types {
                type_mask.entry(t).or_default().1 |= 1 << g;
            }
        }
        let mut accept = Vec::with_capacity(events.len());
        let mut own = vec![Vec::new(); n];
        let mut guard_ts = vec![Vec::new(); cp.guards.len()];
        for (idx, ev) in events.iter().enumerate() {
            let (sm, gm) = type_mask.get(ev.event_type.as_str()).copied().unwrap_or_default();
            accept.push(sm);
            for (s, list) in own.iter_mut().enumerate() {
                if sm & (1 << s) != 0 {
                    list.push(idx);
                }
            }
            for (g, list) in guard_ts.iter_mut().enumerate() {
                if gm & (1 << g) != 0 {
                    list.push(ev.ts);
                }
            }
        }
        let mut guards_before = vec![0u64; n + 1];
        for (g, guard) in cp.guards.iter().enumerate() {
            guards_before[guard.before] |= 1 << g;
        }
        let mut next_mask = vec![0u64; n];
        for (s, mask) in next_mask.iter_mut().enumerate() {
            for t in s + 1..n {
                *mask |= 1 << t;
                if cp.states[t].kind != StateKind::Star {
                    break;
                }
            }
        }
        let mut open = vec![Vec::new(); n + 1];
        for (s, list) in open.iter_mut().enumerate() {
            for c in &cp.constraints {
                if c.first < s && c.second >= s && !list.contains(&c.first) {
                    list.push(c.first);
                }
            }
            list.sort_unstable();
        }
        Matcher {
            cp,
            events,
            accept,
            own,
            guard_ts,
            guards_before,
            next_mask,
            open,
            strategy,
            memo: HashSet::new(),
            found: Vec::new(),
        }
    }

    fn ts(&self, idx: usize) -> Timestamp {
        self.events[idx].ts
    }

    fn guard_clear(&self, pending: u64, prev: Option<usize>, start: usize) -> bool {
        let Some(p) = prev else { return true };
        let (lo, hi) = (self.ts(p), self.ts(start));
        (0..self.cp.guards.len()).filter(|g| pending & (1 << g) != 0).all(|g| {
            let list = &self.guard_ts[g];
            let at = list.partition_point(|&t| t <= lo);
            list.get(at).is_none_or(|&t| t >= hi)
        })
    }

    /// Diff between two anchor events under a constraint's unit.
    fn diff(&self, c: &Constraint, a: usize, b: usize) -> i64 {
        match c.kind {
            ConstraintKind::Time => self.ts(b) - self.ts(a),
            ConstraintKind::Gap => self.events[b].pos as i64 - self.events[a].pos as i64,
        }
    }

    /// Checks constraints that close at state `s` when it starts at event
    /// `f`. Returns `(ok, later_candidates_hopeless)`.
    fn constraints_at(&self, s: usize, f: usize, chosen: &[Choice]) -> (bool, bool) {
        let mut ok = true;
        let mut hopeless = false;
        for c in &self.cp.constraints {
            if c.first >= s || c.second < s {
                continue;
            }
            let Choice::Span { first: a, .. } = chosen[c.first] else { continue };
            let d = self.diff(&c.constraint, a, f);
            let within = c.constraint.mode == ConstraintMode::Within;
            if c.second == s {
                if !c.constraint.holds_for_difference(d) {
                    ok = false;
                    hopeless |= within;
                }
            } else if within && d > c.constraint.value && self.cp.states[c.second].kind != StateKind::Star {
                // The anchor of `second` comes later still.
                ok = false;
                hopeless = true;
            }
        }
        (ok, hopeless)
    }

    fn memo_key(&self, s: usize, prev: Option<usize>, pending: u64, chosen: &[Choice]) -> Vec<u32> {
        let mut key = vec![s as u32, prev.map_or(0, |p| p as u32 + 1), pending as u32, (pending >> 32) as u32];
        for &a in &self.open[s] {
            key.push(match chosen[a] {
                Choice::Empty => 0,
                Choice::Span { first, .. } => first as u32 + 1,
            });
        }
        key
    }

    /// Index of the first event at or after `from` with `accept & mask != 0`.
    fn first_matching(&self, from: usize, mask: u64) -> Option<usize> {
        (from..self.events.len()).find(|&i| self.accept[i] & mask != 0)
    }

    /// Ordered end candidates for a Kleene state starting at `f`.
    fn kleene_ends(&self, s: usize, f: usize) -> Vec<usize> {
        let own = &self.own[s];
        let at_f = own.partition_point(|&i| i < f);
        let stop = self.first_matching(f + 1, self.next_mask[s]).unwrap_or(self.events.len());
        let greedy = at_f + own[at_f..].partition_point(|&i| i < stop) - 1;
        let mut ends: Vec<usize> = (at_f..=greedy).rev().map(|k| own[k]).collect();
        ends.extend(own[greedy + 1..].iter().copied());
        ends
    }

    fn absorbed_increasing(&self, s: usize, f: usize, e: usize) -> bool {
        let own = &self.own[s];
        let lo = own.partition_point(|&i| i < f);
        let hi = own.partition_point(|&i| i <= e);
        own[lo..hi].windows(2).all(|w| self.ts(w[0]) < self.ts(w[1]))
    }

    /// Explores state `s`. `lower` is the exclusive lower bound on the next
    /// event as (index, timestamp). Returns true when the search should stop.
    fn search(
        &mut self,
        s: usize,
        prev: Option<usize>,
        lower: (usize, Option<Timestamp>),
        pending: u64,
        chosen: &mut Vec<Choice>,
    ) -> bool {
        let n = self.cp.states.len();
        if s == n {
            self.found.push(chosen.clone());
            return self.strategy == Strategy::StnmConsume;
        }
        let pending = pending | self.guards_before[s];
        let key = self.memo_key(s, prev, pending, chosen);
        if self.memo.contains(&key) {
            return false;
        }
        let before = self.found.len();
        let stop = self.explore(s, prev, lower, pending, chosen);
        if !stop && self.found.len() == before {
            self.memo.insert(key);
        }
        stop
    }

    fn explore(
        &mut self,
        s: usize,
        prev: Option<usize>,
        lower: (usize, Option<Timestamp>),
        pending: u64,
        chosen: &mut Vec<Choice>,
    ) -> bool {
        let kind = self.cp.states[s].kind;
        let (min_idx, min_ts) = lower;
        let start_at = self.own[s].partition_point(|&i| i < min_idx);
        let candidates: Vec<usize> = self.own[s][start_at..]
            .iter()
            .copied()
            .filter(|&i| min_ts.is_none_or(|t| self.ts(i) > t))
            .collect();

        let empty_first = kind == StateKind::Star && {
            let next = self.first_matching(min_idx, self.next_mask[s]);
            match (candidates.first(), next) {
                (Some(&own), Some(next)) => next < own,
                (None, _) => true,
                (Some(_), None) => false,
            }
        };
        if empty_first && self.take_empty(s, prev, lower, pending, chosen) {
            return true;
        }

        for f in candidates {
            let (ok, hopeless) = self.constraints_at(s, f, chosen);
            if !ok {
                if hopeless {
                    break;
                }
                continue;
            }
            if !self.guard_clear(pending, prev, f) {
                continue;
            }
            let ends = match kind {
                StateKind::Single => vec![f],
                StateKind::Plus | StateKind::Star => self.kleene_ends(s, f),
            };
            for e in ends {
                if e != f && !self.absorbed_increasing(s, f, e) {
                    continue;
                }
                chosen.push(Choice::Span { first: f, end: e });
                let stop = self.search(s + 1, Some(e), (e + 1, Some(self.ts(e))), 0, chosen);
                chosen.pop();
                if stop {
                    return true;
                }
            }
        }

        if kind == StateKind::Star && !empty_first {
            return self.take_empty(s, prev, lower, pending, chosen);
        }
        false
    }

    fn take_empty(
        &mut self,
        s: usize,
        prev: Option<usize>,
        lower: (usize, Option<Timestamp>),
        pending: u64,
        chosen: &mut Vec<Choice>,
    ) -> bool {
        chosen.push(Choice::Empty);
        let stop = self.search(s + 1, prev, lower, pending, chosen);
        chosen.pop();
        stop
    }

    fn occurrence(&self, trace_id: &TraceId, choices: &[Choice]) -> Occurrence {
        let matches = choices
            .iter()
            .enumerate()
            .map(|(s, c)| match *c {
                Choice::Empty => Vec::new(),
                Choice::Span { first, end } => self.own[s]
                    .iter()
                    .filter(|&&i| first <= i && i <= end)
                    .map(|&i| self.events[i].clone())
                    .collect(),
            })
            .collect();
        Occurrence { trace_id: trace_id.clone(), matches, modification_cost: None }
    }
}

fn last_index(choices: &[Choice]) -> Option<usize> {
    choices.iter().rev().find_map(|c| match c {
        Choice::Span { end, .. } => Some(*end),
        Choice::Empty => None,
    })
}

/// Finds occurrences of `cp` in `stream` under `policy`.
///
/// With skip-till-next-match the first occurrence is returned, or with
/// `return_all` a run of occurrences where each one starts after the
/// previous one ends. Skip-till-any-match returns every valid assignment
/// and is exponential in the worst case.
pub fn match_stream(cp: &CompiledPattern, stream: &CandidateStream, policy: MatchPolicy) -> Vec<Occurrence> {
    let events: Vec<Event>;
    let events: &[Event] = match cp.window {
        Some(w) => {
            events = stream.events.iter().filter(|e| w.contains(e.ts)).cloned().collect();
            &events
        }
        None => &stream.events,
    };
    let mut m = Matcher::new(cp, events, policy.strategy);
    let mut chosen = Vec::with_capacity(cp.states.len());

    if policy.strategy == Strategy::SkipTillAnyMatch {
        m.search(0, None, (0, None), 0, &mut chosen);
        let found = std::mem::take(&mut m.found);
        return found.iter().map(|c| m.occurrence(&stream.trace_id, c)).collect();
    }

    let mut out = Vec::new();
    let mut lower = (0usize, None);
    loop {
        m.memo.clear();
        m.found.clear();
        m.search(0, None, lower, 0, &mut chosen);
        let Some(choices) = m.found.pop() else { break };
        out.push(m.occurrence(&stream.trace_id, &choices));
        if !policy.return_all {
            break;
        }
        let last = last_index(&choices).expect("occurrence has a mandatory event");
        lower = (last + 1, Some(m.ts(last)));
    }
    select_non_overlapping(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Trace;

    fn stream(items: &[(&str, i64)]) -> CandidateStream {
        let t = Trace::from_types("t", items);
        CandidateStream { trace_id: t.trace_id, events: t.events }
    }

    fn pat(text: &str) -> Vec<QueryEvent> {
        crate::planner::query::Query::parse(&format!("FROM x PATTERN {text}")).unwrap().pattern
    }

    fn spans(occs: &[Occurrence]) -> Vec<Vec<Vec<i64>>> {
        occs.iter().map(|o| o.matches.iter().map(|m| m.iter().map(|e| e.ts).collect()).collect()).collect()
    }

    fn first(text: &str, cs: &[Constraint], items: &[(&str, i64)]) -> Vec<Vec<Vec<i64>>> {
        let cp = compile(&pat(text), cs).unwrap();
        spans(&match_stream(&cp, &stream(items), MatchPolicy::first()))
    }

    #[test]
    fn compile_shapes() {
        let cp = compile(&pat("A;B;C"), &[]).unwrap();
        assert_eq!(cp.states.len(), 3);
        assert!(cp.guards.is_empty());
        let cp = compile(&pat("A;!B;C"), &[]).unwrap();
        assert_eq!(cp.states.len(), 2);
        assert_eq!(cp.guards, vec![Guard { types: vec!["B".into()], before: 1 }]);
        let cp = compile(&pat("A|B;C"), &[]).unwrap();
        assert_eq!(cp.states[0].types, ["A", "B"]);
        let err = compile(&pat("A;!B;C"), &[Constraint::time_within(5, 1, 2)]);
        assert!(err.is_err());
    }

    #[test]
    fn simple_match() {
        assert_eq!(first("A;B;C", &[], &[("A", 1), ("B", 2), ("C", 3)]), vec![vec![vec![1], vec![2], vec![3]]]);
    }

    #[test]
    fn backtracks_past_constraint_failure() {
        let min = 60_000;
        let got = first(
            "A;B;C",
            &[Constraint::time_within(60 * min, 1, 2)],
            &[("A", 0), ("A", 270 * min), ("B", 300 * min), ("C", 310 * min)],
        );
        assert_eq!(got, vec![vec![vec![270 * min], vec![300 * min], vec![310 * min]]]);
    }

    #[test]
    fn negation_guard() {
        assert!(first("A;!B;C", &[], &[("A", 1), ("B", 2), ("C", 3)]).is_empty());
        assert_eq!(first("A;!B;C", &[], &[("A", 1), ("C", 3)]), vec![vec![vec![1], vec![3]]]);
        // A later A restarts the guarded region.
        assert_eq!(
            first("A;!B;C", &[], &[("A", 1), ("B", 2), ("A", 3), ("C", 4)]),
            vec![vec![vec![3], vec![4]]]
        );
    }

    #[test]
    fn kleene_plus_is_greedy_until_next_state() {
        assert_eq!(
            first("A;B+;C", &[], &[("A", 1), ("B", 2), ("B", 3), ("C", 4), ("B", 5)]),
            vec![vec![vec![1], vec![2, 3], vec![4]]]
        );
        assert_eq!(first("A+", &[], &[("A", 1), ("A", 2)]), vec![vec![vec![1, 2]]]);
    }

    #[test]
    fn kleene_star_may_be_empty() {
        assert_eq!(first("A;B*;C", &[], &[("A", 1), ("C", 2)]), vec![vec![vec![1], vec![], vec![2]]]);
        assert_eq!(
            first("A;B*;C", &[], &[("A", 1), ("B", 2), ("C", 3)]),
            vec![vec![vec![1], vec![2], vec![3]]]
        );
        assert_eq!(
            first("A;B*;C", &[], &[("A", 1), ("C", 2), ("B", 3), ("C", 4)]),
            vec![vec![vec![1], vec![], vec![2]]]
        );
    }

    #[test]
    fn kleene_end_shrinks_for_negation() {
        // N@3 lies inside the B+ span, which the guard does not cover.
        assert_eq!(
            first("A;B+;!N;C", &[], &[("A", 1), ("B", 2), ("N", 3), ("B", 4), ("C", 5)]),
            vec![vec![vec![1], vec![2, 4], vec![5]]]
        );
    }

    #[test]
    fn or_state_accepts_alternatives() {
        assert_eq!(first("A|B;C", &[], &[("B", 1), ("C", 2)]), vec![vec![vec![1], vec![2]]]);
    }

    #[test]
    fn gap_constraint() {
        let c = Constraint::new(ConstraintKind::Gap, ConstraintMode::Atleast, 3, 1, 2);
        assert!(first("A;B", &[c], &[("A", 1), ("B", 2)]).is_empty());
        assert_eq!(first("A;B", &[c], &[("A", 1), ("B", 2), ("X", 3), ("B", 4)]), vec![vec![vec![1], vec![4]]]);
    }

    #[test]
    fn check_constraint_examples() {
        let ev = |ts, pos| Event::new("t", "X", ts, pos);
        assert!(check_constraint(&Constraint::time_within(2, 2, 3), &[ev(3, 1)], &[ev(5, 2)]));
        let gap = Constraint::new(ConstraintKind::Gap, ConstraintMode::Atleast, 3, 1, 2);
        assert!(!check_constraint(&gap, &[ev(1, 1)], &[ev(2, 2)]));
        let exact = Constraint::new(ConstraintKind::Time, ConstraintMode::Atleast, 2, 1, 2);
        assert!(check_constraint(&exact, &[ev(3, 1)], &[ev(5, 2)]));
        assert!(check_constraint(&Constraint::time_within(2, 1, 2), &[ev(3, 1)], &[ev(5, 2)]));
        assert!(check_constraint(&Constraint::time_within(1, 1, 2), &[], &[ev(5, 2)]));
    }

    fn occ(span: (i64, i64)) -> Occurrence {
        Occurrence {
            trace_id: "t".into(),
            matches: vec![vec![Event::new("t", "A", span.0, 1)], vec![Event::new("t", "B", span.1, 2)]],
            modification_cost: None,
        }
    }

    #[test]
    fn non_overlapping_selection() {
        let kept = |v: Vec<(i64, i64)>| -> Vec<(i64, i64)> {
            select_non_overlapping(v.into_iter().map(occ).collect()).iter().map(|o| o.span().unwrap()).collect()
        };
        assert_eq!(kept(vec![(1, 2), (3, 4)]), vec![(1, 2), (3, 4)]);
        assert_eq!(kept(vec![(1, 5), (4, 8)]), vec![(1, 5)]);
        assert_eq!(kept(vec![(1, 9), (2, 3)]), vec![(2, 3)]);
    }

    #[test]
    fn return_all_consumes() {
        let cp = compile(&pat("A;B"), &[]).unwrap();
        let s = stream(&[("A", 1), ("A", 2), ("B", 3), ("B", 4), ("A", 5), ("B", 6)]);
        let got = spans(&match_stream(&cp, &s, MatchPolicy::all()));
        assert_eq!(got, vec![vec![vec![1], vec![3]], vec![vec![5], vec![6]]]);
    }

    #[test]
    fn skip_till_any_match_enumerates() {
        let cp = compile(&pat("A;B"), &[]).unwrap();
        let s = stream(&[("A", 1), ("A", 2), ("B", 3)]);
        let policy = MatchPolicy { strategy: Strategy::SkipTillAnyMatch, return_all: true };
        assert_eq!(match_stream(&cp, &s, policy).len(), 2);
    }

    #[test]
    fn window_filters_events() {
        let cp = compile(&pat("A;B"), &[]).unwrap().with_window(Some(Window { start: 2, end: 10 }));
        let s = stream(&[("A", 1), ("A", 3), ("B", 4)]);
        assert_eq!(spans(&match_stream(&cp, &s, MatchPolicy::first())), vec![vec![vec![3], vec![4]]]);
    }

    #[test]
    fn failure_memo_keeps_long_streams_fast() {
        // 200 A and 200 B with no C: without memoisation the search is
        // exponential in the pattern length.
        let mut items = Vec::new();
        for i in 0..400 {
            items.push((if i % 2 == 0 { "A" } else { "B" }, i as i64));
        }
        let cp = compile(&pat("A;B;A;B;A;B;A;B;C"), &[]).unwrap();
        assert!(match_stream(&cp, &stream(&items), MatchPolicy::first()).is_empty());
    }
}
