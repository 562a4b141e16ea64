//! Domain types shared by the storage layer, the indexer, the planner and the
//! matcher: events, traces, type-level pairs and their indexed instances,
//! pattern elements, constraints and occurrences.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Milliseconds since the Unix epoch.
pub type Timestamp = i64;

/// Opaque trace (case / session) identifier. Cheap to clone.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TraceId(Arc<str>);

impl TraceId {
    pub fn new(id: impl AsRef<str>) -> Self {
        TraceId(Arc::from(id.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for TraceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for TraceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TraceId {
    fn from(s: &str) -> Self {
        TraceId::new(s)
    }
}

impl From<String> for TraceId {
    fn from(s: String) -> Self {
        TraceId(Arc::from(s))
    }
}

impl Serialize for TraceId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for TraceId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer).map(TraceId::from)
    }
}

/// One timestamped, typed occurrence inside a trace.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub trace_id: TraceId,
    pub event_type: String,
    pub ts: Timestamp,
    /// 1-based position within the trace.
    pub pos: u32,
}

impl Event {
    pub fn new(trace_id: impl Into<TraceId>, event_type: impl Into<String>, ts: Timestamp, pos: u32) -> Self {
        Event {
            trace_id: trace_id.into(),
            event_type: event_type.into(),
            ts,
            pos,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub trace_id: TraceId,
    pub events: Vec<Event>,
}

impl Trace {
    /// Builds a trace from `(type, ts)` tuples, assigning positions 1..=n.
    pub fn from_types(trace_id: impl Into<TraceId>, items: &[(&str, Timestamp)]) -> Self {
        let trace_id = trace_id.into();
        let events = items
            .iter()
            .enumerate()
            .map(|(i, (ty, ts))| Event::new(trace_id.clone(), *ty, *ts, i as u32 + 1))
            .collect();
        Trace { trace_id, events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn max_ts(&self) -> Option<Timestamp> {
        self.events.last().map(|e| e.ts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// `pos` does not equal the list index + 1.
    Position,
    /// Same timestamp as the preceding event.
    DuplicateTimestamp,
    /// Timestamp earlier than the preceding event.
    Order,
    /// Event carries a different trace id than its trace.
    ForeignEvent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceViolation {
    pub pos: u32,
    pub kind: ViolationKind,
}

impl fmt::Display for TraceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            ViolationKind::Position => "position out of sequence",
            ViolationKind::DuplicateTimestamp => "duplicate timestamp",
            ViolationKind::Order => "timestamp out of order",
            ViolationKind::ForeignEvent => "event belongs to another trace",
        };
        write!(f, "{} at pos {}", what, self.pos)
    }
}

/// Checks that positions run 1..=n and timestamps strictly increase.
/// Reports the first offending position.
pub fn validate_trace(trace: &Trace) -> Result<(), TraceViolation> {
    let mut prev: Option<Timestamp> = None;
    for (idx, ev) in trace.events.iter().enumerate() {
        let pos = idx as u32 + 1;
        if ev.trace_id != trace.trace_id {
            return Err(TraceViolation { pos, kind: ViolationKind::ForeignEvent });
        }
        if ev.pos != pos {
            return Err(TraceViolation { pos, kind: ViolationKind::Position });
        }
        if let Some(p) = prev {
            if ev.ts == p {
                return Err(TraceViolation { pos, kind: ViolationKind::DuplicateTimestamp });
            }
            if ev.ts < p {
                return Err(TraceViolation { pos, kind: ViolationKind::Order });
            }
        }
        prev = Some(ev.ts);
    }
    Ok(())
}

/// A pair of event types `(first, second)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EtPair {
    pub first: String,
    pub second: String,
}

impl EtPair {
    pub fn new(first: impl Into<String>, second: impl Into<String>) -> Self {
        EtPair { first: first.into(), second: second.into() }
    }

    pub fn diagonal(ty: impl Into<String>) -> Self {
        let ty = ty.into();
        EtPair { first: ty.clone(), second: ty }
    }

    pub fn is_diagonal(&self) -> bool {
        self.first == self.second
    }
}

impl fmt::Display for EtPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.first, self.second)
    }
}

/// A concrete instance of an [`EtPair`] inside one trace, carrying both
/// timestamps and positions of its two events.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventPair {
    pub trace_id: TraceId,
    pub first_ts: Timestamp,
    pub second_ts: Timestamp,
    pub first_pos: u32,
    pub second_pos: u32,
}

impl EventPair {
    pub fn duration(&self) -> i64 {
        self.second_ts - self.first_ts
    }
}

/// True when the two pairs overlap by position, i.e. neither lies entirely
/// after the other.
///
/// Both pairs must come from the same trace.
pub fn pairs_overlap(p1: &EventPair, p2: &EventPair) -> bool {
    debug_assert_eq!(p1.trace_id, p2.trace_id, "pairs_overlap across traces");
    !(p1.first_pos > p2.second_pos || p1.second_pos < p2.first_pos)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Simple,
    KleenePlus,
    KleeneStar,
    Negation,
    Or,
}

impl Operator {
    pub fn is_kleene(self) -> bool {
        matches!(self, Operator::KleenePlus | Operator::KleeneStar)
    }
}

/// One element of a query pattern.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryEvent {
    pub event_type: String,
    pub operator: Operator,
    /// Extra acceptable types; only non-empty for [`Operator::Or`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<String>,
}

impl QueryEvent {
    pub fn new(event_type: impl Into<String>, operator: Operator) -> Self {
        QueryEvent { event_type: event_type.into(), operator, alternatives: Vec::new() }
    }

    pub fn simple(event_type: impl Into<String>) -> Self {
        Self::new(event_type, Operator::Simple)
    }

    pub fn or(event_type: impl Into<String>, alternatives: &[&str]) -> Self {
        QueryEvent {
            event_type: event_type.into(),
            operator: Operator::Or,
            alternatives: alternatives.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Every type this element accepts: the main type followed by the
    /// alternatives, deduplicated.
    pub fn accepted_types(&self) -> Vec<&str> {
        let mut out = vec![self.event_type.as_str()];
        for alt in &self.alternatives {
            if !out.contains(&alt.as_str()) {
                out.push(alt);
            }
        }
        out
    }

    pub fn is_positive(&self) -> bool {
        self.operator != Operator::Negation
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Gap,
    Time,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    Within,
    #[serde(alias = "at_least")]
    Atleast,
}

/// A time or gap constraint between pattern positions `i < j` (1-based).
/// Time values are milliseconds, gap values are position differences.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Constraint {
    pub kind: ConstraintKind,
    pub mode: ConstraintMode,
    pub value: i64,
    pub i: usize,
    pub j: usize,
}

impl Constraint {
    pub fn new(kind: ConstraintKind, mode: ConstraintMode, value: i64, i: usize, j: usize) -> Self {
        Constraint { kind, mode, value, i, j }
    }

    pub fn time_within(value: i64, i: usize, j: usize) -> Self {
        Self::new(ConstraintKind::Time, ConstraintMode::Within, value, i, j)
    }

    /// Evaluates the constraint given the anchoring events of positions
    /// `i` and `j`. Both bounds are inclusive.
    pub fn holds(&self, at_i: &Event, at_j: &Event) -> bool {
        let diff = match self.kind {
            ConstraintKind::Time => at_j.ts - at_i.ts,
            ConstraintKind::Gap => at_j.pos as i64 - at_i.pos as i64,
        };
        self.holds_for_difference(diff)
    }

    pub fn holds_for_difference(&self, diff: i64) -> bool {
        match self.mode {
            ConstraintMode::Within => diff <= self.value,
            ConstraintMode::Atleast => diff >= self.value,
        }
    }
}

/// One detected match inside a trace (or group stream).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occurrence {
    pub trace_id: TraceId,
    /// One list per positive pattern position; singletons except for Kleene
    /// positions, empty for an unmatched Kleene-star position.
    pub matches: Vec<Vec<Event>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modification_cost: Option<i64>,
}

impl Occurrence {
    pub fn first_event(&self) -> Option<&Event> {
        self.matches.iter().flatten().next()
    }

    pub fn last_event(&self) -> Option<&Event> {
        self.matches.iter().rev().flat_map(|m| m.iter().rev()).next()
    }

    /// `(first ts, last ts)` of the occurrence.
    pub fn span(&self) -> Option<(Timestamp, Timestamp)> {
        Some((self.first_event()?.ts, self.last_event()?.ts))
    }

    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.matches.iter().flatten()
    }
}

/// Two occurrences do not overlap when one ends strictly before the other
/// starts.
pub fn occurrences_overlap(a: &Occurrence, b: &Occurrence) -> bool {
    match (a.span(), b.span()) {
        (Some((a1, ap)), Some((b1, bp))) => !(ap < b1 || a1 > bp),
        _ => false,
    }
}

/// Dense integer ids for event type names.
#[derive(Clone, Debug, Default)]
pub struct TypeInterner {
    ids: HashMap<String, u32>,
    names: Vec<String>,
}

impl TypeInterner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}
