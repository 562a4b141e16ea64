//! Query model, validation and the compact text syntax.
//!
//! ```text
//! query      = "FROM" name "PATTERN" pattern
//!              [ "WHERE" constraint { "," constraint } ]
//!              [ "BETWEEN" timestamp "AND" timestamp ]
//!              [ "GROUPS" "[" group { "," group } "]" ]
//!              [ "EXPLAIN-NON-ANSWERS" ["("] int [","] int [","] int [")"] ]
//!              [ "RETURN-ALL" ( "true" | "false" ) ] ;
//! pattern    = element { ";" element } ;
//! element    = "!" type | type "+" | type "*" | type { "|" type } ;
//! constraint = ( "time" | "gap" ) ( "within" | "atleast" ) int int int ;
//! group      = "(" item { "," item } ")" ;
//! item       = trace-id | int "-" int ;
//! ```
//!
//! Keywords are case-insensitive. Types and names are bare words or
//! double-quoted strings; timestamps are integer milliseconds or RFC 3339.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::indexer::input::parse_timestamp_str;
use crate::model::{Constraint, ConstraintKind, ConstraintMode, Operator, QueryEvent, Timestamp, TraceId};

/// Patterns are compiled into bitmasks over positions.
pub const MAX_PATTERN_LEN: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid query: {0}")]
    Invalid(String),
}

/// Inclusive time window applied to the first and last event of an
/// occurrence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Window {
    pub fn contains(&self, ts: Timestamp) -> bool {
        self.start <= ts && ts <= self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplainParams {
    pub k: i64,
    pub uncertainty: i64,
    pub step: i64,
}

/// One member of a group: a literal trace id, or an inclusive range of
/// numeric trace ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GroupItem {
    Id(String),
    Range(u64, u64),
}

impl GroupItem {
    pub fn parse(s: &str) -> GroupItem {
        if let Some((lo, hi)) = s.split_once('-') {
            if let (Ok(lo), Ok(hi)) = (lo.trim().parse::<u64>(), hi.trim().parse::<u64>()) {
                return GroupItem::Range(lo, hi);
            }
        }
        GroupItem::Id(s.to_string())
    }

    pub fn contains(&self, trace: &TraceId) -> bool {
        match self {
            GroupItem::Id(id) => id == trace.as_str(),
            GroupItem::Range(lo, hi) => trace.as_str().parse::<u64>().is_ok_and(|n| *lo <= n && n <= *hi),
        }
    }
}

impl fmt::Display for GroupItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupItem::Id(id) => f.write_str(id),
            GroupItem::Range(lo, hi) => write!(f, "{lo}-{hi}"),
        }
    }
}

impl Serialize for GroupItem {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GroupItem {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Str(String),
            Num(u64),
        }
        Ok(match Raw::deserialize(deserializer)? {
            Raw::Str(s) => GroupItem::parse(&s),
            Raw::Num(n) => GroupItem::Id(n.to_string()),
        })
    }
}

pub type Group = Vec<GroupItem>;

/// Label of a group stream, e.g. `(1-3,8)`.
pub fn group_label(group: &Group) -> String {
    let items: Vec<String> = group.iter().map(|g| g.to_string()).collect();
    format!("({})", items.join(","))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub log_name: String,
    pub pattern: Vec<QueryEvent>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<Window>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<Group>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explain: Option<ExplainParams>,
    #[serde(default)]
    pub return_all: bool,
}

impl Query {
    pub fn new(log_name: impl Into<String>, pattern: Vec<QueryEvent>) -> Self {
        Query {
            log_name: log_name.into(),
            pattern,
            constraints: Vec::new(),
            window: None,
            groups: None,
            explain: None,
            return_all: false,
        }
    }

    /// Shorthand for a pattern of simple events.
    pub fn simple(log_name: impl Into<String>, types: &[&str]) -> Self {
        Self::new(log_name, types.iter().map(|t| QueryEvent::simple(*t)).collect())
    }

    pub fn with_constraint(mut self, c: Constraint) -> Self {
        self.constraints.push(c);
        self
    }

    pub fn from_json(text: &str) -> Result<Query, QueryError> {
        let q: Query = serde_json::from_str(text).map_err(|e| QueryError::Parse(e.to_string()))?;
        q.validate()?;
        Ok(q)
    }

    pub fn parse(text: &str) -> Result<Query, QueryError> {
        let q = Parser::new(text)?.query()?;
        q.validate()?;
        Ok(q)
    }

    pub fn is_simple(&self) -> bool {
        self.pattern.iter().all(|e| e.operator == Operator::Simple)
    }

    /// Every event type named anywhere in the pattern, in pattern order.
    pub fn event_types(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in &self.pattern {
            for t in e.accepted_types() {
                if !out.contains(&t) {
                    out.push(t);
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        let bad = |m: String| Err(QueryError::Invalid(m));
        let n = self.pattern.len();
        if n == 0 {
            return bad("pattern is empty".into());
        }
        if n > MAX_PATTERN_LEN {
            return bad(format!("pattern longer than {MAX_PATTERN_LEN} elements"));
        }
        for (idx, e) in self.pattern.iter().enumerate() {
            let p = idx + 1;
            if e.event_type.is_empty() {
                return bad(format!("position {p} has an empty type"));
            }
            match e.operator {
                Operator::Or if e.alternatives.is_empty() => {
                    return bad(format!("or at position {p} has no alternatives"))
                }
                Operator::Or => {}
                _ if !e.alternatives.is_empty() => {
                    return bad(format!("alternatives at position {p} require the or operator"))
                }
                _ => {}
            }
        }
        if self.pattern[0].operator == Operator::Negation || self.pattern[n - 1].operator == Operator::Negation {
            return bad("negation may not open or close a pattern".into());
        }
        let mandatory = self
            .pattern
            .iter()
            .any(|e| !matches!(e.operator, Operator::Negation | Operator::KleeneStar));
        if !mandatory {
            return bad("pattern needs at least one element that must occur".into());
        }
        for c in &self.constraints {
            if !(1 <= c.i && c.i < c.j && c.j <= n) {
                return bad(format!("constraint positions {} {} out of range 1..={n}", c.i, c.j));
            }
            if c.value <= 0 {
                return bad(format!("constraint value {} must be positive", c.value));
            }
            for p in [c.i, c.j] {
                if self.pattern[p - 1].operator == Operator::Negation {
                    return bad(format!("constraint references negated position {p}"));
                }
            }
        }
        if let Some(w) = self.window {
            if w.start > w.end {
                return bad(format!("window start {} after end {}", w.start, w.end));
            }
        }
        if let Some(groups) = &self.groups {
            if groups.iter().any(|g| g.is_empty()) {
                return bad("empty group".into());
            }
        }
        if let Some(x) = self.explain {
            if !self.is_simple() {
                return bad("explanations are only available for simple patterns".into());
            }
            if x.k < 0 || x.uncertainty < 0 || x.step < 1 {
                return bad("explain parameters need k >= 0, uncertainty >= 0, step >= 1".into());
            }
            if x.uncertainty % x.step != 0 {
                return bad("uncertainty must be a multiple of step".into());
            }
        }
        Ok(())
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let word = |s: &str| {
            let plain = !s.is_empty()
                && s.chars().all(|c| c.is_alphanumeric() || "_-.:".contains(c))
                && !KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(s));
            if plain {
                s.to_string()
            } else {
                format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
            }
        };
        write!(f, "FROM {} PATTERN ", word(&self.log_name))?;
        let elems: Vec<String> = self
            .pattern
            .iter()
            .map(|e| match e.operator {
                Operator::Simple => word(&e.event_type),
                Operator::KleenePlus => format!("{}+", word(&e.event_type)),
                Operator::KleeneStar => format!("{}*", word(&e.event_type)),
                Operator::Negation => format!("!{}", word(&e.event_type)),
                Operator::Or => std::iter::once(&e.event_type).chain(&e.alternatives).map(|t| word(t)).collect::<Vec<_>>().join("|"),
            })
            .collect();
        f.write_str(&elems.join(";"))?;
        if !self.constraints.is_empty() {
            let cs: Vec<String> = self
                .constraints
                .iter()
                .map(|c| {
                    let kind = match c.kind {
                        ConstraintKind::Time => "time",
                        ConstraintKind::Gap => "gap",
                    };
                    let mode = match c.mode {
                        ConstraintMode::Within => "within",
                        ConstraintMode::Atleast => "atleast",
                    };
                    format!("{kind} {mode} {} {} {}", c.value, c.i, c.j)
                })
                .collect();
            write!(f, " WHERE {}", cs.join(", "))?;
        }
        if let Some(w) = self.window {
            write!(f, " BETWEEN {} AND {}", w.start, w.end)?;
        }
        if let Some(groups) = &self.groups {
            let gs: Vec<String> = groups
                .iter()
                .map(|g| {
                    let items: Vec<String> = g
                        .iter()
                        .map(|i| match i {
                            GroupItem::Id(id) => word(id),
                            GroupItem::Range(..) => i.to_string(),
                        })
                        .collect();
                    format!("({})", items.join(","))
                })
                .collect();
            write!(f, " GROUPS [{}]", gs.join(","))?;
        }
        if let Some(x) = self.explain {
            write!(f, " EXPLAIN-NON-ANSWERS {} {} {}", x.k, x.uncertainty, x.step)?;
        }
        if self.return_all {
            f.write_str(" RETURN-ALL true")?;
        }
        Ok(())
    }
}

const KEYWORDS: [&str; 8] = ["FROM", "PATTERN", "WHERE", "BETWEEN", "AND", "GROUPS", "EXPLAIN-NON-ANSWERS", "RETURN-ALL"];

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
    Punct(char),
}

fn lex(text: &str) -> Result<Vec<Tok>, QueryError> {
    const PUNCT: &str = ";|!,()[]";
    let mut toks = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '"' {
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next() {
                    None => return Err(QueryError::Parse("unterminated string".into())),
                    Some('"') => break,
                    Some('\\') => match chars.next() {
                        Some(e) => s.push(e),
                        None => return Err(QueryError::Parse("unterminated string".into())),
                    },
                    Some(ch) => s.push(ch),
                }
            }
            toks.push(Tok::Quoted(s));
        } else if PUNCT.contains(c) {
            chars.next();
            toks.push(Tok::Punct(c));
        } else {
            let mut s = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() || ch == '"' || PUNCT.contains(ch) {
                    break;
                }
                s.push(ch);
                chars.next();
            }
            toks.push(Tok::Word(s));
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<Tok>,
    at: usize,
}

impl Parser {
    fn new(text: &str) -> Result<Self, QueryError> {
        Ok(Parser { toks: lex(text)?, at: 0 })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.at).cloned();
        self.at += 1;
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, QueryError> {
        Err(QueryError::Parse(format!("{} (at token {})", msg.into(), self.at + 1)))
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn at_any_keyword(&self) -> bool {
        KEYWORDS.iter().any(|k| self.at_keyword(k))
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), QueryError> {
        if self.at_keyword(kw) {
            self.at += 1;
            Ok(())
        } else {
            self.err(format!("expected {kw}"))
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, c: char) -> Result<(), QueryError> {
        if self.eat_punct(c) {
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn name(&mut self) -> Result<String, QueryError> {
        if self.at_any_keyword() {
            return self.err("expected a name, found a keyword");
        }
        match self.next() {
            Some(Tok::Word(w)) | Some(Tok::Quoted(w)) => Ok(w),
            _ => {
                self.at -= 1;
                self.err("expected a name")
            }
        }
    }

    fn int(&mut self) -> Result<i64, QueryError> {
        match self.next() {
            Some(Tok::Word(w)) => match w.parse() {
                Ok(v) => Ok(v),
                Err(_) => {
                    self.at -= 1;
                    self.err(format!("expected an integer, found `{w}`"))
                }
            },
            _ => {
                self.at -= 1;
                self.err("expected an integer")
            }
        }
    }

    fn timestamp(&mut self) -> Result<Timestamp, QueryError> {
        match self.next() {
            Some(Tok::Word(w)) | Some(Tok::Quoted(w)) => parse_timestamp_str(&w).map_err(QueryError::Parse),
            _ => {
                self.at -= 1;
                self.err("expected a timestamp")
            }
        }
    }

    fn query(&mut self) -> Result<Query, QueryError> {
        self.expect_keyword("FROM")?;
        let log_name = self.name()?;
        self.expect_keyword("PATTERN")?;
        let mut q = Query::new(log_name, self.pattern()?);
        loop {
            if self.at_keyword("WHERE") {
                self.at += 1;
                loop {
                    q.constraints.push(self.constraint()?);
                    if !self.eat_punct(',') {
                        break;
                    }
                }
            } else if self.at_keyword("BETWEEN") {
                self.at += 1;
                let start = self.timestamp()?;
                self.expect_keyword("AND")?;
                let end = self.timestamp()?;
                q.window = Some(Window { start, end });
            } else if self.at_keyword("GROUPS") {
                self.at += 1;
                q.groups = Some(self.groups()?);
            } else if self.at_keyword("EXPLAIN-NON-ANSWERS") {
                self.at += 1;
                let paren = self.eat_punct('(');
                let k = self.int()?;
                self.eat_punct(',');
                let uncertainty = self.int()?;
                self.eat_punct(',');
                let step = self.int()?;
                if paren {
                    self.expect_punct(')')?;
                }
                q.explain = Some(ExplainParams { k, uncertainty, step });
            } else if self.at_keyword("RETURN-ALL") {
                self.at += 1;
                q.return_all = match self.next() {
                    Some(Tok::Word(w)) if w.eq_ignore_ascii_case("true") => true,
                    Some(Tok::Word(w)) if w.eq_ignore_ascii_case("false") => false,
                    _ => {
                        self.at -= 1;
                        return self.err("RETURN-ALL expects true or false");
                    }
                };
            } else if self.peek().is_none() {
                return Ok(q);
            } else {
                return self.err("unexpected input");
            }
        }
    }

    fn pattern(&mut self) -> Result<Vec<QueryEvent>, QueryError> {
        let mut out = vec![self.element()?];
        while self.eat_punct(';') {
            out.push(self.element()?);
        }
        Ok(out)
    }

    /// A type name with an optional `+` / `*` suffix.
    fn typed_name(&mut self) -> Result<(String, Option<Operator>), QueryError> {
        if self.at_any_keyword() {
            return self.err("expected an event type, found a keyword");
        }
        let (mut name, quoted) = match self.next() {
            Some(Tok::Word(w)) => (w, false),
            Some(Tok::Quoted(w)) => (w, true),
            _ => {
                self.at -= 1;
                return self.err("expected an event type");
            }
        };
        let mut op = None;
        if !quoted && name.len() > 1 && (name.ends_with('+') || name.ends_with('*')) {
            let suffix = name.pop().unwrap();
            op = Some(if suffix == '+' { Operator::KleenePlus } else { Operator::KleeneStar });
        } else if let Some(Tok::Word(w)) = self.peek() {
            if w == "+" || w == "*" {
                op = Some(if w == "+" { Operator::KleenePlus } else { Operator::KleeneStar });
                self.at += 1;
            }
        }
        Ok((name, op))
    }

    fn element(&mut self) -> Result<QueryEvent, QueryError> {
        if self.eat_punct('!') {
            let (name, op) = self.typed_name()?;
            if op.is_some() {
                return self.err("negated element cannot carry a Kleene operator");
            }
            return Ok(QueryEvent::new(name, Operator::Negation));
        }
        let (name, op) = self.typed_name()?;
        if self.peek() == Some(&Tok::Punct('|')) {
            if op.is_some() {
                return self.err("or element cannot carry a Kleene operator");
            }
            let mut alts = Vec::new();
            while self.eat_punct('|') {
                let (alt, op) = self.typed_name()?;
                if op.is_some() {
                    return self.err("or element cannot carry a Kleene operator");
                }
                alts.push(alt);
            }
            return Ok(QueryEvent { event_type: name, operator: Operator::Or, alternatives: alts });
        }
        Ok(QueryEvent::new(name, op.unwrap_or(Operator::Simple)))
    }

    fn constraint(&mut self) -> Result<Constraint, QueryError> {
        let kind = match self.next() {
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("time") => ConstraintKind::Time,
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("gap") => ConstraintKind::Gap,
            _ => {
                self.at -= 1;
                return self.err("expected `time` or `gap`");
            }
        };
        let mode = match self.next() {
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("within") => ConstraintMode::Within,
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("atleast") || w.eq_ignore_ascii_case("at_least") => {
                ConstraintMode::Atleast
            }
            _ => {
                self.at -= 1;
                return self.err("expected `within` or `atleast`");
            }
        };
        let value = self.int()?;
        let i = self.int()?;
        let j = self.int()?;
        if i < 1 || j < 1 {
            return self.err("constraint positions are 1-based");
        }
        Ok(Constraint::new(kind, mode, value, i as usize, j as usize))
    }

    fn groups(&mut self) -> Result<Vec<Group>, QueryError> {
        self.expect_punct('[')?;
        let mut groups = Vec::new();
        loop {
            self.expect_punct('(')?;
            let mut group = Vec::new();
            loop {
                match self.next() {
                    Some(Tok::Word(w)) => group.push(GroupItem::parse(&w)),
                    Some(Tok::Quoted(w)) => group.push(GroupItem::Id(w)),
                    _ => {
                        self.at -= 1;
                        return self.err("expected a trace id or range");
                    }
                }
                if !self.eat_punct(',') {
                    break;
                }
            }
            self.expect_punct(')')?;
            groups.push(group);
            if !self.eat_punct(',') {
                break;
            }
        }
        self.expect_punct(']')?;
        Ok(groups)
    }
}
