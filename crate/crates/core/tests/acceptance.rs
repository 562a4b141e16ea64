//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion; exits non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use logsieve::cep::{compile, match_stream, CandidateStream, MatchPolicy};
use logsieve::engine::{execute, ConsistencyGate, EngineError};
use logsieve::explainer::explain;
use logsieve::indexer::{extract_pairs_for_trace, LogRecord};
use logsieve::model::{occurrences_overlap, Constraint, ConstraintKind, ConstraintMode, EtPair, QueryEvent, Trace, TraceId};
use logsieve::oracle::{brute_force_detect, brute_force_explain, OracleError};
use logsieve::planner::{compute_pair_sets, prune, ExplainParams, Query};
use logsieve::storage::{audit, StoreConfig, StoreMode};
use logsieve::synth::{generate_batches, type_name, SynthConfig, TypeDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MINUTE: i64 = 60_000;

/// Audit outcomes collected across the corpora of criteria 1–6.
#[derive(Default)]
struct Audits {
    stores: usize,
    failures: Vec<String>,
}

impl Audits {
    fn check(&mut self, label: &str, store: &logsieve::storage::Store) {
        self.stores += 1;
        match audit(store) {
            Ok(r) if r.is_clean() => {}
            Ok(r) => self.failures.push(format!("{label}: {}", r.violations.join("; "))),
            Err(e) => self.failures.push(format!("{label}: {e}")),
        }
    }
}

type Outcome = Result<String, String>;

fn criterion_1_and_2(audits: &mut Audits) -> (Outcome, Outcome) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let (mut queries, mut matched_queries, mut occurrences, mut gate_rejects) = (0usize, 0usize, 0usize, 0usize);
    let (mut group_queries, mut redrawn) = (0usize, 0usize);
    let mut mismatches: Vec<String> = Vec::new();
    let mut invalid: Vec<String> = Vec::new();
    let mut pruned_away: Vec<String> = Vec::new();
    for log in 0..200 {
        let alphabet = rng.random_range(2..=6);
        let records = random_log(&mut rng, 50, 20, alphabet);
        let traces = to_traces(&records);
        let mode = if log % 2 == 0 { StoreMode::Pos } else { StoreMode::Ts };
        let dir = tempfile::tempdir().unwrap();
        let store = store_with(dir.path(), config("c1", mode), &[records]);
        audits.check(&format!("criterion 1 log {log}"), &store);
        for _ in 0..100 {
            // Merged groups can exceed the oracle's size limit; draw again.
            let (q, oracle) = loop {
                let q = random_query(&mut rng, "c1", alphabet, traces.len());
                match brute_force_detect(&traces, &q) {
                    Ok(o) => break (q, o),
                    Err(OracleError::TooLarge { .. }) => redrawn += 1,
                    Err(e) => panic!("oracle: {e}"),
                }
            };
            queries += 1;
            if q.groups.is_some() {
                group_queries += 1;
            }
            let expected = oracle.matching();
            if !expected.is_empty() {
                matched_queries += 1;
            }
            let result = match execute(&store, &q, ConsistencyGate::Report) {
                Ok(r) => r,
                Err(e) => {
                    mismatches.push(format!("log {log} `{q}`: engine error {e}"));
                    continue;
                }
            };
            if !result.consistency.is_consistent() && !expected.is_empty() {
                gate_rejects += 1;
            }
            let got: BTreeSet<TraceId> = result.matching.iter().cloned().collect();
            if got != expected {
                mismatches.push(format!("log {log} {mode:?} `{q}`: got {got:?}, oracle {expected:?}"));
            }
            for occ in &result.occurrences {
                occurrences += 1;
                if !oracle.contains(&occ.trace_id, &occ.matches) {
                    invalid.push(format!("log {log} `{q}`: invalid occurrence in {}", occ.trace_id));
                }
            }
            if q.return_all {
                let mut per: BTreeMap<&TraceId, Vec<_>> = BTreeMap::new();
                for o in &result.occurrences {
                    per.entry(&o.trace_id).or_default().push(o);
                }
                for (t, os) in per {
                    for (i, a) in os.iter().enumerate() {
                        if os[i + 1..].iter().any(|b| occurrences_overlap(a, b)) {
                            invalid.push(format!("log {log} `{q}`: overlapping occurrences in {t}"));
                        }
                    }
                }
            }
            if q.groups.is_none() {
                let sets = compute_pair_sets(&q.pattern, &q.constraints);
                let kept = prune(&store, &sets, q.window).expect("prune");
                for t in expected.difference(&kept) {
                    pruned_away.push(format!("log {log} `{q}`: {t} pruned"));
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let c1 = if mismatches.is_empty() && invalid.is_empty() {
        Ok(format!(
            "{queries} queries ({group_queries} grouped, {redrawn} oversized groups redrawn), {matched_queries} with matches, \
             {occurrences} occurrences re-validated, {secs:.1}s (consistency check would have refused {gate_rejects} queries that have matches)"
        ))
    } else {
        let mut all = mismatches.clone();
        all.extend(invalid.iter().cloned());
        Err(format!("{} set mismatches, {} invalid occurrences; first: {}", mismatches.len(), invalid.len(), all[0]))
    };

    // The worked scenario: the first A is too early for the window to B,
    // so the match must use the second A.
    let mut gate_flags = 0;
    let scenario = (|| -> Result<(), String> {
        let records: Vec<LogRecord> = [("A", 0), ("A", 270), ("B", 300), ("C", 310)]
            .iter()
            .map(|&(ty, m)| LogRecord { trace_id: "1".into(), event_type: ty.into(), ts: T0 + m * MINUTE })
            .collect();
        for mode in [StoreMode::Pos, StoreMode::Ts] {
            let dir = tempfile::tempdir().unwrap();
            let store = store_with(dir.path(), config("c2", mode), std::slice::from_ref(&records));
            audits.check("criterion 2 scenario", &store);
            let q = Query::simple("c2", &["A", "B", "C"]).with_constraint(Constraint::time_within(60 * MINUTE, 1, 2));
            // The only indexed (A,B) pair spans 300 minutes, so the duration
            // check flags the constraint although a match exists.
            match execute(&store, &q, ConsistencyGate::Reject) {
                Err(EngineError::Inconsistent(rep)) if rep.unsatisfiable_constraints.len() == 1 => gate_flags += 1,
                other => return Err(format!("{mode:?}: expected the duration check to flag the query, got {other:?}")),
            }
            let r = execute(&store, &q, ConsistencyGate::Report).map_err(|e| e.to_string())?;
            let got: Vec<i64> = r.occurrences.iter().flat_map(|o| o.events().map(|e| (e.ts - T0) / MINUTE)).collect();
            if got != [270, 300, 310] {
                return Err(format!("{mode:?}: occurrence at minutes {got:?}"));
            }
        }
        Ok(())
    })();
    let c2 = match (pruned_away.first(), scenario) {
        (None, Ok(())) => Ok(format!(
            "no oracle match pruned; worked scenario returns (A2,B1,C1) in pos and ts mode \
             (run with the report-only gate; the default gate refused it in {gate_flags} of 2 modes on the recorded-duration rule)"
        )),
        (Some(first), _) => Err(format!("{} oracle matches pruned; first: {first}", pruned_away.len())),
        (None, Err(e)) => Err(format!("worked scenario: {e}")),
    };
    (c1, c2)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    let mut checked = 0usize;
    let mut misses = Vec::new();
    for t in 0..1000 {
        let alphabet = rng.random_range(1..=6);
        let records = random_log(&mut rng, 1, 40, alphabet);
        let trace = to_traces(&records).remove(0);
        let pairs = extract_pairs_for_trace(&trace, &Default::default(), StoreConfig::new("x").lookback_ms());
        let mut by_type: BTreeMap<&str, Vec<i64>> = BTreeMap::new();
        for e in &trace.events {
            by_type.entry(&e.event_type).or_default().push(e.ts);
        }
        for (ty, all) in by_type.iter().filter(|(_, v)| v.len() >= 2) {
            let diag = EtPair::diagonal(*ty);
            let covered: BTreeSet<i64> =
                pairs.iter().filter(|(et, _)| *et == diag).flat_map(|(_, p)| [p.first_ts, p.second_ts]).collect();
            checked += 1;
            for ts in all {
                if !covered.contains(ts) {
                    misses.push(format!("trace {t} type {ty} event at {ts}"));
                }
            }
        }
    }
    if misses.is_empty() {
        Ok(format!("{checked} (type, trace) combinations, zero uncovered events"))
    } else {
        Err(format!("{} uncovered events; first: {}", misses.len(), misses[0]))
    }
}

fn criterion_4(audits: &mut Audits) -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    let mut failures = Vec::new();
    let mut batches_total = 0;
    for log in 0..50u64 {
        let cfg = SynthConfig {
            seed: log,
            traces: rng.random_range(20..=80),
            mean_len: rng.random_range(4..=16),
            alphabet: rng.random_range(2..=8),
            distribution: if log % 3 == 0 { TypeDistribution::PowerLaw } else { TypeDistribution::Uniform },
            days: rng.random_range(1..=10),
            carry_over: 0.1,
            ..SynthConfig::default()
        };
        let batches = generate_batches(&cfg);
        batches_total += batches.len();
        let store_cfg = StoreConfig {
            mode: if log % 2 == 0 { StoreMode::Pos } else { StoreMode::Ts },
            split_every_days: *pick(&mut rng, &[1, 2, 7, 30]),
            trace_split: *pick(&mut rng, &[8, 25, 10_000]),
            lookback: *pick(&mut rng, &[1, 2, 30]),
            ..StoreConfig::new("c4")
        };
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let incremental = store_with(d1.path(), store_cfg.clone(), &batches);
        let single = store_with(d2.path(), store_cfg, &[batches.concat()]);
        audits.check(&format!("criterion 4 log {log} incremental"), &incremental);
        audits.check(&format!("criterion 4 log {log} single"), &single);
        let (a, b) = (dump(&incremental), dump(&single));
        if a.index != b.index {
            failures.push(format!("log {log}: IndexTable differs"));
        }
        if a.last_checked != b.last_checked {
            failures.push(format!("log {log}: LastChecked differs"));
        }
        if a.counts != b.counts {
            failures.push(format!("log {log}: CountTable differs"));
        }
        let dups = duplicate_pairs(&a);
        if dups > 0 {
            failures.push(format!("log {log}: {dups} duplicate event-pairs"));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    if failures.is_empty() {
        Ok(format!("50 logs, {batches_total} daily batches, tables identical, no duplicates, {secs:.1}s"))
    } else {
        Err(format!("{} differences; first: {}", failures.len(), failures[0]))
    }
}

fn criterion_5(audits: &mut Audits) -> Outcome {
    // Worked example in seconds, encoded as milliseconds.
    let s = 1000;
    let records: Vec<LogRecord> = [("A", 2), ("B", 3), ("C", 6)]
        .iter()
        .map(|&(ty, t)| LogRecord { trace_id: "w".into(), event_type: ty.into(), ts: T0 + t * s })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let store = store_with(dir.path(), config("c5", StoreMode::Pos), &[records]);
    audits.check("criterion 5 worked example", &store);
    let mut q = Query::simple("c5", &["B", "A", "C"]).with_constraint(Constraint::time_within(2 * s, 2, 3));
    q.explain = Some(ExplainParams { k: 4 * s, uncertainty: s, step: s });
    let r = execute(&store, &q, ConsistencyGate::Reject).map_err(|e| format!("worked example: {e}"))?;
    let cost = r.explanations.first().map(|e| e.cost);
    if cost != Some(3 * s) {
        return Err(format!("worked example cost {cost:?}, expected 3000"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xC5);
    let mut found = 0;
    for inst in 0..100 {
        let step = rng.random_range(1..=3);
        let n = rng.random_range(2..=6);
        let mut items: Vec<(&str, i64)> = Vec::new();
        let mut ts = 0;
        for _ in 0..n {
            ts += rng.random_range(1..=4) * step;
            items.push((LETTERS[rng.random_range(0..3)], ts));
        }
        let trace = Trace::from_types(inst.to_string(), &items);
        let len = rng.random_range(2..=3);
        let pattern: Vec<QueryEvent> = (0..len).map(|_| QueryEvent::simple(LETTERS[rng.random_range(0..3)])).collect();
        let mut q = Query::new("c5", pattern);
        if rng.random_bool(0.5) {
            let i = rng.random_range(1..len);
            let j = rng.random_range(i + 1..=len);
            let (kind, value) =
                if rng.random_bool(0.7) { (ConstraintKind::Time, rng.random_range(1..=6) * step) } else { (ConstraintKind::Gap, rng.random_range(1..=3)) };
            let mode = if rng.random_bool(0.5) { ConstraintMode::Within } else { ConstraintMode::Atleast };
            q.constraints.push(Constraint::new(kind, mode, value, i, j));
        }
        let params = ExplainParams { k: rng.random_range(0..=5) * step, uncertainty: rng.random_range(0..=2) * step, step };
        q.explain = Some(params);
        let expected = brute_force_explain(&trace, &q).map_err(|e| e.to_string())?;
        let cp = compile(&q.pattern, &q.constraints).map_err(|e| e.to_string())?;
        let stream = CandidateStream { trace_id: trace.trace_id.clone(), events: trace.events.clone() };
        let got = explain(&stream, &cp, params.k, params.uncertainty, params.step).map_err(|e| e.to_string())?;
        if got.as_ref().map(|e| e.cost) != expected {
            return Err(format!("instance {inst} `{q}` on {items:?}: explain {:?}, brute force {expected:?}", got.map(|e| e.cost)));
        }
        if let Some(e) = got {
            found += 1;
            // The explanation itself must be a valid match of the shifted events.
            let shifted: Vec<(&str, i64)> = e.events.iter().map(|m| (m.original.event_type.as_str(), m.modified_ts)).collect();
            let mut st = Trace::from_types("s", &shifted);
            for (ev, m) in st.events.iter_mut().zip(&e.events) {
                ev.pos = m.original.pos;
            }
            let s = CandidateStream { trace_id: st.trace_id.clone(), events: st.events };
            if match_stream(&cp, &s, MatchPolicy::first()).is_empty() {
                return Err(format!("instance {inst}: explanation does not match"));
            }
        }
    }
    Ok(format!("worked example cost 3000 ms (k=4000, u=step=1000); 100 random instances agree ({found} explainable)"))
}

fn criterion_6(audits: &mut Audits) -> Outcome {
    let cfg = SynthConfig {
        seed: 6,
        traces: 1000,
        mean_len: 100,
        alphabet: 150,
        distribution: TypeDistribution::Uniform,
        ..SynthConfig::default()
    };
    let records = generate_batches(&cfg).concat();
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let store = store_with(dir.path(), config("c6", StoreMode::Pos), std::slice::from_ref(&records));
    let ingest_s = t.elapsed().as_secs_f64();
    audits.check("criterion 6 dataset", &store);
    let traces = to_traces(&records);

    let mut rng = ChaCha8Rng::seed_from_u64(0xC6);
    let mut ratios = Vec::new();
    let mut slow = Vec::new();
    let mut matched = 0;
    for qn in 0..50 {
        // Half the queries follow a stored trace so that some of them match.
        let types: Vec<String> = if qn % 2 == 0 {
            let tr = pick(&mut rng, &traces);
            let mut chosen = rand::seq::index::sample(&mut rng, tr.events.len(), tr.events.len().min(10)).into_vec();
            chosen.sort();
            chosen.into_iter().map(|i| tr.events[i].event_type.clone()).collect()
        } else {
            (0..10).map(|_| type_name(rng.random_range(0..150))).collect()
        };
        let refs: Vec<&str> = types.iter().map(String::as_str).collect();
        let q = Query::simple("c6", &refs);
        let r = match execute(&store, &q, ConsistencyGate::Report) {
            Ok(r) => r,
            Err(e) => return Err(format!("query {qn}: {e}")),
        };
        if !r.matching.is_empty() {
            matched += 1;
        }
        ratios.push(r.timing.validation_ms / r.timing.total_ms.max(f64::MIN_POSITIVE));
        if r.timing.total_ms > 5000.0 {
            slow.push(format!("query {qn} took {:.0} ms", r.timing.total_ms));
        }
    }
    ratios.sort_by(f64::total_cmp);
    let median = (ratios[24] + ratios[25]) / 2.0;
    for s in &slow {
        println!("warning: criterion 6 soft bound exceeded: {s}");
    }
    let detail = format!(
        "{} events ingested in {ingest_s:.1}s; median validation share {:.2}% over 50 queries ({matched} matching)",
        records.len(),
        median * 100.0
    );
    if median < 0.2 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_7(audits: &Audits) -> Outcome {
    if audits.failures.is_empty() {
        Ok(format!("{} stores audited clean", audits.stores))
    } else {
        Err(format!("{} of {} stores failed; first: {}", audits.failures.len(), audits.stores, audits.failures[0]))
    }
}

fn criterion_8() -> Outcome {
    let records: Vec<LogRecord> = [("1", "A", 0), ("1", "B", 100), ("1", "C", 200), ("2", "A", 0), ("2", "B", 50)]
        .iter()
        .map(|&(t, ty, ts)| LogRecord { trace_id: t.into(), event_type: ty.into(), ts: T0 + ts })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let store = store_with(dir.path(), config("c8", StoreMode::Pos), &[records]);
    let within = |v| Constraint::new(ConstraintKind::Time, ConstraintMode::Within, v, 1, 2);
    let atleast = |v| Constraint::new(ConstraintKind::Time, ConstraintMode::Atleast, v, 1, 2);
    let cases: [(&str, Query, &str); 5] = [
        ("unknown type", Query::simple("c8", &["A", "Z"]), "unknown"),
        ("unseen pair", Query::simple("c8", &["C", "A"]), "pair"),
        ("within below min", Query::simple("c8", &["A", "B"]).with_constraint(within(10)), "constraint"),
        ("atleast above max", Query::simple("c8", &["A", "B"]).with_constraint(atleast(1000)), "constraint"),
        ("consistent control", Query::simple("c8", &["A", "B"]).with_constraint(within(60)), "none"),
    ];
    for (name, q, want) in cases {
        let got = match execute(&store, &q, ConsistencyGate::Reject) {
            Ok(_) => "none",
            Err(EngineError::Inconsistent(r)) => {
                match (r.unknown_types.is_empty(), r.missing_pairs.is_empty(), r.unsatisfiable_constraints.is_empty()) {
                    (false, true, true) => "unknown",
                    (true, false, true) => "pair",
                    (true, true, false) => "constraint",
                    _ => "mixed",
                }
            }
            Err(e) => return Err(format!("{name}: unexpected error {e}")),
        };
        if got != want {
            return Err(format!("{name}: reported `{got}`, expected `{want}`"));
        }
    }
    Ok("unknown type, unseen pair, within < min and atleast > max each rejected with their own category".into())
}

fn main() -> ExitCode {
    let mut audits = Audits::default();
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let timed = |n: u8| {
        let t = Instant::now();
        move || eprintln!("criterion {n} finished after {:.1}s", t.elapsed().as_secs_f64())
    };
    let done = timed(1);
    let (c1, c2) = criterion_1_and_2(&mut audits);
    done();
    results.push((1, "oracle equivalence", c1));
    results.push((2, "no false negatives", c2));
    let done = timed(3);
    results.push((3, "same-type pair coverage", criterion_3()));
    done();
    let done = timed(4);
    results.push((4, "incremental equals batch", criterion_4(&mut audits)));
    done();
    let done = timed(5);
    results.push((5, "explanation fidelity", criterion_5(&mut audits)));
    done();
    let done = timed(6);
    results.push((6, "pruning effectiveness", criterion_6(&mut audits)));
    done();
    results.push((7, "storage invariants", criterion_7(&audits)));
    results.push((8, "consistency checks", criterion_8()));

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(d) => println!("criterion {n} ({name}): PASS - {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL - {d}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
