use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use logsieve::engine::{execute, ConsistencyGate, EngineError, QueryResult};
use logsieve::explainer::{check_consistency, ConsistencyReport};
use logsieve::indexer::input::write_csv;
use logsieve::indexer::{ingest, parse_log, IngestBatch, IngestError, InputFormat};
use logsieve::planner::{stats_query, PairStats, Query, QueryError};
use logsieve::storage::{audit, Compression, Store, StoreConfig, StoreError, StoreMode};
use logsieve::synth::{generate_batches, SynthConfig, TypeDistribution};
use serde_json::json;

#[derive(Parser)]
#[command(name = "logsieve", version, about = "Index event logs and detect patterns in them")]
struct Cli {
    /// Directory holding the log databases.
    #[arg(long, env = "LOGSIEVE_ROOT", default_value = ".", global = true)]
    root: PathBuf,
    /// Output as JSON or a plain table.
    #[arg(long, value_enum, default_value_t = Format::Json, global = true)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a batch of events.
    Index(IndexArgs),
    /// Run a pattern query.
    Query(QueryArgs),
    /// Pair statistics for consecutive elements of a pattern.
    Stats {
        /// Log database name.
        #[arg(long)]
        log: String,
        /// Types separated by `;`, e.g. `A;B;C`.
        #[arg(long)]
        pattern: String,
    },
    /// Check a query against the indexed log without running it.
    Check(QuerySource),
    /// Write a synthetic log as CSV.
    Gen(GenArgs),
    /// Show a store's configuration, size and audit result.
    Inspect {
        /// Log database name.
        #[arg(long)]
        log: String,
    },
}

#[derive(Args)]
struct IndexArgs {
    /// Log database name; created on first ingest.
    #[arg(long)]
    log: String,
    /// Batch file with trace_id, event_type and timestamp per event.
    #[arg(long)]
    input: PathBuf,
    /// Input file format.
    #[arg(long, value_enum, default_value_t = InputKind::Csv)]
    input_format: InputKind,
    /// Store pair positions (pos) or timestamps (ts); fixed at creation.
    #[arg(long, value_enum, default_value_t = ModeArg::Pos)]
    mode: ModeArg,
    /// Length of an index interval, in days.
    #[arg(long, default_value_t = 30)]
    split_every_days: u32,
    /// Traces per sequence and watermark segment.
    #[arg(long, default_value_t = 10_000)]
    trace_split: u32,
    /// Maximum separation of paired events, in days.
    #[arg(long, default_value_t = 30)]
    lookback: u32,
    /// Compress segments with DEFLATE.
    #[arg(long)]
    deflate: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputKind {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Pos,
    Ts,
}

#[derive(Args)]
struct QuerySource {
    /// Query text, e.g. `FROM main PATTERN A;B;C`.
    #[arg(long = "q", conflicts_with = "query_file", required_unless_present = "query_file")]
    text: Option<String>,
    /// Query as JSON.
    #[arg(long)]
    query_file: Option<PathBuf>,
}

impl QuerySource {
    fn load(&self) -> Result<Query, Failure> {
        match (&self.text, &self.query_file) {
            (Some(text), _) => Ok(Query::parse(text)?),
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))
                    .map_err(Failure::User)?;
                Ok(Query::from_json(&text)?)
            }
            (None, None) => Err(Failure::User(anyhow!("give a query with --q or --query-file"))),
        }
    }
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    source: QuerySource,
    /// Run the query even when the consistency check finds problems.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct GenArgs {
    /// Output CSV. With more than one day, one file per day is written
    /// next to it as `<stem>.day<N>.csv`.
    #[arg(long)]
    output: PathBuf,
    /// Random seed; equal seeds give identical output.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of traces.
    #[arg(long, default_value_t = 1000)]
    traces: usize,
    /// Mean events per trace.
    #[arg(long, default_value_t = 100)]
    mean_len: usize,
    /// Number of distinct event types, named E0, E1, ...
    #[arg(long, default_value_t = 150)]
    alphabet: usize,
    /// Event type frequencies.
    #[arg(long, value_enum, default_value_t = DistArg::Uniform)]
    distribution: DistArg,
    /// Number of daily batches.
    #[arg(long, default_value_t = 1)]
    days: usize,
    /// Fraction of traces that continue into the next day.
    #[arg(long, default_value_t = 0.1)]
    carry_over: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Uniform,
    Powerlaw,
}

/// Error classes, mapped to exit codes 1, 2 and 3.
enum Failure {
    User(anyhow::Error),
    Corrupt(anyhow::Error),
    Internal(anyhow::Error),
    /// Already printed; exit with status 1.
    Reported,
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Corrupt { .. } => Failure::Corrupt(e.into()),
            StoreError::Io { .. } => Failure::Internal(e.into()),
            _ => Failure::User(e.into()),
        }
    }
}

impl From<QueryError> for Failure {
    fn from(e: QueryError) -> Self {
        Failure::User(e.into())
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Store(s) => s.into(),
            other => Failure::User(other.into()),
        }
    }
}

fn emit(format: Format, value: &serde_json::Value, table: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), Failure> {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let res = match format {
        Format::Json => serde_json::to_writer_pretty(&mut out, value).map_err(io::Error::other).and_then(|_| writeln!(out)),
        Format::Table => table(&mut out),
    };
    res.and_then(|_| out.flush()).map_err(|e| Failure::Internal(e.into()))
}

fn to_json<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

fn cmd_index(root: &Path, format: Format, a: &IndexArgs) -> Result<(), Failure> {
    let file = File::open(&a.input).with_context(|| format!("opening {}", a.input.display())).map_err(Failure::User)?;
    let input_format = match a.input_format {
        InputKind::Csv => InputFormat::Csv,
        InputKind::Jsonl => InputFormat::JsonLines,
    };
    let records = parse_log(io::BufReader::new(file), input_format)
        .with_context(|| format!("parsing {}", a.input.display()))
        .map_err(Failure::User)?;
    let config = StoreConfig {
        log_name: a.log.clone(),
        mode: match a.mode {
            ModeArg::Pos => StoreMode::Pos,
            ModeArg::Ts => StoreMode::Ts,
        },
        split_every_days: a.split_every_days,
        trace_split: a.trace_split,
        lookback: a.lookback,
        compression: if a.deflate { Compression::Deflate } else { Compression::None },
    };
    let mut store = Store::open_with(root, config)?;
    let report = ingest(&mut store, &IngestBatch::new(records))?;
    emit(format, &to_json(&report), |w| {
        writeln!(w, "traces touched     {}", report.traces_touched)?;
        writeln!(w, "events ingested    {}", report.events_ingested)?;
        writeln!(w, "pairs created      {}", report.pairs_created)?;
        writeln!(w, "segments rewritten {}", report.segments_rewritten)?;
        writeln!(w, "wall time          {} ms", report.wall_time_ms)
    })
}

fn write_report(w: &mut dyn Write, r: &ConsistencyReport) -> io::Result<()> {
    for t in &r.unknown_types {
        writeln!(w, "unknown type           {t}")?;
    }
    for p in &r.missing_pairs {
        writeln!(w, "unseen pair            ({}, {})", p.first, p.second)?;
    }
    for u in &r.unsatisfiable_constraints {
        let c = &u.constraint;
        writeln!(
            w,
            "unsatisfiable          {:?} {:?} {} between {} and {} (recorded {}..{} ms)",
            c.kind, c.mode, c.value, c.i, c.j, u.min_duration, u.max_duration
        )?;
    }
    Ok(())
}

fn print_inconsistent(format: Format, r: &ConsistencyReport) -> Result<(), Failure> {
    emit(format, &json!({ "consistent": false, "report": r }), |w| {
        writeln!(w, "query is inconsistent with the indexed log")?;
        write_report(w, r)
    })
}

fn cmd_query(root: &Path, format: Format, a: &QueryArgs) -> Result<(), Failure> {
    let query = a.source.load()?;
    let store = Store::open_existing(root, &query.log_name)?;
    let gate = if a.force { ConsistencyGate::Report } else { ConsistencyGate::Reject };
    let result: QueryResult = match execute(&store, &query, gate) {
        Ok(r) => r,
        Err(EngineError::Inconsistent(report)) => {
            print_inconsistent(format, &report)?;
            return Err(Failure::Reported);
        }
        Err(EngineError::Query(e)) => return Err(e.into()),
        Err(EngineError::Store(e)) => return Err(e.into()),
    };
    emit(format, &to_json(&result), |w| {
        writeln!(w, "{} matching of {} candidates", result.matching.len(), result.candidates)?;
        for occ in &result.occurrences {
            let evs: Vec<String> = occ.events().map(|e| format!("{}@{}#{}", e.event_type, e.ts, e.pos)).collect();
            writeln!(w, "  {:<12} {}", occ.trace_id.as_str(), evs.join(" "))?;
        }
        for ex in &result.explanations {
            let evs: Vec<String> =
                ex.events.iter().map(|m| format!("{}@{}->{}", m.original.event_type, m.original.ts, m.modified_ts)).collect();
            writeln!(w, "  explain {:<8} cost {:<8} {}", ex.trace_id.as_str(), ex.cost, evs.join(" "))?;
        }
        if !result.consistency.is_consistent() {
            write_report(w, &result.consistency)?;
        }
        let t = &result.timing;
        writeln!(w, "fetch+prune {:.2} ms, validation {:.2} ms, total {:.2} ms", t.fetch_prune_ms, t.validation_ms, t.total_ms)
    })
}

fn cmd_stats(root: &Path, format: Format, log: &str, pattern: &str) -> Result<(), Failure> {
    let store = Store::open_existing(root, log)?;
    let query = Query::parse(&format!("FROM {log} PATTERN {pattern}"))?;
    let stats: Vec<PairStats> = stats_query(&store, &query.pattern)?;
    emit(format, &to_json(&stats), |w| {
        writeln!(w, "{:<24} {:>10} {:>12} {:>10} {:>10} {:>12}", "pair", "count", "sum ms", "min ms", "max ms", "mean ms")?;
        for s in &stats {
            let name = format!("({}, {})", s.et_pair.first, s.et_pair.second);
            if s.seen {
                writeln!(
                    w,
                    "{name:<24} {:>10} {:>12} {:>10} {:>10} {:>12.1}",
                    s.total_completions, s.sum_durations, s.min_duration, s.max_duration, s.mean_duration
                )?;
            } else {
                writeln!(w, "{name:<24} {:>10}", "unseen")?;
            }
        }
        Ok(())
    })
}

fn cmd_check(root: &Path, format: Format, source: &QuerySource) -> Result<(), Failure> {
    let query = source.load()?;
    query.validate()?;
    let store = Store::open_existing(root, &query.log_name)?;
    let report = check_consistency(&store, &query)?;
    if !report.is_consistent() {
        print_inconsistent(format, &report)?;
        return Err(Failure::Reported);
    }
    emit(format, &json!({ "consistent": true, "report": report }), |w| writeln!(w, "query is consistent"))
}

fn cmd_gen(format: Format, a: &GenArgs) -> Result<(), Failure> {
    if a.alphabet == 0 || a.mean_len == 0 || a.days == 0 {
        return Err(Failure::User(anyhow!("alphabet, mean length and days must be positive")));
    }
    if !(0.0..=1.0).contains(&a.carry_over) {
        return Err(Failure::User(anyhow!("carry-over must lie in [0, 1]")));
    }
    let cfg = SynthConfig {
        seed: a.seed,
        traces: a.traces,
        mean_len: a.mean_len,
        alphabet: a.alphabet,
        distribution: match a.distribution {
            DistArg::Uniform => TypeDistribution::Uniform,
            DistArg::Powerlaw => TypeDistribution::PowerLaw,
        },
        days: a.days,
        carry_over: a.carry_over,
        ..SynthConfig::default()
    };
    let batches = generate_batches(&cfg);
    let mut files = Vec::new();
    let write = |path: &Path, records: &[_]| -> Result<(), Failure> {
        let f = File::create(path).with_context(|| format!("creating {}", path.display())).map_err(Failure::User)?;
        write_csv(records, BufWriter::new(f)).with_context(|| format!("writing {}", path.display())).map_err(Failure::Internal)
    };
    if batches.len() == 1 {
        write(&a.output, &batches[0])?;
        files.push(json!({ "path": a.output, "events": batches[0].len() }));
    } else {
        let stem = a.output.file_stem().and_then(|s| s.to_str()).unwrap_or("log");
        for (d, batch) in batches.iter().enumerate() {
            let path = a.output.with_file_name(format!("{stem}.day{}.csv", d + 1));
            write(&path, batch)?;
            files.push(json!({ "path": path, "events": batch.len() }));
        }
    }
    let value = json!({ "config": cfg, "files": files });
    emit(format, &value, |w| {
        for f in &files {
            writeln!(w, "{} {} events", f["path"].as_str().unwrap_or_default(), f["events"])?;
        }
        Ok(())
    })
}

fn cmd_inspect(root: &Path, format: Format, log: &str) -> Result<(), Failure> {
    let store = Store::open_existing(root, log)?;
    let files = store.segment_files()?;
    let bytes: u64 = files.iter().filter_map(|p| std::fs::metadata(p).ok()).map(|m| m.len()).sum();
    let types = store.event_types()?;
    let report = audit(&store)?;
    let value = json!({
        "log_name": store.config().log_name,
        "config": store.config(),
        "origin_ts": store.origin(),
        "traces": store.trace_ids().len(),
        "event_types": types.len(),
        "segment_files": files.len(),
        "segment_bytes": bytes,
        "audit": { "clean": report.is_clean(), "pairs_checked": report.pairs_checked, "violations": report.violations },
    });
    emit(format, &value, |w| {
        let c = store.config();
        writeln!(w, "log            {}", c.log_name)?;
        writeln!(w, "mode           {:?}", c.mode)?;
        writeln!(w, "lookback       {} days", c.lookback)?;
        writeln!(w, "split          {} days, {} traces", c.split_every_days, c.trace_split)?;
        writeln!(w, "traces         {}", store.trace_ids().len())?;
        writeln!(w, "event types    {}", types.len())?;
        writeln!(w, "segments       {} files, {} bytes", files.len(), bytes)?;
        writeln!(w, "audit          {}", if report.is_clean() { "clean" } else { "FAILED" })?;
        for v in &report.violations {
            writeln!(w, "  {v}")?;
        }
        Ok(())
    })?;
    if report.is_clean() {
        Ok(())
    } else {
        Err(Failure::Corrupt(anyhow!("audit found {} violations", report.violations.len())))
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Index(a) => cmd_index(&cli.root, cli.format, a),
        Command::Query(a) => cmd_query(&cli.root, cli.format, a),
        Command::Stats { log, pattern } => cmd_stats(&cli.root, cli.format, log, pattern),
        Command::Check(source) => cmd_check(&cli.root, cli.format, source),
        Command::Gen(a) => cmd_gen(cli.format, a),
        Command::Inspect { log } => cmd_inspect(&cli.root, cli.format, log),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (code, err) = match run(&cli) {
        Ok(()) => return ExitCode::SUCCESS,
        Err(Failure::Reported) => (1, None),
        Err(Failure::User(e)) => (1, Some(e)),
        Err(Failure::Corrupt(e)) => (2, Some(e)),
        Err(Failure::Internal(e)) => (3, Some(e)),
    };
    if let Some(e) = err {
        eprintln!("error: {e:#}");
    }
    ExitCode::from(code)
}
