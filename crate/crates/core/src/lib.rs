//! Event log indexing and pattern detection.
//!
//! Logs are ingested in batches into a directory of immutable segment files
//! holding an inverted index over event-type pairs plus auxiliary tables
//! (full traces, single-type postings, per-pair watermarks and statistics).
//! Pattern queries prune candidate traces through the pair index and then
//! validate the survivors with an automaton-style matcher. Traces that do
//! not match can be explained by the cheapest timestamp adjustment that
//! would make them match.

pub mod model;
pub mod storage;
pub mod indexer;
pub mod planner;
pub mod cep;
pub mod explainer;
pub mod oracle;
pub mod engine;
pub mod synth;
