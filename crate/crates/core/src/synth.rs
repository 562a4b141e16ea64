//! Seeded synthetic logs for tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Zipf};
use serde::{Deserialize, Serialize};

use crate::indexer::LogRecord;
use crate::storage::DAY_MS;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeDistribution {
    #[default]
    Uniform,
    /// Zipf with exponent 1.5 over the alphabet.
    PowerLaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub traces: usize,
    /// Mean events per trace; lengths are uniform in `[mean/2, 3·mean/2]`.
    pub mean_len: usize,
    pub alphabet: usize,
    pub distribution: TypeDistribution,
    /// Number of daily batches the traces are spread over.
    pub days: usize,
    /// Fraction of traces that continue into the following day.
    pub carry_over: f64,
    /// Start of day 0 in epoch milliseconds.
    pub start_ts: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            traces: 100,
            mean_len: 20,
            alphabet: 10,
            distribution: TypeDistribution::Uniform,
            days: 1,
            carry_over: 0.0,
            start_ts: 1_704_067_200_000,
        }
    }
}

pub fn type_name(idx: usize) -> String {
    format!("E{idx}")
}

/// One batch of records per day. Each trace lives in one day; a trace
/// carried over has its tail shifted into the next day's batch. Trace ids
/// are `1..=traces`, and trace 1 always starts on day 0.
pub fn generate_batches(cfg: &SynthConfig) -> Vec<Vec<LogRecord>> {
    assert!(cfg.alphabet >= 1 && cfg.days >= 1 && cfg.mean_len >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let zipf = Zipf::new(cfg.alphabet as f64, 1.5).expect("alphabet is positive");
    let mut batches = vec![Vec::new(); cfg.days];
    let lo = (cfg.mean_len / 2).max(1);
    let hi = (cfg.mean_len * 3 / 2).max(lo);
    for t in 0..cfg.traces {
        let day = if t == 0 { 0 } else { rng.random_range(0..cfg.days) };
        let len = rng.random_range(lo..=hi);
        // Keep the whole trace inside its day.
        let max_gap = (DAY_MS / 2 / len as i64).max(1);
        let mut ts = cfg.start_ts + day as i64 * DAY_MS + rng.random_range(0..DAY_MS / 2);
        let carry = day + 1 < cfg.days && len >= 2 && rng.random_bool(cfg.carry_over.clamp(0.0, 1.0));
        let split = if carry { rng.random_range(1..len) } else { len };
        for i in 0..len {
            let ty = match cfg.distribution {
                TypeDistribution::Uniform => rng.random_range(0..cfg.alphabet),
                TypeDistribution::PowerLaw => zipf.sample(&mut rng) as usize - 1,
            };
            let (batch, shift) = if i < split { (day, 0) } else { (day + 1, DAY_MS) };
            batches[batch].push(LogRecord { trace_id: (t + 1).to_string(), event_type: type_name(ty), ts: ts + shift });
            ts += rng.random_range(1..=max_gap);
        }
    }
    batches
}

/// All batches concatenated.
pub fn generate(cfg: &SynthConfig) -> Vec<LogRecord> {
    generate_batches(cfg).into_iter().flatten().collect()
}
