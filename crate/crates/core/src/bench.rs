//! Throughput and responsiveness measurement.
//!
//! Throughput scores `B` sequences of `T` tokens per forward pass.
//! Responsiveness scores a stream strictly one token at a time, each step
//! recomputing the last position from a rolling window of the receptive
//! field.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::sweep::median;

pub const DEFAULT_BATCH: usize = 750;
pub const DEFAULT_STEPS: usize = 20;
pub const DEFAULT_STREAM: usize = 15_000;
pub const DEFAULT_WARMUP: usize = 2;
pub const MIN_ITERATIONS: usize = 5;
/// Ceiling for the estimated activation memory of one forward pass.
pub const DEFAULT_MEMORY_LIMIT: usize = 2 << 30;

pub const CSV_HEADER: &str = "throughput_tps,responsiveness_tps,sequence_parallel_tps,batch,steps,stream,warmup,iterations,timer_resolution_ns";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub throughput_tps: f64,
    /// Strict one-token-at-a-time rate.
    pub responsiveness_tps: f64,
    /// The whole stream scored as one sequence in a single forward pass.
    pub sequence_parallel_tps: f64,
    pub batch: usize,
    pub steps: usize,
    pub stream: usize,
    pub warmup: usize,
    pub iterations: usize,
    pub timer_resolution: Duration,
}

impl BenchReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{:.3},{:.3},{:.3},{},{},{},{},{},{}",
            self.throughput_tps,
            self.responsiveness_tps,
            self.sequence_parallel_tps,
            self.batch,
            self.steps,
            self.stream,
            self.warmup,
            self.iterations,
            self.timer_resolution.as_nanos()
        )
    }

    pub fn summary(&self) -> String {
        format!(
            "throughput {:.0} tok/s (B={}, T={}, {} tokens/batch, {} warmup + {} measured)\n\
             responsiveness {:.0} tok/s (strict per-token, stream of {})\n\
             single-sequence parallel {:.0} tok/s\n\
             timer resolution {} ns",
            self.throughput_tps,
            self.batch,
            self.steps,
            self.batch * self.steps,
            self.warmup,
            self.iterations,
            self.responsiveness_tps,
            self.stream,
            self.sequence_parallel_tps,
            self.timer_resolution.as_nanos()
        )
    }
}

/// Smallest nonzero difference between consecutive clock readings.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..1000 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// Rough peak bytes held by one scoring forward pass over `rows` positions.
pub fn forward_memory_estimate<T: Scalar>(model: &Model<T>, rows: usize) -> usize {
    let arch = model.arch();
    let mut per_row = arch.embed_dim * 2;
    for b in &arch.blocks {
        for t in &b.taps {
            per_row += b.repeat * t.n * 6;
        }
    }
    per_row += model.cutoffs().head_outputs() * 3 + arch.output_dim() * 2;
    rows.saturating_mul(per_row).saturating_mul(T::BYTES)
}

fn random_tokens(n: usize, vocab: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..vocab)).collect()
}

fn full_batch(rows: usize, steps: usize, tokens: Vec<usize>) -> Batch {
    let mut targets = tokens[1..].to_vec();
    targets.push(tokens[0]);
    Batch {
        batch: rows,
        steps,
        targets,
        inputs: tokens,
        mask: vec![true; rows * steps],
        input_start: vec![0; rows],
    }
}

/// Scores `batch`, splitting its rows across `jobs` threads.
fn score_sharded<T: Scalar>(model: &Model<T>, batch: &Batch, jobs: usize) -> Result<Vec<T>> {
    if jobs <= 1 || batch.batch < 2 {
        return Ok(model.score(batch)?.into_data());
    }
    let per = batch.batch.div_ceil(jobs);
    let shards: Vec<Batch> = (0..batch.batch)
        .step_by(per)
        .map(|r0| {
            let r1 = (r0 + per).min(batch.batch);
            let s = batch.steps;
            Batch {
                batch: r1 - r0,
                steps: s,
                inputs: batch.inputs[r0 * s..r1 * s].to_vec(),
                targets: batch.targets[r0 * s..r1 * s].to_vec(),
                mask: batch.mask[r0 * s..r1 * s].to_vec(),
                input_start: batch.input_start[r0..r1].to_vec(),
            }
        })
        .collect();
    let parts: Vec<Result<Vec<T>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = shards
            .iter()
            .map(|b| scope.spawn(move || model.score(b).map(|t| t.into_data())))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Contract("scoring thread panicked".into()))))
            .collect()
    });
    let mut out = Vec::with_capacity(batch.num_tokens());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Tokens per second for batched full-forward scoring, head included:
/// `B·T / median iteration time` over `iterations ≥ 5` timed passes.
pub fn measure_throughput<T: Scalar>(
    model: &Model<T>,
    batch: usize,
    steps: usize,
    warmup: usize,
    iterations: usize,
    jobs: usize,
) -> Result<f64> {
    if batch == 0 || steps == 0 {
        return Err(Error::Contract("benchmark geometry must be positive".into()));
    }
    if iterations < MIN_ITERATIONS {
        return Err(Error::Contract(format!(
            "need at least {MIN_ITERATIONS} measured iterations, got {iterations}"
        )));
    }
    let need = forward_memory_estimate(model, batch * steps);
    if need > DEFAULT_MEMORY_LIMIT {
        return Err(Error::Contract(format!(
            "geometry {batch}x{steps} needs about {} MiB, limit is {} MiB",
            need >> 20,
            DEFAULT_MEMORY_LIMIT >> 20
        )));
    }
    let b = full_batch(batch, steps, random_tokens(batch * steps, model.vocab_size(), 11));
    for _ in 0..warmup {
        score_sharded(model, &b, jobs)?;
    }
    let floor = timer_resolution() * 100;
    let mut times = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        // repeat tiny workloads until one sample is long enough to time
        let mut reps = 0usize;
        let start = Instant::now();
        loop {
            std::hint::black_box(score_sharded(model, &b, jobs)?);
            reps += 1;
            if start.elapsed() >= floor {
                break;
            }
        }
        times.push(start.elapsed().as_secs_f64() / reps as f64);
    }
    Ok((batch * steps) as f64 / median(times))
}

/// Strict one-token-at-a-time scorer over a rolling window of the
/// receptive field.
pub struct IncrementalScorer<'a, T> {
    model: &'a Model<T>,
    window: VecDeque<usize>,
    capacity: usize,
}

impl<'a, T: Scalar> IncrementalScorer<'a, T> {
    pub fn new(model: &'a Model<T>) -> Self {
        let capacity = model.arch().effective_context();
        Self {
            model,
            window: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Consumes `token` and returns `log p(next | stream so far)`.
    pub fn push(&mut self, token: usize, next: usize) -> Result<T> {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(token);
        let (a, b) = self.window.as_slices();
        let tokens: Vec<usize> = a.iter().chain(b).copied().collect();
        self.model.last_position_logprob(&tokens, next)
    }
}

/// Full-forward scores of `stream` as one sequence: entry `t` is
/// `log p(stream[t+1] | stream[..=t])`.
pub fn full_sequence_scores<T: Scalar>(model: &Model<T>, stream: &[usize]) -> Result<Vec<T>> {
    if stream.len() < 2 {
        return Err(Error::Contract("stream needs at least two tokens".into()));
    }
    let n = stream.len() - 1;
    let b = Batch {
        batch: 1,
        steps: n,
        inputs: stream[..n].to_vec(),
        targets: stream[1..].to_vec(),
        mask: vec![true; n],
        input_start: vec![0],
    };
    Ok(model.score(&b)?.into_data())
}

/// Incremental scores of `stream`, same indexing as [`full_sequence_scores`].
pub fn incremental_scores<T: Scalar>(model: &Model<T>, stream: &[usize]) -> Result<Vec<T>> {
    let mut s = IncrementalScorer::new(model);
    stream
        .windows(2)
        .map(|w| s.push(w[0], w[1]))
        .collect()
}

/// Tokens per second when a stream of `stream_length` tokens is scored
/// strictly sequentially.
pub fn measure_responsiveness<T: Scalar>(model: &Model<T>, stream_length: usize) -> Result<f64> {
    let stream = random_tokens(stream_length.max(2) + 1, model.vocab_size(), 13);
    let mut s = IncrementalScorer::new(model);
    for w in stream.windows(2).take(DEFAULT_WARMUP) {
        s.push(w[0], w[1])?;
    }
    let mut s = IncrementalScorer::new(model);
    let start = Instant::now();
    for w in stream.windows(2) {
        std::hint::black_box(s.push(w[0], w[1])?);
    }
    Ok((stream.len() - 1) as f64 / start.elapsed().as_secs_f64())
}

/// Median per-token latency (seconds) of the incremental scorer around each
/// of `positions`, over `samples` consecutive tokens.
pub fn latency_at_positions<T: Scalar>(model: &Model<T>, positions: &[usize], samples: usize) -> Result<Vec<f64>> {
    let end = positions.iter().max().copied().unwrap_or(0) + samples + 1;
    let stream = random_tokens(end + 1, model.vocab_size(), 17);
    let mut s = IncrementalScorer::new(model);
    let mut per_token = vec![0.0; end];
    for (t, w) in stream.windows(2).take(end).enumerate() {
        let start = Instant::now();
        std::hint::black_box(s.push(w[0], w[1])?);
        per_token[t] = start.elapsed().as_secs_f64();
    }
    Ok(positions
        .iter()
        .map(|&p| median(per_token[p..p + samples].to_vec()))
        .collect())
}

/// Throughput of scoring the whole stream in one forward pass.
pub fn measure_sequence_parallel<T: Scalar>(model: &Model<T>, stream_length: usize) -> Result<f64> {
    let stream = random_tokens(stream_length.max(2) + 1, model.vocab_size(), 19);
    full_sequence_scores(model, &stream)?;
    let start = Instant::now();
    std::hint::black_box(full_sequence_scores(model, &stream)?);
    Ok(stream_length as f64 / start.elapsed().as_secs_f64())
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub batch: usize,
    pub steps: usize,
    pub stream: usize,
    pub warmup: usize,
    pub iterations: usize,
    pub jobs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch: DEFAULT_BATCH,
            steps: DEFAULT_STEPS,
            stream: DEFAULT_STREAM,
            warmup: DEFAULT_WARMUP,
            iterations: MIN_ITERATIONS,
            jobs: 1,
        }
    }
}

pub fn run<T: Scalar>(model: &Model<T>, cfg: &BenchConfig) -> Result<BenchReport> {
    let throughput_tps = measure_throughput(model, cfg.batch, cfg.steps, cfg.warmup, cfg.iterations, cfg.jobs)?;
    let responsiveness_tps = measure_responsiveness(model, cfg.stream)?;
    let sequence_parallel_tps = measure_sequence_parallel(model, cfg.stream)?;
    Ok(BenchReport {
        throughput_tps,
        responsiveness_tps,
        sequence_parallel_tps,
        batch: cfg.batch,
        steps: cfg.steps,
        stream: cfg.stream,
        warmup: cfg.warmup,
        iterations: cfg.iterations,
        timer_resolution: timer_resolution(),
    })
}
