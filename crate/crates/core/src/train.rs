//! Training loop, perplexity evaluation and learning-curve logs.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{batch_contiguous, batch_sentences, encode_lines, Batch, Mode, Vocabulary};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::{clip_global, global_norm, nesterov_step, OptimizerConfig};
use crate::scalar::Scalar;

pub const CSV_HEADER: &str = "step,epoch,tokens,seconds,train_nll,grad_norm,val_ppl";

/// How long [`train`] runs. Whichever is given is the only limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Budget {
    Steps(usize),
    Epochs(usize),
    Seconds(f64),
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub budget: Budget,
    /// Seeds the per-epoch batch shuffle.
    pub seed: u64,
    pub shuffle: bool,
    /// Validation interval in steps; defaults to one twentieth of the run.
    pub eval_every: Option<usize>,
    /// Append every record to this CSV as it is produced.
    pub metrics_out: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            budget: Budget::Epochs(1),
            seed: 1,
            shuffle: true,
            eval_every: None,
            metrics_out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    /// Predicted tokens seen so far, this step included.
    pub tokens: usize,
    pub seconds: f64,
    pub train_nll: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Global gradient norm actually applied.
    pub applied_norm: f64,
    pub val_ppl: Option<f64>,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        let ppl = self.val_ppl.map(|p| format!("{p:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{}",
            self.step, self.epoch, self.tokens, self.seconds, self.train_nll, self.grad_norm, ppl
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
}

impl RunLog {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// `(tokens, val_ppl)` at every evaluation.
    pub fn evals(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.val_ppl.map(|p| (r.tokens, p)))
            .collect()
    }

    pub fn final_val_ppl(&self) -> Option<f64> {
        self.evals().last().map(|e| e.1)
    }

    pub fn best_val_ppl(&self) -> Option<f64> {
        self.evals().into_iter().map(|e| e.1).reduce(f64::min)
    }

    pub fn tokens_seen(&self) -> usize {
        self.records.last().map_or(0, |r| r.tokens)
    }

    /// Same records with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> RunLog {
        RunLog {
            records: self
                .records
                .iter()
                .map(|r| StepRecord {
                    seconds: 0.0,
                    ..r.clone()
                })
                .collect(),
        }
    }
}

/// Appends one CSV line per record, each with a single write.
struct CsvSink {
    file: std::fs::File,
}

impl CsvSink {
    fn create(path: &Path) -> Result<Self> {
        std::fs::write(path, format!("{CSV_HEADER}\n"))?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self { file })
    }

    fn push(&mut self, r: &StepRecord) -> Result<()> {
        self.file.write_all(format!("{}\n", r.csv_row()).as_bytes())?;
        Ok(())
    }
}

/// Batches for `text` in the given mode. Sentence mode batches independent
/// sequences; paragraph mode walks `batch_size` contiguous lanes of
/// `steps` positions, carrying `receptive_field - 1` tokens of context.
pub fn prepare_batches(
    text: &str,
    vocab: &Vocabulary,
    mode: Mode,
    batch_size: usize,
    steps: usize,
    receptive_field: usize,
) -> Result<Vec<Batch>> {
    let seqs = encode_lines(text, vocab, mode);
    let batches = match mode {
        Mode::Sentence => batch_sentences(&seqs, batch_size),
        Mode::Paragraph => batch_contiguous(&seqs, batch_size, steps, receptive_field.saturating_sub(1)),
    };
    let batches: Vec<Batch> = batches.into_iter().filter(|b| b.unmasked() > 0).collect();
    if batches.is_empty() {
        return Err(Error::Data("text yields no predictable tokens".into()));
    }
    Ok(batches)
}

/// Summed masked NLL (accumulated in 64-bit) and predicted-token count.
pub fn evaluate_nll<T: Scalar>(model: &Model<T>, batches: &[Batch]) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut count = 0;
    for b in batches {
        let lp = model.score(b)?;
        for (v, &m) in lp.data().iter().zip(&b.mask) {
            if m {
                total -= v.to_f64().unwrap_or(f64::NAN);
                count += 1;
            }
        }
    }
    Ok((total, count))
}

/// `exp(total NLL / predicted tokens)`.
pub fn perplexity<T: Scalar>(model: &Model<T>, batches: &[Batch]) -> Result<f64> {
    let (total, count) = evaluate_nll(model, batches)?;
    if count == 0 {
        return Err(Error::Data("evaluation set has no predicted tokens".into()));
    }
    Ok((total / count as f64).exp())
}

/// Trains `model` in place: forward, NLL, backward, global clip, Nesterov
/// step per batch. Validation perplexity is logged on a fixed cadence and
/// after the final step.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_batches: &[Batch],
    valid_batches: &[Batch],
    cfg: &TrainConfig,
) -> Result<RunLog> {
    cfg.optimizer.validate()?;
    let n = train_batches.len();
    let total_steps = match cfg.budget {
        Budget::Steps(s) => Some(s),
        Budget::Epochs(e) => Some(e * n),
        Budget::Seconds(_) => None,
    };
    let mut log = RunLog::default();
    if total_steps == Some(0) {
        return Ok(log);
    }
    if n == 0 {
        return Err(Error::Data("no training batches".into()));
    }
    let eval_every = cfg
        .eval_every
        .unwrap_or_else(|| (total_steps.unwrap_or(n) / 20).max(1));
    let mut sink = cfg.metrics_out.as_deref().map(CsvSink::create).transpose()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let start = Instant::now();
    let mut tokens = 0;
    let mut step = 0;
    loop {
        let done = match cfg.budget {
            Budget::Seconds(s) => start.elapsed().as_secs_f64() >= s,
            _ => Some(step) >= total_steps,
        };
        if done {
            break;
        }
        let epoch = step / n;
        if step % n == 0 && cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let batch = &train_batches[order[step % n]];
        let (sum, count) = model.accumulate_gradients(batch)?;
        let inv = T::from_f64_lossy(1.0 / count as f64);
        for p in model.params_mut() {
            for s in p.slots_mut() {
                s.grad.scale_in_place(inv);
            }
        }
        let (grad_norm, applied_norm) = match cfg.optimizer.clip_threshold {
            Some(eps) => {
                let r = clip_global(model.params_mut(), eps);
                (r.pre_norm, r.post_norm)
            }
            None => {
                let norm = global_norm(model.params().iter().flat_map(|p| p.slots()).map(|s| &s.grad));
                (norm, norm)
            }
        };
        let train_nll = sum / count as f64;
        if !train_nll.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                step,
                grad_norm,
                lr: cfg.optimizer.learning_rate,
            });
        }
        nesterov_step(model.params_mut(), &cfg.optimizer);
        step += 1;
        tokens += count;

        let last = match cfg.budget {
            Budget::Seconds(s) => start.elapsed().as_secs_f64() >= s,
            _ => Some(step) == total_steps,
        };
        let val_ppl = if (step % eval_every == 0 || last) && !valid_batches.is_empty() {
            Some(perplexity(model, valid_batches)?)
        } else {
            None
        };
        let record = StepRecord {
            step,
            epoch,
            tokens,
            seconds: start.elapsed().as_secs_f64(),
            train_nll,
            grad_norm,
            applied_norm,
            val_ppl,
        };
        if let Some(s) = sink.as_mut() {
            s.push(&record)?;
        }
        log.records.push(record);
    }
    Ok(log)
}
