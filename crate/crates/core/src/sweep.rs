//! Ablation sweeps: gating, non-linearity, context size and training tricks.
//!
//! Every arm is trained once per seed on identical data and budget; reports
//! summarize arms by the median over seeds.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Batch, Mode, Vocabulary};
use crate::error::{Error, Result};
use crate::layers::{ArchSpec, GateKind};
use crate::model::{Model, ModelOptions};
use crate::optim::OptimizerConfig;
use crate::train::{perplexity, prepare_batches, train, Budget, RunLog, TrainConfig};

/// Corpus and batching shared by every arm of a sweep.
#[derive(Clone, Debug)]
pub struct SweepData {
    pub vocab: Vocabulary,
    pub train_text: String,
    pub valid_text: String,
    pub mode: Mode,
    pub batch_size: usize,
    pub steps: usize,
}

impl SweepData {
    /// Training and validation batches for a model of the given receptive field.
    pub fn batches(&self, receptive_field: usize) -> Result<(Vec<Batch>, Vec<Batch>)> {
        let tr = prepare_batches(
            &self.train_text,
            &self.vocab,
            self.mode,
            self.batch_size,
            self.steps,
            receptive_field,
        )?;
        let va = prepare_batches(
            &self.valid_text,
            &self.vocab,
            self.mode,
            self.batch_size,
            self.steps,
            receptive_field,
        )?;
        Ok((tr, va))
    }
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub budget: Budget,
    pub seeds: Vec<u64>,
    pub optimizer: OptimizerConfig,
    /// Parallel arms; results do not depend on it.
    pub jobs: usize,
    pub eval_every: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            budget: Budget::Epochs(1),
            seeds: vec![1, 2, 3],
            optimizer: OptimizerConfig::default(),
            jobs: 1,
            eval_every: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Arm {
    pub label: String,
    pub arch: ArchSpec,
    pub options: ModelOptions,
    pub optimizer: OptimizerConfig,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub label: String,
    pub seed: u64,
    pub param_count: usize,
    /// Validation perplexity after the last step; `∞` when training diverged.
    pub final_ppl: f64,
    pub best_ppl: f64,
    pub diverged: bool,
    pub log: RunLog,
}

#[derive(Clone, Debug)]
pub struct ArmSummary {
    pub label: String,
    pub arch: ArchSpec,
    pub param_count: usize,
    pub runs: Vec<RunResult>,
}

impl ArmSummary {
    pub fn median_final(&self) -> f64 {
        median(self.runs.iter().map(|r| r.final_ppl).collect())
    }

    pub fn median_best(&self) -> f64 {
        median(self.runs.iter().map(|r| r.best_ppl).collect())
    }
}

#[derive(Clone, Debug, Default)]
pub struct SweepReport {
    pub name: String,
    pub arms: Vec<ArmSummary>,
}

impl SweepReport {
    pub fn arm(&self, label: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.label == label)
    }

    /// Largest relative deviation of any arm's parameter count from the mean.
    pub fn param_spread(&self) -> f64 {
        let counts: Vec<f64> = self.arms.iter().map(|a| a.param_count as f64).collect();
        relative_spread(&counts)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("sweep,arm,seed,params,final_ppl,best_ppl,diverged\n");
        for a in &self.arms {
            for r in &a.runs {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{:.6},{:.6},{}",
                    self.name, a.label, r.seed, a.param_count, r.final_ppl, r.best_ppl, r.diverged
                );
            }
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{}\n", self.name);
        for a in &self.arms {
            let _ = writeln!(
                s,
                "  {:<12} params={:<8} rf={:<3} median_final_ppl={:.3} median_best_ppl={:.3}",
                a.label,
                a.param_count,
                a.arch.receptive_field(),
                a.median_final(),
                a.median_best()
            );
        }
        s
    }
}

/// Median; the mean of the two middle values for even lengths. `∞` sorts last.
pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn relative_spread(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values
        .iter()
        .map(|v| (v - mean).abs() / mean)
        .fold(0.0, f64::max)
}

/// Trains one arm for one seed in 32-bit. Divergence is reported, not raised.
pub fn run_arm(data: &SweepData, arm: &Arm, cfg: &SweepConfig, seed: u64) -> Result<RunResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model: Model<f32> = Model::new(&arm.arch, data.vocab.len(), arm.options, &mut rng)?;
    let (tr, va) = data.batches(model.receptive_field())?;
    let tc = TrainConfig {
        optimizer: arm.optimizer,
        budget: cfg.budget,
        seed,
        shuffle: true,
        eval_every: cfg.eval_every,
        metrics_out: None,
    };
    let param_count = model.param_count();
    match train(&mut model, &tr, &va, &tc) {
        Ok(log) => {
            let final_ppl = match log.final_val_ppl() {
                Some(p) => p,
                None => perplexity(&model, &va)?,
            };
            let best_ppl = log.best_val_ppl().unwrap_or(final_ppl).min(final_ppl);
            let final_ppl = if final_ppl.is_finite() { final_ppl } else { f64::INFINITY };
            Ok(RunResult {
                label: arm.label.clone(),
                seed,
                param_count,
                final_ppl,
                best_ppl: if best_ppl.is_finite() { best_ppl } else { f64::INFINITY },
                diverged: !final_ppl.is_finite(),
                log,
            })
        }
        Err(Error::NonFinite { .. }) => Ok(RunResult {
            label: arm.label.clone(),
            seed,
            param_count,
            final_ppl: f64::INFINITY,
            best_ppl: f64::INFINITY,
            diverged: true,
            log: RunLog::default(),
        }),
        Err(e) => Err(e),
    }
}

/// Runs every `(arm, seed)` pair, `jobs` at a time, and groups by arm.
pub fn run_arms(name: &str, data: &SweepData, arms: &[Arm], cfg: &SweepConfig) -> Result<SweepReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Contract("sweep needs at least one seed".into()));
    }
    let tasks: Vec<(usize, u64)> = (0..arms.len())
        .flat_map(|a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let jobs = cfg.jobs.max(1);
    let mut results: Vec<Option<Result<RunResult>>> = (0..tasks.len()).map(|_| None).collect();
    for (chunk_tasks, chunk_out) in tasks.chunks(jobs).zip(results.chunks_mut(jobs)) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk_tasks
                .iter()
                .map(|&(a, s)| scope.spawn(move || run_arm(data, &arms[a], cfg, s)))
                .collect();
            for (slot, h) in chunk_out.iter_mut().zip(handles) {
                *slot = Some(h.join().unwrap_or_else(|_| {
                    Err(Error::Contract("sweep arm panicked".into()))
                }));
            }
        });
    }
    let mut summaries: Vec<ArmSummary> = arms
        .iter()
        .map(|a| ArmSummary {
            label: a.label.clone(),
            arch: a.arch.clone(),
            param_count: 0,
            runs: Vec::new(),
        })
        .collect();
    for ((a, _), r) in tasks.into_iter().zip(results) {
        let r = r.expect("every task ran")?;
        summaries[a].param_count = r.param_count;
        summaries[a].runs.push(r);
    }
    Ok(SweepReport {
        name: name.to_string(),
        arms: summaries,
    })
}

/// Multiplies every layer width by `width / output_dim`, keeping the
/// embedding size, kernel sizes and depth.
pub fn with_width(arch: &ArchSpec, width: usize) -> ArchSpec {
    let base = arch.output_dim();
    let mut out = arch.clone();
    for b in &mut out.blocks {
        for t in &mut b.taps {
            t.n = ((t.n * width) as f64 / base as f64).round().max(1.0) as usize;
        }
    }
    out
}

pub fn count_params(arch: &ArchSpec, vocab: usize, options: ModelOptions) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(Model::<f32>::new(arch, vocab, options, &mut rng)?.param_count())
}

/// The width rescaling of `arch` whose parameter count is closest to `target`.
pub fn match_params(arch: &ArchSpec, vocab: usize, options: ModelOptions, target: usize) -> Result<ArchSpec> {
    if arch.blocks.is_empty() {
        return Ok(arch.clone());
    }
    let base = arch.output_dim();
    let mut best: Option<(f64, ArchSpec)> = None;
    for w in 1..=base * 4 {
        let cand = with_width(arch, w);
        let n = count_params(&cand, vocab, options)?;
        let err = (n as f64 - target as f64).abs() / target as f64;
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, cand));
        }
        if n > target * 2 {
            break;
        }
    }
    Ok(best.expect("at least one width tried").1)
}

/// One arm per gate kind, widths rescaled so every arm carries as many
/// parameters as `base` does with its own gate.
pub fn matched_arms(base: &ArchSpec, gates: &[GateKind], vocab: usize, options: ModelOptions, opt: OptimizerConfig) -> Result<Vec<Arm>> {
    let target = count_params(base, vocab, options)?;
    gates
        .iter()
        .map(|&gate| {
            let arch = ArchSpec {
                gate,
                ..base.clone()
            };
            let arch = if gate.is_paired() == base.gate.is_paired() {
                arch
            } else {
                match_params(&arch, vocab, options, target)?
            };
            Ok(Arm {
                label: gate.name().to_string(),
                arch,
                options,
                optimizer: opt,
            })
        })
        .collect()
}

/// Parameter-matched comparison of activation kinds (gated and ungated).
pub fn gating_sweep(data: &SweepData, base: &ArchSpec, gates: &[GateKind], cfg: &SweepConfig) -> Result<SweepReport> {
    let arms = matched_arms(base, gates, data.vocab.len(), ModelOptions::default(), cfg.optimizer)?;
    run_arms("gating", data, &arms, cfg)
}

/// GLU versus bilinear versus linear layers.
pub fn nonlinearity_sweep(data: &SweepData, base: &ArchSpec, cfg: &SweepConfig) -> Result<SweepReport> {
    let kinds = [GateKind::Glu, GateKind::Bilinear, GateKind::Linear];
    let arms = matched_arms(base, &kinds, data.vocab.len(), ModelOptions::default(), cfg.optimizer)?;
    run_arms("nonlinearity", data, &arms, cfg)
}

/// Layers in every context-sweep architecture.
pub const CONTEXT_DEPTH: usize = 3;

/// Plain [`CONTEXT_DEPTH`]-layer stack whose receptive field equals
/// `window`; kernel growth is spread evenly, remainder on the lowest layers.
pub fn window_arch(window: usize, embed: usize, width: usize) -> ArchSpec {
    let growth = window.saturating_sub(1);
    let mut text = format!("embed={embed}\n");
    let kernels: Vec<usize> = (0..CONTEXT_DEPTH)
        .map(|i| 1 + growth / CONTEXT_DEPTH + usize::from(i < growth % CONTEXT_DEPTH))
        .collect();
    for run in kernels.chunk_by(|a, b| a == b) {
        text.push_str(&format!("conv=[{},{width}]x{}\n", run[0], run.len()));
    }
    text.push_str("gate=glu\n");
    crate::layers::parse_arch(&text).expect("generated architecture is valid")
}

/// Runs the linear-collapse oracle on a `Linear` variant of `base`,
/// initialized from `seed`, over one validation batch. Returns the largest
/// relative deviation.
pub fn collapse_check(data: &SweepData, base: &ArchSpec, seed: u64) -> Result<f64> {
    let mut arch = base.clone();
    arch.gate = GateKind::Linear;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model: Model<f64> = Model::new(&arch, data.vocab.len(), ModelOptions::default(), &mut rng)?;
    let steps = data.steps.max(2 * model.receptive_field());
    let stream: Vec<usize> = crate::data::encode_lines(&data.valid_text, &data.vocab, data.mode)
        .into_iter()
        .flatten()
        .take(steps + 1)
        .collect();
    model.linear_collapse_error(&Batch::from_sequence(&stream)?)
}

/// One architecture per window: the receptive field equals the window and
/// widths are rescaled so parameter counts match the largest-window entry.
pub fn context_arms(archs: &[(usize, ArchSpec)], vocab: usize, opt: OptimizerConfig) -> Result<Vec<Arm>> {
    let options = ModelOptions::default();
    let Some((_, reference)) = archs.iter().max_by_key(|(w, _)| *w) else {
        return Err(Error::Contract("context sweep needs at least one window".into()));
    };
    let target = count_params(reference, vocab, options)?;
    archs
        .iter()
        .map(|(window, arch)| {
            if arch.receptive_field() != *window {
                return Err(Error::Contract(format!(
                    "architecture for window {window} has receptive field {}",
                    arch.receptive_field()
                )));
            }
            Ok(Arm {
                label: format!("w{window}"),
                arch: match_params(arch, vocab, options, target)?,
                options,
                optimizer: opt,
            })
        })
        .collect()
}

pub fn context_sweep(data: &SweepData, archs: &[(usize, ArchSpec)], cfg: &SweepConfig) -> Result<SweepReport> {
    let arms = context_arms(archs, data.vocab.len(), cfg.optimizer)?;
    run_arms("context", data, &arms, cfg)
}

/// Measures how far back a change of input reaches: the largest distance
/// `d` such that replacing token `t - d + 1` changes the score at `t`.
pub fn probe_context(model: &Model<f32>, tokens: &[usize], replacement: usize) -> Result<usize> {
    let n = tokens.len();
    if n < 2 {
        return Err(Error::Contract("probe needs at least two tokens".into()));
    }
    let score = |seq: &[usize]| -> Result<Vec<f32>> {
        let b = Batch {
            batch: 1,
            steps: n,
            inputs: seq.to_vec(),
            targets: vec![tokens[n - 1]; n],
            mask: vec![true; n],
            input_start: vec![0],
        };
        Ok(model.score(&b)?.into_data())
    };
    let base = score(tokens)?;
    let t = n - 1;
    let mut reach = 0;
    for j in 0..=t {
        let mut seq = tokens.to_vec();
        seq[j] = if seq[j] == replacement { (replacement + 1) % model.vocab_size() } else { replacement };
        if score(&seq)?[t] != base[t] {
            reach = reach.max(t - j + 1);
        }
    }
    Ok(reach)
}

/// One training-trick configuration of the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tricks {
    pub clip: bool,
    pub weight_norm: bool,
}

impl Tricks {
    pub fn label(self) -> &'static str {
        match (self.clip, self.weight_norm) {
            (true, true) => "clip+wn",
            (true, false) => "clip",
            (false, true) => "wn",
            (false, false) => "none",
        }
    }
}

/// Steps averaged when reading a final training NLL off a log.
pub const NLL_WINDOW: usize = 10;

pub const ABLATION_LRS: [f64; 3] = [0.01, 0.1, 1.0];

#[derive(Clone, Debug)]
pub struct AblationArm {
    pub tricks: Tricks,
    /// `(lr, run)` chosen per seed by lowest final training NLL.
    pub chosen: Vec<(f64, RunResult)>,
    /// Every `(lr, run)` tried.
    pub grid: Vec<(f64, RunResult)>,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub arms: Vec<AblationArm>,
}

/// Mean training NLL over the last `window` steps of a log.
pub fn final_train_nll(log: &RunLog, window: usize) -> f64 {
    let r = &log.records;
    if r.is_empty() {
        return f64::INFINITY;
    }
    let tail = &r[r.len().saturating_sub(window.max(1))..];
    let v = tail.iter().map(|x| x.train_nll).sum::<f64>() / tail.len() as f64;
    if v.is_finite() { v } else { f64::INFINITY }
}

/// Tokens after which the `window`-step running mean of training NLL first
/// drops to `target`; `None` if it never does.
pub fn tokens_to_reach(log: &RunLog, target: f64, window: usize) -> Option<usize> {
    let r = &log.records;
    let w = window.max(1);
    let mut acc = 0.0;
    for i in 0..r.len() {
        acc += r[i].train_nll;
        if i >= w {
            acc -= r[i - w].train_nll;
        }
        if i + 1 >= w && acc / w as f64 <= target {
            return Some(r[i].tokens);
        }
    }
    None
}

impl AblationReport {
    pub fn arm(&self, tricks: Tricks) -> Option<&AblationArm> {
        self.arms.iter().find(|a| a.tricks == tricks)
    }

    /// Per seed, the fraction of `slow`'s token budget that `fast` needs to
    /// reach `slow`'s final training NLL (`∞` when it never does).
    pub fn token_fractions(&self, fast: Tricks, slow: Tricks, window: usize) -> Vec<f64> {
        let (Some(f), Some(s)) = (self.arm(fast), self.arm(slow)) else {
            return Vec::new();
        };
        f.chosen
            .iter()
            .zip(&s.chosen)
            .map(|((_, fr), (_, sr))| {
                let budget = sr.log.tokens_seen().max(1) as f64;
                if sr.diverged {
                    return 0.0;
                }
                let target = final_train_nll(&sr.log, window);
                match tokens_to_reach(&fr.log, target, window) {
                    Some(t) => t as f64 / budget,
                    None => f64::INFINITY,
                }
            })
            .collect()
    }

    /// One row per trained run; `chosen` marks the per-seed selected lr.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("config,lr,seed,param_count,final_train_nll,final_ppl,best_ppl,diverged,chosen\n");
        for a in &self.arms {
            for (lr, r) in &a.grid {
                let chosen = a.chosen.iter().any(|(l, c)| l == lr && c.seed == r.seed);
                let _ = writeln!(
                    s,
                    "{},{lr},{},{},{},{},{},{},{chosen}",
                    a.tricks.label(),
                    r.seed,
                    r.param_count,
                    final_train_nll(&r.log, NLL_WINDOW),
                    r.final_ppl,
                    r.best_ppl,
                    r.diverged
                );
            }
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::from("training\n");
        for a in &self.arms {
            let lrs: Vec<String> = a.chosen.iter().map(|(lr, _)| lr.to_string()).collect();
            let grid: Vec<String> = a
                .grid
                .iter()
                .map(|(lr, r)| format!("lr={lr}/seed={}:nll={:.3}", r.seed, final_train_nll(&r.log, NLL_WINDOW)))
                .collect();
            let _ = writeln!(
                s,
                "  {:<8} chosen_lr=[{}] median_final_nll={:.4} median_val_ppl={:.3}  ({})",
                a.tricks.label(),
                lrs.join(","),
                median(a.chosen.iter().map(|(_, r)| final_train_nll(&r.log, NLL_WINDOW)).collect()),
                median(a.chosen.iter().map(|(_, r)| r.final_ppl).collect()),
                grid.join(" ")
            );
        }
        s
    }
}

/// Trains every trick configuration at every grid learning rate for every
/// seed, then keeps, per seed, the learning rate with the lowest final
/// training NLL. Diverged runs count as `∞`.
pub fn training_ablation(
    data: &SweepData,
    arch: &ArchSpec,
    configs: &[Tricks],
    lrs: &[f64],
    cfg: &SweepConfig,
) -> Result<AblationReport> {
    let mut arms = Vec::new();
    for &tricks in configs {
        let mut list = Vec::new();
        for &lr in lrs {
            list.push(Arm {
                label: format!("{}@{lr}", tricks.label()),
                arch: arch.clone(),
                options: ModelOptions {
                    weight_norm: tricks.weight_norm,
                    ..ModelOptions::default()
                },
                optimizer: OptimizerConfig {
                    learning_rate: lr,
                    clip_threshold: tricks.clip.then_some(cfg.optimizer.clip_threshold.unwrap_or(crate::optim::DEFAULT_CLIP)),
                    ..cfg.optimizer
                },
            });
        }
        let report = run_arms(tricks.label(), data, &list, cfg)?;
        let mut grid = Vec::new();
        for (arm, &lr) in report.arms.into_iter().zip(lrs) {
            for r in arm.runs {
                grid.push((lr, r));
            }
        }
        let chosen = cfg
            .seeds
            .iter()
            .map(|&seed| {
                grid.iter()
                    .filter(|(_, r)| r.seed == seed)
                    .min_by(|a, b| {
                        final_train_nll(&a.1.log, 10).total_cmp(&final_train_nll(&b.1.log, 10))
                    })
                    .cloned()
                    .expect("grid is non-empty")
            })
            .collect();
        arms.push(AblationArm { tricks, chosen, grid });
    }
    Ok(AblationReport { arms })
}
