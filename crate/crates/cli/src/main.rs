use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gcnn::bench::{self, BenchConfig};
use gcnn::checkpoint;
use gcnn::corpus::{self, SyntheticConfig};
use gcnn::data::{build_vocab_from_text, Mode, Vocabulary};
use gcnn::gradcheck;
use gcnn::layers::{parse_arch_over, preset, ArchSpec, GateKind, PRESETS};
use gcnn::model::{Model, ModelOptions};
use gcnn::optim::OptimizerConfig;
use gcnn::sweep::{self, SweepConfig, SweepData, Tricks};
use gcnn::train::{perplexity, prepare_batches, train, Budget, TrainConfig};
use gcnn::Scalar;

#[derive(Parser)]
#[command(name = "gcnn", version, about = "Gated convolutional language model experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic planted-dependency corpus to a file
    SynthCorpus(SynthArgs),
    /// Build a vocabulary from a corpus
    BuildVocab(BuildVocabArgs),
    /// Train a model and write a checkpoint
    Train(TrainArgs),
    /// Print the perplexity of a checkpoint on a text
    Eval(EvalArgs),
    /// Compare activation kinds at matched parameter counts
    SweepGating(GatingArgs),
    /// Compare GLU, bilinear and linear layers
    SweepNonlinearity(SweepArgs),
    /// Compare receptive-field sizes
    SweepContext(ContextArgs),
    /// Ablate gradient clipping and weight normalization
    SweepTraining(TrainingArgs),
    /// Measure throughput and responsiveness
    Bench(BenchArgs),
    /// Run every finite-difference gradient check
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Args, Clone, Default)]
struct ArchArgs {
    /// Built-in architecture to start from
    #[arg(long)]
    preset: Option<String>,
    /// Architecture config file, or `presets/<name>`
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    embed: Option<usize>,
    /// Block spec such as `[4,64]x7`; repeat for several blocks
    #[arg(long)]
    conv: Vec<String>,
    #[arg(long)]
    gate: Option<String>,
    /// Comma-separated adaptive-softmax cutoffs
    #[arg(long)]
    cutoffs: Option<String>,
    #[arg(long)]
    context_window: Option<usize>,
}

impl ArchArgs {
    fn given(&self) -> bool {
        self.preset.is_some()
            || self.arch.is_some()
            || self.embed.is_some()
            || !self.conv.is_empty()
            || self.gate.is_some()
            || self.cutoffs.is_some()
            || self.context_window.is_some()
    }

    /// Preset, then config file, then individual flags.
    fn resolve(&self, default: Option<&str>) -> Result<ArchSpec> {
        let base = match self.preset.as_deref().or(default) {
            Some(name) => lookup_preset(name)?,
            None => gcnn::layers::parse_arch("")?,
        };
        let mut arch = match &self.arch {
            Some(spec) => {
                let path = Path::new(spec);
                if path.is_file() {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("reading architecture {}", path.display()))?;
                    parse_arch_over(&base, &text).with_context(|| format!("in {}", path.display()))?
                } else if let Some(a) = preset(spec) {
                    a
                } else {
                    bail!("architecture `{spec}` is neither a file nor a preset ({})", preset_names());
                }
            }
            None => base,
        };
        let mut overlay = String::new();
        if let Some(e) = self.embed {
            overlay.push_str(&format!("embed={e}\n"));
        }
        for c in &self.conv {
            overlay.push_str(&format!("conv={c}\n"));
        }
        if let Some(g) = &self.gate {
            overlay.push_str(&format!("gate={g}\n"));
        }
        if let Some(c) = &self.cutoffs {
            overlay.push_str(&format!("cutoffs={c}\n"));
        }
        if let Some(w) = self.context_window {
            overlay.push_str(&format!("context_window={w}\n"));
        }
        if !overlay.is_empty() {
            arch = parse_arch_over(&arch, &overlay).context("in architecture flags")?;
        }
        if arch.blocks.is_empty() && self.conv.is_empty() && !self.given() && default.is_none() {
            bail!("no architecture given: pass --preset or --arch ({})", preset_names());
        }
        Ok(arch)
    }
}

fn preset_names() -> String {
    let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
    format!("presets: {}", names.join(", "))
}

fn lookup_preset(name: &str) -> Result<ArchSpec> {
    preset(name).with_context(|| format!("unknown preset `{name}` ({})", preset_names()))
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Training text
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Validation text; defaults to the last tenth of the corpus paragraphs
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Vocabulary file; built from the training text when absent
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    #[arg(long, default_value = "paragraph")]
    mode: String,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Positions per batch row
    #[arg(long, default_value_t = 64)]
    length: usize,
}

struct Corpus {
    train: String,
    valid: String,
    vocab: Vocabulary,
    mode: Mode,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

impl DataArgs {
    fn check(&self) -> Result<Mode> {
        for p in [&self.corpus, &self.valid, &self.vocab].into_iter().flatten() {
            if !p.is_file() {
                bail!("file not found: {}", p.display());
            }
        }
        if self.batch_size == 0 || self.length == 0 {
            bail!("--batch-size and --length must be positive");
        }
        Ok(self.mode.parse()?)
    }

    /// Reads the corpus, or generates the synthetic one when none is given.
    fn load(&self, synthetic: &SyntheticConfig, synthetic_bytes: usize, seed: u64) -> Result<Corpus> {
        let mode = self.check()?;
        let text = match &self.corpus {
            Some(p) => read_text(p)?,
            None => corpus::generate(synthetic, synthetic_bytes, seed),
        };
        let (train, valid) = match &self.valid {
            Some(p) => (text, read_text(p)?),
            None => corpus::split(&text, 0.1),
        };
        let vocab = match &self.vocab {
            Some(p) => Vocabulary::load(p)?,
            None => build_vocab_from_text(&train, self.min_count)?,
        };
        Ok(Corpus {
            train,
            valid,
            vocab,
            mode,
        })
    }
}

#[derive(Args, Clone)]
struct OptArgs {
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    /// Draw the learning rate uniformly from [1, 2] with the run seed
    #[arg(long)]
    sample_lr: bool,
    #[arg(long, default_value_t = gcnn::optim::DEFAULT_MOMENTUM)]
    momentum: f64,
    #[arg(long, default_value_t = gcnn::optim::DEFAULT_CLIP)]
    clip: f64,
    #[arg(long)]
    no_clip: bool,
    #[arg(long)]
    no_weight_norm: bool,
}

impl OptArgs {
    fn config(&self, seed: u64) -> Result<OptimizerConfig> {
        let mut cfg = OptimizerConfig {
            learning_rate: self.lr,
            momentum: self.momentum,
            clip_threshold: (!self.no_clip).then_some(self.clip),
        };
        if self.sample_lr {
            cfg.learning_rate = OptimizerConfig::sampled(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x1e)).learning_rate;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn options(&self) -> ModelOptions {
        ModelOptions {
            weight_norm: !self.no_weight_norm,
            ..ModelOptions::default()
        }
    }
}

#[derive(Args, Clone)]
struct BudgetArgs {
    #[arg(long, conflicts_with_all = ["epochs", "seconds"])]
    steps: Option<usize>,
    #[arg(long, conflicts_with = "seconds")]
    epochs: Option<usize>,
    #[arg(long)]
    seconds: Option<f64>,
}

impl BudgetArgs {
    fn budget(&self, default: Budget) -> Result<Budget> {
        Ok(match (self.steps, self.epochs, self.seconds) {
            (Some(s), _, _) => Budget::Steps(s),
            (_, Some(e), _) => Budget::Epochs(e),
            (_, _, Some(s)) if s >= 0.0 && s.is_finite() => Budget::Seconds(s),
            (_, _, Some(s)) => bail!("--seconds must be a non-negative number, got {s}"),
            _ => default,
        })
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3_000_000)]
    bytes: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Use the marker-heavy variant the context sweep trains on
    #[arg(long)]
    planted: bool,
}

#[derive(Args)]
struct BuildVocabArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_count: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    opt: OptArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    #[arg(long, default_value = "model.ckpt")]
    checkpoint_out: PathBuf,
    #[arg(long, value_enum, default_value = "f32")]
    precision: Precision,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    text: PathBuf,
    #[arg(long, default_value = "paragraph")]
    mode: String,
    /// Refuse to run unless this vocabulary matches the checkpoint
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 64)]
    length: usize,
}

#[derive(Args, Clone)]
struct SweepArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    /// Number of seeds; arms are summarized by their median
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// First seed; also seeds the synthetic corpus
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Size of the generated corpus when --corpus is absent
    #[arg(long, default_value_t = 3_000_000)]
    synthetic_bytes: usize,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

impl SweepArgs {
    fn setup(&self, default_budget: Budget, synthetic: &SyntheticConfig) -> Result<(SweepData, SweepConfig)> {
        if self.seeds == 0 {
            bail!("--seeds must be at least 1");
        }
        let budget = self.budget.budget(default_budget)?;
        let optimizer = OptimizerConfig {
            learning_rate: self.lr,
            ..OptimizerConfig::default()
        };
        optimizer.validate()?;
        let c = self.data.load(synthetic, self.synthetic_bytes, self.seed)?;
        let data = SweepData {
            vocab: c.vocab,
            train_text: c.train,
            valid_text: c.valid,
            mode: c.mode,
            batch_size: self.data.batch_size,
            steps: self.data.length,
        };
        let cfg = SweepConfig {
            budget,
            seeds: (self.seed..self.seed + self.seeds).collect(),
            optimizer,
            jobs: self.jobs,
            eval_every: None,
        };
        Ok((data, cfg))
    }

    fn write_metrics(&self, csv: &str) -> Result<()> {
        if let Some(p) = &self.metrics_out {
            std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?;
        }
        Ok(())
    }
}

#[derive(Args)]
struct GatingArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long, value_delimiter = ',', default_value = "glu,gtu,tanh,relu")]
    gates: Vec<String>,
}

#[derive(Args)]
struct ContextArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long, value_delimiter = ',', default_value = "3,10,25")]
    windows: Vec<usize>,
    /// Layer width of the largest window's architecture; the others are
    /// widened to match its parameter count
    #[arg(long, default_value_t = 32)]
    width: usize,
}

#[derive(Args)]
struct TrainingArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1.0")]
    lrs: Vec<f64>,
    /// Include the clip-only and weight-norm-only arms
    #[arg(long)]
    all_configs: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Checkpoint to measure; otherwise a freshly initialized architecture
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    arch: ArchArgs,
    /// Vocabulary size for an initialized architecture
    #[arg(long, default_value_t = 10_000)]
    vocab_size: usize,
    #[arg(long, default_value_t = bench::DEFAULT_BATCH)]
    batch: usize,
    #[arg(long, default_value_t = bench::DEFAULT_STEPS)]
    length: usize,
    #[arg(long, default_value_t = bench::DEFAULT_STREAM)]
    stream: usize,
    #[arg(long, default_value_t = bench::DEFAULT_WARMUP)]
    warmup: usize,
    #[arg(long, default_value_t = bench::MIN_ITERATIONS)]
    iterations: usize,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Random instances per operation
    #[arg(long, default_value_t = 10)]
    instances: usize,
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let cfg = if a.planted { SyntheticConfig::planted() } else { SyntheticConfig::default() };
    let text = corpus::generate(&cfg, a.bytes, a.seed);
    std::fs::write(&a.out, &text).with_context(|| format!("writing {}", a.out.display()))?;
    println!("bytes={} lines={} out={}", text.len(), text.lines().count(), a.out.display());
    Ok(())
}

fn build_vocab_cmd(a: BuildVocabArgs) -> Result<()> {
    let text = read_text(&a.corpus)?;
    let vocab = build_vocab_from_text(&text, a.min_count)?;
    vocab.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("vocab_size={} hash={} out={}", vocab.len(), vocab.hash(), a.out.display());
    Ok(())
}

fn train_cmd<T: Scalar>(a: TrainArgs) -> Result<()> {
    let arch = a.arch.resolve(None)?;
    if a.data.corpus.is_none() {
        bail!("--corpus is required");
    }
    let budget = a.budget.budget(Budget::Epochs(1))?;
    let optimizer = a.opt.config(a.seed)?;
    let corpus = a.data.load(&SyntheticConfig::default(), 0, a.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut model: Model<T> = Model::new(&arch, corpus.vocab.len(), a.opt.options(), &mut rng)?;
    let log = if budget == Budget::Steps(0) {
        if let Some(p) = &a.metrics_out {
            gcnn::train::RunLog::default().write_csv(p)?;
        }
        gcnn::train::RunLog::default()
    } else {
        let rf = model.receptive_field();
        let tr = prepare_batches(&corpus.train, &corpus.vocab, corpus.mode, a.data.batch_size, a.data.length, rf)?;
        let va = prepare_batches(&corpus.valid, &corpus.vocab, corpus.mode, a.data.batch_size, a.data.length, rf)?;
        let cfg = TrainConfig {
            optimizer,
            budget,
            seed: a.seed,
            shuffle: true,
            eval_every: None,
            metrics_out: a.metrics_out.clone(),
        };
        train(&mut model, &tr, &va, &cfg)?
    };
    checkpoint::save(&a.checkpoint_out, &model, &corpus.vocab)
        .with_context(|| format!("writing {}", a.checkpoint_out.display()))?;
    let last = log.records.last();
    println!(
        "steps={} tokens={} train_nll={} val_ppl={} params={} lr={} checkpoint={}",
        last.map_or(0, |r| r.step),
        log.tokens_seen(),
        last.map_or("n/a".into(), |r| format!("{:.4}", r.train_nll)),
        log.final_val_ppl().map_or("n/a".into(), |p| format!("{p:.4}")),
        model.param_count(),
        optimizer.learning_rate,
        a.checkpoint_out.display()
    );
    Ok(())
}

fn eval_with<T: Scalar>(a: &EvalArgs, mode: Mode) -> Result<f64> {
    let ck = checkpoint::load::<T>(&a.model)?;
    if let Some(p) = &a.vocab {
        let v = Vocabulary::load(p)?;
        if v.hash() != ck.vocab.hash() {
            bail!(
                "vocabulary {} (hash {}) does not match the checkpoint (hash {})",
                p.display(),
                v.hash(),
                ck.vocab.hash()
            );
        }
    }
    let text = read_text(&a.text)?;
    let batches = prepare_batches(&text, &ck.vocab, mode, a.batch_size, a.length, ck.model.receptive_field())?;
    Ok(perplexity(&ck.model, &batches)?)
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let mode: Mode = a.mode.parse()?;
    for p in [&a.model, &a.text] {
        if !p.is_file() {
            bail!("file not found: {}", p.display());
        }
    }
    if a.batch_size == 0 || a.length == 0 {
        bail!("--batch-size and --length must be positive");
    }
    let ppl = match checkpoint::scalar_width(&a.model)? {
        8 => eval_with::<f64>(&a, mode)?,
        _ => eval_with::<f32>(&a, mode)?,
    };
    println!("ppl={ppl}");
    Ok(())
}

fn sweep_gating_cmd(a: GatingArgs) -> Result<()> {
    let gates = a
        .gates
        .iter()
        .map(|g| g.parse::<GateKind>())
        .collect::<gcnn::Result<Vec<_>>>()?;
    let base = a.sweep.arch.resolve(Some("gcnnsweep-gate"))?;
    let (data, cfg) = a.sweep.setup(Budget::Steps(600), &SyntheticConfig::default())?;
    let report = sweep::gating_sweep(&data, &base, &gates, &cfg)?;
    print!("{}", report.summary());
    a.sweep.write_metrics(&report.to_csv())
}

fn sweep_nonlinearity_cmd(a: SweepArgs) -> Result<()> {
    let base = a.arch.resolve(Some("gcnnsweep-gate"))?;
    let (data, cfg) = a.setup(Budget::Steps(600), &SyntheticConfig::default())?;
    let report = sweep::nonlinearity_sweep(&data, &base, &cfg)?;
    print!("{}", report.summary());
    let err = sweep::collapse_check(&data, &base, cfg.seeds[0])?;
    println!("linear collapse max rel err={err:.3e}");
    a.write_metrics(&report.to_csv())
}

fn sweep_context_cmd(a: ContextArgs) -> Result<()> {
    if a.windows.is_empty() || a.windows.contains(&0) {
        bail!("--windows must be positive");
    }
    let embed = a.sweep.arch.embed.unwrap_or(32);
    let archs: Vec<(usize, ArchSpec)> = a
        .windows
        .iter()
        .map(|&w| (w, sweep::window_arch(w, embed, a.width)))
        .collect();
    let (data, cfg) = a.sweep.setup(Budget::Steps(600), &SyntheticConfig::planted())?;
    let report = sweep::context_sweep(&data, &archs, &cfg)?;
    print!("{}", report.summary());
    a.sweep.write_metrics(&report.to_csv())
}

fn sweep_training_cmd(a: TrainingArgs) -> Result<()> {
    if a.lrs.is_empty() || a.lrs.iter().any(|&l| l.is_nan() || l <= 0.0) {
        bail!("--lrs must be positive");
    }
    let arch = a.sweep.arch.resolve(Some("gcnnsweep-gate"))?;
    let (data, cfg) = a.sweep.setup(Budget::Epochs(1), &SyntheticConfig::default())?;
    let mut configs = vec![
        Tricks { clip: true, weight_norm: true },
        Tricks { clip: false, weight_norm: false },
    ];
    if a.all_configs {
        configs.push(Tricks { clip: true, weight_norm: false });
        configs.push(Tricks { clip: false, weight_norm: true });
    }
    let report = sweep::training_ablation(&data, &arch, &configs, &a.lrs, &cfg)?;
    print!("{}", report.summary());
    let fr = report.token_fractions(configs[0], configs[1], sweep::NLL_WINDOW);
    println!(
        "clip+wn reaches the no-trick final NLL after {:.1}% of its tokens (median over seeds)",
        100.0 * sweep::median(fr)
    );
    a.sweep.write_metrics(&report.to_csv())
}

fn bench_with<T: Scalar>(model: &Model<T>, a: &BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        batch: a.batch,
        steps: a.length,
        stream: a.stream,
        warmup: a.warmup,
        iterations: a.iterations,
        jobs: a.jobs,
    };
    let r = bench::run(model, &cfg)?;
    println!("{}", bench::CSV_HEADER);
    println!("{}", r.csv_row());
    println!("{}", r.summary());
    if let Some(p) = &a.metrics_out {
        std::fs::write(p, format!("{}\n{}\n", bench::CSV_HEADER, r.csv_row()))
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    if a.batch == 0 || a.length == 0 || a.stream < 2 {
        bail!("--batch and --length must be positive and --stream at least 2");
    }
    match &a.model {
        Some(p) => {
            if !p.is_file() {
                bail!("file not found: {}", p.display());
            }
            match checkpoint::scalar_width(p)? {
                8 => bench_with(&checkpoint::load::<f64>(p)?.model, &a),
                _ => bench_with(&checkpoint::load::<f32>(p)?.model, &a),
            }
        }
        None => {
            let arch = a.arch.resolve(Some("gcnn8-tiny"))?;
            if a.vocab_size < 4 {
                bail!("--vocab-size must be at least 4");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let model: Model<f32> = Model::new(&arch, a.vocab_size, ModelOptions::default(), &mut rng)?;
            bench_with(&model, &a)
        }
    }
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<bool> {
    let results = gradcheck::run_suite(a.seed, a.instances.max(1))?;
    let mut ok = true;
    for r in &results {
        let pass = r.max_rel_err < 1e-4;
        ok &= pass;
        println!(
            "{:<26} instances={:<3} max_rel_err={:.3e} {}",
            r.op,
            r.instances,
            r.max_rel_err,
            if pass { "ok" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::SynthCorpus(a) => synth_cmd(a)?,
        Command::BuildVocab(a) => build_vocab_cmd(a)?,
        Command::Train(a) => match a.precision {
            Precision::F32 => train_cmd::<f32>(a)?,
            Precision::F64 => train_cmd::<f64>(a)?,
        },
        Command::Eval(a) => eval_cmd(a)?,
        Command::SweepGating(a) => sweep_gating_cmd(a)?,
        Command::SweepNonlinearity(a) => sweep_nonlinearity_cmd(a)?,
        Command::SweepContext(a) => sweep_context_cmd(a)?,
        Command::SweepTraining(a) => sweep_training_cmd(a)?,
        Command::Bench(a) => bench_cmd(a)?,
        Command::Gradcheck(a) => return gradcheck_cmd(a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
