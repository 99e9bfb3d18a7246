#![allow(dead_code)]

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use gcnn::autodiff::{glu_self_gate_derivative, gtu_self_gate_derivative, Graph};
use gcnn::bench;
use gcnn::checkpoint;
use gcnn::corpus::{generate, split, SyntheticConfig};
use gcnn::data::{batch_sentences, build_vocab_from_text, encode_lines, Batch, Mode};
use gcnn::gradcheck;
use gcnn::head::{adaptive_logprob, adaptive_logprob_table, full_softmax_logprob, AdaptiveCutoffs, AdaptiveVars, TailVars};
use gcnn::layers::{gated_layer, preset, ArchSpec, GateKind, GatedVars};
use gcnn::model::{Model, ModelOptions};
use gcnn::optim::{clip_tensors, global_norm, OptimizerConfig, DEFAULT_CLIP};
use gcnn::sweep::{self, SweepConfig, SweepData, Tricks};
use gcnn::tensor::Tensor;
use gcnn::train::{perplexity, prepare_batches, train, Budget, TrainConfig};

pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_INSTANCES: usize = 10;
pub const IDENTITY_TOL: f64 = 1e-10;
pub const MASS_TOL: f64 = 1e-5;
pub const SINGLE_CLUSTER_TOL: f64 = 1e-6;
pub const UNIFORM_TOL: f64 = 1e-6;
pub const BATCHING_TOL: f64 = 1e-4;
pub const PARAM_MATCH: f64 = 0.05;
pub const CONTEXT_PARAM_MATCH: f64 = 0.10;
pub const COLLAPSE_TOL: f64 = 1e-4;
pub const TOKEN_FRACTION: f64 = 0.5;
pub const CLIP_COSINE: f64 = 1.0 - 1e-7;
pub const INCREMENTAL_TOL: f64 = 1e-5;
pub const LATENCY_RATIO: f64 = 2.0;

pub const ALL_GATES: [GateKind; 6] = [
    GateKind::Glu,
    GateKind::Gtu,
    GateKind::Relu,
    GateKind::Tanh,
    GateKind::Linear,
    GateKind::Bilinear,
];
pub const CAUSAL_PRESETS: [&str; 3] = ["gcnn8-tiny", "gcnn8b-tiny", "gcnn13-tiny"];

/// Outcome of one acceptance criterion.
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

pub fn timed(limit: Duration, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let t = Instant::now();
    let (ok, detail) = f();
    let elapsed = t.elapsed();
    let in_time = elapsed <= limit;
    Outcome {
        pass: ok && in_time,
        detail: if in_time {
            detail
        } else {
            format!("{detail}; took {:.0}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64())
        },
        elapsed,
    }
}

pub fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn normal_tensor(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape, data).unwrap()
}

// ---- 1: gradient suite ----

pub fn gradient_suite(seed: u64) -> (bool, String) {
    let results = gradcheck::run_suite(seed, GRAD_INSTANCES).expect("suite runs");
    let worst = results
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .expect("non-empty suite");
    let ok = results
        .iter()
        .all(|r| r.max_rel_err < GRAD_TOL && r.instances >= GRAD_INSTANCES);
    (
        ok,
        format!(
            "{} ops x {} instances, worst {} at {:.2e}",
            results.len(),
            GRAD_INSTANCES,
            worst.op,
            worst.max_rel_err
        ),
    )
}

// ---- 2: gating identities ----

/// Largest absolute gap between the tape gradient of `x ⊗ σ(x)` (or
/// `tanh(x) ⊗ σ(x)`) and its closed form, both elementwise and through a
/// k=1 gated layer whose two paths share the identity kernel.
pub fn gating_identity_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for tanh_path in [false, true] {
        let closed = |v: f64| {
            if tanh_path {
                gtu_self_gate_derivative(v)
            } else {
                glu_self_gate_derivative(v)
            }
        };
        let x = normal_tensor(&[64], 3.0, &mut rng);
        let mut g = Graph::<f64>::new();
        let xv = g.param(x.clone());
        let s = g.sigmoid(xv).unwrap();
        let lin = if tanh_path { g.tanh(xv).unwrap() } else { xv };
        let y = g.mul(lin, s).unwrap();
        let l = g.sum(y);
        g.backward(l).unwrap();
        for (gr, &v) in g.grad(xv).unwrap().data().iter().zip(x.data()) {
            worst = worst.max((gr - closed(v)).abs());
        }

        let (rows, steps, d) = (2, 5, 6);
        let x = normal_tensor(&[rows, steps, d], 3.0, &mut rng);
        let eye = Tensor::new(&[1, d, d], Tensor::<f64>::identity(d).into_data()).unwrap();
        let mut g = Graph::<f64>::new();
        let xv = g.param(x.clone());
        let vars = GatedVars {
            w: g.constant(eye.clone()),
            b: g.constant(Tensor::zeros(&[d])),
            gate: Some((g.constant(eye), g.constant(Tensor::zeros(&[d])))),
        };
        let kind = if tanh_path { GateKind::Gtu } else { GateKind::Glu };
        let y = gated_layer(&mut g, xv, kind, &vars).unwrap();
        let l = g.sum(y);
        g.backward(l).unwrap();
        for (gr, &v) in g.grad(xv).unwrap().data().iter().zip(x.data()) {
            worst = worst.max((gr - closed(v)).abs());
        }
    }
    worst
}

// ---- 3: causality ----

fn random_tokens(n: usize, vocab: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..vocab)).collect()
}

fn row_batch(tokens: &[usize]) -> Batch {
    let n = tokens.len();
    Batch {
        batch: 1,
        steps: n,
        inputs: tokens.to_vec(),
        targets: vec![0; n],
        mask: vec![true; n],
        input_start: vec![0],
    }
}

/// Number of (preset, gate, j) cases where perturbing token `j` changed any
/// output at a position before `j`, and the number of cases checked.
pub fn causality_violations(seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = 300;
    let n = 24;
    let (mut bad, mut cases) = (0, 0);
    for name in CAUSAL_PRESETS {
        for gate in ALL_GATES {
            let mut arch = preset(name).unwrap();
            arch.gate = gate;
            let model: Model<f64> = Model::new(&arch, vocab, ModelOptions::default(), &mut rng).unwrap();
            let tokens = random_tokens(n, vocab, &mut rng);
            let base = model.logprob_table(&row_batch(&tokens)).unwrap();
            for j in [0, 1, n / 3, n / 2, n - 2, n - 1] {
                let mut t = tokens.clone();
                t[j] = (t[j] + 1 + rng.random_range(0..vocab - 1)) % vocab;
                let out = model.logprob_table(&row_batch(&t)).unwrap();
                let prefix = j * vocab;
                cases += 1;
                if base.data()[..prefix] != out.data()[..prefix] {
                    bad += 1;
                }
            }
        }
    }
    (bad, cases)
}

// ---- 4: softmax oracles ----

fn head_vars(g: &mut Graph<f64>, cutoffs: &AdaptiveCutoffs, d: usize, rng: &mut ChaCha8Rng) -> AdaptiveVars {
    let head_w = g.param(normal_tensor(&[d, cutoffs.head_outputs()], 0.5, rng));
    let head_b = g.param(normal_tensor(&[cutoffs.head_outputs()], 0.5, rng));
    let tails = (0..cutoffs.num_tails())
        .map(|i| {
            let (s, e) = cutoffs.tail_range(i);
            let p = cutoffs.proj_dims()[i];
            TailVars {
                proj: g.param(normal_tensor(&[d, p], 0.5, rng)),
                out_w: g.param(normal_tensor(&[p, e - s], 0.5, rng)),
                out_b: g.param(normal_tensor(&[e - s], 0.5, rng)),
            }
        })
        .collect();
    AdaptiveVars { head_w, head_b, tails }
}

/// Worst `|Σ_w p(w) − 1|` over rows of a |V| = 1,000 adaptive head with
/// cutoffs 100/400/1,000.
pub fn adaptive_mass_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 16;
    let cutoffs = AdaptiveCutoffs::new(vec![100, 400, 1000], vec![4, 2]).unwrap();
    let mut g = Graph::<f64>::new();
    let vars = head_vars(&mut g, &cutoffs, d, &mut rng);
    let h = g.constant(normal_tensor(&[8, d], 1.0, &mut rng));
    let table = adaptive_logprob_table(&mut g, h, &cutoffs, &vars).unwrap();
    table
        .data()
        .chunks(1000)
        .map(|row| (row.iter().map(|lp| lp.exp()).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Worst gap between a single-cluster adaptive head and a full softmax with
/// the same weights.
pub fn single_cluster_gap(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, v, n) = (12, 1000, 32);
    let cutoffs = AdaptiveCutoffs::single(v);
    let mut g = Graph::<f64>::new();
    let vars = head_vars(&mut g, &cutoffs, d, &mut rng);
    let h = g.constant(normal_tensor(&[n, d], 1.0, &mut rng));
    let targets = random_tokens(n, v, &mut rng);
    let a = adaptive_logprob(&mut g, h, &targets, &cutoffs, &vars).unwrap();
    let f = full_softmax_logprob(&mut g, h, vars.head_w, vars.head_b, &targets).unwrap();
    g.value(a)
        .data()
        .iter()
        .zip(g.value(f).data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ---- 5: perplexity sanity ----

pub fn small_text(seed: u64) -> String {
    generate(&SyntheticConfig::default(), 40_000, seed)
}

/// `(|PPL − |V||, |V|)` for a model forced to the uniform distribution.
pub fn uniform_ppl_gap() -> (f64, usize) {
    let text = small_text(5);
    let vocab = build_vocab_from_text(&text, 1).unwrap();
    let mut arch = preset("gcnn8-tiny").unwrap();
    arch.cutoffs.clear();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model: Model<f64> = Model::new(&arch, vocab.len(), ModelOptions::default(), &mut rng).unwrap();
    model.force_uniform().unwrap();
    let batches = prepare_batches(&text, &vocab, Mode::Sentence, 8, 0, model.receptive_field()).unwrap();
    let ppl = perplexity(&model, &batches).unwrap();
    ((ppl - vocab.len() as f64).abs(), vocab.len())
}

/// Relative gap between batched and unbatched perplexity: padded
/// multi-row batches against one-row batches per sequence (both modes), and
/// eight contiguous lanes against a single lane over the whole stream.
pub fn batching_gap() -> f64 {
    let text = small_text(6);
    let vocab = build_vocab_from_text(&text, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model: Model<f32> =
        Model::new(&preset("gcnn8b-tiny").unwrap(), vocab.len(), ModelOptions::default(), &mut rng).unwrap();
    let rel = |a: f64, b: f64| (a - b).abs() / b;
    let mut worst: f64 = 0.0;
    for mode in [Mode::Sentence, Mode::Paragraph] {
        let seqs = encode_lines(&text, &vocab, mode);
        let batched = perplexity(&model, &batch_sentences(&seqs, 16)).unwrap();
        let single: Vec<Batch> = seqs.iter().filter_map(|s| Batch::from_sequence(s).ok()).collect();
        worst = worst.max(rel(batched, perplexity(&model, &single).unwrap()));
    }
    let rf = model.receptive_field();
    let lanes = perplexity(&model, &prepare_batches(&text, &vocab, Mode::Paragraph, 8, 24, rf).unwrap()).unwrap();
    let stream_len: usize = encode_lines(&text, &vocab, Mode::Paragraph).iter().map(Vec::len).sum();
    let one = perplexity(&model, &prepare_batches(&text, &vocab, Mode::Paragraph, 1, stream_len, rf).unwrap()).unwrap();
    worst.max(rel(lanes, one))
}

// ---- 6-9: desk-scale sweeps ----

pub const DESK_BYTES: usize = 3_000_000;
pub const DESK_STEPS: usize = 600;

pub fn desk_data(corpus: &SyntheticConfig) -> SweepData {
    let text = generate(corpus, DESK_BYTES, 1);
    let (train_text, valid_text) = split(&text, 0.1);
    SweepData {
        vocab: build_vocab_from_text(&train_text, 1).unwrap(),
        train_text,
        valid_text,
        mode: Mode::Paragraph,
        batch_size: 16,
        steps: 64,
    }
}

pub fn desk_config(budget: Budget) -> SweepConfig {
    SweepConfig {
        budget,
        seeds: vec![1, 2, 3],
        optimizer: OptimizerConfig::default(),
        jobs: 1,
        eval_every: None,
    }
}

pub fn gate_arch() -> ArchSpec {
    preset("gcnnsweep-gate").unwrap()
}

pub fn gating_ordering(data: &SweepData) -> (bool, String) {
    let cfg = desk_config(Budget::Steps(DESK_STEPS));
    let r = sweep::gating_sweep(data, &gate_arch(), &[GateKind::Glu, GateKind::Gtu, GateKind::Tanh], &cfg).unwrap();
    let m = |l: &str| r.arm(l).unwrap().median_final();
    let (glu, gtu, tanh) = (m("glu"), m("gtu"), m("tanh"));
    let spread = r.param_spread();
    (
        glu <= gtu && glu <= tanh && gtu < tanh && spread <= PARAM_MATCH,
        format!("median final PPL glu={glu:.2} gtu={gtu:.2} tanh={tanh:.2}, param spread {:.1}%", 100.0 * spread),
    )
}

pub fn nonlinearity_ordering(data: &SweepData) -> (bool, String) {
    let cfg = desk_config(Budget::Steps(DESK_STEPS));
    let r = sweep::nonlinearity_sweep(data, &gate_arch(), &cfg).unwrap();
    let m = |l: &str| r.arm(l).unwrap().median_final();
    let (glu, bil, lin) = (m("glu"), m("bilinear"), m("linear"));
    let collapse = sweep::collapse_check(data, &gate_arch(), 1).unwrap();
    (
        glu < bil && bil < lin && collapse <= COLLAPSE_TOL,
        format!("median final PPL glu={glu:.2} bilinear={bil:.2} linear={lin:.2}, collapse err {collapse:.1e}"),
    )
}

pub fn training_direction(data: &SweepData) -> (bool, String) {
    let cfg = desk_config(Budget::Epochs(1));
    let on = Tricks { clip: true, weight_norm: true };
    let off = Tricks { clip: false, weight_norm: false };
    let r = sweep::training_ablation(data, &gate_arch(), &[on, off], &sweep::ABLATION_LRS, &cfg).unwrap();
    let fr = sweep::median(r.token_fractions(on, off, sweep::NLL_WINDOW));
    let lrs = |t| {
        r.arm(t)
            .unwrap()
            .chosen
            .iter()
            .map(|(lr, _)| lr.to_string())
            .collect::<Vec<_>>()
            .join("/")
    };
    (
        fr < TOKEN_FRACTION,
        format!(
            "clip+wn needs {:.1}% of the no-trick budget (lr clip+wn {}, none {})",
            100.0 * fr,
            lrs(on),
            lrs(off)
        ),
    )
}

pub const CONTEXT_WINDOWS: [usize; 3] = [3, 10, 25];

pub const CONTEXT_WIDTH: usize = 32;

pub fn context_trend(data: &SweepData) -> (bool, String) {
    let cfg = desk_config(Budget::Steps(DESK_STEPS));
    let archs: Vec<(usize, ArchSpec)> = CONTEXT_WINDOWS
        .iter()
        .map(|&w| (w, sweep::window_arch(w, 32, CONTEXT_WIDTH)))
        .collect();
    let r = sweep::context_sweep(data, &archs, &cfg).unwrap();
    let best: Vec<f64> = CONTEXT_WINDOWS
        .iter()
        .map(|w| r.arm(&format!("w{w}")).unwrap().median_best())
        .collect();
    let spread = r.param_spread();
    (
        best.windows(2).all(|p| p[1] <= p[0]) && spread <= CONTEXT_PARAM_MATCH,
        format!(
            "median best PPL w3={:.2} w10={:.2} w25={:.2}, param spread {:.1}%",
            best[0],
            best[1],
            best[2],
            100.0 * spread
        ),
    )
}

// ---- 10: clipping contract ----

/// Largest post-clip global norm over a short default-config training run.
pub fn max_applied_norm() -> f64 {
    let text = small_text(8);
    let vocab = build_vocab_from_text(&text, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut model: Model<f32> =
        Model::new(&preset("gcnnsweep-gate").unwrap(), vocab.len(), ModelOptions::default(), &mut rng).unwrap();
    let batches = prepare_batches(&text, &vocab, Mode::Paragraph, 8, 32, model.receptive_field()).unwrap();
    let cfg = TrainConfig {
        budget: Budget::Steps(40),
        ..TrainConfig::default()
    };
    let log = train(&mut model, &batches, &batches[..2], &cfg).unwrap();
    assert_eq!(log.records.len(), 40);
    log.records.iter().map(|r| r.applied_norm).fold(0.0, f64::max)
}

/// `(worst idempotence gap, worst cosine deficit)` over random gradient sets.
pub fn clip_properties(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut idem, mut cos_def): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let mut grads: Vec<Tensor<f64>> = (0..3)
            .map(|_| {
                let n = rng.random_range(1..40);
                normal_tensor(&[n], scale, &mut rng)
            })
            .collect();
        let original = grads.clone();
        {
            let mut refs: Vec<&mut Tensor<f64>> = grads.iter_mut().collect();
            clip_tensors(&mut refs, DEFAULT_CLIP);
        }
        let once = grads.clone();
        {
            let mut refs: Vec<&mut Tensor<f64>> = grads.iter_mut().collect();
            clip_tensors(&mut refs, DEFAULT_CLIP);
        }
        for (a, b) in once.iter().zip(&grads) {
            for (x, y) in a.data().iter().zip(b.data()) {
                idem = idem.max((x - y).abs());
            }
        }
        let dot: f64 = original
            .iter()
            .zip(&once)
            .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| x * y))
            .sum();
        let cos = dot / (global_norm(original.iter()) * global_norm(once.iter()));
        cos_def = cos_def.max(1.0 - cos);
    }
    (idem, cos_def)
}

// ---- 11: bench harness ----

pub fn bench_model() -> Model<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    Model::new(&preset("gcnn8-tiny").unwrap(), 2000, ModelOptions::default(), &mut rng).unwrap()
}

pub fn incremental_gap(model: &Model<f32>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let stream = random_tokens(120, model.vocab_size(), &mut rng);
    let full = bench::full_sequence_scores(model, &stream).unwrap();
    let inc = bench::incremental_scores(model, &stream).unwrap();
    full.iter()
        .zip(&inc)
        .map(|(a, b)| ((a - b).abs() / a.abs().max(1e-6)) as f64)
        .fold(0.0, f64::max)
}

// ---- 12: checkpoint round trip ----

pub fn checkpoint_bit_exact() -> bool {
    let text = small_text(9);
    let vocab = build_vocab_from_text(&text, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for name in CAUSAL_PRESETS {
        let m32: Model<f32> = Model::new(&preset(name).unwrap(), vocab.len(), ModelOptions::default(), &mut rng).unwrap();
        let m64: Model<f64> = m32.cast();
        let batches = prepare_batches(&text, &vocab, Mode::Paragraph, 4, 32, m32.receptive_field()).unwrap();
        let p32 = dir.path().join(format!("{name}-32.ckpt"));
        let p64 = dir.path().join(format!("{name}-64.ckpt"));
        checkpoint::save(&p32, &m32, &vocab).unwrap();
        checkpoint::save(&p64, &m64, &vocab).unwrap();
        let l32 = checkpoint::load::<f32>(&p32).unwrap();
        let l64 = checkpoint::load::<f64>(&p64).unwrap();
        ok &= l32.vocab == vocab && l64.vocab == vocab;
        for b in batches.iter().take(3) {
            let same32 = m32.score(b).unwrap().data().iter().map(|v| v.to_bits()).eq(l32.model.score(b).unwrap().data().iter().map(|v| v.to_bits()));
            let same64 = m64.score(b).unwrap().data().iter().map(|v| v.to_bits()).eq(l64.model.score(b).unwrap().data().iter().map(|v| v.to_bits()));
            ok &= same32 && same64;
        }
    }
    ok
}
