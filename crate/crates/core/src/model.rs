//! A complete gated convolutional language model: embedding table, residual
//! stack, and adaptive output head, with parameters stored flat so the
//! optimizer and checkpoint code can walk them uniformly.

use rand::{Rng, SeedableRng};

use crate::autodiff::{Graph, Var};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::head::{adaptive_logprob, adaptive_logprob_table, AdaptiveCutoffs, AdaptiveVars, TailVars, DEFAULT_TAIL_DIVISOR};
use crate::layers::{kaiming_init, residual_block, ArchSpec, BlockVars, GatedVars, Parameter};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation of the initial embedding table. Unit-variance
/// embeddings compound through the residual sums and start the output
/// layer far from the uniform distribution.
pub const EMBED_INIT_STD: f64 = 0.1;

/// Construction options that are not part of the architecture text.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelOptions {
    /// Weight-normalize convolution and projection weights.
    pub weight_norm: bool,
    pub tail_divisor: usize,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            weight_norm: true,
            tail_divisor: DEFAULT_TAIL_DIVISOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct LayerLayout {
    w: usize,
    b: usize,
    gate: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
struct BlockLayout {
    layers: Vec<LayerLayout>,
    projection: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    embed: usize,
    blocks: Vec<BlockLayout>,
    head_w: usize,
    head_b: usize,
    tails: Vec<(usize, usize, usize)>,
}

/// Graph handles for every parameter of a [`Model`] on one [`Graph`].
#[derive(Clone, Debug)]
pub struct Bound {
    /// Materialized weight per parameter.
    weights: Vec<Var>,
    /// `(direction, gain)` leaves per parameter.
    leaves: Vec<(Var, Option<Var>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    arch: ArchSpec,
    cutoffs: AdaptiveCutoffs,
    options: ModelOptions,
    params: Vec<Parameter<T>>,
    layout: Layout,
}

struct Builder<'a, T, R: ?Sized> {
    params: Vec<Parameter<T>>,
    weight_norm: bool,
    rng: &'a mut R,
}

impl<T: Scalar, R: Rng + ?Sized> Builder<'_, T, R> {
    fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let v = kaiming_init(shape, fan_in, self.rng);
        self.params.push(if self.weight_norm {
            Parameter::normalized(name, v)
        } else {
            Parameter::plain(name, v)
        });
        self.params.len() - 1
    }

    fn bias(&mut self, name: String, n: usize) -> usize {
        self.params.push(Parameter::plain(name, Tensor::zeros(&[n])));
        self.params.len() - 1
    }
}

impl<T: Scalar> Model<T> {
    /// Kaiming-initialized model; identical seeds give bit-identical models.
    pub fn new<R: Rng + ?Sized>(arch: &ArchSpec, vocab_size: usize, options: ModelOptions, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        if vocab_size == 0 {
            return Err(Error::Contract("vocabulary is empty".into()));
        }
        let d = arch.output_dim();
        let cutoffs = AdaptiveCutoffs::resolve(&arch.cutoffs, vocab_size, d, options.tail_divisor)?;
        let mut b = Builder {
            params: Vec::new(),
            weight_norm: options.weight_norm,
            rng,
        };
        let embed = {
            let normal = rand_distr::Normal::new(0.0, EMBED_INIT_STD).expect("valid normal");
            let table = Tensor::from_fn(&[vocab_size, arch.embed_dim], |_| {
                T::from_f64_lossy(rand_distr::Distribution::sample(&normal, b.rng))
            });
            b.params.push(Parameter::plain("embed", table));
            0
        };
        let mut blocks = Vec::new();
        let mut m = arch.embed_dim;
        for (bi, spec) in arch.blocks.iter().enumerate() {
            for r in 0..spec.repeat {
                let prefix = format!("block{bi}.{r}");
                let block_in = m;
                let mut layers = Vec::new();
                for (li, tap) in spec.taps.iter().enumerate() {
                    let shape = [tap.k, m, tap.n];
                    let w = b.weight(format!("{prefix}.layer{li}.w"), &shape, tap.k * m);
                    let bias = b.bias(format!("{prefix}.layer{li}.b"), tap.n);
                    let gate = if arch.gate.is_paired() {
                        let v = b.weight(format!("{prefix}.layer{li}.v"), &shape, tap.k * m);
                        let c = b.bias(format!("{prefix}.layer{li}.c"), tap.n);
                        Some((v, c))
                    } else {
                        None
                    };
                    layers.push(LayerLayout { w, b: bias, gate });
                    m = tap.n;
                }
                let projection = (block_in != m).then(|| {
                    let w = b.weight(format!("{prefix}.proj.w"), &[1, block_in, m], block_in);
                    let pb = b.bias(format!("{prefix}.proj.b"), m);
                    (w, pb)
                });
                blocks.push(BlockLayout { layers, projection });
            }
        }
        let head_w = b.weight("head.w".into(), &[d, cutoffs.head_outputs()], d);
        let head_b = b.bias("head.b".into(), cutoffs.head_outputs());
        let mut tails = Vec::new();
        for i in 0..cutoffs.num_tails() {
            let (s, e) = cutoffs.tail_range(i);
            let p = cutoffs.proj_dims()[i];
            let proj = b.weight(format!("tail{i}.proj"), &[d, p], d);
            let out_w = b.weight(format!("tail{i}.w"), &[p, e - s], p);
            let out_b = b.bias(format!("tail{i}.b"), e - s);
            tails.push((proj, out_w, out_b));
        }
        Ok(Self {
            arch: arch.clone(),
            cutoffs,
            options,
            params: b.params,
            layout: Layout {
                embed,
                blocks,
                head_w,
                head_b,
                tails,
            },
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn cutoffs(&self) -> &AdaptiveCutoffs {
        &self.cutoffs
    }

    pub fn options(&self) -> ModelOptions {
        self.options
    }

    pub fn vocab_size(&self) -> usize {
        self.cutoffs.vocab_size()
    }

    pub fn receptive_field(&self) -> usize {
        self.arch.receptive_field()
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }

    /// Replaces the context-window truncation applied during scoring.
    pub fn set_context_window(&mut self, window: Option<usize>) {
        self.arch.context_window = window;
    }

    /// Same model in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let cast_slot = |s: &crate::layers::Slot<T>| crate::layers::Slot {
            value: s.value.cast(),
            grad: s.grad.cast(),
            momentum: s.momentum.cast(),
        };
        Model {
            arch: self.arch.clone(),
            cutoffs: self.cutoffs.clone(),
            options: self.options,
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    direction: cast_slot(&p.direction),
                    gain: p.gain.as_ref().map(cast_slot),
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }

    /// Rebuilds a model around stored parameter values; shapes must match
    /// what `arch` would allocate.
    pub fn from_parameters(arch: &ArchSpec, vocab_size: usize, options: ModelOptions, params: Vec<Parameter<T>>) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::new(arch, vocab_size, options, &mut rng)?;
        if model.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "architecture expects {} parameters, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (slot, p) in model.params.iter_mut().zip(params) {
            if slot.name != p.name
                || slot.shape() != p.shape()
                || slot.is_normalized() != p.is_normalized()
            {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: expected {} {:?}, found {} {:?}",
                    slot.name,
                    slot.shape(),
                    p.name,
                    p.shape()
                )));
            }
            *slot = p;
        }
        Ok(model)
    }

    /// Places every parameter on `g`. With `trainable` the leaves collect
    /// gradients on [`Graph::backward`].
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Result<Bound> {
        let mut weights = Vec::with_capacity(self.params.len());
        let mut leaves = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let leaf = |g: &mut Graph<T>, t: &Tensor<T>| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            };
            let v = leaf(g, &p.direction.value);
            let gain = p.gain.as_ref().map(|s| leaf(g, &s.value));
            let w = match gain {
                Some(gv) => g.weight_norm(v, gv)?,
                None => v,
            };
            weights.push(w);
            leaves.push((v, gain));
        }
        Ok(Bound { weights, leaves })
    }

    fn gated_vars(&self, bound: &Bound, l: &LayerLayout) -> GatedVars {
        GatedVars {
            w: bound.weights[l.w],
            b: bound.weights[l.b],
            gate: l.gate.map(|(v, c)| (bound.weights[v], bound.weights[c])),
        }
    }

    fn head_vars(&self, bound: &Bound) -> AdaptiveVars {
        AdaptiveVars {
            head_w: bound.weights[self.layout.head_w],
            head_b: bound.weights[self.layout.head_b],
            tails: self
                .layout
                .tails
                .iter()
                .map(|&(p, w, b)| TailVars {
                    proj: bound.weights[p],
                    out_w: bound.weights[w],
                    out_b: bound.weights[b],
                })
                .collect(),
        }
    }

    /// Context representations `[B·T, d]`; row `b·T + t` depends only on
    /// inputs `b, ..=t`.
    pub fn hidden(&self, g: &mut Graph<T>, bound: &Bound, batch: &Batch) -> Result<Var> {
        let (rows, steps) = (batch.batch, batch.steps);
        if batch.inputs.len() != rows * steps {
            return Err(Error::Contract(format!(
                "batch holds {} inputs for geometry {rows}x{steps}",
                batch.inputs.len()
            )));
        }
        let void: Option<Vec<T>> = batch.has_void().then(|| {
            batch
                .void_factors()
                .into_iter()
                .map(|keep| if keep { T::one() } else { T::zero() })
                .collect()
        });
        let mut x = g.embed(bound.weights[self.layout.embed], &batch.inputs, &[rows, steps])?;
        for block in &self.layout.blocks {
            let vars = BlockVars {
                layers: block.layers.iter().map(|l| self.gated_vars(bound, l)).collect(),
                projection: block
                    .projection
                    .map(|(w, b)| (bound.weights[w], bound.weights[b])),
            };
            x = residual_block(g, x, self.arch.gate, &vars, void.as_deref())?;
        }
        let d = g.shape(x)[2];
        g.reshape(x, &[rows * steps, d])
    }

    /// `log p(target | context)` for every position of `batch`, shape `[B·T]`.
    pub fn batch_logprobs(&self, g: &mut Graph<T>, bound: &Bound, batch: &Batch) -> Result<Var> {
        let h = self.hidden(g, bound, batch)?;
        let head = self.head_vars(bound);
        adaptive_logprob(g, h, &batch.targets, &self.cutoffs, &head)
    }

    /// Builds the training graph; returns it with the summed masked NLL node
    /// and the number of predicted tokens.
    pub fn loss_graph(&self, batch: &Batch) -> Result<(Graph<T>, Bound, Var, usize)> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, true)?;
        let lp = self.batch_logprobs(&mut g, &bound, batch)?;
        let mask: Vec<T> = batch
            .mask
            .iter()
            .map(|&m| if m { T::one() } else { T::zero() })
            .collect();
        let loss = crate::head::nll(&mut g, lp, &mask)?;
        Ok((g, bound, loss, batch.unmasked()))
    }

    /// Moves the gradients left on `g` by `backward` into the parameter slots.
    pub fn collect_grads(&mut self, g: &mut Graph<T>, bound: &Bound) {
        for (p, &(v, gain)) in self.params.iter_mut().zip(&bound.leaves) {
            p.direction.grad = g
                .take_grad(v)
                .unwrap_or_else(|| Tensor::zeros(p.direction.value.shape()));
            if let (Some(slot), Some(gv)) = (p.gain.as_mut(), gain) {
                slot.grad = g
                    .take_grad(gv)
                    .unwrap_or_else(|| Tensor::zeros(slot.value.shape()));
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    /// Forward + backward on one batch; leaves gradients of the summed NLL in
    /// the parameter slots and returns `(summed nll, predicted tokens)`.
    pub fn accumulate_gradients(&mut self, batch: &Batch) -> Result<(f64, usize)> {
        let (mut g, bound, loss, count) = self.loss_graph(batch)?;
        let value = g.value(loss).item().to_f64().unwrap_or(f64::NAN);
        g.backward(loss)?;
        self.collect_grads(&mut g, &bound);
        Ok((value, count))
    }

    /// Target log-probabilities `[B, T]` without recording gradients. When
    /// the architecture carries a context window narrower than its receptive
    /// field, each position is scored from its own truncated window.
    pub fn score(&self, batch: &Batch) -> Result<Tensor<T>> {
        if let Some(w) = self.arch.context_window {
            if w < self.receptive_field() {
                return self.score_windowed(batch, w);
            }
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false)?;
        let lp = self.batch_logprobs(&mut g, &bound, batch)?;
        g.value(lp).reshape(&[batch.batch, batch.steps])
    }

    fn score_windowed(&self, batch: &Batch, window: usize) -> Result<Tensor<T>> {
        let mut out = vec![T::zero(); batch.num_tokens()];
        for r in 0..batch.batch {
            let start = batch.input_start[r];
            for t in start..batch.steps {
                let i = r * batch.steps + t;
                if !batch.mask[i] {
                    continue;
                }
                let from = (t + 1).saturating_sub(window).max(start);
                let tokens = &batch.inputs[r * batch.steps + from..=i];
                out[i] = self.last_position_logprob(tokens, batch.targets[i])?;
            }
        }
        Tensor::new(&[batch.batch, batch.steps], out)
    }

    /// `log p(target | tokens)` scored at the last position only; `tokens`
    /// is treated as the start of a sequence (zero padding before it).
    pub fn last_position_logprob(&self, tokens: &[usize], target: usize) -> Result<T> {
        if tokens.is_empty() {
            return Err(Error::Contract("no context tokens".into()));
        }
        let n = tokens.len();
        let batch = Batch {
            batch: 1,
            steps: n,
            inputs: tokens.to_vec(),
            targets: vec![0; n],
            mask: vec![false; n],
            input_start: vec![0],
        };
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false)?;
        let h = self.hidden(&mut g, &bound, &batch)?;
        let last = g.select_rows(h, &[n - 1])?;
        let head = self.head_vars(&bound);
        let lp = adaptive_logprob(&mut g, last, &[target], &self.cutoffs, &head)?;
        Ok(g.value(lp).item())
    }

    /// Full `[B·T, |V|]` log-probability table.
    pub fn logprob_table(&self, batch: &Batch) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false)?;
        let h = self.hidden(&mut g, &bound, batch)?;
        let head = self.head_vars(&bound);
        adaptive_logprob_table(&mut g, h, &self.cutoffs, &head)
    }

    /// For a `Linear`-gate model, the single causal convolution
    /// `(kernel [R, e, d], bias [d])` equivalent to the whole stack, where
    /// `R` is the receptive field. It reproduces [`Model::hidden`] exactly at
    /// positions with a full context window; earlier positions differ only
    /// through biases seen across the zero padding.
    pub fn linear_collapse(&self) -> Result<(Tensor<T>, Tensor<T>)> {
        if self.arch.gate != crate::layers::GateKind::Linear {
            return Err(Error::Contract(format!(
                "collapse needs a linear stack, model uses {}",
                self.arch.gate
            )));
        }
        let e = self.arch.embed_dim;
        // kernel[delay] is an [in, out] matrix
        let mut kernel: Vec<Vec<T>> = vec![Tensor::<T>::identity(e).into_data()];
        let mut bias = vec![T::zero(); e];
        let mut width = e;
        let compose = |kernel: &[Vec<T>], bias: &[T], m: usize, w: &Tensor<T>, b: &Tensor<T>| {
            let (k, n) = (w.shape()[0], w.shape()[2]);
            let wd = w.data();
            let mut out = vec![vec![T::zero(); e * n]; kernel.len() + k - 1];
            let mut out_b = b.data().to_vec();
            for i in 0..k {
                let delay = k - 1 - i;
                let wi = &wd[i * m * n..(i + 1) * m * n];
                for (j, kj) in kernel.iter().enumerate() {
                    crate::tensor::gemm_acc(kj, e, m, wi, n, &mut out[j + delay]);
                }
                crate::tensor::gemm_acc(bias, 1, m, wi, n, &mut out_b);
            }
            (out, out_b, n)
        };
        for block in &self.layout.blocks {
            let (mut inner, mut inner_b, mut m) = (kernel.clone(), bias.clone(), width);
            for l in &block.layers {
                let w = self.params[l.w].materialize();
                let b = self.params[l.b].materialize();
                let (k2, b2, n) = compose(&inner, &inner_b, m, &w, &b);
                inner = k2;
                inner_b = b2;
                m = n;
            }
            let (skip, skip_b) = match block.projection {
                Some((w, b)) => {
                    let (k2, b2, _) = compose(
                        &kernel,
                        &bias,
                        width,
                        &self.params[w].materialize(),
                        &self.params[b].materialize(),
                    );
                    (k2, b2)
                }
                None => (kernel, bias),
            };
            for (j, sk) in skip.into_iter().enumerate() {
                for (o, v) in inner[j].iter_mut().zip(sk) {
                    *o += v;
                }
            }
            for (o, v) in inner_b.iter_mut().zip(skip_b) {
                *o += v;
            }
            kernel = inner;
            bias = inner_b;
            width = m;
        }
        // conv kernels index taps oldest first
        let r = kernel.len();
        let data: Vec<T> = kernel.into_iter().rev().flatten().collect();
        Ok((Tensor::new(&[r, e, width], data)?, Tensor::new(&[width], bias)?))
    }

    /// Largest relative deviation between [`Model::hidden`] and the collapsed
    /// single convolution over positions with a full context window.
    pub fn linear_collapse_error(&self, batch: &Batch) -> Result<f64> {
        let (kernel, bias) = self.linear_collapse()?;
        let r = kernel.shape()[0];
        if batch.steps < r {
            return Err(Error::Contract(format!(
                "collapse check needs at least {r} steps, batch has {}",
                batch.steps
            )));
        }
        let x = self.embeddings(batch)?;
        let direct = crate::tensor::conv1d_causal_forward(&x, &kernel, &bias)?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false)?;
        let h = self.hidden(&mut g, &bound, batch)?;
        let stacked = g.value(h).data();
        let d = bias.numel();
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for b in 0..batch.batch {
            for t in r - 1..batch.steps {
                let row = (b * batch.steps + t) * d;
                for (a, c) in stacked[row..row + d].iter().zip(&direct.data()[row..row + d]) {
                    let (a, c) = (a.to_f64().unwrap_or(f64::NAN), c.to_f64().unwrap_or(f64::NAN));
                    num = num.max((a - c).abs());
                    den = den.max(c.abs());
                }
            }
        }
        Ok(num / den.max(f64::MIN_POSITIVE))
    }

    /// Embedding lookup for a batch, `[B, T, e]`.
    pub fn embeddings(&self, batch: &Batch) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let table = g.constant(self.params[self.layout.embed].materialize());
        let x = g.embed(table, &batch.inputs, &[batch.batch, batch.steps])?;
        Ok(g.value(x).clone())
    }

    /// Zeroes every output-layer weight and bias so the model predicts the
    /// uniform distribution over the vocabulary.
    pub fn force_uniform(&mut self) -> Result<()> {
        if self.cutoffs.num_tails() > 0 {
            return Err(Error::Contract(
                "uniform output needs a single-cluster head".into(),
            ));
        }
        for idx in [self.layout.head_w, self.layout.head_b] {
            let p = &mut self.params[idx];
            match &mut p.gain {
                Some(gain) => gain.value = Tensor::zeros(gain.value.shape()),
                None => p.direction.value = Tensor::zeros(p.direction.value.shape()),
            }
        }
        Ok(())
    }
}
