//! Model building blocks: gate kinds, weight-normalized parameters, gated
//! causal convolution layers, residual blocks and the architecture config
//! language.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{column_norms, Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Activation applied to the convolution output of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GateKind {
    /// `(X∗W + b) ⊗ σ(X∗V + c)`
    Glu,
    /// `tanh(X∗W + b) ⊗ σ(X∗V + c)`
    Gtu,
    Relu,
    Tanh,
    Linear,
    /// `(X∗W + b) ⊗ (X∗V + c)`
    Bilinear,
}

impl GateKind {
    pub const ALL: [GateKind; 6] = [
        GateKind::Glu,
        GateKind::Gtu,
        GateKind::Relu,
        GateKind::Tanh,
        GateKind::Linear,
        GateKind::Bilinear,
    ];

    /// Whether the layer carries a second convolution path `(V, c)`.
    pub fn is_paired(self) -> bool {
        matches!(self, GateKind::Glu | GateKind::Gtu | GateKind::Bilinear)
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::Glu => "glu",
            GateKind::Gtu => "gtu",
            GateKind::Relu => "relu",
            GateKind::Tanh => "tanh",
            GateKind::Linear => "linear",
            GateKind::Bilinear => "bilinear",
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GateKind::ALL
            .into_iter()
            .find(|g| g.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("unknown gate kind `{}`", s.trim()),
            })
    }
}

/// One convolution layer inside a block: kernel width and output units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tap {
    pub k: usize,
    pub n: usize,
}

/// A residual block `[k,n; ...]` repeated `repeat` times.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub taps: Vec<Tap>,
    pub repeat: usize,
    pub bottleneck: bool,
}

pub const MAX_TAPS: usize = 5;

impl BlockSpec {
    pub fn plain(k: usize, n: usize, repeat: usize) -> Self {
        Self {
            taps: vec![Tap { k, n }],
            repeat,
            bottleneck: false,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.taps.is_empty() {
            return Err("block has no layers".into());
        }
        if self.taps.len() > MAX_TAPS {
            return Err(format!("block has {} layers, at most {MAX_TAPS} allowed", self.taps.len()));
        }
        if self.repeat == 0 {
            return Err("repeat count must be positive".into());
        }
        if let Some(t) = self.taps.iter().find(|t| t.k == 0 || t.n == 0) {
            return Err(format!("kernel width and units must be positive, got [{},{}]", t.k, t.n));
        }
        if self.bottleneck {
            let taps = &self.taps;
            if taps.len() < 3 {
                return Err("bottleneck block needs at least 3 layers".into());
            }
            if taps[0].k != 1 || taps[taps.len() - 1].k != 1 {
                return Err("bottleneck block must start and end with k=1 layers".into());
            }
            let wide = taps[1..taps.len() - 1].iter().filter(|t| t.k > 1).count();
            if wide != 1 {
                return Err(format!(
                    "bottleneck block must wedge exactly one k>1 layer, found {wide}"
                ));
            }
        }
        Ok(())
    }

    /// Output units of the block.
    pub fn out_units(&self) -> usize {
        self.taps.last().map(|t| t.n).unwrap_or(0)
    }

    /// Receptive-field growth contributed by all repeats of this block.
    pub fn context_growth(&self) -> usize {
        self.repeat * self.taps.iter().map(|t| t.k - 1).sum::<usize>()
    }
}

impl fmt::Display for BlockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.bottleneck {
            f.write_str("B")?;
        }
        f.write_str("[")?;
        for (i, t) in self.taps.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{},{}", t.k, t.n)?;
        }
        write!(f, "]x{}", self.repeat)
    }
}

/// Declarative network description.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ArchSpec {
    pub embed_dim: usize,
    pub blocks: Vec<BlockSpec>,
    pub gate: GateKind,
    /// Adaptive-softmax boundaries; boundaries at or beyond the vocabulary
    /// size are dropped and `|V|` closes the last cluster. Empty means a
    /// single cluster, i.e. a full softmax.
    pub cutoffs: Vec<usize>,
    pub context_window: Option<usize>,
}

pub const DEFAULT_EMBED_DIM: usize = 128;

impl ArchSpec {
    pub fn new(embed_dim: usize, blocks: Vec<BlockSpec>, gate: GateKind) -> Self {
        Self {
            embed_dim,
            blocks,
            gate,
            cutoffs: Vec::new(),
            context_window: None,
        }
    }

    /// `1 + Σ (k − 1)` over every convolution layer.
    pub fn receptive_field(&self) -> usize {
        1 + self.blocks.iter().map(BlockSpec::context_growth).sum::<usize>()
    }

    pub fn num_layers(&self) -> usize {
        self.blocks.iter().map(|b| b.repeat * b.taps.len()).sum()
    }

    /// Width of the representation fed to the output head.
    pub fn output_dim(&self) -> usize {
        self.blocks
            .last()
            .map(BlockSpec::out_units)
            .unwrap_or(self.embed_dim)
    }

    /// Receptive field actually used when scoring, after any window truncation.
    pub fn effective_context(&self) -> usize {
        match self.context_window {
            Some(w) => w.min(self.receptive_field()),
            None => self.receptive_field(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Parse {
                line: 0,
                msg: "embed must be positive".into(),
            });
        }
        for b in &self.blocks {
            b.validate().map_err(|msg| Error::Parse { line: 0, msg })?;
        }
        if self.cutoffs.windows(2).any(|w| w[0] >= w[1]) || self.cutoffs.first() == Some(&0) {
            return Err(Error::Parse {
                line: 0,
                msg: format!("cutoffs must be positive and strictly increasing: {:?}", self.cutoffs),
            });
        }
        if self.context_window == Some(0) {
            return Err(Error::Parse {
                line: 0,
                msg: "context_window must be positive".into(),
            });
        }
        Ok(())
    }

    /// Canonical config text; `parse_arch(render_arch(a)) == a`.
    pub fn render(&self) -> String {
        let mut out = format!("embed={}\n", self.embed_dim);
        for b in &self.blocks {
            out.push_str(&format!("conv={b}\n"));
        }
        out.push_str(&format!("gate={}\n", self.gate));
        if !self.cutoffs.is_empty() {
            let c: Vec<String> = self.cutoffs.iter().map(ToString::to_string).collect();
            out.push_str(&format!("cutoffs={}\n", c.join(",")));
        }
        if let Some(w) = self.context_window {
            out.push_str(&format!("context_window={w}\n"));
        }
        out
    }
}

pub fn render_arch(arch: &ArchSpec) -> String {
    arch.render()
}

/// Splits config text into `(line number, statement)` pairs: statements are
/// separated by newlines, or by `;` outside brackets. `#` starts a comment.
fn statements(text: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let mut depth = 0i32;
        let mut cur = String::new();
        for ch in line.chars() {
            match ch {
                '[' => depth += 1,
                ']' => depth -= 1,
                ';' if depth == 0 => {
                    out.push((lineno + 1, std::mem::take(&mut cur)));
                    continue;
                }
                _ => {}
            }
            cur.push(ch);
        }
        out.push((lineno + 1, cur));
    }
    out.into_iter()
        .map(|(l, s)| (l, s.trim().to_string()))
        .filter(|(_, s)| !s.is_empty())
        .collect()
}

fn parse_usize(s: &str, what: &str, line: usize) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid {what} `{}`", s.trim()),
    })
}

/// Parses one `conv=` value: optional `B`, `[k,n(;k,n)*]`, `x`, repeat.
pub fn parse_block(value: &str, line: usize) -> Result<BlockSpec> {
    let v = value.trim();
    let (bottleneck, rest) = match v.strip_prefix('B') {
        Some(r) => (true, r.trim_start()),
        None => (false, v),
    };
    let malformed = |msg: &str| Error::Parse {
        line,
        msg: format!("malformed block `{v}`: {msg}"),
    };
    let rest = rest
        .strip_prefix('[')
        .ok_or_else(|| malformed("expected `[`"))?;
    let close = rest.find(']').ok_or_else(|| malformed("missing `]`"))?;
    let (inner, tail) = (&rest[..close], rest[close + 1..].trim());
    if inner.contains('[') {
        return Err(malformed("nested `[`"));
    }
    let repeat_str = tail
        .strip_prefix('x')
        .or_else(|| tail.strip_prefix('×'))
        .ok_or_else(|| malformed("expected `x<repeat>` after `]`"))?;
    let repeat = parse_usize(repeat_str, "repeat count", line)?;
    let mut taps = Vec::new();
    for pair in inner.split(';') {
        let mut it = pair.split(',');
        let (Some(k), Some(n), None) = (it.next(), it.next(), it.next()) else {
            return Err(malformed("each layer must be `k,n`"));
        };
        taps.push(Tap {
            k: parse_usize(k, "kernel width", line)?,
            n: parse_usize(n, "unit count", line)?,
        });
    }
    let block = BlockSpec {
        taps,
        repeat,
        bottleneck,
    };
    block.validate().map_err(|msg| Error::Parse { line, msg })?;
    Ok(block)
}

/// Parses the architecture config language into a validated [`ArchSpec`].
pub fn parse_arch(text: &str) -> Result<ArchSpec> {
    parse_arch_over(&ArchSpec::new(DEFAULT_EMBED_DIM, Vec::new(), GateKind::Glu), text)
}

/// Applies the keys present in `text` on top of `base`. Any `conv` line
/// replaces the whole block list of `base`.
pub fn parse_arch_over(base: &ArchSpec, text: &str) -> Result<ArchSpec> {
    let mut arch = base.clone();
    let mut replaced_blocks = false;
    for (line, stmt) in statements(text) {
        let (key, value) = stmt.split_once('=').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected `key=value`, got `{stmt}`"),
        })?;
        let value = value.trim();
        match key.trim() {
            "embed" => arch.embed_dim = parse_usize(value, "embed size", line)?,
            "conv" => {
                if !replaced_blocks {
                    arch.blocks.clear();
                    replaced_blocks = true;
                }
                arch.blocks.push(parse_block(value, line)?)
            }
            "gate" => {
                arch.gate = value.parse().map_err(|e| match e {
                    Error::Parse { msg, .. } => Error::Parse { line, msg },
                    other => other,
                })?
            }
            "cutoffs" => {
                arch.cutoffs = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_size_suffix(s, line))
                    .collect::<Result<_>>()?
            }
            "context_window" => arch.context_window = Some(parse_usize(value, "context window", line)?),
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown key `{other}`"),
                })
            }
        }
    }
    arch.validate()?;
    Ok(arch)
}

/// Accepts plain integers and the `10k` shorthand.
fn parse_size_suffix(s: &str, line: usize) -> Result<usize> {
    let s = s.trim();
    match s.strip_suffix(['k', 'K']) {
        Some(num) => Ok(parse_usize(num, "cutoff", line)? * 1000),
        None => parse_usize(s, "cutoff", line),
    }
}

/// Built-in desk-scale architectures.
pub const PRESETS: &[(&str, &str)] = &[
    (
        "gcnn8-tiny",
        "embed=32\nconv=[4,64]x1\nconv=[4,64]x7\ngate=glu\ncutoffs=200,1000\n",
    ),
    (
        "gcnn8b-tiny",
        "embed=32\nconv=[1,64]x1\nconv=B[1,16;5,16;1,64]x6\ngate=glu\ncutoffs=200,1000\n",
    ),
    (
        "gcnn13-tiny",
        "embed=32\nconv=[4,48]x1\nconv=[4,48;4,48]x6\ngate=glu\ncutoffs=200,1000\n",
    ),
    ("gcnnsweep-w1", "embed=32\nconv=[1,48]x3\ngate=glu\n"),
    ("gcnnsweep-w3", "embed=32\nconv=[2,48]x2\nconv=[1,48]x1\ngate=glu\n"),
    ("gcnnsweep-w10", "embed=32\nconv=[4,48]x3\ngate=glu\n"),
    ("gcnnsweep-w25", "embed=32\nconv=[9,48]x3\ngate=glu\n"),
    ("gcnnsweep-gate", "embed=32\nconv=[3,48]x3\ngate=glu\n"),
];

pub fn preset(name: &str) -> Option<ArchSpec> {
    let name = name.trim_start_matches("presets/");
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_arch(text).expect("built-in presets are valid"))
}

/// Trainable tensor with its gradient and momentum buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Slot<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub momentum: Tensor<T>,
}

impl<T: Scalar> Slot<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        let momentum = Tensor::zeros(value.shape());
        Self {
            value,
            grad,
            momentum,
        }
    }
}

/// A trainable quantity. With a gain present the materialized weight is
/// `w = g · v / ‖v‖`, one norm per output unit (last axis); without one the
/// direction is used as the weight directly.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub direction: Slot<T>,
    pub gain: Option<Slot<T>>,
}

impl<T: Scalar> Parameter<T> {
    pub fn plain(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            direction: Slot::new(value),
            gain: None,
        }
    }

    /// Weight-normalized parameter whose gain equals the per-unit norm of
    /// `v`, so the initial materialized weight equals `v`.
    pub fn normalized(name: impl Into<String>, v: Tensor<T>) -> Self {
        let norms = column_norms(&v);
        let n = norms.len();
        Self {
            name: name.into(),
            direction: Slot::new(v),
            gain: Some(Slot::new(Tensor::new(&[n], norms).expect("gain shape"))),
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.gain.is_some()
    }

    pub fn numel(&self) -> usize {
        self.direction.value.numel() + self.gain.as_ref().map_or(0, |g| g.value.numel())
    }

    pub fn shape(&self) -> &[usize] {
        self.direction.value.shape()
    }

    /// The weight as used by the forward pass.
    pub fn materialize(&self) -> Tensor<T> {
        let Some(gain) = &self.gain else {
            return self.direction.value.clone();
        };
        let v = &self.direction.value;
        let n = v.last_dim();
        let norms = column_norms(v);
        let mut w = v.clone();
        for row in w.data_mut().chunks_mut(n) {
            for ((x, &g), &s) in row.iter_mut().zip(gain.value.data()).zip(&norms) {
                *x = *x * g / s;
            }
        }
        w
    }

    pub fn slots(&self) -> impl Iterator<Item = &Slot<T>> {
        std::iter::once(&self.direction).chain(self.gain.as_ref())
    }

    pub fn slots_mut(&mut self) -> impl Iterator<Item = &mut Slot<T>> {
        std::iter::once(&mut self.direction).chain(self.gain.as_mut())
    }

    pub fn zero_grad(&mut self) {
        for s in self.slots_mut() {
            s.grad = Tensor::zeros(s.value.shape());
        }
    }
}

/// Zero-mean normal samples with variance `2 / fan_in`.
pub fn kaiming_init<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    assert!(fan_in >= 1, "fan_in must be at least 1");
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| lit(normal.sample(rng)))
}

/// Graph handles for one gated layer.
#[derive(Clone, Copy, Debug)]
pub struct GatedVars {
    pub w: Var,
    pub b: Var,
    /// Second path `(V, c)`, present for paired gate kinds.
    pub gate: Option<(Var, Var)>,
}

/// One causal convolution layer with the activation selected by `kind`.
pub fn gated_layer<T: Scalar>(g: &mut Graph<T>, x: Var, kind: GateKind, p: &GatedVars) -> Result<Var> {
    let a = g.conv1d_causal(x, p.w, p.b)?;
    let second = |g: &mut Graph<T>| -> Result<Var> {
        let (v, c) = p.gate.ok_or_else(|| {
            Error::Contract(format!("{kind} layer requires a second parameter pair"))
        })?;
        if g.shape(v) != g.shape(p.w) {
            return crate::error::shape_err("gated_layer", g.shape(p.w), g.shape(v));
        }
        g.conv1d_causal(x, v, c)
    };
    match kind {
        GateKind::Glu => {
            let z = second(g)?;
            let s = g.sigmoid(z)?;
            g.mul(a, s)
        }
        GateKind::Gtu => {
            let z = second(g)?;
            let s = g.sigmoid(z)?;
            let t = g.tanh(a)?;
            g.mul(t, s)
        }
        GateKind::Bilinear => {
            let z = second(g)?;
            g.mul(a, z)
        }
        GateKind::Relu => g.relu(a),
        GateKind::Tanh => g.tanh(a),
        GateKind::Linear => Ok(a),
    }
}

/// Graph handles for one residual block.
#[derive(Clone, Debug)]
pub struct BlockVars {
    pub layers: Vec<GatedVars>,
    /// Learned `k=1` map on the skip path when input and output widths differ.
    pub projection: Option<(Var, Var)>,
}

/// `inner_stack(x) + project(x)`. When `void_rows` is given, the input of
/// every convolution is multiplied row-wise by it so positions before a
/// sequence's start read as zero padding.
pub fn residual_block<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    gate: GateKind,
    p: &BlockVars,
    void_rows: Option<&[T]>,
) -> Result<Var> {
    let masked = |g: &mut Graph<T>, v: Var| -> Result<Var> {
        match void_rows {
            Some(f) => g.scale_rows(v, f),
            None => Ok(v),
        }
    };
    let mut h = x;
    for layer in &p.layers {
        let hin = masked(g, h)?;
        h = gated_layer(g, hin, gate, layer)?;
    }
    let skip = match p.projection {
        Some((w, b)) => {
            let xin = masked(g, x)?;
            g.conv1d_causal(xin, w, b)?
        }
        None => x,
    };
    g.add(h, skip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parses_gcnn8_shape() {
        let a = parse_arch("embed=280; conv=[4,900]x1; conv=[4,900]x7; gate=glu; cutoffs=2000,10000").unwrap();
        assert_eq!(a.num_layers(), 8);
        assert_eq!(a.embed_dim, 280);
        assert_eq!(a.blocks[1], BlockSpec::plain(4, 900, 7));
        assert_eq!(a.cutoffs, vec![2000, 10000]);
        assert_eq!(a.receptive_field(), 25);
    }

    #[test]
    fn parses_bottleneck_group() {
        let a = parse_arch("conv=B[1,128;5,128;1,512]x3").unwrap();
        assert_eq!(a.blocks.len(), 1);
        let b = &a.blocks[0];
        assert!(b.bottleneck);
        assert_eq!(b.repeat, 3);
        assert_eq!(
            b.taps,
            vec![Tap { k: 1, n: 128 }, Tap { k: 5, n: 128 }, Tap { k: 1, n: 512 }]
        );
    }

    #[test]
    fn overlay_replaces_only_given_keys() {
        let base = preset("gcnn8-tiny").unwrap();
        let a = parse_arch_over(&base, "gate=gtu").unwrap();
        assert_eq!(a.gate, GateKind::Gtu);
        assert_eq!(a.blocks, base.blocks);
        let b = parse_arch_over(&base, "conv=[2,8]x1").unwrap();
        assert_eq!(b.blocks.len(), 1);
        assert_eq!(b.embed_dim, base.embed_dim);
    }

    #[test]
    fn empty_block_list_is_valid() {
        let a = parse_arch("embed=16\ngate=glu\n").unwrap();
        assert!(a.blocks.is_empty());
        assert_eq!(a.receptive_field(), 1);
        assert_eq!(a.output_dim(), 16);
    }

    #[test]
    fn full_scale_cutoffs_shorthand() {
        let a = parse_arch("cutoffs=10k,40k,200k").unwrap();
        assert_eq!(a.cutoffs, vec![10_000, 40_000, 200_000]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_arch("embed=8\ngate=swish\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_arch("embed=8\n\nconv=[4,8x2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_arch("conv=B[3,8;3,8;1,8]x1").unwrap_err();
        assert!(err.to_string().contains("k=1"), "{err}");
        assert!(parse_arch("conv=[1,2;1,2;1,2;1,2;1,2;1,2]x1").is_err());
        assert!(parse_arch("speed=3").is_err());
    }

    #[test]
    fn presets_parse_and_round_trip() {
        for (name, _) in PRESETS {
            let a = preset(name).unwrap();
            assert_eq!(parse_arch(&a.render()).unwrap(), a, "{name}");
        }
        assert_eq!(preset("gcnn8-tiny").unwrap().receptive_field(), 25);
        assert_eq!(preset("gcnn8b-tiny").unwrap().receptive_field(), 25);
        assert_eq!(preset("gcnnsweep-w3").unwrap().receptive_field(), 3);
        assert_eq!(preset("gcnnsweep-w10").unwrap().receptive_field(), 10);
        assert_eq!(preset("gcnnsweep-w25").unwrap().receptive_field(), 25);
    }

    #[test]
    fn weight_norm_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Tensor<f64> = kaiming_init(&[3, 4, 5], 12, &mut rng);
        let p = Parameter::normalized("w", v.clone());
        assert!(p.materialize().max_abs_diff(&v) < 1e-12);
        let mut scaled = p.clone();
        scaled.direction.value.scale_in_place(3.0);
        let (a, b) = (p.materialize(), scaled.materialize());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-12));
        }
    }

    #[test]
    fn kaiming_variance_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t: Tensor<f64> = kaiming_init(&[100_000], 2, &mut rng);
        let mean = t.sum() / 1e5;
        let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 1e5;
        assert!((var - 1.0).abs() < 0.05, "{var}");
        let a: Tensor<f32> = kaiming_init(&[7, 3], 5, &mut ChaCha8Rng::seed_from_u64(4));
        let b: Tensor<f32> = kaiming_init(&[7, 3], 5, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
    }

    fn glu_vars(g: &mut Graph<f64>, w: Tensor<f64>, v: Tensor<f64>, n: usize) -> GatedVars {
        let w = g.param(w);
        let b = g.param(Tensor::zeros(&[n]));
        let v = g.param(v);
        let c = g.param(Tensor::zeros(&[n]));
        GatedVars { w, b, gate: Some((v, c)) }
    }

    #[test]
    fn glu_with_zero_gate_halves_linear_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::<f64>::new();
        let x = g.constant(kaiming_init(&[5, 2], 1, &mut rng));
        let p = glu_vars(&mut g, kaiming_init(&[2, 2, 3], 4, &mut rng), Tensor::zeros(&[2, 2, 3]), 3);
        let out = gated_layer(&mut g, x, GateKind::Glu, &p).unwrap();
        let lin = g.conv1d_causal(x, p.w, p.b).unwrap();
        for (o, l) in g.value(out).data().iter().zip(g.value(lin).data()) {
            assert_eq!(*o, 0.5 * l);
        }
    }

    #[test]
    fn gtu_with_zero_linear_path_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::<f64>::new();
        let x = g.constant(kaiming_init(&[5, 2], 1, &mut rng));
        let p = glu_vars(&mut g, Tensor::zeros(&[2, 2, 3]), kaiming_init(&[2, 2, 3], 4, &mut rng), 3);
        let out = gated_layer(&mut g, x, GateKind::Gtu, &p).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unpaired_gate_without_second_path() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[3, 2]));
        let w = g.param(Tensor::ones(&[1, 2, 2]));
        let b = g.param(Tensor::zeros(&[2]));
        let p = GatedVars { w, b, gate: None };
        assert!(gated_layer(&mut g, x, GateKind::Glu, &p).is_err());
        assert!(gated_layer(&mut g, x, GateKind::Relu, &p).is_ok());
    }

    #[test]
    fn zero_inner_stack_is_identity_block() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[4, 3], |i| i as f64 - 5.0));
        let layer = glu_vars(&mut g, Tensor::zeros(&[2, 3, 3]), Tensor::zeros(&[2, 3, 3]), 3);
        let p = BlockVars {
            layers: vec![layer],
            projection: None,
        };
        let out = residual_block(&mut g, x, GateKind::Glu, &p, None).unwrap();
        assert_eq!(g.value(out), g.value(x));
    }
}
