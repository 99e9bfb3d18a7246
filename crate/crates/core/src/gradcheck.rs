//! Central finite-difference oracle for tape gradients, evaluated in 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Binary, Graph, Unary, Var};
use crate::error::{Error, Result};
use crate::head::{adaptive_logprob, full_softmax_logprob, nll, AdaptiveCutoffs, AdaptiveVars, TailVars};
use crate::layers::{gated_layer, residual_block, BlockVars, GateKind, GatedVars};
use crate::tensor::{conv1d_causal_forward, Tensor};

/// Denominator floor for the relative error, so entries whose true gradient
/// is zero compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Result of comparing tape gradients against central differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_index: usize,
}

/// `|a - b| / max(|a|, |b|, REL_FLOOR)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn eval_loss<F>(f: &F, x: &Tensor<f64>, track: bool) -> Result<(Graph<f64>, Var, Var)>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = if track {
        g.param(x.clone())
    } else {
        g.constant(x.clone())
    };
    let loss = f(&mut g, xv)?;
    if g.value(loss).numel() != 1 {
        return Err(Error::Contract("finite_diff_check needs a scalar loss".into()));
    }
    Ok((g, xv, loss))
}

/// Compares the tape gradient of the scalar function built by `f` at `x`
/// against `(f(x + εe_i) − f(x − εe_i)) / 2ε` for every coordinate.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("eps must be positive, got {eps}")));
    }
    let (mut g, xv, loss) = eval_loss(&f, x, true)?;
    g.backward(loss)?;
    let analytic = g
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut report = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_index: 0,
    };
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let (gp, _, lp) = eval_loss(&f, &probe, false)?;
        let plus = gp.value(lp).item();
        probe.data_mut()[i] = orig - eps;
        let (gm, _, lm) = eval_loss(&f, &probe, false)?;
        let minus = gm.value(lm).item();
        probe.data_mut()[i] = orig;

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = rel_err(a, numeric);
        report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}

/// Deterministic, non-uniform loss weights so every output coordinate
/// contributes a distinct gradient.
fn probe_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| ((i as f64 + 1.0) * 0.618_033_988_75).fract() * 2.0 - 1.0 + 0.1)
        .collect()
}

/// `Σ y ⊙ R` for the fixed weights `R` of [`probe_weights`].
pub fn probe_loss(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.constant(Tensor::new(&shape, probe_weights(shape.iter().product()))?);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Checks the gradient of `probe_loss(build(inputs))` with respect to
/// `inputs[which]`, holding the others constant.
pub fn check_input<F>(build: F, inputs: &[Tensor<f64>], which: usize) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    finite_diff_check(
        |g, x| {
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(i, t)| if i == which { x } else { g.constant(t.clone()) })
                .collect();
            let y = build(g, &vars)?;
            probe_loss(g, y)
        },
        &inputs[which],
        DEFAULT_EPS,
    )
}

/// Worst relative error of one operation over all its random instances.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub op: String,
    pub instances: usize,
    pub max_rel_err: f64,
}

struct Suite {
    rng: ChaCha8Rng,
    instances: usize,
    results: Vec<OpCheck>,
}

impl Suite {
    fn dim(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }

    fn normal(&mut self, shape: &[usize]) -> Tensor<f64> {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
    }

    /// Normal samples pushed at least `gap` away from zero.
    fn away_from_zero(&mut self, shape: &[usize], gap: f64) -> Tensor<f64> {
        self.normal(shape)
            .map(|v| if v.abs() < gap { v.signum() * gap + v } else { v })
    }

    fn positive(&mut self, shape: &[usize]) -> Tensor<f64> {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| rng.random_range(0.2..3.0))
    }

    /// Runs `make` `instances` times; each call returns the inputs and the
    /// builder, and every input is checked.
    fn op<F, B>(&mut self, name: &str, mut make: F) -> Result<()>
    where
        F: FnMut(&mut Self) -> (Vec<Tensor<f64>>, B, Vec<usize>),
        B: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let mut worst: f64 = 0.0;
        for _ in 0..self.instances {
            let (inputs, build, which) = make(self);
            for w in which {
                let r = check_input(&build, &inputs, w)?;
                worst = worst.max(r.max_rel_err);
            }
        }
        self.results.push(OpCheck {
            op: name.to_string(),
            instances: self.instances,
            max_rel_err: worst,
        });
        Ok(())
    }
}

/// Central finite-difference checks of every differentiable operation and
/// composite layer on `instances` random inputs each.
pub fn run_suite(seed: u64, instances: usize) -> Result<Vec<OpCheck>> {
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        instances: instances.max(1),
        results: Vec::new(),
    };
    s.op("matmul", |s| {
        let (p, q, r) = (s.dim(1, 5), s.dim(1, 5), s.dim(1, 4));
        (vec![s.normal(&[p, q]), s.normal(&[q, r])], |g: &mut Graph<f64>, v: &[Var]| g.matmul(v[0], v[1]), vec![0, 1])
    })?;
    s.op("conv1d_causal", |s| {
        let (b, t, m, k, n) = (s.dim(1, 2), s.dim(1, 6), s.dim(1, 3), s.dim(1, 4), s.dim(1, 3));
        (
            vec![s.normal(&[b, t, m]), s.normal(&[k, m, n]), s.normal(&[n])],
            |g: &mut Graph<f64>, v: &[Var]| g.conv1d_causal(v[0], v[1], v[2]),
            vec![0, 1, 2],
        )
    })?;
    s.op("add_bias", |s| {
        let (r, c) = (s.dim(1, 5), s.dim(1, 5));
        (vec![s.normal(&[r, c]), s.normal(&[c])], |g: &mut Graph<f64>, v: &[Var]| g.add_bias(v[0], v[1]), vec![0, 1])
    })?;
    for kind in [Unary::Sigmoid, Unary::Tanh, Unary::Relu, Unary::Exp, Unary::Log] {
        let name = format!("{kind:?}").to_lowercase();
        s.op(&name, |s| {
            let shape = [s.dim(1, 4), s.dim(1, 4)];
            let x = match kind {
                Unary::Log => s.positive(&shape),
                Unary::Relu => s.away_from_zero(&shape, 1e-2),
                _ => s.normal(&shape),
            };
            (vec![x], move |g: &mut Graph<f64>, v: &[Var]| g.unary(kind, v[0]), vec![0])
        })?;
    }
    for kind in [Binary::Add, Binary::Sub, Binary::Mul] {
        let name = format!("{kind:?}").to_lowercase();
        s.op(&name, |s| {
            let shape = [s.dim(1, 4), s.dim(1, 4)];
            (
                vec![s.normal(&shape), s.normal(&shape)],
                move |g: &mut Graph<f64>, v: &[Var]| g.binary(kind, v[0], v[1]),
                vec![0, 1],
            )
        })?;
    }
    s.op("sum", |s| {
        let shape = [s.dim(1, 4), s.dim(1, 4)];
        (vec![s.normal(&shape)], |g: &mut Graph<f64>, v: &[Var]| Ok(g.sum(v[0])), vec![0])
    })?;
    s.op("scale", |s| {
        let shape = [s.dim(1, 4), s.dim(1, 4)];
        let f: f64 = s.rng.random_range(-2.0..2.0);
        (vec![s.normal(&shape)], move |g: &mut Graph<f64>, v: &[Var]| Ok(g.scale(v[0], f)), vec![0])
    })?;
    s.op("reshape", |s| {
        let (a, b) = (s.dim(1, 4), s.dim(1, 4));
        (vec![s.normal(&[a, b])], move |g: &mut Graph<f64>, v: &[Var]| g.reshape(v[0], &[b, a]), vec![0])
    })?;
    s.op("embed", |s| {
        let (vocab, e, n) = (s.dim(2, 6), s.dim(1, 4), s.dim(1, 8));
        let ids: Vec<usize> = (0..n).map(|_| s.rng.random_range(0..vocab)).collect();
        (
            vec![s.normal(&[vocab, e])],
            move |g: &mut Graph<f64>, v: &[Var]| g.embed(v[0], &ids, &[n]),
            vec![0],
        )
    })?;
    s.op("weight_norm", |s| {
        let (k, m, n) = (s.dim(1, 3), s.dim(1, 3), s.dim(1, 4));
        (
            vec![s.normal(&[k, m, n]), s.positive(&[n])],
            |g: &mut Graph<f64>, v: &[Var]| g.weight_norm(v[0], v[1]),
            vec![0, 1],
        )
    })?;
    s.op("log_softmax", |s| {
        let shape = [s.dim(1, 4), s.dim(2, 6)];
        (vec![s.normal(&shape)], |g: &mut Graph<f64>, v: &[Var]| Ok(g.log_softmax(v[0])), vec![0])
    })?;
    s.op("log_softmax_pick", |s| {
        let (r, c) = (s.dim(1, 5), s.dim(2, 6));
        let t: Vec<usize> = (0..r).map(|_| s.rng.random_range(0..c)).collect();
        (
            vec![s.normal(&[r, c])],
            move |g: &mut Graph<f64>, v: &[Var]| g.log_softmax_pick(v[0], &t),
            vec![0],
        )
    })?;
    s.op("select_rows", |s| {
        let (r, d, n) = (s.dim(1, 5), s.dim(1, 3), s.dim(1, 6));
        let rows: Vec<usize> = (0..n).map(|_| s.rng.random_range(0..r)).collect();
        (
            vec![s.normal(&[r, d])],
            move |g: &mut Graph<f64>, v: &[Var]| g.select_rows(v[0], &rows),
            vec![0],
        )
    })?;
    s.op("scatter_rows", |s| {
        let (r, d, n) = (s.dim(1, 5), s.dim(1, 3), s.dim(1, 6));
        let rows: Vec<usize> = (0..n).map(|_| s.rng.random_range(0..r)).collect();
        (
            vec![s.normal(&[r, d]), s.normal(&[n, d])],
            move |g: &mut Graph<f64>, v: &[Var]| g.scatter_rows(v[0], &rows, v[1]),
            vec![0, 1],
        )
    })?;
    s.op("scale_rows", |s| {
        let (r, d) = (s.dim(1, 5), s.dim(1, 3));
        let f: Vec<f64> = (0..r).map(|_| s.rng.random_range(-1.5..1.5)).collect();
        (
            vec![s.normal(&[r, d])],
            move |g: &mut Graph<f64>, v: &[Var]| g.scale_rows(v[0], &f),
            vec![0],
        )
    })?;
    for kind in GateKind::ALL {
        s.op(&format!("gated_layer({kind})"), |s| {
            let (t, m, k, n) = (s.dim(1, 5), s.dim(1, 3), s.dim(1, 3), s.dim(1, 3));
            let mut inputs = vec![s.normal(&[1, t, m]), s.normal(&[k, m, n]), s.normal(&[n]), s.normal(&[k, m, n]), s.normal(&[n])];
            // keep ReLU pre-activations clear of the kink
            while kind == GateKind::Relu
                && conv1d_causal_forward(&inputs[0], &inputs[1], &inputs[2])
                    .map(|a| a.data().iter().any(|v| v.abs() < 1e-3))
                    .unwrap_or(false)
            {
                inputs[2] = s.normal(&[n]);
            }
            let build = move |g: &mut Graph<f64>, v: &[Var]| {
                let p = GatedVars {
                    w: v[1],
                    b: v[2],
                    gate: kind.is_paired().then(|| (v[3], v[4])),
                };
                gated_layer(g, v[0], kind, &p)
            };
            let which = if kind.is_paired() {
                vec![0, 1, 2, 3, 4]
            } else {
                vec![0, 1, 2]
            };
            (inputs, build, which)
        })?;
    }
    s.op("residual_block", |s| {
        let (b, t, m, n) = (s.dim(1, 2), s.dim(2, 5), s.dim(1, 3), s.dim(1, 3));
        let inputs = vec![
            s.normal(&[b, t, m]),
            s.normal(&[2, m, n]),
            s.normal(&[n]),
            s.normal(&[2, m, n]),
            s.normal(&[n]),
            s.normal(&[1, m, n]),
            s.normal(&[n]),
        ];
        let void: Vec<f64> = (0..b * t).map(|i| if i % t == 0 { 0.0 } else { 1.0 }).collect();
        let build = move |g: &mut Graph<f64>, v: &[Var]| {
            let p = BlockVars {
                layers: vec![GatedVars {
                    w: v[1],
                    b: v[2],
                    gate: Some((v[3], v[4])),
                }],
                projection: (m != n).then(|| (v[5], v[6])),
            };
            residual_block(g, v[0], GateKind::Glu, &p, Some(&void))
        };
        (inputs, build, vec![0, 1, 3])
    })?;
    s.op("full_softmax", |s| {
        let (r, d, vocab) = (s.dim(1, 4), s.dim(1, 4), s.dim(2, 7));
        let t: Vec<usize> = (0..r).map(|_| s.rng.random_range(0..vocab)).collect();
        (
            vec![s.normal(&[r, d]), s.normal(&[d, vocab]), s.normal(&[vocab])],
            move |g: &mut Graph<f64>, v: &[Var]| full_softmax_logprob(g, v[0], v[1], v[2], &t),
            vec![0, 1, 2],
        )
    })?;
    s.op("adaptive_softmax", |s| {
        let (r, d) = (s.dim(2, 6), s.dim(2, 4));
        let cut = AdaptiveCutoffs::new(vec![3, 6, 9], vec![2, 1]).expect("valid cutoffs");
        let t: Vec<usize> = (0..r).map(|_| s.rng.random_range(0..9)).collect();
        let inputs = vec![
            s.normal(&[r, d]),
            s.normal(&[d, 5]),
            s.normal(&[5]),
            s.normal(&[d, 2]),
            s.normal(&[2, 3]),
            s.normal(&[3]),
            s.normal(&[d, 1]),
            s.normal(&[1, 3]),
            s.normal(&[3]),
        ];
        let build = move |g: &mut Graph<f64>, v: &[Var]| {
            let p = AdaptiveVars {
                head_w: v[1],
                head_b: v[2],
                tails: vec![
                    TailVars { proj: v[3], out_w: v[4], out_b: v[5] },
                    TailVars { proj: v[6], out_w: v[7], out_b: v[8] },
                ],
            };
            adaptive_logprob(g, v[0], &t, &cut, &p)
        };
        (inputs, build, (0..9).collect())
    })?;
    s.op("nll", |s| {
        let n = s.dim(2, 8);
        let mask: Vec<f64> = (0..n).map(|i| if i == 0 || s.rng.random_bool(0.7) { 1.0 } else { 0.0 }).collect();
        (
            vec![s.normal(&[n])],
            move |g: &mut Graph<f64>, v: &[Var]| nll(g, v[0], &mask),
            vec![0],
        )
    })?;
    Ok(s.results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::from_fn(&[3, 4], |i| (i as f64).sin());
        let r = finite_diff_check(|g, x| Ok(g.sum(x)), &x, 1e-5).unwrap();
        assert!(r.max_rel_err < 1e-9, "{r:?}");
    }

    #[test]
    fn sigmoid_sum() {
        let x = Tensor::from_fn(&[5], |i| i as f64 * 0.7 - 1.5);
        let r = finite_diff_check(
            |g, x| {
                let s = g.sigmoid(x)?;
                Ok(g.sum(s))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }

    #[test]
    fn suite_passes_for_a_fixed_seed() {
        for c in run_suite(7, 3).unwrap() {
            assert!(c.max_rel_err < 1e-4, "{c:?}");
        }
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let x = Tensor::ones(&[2]);
        assert!(finite_diff_check(|g, x| Ok(g.sum(x)), &x, 0.0).is_err());
    }
}
