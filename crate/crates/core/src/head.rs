//! Output probability layers: full softmax, two-level adaptive softmax over
//! frequency-ordered clusters, and masked negative log-likelihood.

use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default divisor applied to the hidden width to get each tail cluster's
/// projection dimension.
pub const DEFAULT_TAIL_DIVISOR: usize = 4;

/// Partition of frequency-sorted ids `[0, |V|)` into a head shortlist
/// `[0, boundaries[0])` and tail clusters `[boundaries[i-1], boundaries[i])`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdaptiveCutoffs {
    boundaries: Vec<usize>,
    proj_dims: Vec<usize>,
}

impl AdaptiveCutoffs {
    /// Explicit boundaries (last must equal the vocabulary size) and one
    /// projection dimension per tail cluster.
    pub fn new(boundaries: Vec<usize>, proj_dims: Vec<usize>) -> Result<Self> {
        if boundaries.is_empty() || boundaries[0] == 0 {
            return Err(Error::Contract(format!(
                "cutoffs need a non-empty head: {boundaries:?}"
            )));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract(format!(
                "cutoffs must be strictly increasing: {boundaries:?}"
            )));
        }
        if proj_dims.len() != boundaries.len() - 1 || proj_dims.contains(&0) {
            return Err(Error::Contract(format!(
                "need one positive projection dimension per tail cluster, got {proj_dims:?}"
            )));
        }
        Ok(Self {
            boundaries,
            proj_dims,
        })
    }

    /// Resolves config cutoffs against a vocabulary: boundaries `>= vocab`
    /// are dropped, `vocab` closes the last cluster, and each tail projects
    /// to `max(1, hidden / divisor)` dimensions.
    pub fn resolve(config: &[usize], vocab: usize, hidden: usize, divisor: usize) -> Result<Self> {
        let mut b: Vec<usize> = config.iter().copied().filter(|&c| c < vocab).collect();
        b.push(vocab);
        let tails = b.len() - 1;
        Self::new(b, vec![(hidden / divisor.max(1)).max(1); tails])
    }

    pub fn single(vocab: usize) -> Self {
        Self {
            boundaries: vec![vocab],
            proj_dims: Vec::new(),
        }
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn proj_dims(&self) -> &[usize] {
        &self.proj_dims
    }

    pub fn vocab_size(&self) -> usize {
        *self.boundaries.last().expect("non-empty")
    }

    pub fn head_size(&self) -> usize {
        self.boundaries[0]
    }

    pub fn num_tails(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Columns of the head distribution: shortlist words plus one entry per tail.
    pub fn head_outputs(&self) -> usize {
        self.head_size() + self.num_tails()
    }

    /// `(start, end)` id range of tail cluster `i`.
    pub fn tail_range(&self, i: usize) -> (usize, usize) {
        (self.boundaries[i], self.boundaries[i + 1])
    }

    /// Tail cluster holding `id`, or `None` for shortlist ids.
    pub fn cluster_of(&self, id: usize) -> Option<usize> {
        if id < self.head_size() {
            return None;
        }
        self.boundaries.iter().position(|&b| id < b).map(|p| p - 1)
    }

    /// Multiply-accumulate count for scoring `rows` positions whose targets
    /// fall into the tails as `tail_rows[i]`.
    pub fn mac_count(&self, hidden: usize, rows: usize, tail_rows: &[usize]) -> usize {
        let mut macs = rows * hidden * self.head_outputs();
        for (i, &r) in tail_rows.iter().enumerate() {
            let (s, e) = self.tail_range(i);
            let p = self.proj_dims[i];
            macs += r * (hidden * p + p * (e - s));
        }
        macs
    }
}

/// Graph handles for an adaptive head.
#[derive(Clone, Debug)]
pub struct AdaptiveVars {
    /// `[d, head_outputs]`
    pub head_w: Var,
    pub head_b: Var,
    pub tails: Vec<TailVars>,
}

#[derive(Clone, Copy, Debug)]
pub struct TailVars {
    /// `[d, p]`
    pub proj: Var,
    /// `[p, cluster size]`
    pub out_w: Var,
    pub out_b: Var,
}

fn check_rows<T: Scalar>(g: &Graph<T>, h: Var, n: usize) -> Result<()> {
    let s = g.shape(h);
    if s.len() != 2 || s[0] != n {
        return shape_err("head(h)", s, &[n]);
    }
    Ok(())
}

/// `log p(target_i | h_i)` under a softmax over `h · w + b`.
pub fn full_softmax_logprob<T: Scalar>(
    g: &mut Graph<T>,
    h: Var,
    w: Var,
    b: Var,
    targets: &[usize],
) -> Result<Var> {
    check_rows(g, h, targets.len())?;
    let z = g.matmul(h, w)?;
    let logits = g.add_bias(z, b)?;
    g.log_softmax_pick(logits, targets)
}

/// `log p(target_i | h_i)` under the adaptive head. Shortlist words are
/// scored by the head directly; a tail word's log-probability is
/// `log p(cluster | h) + log p(word | cluster, h · proj)`.
pub fn adaptive_logprob<T: Scalar>(
    g: &mut Graph<T>,
    h: Var,
    targets: &[usize],
    cutoffs: &AdaptiveCutoffs,
    p: &AdaptiveVars,
) -> Result<Var> {
    check_rows(g, h, targets.len())?;
    if p.tails.len() != cutoffs.num_tails() {
        return Err(Error::Contract(format!(
            "adaptive head has {} tails, cutoffs describe {}",
            p.tails.len(),
            cutoffs.num_tails()
        )));
    }
    let head = cutoffs.head_size();
    let mut head_targets = Vec::with_capacity(targets.len());
    let mut tail_rows: Vec<Vec<usize>> = vec![Vec::new(); cutoffs.num_tails()];
    let mut tail_targets: Vec<Vec<usize>> = vec![Vec::new(); cutoffs.num_tails()];
    for (row, &t) in targets.iter().enumerate() {
        if t >= cutoffs.vocab_size() {
            return Err(Error::Index {
                op: "adaptive_logprob",
                position: row,
                id: t,
                limit: cutoffs.vocab_size(),
            });
        }
        match cutoffs.cluster_of(t) {
            None => head_targets.push(t),
            Some(c) => {
                head_targets.push(head + c);
                tail_rows[c].push(row);
                tail_targets[c].push(t - cutoffs.tail_range(c).0);
            }
        }
    }
    let z = g.matmul(h, p.head_w)?;
    let logits = g.add_bias(z, p.head_b)?;
    let mut out = g.log_softmax_pick(logits, &head_targets)?;
    for (c, tail) in p.tails.iter().enumerate() {
        if tail_rows[c].is_empty() {
            continue;
        }
        let hs = g.select_rows(h, &tail_rows[c])?;
        let proj = g.matmul(hs, tail.proj)?;
        let z = g.matmul(proj, tail.out_w)?;
        let tl = g.add_bias(z, tail.out_b)?;
        let lp = g.log_softmax_pick(tl, &tail_targets[c])?;
        out = g.scatter_rows(out, &tail_rows[c], lp)?;
    }
    Ok(out)
}

/// Full `[N, |V|]` table of log-probabilities under the adaptive head.
pub fn adaptive_logprob_table<T: Scalar>(
    g: &mut Graph<T>,
    h: Var,
    cutoffs: &AdaptiveCutoffs,
    p: &AdaptiveVars,
) -> Result<Tensor<T>> {
    let rows = g.shape(h)[0];
    let vocab = cutoffs.vocab_size();
    let head = cutoffs.head_size();
    let z = g.matmul(h, p.head_w)?;
    let logits = g.add_bias(z, p.head_b)?;
    let head_ls = g.log_softmax(logits);
    let head_ls = g.value(head_ls).clone();
    let hc = head_ls.last_dim();
    let mut table = vec![T::zero(); rows * vocab];
    for r in 0..rows {
        table[r * vocab..r * vocab + head].copy_from_slice(&head_ls.data()[r * hc..r * hc + head]);
    }
    for (c, tail) in p.tails.iter().enumerate() {
        let (s, e) = cutoffs.tail_range(c);
        let proj = g.matmul(h, tail.proj)?;
        let z = g.matmul(proj, tail.out_w)?;
        let tl = g.add_bias(z, tail.out_b)?;
        let ls = g.log_softmax(tl);
        let ls = g.value(ls);
        for r in 0..rows {
            let cluster_lp = head_ls.data()[r * hc + head + c];
            for (dst, &src) in table[r * vocab + s..r * vocab + e]
                .iter_mut()
                .zip(ls.row(r))
            {
                *dst = cluster_lp + src;
            }
        }
    }
    Tensor::new(&[rows, vocab], table)
}

/// `Σ_i −logprob_i · mask_i`; the caller divides by the unmasked count.
pub fn nll<T: Scalar>(g: &mut Graph<T>, logprobs: Var, mask: &[T]) -> Result<Var> {
    let n = g.value(logprobs).numel();
    if mask.len() != n {
        return shape_err("nll", g.shape(logprobs), &[mask.len()]);
    }
    if mask.iter().all(|&m| m == T::zero()) {
        return Err(Error::Contract("nll over a fully masked batch".into()));
    }
    let m = g.constant(Tensor::new(g.shape(logprobs), mask.to_vec())?);
    let kept = g.mul(logprobs, m)?;
    let total = g.sum(kept);
    Ok(g.scale(total, -T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::kaiming_init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn adaptive_params(g: &mut Graph<f64>, d: usize, cut: &AdaptiveCutoffs, seed: u64) -> AdaptiveVars {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head_w = g.param(kaiming_init(&[d, cut.head_outputs()], d, &mut rng));
        let head_b = g.param(kaiming_init(&[cut.head_outputs()], 4, &mut rng));
        let tails = (0..cut.num_tails())
            .map(|i| {
                let (s, e) = cut.tail_range(i);
                let p = cut.proj_dims()[i];
                TailVars {
                    proj: g.param(kaiming_init(&[d, p], d, &mut rng)),
                    out_w: g.param(kaiming_init(&[p, e - s], p, &mut rng)),
                    out_b: g.param(kaiming_init(&[e - s], 4, &mut rng)),
                }
            })
            .collect();
        AdaptiveVars {
            head_w,
            head_b,
            tails,
        }
    }

    #[test]
    fn uniform_logits() {
        let mut g = Graph::<f64>::new();
        let h = g.constant(Tensor::zeros(&[4, 3]));
        let w = g.param(Tensor::zeros(&[3, 10]));
        let b = g.param(Tensor::zeros(&[10]));
        let lp = full_softmax_logprob(&mut g, h, w, b, &[0, 3, 7, 9]).unwrap();
        for &v in g.value(lp).data() {
            assert!((v + 10f64.ln()).abs() < 1e-14);
        }
        let loss = nll(&mut g, lp, &[1.0, 1.0, 0.0, 1.0]).unwrap();
        assert!((g.value(loss).item() - 3.0 * 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_word_vocabulary() {
        let mut g = Graph::<f64>::new();
        let h = g.constant(Tensor::from_fn(&[2, 3], |i| i as f64));
        let w = g.param(Tensor::ones(&[3, 1]));
        let b = g.param(Tensor::zeros(&[1]));
        let lp = full_softmax_logprob(&mut g, h, w, b, &[0, 0]).unwrap();
        assert_eq!(g.value(lp).data(), &[0.0, 0.0]);
    }

    #[test]
    fn invalid_target() {
        let mut g = Graph::<f64>::new();
        let h = g.constant(Tensor::zeros(&[1, 3]));
        let w = g.param(Tensor::zeros(&[3, 5]));
        let b = g.param(Tensor::zeros(&[5]));
        assert!(matches!(
            full_softmax_logprob(&mut g, h, w, b, &[5]),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn fully_masked_nll_rejected() {
        let mut g = Graph::<f64>::new();
        let lp = g.constant(Tensor::zeros(&[3]));
        assert!(nll(&mut g, lp, &[0.0; 3]).is_err());
    }

    #[test]
    fn cluster_lookup() {
        let c = AdaptiveCutoffs::resolve(&[100, 400], 1000, 32, 4).unwrap();
        assert_eq!(c.boundaries(), &[100, 400, 1000]);
        assert_eq!(c.proj_dims(), &[8, 8]);
        assert_eq!(c.cluster_of(99), None);
        assert_eq!(c.cluster_of(100), Some(0));
        assert_eq!(c.cluster_of(999), Some(1));
        let full = AdaptiveCutoffs::resolve(&[10_000, 40_000, 200_000], 793_471, 1024, 4).unwrap();
        assert_eq!(full.num_tails(), 3);
        assert_eq!(full.head_size(), 10_000);
        assert!(AdaptiveCutoffs::new(vec![5, 5], vec![1]).is_err());
    }

    #[test]
    fn adaptive_mass_and_pick_agree_with_table() {
        let (n, d, v) = (3, 8, 50);
        let cut = AdaptiveCutoffs::resolve(&[10, 25], v, d, 4).unwrap();
        let mut g = Graph::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = g.constant(kaiming_init(&[n, d], 2, &mut rng));
        let p = adaptive_params(&mut g, d, &cut, 5);
        let table = adaptive_logprob_table(&mut g, h, &cut, &p).unwrap();
        for r in 0..n {
            let mass: f64 = table.row(r).iter().map(|x| x.exp()).sum();
            assert!((mass - 1.0).abs() < 1e-12, "{mass}");
        }
        let targets = [3, 17, 44];
        let lp = adaptive_logprob(&mut g, h, &targets, &cut, &p).unwrap();
        for (r, &t) in targets.iter().enumerate() {
            assert!((g.value(lp).data()[r] - table.row(r)[t]).abs() < 1e-12);
        }
    }
}
