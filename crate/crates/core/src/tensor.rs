//! Dense row-major tensors and the raw kernels the autodiff tape is built on.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array with shape metadata.
///
/// `product(shape) == data.len()` always holds; every extent is positive
/// except for the rank-0 scalar, whose shape is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Contract(format!("zero extent in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return shape_err("Tensor::new", shape, &[data.len()]);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a rank-0 or single-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    /// Extent of the trailing axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as `[numel / last_dim, last_dim]`.
    pub fn rows(&self) -> usize {
        self.numel() / self.last_dim()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(op, &self.shape, &other.shape);
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN))
            .collect()
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Largest absolute elementwise difference (infinite on shape mismatch).
    pub fn max_abs_diff(&self, other: &Self) -> T {
        if self.shape != other.shape {
            return T::infinity();
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += other` elementwise.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return shape_err("add_assign", &self.shape, &other.shape);
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, factor: T) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// Row `i` of the `[rows, last_dim]` view.
    pub fn row(&self, i: usize) -> &[T] {
        let n = self.last_dim();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return shape_err("matmul", &self.shape, &other.shape);
        }
        let (p, q, r) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); p * r];
        gemm_acc(&self.data, p, q, &other.data, r, &mut out);
        Self::new(&[p, r], out)
    }
}

/// `out[p×r] += a[p×q] · b[q×r]`.
pub fn gemm_acc<T: Scalar>(a: &[T], p: usize, q: usize, b: &[T], r: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), p * q);
    debug_assert_eq!(b.len(), q * r);
    debug_assert_eq!(out.len(), p * r);
    for i in 0..p {
        let out_row = &mut out[i * r..(i + 1) * r];
        let a_row = &a[i * q..(i + 1) * q];
        for (l, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[l * r..(l + 1) * r];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[p×m] += a[p×r] · b[m×r]ᵀ`.
pub fn gemm_acc_bt<T: Scalar>(a: &[T], p: usize, r: usize, b: &[T], m: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), p * r);
    debug_assert_eq!(b.len(), m * r);
    debug_assert_eq!(out.len(), p * m);
    let mut bt = vec![T::zero(); r * m];
    for (j, b_row) in b.chunks_exact(r).enumerate() {
        for (l, &v) in b_row.iter().enumerate() {
            bt[l * m + j] = v;
        }
    }
    gemm_acc(a, p, r, &bt, m, out);
}

/// `out[q×r] += a[p×q]ᵀ · b[p×r]`.
pub fn gemm_acc_at<T: Scalar>(a: &[T], p: usize, q: usize, b: &[T], r: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), p * q);
    debug_assert_eq!(b.len(), p * r);
    debug_assert_eq!(out.len(), q * r);
    for i in 0..p {
        let a_row = &a[i * q..(i + 1) * q];
        let b_row = &b[i * r..(i + 1) * r];
        for (l, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let out_row = &mut out[l * r..(l + 1) * r];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// Sequence geometry of a convolution input: `[T, m]` is one sequence,
/// `[B, T, m]` is `B` independent sequences.
pub(crate) fn seq_geometry(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [t, m] => Some((1, t, m)),
        [b, t, m] => Some((b, t, m)),
        _ => None,
    }
}

/// Causal convolution forward: `out[s, t] = bias + Σ_j x[s, t + j - (k - 1)] · w[j]`,
/// with positions before the sequence start reading zeros.
pub fn conv1d_causal_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (batch, steps, m) = seq_geometry(x.shape()).ok_or_else(|| Error::Shape {
        op: "conv1d_causal",
        lhs: x.shape().to_vec(),
        rhs: w.shape().to_vec(),
    })?;
    let (k, n) = match *w.shape() {
        [k, wm, n] if wm == m => (k, n),
        _ => return shape_err("conv1d_causal", x.shape(), w.shape()),
    };
    if bias.shape() != [n] {
        return shape_err("conv1d_causal(bias)", w.shape(), bias.shape());
    }
    let mut out = vec![T::zero(); batch * steps * n];
    for row in out.chunks_mut(n) {
        row.copy_from_slice(bias.data());
    }
    let wd = w.data();
    for s in 0..batch {
        let xs = &x.data()[s * steps * m..(s + 1) * steps * m];
        let os = &mut out[s * steps * n..(s + 1) * steps * n];
        for j in 0..k {
            let shift = k - 1 - j;
            if shift >= steps {
                continue;
            }
            let len = steps - shift;
            gemm_acc(
                &xs[..len * m],
                len,
                m,
                &wd[j * m * n..(j + 1) * m * n],
                n,
                &mut os[shift * n..],
            );
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank >= 2") = n;
    Tensor::new(&shape, out)
}

/// Gradients of [`conv1d_causal_forward`] with respect to input, kernel and bias.
pub fn conv1d_causal_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (batch, steps, m) = seq_geometry(x.shape()).expect("validated in forward");
    let (k, n) = (w.shape()[0], w.shape()[2]);
    let mut dx = vec![T::zero(); x.numel()];
    let mut dw = vec![T::zero(); w.numel()];
    let mut db = vec![T::zero(); n];
    let wd = w.data();
    let gd = grad_out.data();
    for row in gd.chunks(n) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    for s in 0..batch {
        let xs = &x.data()[s * steps * m..(s + 1) * steps * m];
        let gs = &gd[s * steps * n..(s + 1) * steps * n];
        let dxs = &mut dx[s * steps * m..(s + 1) * steps * m];
        for j in 0..k {
            let shift = k - 1 - j;
            if shift >= steps {
                continue;
            }
            let len = steps - shift;
            let wj = &wd[j * m * n..(j + 1) * m * n];
            gemm_acc_bt(&gs[shift * n..], len, n, wj, m, &mut dxs[..len * m]);
            gemm_acc_at(
                &xs[..len * m],
                len,
                m,
                &gs[shift * n..],
                n,
                &mut dw[j * m * n..(j + 1) * m * n],
            );
        }
    }
    (
        Tensor::new(x.shape(), dx).expect("shape"),
        Tensor::new(w.shape(), dw).expect("shape"),
        Tensor::new(&[n], db).expect("shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_matrix() {
        let m = Tensor::<f64>::from_f64(&[3, 2], &[1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(Tensor::identity(3).matmul(&m).unwrap(), m);
    }

    #[test]
    fn hand_matmul() {
        let a = Tensor::<f64>::from_f64(&[2, 2], &[1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f64>::from_f64(&[2, 1], &[1., 1.]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[3., 7.]);
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn rejects_bad_numel() {
        assert!(Tensor::<f32>::new(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(&[0, 2], vec![]).is_err());
    }

    #[test]
    fn conv_current_token_tap_is_identity() {
        let x = Tensor::<f64>::from_fn(&[5, 2], |i| i as f64 * 0.5 - 1.0);
        let mut w = Tensor::<f64>::zeros(&[3, 2, 2]);
        w.data_mut()[2 * 4] = 1.0;
        w.data_mut()[2 * 4 + 3] = 1.0;
        let out = conv1d_causal_forward(&x, &w, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn conv_first_tap_is_pure_delay() {
        let x = Tensor::<f64>::from_fn(&[5, 2], |i| i as f64 + 1.0);
        let mut w = Tensor::<f64>::zeros(&[3, 2, 2]);
        w.data_mut()[0] = 1.0;
        w.data_mut()[3] = 1.0;
        let out = conv1d_causal_forward(&x, &w, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(out.row(0), &[0., 0.]);
        assert_eq!(out.row(1), &[0., 0.]);
        for i in 2..5 {
            assert_eq!(out.row(i), x.row(i - 2));
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor::<f32>::zeros(&[4, 3]);
        let w = Tensor::<f32>::zeros(&[2, 2, 2]);
        assert!(matches!(
            conv1d_causal_forward(&x, &w, &Tensor::zeros(&[2])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn conv_kernel_longer_than_sequence() {
        let x = Tensor::<f64>::ones(&[2, 1]);
        let w = Tensor::<f64>::ones(&[5, 1, 1]);
        let out = conv1d_causal_forward(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.data(), &[1., 2.]);
    }
}
