//! Pure forward kernels and the backward helpers the tape reuses.
//!
//! Every public kernel rejects non-finite output with [`NumError::NonFinite`].

use crate::error::{NumError, Result};
use crate::gemm::{gemm, MatView};
use crate::scalar::Scalar;
use crate::tensor::{axis_split, Tensor};

fn require_rank<T: Scalar>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(NumError::dim(
            op,
            format!("expected rank {}, got shape {:?}", rank, t.shape()),
        ));
    }
    Ok(())
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    require_rank("matmul", a, 2)?;
    require_rank("matmul", b, 2)?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(NumError::dim(
            "matmul",
            format!("inner extents differ: {:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(
        T::one(),
        a.data(),
        MatView::dense(m, k),
        b.data(),
        MatView::dense(k, n),
        T::zero(),
        out.data_mut(),
        MatView::dense(m, n),
    );
    out.ensure_finite("matmul")?;
    Ok(out)
}

/// Normalized rows and per-row reciprocal standard deviations.
pub(crate) fn layer_norm_core<T: Scalar>(x: &Tensor<T>, eps: T) -> Result<(Tensor<T>, Vec<T>)> {
    let d = *x.shape().last().unwrap_or(&0);
    if x.rank() == 0 || d == 0 {
        return Err(NumError::dim("layer_norm", format!("empty last axis in {:?}", x.shape())));
    }
    let dn = T::from_usize(d).unwrap();
    let rows = x.numel() / d;
    let mut out = Tensor::zeros(x.shape());
    let mut rstd = Vec::with_capacity(rows);
    for (src, dst) in x.data().chunks_exact(d).zip(out.data_mut().chunks_exact_mut(d)) {
        let mean = src.iter().copied().sum::<T>() / dn;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let r = T::one() / (var + eps).sqrt();
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = (v - mean) * r;
        }
        rstd.push(r);
    }
    Ok((out, rstd))
}

pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    affine: Option<(&Tensor<T>, &Tensor<T>)>,
    eps: T,
) -> Result<Tensor<T>> {
    if eps <= T::zero() {
        return Err(NumError::Contract(format!("layer_norm eps must be > 0, got {}", eps)));
    }
    let (mut out, _) = layer_norm_core(x, eps)?;
    if let Some((gain, offset)) = affine {
        let d = *x.shape().last().unwrap();
        if gain.shape() != [d] || offset.shape() != [d] {
            return Err(NumError::dim(
                "layer_norm",
                format!("gain {:?} / offset {:?} must be [{}]", gain.shape(), offset.shape(), d),
            ));
        }
        for row in out.data_mut().chunks_exact_mut(d) {
            for ((o, &g), &b) in row.iter_mut().zip(gain.data()).zip(offset.data()) {
                *o = *o * g + b;
            }
        }
    }
    out.ensure_finite("layer_norm")?;
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Scalar>(data: &mut [T], outer: usize, n: usize, inner: usize) {
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..inner {
            let at = |j: usize| base + j * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..n {
                max = max.max(data[at(j)]);
            }
            let mut total = T::zero();
            for j in 0..n {
                let e = (data[at(j)] - max).exp();
                data[at(j)] = e;
                total += e;
            }
            for j in 0..n {
                data[at(j)] /= total;
            }
        }
    }
}

/// Numerically stabilized softmax along `axis`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, n, inner) = axis_split(x.shape(), axis).map_err(|_| {
        NumError::dim("softmax", format!("axis {} invalid for shape {:?}", axis, x.shape()))
    })?;
    x.ensure_finite("softmax")?;
    let mut out = x.clone();
    softmax_in_place(out.data_mut(), outer, n, inner);
    out.ensure_finite("softmax")?;
    Ok(out)
}

#[inline]
pub(crate) fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (x * T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
pub(crate) fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let cdf = half * (T::one() + (x * T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp() * T::from_f64_lossy(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Exact-erf GELU.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let out = x.map(gelu_scalar);
    out.ensure_finite("gelu")?;
    Ok(out)
}

pub fn silu<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let out = x.map(|v| v * sigmoid(v));
    out.ensure_finite("silu")?;
    Ok(out)
}

pub(crate) struct AttentionShape {
    pub groups: usize,
    pub tokens: usize,
    pub width: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttentionShape {
    pub(crate) fn resolve<T: Scalar>(
        q: &Tensor<T>,
        k: &Tensor<T>,
        v: &Tensor<T>,
        heads: usize,
        groups: usize,
    ) -> Result<Self> {
        for t in [q, k, v] {
            require_rank("attention", t, 2)?;
        }
        if q.shape() != k.shape() || q.shape() != v.shape() {
            return Err(NumError::dim(
                "attention",
                format!("q {:?}, k {:?}, v {:?} must agree", q.shape(), k.shape(), v.shape()),
            ));
        }
        let (rows, width) = (q.shape()[0], q.shape()[1]);
        if heads == 0 || width % heads != 0 {
            return Err(NumError::Config(format!(
                "attention width {} is not divisible into {} heads",
                width, heads
            )));
        }
        if groups == 0 || rows % groups != 0 {
            return Err(NumError::dim(
                "attention",
                format!("{} rows do not split into {} sequences", rows, groups),
            ));
        }
        Ok(AttentionShape {
            groups,
            tokens: rows / groups,
            width,
            heads,
            head_dim: width / heads,
        })
    }

    fn head_view(&self, g: usize, h: usize) -> MatView {
        MatView::block(
            g * self.tokens * self.width + h * self.head_dim,
            self.tokens,
            self.head_dim,
            self.width,
        )
    }

    fn prob_view(&self, g: usize, h: usize) -> MatView {
        let t = self.tokens;
        MatView::block((g * self.heads + h) * t * t, t, t, t)
    }

    fn scale<T: Scalar>(&self) -> T {
        T::one() / T::from_usize(self.head_dim).unwrap().sqrt()
    }
}

/// Output and the row-stochastic attention matrices (one `T x T` block per
/// sequence and head).
pub(crate) fn attention_forward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    shape: &AttentionShape,
) -> (Tensor<T>, Vec<T>) {
    let t = shape.tokens;
    let mut probs = vec![T::zero(); shape.groups * shape.heads * t * t];
    let mut out = Tensor::zeros(q.shape());
    for g in 0..shape.groups {
        for h in 0..shape.heads {
            let hv = shape.head_view(g, h);
            let pv = shape.prob_view(g, h);
            gemm(shape.scale(), q.data(), hv, k.data(), hv.t(), T::zero(), &mut probs, pv);
            softmax_in_place(&mut probs[pv.offset..pv.offset + t * t], t, t, 1);
            gemm(T::one(), &probs, pv, v.data(), hv, T::zero(), out.data_mut(), hv);
        }
    }
    (out, probs)
}

pub(crate) fn attention_backward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    probs: &[T],
    grad_out: &Tensor<T>,
    shape: &AttentionShape,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let t = shape.tokens;
    let mut dq = Tensor::zeros(q.shape());
    let mut dk = Tensor::zeros(k.shape());
    let mut dv = Tensor::zeros(v.shape());
    let mut ds = vec![T::zero(); t * t];
    let local = MatView::dense(t, t);
    for g in 0..shape.groups {
        for h in 0..shape.heads {
            let hv = shape.head_view(g, h);
            let pv = shape.prob_view(g, h);
            let p = &probs[pv.offset..pv.offset + t * t];
            gemm(T::one(), probs, pv.t(), grad_out.data(), hv, T::zero(), dv.data_mut(), hv);
            gemm(T::one(), grad_out.data(), hv, v.data(), hv.t(), T::zero(), &mut ds, local);
            for (ds_row, p_row) in ds.chunks_exact_mut(t).zip(p.chunks_exact(t)) {
                let dot: T = ds_row.iter().zip(p_row).map(|(a, b)| *a * *b).sum();
                for (d, &pp) in ds_row.iter_mut().zip(p_row) {
                    *d = pp * (*d - dot);
                }
            }
            gemm(shape.scale(), &ds, local, k.data(), hv, T::zero(), dq.data_mut(), hv);
            gemm(shape.scale(), &ds, local.t(), q.data(), hv, T::zero(), dk.data_mut(), hv);
        }
    }
    (dq, dk, dv)
}

/// Multi-head self-attention over one sequence: `softmax(Q Kᵀ / √d_h) V`
/// per head, heads concatenated along the feature axis.
pub fn attention<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, heads: usize) -> Result<Tensor<T>> {
    let shape = AttentionShape::resolve(q, k, v, heads, 1)?;
    let (out, _) = attention_forward(q, k, v, &shape);
    out.ensure_finite("attention")?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_identity_and_small() {
        let eye = Tensor::<f64>::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&eye, &m).unwrap(), m);
        let row = Tensor::<f64>::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let col = Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(matmul(&row, &col).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&[5, 7], &mut rng);
        let b = random(&[7, 3], &mut rng);
        let c = matmul(&a, &b).unwrap();
        for (x, y) in c.data().iter().zip(naive_matmul(&a, &b)) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4, 2]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn layer_norm_examples() {
        let x = Tensor::<f64>::new(&[3], vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(layer_norm(&x, None, 1e-5).unwrap().data(), &[0.0, 0.0, 0.0]);
        let x = Tensor::<f64>::new(&[2], vec![0.0, 2.0]).unwrap();
        let y = layer_norm(&x, None, 1e-15).unwrap();
        assert_abs_diff_eq!(y.data()[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y.data()[1], 1.0, epsilon = 1e-12);
        let empty = Tensor::<f64>::zeros(&[2, 0]);
        assert!(matches!(layer_norm(&empty, None, 1e-5), Err(NumError::Dimension { .. })));
    }

    #[test]
    fn layer_norm_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[6], &mut rng);
        let gain = random(&[6], &mut rng);
        let offset = random(&[6], &mut rng);
        let eps = 1e-5;
        let y = layer_norm(&x, Some((&gain, &offset)), eps).unwrap();
        let mu = x.data().iter().sum::<f64>() / 6.0;
        let var = x.data().iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 6.0;
        for i in 0..6 {
            let expect = (x.data()[i] - mu) / (var + eps).sqrt() * gain.data()[i] + offset.data()[i];
            assert_abs_diff_eq!(y.data()[i], expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn softmax_examples() {
        let y = softmax(&Tensor::<f64>::zeros(&[3]), 0).unwrap();
        for v in y.data() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let y = softmax(&Tensor::<f64>::new(&[2], vec![1000.0, 1000.0]).unwrap(), 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let logits = [1.0f64.ln(), 2.0f64.ln(), 3.0f64.ln()];
        let y = softmax(&Tensor::<f64>::new(&[3], logits.to_vec()).unwrap(), 0).unwrap();
        for (v, e) in y.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-12);
        }
        assert!(softmax(&Tensor::<f64>::zeros(&[3]), 1).is_err());
    }

    #[test]
    fn softmax_middle_axis() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4], |i| (i as f64 * 0.37).sin() * 5.0);
        let y = softmax(&x, 1).unwrap();
        for o in 0..2 {
            for i in 0..4 {
                let s: f64 = (0..3).map(|j| y.data()[o * 12 + j * 4 + i]).sum();
                assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gelu_examples() {
        let x = Tensor::<f64>::new(&[3], vec![0.0, 10.0, 1.0]).unwrap();
        let y = gelu(&x).unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert_abs_diff_eq!(y.data()[1], 10.0, epsilon = 1e-6);
        let expect = 0.5 * (1.0 + libm::erf(1.0 / 2f64.sqrt()));
        assert_abs_diff_eq!(y.data()[2], expect, epsilon = 1e-10);
    }

    #[test]
    fn gelu_monotone_on_positive_range() {
        let x = Tensor::<f64>::from_fn(&[200], |i| -0.75 + i as f64 * 0.05);
        let y = gelu(&x).unwrap();
        assert!(y.data().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn attention_single_token_returns_v() {
        let q = Tensor::<f64>::new(&[1, 4], vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let v = Tensor::new(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = attention(&q, &q, &v, 2).unwrap();
        for (a, b) in out.data().iter().zip(v.data()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn attention_zero_logits_average_values() {
        let z = Tensor::<f64>::zeros(&[3, 2]);
        let v = Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap();
        let out = attention(&z, &z, &v, 1).unwrap();
        for row in out.data().chunks(2) {
            assert_abs_diff_eq!(row[0], 3.0, epsilon = 1e-12);
            assert_abs_diff_eq!(row[1], 5.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn attention_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random(&[3, 4], &mut rng);
        let k = random(&[3, 4], &mut rng);
        let v = random(&[3, 4], &mut rng);
        let out = attention(&q, &k, &v, 1).unwrap();
        for i in 0..3 {
            let logits: Vec<f64> = (0..3)
                .map(|j| (0..4).map(|c| q.data()[i * 4 + c] * k.data()[j * 4 + c]).sum::<f64>() / 2.0)
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for c in 0..4 {
                let expect: f64 = (0..3).map(|j| logits[j].exp() / z * v.data()[j * 4 + c]).sum();
                assert_abs_diff_eq!(out.data()[i * 4 + c], expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn attention_rejects_indivisible_heads() {
        let z = Tensor::<f64>::zeros(&[2, 6]);
        assert!(matches!(attention(&z, &z, &z, 4), Err(NumError::Config(_))));
    }

    #[test]
    fn kernels_are_bit_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&[9, 16], &mut rng);
        let b = random(&[16, 12], &mut rng);
        assert_eq!(matmul(&a, &b).unwrap(), matmul(&a, &b).unwrap());
        assert_eq!(softmax(&a, 1).unwrap(), softmax(&a, 1).unwrap());
    }
}
