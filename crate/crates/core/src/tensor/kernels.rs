//! Fixed-order dense kernels. Every output element is accumulated
//! sequentially over the contraction index starting from zero.

use super::{Real, Tensor};
use crate::exec;

/// `A·B`.
pub(crate) fn matmul<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(m, n);
    let (ad, bd) = (a.data(), b.data());
    exec::for_each_row(out.data_mut(), n, m * k * n, |i, row| {
        let arow = &ad[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    });
    out
}

/// `A·Bᵀ`.
pub(crate) fn matmul_nt<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let mut out = Tensor::zeros(m, n);
    let (ad, bd) = (a.data(), b.data());
    exec::for_each_row(out.data_mut(), n, m * k * n, |i, row| {
        let arow = &ad[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let brow = &bd[j * k..(j + 1) * k];
            *o = arow.iter().zip(brow).fold(F::zero(), |acc, (&x, &y)| acc + x * y);
        }
    });
    out
}

/// `Aᵀ·B`.
pub(crate) fn matmul_tn<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(m, n);
    let (ad, bd) = (a.data(), b.data());
    exec::for_each_row(out.data_mut(), n, m * k * n, |i, row| {
        for p in 0..k {
            let av = ad[p * m + i];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    });
    out
}

/// Column means of `x` as a `1×cols` row.
pub(crate) fn mean_rows<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let mut out = Tensor::zeros(1, x.cols());
    for i in 0..x.rows() {
        for (o, &v) in out.data_mut().iter_mut().zip(x.row(i)) {
            *o = *o + v;
        }
    }
    let n = F::lit(x.rows() as f64);
    for o in out.data_mut() {
        *o = *o / n;
    }
    out
}

pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}
