//! Forward kernels. The tape in [`crate::autodiff`] records these and owns the
//! matching backward rules.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn need_rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2().ok_or_else(|| Error::invalid(op, format!("expected a matrix, got shape {:?}", t.shape())))
}

/// `a[m×k] · b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = need_rank2("matmul", a)?;
    let (k2, n) = need_rank2("matmul", b)?;
    if k != k2 {
        return Err(Error::Shape {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = need_rank2("transpose", a)?;
    let src = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

/// `out[i][j] = p[i] * q[j]`.
pub fn outer(p: &Tensor, q: &Tensor) -> Result<Tensor> {
    if p.rank() != 1 || p.shape() != q.shape() {
        return Err(Error::Shape {
            op: "outer",
            lhs: p.shape().to_vec(),
            rhs: q.shape().to_vec(),
        });
    }
    let d = p.len();
    let mut out = Vec::with_capacity(d * d);
    for &pi in p.data() {
        out.extend(q.data().iter().map(|qj| pi * qj));
    }
    Ok(Tensor::from_parts(vec![d, d], out))
}

/// Valid (unpadded) stride-1 convolution of a single-channel signal.
///
/// `x[L]`, `filters[F×k]`, `bias[F]` → `out[F×(L−k+1)]` with
/// `out[f][t] = bias[f] + Σ_j filters[f][j]·x[t+j]`.
pub fn conv1d_valid(x: &Tensor, filters: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if x.rank() != 1 {
        return Err(Error::invalid("conv1d_valid", format!("input must be a vector, got {:?}", x.shape())));
    }
    let (f, k) = need_rank2("conv1d_valid", filters)?;
    if bias.rank() != 1 || bias.len() != f {
        return Err(Error::Shape {
            op: "conv1d_valid",
            lhs: filters.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let l = x.len();
    if l < k {
        return Err(Error::invalid(
            "conv1d_valid",
            format!("input shorter than kernel ({l} < {k})"),
        ));
    }
    let t_out = l - k + 1;
    let xs = x.data();
    let mut out = vec![0.0; f * t_out];
    for fi in 0..f {
        let w = filters.row(fi);
        let b = bias.data()[fi];
        let orow = &mut out[fi * t_out..(fi + 1) * t_out];
        for (t, o) in orow.iter_mut().enumerate() {
            let mut acc = b;
            for (j, wj) in w.iter().enumerate() {
                acc += wj * xs[t + j];
            }
            *o = acc;
        }
    }
    Ok(Tensor::from_parts(vec![f, t_out], out))
}

/// Max over the time axis of `x[F×T]`; also returns the first argmax per row.
pub fn global_max_pool(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (f, t) = match x.shape() {
        [f, t] => (*f, *t),
        [t] => (1, *t),
        s => return Err(Error::invalid("global_max_pool", format!("expected F×T, got {s:?}"))),
    };
    if t == 0 {
        return Err(Error::invalid("global_max_pool", "empty time axis"));
    }
    let mut out = Vec::with_capacity(f);
    let mut arg = Vec::with_capacity(f);
    for fi in 0..f {
        let row = &x.data()[fi * t..(fi + 1) * t];
        let mut best = 0;
        for (j, v) in row.iter().enumerate().skip(1) {
            if *v > row[best] {
                best = j;
            }
        }
        out.push(row[best]);
        arg.push(best);
    }
    Ok((Tensor::from_parts(vec![f], out), arg))
}

/// Row-wise softmax with per-row max subtraction. Vectors are treated as a
/// single row.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let n = *x.shape().last().expect("non-empty shape");
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// Saved statistics from a layer-norm forward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Normalizes every row of `x` (a vector counts as one row) to zero mean and
/// unit variance, then applies `gain` and `shift`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, shift: &Tensor) -> Result<Tensor> {
    layer_norm_cached(x, gain, shift).map(|(t, _)| t)
}

pub(crate) fn layer_norm_cached(x: &Tensor, gain: &Tensor, shift: &Tensor) -> Result<(Tensor, LayerNormCache)> {
    let n = *x.shape().last().expect("non-empty shape");
    if n < 2 {
        return Err(Error::invalid("layer_norm", format!("need at least 2 features, got {n}")));
    }
    if gain.shape() != [n] || shift.shape() != [n] {
        return Err(Error::Shape {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gain.shape().to_vec(),
        });
    }
    let rows = x.len() / n;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let xs = &x.data()[r * n..(r + 1) * n];
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(inv);
        for j in 0..n {
            let h = (xs[j] - mean) * inv;
            xhat[r * n + j] = h;
            out[r * n + j] = gain.data()[j] * h + shift.data()[j];
        }
    }
    Ok((Tensor::from_parts(x.shape().to_vec(), out), LayerNormCache { xhat, inv_std }))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub const BCE_CLAMP: f64 = 1e-12;

/// Pointwise binary cross-entropy with the score clamped to
/// `[1e-12, 1 − 1e-12]`.
pub fn bce(score: f64, label: f64) -> f64 {
    let s = score.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(label * s.ln() + (1.0 - label) * (1.0 - s).ln())
}
