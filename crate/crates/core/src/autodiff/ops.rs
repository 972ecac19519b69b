//! Differentiable operations. Each records its lineage when grad mode is on.

use super::tensor::{Op, Tensor};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Row counts above which row-wise kernels fan out over the thread pool.
const PAR_ROWS: usize = 256;

fn exec_for(rows: usize) -> Exec {
    if rows >= PAR_ROWS {
        Exec::auto()
    } else {
        Exec::Sequential
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::dim(op, other, &[0, 0])),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// `out[i, :] = x[i, :] · m` for a row-major `rows × inner` block and an
/// `inner × cols` matrix.
pub(crate) fn matmul_rows(x: &[f64], m: &[f64], inner: usize, cols: usize) -> Vec<f64> {
    let rows = x.len().checked_div(inner).unwrap_or(0);
    let mut out = vec![0.0; rows * cols];
    for (xr, or) in x.chunks(inner.max(1)).zip(out.chunks_mut(cols.max(1))) {
        for (k, &xv) in xr.iter().enumerate() {
            let mr = &m[k * cols..(k + 1) * cols];
            for (o, &mv) in or.iter_mut().zip(mr) {
                *o += xv * mv;
            }
        }
    }
    out
}

/// Batched affine map `x·W + b`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, inner) = require_matrix("affine", x)?;
    let (w_in, out) = require_matrix("affine", w)?;
    if inner != w_in {
        return Err(Error::dim("affine", x.shape(), w.shape()));
    }
    if b.shape() != [out] {
        return Err(Error::dim("affine bias", w.shape(), b.shape()));
    }
    let (wv, bv) = (w.values(), b.values());
    let values = exec_for(n).map_row_chunks(x.values(), inner, 64, |_, chunk| {
        let mut rows = matmul_rows(chunk, wv, inner, out);
        for row in rows.chunks_mut(out.max(1)) {
            for (o, bias) in row.iter_mut().zip(bv) {
                *o += bias;
            }
        }
        rows
    });
    Ok(Tensor::from_op(
        values,
        vec![n, out],
        Op::Affine,
        vec![x.clone(), w.clone(), b.clone()],
    ))
}

/// Elementwise `max(0, x)`. The derivative at exactly zero is taken as zero.
pub fn relu(x: &Tensor) -> Tensor {
    let values = x.values().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::from_op(values, x.shape().to_vec(), Op::Relu, vec![x.clone()])
}

fn check_logits(op: &'static str, logits: &Tensor) -> Result<(usize, usize)> {
    let (n, c) = require_matrix(op, logits)?;
    if c < 2 {
        return Err(Error::Contract(format!("{op} needs at least 2 classes, got {c}")));
    }
    if !logits.all_finite() {
        return Err(Error::Numeric(format!("{op}: non-finite logits")));
    }
    Ok((n, c))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (_, c) = check_logits("softmax_rows", logits)?;
    let mut values = Vec::with_capacity(logits.numel());
    for row in logits.values().chunks(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = values.len();
        let mut total = 0.0;
        for &v in row {
            let e = (v - max).exp();
            total += e;
            values.push(e);
        }
        for v in &mut values[start..] {
            *v /= total;
        }
    }
    Ok(Tensor::from_op(
        values,
        logits.shape().to_vec(),
        Op::SoftmaxRows,
        vec![logits.clone()],
    ))
}

/// Row-wise `log softmax` in log-sum-exp form.
pub fn log_softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (_, c) = check_logits("log_softmax_rows", logits)?;
    let mut values = Vec::with_capacity(logits.numel());
    for row in logits.values().chunks(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        values.extend(row.iter().map(|&v| v - lse));
    }
    Ok(Tensor::from_op(
        values,
        logits.shape().to_vec(),
        Op::LogSoftmaxRows,
        vec![logits.clone()],
    ))
}

/// `out[i] = x[i, index[i]]`.
pub fn pick(x: &Tensor, index: &[usize]) -> Result<Tensor> {
    let (n, c) = require_matrix("pick", x)?;
    if index.len() != n {
        return Err(Error::dim("pick", x.shape(), &[index.len()]));
    }
    let mut values = Vec::with_capacity(n);
    for (row, &j) in x.values().chunks(c.max(1)).zip(index) {
        if j >= c {
            return Err(Error::Index { index: j, limit: c });
        }
        values.push(row[j]);
    }
    Ok(Tensor::from_op(values, vec![n], Op::Pick(index.to_vec()), vec![x.clone()]))
}

pub fn sum(x: &Tensor) -> Tensor {
    let total = x.values().iter().sum();
    Tensor::from_op(vec![total], vec![1], Op::Sum, vec![x.clone()])
}

pub fn mean(x: &Tensor) -> Result<Tensor> {
    if x.numel() == 0 {
        return Err(Error::Contract("mean of an empty tensor".into()));
    }
    let total: f64 = x.values().iter().sum();
    Ok(Tensor::from_op(
        vec![total / x.numel() as f64],
        vec![1],
        Op::Mean,
        vec![x.clone()],
    ))
}

pub fn scale(x: &Tensor, k: f64) -> Tensor {
    let values = x.values().iter().map(|v| v * k).collect();
    Tensor::from_op(values, x.shape().to_vec(), Op::Scale(k), vec![x.clone()])
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let values = a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(values, a.shape().to_vec(), Op::Add, vec![a.clone(), b.clone()]))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let values = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    Ok(Tensor::from_op(values, a.shape().to_vec(), Op::Sub, vec![a.clone(), b.clone()]))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let values = a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_op(values, a.shape().to_vec(), Op::Mul, vec![a.clone(), b.clone()]))
}

pub fn square(x: &Tensor) -> Tensor {
    let values = x.values().iter().map(|v| v * v).collect();
    Tensor::from_op(values, x.shape().to_vec(), Op::Square, vec![x.clone()])
}

/// Adds the vector `row` to every row of `x` (bias-add broadcast).
pub fn add_row(x: &Tensor, row: &Tensor) -> Result<Tensor> {
    let (_, m) = require_matrix("add_row", x)?;
    if row.shape() != [m] {
        return Err(Error::dim("add_row", x.shape(), row.shape()));
    }
    let mut values = x.to_vec();
    for chunk in values.chunks_mut(m.max(1)) {
        for (v, r) in chunk.iter_mut().zip(row.values()) {
            *v += r;
        }
    }
    Ok(Tensor::from_op(values, x.shape().to_vec(), Op::AddRow, vec![x.clone(), row.clone()]))
}

/// Stacks the listed rows of `x` in the given order.
pub fn gather_rows(x: &Tensor, index: &[usize]) -> Result<Tensor> {
    let (n, m) = require_matrix("gather_rows", x)?;
    let mut values = Vec::with_capacity(index.len() * m);
    for &i in index {
        if i >= n {
            return Err(Error::Index { index: i, limit: n });
        }
        values.extend_from_slice(&x.values()[i * m..(i + 1) * m]);
    }
    Ok(Tensor::from_op(
        values,
        vec![index.len(), m],
        Op::GatherRows(index.to_vec()),
        vec![x.clone()],
    ))
}

/// Column means of a matrix, as a vector.
pub fn mean_rows(x: &Tensor) -> Result<Tensor> {
    let (n, m) = require_matrix("mean_rows", x)?;
    if n == 0 {
        return Err(Error::Contract("mean_rows of an empty matrix".into()));
    }
    // Running mean: identical rows reproduce their value exactly.
    let mut values = vec![0.0; m];
    for (k, row) in x.values().chunks(m.max(1)).enumerate() {
        for (acc, v) in values.iter_mut().zip(row) {
            *acc += (v - *acc) / (k + 1) as f64;
        }
    }
    Ok(Tensor::from_op(values, vec![m], Op::MeanRows, vec![x.clone()]))
}

/// Same-padded, stride-1 1-D cross-correlation.
///
/// `x` is `[batch, c_in, len]`, `w` is `[c_out, c_in, kernel]` with odd
/// `kernel`, `b` is `[c_out]`; output is `[batch, c_out, len]`.
pub fn conv1d(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, c_in, len) = match x.shape() {
        [n, c, l] => (*n, *c, *l),
        other => return Err(Error::dim("conv1d input", other, &[0, 0, 0])),
    };
    let (c_out, w_in, kernel) = match w.shape() {
        [o, i, k] => (*o, *i, *k),
        other => return Err(Error::dim("conv1d weight", other, &[0, 0, 0])),
    };
    if w_in != c_in {
        return Err(Error::dim("conv1d", x.shape(), w.shape()));
    }
    if kernel % 2 == 0 {
        return Err(Error::Config(format!("conv1d kernel must be odd, got {kernel}")));
    }
    if b.shape() != [c_out] {
        return Err(Error::dim("conv1d bias", w.shape(), b.shape()));
    }
    let pad = kernel / 2;
    let (wv, bv) = (w.values(), b.values());
    let values = exec_for(n).map_row_chunks(x.values(), c_in * len, 16, |_, chunk| {
        let mut out = Vec::with_capacity(chunk.len() / (c_in * len).max(1) * c_out * len);
        for sample in chunk.chunks(c_in * len) {
            for o in 0..c_out {
                for t in 0..len {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        let xs = &sample[ci * len..(ci + 1) * len];
                        let ws = &wv[(o * c_in + ci) * kernel..(o * c_in + ci + 1) * kernel];
                        for (j, wj) in ws.iter().enumerate() {
                            let pos = t + j;
                            if pos >= pad && pos - pad < len {
                                acc += wj * xs[pos - pad];
                            }
                        }
                    }
                    out.push(acc + bv[o]);
                }
            }
        }
        out
    });
    Ok(Tensor::from_op(
        values,
        vec![n, c_out, len],
        Op::Conv1d { kernel },
        vec![x.clone(), w.clone(), b.clone()],
    ))
}

/// Mean over the last axis of a `[batch, channels, len]` tensor.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, len) = match x.shape() {
        [n, c, l] if *l > 0 => (*n, *c, *l),
        other => return Err(Error::dim("global_avg_pool", other, &[0, 0, 1])),
    };
    let values = x
        .values()
        .chunks(len)
        .map(|s| s.iter().sum::<f64>() / len as f64)
        .collect();
    Ok(Tensor::from_op(values, vec![n, c], Op::GlobalAvgPool, vec![x.clone()]))
}

pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if shape.iter().product::<usize>() != x.numel() {
        return Err(Error::dim("reshape", x.shape(), shape));
    }
    Ok(Tensor::from_op(x.to_vec(), shape.to_vec(), Op::Reshape, vec![x.clone()]))
}
