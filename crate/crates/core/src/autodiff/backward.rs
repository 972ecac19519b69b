use std::collections::{HashMap, HashSet};

use super::ops::matmul_rows;
use super::tensor::{Op, Tensor};
use crate::error::{Error, Result};

/// Gradients of one backward pass, keyed by tensor identity.
#[derive(Debug, Default, Clone)]
pub struct GradMap {
    grads: HashMap<u64, (Vec<usize>, Vec<f64>)>,
}

impl GradMap {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads.get(&t.id()).map(|(_, g)| g.as_slice())
    }

    /// Gradient as a leaf tensor, zeros when `t` did not reach the root.
    pub fn wrt(&self, t: &Tensor) -> Tensor {
        match self.grads.get(&t.id()) {
            Some((shape, g)) => Tensor::build(g.clone(), shape.clone(), None),
            None => Tensor::zeros(t.shape()),
        }
    }

    pub fn contains(&self, t: &Tensor) -> bool {
        self.grads.contains_key(&t.id())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Children before parents, root first.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    // (tensor, parents already pushed)
    let mut stack = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(lin) = t.lineage() {
            for p in &lin.parents {
                if !seen.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
    }
    order.reverse();
    order
}

fn accumulate(grads: &mut HashMap<u64, Vec<f64>>, t: &Tensor, contribution: Vec<f64>) {
    match grads.get_mut(&t.id()) {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contribution) {
                *a += c;
            }
        }
        None => {
            grads.insert(t.id(), contribution);
        }
    }
}

/// Reverse-mode gradients of a one-element `root` with respect to every leaf
/// reachable through its lineage. Paths through shared tensors add up.
pub fn backward(root: &Tensor) -> Result<GradMap> {
    if root.numel() != 1 {
        return Err(Error::Contract(format!(
            "backward needs a scalar root, got shape {:?}",
            root.shape()
        )));
    }
    let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
    pending.insert(root.id(), vec![1.0]);
    let mut out = GradMap::default();

    for t in topo_order(root) {
        let Some(g) = pending.remove(&t.id()) else {
            continue;
        };
        let Some(lin) = t.lineage() else {
            out.grads.insert(t.id(), (t.shape().to_vec(), g));
            continue;
        };
        for (parent, contribution) in lin.parents.iter().zip(pullback(&lin.op, &lin.parents, &t, &g)) {
            if let Some(c) = contribution {
                accumulate(&mut pending, parent, c);
            }
        }
    }
    Ok(out)
}

fn pullback(op: &Op, parents: &[Tensor], out: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    match op {
        Op::Affine => {
            let (x, w) = (&parents[0], &parents[1]);
            let (n, inner) = (x.shape()[0], x.shape()[1]);
            let cols = w.shape()[1];
            // dx = g · Wᵀ
            let mut wt = vec![0.0; inner * cols];
            for k in 0..inner {
                for j in 0..cols {
                    wt[j * inner + k] = w.values()[k * cols + j];
                }
            }
            let dx = matmul_rows(g, &wt, cols, inner);
            // dW = xᵀ · g
            let mut dw = vec![0.0; inner * cols];
            for i in 0..n {
                let xr = &x.values()[i * inner..(i + 1) * inner];
                let gr = &g[i * cols..(i + 1) * cols];
                for (k, &xv) in xr.iter().enumerate() {
                    for (d, &gv) in dw[k * cols..(k + 1) * cols].iter_mut().zip(gr) {
                        *d += xv * gv;
                    }
                }
            }
            let mut db = vec![0.0; cols];
            for gr in g.chunks(cols.max(1)) {
                for (d, &gv) in db.iter_mut().zip(gr) {
                    *d += gv;
                }
            }
            vec![Some(dx), Some(dw), Some(db)]
        }
        Op::Relu => {
            let x = parents[0].values();
            vec![Some(x.iter().zip(g).map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 }).collect())]
        }
        Op::SoftmaxRows => {
            let c = out.shape()[1];
            let mut dx = Vec::with_capacity(g.len());
            for (yr, gr) in out.values().chunks(c).zip(g.chunks(c)) {
                let dot: f64 = yr.iter().zip(gr).map(|(y, gv)| y * gv).sum();
                dx.extend(yr.iter().zip(gr).map(|(y, gv)| y * (gv - dot)));
            }
            vec![Some(dx)]
        }
        Op::LogSoftmaxRows => {
            let c = out.shape()[1];
            let mut dx = Vec::with_capacity(g.len());
            for (yr, gr) in out.values().chunks(c).zip(g.chunks(c)) {
                let total: f64 = gr.iter().sum();
                dx.extend(yr.iter().zip(gr).map(|(y, gv)| gv - y.exp() * total));
            }
            vec![Some(dx)]
        }
        Op::Pick(index) => {
            let c = parents[0].shape()[1];
            let mut dx = vec![0.0; parents[0].numel()];
            for (i, (&j, &gv)) in index.iter().zip(g).enumerate() {
                dx[i * c + j] += gv;
            }
            vec![Some(dx)]
        }
        Op::Sum => vec![Some(vec![g[0]; parents[0].numel()])],
        Op::Mean => {
            let n = parents[0].numel();
            vec![Some(vec![g[0] / n as f64; n])]
        }
        Op::Scale(k) => vec![Some(g.iter().map(|v| v * k).collect())],
        Op::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
        Op::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
        Op::Mul => {
            let (a, b) = (parents[0].values(), parents[1].values());
            vec![
                Some(g.iter().zip(b).map(|(gv, bv)| gv * bv).collect()),
                Some(g.iter().zip(a).map(|(gv, av)| gv * av).collect()),
            ]
        }
        Op::Square => {
            let x = parents[0].values();
            vec![Some(g.iter().zip(x).map(|(gv, v)| 2.0 * v * gv).collect())]
        }
        Op::AddRow => {
            let m = parents[1].numel();
            let mut dr = vec![0.0; m];
            for gr in g.chunks(m.max(1)) {
                for (d, gv) in dr.iter_mut().zip(gr) {
                    *d += gv;
                }
            }
            vec![Some(g.to_vec()), Some(dr)]
        }
        Op::GatherRows(index) => {
            let m = parents[0].shape()[1];
            let mut dx = vec![0.0; parents[0].numel()];
            for (r, &i) in index.iter().enumerate() {
                for (d, gv) in dx[i * m..(i + 1) * m].iter_mut().zip(&g[r * m..(r + 1) * m]) {
                    *d += gv;
                }
            }
            vec![Some(dx)]
        }
        Op::MeanRows => {
            let n = parents[0].shape()[0] as f64;
            let row: Vec<f64> = g.iter().map(|v| v / n).collect();
            vec![Some(row.repeat(parents[0].shape()[0]))]
        }
        Op::Conv1d { kernel } => {
            let (x, w) = (&parents[0], &parents[1]);
            let (n, c_in, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let c_out = w.shape()[0];
            let k = *kernel;
            let pad = k / 2;
            let (xv, wv) = (x.values(), w.values());
            let mut dx = vec![0.0; xv.len()];
            let mut dw = vec![0.0; wv.len()];
            let mut db = vec![0.0; c_out];
            for s in 0..n {
                for o in 0..c_out {
                    let gs = &g[(s * c_out + o) * len..(s * c_out + o + 1) * len];
                    db[o] += gs.iter().sum::<f64>();
                    for ci in 0..c_in {
                        let base_x = (s * c_in + ci) * len;
                        let base_w = (o * c_in + ci) * k;
                        for (t, &gv) in gs.iter().enumerate() {
                            for j in 0..k {
                                let pos = t + j;
                                if pos >= pad && pos - pad < len {
                                    let xi = base_x + pos - pad;
                                    dx[xi] += wv[base_w + j] * gv;
                                    dw[base_w + j] += xv[xi] * gv;
                                }
                            }
                        }
                    }
                }
            }
            vec![Some(dx), Some(dw), Some(db)]
        }
        Op::GlobalAvgPool => {
            let len = parents[0].shape()[2];
            let mut dx = Vec::with_capacity(parents[0].numel());
            for &gv in g {
                dx.extend(std::iter::repeat_n(gv / len as f64, len));
            }
            vec![Some(dx)]
        }
        Op::Reshape => vec![Some(g.to_vec())],
    }
}
