//! Training objective: cross-entropy, class-centroid soft-label alignment,
//! and their weighted sum.

use std::collections::BTreeMap;

use crate::autodiff::{ops, Tensor};
use crate::error::{Error, Result};

/// Soft labels (rows on the probability simplex) with their class indices.
///
/// There is deliberately no domain field: the alignment term can only group
/// samples by class.
#[derive(Debug, Clone)]
pub struct SoftLabelBatch {
    probs: Tensor,
    labels: Vec<usize>,
}

impl SoftLabelBatch {
    pub fn new(probs: Tensor, labels: Vec<usize>) -> Result<Self> {
        let (n, c) = match probs.shape() {
            [n, c] => (*n, *c),
            other => return Err(Error::dim("soft labels", other, &[labels.len(), 0])),
        };
        if n != labels.len() {
            return Err(Error::dim("soft labels", probs.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Index { index: bad, limit: c });
        }
        for (i, row) in probs.values().chunks(c.max(1)).enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0 || p.is_nan()) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::Contract(format!("row {i} is not a probability vector: {row:?}")));
            }
        }
        Ok(SoftLabelBatch { probs, labels })
    }

    /// Softmax of `logits`, keeping the graph so gradients reach the logits.
    pub fn from_logits(logits: &Tensor, labels: &[usize]) -> Result<Self> {
        Self::new(ops::softmax_rows(logits)?, labels.to_vec())
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.probs.shape()[1]
    }

    /// Row indices per class present in the batch, in ascending class order.
    pub fn class_members(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &y) in self.labels.iter().enumerate() {
            groups.entry(y).or_default().push(i);
        }
        groups
    }
}

/// Mean negative log-likelihood of the labelled class, via log-softmax.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    if labels.is_empty() {
        return Err(Error::Contract("cross-entropy of an empty batch".into()));
    }
    let log_probs = ops::log_softmax_rows(logits)?;
    let picked = ops::pick(&log_probs, labels)?;
    Ok(ops::scale(&ops::mean(&picked)?, -1.0))
}

/// Mean soft label of each class present in the batch. Absent classes have
/// no entry.
pub fn class_centroids(soft: &SoftLabelBatch) -> BTreeMap<usize, Vec<f64>> {
    let c = soft.num_classes();
    soft.class_members()
        .into_iter()
        .map(|(class, rows)| {
            let mut mu = vec![0.0; c];
            for &i in &rows {
                for (m, p) in mu.iter_mut().zip(&soft.probs.values()[i * c..(i + 1) * c]) {
                    *m += p;
                }
            }
            for m in &mut mu {
                *m /= rows.len() as f64;
            }
            (class, mu)
        })
        .collect()
}

/// `Σ_c (1/|B(c)|) Σ_{i∈B(c)} ‖p_i − μ(c)‖²` over classes present in the
/// batch. The centroid stays in the graph, so gradients flow through it.
pub fn alignment_loss(soft: &SoftLabelBatch) -> Result<Tensor> {
    if soft.labels.is_empty() {
        return Err(Error::Contract("alignment loss of an empty batch".into()));
    }
    let mut total: Option<Tensor> = None;
    for rows in soft.class_members().into_values() {
        let members = ops::gather_rows(&soft.probs, &rows)?;
        let centroid = ops::mean_rows(&members)?;
        let centered = ops::add_row(&members, &ops::scale(&centroid, -1.0))?;
        let term = ops::scale(&ops::sum(&ops::square(&centered)), 1.0 / rows.len() as f64);
        total = Some(match total {
            Some(t) => ops::add(&t, &term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty batch has at least one class"))
}

/// Both objective components plus their combination.
#[derive(Debug, Clone)]
pub struct LossParts {
    pub total: Tensor,
    pub ce: f64,
    pub align: Option<f64>,
}

/// `ℓ_ce + α·ℓ_align`. With `alpha == 0` the alignment term is not built and
/// the result is exactly the cross-entropy.
pub fn total_loss(logits: &Tensor, labels: &[usize], alpha: f64) -> Result<Tensor> {
    total_loss_parts(logits, labels, alpha).map(|p| p.total)
}

pub fn total_loss_parts(logits: &Tensor, labels: &[usize], alpha: f64) -> Result<LossParts> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::Config(format!("alpha must be finite and ≥ 0, got {alpha}")));
    }
    let ce = cross_entropy(logits, labels)?;
    if alpha == 0.0 {
        return Ok(LossParts {
            ce: ce.item()?,
            total: ce,
            align: None,
        });
    }
    let align = alignment_loss(&SoftLabelBatch::from_logits(logits, labels)?)?;
    Ok(LossParts {
        ce: ce.item()?,
        align: Some(align.item()?),
        total: ops::add(&ce, &ops::scale(&align, alpha))?,
    })
}
