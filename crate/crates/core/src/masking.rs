//! Saliency-guided augmentation: observations scoring below a randomly drawn
//! percentile of their saliency map are shuffled among themselves.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::no_grad;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::Model;
use crate::rng;
use crate::saliency::{smoothgrad_batch, SaliencyMap, SmoothGradConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    /// Share of each batch that is augmented, in percent.
    pub m_percent: f64,
    /// Upper end of the threshold percentile range.
    pub q_max: f64,
    pub seed: u64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            m_percent: 50.0,
            q_max: 70.0,
            seed: 0,
        }
    }
}

fn check_percent(name: &str, v: f64) -> Result<()> {
    if !(0.0..=100.0).contains(&v) {
        return Err(Error::Config(format!("{name} must lie in [0, 100], got {v}")));
    }
    Ok(())
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        check_percent("m_percent", self.m_percent)?;
        check_percent("q_max", self.q_max)
    }

    /// Number of samples augmented in a batch of `batch_size`, rounding half
    /// away from zero.
    pub fn augment_count(&self, batch_size: usize) -> usize {
        (self.m_percent / 100.0 * batch_size as f64).round() as usize
    }
}

/// Which class a training-time saliency map is computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencyTarget {
    #[default]
    TrueLabel,
    Predicted,
}

/// `q ~ Uniform[0, q_max]`.
pub fn sample_threshold<R: Rng + ?Sized>(q_max: f64, rng: &mut R) -> Result<f64> {
    check_percent("q_max", q_max)?;
    Ok(rng.random::<f64>() * q_max)
}

/// `q`-th percentile with linear interpolation between order statistics
/// (the convention `numpy.percentile` uses by default).
pub fn percentile(scores: &[f64], q: f64) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Positions scoring strictly below the `q`-th percentile, ascending.
pub fn masked_positions(scores: &[f64], q: f64) -> Vec<usize> {
    if scores.is_empty() {
        return Vec::new();
    }
    let t = percentile(scores, q);
    scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s < t)
        .map(|(i, _)| i)
        .collect()
}

/// Uniformly permutes the values of `x` at positions scoring below the
/// `q`-th percentile of `sal`. Other positions are copied unchanged.
pub fn mask_below_percentile<R: Rng + ?Sized>(
    x: &[f64],
    sal: &SaliencyMap,
    q: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if x.len() != sal.scores.len() {
        return Err(Error::dim("mask_below_percentile", &[x.len()], &[sal.scores.len()]));
    }
    check_percent("q", q)?;
    let positions = masked_positions(&sal.scores, q);
    let mut out = x.to_vec();
    if positions.len() > 1 {
        let mut sources = positions.clone();
        sources.shuffle(rng);
        for (&dst, &src) in positions.iter().zip(&sources) {
            out[dst] = x[src];
        }
    }
    Ok(out)
}

fn argmax(row: &[f64]) -> usize {
    // First maximum wins.
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Replaces a uniformly chosen `m%` of the batch with saliency-masked copies.
///
/// Each chosen sample gets its own SmoothGrad noise seed, threshold and
/// shuffle, all drawn from `rng` before any gradient work, so the result does
/// not depend on `exec`.
pub fn augment_batch<R: Rng + ?Sized>(
    batch: &Batch,
    model: &Model,
    cfg: &MaskConfig,
    sg_cfg: &SmoothGradConfig,
    target: SaliencyTarget,
    rng: &mut R,
    exec: Exec,
) -> Result<Batch> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Contract("cannot augment an empty batch".into()));
    }
    let width = batch.width();
    let k = cfg.augment_count(batch.len());
    if k == 0 {
        return Ok(batch.clone());
    }
    let mut chosen = index::sample(rng, batch.len(), k).into_vec();
    chosen.sort_unstable();
    let seeds: Vec<(u64, u64)> = chosen.iter().map(|_| (rng.next_u64(), rng.next_u64())).collect();

    let mut rows = Vec::with_capacity(k * width);
    for &i in &chosen {
        rows.extend_from_slice(batch.row(i));
    }
    let classes: Vec<usize> = match target {
        SaliencyTarget::TrueLabel => chosen.iter().map(|&i| batch.y[i]).collect(),
        SaliencyTarget::Predicted => {
            let logits = no_grad(|| model.predict(&rows, exec))?;
            logits.chunks(model.num_classes()).map(argmax).collect()
        }
    };
    let sg_seeds: Vec<u64> = seeds.iter().map(|s| s.0).collect();
    let maps = smoothgrad_batch(model, &rows, &classes, &sg_seeds, sg_cfg, exec)?;

    let mut out = batch.clone();
    for ((&i, map), &(_, mask_seed)) in chosen.iter().zip(&maps).zip(&seeds) {
        let mut local = rng::seeded(mask_seed);
        let q = sample_threshold(cfg.q_max, &mut local)?;
        let masked = mask_below_percentile(batch.row(i), map, q, &mut local)?;
        out.x[i * width..(i + 1) * width].copy_from_slice(&masked);
    }
    Ok(out)
}
