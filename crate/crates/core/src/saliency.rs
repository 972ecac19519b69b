//! Gradient saliency: squared input gradients of a class logit, optionally
//! averaged over Gaussian-perturbed copies of the input (SmoothGrad).

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::Model;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencyKind {
    Vanilla,
    SmoothGrad,
}

/// Nonnegative per-observation relevance scores for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub scores: Vec<f64>,
    pub shape: Vec<usize>,
    pub class_used: usize,
    pub kind: SaliencyKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothGradConfig {
    /// Number of noisy replicates averaged.
    pub n: usize,
    /// Noise standard deviation as a fraction of the sample's value range.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SmoothGradConfig {
    fn default() -> Self {
        SmoothGradConfig {
            n: 25,
            sigma: 0.15,
            seed: 0,
        }
    }
}

impl SmoothGradConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Config("smoothgrad needs n ≥ 1".into()));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Config(format!("smoothgrad sigma must be ≥ 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

fn check_sample(model: &Model, x: &[f64], class: usize) -> Result<()> {
    if x.len() != model.input_width() {
        return Err(Error::dim("saliency", &[x.len()], model.input_shape()));
    }
    if class >= model.num_classes() {
        return Err(Error::Index {
            index: class,
            limit: model.num_classes(),
        });
    }
    Ok(())
}

/// `(∂f(x)[c]/∂x)²` elementwise.
pub fn vanilla_saliency(model: &Model, x: &Tensor, class: usize) -> Result<SaliencyMap> {
    check_sample(model, x.values(), class)?;
    let g = model.logit_input_gradients(x.values(), &[class], Exec::Sequential)?;
    Ok(SaliencyMap {
        scores: g.iter().map(|v| v * v).collect(),
        shape: model.input_shape().to_vec(),
        class_used: class,
        kind: SaliencyKind::Vanilla,
    })
}

/// Mean of vanilla maps over `cfg.n` copies of `x` with i.i.d.
/// `N(0, (σ·(max x − min x))²)` noise, drawn from one stream seeded by
/// `cfg.seed`.
pub fn smoothgrad(model: &Model, x: &Tensor, class: usize, cfg: &SmoothGradConfig) -> Result<SaliencyMap> {
    let mut maps = smoothgrad_batch(model, x.values(), &[class], &[cfg.seed], cfg, Exec::Sequential)?;
    Ok(maps.remove(0))
}

/// Noisy replicates of one sample, `n` rows back to back.
fn noisy_replicates(x: &[f64], n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let sd = sigma * (hi - lo);
    let mut out = Vec::with_capacity(n * x.len());
    if sd.is_nan() || sd <= 0.0 {
        for _ in 0..n {
            out.extend_from_slice(x);
        }
        return out;
    }
    let mut rng = rng::seeded(seed);
    for _ in 0..n {
        for &v in x {
            let z: f64 = StandardNormal.sample(&mut rng);
            out.push(v + sd * z);
        }
    }
    out
}

/// SmoothGrad maps for several samples (row-major `rows`), one noise seed per
/// sample. Noise is drawn up front so the gradient work can fan out.
pub fn smoothgrad_batch(
    model: &Model,
    rows: &[f64],
    classes: &[usize],
    seeds: &[u64],
    cfg: &SmoothGradConfig,
    exec: Exec,
) -> Result<Vec<SaliencyMap>> {
    cfg.validate()?;
    let width = model.input_width();
    if rows.len() != classes.len() * width || seeds.len() != classes.len() {
        return Err(Error::dim("smoothgrad_batch", &[rows.len(), seeds.len()], &[classes.len(), width]));
    }
    for (x, &c) in rows.chunks(width).zip(classes) {
        check_sample(model, x, c)?;
    }
    let mut noisy = Vec::with_capacity(rows.len() * cfg.n);
    let mut replicate_classes = Vec::with_capacity(classes.len() * cfg.n);
    for ((x, &c), &seed) in rows.chunks(width).zip(classes).zip(seeds) {
        noisy.extend(noisy_replicates(x, cfg.n, cfg.sigma, seed));
        replicate_classes.extend(std::iter::repeat_n(c, cfg.n));
    }
    let grads = model.logit_input_gradients(&noisy, &replicate_classes, exec)?;

    let maps = grads
        .chunks(cfg.n * width)
        .zip(classes)
        .map(|(sample_grads, &c)| {
            // Running mean: exact when every replicate yields the same map.
            let mut mean = vec![0.0; width];
            for (k, g) in sample_grads.chunks(width).enumerate() {
                let inv = 1.0 / (k + 1) as f64;
                for (m, v) in mean.iter_mut().zip(g) {
                    *m += (v * v - *m) * inv;
                }
            }
            SaliencyMap {
                scores: mean,
                shape: model.input_shape().to_vec(),
                class_used: c,
                kind: SaliencyKind::SmoothGrad,
            }
        })
        .collect();
    Ok(maps)
}
