//! Training loop: per-batch choice between alignment regularization and
//! saliency masking, SGD with momentum, and a one-step learning-rate decay.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, Tensor};
use crate::data::{class_balanced_batches, Batch, TrainView};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::losses::{cross_entropy, total_loss_parts, LossParts};
use crate::masking::{augment_batch, MaskConfig, SaliencyTarget};
use crate::models::{Architecture, Model};
use crate::rng;
use crate::saliency::SmoothGradConfig;

/// How the per-batch strategy is picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyMode {
    /// Fair coin per batch between alignment and masking.
    Alternate,
    /// Alignment on even iterations, masking on odd ones.
    EvenOdd,
    AlignOnly,
    MaskOnly,
    CeOnly,
}

impl StrategyMode {
    pub const ALL: [StrategyMode; 5] = [
        StrategyMode::Alternate,
        StrategyMode::EvenOdd,
        StrategyMode::AlignOnly,
        StrategyMode::MaskOnly,
        StrategyMode::CeOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyMode::Alternate => "alternate",
            StrategyMode::EvenOdd => "even_odd",
            StrategyMode::AlignOnly => "align_only",
            StrategyMode::MaskOnly => "mask_only",
            StrategyMode::CeOnly => "ce_only",
        }
    }
}

impl fmt::Display for StrategyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown strategy mode {s:?}")))
    }
}

/// Strategy applied to one batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Align,
    Mask,
    PlainCe,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Align => "align",
            Strategy::Mask => "mask",
            Strategy::PlainCe => "plain_ce",
        }
    }
}

/// Classifier backbone; input and output sizes come from the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Mlp { hidden: Vec<usize> },
    Cnn1d { channels: Vec<usize>, kernel: usize },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Mlp { hidden: vec![32] }
    }
}

impl ModelSpec {
    pub fn architecture(&self, input_shape: &[usize]) -> Result<Architecture> {
        match self {
            ModelSpec::Mlp { hidden } => {
                let mut layer_sizes = vec![input_shape.iter().product()];
                layer_sizes.extend_from_slice(hidden);
                Ok(Architecture::Mlp { layer_sizes })
            }
            ModelSpec::Cnn1d { channels, kernel } => {
                let (c_in, len) = match input_shape {
                    [len] => (1, *len),
                    [c, len] => (*c, *len),
                    other => {
                        return Err(Error::Config(format!(
                            "a 1-D CNN needs [length] or [channels, length] inputs, got {other:?}"
                        )))
                    }
                };
                let mut all = vec![c_in];
                all.extend_from_slice(channels);
                Ok(Architecture::Cnn1d {
                    channels: all,
                    kernel: *kernel,
                    input_length: len,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub m_percent: f64,
    pub q_max: f64,
    pub sg_n: usize,
    pub sg_sigma: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_at_fraction: f64,
    pub min_class_ratio: f64,
    pub momentum: f64,
    pub strategy_mode: StrategyMode,
    pub seed: u64,
    /// Also add the alignment term on masked batches.
    pub align_on_mask: bool,
    pub saliency_target: SaliencyTarget,
    pub model: ModelSpec,
    /// Share of source rows held back to measure held-in accuracy.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.1,
            m_percent: 50.0,
            q_max: 70.0,
            sg_n: 25,
            sg_sigma: 0.15,
            batch_size: 128,
            iterations: 2000,
            base_lr: 0.001,
            lr_decay_factor: 0.1,
            lr_decay_at_fraction: 0.8,
            min_class_ratio: 0.5,
            momentum: 0.9,
            strategy_mode: StrategyMode::Alternate,
            seed: 0,
            align_on_mask: false,
            saliency_target: SaliencyTarget::TrueLabel,
            model: ModelSpec::default(),
            holdout_fraction: 0.1,
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be ≥ 0, got {}", self.alpha)));
        }
        self.mask_config().validate()?;
        self.smoothgrad_config().validate()?;
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be ≥ 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be ≥ 0, got {}", self.base_lr)));
        }
        unit_interval("lr_decay_at_fraction", self.lr_decay_at_fraction)?;
        unit_interval("momentum", self.momentum)?;
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config(format!(
                "holdout_fraction must lie in [0, 1), got {}",
                self.holdout_fraction
            )));
        }
        if !(self.min_class_ratio > 0.0 && self.min_class_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "min_class_ratio must lie in (0, 1], got {}",
                self.min_class_ratio
            )));
        }
        if !(self.lr_decay_factor >= 0.0 && self.lr_decay_factor.is_finite()) {
            return Err(Error::Config(format!(
                "lr_decay_factor must be ≥ 0, got {}",
                self.lr_decay_factor
            )));
        }
        Ok(())
    }

    pub fn mask_config(&self) -> MaskConfig {
        MaskConfig {
            m_percent: self.m_percent,
            q_max: self.q_max,
            seed: self.seed,
        }
    }

    pub fn smoothgrad_config(&self) -> SmoothGradConfig {
        SmoothGradConfig {
            n: self.sg_n,
            sigma: self.sg_sigma,
            seed: self.seed,
        }
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// `base_lr` before `ceil(at_fraction·total)` iterations, `base_lr·factor`
/// from then on.
pub fn lr_schedule(base_lr: f64, iter: usize, total: usize, factor: f64, at_fraction: f64) -> Result<f64> {
    if iter >= total {
        return Err(Error::Contract(format!("iteration {iter} outside 0..{total}")));
    }
    // The small offset keeps 0.07·100 = 7.000000000000001 from rounding up.
    let boundary = (at_fraction * total as f64 - 1e-9).ceil().max(0.0) as usize;
    Ok(if iter < boundary { base_lr } else { base_lr * factor })
}

pub fn choose_strategy<R: Rng + ?Sized>(mode: StrategyMode, iteration: usize, rng: &mut R) -> Strategy {
    match mode {
        StrategyMode::Alternate => {
            if rng.random_bool(0.5) {
                Strategy::Align
            } else {
                Strategy::Mask
            }
        }
        StrategyMode::EvenOdd => {
            if iteration.is_multiple_of(2) {
                Strategy::Align
            } else {
                Strategy::Mask
            }
        }
        StrategyMode::AlignOnly => Strategy::Align,
        StrategyMode::MaskOnly => Strategy::Mask,
        StrategyMode::CeOnly => Strategy::PlainCe,
    }
}

/// Velocity buffers for SGD with momentum, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Momentum {
    pub buffers: Vec<Vec<f64>>,
}

impl Momentum {
    pub fn zeros(model: &Model) -> Self {
        Momentum {
            buffers: model.params().iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub strategy: Strategy,
    pub ce: f64,
    pub align: Option<f64>,
    pub lr: f64,
    pub wall_time: f64,
}

fn loss_parts(model: &Model, x: &Tensor, labels: &[usize], alpha: f64) -> Result<LossParts> {
    let logits = model.forward(x)?;
    if alpha > 0.0 {
        return total_loss_parts(&logits, labels, alpha);
    }
    let ce = cross_entropy(&logits, labels)?;
    Ok(LossParts {
        ce: ce.item()?,
        total: ce,
        align: None,
    })
}

/// One forward/backward pass and one momentum update (`v ← μv + g`,
/// `θ ← θ − lr·v`).
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: Rng + ?Sized>(
    model: &mut Model,
    batch: &Batch,
    strategy: Strategy,
    cfg: &TrainConfig,
    lr: f64,
    iteration: usize,
    rng: &mut R,
    momentum: &mut Momentum,
    exec: Exec,
) -> Result<StepRecord> {
    let (inputs, alpha) = match strategy {
        Strategy::Align => (batch.clone(), cfg.alpha),
        Strategy::Mask => {
            let masked = augment_batch(
                batch,
                model,
                &cfg.mask_config(),
                &cfg.smoothgrad_config(),
                cfg.saliency_target,
                rng,
                exec,
            )?;
            (masked, if cfg.align_on_mask { cfg.alpha } else { 0.0 })
        }
        Strategy::PlainCe => (batch.clone(), 0.0),
    };
    let x = Tensor::new(inputs.x, &[inputs.y.len(), batch.width()])?;
    let parts = loss_parts(model, &x, &inputs.y, alpha).map_err(|e| match e {
        Error::Numeric(msg) => {
            Error::Numeric(format!("iteration {iteration} ({}): {msg}", strategy.as_str()))
        }
        other => other,
    })?;
    let loss = parts.total.item()?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss at iteration {iteration} ({}): ce={}, align={:?}",
            strategy.as_str(),
            parts.ce,
            parts.align
        )));
    }
    let grads = backward(&parts.total)?;
    let mut updated = Vec::with_capacity(model.params().len());
    for (p, v) in model.params().iter().zip(momentum.buffers.iter_mut()) {
        let g = grads.wrt(&p.tensor);
        for (vi, gi) in v.iter_mut().zip(g.values()) {
            *vi = cfg.momentum * *vi + gi;
        }
        let values = p.tensor.values().iter().zip(v.iter()).map(|(w, vi)| w - lr * vi).collect();
        updated.push(Tensor::new(values, p.tensor.shape())?);
    }
    model.set_params(updated)?;
    Ok(StepRecord {
        iteration,
        strategy,
        ce: parts.ce,
        align: parts.align,
        lr,
        wall_time: 0.0,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "strategy", "ce", "align", "lr", "wall_time"])?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                r.strategy.as_str().to_string(),
                format!("{:e}", r.ce),
                r.align.map_or(String::new(), |a| format!("{a:e}")),
                format!("{:e}", r.lr),
                format!("{:.6}", r.wall_time),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e.into()))
    }
}

/// Trains a fresh model on a domain-free view. Deterministic given
/// `(view, cfg)`; `exec` only changes how gradient work is scheduled.
pub fn train_with(view: &TrainView, cfg: &TrainConfig, exec: Exec) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    let arch = cfg.model.architecture(view.input_shape())?;
    let mut model = Model::build(&arch, view.num_classes(), cfg.seed)?;
    let mut batches = class_balanced_batches(view, cfg.batch_size, cfg.min_class_ratio, cfg.seed)?;
    let mut strategy_rng = rng::stream(cfg.seed, rng::Stream::Strategy);
    let mut mask_rng = rng::stream(cfg.seed, rng::Stream::Masking);
    let mut momentum = Momentum::zeros(&model);
    let mut history = TrainHistory::default();
    let start = Instant::now();
    for it in 0..cfg.iterations {
        let lr = lr_schedule(
            cfg.base_lr,
            it,
            cfg.iterations,
            cfg.lr_decay_factor,
            cfg.lr_decay_at_fraction,
        )?;
        let strategy = choose_strategy(cfg.strategy_mode, it, &mut strategy_rng);
        let batch = batches.next().expect("batch stream is endless");
        let mut record = train_step(
            &mut model,
            &batch,
            strategy,
            cfg,
            lr,
            it,
            &mut mask_rng,
            &mut momentum,
            exec,
        )?;
        record.wall_time = start.elapsed().as_secs_f64();
        history.records.push(record);
    }
    Ok((model, history))
}

pub fn train(view: &TrainView, cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    train_with(view, cfg, Exec::auto())
}
