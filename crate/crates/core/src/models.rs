//! Classifier backbones: an MLP and a small same-padded 1-D CNN, each ending
//! in a linear head over `num_classes` logits.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, no_grad, ops, Tensor};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// `layer_sizes[0]` is the input width; the rest are hidden widths.
    Mlp { layer_sizes: Vec<usize> },
    /// `channels[0]` is the input channel count; the rest are conv widths.
    Cnn1d {
        channels: Vec<usize>,
        kernel: usize,
        input_length: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Flatten,
    Affine { weight: usize, bias: usize },
    Relu,
    Conv1d { weight: usize, bias: usize },
    GlobalAvgPool,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone)]
pub struct Model {
    architecture: Architecture,
    layers: Vec<Layer>,
    params: Vec<Param>,
    num_classes: usize,
    input_shape: Vec<usize>,
    seed: u64,
}

struct Builder {
    rng: rng::Rng,
    layers: Vec<Layer>,
    params: Vec<Param>,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Builder {
            rng: rng::stream(seed, rng::Stream::Init),
            layers: Vec::new(),
            params: Vec::new(),
        }
    }

    fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let values = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.params.push(Param {
            name,
            tensor: Tensor::new(values, shape).expect("shape matches value count"),
        });
        self.params.len() - 1
    }

    fn affine(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        let weight = self.uniform(format!("{name}.weight"), &[fan_in, fan_out], fan_in);
        let bias = self.uniform(format!("{name}.bias"), &[fan_out], fan_in);
        self.layers.push(Layer::Affine { weight, bias });
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, kernel: usize) {
        let fan_in = c_in * kernel;
        let weight = self.uniform(format!("{name}.weight"), &[c_out, c_in, kernel], fan_in);
        let bias = self.uniform(format!("{name}.bias"), &[c_out], fan_in);
        self.layers.push(Layer::Conv1d { weight, bias });
    }
}

/// Affine+ReLU stack with a final affine head. Parameters are drawn uniformly
/// from `±1/sqrt(fan_in)` using a generator seeded by `seed`.
pub fn build_mlp(layer_sizes: &[usize], num_classes: usize, seed: u64) -> Result<Model> {
    if layer_sizes.is_empty() || layer_sizes.contains(&0) {
        return Err(Error::Config(format!("invalid MLP layer sizes {layer_sizes:?}")));
    }
    if num_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
    }
    let mut b = Builder::new(seed);
    b.layers.push(Layer::Flatten);
    for (i, pair) in layer_sizes.windows(2).enumerate() {
        b.affine(&format!("fc{i}"), pair[0], pair[1]);
        b.layers.push(Layer::Relu);
    }
    b.affine("head", *layer_sizes.last().unwrap(), num_classes);
    Ok(Model {
        architecture: Architecture::Mlp {
            layer_sizes: layer_sizes.to_vec(),
        },
        layers: b.layers,
        params: b.params,
        num_classes,
        input_shape: vec![layer_sizes[0]],
        seed,
    })
}

/// Conv1d+ReLU blocks, global average pooling and an affine head.
pub fn build_cnn1d(
    channels: &[usize],
    kernel: usize,
    input_length: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Model> {
    if channels.len() < 2 || channels.contains(&0) {
        return Err(Error::Config(format!(
            "CNN needs input channels plus at least one conv width, got {channels:?}"
        )));
    }
    if kernel.is_multiple_of(2) {
        return Err(Error::Config(format!("kernel must be odd for same padding, got {kernel}")));
    }
    if input_length == 0 {
        return Err(Error::Config("input length must be positive".into()));
    }
    if num_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
    }
    let mut b = Builder::new(seed);
    for (i, pair) in channels.windows(2).enumerate() {
        b.conv(&format!("conv{i}"), pair[0], pair[1], kernel);
        b.layers.push(Layer::Relu);
    }
    b.layers.push(Layer::GlobalAvgPool);
    b.affine("head", *channels.last().unwrap(), num_classes);
    Ok(Model {
        architecture: Architecture::Cnn1d {
            channels: channels.to_vec(),
            kernel,
            input_length,
        },
        layers: b.layers,
        params: b.params,
        num_classes,
        input_shape: vec![channels[0], input_length],
        seed,
    })
}

impl Model {
    pub fn build(architecture: &Architecture, num_classes: usize, seed: u64) -> Result<Model> {
        match architecture {
            Architecture::Mlp { layer_sizes } => build_mlp(layer_sizes, num_classes, seed),
            Architecture::Cnn1d {
                channels,
                kernel,
                input_length,
            } => build_cnn1d(channels, *kernel, *input_length, num_classes, seed),
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.tensor.clone()).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Flat width of one input sample.
    pub fn input_width(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Width of the representation fed to the final affine head.
    pub fn feature_width(&self) -> usize {
        let head = self.params.len() - 2;
        self.params[head].tensor.shape()[0]
    }

    /// Replaces parameter values in declaration order. Shapes must match.
    pub fn set_params(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::dim("set_params", &[self.params.len()], &[tensors.len()]));
        }
        for (p, t) in self.params.iter().zip(&tensors) {
            if p.tensor.shape() != t.shape() {
                return Err(Error::dim("set_params", p.tensor.shape(), t.shape()));
            }
        }
        for (p, t) in self.params.iter_mut().zip(tensors) {
            p.tensor = t;
        }
        Ok(())
    }

    /// Checks `x` against the input shape and returns the batch size.
    /// Accepts flat rows `[n, width]` or `[n, ...input_shape]`.
    fn batch_of(&self, x: &Tensor) -> Result<usize> {
        match x.shape() {
            [n, d] if *d == self.input_width() => Ok(*n),
            [n, rest @ ..] if rest == self.input_shape.as_slice() => Ok(*n),
            other => {
                let mut expected = vec![0];
                expected.extend_from_slice(&self.input_shape);
                Err(Error::dim("forward", other, &expected))
            }
        }
    }

    /// Runs the layer stack and returns (penultimate features, logits).
    pub fn forward_with_features(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let n = self.batch_of(x)?;
        let mut h = x.clone();
        if let Architecture::Cnn1d { .. } = self.architecture {
            let mut shape = vec![n];
            shape.extend_from_slice(&self.input_shape);
            if h.shape() != shape.as_slice() {
                h = ops::reshape(&h, &shape)?;
            }
        }
        let last = self.layers.len() - 1;
        let mut features = None;
        for (i, layer) in self.layers.iter().enumerate() {
            if i == last {
                features = Some(h.clone());
            }
            h = match *layer {
                Layer::Flatten => {
                    if h.shape().len() == 2 {
                        h
                    } else {
                        ops::reshape(&h, &[n, self.input_width()])?
                    }
                }
                Layer::Affine { weight, bias } => {
                    ops::affine(&h, &self.params[weight].tensor, &self.params[bias].tensor)?
                }
                Layer::Relu => ops::relu(&h),
                Layer::Conv1d { weight, bias } => {
                    ops::conv1d(&h, &self.params[weight].tensor, &self.params[bias].tensor)?
                }
                Layer::GlobalAvgPool => ops::global_avg_pool(&h)?,
            };
        }
        Ok((features.expect("model has a head"), h))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_with_features(x).map(|(_, logits)| logits)
    }

    /// Logits without graph construction, computed in row chunks.
    pub fn predict(&self, rows: &[f64], exec: Exec) -> Result<Vec<f64>> {
        self.map_rows(rows, exec, |x| Ok(self.forward(x)?.to_vec()))
    }

    /// Penultimate-layer features without graph construction.
    pub fn features(&self, rows: &[f64], exec: Exec) -> Result<Vec<f64>> {
        self.map_rows(rows, exec, |x| Ok(self.forward_with_features(x)?.0.to_vec()))
    }

    fn map_rows<F>(&self, rows: &[f64], exec: Exec, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&Tensor) -> Result<Vec<f64>> + Sync + Send,
    {
        let width = self.input_width();
        if !rows.len().is_multiple_of(width) {
            return Err(Error::dim("predict", &[rows.len()], &[width]));
        }
        let chunks: Vec<&[f64]> = rows.chunks(256 * width).collect();
        exec.map(chunks, |chunk| {
            no_grad(|| {
                let x = Tensor::new(chunk.to_vec(), &[chunk.len() / width, width])?;
                f(&x)
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .map(|parts| parts.concat())
    }

    /// `∂f(x)[c]/∂x` for a single sample, shaped like the model input.
    pub fn logit_input_gradient(&self, x: &Tensor, class: usize) -> Result<Tensor> {
        if x.numel() != self.input_width() {
            let mut expected = vec![1];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::dim("logit_input_gradient", x.shape(), &expected));
        }
        let grads = self.logit_input_gradients(x.values(), &[class], Exec::Sequential)?;
        Tensor::new(grads, &self.input_shape)
    }

    /// Row-wise `∂f(x_r)[c_r]/∂x_r` for a row-major block of samples.
    ///
    /// Rows do not interact in the forward pass, so one backward pass over
    /// `Σ_r f(x_r)[c_r]` yields every per-row input gradient at once.
    pub fn logit_input_gradients(&self, rows: &[f64], classes: &[usize], exec: Exec) -> Result<Vec<f64>> {
        let width = self.input_width();
        if rows.len() != classes.len() * width {
            return Err(Error::dim("logit_input_gradients", &[rows.len()], &[classes.len(), width]));
        }
        if let Some(&c) = classes.iter().find(|&&c| c >= self.num_classes) {
            return Err(Error::Index {
                index: c,
                limit: self.num_classes,
            });
        }
        const CHUNK: usize = 512;
        let work: Vec<(&[f64], &[usize])> = rows.chunks(CHUNK * width).zip(classes.chunks(CHUNK)).collect();
        exec.map(work, |(chunk, cls)| {
            let x = Tensor::new(chunk.to_vec(), &[cls.len(), width])?;
            let logits = self.forward(&x)?;
            let root = ops::sum(&ops::pick(&logits, cls)?);
            Ok(backward(&root)?.wrt(&x).to_vec())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .map(|parts| parts.concat())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            architecture: self.architecture.clone(),
            num_classes: self.num_classes,
            input_shape: self.input_shape.clone(),
            seed: self.seed,
            params: self
                .params
                .iter()
                .map(|p| ParamRecord {
                    name: p.name.clone(),
                    shape: p.tensor.shape().to_vec(),
                    values: p.tensor.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Model> {
        let mut model = Model::build(&ck.architecture, ck.num_classes, ck.seed)?;
        if ck.params.len() != model.params.len() {
            return Err(Error::Contract(format!(
                "checkpoint has {} parameter tensors, architecture needs {}",
                ck.params.len(),
                model.params.len()
            )));
        }
        let mut tensors = Vec::with_capacity(ck.params.len());
        for (p, rec) in model.params.iter().zip(&ck.params) {
            if p.name != rec.name {
                return Err(Error::Contract(format!(
                    "checkpoint parameter {} where {} was expected",
                    rec.name, p.name
                )));
            }
            tensors.push(Tensor::new(rec.values.clone(), &rec.shape)?);
        }
        model.set_params(tensors)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_checkpoint()).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        Model::from_checkpoint(&ck)
    }
}

/// On-disk model: architecture, flat parameter arrays by name, seed, classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub num_classes: usize,
    pub input_shape: Vec<usize>,
    pub seed: u64,
    pub params: Vec<ParamRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}
