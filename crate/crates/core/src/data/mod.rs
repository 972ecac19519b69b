//! Multi-domain datasets. Domain tags live only in [`DomainDataset`]; the
//! training path sees [`TrainView`], which has no domain field at all.

mod generate;
mod io;
mod sampler;
mod split;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

pub use generate::{
    generate_shifted_waveforms, generate_spurious_gaussian, SpuriousGaussianParams, WaveformParams,
};
pub use io::{load_dataset, save_dataset, CSV_FILE, META_FILE};
pub use sampler::{class_balanced_batches, ClassBalancedBatches};
pub use split::{leave_one_domain_out, LodoSplit};

/// Samples with class labels and a domain tag per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    x: Vec<f64>,
    input_shape: Vec<usize>,
    y: Vec<usize>,
    domain: Vec<usize>,
    domain_names: Vec<String>,
    num_classes: usize,
}

impl DomainDataset {
    pub fn new(
        x: Vec<f64>,
        input_shape: Vec<usize>,
        y: Vec<usize>,
        domain: Vec<usize>,
        domain_names: Vec<String>,
        num_classes: usize,
    ) -> Result<Self> {
        let width: usize = input_shape.iter().product();
        if width == 0 {
            return Err(Error::Config(format!("input shape {input_shape:?} is empty")));
        }
        if x.len() != y.len() * width || domain.len() != y.len() {
            return Err(Error::dim("dataset", &[x.len(), domain.len()], &[y.len(), width]));
        }
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Index {
                index: bad,
                limit: num_classes,
            });
        }
        if let Some(&bad) = domain.iter().find(|&&d| d >= domain_names.len()) {
            return Err(Error::Index {
                index: bad,
                limit: domain_names.len(),
            });
        }
        Ok(DomainDataset {
            x,
            input_shape,
            y,
            domain,
            domain_names,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn width(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    /// Domain index per row, into [`Self::domain_names`].
    pub fn domain_indices(&self) -> &[usize] {
        &self.domain
    }

    pub fn domain_names(&self) -> &[String] {
        &self.domain_names
    }

    pub fn domain_of(&self, row: usize) -> &str {
        &self.domain_names[self.domain[row]]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.x[i * w..(i + 1) * w]
    }

    /// Rows at `indices`, in that order, keeping the full domain name list.
    pub fn subset(&self, indices: &[usize]) -> DomainDataset {
        let mut x = Vec::with_capacity(indices.len() * self.width());
        for &i in indices {
            x.extend_from_slice(self.row(i));
        }
        DomainDataset {
            x,
            input_shape: self.input_shape.clone(),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            domain: indices.iter().map(|&i| self.domain[i]).collect(),
            domain_names: self.domain_names.clone(),
            num_classes: self.num_classes,
        }
    }

    /// Row counts keyed by (domain index, class).
    pub fn counts(&self) -> BTreeMap<(usize, usize), usize> {
        let mut counts = BTreeMap::new();
        for (&d, &c) in self.domain.iter().zip(&self.y) {
            *counts.entry((d, c)).or_insert(0) += 1;
        }
        counts
    }

    /// (domain, class) pairs with no rows.
    pub fn missing_pairs(&self) -> Vec<(String, usize)> {
        let counts = self.counts();
        let mut missing = Vec::new();
        for (d, name) in self.domain_names.iter().enumerate() {
            for c in 0..self.num_classes {
                if !counts.contains_key(&(d, c)) {
                    missing.push((name.clone(), c));
                }
            }
        }
        missing
    }

    /// Domain-free view of every row.
    pub fn train_view(&self) -> TrainView {
        TrainView {
            x: self.x.clone(),
            y: self.y.clone(),
            input_shape: self.input_shape.clone(),
            num_classes: self.num_classes,
        }
    }
}

/// Inputs and labels only. There is no domain accessor by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainView {
    x: Vec<f64>,
    y: Vec<usize>,
    input_shape: Vec<usize>,
    num_classes: usize,
}

impl TrainView {
    pub fn new(x: Vec<f64>, y: Vec<usize>, input_shape: Vec<usize>, num_classes: usize) -> Result<Self> {
        let width: usize = input_shape.iter().product();
        if width == 0 || x.len() != y.len() * width {
            return Err(Error::dim("train view", &[x.len()], &[y.len(), width]));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Index {
                index: bad,
                limit: num_classes,
            });
        }
        Ok(TrainView {
            x,
            y,
            input_shape,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn width(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.x[i * w..(i + 1) * w]
    }

    pub fn subset(&self, indices: &[usize]) -> TrainView {
        let mut x = Vec::with_capacity(indices.len() * self.width());
        for &i in indices {
            x.extend_from_slice(self.row(i));
        }
        TrainView {
            x,
            y: indices.iter().map(|&i| self.y[i]).collect(),
            input_shape: self.input_shape.clone(),
            num_classes: self.num_classes,
        }
    }

    /// Random (train, validation) split with `floor(fraction·N)` validation
    /// rows.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> Result<(TrainView, TrainView)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Config(format!("holdout fraction must lie in [0, 1), got {fraction}")));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::stream(seed, rng::Stream::Holdout));
        let n_val = (fraction * self.len() as f64).floor() as usize;
        let (val, train) = order.split_at(n_val);
        let mut train = train.to_vec();
        let mut val = val.to_vec();
        train.sort_unstable();
        val.sort_unstable();
        Ok((self.subset(&train), self.subset(&val)))
    }
}

/// A minibatch: row-major inputs with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Vec<f64>,
    pub y: Vec<usize>,
    width: usize,
}

impl Batch {
    pub fn new(x: Vec<f64>, y: Vec<usize>, width: usize) -> Result<Self> {
        if width == 0 || x.len() != y.len() * width {
            return Err(Error::dim("batch", &[x.len()], &[y.len(), width]));
        }
        Ok(Batch { x, y, width })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.width..(i + 1) * self.width]
    }

    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }
}
