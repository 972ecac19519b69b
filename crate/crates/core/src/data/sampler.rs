use rand::Rng;

use super::{Batch, TrainView};
use crate::error::{Error, Result};
use crate::rng;

/// Endless stream of fixed-size batches in which every class count is at
/// least `min_ratio` times the largest class count.
///
/// Each batch starts as a uniform draw with replacement. While some class is
/// below the ratio, a uniformly chosen row of the current majority class is
/// replaced by a uniformly drawn training row of the deficient class.
#[derive(Debug)]
pub struct ClassBalancedBatches<'a> {
    view: &'a TrainView,
    pools: Vec<Vec<usize>>,
    batch_size: usize,
    min_ratio: f64,
    rng: rng::Rng,
}

pub fn class_balanced_batches(
    view: &TrainView,
    batch_size: usize,
    min_ratio: f64,
    seed: u64,
) -> Result<ClassBalancedBatches<'_>> {
    let c = view.num_classes();
    if batch_size < c {
        return Err(Error::Config(format!(
            "batch size {batch_size} cannot hold all {c} classes"
        )));
    }
    if !(min_ratio > 0.0 && min_ratio <= 1.0) {
        return Err(Error::Config(format!("min_ratio must lie in (0, 1], got {min_ratio}")));
    }
    // The most even split is the best any batch can do.
    let (lo, hi) = (batch_size / c, batch_size.div_ceil(c));
    if (lo as f64) < min_ratio * hi as f64 {
        return Err(Error::Config(format!(
            "min_ratio {min_ratio} is unreachable with batch size {batch_size} and {c} classes"
        )));
    }
    let mut pools = vec![Vec::new(); c];
    for (i, &y) in view.labels().iter().enumerate() {
        pools[y].push(i);
    }
    if let Some(empty) = pools.iter().position(Vec::is_empty) {
        return Err(Error::Config(format!("class {empty} has no training samples")));
    }
    Ok(ClassBalancedBatches {
        view,
        pools,
        batch_size,
        min_ratio,
        rng: rng::stream(seed, rng::Stream::Batches),
    })
}

impl ClassBalancedBatches<'_> {
    fn deficient(&self, counts: &[usize]) -> Option<usize> {
        let max = *counts.iter().max().unwrap_or(&0) as f64;
        counts
            .iter()
            .enumerate()
            .filter(|(_, &n)| (n as f64) < self.min_ratio * max)
            .min_by_key(|(_, &n)| n)
            .map(|(c, _)| c)
    }

    /// Row indices of the next batch.
    pub fn next_indices(&mut self) -> Vec<usize> {
        let n = self.view.len();
        let mut rows: Vec<usize> = (0..self.batch_size).map(|_| self.rng.random_range(0..n)).collect();
        let labels = self.view.labels();
        let mut counts = vec![0usize; self.pools.len()];
        for &r in &rows {
            counts[labels[r]] += 1;
        }
        while let Some(short) = self.deficient(&counts) {
            let majority = (0..counts.len()).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
            let slots: Vec<usize> = (0..rows.len()).filter(|&s| labels[rows[s]] == majority).collect();
            let slot = slots[self.rng.random_range(0..slots.len())];
            let pool = &self.pools[short];
            rows[slot] = pool[self.rng.random_range(0..pool.len())];
            counts[majority] -= 1;
            counts[short] += 1;
        }
        rows
    }
}

impl Iterator for ClassBalancedBatches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let rows = self.next_indices();
        let mut x = Vec::with_capacity(rows.len() * self.view.width());
        for &r in &rows {
            x.extend_from_slice(self.view.row(r));
        }
        let y = rows.iter().map(|&r| self.view.labels()[r]).collect();
        Some(Batch::new(x, y, self.view.width()).expect("rows have the view's width"))
    }
}
