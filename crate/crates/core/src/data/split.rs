use super::{DomainDataset, TrainView};
use crate::error::{Error, Result};

/// One leave-one-domain-out fold.
#[derive(Debug, Clone)]
pub struct LodoSplit {
    /// Source rows with the domain column removed; the only thing training sees.
    pub train: TrainView,
    /// The same source rows with domain tags, for analysis exports.
    pub train_held: DomainDataset,
    /// Every row of the target domain.
    pub test: DomainDataset,
}

pub fn leave_one_domain_out(ds: &DomainDataset, target: &str) -> Result<LodoSplit> {
    if ds.domain_names().len() < 2 {
        return Err(Error::Config(format!(
            "leave-one-domain-out needs at least 2 domains, dataset has {}",
            ds.domain_names().len()
        )));
    }
    let target_idx = ds
        .domain_names()
        .iter()
        .position(|d| d == target)
        .ok_or_else(|| Error::Config(format!("unknown target domain {target:?}")))?;
    let (test_rows, train_rows): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| ds.domain_indices()[i] == target_idx);
    let train_held = ds.subset(&train_rows);
    Ok(LodoSplit {
        train: train_held.train_view(),
        train_held,
        test: ds.subset(&test_rows),
    })
}
