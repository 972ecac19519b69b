use std::cell::Cell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with lineage recording switched off on the current thread.
///
/// Tensors produced inside carry no graph and can be shared freely.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Operation that produced a tensor, with whatever it needs for the pullback.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Affine,
    Relu,
    SoftmaxRows,
    LogSoftmaxRows,
    Pick(Vec<usize>),
    Sum,
    Mean,
    Scale(f64),
    Add,
    Sub,
    Mul,
    Square,
    AddRow,
    GatherRows(Vec<usize>),
    MeanRows,
    Conv1d { kernel: usize },
    GlobalAvgPool,
    Reshape,
}

#[derive(Debug)]
pub(crate) struct Lineage {
    pub(crate) op: Op,
    pub(crate) parents: Vec<Tensor>,
}

#[derive(Debug)]
struct Node {
    id: u64,
    shape: Vec<usize>,
    values: Vec<f64>,
    lineage: Option<Lineage>,
}

/// Dense row-major `f64` array with optional graph lineage.
///
/// Cloning is cheap and shares the underlying buffer; tensors are immutable.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl Tensor {
    /// Leaf tensor. Fails when the value count does not match the shape.
    pub fn new(values: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::dim("tensor", shape, &[values.len()]));
        }
        Ok(Self::build(values, shape.to_vec(), None))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::dim("from_rows", &[cols], &[bad.len()]));
        }
        Self::new(rows.concat(), &[rows.len(), cols])
    }

    pub fn vector(values: Vec<f64>) -> Self {
        let n = values.len();
        Self::build(values, vec![n], None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![value], vec![1], None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(vec![0.0; shape.iter().product()], shape.to_vec(), None)
    }

    pub(crate) fn build(values: Vec<f64>, shape: Vec<usize>, lineage: Option<Lineage>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            values,
            lineage,
        }))
    }

    /// Result of an operation; lineage is kept only while grad mode is on.
    pub(crate) fn from_op(values: Vec<f64>, shape: Vec<usize>, op: Op, parents: Vec<Tensor>) -> Self {
        let lineage = is_grad_enabled().then_some(Lineage { op, parents });
        Self::build(values, shape, lineage)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.values.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.values.len()
    }

    pub fn is_leaf(&self) -> bool {
        self.0.lineage.is_none()
    }

    pub(crate) fn lineage(&self) -> Option<&Lineage> {
        self.0.lineage.as_ref()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.0.values.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            ))),
        }
    }

    /// Leading dimension and the product of the rest.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape() {
            [] => (1, 1),
            [n] => (1, *n),
            [n, rest @ ..] => (*n, rest.iter().product()),
        }
    }

    /// Copy of this tensor's values with no lineage.
    pub fn detach(&self) -> Tensor {
        Self::build(self.to_vec(), self.shape().to_vec(), None)
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id())
            .field("shape", &self.shape())
            .field("values", &self.values())
            .field("leaf", &self.is_leaf())
            .finish()
    }
}

impl PartialEq for Tensor {
    /// Value equality: same shape and bit-identical entries.
    fn eq(&self, other: &Self) -> bool {
        self.shape() == other.shape()
            && self
                .values()
                .iter()
                .zip(other.values())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
