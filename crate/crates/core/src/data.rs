//! Seeded i.i.d. datasets and teacher labels.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{Distribution, Network, TeacherModel};
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    labels: Option<DVector<f64>>,
    tag: String,
    seed: u64,
}

impl Dataset {
    /// Wraps an `N×d` input matrix (rows are samples).
    pub fn from_inputs(inputs: DMatrix<f64>, tag: impl Into<String>, seed: u64) -> Result<Self> {
        if inputs.ncols() == 0 {
            return Err(Error::InvalidArgument("dataset needs d >= 1".into()));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset inputs".into()));
        }
        let tag = tag.into();
        if tag.chars().any(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!(
                "distribution tag {tag:?} contains whitespace"
            )));
        }
        Ok(Self {
            inputs,
            labels: None,
            tag,
            seed,
        })
    }

    pub fn with_labels(mut self, labels: DVector<f64>) -> Result<Self> {
        check_dim(self.n(), labels.len(), "labels")?;
        if labels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("labels".into()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn d(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> Option<&DVector<f64>> {
        self.labels.as_ref()
    }

    pub fn require_labels(&self) -> Result<&DVector<f64>> {
        self.labels.as_ref().ok_or(Error::Unlabeled)
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sample(&self, i: usize) -> Vec<f64> {
        self.inputs.row(i).iter().copied().collect()
    }

    /// `max_i ‖X_i‖_∞`.
    pub fn max_abs_entry(&self) -> f64 {
        self.inputs.amax()
    }
}

/// `n` i.i.d. rows of `d` i.i.d. coordinates, drawn row by row from the
/// ChaCha20 stream `(seed, 0)`.
pub fn sample_dataset(distribution: &Distribution, n: usize, d: usize, seed: u64) -> Result<Dataset> {
    sample_dataset_stream(distribution, n, d, seed, 0)
}

pub(crate) fn sample_dataset_stream(
    distribution: &Distribution,
    n: usize,
    d: usize,
    seed: u64,
    stream: u64,
) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "sample_dataset needs n >= 1 and d >= 1, got n={n}, d={d}"
        )));
    }
    distribution.validate()?;
    let mut rng = Stream::with_stream(seed, stream);
    let mut values = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        values.push(distribution.draw(&mut rng));
    }
    Dataset::from_inputs(
        DMatrix::from_row_slice(n, d, &values),
        distribution.to_string(),
        seed,
    )
}

/// Attaches `Y_i = f(W*; X_i)`.
pub fn label_dataset(dataset: &Dataset, teacher: &TeacherModel) -> Result<Dataset> {
    check_dim(teacher.d(), dataset.d(), "teacher input dimension")?;
    let labels = teacher.forward_batch(dataset.inputs())?;
    dataset.clone().with_labels(labels)
}
