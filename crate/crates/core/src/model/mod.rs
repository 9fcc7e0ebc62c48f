//! Teacher and student networks `x ↦ Σ_j a_j σ(⟨W_j, x⟩)` with
//! `σ(t) = αt² + βt + γ`, the teacher-minus-student Gram discrepancy, and
//! coordinate-law moments.

mod distribution;

pub use distribution::{moments_of, truncated_moments, Distribution, Moments};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// `σ(t) = alpha·t² + beta·t + gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for Activation {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
        }
    }
}

impl Activation {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && gamma.is_finite()) {
            return Err(Error::InvalidArgument("non-finite activation".into()));
        }
        if alpha == 0.0 {
            return Err(Error::InvalidArgument(
                "activation needs a non-zero quadratic coefficient".into(),
            ));
        }
        Ok(Self { alpha, beta, gamma })
    }

    #[inline]
    pub fn apply(&self, t: f64) -> f64 {
        (self.alpha * t + self.beta) * t + self.gamma
    }

    pub fn is_pure_quadratic(&self) -> bool {
        *self == Self::default()
    }
}

/// Anything that evaluates as a one-hidden-layer quadratic network.
pub trait Network {
    fn weights(&self) -> &DMatrix<f64>;

    fn activation(&self) -> Activation {
        Activation::default()
    }

    fn output_weight(&self, _neuron: usize) -> f64 {
        1.0
    }

    fn input_dim(&self) -> usize {
        self.weights().ncols()
    }

    fn forward(&self, x: &[f64]) -> Result<f64> {
        let w = self.weights();
        check_dim(w.ncols(), x.len(), "input vector")?;
        let act = self.activation();
        let mut acc = linalg::CompensatedSum::default();
        for j in 0..w.nrows() {
            let pre: f64 = w.row(j).iter().zip(x).map(|(a, b)| a * b).sum();
            acc.add(self.output_weight(j) * act.apply(pre));
        }
        Ok(acc.value())
    }

    /// Outputs for every row of an `N×d` input matrix.
    fn forward_batch(&self, inputs: &DMatrix<f64>) -> Result<DVector<f64>> {
        let w = self.weights();
        check_dim(w.ncols(), inputs.ncols(), "input columns")?;
        let pre = inputs * w.transpose();
        let act = self.activation();
        let out = DVector::from_iterator(
            inputs.nrows(),
            (0..inputs.nrows()).map(|i| {
                linalg::compensated_sum(
                    pre.row(i)
                        .iter()
                        .enumerate()
                        .map(|(j, &t)| self.output_weight(j) * act.apply(t)),
                )
            }),
        );
        Ok(out)
    }
}

pub fn forward<N: Network + ?Sized>(model: &N, x: &[f64]) -> Result<f64> {
    model.forward(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherModel {
    weights: DMatrix<f64>,
    activation: Activation,
    output_weights: Option<DVector<f64>>,
}

impl TeacherModel {
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite teacher weight".into()));
        }
        if weights.ncols() == 0 {
            return Err(Error::InvalidArgument("teacher needs d >= 1".into()));
        }
        Ok(Self {
            weights,
            activation: Activation::default(),
            output_weights: None,
        })
    }

    pub fn with_activation(mut self, activation: Activation) -> Result<Self> {
        self.activation = Activation::new(activation.alpha, activation.beta, activation.gamma)?;
        Ok(self)
    }

    pub fn with_output_weights(mut self, a: DVector<f64>) -> Result<Self> {
        check_dim(self.weights.nrows(), a.len(), "output weights")?;
        if let Some(bad) = a.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "output weights must be strictly positive, got {bad}"
            )));
        }
        self.output_weights = Some(a);
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.weights.nrows()
    }

    pub fn d(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_weights(&self) -> Option<&DVector<f64>> {
        self.output_weights.as_ref()
    }

    /// `Σ_j a_j W_j W_jᵀ`.
    pub fn gram(&self) -> DMatrix<f64> {
        linalg::gram(&self.effective_weights())
    }

    pub fn sigma_min(&self) -> f64 {
        linalg::sigma_min(&self.effective_weights())
    }

    pub fn is_full_rank(&self) -> bool {
        linalg::is_full_column_rank(&self.effective_weights())
    }

    /// Weights with output weights folded into the rows.
    pub fn effective_weights(&self) -> DMatrix<f64> {
        match &self.output_weights {
            None => self.weights.clone(),
            Some(a) => {
                let mut w = self.weights.clone();
                for (j, aj) in a.iter().enumerate() {
                    w.row_mut(j).scale_mut(aj.sqrt());
                }
                w
            }
        }
    }

    pub(crate) fn require_full_rank(&self) -> Result<()> {
        if self.m() < self.d() || !self.is_full_rank() {
            return Err(Error::InvalidArgument(format!(
                "teacher must have rank d={} (sigma_min={:e})",
                self.d(),
                self.sigma_min()
            )));
        }
        Ok(())
    }
}

impl Network for TeacherModel {
    fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    fn activation(&self) -> Activation {
        self.activation
    }

    fn output_weight(&self, neuron: usize) -> f64 {
        self.output_weights.as_ref().map_or(1.0, |a| a[neuron])
    }
}

/// A student weight matrix with default activation and unit output weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentWeights {
    weights: DMatrix<f64>,
}

impl StudentWeights {
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("student weights".into()));
        }
        Ok(Self { weights })
    }

    pub fn zeros(m: usize, d: usize) -> Self {
        Self {
            weights: DMatrix::zeros(m, d),
        }
    }

    pub fn m(&self) -> usize {
        self.weights.nrows()
    }

    pub fn d(&self) -> usize {
        self.weights.ncols()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        linalg::gram(&self.weights)
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.weights
    }

    pub fn sigma_min(&self) -> f64 {
        linalg::sigma_min(&self.weights)
    }

    pub fn is_full_rank(&self) -> bool {
        linalg::is_full_column_rank(&self.weights)
    }
}

impl Network for StudentWeights {
    fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }
}

impl From<&TeacherModel> for StudentWeights {
    /// Drops activation coefficients; output weights are absorbed first.
    fn from(t: &TeacherModel) -> Self {
        Self {
            weights: t.effective_weights(),
        }
    }
}

/// `A = (W*)ᵀW* − WᵀW`, symmetric `d×d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    matrix: DMatrix<f64>,
}

impl Discrepancy {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidArgument(format!(
                "discrepancy must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("discrepancy".into()));
        }
        if linalg::relative_asymmetry(&matrix) > 1e-12 {
            return Err(Error::InvalidArgument(
                "discrepancy is not symmetric to 1e-12".into(),
            ));
        }
        Ok(Self {
            matrix: linalg::symmetrize(&matrix),
        })
    }

    pub fn from_grams(teacher_gram: &DMatrix<f64>, student_gram: &DMatrix<f64>) -> Result<Self> {
        check_dim(teacher_gram.nrows(), student_gram.nrows(), "gram dimension")?;
        Self::new(teacher_gram - student_gram)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

pub fn discrepancy(teacher: &TeacherModel, student: &StudentWeights) -> Result<Discrepancy> {
    check_dim(teacher.d(), student.d(), "student input dimension")?;
    Discrepancy::from_grams(&teacher.gram(), &student.gram())
}

/// Folds positive output weights into the rows: `W_j ← √a_j · W_j`.
pub fn absorb_output_weights(model: &TeacherModel) -> Result<TeacherModel> {
    let Some(a) = &model.output_weights else {
        return Ok(model.clone());
    };
    if let Some(bad) = a.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "output weights must be strictly positive, got {bad}"
        )));
    }
    if model.activation.beta != 0.0 || model.activation.gamma != 0.0 {
        // √a_j·(βt) and a_j·γ do not factor through the rows.
        return Err(Error::InvalidArgument(
            "output weights can only be absorbed under a homogeneous quadratic activation".into(),
        ));
    }
    Ok(TeacherModel {
        weights: model.effective_weights(),
        activation: model.activation,
        output_weights: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_forward() {
        let t = TeacherModel::new(DMatrix::identity(2, 2)).unwrap();
        assert_eq!(t.forward(&[1.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn zero_weights_output_gamma_per_neuron() {
        let t = TeacherModel::new(DMatrix::zeros(3, 2))
            .unwrap()
            .with_activation(Activation::new(1.0, 2.0, -0.5).unwrap())
            .unwrap();
        assert_eq!(t.forward(&[0.3, 4.0]).unwrap(), -1.5);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let s = StudentWeights::zeros(2, 3);
        assert!(matches!(
            s.forward(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn batch_matches_single() {
        let w = DMatrix::from_row_slice(3, 2, &[0.3, -1.0, 2.0, 0.5, -0.7, 0.1]);
        let t = TeacherModel::new(w)
            .unwrap()
            .with_activation(Activation::new(2.0, -1.0, 0.5).unwrap())
            .unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.25, 3.0]);
        let batch = t.forward_batch(&x).unwrap();
        for i in 0..2 {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            assert!((batch[i] - t.forward(&row).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn discrepancy_examples() {
        let t = TeacherModel::new(DMatrix::identity(2, 2)).unwrap();
        let same = StudentWeights::from(&t);
        assert_eq!(discrepancy(&t, &same).unwrap().matrix(), &DMatrix::zeros(2, 2));
        let zero = StudentWeights::zeros(2, 2);
        assert_eq!(
            discrepancy(&t, &zero).unwrap().matrix(),
            &DMatrix::identity(2, 2)
        );
        let wrong = StudentWeights::zeros(2, 3);
        assert!(discrepancy(&t, &wrong).is_err());
    }

    #[test]
    fn asymmetric_discrepancy_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(Discrepancy::new(m).is_err());
    }

    #[test]
    fn absorb_scalar_case() {
        let t = TeacherModel::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
            .unwrap()
            .with_output_weights(DVector::from_element(1, 4.0))
            .unwrap();
        assert_eq!(t.forward(&[1.0, 0.0]).unwrap(), 4.0);
        let a = absorb_output_weights(&t).unwrap();
        assert_eq!(a.weights(), &DMatrix::from_row_slice(1, 2, &[2.0, 0.0]));
        assert_eq!(a.forward(&[1.0, 0.0]).unwrap(), 4.0);
        assert!(a.output_weights().is_none());
    }

    #[test]
    fn absorb_without_weights_is_identity() {
        let t = TeacherModel::new(DMatrix::identity(3, 2)).unwrap();
        assert_eq!(absorb_output_weights(&t).unwrap(), t);
    }

    #[test]
    fn non_positive_output_weight_rejected() {
        let t = TeacherModel::new(DMatrix::identity(2, 2)).unwrap();
        assert!(t
            .clone()
            .with_output_weights(DVector::from_vec(vec![1.0, 0.0]))
            .is_err());
        assert!(t.with_output_weights(DVector::from_vec(vec![1.0, -2.0])).is_err());
    }

    #[test]
    fn zero_alpha_rejected() {
        assert!(Activation::new(0.0, 1.0, 0.0).is_err());
    }
}
