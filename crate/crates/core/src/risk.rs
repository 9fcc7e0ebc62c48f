//! Empirical and population risks with their exact gradients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Result};
use crate::linalg::{compensated_sum, gram};
use crate::model::{discrepancy, Discrepancy, Moments, Network, StudentWeights, TeacherModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub value: f64,
    #[serde(rename = "lower")]
    pub lower_bound: Option<f64>,
    #[serde(rename = "upper")]
    pub upper_bound: Option<f64>,
    #[serde(rename = "grad_norm")]
    pub gradient_norm: Option<f64>,
}

impl RiskReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

/// `f(W; X_i) − Y_i` for every sample.
pub fn empirical_residuals<N: Network + ?Sized>(student: &N, dataset: &Dataset) -> Result<DVector<f64>> {
    let labels = dataset.require_labels()?;
    check_dim(dataset.d(), student.input_dim(), "student input dimension")?;
    Ok(student.forward_batch(dataset.inputs())? - labels)
}

/// `(1/N) Σ_i (Y_i − f(W; X_i))²`.
pub fn empirical_risk<N: Network + ?Sized>(student: &N, dataset: &Dataset) -> Result<f64> {
    let r = empirical_residuals(student, dataset)?;
    if r.is_empty() {
        return Ok(0.0);
    }
    Ok(compensated_sum(r.iter().map(|v| v * v)) / r.len() as f64)
}

/// `W · (4/N) Σ_i r_i X_i X_iᵀ` with `r_i = f(W; X_i) − Y_i`.
pub fn empirical_gradient(student: &StudentWeights, dataset: &Dataset) -> Result<DMatrix<f64>> {
    let r = empirical_residuals(student, dataset)?;
    let n = dataset.n();
    if n == 0 {
        return Ok(DMatrix::zeros(student.m(), student.d()));
    }
    let x = dataset.inputs();
    // Row i of Z is (W X_i)ᵀ, so Zᵀ diag(r) X = Σ_i r_i (W X_i) X_iᵀ.
    let mut z = x * student.weights().transpose();
    for (i, ri) in r.iter().enumerate() {
        z.row_mut(i).scale_mut(*ri);
    }
    Ok(z.tr_mul(x) * (4.0 / n as f64))
}

/// Closed-form `E[(XᵀAX)²]` for i.i.d. centered coordinates, with the
/// `min/max{μ₄−μ₂², 2μ₂²}` sandwich.
pub fn population_risk(disc: &Discrepancy, moments: &Moments) -> RiskReport {
    let a = disc.matrix();
    let d = a.nrows();
    let mu2sq = moments.mu2 * moments.mu2;
    let trace = compensated_sum((0..d).map(|i| a[(i, i)]));
    let diag_sq = compensated_sum((0..d).map(|i| a[(i, i)] * a[(i, i)]));
    let off_sq = compensated_sum(
        (0..d).flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| a[(i, j)] * a[(i, j)])),
    );
    let trace_sq = trace * trace;
    let frob_sq = diag_sq + off_sq;
    // μ₂²tr(A)² + 2μ₂²tr(A²) + (μ₄−3μ₂²)tr(A∘A), regrouped into non-negative terms.
    let value = mu2sq * trace_sq + 2.0 * mu2sq * off_sq + moments.var_sq * diag_sq;
    RiskReport {
        value,
        lower_bound: Some(mu2sq * trace_sq + moments.c_lower * frob_sq),
        upper_bound: Some(mu2sq * trace_sq + moments.c_upper * frob_sq),
        gradient_norm: None,
    }
}

pub fn population_risk_of(
    student: &StudentWeights,
    teacher: &TeacherModel,
    moments: &Moments,
) -> Result<RiskReport> {
    Ok(population_risk(&discrepancy(teacher, student)?, moments))
}

/// `∇L(W) = 4[(μ₄−3μ₂²)W(D−D*) + μ₂²(‖W‖_F²−‖W*‖_F²)W + 2μ₂²W(WᵀW−(W*)ᵀW*)]`,
/// where `D`, `D*` are the diagonal parts of the two Grams.
pub fn population_gradient(
    student: &StudentWeights,
    teacher: &TeacherModel,
    moments: &Moments,
) -> Result<DMatrix<f64>> {
    check_dim(teacher.d(), student.d(), "student input dimension")?;
    let w = student.weights();
    // S = −A = WᵀW − (W*)ᵀW*
    let s = gram(w) - teacher.gram();
    let d = s.nrows();
    let mu2sq = moments.mu2 * moments.mu2;
    let trace = compensated_sum((0..d).map(|i| s[(i, i)]));
    let mut inner = s.clone() * (2.0 * mu2sq);
    for i in 0..d {
        inner[(i, i)] += mu2sq * trace + moments.excess() * s[(i, i)];
    }
    Ok(w * inner * 4.0)
}

/// The risk being minimized: closed-form population risk, or empirical risk
/// on a labeled dataset.
///
/// `moments` are the coordinate moments used for barrier constants. For the
/// empirical objective they should be the truncated moments of the data law
/// (see [`crate::landscape::empirical_barrier_moments`]).
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    Population { moments: Moments },
    Empirical { dataset: &'a Dataset, moments: Moments },
}

impl<'a> Objective<'a> {
    pub fn moments(&self) -> &Moments {
        match self {
            Objective::Population { moments } | Objective::Empirical { moments, .. } => moments,
        }
    }

    pub fn is_empirical(&self) -> bool {
        matches!(self, Objective::Empirical { .. })
    }

    pub fn risk(&self, student: &StudentWeights, teacher: &TeacherModel) -> Result<f64> {
        match self {
            Objective::Population { moments } => Ok(population_risk_of(student, teacher, moments)?.value),
            Objective::Empirical { dataset, .. } => empirical_risk(student, dataset),
        }
    }

    pub fn gradient(&self, student: &StudentWeights, teacher: &TeacherModel) -> Result<DMatrix<f64>> {
        match self {
            Objective::Population { moments } => population_gradient(student, teacher, moments),
            Objective::Empirical { dataset, .. } => empirical_gradient(student, dataset),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::label_dataset;

    fn scalar_dataset() -> Dataset {
        let ds = Dataset::from_inputs(DMatrix::from_row_slice(2, 1, &[1.0, 2.0]), "manual", 0).unwrap();
        let t = TeacherModel::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
        label_dataset(&ds, &t).unwrap()
    }

    #[test]
    fn hand_evaluated_empirical_risk() {
        // Y_i = X_i², residual of W = 0 is Y itself: (1² + 4²)/2.
        let ds = scalar_dataset();
        assert_eq!(ds.labels().unwrap().as_slice(), &[1.0, 4.0]);
        let w = StudentWeights::zeros(1, 1);
        assert_eq!(empirical_risk(&w, &ds).unwrap(), 8.5);
    }

    #[test]
    fn teacher_has_zero_risk_and_gradient() {
        let ds = scalar_dataset();
        let w = StudentWeights::new(DMatrix::from_element(1, 1, -1.0)).unwrap();
        assert_eq!(empirical_risk(&w, &ds).unwrap(), 0.0);
        assert_eq!(empirical_gradient(&w, &ds).unwrap(), DMatrix::zeros(1, 1));
    }

    #[test]
    fn unlabeled_dataset_rejected() {
        let ds = Dataset::from_inputs(DMatrix::from_row_slice(1, 1, &[1.0]), "manual", 0).unwrap();
        let w = StudentWeights::zeros(1, 1);
        assert!(matches!(empirical_risk(&w, &ds), Err(crate::Error::Unlabeled)));
        assert!(empirical_gradient(&w, &ds).is_err());
    }

    #[test]
    fn zero_discrepancy() {
        let r = population_risk(
            &Discrepancy::new(DMatrix::zeros(3, 3)).unwrap(),
            &Moments::gaussian(),
        );
        assert_eq!((r.value, r.lower_bound, r.upper_bound), (0.0, Some(0.0), Some(0.0)));
    }

    #[test]
    fn gaussian_bounds_coincide() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 2.0]);
        let r = population_risk(&Discrepancy::new(a.clone()).unwrap(), &Moments::gaussian());
        let expected = 9.0 + 2.0 * (1.0 + 0.25 + 0.25 + 4.0);
        assert!((r.value - expected).abs() < 1e-12);
        assert_eq!(r.lower_bound, Some(r.value));
        assert_eq!(r.upper_bound, Some(r.value));
    }

    #[test]
    fn teacher_is_population_stationary() {
        let t = TeacherModel::new(DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.3, 0.8, 0.5, 0.5])).unwrap();
        let m = Moments::new(1.0, 1.8).unwrap();
        let g = population_gradient(&StudentWeights::from(&t), &t, &m).unwrap();
        assert!(g.amax() < 1e-14);
    }

    #[test]
    fn report_json_field_names() {
        let r = RiskReport {
            value: 1.0,
            lower_bound: Some(0.5),
            upper_bound: None,
            gradient_norm: Some(2.0),
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["value"], 1.0);
        assert_eq!(v["lower"], 0.5);
        assert!(v["upper"].is_null());
        assert_eq!(v["grad_norm"], 2.0);
    }
}
