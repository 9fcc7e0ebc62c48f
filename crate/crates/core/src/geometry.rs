//! Tensorized sample geometry.
//!
//! A sample `X` maps to the row `(X₁², …, X_d², X_k·X_ℓ for k<ℓ)` of the
//! `N×d(d+1)/2` design `Ξ`, and a symmetric `M` maps to the vector
//! `(M₁₁, …, M_dd, 2M_kℓ for k<ℓ)`, so `⟨row, vec(M)⟩ = XᵀMX`. Off-diagonal
//! pairs are ordered lexicographically. Whether the `X_iX_iᵀ` span all
//! symmetric matrices is the rank of `Ξ`.

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::data::{label_dataset, Dataset};
use crate::error::{check_dim, Error, Result};
use crate::landscape::embed_gram;
use crate::linalg::{self, eigenvalues_ascending, spectral_norm_sym};
use crate::model::{Moments, Network, StudentWeights, TeacherModel};
use crate::risk::{empirical_risk, population_risk_of};

/// Relative singular-value threshold for the rank of `Ξ`, scaled by
/// `σ_max·max(N, D)`.
pub const DESIGN_RANK_TOL: f64 = 1e-10;

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// `N* = d(d+1)/2`.
pub fn critical_sample_count(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Index pairs `(k, ℓ)` in column order: diagonal first, then `k<ℓ` lexicographic.
pub fn column_pairs(d: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..d).map(|k| (k, k)).collect();
    for k in 0..d {
        for l in k + 1..d {
            pairs.push((k, l));
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorizedDesign {
    pub xi: DMatrix<f64>,
    pub d: usize,
}

impl TensorizedDesign {
    pub fn n(&self) -> usize {
        self.xi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.xi.ncols()
    }

    /// `Ξ·vec(M)`, i.e. the vector of `X_iᵀMX_i`.
    pub fn apply(&self, v: &SymVector) -> DVector<f64> {
        &self.xi * &v.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymVector(pub DVector<f64>);

impl SymVector {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let d = m.nrows();
        let v = column_pairs(d).into_iter().map(|(k, l)| {
            if k == l {
                m[(k, k)]
            } else {
                m[(k, l)] + m[(l, k)]
            }
        });
        SymVector(DVector::from_iterator(critical_sample_count(d), v))
    }

    pub fn to_matrix(&self, d: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(d, d);
        for (c, (k, l)) in column_pairs(d).into_iter().enumerate() {
            if k == l {
                m[(k, k)] = self.0[c];
            } else {
                m[(k, l)] = 0.5 * self.0[c];
                m[(l, k)] = 0.5 * self.0[c];
            }
        }
        m
    }
}

pub fn sym_vector(m: &DMatrix<f64>) -> SymVector {
    SymVector::from_matrix(m)
}

pub fn tensorize_inputs(inputs: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = inputs.shape();
    let pairs = column_pairs(d);
    DMatrix::from_fn(n, pairs.len(), |i, c| {
        let (k, l) = pairs[c];
        inputs[(i, k)] * inputs[(i, l)]
    })
}

pub fn tensorize(dataset: &Dataset) -> TensorizedDesign {
    TensorizedDesign {
        xi: tensorize_inputs(dataset.inputs()),
        d: dataset.d(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanReport {
    pub rank: usize,
    pub dim: usize,
    pub spans: bool,
}

/// Numerical rank of `Ξ` (after diagonal equilibration) against
/// `D = d(d+1)/2`.
pub fn spans_symmetric(dataset: &Dataset) -> SpanReport {
    design_rank(&tensorize(dataset))
}

pub fn design_rank(design: &TensorizedDesign) -> SpanReport {
    let rank = linalg::equilibrated_rank(&design.xi, DESIGN_RANK_TOL);
    let dim = design.dim();
    SpanReport {
        rank,
        dim,
        spans: rank == dim,
    }
}

/// Symbolic certificate that the prime construction spans: every tensorized
/// node `p_k·p_ℓ` has a distinct exponent vector, plus the exact rank of the
/// integer design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimeCertificate {
    pub d: usize,
    pub n: usize,
    pub primes: Vec<u64>,
    /// Exponent vector of each tensorized node, in column order.
    pub exponents: Vec<Vec<u8>>,
    pub distinct_nodes: bool,
    pub exact_rank: usize,
    pub dim: usize,
    pub spans: bool,
}

fn check_prime_dims(d: usize, n: usize) -> Result<()> {
    if d == 0 || d > PRIMES.len() {
        return Err(Error::InvalidArgument(format!(
            "prime construction supports 1 <= d <= {}, got d={d}; larger d exceeds the exact \
             integer path, use random gaussian data instead",
            PRIMES.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("prime construction needs n >= 1".into()));
    }
    let largest = (PRIMES[d - 1] as f64).powi(n as i32 - 1);
    if !largest.is_finite() || largest > 1e150 {
        return Err(Error::InvalidArgument(format!(
            "n={n} overflows the floating-point rendering of the prime construction"
        )));
    }
    Ok(())
}

/// Rows `X_t = (p₁^{t−1}, …, p_d^{t−1})` for `t = 1..n` with the first `d`
/// primes.
pub fn prime_vandermonde_data(d: usize, n: usize) -> Result<Dataset> {
    check_prime_dims(d, n)?;
    let inputs = DMatrix::from_fn(n, d, |t, k| (PRIMES[k] as f64).powi(t as i32));
    Dataset::from_inputs(inputs, "prime-vandermonde", 0)
}

pub fn prime_span_certificate(d: usize, n: usize) -> Result<PrimeCertificate> {
    check_prime_dims(d, n)?;
    let pairs = column_pairs(d);
    let exponents: Vec<Vec<u8>> = pairs
        .iter()
        .map(|&(k, l)| {
            let mut e = vec![0u8; d];
            e[k] += 1;
            e[l] += 1;
            e
        })
        .collect();
    let mut sorted = exponents.clone();
    sorted.sort();
    sorted.dedup();
    let distinct_nodes = sorted.len() == exponents.len();

    // Exact design over the integers: entry (t, c) = node_c^t.
    let nodes: Vec<BigInt> = pairs
        .iter()
        .map(|&(k, l)| BigInt::from(PRIMES[k]) * BigInt::from(PRIMES[l]))
        .collect();
    let mut rows = Vec::with_capacity(n);
    let mut power: Vec<BigInt> = vec![BigInt::one(); nodes.len()];
    for _ in 0..n {
        rows.push(power.clone());
        for (p, v) in power.iter_mut().zip(&nodes) {
            *p = &*p * v;
        }
    }
    let exact_rank = bareiss_rank(rows);
    let dim = pairs.len();
    Ok(PrimeCertificate {
        d,
        n,
        primes: PRIMES[..d].to_vec(),
        exponents,
        distinct_nodes,
        exact_rank,
        dim,
        spans: exact_rank == dim,
    })
}

/// Rank via fraction-free Gaussian elimination over the integers.
fn bareiss_rank(mut a: Vec<Vec<BigInt>>) -> usize {
    let rows = a.len();
    if rows == 0 {
        return 0;
    }
    let cols = a[0].len();
    let mut prev = BigInt::one();
    let mut rank = 0;
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let Some(pivot) = (rank..rows).find(|&r| !a[r][col].is_zero()) else {
            continue;
        };
        a.swap(rank, pivot);
        for r in rank + 1..rows {
            for c in col + 1..cols {
                let v = (&a[rank][col] * &a[r][c] - &a[r][col] * &a[rank][c]) / &prev;
                a[r][c] = v;
            }
            a[r][col] = BigInt::zero();
        }
        prev = a[rank][col].clone();
        rank += 1;
    }
    rank
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCertificate {
    pub empirical_risk: f64,
    pub empirical_tolerance: f64,
    pub population_risk: f64,
    pub population_lower_bound: f64,
    /// `max_i |X_iᵀMX_i|` for the unit null direction.
    pub max_quadratic_form: f64,
    pub null_spectral_norm: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullInterpolation {
    pub student: StudentWeights,
    pub delta: f64,
    pub null_direction: DMatrix<f64>,
    pub certificate: InterpolationCertificate,
}

/// A student that interpolates a dataset whose `X_iX_iᵀ` do not span the
/// symmetric matrices, yet has population risk at least
/// `min{μ₄−μ₂², 2μ₂²}·σ_min(W*)⁴`.
///
/// The student's Gram is `(W*)ᵀW* + δM` where `M` is the least right
/// singular vector of `Ξ` read as a symmetric matrix and scaled to spectral
/// norm 1, and `δ` defaults to `σ_min(W*)²`.
pub fn null_interpolator(
    teacher: &TeacherModel,
    dataset: &Dataset,
    target_rows: usize,
    moments: &Moments,
    delta: Option<f64>,
) -> Result<NullInterpolation> {
    check_dim(teacher.d(), dataset.d(), "teacher input dimension")?;
    require_pure_quadratic(teacher)?;
    teacher.require_full_rank()?;
    let d = teacher.d();
    let design = tensorize(dataset);
    let span = design_rank(&design);
    if span.spans {
        return Err(Error::NoNullDirection {
            rank: span.rank,
            dim: span.dim,
        });
    }
    let sigma_min = teacher.sigma_min();
    let delta = match delta {
        None => sigma_min * sigma_min,
        Some(v) if v > 0.0 && v <= sigma_min * sigma_min => v,
        Some(v) => {
            return Err(Error::InvalidArgument(format!(
                "delta must lie in (0, sigma_min^2 = {}], got {v}",
                sigma_min * sigma_min
            )))
        }
    };

    let direction = least_singular_direction(&design.xi);
    let raw = SymVector(direction).to_matrix(d);
    let m = &raw / spectral_norm_sym(&raw);
    let student = embed_gram(&(teacher.gram() + &m * delta), target_rows)?;

    let labeled = match dataset.labels() {
        Some(_) => dataset.clone(),
        None => label_dataset(dataset, teacher)?,
    };
    let empirical = empirical_risk(&student, &labeled)?;
    let label_scale = match labeled.labels() {
        Some(y) if !y.is_empty() => y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64,
        _ => 0.0,
    };
    let empirical_tolerance = 1e-10 * label_scale.max(1.0);
    let population = population_risk_of(&student, teacher, moments)?.value;
    let lower = moments.c_lower * sigma_min.powi(4);
    let max_quadratic_form = design.apply(&sym_vector(&m)).amax();
    let certificate = InterpolationCertificate {
        empirical_risk: empirical,
        empirical_tolerance,
        population_risk: population,
        population_lower_bound: lower,
        max_quadratic_form,
        null_spectral_norm: spectral_norm_sym(&m),
        holds: empirical <= empirical_tolerance && population >= lower - 1e-9,
    };
    Ok(NullInterpolation {
        student,
        delta,
        null_direction: m,
        certificate,
    })
}

/// Right singular vector of the smallest singular value. Ξ is zero-padded to
/// at least `D` rows so the full right basis is available.
fn least_singular_direction(xi: &DMatrix<f64>) -> DVector<f64> {
    let (n, dim) = xi.shape();
    let mut padded = DMatrix::zeros(n.max(dim), dim);
    padded.rows_mut(0, n).copy_from(xi);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let idx = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("dim >= 1");
    v_t.row(idx).transpose()
}

fn require_pure_quadratic(teacher: &TeacherModel) -> Result<()> {
    if !teacher.activation().is_pure_quadratic() {
        return Err(Error::InvalidArgument(
            "Gram-level geometry needs the activation t ↦ t²".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramRecovery {
    /// Least-squares estimate of `WᵀW − (W*)ᵀW*`.
    pub m_hat: DMatrix<f64>,
    pub residual_norm: f64,
}

/// Recovers `WᵀW − (W*)ᵀW*` from the residuals `v_i = f(W; X_i) − Y_i`
/// by solving `Ξ·vec(M) = v` in least squares. Unlabeled datasets are
/// labeled with the teacher first.
pub fn recover_gram_discrepancy(
    dataset: &Dataset,
    student: &StudentWeights,
    teacher: &TeacherModel,
) -> Result<GramRecovery> {
    check_dim(teacher.d(), dataset.d(), "teacher input dimension")?;
    check_dim(teacher.d(), student.d(), "student input dimension")?;
    require_pure_quadratic(teacher)?;
    let design = tensorize(dataset);
    let span = design_rank(&design);
    if !span.spans {
        return Err(Error::IllPosed {
            rank: span.rank,
            dim: span.dim,
        });
    }
    let labels = match dataset.labels() {
        Some(y) => y.clone(),
        None => teacher.forward_batch(dataset.inputs())?,
    };
    let v = student.forward_batch(dataset.inputs())? - labels;
    let svd = design.xi.clone().svd(true, true);
    let s = svd
        .solve(&v, 0.0)
        .map_err(|e| Error::Contract(format!("least-squares solve failed: {e}")))?;
    let residual_norm = (&design.xi * &s - &v).norm();
    Ok(GramRecovery {
        m_hat: SymVector(s).to_matrix(dataset.d()),
        residual_norm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorizedCovariance {
    pub sigma_hat: DMatrix<f64>,
    pub min_eig: f64,
    pub max_eig: f64,
}

/// `(1/N) ΞᵀΞ` and its extreme eigenvalues.
pub fn tensorized_covariance(dataset: &Dataset) -> Result<TensorizedCovariance> {
    if dataset.n() == 0 {
        return Err(Error::InvalidArgument("covariance needs N >= 1".into()));
    }
    let xi = tensorize(dataset).xi;
    let sigma_hat = linalg::symmetrize(&(xi.tr_mul(&xi) / dataset.n() as f64));
    let eig = eigenvalues_ascending(&sigma_hat);
    Ok(TensorizedCovariance {
        min_eig: eig[0],
        max_eig: eig[eig.len() - 1],
        sigma_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_dataset;
    use crate::model::Distribution;

    fn manual(rows: &[&[f64]]) -> Dataset {
        let d = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Dataset::from_inputs(DMatrix::from_row_slice(rows.len(), d, &flat), "manual", 0).unwrap()
    }

    #[test]
    fn critical_counts() {
        assert_eq!(critical_sample_count(1), 1);
        assert_eq!(critical_sample_count(3), 6);
        assert_eq!(critical_sample_count(10), 55);
    }

    #[test]
    fn tensorize_examples() {
        let t = tensorize(&manual(&[&[1.0, 1.0], &[2.0, 3.0]]));
        assert_eq!(t.xi.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 1.0]);
        assert_eq!(t.xi.row(1).iter().copied().collect::<Vec<_>>(), vec![4.0, 9.0, 6.0]);
    }

    #[test]
    fn column_order_for_three_dims() {
        assert_eq!(
            column_pairs(3),
            vec![(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]
        );
    }

    #[test]
    fn sym_vector_round_trip() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let v = sym_vector(&m);
        assert_eq!(v.0.as_slice(), &[1.0, 4.0, 6.0, 4.0, 6.0, 10.0]);
        assert_eq!(v.to_matrix(3), m);
    }

    #[test]
    fn span_examples() {
        let g = Distribution::standard_gaussian();
        assert!(!spans_symmetric(&sample_dataset(&g, 2, 2, 1).unwrap()).spans);
        let r = spans_symmetric(&sample_dataset(&g, 3, 2, 1).unwrap());
        assert!(r.spans && r.rank == 3);
        let dup = spans_symmetric(&manual(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]));
        assert_eq!(dup.rank, 1);
        assert!(!dup.spans);
    }

    #[test]
    fn prime_rows_for_two_dims() {
        let ds = prime_vandermonde_data(2, 3).unwrap();
        assert_eq!(ds.inputs(), &DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 3.0, 4.0, 9.0]));
        let row = tensorize(&ds).xi.row(1).iter().copied().collect::<Vec<_>>();
        assert_eq!(row, vec![4.0, 9.0, 6.0]);
    }

    #[test]
    fn prime_certificates() {
        for d in 1..=8 {
            let n = critical_sample_count(d);
            let c = prime_span_certificate(d, n).unwrap();
            assert!(c.distinct_nodes && c.spans, "d={d}");
            assert_eq!(c.exact_rank, n);
        }
        let short = prime_span_certificate(3, 5).unwrap();
        assert_eq!(short.exact_rank, 5);
        assert!(!short.spans);
        assert!(prime_vandermonde_data(9, 3).is_err());
        assert!(prime_span_certificate(0, 3).is_err());
    }

    #[test]
    fn prime_numerical_rank_three_dims() {
        let ds = prime_vandermonde_data(3, 6).unwrap();
        assert!(spans_symmetric(&ds).spans);
    }

    #[test]
    fn bareiss_matches_small_cases() {
        let m = |rows: &[&[i64]]| {
            rows.iter()
                .map(|r| r.iter().map(|&v| BigInt::from(v)).collect())
                .collect::<Vec<Vec<BigInt>>>()
        };
        assert_eq!(bareiss_rank(m(&[&[1, 2], &[2, 4]])), 1);
        assert_eq!(bareiss_rank(m(&[&[0, 1], &[1, 0]])), 2);
        assert_eq!(bareiss_rank(m(&[&[0, 0], &[0, 0]])), 0);
        assert_eq!(bareiss_rank(m(&[&[1, 2, 3], &[4, 5, 6], &[7, 8, 9]])), 2);
    }

    #[test]
    fn interpolator_on_empty_data() {
        let t = TeacherModel::new(DMatrix::identity(2, 2)).unwrap();
        let ds = Dataset::from_inputs(DMatrix::zeros(0, 2), "empty", 0).unwrap();
        let out = null_interpolator(&t, &ds, 2, &Moments::gaussian(), None).unwrap();
        assert!(out.certificate.holds);
        assert!((out.certificate.null_spectral_norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interpolator_rejects_spanning_data() {
        let t = TeacherModel::new(DMatrix::identity(2, 2)).unwrap();
        let ds = sample_dataset(&Distribution::standard_gaussian(), 6, 2, 4).unwrap();
        assert!(matches!(
            null_interpolator(&t, &ds, 2, &Moments::gaussian(), None),
            Err(Error::NoNullDirection { .. })
        ));
    }

    #[test]
    fn interpolator_delta_tracks_scale() {
        let ds = sample_dataset(&Distribution::standard_gaussian(), 2, 2, 9).unwrap();
        for &s in &[0.5, 2.0] {
            let t = TeacherModel::new(DMatrix::identity(2, 2) * s).unwrap();
            let out = null_interpolator(&t, &ds, 3, &Moments::gaussian(), None).unwrap();
            assert!((out.delta - s * s).abs() < 1e-12);
            assert!(out.certificate.holds);
        }
    }

    #[test]
    fn recovery_requires_span() {
        let t = TeacherModel::new(DMatrix::identity(2, 2)).unwrap();
        let ds = sample_dataset(&Distribution::standard_gaussian(), 2, 2, 4).unwrap();
        let s = StudentWeights::zeros(2, 2);
        assert!(matches!(
            recover_gram_discrepancy(&ds, &s, &t),
            Err(Error::IllPosed { .. })
        ));
    }

    #[test]
    fn recovery_of_teacher_is_zero() {
        let t = TeacherModel::new(DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.2, 1.0, 0.3, 0.3])).unwrap();
        let ds = sample_dataset(&Distribution::standard_gaussian(), 9, 2, 4).unwrap();
        let r = recover_gram_discrepancy(&ds, &StudentWeights::from(&t), &t).unwrap();
        assert!(r.m_hat.amax() < 1e-12);
    }

    #[test]
    fn covariance_examples() {
        let one = manual(&[&[1.0]]);
        let c = tensorized_covariance(&one).unwrap();
        assert_eq!(c.sigma_hat, DMatrix::from_element(1, 1, 1.0));
        let dup = manual(&[&[1.0, 2.0], &[1.0, 2.0]]);
        let c = tensorized_covariance(&dup).unwrap();
        assert_eq!(linalg::column_rank(&c.sigma_hat), 1);
    }
}
