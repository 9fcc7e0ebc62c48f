//! Small dense linear-algebra helpers shared by every module.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative threshold below which a singular value counts as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// `WᵀW`, symmetrized so downstream eigen-solvers see an exactly symmetric input.
pub fn gram(w: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&w.tr_mul(w))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute asymmetry relative to the largest entry.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    if m.nrows() != m.ncols() {
        return f64::INFINITY;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() / scale
}

/// Singular values in descending order.
pub fn singular_values(w: &DMatrix<f64>) -> DVector<f64> {
    if w.is_empty() {
        return DVector::zeros(0);
    }
    let mut s = w.clone().singular_values();
    s.as_mut_slice()
        .sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// The `d`-th singular value of an `m×d` matrix; zero when `m < d`.
pub fn sigma_min(w: &DMatrix<f64>) -> f64 {
    let d = w.ncols();
    if d == 0 {
        return 0.0;
    }
    if w.nrows() < d {
        return 0.0;
    }
    let s = singular_values(w);
    s[d - 1]
}

pub fn sigma_max(w: &DMatrix<f64>) -> f64 {
    let s = singular_values(w);
    if s.is_empty() {
        0.0
    } else {
        s[0]
    }
}

/// Column rank is full iff `σ_min > 1e-10·max(1, σ_max)`.
pub fn is_full_column_rank(w: &DMatrix<f64>) -> bool {
    let d = w.ncols();
    if w.nrows() < d || d == 0 {
        return d == 0;
    }
    let s = singular_values(w);
    s[d - 1] > RANK_TOL * s[0].max(1.0)
}

/// Number of singular values above `1e-10·max(1, σ_max)`.
pub fn column_rank(w: &DMatrix<f64>) -> usize {
    let s = singular_values(w);
    if s.is_empty() {
        return 0;
    }
    let tol = RANK_TOL * s[0].max(1.0);
    s.iter().filter(|&&v| v > tol).count()
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted ascending.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn eigenvalues_ascending(m: &DMatrix<f64>) -> DVector<f64> {
    let mut v = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    v.as_mut_slice()
        .sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v
}

pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    eigenvalues_ascending(m).iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Numerical rank after alternating row/column max-norm equilibration.
///
/// Diagonal scaling leaves the rank unchanged but removes the huge dynamic
/// range of designs built from powers, so the SVD threshold
/// `rel_tol·σ_max·max(rows, cols)` stays meaningful.
pub fn equilibrated_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return 0;
    }
    let mut b = m.clone();
    for _ in 0..40 {
        for i in 0..rows {
            let s = b.row(i).amax();
            if s > 0.0 {
                b.row_mut(i).scale_mut(1.0 / s.sqrt());
            }
        }
        for j in 0..cols {
            let s = b.column(j).amax();
            if s > 0.0 {
                b.column_mut(j).scale_mut(1.0 / s.sqrt());
            }
        }
    }
    let s = singular_values(&b);
    if s[0] == 0.0 {
        return 0;
    }
    let tol = rel_tol * s[0] * rows.max(cols) as f64;
    s.iter().filter(|&&v| v > tol).count()
}
