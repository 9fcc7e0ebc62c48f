//! Energy barriers for rank-deficient students, constructions that attain
//! and probe them, and global-optimality certificates for stationary points.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, sorted_eigen};
use crate::model::{truncated_moments, Distribution, Moments, Network, StudentWeights, TeacherModel};
use crate::risk::{population_risk_of, Objective};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierMode {
    /// `α²·min{μ₄−μ₂², 2μ₂²}·σ_min(W*)⁴`.
    Population,
    /// `α²·½·C₅·σ_min(W*)⁴`, with `C₅` the same constant evaluated on
    /// truncated moments.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierReport {
    pub barrier_value: f64,
    pub risk_value: f64,
    pub below: bool,
    pub constant_used: BarrierMode,
    pub constant: f64,
    pub sigma_min_teacher: f64,
}

impl BarrierReport {
    pub fn new(teacher: &TeacherModel, moments: &Moments, mode: BarrierMode, risk_value: f64) -> Result<Self> {
        let barrier_value = energy_barrier(teacher, moments, mode)?;
        Ok(Self {
            barrier_value,
            risk_value,
            below: risk_value < barrier_value,
            constant_used: mode,
            constant: barrier_constant(moments, mode),
            sigma_min_teacher: teacher.sigma_min(),
        })
    }
}

fn barrier_constant(moments: &Moments, mode: BarrierMode) -> f64 {
    match mode {
        BarrierMode::Population => moments.c_lower,
        BarrierMode::Empirical => 0.5 * moments.c_lower,
    }
}

/// Risk level below which no rank-deficient student exists.
///
/// `moments` are the plain moments in population mode and the truncated
/// moments in empirical mode. The teacher's output weights are absorbed and
/// its quadratic coefficient enters as `α²`.
pub fn energy_barrier(teacher: &TeacherModel, moments: &Moments, mode: BarrierMode) -> Result<f64> {
    moments.require_nondegenerate()?;
    teacher.require_full_rank()?;
    let alpha = teacher.activation().alpha;
    let s = teacher.sigma_min();
    Ok(alpha * alpha * barrier_constant(moments, mode) * s.powi(4))
}

/// Truncated moments for the empirical barrier. The threshold defaults to
/// `max_i ‖X_i‖_∞`, so conditioning is vacuous on the observed sample.
pub fn empirical_barrier_moments(
    distribution: &Distribution,
    dataset: &Dataset,
    threshold: Option<f64>,
) -> Result<Moments> {
    let t = threshold.unwrap_or_else(|| dataset.max_abs_entry());
    truncated_moments(distribution, t)
}

pub fn objective_barrier(objective: &Objective<'_>, teacher: &TeacherModel) -> Result<f64> {
    let mode = if objective.is_empirical() {
        BarrierMode::Empirical
    } else {
        BarrierMode::Population
    };
    energy_barrier(teacher, objective.moments(), mode)
}

/// Rank `d−1` student whose Gram is the teacher Gram with its smallest
/// eigenvalue removed; its population risk is at most
/// `max{μ₄, 3μ₂²}·σ_min(W*)⁴`.
pub fn worst_rank_deficient(teacher: &TeacherModel) -> Result<StudentWeights> {
    let (m, d) = (teacher.m(), teacher.d());
    if m < d {
        return Err(Error::InvalidArgument(format!(
            "teacher has m={m} < d={d} rows"
        )));
    }
    teacher.require_full_rank()?;
    let (vals, vecs) = sorted_eigen(&teacher.gram());
    // W̄ = Σ_{j ≥ 2} √λ_j q_j q_jᵀ over all but the smallest eigenvalue.
    let mut bar = DMatrix::zeros(d, d);
    for k in 1..d {
        let q = vecs.column(k);
        bar += (q * q.transpose()) * vals[k].max(0.0).sqrt();
    }
    if m == d {
        return StudentWeights::new(bar);
    }
    let split = (0..d)
        .max_by(|&a, &b| bar.row(a).norm().total_cmp(&bar.row(b).norm()))
        .expect("d >= 1");
    let mut w = DMatrix::zeros(m, d);
    w.rows_mut(0, d).copy_from(&bar);
    w.row_mut(split).scale_mut(0.5);
    // ¼ + (m−d)·3/(4(m−d)) = 1, so the split row keeps its contribution to WᵀW.
    let tail = 3f64.sqrt() / (2.0 * ((m - d) as f64).sqrt());
    for i in d..m {
        w.row_mut(i).copy_from(&(bar.row(split) * tail));
    }
    StudentWeights::new(w)
}

/// An `rows×d` matrix `W` with `WᵀW = gram`: the symmetric square root on
/// top, zeros below.
pub fn embed_gram(gram: &DMatrix<f64>, rows: usize) -> Result<StudentWeights> {
    let d = gram.nrows();
    if gram.ncols() != d {
        return Err(Error::InvalidArgument("gram must be square".into()));
    }
    if rows < d {
        return Err(Error::InvalidArgument(format!(
            "cannot embed a {d}x{d} gram into {rows} rows"
        )));
    }
    if linalg::relative_asymmetry(gram) > 1e-10 && gram.amax() > 0.0 {
        return Err(Error::InvalidArgument("gram is not symmetric".into()));
    }
    let (vals, vecs) = sorted_eigen(gram);
    let tol = 1e-10 * vals.amax().max(1.0);
    if vals.iter().any(|&v| v < -tol) {
        return Err(Error::InvalidArgument(format!(
            "gram is indefinite: smallest eigenvalue {:e}",
            vals[0]
        )));
    }
    let roots = vals.map(|v| v.max(0.0).sqrt());
    let top = &vecs * DMatrix::from_diagonal(&roots) * vecs.transpose();
    let mut w = DMatrix::zeros(rows, d);
    w.rows_mut(0, d).copy_from(&linalg::symmetrize(&top));
    StudentWeights::new(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    GlobalOptimum,
    BarrierProtected,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityCertificate {
    pub is_full_rank: bool,
    pub sigma_min: f64,
    pub grad_norm: f64,
    pub gram_gap: f64,
    pub risk: f64,
    pub barrier: Option<f64>,
    pub verdict: Verdict,
}

/// Classifies a candidate stationary point.
///
/// Full rank with `‖∇R‖_F ≤ grad_tol` must be a global optimum, so the
/// verdict is `GlobalOptimum` once the Gram gap is within `gram_tol` too.
/// A rank-deficient point at or above the barrier is `BarrierProtected`.
pub fn certify_stationary_global(
    student: &StudentWeights,
    teacher: &TeacherModel,
    objective: &Objective<'_>,
    grad_tol: f64,
    gram_tol: f64,
) -> Result<StationarityCertificate> {
    let grad_norm = objective.gradient(student, teacher)?.norm();
    let risk = objective.risk(student, teacher)?;
    let gram_gap = (student.gram() - teacher.gram()).norm();
    let is_full_rank = student.m() >= student.d() && student.is_full_rank();
    let barrier = objective_barrier(objective, teacher).ok();
    let verdict = if is_full_rank {
        if grad_norm <= grad_tol && gram_gap <= gram_tol {
            Verdict::GlobalOptimum
        } else {
            Verdict::Inconclusive
        }
    } else {
        match barrier {
            Some(b) if risk >= b => Verdict::BarrierProtected,
            _ => Verdict::Inconclusive,
        }
    };
    Ok(StationarityCertificate {
        is_full_rank,
        sigma_min: student.sigma_min(),
        grad_norm,
        gram_gap,
        risk,
        barrier,
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepTrial {
    pub trial: usize,
    pub risk: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub min_risk_found: f64,
    pub barrier: f64,
    pub holds: bool,
    pub trials: Vec<SweepTrial>,
}

impl SweepResult {
    /// One JSON object per trial.
    pub fn to_jsonl(&self) -> String {
        self.trials
            .iter()
            .map(|t| serde_json::to_string(t).expect("plain struct serializes") + "\n")
            .collect()
    }
}

/// Random students of rank at most `d−1`, each `F·P` with `P` a random
/// `(d−1)×d` orthonormal-row projection. Even trials draw `F` as pure noise;
/// odd trials start `F` at `W*Pᵀ` (the teacher's best fit in that subspace)
/// and perturb it, which lands close to the barrier.
pub fn rank_deficient_sweep(
    teacher: &TeacherModel,
    moments: &Moments,
    trials: usize,
    seed: u64,
) -> Result<SweepResult> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let barrier = energy_barrier(teacher, moments, BarrierMode::Population)?;
    let (m, d) = (teacher.m(), teacher.d());
    let w_star = teacher.effective_weights();
    let scale = w_star.norm() / ((m * d) as f64).sqrt();

    let results = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<SweepTrial> {
            let mut rng = Stream::with_stream(seed, t as u64);
            let w = random_rank_deficient(&w_star, &mut rng, t % 2 == 1, scale);
            let student = StudentWeights::new(w)?;
            let risk = population_risk_of(&student, teacher, moments)?.value;
            Ok(SweepTrial {
                trial: t,
                risk,
                rank: linalg::column_rank(student.weights()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let min_risk_found = results.iter().map(|t| t.risk).fold(f64::INFINITY, f64::min);
    Ok(SweepResult {
        min_risk_found,
        barrier,
        holds: min_risk_found >= barrier - 1e-9,
        trials: results,
    })
}

fn random_rank_deficient(w_star: &DMatrix<f64>, rng: &mut Stream, near_teacher: bool, scale: f64) -> DMatrix<f64> {
    let (m, d) = w_star.shape();
    let k = d - 1;
    if k == 0 {
        return DMatrix::zeros(m, d);
    }
    let g = DMatrix::from_fn(d, k, |_, _| rng.standard_normal());
    let q = g.qr().q();
    let projection = q.transpose();
    let noise = DMatrix::from_fn(m, k, |_, _| rng.standard_normal());
    let factor = if near_teacher {
        let spread = 0.3 * rng.open_unit();
        w_star * &q + noise * (spread * scale)
    } else {
        noise * scale
    };
    factor * projection
}

/// `‖W‖_F` bound on the empirical sublevel set `{R̂(W) ≤ barrier}` from
/// sample-covariance concentration at ε = ½:
/// `(2·√barrier/μ₂ + 3‖W*‖_F²)^{1/2}`.
pub fn sublevel_norm_bound(barrier: f64, mu2: f64, teacher_frobenius: f64) -> f64 {
    let eps = 0.5;
    (barrier.sqrt() / (mu2 * (1.0 - eps))
        + (1.0 + eps) / (1.0 - eps) * teacher_frobenius * teacher_frobenius)
        .sqrt()
}
