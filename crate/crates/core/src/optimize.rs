//! Plain gradient descent with monitored trajectories.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{recover_gram_discrepancy, spans_symmetric};
use crate::landscape::{objective_barrier, sublevel_norm_bound};
use crate::model::{Moments, Network, StudentWeights, TeacherModel};
use crate::risk::{empirical_risk, population_risk_of, Objective};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum StepPolicy {
    Fixed { eta: f64 },
    /// `η = 1/(safety·L̂)` with `L̂` a local Hessian-norm estimate, refreshed
    /// periodically; the step is halved whenever the sufficient decrease
    /// `R(W⁺) ≤ R(W) − η‖∇R‖²/2` fails.
    InverseSmoothness { safety: f64 },
    /// Armijo backtracking: shrink until `R(W⁺) ≤ R(W) − slope·η‖∇R‖²`.
    /// Each iteration starts from the previous accepted step divided by
    /// `shrink`, capped at `initial`.
    Backtracking { shrink: f64, slope: f64, initial: f64 },
}

impl StepPolicy {
    pub fn backtracking() -> Self {
        StepPolicy::Backtracking {
            shrink: 0.5,
            slope: 1e-4,
            initial: 1.0,
        }
    }

    fn guarantees_descent(&self) -> bool {
        !matches!(self, StepPolicy::Fixed { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub step_policy: StepPolicy,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub record_every: usize,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            step_policy: StepPolicy::backtracking(),
            grad_tol: 1e-8,
            max_iters: 1_000_000,
            record_every: 100,
        }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.grad_tol.is_nan() || self.grad_tol <= 0.0 {
            return bad(format!("grad_tol must be positive, got {}", self.grad_tol));
        }
        if self.record_every == 0 {
            return bad("record_every must be >= 1".into());
        }
        match self.step_policy {
            StepPolicy::Fixed { eta } if !(eta > 0.0 && eta.is_finite()) => {
                bad(format!("fixed step must be positive, got {eta}"))
            }
            StepPolicy::InverseSmoothness { safety } if safety.is_nan() || safety < 2.0 => {
                bad(format!("safety divisor must be >= 2, got {safety}"))
            }
            StepPolicy::Backtracking {
                shrink,
                slope,
                initial,
            } if !(shrink > 0.0 && shrink < 1.0 && slope > 0.0 && slope < 1.0 && initial > 0.0) => bad(format!(
                "backtracking needs 0<shrink<1, 0<slope<1, initial>0; got {shrink}, {slope}, {initial}"
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradTol,
    MaxIters,
    Nonfinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub iteration: usize,
    pub risk: f64,
    pub grad_norm: f64,
    pub sigma_min: f64,
    pub frobenius: f64,
    pub below_barrier: Option<bool>,
    /// `‖W‖_F` within the sublevel norm bound; empirical objective only,
    /// and only while the risk is at or below the barrier.
    pub within_norm_bound: Option<bool>,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<IterateRecord>,
    pub final_weights: StudentWeights,
    pub termination: Termination,
    pub iterations: usize,
    pub barrier: Option<f64>,
    /// Smallest `σ_min(W_k)` over every iterate, recorded or not.
    pub min_sigma_min: f64,
    /// Largest single-step risk increase over every iterate (≤ 0 when monotone).
    pub max_risk_increase: f64,
}

impl Trajectory {
    pub fn final_record(&self) -> &IterateRecord {
        self.records.last().expect("trajectory always records its endpoint")
    }

    /// One JSON object per recorded iterate.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain struct serializes") + "\n")
            .collect()
    }

    pub fn risks_non_increasing(&self) -> bool {
        self.records.windows(2).all(|w| w[1].risk <= w[0].risk)
    }
}

/// Power-iteration estimate of `‖∇²R(W)‖₂` using central-difference
/// Hessian-vector products; at most 30 iterations, stopping at 1e-3
/// relative change.
pub fn estimate_smoothness(
    student: &StudentWeights,
    teacher: &TeacherModel,
    objective: &Objective<'_>,
    seed: u64,
) -> Result<f64> {
    let w = student.weights();
    let (m, d) = w.shape();
    let mut rng = Stream::with_stream(seed, 0x5eed);
    let mut v = DMatrix::from_fn(m, d, |_, _| rng.standard_normal());
    let nv = v.norm();
    if nv == 0.0 {
        return Ok(0.0);
    }
    v /= nv;
    let h = 1e-5 * (1.0 + w.norm());
    let mut estimate = 0.0;
    for _ in 0..30 {
        let plus = StudentWeights::new(w + &v * h)?;
        let minus = StudentWeights::new(w - &v * h)?;
        let hv = (objective.gradient(&plus, teacher)? - objective.gradient(&minus, teacher)?) / (2.0 * h);
        let norm = hv.norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite("Hessian-vector product".into()));
        }
        if norm == 0.0 {
            return Ok(0.0);
        }
        let converged = (norm - estimate).abs() <= 1e-3 * norm;
        estimate = norm;
        v = hv / norm;
        if converged {
            break;
        }
    }
    Ok(estimate)
}

struct Evaluated {
    weights: StudentWeights,
    risk: f64,
    grad: DMatrix<f64>,
}

const SMOOTHNESS_REFRESH: usize = 50;
const MAX_SHRINKS: usize = 200;

/// Runs `W_{k+1} = W_k − η_k ∇R(W_k)` until `‖∇R‖_F ≤ grad_tol` or
/// `max_iters`. Records every `record_every` iterates plus the endpoint.
pub fn gradient_descent(
    initial: &StudentWeights,
    teacher: &TeacherModel,
    objective: &Objective<'_>,
    config: &GdConfig,
) -> Result<Trajectory> {
    config.validate()?;
    if initial.d() != teacher.d() {
        return Err(Error::DimensionMismatch {
            expected: teacher.d(),
            got: initial.d(),
            context: "initial weights",
        });
    }
    let barrier = objective_barrier(objective, teacher).ok();
    let norm_bound = match (objective, barrier) {
        (Objective::Empirical { .. }, Some(b)) => Some((
            b,
            sublevel_norm_bound(b, objective.moments().mu2, teacher.effective_weights().norm()),
        )),
        _ => None,
    };
    let evaluate = |w: StudentWeights| -> Result<Evaluated> {
        let risk = objective.risk(&w, teacher)?;
        let grad = objective.gradient(&w, teacher)?;
        Ok(Evaluated { weights: w, risk, grad })
    };

    let mut cur = evaluate(initial.clone())?;
    let mut records = Vec::new();
    let mut min_sigma_min = f64::INFINITY;
    let mut max_risk_increase = f64::NEG_INFINITY;
    let mut eta = match config.step_policy {
        StepPolicy::Fixed { eta } => eta,
        StepPolicy::Backtracking { initial, .. } => initial,
        StepPolicy::InverseSmoothness { .. } => 0.0,
    };
    let mut last_refresh: Option<usize> = None;

    let make_record = |k: usize, e: &Evaluated, sigma_min: f64, step: f64| {
        let frobenius = e.weights.weights().norm();
        IterateRecord {
            iteration: k,
            risk: e.risk,
            grad_norm: e.grad.norm(),
            sigma_min,
            frobenius,
            below_barrier: barrier.map(|b| e.risk < b),
            within_norm_bound: norm_bound.and_then(|(b, bound)| (e.risk <= b).then_some(frobenius <= bound)),
            step,
        }
    };

    let mut k = 0;
    let termination = loop {
        let grad_norm = cur.grad.norm();
        let sigma_min = cur.weights.sigma_min();
        min_sigma_min = min_sigma_min.min(sigma_min);
        let finite = cur.risk.is_finite() && grad_norm.is_finite();
        let stop = if !finite {
            Some(Termination::Nonfinite)
        } else if grad_norm <= config.grad_tol {
            Some(Termination::GradTol)
        } else if k >= config.max_iters {
            Some(Termination::MaxIters)
        } else {
            None
        };
        if stop.is_some() || k % config.record_every == 0 {
            records.push(make_record(k, &cur, sigma_min, eta));
        }
        if let Some(reason) = stop {
            break reason;
        }

        let g2 = grad_norm * grad_norm;
        // Ulp-level slack so rounding noise in R cannot stall a descent test.
        let slack = 4.0 * f64::EPSILON * cur.risk.abs();
        let next = match config.step_policy {
            StepPolicy::Fixed { eta } => step(&cur, eta, evaluate)?,
            StepPolicy::InverseSmoothness { safety } => {
                if last_refresh.is_none_or(|r| k - r >= SMOOTHNESS_REFRESH) {
                    let l = estimate_smoothness(&cur.weights, teacher, objective, k as u64)?;
                    eta = if l > 0.0 { 1.0 / (safety * l) } else { 1.0 };
                    last_refresh = Some(k);
                }
                let mut shrinks = 0;
                loop {
                    let cand = step(&cur, eta, evaluate)?;
                    if cand.risk <= cur.risk - 0.5 * eta * g2 + slack {
                        break cand;
                    }
                    shrinks += 1;
                    if shrinks > MAX_SHRINKS {
                        return Err(Error::Contract(format!(
                            "no descent step found at iteration {k} (eta={eta:e})"
                        )));
                    }
                    eta *= 0.5;
                    last_refresh = Some(k);
                }
            }
            StepPolicy::Backtracking {
                shrink,
                slope,
                initial,
            } => {
                eta = (eta / shrink).min(initial);
                let mut shrinks = 0;
                loop {
                    let cand = step(&cur, eta, evaluate)?;
                    if cand.risk <= cur.risk - slope * eta * g2 + slack {
                        break cand;
                    }
                    shrinks += 1;
                    if shrinks > MAX_SHRINKS {
                        return Err(Error::Contract(format!(
                            "Armijo backtracking failed at iteration {k} (eta={eta:e})"
                        )));
                    }
                    eta *= shrink;
                }
            }
        };
        let increase = next.risk - cur.risk;
        if next.risk.is_finite() {
            max_risk_increase = max_risk_increase.max(increase);
        }
        if config.step_policy.guarantees_descent() && increase > 1e-12 * (1.0 + cur.risk) {
            return Err(Error::Contract(format!(
                "risk increased by {increase:e} at iteration {k}"
            )));
        }
        cur = next;
        k += 1;
    };

    Ok(Trajectory {
        records,
        final_weights: cur.weights,
        termination,
        iterations: k,
        barrier,
        min_sigma_min,
        max_risk_increase: if max_risk_increase.is_finite() {
            max_risk_increase
        } else {
            0.0
        },
    })
}

/// Moves along `−η∇R`. A non-finite iterate keeps the last finite weights
/// and carries a NaN risk, which the descent tests reject and the main loop
/// reports as `nonfinite`.
fn step(cur: &Evaluated, eta: f64, evaluate: impl Fn(StudentWeights) -> Result<Evaluated>) -> Result<Evaluated> {
    let w = cur.weights.weights() - &cur.grad * eta;
    if w.iter().all(|v| v.is_finite()) {
        evaluate(StudentWeights::new(w)?)
    } else {
        Ok(Evaluated {
            weights: cur.weights.clone(),
            risk: f64::NAN,
            grad: cur.grad.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub epsilon: f64,
    pub grad_norm: f64,
    pub termination: Termination,
    pub empirical_risk: f64,
    pub population_risk: f64,
    /// `‖WᵀW − (W*)ᵀW*‖_F` computed directly.
    pub gram_gap: f64,
    /// Same gap recovered from residuals alone, when the data spans.
    pub recovered_gram_gap: Option<f64>,
    pub full_rank: bool,
    pub rank_deficient_endpoint: bool,
}

/// Risk and Gram diagnostics at the endpoint of an ε-stationary run.
pub fn epsilon_stationarity_report(
    trajectory: &Trajectory,
    teacher: &TeacherModel,
    dataset: &Dataset,
    moments: &Moments,
    epsilon: f64,
) -> Result<StationarityReport> {
    let w = &trajectory.final_weights;
    let full_rank = w.m() >= w.d() && w.is_full_rank();
    let recovered_gram_gap = if spans_symmetric(dataset).spans {
        Some(recover_gram_discrepancy(dataset, w, teacher)?.m_hat.norm())
    } else {
        None
    };
    Ok(StationarityReport {
        epsilon,
        grad_norm: trajectory.final_record().grad_norm,
        termination: trajectory.termination,
        empirical_risk: empirical_risk(w, dataset)?,
        population_risk: population_risk_of(w, teacher, moments)?.value,
        gram_gap: (w.gram() - teacher.gram()).norm(),
        recovered_gram_gap,
        full_rank,
        rank_deficient_endpoint: !full_rank,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub coarse: StationarityReport,
    pub fine: StationarityReport,
    /// Both risks strictly smaller at ε/10.
    pub shrinks: bool,
}

/// Runs the same descent at `ε` and `ε/10` and compares the endpoints.
pub fn epsilon_refinement(
    initial: &StudentWeights,
    teacher: &TeacherModel,
    objective: &Objective<'_>,
    dataset: &Dataset,
    moments: &Moments,
    config: &GdConfig,
) -> Result<RefinementReport> {
    let coarse_cfg = *config;
    let fine_cfg = GdConfig {
        grad_tol: config.grad_tol / 10.0,
        ..*config
    };
    let coarse_run = gradient_descent(initial, teacher, objective, &coarse_cfg)?;
    let fine_run = gradient_descent(initial, teacher, objective, &fine_cfg)?;
    let coarse = epsilon_stationarity_report(&coarse_run, teacher, dataset, moments, coarse_cfg.grad_tol)?;
    let fine = epsilon_stationarity_report(&fine_run, teacher, dataset, moments, fine_cfg.grad_tol)?;
    let shrinks = fine.empirical_risk < coarse.empirical_risk && fine.population_risk < coarse.population_risk;
    Ok(RefinementReport { coarse, fine, shrinks })
}
