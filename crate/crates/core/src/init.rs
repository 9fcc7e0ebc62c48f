//! Teacher sampling, identity-multiple initialization and spectrum
//! diagnostics of the teacher Gram.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{label_dataset, sample_dataset, Dataset};
use crate::error::{Error, Result};
use crate::landscape::{empirical_barrier_moments, BarrierMode, BarrierReport};
use crate::linalg::{self, eigenvalues_ascending};
use crate::model::{Distribution, Moments, StudentWeights, TeacherModel};
use crate::risk::Objective;
use crate::rng::Stream;

/// Stream index reserved for teacher entries; datasets use stream 0.
const TEACHER_STREAM: u64 = 1;

/// Second moment of the semicircle law on `[−1, 1]`.
pub const SEMICIRCLE_SECOND_MOMENT: f64 = 0.25;

fn require_tall(m: usize, d: usize) -> Result<()> {
    if d == 0 || m < d {
        return Err(Error::InvalidArgument(format!("need m >= d >= 1, got m={m}, d={d}")));
    }
    Ok(())
}

/// `m×d` teacher with i.i.d. entries, row-major from the seed's teacher stream.
pub fn sample_teacher(distribution: &Distribution, m: usize, d: usize, seed: u64) -> Result<TeacherModel> {
    sample_teacher_stream(distribution, m, d, seed, TEACHER_STREAM)
}

pub(crate) fn sample_teacher_stream(
    distribution: &Distribution,
    m: usize,
    d: usize,
    seed: u64,
    stream: u64,
) -> Result<TeacherModel> {
    require_tall(m, d)?;
    distribution.validate()?;
    let mut rng = Stream::with_stream(seed, stream);
    let mut entries = Vec::with_capacity(m * d);
    for _ in 0..m * d {
        entries.push(distribution.draw(&mut rng));
    }
    TeacherModel::new(DMatrix::from_row_slice(m, d, &entries))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// `γ = m`.
    M,
    /// `γ = m + 4d`.
    #[serde(rename = "m_plus_4d")]
    MPlus4d,
}

impl ScaleMode {
    pub fn gamma(self, m: usize, d: usize) -> f64 {
        match self {
            ScaleMode::M => m as f64,
            ScaleMode::MPlus4d => (m + 4 * d) as f64,
        }
    }
}

impl std::str::FromStr for ScaleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m" => Ok(ScaleMode::M),
            "m_plus_4d" | "m+4d" => Ok(ScaleMode::MPlus4d),
            other => Err(Error::Parse(format!("unknown scale mode '{other}' (expected m or m_plus_4d)"))),
        }
    }
}

/// `√γ` on the top `d×d` diagonal, zero elsewhere, so `W₀ᵀW₀ = γI_d`.
pub fn identity_init(m: usize, d: usize, mode: ScaleMode) -> Result<StudentWeights> {
    require_tall(m, d)?;
    let root = mode.gamma(m, d).sqrt();
    let mut w = DMatrix::zeros(m, d);
    for i in 0..d {
        w[(i, i)] = root;
    }
    StudentWeights::new(w)
}

/// Risk of `init` under the objective compared against the matching barrier.
pub fn check_init_below_barrier(
    init: &StudentWeights,
    teacher: &TeacherModel,
    objective: &Objective<'_>,
) -> Result<BarrierReport> {
    let mode = if objective.is_empirical() {
        BarrierMode::Empirical
    } else {
        BarrierMode::Population
    };
    let risk = objective.risk(init, teacher)?;
    BarrierReport::new(teacher, objective.moments(), mode, risk)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `(1/d)·Σ μ_i²` for the eigenvalues `μ_i` of `((W*)ᵀW* − mI)/(2√(md))`.
    pub scaled_second_moment: f64,
    /// `(√m − 2√d, √m + 2√d)`.
    pub sigma_band: (f64, f64),
    /// Every singular value of `W*` lies strictly inside `sigma_band`.
    pub inside_band: bool,
}

impl SpectrumReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

pub fn wishart_spectrum_report(teacher: &TeacherModel) -> Result<SpectrumReport> {
    let (m, d) = (teacher.m(), teacher.d());
    require_tall(m, d)?;
    let (mf, df) = (m as f64, d as f64);
    let lambdas = eigenvalues_ascending(&teacher.gram());
    let scale = 2.0 * (mf * df).sqrt();
    let scaled_second_moment =
        linalg::compensated_sum(lambdas.iter().map(|l| ((l - mf) / scale).powi(2))) / df;
    let sigma_band = (mf.sqrt() - 2.0 * df.sqrt(), mf.sqrt() + 2.0 * df.sqrt());
    let sv = linalg::singular_values(&teacher.effective_weights());
    let inside_band = sv.iter().all(|&s| s > sigma_band.0 && s < sigma_band.1);
    Ok(SpectrumReport {
        lambda_min: lambdas[0],
        lambda_max: lambdas[d - 1],
        scaled_second_moment,
        sigma_band,
        inside_band,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSweepTrial {
    pub seed: u64,
    pub risk: f64,
    pub barrier: f64,
    pub below: bool,
}

/// Population below-barrier check of `identity_init` across teacher seeds
/// `seed0..seed0+seeds`, in parallel.
pub fn init_barrier_sweep(
    teacher_dist: &Distribution,
    m: usize,
    d: usize,
    mode: ScaleMode,
    moments: &Moments,
    seed0: u64,
    seeds: u64,
) -> Result<Vec<InitSweepTrial>> {
    let init = identity_init(m, d, mode)?;
    let objective = Objective::Population { moments: *moments };
    (seed0..seed0 + seeds)
        .into_par_iter()
        .map(|seed| {
            let teacher = sample_teacher(teacher_dist, m, d, seed)?;
            let report = check_init_below_barrier(&init, &teacher, &objective)?;
            Ok(InitSweepTrial {
                seed,
                risk: report.risk_value,
                barrier: report.barrier_value,
                below: report.below,
            })
        })
        .collect()
}

/// A labeled problem whose identity init is certified below the empirical
/// barrier.
#[derive(Debug, Clone, PartialEq)]
pub struct CertifiedInstance {
    pub teacher: TeacherModel,
    pub dataset: Dataset,
    /// Truncated moments at the dataset's largest entry.
    pub moments: Moments,
    pub init: StudentWeights,
    pub report: BarrierReport,
    /// Teacher draws consumed, counting the accepted one.
    pub attempts: u64,
}

/// Draws inputs once from `seed`, then teachers from the seed's teacher
/// streams `1, 2, …` until the identity init sits below the empirical
/// barrier. Rejected draws are counted, never hidden.
#[allow(clippy::too_many_arguments)]
pub fn certified_empirical_instance(
    teacher_dist: &Distribution,
    data_dist: &Distribution,
    m: usize,
    d: usize,
    n: usize,
    mode: ScaleMode,
    seed: u64,
    max_attempts: u64,
) -> Result<CertifiedInstance> {
    let inputs = sample_dataset(data_dist, n, d, seed)?;
    let moments = empirical_barrier_moments(data_dist, &inputs, None)?;
    let init = identity_init(m, d, mode)?;
    for attempt in 0..max_attempts {
        let teacher = sample_teacher_stream(teacher_dist, m, d, seed, TEACHER_STREAM + attempt)?;
        if !teacher.is_full_rank() {
            continue;
        }
        let dataset = label_dataset(&inputs, &teacher)?;
        let objective = Objective::Empirical {
            dataset: &dataset,
            moments,
        };
        let report = check_init_below_barrier(&init, &teacher, &objective)?;
        if report.below {
            return Ok(CertifiedInstance {
                teacher,
                dataset,
                moments,
                init,
                report,
                attempts: attempt + 1,
            });
        }
    }
    Err(Error::InvalidArgument(format!(
        "no teacher among {max_attempts} draws puts the identity init below the barrier (seed {seed})"
    )))
}
