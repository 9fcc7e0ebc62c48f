//! One function per subcommand: build inputs from the config, run the
//! pipeline, write artifacts, return the summary printed on stdout.

use nalgebra::DMatrix;
use quadland::geometry::{
    critical_sample_count, null_interpolator, prime_span_certificate, prime_vandermonde_data,
    recover_gram_discrepancy, spans_symmetric, tensorize, SpanReport,
};
use quadland::init::{
    check_init_below_barrier, identity_init, init_barrier_sweep, sample_teacher, wishart_spectrum_report,
};
use quadland::landscape::{
    certify_stationary_global, empirical_barrier_moments, rank_deficient_sweep, worst_rank_deficient,
};
use quadland::model::moments_of;
use quadland::optimize::{epsilon_stationarity_report, gradient_descent, GdConfig, StepPolicy, Termination};
use quadland::risk::{empirical_risk, population_risk_of};
use quadland::rng::Stream;
use quadland::{label_dataset, sample_dataset, Network, Objective, StudentWeights, TeacherModel};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::output::Artifacts;
use crate::CliError;

/// Stream reserved for random students; datasets use 0 and teachers 1.
const STUDENT_STREAM: u64 = 2;

fn require_width(what: &str, rows: usize, d: usize) -> Result<(), CliError> {
    if rows < d {
        return Err(CliError::Usage(format!("{what} ({rows}) must be >= d ({d})")));
    }
    Ok(())
}

fn random_student(rows: usize, d: usize, seed: u64) -> Result<StudentWeights, CliError> {
    let mut rng = Stream::with_stream(seed, STUDENT_STREAM);
    Ok(StudentWeights::new(DMatrix::from_fn(rows, d, |_, _| rng.standard_normal()))?)
}

pub fn gd_run(c: &ExperimentConfig, out: &mut Artifacts) -> Result<Value, CliError> {
    require_width("m", c.m, c.d)?;
    if c.init == "identity" {
        require_width("m-hat", c.m_hat, c.d)?;
    }
    let teacher = sample_teacher(&c.teacher_dist, c.m, c.d, c.seed)?;
    let dataset = label_dataset(&sample_dataset(&c.dist, c.n, c.d, c.seed)?, &teacher)?;
    let empirical = c.objective == "empirical";
    let moments = if empirical {
        empirical_barrier_moments(&c.dist, &dataset, None)?
    } else {
        moments_of(&c.dist)
    };
    let objective = if empirical {
        Objective::Empirical {
            dataset: &dataset,
            moments,
        }
    } else {
        Objective::Population { moments }
    };
    let init = match c.init.as_str() {
        "identity" => identity_init(c.m_hat, c.d, c.scale_mode)?,
        _ => random_student(c.m_hat, c.d, c.seed)?,
    };
    let step_policy = match c.step.as_str() {
        "fixed" => StepPolicy::Fixed { eta: c.eta },
        "inverse_smoothness" => StepPolicy::InverseSmoothness { safety: 4.0 },
        _ => StepPolicy::backtracking(),
    };
    let config = GdConfig {
        step_policy,
        grad_tol: c.grad_tol,
        max_iters: c.max_iters,
        record_every: c.record_every,
    };
    let init_report = check_init_below_barrier(&init, &teacher, &objective).ok();
    let trajectory = gradient_descent(&init, &teacher, &objective, &config)?;
    let w = &trajectory.final_weights;
    let certificate = certify_stationary_global(w, &teacher, &objective, c.grad_tol, 1e-6)?;
    let stationarity = if empirical {
        Some(epsilon_stationarity_report(&trajectory, &teacher, &dataset, &moments_of(&c.dist), c.grad_tol)?)
    } else {
        None
    };

    out.matrix("teacher.csv", teacher.weights())?;
    out.dataset("dataset.csv", &dataset)?;
    out.matrix("init.csv", init.weights())?;
    out.matrix("final_weights.csv", w.weights())?;
    out.jsonl("results.jsonl", &trajectory.records)?;
    let summary = json!({
        "termination": trajectory.termination,
        "iterations": trajectory.iterations,
        "final_empirical_risk": empirical_risk(w, &dataset)?,
        "final_population_risk": population_risk_of(w, &teacher, &moments_of(&c.dist))?.value,
        "final_grad_norm": trajectory.final_record().grad_norm,
        "gram_gap": (w.gram() - teacher.gram()).norm(),
        "barrier": trajectory.barrier,
        "init_report": init_report,
        "min_sigma_min": trajectory.min_sigma_min,
        "teacher_sigma_min": teacher.sigma_min(),
        "verdict": certificate.verdict,
        "certificate": certificate,
        "stationarity": stationarity,
    });
    out.json("summary.json", &summary)?;
    if trajectory.termination == Termination::Nonfinite {
        return Err(CliError::Failure("gradient descent produced a non-finite risk".into()));
    }
    Ok(summary)
}

pub fn barrier_scan(c: &ExperimentConfig, out: &mut Artifacts) -> Result<Value, CliError> {
    require_width("m", c.m, c.d)?;
    let teacher = sample_teacher(&c.teacher_dist, c.m, c.d, c.seed)?;
    let moments = moments_of(&c.dist);
    let sweep = rank_deficient_sweep(&teacher, &moments, c.trials, c.seed)?;
    let worst = worst_rank_deficient(&teacher)?;
    let worst_risk = population_risk_of(&worst, &teacher, &moments)?.value;
    let s4 = teacher.sigma_min().powi(4);

    out.matrix("teacher.csv", teacher.weights())?;
    out.matrix("worst_rank_deficient.csv", worst.weights())?;
    out.jsonl("results.jsonl", &sweep.trials)?;
    let summary = json!({
        "barrier": sweep.barrier,
        "min_risk_found": sweep.min_risk_found,
        "holds": sweep.holds,
        "sigma_min_teacher": teacher.sigma_min(),
        "min_risk_over_sigma_min4": sweep.min_risk_found / s4,
        "worst_construction_risk": worst_risk,
        "worst_construction_over_sigma_min4": worst_risk / s4,
    });
    out.json("summary.json", &summary)?;
    if !sweep.holds {
        return Err(CliError::Failure(format!(
            "rank-deficient risk {} fell below the barrier {}",
            sweep.min_risk_found, sweep.barrier
        )));
    }
    Ok(summary)
}

pub fn init_check(c: &ExperimentConfig, out: &mut Artifacts) -> Result<Value, CliError> {
    require_width("m", c.m, c.d)?;
    let moments = moments_of(&c.dist);
    let trials = init_barrier_sweep(&c.teacher_dist, c.m, c.d, c.scale_mode, &moments, c.seed, c.trials as u64)?;
    let below = trials.iter().filter(|t| t.below).count();
    out.jsonl("results.jsonl", &trials)?;
    let summary = json!({
        "gamma": c.scale_mode.gamma(c.m, c.d),
        "trials": trials.len(),
        "below": below,
        "below_fraction": below as f64 / trials.len() as f64,
    });
    out.json("summary.json", &summary)?;
    Ok(summary)
}

pub fn geometry_check(c: &ExperimentConfig, out: &mut Artifacts) -> Result<Value, CliError> {
    let inputs = if c.prime {
        prime_vandermonde_data(c.d, c.n)?
    } else {
        sample_dataset(&c.dist, c.n, c.d, c.seed)?
    };
    let span = spans_symmetric(&inputs);
    let certificate = if c.prime {
        Some(prime_span_certificate(c.d, c.n)?)
    } else {
        None
    };
    out.dataset("dataset.csv", &inputs)?;
    out.matrix("design.csv", &tensorize(&inputs).xi)?;
    out.jsonl("results.jsonl", std::slice::from_ref(&span))?;

    let interpolation = if span.spans {
        None
    } else {
        require_width("m", c.m, c.d)?;
        require_width("m-hat", c.m_hat, c.d)?;
        let teacher = sample_teacher(&c.teacher_dist, c.m, c.d, c.seed)?;
        let dataset = label_dataset(&inputs, &teacher)?;
        let result = null_interpolator(&teacher, &dataset, c.m_hat, &moments_of(&c.dist), None)?;
        out.matrix("teacher.csv", teacher.weights())?;
        out.matrix("null_interpolator.csv", result.student.weights())?;
        out.matrix("null_direction.csv", &result.null_direction)?;
        Some(json!({ "delta": result.delta, "certificate": result.certificate }))
    };
    let summary = json!({
        "n_star": critical_sample_count(c.d),
        "span": span,
        "prime_certificate": certificate,
        "interpolation": interpolation,
    });
    out.json("summary.json", &summary)?;
    if let Some(Value::Bool(false)) = summary.pointer("/interpolation/certificate/holds") {
        return Err(CliError::Failure("null interpolator certificate failed".into()));
    }
    Ok(summary)
}

#[derive(Serialize)]
struct SpanTrial {
    n: usize,
    trial: usize,
    dataset_seed: u64,
    rank: usize,
    spans: bool,
}

pub fn sample_complexity(c: &ExperimentConfig, out: &mut Artifacts) -> Result<Value, CliError> {
    let n_star = critical_sample_count(c.d);
    let cases: Vec<(usize, usize)> = (1..=n_star + 1)
        .flat_map(|n| (0..c.trials).map(move |t| (n, t)))
        .collect();
    let rows = cases
        .into_par_iter()
        .map(|(n, trial)| {
            let dataset_seed = c.seed.wrapping_add(trial as u64);
            let SpanReport { rank, spans, .. } = spans_symmetric(&sample_dataset(&c.dist, n, c.d, dataset_seed)?);
            Ok(SpanTrial {
                n,
                trial,
                dataset_seed,
                rank,
                spans,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let fraction = |n: usize| {
        rows.iter().filter(|r| r.n == n && r.spans).count() as f64 / c.trials as f64
    };
    let fractions: Vec<Value> = (1..=n_star + 1)
        .map(|n| json!({ "n": n, "spans_fraction": fraction(n) }))
        .collect();
    out.jsonl("results.jsonl", &rows)?;
    let summary = json!({
        "d": c.d,
        "n_star": n_star,
        "trials": c.trials,
        "spans_fraction_at_n_star": fraction(n_star),
        "spans_fraction_below_n_star": if n_star > 1 { Some(fraction(n_star - 1)) } else { None },
        "fractions": fractions,
    });
    out.json("summary.json", &summary)?;
    Ok(summary)
}

pub fn recovery(c: &ExperimentConfig, out: &mut Artifacts) -> Result<Value, CliError> {
    require_width("m", c.m, c.d)?;
    let teacher = sample_teacher(&c.teacher_dist, c.m, c.d, c.seed)?;
    let dataset = label_dataset(&sample_dataset(&c.dist, c.n, c.d, c.seed)?, &teacher)?;
    let student = random_student(c.m_hat, c.d, c.seed)?;
    let rec = recover_gram_discrepancy(&dataset, &student, &teacher)?;
    let truth = student.gram() - teacher.gram();

    let perturbation = random_student(c.m, c.d, c.seed.wrapping_add(1))?.into_inner() * 1e-3;
    let shifted = |scale: f64| -> Result<f64, CliError> {
        let w = StudentWeights::new(teacher.weights() + &perturbation * scale)?;
        Ok(recover_gram_discrepancy(&dataset, &w, &teacher)?.m_hat.norm())
    };
    let halving_ratio = shifted(0.5)? / shifted(1.0)?;

    out.matrix("m_hat.csv", &rec.m_hat)?;
    out.matrix("gram_discrepancy.csv", &truth)?;
    let summary = json!({
        "recovery_error": (&rec.m_hat - &truth).norm(),
        "discrepancy_norm": truth.norm(),
        "residual_norm": rec.residual_norm,
        "halving_ratio": halving_ratio,
    });
    out.json("summary.json", &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct SpectrumRow {
    seed: u64,
    #[serde(flatten)]
    report: quadland::init::SpectrumReport,
}

pub fn spectrum(c: &ExperimentConfig, out: &mut Artifacts) -> Result<Value, CliError> {
    require_width("m", c.m, c.d)?;
    let rows = (c.seed..c.seed + c.trials as u64)
        .into_par_iter()
        .map(|seed| {
            let teacher: TeacherModel = sample_teacher(&c.teacher_dist, c.m, c.d, seed)?;
            Ok(SpectrumRow {
                seed,
                report: wishart_spectrum_report(&teacher)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let n = rows.len() as f64;
    let count = |f: &dyn Fn(&SpectrumRow) -> bool| rows.iter().filter(|r| f(r)).count();
    let summary = json!({
        "trials": rows.len(),
        "mean_scaled_second_moment": rows.iter().map(|r| r.report.scaled_second_moment).sum::<f64>() / n,
        "second_moment_in_band": count(&|r| (0.225..=0.275).contains(&r.report.scaled_second_moment)),
        "singular_values_in_band": count(&|r| r.report.inside_band),
        "gram_extremes_in_band": count(&|r| {
            let (lo, hi) = r.report.sigma_band;
            r.report.lambda_min > lo * lo && r.report.lambda_max < hi * hi
        }),
    });
    out.jsonl("results.jsonl", &rows)?;
    out.json("summary.json", &summary)?;
    Ok(summary)
}
