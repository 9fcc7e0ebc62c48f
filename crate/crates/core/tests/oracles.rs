use nalgebra::DMatrix;
use rayon::prelude::*;

use quadland::geometry::{
    critical_sample_count, null_interpolator, spans_symmetric, tensorize, tensorized_covariance,
};
use quadland::init::{
    certified_empirical_instance, identity_init, init_barrier_sweep, sample_teacher, ScaleMode,
};
use quadland::landscape::{
    certify_stationary_global, embed_gram, rank_deficient_sweep, sublevel_norm_bound, worst_rank_deficient,
    Verdict,
};
use quadland::linalg::sorted_eigen;
use quadland::model::moments_of;
use quadland::optimize::{epsilon_refinement, epsilon_stationarity_report, gradient_descent, GdConfig, Termination};
use quadland::risk::{empirical_risk, population_risk_of};
use quadland::rng::Stream;
use quadland::{label_dataset, sample_dataset, Distribution, Moments, Network, Objective, StudentWeights, TeacherModel};

fn gaussian_matrix(rng: &mut Stream, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.standard_normal())
}

#[test]
fn forward_matches_double_loop() {
    let mut rng = Stream::new(1);
    let w = gaussian_matrix(&mut rng, 3, 2);
    let x = [1.0, -1.0];
    let mut expected = 0.0;
    for j in 0..3 {
        let mut dot = 0.0;
        for k in 0..2 {
            dot += w[(j, k)] * x[k];
        }
        expected += dot * dot;
    }
    let t = TeacherModel::new(w).unwrap();
    assert!((t.forward(&x).unwrap() - expected).abs() <= 1e-12 * expected.max(1.0));
}

#[test]
fn row_splitting_preserves_forward_values() {
    let mut rng = Stream::new(2);
    let teacher = TeacherModel::new(gaussian_matrix(&mut rng, 7, 3)).unwrap();
    let split = worst_rank_deficient(&teacher).unwrap();
    // xᵀ(G* − λ_min q qᵀ)x computed from the eigendecomposition
    let (vals, vecs) = sorted_eigen(&teacher.gram());
    let q = vecs.column(0);
    let reduced = teacher.gram() - q * q.transpose() * vals[0];
    for _ in 0..100 {
        let x: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
        let xv = nalgebra::DVector::from_vec(x.clone());
        let expected = (xv.transpose() * &reduced * &xv)[(0, 0)];
        let got = split.forward(&x).unwrap();
        assert!((got - expected).abs() <= 1e-10 * expected.abs().max(1.0), "{got} vs {expected}");
    }
    assert_eq!(quadland::linalg::column_rank(split.weights()), 2);
}

#[test]
fn embed_gram_reconstructs_random_psd() {
    let mut rng = Stream::new(3);
    for d in 1..6 {
        let b = gaussian_matrix(&mut rng, d + 2, d);
        let gram = b.transpose() * &b;
        let w = embed_gram(&gram, d + 4).unwrap();
        assert_eq!(w.m(), d + 4);
        assert!((w.gram() - &gram).norm() <= 1e-10 * (1.0 + gram.norm()));
        for r in d..d + 4 {
            assert!(w.weights().row(r).iter().all(|&v| v == 0.0));
        }
    }
    let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    assert!(embed_gram(&indefinite, 2).is_err());
}

#[test]
fn sweep_examples() {
    let g = Moments::gaussian();
    let eye = TeacherModel::new(DMatrix::identity(3, 3)).unwrap();
    assert!(rank_deficient_sweep(&eye, &g, 500, 7).unwrap().min_risk_found >= 2.0 - 1e-9);
    let twice = TeacherModel::new(DMatrix::identity(3, 3) * 2.0).unwrap();
    assert!(rank_deficient_sweep(&twice, &g, 500, 7).unwrap().min_risk_found >= 32.0 - 1e-9);
    let a = rank_deficient_sweep(&eye, &g, 1, 11).unwrap();
    let b = rank_deficient_sweep(&eye, &g, 1, 11).unwrap();
    assert_eq!(a, b);
}

#[test]
fn identity_init_risk_matches_eigenvalue_route() {
    let g = Distribution::standard_gaussian();
    for (k, law) in [
        Distribution::standard_gaussian(),
        Distribution::unit_uniform(),
        Distribution::Custom { mu2: 1.5, mu4: 9.0 },
    ]
    .iter()
    .enumerate()
    {
        let moments = moments_of(law);
        let (m, d) = (60, 4);
        let teacher = sample_teacher(&g, m, d, 20 + k as u64).unwrap();
        let init = identity_init(m, d, ScaleMode::M).unwrap();
        let value = population_risk_of(&init, &teacher, &moments).unwrap().value;
        // eigenvalues of A = (W*)ᵀW* − mI give tr(A) and tr(A²); the Hadamard term is read off the diagonal
        let a = teacher.gram() - DMatrix::identity(d, d) * m as f64;
        let lambdas = sorted_eigen(&a).0;
        let s1: f64 = lambdas.iter().sum();
        let s2: f64 = lambdas.iter().map(|l| l * l).sum();
        let hadamard: f64 = (0..d).map(|i| a[(i, i)] * a[(i, i)]).sum();
        let mu2sq = moments.mu2 * moments.mu2;
        let expected = mu2sq * s1 * s1 + 2.0 * mu2sq * s2 + (moments.mu4 - 3.0 * mu2sq) * hadamard;
        assert!((value - expected).abs() <= 1e-10 * expected, "{value} vs {expected}");
    }
}

#[test]
fn overparametrization_trend() {
    let d = 4;
    let g = Distribution::standard_gaussian();
    let fractions: Vec<usize> = [d * d, 4 * d * d, 16 * d * d]
        .iter()
        .map(|&m| {
            init_barrier_sweep(&g, m, d, ScaleMode::M, &Moments::gaussian(), 0, 100)
                .unwrap()
                .iter()
                .filter(|t| t.below)
                .count()
        })
        .collect();
    assert!(fractions.windows(2).all(|w| w[0] <= w[1]), "{fractions:?}");
}

#[test]
fn interpolating_student_recovers_gram() {
    let g = Distribution::standard_gaussian();
    let mut rng = Stream::new(5);
    for d in 2..=4 {
        let m = d + 1;
        let teacher = TeacherModel::new(gaussian_matrix(&mut rng, m, d)).unwrap();
        let ds = label_dataset(&sample_dataset(&g, critical_sample_count(d) + 2, d, 40 + d as u64).unwrap(), &teacher)
            .unwrap();
        assert!(spans_symmetric(&ds).spans);
        // a wider student with the same Gram interpolates
        let student = embed_gram(&teacher.gram(), m + 3).unwrap();
        let scale = ds.labels().unwrap().iter().map(|y| y * y).sum::<f64>() / ds.n() as f64;
        assert!(empirical_risk(&student, &ds).unwrap() <= 1e-12 * scale);
        assert!((student.gram() - teacher.gram()).norm() <= 1e-6);
    }
}

#[test]
fn null_direction_is_invisible_to_the_data() {
    let g = Distribution::standard_gaussian();
    let mut rng = Stream::new(6);
    for d in 2..=4 {
        let teacher = TeacherModel::new(gaussian_matrix(&mut rng, d + 1, d)).unwrap();
        let ds = label_dataset(&sample_dataset(&g, critical_sample_count(d) - 1, d, 60).unwrap(), &teacher).unwrap();
        let ni = null_interpolator(&teacher, &ds, d + 2, &Moments::gaussian(), None).unwrap();
        let m = &ni.null_direction;
        for i in 0..ds.n() {
            let x = ds.inputs().row(i).transpose();
            assert!((x.transpose() * m * &x)[(0, 0)].abs() <= 1e-10);
        }
        let spectral = sorted_eigen(m).0.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!((spectral - 1.0).abs() <= 1e-10);
        assert!(ni.certificate.holds);
        assert!((ni.delta - teacher.sigma_min().powi(2)).abs() <= 1e-10 * ni.delta);
    }
}

#[test]
fn tensorized_covariance_is_stable_across_seeds() {
    let g = Distribution::standard_gaussian();
    let a = tensorized_covariance(&sample_dataset(&g, 100_000, 3, 1).unwrap()).unwrap();
    let b = tensorized_covariance(&sample_dataset(&g, 100_000, 3, 2).unwrap()).unwrap();
    assert!(a.min_eig > 0.0 && b.min_eig > 0.0);
    assert!((a.min_eig - b.min_eig).abs() <= 0.1 * a.min_eig.max(b.min_eig));
}

#[test]
fn tensorized_pairing_identity() {
    let mut rng = Stream::new(8);
    let ds = sample_dataset(&Distribution::standard_gaussian(), 20, 4, 8).unwrap();
    let design = tensorize(&ds);
    let b = gaussian_matrix(&mut rng, 4, 4);
    let m = (&b + b.transpose()) * 0.5;
    let paired = design.apply(&quadland::geometry::sym_vector(&m));
    for i in 0..ds.n() {
        let x = ds.inputs().row(i).transpose();
        let direct = (x.transpose() * &m * &x)[(0, 0)];
        assert!((paired[i] - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
    }
}

fn small_problem(seed: u64) -> (TeacherModel, quadland::Dataset, Moments) {
    let g = Distribution::standard_gaussian();
    let (d, m) = (2, 8);
    let mut rng = Stream::with_stream(seed, 9);
    // teacher close to √m·[I; 0] keeps the identity init inside the basin
    let mut w = DMatrix::zeros(m, d);
    for i in 0..d {
        w[(i, i)] = (m as f64).sqrt();
    }
    w += gaussian_matrix(&mut rng, m, d) * 0.3;
    let teacher = TeacherModel::new(w).unwrap();
    let ds = label_dataset(&sample_dataset(&g, 5 * critical_sample_count(d), d, seed).unwrap(), &teacher).unwrap();
    let moments = quadland::landscape::empirical_barrier_moments(&g, &ds, None).unwrap();
    (teacher, ds, moments)
}

#[test]
fn descent_from_scaled_identity_reaches_global_optimum() {
    let (teacher, ds, moments) = small_problem(3);
    let init = identity_init(8, 2, ScaleMode::M).unwrap();
    let objective = Objective::Empirical {
        dataset: &ds,
        moments,
    };
    let report = quadland::init::check_init_below_barrier(&init, &teacher, &objective).unwrap();
    assert!(report.below, "{report:?}");
    let config = GdConfig {
        grad_tol: 1e-9,
        ..GdConfig::default()
    };
    let traj = gradient_descent(&init, &teacher, &objective, &config).unwrap();
    assert_eq!(traj.termination, Termination::GradTol);
    assert!(empirical_risk(&traj.final_weights, &ds).unwrap() <= 1e-10);
    let cert = certify_stationary_global(&traj.final_weights, &teacher, &objective, 1e-9, 1e-6).unwrap();
    assert_eq!(cert.verdict, Verdict::GlobalOptimum);

    let population = Objective::Population {
        moments: Moments::gaussian(),
    };
    let traj = gradient_descent(&init, &teacher, &population, &config).unwrap();
    assert!((traj.final_weights.gram() - teacher.gram()).norm() <= 1e-6);
}

#[test]
fn trajectories_stay_trapped_above_half_sigma_min() {
    let g = Distribution::standard_gaussian();
    let failures: Vec<String> = (0..100u64)
        .into_par_iter()
        .filter_map(|seed| {
            let inst = certified_empirical_instance(&g, &g, 16, 2, 15, ScaleMode::M, seed, 1000).unwrap();
            let objective = Objective::Empirical {
                dataset: &inst.dataset,
                moments: inst.moments,
            };
            let config = GdConfig {
                record_every: 1,
                ..GdConfig::default()
            };
            let traj = gradient_descent(&inst.init, &inst.teacher, &objective, &config).unwrap();
            let bound = sublevel_norm_bound(
                traj.barrier.unwrap(),
                inst.moments.mu2,
                inst.teacher.weights().norm(),
            );
            let ok = traj.min_sigma_min > 0.5 * inst.teacher.sigma_min()
                && traj.risks_non_increasing()
                && traj.records.iter().all(|r| r.within_norm_bound != Some(false))
                && traj.records.iter().all(|r| r.risk > traj.barrier.unwrap() || r.frobenius <= bound)
                && traj.records.iter().all(|r| r.below_barrier == Some(true));
            (!ok).then(|| format!("seed {seed}"))
        })
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn runs_are_bit_reproducible() {
    let (teacher, ds, moments) = small_problem(4);
    let init = identity_init(8, 2, ScaleMode::M).unwrap();
    let objective = Objective::Empirical {
        dataset: &ds,
        moments,
    };
    let a = gradient_descent(&init, &teacher, &objective, &GdConfig::default()).unwrap();
    let b = gradient_descent(&init, &teacher, &objective, &GdConfig::default()).unwrap();
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    assert_eq!(a.final_weights, b.final_weights);
}

#[test]
fn tighter_tolerance_shrinks_both_risks() {
    let (teacher, ds, moments) = small_problem(5);
    let init = identity_init(8, 2, ScaleMode::M).unwrap();
    let objective = Objective::Empirical {
        dataset: &ds,
        moments,
    };
    let config = GdConfig {
        grad_tol: 1e-4,
        ..GdConfig::default()
    };
    let r = epsilon_refinement(&init, &teacher, &objective, &ds, &Moments::gaussian(), &config).unwrap();
    assert!(r.fine.empirical_risk < r.coarse.empirical_risk);
    assert!(r.shrinks, "{r:?}");
    assert!(r.coarse.full_rank && r.coarse.recovered_gram_gap.is_some());
}

#[test]
fn exact_and_rank_deficient_endpoints() {
    let (teacher, ds, _) = small_problem(6);
    let objective = Objective::Empirical {
        dataset: &ds,
        moments: Moments::gaussian(),
    };
    let at_teacher = gradient_descent(&StudentWeights::from(&teacher), &teacher, &objective, &GdConfig::default()).unwrap();
    let report = epsilon_stationarity_report(&at_teacher, &teacher, &ds, &Moments::gaussian(), 1e-8).unwrap();
    assert!(report.gram_gap <= 1e-8 && !report.rank_deficient_endpoint);

    // W = 0 is stationary and rank deficient
    let at_zero = gradient_descent(&StudentWeights::zeros(8, 2), &teacher, &objective, &GdConfig::default()).unwrap();
    assert_eq!(at_zero.iterations, 0);
    let report = epsilon_stationarity_report(&at_zero, &teacher, &ds, &Moments::gaussian(), 1e-8).unwrap();
    assert!(report.rank_deficient_endpoint);
    let cert = certify_stationary_global(&at_zero.final_weights, &teacher, &objective, 1e-8, 1e-6).unwrap();
    assert_ne!(cert.verdict, Verdict::GlobalOptimum);
}
