use nalgebra::DMatrix;
use proptest::prelude::*;

use quadland::geometry::{sym_vector, tensorize, SymVector};
use quadland::init::{identity_init, ScaleMode};
use quadland::io::{format_dataset_csv, format_matrix_csv, parse_dataset_csv, parse_matrix_csv};
use quadland::landscape::embed_gram;
use quadland::risk::{empirical_risk, population_risk};
use quadland::{Dataset, Discrepancy, Moments, StudentWeights, TeacherModel};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

fn shaped_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..6, 1usize..5).prop_flat_map(|(r, c)| matrix(r, c))
}

fn symmetric() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..6).prop_flat_map(|d| matrix(d, d).prop_map(|m| (&m + m.transpose()) * 0.5))
}

fn moments() -> impl Strategy<Value = Moments> {
    (0.1..3.0f64, 1.0..10.0f64).prop_map(|(mu2, kurt)| Moments::new(mu2, kurt * mu2 * mu2).unwrap())
}

proptest! {
    #[test]
    fn risk_sits_inside_its_bounds(a in symmetric(), mom in moments()) {
        let r = population_risk(&Discrepancy::new(a).unwrap(), &mom);
        prop_assert!(r.value >= 0.0);
        prop_assert!(r.value - r.lower_bound.unwrap() >= -1e-12);
        prop_assert!(r.upper_bound.unwrap() - r.value >= -1e-12);
    }

    #[test]
    fn design_pairs_with_sym_vector((x, m) in (1usize..5).prop_flat_map(|d| (matrix(7, d), matrix(d, d)))) {
        let m = (&m + m.transpose()) * 0.5;
        let ds = Dataset::from_inputs(x.clone(), "prop", 0).unwrap();
        let paired = tensorize(&ds).apply(&sym_vector(&m));
        for i in 0..x.nrows() {
            let xi = x.row(i).transpose();
            let direct = (xi.transpose() * &m * &xi)[(0, 0)];
            prop_assert!((paired[i] - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
        prop_assert_eq!(SymVector(sym_vector(&m).0).to_matrix(m.nrows()), m);
    }

    #[test]
    fn matrix_csv_round_trips(m in shaped_matrix()) {
        prop_assert_eq!(parse_matrix_csv(&format_matrix_csv(&m)).unwrap(), m);
    }

    #[test]
    fn dataset_csv_round_trips(x in shaped_matrix(), seed in any::<u64>(), labeled in any::<bool>()) {
        let mut ds = Dataset::from_inputs(x.clone(), "gaussian(1)", seed).unwrap();
        if labeled {
            ds = ds.with_labels(x.column(0).into_owned()).unwrap();
        }
        prop_assert_eq!(parse_dataset_csv(&format_dataset_csv(&ds)).unwrap(), ds);
    }

    #[test]
    fn risk_is_invariant_under_row_rotation(w in matrix(4, 3), t in matrix(4, 3), x in matrix(12, 3), angle in 0.0..6.3f64) {
        let teacher = TeacherModel::new(t).unwrap();
        let ds = quadland::label_dataset(&Dataset::from_inputs(x, "prop", 0).unwrap(), &teacher).unwrap();
        let mut q = DMatrix::identity(4, 4);
        q[(0, 0)] = angle.cos();
        q[(0, 1)] = -angle.sin();
        q[(1, 0)] = angle.sin();
        q[(1, 1)] = angle.cos();
        let a = empirical_risk(&StudentWeights::new(w.clone()).unwrap(), &ds).unwrap();
        let b = empirical_risk(&StudentWeights::new(q * w).unwrap(), &ds).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
    }

    #[test]
    fn identity_init_gram_is_gamma_identity(d in 1usize..8, extra in 0usize..20, plus in any::<bool>()) {
        let m = d + extra;
        let mode = if plus { ScaleMode::MPlus4d } else { ScaleMode::M };
        let w = identity_init(m, d, mode).unwrap();
        let target = DMatrix::identity(d, d) * mode.gamma(m, d);
        prop_assert!((w.gram() - target).amax() <= 1e-12 * mode.gamma(m, d));
    }

    #[test]
    fn embedded_gram_is_reproduced(b in (1usize..5).prop_flat_map(|d| matrix(d + 1, d)), extra in 0usize..4) {
        let gram = b.transpose() * &b;
        let w = embed_gram(&gram, gram.nrows() + extra).unwrap();
        prop_assert!((w.gram() - &gram).norm() <= 1e-10 * (1.0 + gram.norm()));
    }
}
