use std::sync::Arc;

use homog::env::{ergodicity_smoke, sample_env, CellValue, EnvModel, Environment};
use homog::lattice::{make_domain, Shape};
use homog::operators::EllipticityConstants;
use proptest::prelude::*;

fn bounds() -> EllipticityConstants {
    EllipticityConstants::new(1.0, 4.0, 0.0).unwrap()
}

fn coefficient(v: &CellValue) -> f64 {
    match v {
        CellValue::Linear { a, .. } => a.get(0, 0),
        CellValue::Pucci { big_lambda, .. } => *big_lambda,
    }
}

fn two_valued(dim: usize) -> Arc<EnvModel> {
    Arc::new(EnvModel::checkerboard(
        dim,
        bounds(),
        vec![CellValue::scalar_linear(dim, 1.0), CellValue::scalar_linear(dim, 4.0)],
        vec![0.5, 0.5],
    ))
}

fn periodic_2d() -> Arc<EnvModel> {
    Arc::new(EnvModel::periodic(
        2,
        bounds(),
        2,
        [1.0, 2.0, 3.0, 4.0]
            .iter()
            .map(|&a| CellValue::scalar_linear(2, a))
            .collect(),
    ))
}

fn all_models() -> Vec<Arc<EnvModel>> {
    vec![
        Arc::new(EnvModel::constant(2, bounds(), CellValue::scalar_linear(2, 2.0))),
        periodic_2d(),
        two_valued(2),
    ]
}

fn field(env: &Environment, idx: &[Vec<i64>], per_cell: i64) -> Vec<f64> {
    idx.iter().map(|i| coefficient(env.value_at(i, per_cell))).collect()
}

#[test]
fn constant_model_is_uniform() {
    let env = sample_env(all_models()[0].clone(), 17).unwrap();
    for i in -20..20 {
        assert_eq!(coefficient(env.value_at(&[i, 3 * i - 7], 4)), 2.0);
    }
}

#[test]
fn checkerboard_frequency_is_binomial() {
    let env = sample_env(two_valued(1), 2024).unwrap();
    let n = 1_000_000i64;
    let ones = (0..n).filter(|&c| coefficient(env.cell_value(&[c])) == 1.0).count() as f64;
    let freq = ones / n as f64;
    let sigma = (0.25 / n as f64).sqrt();
    assert!((freq - 0.5).abs() <= 3.0 * sigma, "{freq}");
}

#[test]
fn periodic_model_repeats() {
    let env = sample_env(periodic_2d(), 5).unwrap();
    for i in -6..6 {
        for j in -6..6 {
            let v = coefficient(env.cell_value(&[i, j]));
            assert_eq!(v, coefficient(env.cell_value(&[i + 2, j])));
            assert_eq!(v, coefficient(env.cell_value(&[i, j + 2])));
        }
    }
    // every tile entry shows up within one period
    let mut seen: Vec<f64> = (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| coefficient(env.cell_value(&[i, j])))
        .collect();
    seen.sort_by(f64::total_cmp);
    assert_eq!(seen, vec![1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn one_cell_shift_matches_exhaustively() {
    // 100-node interval with four steps per cell
    let d = make_domain(1, Shape::Cube, 12.625, 0.25).unwrap();
    assert_eq!(d.n_nodes(), 101);
    let per_cell = 4;
    let env = sample_env(two_valued(1), 8).unwrap();
    let shifted = env.translate(&[1.0], 0.25).unwrap();
    for node in 0..100 {
        let i = d.index(node)[0];
        assert_eq!(
            shifted.value_at(&[i], per_cell),
            env.value_at(&[i + per_cell], per_cell)
        );
    }
}

#[test]
fn non_lattice_shifts_are_rejected() {
    let env = sample_env(two_valued(2), 0).unwrap();
    assert!(env.translate(&[0.1, 0.0], 0.25).is_err());
    assert!(env.translate(&[0.25, 0.5], 0.3).is_err());
    assert!(env.translate(&[0.25], 0.25).is_err());
}

#[test]
fn neighbouring_cells_are_uncorrelated() {
    let env = sample_env(two_valued(1), 77).unwrap();
    let n = 200_000i64;
    let xs: Vec<f64> = (0..=n).map(|c| coefficient(env.cell_value(&[c]))).collect();
    let (a, b) = (&xs[..n as usize], &xs[1..]);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    let corr = cov / (va * vb).sqrt();
    assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "{corr}");
}

#[test]
fn ergodicity_smoke_reports() {
    for dim in [1, 2] {
        let report = ergodicity_smoke(&two_valued(dim), coefficient, &[16, 32, 64], 40, 9).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.ensemble_mean, 2.5);
        let rms: Vec<f64> = report.levels.iter().map(|l| l.rms_deviation).collect();
        assert!(rms[2] < rms[0]);
    }
    let constant = ergodicity_smoke(&all_models()[0], coefficient, &[4, 8], 3, 0).unwrap();
    assert!(constant.passed && constant.levels.iter().all(|l| l.rms_deviation == 0.0));
    let periodic = ergodicity_smoke(&periodic_2d(), coefficient, &[2, 4, 6], 5, 0).unwrap();
    assert!(periodic.passed);
    assert!(periodic.levels.iter().all(|l| l.rms_deviation < 1e-12));
}

#[test]
fn sampling_is_reproducible() {
    let idx: Vec<Vec<i64>> = (-30..30).flat_map(|i| (-3..3).map(move |j| vec![i, j])).collect();
    for model in all_models() {
        let a = sample_env(model.clone(), 99).unwrap();
        let b = sample_env(model.clone(), 99).unwrap();
        assert_eq!(field(&a, &idx, 2), field(&b, &idx, 2));
    }
    let a = sample_env(two_valued(2), 1).unwrap();
    let b = sample_env(two_valued(2), 2).unwrap();
    assert_ne!(field(&a, &idx, 1), field(&b, &idx, 1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn translations_compose(
        seed in any::<u64>(),
        model_ix in 0usize..3,
        z in prop::array::uniform2(-40i64..40),
        w in prop::array::uniform2(-40i64..40),
        per_cell in 1i64..6,
    ) {
        let model = all_models()[model_ix].clone();
        let env = sample_env(model, seed).unwrap();
        let d = make_domain(2, Shape::Cube, 3.0, 0.5).unwrap();
        let idx: Vec<Vec<i64>> = (0..d.n_nodes()).map(|p| d.index(p).to_vec()).collect();
        let zw = [z[0] + w[0], z[1] + w[1]];
        let two_step = env.translate_steps(&z, per_cell).unwrap().translate_steps(&w, per_cell).unwrap();
        let one_step = env.translate_steps(&zw, per_cell).unwrap();
        prop_assert_eq!(field(&two_step, &idx, per_cell), field(&one_step, &idx, per_cell));

        let back = env.translate_steps(&z, per_cell).unwrap()
            .translate_steps(&[-z[0], -z[1]], per_cell).unwrap();
        prop_assert_eq!(field(&back, &idx, per_cell), field(&env, &idx, per_cell));
        let none = env.translate_steps(&[0, 0], per_cell).unwrap();
        prop_assert_eq!(field(&none, &idx, per_cell), field(&env, &idx, per_cell));

        // the stationarity identity: translated field at y equals the original at y + z
        let shifted = env.translate_steps(&z, per_cell).unwrap();
        let moved: Vec<Vec<i64>> = idx.iter().map(|i| vec![i[0] + z[0], i[1] + z[1]]).collect();
        prop_assert_eq!(field(&shifted, &idx, per_cell), field(&env, &moved, per_cell));
    }
}
