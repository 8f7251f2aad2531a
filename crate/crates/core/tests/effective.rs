use std::sync::Arc;

use homog::effective::{
    check_effective_properties, default_alpha_tol, density_curve, density_estimate, effective_f,
    flatness_check, MonteCarloParams, PropertyOptions,
};
use homog::env::{CellValue, EnvModel};
use homog::operators::{EllipticOperator, EllipticityConstants, PucciKind};
use homog::sym::SymMatrix;
use homog::Error;

fn bounds() -> EllipticityConstants {
    EllipticityConstants::new(1.0, 4.0, 0.0).unwrap()
}

fn harmonic_setup() -> (EllipticOperator, Arc<EnvModel>) {
    let model = EnvModel::checkerboard(
        1,
        bounds(),
        vec![CellValue::scalar_linear(1, 1.0), CellValue::scalar_linear(1, 4.0)],
        vec![0.5, 0.5],
    );
    (
        EllipticOperator::linear_nondiv(1, bounds()).unwrap(),
        Arc::new(model),
    )
}

fn constant_setup(dim: usize) -> (EllipticOperator, Arc<EnvModel>) {
    let c = EllipticityConstants::new(0.5, 2.0, 1.0).unwrap();
    let op = EllipticOperator::constant_coeff("pucci-plus-drift", dim, c, move |m, p| {
        homog::operators::pucci_plus(m, &c) + homog::sym::vec_norm(p)
    })
    .unwrap();
    let model = EnvModel::constant(dim, c, CellValue::scalar_linear(dim, 1.0));
    (op, Arc::new(model))
}

fn pucci_checkerboard_2d() -> (EllipticOperator, Arc<EnvModel>) {
    let c = EllipticityConstants::new(1.0, 4.0, 0.5).unwrap();
    let model = EnvModel::checkerboard(
        2,
        c,
        vec![
            CellValue::Pucci {
                lambda: 1.0,
                big_lambda: 2.0,
            },
            CellValue::Pucci {
                lambda: 1.5,
                big_lambda: 4.0,
            },
        ],
        vec![0.5, 0.5],
    );
    (
        EllipticOperator::random_pucci(2, PucciKind::Plus, c).unwrap(),
        Arc::new(model),
    )
}

#[test]
fn constant_environment_recovers_the_operator() {
    for dim in [1, 2] {
        let (op, model) = constant_setup(dim);
        let params = MonteCarloParams::new(4.0, 0.5, 2, 0);
        let mats = [
            SymMatrix::identity(dim),
            SymMatrix::identity(dim).scale(-0.7),
            SymMatrix::from_diagonal(&(0..dim).map(|k| 1.0 - 1.5 * k as f64).collect::<Vec<_>>()),
        ];
        for m in &mats {
            let p: Vec<f64> = (0..dim).map(|k| 0.3 * k as f64 - 0.1).collect();
            let s = effective_f(&op, &model, m, &p, &params).unwrap();
            let exact = op.evaluate(m, &p, model.support()[0]);
            assert!(
                (s.estimate - exact).abs() <= s.alpha_tol,
                "{} vs {exact}",
                s.estimate
            );
            assert!(s.alpha_lo <= exact && exact <= s.alpha_hi);
        }
    }
}

#[test]
fn harmonic_mean_in_one_dimension() {
    let (op, model) = harmonic_setup();
    let params = MonteCarloParams::new(60.0, 0.25, 10, 11);
    let s = effective_f(&op, &model, &SymMatrix::identity(1), &[0.0], &params).unwrap();
    assert!((s.estimate + 1.6).abs() < 0.16, "{}", s.estimate);
    assert!(s.ess_inf == -4.0 && s.ess_sup == -1.0);
    assert!(s.alpha_hi - s.alpha_lo <= s.alpha_tol);
}

#[test]
fn density_curve_is_monotone_per_seed() {
    let (op, model) = harmonic_setup();
    let params = MonteCarloParams::new(30.0, 0.25, 6, 5);
    let grid: Vec<f64> = (0..13).map(|k| -4.2 + 0.275 * k as f64).collect();
    let curve = density_curve(&op, &model, &SymMatrix::identity(1), &[0.0], &grid, &params)
        .unwrap();
    assert!(curve.monotone_per_seed && curve.monotone);
    assert_eq!(curve.estimates[0].mean_fraction, 1.0);
    assert_eq!(curve.estimates.last().unwrap().mean_fraction, 0.0);
    assert!(density_curve(&op, &model, &SymMatrix::identity(1), &[0.0], &[1.0, 0.0], &params)
        .is_err());
}

#[test]
fn constant_curve_is_a_step() {
    let (op, model) = constant_setup(2);
    let m = SymMatrix::identity(2);
    let exact = op.evaluate(&m, &[0.0, 0.0], model.support()[0]);
    let params = MonteCarloParams::new(4.0, 0.5, 1, 0);
    let grid = [exact - 0.5, exact - 0.1, exact + 0.1, exact + 0.5];
    let curve = density_curve(&op, &model, &m, &[0.0, 0.0], &grid, &params).unwrap();
    let values: Vec<f64> = curve.estimates.iter().map(|e| e.mean_fraction).collect();
    assert_eq!(values, vec![1.0, 1.0, 0.0, 0.0]);
}

#[test]
fn constant_shift_moves_the_estimate() {
    let (op, model) = harmonic_setup();
    let params = MonteCarloParams::new(30.0, 0.25, 6, 21);
    let m = SymMatrix::identity(1);
    let base = effective_f(&op, &model, &m, &[0.0], &params).unwrap();
    let shifted = effective_f(&op.subtract_constant(0.7), &model, &m, &[0.0], &params).unwrap();
    assert!(
        (shifted.estimate - (base.estimate - 0.7)).abs() <= base.alpha_tol,
        "{} {}",
        shifted.estimate,
        base.estimate
    );
}

#[test]
fn bracket_straddles_the_cut() {
    let (op, model) = harmonic_setup();
    let params = MonteCarloParams::new(40.0, 0.25, 8, 2);
    let m = SymMatrix::identity(1);
    let s = effective_f(&op, &model, &m, &[0.0], &params).unwrap();
    let below = density_estimate(&op, &model, &m, &[0.0], s.estimate - 3.0 * s.alpha_tol, &params)
        .unwrap();
    let above = density_estimate(&op, &model, &m, &[0.0], s.estimate + 3.0 * s.alpha_tol, &params)
        .unwrap();
    assert!(below.mean_fraction > params.theta_cut);
    assert!(above.mean_fraction <= params.theta_cut);
}

#[test]
fn disjoint_seed_batches_agree() {
    let (op, model) = harmonic_setup();
    let m = SymMatrix::identity(1);
    let a = effective_f(&op, &model, &m, &[0.0], &MonteCarloParams::new(40.0, 0.25, 8, 100))
        .unwrap();
    let b = effective_f(&op, &model, &m, &[0.0], &MonteCarloParams::new(40.0, 0.25, 8, 200))
        .unwrap();
    let tol = 2.0 * (a.alpha_tol + b.alpha_tol);
    assert!((a.estimate - b.estimate).abs() <= tol);
}

#[test]
fn estimates_are_reproducible() {
    let (op, model) = pucci_checkerboard_2d();
    let m = SymMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, -0.2]]).unwrap();
    let params = MonteCarloParams::new(8.0, 0.5, 3, 9);
    let a = effective_f(&op, &model, &m, &[0.2, 0.0], &params).unwrap();
    let b = effective_f(&op, &model, &m, &[0.2, 0.0], &params).unwrap();
    assert_eq!(a.estimate, b.estimate);
    assert_eq!(
        serde_json::to_string(&a.diagnostics).unwrap(),
        serde_json::to_string(&b.diagnostics).unwrap()
    );
    assert!(a.ess_inf < a.ess_sup);
    assert!(a.ess_inf - a.alpha_tol <= a.estimate && a.estimate <= a.ess_sup + a.alpha_tol);
}

#[test]
fn bias_check_reports_half_radius_drift() {
    let (op, model) = harmonic_setup();
    let mut params = MonteCarloParams::new(40.0, 0.25, 6, 4);
    params.bias_check = true;
    let s = effective_f(&op, &model, &SymMatrix::identity(1), &[0.0], &params).unwrap();
    let bias = s.bias_estimate.unwrap();
    assert!(bias.is_finite() && bias >= 0.0);
    assert_eq!(s.uncertainty, bias);
}

#[test]
fn comparison_of_operators_orders_estimates() {
    // The second table is pointwise larger (smaller coefficients at M = I).
    let (op, model) = harmonic_setup();
    let larger = Arc::new(EnvModel::checkerboard(
        1,
        bounds(),
        vec![CellValue::scalar_linear(1, 1.0), CellValue::scalar_linear(1, 2.0)],
        vec![0.5, 0.5],
    ));
    let params = MonteCarloParams::new(40.0, 0.25, 6, 8);
    let m = SymMatrix::identity(1);
    let a = effective_f(&op, &model, &m, &[0.0], &params).unwrap();
    let b = effective_f(&op, &larger, &m, &[0.0], &params).unwrap();
    assert!(a.estimate <= b.estimate + a.alpha_tol + b.alpha_tol);
}

#[test]
fn flatness_for_subcritical_alpha() {
    let (op, model) = harmonic_setup();
    let params = MonteCarloParams::new(25.0, 0.25, 4, 30);
    let m = SymMatrix::identity(1);
    let report =
        flatness_check(&op, &model, &m, &[0.0], -2.0, &[25.0, 50.0, 100.0], 1.0, &params).unwrap();
    assert!(report.passed, "{report:?}");
    assert!(flatness_check(&op, &model, &m, &[0.0], -2.0, &[50.0, 25.0], 1.0, &params).is_err());
}

#[test]
fn inherited_properties_on_a_small_suite() {
    let (op, model) = harmonic_setup();
    // The odd-reflection identity compares thresholds approached from opposite sides,
    // so finite-radius drift enters twice and has to be part of the tolerance.
    let mut params = MonteCarloParams::new(120.0, 0.25, 6, 50);
    params.bias_check = true;
    let pairs = vec![(
        (SymMatrix::identity(1), vec![0.0]),
        (SymMatrix::identity(1).scale(0.5), vec![0.0]),
    )];
    let options = PropertyOptions {
        homogeneity: vec![2.0],
        odd_reflection: true,
        linearity: true,
    };
    let report = check_effective_properties(&op, &model, &pairs, &params, &options).unwrap();
    assert_eq!(report.checks.len(), 4);
    assert!(report.passed, "{:?}", report.checks);
}

#[test]
fn bad_parameters_are_rejected() {
    let (op, model) = harmonic_setup();
    let m = SymMatrix::identity(1);
    let mut params = MonteCarloParams::new(30.0, 0.25, 2, 0);
    params.window_t = 1.0;
    assert!(matches!(
        effective_f(&op, &model, &m, &[0.0], &params),
        Err(Error::InvalidParameter(_))
    ));
    let params = MonteCarloParams::new(30.0, 0.3, 2, 0);
    assert!(effective_f(&op, &model, &m, &[0.0], &params).is_err());
    let params = MonteCarloParams::new(30.0, 0.25, 0, 0);
    assert!(effective_f(&op, &model, &m, &[0.0], &params).is_err());
    let params = MonteCarloParams::new(30.0, 0.25, 1, 0);
    assert!(effective_f(&op, &model, &SymMatrix::identity(2), &[0.0], &params).is_err());
}

#[test]
fn default_tolerance_scales_with_arguments() {
    let (op, _) = pucci_checkerboard_2d();
    let m = SymMatrix::from_diagonal(&[3.0, 4.0]);
    let tol = default_alpha_tol(&op, &m, &[0.0, 2.0]);
    assert!((tol - 0.01 * (4.0 * 5.0 + 0.5 * 2.0 + 1.0)).abs() < 1e-12);
}
