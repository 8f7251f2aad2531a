use std::sync::Arc;

use homog::env::{sample_env, steps_per_cell, CellValue, EnvModel, Environment};
use homog::lattice::{make_domain, make_domain_at, LatticeDomain, Shape};
use homog::operators::{EllipticOperator, EllipticityConstants, PucciKind};
use homog::validate::{
    convergence_study, solve_dirichlet, solve_effective_dirichlet, Component, DirichletMethod,
    DirichletParams, FbarSource, FbarTable, StudyParams, TableAxis,
};
use homog::Error;
use proptest::prelude::*;

fn bounds() -> EllipticityConstants {
    EllipticityConstants::new(1.0, 4.0, 0.0).unwrap()
}

fn harmonic_env(seed: u64) -> Environment {
    let model = EnvModel::checkerboard(
        1,
        bounds(),
        vec![CellValue::scalar_linear(1, 1.0), CellValue::scalar_linear(1, 4.0)],
        vec![0.5, 0.5],
    );
    sample_env(Arc::new(model), seed).unwrap()
}

fn forced_linear(dim: usize) -> EllipticOperator {
    EllipticOperator::linear_nondiv(dim, bounds())
        .unwrap()
        .subtract_constant(1.0)
}

fn pucci_env(seed: u64) -> (EllipticOperator, Environment) {
    let c = EllipticityConstants::new(1.0, 3.0, 0.5).unwrap();
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
                big_lambda: 3.0,
            },
        ],
        vec![0.4, 0.6],
    );
    (
        EllipticOperator::random_pucci(2, PucciKind::Plus, c).unwrap(),
        sample_env(Arc::new(model), seed).unwrap(),
    )
}

fn zero(_: &[f64]) -> f64 {
    0.0
}

/// Thomas algorithm for `−a_i (u_{i+1} − 2u_i + u_{i−1})/h² = 1`, `u = 0` at the ends.
fn tridiagonal_oracle(a: &[f64], h: f64) -> Vec<f64> {
    let n = a.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        let (lo, diag, up, rhs) = (-a[i] / (h * h), 2.0 * a[i] / (h * h), -a[i] / (h * h), 1.0);
        let (cp, dp) = if i == 0 { (0.0, 0.0) } else { (c[i - 1], d[i - 1]) };
        let denom = diag - lo * cp;
        c[i] = up / denom;
        d[i] = (rhs - lo * dp) / denom;
    }
    let mut u = vec![0.0; n];
    for i in (0..n).rev() {
        u[i] = d[i] - if i + 1 < n { c[i] * u[i + 1] } else { 0.0 };
    }
    u
}

#[test]
fn harmonic_boundary_data_is_reproduced() {
    let model = EnvModel::constant(2, bounds(), CellValue::scalar_linear(2, 1.0));
    let env = sample_env(Arc::new(model), 0).unwrap();
    let op = EllipticOperator::linear_nondiv(2, bounds()).unwrap();
    let d = Arc::new(make_domain(2, Shape::Ball, 1.0, 0.05).unwrap());
    let g = |x: &[f64]| x[0] * x[0] - x[1] * x[1];
    let sol = solve_dirichlet(&op, &env, 0.2, &d, &g, &DirichletParams::default()).unwrap();
    for i in 0..d.n_nodes() {
        assert!((sol.u.values[i] - g(&d.position(i))).abs() < 1e-9);
    }
}

#[test]
fn one_dimensional_solution_matches_tridiagonal_oracle() {
    let env = harmonic_env(7);
    let d = Arc::new(make_domain(1, Shape::Cube, 1.0, 1.0 / 80.0).unwrap());
    let eps = 0.05;
    let sol = solve_dirichlet(&forced_linear(1), &env, eps, &d, &zero, &Default::default())
        .unwrap();
    let per_cell = steps_per_cell(eps, d.spacing()).unwrap();
    let a: Vec<f64> = (0..d.n_nodes())
        .map(|i| match env.value_at(d.index(i), per_cell) {
            CellValue::Linear { a, .. } => a.get(0, 0),
            _ => unreachable!(),
        })
        .collect();
    let oracle = tridiagonal_oracle(&a, d.spacing());
    for (u, v) in sol.u.values.iter().zip(&oracle) {
        assert!((u - v).abs() < 1e-10, "{u} {v}");
    }
}

#[test]
fn constant_environment_is_independent_of_eps() {
    let model = EnvModel::constant(2, bounds(), CellValue::scalar_linear(2, 2.0));
    let env = sample_env(Arc::new(model), 3).unwrap();
    let d = Arc::new(make_domain(2, Shape::Ball, 1.0, 0.0125).unwrap());
    let g = |x: &[f64]| 0.3 * x[0] + 0.1;
    let op = forced_linear(2);
    let a = solve_dirichlet(&op, &env, 0.1, &d, &g, &Default::default()).unwrap();
    let b = solve_dirichlet(&op, &env, 0.05, &d, &g, &Default::default()).unwrap();
    assert_eq!(a.u.values, b.u.values);

    let source = FbarSource::Analytic {
        op: op.clone(),
        cell: CellValue::scalar_linear(2, 2.0),
    };
    let e = solve_effective_dirichlet(&source, &d, &g, &Default::default()).unwrap();
    assert_eq!(a.u.values, e.u.values);
}

#[test]
fn harmonic_mean_effective_solution_is_exact() {
    let d = Arc::new(make_domain(1, Shape::Cube, 1.0, 0.01).unwrap());
    let source = FbarSource::Analytic {
        op: forced_linear(1),
        cell: CellValue::scalar_linear(1, 1.6),
    };
    let sol = solve_effective_dirichlet(&source, &d, &zero, &Default::default()).unwrap();
    for i in 0..d.n_nodes() {
        let x = d.position(i)[0];
        assert!((sol.u.values[i] - (1.0 - x * x) / 3.2).abs() < 1e-9);
    }
}

#[test]
fn tabulated_and_closed_form_paths_agree() {
    let d = Arc::new(make_domain(1, Shape::Cube, 1.0, 0.01).unwrap());
    let table = FbarTable::tabulate(
        1,
        vec![TableAxis {
            component: Component::Hessian { i: 0, j: 0 },
            values: vec![-2.0, -1.0, 0.0, 1.0],
        }],
        |m, _| Ok(-1.6 * m.get(0, 0) - 1.0),
    )
    .unwrap();
    let tabulated = FbarSource::Table {
        table: Arc::new(table),
        constants: bounds(),
    };
    let closed = FbarSource::Analytic {
        op: forced_linear(1),
        cell: CellValue::scalar_linear(1, 1.6),
    };
    let a = solve_effective_dirichlet(&tabulated, &d, &zero, &Default::default()).unwrap();
    let b = solve_effective_dirichlet(&closed, &d, &zero, &Default::default()).unwrap();
    for (u, v) in a.u.values.iter().zip(&b.u.values) {
        assert!((u - v).abs() < 1e-7);
    }

    let narrow = FbarTable::tabulate(
        1,
        vec![TableAxis {
            component: Component::Hessian { i: 0, j: 0 },
            values: vec![-0.1, 0.1],
        }],
        |m, _| Ok(-1.6 * m.get(0, 0) - 1.0),
    )
    .unwrap();
    let narrow = FbarSource::Table {
        table: Arc::new(narrow),
        constants: bounds(),
    };
    assert!(matches!(
        solve_effective_dirichlet(&narrow, &d, &zero, &Default::default()),
        Err(Error::OutOfTableRange(_))
    ));
}

#[test]
fn pseudo_time_agrees_with_newton() {
    let (op, env) = pucci_env(5);
    let d = Arc::new(make_domain(2, Shape::Ball, 1.0, 0.125).unwrap());
    let g = |x: &[f64]| x[0] * x[1] + 0.2;
    let forced = op.subtract_constant(1.0);
    let newton = solve_dirichlet(&forced, &env, 0.5, &d, &g, &Default::default()).unwrap();
    let explicit = solve_dirichlet(
        &forced,
        &env,
        0.5,
        &d,
        &g,
        &DirichletParams {
            method: DirichletMethod::PseudoTime,
            max_iter: 200_000,
            tol_res: Some(1e-9),
            ..Default::default()
        },
    )
    .unwrap();
    // residual 1e-9 times the inverse operator bound (≤ r²/(2λ)) bounds the gap
    for (u, v) in newton.u.values.iter().zip(&explicit.u.values) {
        assert!((u - v).abs() < 1e-8, "{u} {v}");
    }
}

#[test]
fn odd_reflection_negates_the_solution() {
    let (op, env) = pucci_env(9);
    let d = Arc::new(make_domain(2, Shape::Ball, 1.0, 0.05).unwrap());
    let forced = op.subtract_constant(1.0);
    let g = |x: &[f64]| 0.5 * x[0] - x[1] * x[1];
    let neg_g = |x: &[f64]| -g(x);
    let params = DirichletParams {
        tol_res: Some(1e-10),
        ..Default::default()
    };
    let u = solve_dirichlet(&forced, &env, 0.25, &d, &g, &params).unwrap();
    let v = solve_dirichlet(&forced.odd_reflection(), &env, 0.25, &d, &neg_g, &params).unwrap();
    let bound = 1e-10 / (2.0 * 1.0);
    for (a, b) in u.u.values.iter().zip(&v.u.values) {
        assert!((a + b).abs() <= bound + 1e-12, "{a} {b}");
    }
}

#[test]
fn translation_of_environment_and_domain_commute() {
    let (op, env) = pucci_env(13);
    let h = 0.0625;
    let eps = 0.25;
    let per_cell = steps_per_cell(eps, h).unwrap();
    let z = [7i64, -3];
    let d0 = Arc::new(make_domain(2, Shape::Ball, 1.0, h).unwrap());
    let dz: Arc<LatticeDomain> = Arc::new(make_domain_at(2, Shape::Ball, 1.0, h, &z).unwrap());
    let shifted = env.translate_steps(&z, per_cell).unwrap();
    let forced = op.subtract_constant(1.0);
    let g = |x: &[f64]| x[0] * x[0] + 0.3 * x[1];
    let gz = |x: &[f64]| g(&[x[0] - z[0] as f64 * h, x[1] - z[1] as f64 * h]);
    let params = DirichletParams::default();
    let a = solve_dirichlet(&forced, &shifted, eps, &d0, &g, &params).unwrap();
    let b = solve_dirichlet(&forced, &env, eps, &dz, &gz, &params).unwrap();
    assert_eq!(d0.n_nodes(), dz.n_nodes());
    for i in 0..d0.n_nodes() {
        let idx: Vec<i64> = d0.index(i).iter().zip(&z).map(|(a, b)| a + b).collect();
        let j = dz.point_at(&idx).unwrap();
        assert!((a.u.values[i] - b.u.values[j]).abs() < 1e-9);
    }
}

#[test]
fn unresolved_microstructure_is_rejected() {
    let env = harmonic_env(0);
    let d = Arc::new(make_domain(1, Shape::Cube, 1.0, 0.02).unwrap());
    let op = forced_linear(1);
    // 0.05 / 0.02 is not an integer; 0.06 / 0.02 = 3 is too coarse
    assert!(solve_dirichlet(&op, &env, 0.05, &d, &zero, &Default::default()).is_err());
    assert!(solve_dirichlet(&op, &env, 0.06, &d, &zero, &Default::default()).is_err());
    assert!(solve_dirichlet(&op, &env, 0.08, &d, &zero, &Default::default()).is_ok());
}

#[test]
fn nonconvergence_is_reported() {
    let (op, env) = pucci_env(1);
    let d = Arc::new(make_domain(2, Shape::Ball, 1.0, 0.05).unwrap());
    let params = DirichletParams {
        method: DirichletMethod::PseudoTime,
        max_iter: 3,
        ..Default::default()
    };
    let err = solve_dirichlet(&op.subtract_constant(1.0), &env, 0.25, &d, &zero, &params)
        .unwrap_err();
    assert!(err.is_nonconvergence());
}

#[test]
fn study_validates_its_inputs() {
    let env = harmonic_env(2);
    let d = Arc::new(make_domain(1, Shape::Cube, 1.0, 0.0125).unwrap());
    let source = FbarSource::Analytic {
        op: forced_linear(1),
        cell: CellValue::scalar_linear(1, 1.6),
    };
    let mut params = StudyParams {
        eps_list: vec![0.1, 0.2],
        seed: 2,
        threshold_rel: None,
        dirichlet: Default::default(),
    };
    assert!(convergence_study(&forced_linear(1), &env, &source, &d, &zero, &params).is_err());
    params.eps_list = vec![0.2, 0.1];
    params.seed = 3;
    assert!(convergence_study(&forced_linear(1), &env, &source, &d, &zero, &params).is_err());
    params.seed = 2;
    let study = convergence_study(&forced_linear(1), &env, &source, &d, &zero, &params).unwrap();
    assert_eq!(study.sup_errors.len(), 2);
    assert!((study.effective_sup - 1.0 / 3.2).abs() < 1e-9);
    assert!(study.sup_errors.iter().all(|e| e.is_finite()));
}

#[test]
fn constant_study_errors_stay_at_zero() {
    let model = EnvModel::constant(1, bounds(), CellValue::scalar_linear(1, 2.0));
    let env = sample_env(Arc::new(model), 4).unwrap();
    let d = Arc::new(make_domain(1, Shape::Cube, 1.0, 0.0125).unwrap());
    let source = FbarSource::Analytic {
        op: forced_linear(1),
        cell: CellValue::scalar_linear(1, 2.0),
    };
    let params = StudyParams {
        eps_list: vec![0.2, 0.1, 0.05],
        seed: 4,
        threshold_rel: Some(0.05),
        dirichlet: Default::default(),
    };
    let study = convergence_study(&forced_linear(1), &env, &source, &d, &zero, &params).unwrap();
    assert!(study.sup_errors.iter().all(|&e| e < 1e-12));
    assert!(study.passed);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn ordered_boundary_data_give_ordered_solutions(
        seed in 0u64..1000,
        lin in prop::array::uniform3(-1.0f64..1.0),
        quad in prop::array::uniform3(-1.0f64..1.0),
        lift in 0.0f64..0.5,
        bowl in 0.0f64..0.5,
    ) {
        let (op, env) = pucci_env(seed);
        let d = Arc::new(make_domain(2, Shape::Ball, 1.0, 0.0625).unwrap());
        let forced = op.subtract_constant(0.5);
        let g1 = move |x: &[f64]| {
            lin[0] + lin[1] * x[0] + lin[2] * x[1]
                + quad[0] * x[0] * x[0] + quad[1] * x[0] * x[1] + quad[2] * x[1] * x[1]
        };
        let g2 = move |x: &[f64]| g1(x) + lift + bowl * (x[0] * x[0] + x[1] * x[1]);
        let params = DirichletParams { tol_res: Some(1e-10), ..Default::default() };
        let u1 = solve_dirichlet(&forced, &env, 0.25, &d, &g1, &params).unwrap();
        let u2 = solve_dirichlet(&forced, &env, 0.25, &d, &g2, &params).unwrap();
        for (a, b) in u1.u.values.iter().zip(&u2.u.values) {
            prop_assert!(*a <= *b + 1e-9);
        }
    }
}
