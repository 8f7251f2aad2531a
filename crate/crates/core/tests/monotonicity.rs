use std::sync::Arc;

use homog::env::{sample_env, CellValue, EnvModel, Environment};
use homog::lattice::{make_domain, make_domain_at, LatticeDomain, Shape};
use homog::obstacle::{contact_measure, solve_obstacle, ObstacleParams, ObstacleSolution};
use homog::operators::{EllipticOperator, EllipticityConstants, PucciKind};
use homog::sym::SymMatrix;
use proptest::prelude::*;

fn setup(dim: usize, seed: u64) -> (EllipticOperator, Environment) {
    let c = EllipticityConstants::new(1.0, 4.0, 0.0).unwrap();
    let model = EnvModel::checkerboard(
        dim,
        c,
        vec![
            CellValue::Pucci {
                lambda: 1.0,
                big_lambda: 2.0,
            },
            CellValue::Pucci {
                lambda: 2.0,
                big_lambda: 4.0,
            },
        ],
        vec![0.5, 0.5],
    );
    (
        EllipticOperator::random_pucci(dim, PucciKind::Plus, c).unwrap(),
        sample_env(Arc::new(model), seed).unwrap(),
    )
}

/// `G = F_M − α` with `α` placed by `t ∈ [0, 1]` across the range of `G(0)` over the two
/// cell values, so that contact sets are typically partial.
fn shifted(op: &EllipticOperator, dim: usize, t: f64) -> EllipticOperator {
    let (diag, lo, hi) = match dim {
        1 => (vec![-0.5], 0.8, 2.2),
        _ => (vec![1.0, -0.6], 0.1, 0.5),
    };
    op.shift_operator(&SymMatrix::from_diagonal(&diag), &vec![0.0; dim])
        .subtract_constant(lo + t * (hi - lo))
}

fn solve(g: &EllipticOperator, d: &Arc<LatticeDomain>, env: &Environment) -> ObstacleSolution {
    solve_obstacle(g, d, env, &ObstacleParams::default()).unwrap()
}

/// Solution value at the node of `d` with the given lattice index.
fn value_at(sol: &ObstacleSolution, idx: &[i64]) -> Option<(f64, bool)> {
    let d = &sol.w.domain;
    let p = d.point_at(idx)?;
    (p < d.n_nodes()).then(|| (sol.w.values[p], sol.contact_mask[p]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn raising_the_operator_lowers_the_solution(
        seed in 0u64..10_000,
        dim in 1usize..=2,
        t in 0.0f64..1.0,
        lift in 0.01f64..1.0,
    ) {
        let (op, env) = setup(dim, seed);
        let d = Arc::new(make_domain(dim, Shape::Cube, 6.0, 0.5).unwrap());
        let g1 = shifted(&op, dim, t);
        let g2 = g1.subtract_constant(-lift);
        let s1 = solve(&g1, &d, &env);
        let s2 = solve(&g2, &d, &env);
        let tol = s1.tol_res.max(s2.tol_res);
        for i in 0..d.n_nodes() {
            prop_assert!(s1.w.values[i] >= s2.w.values[i] - tol);
            prop_assert!(!s1.contact_mask[i] || s2.contact_mask[i]);
        }
    }

    #[test]
    fn growing_the_domain_raises_the_solution(
        seed in 0u64..10_000,
        dim in 1usize..=2,
        t in 0.0f64..1.0,
        offset in prop::array::uniform2(-4i64..=4),
    ) {
        let (op, env) = setup(dim, seed);
        let g = shifted(&op, dim, t);
        let big = Arc::new(make_domain(dim, Shape::Cube, 6.0, 0.5).unwrap());
        let small = Arc::new(make_domain_at(dim, Shape::Cube, 3.0, 0.5, &offset[..dim]).unwrap());
        let sb = solve(&g, &big, &env);
        let ss = solve(&g, &small, &env);
        let tol = sb.tol_res.max(ss.tol_res);
        for i in 0..small.n_nodes() {
            let (wb, cb) = value_at(&sb, small.index(i)).expect("nested");
            prop_assert!(ss.w.values[i] <= wb + tol);
            prop_assert!(!cb || ss.contact_mask[i]);
        }
    }

    #[test]
    fn contact_measure_is_subadditive(
        seed in 0u64..10_000,
        dim in 1usize..=2,
        t in 0.0f64..1.0,
    ) {
        let (op, env) = setup(dim, seed);
        let g = shifted(&op, dim, t);
        let (r, h) = (6.0, 0.5);
        let whole = Arc::new(make_domain(dim, Shape::Cube, r, h).unwrap());
        let m_whole = contact_measure(&solve(&g, &whole, &env), None).unwrap().measure;
        let half = (r / (2.0 * h)) as i64;
        let mut sum = 0.0;
        let mut covered = 0;
        for corner in 0..(1usize << dim) {
            let center: Vec<i64> = (0..dim)
                .map(|k| if (corner >> k) & 1 == 1 { half } else { -half })
                .collect();
            let sub = Arc::new(make_domain_at(dim, Shape::Cube, r / 2.0, h, &center).unwrap());
            covered += sub.n_nodes();
            sum += contact_measure(&solve(&g, &sub, &env), None).unwrap().measure;
        }
        let face_nodes = whole.n_nodes() - covered;
        prop_assert!(face_nodes > 0);
        prop_assert!(m_whole <= sum + face_nodes as f64 * h.powi(dim as i32));
    }
}
