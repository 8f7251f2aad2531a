//! Periodic cell-problem oracle for linear nondivergence operators `−tr(A(y)·D²u)`.
//!
//! On the discrete torus of one period, the effective matrix is `Σ m(x)·A(x)` where `m` is
//! the invariant measure of the centered difference operator: `Lᵀm = 0`, `Σ m = 1`.
//! Solved densely, independently of the obstacle machinery.

use nalgebra::{DMatrix, DVector};

/// `tile` holds one matrix per cell of the `period^dim` tile, row-major with the first
/// axis slowest; every cell is resolved by `per_cell` nodes per axis.
pub fn periodic_effective_matrix(
    tile: &[Vec<Vec<f64>>],
    period: usize,
    dim: usize,
    per_cell: usize,
) -> Vec<Vec<f64>> {
    let n = period * per_cell;
    let total = n.pow(dim as u32);
    assert_eq!(tile.len(), period.pow(dim as u32));

    let coords = |mut flat: usize| -> Vec<usize> {
        let mut c = vec![0; dim];
        for k in (0..dim).rev() {
            c[k] = flat % n;
            flat /= n;
        }
        c
    };
    let flat_of = |c: &[isize]| -> usize {
        c.iter()
            .fold(0, |acc, &v| acc * n + v.rem_euclid(n as isize) as usize)
    };
    let cell_matrix = |c: &[usize]| -> &Vec<Vec<f64>> {
        let t = c.iter().fold(0, |acc, &v| acc * period + v / per_cell);
        &tile[t]
    };

    // generator L with (Lu)(x) = Σ_ij A_ij(x) ∂_ij u(x), unit spacing
    let mut l = DMatrix::<f64>::zeros(total, total);
    for x in 0..total {
        let c = coords(x);
        let a = cell_matrix(&c);
        let ci: Vec<isize> = c.iter().map(|&v| v as isize).collect();
        for i in 0..dim {
            let mut plus = ci.clone();
            plus[i] += 1;
            let mut minus = ci.clone();
            minus[i] -= 1;
            l[(x, flat_of(&plus))] += a[i][i];
            l[(x, flat_of(&minus))] += a[i][i];
            l[(x, x)] -= 2.0 * a[i][i];
            for j in (i + 1)..dim {
                // 2·A_ij·∂_ij with the four-point centered cross difference
                let w = 2.0 * a[i][j] / 4.0;
                for (si, sj, sign) in [(1, 1, 1.0), (-1, -1, 1.0), (1, -1, -1.0), (-1, 1, -1.0)] {
                    let mut y = ci.clone();
                    y[i] += si;
                    y[j] += sj;
                    l[(x, flat_of(&y))] += sign * w;
                }
            }
        }
    }

    let mut sys = l.transpose();
    for k in 0..total {
        sys[(total - 1, k)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(total);
    rhs[total - 1] = 1.0;
    let m = sys.lu().solve(&rhs).expect("invariant measure is unique");

    let mut abar = vec![vec![0.0; dim]; dim];
    for x in 0..total {
        let a = cell_matrix(&coords(x));
        for i in 0..dim {
            for j in 0..dim {
                abar[i][j] += m[x] * a[i][j];
            }
        }
    }
    abar
}
