use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::lattice::{center_slot, GridField, LatticeDomain};
use crate::operators::EllipticOperator;
use crate::scheme::{node_cells, DiscreteOperator, Scheme};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    /// Policy iteration on the obstacle constraint with Newton steps for the operator and
    /// sparse direct linear solves. Converges in finitely many steps.
    #[default]
    PolicyIteration,
    /// Damped projected Jacobi iteration `w ← max(0, w − τ·G(w))`. Slow, but needs only
    /// operator evaluations; kept as an independent check on small grids.
    ProjectedExplicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObstacleParams {
    /// Residual tolerance; `None` means `1e-8 · max|G(0)|`.
    pub tol_res: Option<f64>,
    pub max_iter: usize,
    /// Nodes with `w ≤ tol_contact` form the contact set.
    pub tol_contact: f64,
    pub method: SolverMethod,
    /// `None` selects the default scheme for the operator family.
    pub scheme: Option<Scheme>,
}

impl Default for ObstacleParams {
    fn default() -> Self {
        ObstacleParams {
            tol_res: None,
            max_iter: 500,
            tol_contact: 0.0,
            method: SolverMethod::PolicyIteration,
            scheme: None,
        }
    }
}

impl ObstacleParams {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.tol_res {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidParameter(format!("tol_res {t} must be positive")));
            }
        }
        if !(self.tol_contact.is_finite() && self.tol_contact >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tol_contact {} must be nonnegative",
                self.tol_contact
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ObstacleSolution {
    pub w: GridField,
    /// Contact flags over interior nodes.
    pub contact_mask: Vec<bool>,
    /// `max |min{G(w), w}|` over interior nodes.
    pub residual: f64,
    pub iterations: usize,
    /// The constant subtracted from the operator.
    pub alpha: f64,
    /// `max_y G_h(0)(y)`: the discrete operator applied to the zero field.
    pub k: f64,
    pub tol_res: f64,
    pub tol_contact: f64,
}

/// Solves `min{G(D²_h w, 0, y, ω), w} = 0` on the interior nodes, `w = 0` on the
/// boundary points.
pub fn solve_obstacle(
    op: &EllipticOperator,
    domain: &Arc<LatticeDomain>,
    env: &Environment,
    params: &ObstacleParams,
) -> Result<ObstacleSolution> {
    params.validate()?;
    op.check_env(env.model())?;
    let per_cell = env.model().per_cell(domain.spacing())?;
    let cells = node_cells(env, domain, per_cell);
    let scheme = params.scheme.unwrap_or_else(|| Scheme::default_for(op));
    let dop = DiscreteOperator::new(op, domain, cells, scheme, false)?;
    solve_discrete(&dop, domain, op.offset(), params)
}

fn solve_discrete(
    dop: &DiscreteOperator,
    domain: &Arc<LatticeDomain>,
    alpha: f64,
    params: &ObstacleParams,
) -> Result<ObstacleSolution> {
    let n = domain.n_nodes();
    let np = domain.n_points();
    let zero = vec![0.0; np];
    let mut scratch = vec![0.0; dop.stencil_len()];
    let g0: Vec<f64> = (0..n).map(|i| dop.eval(&zero, i, &mut scratch)).collect();
    if let Some(i) = g0.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { node: i });
    }
    let k = g0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lowest = g0.iter().copied().fold(f64::INFINITY, f64::min);
    let tol_res = params
        .tol_res
        .unwrap_or_else(|| 1e-8 * k.abs().max(lowest.abs()).max(f64::MIN_POSITIVE));

    let finish = |w: Vec<f64>, iterations: usize| -> Result<ObstacleSolution> {
        let mut scratch = vec![0.0; dop.stencil_len()];
        let mut residual = 0.0_f64;
        for i in 0..n {
            let r = dop.eval(&w, i, &mut scratch).min(w[i]);
            if !r.is_finite() {
                return Err(Error::NonFinite { node: i });
            }
            residual = residual.max(r.abs());
        }
        if residual > tol_res {
            return Err(Error::NonConvergence {
                iterations,
                residual,
            });
        }
        let contact_mask = w[..n].iter().map(|&v| v <= params.tol_contact).collect();
        Ok(ObstacleSolution {
            w: GridField {
                domain: domain.clone(),
                values: w,
            },
            contact_mask,
            residual,
            iterations,
            alpha,
            k,
            tol_res,
            tol_contact: params.tol_contact,
        })
    };

    if lowest >= 0.0 {
        // w ≡ 0 is already the solution: G(0) ≥ 0 everywhere.
        return finish(zero, 0);
    }
    match params.method {
        SolverMethod::PolicyIteration => {
            let (w, it) = policy_iteration(dop, domain, &g0, tol_res, params.max_iter)?;
            finish(w, it)
        }
        SolverMethod::ProjectedExplicit => {
            let (w, it) = projected_explicit(dop, domain, tol_res, params.max_iter)?;
            finish(w, it)
        }
    }
}

/// Outer loop: policy iteration on the obstacle branch (`PDE` where `G(w) = 0` is
/// imposed, `OBS` where `w = 0`). Inner loop: Newton on the piecewise-linear discrete
/// operator at the `PDE` nodes.
fn policy_iteration(
    dop: &DiscreteOperator,
    domain: &LatticeDomain,
    g0: &[f64],
    tol_res: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = domain.n_nodes();
    let pattern = domain.system_pattern()?;
    let slots = dop.stencil_len();
    let center = center_slot(domain.dim());
    let mut w: Vec<f64> = vec![0.0; domain.n_points()];
    let mut obstacle: Vec<bool> = g0.iter().map(|&g| g >= 0.0).collect();
    let mut scratch = vec![0.0; slots];
    let mut row = vec![0.0; slots];
    let mut values = vec![0.0; pattern.nnz()];
    let mut rhs = vec![0.0; n];
    let mut total = 0usize;
    let inner_tol = 0.1 * tol_res;

    loop {
        // Newton for the current policy.
        let mut converged = false;
        for _ in 0..max_iter {
            total += 1;
            if total > max_iter {
                break;
            }
            values.fill(0.0);
            let mut worst = 0.0_f64;
            for i in 0..n {
                if obstacle[i] {
                    values[pattern.position(i, center).expect("diagonal")] = 1.0;
                    rhs[i] = -w[i];
                    worst = worst.max(w[i].abs());
                } else {
                    let g = dop.linearize(&w, i, &mut scratch, &mut row);
                    if !g.is_finite() {
                        return Err(Error::NonFinite { node: i });
                    }
                    for (s, &a) in row.iter().enumerate() {
                        if let Some(p) = pattern.position(i, s) {
                            values[p] = a;
                        }
                    }
                    rhs[i] = -g;
                    worst = worst.max(g.abs());
                }
            }
            if worst <= inner_tol {
                converged = true;
                break;
            }
            pattern.solve(&values, &mut rhs)?;
            for i in 0..n {
                w[i] = if obstacle[i] { 0.0 } else { w[i] + rhs[i] };
            }
        }
        if !converged {
            let residual = residual_of(dop, &w, n, &mut scratch);
            return Err(Error::NonConvergence {
                iterations: total,
                residual,
            });
        }

        // Policy improvement: pick the smaller branch of min{G(w), w}; ties keep the
        // current policy.
        let scale = w[..n].iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let w_tie = 1e-12 * scale;
        let g_tie = 1e-3 * tol_res;
        let mut changed = false;
        for i in 0..n {
            if obstacle[i] {
                if dop.eval(&w, i, &mut scratch) < -g_tie {
                    obstacle[i] = false;
                    changed = true;
                }
            } else if w[i] < -w_tie {
                obstacle[i] = true;
                changed = true;
            }
        }
        if !changed {
            for v in &mut w[..n] {
                *v = v.max(0.0);
            }
            return Ok((w, total));
        }
    }
}

fn residual_of(dop: &DiscreteOperator, w: &[f64], n: usize, scratch: &mut [f64]) -> f64 {
    (0..n)
        .map(|i| dop.eval(w, i, scratch).min(w[i]).abs())
        .fold(0.0, f64::max)
}

fn projected_explicit(
    dop: &DiscreteOperator,
    domain: &LatticeDomain,
    tol_res: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = domain.n_nodes();
    let h = domain.spacing();
    let big_lambda = dop_big_lambda(dop);
    let tau = h * h / (2.0 * domain.dim() as f64 * big_lambda);
    let mut w = vec![0.0; domain.n_points()];
    let mut next = w.clone();
    let mut scratch = vec![0.0; dop.stencil_len()];
    for it in 1..=max_iter {
        let mut residual = 0.0_f64;
        for i in 0..n {
            let g = dop.eval(&w, i, &mut scratch);
            if !g.is_finite() {
                return Err(Error::NonFinite { node: i });
            }
            residual = residual.max(g.min(w[i]).abs());
            next[i] = (w[i] - tau * g).max(0.0);
        }
        if residual <= tol_res {
            return Ok((w, it));
        }
        std::mem::swap(&mut w, &mut next);
    }
    let residual = residual_of(dop, &w, n, &mut scratch);
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual,
    })
}

fn dop_big_lambda(dop: &DiscreteOperator) -> f64 {
    dop.operator().constants().big_lambda
}

/// Size of the contact set inside a window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactMeasure {
    pub count: usize,
    /// `count · h^d`.
    pub measure: f64,
    /// `count` over the number of window nodes (0 for an empty window).
    pub fraction: f64,
}

/// Counts contact nodes, optionally restricted to a window mask over interior nodes.
pub fn contact_measure(sol: &ObstacleSolution, window: Option<&[bool]>) -> Result<ContactMeasure> {
    let d = &sol.w.domain;
    let n = d.n_nodes();
    if let Some(win) = window {
        if win.len() != n {
            return Err(Error::InvalidParameter(format!(
                "window mask has {} entries for {n} nodes",
                win.len()
            )));
        }
    }
    let mut count = 0usize;
    let mut size = 0usize;
    for i in 0..n {
        if window.is_none_or(|win| win[i]) {
            size += 1;
            if sol.contact_mask[i] {
                count += 1;
            }
        }
    }
    Ok(ContactMeasure {
        count,
        measure: count as f64 * d.spacing().powi(d.dim() as i32),
        fraction: if size == 0 {
            0.0
        } else {
            count as f64 / size as f64
        },
    })
}
