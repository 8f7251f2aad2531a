//! Oscillatory Dirichlet problems `F(D²u, Du, x/ε, ω) = 0` and their comparison with the
//! effective problem `F̄(D²u, Du) = 0` as `ε` decreases.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::{steps_per_cell, CellValue, Environment};
use crate::error::{Error, Result};
use crate::lattice::{GridField, LatticeDomain};
use crate::operators::EllipticOperator;
use crate::scheme::{node_cells, DiscreteOperator, Scheme};
use crate::sym::SymMatrix;

/// Fewest lattice steps allowed across one microstructure cell.
pub const MIN_STEPS_PER_CELL: i64 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirichletMethod {
    /// Newton iteration with sparse direct solves (policy iteration for Pucci schemes).
    #[default]
    Newton,
    /// Explicit pseudo-time stepping `u ← u − τ·F(u)`; for small cross-checks.
    PseudoTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DirichletParams {
    /// `None` means `1e-9 · max(1, max|F(u₀)|)` for the initial guess `u₀`.
    pub tol_res: Option<f64>,
    pub max_iter: usize,
    pub method: DirichletMethod,
    pub scheme: Option<Scheme>,
}

impl Default for DirichletParams {
    fn default() -> Self {
        DirichletParams {
            tol_res: None,
            max_iter: 200,
            method: DirichletMethod::Newton,
            scheme: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DirichletSolution {
    pub u: GridField,
    /// `max |F(u)|` over interior nodes.
    pub residual: f64,
    pub iterations: usize,
    pub tol_res: f64,
}

/// Solves `F(D²_h u, D_h u, x/ε, ω) = 0` on the interior nodes with `u = g` on the
/// boundary points. The spacing must resolve each `ε`-cell with an integer number of
/// at least [`MIN_STEPS_PER_CELL`] steps.
pub fn solve_dirichlet(
    op: &EllipticOperator,
    env: &Environment,
    eps: f64,
    domain: &Arc<LatticeDomain>,
    g: &dyn Fn(&[f64]) -> f64,
    params: &DirichletParams,
) -> Result<DirichletSolution> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps {eps} must be positive")));
    }
    op.check_env(env.model())?;
    let h = domain.spacing();
    let per_cell = steps_per_cell(eps * env.model().cell_size, h)?;
    if per_cell < MIN_STEPS_PER_CELL {
        return Err(Error::InvalidParameter(format!(
            "spacing {h} gives {per_cell} steps per cell at eps {eps}; at least \
             {MIN_STEPS_PER_CELL} are required"
        )));
    }
    let cells = node_cells(env, domain, per_cell);
    let scheme = params.scheme.unwrap_or_else(|| Scheme::default_for(op));
    let dop = DiscreteOperator::new(op, domain, cells, scheme, true)?;
    solve_fixed(&dop, domain, g, params)
}

fn solve_fixed(
    dop: &DiscreteOperator,
    domain: &Arc<LatticeDomain>,
    g: &dyn Fn(&[f64]) -> f64,
    params: &DirichletParams,
) -> Result<DirichletSolution> {
    if params.max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be positive".into()));
    }
    let n = domain.n_nodes();
    let mut u = vec![0.0; domain.n_points()];
    for (p, v) in u.iter_mut().enumerate().skip(n) {
        *v = g(&domain.position(p));
        if !v.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "boundary data is not finite at {:?}",
                domain.position(p)
            )));
        }
    }
    let mut scratch = vec![0.0; dop.stencil_len()];
    let initial = max_residual(dop, &u, n, &mut scratch)?;
    let tol_res = match params.tol_res {
        Some(t) if t.is_finite() && t > 0.0 => t,
        Some(t) => return Err(Error::InvalidParameter(format!("tol_res {t} must be positive"))),
        None => 1e-9 * initial.max(1.0),
    };
    let iterations = match params.method {
        DirichletMethod::Newton => newton(dop, domain, &mut u, tol_res, params.max_iter)?,
        DirichletMethod::PseudoTime => pseudo_time(dop, domain, &mut u, tol_res, params.max_iter)?,
    };
    let residual = max_residual(dop, &u, n, &mut scratch)?;
    if residual > tol_res {
        return Err(Error::NonConvergence {
            iterations,
            residual,
        });
    }
    Ok(DirichletSolution {
        u: GridField {
            domain: domain.clone(),
            values: u,
        },
        residual,
        iterations,
        tol_res,
    })
}

fn max_residual(dop: &DiscreteOperator, u: &[f64], n: usize, scratch: &mut [f64]) -> Result<f64> {
    let mut worst = 0.0_f64;
    for i in 0..n {
        let r = dop.eval(u, i, scratch);
        if !r.is_finite() {
            return Err(Error::NonFinite { node: i });
        }
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

fn newton(
    dop: &DiscreteOperator,
    domain: &LatticeDomain,
    u: &mut [f64],
    tol_res: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = domain.n_nodes();
    let pattern = domain.system_pattern()?;
    let slots = dop.stencil_len();
    let mut scratch = vec![0.0; slots];
    let mut row = vec![0.0; slots];
    let mut values = vec![0.0; pattern.nnz()];
    let mut rhs = vec![0.0; n];
    for it in 0..=max_iter {
        values.fill(0.0);
        let mut worst = 0.0_f64;
        for i in 0..n {
            let f = dop.linearize(u, i, &mut scratch, &mut row);
            if !f.is_finite() {
                return Err(Error::NonFinite { node: i });
            }
            for (s, &a) in row.iter().enumerate() {
                if let Some(p) = pattern.position(i, s) {
                    values[p] = a;
                }
            }
            rhs[i] = -f;
            worst = worst.max(f.abs());
        }
        if worst <= tol_res {
            return Ok(it);
        }
        if it == max_iter {
            return Err(Error::NonConvergence {
                iterations: it,
                residual: worst,
            });
        }
        pattern.solve(&values, &mut rhs)?;
        for (v, d) in u[..n].iter_mut().zip(&rhs) {
            *v += d;
        }
    }
    unreachable!("loop returns by the last iteration")
}

fn pseudo_time(
    dop: &DiscreteOperator,
    domain: &LatticeDomain,
    u: &mut [f64],
    tol_res: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = domain.n_nodes();
    let h = domain.spacing();
    let big_lambda = dop.operator().constants().big_lambda;
    let tau = h * h / (2.0 * domain.dim() as f64 * big_lambda);
    let mut scratch = vec![0.0; dop.stencil_len()];
    let mut step = vec![0.0; n];
    for it in 0..max_iter {
        let mut worst = 0.0_f64;
        for (i, s) in step.iter_mut().enumerate() {
            let f = dop.eval(u, i, &mut scratch);
            if !f.is_finite() {
                return Err(Error::NonFinite { node: i });
            }
            worst = worst.max(f.abs());
            *s = tau * f;
        }
        if worst <= tol_res {
            return Ok(it);
        }
        for (v, s) in u[..n].iter_mut().zip(&step) {
            *v -= s;
        }
    }
    Ok(max_iter)
}

/// A component of the argument `(M, p)` of an operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Component {
    Hessian { i: usize, j: usize },
    Gradient { k: usize },
}

impl Component {
    fn read(&self, m: &SymMatrix, p: &[f64]) -> f64 {
        match *self {
            Component::Hessian { i, j } => m.get(i, j),
            Component::Gradient { k } => p[k],
        }
    }

    fn write(&self, m: &mut SymMatrix, p: &mut [f64], v: f64) {
        match *self {
            Component::Hessian { i, j } => m.set(i, j, v),
            Component::Gradient { k } => p[k] = v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableAxis {
    pub component: Component,
    /// Strictly increasing nodes, at least two.
    pub values: Vec<f64>,
}

/// Tabulated effective operator with multilinear interpolation.
///
/// Components of `(M, p)` without an axis are ignored: the tabulated function is taken
/// to be independent of them. Queries outside the box are errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FbarTable {
    pub dim: usize,
    pub axes: Vec<TableAxis>,
    /// Values at the grid points, last axis varying fastest.
    pub values: Vec<f64>,
}

impl FbarTable {
    pub fn new(dim: usize, axes: Vec<TableAxis>, values: Vec<f64>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidParameter("a table needs at least one axis".into()));
        }
        for ax in &axes {
            let ok = match ax.component {
                Component::Hessian { i, j } => i < dim && j < dim,
                Component::Gradient { k } => k < dim,
            };
            if !ok {
                return Err(Error::InvalidParameter(format!(
                    "{:?} is not a component in dimension {dim}",
                    ax.component
                )));
            }
            if ax.values.len() < 2 || ax.values.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidParameter(format!(
                    "axis {:?} needs at least two strictly increasing nodes",
                    ax.component
                )));
            }
        }
        let size: usize = axes.iter().map(|a| a.values.len()).product();
        if values.len() != size || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "table needs {size} finite values, got {}",
                values.len()
            )));
        }
        Ok(FbarTable { dim, axes, values })
    }

    /// Evaluates `f` at every grid point (components without an axis set to zero).
    pub fn tabulate(
        dim: usize,
        axes: Vec<TableAxis>,
        mut f: impl FnMut(&SymMatrix, &[f64]) -> Result<f64>,
    ) -> Result<Self> {
        let shape: Vec<usize> = axes.iter().map(|a| a.values.len()).collect();
        let size: usize = shape.iter().product();
        let mut values = Vec::with_capacity(size);
        let mut idx = vec![0usize; axes.len()];
        for _ in 0..size {
            let mut m = SymMatrix::zeros(dim);
            let mut p = vec![0.0; dim];
            for (ax, &k) in axes.iter().zip(&idx) {
                ax.component.write(&mut m, &mut p, ax.values[k]);
            }
            values.push(f(&m, &p)?);
            for a in (0..idx.len()).rev() {
                idx[a] += 1;
                if idx[a] < shape[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Self::new(dim, axes, values)
    }

    pub fn interpolate(&self, m: &SymMatrix, p: &[f64]) -> Result<f64> {
        // Per axis: lower node index and weight of the upper node.
        let mut cell = Vec::with_capacity(self.axes.len());
        for ax in &self.axes {
            let x = ax.component.read(m, p);
            let v = &ax.values;
            let (lo, hi) = (v[0], v[v.len() - 1]);
            let slack = 1e-5 * (hi - lo);
            if !(x >= lo - slack && x <= hi + slack) {
                return Err(Error::OutOfTableRange(format!(
                    "{:?} = {x} outside [{lo}, {hi}]",
                    ax.component
                )));
            }
            let x = x.clamp(lo, hi);
            let k = v.partition_point(|&t| t <= x).clamp(1, v.len() - 1) - 1;
            cell.push((k, (x - v[k]) / (v[k + 1] - v[k])));
        }
        let mut total = 0.0;
        for corner in 0..(1usize << self.axes.len()) {
            let mut weight = 1.0;
            let mut flat = 0usize;
            for (a, &(k, t)) in cell.iter().enumerate() {
                let up = (corner >> a) & 1 == 1;
                weight *= if up { t } else { 1.0 - t };
                flat = flat * self.axes[a].values.len() + k + up as usize;
            }
            if weight != 0.0 {
                total += weight * self.values[flat];
            }
        }
        Ok(total)
    }
}

/// Where the effective operator comes from.
#[derive(Clone, Debug)]
pub enum FbarSource {
    /// A closed form written as a `y`-independent operator with one fixed cell value.
    Analytic { op: EllipticOperator, cell: CellValue },
    /// A table of effective-operator estimates.
    Table {
        table: Arc<FbarTable>,
        constants: crate::operators::EllipticityConstants,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectiveSourceKind {
    Analytic,
    Table,
}

impl FbarSource {
    pub fn kind(&self) -> EffectiveSourceKind {
        match self {
            FbarSource::Analytic { .. } => EffectiveSourceKind::Analytic,
            FbarSource::Table { .. } => EffectiveSourceKind::Table,
        }
    }
}

/// Solves `F̄(D²_h u, D_h u) = 0` with `u = g` on the boundary, using the same
/// discretization as [`solve_dirichlet`].
pub fn solve_effective_dirichlet(
    source: &FbarSource,
    domain: &Arc<LatticeDomain>,
    g: &dyn Fn(&[f64]) -> f64,
    params: &DirichletParams,
) -> Result<DirichletSolution> {
    match source {
        FbarSource::Analytic { op, cell } => {
            let cells = vec![cell; domain.n_nodes()];
            let scheme = params.scheme.unwrap_or_else(|| Scheme::default_for(op));
            let dop = DiscreteOperator::new(op, domain, cells, scheme, true)?;
            solve_fixed(&dop, domain, g, params)
        }
        FbarSource::Table { table, constants } => {
            if table.dim != domain.dim() {
                return Err(Error::Incompatible(format!(
                    "table is {}-dimensional, domain is {}-dimensional",
                    table.dim,
                    domain.dim()
                )));
            }
            let outside = Arc::new(AtomicBool::new(false));
            let (t, flag) = (table.clone(), outside.clone());
            let op = EllipticOperator::constant_coeff("table", table.dim, *constants, move |m, p| {
                t.interpolate(m, p).unwrap_or_else(|_| {
                    flag.store(true, Ordering::Relaxed);
                    f64::NAN
                })
            })?;
            let cell = CellValue::scalar_linear(table.dim, 1.0);
            let cells = vec![&cell; domain.n_nodes()];
            let dop = DiscreteOperator::new(&op, domain, cells, Scheme::Centered, true)?;
            let result = solve_fixed(&dop, domain, g, params);
            if outside.load(Ordering::Relaxed) {
                return Err(Error::OutOfTableRange(
                    "the effective solve left the tabulated range".into(),
                ));
            }
            result
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyParams {
    /// Strictly decreasing.
    pub eps_list: Vec<f64>,
    pub seed: u64,
    /// The last error must be below `threshold_rel · sup|ū|`, if set.
    #[serde(default)]
    pub threshold_rel: Option<f64>,
    #[serde(default)]
    pub dirichlet: DirichletParams,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub eps_list: Vec<f64>,
    /// `max |u^ε − ū|` over the nodes of the common grid.
    pub sup_errors: Vec<f64>,
    pub effective_source: EffectiveSourceKind,
    /// Wall-clock seconds per `ε` level.
    pub runtimes: Vec<f64>,
    pub effective_sup: f64,
    pub spacing: f64,
    pub seed: u64,
    pub strictly_decreasing: bool,
    pub last_below_first: bool,
    /// `None` when no threshold was configured.
    pub below_threshold: Option<bool>,
    pub passed: bool,
}

/// Solves the oscillatory problem for each `ε` on one grid and compares with the
/// effective solution on the same grid.
pub fn convergence_study(
    op: &EllipticOperator,
    env: &Environment,
    source: &FbarSource,
    domain: &Arc<LatticeDomain>,
    g: &dyn Fn(&[f64]) -> f64,
    params: &StudyParams,
) -> Result<ConvergenceStudy> {
    let eps = &params.eps_list;
    if eps.is_empty() || eps.windows(2).any(|w| !(w[0] > w[1])) || eps[eps.len() - 1] <= 0.0 {
        return Err(Error::InvalidParameter(
            "eps_list must be positive and strictly decreasing".into(),
        ));
    }
    if env.seed() != params.seed {
        return Err(Error::InvalidParameter(format!(
            "environment seed {} differs from the study seed {}",
            env.seed(),
            params.seed
        )));
    }
    let effective = solve_effective_dirichlet(source, domain, g, &params.dirichlet)?;
    let n = domain.n_nodes();
    let ubar = &effective.u.values[..n];
    let effective_sup = ubar.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let mut sup_errors = Vec::with_capacity(eps.len());
    let mut runtimes = Vec::with_capacity(eps.len());
    for &e in eps {
        let start = Instant::now();
        let sol = solve_dirichlet(op, env, e, domain, g, &params.dirichlet)?;
        runtimes.push(start.elapsed().as_secs_f64());
        let err = sol.u.values[..n]
            .iter()
            .zip(ubar)
            .fold(0.0_f64, |a, (u, v)| a.max((u - v).abs()));
        sup_errors.push(err);
    }
    let strictly_decreasing = sup_errors.windows(2).all(|w| w[1] < w[0]);
    let last = sup_errors[sup_errors.len() - 1];
    // Errors already at round-off level have nothing left to decrease.
    let floor = 1e-10 * effective_sup.max(1.0);
    let last_below_first = sup_errors.len() < 2 || last < sup_errors[0] || sup_errors[0] <= floor;
    let below_threshold = params.threshold_rel.map(|t| last < t * effective_sup);
    Ok(ConvergenceStudy {
        eps_list: eps.clone(),
        effective_source: source.kind(),
        runtimes,
        effective_sup,
        spacing: domain.spacing(),
        seed: params.seed,
        passed: last_below_first && below_threshold.unwrap_or(true),
        strictly_decreasing,
        last_below_first,
        below_threshold,
        sup_errors,
    })
}
