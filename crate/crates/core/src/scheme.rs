//! Finite-difference discretizations of an operator on a lattice domain.

use serde::{Deserialize, Serialize};

use crate::env::{CellValue, Environment};
use crate::error::{Error, Result};
use crate::lattice::{
    center_slot, gradient_from_stencil, hessian_from_stencil, offset_slot, stencil_len,
    LatticeDomain,
};
use crate::operators::{pucci_slope, pucci_weight, EllipticOperator, Family};
use crate::sym::{vec_norm, SymMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Centered Hessian and gradient plugged into the operator. Consistent; monotone
    /// when the coefficients are diagonally dominant on the stencil.
    Centered,
    /// Pucci operators only: maximum over orthonormal lattice frames of Pucci-weighted
    /// second differences. Monotone for every `(λ, Λ)`.
    Directional,
}

impl Scheme {
    pub fn default_for(op: &EllipticOperator) -> Scheme {
        match op.family() {
            Family::Pucci { .. } => Scheme::Directional,
            _ => Scheme::Centered,
        }
    }
}

/// Orthonormal frames of lattice directions with components in `{-1, 0, 1}`.
pub fn lattice_frames(dim: usize) -> Vec<Vec<Vec<i64>>> {
    let unit = |k: usize| {
        let mut e = vec![0i64; dim];
        e[k] = 1;
        e
    };
    let mut frames = vec![(0..dim).map(unit).collect::<Vec<_>>()];
    if dim >= 2 {
        for i in 0..dim {
            for j in i + 1..dim {
                let mut plus = vec![0i64; dim];
                let mut minus = vec![0i64; dim];
                plus[i] = 1;
                plus[j] = 1;
                minus[i] = 1;
                minus[j] = -1;
                let mut frame = vec![plus, minus];
                frame.extend((0..dim).filter(|&k| k != i && k != j).map(unit));
                frames.push(frame);
            }
        }
    }
    frames
}

struct Direction {
    fwd: usize,
    back: usize,
    len2: f64,
    shift_curv: f64,
}

/// An operator discretized on a domain for one environment realization.
///
/// The discrete operator at an interior node depends on the `3^d` stencil values of the
/// unknown. With `use_gradient = false` the gradient slot is frozen at zero (only the
/// shift `p₀` enters), as in the obstacle problem.
pub struct DiscreteOperator<'a> {
    op: &'a EllipticOperator,
    domain: &'a LatticeDomain,
    cells: Vec<&'a CellValue>,
    scheme: Scheme,
    use_gradient: bool,
    frames: Vec<Vec<Direction>>,
}

/// Cell values seen by every interior node of `domain` when the environment is read on
/// a lattice with `per_cell` steps per cell.
pub fn node_cells<'a>(
    env: &'a Environment,
    domain: &LatticeDomain,
    per_cell: i64,
) -> Vec<&'a CellValue> {
    (0..domain.n_nodes())
        .map(|p| env.value_at(domain.index(p), per_cell))
        .collect()
}

impl<'a> DiscreteOperator<'a> {
    pub fn new(
        op: &'a EllipticOperator,
        domain: &'a LatticeDomain,
        cells: Vec<&'a CellValue>,
        scheme: Scheme,
        use_gradient: bool,
    ) -> Result<Self> {
        if op.dim() != domain.dim() {
            return Err(Error::Incompatible(format!(
                "operator is {}-dimensional, domain is {}-dimensional",
                op.dim(),
                domain.dim()
            )));
        }
        if cells.len() != domain.n_nodes() {
            return Err(Error::InvalidParameter(format!(
                "{} cell values for {} nodes",
                cells.len(),
                domain.n_nodes()
            )));
        }
        let dim = domain.dim();
        let frames = match scheme {
            Scheme::Centered => Vec::new(),
            Scheme::Directional => {
                if !matches!(op.family(), Family::Pucci { .. }) {
                    return Err(Error::Incompatible(
                        "the directional scheme is only available for Pucci operators".into(),
                    ));
                }
                let c = center_slot(dim);
                let mut out = Vec::new();
                for frame in lattice_frames(dim) {
                    let mut dirs = Vec::new();
                    for e in frame {
                        let fwd = offset_slot(&e).expect("unit stencil");
                        let len2 = e.iter().map(|v| (v * v) as f64).sum::<f64>();
                        dirs.push(Direction {
                            fwd,
                            back: 2 * c - fwd,
                            len2,
                            shift_curv: op.shift_m().quad_form(&e) / len2,
                        });
                    }
                    out.push(dirs);
                }
                out
            }
        };
        Ok(DiscreteOperator {
            op,
            domain,
            cells,
            scheme,
            use_gradient,
            frames,
        })
    }

    pub fn domain(&self) -> &LatticeDomain {
        self.domain
    }

    pub fn operator(&self) -> &EllipticOperator {
        self.op
    }

    pub fn cell(&self, node: usize) -> &CellValue {
        self.cells[node]
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Gathers the stencil values of `u` (indexed by point id) around a node.
    #[inline]
    pub fn gather(&self, u: &[f64], node: usize, out: &mut [f64]) {
        for (o, &p) in out.iter_mut().zip(self.domain.stencil(node)) {
            *o = u[p as usize];
        }
    }

    fn shifted_gradient(&self, vals: &[f64]) -> Vec<f64> {
        let s = self.op.sign();
        if self.use_gradient {
            let g = gradient_from_stencil(self.domain.dim(), self.domain.spacing(), vals);
            self.op
                .shift_p()
                .iter()
                .zip(&g)
                .map(|(a, b)| a + s * b)
                .collect()
        } else {
            self.op.shift_p().to_vec()
        }
    }

    /// Discrete operator value at a node from its stencil values.
    pub fn eval_stencil(&self, cell: &CellValue, vals: &[f64]) -> f64 {
        self.linearize_stencil(cell, vals, None)
    }

    /// Value at a node and, if requested, its derivative with respect to each stencil
    /// value (for piecewise-linear schemes, the derivative of the active branch).
    pub fn linearize_stencil(
        &self,
        cell: &CellValue,
        vals: &[f64],
        row: Option<&mut [f64]>,
    ) -> f64 {
        let dim = self.domain.dim();
        let h = self.domain.spacing();
        let s = self.op.sign();
        let q = self.shifted_gradient(vals);
        match self.scheme {
            Scheme::Centered => {
                let d2 = hessian_from_stencil(dim, h, vals);
                let x = self.op.shift_m() + &d2.scale(s);
                let value = s * self.op.base_value(&x, &q, cell) - self.op.offset();
                if let Some(row) = row {
                    let (gx, gp) = self.op.base_gradient(&x, &q, cell);
                    centered_row(dim, h, &gx, if self.use_gradient { Some(&gp) } else { None }, row);
                }
                value
            }
            Scheme::Directional => {
                let (lambda, big_lambda) = match cell {
                    CellValue::Pucci { lambda, big_lambda } => (*lambda, *big_lambda),
                    _ => return f64::NAN,
                };
                let gamma = match self.op.family() {
                    Family::Pucci { gamma } => *gamma,
                    _ => 0.0,
                };
                let c = center_slot(dim);
                let h2 = h * h;
                let mut best = f64::NEG_INFINITY;
                let mut best_frame = 0;
                for (k, frame) in self.frames.iter().enumerate() {
                    let v: f64 = frame
                        .iter()
                        .map(|d| {
                            let mu = d.shift_curv
                                + s * (vals[d.fwd] - 2.0 * vals[c] + vals[d.back]) / (d.len2 * h2);
                            pucci_weight(mu, lambda, big_lambda)
                        })
                        .sum();
                    if v > best {
                        best = v;
                        best_frame = k;
                    }
                }
                let qn = vec_norm(&q);
                let value = s * (best + gamma * qn) - self.op.offset();
                if let Some(row) = row {
                    row.fill(0.0);
                    for d in &self.frames[best_frame] {
                        let mu = d.shift_curv
                            + s * (vals[d.fwd] - 2.0 * vals[c] + vals[d.back]) / (d.len2 * h2);
                        let w = pucci_slope(mu, lambda, big_lambda) / (d.len2 * h2);
                        row[d.fwd] += w;
                        row[d.back] += w;
                        row[c] -= 2.0 * w;
                    }
                    if self.use_gradient && qn > 0.0 {
                        for k in 0..dim {
                            let st = 3usize.pow((dim - 1 - k) as u32);
                            let w = gamma * q[k] / qn / (2.0 * h);
                            row[c + st] += w;
                            row[c - st] -= w;
                        }
                    }
                }
                value
            }
        }
    }

    /// Discrete operator value at interior node `node` for the field `u`.
    pub fn eval(&self, u: &[f64], node: usize, scratch: &mut [f64]) -> f64 {
        self.gather(u, node, scratch);
        self.eval_stencil(self.cells[node], scratch)
    }

    pub fn linearize(&self, u: &[f64], node: usize, scratch: &mut [f64], row: &mut [f64]) -> f64 {
        self.gather(u, node, scratch);
        self.linearize_stencil(self.cells[node], scratch, Some(row))
    }

    /// Discrete operator applied to the zero field in a given cell.
    pub fn value_at_zero(&self, cell: &CellValue) -> f64 {
        let zeros = vec![0.0; stencil_len(self.domain.dim())];
        self.eval_stencil(cell, &zeros)
    }

    pub fn stencil_len(&self) -> usize {
        stencil_len(self.domain.dim())
    }
}

/// Derivative of `tr(G·D²_h u) + gp·D_h u` with respect to the stencil values.
fn centered_row(dim: usize, h: f64, gx: &SymMatrix, gp: Option<&Vec<f64>>, row: &mut [f64]) {
    row.fill(0.0);
    let c = center_slot(dim);
    let h2 = h * h;
    let stride = |k: usize| 3usize.pow((dim - 1 - k) as u32);
    for i in 0..dim {
        let si = stride(i);
        let w = gx.get(i, i) / h2;
        row[c + si] += w;
        row[c - si] += w;
        row[c] -= 2.0 * w;
        for j in i + 1..dim {
            let sj = stride(j);
            let w = 2.0 * gx.get(i, j) / (4.0 * h2);
            row[c + si + sj] += w;
            row[c - si - sj] += w;
            row[c + si - sj] -= w;
            row[c - si + sj] -= w;
        }
    }
    if let Some(gp) = gp {
        for (k, g) in gp.iter().enumerate() {
            let sk = stride(k);
            row[c + sk] += g / (2.0 * h);
            row[c - sk] -= g / (2.0 * h);
        }
    }
}
