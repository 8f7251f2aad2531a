//! Infimal convolution `w^δ(y) = min_z { w(z) + |y − z|² / (2δ) }` over the lattice
//! points of a domain, via separable lower envelopes of parabolas.

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::lattice::{interior_window, GridField, LatticeDomain};
use crate::operators::EllipticOperator;
use crate::scheme::{node_cells, DiscreteOperator, Scheme};

const NONE: usize = usize::MAX;

#[derive(Clone, Debug)]
pub struct InfConvolution {
    pub w_delta: GridField,
    pub delta: f64,
    /// Minimizing point id for every point.
    pub argmin: Vec<usize>,
}

/// Lower envelope of `f(q) + c·(p − q)²` along one line. Infinite entries are not
/// parabola sites. Writes the minimum and the minimizing position for every `p`; ties go
/// to the smaller `q`.
struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn new(len: usize) -> Self {
        Envelope {
            sites: Vec::with_capacity(len),
            bounds: Vec::with_capacity(len + 1),
        }
    }

    fn run(&mut self, f: &[f64], c: f64, out: &mut [f64], arg: &mut [usize]) {
        self.sites.clear();
        self.bounds.clear();
        let key = |q: usize| f[q] + c * (q * q) as f64;
        for q in 0..f.len() {
            if !f[q].is_finite() {
                continue;
            }
            loop {
                let Some(&v) = self.sites.last() else {
                    self.sites.push(q);
                    self.bounds.push(f64::NEG_INFINITY);
                    break;
                };
                let s = (key(q) - key(v)) / (2.0 * c * (q - v) as f64);
                if s <= *self.bounds.last().unwrap() {
                    self.sites.pop();
                    self.bounds.pop();
                } else {
                    self.sites.push(q);
                    self.bounds.push(s);
                    break;
                }
            }
        }
        if self.sites.is_empty() {
            out.fill(f64::INFINITY);
            arg.fill(NONE);
            return;
        }
        let mut k = 0;
        for p in 0..f.len() {
            while k + 1 < self.sites.len() && self.bounds[k + 1] < p as f64 {
                k += 1;
            }
            // a later site can tie at p; keep the smaller index unless the later one is
            // strictly better
            let mut best = self.sites[k];
            let mut val = f[best] + c * ((p as f64) - best as f64).powi(2);
            if k + 1 < self.sites.len() {
                let q = self.sites[k + 1];
                let v2 = f[q] + c * ((p as f64) - q as f64).powi(2);
                if v2 < val {
                    best = q;
                    val = v2;
                }
            }
            out[p] = val;
            arg[p] = best;
        }
    }
}

/// Runs the separable envelope over the bounding box of `domain`. `f` holds one value
/// per box cell (row-major). Returns the minimum and, per pass, the minimizing
/// coordinate along that pass's axis.
fn separable_envelope(domain: &LatticeDomain, f: Vec<f64>, c: f64) -> (Vec<f64>, Vec<Vec<usize>>) {
    let (_, len) = domain.bounding_box();
    let dim = len.len();
    let total: usize = len.iter().product();
    let mut cur = f;
    let mut args = Vec::with_capacity(dim);
    let longest = *len.iter().max().unwrap();
    let mut env = Envelope::new(longest);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut arg = vec![0usize; longest];
    for axis in 0..dim {
        let stride: usize = len[axis + 1..].iter().product();
        let n = len[axis];
        let mut next = vec![f64::INFINITY; total];
        let mut next_arg = vec![NONE; total];
        for start in 0..total {
            // line starts are cells whose coordinate along `axis` is 0
            if (start / stride) % n != 0 {
                continue;
            }
            for t in 0..n {
                line[t] = cur[start + t * stride];
            }
            env.run(&line[..n], c, &mut out[..n], &mut arg[..n]);
            for t in 0..n {
                next[start + t * stride] = out[t];
                next_arg[start + t * stride] = arg[t];
            }
        }
        cur = next;
        args.push(next_arg);
    }
    (cur, args)
}

/// Follows the per-axis argmins back to the full minimizing box cell.
fn backtrack(len: &[usize], args: &[Vec<usize>], flat: usize) -> Option<usize> {
    let dim = len.len();
    let mut coords = vec![0usize; dim];
    let mut f = flat;
    for k in (0..dim).rev() {
        coords[k] = f % len[k];
        f /= len[k];
    }
    let to_flat = |c: &[usize]| c.iter().zip(len).fold(0usize, |a, (x, l)| a * l + x);
    for axis in (0..dim).rev() {
        let a = args[axis][to_flat(&coords)];
        if a == NONE {
            return None;
        }
        coords[axis] = a;
    }
    Some(to_flat(&coords))
}

/// Infimal convolution over all points (interior and boundary) of the field's domain.
pub fn inf_convolution(w: &GridField, delta: f64) -> Result<InfConvolution> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidParameter(format!("δ = {delta} must be positive")));
    }
    if let Some(i) = w.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { node: i });
    }
    let d = &w.domain;
    let h = d.spacing();
    let c = h * h / (2.0 * delta);
    let cell_point: Vec<Option<usize>> = d.box_lookup().collect();
    let f: Vec<f64> = cell_point
        .iter()
        .map(|p| p.map_or(f64::INFINITY, |p| w.values[p]))
        .collect();
    let (_, len) = d.bounding_box();
    let len = len.to_vec();
    let (_, args) = separable_envelope(d, f, c);

    let mut values = vec![0.0; d.n_points()];
    let mut argmin = vec![0usize; d.n_points()];
    for (flat, p) in cell_point.iter().enumerate() {
        let Some(p) = *p else { continue };
        let z_flat = backtrack(&len, &args, flat).expect("point is its own candidate");
        let z = cell_point[z_flat].expect("minimizer is a domain point");
        let dist2: i64 = d
            .index(p)
            .iter()
            .zip(d.index(z))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        values[p] = w.values[z] + c * dist2 as f64;
        argmin[p] = z;
    }
    Ok(InfConvolution {
        w_delta: GridField {
            domain: d.clone(),
            values,
        },
        delta,
        argmin,
    })
}

/// `Dw^δ(y) = (y − z*) / δ` with `z*` the recorded minimizer.
pub fn infconv_gradient(ic: &InfConvolution, point: usize) -> Vec<f64> {
    let d = &ic.w_delta.domain;
    let h = d.spacing();
    d.index(point)
        .iter()
        .zip(d.index(ic.argmin[point]))
        .map(|(a, b)| (a - b) as f64 * h / ic.delta)
        .collect()
}

/// Euclidean distance from every interior node to the nearest interior node in `mask`
/// (infinite if the mask is empty).
pub fn distance_to_set(domain: &LatticeDomain, mask: &[bool]) -> Vec<f64> {
    let n = domain.n_nodes();
    let cell_point: Vec<Option<usize>> = domain.box_lookup().collect();
    let f: Vec<f64> = cell_point
        .iter()
        .map(|p| match p {
            Some(p) if *p < n && mask[*p] => 0.0,
            _ => f64::INFINITY,
        })
        .collect();
    let (sq, _) = separable_envelope(domain, f, 1.0);
    let h = domain.spacing();
    let mut out = vec![f64::INFINITY; n];
    for (flat, p) in cell_point.iter().enumerate() {
        if let Some(p) = *p {
            if p < n {
                out[p] = sq[flat].sqrt() * h;
            }
        }
    }
    out
}

/// Measured supersolution defect of `w^δ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupersolutionDefect {
    pub delta: f64,
    pub shrink: f64,
    /// `max(0, −min G(D²_h w^δ, D_h w^δ, y, ω))` over the shrunken window.
    pub c_measured: f64,
    pub window_nodes: usize,
}

/// Evaluates the operator on `w^δ` (with the centered gradient) at the nodes further
/// than `shrink` from the boundary and reports the worst negative value.
pub fn check_supersolution_defect(
    op: &EllipticOperator,
    ic: &InfConvolution,
    env: &Environment,
    shrink: f64,
    scheme: Option<Scheme>,
) -> Result<SupersolutionDefect> {
    let d = &ic.w_delta.domain;
    if !(shrink >= 2.0 * d.spacing() && shrink < d.radius()) {
        return Err(Error::InvalidParameter(format!(
            "shrink {shrink} must lie in [2h, r) = [{}, {})",
            2.0 * d.spacing(),
            d.radius()
        )));
    }
    op.check_env(env.model())?;
    let per_cell = env.model().per_cell(d.spacing())?;
    let cells = node_cells(env, d, per_cell);
    let scheme = scheme.unwrap_or_else(|| Scheme::default_for(op));
    let dop = DiscreteOperator::new(op, d, cells, scheme, true)?;
    let window = interior_window(d, 1.0 - shrink / d.radius())?;
    let mut scratch = vec![0.0; dop.stencil_len()];
    let mut lowest = f64::INFINITY;
    let mut count = 0;
    for (i, _) in window.iter().enumerate().filter(|(_, &inside)| inside) {
        lowest = lowest.min(dop.eval(&ic.w_delta.values, i, &mut scratch));
        count += 1;
    }
    Ok(SupersolutionDefect {
        delta: ic.delta,
        shrink,
        c_measured: if count == 0 { 0.0 } else { (-lowest).max(0.0) },
        window_nodes: count,
    })
}
