//! Lattice domains, grid fields and finite-difference stencils.

use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsolve::SystemPattern;
use crate::sym::SymMatrix;

const NO_POINT: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Open Euclidean ball of radius `r`.
    Ball,
    /// Open cube of half-width `r`.
    Cube,
}

/// A ball or cube sampled on the lattice `hℤ^d`.
///
/// Points are numbered with the interior nodes first (lexicographic in the index, first
/// axis slowest) followed by the boundary points, i.e. the lattice points outside the open
/// domain that touch an interior node through the `3^d` neighborhood.
pub struct LatticeDomain {
    dim: usize,
    shape: Shape,
    radius: f64,
    spacing: f64,
    center: Vec<i64>,
    box_lo: Vec<i64>,
    box_len: Vec<usize>,
    lookup: Vec<u32>,
    indices: Vec<i64>,
    n_nodes: usize,
    neighbors: Vec<u32>,
    pattern: OnceLock<Arc<SystemPattern>>,
}

impl fmt::Debug for LatticeDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LatticeDomain")
            .field("dim", &self.dim)
            .field("shape", &self.shape)
            .field("radius", &self.radius)
            .field("spacing", &self.spacing)
            .field("center", &self.center)
            .field("n_nodes", &self.n_nodes)
            .field("n_boundary", &self.n_boundary())
            .finish()
    }
}

/// Number of slots in the `3^d` stencil.
pub fn stencil_len(dim: usize) -> usize {
    3usize.pow(dim as u32)
}

/// Offset of stencil slot `slot`, each component in `{-1, 0, 1}`, first axis slowest.
pub fn slot_offset(dim: usize, slot: usize) -> Vec<i64> {
    let mut off = vec![0i64; dim];
    let mut s = slot;
    for k in (0..dim).rev() {
        off[k] = (s % 3) as i64 - 1;
        s /= 3;
    }
    off
}

/// Stencil slot of an offset with components in `{-1, 0, 1}`.
pub fn offset_slot(offset: &[i64]) -> Option<usize> {
    let mut s = 0usize;
    for &o in offset {
        if !(-1..=1).contains(&o) {
            return None;
        }
        s = s * 3 + (o + 1) as usize;
    }
    Some(s)
}

pub fn center_slot(dim: usize) -> usize {
    (stencil_len(dim) - 1) / 2
}

/// Checked constructor: requires `dim ∈ {1,2,3}`, `r, h > 0` and `h < r/4`.
pub fn make_domain(dim: usize, shape: Shape, r: f64, h: f64) -> Result<LatticeDomain> {
    make_domain_at(dim, shape, r, h, &vec![0; dim])
}

/// Like [`make_domain`], centered at the lattice point `h · center`.
pub fn make_domain_at(
    dim: usize,
    shape: Shape,
    r: f64,
    h: f64,
    center: &[i64],
) -> Result<LatticeDomain> {
    if r.is_finite() && h.is_finite() && h > 0.0 && h >= r / 4.0 {
        return Err(Error::InvalidDomain(format!(
            "spacing {h} is too coarse for radius {r} (need h < r/4)"
        )));
    }
    build(dim, shape, r, h, center)
}

/// Builds a domain without the resolution requirement `h < r/4`. Useful for tiny
/// hand-checkable grids; dimension and positivity are still validated.
pub fn make_domain_unchecked(dim: usize, shape: Shape, r: f64, h: f64) -> Result<LatticeDomain> {
    build(dim, shape, r, h, &vec![0; dim])
}

fn build(dim: usize, shape: Shape, r: f64, h: f64, center: &[i64]) -> Result<LatticeDomain> {
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidDomain(format!(
            "dimension {dim} is not supported (1, 2 or 3)"
        )));
    }
    if !(r.is_finite() && r > 0.0 && h.is_finite() && h > 0.0) {
        return Err(Error::InvalidDomain(format!(
            "radius and spacing must be positive and finite (r = {r}, h = {h})"
        )));
    }
    if center.len() != dim {
        return Err(Error::InvalidDomain(format!(
            "center has {} components, expected {dim}",
            center.len()
        )));
    }
    let ratio = r / h;
    let reach = ratio.ceil() as i64 + 1;
    if reach > 1 << 20 {
        return Err(Error::InvalidDomain(format!("r/h = {ratio} is too large")));
    }
    let inside = inside_test(shape, r, h);

    let box_lo: Vec<i64> = center.iter().map(|c| c - reach).collect();
    let box_len = vec![(2 * reach + 1) as usize; dim];
    let total: usize = box_len.iter().product();

    let mut lookup = vec![NO_POINT; total];
    let mut indices = Vec::new();
    let mut rel = vec![0i64; dim];
    for flat in 0..total {
        unflatten(flat, &box_len, &mut rel);
        for k in 0..dim {
            rel[k] -= reach;
        }
        if inside(&rel) {
            lookup[flat] = (indices.len() / dim) as u32;
            indices.extend(rel.iter().zip(center).map(|(a, c)| a + c));
        }
    }
    let n_nodes = indices.len() / dim;
    if n_nodes == 0 {
        return Err(Error::InvalidDomain(format!(
            "no lattice nodes inside the domain (r = {r}, h = {h})"
        )));
    }

    // Boundary points: exterior members of the 3^d neighborhoods of interior nodes,
    // added in lexicographic order.
    let slots = stencil_len(dim);
    let mut is_boundary = vec![false; total];
    let mut idx = vec![0i64; dim];
    for node in 0..n_nodes {
        for s in 0..slots {
            let off = slot_offset(dim, s);
            for k in 0..dim {
                idx[k] = indices[node * dim + k] + off[k];
            }
            let flat = flatten(&idx, &box_lo, &box_len).expect("neighbor inside box");
            if lookup[flat] == NO_POINT {
                is_boundary[flat] = true;
            }
        }
    }
    for flat in 0..total {
        if is_boundary[flat] {
            unflatten(flat, &box_len, &mut idx);
            lookup[flat] = (indices.len() / dim) as u32;
            indices.extend(idx.iter().zip(&box_lo).map(|(a, lo)| a + lo));
        }
    }

    let mut neighbors = vec![NO_POINT; n_nodes * slots];
    for node in 0..n_nodes {
        for s in 0..slots {
            let off = slot_offset(dim, s);
            for k in 0..dim {
                idx[k] = indices[node * dim + k] + off[k];
            }
            let flat = flatten(&idx, &box_lo, &box_len).expect("neighbor inside box");
            neighbors[node * slots + s] = lookup[flat];
        }
    }

    Ok(LatticeDomain {
        dim,
        shape,
        radius: r,
        spacing: h,
        center: center.to_vec(),
        box_lo,
        box_len,
        lookup,
        indices,
        n_nodes,
        neighbors,
        pattern: OnceLock::new(),
    })
}

/// Membership in the open domain for an index relative to the center. Uses exact integer
/// arithmetic when `r/h` is an integer.
fn inside_test(shape: Shape, r: f64, h: f64) -> impl Fn(&[i64]) -> bool {
    let ratio = r / h;
    let int_ratio = (ratio - ratio.round()).abs() < 1e-9 * ratio.max(1.0);
    let rr = ratio.round() as i64;
    move |rel: &[i64]| match (shape, int_ratio) {
        (Shape::Cube, true) => rel.iter().all(|k| k.abs() < rr),
        (Shape::Cube, false) => rel.iter().all(|k| (k.abs() as f64) * h < r),
        (Shape::Ball, true) => rel.iter().map(|k| k * k).sum::<i64>() < rr * rr,
        (Shape::Ball, false) => rel.iter().map(|&k| (k as f64 * h).powi(2)).sum::<f64>() < r * r,
    }
}

fn unflatten(mut flat: usize, len: &[usize], out: &mut [i64]) {
    for k in (0..len.len()).rev() {
        out[k] = (flat % len[k]) as i64;
        flat /= len[k];
    }
}

fn flatten(idx: &[i64], lo: &[i64], len: &[usize]) -> Option<usize> {
    let mut flat = 0usize;
    for k in 0..idx.len() {
        let o = idx[k] - lo[k];
        if o < 0 || o as usize >= len[k] {
            return None;
        }
        flat = flat * len[k] + o as usize;
    }
    Some(flat)
}

impl LatticeDomain {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn center(&self) -> &[i64] {
        &self.center
    }

    /// Number of interior nodes. Interior nodes are points `0..n_nodes()`.
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_boundary(&self) -> usize {
        self.n_points() - self.n_nodes
    }

    /// Interior nodes plus boundary points.
    pub fn n_points(&self) -> usize {
        self.indices.len() / self.dim
    }

    pub fn is_interior(&self, point: usize) -> bool {
        point < self.n_nodes
    }

    /// Integer lattice index of a point.
    pub fn index(&self, point: usize) -> &[i64] {
        &self.indices[point * self.dim..(point + 1) * self.dim]
    }

    /// Physical coordinates `h · index`.
    pub fn position(&self, point: usize) -> Vec<f64> {
        self.index(point)
            .iter()
            .map(|&k| k as f64 * self.spacing)
            .collect()
    }

    /// Physical coordinates relative to the domain center.
    pub fn relative_position(&self, point: usize) -> Vec<f64> {
        self.index(point)
            .iter()
            .zip(&self.center)
            .map(|(&k, &c)| (k - c) as f64 * self.spacing)
            .collect()
    }

    /// Point id for a lattice index, if it is a node or boundary point.
    pub fn point_at(&self, index: &[i64]) -> Option<usize> {
        let flat = flatten(index, &self.box_lo, &self.box_len)?;
        match self.lookup[flat] {
            NO_POINT => None,
            p => Some(p as usize),
        }
    }

    /// Neighbor of an interior node through a `3^d` stencil slot.
    #[inline]
    pub fn neighbor_slot(&self, node: usize, slot: usize) -> usize {
        self.neighbors[node * stencil_len(self.dim) + slot] as usize
    }

    /// The `3^d` neighbor ids of an interior node.
    pub fn stencil(&self, node: usize) -> &[u32] {
        let n = stencil_len(self.dim);
        &self.neighbors[node * n..(node + 1) * n]
    }

    /// Neighbor at an arbitrary lattice offset.
    pub fn neighbor(&self, point: usize, offset: &[i64]) -> Result<usize> {
        let idx: Vec<i64> = self
            .index(point)
            .iter()
            .zip(offset)
            .map(|(a, b)| a + b)
            .collect();
        self.point_at(&idx).ok_or_else(|| Error::MissingNeighbor {
            node: point,
            offset: offset.to_vec(),
        })
    }

    /// Lower corner and extent of the bounding box of all points.
    pub(crate) fn bounding_box(&self) -> (&[i64], &[usize]) {
        (&self.box_lo, &self.box_len)
    }

    /// Point id (or none) for every cell of the bounding box, row-major.
    pub(crate) fn box_lookup(&self) -> impl Iterator<Item = Option<usize>> + '_ {
        self.lookup
            .iter()
            .map(|&p| if p == NO_POINT { None } else { Some(p as usize) })
    }

    pub(crate) fn system_pattern(&self) -> Result<Arc<SystemPattern>> {
        if let Some(p) = self.pattern.get() {
            return Ok(p.clone());
        }
        let p = Arc::new(SystemPattern::new(self)?);
        Ok(self.pattern.get_or_init(|| p).clone())
    }

    /// Whether the point (relative to center, physical units) lies in the open domain
    /// scaled by `t`.
    fn in_scaled(&self, point: usize, t: f64) -> bool {
        let rel = self.relative_position(point);
        let lim = t * self.radius;
        match self.shape {
            Shape::Ball => rel.iter().map(|v| v * v).sum::<f64>() < lim * lim,
            Shape::Cube => rel.iter().all(|v| v.abs() < lim),
        }
    }
}

/// Scalar values on every node and boundary point of a domain.
#[derive(Clone, Debug)]
pub struct GridField {
    pub domain: Arc<LatticeDomain>,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(domain: Arc<LatticeDomain>) -> Self {
        let n = domain.n_points();
        GridField {
            domain,
            values: vec![0.0; n],
        }
    }

    /// Samples a function of the physical position at every point.
    pub fn from_fn(domain: Arc<LatticeDomain>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..domain.n_points())
            .map(|p| f(&domain.position(p)))
            .collect();
        GridField { domain, values }
    }

    pub fn interior(&self) -> &[f64] {
        &self.values[..self.domain.n_nodes()]
    }

    pub fn boundary(&self) -> &[f64] {
        &self.values[self.domain.n_nodes()..]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    fn require_interior(&self, node: usize) -> Result<()> {
        if node >= self.domain.n_nodes() {
            return Err(Error::InvalidParameter(format!(
                "point {node} is not an interior node"
            )));
        }
        Ok(())
    }
}

/// `(f(y+he) − 2f(y) + f(y−he)) / |he|²` along a lattice direction `e`.
pub fn second_difference(f: &GridField, dir: &[i64], node: usize) -> Result<f64> {
    f.require_interior(node)?;
    let d = &f.domain;
    let fwd = d.neighbor(node, dir)?;
    let back_dir: Vec<i64> = dir.iter().map(|v| -v).collect();
    let back = d.neighbor(node, &back_dir)?;
    let len2 = dir.iter().map(|v| (v * v) as f64).sum::<f64>() * d.spacing() * d.spacing();
    Ok((f.values[fwd] - 2.0 * f.values[node] + f.values[back]) / len2)
}

/// Centered discrete Hessian from stencil values (`3^d` entries, slot order).
pub(crate) fn hessian_from_stencil(dim: usize, h: f64, vals: &[f64]) -> SymMatrix {
    let c = center_slot(dim);
    let h2 = h * h;
    let mut m = SymMatrix::zeros(dim);
    let stride = |k: usize| 3usize.pow((dim - 1 - k) as u32);
    for i in 0..dim {
        let si = stride(i);
        m.set(i, i, (vals[c + si] - 2.0 * vals[c] + vals[c - si]) / h2);
        for j in i + 1..dim {
            let sj = stride(j);
            let v = (vals[c + si + sj] - vals[c + si - sj] - vals[c - si + sj]
                + vals[c - si - sj])
                / (4.0 * h2);
            m.set(i, j, v);
        }
    }
    m
}

/// Centered discrete gradient from stencil values.
pub(crate) fn gradient_from_stencil(dim: usize, h: f64, vals: &[f64]) -> Vec<f64> {
    let c = center_slot(dim);
    (0..dim)
        .map(|k| {
            let s = 3usize.pow((dim - 1 - k) as u32);
            (vals[c + s] - vals[c - s]) / (2.0 * h)
        })
        .collect()
}

pub(crate) fn stencil_values(f: &GridField, node: usize, out: &mut [f64]) {
    for (o, &p) in out.iter_mut().zip(f.domain.stencil(node)) {
        *o = f.values[p as usize];
    }
}

/// Centered second differences on the diagonal, 4-point mixed differences off it.
pub fn discrete_hessian(f: &GridField, node: usize) -> Result<SymMatrix> {
    f.require_interior(node)?;
    let d = &f.domain;
    let mut vals = vec![0.0; stencil_len(d.dim())];
    stencil_values(f, node, &mut vals);
    Ok(hessian_from_stencil(d.dim(), d.spacing(), &vals))
}

/// Centered first differences `(f(y+he_i) − f(y−he_i)) / 2h`.
pub fn discrete_gradient(f: &GridField, node: usize) -> Result<Vec<f64>> {
    f.require_interior(node)?;
    let d = &f.domain;
    let mut vals = vec![0.0; stencil_len(d.dim())];
    stencil_values(f, node, &mut vals);
    Ok(gradient_from_stencil(d.dim(), d.spacing(), &vals))
}

/// Mask over interior nodes selecting those inside the concentric copy of the domain
/// scaled by `t ∈ (0, 1)`.
pub fn interior_window(domain: &LatticeDomain, t: f64) -> Result<Vec<bool>> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "window scale {t} must lie in (0, 1)"
        )));
    }
    Ok((0..domain.n_nodes())
        .map(|p| domain.in_scaled(p, t))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_roundtrip() {
        for dim in 1..=3 {
            for s in 0..stencil_len(dim) {
                assert_eq!(offset_slot(&slot_offset(dim, s)), Some(s));
            }
            assert!(slot_offset(dim, center_slot(dim)).iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn interior_nodes_come_first_in_order() {
        let d = make_domain(2, Shape::Ball, 3.0, 0.5).unwrap();
        for p in 1..d.n_nodes() {
            assert!(d.index(p - 1) < d.index(p));
        }
        for p in 0..d.n_points() {
            assert_eq!(d.point_at(d.index(p)), Some(p));
        }
    }

    #[test]
    fn boundary_points_touch_nodes() {
        let d = make_domain(3, Shape::Ball, 2.5, 0.5).unwrap();
        for node in 0..d.n_nodes() {
            assert_eq!(d.stencil(node).len(), 27);
        }
        let mut touched = vec![false; d.n_points()];
        for node in 0..d.n_nodes() {
            for &p in d.stencil(node) {
                touched[p as usize] = true;
            }
        }
        assert!(touched.iter().all(|&t| t));
    }

    #[test]
    fn rejects_bad_windows() {
        let d = make_domain(1, Shape::Cube, 1.0, 0.2).unwrap();
        assert!(interior_window(&d, 0.0).is_err());
        assert!(interior_window(&d, 1.0).is_err());
        assert!(interior_window(&d, f64::NAN).is_err());
    }
}
