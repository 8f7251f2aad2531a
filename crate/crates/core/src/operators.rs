//! Uniformly elliptic operators `F(M, p, y, ω)` and the operator algebra used to build
//! the obstacle problems.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{CellValue, EnvModel};
use crate::error::{Error, Result};
use crate::sym::{vec_norm, SymMatrix};

/// Ellipticity and gradient-Lipschitz constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipticityConstants {
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
    #[serde(default)]
    pub gamma: f64,
}

impl EllipticityConstants {
    pub fn new(lambda: f64, big_lambda: f64, gamma: f64) -> Result<Self> {
        let c = EllipticityConstants {
            lambda,
            big_lambda,
            gamma,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda.is_finite()
            && self.big_lambda.is_finite()
            && self.gamma.is_finite()
            && self.lambda > 0.0
            && self.big_lambda >= self.lambda
            && self.gamma >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "ellipticity constants need 0 < λ ≤ Λ and γ ≥ 0 (got λ = {}, Λ = {}, γ = {})",
                self.lambda, self.big_lambda, self.gamma
            )))
        }
    }
}

/// `Λ·tr(M₋) − λ·tr(M₊)`.
pub fn pucci_plus(m: &SymMatrix, c: &EllipticityConstants) -> f64 {
    pucci_plus_eigs(&m.clamped_eigenvalues(), c.lambda, c.big_lambda)
}

/// `λ·tr(M₋) − Λ·tr(M₊)`.
pub fn pucci_minus(m: &SymMatrix, c: &EllipticityConstants) -> f64 {
    -pucci_plus_eigs(
        &m.clamped_eigenvalues()
            .iter()
            .map(|v| -v)
            .collect::<Vec<_>>(),
        c.lambda,
        c.big_lambda,
    )
}

fn pucci_plus_eigs(eigs: &[f64], lambda: f64, big_lambda: f64) -> f64 {
    eigs.iter().map(|&mu| pucci_weight(mu, lambda, big_lambda)).sum()
}

/// Pucci maximal contribution of a single eigenvalue (or directional curvature).
#[inline]
pub fn pucci_weight(mu: f64, lambda: f64, big_lambda: f64) -> f64 {
    if mu > 0.0 {
        -lambda * mu
    } else {
        -big_lambda * mu
    }
}

/// Slope of [`pucci_weight`] on the branch selected by the sign of `mu`.
#[inline]
pub fn pucci_slope(mu: f64, lambda: f64, big_lambda: f64) -> f64 {
    if mu > 0.0 {
        -lambda
    } else {
        -big_lambda
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PucciKind {
    Plus,
    Minus,
}

type CustomFn = dyn Fn(&SymMatrix, &[f64]) -> f64 + Send + Sync;

/// The unshifted base operator `B(X, p, cell)`.
#[derive(Clone)]
pub enum Family {
    /// `−tr(A·X) − b·p + c` with `(A, b, c)` read from the environment cell.
    Linear,
    /// `𝒫⁺(X) + γ|p|` with the cell's `(λ, Λ)`.
    Pucci { gamma: f64 },
    /// A fixed function of `(X, p)`; the environment is ignored.
    Custom { name: String, f: Arc<CustomFn> },
}

impl fmt::Debug for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Linear => write!(f, "Linear"),
            Family::Pucci { gamma } => write!(f, "Pucci {{ gamma: {gamma} }}"),
            Family::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// An operator in the canonical form
/// `(N, q, cell) ↦ s·B(M₀ + s·N, p₀ + s·q, cell) − c` with `s = ±1`.
///
/// Shifts, constant subtraction and odd reflection only touch `(s, M₀, p₀, c)`,
/// so every combination of them stays in this form.
#[derive(Clone, Debug)]
pub struct EllipticOperator {
    family: Family,
    constants: EllipticityConstants,
    dim: usize,
    sign: f64,
    shift_m: SymMatrix,
    shift_p: Vec<f64>,
    offset: f64,
}

impl EllipticOperator {
    fn with_family(family: Family, constants: EllipticityConstants, dim: usize) -> Result<Self> {
        constants.validate()?;
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidParameter(format!(
                "operator dimension {dim} is not supported"
            )));
        }
        Ok(EllipticOperator {
            family,
            constants,
            dim,
            sign: 1.0,
            shift_m: SymMatrix::zeros(dim),
            shift_p: vec![0.0; dim],
            offset: 0.0,
        })
    }

    /// A `y`-independent operator given by a closure. The caller declares the constants;
    /// [`check_ellipticity`] can verify them.
    pub fn constant_coeff(
        name: &str,
        dim: usize,
        constants: EllipticityConstants,
        f: impl Fn(&SymMatrix, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::with_family(
            Family::Custom {
                name: name.to_string(),
                f: Arc::new(f),
            },
            constants,
            dim,
        )
    }

    /// `−tr(A(y,ω)·M) − b(y,ω)·p + c(y,ω)`, coefficients from the environment.
    pub fn linear_nondiv(dim: usize, constants: EllipticityConstants) -> Result<Self> {
        Self::with_family(Family::Linear, constants, dim)
    }

    /// `𝒫⁺ + γ|p|` or `𝒫⁻ − γ|p|` with cellwise `(λ, Λ)` from the environment.
    pub fn random_pucci(
        dim: usize,
        kind: PucciKind,
        constants: EllipticityConstants,
    ) -> Result<Self> {
        let op = Self::with_family(
            Family::Pucci {
                gamma: constants.gamma,
            },
            constants,
            dim,
        )?;
        Ok(match kind {
            PucciKind::Plus => op,
            PucciKind::Minus => op.odd_reflection(),
        })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn constants(&self) -> &EllipticityConstants {
        &self.constants
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `F_{M,p}: (N, q) ↦ F(M + N, p + q)`.
    pub fn shift_operator(&self, m: &SymMatrix, p: &[f64]) -> Self {
        assert_eq!(m.dim(), self.dim, "shift matrix dimension");
        assert_eq!(p.len(), self.dim, "shift vector dimension");
        let mut out = self.clone();
        out.shift_m = &self.shift_m + &m.scale(self.sign);
        for (a, b) in out.shift_p.iter_mut().zip(p) {
            *a += self.sign * b;
        }
        out
    }

    /// `(N, q) ↦ F(N, q) − α`.
    pub fn subtract_constant(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.offset += alpha;
        out
    }

    /// `(M, p) ↦ −F(−M, −p)`.
    pub fn odd_reflection(&self) -> Self {
        let mut out = self.clone();
        out.sign = -self.sign;
        out.offset = -self.offset;
        out
    }

    pub(crate) fn sign(&self) -> f64 {
        self.sign
    }

    pub(crate) fn shift_m(&self) -> &SymMatrix {
        &self.shift_m
    }

    pub(crate) fn shift_p(&self) -> &[f64] {
        &self.shift_p
    }

    pub(crate) fn offset(&self) -> f64 {
        self.offset
    }

    /// Evaluates `F(M, p)` with coefficients from one environment cell.
    pub fn evaluate(&self, m: &SymMatrix, p: &[f64], cell: &CellValue) -> f64 {
        let x = &self.shift_m + &m.scale(self.sign);
        let q: Vec<f64> = self
            .shift_p
            .iter()
            .zip(p)
            .map(|(a, b)| a + self.sign * b)
            .collect();
        self.sign * self.base_value(&x, &q, cell) - self.offset
    }

    pub(crate) fn base_value(&self, x: &SymMatrix, p: &[f64], cell: &CellValue) -> f64 {
        match (&self.family, cell) {
            (Family::Custom { f, .. }, _) => f(x, p),
            (Family::Linear, CellValue::Linear { a, b, c }) => {
                -a.dot(x) - b.iter().zip(p).map(|(u, v)| u * v).sum::<f64>() + c
            }
            (
                Family::Pucci { gamma },
                CellValue::Pucci {
                    lambda,
                    big_lambda,
                },
            ) => pucci_plus_eigs(&x.clamped_eigenvalues(), *lambda, *big_lambda) + gamma * vec_norm(p),
            _ => f64::NAN,
        }
    }

    /// Gradient of the base operator in `X` (as a symmetric matrix `G` with
    /// `dB = tr(G·dX)`) and in `p`. Piecewise-smooth families return the gradient of the
    /// active branch.
    pub(crate) fn base_gradient(
        &self,
        x: &SymMatrix,
        p: &[f64],
        cell: &CellValue,
    ) -> (SymMatrix, Vec<f64>) {
        match (&self.family, cell) {
            (Family::Linear, CellValue::Linear { a, b, .. }) => {
                let gp = if b.is_empty() {
                    vec![0.0; self.dim]
                } else {
                    b.iter().map(|v| -v).collect()
                };
                (-a, gp)
            }
            (
                Family::Pucci { gamma },
                CellValue::Pucci {
                    lambda,
                    big_lambda,
                },
            ) => {
                let (vals, vecs) = x.eigen();
                let cut = crate::sym::EIGEN_CLAMP * x.max_abs().max(1.0);
                let mut g = SymMatrix::zeros(self.dim);
                for (mu, v) in vals.iter().zip(&vecs) {
                    let mu = if mu.abs() <= cut { 0.0 } else { *mu };
                    let w = pucci_slope(mu, *lambda, *big_lambda);
                    for i in 0..self.dim {
                        for j in i..self.dim {
                            g.set(i, j, g.get(i, j) + w * v[i] * v[j]);
                        }
                    }
                }
                let n = vec_norm(p);
                let gp = if n > 0.0 {
                    p.iter().map(|v| gamma * v / n).collect()
                } else {
                    vec![0.0; self.dim]
                };
                (g, gp)
            }
            (Family::Custom { f, .. }, _) => {
                let scale = x.max_abs().max(vec_norm(p)).max(1.0);
                let step = 1e-6 * scale;
                let mut g = SymMatrix::zeros(self.dim);
                for i in 0..self.dim {
                    for j in i..self.dim {
                        let mut xp = x.clone();
                        let mut xm = x.clone();
                        xp.set(i, j, x.get(i, j) + step);
                        xm.set(i, j, x.get(i, j) - step);
                        let d = (f(&xp, p) - f(&xm, p)) / (2.0 * step);
                        // an off-diagonal entry appears twice in tr(G·dX)
                        g.set(i, j, if i == j { d } else { 0.5 * d });
                    }
                }
                let gp = (0..self.dim)
                    .map(|k| {
                        let mut pp = p.to_vec();
                        let mut pm = p.to_vec();
                        pp[k] += step;
                        pm[k] -= step;
                        (f(x, &pp) - f(x, &pm)) / (2.0 * step)
                    })
                    .collect();
                (g, gp)
            }
            _ => (
                SymMatrix::zeros(self.dim),
                vec![f64::NAN; self.dim],
            ),
        }
    }

    /// `sup_y F(0, 0, y, ω)` over the given cells.
    pub fn micro_bound<'a>(&self, cells: impl IntoIterator<Item = &'a CellValue>) -> f64 {
        let z = SymMatrix::zeros(self.dim);
        let p = vec![0.0; self.dim];
        cells
            .into_iter()
            .map(|c| self.evaluate(&z, &p, c))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Checks that every cell the environment model can produce is of the kind this
    /// operator reads and stays within the declared constants.
    pub fn check_env(&self, model: &EnvModel) -> Result<()> {
        if model.dim != self.dim {
            return Err(Error::Incompatible(format!(
                "operator is {}-dimensional, environment is {}-dimensional",
                self.dim, model.dim
            )));
        }
        let c = &self.constants;
        let slack = 1e-12;
        for cell in model.support() {
            match (&self.family, cell) {
                (Family::Custom { .. }, _) => {}
                (Family::Linear, CellValue::Linear { a, b, .. }) => {
                    let eig = a.clamped_eigenvalues();
                    let lo = eig.first().copied().unwrap_or(0.0);
                    let hi = eig.last().copied().unwrap_or(0.0);
                    if lo < c.lambda * (1.0 - slack) || hi > c.big_lambda * (1.0 + slack) {
                        return Err(Error::Incompatible(format!(
                            "coefficient spectrum [{lo}, {hi}] exceeds [{}, {}]",
                            c.lambda, c.big_lambda
                        )));
                    }
                    if vec_norm(b) > c.gamma * (1.0 + slack) + slack {
                        return Err(Error::Incompatible(format!(
                            "drift norm {} exceeds γ = {}",
                            vec_norm(b),
                            c.gamma
                        )));
                    }
                }
                (
                    Family::Pucci { .. },
                    CellValue::Pucci {
                        lambda,
                        big_lambda,
                    },
                ) => {
                    if *lambda < c.lambda * (1.0 - slack)
                        || *big_lambda > c.big_lambda * (1.0 + slack)
                    {
                        return Err(Error::Incompatible(format!(
                            "cell constants ({lambda}, {big_lambda}) exceed ({}, {})",
                            c.lambda, c.big_lambda
                        )));
                    }
                }
                (fam, cell) => {
                    return Err(Error::Incompatible(format!(
                        "{fam:?} operator cannot read {} cells",
                        cell.kind_name()
                    )))
                }
            }
        }
        Ok(())
    }
}

/// One sampled tuple violating the ellipticity sandwich.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EllipticityViolation {
    pub m: SymMatrix,
    pub p: Vec<f64>,
    pub n: SymMatrix,
    pub q: Vec<f64>,
    pub cell: usize,
    pub excess: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub n_samples: usize,
    /// Largest relative excess over the sandwich bounds, 0 if none.
    pub worst_violation: f64,
    pub violations: Vec<EllipticityViolation>,
    pub passed: bool,
}

/// Relative tolerance of the sampled ellipticity check.
pub const ELLIPTICITY_TOL: f64 = 1e-12;

/// Samples `(M, p), (N, q)` and a cell of the model's support and checks
/// `𝒫⁻(M−N) − γ|p−q| ≤ F(M,p) − F(N,q) ≤ 𝒫⁺(M−N) + γ|p−q|`.
pub fn check_ellipticity(
    op: &EllipticOperator,
    model: &EnvModel,
    n_samples: usize,
    seed: u64,
) -> Result<EllipticityReport> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
    }
    if model.dim != op.dim {
        return Err(Error::Incompatible(format!(
            "operator is {}-dimensional, environment is {}-dimensional",
            op.dim, model.dim
        )));
    }
    let support = model.support();
    let c = op.constants;
    let d = op.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_sym = |rng: &mut ChaCha8Rng| {
        let mut m = SymMatrix::zeros(d);
        for i in 0..d {
            for j in i..d {
                m.set(i, j, rng.random_range(-2.0..2.0));
            }
        }
        m
    };
    let mut worst = 0.0_f64;
    let mut violations = Vec::new();
    for k in 0..n_samples {
        let m = random_sym(&mut rng);
        // every fourth sample uses N = M + PSD/NSD perturbation to probe the tight cases
        let n = if k % 4 == 3 {
            let e: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let mut n = m.clone();
            for i in 0..d {
                for j in i..d {
                    n.set(i, j, m.get(i, j) + t * e[i] * e[j]);
                }
            }
            n
        } else {
            random_sym(&mut rng)
        };
        let p: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let q: Vec<f64> = if k % 2 == 0 {
            p.clone()
        } else {
            (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()
        };
        let ci = rng.random_range(0..support.len());
        let cell = support[ci];
        let fm = op.evaluate(&m, &p, cell);
        let fn_ = op.evaluate(&n, &q, cell);
        let diff = &m - &n;
        let dp: Vec<f64> = p.iter().zip(&q).map(|(a, b)| a - b).collect();
        let g = c.gamma * vec_norm(&dp);
        let lower = pucci_minus(&diff, &c) - g;
        let upper = pucci_plus(&diff, &c) + g;
        let delta = fm - fn_;
        let scale = 1.0_f64
            .max(fm.abs())
            .max(fn_.abs())
            .max(lower.abs())
            .max(upper.abs());
        let excess = ((lower - delta).max(delta - upper) / scale).max(0.0);
        if !delta.is_finite() || excess > ELLIPTICITY_TOL {
            violations.push(EllipticityViolation {
                m,
                p,
                n,
                q,
                cell: ci,
                excess: if delta.is_finite() { excess } else { f64::INFINITY },
            });
        }
        worst = worst.max(if delta.is_finite() { excess } else { f64::INFINITY });
    }
    Ok(EllipticityReport {
        n_samples,
        worst_violation: worst,
        passed: violations.is_empty(),
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts() -> EllipticityConstants {
        EllipticityConstants::new(1.0, 2.0, 0.0).unwrap()
    }

    #[test]
    fn pucci_examples() {
        let c = consts();
        let z = SymMatrix::zeros(2);
        assert_eq!(pucci_plus(&z, &c), 0.0);
        assert_eq!(pucci_minus(&z, &c), 0.0);
        let m = SymMatrix::from_diagonal(&[1.0, -1.0]);
        assert!((pucci_plus(&m, &c) - 1.0).abs() < 1e-14);
        assert!((pucci_minus(&m, &c) + 1.0).abs() < 1e-14);
        let i = SymMatrix::identity(2);
        assert!((pucci_plus(&i, &c) + 2.0).abs() < 1e-14);
        assert!((pucci_minus(&i, &c) + 4.0).abs() < 1e-14);
    }

    #[test]
    fn invalid_constants_rejected() {
        assert!(EllipticityConstants::new(0.0, 1.0, 0.0).is_err());
        assert!(EllipticityConstants::new(2.0, 1.0, 0.0).is_err());
        assert!(EllipticityConstants::new(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn custom_gradient_matches_linear() {
        let c = consts();
        let a = SymMatrix::from_rows(&[vec![1.5, 0.2], vec![0.2, 1.2]]).unwrap();
        let a2 = a.clone();
        let op = EllipticOperator::constant_coeff("lin", 2, c, move |x, _| -a2.dot(x)).unwrap();
        let x = SymMatrix::from_rows(&[vec![0.3, -0.1], vec![-0.1, 0.7]]).unwrap();
        let cell = CellValue::Pucci {
            lambda: 1.0,
            big_lambda: 1.0,
        };
        let (g, gp) = op.base_gradient(&x, &[0.0, 0.0], &cell);
        assert!((&g + &a).max_abs() < 1e-8);
        assert!(gp.iter().all(|v| v.abs() < 1e-8));
    }
}
