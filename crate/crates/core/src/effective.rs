//! Monte Carlo estimation of contact densities and of the effective operator.
//!
//! `F̄(M, p)` is the largest `α` for which the obstacle problem for `F_{M,p} − α` keeps a
//! contact set of positive density. At finite radius the density is measured in an
//! interior window and "positive" means above a small cut `θ`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{sample_env, EnvModel, Environment};
use crate::error::{Error, Result};
use crate::lattice::{interior_window, make_domain, LatticeDomain, Shape};
use crate::obstacle::{
    contact_measure, distance_to_set, inf_convolution, solve_obstacle, ObstacleParams,
};
use crate::operators::{pucci_minus, pucci_plus, EllipticOperator};
use crate::scheme::{DiscreteOperator, Scheme};
use crate::sym::{vec_norm, SymMatrix};

fn default_window() -> f64 {
    0.5
}

fn default_theta() -> f64 {
    0.01
}

fn default_shape() -> Shape {
    Shape::Ball
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloParams {
    /// Domain radius (half-width for cubes).
    pub r: f64,
    pub spacing: f64,
    #[serde(default = "default_shape")]
    pub shape: Shape,
    #[serde(default = "default_window")]
    pub window_t: f64,
    pub n_samples: usize,
    pub base_seed: u64,
    #[serde(default = "default_theta")]
    pub theta_cut: f64,
    /// Bisection stops at this bracket width; `None` means
    /// `0.01 · (Λ·|M| + γ·|p| + 1)` with the Frobenius norm.
    #[serde(default)]
    pub alpha_tol: Option<f64>,
    /// Repeat the identification at radius `r/2` and report the difference.
    #[serde(default)]
    pub bias_check: bool,
    #[serde(default)]
    pub obstacle: ObstacleParams,
}

impl MonteCarloParams {
    pub fn new(r: f64, spacing: f64, n_samples: usize, base_seed: u64) -> Self {
        MonteCarloParams {
            r,
            spacing,
            shape: Shape::Ball,
            window_t: 0.5,
            n_samples,
            base_seed,
            theta_cut: 0.01,
            alpha_tol: None,
            bias_check: false,
            obstacle: ObstacleParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_t > 0.0 && self.window_t < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "window_t {} must lie in (0, 1)",
                self.window_t
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
        }
        if !(self.theta_cut > 0.0 && self.theta_cut < 0.2) {
            return Err(Error::InvalidParameter(format!(
                "theta_cut {} must lie in (0, 0.2)",
                self.theta_cut
            )));
        }
        if let Some(t) = self.alpha_tol {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidParameter(format!("alpha_tol {t} must be positive")));
            }
        }
        self.obstacle.validate()
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.n_samples as u64).map(|k| self.base_seed.wrapping_add(k))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub alpha: f64,
    pub r: f64,
    pub window_t: f64,
    pub n_samples: usize,
    pub mean_fraction: f64,
    pub std_error: f64,
    pub per_seed: Vec<f64>,
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Everything that stays fixed while `α` varies: the shifted operator, the domain, the
/// window and one environment per seed.
struct DensityEvaluator {
    shifted: EllipticOperator,
    domain: Arc<LatticeDomain>,
    window: Vec<bool>,
    envs: Vec<Environment>,
    params: MonteCarloParams,
}

impl DensityEvaluator {
    fn new(
        op: &EllipticOperator,
        model: &Arc<EnvModel>,
        m: &SymMatrix,
        p: &[f64],
        params: &MonteCarloParams,
    ) -> Result<Self> {
        params.validate()?;
        if m.dim() != op.dim() || p.len() != op.dim() {
            return Err(Error::InvalidParameter(format!(
                "(M, p) must be {}-dimensional",
                op.dim()
            )));
        }
        op.check_env(model)?;
        model.per_cell(params.spacing)?;
        let domain = Arc::new(make_domain(op.dim(), params.shape, params.r, params.spacing)?);
        let window = interior_window(&domain, params.window_t)?;
        let envs = params
            .seeds()
            .map(|s| sample_env(model.clone(), s))
            .collect::<Result<Vec<_>>>()?;
        Ok(DensityEvaluator {
            shifted: op.shift_operator(m, p),
            domain,
            window,
            envs,
            params: params.clone(),
        })
    }

    fn scheme(&self) -> Scheme {
        self.params
            .obstacle
            .scheme
            .unwrap_or_else(|| Scheme::default_for(&self.shifted))
    }

    fn density(&self, alpha: f64) -> Result<DensityEstimate> {
        let g = self.shifted.subtract_constant(alpha);
        let per_seed = self
            .envs
            .par_iter()
            .map(|env| {
                let sol = solve_obstacle(&g, &self.domain, env, &self.params.obstacle)
                    .map_err(|e| Error::for_seed(env.seed(), e))?;
                Ok(contact_measure(&sol, Some(&self.window))?.fraction)
            })
            .collect::<Result<Vec<f64>>>()?;
        let (mean, se) = mean_and_stderr(&per_seed);
        Ok(DensityEstimate {
            alpha,
            r: self.params.r,
            window_t: self.params.window_t,
            n_samples: per_seed.len(),
            mean_fraction: mean,
            std_error: se,
            per_seed,
        })
    }

    /// Smallest and largest value of the discrete shifted operator applied to the zero
    /// field over the cells the model can produce.
    fn discrete_bracket(&self) -> Result<(f64, f64)> {
        let model = self.envs[0].model();
        let support = model.support();
        let cells = vec![support[0]; self.domain.n_nodes()];
        let dop = DiscreteOperator::new(&self.shifted, &self.domain, cells, self.scheme(), false)?;
        let vals: Vec<f64> = support.iter().map(|c| dop.value_at_zero(c)).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Bracket("operator is not finite on the support".into()));
        }
        Ok((lo, hi))
    }
}

/// Contact density of `F_{M,p} − α` in the interior window, over the seeds
/// `base_seed .. base_seed + n_samples`.
pub fn density_estimate(
    op: &EllipticOperator,
    model: &Arc<EnvModel>,
    m: &SymMatrix,
    p: &[f64],
    alpha: f64,
    params: &MonteCarloParams,
) -> Result<DensityEstimate> {
    DensityEvaluator::new(op, model, m, p, params)?.density(alpha)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityCurve {
    pub estimates: Vec<DensityEstimate>,
    /// Mean densities are nonincreasing up to `2·(stderr sum)` per adjacent pair.
    pub monotone: bool,
    /// Every seed's density is nonincreasing in `α` exactly.
    pub monotone_per_seed: bool,
    /// Adjacent pairs `(i, i+1)` whose mean increases beyond the slack, with the excess.
    pub violations: Vec<(usize, f64)>,
}

/// Densities over a grid of `α` values (sorted ascending), all with the same seeds.
pub fn density_curve(
    op: &EllipticOperator,
    model: &Arc<EnvModel>,
    m: &SymMatrix,
    p: &[f64],
    alpha_grid: &[f64],
    params: &MonteCarloParams,
) -> Result<DensityCurve> {
    if alpha_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter(
            "alpha grid must be strictly increasing".into(),
        ));
    }
    let eval = DensityEvaluator::new(op, model, m, p, params)?;
    let estimates = alpha_grid
        .iter()
        .map(|&a| eval.density(a))
        .collect::<Result<Vec<_>>>()?;
    let mut violations = Vec::new();
    let mut per_seed = true;
    for (i, pair) in estimates.windows(2).enumerate() {
        let excess = pair[1].mean_fraction
            - pair[0].mean_fraction
            - 2.0 * (pair[0].std_error + pair[1].std_error);
        if excess > 0.0 {
            violations.push((i, excess));
        }
        if pair[1]
            .per_seed
            .iter()
            .zip(&pair[0].per_seed)
            .any(|(b, a)| b > a)
        {
            per_seed = false;
        }
    }
    Ok(DensityCurve {
        monotone: violations.is_empty(),
        monotone_per_seed: per_seed,
        violations,
        estimates,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EffectiveSample {
    pub m: SymMatrix,
    pub p: Vec<f64>,
    /// Density at `alpha_lo` exceeds the cut, density at `alpha_hi` does not.
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub estimate: f64,
    pub alpha_tol: f64,
    pub theta_cut: f64,
    /// Smallest and largest value of the discrete operator at zero over the support.
    pub ess_inf: f64,
    pub ess_sup: f64,
    /// Densities at every evaluated `α`, in evaluation order.
    pub diagnostics: Vec<DensityEstimate>,
    /// `|estimate(r) − estimate(r/2)|`, when requested.
    pub bias_estimate: Option<f64>,
    /// Extra uncertainty beyond the bracket width (the bias estimate, or 0).
    pub uncertainty: f64,
}

/// Default bisection tolerance `0.01 · (Λ·|M| + γ·|p| + 1)`.
pub fn default_alpha_tol(op: &EllipticOperator, m: &SymMatrix, p: &[f64]) -> f64 {
    let c = op.constants();
    0.01 * (c.big_lambda * m.norm() + c.gamma * vec_norm(p) + 1.0)
}

fn bisect(
    eval: &DensityEvaluator,
    alpha_tol: f64,
) -> Result<(f64, f64, f64, f64, Vec<DensityEstimate>)> {
    let theta = eval.params.theta_cut;
    let (ess_inf, ess_sup) = eval.discrete_bracket()?;
    let mut lo = ess_inf - alpha_tol;
    let mut hi = ess_sup + alpha_tol;
    let mut diagnostics = Vec::new();
    let d_lo = eval.density(lo)?;
    let d_hi = eval.density(hi)?;
    let lo_ok = d_lo.mean_fraction > theta;
    let hi_ok = d_hi.mean_fraction <= theta;
    diagnostics.push(d_lo);
    diagnostics.push(d_hi);
    if !lo_ok || !hi_ok {
        return Err(Error::Bracket(format!(
            "density {} at α = {lo} and {} at α = {hi} (cut {theta})",
            diagnostics[0].mean_fraction, diagnostics[1].mean_fraction
        )));
    }
    while hi - lo > alpha_tol {
        let mid = 0.5 * (lo + hi);
        let d = eval.density(mid)?;
        if d.mean_fraction > theta {
            lo = mid;
        } else {
            hi = mid;
        }
        diagnostics.push(d);
    }
    Ok((lo, hi, ess_inf, ess_sup, diagnostics))
}

/// Identifies `F̄(M, p)` by bisection on `density(F_{M,p} − α) > θ`, starting from the
/// bracket given by the extreme values of the operator over the model's support.
pub fn effective_f(
    op: &EllipticOperator,
    model: &Arc<EnvModel>,
    m: &SymMatrix,
    p: &[f64],
    params: &MonteCarloParams,
) -> Result<EffectiveSample> {
    let alpha_tol = params.alpha_tol.unwrap_or_else(|| default_alpha_tol(op, m, p));
    let eval = DensityEvaluator::new(op, model, m, p, params)?;
    let (lo, hi, ess_inf, ess_sup, diagnostics) = bisect(&eval, alpha_tol)?;
    let estimate = 0.5 * (lo + hi);
    let bias_estimate = if params.bias_check {
        let half = MonteCarloParams {
            r: 0.5 * params.r,
            bias_check: false,
            ..params.clone()
        };
        let eval = DensityEvaluator::new(op, model, m, p, &half)?;
        let (l, h, ..) = bisect(&eval, alpha_tol)?;
        Some((estimate - 0.5 * (l + h)).abs())
    } else {
        None
    };
    Ok(EffectiveSample {
        m: m.clone(),
        p: p.to_vec(),
        alpha_lo: lo,
        alpha_hi: hi,
        estimate,
        alpha_tol,
        theta_cut: params.theta_cut,
        ess_inf,
        ess_sup,
        diagnostics,
        uncertainty: bias_estimate.unwrap_or(0.0),
        bias_estimate,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlatnessLevel {
    pub r: f64,
    /// Seed average of `r⁻² · sup w^δ`.
    pub sup_w: f64,
    /// Seed average of `r⁻¹ · sup |Dw^δ|`.
    pub sup_grad: f64,
    /// Largest distance from a node to the contact set, over the seeds that have contact.
    pub max_dist: Option<f64>,
    /// Seeds whose solution never touches the obstacle.
    pub seeds_without_contact: usize,
    /// `|Dw^δ| ≤ (distance to the contact set)/δ` held at every node of every seed.
    pub gradient_bound_holds: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlatnessReport {
    pub alpha: f64,
    pub delta: f64,
    pub levels: Vec<FlatnessLevel>,
    pub sup_w_decreasing: bool,
    pub sup_grad_decreasing: bool,
    pub passed: bool,
}

/// Allowed growth per step when checking that a sequence decreases.
pub const FLATNESS_SLACK: f64 = 0.2;

fn decreasing_with_slack(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= (1.0 + FLATNESS_SLACK) * w[0])
}

/// Size and slope of the inf-convolved obstacle solutions of `F_{M,p} − α_below` on
/// growing domains, which should flatten relative to the domain size.
#[allow(clippy::too_many_arguments)]
pub fn flatness_check(
    op: &EllipticOperator,
    model: &Arc<EnvModel>,
    m: &SymMatrix,
    p: &[f64],
    alpha_below: f64,
    r_list: &[f64],
    delta: f64,
    params: &MonteCarloParams,
) -> Result<FlatnessReport> {
    if r_list.is_empty() || r_list.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("r_list must be strictly increasing".into()));
    }
    let mut levels = Vec::new();
    for &r in r_list {
        let level_params = MonteCarloParams {
            r,
            ..params.clone()
        };
        let eval = DensityEvaluator::new(op, model, m, p, &level_params)?;
        let g = eval.shifted.subtract_constant(alpha_below);
        let stats = eval
            .envs
            .par_iter()
            .map(|env| {
                let sol = solve_obstacle(&g, &eval.domain, env, &params.obstacle)
                    .map_err(|e| Error::for_seed(env.seed(), e))?;
                let ic = inf_convolution(&sol.w, delta)?;
                let dist = distance_to_set(&eval.domain, &sol.contact_mask);
                let mut sup_w = 0.0_f64;
                let mut sup_grad = 0.0_f64;
                let mut max_dist = 0.0_f64;
                let mut bound = true;
                let touches = sol.contact_mask.iter().any(|&c| c);
                for node in 0..eval.domain.n_nodes() {
                    sup_w = sup_w.max(ic.w_delta.values[node]);
                    let grad = vec_norm(&crate::obstacle::infconv_gradient(&ic, node));
                    sup_grad = sup_grad.max(grad);
                    max_dist = max_dist.max(dist[node]);
                    if grad * delta > dist[node] * (1.0 + 1e-12) + 1e-12 {
                        bound = false;
                    }
                }
                Ok((sup_w / (r * r), sup_grad / r, touches.then_some(max_dist), bound))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = stats.len() as f64;
        levels.push(FlatnessLevel {
            r,
            sup_w: stats.iter().map(|s| s.0).sum::<f64>() / n,
            sup_grad: stats.iter().map(|s| s.1).sum::<f64>() / n,
            max_dist: stats.iter().filter_map(|s| s.2).reduce(f64::max),
            seeds_without_contact: stats.iter().filter(|s| s.2.is_none()).count(),
            gradient_bound_holds: stats.iter().all(|s| s.3),
        });
    }
    let sup_w: Vec<f64> = levels.iter().map(|l| l.sup_w).collect();
    let sup_grad: Vec<f64> = levels.iter().map(|l| l.sup_grad).collect();
    let sup_w_decreasing = decreasing_with_slack(&sup_w);
    let sup_grad_decreasing = decreasing_with_slack(&sup_grad);
    Ok(FlatnessReport {
        alpha: alpha_below,
        delta,
        passed: sup_w_decreasing
            && sup_grad_decreasing
            && levels.iter().all(|l| l.gradient_bound_holds),
        levels,
        sup_w_decreasing,
        sup_grad_decreasing,
    })
}

/// One asserted relation between effective-operator estimates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    /// Amount by which the relation fails before tolerance (≤ 0 when it holds exactly).
    pub violation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl PropertyCheck {
    fn new(name: String, violation: f64, tolerance: f64) -> Self {
        PropertyCheck {
            name,
            violation,
            tolerance,
            passed: violation <= tolerance,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PropertyOptions {
    /// Check `F̄(tM, tp) = t·F̄(M, p)` at these `t` (for positively homogeneous `F`).
    #[serde(default)]
    pub homogeneity: Vec<f64>,
    /// Check the odd-reflection identity at every sampled point.
    #[serde(default)]
    pub odd_reflection: bool,
    /// Check `F̄(M + N, p + q) = F̄(M, p) + F̄(N, q)` (for linear `F`).
    #[serde(default)]
    pub linearity: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PropertyReport {
    pub checks: Vec<PropertyCheck>,
    pub samples: Vec<EffectiveSample>,
    pub passed: bool,
}

fn tol_total(a: &EffectiveSample, b: &EffectiveSample) -> f64 {
    a.alpha_tol + b.alpha_tol + a.uncertainty + b.uncertainty
}

/// Checks inherited ellipticity on sampled pairs, plus the optional odd-reflection,
/// homogeneity and linearity identities.
pub fn check_effective_properties(
    op: &EllipticOperator,
    model: &Arc<EnvModel>,
    pairs: &[((SymMatrix, Vec<f64>), (SymMatrix, Vec<f64>))],
    params: &MonteCarloParams,
    options: &PropertyOptions,
) -> Result<PropertyReport> {
    let c = *op.constants();
    let mut checks = Vec::new();
    let mut samples = Vec::new();
    let reflected = op.odd_reflection();
    for (k, ((m, p), (n, q))) in pairs.iter().enumerate() {
        let a = effective_f(op, model, m, p, params)?;
        let b = effective_f(op, model, n, q, params)?;
        let diff = &a.m - &b.m;
        let dp: Vec<f64> = p.iter().zip(q).map(|(x, y)| x - y).collect();
        let g = c.gamma * vec_norm(&dp);
        let delta = a.estimate - b.estimate;
        let lower = pucci_minus(&diff, &c) - g;
        let upper = pucci_plus(&diff, &c) + g;
        let tol = tol_total(&a, &b);
        checks.push(PropertyCheck::new(
            format!("pair {k}: inherited ellipticity"),
            (lower - delta).max(delta - upper),
            tol,
        ));
        if options.odd_reflection {
            let refl = effective_f(&reflected, model, m, p, params)?;
            let neg_m = -m;
            let neg_p: Vec<f64> = p.iter().map(|v| -v).collect();
            let base = effective_f(op, model, &neg_m, &neg_p, params)?;
            checks.push(PropertyCheck::new(
                format!("pair {k}: odd reflection"),
                (refl.estimate + base.estimate).abs(),
                tol_total(&refl, &base),
            ));
            samples.push(refl);
            samples.push(base);
        }
        for &t in &options.homogeneity {
            let tm = m.scale(t);
            let tp: Vec<f64> = p.iter().map(|v| t * v).collect();
            let scaled = effective_f(op, model, &tm, &tp, params)?;
            checks.push(PropertyCheck::new(
                format!("pair {k}: homogeneity t = {t}"),
                (scaled.estimate - t * a.estimate).abs(),
                scaled.alpha_tol + scaled.uncertainty + t * (a.alpha_tol + a.uncertainty),
            ));
            samples.push(scaled);
        }
        if options.linearity {
            let sum_m = &a.m + &b.m;
            let sum_p: Vec<f64> = p.iter().zip(q).map(|(x, y)| x + y).collect();
            let s = effective_f(op, model, &sum_m, &sum_p, params)?;
            checks.push(PropertyCheck::new(
                format!("pair {k}: linearity"),
                (s.estimate - a.estimate - b.estimate).abs(),
                2.0 * tol,
            ));
            samples.push(s);
        }
        samples.push(a);
        samples.push(b);
    }
    Ok(PropertyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
        samples,
    })
}
