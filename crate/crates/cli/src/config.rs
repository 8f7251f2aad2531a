//! Experiment configuration: one JSON document with a block per command.

use std::path::Path;
use std::sync::Arc;

use homog::effective::{MonteCarloParams, PropertyOptions};
use homog::env::{CellValue, EnvModel};
use homog::lattice::Shape;
use homog::obstacle::ObstacleParams;
use homog::operators::{pucci_minus, pucci_plus, EllipticOperator, EllipticityConstants, PucciKind};
use homog::sym::{vec_norm, SymMatrix};
use homog::validate::{DirichletParams, TableAxis};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    /// `−tr(A·M) − b·p + c` with coefficients from the environment.
    Linear,
    /// `𝒫⁺ + γ|p|` with cellwise `(λ, Λ)` from the environment.
    PucciPlus,
    /// `𝒫⁻ − γ|p|` with cellwise `(λ, Λ)` from the environment.
    PucciMinus,
    /// `𝒫⁺ + γ|p|` with the operator's own constants, ignoring the environment.
    ConstantPucciPlus,
    /// `𝒫⁻ − γ|p|` with the operator's own constants, ignoring the environment.
    ConstantPucciMinus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub family: FamilyName,
    pub constants: EllipticityConstants,
    /// Constant folded into the operator as `F − forcing`.
    #[serde(default)]
    pub forcing: f64,
}

impl OperatorConfig {
    pub fn build(&self, dim: usize) -> homog::Result<EllipticOperator> {
        let c = self.constants;
        let op = match self.family {
            FamilyName::Linear => EllipticOperator::linear_nondiv(dim, c)?,
            FamilyName::PucciPlus => EllipticOperator::random_pucci(dim, PucciKind::Plus, c)?,
            FamilyName::PucciMinus => EllipticOperator::random_pucci(dim, PucciKind::Minus, c)?,
            FamilyName::ConstantPucciPlus => {
                EllipticOperator::constant_coeff("pucci_plus", dim, c, move |m, p| {
                    pucci_plus(m, &c) + c.gamma * vec_norm(p)
                })?
            }
            FamilyName::ConstantPucciMinus => {
                EllipticOperator::constant_coeff("pucci_minus", dim, c, move |m, p| {
                    pucci_minus(m, &c) - c.gamma * vec_norm(p)
                })?
            }
        };
        Ok(op.subtract_constant(self.forcing))
    }
}

/// An argument `(M, p)` of the effective operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConfig {
    pub m: SymMatrix,
    pub p: Vec<f64>,
}

fn default_shape() -> Shape {
    Shape::Ball
}

fn default_window() -> f64 {
    0.5
}

fn default_theta() -> f64 {
    0.01
}

/// Monte Carlo budget; the base seed is the experiment seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloBlock {
    pub r: f64,
    pub spacing: f64,
    #[serde(default = "default_shape")]
    pub shape: Shape,
    #[serde(default = "default_window")]
    pub window_t: f64,
    pub n_samples: usize,
    #[serde(default = "default_theta")]
    pub theta_cut: f64,
    #[serde(default)]
    pub alpha_tol: Option<f64>,
    #[serde(default)]
    pub bias_check: bool,
    #[serde(default)]
    pub solver: ObstacleParams,
}

impl MonteCarloBlock {
    pub fn params(&self, seed: u64) -> MonteCarloParams {
        MonteCarloParams {
            r: self.r,
            spacing: self.spacing,
            shape: self.shape,
            window_t: self.window_t,
            n_samples: self.n_samples,
            base_seed: seed,
            theta_cut: self.theta_cut,
            alpha_tol: self.alpha_tol,
            bias_check: self.bias_check,
            obstacle: self.solver.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleBlock {
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityBlock {
    pub alpha_grid: Vec<f64>,
}

/// Known values of the effective operator at the configured points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceBlock {
    pub values: Vec<f64>,
    pub rel_tol: f64,
}

fn default_offset() -> f64 {
    3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatnessBlock {
    pub r_list: Vec<f64>,
    pub delta: f64,
    /// The tested `α` is the effective estimate minus this many `alpha_tol`.
    #[serde(default = "default_offset")]
    pub alpha_offset_tols: f64,
}

/// `g(x) = c + b·x + ½·xᵀQx`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryPolynomial {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub linear: Vec<f64>,
    #[serde(default)]
    pub quadratic: Option<SymMatrix>,
}

impl BoundaryPolynomial {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(x).map(|(b, v)| b * v).sum();
        let quad = self.quadratic.as_ref().map_or(0.0, |q| {
            let mut s = 0.0;
            for i in 0..x.len() {
                for j in 0..x.len() {
                    s += q.get(i, j) * x[i] * x[j];
                }
            }
            0.5 * s
        });
        self.constant + lin + quad
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum EffectiveSpec {
    /// Closed form: the configured operator family with one fixed cell value.
    Analytic { cell: CellValue },
    /// Effective-operator estimates on a grid, interpolated multilinearly.
    Table { axes: Vec<TableAxis> },
}

fn default_radius() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateBlock {
    pub eps_list: Vec<f64>,
    pub spacing: f64,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_shape")]
    pub shape: Shape,
    #[serde(default)]
    pub boundary: BoundaryPolynomial,
    /// Right-hand side folded into the operator for the Dirichlet problems only.
    #[serde(default)]
    pub forcing: f64,
    pub effective: EffectiveSpec,
    #[serde(default)]
    pub threshold_rel: Option<f64>,
    #[serde(default)]
    pub dirichlet: DirichletParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub first: PointConfig,
    pub second: PointConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertiesBlock {
    pub pairs: Vec<PairConfig>,
    #[serde(default)]
    pub options: PropertyOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipticityBlock {
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Base seed of every random environment in the experiment.
    pub seed: u64,
    pub operator: OperatorConfig,
    pub environment: EnvModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarloBlock>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<PointConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle: Option<ObstacleBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flatness: Option<FlatnessBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validate: Option<ValidateBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub properties: Option<PropertiesBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ellipticity: Option<EllipticityBlock>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| invalid(format!("cannot parse {}: {e}", path.display())))
    }

    pub fn dim(&self) -> usize {
        self.environment.dim
    }

    pub fn model(&self) -> Arc<EnvModel> {
        Arc::new(self.environment.clone())
    }

    pub fn operator(&self) -> Result<EllipticOperator, CliError> {
        Ok(self.operator.build(self.dim())?)
    }

    pub fn monte_carlo(&self) -> Result<MonteCarloParams, CliError> {
        let block = self
            .monte_carlo
            .as_ref()
            .ok_or_else(|| invalid("missing `monte_carlo` block"))?;
        Ok(block.params(self.seed))
    }

    fn check_point(&self, pt: &PointConfig) -> Result<(), CliError> {
        let d = self.dim();
        if pt.m.dim() != d || pt.p.len() != d {
            return Err(invalid(format!("(M, p) arguments must be {d}-dimensional")));
        }
        if !pt.m.is_finite() || pt.p.iter().any(|v| !v.is_finite()) {
            return Err(invalid("(M, p) arguments must be finite"));
        }
        Ok(())
    }

    fn first_point(&self) -> Result<&PointConfig, CliError> {
        self.points
            .first()
            .ok_or_else(|| invalid("at least one entry in `points` is required"))
    }

    /// Checks the common blocks and the blocks the command reads, before any solve.
    pub fn check(&self, command: crate::Command) -> Result<(), CliError> {
        use crate::Command::*;
        self.environment.validate()?;
        self.operator.constants.validate()?;
        let op = self.operator()?;
        op.check_env(&self.environment)?;
        for pt in &self.points {
            self.check_point(pt)?;
        }
        let needs_mc = matches!(
            command,
            SolveObstacle | DensityCurve | Effective | Flatness | CheckProperties
        ) || (command == Validate
            && matches!(
                self.validate.as_ref().map(|v| &v.effective),
                Some(EffectiveSpec::Table { .. })
            ));
        if needs_mc {
            let mc = self.monte_carlo()?;
            mc.validate()?;
            self.environment.per_cell(mc.spacing)?;
            homog::lattice::make_domain(self.dim(), mc.shape, mc.r, mc.spacing)?;
        }
        match command {
            SolveObstacle => {
                self.first_point()?;
                let block = self.obstacle.as_ref().ok_or_else(|| invalid("missing `obstacle` block"))?;
                if !block.alpha.is_finite() {
                    return Err(invalid("obstacle alpha must be finite"));
                }
            }
            DensityCurve => {
                self.first_point()?;
                let block = self.density.as_ref().ok_or_else(|| invalid("missing `density` block"))?;
                if block.alpha_grid.is_empty()
                    || block.alpha_grid.windows(2).any(|w| !(w[0] < w[1]))
                {
                    return Err(invalid("alpha_grid must be nonempty and strictly increasing"));
                }
            }
            Effective => {
                self.first_point()?;
                if let Some(r) = &self.reference {
                    if r.values.len() != self.points.len() || !(r.rel_tol > 0.0) {
                        return Err(invalid(
                            "reference needs one value per point and a positive rel_tol",
                        ));
                    }
                }
            }
            Flatness => {
                self.first_point()?;
                let block = self.flatness.as_ref().ok_or_else(|| invalid("missing `flatness` block"))?;
                if block.r_list.is_empty()
                    || block.r_list.windows(2).any(|w| !(w[0] < w[1]))
                    || !(block.delta > 0.0)
                {
                    return Err(invalid(
                        "flatness needs increasing r_list and a positive delta",
                    ));
                }
                let mc = self.monte_carlo()?;
                for &r in &block.r_list {
                    homog::lattice::make_domain(self.dim(), mc.shape, r, mc.spacing)?;
                }
            }
            Validate => {
                let v = self.validate.as_ref().ok_or_else(|| invalid("missing `validate` block"))?;
                if v.eps_list.is_empty() || v.eps_list.windows(2).any(|w| !(w[0] > w[1])) {
                    return Err(invalid("eps_list must be strictly decreasing"));
                }
                homog::lattice::make_domain(self.dim(), v.shape, v.radius, v.spacing)?;
                for &eps in &v.eps_list {
                    let steps = homog::env::steps_per_cell(eps * self.environment.cell_size, v.spacing)?;
                    if steps < homog::validate::MIN_STEPS_PER_CELL {
                        return Err(invalid(format!(
                            "spacing {} does not resolve eps {eps}",
                            v.spacing
                        )));
                    }
                }
                if !v.boundary.linear.is_empty() && v.boundary.linear.len() != self.dim() {
                    return Err(invalid("boundary linear part has the wrong dimension"));
                }
                if let Some(q) = &v.boundary.quadratic {
                    if q.dim() != self.dim() {
                        return Err(invalid("boundary quadratic part has the wrong dimension"));
                    }
                }
                match &v.effective {
                    EffectiveSpec::Analytic { cell } => {
                        let single = EnvModel::constant(self.dim(), self.environment.bounds, cell.clone());
                        single.validate()?;
                        op.check_env(&single)?;
                    }
                    EffectiveSpec::Table { axes } => {
                        homog::validate::FbarTable::new(
                            self.dim(),
                            axes.clone(),
                            vec![0.0; axes.iter().map(|a| a.values.len()).product()],
                        )?;
                    }
                }
            }
            CheckProperties => {
                let block = self
                    .properties
                    .as_ref()
                    .ok_or_else(|| invalid("missing `properties` block"))?;
                if block.pairs.is_empty() {
                    return Err(invalid("properties need at least one pair"));
                }
                for pair in &block.pairs {
                    self.check_point(&pair.first)?;
                    self.check_point(&pair.second)?;
                }
            }
            CheckEllipticity => {
                let block = self
                    .ellipticity
                    .as_ref()
                    .ok_or_else(|| invalid("missing `ellipticity` block"))?;
                if block.n_samples == 0 {
                    return Err(invalid("n_samples must be positive"));
                }
            }
        }
        Ok(())
    }
}
