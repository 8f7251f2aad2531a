//! Built-in experiments. Every preset carries all parameters explicitly, seed included.

use homog::effective::PropertyOptions;
use homog::env::{CellValue, EnvModel};
use homog::lattice::Shape;
use homog::obstacle::ObstacleParams;
use homog::operators::EllipticityConstants;
use homog::sym::SymMatrix;
use homog::validate::{Component, DirichletParams, TableAxis};

use crate::config::*;
use crate::CliError;

/// Preset names in a stable order.
pub const PRESET_NAMES: [&str; 5] = [
    "constant-identity",
    "harmonic-mean-1d",
    "checkerboard-pucci-2d",
    "periodic-linear-2d",
    "properties-suite",
];

/// Seed shared by all presets.
pub const PRESET_SEED: u64 = 1;

pub fn preset(name: &str) -> Result<ExperimentConfig, CliError> {
    match name {
        "constant-identity" => Ok(constant_identity()),
        "harmonic-mean-1d" => Ok(harmonic_mean_1d()),
        "checkerboard-pucci-2d" => Ok(checkerboard_pucci_2d()),
        "periodic-linear-2d" => Ok(periodic_linear_2d()),
        "properties-suite" => Ok(properties_suite()),
        other => Err(CliError::Config(format!(
            "unknown preset `{other}` (known: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

pub fn all_presets() -> Vec<ExperimentConfig> {
    PRESET_NAMES.iter().map(|n| preset(n).expect("known preset")).collect()
}

fn constants(lambda: f64, big_lambda: f64, gamma: f64) -> EllipticityConstants {
    EllipticityConstants::new(lambda, big_lambda, gamma).expect("valid constants")
}

fn sym(rows: &[[f64; 2]; 2]) -> SymMatrix {
    SymMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).expect("symmetric")
}

fn point(m: SymMatrix, p: Vec<f64>) -> PointConfig {
    PointConfig { m, p }
}

fn monte_carlo(r: f64, spacing: f64, n_samples: usize) -> MonteCarloBlock {
    MonteCarloBlock {
        r,
        spacing,
        shape: Shape::Ball,
        window_t: 0.5,
        n_samples,
        theta_cut: 0.01,
        alpha_tol: None,
        bias_check: false,
        solver: ObstacleParams::default(),
    }
}

fn empty(name: &str, operator: OperatorConfig, environment: EnvModel) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        seed: PRESET_SEED,
        operator,
        environment,
        monte_carlo: None,
        points: vec![],
        obstacle: None,
        density: None,
        reference: None,
        flatness: None,
        validate: None,
        properties: None,
        ellipticity: Some(EllipticityBlock { n_samples: 400 }),
    }
}

/// Ten fixed 2-d arguments spread over a few units.
fn spread_points() -> Vec<PointConfig> {
    (0..10)
        .map(|k| {
            let t = k as f64;
            let m = sym(&[
                [1.5 * (0.9 * t).cos(), 0.6 * (1.7 * t).sin()],
                [0.6 * (1.7 * t).sin(), 1.2 * (1.3 * t + 0.4).sin()],
            ]);
            let p = vec![0.8 * (0.5 * t).sin(), 0.8 * (0.7 * t).cos()];
            point(m, p)
        })
        .collect()
}

/// y-independent `𝒫⁺ + γ|p|`; the effective operator must be the operator itself.
fn constant_identity() -> ExperimentConfig {
    let c = constants(1.0, 2.0, 0.5);
    let mut cfg = empty(
        "constant-identity",
        OperatorConfig {
            family: FamilyName::ConstantPucciPlus,
            constants: c,
            forcing: 0.0,
        },
        EnvModel::constant(
            2,
            c,
            CellValue::Pucci {
                lambda: 1.0,
                big_lambda: 2.0,
            },
        ),
    );
    cfg.monte_carlo = Some(monte_carlo(4.0, 0.5, 2));
    cfg.points = spread_points();
    cfg.obstacle = Some(ObstacleBlock { alpha: 0.0 });
    cfg
}

/// `−a(y)u″` with `a ∈ {1, 4}` i.i.d. per unit cell: the effective coefficient is the
/// harmonic mean 1.6.
fn harmonic_mean_1d() -> ExperimentConfig {
    let bounds = constants(1.0, 4.0, 0.0);
    let mut cfg = empty(
        "harmonic-mean-1d",
        OperatorConfig {
            family: FamilyName::Linear,
            constants: bounds,
            forcing: 0.0,
        },
        EnvModel::checkerboard(
            1,
            bounds,
            vec![CellValue::scalar_linear(1, 1.0), CellValue::scalar_linear(1, 4.0)],
            vec![0.5, 0.5],
        ),
    );
    cfg.monte_carlo = Some(monte_carlo(200.0, 0.25, 20));
    cfg.points = vec![point(SymMatrix::identity(1), vec![0.0])];
    cfg.reference = Some(ReferenceBlock {
        values: vec![-1.6],
        rel_tol: 0.1,
    });
    cfg.obstacle = Some(ObstacleBlock { alpha: -2.5 });
    cfg.density = Some(DensityBlock {
        alpha_grid: (0..=12).map(|k| -4.0 + 0.25 * k as f64).collect(),
    });
    cfg.flatness = Some(FlatnessBlock {
        r_list: vec![50.0, 100.0, 200.0],
        delta: 1.0,
        alpha_offset_tols: 3.0,
    });
    cfg.validate = Some(ValidateBlock {
        eps_list: vec![0.1, 0.05, 0.025],
        spacing: 1.0 / 320.0,
        radius: 1.0,
        shape: Shape::Ball,
        boundary: BoundaryPolynomial::default(),
        forcing: 1.0,
        effective: EffectiveSpec::Analytic {
            cell: CellValue::scalar_linear(1, 1.6),
        },
        threshold_rel: Some(0.05),
        dirichlet: DirichletParams::default(),
    });
    cfg
}

fn pucci_cells() -> Vec<CellValue> {
    vec![
        CellValue::Pucci {
            lambda: 1.0,
            big_lambda: 2.0,
        },
        CellValue::Pucci {
            lambda: 1.5,
            big_lambda: 4.0,
        },
    ]
}

fn pucci_base(name: &str) -> ExperimentConfig {
    let bounds = constants(1.0, 4.0, 0.5);
    let mut cfg = empty(
        name,
        OperatorConfig {
            family: FamilyName::PucciPlus,
            constants: bounds,
            forcing: 0.0,
        },
        EnvModel::checkerboard(2, bounds, pucci_cells(), vec![0.5, 0.5]),
    );
    cfg.monte_carlo = Some(monte_carlo(32.0, 1.0, 8));
    cfg
}

/// Random `𝒫⁺_{λ(y),Λ(y)} + γ|p|` in the plane with two i.i.d. cell types.
fn checkerboard_pucci_2d() -> ExperimentConfig {
    let mut cfg = pucci_base("checkerboard-pucci-2d");
    cfg.points = vec![point(sym(&[[1.0, 0.2], [0.2, -0.6]]), vec![0.2, 0.0])];
    cfg.obstacle = Some(ObstacleBlock { alpha: 0.5 });
    cfg.density = Some(DensityBlock {
        alpha_grid: (0..=9).map(|k| 0.2 + 0.1 * k as f64).collect(),
    });
    cfg.flatness = Some(FlatnessBlock {
        r_list: vec![16.0, 32.0, 64.0],
        delta: 2.0,
        alpha_offset_tols: 3.0,
    });
    cfg
}

/// `−a(y)Δu` with the 2×2 tile `a = [[1, 4], [4, 1]]`; the effective coefficient is 1.6.
fn periodic_linear_2d() -> ExperimentConfig {
    let bounds = constants(1.0, 4.0, 0.0);
    let tile = [1.0, 4.0, 4.0, 1.0]
        .iter()
        .map(|&a| CellValue::scalar_linear(2, a))
        .collect();
    let mut cfg = empty(
        "periodic-linear-2d",
        OperatorConfig {
            family: FamilyName::Linear,
            constants: bounds,
            forcing: 0.0,
        },
        EnvModel::periodic(2, bounds, 2, tile),
    );
    let mut mc = monte_carlo(16.0, 0.5, 4);
    mc.alpha_tol = Some(0.01);
    cfg.monte_carlo = Some(mc);
    cfg.points = vec![point(SymMatrix::identity(2), vec![0.0, 0.0])];
    cfg.reference = Some(ReferenceBlock {
        values: vec![-3.2],
        rel_tol: 0.02,
    });
    let axis = |component, lo: f64, hi: f64| TableAxis {
        component,
        values: vec![lo, hi],
    };
    cfg.validate = Some(ValidateBlock {
        eps_list: vec![0.25, 0.125, 0.0625],
        spacing: 1.0 / 64.0,
        radius: 1.0,
        shape: Shape::Ball,
        boundary: BoundaryPolynomial::default(),
        forcing: 1.0,
        effective: EffectiveSpec::Table {
            axes: vec![
                // the discrete Hessian of the effective solution peaks near the
                // staircase boundary of the disc
                axis(Component::Hessian { i: 0, j: 0 }, -8.0, 8.0),
                axis(Component::Hessian { i: 0, j: 1 }, -8.0, 8.0),
                axis(Component::Hessian { i: 1, j: 1 }, -8.0, 8.0),
            ],
        },
        threshold_rel: None,
        dirichlet: DirichletParams::default(),
    });
    cfg
}

/// Inherited ellipticity and the odd-reflection identity on the Pucci checkerboard.
fn properties_suite() -> ExperimentConfig {
    let mut cfg = pucci_base("properties-suite");
    if let Some(mc) = cfg.monte_carlo.as_mut() {
        mc.bias_check = true;
    }
    let firsts = [
        ([[1.0, 0.3], [0.3, -0.2]], [0.2, 0.0]),
        ([[-0.5, 0.2], [0.2, 0.8]], [0.0, 0.3]),
        ([[0.6, -0.4], [-0.4, 0.6]], [-0.2, 0.1]),
        ([[-1.0, 0.0], [0.0, 0.4]], [0.1, -0.3]),
        ([[0.3, 0.5], [0.5, -0.7]], [0.0, 0.0]),
    ];
    let seconds = [
        ([[0.4, 0.0], [0.0, 0.5]], [0.0, 0.0]),
        ([[0.2, -0.3], [-0.3, -0.6]], [0.2, 0.2]),
        ([[1.2, 0.1], [0.1, -0.4]], [0.0, -0.1]),
        ([[-0.3, 0.4], [0.4, 0.9]], [0.3, 0.0]),
        ([[0.8, 0.2], [0.2, 0.2]], [-0.1, 0.2]),
    ];
    cfg.properties = Some(PropertiesBlock {
        pairs: firsts
            .iter()
            .zip(&seconds)
            .map(|((m1, p1), (m2, p2))| PairConfig {
                first: point(sym(m1), p1.to_vec()),
                second: point(sym(m2), p2.to_vec()),
            })
            .collect(),
        options: PropertyOptions {
            homogeneity: vec![],
            odd_reflection: true,
            linearity: false,
        },
    });
    cfg
}
