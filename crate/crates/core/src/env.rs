//! Seeded, translation-stationary random environments built from unit cells.
//!
//! A cell's value is a pure function of the seed and the cell's integer index (a
//! counter-based hash), so translating an environment is literally a re-indexing.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::EllipticityConstants;
use crate::sym::{vec_norm, SymMatrix};

/// Coefficients held by one environment cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellValue {
    /// `A`, `b`, `c` of a linear nondivergence operator; `b` may be empty (zero drift).
    Linear {
        a: SymMatrix,
        #[serde(default)]
        b: Vec<f64>,
        #[serde(default)]
        c: f64,
    },
    /// Cellwise ellipticity constants of a Pucci operator.
    Pucci {
        lambda: f64,
        #[serde(rename = "Lambda")]
        big_lambda: f64,
    },
}

impl CellValue {
    /// Scalar isotropic linear cell `a·I` with no drift or source.
    pub fn scalar_linear(dim: usize, a: f64) -> Self {
        CellValue::Linear {
            a: SymMatrix::from_diagonal(&vec![a; dim]),
            b: Vec::new(),
            c: 0.0,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            CellValue::Linear { .. } => "linear",
            CellValue::Pucci { .. } => "pucci",
        }
    }

    fn validate(&self, dim: usize, bounds: &EllipticityConstants) -> Result<()> {
        let slack = 1e-12;
        match self {
            CellValue::Linear { a, b, c } => {
                if a.dim() != dim {
                    return Err(Error::InvalidEnvironment(format!(
                        "coefficient matrix is {}×{0}, expected {dim}×{dim}",
                        a.dim()
                    )));
                }
                if !b.is_empty() && b.len() != dim {
                    return Err(Error::InvalidEnvironment(format!(
                        "drift has {} components, expected {dim}",
                        b.len()
                    )));
                }
                if !a.is_finite() || !c.is_finite() || b.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidEnvironment("non-finite coefficient".into()));
                }
                let eig = a.clamped_eigenvalues();
                let (lo, hi) = (eig[0], eig[dim - 1]);
                if lo < bounds.lambda * (1.0 - slack) || hi > bounds.big_lambda * (1.0 + slack) {
                    return Err(Error::InvalidEnvironment(format!(
                        "coefficient spectrum [{lo}, {hi}] outside [{}, {}]",
                        bounds.lambda, bounds.big_lambda
                    )));
                }
                if vec_norm(b) > bounds.gamma * (1.0 + slack) + slack {
                    return Err(Error::InvalidEnvironment(format!(
                        "drift norm {} exceeds γ = {}",
                        vec_norm(b),
                        bounds.gamma
                    )));
                }
            }
            CellValue::Pucci { lambda, big_lambda } => {
                let ok = lambda.is_finite()
                    && big_lambda.is_finite()
                    && *lambda > 0.0
                    && lambda <= big_lambda
                    && *lambda >= bounds.lambda * (1.0 - slack)
                    && *big_lambda <= bounds.big_lambda * (1.0 + slack);
                if !ok {
                    return Err(Error::InvalidEnvironment(format!(
                        "cell constants ({lambda}, {big_lambda}) outside [{}, {}]",
                        bounds.lambda, bounds.big_lambda
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Values an i.i.d. cell can take, with their probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellValueTable {
    pub entries: Vec<CellValue>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelKind {
    /// Every cell holds the same value.
    Constant { value: CellValue },
    /// A tile of `period^d` cells repeated periodically (row-major, first axis slowest),
    /// with a seed-dependent phase so the law is translation invariant.
    Periodic { period: usize, tile: Vec<CellValue> },
    /// Independent cells drawn from a table.
    Checkerboard { table: CellValueTable },
}

fn default_cell_size() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvModel {
    pub dim: usize,
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    /// Global constants every cell must respect.
    pub bounds: EllipticityConstants,
    #[serde(flatten)]
    pub kind: ModelKind,
}

impl EnvModel {
    pub fn constant(dim: usize, bounds: EllipticityConstants, value: CellValue) -> Self {
        EnvModel {
            dim,
            cell_size: 1.0,
            bounds,
            kind: ModelKind::Constant { value },
        }
    }

    pub fn checkerboard(
        dim: usize,
        bounds: EllipticityConstants,
        entries: Vec<CellValue>,
        weights: Vec<f64>,
    ) -> Self {
        EnvModel {
            dim,
            cell_size: 1.0,
            bounds,
            kind: ModelKind::Checkerboard {
                table: CellValueTable { entries, weights },
            },
        }
    }

    pub fn periodic(
        dim: usize,
        bounds: EllipticityConstants,
        period: usize,
        tile: Vec<CellValue>,
    ) -> Self {
        EnvModel {
            dim,
            cell_size: 1.0,
            bounds,
            kind: ModelKind::Periodic { period, tile },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(Error::InvalidEnvironment(format!(
                "dimension {} is not supported",
                self.dim
            )));
        }
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(Error::InvalidEnvironment(format!(
                "cell size {} must be positive",
                self.cell_size
            )));
        }
        self.bounds
            .validate()
            .map_err(|e| Error::InvalidEnvironment(e.to_string()))?;
        match &self.kind {
            ModelKind::Constant { value } => value.validate(self.dim, &self.bounds)?,
            ModelKind::Periodic { period, tile } => {
                if *period == 0 || tile.len() != period.pow(self.dim as u32) {
                    return Err(Error::InvalidEnvironment(format!(
                        "periodic tile needs period^d = {} entries, got {}",
                        period.pow(self.dim as u32),
                        tile.len()
                    )));
                }
                for v in tile {
                    v.validate(self.dim, &self.bounds)?;
                }
            }
            ModelKind::Checkerboard { table } => {
                if table.entries.is_empty() || table.entries.len() != table.weights.len() {
                    return Err(Error::InvalidEnvironment(
                        "table needs one weight per entry and at least one entry".into(),
                    ));
                }
                if table.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(Error::InvalidEnvironment("weights must be nonnegative".into()));
                }
                let total: f64 = table.weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidEnvironment(format!(
                        "weights sum to {total}, expected 1"
                    )));
                }
                for v in &table.entries {
                    v.validate(self.dim, &self.bounds)?;
                }
            }
        }
        Ok(())
    }

    /// Every value a cell can take with positive probability.
    pub fn support(&self) -> Vec<&CellValue> {
        match &self.kind {
            ModelKind::Constant { value } => vec![value],
            ModelKind::Periodic { tile, .. } => tile.iter().collect(),
            ModelKind::Checkerboard { table } => table
                .entries
                .iter()
                .zip(&table.weights)
                .filter(|(_, w)| **w > 0.0)
                .map(|(e, _)| e)
                .collect(),
        }
    }

    /// Support values with their probabilities (for ensemble means).
    pub fn distribution(&self) -> Vec<(&CellValue, f64)> {
        match &self.kind {
            ModelKind::Constant { value } => vec![(value, 1.0)],
            ModelKind::Periodic { tile, .. } => {
                let w = 1.0 / tile.len() as f64;
                tile.iter().map(|v| (v, w)).collect()
            }
            ModelKind::Checkerboard { table } => table
                .entries
                .iter()
                .zip(table.weights.iter().copied())
                .filter(|(_, w)| *w > 0.0)
                .collect(),
        }
    }

    /// Lattice steps per cell at spacing `h`; `h` must divide the cell size.
    pub fn per_cell(&self, h: f64) -> Result<i64> {
        steps_per_cell(self.cell_size, h)
    }
}

/// Number of lattice steps of length `h` in a cell of length `cell`, which must be a
/// positive integer.
pub fn steps_per_cell(cell: f64, h: f64) -> Result<i64> {
    let ratio = cell / h;
    let n = ratio.round();
    if !(h > 0.0 && n >= 1.0 && (ratio - n).abs() <= 1e-9 * n) {
        return Err(Error::Incompatible(format!(
            "spacing {h} does not divide the cell size {cell}"
        )));
    }
    Ok(n as i64)
}

/// One realization `ω` of an environment model, possibly translated.
#[derive(Clone, Debug)]
pub struct Environment {
    model: Arc<EnvModel>,
    seed: u64,
    /// Translation in cell units, as `offset_num / offset_den` per axis.
    offset_num: Vec<i128>,
    offset_den: i128,
    phase: Vec<i64>,
    cumulative: Vec<f64>,
}

pub fn sample_env(model: Arc<EnvModel>, seed: u64) -> Result<Environment> {
    model.validate()?;
    let dim = model.dim;
    let phase = match &model.kind {
        ModelKind::Periodic { period, .. } => (0..dim)
            .map(|k| (mix(seed ^ 0x5045_5249_4f44, &[k as i64]) % *period as u64) as i64)
            .collect(),
        _ => vec![0; dim],
    };
    let cumulative = match &model.kind {
        ModelKind::Checkerboard { table } => table
            .weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect(),
        _ => Vec::new(),
    };
    Ok(Environment {
        model,
        seed,
        offset_num: vec![0; dim],
        offset_den: 1,
        phase,
        cumulative,
    })
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash of a seed and an integer multi-index.
fn mix(seed: u64, idx: &[i64]) -> u64 {
    let mut h = splitmix64(seed);
    for &k in idx {
        h = splitmix64(h ^ (k as u64));
    }
    h
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Environment {
    pub fn model(&self) -> &Arc<EnvModel> {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.model.dim
    }

    /// Current translation in cell units, as `(numerators, denominator)`.
    pub fn offset(&self) -> (&[i128], i128) {
        (&self.offset_num, self.offset_den)
    }

    /// Index of the cell containing lattice point `index` on a lattice with `per_cell`
    /// steps per cell.
    pub fn cell_of(&self, index: &[i64], per_cell: i64) -> Vec<i64> {
        let den = self.offset_den;
        let pc = per_cell as i128;
        index
            .iter()
            .zip(&self.offset_num)
            .map(|(&i, &num)| (i as i128 * den + num * pc).div_euclid(pc * den) as i64)
            .collect()
    }

    /// Value held by a cell (cell indices already include the translation).
    pub fn cell_value(&self, cell: &[i64]) -> &CellValue {
        match &self.model.kind {
            ModelKind::Constant { value } => value,
            ModelKind::Periodic { period, tile } => {
                let p = *period as i64;
                let flat = cell
                    .iter()
                    .zip(&self.phase)
                    .fold(0usize, |acc, (c, ph)| {
                        acc * *period + (c + ph).rem_euclid(p) as usize
                    });
                &tile[flat]
            }
            ModelKind::Checkerboard { table } => {
                let u = (mix(self.seed, cell) >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                let k = self
                    .cumulative
                    .iter()
                    .position(|&c| u < c)
                    .unwrap_or(table.entries.len() - 1);
                &table.entries[k]
            }
        }
    }

    /// Coefficients at lattice point `index`.
    pub fn value_at(&self, index: &[i64], per_cell: i64) -> &CellValue {
        self.cell_value(&self.cell_of(index, per_cell))
    }

    /// `τ_z ω` for a shift of `z` lattice steps on a lattice with `per_cell` steps per cell:
    /// the result at `y` equals the original at `y + z`.
    pub fn translate_steps(&self, z: &[i64], per_cell: i64) -> Result<Environment> {
        if z.len() != self.dim() {
            return Err(Error::InvalidParameter(format!(
                "shift has {} components, expected {}",
                z.len(),
                self.dim()
            )));
        }
        if per_cell < 1 {
            return Err(Error::InvalidParameter(format!(
                "steps per cell must be positive, got {per_cell}"
            )));
        }
        let pc = per_cell as i128;
        let den = self.offset_den * pc;
        let mut num: Vec<i128> = self
            .offset_num
            .iter()
            .zip(z)
            .map(|(&n, &zk)| n * pc + zk as i128 * self.offset_den)
            .collect();
        let g = num.iter().fold(den, |g, &n| gcd(g, n));
        for n in &mut num {
            *n /= g;
        }
        let mut out = self.clone();
        out.offset_num = num;
        out.offset_den = den / g;
        Ok(out)
    }

    /// Translation by a physical vector, which must be a multiple of a spacing `h` that
    /// divides the cell size.
    pub fn translate(&self, z: &[f64], h: f64) -> Result<Environment> {
        let per_cell = self.model.per_cell(h)?;
        let steps = z
            .iter()
            .map(|&v| {
                let s = v / h;
                let r = s.round();
                if v.is_finite() && (s - r).abs() <= 1e-9 * r.abs().max(1.0) {
                    Ok(r as i64)
                } else {
                    Err(Error::InvalidParameter(format!(
                        "shift component {v} is not a multiple of the spacing {h}"
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        self.translate_steps(&steps, per_cell)
    }
}

/// Spatial averages of a cell statistic over boxes of growing side.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErgodicityLevel {
    pub side: usize,
    /// Root-mean-square deviation of the box average from the ensemble mean over seeds.
    pub rms_deviation: f64,
    /// `σ / side^{d/2}` for i.i.d. cells, 0 for exact cases, absent otherwise.
    pub predicted: Option<f64>,
    pub within_band: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErgodicityReport {
    pub ensemble_mean: f64,
    pub ensemble_std: f64,
    pub levels: Vec<ErgodicityLevel>,
    pub passed: bool,
}

/// Averages `statistic` over `side^d` cells for each side and seed and compares the
/// spread with the central-limit prediction (within a factor 3), or with zero for
/// constant models and periodic models on whole periods.
pub fn ergodicity_smoke(
    model: &Arc<EnvModel>,
    statistic: impl Fn(&CellValue) -> f64,
    sides: &[usize],
    n_seeds: usize,
    base_seed: u64,
) -> Result<ErgodicityReport> {
    model.validate()?;
    if n_seeds == 0 || sides.is_empty() || sides.contains(&0) {
        return Err(Error::InvalidParameter(
            "need at least one seed and positive box sides".into(),
        ));
    }
    let dist = model.distribution();
    let mean: f64 = dist.iter().map(|(v, w)| w * statistic(v)).sum();
    let var: f64 = dist
        .iter()
        .map(|(v, w)| w * (statistic(v) - mean).powi(2))
        .sum();
    let std = var.sqrt();
    let d = model.dim;
    let mut levels = Vec::new();
    for &side in sides {
        let n_cells = side.pow(d as u32);
        let mut sq = 0.0;
        for s in 0..n_seeds {
            let env = sample_env(model.clone(), base_seed.wrapping_add(s as u64))?;
            let mut cell = vec![0i64; d];
            let mut total = 0.0;
            for flat in 0..n_cells {
                let mut f = flat;
                for k in (0..d).rev() {
                    cell[k] = (f % side) as i64;
                    f /= side;
                }
                total += statistic(env.cell_value(&cell));
            }
            sq += (total / n_cells as f64 - mean).powi(2);
        }
        let rms = (sq / n_seeds as f64).sqrt();
        let exact_tol = 1e-12 * mean.abs().max(1.0);
        let (predicted, within_band) = match &model.kind {
            ModelKind::Constant { .. } => (Some(0.0), rms <= exact_tol),
            ModelKind::Periodic { period, .. } if side % period == 0 => {
                (Some(0.0), rms <= exact_tol)
            }
            ModelKind::Periodic { .. } => (None, true),
            ModelKind::Checkerboard { .. } => {
                let pred = std / (n_cells as f64).sqrt();
                let ok = if pred == 0.0 {
                    rms <= exact_tol
                } else {
                    rms <= 3.0 * pred && rms >= pred / 3.0
                };
                (Some(pred), ok)
            }
        };
        levels.push(ErgodicityLevel {
            side,
            rms_deviation: rms,
            predicted,
            within_band,
        });
    }
    Ok(ErgodicityReport {
        ensemble_mean: mean,
        ensemble_std: std,
        passed: levels.iter().all(|l| l.within_band),
        levels,
    })
}
