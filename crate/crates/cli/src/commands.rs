use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use homog::effective::{
    check_effective_properties, density_curve, effective_f, flatness_check,
};
use homog::env::{sample_env, EnvModel};
use homog::lattice::{interior_window, make_domain};
use homog::obstacle::{contact_measure, solve_obstacle};
use homog::operators::check_ellipticity;
use homog::validate::{convergence_study, FbarSource, FbarTable, StudyParams};
use serde_json::{json, Value};

use crate::config::{EffectiveSpec, ExperimentConfig};
use crate::plot::{emit_plot_data, format_columns};
use crate::record::ResultRecord;
use crate::{CliError, Command};

/// What a finished command left behind.
#[derive(Debug)]
pub struct Outcome {
    pub record: ResultRecord,
    /// Every file written, the record first.
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.record.passed {
            crate::exit::PASS
        } else {
            crate::exit::PROPERTY_VIOLATION
        }
    }
}

/// Extra tabular output of a command: file name and contents.
type Extra = (String, String);

struct Produced {
    payload: Value,
    passed: bool,
    extras: Vec<Extra>,
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result serializes")
}

/// Validates the configuration, runs the command and writes its record and data files
/// into `out`.
pub fn run(command: Command, config: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    config.check(command)?;
    std::fs::create_dir_all(out)?;
    let start = Instant::now();
    let produced = match command {
        Command::SolveObstacle => solve_obstacle_cmd(config)?,
        Command::DensityCurve => density_curve_cmd(config)?,
        Command::Effective => effective_cmd(config)?,
        Command::Flatness => flatness_cmd(config)?,
        Command::Validate => validate_cmd(config)?,
        Command::CheckProperties => properties_cmd(config)?,
        Command::CheckEllipticity => ellipticity_cmd(config)?,
    };
    let record = ResultRecord::new(
        command,
        config,
        produced.payload,
        produced.passed,
        start.elapsed().as_secs_f64(),
    );
    let path = out.join(format!("{}.json", command.name()));
    record.write(&path)?;
    let mut files = vec![path];
    for (name, text) in produced.extras {
        let p = out.join(name);
        std::fs::write(&p, text)?;
        files.push(p);
    }
    if let Some(p) = emit_plot_data(command, std::slice::from_ref(&record), out)? {
        files.push(p);
    }
    Ok(Outcome { record, files })
}

fn solve_obstacle_cmd(config: &ExperimentConfig) -> Result<Produced, CliError> {
    let op = config.operator()?;
    let mc = config.monte_carlo()?;
    let pt = &config.points[0];
    let alpha = config.obstacle.as_ref().expect("checked").alpha;
    let g = op.shift_operator(&pt.m, &pt.p).subtract_constant(alpha);
    let domain = Arc::new(make_domain(config.dim(), mc.shape, mc.r, mc.spacing)?);
    let env = sample_env(config.model(), config.seed)?;
    let sol = solve_obstacle(&g, &domain, &env, &mc.obstacle)?;
    let window = interior_window(&domain, mc.window_t)?;
    let contact = contact_measure(&sol, Some(&window))?;
    let n = domain.n_nodes();
    let min_w = sol.w.interior().iter().copied().fold(f64::INFINITY, f64::min);

    let mut csv = String::new();
    for k in 0..config.dim() {
        write!(csv, "x{},", k + 1).unwrap();
    }
    csv.push_str("w,contact\n");
    for node in 0..n {
        for x in domain.position(node) {
            write!(csv, "{x},").unwrap();
        }
        writeln!(csv, "{},{}", sol.w.values[node], sol.contact_mask[node] as u8).unwrap();
    }
    Ok(Produced {
        payload: json!({
            "alpha": alpha,
            "m": pt.m,
            "p": pt.p,
            "n_nodes": n,
            "residual": sol.residual,
            "tol_res": sol.tol_res,
            "iterations": sol.iterations,
            "k": sol.k,
            "sup_w": sol.w.sup_norm(),
            "min_w": min_w,
            "window_t": mc.window_t,
            "contact": contact,
        }),
        passed: sol.residual <= sol.tol_res && min_w >= 0.0,
        extras: vec![("solve-obstacle.csv".into(), csv)],
    })
}

fn density_curve_cmd(config: &ExperimentConfig) -> Result<Produced, CliError> {
    let op = config.operator()?;
    let mc = config.monte_carlo()?;
    let pt = &config.points[0];
    let grid = &config.density.as_ref().expect("checked").alpha_grid;
    let curve = density_curve(&op, &config.model(), &pt.m, &pt.p, grid, &mc)?;
    let mut csv = String::from("alpha,mean,stderr\n");
    for e in &curve.estimates {
        writeln!(csv, "{},{},{}", e.alpha, e.mean_fraction, e.std_error).unwrap();
    }
    Ok(Produced {
        passed: curve.monotone,
        payload: json!({ "m": pt.m, "p": pt.p, "curve": curve }),
        extras: vec![("density-curve.csv".into(), csv)],
    })
}

fn effective_cmd(config: &ExperimentConfig) -> Result<Produced, CliError> {
    let op = config.operator()?;
    let mc = config.monte_carlo()?;
    let model = config.model();
    let samples = config
        .points
        .iter()
        .map(|pt| effective_f(&op, &model, &pt.m, &pt.p, &mc))
        .collect::<homog::Result<Vec<_>>>()?;
    let mut passed = true;
    let mut payload = json!({ "samples": samples });
    if let Some(reference) = &config.reference {
        let rel: Vec<f64> = samples
            .iter()
            .zip(&reference.values)
            .map(|(s, &v)| (s.estimate - v).abs() / v.abs().max(f64::MIN_POSITIVE))
            .collect();
        let within = rel.iter().all(|&e| e <= reference.rel_tol);
        passed &= within;
        payload["reference"] = json!({
            "values": reference.values,
            "rel_tol": reference.rel_tol,
            "relative_errors": rel,
            "within": within,
        });
    }
    Ok(Produced {
        payload,
        passed,
        extras: vec![],
    })
}

fn flatness_cmd(config: &ExperimentConfig) -> Result<Produced, CliError> {
    let op = config.operator()?;
    let mc = config.monte_carlo()?;
    let model = config.model();
    let pt = &config.points[0];
    let block = config.flatness.as_ref().expect("checked");
    let sample = effective_f(&op, &model, &pt.m, &pt.p, &mc)?;
    let alpha = sample.estimate - block.alpha_offset_tols * sample.alpha_tol;
    let report = flatness_check(&op, &model, &pt.m, &pt.p, alpha, &block.r_list, block.delta, &mc)?;
    Ok(Produced {
        passed: report.passed,
        payload: json!({ "effective": sample, "report": report }),
        extras: vec![],
    })
}

/// The effective operator named by the validate block. A table is filled with
/// effective-operator estimates under the Monte Carlo settings.
pub fn effective_source(config: &ExperimentConfig) -> Result<(FbarSource, Option<FbarTable>), CliError> {
    let v = config.validate.as_ref().ok_or_else(|| CliError::Config("missing `validate` block".into()))?;
    let op = config.operator()?.subtract_constant(v.forcing);
    Ok(match &v.effective {
        EffectiveSpec::Analytic { cell } => {
            let single = EnvModel::constant(config.dim(), config.environment.bounds, cell.clone());
            op.check_env(&single)?;
            (
                FbarSource::Analytic {
                    op,
                    cell: cell.clone(),
                },
                None,
            )
        }
        EffectiveSpec::Table { axes } => {
            let mc = config.monte_carlo()?;
            let model = config.model();
            let table = FbarTable::tabulate(config.dim(), axes.clone(), |m, p| {
                Ok(effective_f(&op, &model, m, p, &mc)?.estimate)
            })?;
            (
                FbarSource::Table {
                    table: Arc::new(table.clone()),
                    constants: *op.constants(),
                },
                Some(table),
            )
        }
    })
}

fn validate_cmd(config: &ExperimentConfig) -> Result<Produced, CliError> {
    let v = config.validate.as_ref().expect("checked");
    let op = config.operator()?.subtract_constant(v.forcing);
    let (source, table) = effective_source(config)?;
    let domain = Arc::new(make_domain(config.dim(), v.shape, v.radius, v.spacing)?);
    let env = sample_env(config.model(), config.seed)?;
    let params = StudyParams {
        eps_list: v.eps_list.clone(),
        seed: config.seed,
        threshold_rel: v.threshold_rel,
        dirichlet: v.dirichlet.clone(),
    };
    let g = |x: &[f64]| v.boundary.eval(x);
    let study = convergence_study(&op, &env, &source, &domain, &g, &params)?;
    let mut csv = String::from("eps,sup_error,runtime\n");
    for ((e, err), t) in study.eps_list.iter().zip(&study.sup_errors).zip(&study.runtimes) {
        writeln!(csv, "{e},{err},{t}").unwrap();
    }
    let mut payload = json!({ "study": study });
    if let Some(t) = table {
        payload["table"] = to_value(&t);
    }
    Ok(Produced {
        passed: study.passed,
        payload,
        extras: vec![("validate.csv".into(), csv)],
    })
}

fn properties_cmd(config: &ExperimentConfig) -> Result<Produced, CliError> {
    let op = config.operator()?;
    let mc = config.monte_carlo()?;
    let block = config.properties.as_ref().expect("checked");
    let pairs: Vec<_> = block
        .pairs
        .iter()
        .map(|pair| {
            (
                (pair.first.m.clone(), pair.first.p.clone()),
                (pair.second.m.clone(), pair.second.p.clone()),
            )
        })
        .collect();
    let report = check_effective_properties(&op, &config.model(), &pairs, &mc, &block.options)?;
    let rows: Vec<[f64; 3]> = report
        .checks
        .iter()
        .enumerate()
        .map(|(i, c)| [i as f64, c.violation, c.tolerance])
        .collect();
    Ok(Produced {
        passed: report.passed,
        extras: vec![(
            "check-properties.dat".into(),
            format_columns(["check", "violation", "tolerance"], &rows),
        )],
        payload: json!({ "report": report }),
    })
}

fn ellipticity_cmd(config: &ExperimentConfig) -> Result<Produced, CliError> {
    let op = config.operator()?;
    let n = config.ellipticity.as_ref().expect("checked").n_samples;
    let report = check_ellipticity(&op, &config.environment, n, config.seed)?;
    Ok(Produced {
        passed: report.passed,
        payload: json!({ "report": report }),
        extras: vec![],
    })
}
