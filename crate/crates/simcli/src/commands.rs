use std::sync::Arc;

use rar_core::catalog::{DesignSpec, TargetSpec};
use rar_core::experiment::Experiment;
use rar_core::metrics::{
    binary_urn_variance, dbcd_probability_variance, erade_mlr, erade_selection_bias, reference_variance,
    rpw_probability_variance, scaled_mlr, Reference, ReferenceDesign, RpwForm,
};
use rar_core::targets::{sigma_lb, Target, UrnTarget};
use rar_core::Theta;

use crate::config::SimulationConfig;
use crate::error::{CliError, CliResult};
use crate::table::{Cell, Table};

pub const SIMULATE_HEADER: [&str; 18] = [
    "design",
    "target",
    "n",
    "reps",
    "arm",
    "limit",
    "mean_allocation",
    "variance",
    "variance_se",
    "reference_variance",
    "relative_error",
    "regime",
    "selection_bias",
    "expected_selection_bias",
    "mlr",
    "sqrt_n_mlr",
    "power",
    "mean_failures",
];

pub const TARGET_HEADER: [&str; 4] = ["quantity", "i", "j", "value"];

pub const VARIANCE_HEADER: [&str; 7] = ["design", "p1", "p2", "analytic", "empirical", "relative_error", "regime"];

pub const BIAS_HEADER: [&str; 9] =
    ["design", "n", "reps", "selection_bias", "sb_limit", "mlr", "mlr_limit", "sqrt_n_mlr", "sqrt_n_mlr_limit"];

fn relative_error(empirical: f64, reference: Option<f64>) -> Option<f64> {
    reference.filter(|r| r.is_finite() && *r != 0.0).map(|r| (empirical - r) / r)
}

/// Closed-form covariance for the configured design, if one exists.
fn reference_for(experiment: &Experiment) -> Option<Reference> {
    let design = experiment.design.reference()?;
    let target: Arc<dyn Target> =
        if design.urn_only() { Arc::new(UrnTarget) } else { experiment.target.build(experiment.n_arms()).ok()? };
    reference_variance(design, experiment.theta(), target.as_ref()).ok()
}

/// Monte Carlo summary per arm, or a per-step trace when `reps == 1`.
pub fn simulate(config: &SimulationConfig, jobs: Option<usize>) -> CliResult<Table> {
    let experiment = config.experiment()?;
    if config.reps == 1 {
        return trace(&experiment);
    }
    let summary = experiment.run(config.reps, jobs).map_err(CliError::Run)?;
    let limit = experiment.limit()?;
    let reference = reference_for(&experiment);
    let regime = match &reference {
        Some(Reference::Covariance(_)) => "normal",
        Some(Reference::NonNormal) => "non-normal",
        None => "",
    };
    let mean = summary.mean_proportions();
    let root_n = (config.n as f64).sqrt();
    let mut table = Table::new(&SIMULATE_HEADER);
    for (arm, &rho) in limit.iter().enumerate() {
        let moments = summary.moments(arm, rho)?;
        let ref_var = match &reference {
            Some(Reference::Covariance(m)) => Some(m[(arm, arm)]),
            Some(Reference::NonNormal) => Some(f64::INFINITY),
            None => None,
        };
        table.push(vec![
            config.design.id().into(),
            config.target.id().into(),
            config.n.into(),
            config.reps.into(),
            (arm + 1).into(),
            rho.into(),
            mean[arm].into(),
            moments.variance.into(),
            moments.variance_se.into(),
            ref_var.into(),
            relative_error(moments.variance, ref_var).into(),
            regime.into(),
            summary.selection_bias().into(),
            summary.expected_selection_bias().into(),
            summary.mlr().into(),
            (root_n * summary.mlr()).into(),
            summary.power().into(),
            summary.mean_failures().into(),
        ]);
    }
    Ok(table)
}

fn trace(experiment: &Experiment) -> CliResult<Table> {
    let state = experiment.run_one(0).map_err(CliError::Run)?;
    let k = state.n_arms();
    let mut header: Vec<String> = ["step", "arm", "response"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=k).map(|a| format!("p_{a}")));
    let mut table = Table::with_header(header);
    for (m, p) in state.probability_rows().enumerate() {
        let mut row: Vec<Cell> =
            vec![(m + 1).into(), (state.assignments()[m] + 1).into(), state.responses()[m].into()];
        row.extend(p.iter().map(|&x| Cell::from(x)));
        table.push(row);
    }
    Ok(table)
}

/// Target proportions, their gradient and the lower-bound covariance, in
/// long form with 1-based indices.
pub fn target(spec: &TargetSpec, theta: &Theta) -> CliResult<Table> {
    let t = spec.build(theta.n_arms())?;
    let rho = t.rho(theta)?;
    let grad = t.gradient(theta)?;
    let lb = sigma_lb(t.as_ref(), theta)?;
    let mut table = Table::new(&TARGET_HEADER);
    for (k, r) in rho.iter().enumerate() {
        table.push(vec!["rho".into(), (k + 1).into(), Cell::Num(None), (*r).into()]);
    }
    for i in 0..grad.nrows() {
        for j in 0..grad.ncols() {
            table.push(vec!["gradient".into(), (i + 1).into(), (j + 1).into(), grad[(i, j)].into()]);
        }
    }
    for i in 0..lb.matrix.nrows() {
        for j in 0..lb.matrix.ncols() {
            table.push(vec!["sigma_lb".into(), (i + 1).into(), (j + 1).into(), lb.matrix[(i, j)].into()]);
        }
    }
    Ok(table)
}

/// A design named as `id` or `id:value`, where `value` sets the design's
/// main parameter (gamma, alpha, beta, immigration or initial balls).
#[derive(Debug, Clone, PartialEq)]
pub struct TableDesign {
    pub label: String,
    pub design: DesignSpec,
    pub reference: Option<ReferenceDesign>,
}

impl TableDesign {
    pub fn parse(token: &str) -> CliResult<Self> {
        let (id, value) = match token.split_once(':') {
            Some((id, v)) => {
                let v: f64 = v.parse().map_err(|_| CliError::config(format!("bad parameter in `{token}`")))?;
                (id, Some(v))
            }
            None => (token, None),
        };
        let (base, form) = match id {
            "rpw-table" => ("rpw", Some(RpwForm::Table)),
            other => (other, None),
        };
        let mut design = DesignSpec::from_id(base).map_err(|e| CliError::config(e.to_string()))?;
        if let Some(v) = value {
            match &mut design {
                DesignSpec::Dbcd { gamma } | DesignSpec::SmoothedErade { gamma } => *gamma = v,
                DesignSpec::Erade { alpha } => *alpha = v,
                DesignSpec::Gdl { beta, .. } | DesignSpec::Seu { beta, .. } => *beta = v,
                DesignSpec::Dl { immigration } => *immigration = v,
                DesignSpec::Rpw { initial } | DesignSpec::Rru { initial, .. } => *initial = v,
                _ => return Err(CliError::config(format!("design `{base}` takes no parameter"))),
            }
        }
        let reference = match form {
            Some(form) => Some(ReferenceDesign::Rpw { form }),
            None => design.reference(),
        };
        Ok(TableDesign { label: token.to_string(), design, reference })
    }

    pub fn parse_list(list: &str) -> CliResult<Vec<Self>> {
        list.split(',').map(|t| Self::parse(t.trim())).collect()
    }
}

/// Monte Carlo settings shared by the table commands; `reps == 0` skips
/// simulation.
#[derive(Debug, Clone, Copy)]
pub struct MonteCarlo {
    pub n: usize,
    pub reps: u64,
    pub seed: u64,
    pub jobs: Option<usize>,
}

/// Two-arm binary closed forms over a grid of `(p1, p2)`, against simulated
/// variances when `mc.reps > 0`.
pub fn variance_table(grid: &[f64], designs: &[TableDesign], mc: MonteCarlo) -> CliResult<Table> {
    let mut table = Table::new(&VARIANCE_HEADER);
    for d in designs {
        let reference = d
            .reference
            .ok_or_else(|| CliError::config(format!("design `{}` has no closed-form variance", d.label)))?;
        for &p1 in grid {
            for &p2 in grid {
                let analytic = binary_urn_variance(reference, p1, p2);
                let empirical = if mc.reps > 0 {
                    let theta = Theta::bernoulli(&[p1, p2])?;
                    let e = Experiment::new(d.design.clone(), TargetSpec::Urn, theta, mc.n, mc.seed)?;
                    let rho = e.limit()?;
                    Some(e.run(mc.reps, mc.jobs).map_err(CliError::Run)?.moments(0, rho[0])?.variance)
                } else {
                    None
                };
                table.push(vec![
                    d.label.clone().into(),
                    p1.into(),
                    p2.into(),
                    analytic.into(),
                    empirical.into(),
                    empirical.and_then(|v| relative_error(v, analytic)).into(),
                    if analytic.is_some() { "normal" } else { "infinite" }.into(),
                ]);
            }
        }
    }
    Ok(table)
}

/// `(SB, MLR, sqrt(n) MLR)` limits where they are known.
fn bias_limits(design: &DesignSpec, theta: &Theta, rho: &[f64]) -> [Option<f64>; 3] {
    let k = rho.len();
    let top = rho.iter().copied().fold(0.0, f64::max);
    let two_arm_binary = || (k == 2).then(|| theta.success_probabilities().ok()).flatten();
    match *design {
        DesignSpec::CompleteRandomization => [Some(1.0 / k as f64), Some(0.0), Some(0.0)],
        DesignSpec::Rpw { .. } => {
            let scaled = two_arm_binary()
                .map(|p| rpw_probability_variance(p[0], p[1]).map_or(f64::INFINITY, scaled_mlr));
            [Some(top), Some(0.0), scaled]
        }
        DesignSpec::Smlp | DesignSpec::Dbcd { .. } => {
            let gamma = if let DesignSpec::Dbcd { gamma } = *design { gamma } else { 0.0 };
            let scaled = (k == 2)
                .then(|| sigma_lb(&UrnTarget, theta).ok())
                .flatten()
                .map(|lb| scaled_mlr(dbcd_probability_variance(gamma, rho[0], lb.scalar())));
            [Some(top), Some(0.0), scaled]
        }
        DesignSpec::Seu { .. } | DesignSpec::SmoothedErade { .. } => [Some(top), Some(0.0), None],
        DesignSpec::Erade { alpha } if k == 2 => {
            [Some(erade_selection_bias(alpha, rho[0])), Some(erade_mlr(alpha, rho[0])), Some(f64::INFINITY)]
        }
        _ => [None, None, None],
    }
}

/// Selection bias and randomness deficit at `theta` with the urn target.
pub fn bias_table(theta: &Theta, designs: &[TableDesign], mc: MonteCarlo) -> CliResult<Table> {
    if mc.reps == 0 {
        return Err(CliError::config("the bias table needs at least one replication"));
    }
    let mut table = Table::new(&BIAS_HEADER);
    let root_n = (mc.n as f64).sqrt();
    for d in designs {
        let e = Experiment::new(d.design.clone(), TargetSpec::Urn, theta.clone(), mc.n, mc.seed)?;
        let rho = e.limit()?;
        let s = e.run(mc.reps, mc.jobs).map_err(CliError::Run)?;
        let [sb, mlr, scaled] = bias_limits(&d.design, theta, &rho);
        table.push(vec![
            d.label.clone().into(),
            mc.n.into(),
            mc.reps.into(),
            s.selection_bias().into(),
            sb.into(),
            s.mlr().into(),
            mlr.into(),
            (root_n * s.mlr()).into(),
            scaled.into(),
        ]);
    }
    Ok(table)
}
