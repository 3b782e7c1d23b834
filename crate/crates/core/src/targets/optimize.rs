//! Constrained multi-arm allocation:
//!
//! ```text
//! max phi(m_1..m_K)  s.t.  sum_j w_j m_j <= M,  m_k / sum_j m_j >= B
//! ```
//!
//! `phi` is concave with a nonnegative gradient, so the budget binds and the
//! problem reduces to the proportions `rho` on the truncated simplex
//! `{rho_k >= B, sum rho = 1}` with `m = M rho / (w . rho)`. That reduced
//! problem is solved by projected gradient ascent with Armijo backtracking.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OptimizerOptions {
    pub max_iterations: usize,
    /// Stop once the projected-gradient step moves less than this.
    pub tolerance: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions { max_iterations: 20_000, tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalAllocation {
    pub proportions: Vec<f64>,
    pub sample_sizes: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

pub fn optimal_allocation_multiarm<F>(
    weights: &[f64],
    floor: f64,
    budget: f64,
    phi: F,
    options: OptimizerOptions,
) -> Result<OptimalAllocation>
where
    F: Fn(&[f64]) -> f64,
{
    let k = weights.len();
    if k < 2 {
        return Err(Error::param("need at least two arms"));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::param("weights must be positive"));
    }
    if !(budget > 0.0) {
        return Err(Error::param("budget must be positive"));
    }
    if floor < 0.0 {
        return Err(Error::param("floor must be nonnegative"));
    }
    let slack = 1.0 - k as f64 * floor;
    if slack < -1e-12 {
        return Err(Error::Infeasible(format!("K*B = {} exceeds 1", k as f64 * floor)));
    }

    let sizes = |rho: &[f64]| -> Vec<f64> {
        let cost: f64 = rho.iter().zip(weights).map(|(r, w)| r * w).sum();
        rho.iter().map(|r| budget * r / cost).collect()
    };
    let objective = |rho: &[f64]| phi(&sizes(rho));
    let finish = |rho: Vec<f64>, iterations: usize| {
        let m = sizes(&rho);
        let value = phi(&m);
        OptimalAllocation { proportions: rho, sample_sizes: m, objective: value, iterations }
    };

    let mut rho = vec![1.0 / k as f64; k];
    if slack <= 1e-12 {
        return Ok(finish(rho, 0));
    }

    let mut value = objective(&rho);
    if !value.is_finite() {
        return Err(Error::Numerical("objective is not finite at the balanced start".into()));
    }
    let mut step = 1.0;
    let mut last_move = f64::INFINITY;
    for iteration in 1..=options.max_iterations {
        let grad = numerical_gradient(&objective, &rho);
        // Armijo backtracking along the projection arc
        let mut accepted = None;
        let mut trial = step * 2.0;
        for _ in 0..80 {
            let candidate = project_floor_simplex(
                &rho.iter().zip(&grad).map(|(r, g)| r + trial * g).collect::<Vec<_>>(),
                floor,
            );
            let gain: f64 = candidate.iter().zip(&rho).zip(&grad).map(|((c, r), g)| g * (c - r)).sum();
            let v = objective(&candidate);
            if v.is_finite() && v >= value + 1e-4 * gain {
                accepted = Some((candidate, v));
                break;
            }
            trial *= 0.5;
        }
        let Some((candidate, v)) = accepted else {
            // no ascent direction left at machine precision
            return Ok(finish(rho, iteration));
        };
        last_move = candidate.iter().zip(&rho).map(|(c, r)| (c - r).abs()).fold(0.0, f64::max);
        // gains below rounding mean the iterates only creep along a flat ridge
        let stalled = v - value <= 4.0 * f64::EPSILON * value.abs().max(1.0);
        rho = candidate;
        value = v;
        step = trial;
        if last_move < options.tolerance || stalled {
            return Ok(finish(rho, iteration));
        }
    }
    Err(Error::NonConvergence { iterations: options.max_iterations, residual: last_move })
}

fn numerical_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> Vec<f64> {
    let mut point = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = 1e-7 * x[j].abs().max(1e-3);
            point[j] = x[j] + h;
            let up = f(&point);
            point[j] = x[j] - h;
            let down = f(&point);
            point[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Euclidean projection onto `{x_k >= floor, sum x = 1}`.
pub(crate) fn project_floor_simplex(v: &[f64], floor: f64) -> Vec<f64> {
    let mass = 1.0 - v.len() as f64 * floor;
    let shifted: Vec<f64> = v.iter().map(|x| x - floor).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - mass) / (i + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    shifted.iter().map(|x| (x - tau).max(0.0) + floor).collect()
}
