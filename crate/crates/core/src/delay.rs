//! Delayed responses: patient entry times, response times and the view of
//! the data that was actually observable at each assignment epoch.
//!
//! Delay parameters are *means*: entry gaps have mean `lambda_0` and arm-`k`
//! response times have mean `lambda_k`. With exponential gaps and response
//! times the probability that a response is still outstanding after `l`
//! further arrivals is `(lambda_k / (lambda_0 + lambda_k))^l`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::engine::TrialState;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Custom delay processes.
pub trait DelaySampler: Send + Sync + fmt::Debug {
    fn entry_gap(&self, rng: &mut StreamRng) -> f64;
    fn response_time(&self, arm: usize, rng: &mut StreamRng) -> f64;
}

#[derive(Debug, Clone)]
pub enum DelayModel {
    /// Poisson arrivals and exponential response times, parameterised by means.
    Exponential { entry_mean: f64, response_means: Vec<f64> },
    /// Deterministic gaps and per-arm response times (may be infinite).
    Fixed { gap: f64, response_times: Vec<f64> },
    Custom(Arc<dyn DelaySampler>),
}

impl DelayModel {
    pub fn exponential(entry_mean: f64, response_means: Vec<f64>) -> Result<Self> {
        if !(entry_mean > 0.0 && entry_mean.is_finite()) {
            return Err(Error::param(format!("entry mean {entry_mean} must be positive")));
        }
        if response_means.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::param(format!("response means {response_means:?} must be positive")));
        }
        Ok(DelayModel::Exponential { entry_mean, response_means })
    }

    pub fn fixed(gap: f64, response_times: Vec<f64>) -> Result<Self> {
        if !(gap > 0.0 && gap.is_finite()) || response_times.iter().any(|r| r.is_nan() || *r < 0.0) {
            return Err(Error::param("fixed delays need a positive gap and nonnegative response times"));
        }
        Ok(DelayModel::Fixed { gap, response_times })
    }

    /// Arm count the model was configured for, if it fixes one.
    pub fn n_arms(&self) -> Option<usize> {
        match self {
            DelayModel::Exponential { response_means, .. } => Some(response_means.len()),
            DelayModel::Fixed { response_times, .. } => Some(response_times.len()),
            DelayModel::Custom(_) => None,
        }
    }

    pub fn entry_gap(&self, rng: &mut StreamRng) -> f64 {
        match self {
            DelayModel::Exponential { entry_mean, .. } => exp_with_mean(*entry_mean, rng),
            DelayModel::Fixed { gap, .. } => *gap,
            DelayModel::Custom(s) => s.entry_gap(rng),
        }
    }

    pub fn response_time(&self, arm: usize, rng: &mut StreamRng) -> f64 {
        match self {
            DelayModel::Exponential { response_means, .. } => exp_with_mean(response_means[arm], rng),
            DelayModel::Fixed { response_times, .. } => response_times[arm],
            DelayModel::Custom(s) => s.response_time(arm, rng),
        }
    }
}

fn exp_with_mean<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    Exp::new(1.0 / mean).expect("positive mean").sample(rng)
}

/// `P(response of a patient still outstanding after l further arrivals)`
/// for exponential gaps with mean `entry_mean` and response times with mean
/// `response_mean`.
pub fn delay_probability(entry_mean: f64, response_mean: f64, l: u32) -> Result<f64> {
    if !(entry_mean > 0.0) || !(response_mean > 0.0) {
        return Err(Error::param("delay means must be positive"));
    }
    Ok((response_mean / (entry_mean + response_mean)).powi(l as i32))
}

/// Per-arm statistics of responses observed before an assignment epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedView {
    pub counts: Vec<usize>,
    pub sums: Vec<f64>,
}

impl ObservedView {
    fn collect(state: &TrialState, upto: usize, horizon: f64) -> Self {
        let k = state.n_arms();
        let mut view = ObservedView { counts: vec![0; k], sums: vec![0.0; k] };
        for j in 0..upto {
            if state.reveal_time(j) <= horizon {
                let arm = state.assignments()[j];
                view.counts[arm] += 1;
                view.sums[arm] += state.responses()[j];
            }
        }
        view
    }
}

/// Responses among the first `m` patients observed by the entry of patient
/// `m + 1`. For `m = n` the entry time of the (unenrolled) next patient is
/// used.
pub fn observed_view(state: &TrialState, m: usize) -> Result<ObservedView> {
    if m > state.step() {
        return Err(Error::param(format!("epoch {m} beyond the {} enrolled patients", state.step())));
    }
    let horizon = if m < state.step() { state.entry_times()[m] } else { state.next_entry_time() };
    Ok(ObservedView::collect(state, m, horizon))
}

/// Everything, as if the trial were followed up indefinitely.
pub fn final_view(state: &TrialState) -> ObservedView {
    ObservedView::collect(state, state.step(), f64::INFINITY)
}

/// `N_{m,k} - N^obs_{m,k}` at epoch `m`.
pub fn outstanding(state: &TrialState, m: usize) -> Result<Vec<usize>> {
    let view = observed_view(state, m)?;
    let mut counts = vec![0usize; state.n_arms()];
    for &a in &state.assignments()[..m] {
        counts[a] += 1;
    }
    Ok(counts.iter().zip(&view.counts).map(|(n, o)| n - o).collect())
}
