//! The sequential assignment loop.
//!
//! Patients enter one at a time. Before each assignment every response
//! whose delay has elapsed is revealed to the design (and to the running
//! estimator); then the design picks an arm, the response is sampled from
//! the model and scheduled for revelation.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::delay::DelayModel;
use crate::error::{Error, Result};
use crate::models::{Estimator, EstimatorMode, EstimatorState, Family, ResponseModel, Theta};
use crate::rng::{SeedTree, Stream, StreamRng};

/// Tolerance on `sum_k p_k = 1` for every emitted probability vector.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

/// What a design may look at when choosing the next arm.
#[derive(Debug, Clone, Copy)]
pub struct Context<'a> {
    /// Patients assigned so far (`m`).
    pub step: usize,
    /// Planned sample size `n`.
    pub horizon: usize,
    /// `N_m`, all assignments so far (assignments are never delayed).
    pub counts: &'a [usize],
    /// Statistics of the responses observed so far.
    pub observed: &'a EstimatorState,
    pub estimator: &'a Estimator,
}

impl Context<'_> {
    pub fn n_arms(&self) -> usize {
        self.counts.len()
    }

    /// Current parameter estimate from observed data only.
    pub fn estimate(&self) -> Theta {
        self.estimator.estimate(self.observed)
    }

    /// `N_m / m`; `None` before the first assignment.
    pub fn proportions(&self) -> Option<Vec<f64>> {
        (self.step > 0).then(|| self.counts.iter().map(|&c| c as f64 / self.step as f64).collect())
    }
}

/// Outcome of one allocation: the chosen arm and the probability vector
/// it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub arm: usize,
    pub probabilities: Vec<f64>,
}

/// A rule mapping the trial history to the next patient's allocation
/// probabilities.
pub trait Design: Send {
    fn name(&self) -> String;

    fn n_arms(&self) -> usize;

    /// Outcome family the design requires, if any.
    fn family(&self) -> Option<Family> {
        None
    }

    /// `p_{m+1}` given the current history.
    fn probabilities(&self, ctx: &Context<'_>) -> Result<Vec<f64>>;

    /// Pick the next arm. The default draws from [`Design::probabilities`]
    /// with one uniform; urn designs override it to draw balls.
    fn allocate(&mut self, ctx: &Context<'_>, rng: &mut StreamRng) -> Result<Allocation> {
        let probabilities = self.probabilities(ctx)?;
        let arm = draw_index(&probabilities, rng.random());
        Ok(Allocation { arm, probabilities })
    }

    /// Called once the arm of a patient is fixed, drawn or forced.
    fn on_assignment(&mut self, _arm: usize, _ctx: &Context<'_>) -> Result<()> {
        Ok(())
    }

    /// Called when a response becomes observable. `ctx.observed` already
    /// includes it.
    fn on_response(&mut self, _arm: usize, _response: f64, _ctx: &Context<'_>) -> Result<()> {
        Ok(())
    }
}

/// Inverse-CDF draw; zero-probability entries are never returned.
pub fn draw_index(probabilities: &[f64], u: f64) -> usize {
    let total: f64 = probabilities.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in probabilities.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = k;
        if target < acc {
            return k;
        }
    }
    last
}

pub fn check_probabilities(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|x| !(0.0..=1.0).contains(x)) || (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
        return Err(Error::Numerical(format!("invalid allocation probabilities {p:?}")));
    }
    Ok(())
}

/// How the trial gets started before estimates are meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum WarmStart {
    /// The first `K * m0` patients are assigned by `m0` permuted blocks,
    /// each holding every arm once.
    RestrictedBlock { m0: usize },
    /// Use `theta0` for any arm that has no observed data yet.
    FixedGuess { theta0: Theta },
    /// No forced assignments; estimates shrink toward the prior center.
    BayesShrinkage,
}

impl Default for WarmStart {
    fn default() -> Self {
        WarmStart::RestrictedBlock { m0: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub n: usize,
    pub warm: WarmStart,
    pub delay: Option<DelayModel>,
    pub estimator: EstimatorMode,
}

impl TrialSetup {
    pub fn new(n: usize) -> Self {
        TrialSetup { n, warm: WarmStart::default(), delay: None, estimator: EstimatorMode::Shrinkage }
    }

    pub fn warm(mut self, warm: WarmStart) -> Self {
        self.warm = warm;
        self
    }

    pub fn delay(mut self, delay: DelayModel) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn estimator(mut self, mode: EstimatorMode) -> Self {
        self.estimator = mode;
        self
    }
}

/// Full history of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    n_arms: usize,
    assignments: Vec<usize>,
    responses: Vec<f64>,
    entry_times: Vec<f64>,
    response_delays: Vec<f64>,
    /// Flat `m x K`: row `j` is the vector patient `j + 1` was drawn from.
    probabilities: Vec<f64>,
    counts: Vec<usize>,
    next_entry: f64,
}

impl TrialState {
    fn new(n_arms: usize, capacity: usize) -> Self {
        TrialState {
            n_arms,
            assignments: Vec::with_capacity(capacity),
            responses: Vec::with_capacity(capacity),
            entry_times: Vec::with_capacity(capacity),
            response_delays: Vec::with_capacity(capacity),
            probabilities: Vec::with_capacity(capacity * n_arms),
            counts: vec![0; n_arms],
            next_entry: 0.0,
        }
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    /// Number of patients assigned (`m`).
    pub fn step(&self) -> usize {
        self.assignments.len()
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn proportions(&self) -> Vec<f64> {
        let m = self.step().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / m).collect()
    }

    pub fn entry_times(&self) -> &[f64] {
        &self.entry_times
    }

    /// Entry time of the patient after the last one enrolled.
    pub fn next_entry_time(&self) -> f64 {
        self.next_entry
    }

    /// When patient `j` (0-based) had their response observed.
    pub fn reveal_time(&self, j: usize) -> f64 {
        self.entry_times[j] + self.response_delays[j]
    }

    /// Allocation probabilities used for patient `j` (0-based).
    pub fn probabilities(&self, j: usize) -> &[f64] {
        &self.probabilities[j * self.n_arms..(j + 1) * self.n_arms]
    }

    pub fn probability_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probabilities.chunks(self.n_arms)
    }

    /// Bernoulli failures per arm (responses equal to zero).
    pub fn failures(&self) -> Vec<usize> {
        let mut f = vec![0; self.n_arms];
        for (&a, &r) in self.assignments.iter().zip(&self.responses) {
            if r == 0.0 {
                f[a] += 1;
            }
        }
        f
    }

    /// All responses, grouped as sufficient statistics.
    pub fn statistics(&self) -> EstimatorState {
        let mut s = EstimatorState::new(self.n_arms);
        for (&a, &r) in self.assignments.iter().zip(&self.responses) {
            s.record(a, r);
        }
        s
    }

    /// `sum_k N_k = m` and counts agree with the assignment log.
    pub fn is_consistent(&self) -> bool {
        let mut recount = vec![0; self.n_arms];
        for &a in &self.assignments {
            recount[a] += 1;
        }
        recount == self.counts && self.counts.iter().sum::<usize>() == self.step()
    }
}

#[derive(Debug, PartialEq)]
struct Pending {
    time: f64,
    patient: usize,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.patient.cmp(&other.patient))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A trial in progress. [`Trial::next_assignment`] advances it by one
/// patient; [`run_trial`] drives it to the horizon.
pub struct Trial<'a> {
    design: &'a mut dyn Design,
    model: &'a ResponseModel,
    setup: &'a TrialSetup,
    estimator: Estimator,
    observed: EstimatorState,
    state: TrialState,
    pending: BinaryHeap<Reverse<Pending>>,
    forced: Vec<usize>,
    clock: f64,
    assign_rng: StreamRng,
    response_rng: StreamRng,
    delay_rng: StreamRng,
}

impl<'a> Trial<'a> {
    pub fn new(design: &'a mut dyn Design, model: &'a ResponseModel, setup: &'a TrialSetup, seeds: SeedTree) -> Result<Self> {
        let k = model.n_arms();
        if setup.n == 0 {
            return Err(Error::param("sample size must be positive"));
        }
        if k < 2 {
            return Err(Error::param("a trial needs at least two arms"));
        }
        if design.n_arms() != k {
            return Err(Error::ArmMismatch { design: design.n_arms(), model: k });
        }
        if let Some(f) = design.family() {
            if f != model.family() {
                return Err(Error::param(format!("{} needs a {f} model, got {}", design.name(), model.family())));
            }
        }
        if let Some(dk) = setup.delay.as_ref().and_then(DelayModel::n_arms) {
            if dk != k {
                return Err(Error::param(format!("delay model has {dk} arms, model has {k}")));
            }
        }
        let mut estimator = Estimator::new(model.family()).with_mode(setup.estimator);
        let mut assign_rng = seeds.stream(Stream::Assignment);
        let mut forced = Vec::new();
        match &setup.warm {
            WarmStart::RestrictedBlock { m0 } => {
                if setup.n < k * m0 {
                    return Err(Error::param(format!("n = {} is smaller than the warm-up block K*m0 = {}", setup.n, k * m0)));
                }
                for _ in 0..*m0 {
                    let mut block: Vec<usize> = (0..k).collect();
                    // Fisher–Yates
                    for i in (1..k).rev() {
                        let j = assign_rng.random_range(0..=i);
                        block.swap(i, j);
                    }
                    forced.extend(block);
                }
                forced.reverse();
            }
            WarmStart::FixedGuess { theta0 } => {
                if theta0.n_arms() != k {
                    return Err(Error::ArmMismatch { design: theta0.n_arms(), model: k });
                }
                estimator = estimator.with_guess(theta0.clone())?;
            }
            WarmStart::BayesShrinkage => {}
        }
        Ok(Trial {
            design,
            model,
            setup,
            estimator,
            observed: EstimatorState::new(k),
            state: TrialState::new(k, setup.n),
            pending: BinaryHeap::new(),
            forced,
            clock: 0.0,
            assign_rng,
            response_rng: seeds.stream(Stream::Response),
            delay_rng: seeds.stream(Stream::Delay),
        })
    }

    pub fn state(&self) -> &TrialState {
        &self.state
    }

    pub fn observed(&self) -> &EstimatorState {
        &self.observed
    }

    fn reveal(&mut self, patient: usize) -> Result<()> {
        let arm = self.state.assignments[patient];
        let response = self.state.responses[patient];
        self.observed.record(arm, response);
        let ctx = Context {
            step: self.state.step(),
            horizon: self.setup.n,
            counts: &self.state.counts,
            observed: &self.observed,
            estimator: &self.estimator,
        };
        self.design.on_response(arm, response, &ctx)
    }

    /// Assign one more patient and return the arm.
    pub fn next_assignment(&mut self) -> Result<usize> {
        let m = self.state.step();
        if m > 0 {
            if let Some(delay) = &self.setup.delay {
                self.clock += delay.entry_gap(&mut self.delay_rng);
            } else {
                self.clock += 1.0;
            }
        }
        while let Some(Reverse(p)) = self.pending.peek() {
            if p.time > self.clock {
                break;
            }
            let patient = p.patient;
            self.pending.pop();
            self.reveal(patient)?;
        }

        let k = self.state.n_arms;
        let (arm, probabilities) = if let Some(arm) = self.forced.pop() {
            // permuted block: remaining composition of the current block
            let block_pos = m % k;
            let mut p = vec![0.0; k];
            let remaining = k - block_pos;
            for &a in self.forced.iter().rev().take(remaining - 1).chain(std::iter::once(&arm)) {
                p[a] = 1.0 / remaining as f64;
            }
            (arm, p)
        } else {
            let ctx = Context {
                step: m,
                horizon: self.setup.n,
                counts: &self.state.counts,
                observed: &self.observed,
                estimator: &self.estimator,
            };
            let alloc = self.design.allocate(&ctx, &mut self.assign_rng)?;
            (alloc.arm, alloc.probabilities)
        };
        check_probabilities(&probabilities)?;
        if arm >= k {
            return Err(Error::Numerical(format!("design returned arm {arm} of {k}")));
        }

        self.state.assignments.push(arm);
        self.state.counts[arm] += 1;
        self.state.probabilities.extend_from_slice(&probabilities);
        self.state.entry_times.push(self.clock);
        let response = self.model.sample(arm, &mut self.response_rng);
        self.state.responses.push(response);
        let delay = match &self.setup.delay {
            Some(d) => d.response_time(arm, &mut self.delay_rng),
            None => 0.0,
        };
        self.state.response_delays.push(delay);

        let ctx = Context {
            step: m + 1,
            horizon: self.setup.n,
            counts: &self.state.counts,
            observed: &self.observed,
            estimator: &self.estimator,
        };
        self.design.on_assignment(arm, &ctx)?;
        if self.setup.delay.is_none() {
            self.reveal(m)?;
        } else {
            self.pending.push(Reverse(Pending { time: self.clock + delay, patient: m }));
        }
        Ok(arm)
    }

    pub fn finish(mut self) -> TrialState {
        self.state.next_entry = match &self.setup.delay {
            Some(d) => self.clock + d.entry_gap(&mut self.delay_rng),
            None => self.clock + 1.0,
        };
        self.state
    }
}

/// Run a complete trial of `setup.n` patients.
pub fn run_trial(design: &mut dyn Design, model: &ResponseModel, setup: &TrialSetup, seeds: SeedTree) -> Result<TrialState> {
    let mut trial = Trial::new(design, model, setup, seeds)?;
    for _ in 0..setup.n {
        trial.next_assignment()?;
    }
    Ok(trial.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Emits a fixed vector.
    struct Constant(Vec<f64>);

    impl Design for Constant {
        fn name(&self) -> String {
            "constant".into()
        }
        fn n_arms(&self) -> usize {
            self.0.len()
        }
        fn probabilities(&self, _: &Context<'_>) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    fn model() -> ResponseModel {
        ResponseModel::new(Theta::bernoulli(&[0.6, 0.3]).unwrap()).unwrap()
    }

    #[test]
    fn degenerate_vector_always_picks_its_arm() {
        let setup = TrialSetup::new(200).warm(WarmStart::BayesShrinkage);
        let s = run_trial(&mut Constant(vec![1.0, 0.0]), &model(), &setup, SeedTree::new(1)).unwrap();
        assert_eq!(s.counts(), &[200, 0]);
    }

    #[test]
    fn fair_coin_frequency() {
        let setup = TrialSetup::new(100_000).warm(WarmStart::BayesShrinkage);
        let s = run_trial(&mut Constant(vec![0.5, 0.5]), &model(), &setup, SeedTree::new(2)).unwrap();
        let f = s.proportions()[0];
        assert!((0.494..=0.506).contains(&f), "{f}");
        assert!(s.is_consistent());
    }

    #[test]
    fn single_step() {
        let setup = TrialSetup::new(1).warm(WarmStart::BayesShrinkage);
        let s = run_trial(&mut Constant(vec![0.5, 0.5]), &model(), &setup, SeedTree::new(3)).unwrap();
        assert_eq!(s.step(), 1);
        assert!(s.counts() == [1, 0] || s.counts() == [0, 1]);
    }

    #[test]
    fn rejects_bad_setups() {
        let m = model();
        let zero = TrialSetup::new(0);
        assert!(run_trial(&mut Constant(vec![0.5, 0.5]), &m, &zero, SeedTree::new(0)).is_err());
        let ok = TrialSetup::new(10);
        assert!(matches!(
            run_trial(&mut Constant(vec![0.2, 0.3, 0.5]), &m, &ok, SeedTree::new(0)),
            Err(Error::ArmMismatch { design: 3, model: 2 })
        ));
        let one_arm = ResponseModel::new(Theta::bernoulli(&[0.5]).unwrap()).unwrap();
        assert!(run_trial(&mut Constant(vec![1.0]), &one_arm, &ok, SeedTree::new(0)).is_err());
        let tiny = TrialSetup::new(3).warm(WarmStart::RestrictedBlock { m0: 2 });
        assert!(run_trial(&mut Constant(vec![0.5, 0.5]), &m, &tiny, SeedTree::new(0)).is_err());
    }

    #[test]
    fn restricted_block_balances_the_first_block() {
        let three = ResponseModel::new(Theta::bernoulli(&[0.6, 0.3, 0.5]).unwrap()).unwrap();
        for seed in 0..20 {
            let setup = TrialSetup::new(20).warm(WarmStart::RestrictedBlock { m0: 3 });
            let s = run_trial(&mut Constant(vec![1.0, 0.0, 0.0]), &three, &setup, SeedTree::new(seed)).unwrap();
            let mut c = [0; 3];
            for &a in &s.assignments()[..9] {
                c[a] += 1;
            }
            assert_eq!(c, [3, 3, 3]);
            // within each block the last assignment is forced
            for b in 0..3 {
                let last = s.probabilities(b * 3 + 2);
                assert_eq!(last.iter().filter(|&&p| p == 1.0).count(), 1);
            }
            assert_eq!(s.counts()[0], 3 + 11);
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let setup = TrialSetup::new(500).delay(DelayModel::exponential(1.0, vec![2.0, 0.5]).unwrap());
        let a = run_trial(&mut Constant(vec![0.3, 0.7]), &model(), &setup, SeedTree::new(77)).unwrap();
        let b = run_trial(&mut Constant(vec![0.3, 0.7]), &model(), &setup, SeedTree::new(77)).unwrap();
        assert_eq!(a, b);
        let c = run_trial(&mut Constant(vec![0.3, 0.7]), &model(), &setup, SeedTree::new(78)).unwrap();
        assert_ne!(a.assignments(), c.assignments());
    }

    #[test]
    fn draw_index_skips_zero_mass() {
        assert_eq!(draw_index(&[0.0, 1.0, 0.0], 0.999_999), 1);
        assert_eq!(draw_index(&[0.5, 0.5], 0.0), 0);
        assert_eq!(draw_index(&[0.5, 0.0, 0.5], 0.5), 2);
    }
}
