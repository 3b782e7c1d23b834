//! Urn designs: generalized Pólya urns (RPW, Wei's K-arm rule, SEU and
//! arbitrary adding rules), drop-the-loser, generalized drop-the-loser, the
//! immigrated urn and the randomly reinforced urn.
//!
//! Ball counts are real numbers and vectors are rows: after an arm-`k`
//! draw the urn becomes `Y + D_k`, where `D_k` is the `k`-th row of the
//! increment matrix. Types holding a nonpositive number of balls cannot be
//! drawn.

mod eigen;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

pub use eigen::{imu_limit, stationary_allocation, Stationary};

use crate::engine::{Allocation, Context, Design};
use crate::error::{Error, Result};
use crate::models::{Family, Theta};
use crate::rng::StreamRng;
use crate::targets::TargetAllocation;

/// Upper bound on consecutive immigration draws for one patient.
pub const MAX_IMMIGRATIONS: usize = 1_000_000;

/// Ball counts: an optional immigration slot `Y_0` plus one entry per
/// treatment type.
#[derive(Debug, Clone, PartialEq)]
pub struct Urn {
    immigration: f64,
    balls: Vec<f64>,
}

/// Result of drawing one ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Draw {
    Immigration,
    Treatment(usize),
}

impl Urn {
    pub fn new(balls: Vec<f64>) -> Result<Self> {
        Self::with_immigration(0.0, balls)
    }

    pub fn with_immigration(immigration: f64, balls: Vec<f64>) -> Result<Self> {
        if balls.len() < 2 {
            return Err(Error::param("an urn needs at least two treatment types"));
        }
        if !(immigration >= 0.0 && immigration.is_finite()) || balls.iter().any(|b| !b.is_finite()) {
            return Err(Error::param(format!("invalid urn composition ({immigration}; {balls:?})")));
        }
        Ok(Urn { immigration, balls })
    }

    pub fn n_arms(&self) -> usize {
        self.balls.len()
    }

    pub fn immigration(&self) -> f64 {
        self.immigration
    }

    pub fn balls(&self) -> &[f64] {
        &self.balls
    }

    /// Total number of drawable treatment balls.
    pub fn treatment_mass(&self) -> f64 {
        self.balls.iter().map(|b| b.max(0.0)).sum()
    }

    fn empty(&self) -> Error {
        Error::EmptyUrn { treatment: self.treatment_mass(), immigration: self.immigration }
    }

    /// `max(Y_k, 0) / sum_j max(Y_j, 0)`, ignoring the immigration slot.
    pub fn selection_probabilities(&self) -> Result<Vec<f64>> {
        let total = self.treatment_mass();
        if !(total > 0.0) {
            return Err(self.empty());
        }
        Ok(self.balls.iter().map(|b| b.max(0.0) / total).collect())
    }

    /// Map a uniform on `[0, 1)` to a ball: the immigration slot first, then
    /// the drawable treatment types in order.
    pub fn draw(&self, u: f64) -> Result<Draw> {
        let total = self.immigration + self.treatment_mass();
        if !(total > 0.0) {
            return Err(self.empty());
        }
        let mut target = u * total;
        if target < self.immigration {
            return Ok(Draw::Immigration);
        }
        target -= self.immigration;
        let mut last = None;
        for (k, &b) in self.balls.iter().enumerate() {
            if b <= 0.0 {
                continue;
            }
            last = Some(k);
            if target < b {
                return Ok(Draw::Treatment(k));
            }
            target -= b;
        }
        // only reachable through rounding at the top end
        Ok(last.map_or(Draw::Immigration, Draw::Treatment))
    }

    pub fn add(&mut self, row: &[f64]) {
        for (b, d) in self.balls.iter_mut().zip(row) {
            *b += d;
        }
    }

    /// Probability that the next *treatment* ball is of each type, summing
    /// over any number of immigration draws, each of which adds `rates`.
    pub fn effective_probabilities(&self, rates: &[f64]) -> Result<Vec<f64>> {
        let k = self.n_arms();
        if self.immigration == 0.0 {
            return self.selection_probabilities();
        }
        if rates.iter().all(|&a| a == 0.0) {
            // immigration draws change nothing, so they only delay the choice
            return self.selection_probabilities().map_err(|_| Error::ImmigrationLoop(MAX_IMMIGRATIONS));
        }
        let mut p = vec![0.0; k];
        let mut reach = 1.0;
        let mut balls = self.balls.clone();
        for _ in 0..MAX_IMMIGRATIONS {
            let mass: f64 = balls.iter().map(|b| b.max(0.0)).sum();
            let total = self.immigration + mass;
            for (pk, b) in p.iter_mut().zip(&balls) {
                *pk += reach * b.max(0.0) / total;
            }
            reach *= self.immigration / total;
            if reach < 1e-17 {
                let s: f64 = p.iter().sum();
                return Ok(p.into_iter().map(|x| x / s).collect());
            }
            for (b, a) in balls.iter_mut().zip(rates) {
                *b += a;
            }
        }
        Err(Error::ImmigrationLoop(MAX_IMMIGRATIONS))
    }
}

/// When a rule's increments are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timing {
    /// Immediately after the draw; the response is not needed.
    AtAssignment,
    /// When the patient's response becomes observable.
    AtResponse,
}

/// Row `D_k` of the increment matrix for a drawn arm `k`.
pub trait AddingRule: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    fn n_arms(&self) -> usize;

    fn family(&self) -> Option<Family> {
        None
    }

    fn timing(&self) -> Timing;

    /// `response` is `Some` exactly when the timing is `AtResponse`.
    fn increments(&self, arm: usize, response: Option<f64>, ctx: &Context<'_>) -> Result<Vec<f64>>;

    /// `H = E[D]` at the true parameter.
    fn generating_matrix(&self, theta: &Theta) -> Result<DMatrix<f64>>;
}

fn check_arms(rule: &str, k: usize, theta: &Theta) -> Result<()> {
    if theta.n_arms() != k {
        return Err(Error::param(format!("{rule} has {k} arms, parameter has {}", theta.n_arms())));
    }
    Ok(())
}

/// Wei's rule: a success adds one ball of the same type, a failure adds
/// `1/(K-1)` balls to every other type. For `K = 2` this is the randomized
/// play-the-winner rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeiRule {
    k: usize,
}

impl WeiRule {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::param("Wei's rule needs at least two arms"));
        }
        Ok(WeiRule { k })
    }

    pub fn rpw() -> Self {
        WeiRule { k: 2 }
    }
}

impl AddingRule for WeiRule {
    fn name(&self) -> String {
        if self.k == 2 { "rpw".into() } else { format!("wei(K={})", self.k) }
    }

    fn n_arms(&self) -> usize {
        self.k
    }

    fn family(&self) -> Option<Family> {
        Some(Family::Bernoulli)
    }

    fn timing(&self) -> Timing {
        Timing::AtResponse
    }

    fn increments(&self, arm: usize, response: Option<f64>, _: &Context<'_>) -> Result<Vec<f64>> {
        let success = response.ok_or_else(|| Error::Numerical("Wei's rule needs the response".into()))? != 0.0;
        let mut d = vec![0.0; self.k];
        if success {
            d[arm] = 1.0;
        } else {
            let share = 1.0 / (self.k - 1) as f64;
            for (j, x) in d.iter_mut().enumerate() {
                if j != arm {
                    *x = share;
                }
            }
        }
        Ok(d)
    }

    fn generating_matrix(&self, theta: &Theta) -> Result<DMatrix<f64>> {
        check_arms(&self.name(), self.k, theta)?;
        let p = theta.success_probabilities()?;
        let k = self.k;
        Ok(DMatrix::from_fn(k, k, |i, j| if i == j { p[i] } else { (1.0 - p[i]) / (k - 1) as f64 }))
    }
}

/// Sequential estimation-adjusted urn: every draw adds `beta * rho_j(theta_hat)`
/// balls of each type `j`, whatever the response.
#[derive(Debug, Clone)]
pub struct SeuRule {
    target: TargetAllocation,
    beta: f64,
    k: usize,
}

impl SeuRule {
    pub fn new(target: TargetAllocation, beta: f64, k: usize) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::param(format!("SEU needs beta > 0, got {beta}")));
        }
        if let Some(tk) = target.target().n_arms() {
            if tk != k {
                return Err(Error::param(format!("target has {tk} arms, urn has {k}")));
            }
        }
        Ok(SeuRule { target, beta, k })
    }
}

impl AddingRule for SeuRule {
    fn name(&self) -> String {
        format!("seu({})", self.target.target().name())
    }

    fn n_arms(&self) -> usize {
        self.k
    }

    fn family(&self) -> Option<Family> {
        self.target.target().family()
    }

    fn timing(&self) -> Timing {
        Timing::AtAssignment
    }

    fn increments(&self, _: usize, _: Option<f64>, ctx: &Context<'_>) -> Result<Vec<f64>> {
        let rho = self.target.evaluate(&ctx.estimate())?;
        Ok(rho.into_iter().map(|r| self.beta * r).collect())
    }

    fn generating_matrix(&self, theta: &Theta) -> Result<DMatrix<f64>> {
        check_arms(&self.name(), self.k, theta)?;
        let rho = self.target.evaluate(theta)?;
        Ok(DMatrix::from_fn(self.k, self.k, |_, j| self.beta * rho[j]))
    }
}

/// Drop-the-loser: a failure removes the drawn ball, a success returns it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropOnFailure {
    k: usize,
}

impl DropOnFailure {
    pub fn new(k: usize) -> Self {
        DropOnFailure { k }
    }
}

impl AddingRule for DropOnFailure {
    fn name(&self) -> String {
        "drop-on-failure".into()
    }

    fn n_arms(&self) -> usize {
        self.k
    }

    fn family(&self) -> Option<Family> {
        Some(Family::Bernoulli)
    }

    fn timing(&self) -> Timing {
        Timing::AtResponse
    }

    fn increments(&self, arm: usize, response: Option<f64>, _: &Context<'_>) -> Result<Vec<f64>> {
        let mut d = vec![0.0; self.k];
        if response == Some(0.0) {
            d[arm] = -1.0;
        }
        Ok(d)
    }

    fn generating_matrix(&self, theta: &Theta) -> Result<DMatrix<f64>> {
        check_arms(&self.name(), self.k, theta)?;
        let p = theta.success_probabilities()?;
        Ok(DMatrix::from_fn(self.k, self.k, |i, j| if i == j { p[i] - 1.0 } else { 0.0 }))
    }
}

/// The same increment matrix after every draw, whatever the response.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantRule {
    matrix: DMatrix<f64>,
}

impl ConstantRule {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() < 2 || matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::param("increment matrix must be square, finite and at least 2x2"));
        }
        Ok(ConstantRule { matrix })
    }

    /// `D = -I`: every drawn ball is dropped.
    pub fn drop_drawn(k: usize) -> Self {
        ConstantRule { matrix: -DMatrix::identity(k, k) }
    }
}

impl AddingRule for ConstantRule {
    fn name(&self) -> String {
        "constant".into()
    }

    fn n_arms(&self) -> usize {
        self.matrix.nrows()
    }

    fn timing(&self) -> Timing {
        Timing::AtAssignment
    }

    fn increments(&self, arm: usize, _: Option<f64>, _: &Context<'_>) -> Result<Vec<f64>> {
        Ok(self.matrix.row(arm).iter().copied().collect())
    }

    fn generating_matrix(&self, theta: &Theta) -> Result<DMatrix<f64>> {
        check_arms(&self.name(), self.n_arms(), theta)?;
        Ok(self.matrix.clone())
    }
}

type RowFn = dyn Fn(usize, f64) -> Vec<f64> + Send + Sync;
type MeanFn = dyn Fn(&Theta) -> Result<DMatrix<f64>> + Send + Sync;

/// A response-driven rule given by a closure `(arm, response) -> D_k`.
#[derive(Clone)]
pub struct FnRule {
    name: String,
    k: usize,
    rows: Arc<RowFn>,
    mean: Option<Arc<MeanFn>>,
}

impl FnRule {
    pub fn new(name: impl Into<String>, k: usize, rows: impl Fn(usize, f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        FnRule { name: name.into(), k, rows: Arc::new(rows), mean: None }
    }

    pub fn with_mean(mut self, mean: impl Fn(&Theta) -> Result<DMatrix<f64>> + Send + Sync + 'static) -> Self {
        self.mean = Some(Arc::new(mean));
        self
    }
}

impl fmt::Debug for FnRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnRule").field("name", &self.name).field("k", &self.k).finish()
    }
}

impl AddingRule for FnRule {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn n_arms(&self) -> usize {
        self.k
    }

    fn timing(&self) -> Timing {
        Timing::AtResponse
    }

    fn increments(&self, arm: usize, response: Option<f64>, _: &Context<'_>) -> Result<Vec<f64>> {
        let r = response.ok_or_else(|| Error::Numerical(format!("{} needs the response", self.name)))?;
        let row = (self.rows)(arm, r);
        if row.len() != self.k || row.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("{} produced an invalid row {row:?}", self.name)));
        }
        Ok(row)
    }

    fn generating_matrix(&self, theta: &Theta) -> Result<DMatrix<f64>> {
        match &self.mean {
            Some(mean) => mean(theta),
            None => Err(Error::Unsupported(format!("{} has no closed-form generating matrix", self.name))),
        }
    }
}

/// Randomly reinforced urn: arm `k` with response `x` adds `reinforce(x)`
/// balls of type `k` only.
pub fn rru_rule(k: usize, reinforce: impl Fn(f64) -> f64 + Send + Sync + 'static) -> FnRule {
    FnRule::new("rru", k, move |arm, x| {
        let mut d = vec![0.0; k];
        d[arm] = reinforce(x).max(0.0);
        d
    })
}

/// Immigration rates `a_{m+1} = a(theta_hat_m)`.
#[derive(Debug, Clone)]
pub enum Immigration {
    Constant(Vec<f64>),
    /// `beta * rho(theta_hat)`.
    Target { target: TargetAllocation, beta: f64 },
}

impl Immigration {
    pub fn rates(&self, ctx: &Context<'_>) -> Result<Vec<f64>> {
        match self {
            Immigration::Constant(a) => Ok(a.clone()),
            Immigration::Target { target, beta } => {
                Ok(target.evaluate(&ctx.estimate())?.into_iter().map(|r| beta * r).collect())
            }
        }
    }

    /// Rates at the true parameter.
    pub fn rates_at(&self, theta: &Theta) -> Result<Vec<f64>> {
        match self {
            Immigration::Constant(a) => Ok(a.clone()),
            Immigration::Target { target, beta } => Ok(target.evaluate(theta)?.into_iter().map(|r| beta * r).collect()),
        }
    }
}

/// An urn change, in the order it was applied.
#[derive(Debug, Clone, PartialEq)]
pub enum UrnEvent {
    Immigration(Vec<f64>),
    Increment { arm: usize, row: Vec<f64> },
}

/// Replay a log: `Y_m = Y_0 + sum of logged rows`.
pub fn reconstruct(initial: &Urn, log: &[UrnEvent]) -> Urn {
    let mut urn = initial.clone();
    for e in log {
        match e {
            UrnEvent::Immigration(a) => urn.add(a),
            UrnEvent::Increment { row, .. } => urn.add(row),
        }
    }
    urn
}

/// One draw of a generalized Pólya urn: pick a ball, sample the response
/// and add `D_k`. Returns the arm and the response.
pub fn gpu_step(
    urn: &mut Urn,
    rule: &dyn AddingRule,
    ctx: &Context<'_>,
    respond: impl FnOnce(usize) -> f64,
    rng: &mut StreamRng,
) -> Result<(usize, f64)> {
    let arm = match urn.draw(rng.random())? {
        Draw::Treatment(k) => k,
        Draw::Immigration => return Err(Error::Numerical("immigration ball in an urn without immigration".into())),
    };
    let x = respond(arm);
    let response = (rule.timing() == Timing::AtResponse).then_some(x);
    urn.add(&rule.increments(arm, response, ctx)?);
    Ok((arm, x))
}

/// One draw of a drop-the-loser urn. `None` means an immigration ball was
/// drawn (returned together with one ball of every treatment type) and no
/// patient was assigned.
pub fn dl_step(urn: &mut Urn, respond: impl FnOnce(usize) -> f64, rng: &mut StreamRng) -> Result<Option<(usize, f64)>> {
    match urn.draw(rng.random())? {
        Draw::Immigration => {
            urn.add(&vec![1.0; urn.n_arms()]);
            Ok(None)
        }
        Draw::Treatment(k) => {
            let x = respond(k);
            if x == 0.0 {
                urn.balls[k] -= 1.0;
            }
            Ok(Some((k, x)))
        }
    }
}

/// One patient of an immigrated urn: immigration draws add `rates` and are
/// repeated until a treatment ball comes up; then `D_k` is added.
pub fn imu_step(
    urn: &mut Urn,
    rates: &[f64],
    rule: &dyn AddingRule,
    ctx: &Context<'_>,
    respond: impl FnOnce(usize) -> f64,
    rng: &mut StreamRng,
) -> Result<(usize, f64)> {
    let arm = draw_treatment(urn, rates, rng, &mut |_| {})?;
    let x = respond(arm);
    let response = (rule.timing() == Timing::AtResponse).then_some(x);
    urn.add(&rule.increments(arm, response, ctx)?);
    Ok((arm, x))
}

/// One patient of a randomly reinforced urn.
pub fn rru_step(
    urn: &mut Urn,
    reinforce: impl Fn(usize, f64) -> f64,
    respond: impl FnOnce(usize) -> f64,
    rng: &mut StreamRng,
) -> Result<(usize, f64)> {
    let arm = match urn.draw(rng.random())? {
        Draw::Treatment(k) => k,
        Draw::Immigration => return Err(Error::Numerical("immigration ball in a reinforced urn".into())),
    };
    let x = respond(arm);
    urn.balls[arm] += reinforce(arm, x).max(0.0);
    Ok((arm, x))
}

fn draw_treatment(urn: &mut Urn, rates: &[f64], rng: &mut StreamRng, on_immigration: &mut dyn FnMut(&[f64])) -> Result<usize> {
    for _ in 0..MAX_IMMIGRATIONS {
        match urn.draw(rng.random())? {
            Draw::Treatment(k) => return Ok(k),
            Draw::Immigration => {
                urn.add(rates);
                on_immigration(rates);
            }
        }
    }
    Err(Error::ImmigrationLoop(MAX_IMMIGRATIONS))
}

/// Any urn design: a generalized Pólya urn when there is no immigration,
/// an immigrated urn otherwise.
#[derive(Debug, Clone)]
pub struct UrnDesign {
    name: String,
    initial: Urn,
    urn: Urn,
    rule: Arc<dyn AddingRule>,
    immigration: Option<Immigration>,
    log: Option<Vec<UrnEvent>>,
}

impl UrnDesign {
    pub fn gpu(name: impl Into<String>, urn: Urn, rule: Arc<dyn AddingRule>) -> Result<Self> {
        Self::imu(name, urn, rule, None)
    }

    pub fn imu(name: impl Into<String>, urn: Urn, rule: Arc<dyn AddingRule>, immigration: Option<Immigration>) -> Result<Self> {
        if rule.n_arms() != urn.n_arms() {
            return Err(Error::param(format!("rule has {} arms, urn has {}", rule.n_arms(), urn.n_arms())));
        }
        match &immigration {
            Some(Immigration::Constant(a)) if a.len() != urn.n_arms() || a.iter().any(|x| !(*x >= 0.0)) => {
                return Err(Error::param(format!("immigration rates {a:?} must be {} nonnegative numbers", urn.n_arms())));
            }
            Some(Immigration::Target { beta, .. }) if !(*beta > 0.0) => {
                return Err(Error::param("immigration scale must be positive"));
            }
            _ => {}
        }
        if immigration.is_none() && urn.immigration() > 0.0 {
            return Err(Error::param("an immigration slot needs immigration rates"));
        }
        Ok(UrnDesign { name: name.into(), initial: urn.clone(), urn, rule, immigration, log: None })
    }

    /// Randomized play-the-winner with `initial` balls of each type.
    pub fn rpw(initial: f64) -> Result<Self> {
        Self::gpu("rpw", Urn::new(vec![initial; 2])?, Arc::new(WeiRule::rpw()))
    }

    pub fn wei(k: usize, initial: f64) -> Result<Self> {
        Self::gpu(format!("wei(K={k})"), Urn::new(vec![initial; k])?, Arc::new(WeiRule::new(k)?))
    }

    pub fn seu(target: TargetAllocation, beta: f64, k: usize, initial: f64) -> Result<Self> {
        let rule = SeuRule::new(target, beta, k)?;
        Self::gpu(rule.name(), Urn::new(vec![initial; k])?, Arc::new(rule))
    }

    /// Drop-the-loser with `Y_0` immigration balls and one ball per type.
    pub fn drop_the_loser(k: usize, y0: f64) -> Result<Self> {
        if !(y0 > 0.0) {
            return Err(Error::param("drop-the-loser needs immigration balls"));
        }
        Self::imu(
            "dl",
            Urn::with_immigration(y0, vec![1.0; k])?,
            Arc::new(DropOnFailure::new(k)),
            Some(Immigration::Constant(vec![1.0; k])),
        )
    }

    /// Generalized drop-the-loser: `D = -I`, immigration `beta * rho(theta_hat)`.
    pub fn generalized_drop_the_loser(target: TargetAllocation, beta: f64, k: usize, y0: f64) -> Result<Self> {
        if !(y0 > 0.0) {
            return Err(Error::param("GDL needs immigration balls"));
        }
        Self::imu(
            format!("gdl({})", target.target().name()),
            Urn::with_immigration(y0, vec![1.0; k])?,
            Arc::new(ConstantRule::drop_drawn(k)),
            Some(Immigration::Target { target, beta }),
        )
    }

    /// Randomly reinforced urn.
    pub fn rru(k: usize, initial: f64, reinforce: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        Self::gpu("rru", Urn::new(vec![initial; k])?, Arc::new(rru_rule(k, reinforce)))
    }

    /// Keep every urn change so the composition can be rebuilt.
    pub fn with_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn urn(&self) -> &Urn {
        &self.urn
    }

    pub fn initial(&self) -> &Urn {
        &self.initial
    }

    pub fn log(&self) -> Option<&[UrnEvent]> {
        self.log.as_deref()
    }

    pub fn rule(&self) -> &dyn AddingRule {
        self.rule.as_ref()
    }

    pub fn immigration(&self) -> Option<&Immigration> {
        self.immigration.as_ref()
    }

    /// Limiting allocation at the true parameter: the stationary vector of
    /// `H`, or `a (-H)^{-1}` normalized when the urn shrinks on average.
    pub fn limit(&self, theta: &Theta) -> Result<Vec<f64>> {
        let h = self.rule.generating_matrix(theta)?;
        match &self.immigration {
            Some(imm) if h.row_sum().iter().all(|&s| s < 0.0) => imu_limit(&imm.rates_at(theta)?, &h),
            _ => Ok(stationary_allocation(&h)?.v),
        }
    }

    fn apply(&mut self, arm: usize, response: Option<f64>, ctx: &Context<'_>) -> Result<()> {
        let row = self.rule.increments(arm, response, ctx)?;
        self.urn.add(&row);
        if let Some(log) = &mut self.log {
            log.push(UrnEvent::Increment { arm, row });
        }
        Ok(())
    }
}

impl Design for UrnDesign {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn n_arms(&self) -> usize {
        self.urn.n_arms()
    }

    fn family(&self) -> Option<Family> {
        self.rule.family()
    }

    fn probabilities(&self, ctx: &Context<'_>) -> Result<Vec<f64>> {
        match &self.immigration {
            Some(imm) => self.urn.effective_probabilities(&imm.rates(ctx)?),
            None => self.urn.selection_probabilities(),
        }
    }

    fn allocate(&mut self, ctx: &Context<'_>, rng: &mut StreamRng) -> Result<Allocation> {
        let rates = match &self.immigration {
            Some(imm) => imm.rates(ctx)?,
            None => Vec::new(),
        };
        let probabilities = if self.immigration.is_some() {
            self.urn.effective_probabilities(&rates)?
        } else {
            self.urn.selection_probabilities()?
        };
        let log = &mut self.log;
        let arm = draw_treatment(&mut self.urn, &rates, rng, &mut |a| {
            if let Some(log) = log {
                log.push(UrnEvent::Immigration(a.to_vec()));
            }
        })?;
        Ok(Allocation { arm, probabilities })
    }

    fn on_assignment(&mut self, arm: usize, ctx: &Context<'_>) -> Result<()> {
        if self.rule.timing() == Timing::AtAssignment {
            self.apply(arm, None, ctx)?;
        }
        Ok(())
    }

    fn on_response(&mut self, arm: usize, response: f64, ctx: &Context<'_>) -> Result<()> {
        if self.rule.timing() == Timing::AtResponse {
            self.apply(arm, Some(response), ctx)?;
        }
        Ok(())
    }
}
