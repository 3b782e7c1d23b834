//! Target allocations `rho(theta)`, their gradients and the efficiency
//! lower bound.
//!
//! Gradients are `d x K` matrices: row `j` is the flat parameter component,
//! column `k` the arm, matching the layout of [`Theta`].

mod optimize;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::models::{fisher_information, Family, Theta};

pub use optimize::{optimal_allocation_multiarm, OptimalAllocation, OptimizerOptions};

/// Default floor applied to targets before a design uses them.
pub const DEFAULT_FLOOR: f64 = 0.01;

/// Step for central-difference gradients.
pub const FD_STEP: f64 = 1e-5;

pub trait Target: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    /// Family the target is defined for; `None` accepts any.
    fn family(&self) -> Option<Family>;

    /// Fixed arm count, if the target only exists for one.
    fn n_arms(&self) -> Option<usize> {
        None
    }

    /// Unclamped target proportions.
    fn rho(&self, theta: &Theta) -> Result<Vec<f64>>;

    /// `d rho / d theta` as a `d x K` matrix.
    fn gradient(&self, theta: &Theta) -> Result<DMatrix<f64>> {
        central_difference(self, theta, FD_STEP)
    }
}

/// Central-difference gradient of any target.
pub fn central_difference<T: Target + ?Sized>(target: &T, theta: &Theta, h: f64) -> Result<DMatrix<f64>> {
    let k = theta.n_arms();
    let d = theta.values().len();
    let mut grad = DMatrix::zeros(d, k);
    for j in 0..d {
        let x = theta.values()[j];
        let step = h * x.abs().max(1.0);
        let up = target.rho(&theta.with_component(j, x + step))?;
        let down = target.rho(&theta.with_component(j, x - step))?;
        for a in 0..k {
            grad[(j, a)] = (up[a] - down[a]) / (2.0 * step);
        }
    }
    Ok(grad)
}

fn check_shape(target: &dyn Target, theta: &Theta) -> Result<()> {
    if let Some(f) = target.family() {
        if f != theta.family() {
            return Err(Error::param(format!("{} target needs a {f} model, got {}", target.name(), theta.family())));
        }
    }
    if let Some(k) = target.n_arms() {
        if theta.n_arms() != k {
            return Err(Error::Unsupported(format!("{} target is defined for K={k}, got K={}", target.name(), theta.n_arms())));
        }
    }
    if theta.n_arms() < 2 {
        return Err(Error::param("targets need at least two arms"));
    }
    Ok(())
}

fn open_unit(p: f64, what: &str) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("{what} = {p} must lie in (0,1)")))
    }
}

fn positive(x: f64, what: &str) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("{what} = {x} must be positive")))
    }
}

// ---------------------------------------------------------------------------
// closed forms

/// Limiting allocation of the play-the-winner family: `rho_k ∝ 1/q_k`.
pub fn urn_target(q: &[f64]) -> Result<Vec<f64>> {
    if q.len() < 2 {
        return Err(Error::param("urn target needs at least two arms"));
    }
    for &qk in q {
        open_unit(qk, "failure rate")?;
    }
    let total: f64 = q.iter().map(|x| 1.0 / x).sum();
    Ok(q.iter().map(|x| (1.0 / x) / total).collect())
}

/// Neyman allocation for arm 1 from the two standard deviations.
pub fn neyman_target(sd1: f64, sd2: f64) -> Result<f64> {
    positive(sd1, "sigma_1")?;
    positive(sd2, "sigma_2")?;
    Ok(sd1 / (sd1 + sd2))
}

/// Neyman allocation for binary outcomes: `sqrt(p1 q1) / (sqrt(p1 q1) + sqrt(p2 q2))`.
pub fn neyman_binary(p1: f64, p2: f64) -> Result<f64> {
    open_unit(p1, "p_1")?;
    open_unit(p2, "p_2")?;
    neyman_target((p1 * (1.0 - p1)).sqrt(), (p2 * (1.0 - p2)).sqrt())
}

/// Allocation minimising expected failures at fixed Wald variance.
pub fn rsihr_target(p1: f64, p2: f64) -> Result<f64> {
    open_unit(p1, "p_1")?;
    open_unit(p2, "p_2")?;
    Ok(p1.sqrt() / (p1.sqrt() + p2.sqrt()))
}

/// Normal allocation minimising the mean total response at fixed power;
/// requires positive means.
pub fn zr_normal_target(mu: [f64; 2], sd: [f64; 2]) -> Result<f64> {
    positive(mu[0], "mu_1")?;
    positive(mu[1], "mu_2")?;
    positive(sd[0], "sigma_1")?;
    positive(sd[1], "sigma_2")?;
    let a = mu[1].sqrt() * sd[0];
    let b = mu[0].sqrt() * sd[1];
    Ok(a / (a + b))
}

/// Which second-denominator scale the Biswas–Mandal allocation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BmForm {
    /// `sigma_2` in the second term; `rho_1` and `rho_2` swap under relabeling.
    #[default]
    Symmetric,
    /// `sigma_1` in both terms, as it is commonly printed.
    AsPrinted,
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Allocation limiting the number of normal responses above `c`.
pub fn bm_target(mu: [f64; 2], sd: [f64; 2], c: f64, form: BmForm) -> Result<f64> {
    positive(sd[0], "sigma_1")?;
    positive(sd[1], "sigma_2")?;
    let w2 = std_normal_cdf((mu[1] - c) / sd[1]).sqrt();
    let w1 = std_normal_cdf((mu[0] - c) / sd[0]).sqrt();
    let second = match form {
        BmForm::Symmetric => sd[1],
        BmForm::AsPrinted => sd[0],
    };
    let a = w2 * sd[0];
    let b = w1 * second;
    if !(a + b > 0.0) {
        return Err(Error::Numerical("Biswas–Mandal weights underflowed".into()));
    }
    Ok(a / (a + b))
}

/// Minimiser of `u n1 + v n2` at fixed `sigma1^2/n1 + sigma2^2/n2`.
pub fn lagrange_two_arm(u: f64, v: f64, sd1: f64, sd2: f64) -> Result<f64> {
    positive(u, "u")?;
    positive(v, "v")?;
    positive(sd1, "sigma_1")?;
    positive(sd2, "sigma_2")?;
    let a = sd1 / u.sqrt();
    let b = sd2 / v.sqrt();
    Ok(a / (a + b))
}

// ---------------------------------------------------------------------------
// target objects

fn two_arm(rho1: f64) -> Vec<f64> {
    vec![rho1, 1.0 - rho1]
}

fn two_arm_gradient(d_rho1: &[f64]) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(d_rho1.len(), 2);
    for (j, &v) in d_rho1.iter().enumerate() {
        g[(j, 0)] = v;
        g[(j, 1)] = -v;
    }
    g
}

/// `rho_k ∝ 1/q_k` for Bernoulli arms, any `K`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UrnTarget;

impl Target for UrnTarget {
    fn name(&self) -> String {
        "urn".into()
    }
    fn family(&self) -> Option<Family> {
        Some(Family::Bernoulli)
    }
    fn rho(&self, theta: &Theta) -> Result<Vec<f64>> {
        check_shape(self, theta)?;
        let q: Vec<f64> = theta.values().iter().map(|p| 1.0 - p).collect();
        urn_target(&q)
    }
    fn gradient(&self, theta: &Theta) -> Result<DMatrix<f64>> {
        let rho = self.rho(theta)?;
        let w: Vec<f64> = theta.values().iter().map(|p| 1.0 / (1.0 - p)).collect();
        let total: f64 = w.iter().sum();
        let k = w.len();
        Ok(DMatrix::from_fn(k, k, |j, a| {
            let delta = if j == a { 1.0 } else { 0.0 };
            w[j] * w[j] * (delta - rho[a]) / total
        }))
    }
}

/// `rho_1 = sd_1 / (sd_1 + sd_2)` for any family.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeymanTarget;

impl NeymanTarget {
    fn sd_and_derivative(theta: &Theta, k: usize) -> (f64, Vec<f64>) {
        let a = theta.arm(k);
        match theta.family() {
            Family::Bernoulli => {
                let s = (a[0] * (1.0 - a[0])).sqrt();
                (s, vec![(1.0 - 2.0 * a[0]) / (2.0 * s)])
            }
            Family::Normal => {
                let s = a[1].sqrt();
                (s, vec![0.0, 0.5 / s])
            }
            Family::Exponential => (1.0 / a[0], vec![-1.0 / (a[0] * a[0])]),
        }
    }
}

impl Target for NeymanTarget {
    fn name(&self) -> String {
        "neyman".into()
    }
    fn family(&self) -> Option<Family> {
        None
    }
    fn n_arms(&self) -> Option<usize> {
        Some(2)
    }
    fn rho(&self, theta: &Theta) -> Result<Vec<f64>> {
        check_shape(self, theta)?;
        if theta.family() == Family::Bernoulli {
            let p = theta.values();
            return neyman_binary(p[0], p[1]).map(two_arm);
        }
        let (s1, _) = Self::sd_and_derivative(theta, 0);
        let (s2, _) = Self::sd_and_derivative(theta, 1);
        neyman_target(s1, s2).map(two_arm)
    }
    fn gradient(&self, theta: &Theta) -> Result<DMatrix<f64>> {
        self.rho(theta)?;
        let (s1, d1) = Self::sd_and_derivative(theta, 0);
        let (s2, d2) = Self::sd_and_derivative(theta, 1);
        let denom = (s1 + s2) * (s1 + s2);
        let d: Vec<f64> = d1.iter().map(|x| x * s2 / denom).chain(d2.iter().map(|x| -x * s1 / denom)).collect();
        Ok(two_arm_gradient(&d))
    }
}

/// `rho_1 = sqrt(p1) / (sqrt(p1) + sqrt(p2))`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RsihrTarget;

impl Target for RsihrTarget {
    fn name(&self) -> String {
        "rsihr".into()
    }
    fn family(&self) -> Option<Family> {
        Some(Family::Bernoulli)
    }
    fn n_arms(&self) -> Option<usize> {
        Some(2)
    }
    fn rho(&self, theta: &Theta) -> Result<Vec<f64>> {
        check_shape(self, theta)?;
        let p = theta.values();
        rsihr_target(p[0], p[1]).map(two_arm)
    }
    fn gradient(&self, theta: &Theta) -> Result<DMatrix<f64>> {
        self.rho(theta)?;
        let (r1, r2) = (theta.values()[0].sqrt(), theta.values()[1].sqrt());
        let denom = (r1 + r2) * (r1 + r2);
        Ok(two_arm_gradient(&[r2 / (2.0 * r1 * denom), -r1 / (2.0 * r2 * denom)]))
    }
}

/// Normal-response target `sqrt(mu2) s1 / (sqrt(mu2) s1 + sqrt(mu1) s2)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZhangRosenbergerTarget;

impl Target for ZhangRosenbergerTarget {
    fn name(&self) -> String {
        "zr".into()
    }
    fn family(&self) -> Option<Family> {
        Some(Family::Normal)
    }
    fn n_arms(&self) -> Option<usize> {
        Some(2)
    }
    fn rho(&self, theta: &Theta) -> Result<Vec<f64>> {
        check_shape(self, theta)?;
        let (a, b) = (theta.arm(0), theta.arm(1));
        zr_normal_target([a[0], b[0]], [a[1].sqrt(), b[1].sqrt()]).map(two_arm)
    }
    fn gradient(&self, theta: &Theta) -> Result<DMatrix<f64>> {
        self.rho(theta)?;
        let (m1, v1, m2, v2) = (theta.arm(0)[0], theta.arm(0)[1], theta.arm(1)[0], theta.arm(1)[1]);
        let (s1, s2) = (v1.sqrt(), v2.sqrt());
        let a = m2.sqrt() * s1;
        let b = m1.sqrt() * s2;
        let denom = (a + b) * (a + b);
        let (da, db) = (b / denom, -a / denom);
        // flat order (mu1, v1, mu2, v2)
        Ok(two_arm_gradient(&[
            db * s2 / (2.0 * m1.sqrt()),
            da * m2.sqrt() / (2.0 * s1),
            da * s1 / (2.0 * m2.sqrt()),
            db * m1.sqrt() / (2.0 * s2),
        ]))
    }
}

/// Biswas–Mandal normal target with threshold `c`.
#[derive(Debug, Clone, Copy)]
pub struct BiswasMandalTarget {
    pub c: f64,
    pub form: BmForm,
}

impl Target for BiswasMandalTarget {
    fn name(&self) -> String {
        "bm".into()
    }
    fn family(&self) -> Option<Family> {
        Some(Family::Normal)
    }
    fn n_arms(&self) -> Option<usize> {
        Some(2)
    }
    fn rho(&self, theta: &Theta) -> Result<Vec<f64>> {
        check_shape(self, theta)?;
        let (a, b) = (theta.arm(0), theta.arm(1));
        bm_target([a[0], b[0]], [a[1].sqrt(), b[1].sqrt()], self.c, self.form).map(two_arm)
    }
}

/// Two-arm normal Lagrange solution with constant cost weights `u`, `v`.
#[derive(Debug, Clone, Copy)]
pub struct LagrangeTarget {
    pub u: f64,
    pub v: f64,
}

impl Target for LagrangeTarget {
    fn name(&self) -> String {
        "lagrange".into()
    }
    fn family(&self) -> Option<Family> {
        Some(Family::Normal)
    }
    fn n_arms(&self) -> Option<usize> {
        Some(2)
    }
    fn rho(&self, theta: &Theta) -> Result<Vec<f64>> {
        check_shape(self, theta)?;
        lagrange_two_arm(self.u, self.v, theta.arm(0)[1].sqrt(), theta.arm(1)[1].sqrt()).map(two_arm)
    }
}

/// A target that ignores the parameters.
#[derive(Debug, Clone)]
pub struct FixedTarget {
    rho: Vec<f64>,
}

impl FixedTarget {
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        if rho.len() < 2 || rho.iter().any(|&r| !(0.0..=1.0).contains(&r)) || (rho.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::param(format!("{rho:?} is not a probability vector")));
        }
        Ok(FixedTarget { rho })
    }

    pub fn balanced(k: usize) -> Self {
        FixedTarget { rho: vec![1.0 / k as f64; k] }
    }
}

impl Target for FixedTarget {
    fn name(&self) -> String {
        "fixed".into()
    }
    fn family(&self) -> Option<Family> {
        None
    }
    fn n_arms(&self) -> Option<usize> {
        Some(self.rho.len())
    }
    fn rho(&self, theta: &Theta) -> Result<Vec<f64>> {
        check_shape(self, theta)?;
        Ok(self.rho.clone())
    }
    fn gradient(&self, theta: &Theta) -> Result<DMatrix<f64>> {
        check_shape(self, theta)?;
        Ok(DMatrix::zeros(theta.values().len(), self.rho.len()))
    }
}

// ---------------------------------------------------------------------------
// clamping

/// Push every component up to `floor` and shrink the excess of the others
/// proportionally. Identity when all components already clear the floor;
/// the order of components is preserved.
pub fn clamp_to_floor(rho: &[f64], floor: f64) -> Vec<f64> {
    let k = rho.len() as f64;
    if floor <= 0.0 || floor * k >= 1.0 {
        return rho.to_vec();
    }
    if rho.iter().all(|&r| r >= floor) {
        return rho.to_vec();
    }
    let excess: Vec<f64> = rho.iter().map(|&r| (r - floor).max(0.0)).collect();
    let total: f64 = excess.iter().sum();
    let room = 1.0 - k * floor;
    excess.iter().map(|e| floor + room * e / total).collect()
}

/// A target together with the floor used when a design consumes it.
#[derive(Debug, Clone)]
pub struct TargetAllocation {
    target: Arc<dyn Target>,
    floor: f64,
}

impl TargetAllocation {
    pub fn new(target: Arc<dyn Target>) -> Self {
        TargetAllocation { target, floor: DEFAULT_FLOOR }
    }

    pub fn with_floor(mut self, floor: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&floor) {
            return Err(Error::param(format!("floor {floor} must lie in [0, 0.5)")));
        }
        self.floor = floor;
        Ok(self)
    }

    pub fn target(&self) -> &dyn Target {
        self.target.as_ref()
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Clamped proportions.
    pub fn evaluate(&self, theta: &Theta) -> Result<Vec<f64>> {
        Ok(clamp_to_floor(&self.target.rho(theta)?, self.floor))
    }
}

// ---------------------------------------------------------------------------
// lower bound

/// `Sigma_LB = (d rho/d theta)' diag(I_k^{-1} / rho_k) (d rho/d theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerBound {
    pub matrix: DMatrix<f64>,
}

impl LowerBound {
    /// `sigma^2_LB` for arm 1 (the `(0,0)` entry).
    pub fn scalar(&self) -> f64 {
        self.matrix[(0, 0)]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (&self.matrix + self.matrix.transpose()) * 0.5;
        SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }
}

pub fn sigma_lb(target: &dyn Target, theta: &Theta) -> Result<LowerBound> {
    let rho = target.rho(theta)?;
    if let Some(k) = rho.iter().position(|&r| r <= 0.0) {
        return Err(Error::param(format!("rho_{} = 0; the lower bound needs positive proportions", k + 1)));
    }
    let grad = target.gradient(theta)?;
    let d = theta.family().dim();
    let dim = theta.values().len();
    let mut weight = DMatrix::zeros(dim, dim);
    for (k, &r) in rho.iter().enumerate() {
        let info = fisher_information(theta.family(), theta.arm(k))?;
        let inv = info
            .try_inverse()
            .ok_or_else(|| Error::Numerical(format!("singular Fisher information for arm {}", k + 1)))?;
        weight.view_mut((k * d, k * d), (d, d)).copy_from(&(inv / r));
    }
    Ok(LowerBound { matrix: grad.transpose() * weight * grad })
}
