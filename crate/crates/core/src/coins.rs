//! Estimator-driven allocation rules.
//!
//! Each rule maps the current allocation proportions `x = N_m/m` and the
//! estimated target `y = rho(theta_hat_m)` to the next probability vector.

use statrs::function::gamma::ln_gamma;

use crate::engine::{Context, Design};
use crate::error::{Error, Result};
use crate::models::Family;
use crate::targets::TargetAllocation;

/// Default DBCD randomness parameter.
pub const DEFAULT_GAMMA: f64 = 2.0;
/// Default ERADE biasing constant.
pub const DEFAULT_ALPHA: f64 = 0.5;
/// `|N_m/m - rho_hat| below this counts as on target.
pub const ERADE_TIE: f64 = 1e-12;

/// Sequential maximum likelihood procedure: `p = rho(theta_hat)`.
pub fn smlp_prob(y: &[f64]) -> Vec<f64> {
    y.to_vec()
}

fn check_simplex(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !(0.0..=1.0).contains(x)) || (v.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!("{name} {v:?} is not a probability vector")));
    }
    Ok(())
}

fn normalize(mut w: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numerical(format!("allocation weights {w:?} cannot be normalized")));
    }
    for x in &mut w {
        *x /= total;
    }
    Ok(w)
}

/// `g_k = y_k (y_k/x_k)^gamma / sum_j y_j (y_j/x_j)^gamma`.
pub fn dbcd_prob(x: &[f64], y: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::param("proportions and target must have the same length (at least 2)"));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::param(format!("gamma must be nonnegative, got {gamma}")));
    }
    check_simplex("target", y)?;
    if gamma == 0.0 {
        return Ok(smlp_prob(y));
    }
    if let Some(arm) = x.iter().position(|&xk| !(xk > 0.0)) {
        return Err(Error::ZeroAllocation { arm });
    }
    // scale by the largest weight so that large gamma cannot overflow
    let logs: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(&xk, &yk)| if yk > 0.0 { yk.ln() + gamma * (yk / xk).ln() } else { f64::NEG_INFINITY })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    normalize(logs.iter().map(|l| (l - top).exp()).collect())
}

/// Two-arm ERADE: the probability of arm 1.
pub fn erade_prob(x1: f64, rho1: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if !(0.0..=1.0).contains(&rho1) || !(0.0..=1.0).contains(&x1) {
        return Err(Error::param("proportion and target must lie in [0, 1]"));
    }
    Ok(if (x1 - rho1).abs() <= ERADE_TIE {
        rho1
    } else if x1 > rho1 {
        alpha * rho1
    } else {
        1.0 - alpha * (1.0 - rho1)
    })
}

/// `psi(t) = 1 + sqrt(max(t^(2 gamma) - 1, 0))`.
pub fn erade_weight(t: f64, gamma: f64) -> f64 {
    1.0 + (t.powf(2.0 * gamma) - 1.0).max(0.0).sqrt()
}

/// Multi-arm smoothed ERADE: `g_k ∝ y_k psi(y_k / x_k)`.
pub fn smoothed_erade_prob(x: &[f64], y: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::param("proportions and target must have the same length (at least 2)"));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::param(format!("gamma must be nonnegative, got {gamma}")));
    }
    check_simplex("target", y)?;
    if let Some(arm) = x.iter().position(|&xk| !(xk > 0.0)) {
        return Err(Error::ZeroAllocation { arm });
    }
    normalize(x.iter().zip(y).map(|(&xk, &yk)| yk * erade_weight(yk / xk, gamma)).collect())
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Posterior probability that `p_1 > p_2` under independent uniform priors,
/// given `s_k` successes in `n_k` trials on arm `k`.
pub fn thompson_posterior(s1: u64, s2: u64, n1: u64, n2: u64) -> Result<f64> {
    if s1 > n1 || s2 > n2 {
        return Err(Error::param(format!("successes exceed trials: ({s1}, {s2}) of ({n1}, {n2})")));
    }
    if s1 == s2 && n1 == n2 {
        // exchangeable posteriors
        return Ok(0.5);
    }
    let (f1, f2) = (n1 - s1, n2 - s2);
    let denominator = ln_choose(n1 + n2 + 2, n2 + 1);
    let terms: Vec<f64> = (0..=s1)
        .map(|a| ln_choose(s1 + s2 - a, s2) + ln_choose(f1 + f2 + 1 + a, f2) - denominator)
        .collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let value = top.exp() * terms.iter().map(|t| (t - top).exp()).sum::<f64>();
    Ok(value.clamp(0.0, 1.0))
}

/// `P^c / (P^c + (1 - P)^c)`.
pub fn thall_wathen_prob(p: f64, c: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param(format!("posterior probability {p} outside [0, 1]")));
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::param(format!("exponent must be nonnegative, got {c}")));
    }
    if c == 0.0 {
        return Ok(0.5);
    }
    let (a, b) = (p.powf(c), (1.0 - p).powf(c));
    Ok(a / (a + b))
}

fn target_family(target: &TargetAllocation) -> Option<Family> {
    target.target().family()
}

fn check_target_arms(target: &TargetAllocation, k: usize) -> Result<()> {
    match target.target().n_arms() {
        Some(t) if t != k => Err(Error::param(format!("target has {t} arms, design has {k}"))),
        _ => Ok(()),
    }
}

/// Doubly adaptive biased coin; `gamma = 0` is the SMLP.
#[derive(Debug, Clone)]
pub struct Dbcd {
    target: TargetAllocation,
    gamma: f64,
    k: usize,
}

impl Dbcd {
    pub fn new(target: TargetAllocation, gamma: f64, k: usize) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::param(format!("gamma must be nonnegative, got {gamma}")));
        }
        if k < 2 {
            return Err(Error::param("DBCD needs at least two arms"));
        }
        check_target_arms(&target, k)?;
        Ok(Dbcd { target, gamma, k })
    }

    pub fn smlp(target: TargetAllocation, k: usize) -> Result<Self> {
        Self::new(target, 0.0, k)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Design for Dbcd {
    fn name(&self) -> String {
        if self.gamma == 0.0 {
            format!("smlp({})", self.target.target().name())
        } else {
            format!("dbcd(gamma={}, {})", self.gamma, self.target.target().name())
        }
    }

    fn n_arms(&self) -> usize {
        self.k
    }

    fn family(&self) -> Option<Family> {
        target_family(&self.target)
    }

    fn probabilities(&self, ctx: &Context<'_>) -> Result<Vec<f64>> {
        let y = self.target.evaluate(&ctx.estimate())?;
        if self.gamma == 0.0 {
            return Ok(smlp_prob(&y));
        }
        let x = ctx.proportions().ok_or(Error::ZeroAllocation { arm: 0 })?;
        dbcd_prob(&x, &y, self.gamma)
    }
}

/// Two-arm ERADE.
#[derive(Debug, Clone)]
pub struct Erade {
    target: TargetAllocation,
    alpha: f64,
}

impl Erade {
    pub fn new(target: TargetAllocation, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::param(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        check_target_arms(&target, 2)?;
        Ok(Erade { target, alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl Design for Erade {
    fn name(&self) -> String {
        format!("erade(alpha={}, {})", self.alpha, self.target.target().name())
    }

    fn n_arms(&self) -> usize {
        2
    }

    fn family(&self) -> Option<Family> {
        target_family(&self.target)
    }

    fn probabilities(&self, ctx: &Context<'_>) -> Result<Vec<f64>> {
        let y = self.target.evaluate(&ctx.estimate())?;
        let x = ctx.proportions().ok_or(Error::ZeroAllocation { arm: 0 })?;
        let p1 = erade_prob(x[0], y[0], self.alpha)?;
        Ok(vec![p1, 1.0 - p1])
    }
}

/// Multi-arm ERADE with the continuous weight `psi`.
#[derive(Debug, Clone)]
pub struct SmoothedErade {
    target: TargetAllocation,
    gamma: f64,
    k: usize,
}

impl SmoothedErade {
    pub fn new(target: TargetAllocation, gamma: f64, k: usize) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::param(format!("gamma must be nonnegative, got {gamma}")));
        }
        if k < 2 {
            return Err(Error::param("ERADE needs at least two arms"));
        }
        check_target_arms(&target, k)?;
        Ok(SmoothedErade { target, gamma, k })
    }
}

impl Design for SmoothedErade {
    fn name(&self) -> String {
        format!("smoothed-erade(gamma={}, {})", self.gamma, self.target.target().name())
    }

    fn n_arms(&self) -> usize {
        self.k
    }

    fn family(&self) -> Option<Family> {
        target_family(&self.target)
    }

    fn probabilities(&self, ctx: &Context<'_>) -> Result<Vec<f64>> {
        let y = self.target.evaluate(&ctx.estimate())?;
        let x = ctx.proportions().ok_or(Error::ZeroAllocation { arm: 0 })?;
        smoothed_erade_prob(&x, &y, self.gamma)
    }
}

/// Thompson's posterior probability tempered by `c = m / (2n)`. Binary
/// outcomes, two arms; uses observed responses only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThallWathen {
    horizon: usize,
}

impl ThallWathen {
    pub fn new(horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::param("Thall-Wathen needs the planned sample size"));
        }
        Ok(ThallWathen { horizon })
    }
}

impl Design for ThallWathen {
    fn name(&self) -> String {
        format!("thall-wathen(n={})", self.horizon)
    }

    fn n_arms(&self) -> usize {
        2
    }

    fn family(&self) -> Option<Family> {
        Some(Family::Bernoulli)
    }

    fn probabilities(&self, ctx: &Context<'_>) -> Result<Vec<f64>> {
        let o = ctx.observed;
        let successes = |k: usize| o.sums[k].round() as u64;
        let p = thompson_posterior(successes(0), successes(1), o.counts[0] as u64, o.counts[1] as u64)?;
        let c = (ctx.counts[0] + ctx.counts[1]) as f64 / (2 * self.horizon) as f64;
        let p1 = thall_wathen_prob(p, c)?;
        Ok(vec![p1, 1.0 - p1])
    }
}

/// Deterministic play-the-winner: stay after a success, move to the next
/// arm after a failure. Before any response the arms are equally likely.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayTheWinner {
    k: usize,
    last: Option<(usize, bool)>,
}

impl PlayTheWinner {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::param("play-the-winner needs at least two arms"));
        }
        Ok(PlayTheWinner { k, last: None })
    }
}

impl Design for PlayTheWinner {
    fn name(&self) -> String {
        "play-the-winner".into()
    }

    fn n_arms(&self) -> usize {
        self.k
    }

    fn family(&self) -> Option<Family> {
        Some(Family::Bernoulli)
    }

    fn probabilities(&self, _: &Context<'_>) -> Result<Vec<f64>> {
        let mut p = vec![0.0; self.k];
        match self.last {
            None => p.fill(1.0 / self.k as f64),
            Some((arm, true)) => p[arm] = 1.0,
            Some((arm, false)) => p[(arm + 1) % self.k] = 1.0,
        }
        Ok(p)
    }

    fn on_response(&mut self, arm: usize, response: f64, _: &Context<'_>) -> Result<()> {
        self.last = Some((arm, response != 0.0));
        Ok(())
    }
}

/// Equal probabilities, ignoring everything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompleteRandomization {
    k: usize,
}

impl CompleteRandomization {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::param("complete randomization needs at least two arms"));
        }
        Ok(CompleteRandomization { k })
    }
}

impl Design for CompleteRandomization {
    fn name(&self) -> String {
        "complete-randomization".into()
    }

    fn n_arms(&self) -> usize {
        self.k
    }

    fn probabilities(&self, _: &Context<'_>) -> Result<Vec<f64>> {
        Ok(vec![1.0 / self.k as f64; self.k])
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::engine::{run_trial, TrialSetup, WarmStart};
    use crate::models::{ResponseModel, Theta};
    use crate::rng::SeedTree;
    use crate::targets::{urn_target, UrnTarget};

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn smlp_is_the_estimated_target() {
        assert_eq!(smlp_prob(&[0.5, 0.5]), vec![0.5, 0.5]);
        let y = urn_target(&[0.3, 0.6]).unwrap();
        assert!(close(&smlp_prob(&y), &[2.0 / 3.0, 1.0 / 3.0], 1e-15));
        let x = [0.8, 0.2];
        assert_eq!(dbcd_prob(&x, &y, 0.0).unwrap(), smlp_prob(&y));
    }

    #[test]
    fn dbcd_values() {
        let y = [0.3, 0.5, 0.2];
        assert!(close(&dbcd_prob(&y, &y, 3.0).unwrap(), &y, 1e-15));
        let g = dbcd_prob(&[0.6, 0.4], &[0.5, 0.5], 2.0).unwrap();
        let (a, b) = (0.5 * (5.0f64 / 6.0).powi(2), 0.5 * 1.25f64.powi(2));
        assert!(close(&g, &[a / (a + b), b / (a + b)], 1e-15));
        assert!((g[0] - 0.307692).abs() < 5e-7);
        assert!(matches!(dbcd_prob(&[0.0, 1.0], &[0.5, 0.5], 1.0), Err(Error::ZeroAllocation { arm: 0 })));
        // a huge gamma stays finite
        let g = dbcd_prob(&[0.4, 0.6], &[0.5, 0.5], 1e4).unwrap();
        assert!(g[0] > 0.999_999 && g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn erade_branches() {
        for alpha in [0.0, 0.3, 0.9] {
            assert_eq!(erade_prob(0.5, 0.5, alpha).unwrap(), 0.5);
        }
        assert!((erade_prob(0.7, 0.6, 0.5).unwrap() - 0.3).abs() < 1e-15);
        assert!((erade_prob(0.4, 0.6, 0.5).unwrap() - 0.8).abs() < 1e-15);
        for x in [0.1, 0.6, 0.9] {
            assert!((erade_prob(x, 0.35, 1.0).unwrap() - 0.35).abs() < 1e-15);
        }
        assert!(erade_prob(0.5, 0.5, 1.5).is_err());
    }

    #[test]
    fn smoothed_erade_values() {
        let y = [0.25, 0.25, 0.5];
        assert!(close(&smoothed_erade_prob(&y, &y, 1.0).unwrap(), &y, 1e-15));
        let third = 1.0 / 3.0;
        let g = smoothed_erade_prob(&[0.5, 0.3, 0.2], &[third; 3], 1.0).unwrap();
        let w = [1.0, 1.0 + ((10.0f64 / 9.0).powi(2) - 1.0).sqrt(), 1.0 + ((5.0f64 / 3.0).powi(2) - 1.0).sqrt()];
        let s: f64 = w.iter().sum();
        assert!(close(&g, &[w[0] / s, w[1] / s, w[2] / s], 1e-15));
        assert!(close(&g, &[0.207570, 0.308101, 0.484330], 5e-7), "{g:?}");
        assert_eq!(erade_weight(0.7, 2.0), 1.0);
        assert!(erade_weight(1.3, 2.0) > 1.0);
    }

    #[test]
    fn thompson_values() {
        assert_eq!(thompson_posterior(0, 0, 0, 0).unwrap(), 0.5);
        let p = thompson_posterior(3, 1, 4, 4).unwrap();
        assert!((p - 0.896825396825397).abs() < 1e-12);
        let q = thompson_posterior(1, 3, 4, 4).unwrap();
        assert!((p + q - 1.0).abs() < 1e-12);
        assert!(thompson_posterior(5, 0, 4, 0).is_err());
        // large counts stay finite
        let big = thompson_posterior(600, 500, 1000, 1000).unwrap();
        assert!((big - 0.999_996_539_773_306_6).abs() < 1e-11, "{big}");
    }

    #[test]
    fn thall_wathen_values() {
        for c in [0.0, 0.3, 1.0, 2.0] {
            assert_eq!(thall_wathen_prob(0.5, c).unwrap(), 0.5);
        }
        assert!((thall_wathen_prob(0.8, 1.0).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(thall_wathen_prob(0.9, 0.0).unwrap(), 0.5);
        let v = thall_wathen_prob(0.9, 0.5).unwrap();
        assert!((v - 0.75).abs() < 1e-12);
    }

    #[test]
    fn play_the_winner_stays_on_success() {
        let model = ResponseModel::bernoulli_closed(&[1.0, 0.0]).unwrap();
        let setup = TrialSetup::new(50).warm(WarmStart::BayesShrinkage);
        let mut d = PlayTheWinner::new(2).unwrap();
        let s = run_trial(&mut d, &model, &setup, SeedTree::new(3)).unwrap();
        let first_one = s.assignments().iter().position(|&a| a == 0).unwrap();
        assert!(s.assignments()[first_one..].iter().all(|&a| a == 0));
        for j in 1..s.step() {
            let prev = s.assignments()[j - 1];
            let won = s.responses()[j - 1] == 1.0;
            let expected = if won { prev } else { 1 - prev };
            assert_eq!(s.assignments()[j], expected);
        }
    }

    #[test]
    fn designs_run() {
        let model = ResponseModel::new(Theta::bernoulli(&[0.7, 0.4]).unwrap()).unwrap();
        let target = TargetAllocation::new(Arc::new(UrnTarget));
        let setup = TrialSetup::new(400);
        let designs: Vec<Box<dyn Design>> = vec![
            Box::new(Dbcd::new(target.clone(), 2.0, 2).unwrap()),
            Box::new(Dbcd::smlp(target.clone(), 2).unwrap()),
            Box::new(Erade::new(target.clone(), 0.5).unwrap()),
            Box::new(SmoothedErade::new(target, 2.0, 2).unwrap()),
            Box::new(ThallWathen::new(400).unwrap()),
            Box::new(CompleteRandomization::new(2).unwrap()),
        ];
        for mut d in designs {
            let s = run_trial(d.as_mut(), &model, &setup, SeedTree::new(8)).unwrap();
            assert!(s.is_consistent(), "{}", d.name());
        }
    }
}
