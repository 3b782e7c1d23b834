//! Response distributions, estimators and per-observation Fisher information.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to estimated normal variances.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Clip applied to raw Bernoulli MLEs so that targets stay finite.
const MLE_CLIP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Success probability `p`.
    Bernoulli,
    /// Mean and variance `(mu, sigma^2)`.
    Normal,
    /// Rate `lambda` (mean `1/lambda`).
    Exponential,
}

impl Family {
    /// Number of parameters per arm.
    pub fn dim(self) -> usize {
        match self {
            Family::Normal => 2,
            Family::Bernoulli | Family::Exponential => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Bernoulli => "bernoulli",
            Family::Normal => "normal",
            Family::Exponential => "exponential",
        }
    }

    /// Parameters used for an arm before it has any data.
    fn prior_center(self) -> &'static [f64] {
        match self {
            Family::Bernoulli => &[0.5],
            Family::Normal => &[0.0, 1.0],
            Family::Exponential => &[1.0],
        }
    }

    fn check_arm(self, params: &[f64]) -> Result<()> {
        if params.len() != self.dim() {
            return Err(Error::param(format!(
                "{} arm needs {} parameter(s), got {}",
                self.name(),
                self.dim(),
                params.len()
            )));
        }
        let ok = match self {
            Family::Bernoulli => params[0] > 0.0 && params[0] < 1.0,
            Family::Normal => params[0].is_finite() && params[1] > 0.0 && params[1].is_finite(),
            Family::Exponential => params[0] > 0.0 && params[0].is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!(
                "{} parameters {:?} outside the open parameter space",
                self.name(),
                params
            )))
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bernoulli" | "binary" => Ok(Family::Bernoulli),
            "normal" | "gaussian" => Ok(Family::Normal),
            "exponential" => Ok(Family::Exponential),
            other => Err(Error::param(format!("unknown family `{other}`"))),
        }
    }
}

/// Parameters of all arms, flattened arm-major: `[theta_1 .., theta_2 .., ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    family: Family,
    values: Vec<f64>,
}

impl Theta {
    /// Validated constructor: every arm must lie in the open parameter space.
    pub fn new(family: Family, values: Vec<f64>) -> Result<Self> {
        let theta = Theta::unchecked(family, values)?;
        for k in 0..theta.n_arms() {
            family.check_arm(theta.arm(k))?;
        }
        Ok(theta)
    }

    /// Only checks the shape. Used for estimates and perturbed points.
    pub fn unchecked(family: Family, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() % family.dim() != 0 {
            return Err(Error::param(format!(
                "{} values do not split into {}-parameter arms",
                values.len(),
                family.dim()
            )));
        }
        Ok(Theta { family, values })
    }

    pub fn bernoulli(p: &[f64]) -> Result<Self> {
        Theta::new(Family::Bernoulli, p.to_vec())
    }

    pub fn normal(means: &[f64], variances: &[f64]) -> Result<Self> {
        if means.len() != variances.len() {
            return Err(Error::param("means and variances differ in length"));
        }
        let values = means.iter().zip(variances).flat_map(|(&m, &v)| [m, v]).collect();
        Theta::new(Family::Normal, values)
    }

    pub fn exponential(rates: &[f64]) -> Result<Self> {
        Theta::new(Family::Exponential, rates.to_vec())
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n_arms(&self) -> usize {
        self.values.len() / self.family.dim()
    }

    pub fn arm(&self, k: usize) -> &[f64] {
        let d = self.family.dim();
        &self.values[k * d..(k + 1) * d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Copy with flat component `j` replaced.
    pub fn with_component(&self, j: usize, value: f64) -> Theta {
        let mut values = self.values.clone();
        values[j] = value;
        Theta { family: self.family, values }
    }

    /// Per-arm outcome mean.
    pub fn mean(&self, k: usize) -> f64 {
        let a = self.arm(k);
        match self.family {
            Family::Bernoulli | Family::Normal => a[0],
            Family::Exponential => 1.0 / a[0],
        }
    }

    /// Per-arm outcome variance.
    pub fn variance(&self, k: usize) -> f64 {
        let a = self.arm(k);
        match self.family {
            Family::Bernoulli => a[0] * (1.0 - a[0]),
            Family::Normal => a[1],
            Family::Exponential => 1.0 / (a[0] * a[0]),
        }
    }

    /// Success probabilities; errors unless Bernoulli.
    pub fn success_probabilities(&self) -> Result<&[f64]> {
        match self.family {
            Family::Bernoulli => Ok(&self.values),
            f => Err(Error::Unsupported(format!("success probabilities of a {f} model"))),
        }
    }
}

/// Fisher information of a single observation for one arm.
///
/// Bernoulli `1/(pq)`; normal `diag(1/s2, 1/(2 s2^2))` in `(mu, s2)`;
/// exponential rate `1/lambda^2`.
pub fn fisher_information(family: Family, params: &[f64]) -> Result<DMatrix<f64>> {
    family.check_arm(params)?;
    Ok(match family {
        Family::Bernoulli => {
            let p = params[0];
            DMatrix::from_element(1, 1, 1.0 / (p * (1.0 - p)))
        }
        Family::Normal => {
            let v = params[1];
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0 / v, 0.5 / (v * v)]))
        }
        Family::Exponential => DMatrix::from_element(1, 1, 1.0 / (params[0] * params[0])),
    })
}

/// Log-density (or log-mass) of one observation; used to cross-check the
/// information matrices.
pub fn log_likelihood(family: Family, params: &[f64], x: f64) -> f64 {
    match family {
        Family::Bernoulli => {
            let p = params[0];
            x * p.ln() + (1.0 - x) * (1.0 - p).ln()
        }
        Family::Normal => {
            let (m, v) = (params[0], params[1]);
            -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (x - m) * (x - m) / (2.0 * v)
        }
        Family::Exponential => {
            let l = params[0];
            l.ln() - l * x
        }
    }
}

/// Draw one outcome from an arm. Bernoulli outcomes are `0.0`/`1.0`.
pub fn sample<R: Rng + ?Sized>(family: Family, params: &[f64], rng: &mut R) -> f64 {
    match family {
        Family::Bernoulli => {
            if rng.random::<f64>() < params[0] {
                1.0
            } else {
                0.0
            }
        }
        Family::Normal => Normal::new(params[0], params[1].sqrt())
            .expect("validated normal parameters")
            .sample(rng),
        Family::Exponential => Exp::new(params[0]).expect("validated rate").sample(rng),
    }
}

/// True outcome distributions of all arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseModel {
    theta: Theta,
}

impl ResponseModel {
    pub fn new(theta: Theta) -> Result<Self> {
        let theta = Theta::new(theta.family, theta.values)?;
        Ok(ResponseModel { theta })
    }

    /// Bernoulli model that also admits the degenerate `p = 0` and `p = 1`.
    pub fn bernoulli_closed(p: &[f64]) -> Result<Self> {
        if p.is_empty() || p.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::param(format!("success probabilities {p:?} outside [0,1]")));
        }
        Ok(ResponseModel { theta: Theta { family: Family::Bernoulli, values: p.to_vec() } })
    }

    pub fn theta(&self) -> &Theta {
        &self.theta
    }

    pub fn family(&self) -> Family {
        self.theta.family
    }

    pub fn n_arms(&self) -> usize {
        self.theta.n_arms()
    }

    pub fn sample<R: Rng + ?Sized>(&self, arm: usize, rng: &mut R) -> f64 {
        sample(self.theta.family, self.theta.arm(arm), rng)
    }
}

/// Sufficient statistics per arm: count, sum, sum of squares.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimatorState {
    pub counts: Vec<usize>,
    pub sums: Vec<f64>,
    pub sums_sq: Vec<f64>,
}

impl EstimatorState {
    pub fn new(n_arms: usize) -> Self {
        EstimatorState { counts: vec![0; n_arms], sums: vec![0.0; n_arms], sums_sq: vec![0.0; n_arms] }
    }

    pub fn n_arms(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, arm: usize, x: f64) {
        self.counts[arm] += 1;
        self.sums[arm] += x;
        self.sums_sq[arm] += x * x;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    /// Bernoulli add-half shrinkage `(S + 1/2)/(N + 1)`.
    #[default]
    Shrinkage,
    /// Plain maximum likelihood (Bernoulli clipped away from 0 and 1).
    Mle,
}

/// Turns sufficient statistics into parameter estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    family: Family,
    mode: EstimatorMode,
    guess: Option<Theta>,
}

impl Estimator {
    pub fn new(family: Family) -> Self {
        Estimator { family, mode: EstimatorMode::Shrinkage, guess: None }
    }

    pub fn with_mode(mut self, mode: EstimatorMode) -> Self {
        self.mode = mode;
        self
    }

    /// Value returned for arms without data.
    pub fn with_guess(mut self, guess: Theta) -> Result<Self> {
        if guess.family != self.family {
            return Err(Error::param("guess family differs from estimator family"));
        }
        self.guess = Some(guess);
        Ok(self)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn estimate(&self, state: &EstimatorState) -> Theta {
        let d = self.family.dim();
        let mut values = Vec::with_capacity(state.n_arms() * d);
        for k in 0..state.n_arms() {
            let n = state.counts[k];
            let zero_data = || -> Vec<f64> {
                match &self.guess {
                    Some(g) if k < g.n_arms() => g.arm(k).to_vec(),
                    _ => self.family.prior_center().to_vec(),
                }
            };
            let (s, q) = (state.sums[k], state.sums_sq[k]);
            match self.family {
                Family::Bernoulli => {
                    if n == 0 {
                        values.extend(zero_data());
                    } else {
                        let p = match self.mode {
                            EstimatorMode::Shrinkage => (s + 0.5) / (n as f64 + 1.0),
                            EstimatorMode::Mle => (s / n as f64).clamp(MLE_CLIP, 1.0 - MLE_CLIP),
                        };
                        values.push(p);
                    }
                }
                Family::Normal => {
                    if n == 0 {
                        values.extend(zero_data());
                    } else {
                        let nf = n as f64;
                        let mean = s / nf;
                        let var = (q / nf - mean * mean).max(VARIANCE_FLOOR);
                        values.extend([mean, var]);
                    }
                }
                Family::Exponential => {
                    if n == 0 || s <= 0.0 {
                        values.extend(zero_data());
                    } else {
                        values.push(n as f64 / s);
                    }
                }
            }
        }
        Theta { family: self.family, values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state_from(family_k: usize, data: &[(usize, f64)]) -> EstimatorState {
        let mut s = EstimatorState::new(family_k);
        for &(k, x) in data {
            s.record(k, x);
        }
        s
    }

    #[test]
    fn bernoulli_shrinkage() {
        let est = Estimator::new(Family::Bernoulli);
        let empty = EstimatorState::new(2);
        assert_eq!(est.estimate(&empty).values(), &[0.5, 0.5]);

        let ten = state_from(2, &[(0, 1.0); 10]);
        let p = est.estimate(&ten).arm(0)[0];
        assert!((p - 10.5 / 11.0).abs() < 1e-15);
        assert!(p < 1.0);
    }

    #[test]
    fn normal_moments() {
        let est = Estimator::new(Family::Normal);
        let th = est.estimate(&state_from(1, &[(0, 1.0), (0, 3.0)]));
        assert_eq!(th.arm(0), &[2.0, 1.0]);
        // a single observation has zero spread and hits the floor
        let th = est.estimate(&state_from(1, &[(0, 5.0)]));
        assert_eq!(th.arm(0), &[5.0, VARIANCE_FLOOR]);
    }

    #[test]
    fn exponential_rate_and_guess() {
        let guess = Theta::exponential(&[3.0, 4.0]).unwrap();
        let est = Estimator::new(Family::Exponential).with_guess(guess).unwrap();
        let th = est.estimate(&state_from(2, &[(0, 0.5), (0, 1.5)]));
        assert_eq!(th.arm(0), &[1.0]);
        assert_eq!(th.arm(1), &[4.0]);
    }

    #[test]
    fn mle_mode_is_clipped() {
        let est = Estimator::new(Family::Bernoulli).with_mode(EstimatorMode::Mle);
        let th = est.estimate(&state_from(2, &[(0, 1.0), (1, 0.0)]));
        assert!(th.arm(0)[0] < 1.0 && th.arm(1)[0] > 0.0);
    }

    #[test]
    fn fisher_values() {
        assert_eq!(fisher_information(Family::Bernoulli, &[0.5]).unwrap()[(0, 0)], 4.0);
        let n = fisher_information(Family::Normal, &[0.0, 1.0]).unwrap();
        assert_eq!(n, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]));
        assert!(fisher_information(Family::Bernoulli, &[1.0]).is_err());
        assert!(fisher_information(Family::Normal, &[0.0, 0.0]).is_err());
        // pq is maximal at 1/2, so the information is minimal there
        let at = |p: f64| fisher_information(Family::Bernoulli, &[p]).unwrap()[(0, 0)];
        assert!(at(0.5) < at(0.49) && at(0.5) < at(0.51));
    }

    /// Expected negative Hessian of the log-likelihood by central
    /// differences, with the expectation taken exactly (Bernoulli) or by
    /// Monte Carlo-free moment identities (normal/exponential Hessians are
    /// linear in x and x^2).
    fn fd_information(family: Family, params: &[f64]) -> DMatrix<f64> {
        let d = params.len();
        let h = 1e-4;
        let hess = |x: f64| {
            let mut m = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    let f = |si: f64, sj: f64| {
                        let mut p = params.to_vec();
                        p[i] += si * h;
                        p[j] += sj * h;
                        log_likelihood(family, &p, x)
                    };
                    m[(i, j)] = (f(1.0, 1.0) - f(1.0, -1.0) - f(-1.0, 1.0) + f(-1.0, -1.0)) / (4.0 * h * h);
                }
            }
            m
        };
        match family {
            Family::Bernoulli => {
                let p = params[0];
                -(hess(1.0) * p + hess(0.0) * (1.0 - p))
            }
            // Hessian entries are quadratic polynomials in x: evaluate at three
            // points and combine with the first two moments.
            Family::Normal | Family::Exponential => {
                let (m1, m2) = match family {
                    Family::Normal => (params[0], params[1] + params[0] * params[0]),
                    _ => (1.0 / params[0], 2.0 / (params[0] * params[0])),
                };
                let (h0, h1, h2) = (hess(0.0), hess(1.0), hess(2.0));
                // quadratic a + b x + c x^2 through x = 0, 1, 2
                let a = h0.clone();
                let c = (&h2 - &h1 * 2.0 + &h0) * 0.5;
                let b = &h1 - &h0 - &c;
                -(a + b * m1 + c * m2)
            }
        }
    }

    #[test]
    fn fisher_matches_finite_difference_hessian() {
        for (family, params) in [
            (Family::Bernoulli, vec![0.3]),
            (Family::Bernoulli, vec![0.85]),
            (Family::Normal, vec![1.5, 2.0]),
            (Family::Normal, vec![-0.5, 0.7]),
            (Family::Exponential, vec![2.0]),
        ] {
            let exact = fisher_information(family, &params).unwrap();
            let fd = fd_information(family, &params);
            for (e, f) in exact.iter().zip(fd.iter()) {
                let scale = e.abs().max(1e-3);
                assert!((e - f).abs() / scale < 1e-4, "{family} {params:?}: {e} vs {f}");
            }
        }
    }

    #[test]
    fn sampling_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        assert!((0..1000).all(|_| sample(Family::Bernoulli, &[1.0], &mut rng) == 1.0));
        let mean = (0..n).map(|_| sample(Family::Bernoulli, &[0.7], &mut rng)).sum::<f64>() / n as f64;
        assert!((0.694..=0.706).contains(&mean), "{mean}");
        let mean = (0..n).map(|_| sample(Family::Exponential, &[2.0], &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "{mean}");
    }

    #[test]
    fn bernoulli_estimator_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let est = Estimator::new(Family::Bernoulli);
        let mut errors: Vec<f64> = (0..101)
            .map(|_| {
                let mut st = EstimatorState::new(1);
                for _ in 0..10_000 {
                    st.record(0, sample(Family::Bernoulli, &[0.3], &mut rng));
                }
                (est.estimate(&st).arm(0)[0] - 0.3).abs()
            })
            .collect();
        errors.sort_by(f64::total_cmp);
        assert!(errors[50] < 0.02);
    }

    #[test]
    fn theta_validation() {
        assert!(Theta::bernoulli(&[0.0, 0.5]).is_err());
        assert!(Theta::normal(&[0.0], &[-1.0]).is_err());
        assert!(Theta::exponential(&[0.0]).is_err());
        let th = Theta::normal(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(th.n_arms(), 2);
        assert_eq!(th.arm(1), &[2.0, 4.0]);
        assert_eq!(th.variance(1), 4.0);
    }
}
