//! Evaluation: selection bias, randomness deficit, Monte Carlo moments,
//! Wald tests and the closed-form asymptotic variances used as references.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::engine::TrialState;
use crate::error::{Error, Result};
use crate::models::{EstimatorState, Family, Theta};
use crate::targets::{sigma_lb, urn_target, Target};

/// Two-sided 5% normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in p.iter().enumerate().skip(1) {
        if x > p[best] {
            best = k;
        }
    }
    best
}

/// Fraction of patients a guesser who always names the most likely arm
/// would have predicted correctly.
pub fn selection_bias(state: &TrialState) -> f64 {
    let n = state.step();
    if n == 0 {
        return 0.0;
    }
    let hits = state
        .probability_rows()
        .zip(state.assignments())
        .filter(|(p, &arm)| argmax(p) == arm)
        .count();
    hits as f64 / n as f64
}

/// `(1/n) sum_m max_k p_{m,k}`: the expected hit rate along this path.
pub fn expected_selection_bias(state: &TrialState) -> f64 {
    let n = state.step();
    if n == 0 {
        return 0.0;
    }
    state.probability_rows().map(|p| p.iter().copied().fold(0.0, f64::max)).sum::<f64>() / n as f64
}

/// `(1/n) sum_m (1/K) sum_k |p_{m,k} - rho_k|`.
pub fn mlr(state: &TrialState, rho: &[f64]) -> Result<f64> {
    if rho.len() != state.n_arms() {
        return Err(Error::param("target length differs from the number of arms"));
    }
    let n = state.step();
    if n == 0 {
        return Ok(0.0);
    }
    let k = rho.len() as f64;
    let total: f64 = state
        .probability_rows()
        .map(|p| p.iter().zip(rho).map(|(a, b)| (a - b).abs()).sum::<f64>() / k)
        .sum();
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub z: f64,
    pub reject: bool,
}

/// Wald test of equal means at level 0.05 from final per-arm statistics.
pub fn wald_test(stats: &EstimatorState, family: Family) -> Result<WaldTest> {
    if stats.n_arms() != 2 {
        return Err(Error::param("the Wald test compares two arms"));
    }
    let n = [stats.counts[0] as f64, stats.counts[1] as f64];
    let minimum = if family == Family::Normal { 2.0 } else { 1.0 };
    if n.iter().any(|&x| x < minimum) {
        return Err(Error::Numerical(format!("Wald test undefined with arm sizes {:?}", stats.counts)));
    }
    let mean = [stats.sums[0] / n[0], stats.sums[1] / n[1]];
    let var = |k: usize| match family {
        Family::Bernoulli => mean[k] * (1.0 - mean[k]),
        Family::Exponential => mean[k] * mean[k],
        Family::Normal => ((stats.sums_sq[k] - n[k] * mean[k] * mean[k]) / (n[k] - 1.0)).max(0.0),
    };
    let diff = mean[0] - mean[1];
    let se = (var(0) / n[0] + var(1) / n[1]).sqrt();
    let z = if diff == 0.0 {
        0.0
    } else if se == 0.0 {
        diff.signum() * f64::INFINITY
    } else {
        diff / se
    };
    Ok(WaldTest { z, reject: z.abs() > Z_975 })
}

/// What one replication contributes to a summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: u64,
    pub n: usize,
    /// `N_n / n`.
    pub proportions: Vec<f64>,
    pub selection_bias: f64,
    pub expected_selection_bias: f64,
    pub mlr: f64,
    pub failures: usize,
    pub wald: Option<WaldTest>,
}

impl ReplicationRecord {
    pub fn from_trial(index: u64, state: &TrialState, rho: &[f64], family: Family) -> Result<Self> {
        let failures = match family {
            Family::Bernoulli => state.failures().iter().sum(),
            _ => 0,
        };
        Ok(ReplicationRecord {
            index,
            n: state.step(),
            proportions: state.proportions(),
            selection_bias: selection_bias(state),
            expected_selection_bias: expected_selection_bias(state),
            mlr: mlr(state, rho)?,
            failures,
            wald: if state.n_arms() == 2 { wald_test(&state.statistics(), family).ok() } else { None },
        })
    }
}

/// An order-independent collection of replications.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    records: Vec<ReplicationRecord>,
}

impl ReplicationSummary {
    pub fn new(mut records: Vec<ReplicationRecord>) -> Self {
        records.sort_by_key(|r| r.index);
        ReplicationSummary { records }
    }

    /// Union of two summaries; independent of argument order.
    pub fn merge(&self, other: &Self) -> Self {
        let mut all = self.records.clone();
        all.extend(other.records.iter().cloned());
        Self::new(all)
    }

    pub fn records(&self) -> &[ReplicationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Moments of `sqrt(n) (N_{n,arm}/n - rho_arm)`.
    pub fn moments(&self, arm: usize, rho: f64) -> Result<Moments> {
        let n = self.records.first().map(|r| r.n).ok_or_else(|| Error::param("empty summary"))?;
        if self.records.iter().any(|r| r.n != n) {
            return Err(Error::param("replications with different sample sizes"));
        }
        let x: Vec<f64> = self.records.iter().map(|r| r.proportions[arm]).collect();
        empirical_moments(&x, n, rho)
    }

    pub fn mean_proportions(&self) -> Vec<f64> {
        let k = self.records.first().map_or(0, |r| r.proportions.len());
        let mut m = vec![0.0; k];
        for r in &self.records {
            for (a, b) in m.iter_mut().zip(&r.proportions) {
                *a += b;
            }
        }
        m.iter().map(|a| a / self.len() as f64).collect()
    }

    fn mean_of(&self, f: impl Fn(&ReplicationRecord) -> f64) -> f64 {
        self.records.iter().map(f).sum::<f64>() / self.len() as f64
    }

    pub fn selection_bias(&self) -> f64 {
        self.mean_of(|r| r.selection_bias)
    }

    pub fn expected_selection_bias(&self) -> f64 {
        self.mean_of(|r| r.expected_selection_bias)
    }

    pub fn mlr(&self) -> f64 {
        self.mean_of(|r| r.mlr)
    }

    pub fn mean_failures(&self) -> f64 {
        self.mean_of(|r| r.failures as f64)
    }

    /// Fraction of replications whose Wald test rejected; `None` if no
    /// replication produced a test.
    pub fn power(&self) -> Option<f64> {
        let tests: Vec<bool> = self.records.iter().filter_map(|r| r.wald.map(|w| w.reject)).collect();
        (!tests.is_empty()).then(|| tests.iter().filter(|&&r| r).count() as f64 / tests.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub replications: usize,
    /// Mean of `N_{n,k}/n`.
    pub mean: f64,
    /// Unbiased sample variance of `sqrt(n) (N_{n,k}/n - rho_k)`.
    pub variance: f64,
    /// Jackknife standard error of `variance`.
    pub variance_se: f64,
}

/// Moments of `sqrt(n) (x_r - rho)` across replications.
pub fn empirical_moments(proportions: &[f64], n: usize, rho: f64) -> Result<Moments> {
    let r = proportions.len();
    if r < 3 {
        return Err(Error::param("need at least three replications for a jackknife"));
    }
    let root = (n as f64).sqrt();
    let z: Vec<f64> = proportions.iter().map(|x| root * (x - rho)).collect();
    let rf = r as f64;
    let mean_z = z.iter().sum::<f64>() / rf;
    let d: Vec<f64> = z.iter().map(|v| v - mean_z).collect();
    let ss: f64 = d.iter().map(|v| v * v).sum();
    let variance = ss / (rf - 1.0);
    // leave-one-out variances from centred sums
    let loo: Vec<f64> = d.iter().map(|&di| (ss - di * di - di * di / (rf - 1.0)) / (rf - 2.0)).collect();
    let loo_mean = loo.iter().sum::<f64>() / rf;
    let variance_se = ((rf - 1.0) / rf * loo.iter().map(|v| (v - loo_mean).powi(2)).sum::<f64>()).sqrt();
    Ok(Moments { replications: r, mean: proportions.iter().sum::<f64>() / rf, variance, variance_se })
}

/// Which of the two printed RPW variance numerators to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RpwForm {
    /// `q1 q2 [5 - 2(q1 + q2)] / ([2(q1 + q2) - 1] (q1 + q2)^2)`.
    #[default]
    Corollary,
    /// `q1 q2 [3 + 2(p1 + p2)] / ([2(q1 + q2) - 1] (q1 + q2)^2)`.
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "kebab-case")]
pub enum ReferenceDesign {
    Rpw { form: RpwForm },
    Dl,
    Gdl,
    Seu,
    Smlp,
    Dbcd { gamma: f64 },
    Erade,
    LowerBound,
}

impl ReferenceDesign {
    pub fn name(&self) -> String {
        match self {
            ReferenceDesign::Rpw { form: RpwForm::Corollary } => "rpw".into(),
            ReferenceDesign::Rpw { form: RpwForm::Table } => "rpw-table".into(),
            ReferenceDesign::Dl => "dl".into(),
            ReferenceDesign::Gdl => "gdl".into(),
            ReferenceDesign::Seu => "seu".into(),
            ReferenceDesign::Smlp => "smlp".into(),
            ReferenceDesign::Dbcd { gamma } => format!("dbcd(gamma={gamma})"),
            ReferenceDesign::Erade => "erade".into(),
            ReferenceDesign::LowerBound => "lower-bound".into(),
        }
    }

    /// Whether the design can only aim at the urn allocation `1/q_k`.
    pub fn urn_only(&self) -> bool {
        matches!(self, ReferenceDesign::Rpw { .. } | ReferenceDesign::Dl)
    }
}

/// Limiting covariance of `sqrt(n)(N_n/n - rho)`, or the statement that
/// the limit is not normal.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Covariance(DMatrix<f64>),
    NonNormal,
}

impl Reference {
    /// Variance of arm 1, `None` in the non-normal regime.
    pub fn scalar(&self) -> Option<f64> {
        match self {
            Reference::Covariance(m) => Some(m[(0, 0)]),
            Reference::NonNormal => None,
        }
    }
}

/// `diag(rho) - rho' rho`.
pub fn multinomial_covariance(rho: &[f64]) -> DMatrix<f64> {
    let k = rho.len();
    DMatrix::from_fn(k, k, |i, j| if i == j { rho[i] - rho[i] * rho[j] } else { -rho[i] * rho[j] })
}

/// Drop-the-loser covariance `(I - v'1) diag(v_k p_k / q_k) (I - 1'v)`.
pub fn drop_the_loser_covariance(p: &[f64]) -> Result<DMatrix<f64>> {
    let q: Vec<f64> = p.iter().map(|x| 1.0 - x).collect();
    let v = urn_target(&q)?;
    let k = p.len();
    let left = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 - v[i] } else { -v[i] });
    let middle = DMatrix::from_fn(k, k, |i, j| if i == j { v[i] * p[i] / q[i] } else { 0.0 });
    Ok(&left * middle * left.transpose())
}

/// Closed-form asymptotic covariance of a design aiming at `target`. Urn
/// designs ignore `target` and use the urn allocation.
pub fn reference_variance(design: ReferenceDesign, theta: &Theta, target: &dyn Target) -> Result<Reference> {
    let lb = || sigma_lb(target, theta).map(|l| l.matrix);
    let sigma1 = || target.rho(theta).map(|r| multinomial_covariance(&r));
    let cov = match design {
        ReferenceDesign::Rpw { form } => {
            let p = theta.success_probabilities()?;
            if p.len() != 2 {
                return Err(Error::Unsupported("the RPW variance is for two arms".into()));
            }
            let Some(s) = rpw_variance(p[0], p[1], form) else {
                return Ok(Reference::NonNormal);
            };
            DMatrix::from_row_slice(2, 2, &[s, -s, -s, s])
        }
        ReferenceDesign::Dl => drop_the_loser_covariance(theta.success_probabilities()?)?,
        ReferenceDesign::Gdl => lb()? * 2.0,
        ReferenceDesign::Seu => sigma1()? + lb()? * 6.0,
        ReferenceDesign::Smlp => sigma1()? + lb()? * 2.0,
        ReferenceDesign::Dbcd { gamma } => {
            if !(gamma >= 0.0) {
                return Err(Error::param("gamma must be nonnegative"));
            }
            let l = lb()?;
            &l + (sigma1()? + &l) / (1.0 + 2.0 * gamma)
        }
        ReferenceDesign::Erade | ReferenceDesign::LowerBound => lb()?,
    };
    Ok(Reference::Covariance(cov))
}

/// Two-arm RPW variance; `None` when `q1 + q2 <= 1/2`.
pub fn rpw_variance(p1: f64, p2: f64, form: RpwForm) -> Option<f64> {
    let (q1, q2) = (1.0 - p1, 1.0 - p2);
    let s = q1 + q2;
    if s <= 0.5 {
        return None;
    }
    let numerator = match form {
        RpwForm::Corollary => 5.0 - 2.0 * s,
        RpwForm::Table => 3.0 + 2.0 * (p1 + p2),
    };
    Some(q1 * q2 * numerator / ((2.0 * s - 1.0) * s * s))
}

/// Two-arm binary variances for the urn allocation `q2/(q1+q2)` written out
/// term by term.
pub fn binary_urn_variance(design: ReferenceDesign, p1: f64, p2: f64) -> Option<f64> {
    let (q1, q2) = (1.0 - p1, 1.0 - p2);
    let (s, t) = (q1 + q2, p1 + p2);
    let cube = s * s * s;
    Some(match design {
        ReferenceDesign::Rpw { form } => return rpw_variance(p1, p2, form),
        ReferenceDesign::Dl | ReferenceDesign::Erade | ReferenceDesign::LowerBound => q1 * q2 * t / cube,
        ReferenceDesign::Gdl => 2.0 * q1 * q2 * t / cube,
        ReferenceDesign::Smlp => q1 * q2 * (2.0 + t) / cube,
        ReferenceDesign::Seu => q1 * q2 * (2.0 + 5.0 * t) / cube,
        ReferenceDesign::Dbcd { gamma } => {
            let g = 1.0 + 2.0 * gamma;
            q1 * q2 * (2.0 + g * t) / (g * cube)
        }
    })
}

/// Limiting selection bias of two-arm ERADE: `1 - 2 alpha rho1 rho2` while
/// `max(rho1, rho2) <= 1/(2 alpha)`, and `max(rho1, rho2)` beyond.
pub fn erade_selection_bias(alpha: f64, rho1: f64) -> f64 {
    let top = rho1.max(1.0 - rho1);
    if 2.0 * alpha * top >= 1.0 {
        top
    } else {
        1.0 - 2.0 * alpha * rho1 * (1.0 - rho1)
    }
}

/// Limiting randomness deficit of two-arm ERADE: `2 (1 - alpha) rho1 rho2`.
pub fn erade_mlr(alpha: f64, rho1: f64) -> f64 {
    2.0 * (1.0 - alpha) * rho1 * (1.0 - rho1)
}

/// Limiting variance of `sqrt(m) (p_{m+1,1} - rho_1)` for the DBCD:
/// `(gamma^2 rho1 rho2 + (1 + gamma)^2 sigma_LB^2) / (1 + 2 gamma)`.
pub fn dbcd_probability_variance(gamma: f64, rho1: f64, sigma_lb2: f64) -> f64 {
    (gamma * gamma * rho1 * (1.0 - rho1) + (1.0 + gamma).powi(2) * sigma_lb2) / (1.0 + 2.0 * gamma)
}

/// Same for the RPW urn proportion `Y_{m,1}/m`; `None` when `q1 + q2 <= 1/2`.
pub fn rpw_probability_variance(p1: f64, p2: f64) -> Option<f64> {
    let (q1, q2) = (1.0 - p1, 1.0 - p2);
    let s = q1 + q2;
    (s > 0.5).then(|| q1 * q2 / ((2.0 * s - 1.0) * s * s))
}

/// Limit of `sqrt(n) MLR_n` when `p_{m,1}` has limiting variance `v / m`.
pub fn scaled_mlr(probability_variance: f64) -> f64 {
    (8.0 / std::f64::consts::PI).sqrt() * probability_variance.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::UrnTarget;

    fn theta() -> Theta {
        Theta::bernoulli(&[0.7, 0.4]).unwrap()
    }

    #[test]
    fn table_values_at_reference_point() {
        let th = theta();
        let get = |d| reference_variance(d, &th, &UrnTarget).unwrap().scalar().unwrap();
        assert!((get(ReferenceDesign::Dl) - 0.198 / 0.729).abs() < 1e-12);
        assert!((get(ReferenceDesign::LowerBound) - 0.198 / 0.729).abs() < 1e-12);
        assert!((get(ReferenceDesign::Smlp) - 0.765432).abs() < 1e-6);
        assert!((get(ReferenceDesign::Seu) - 1.851852).abs() < 1e-6);
        assert!((get(ReferenceDesign::Gdl) - 2.0 * 0.198 / 0.729).abs() < 1e-12);
        for (g, v) in [(0.0, 0.765432), (1.0, 0.436214), (2.0, 0.370370), (4.0, 0.326475)] {
            assert!((get(ReferenceDesign::Dbcd { gamma: g }) - v).abs() < 1e-6, "{g}");
        }
        assert!((get(ReferenceDesign::Rpw { form: RpwForm::Corollary }) - 0.576 / 0.648).abs() < 1e-12);
        assert!((get(ReferenceDesign::Rpw { form: RpwForm::Table }) - 1.444444).abs() < 1e-6);
    }

    #[test]
    fn general_forms_match_binary_forms() {
        for p1 in [0.15, 0.5, 0.85] {
            for p2 in [0.2, 0.45, 0.9] {
                let th = Theta::bernoulli(&[p1, p2]).unwrap();
                for d in [
                    ReferenceDesign::Dl,
                    ReferenceDesign::Gdl,
                    ReferenceDesign::Seu,
                    ReferenceDesign::Smlp,
                    ReferenceDesign::Dbcd { gamma: 2.0 },
                    ReferenceDesign::Erade,
                ] {
                    let general = reference_variance(d, &th, &UrnTarget).unwrap().scalar().unwrap();
                    let binary = binary_urn_variance(d, p1, p2).unwrap();
                    assert!((general - binary).abs() < 1e-6 * binary.max(1.0), "{d:?} at {p1},{p2}");
                }
            }
        }
    }

    #[test]
    fn rpw_regimes() {
        assert!(matches!(
            reference_variance(ReferenceDesign::Rpw { form: RpwForm::Corollary }, &Theta::bernoulli(&[0.9, 0.6]).unwrap(), &UrnTarget)
                .unwrap(),
            Reference::NonNormal
        ));
        assert!(rpw_variance(0.8, 0.69, RpwForm::Corollary).is_some());
    }

    #[test]
    fn probability_variances() {
        let lb = 0.198 / 0.729;
        assert!((dbcd_probability_variance(0.0, 2.0 / 3.0, lb) - lb).abs() < 1e-15);
        let mut last = lb;
        for g in [0.5, 1.0, 2.0, 4.0] {
            let v = dbcd_probability_variance(g, 2.0 / 3.0, lb);
            assert!(v > last);
            last = v;
        }
        assert!(rpw_probability_variance(0.7, 0.4).unwrap() > lb);
        assert!(rpw_probability_variance(0.9, 0.6).is_none());
    }

    #[test]
    fn moments_of_constant_data() {
        let m = empirical_moments(&[0.5; 10], 100, 0.5).unwrap();
        assert_eq!(m.variance, 0.0);
        assert_eq!(m.variance_se, 0.0);
    }

    #[test]
    fn jackknife_matches_brute_force() {
        let x = [0.61, 0.66, 0.70, 0.64, 0.69, 0.58, 0.67];
        let n = 400;
        let m = empirical_moments(&x, n, 2.0 / 3.0).unwrap();
        let var = |v: &[f64]| {
            let z: Vec<f64> = v.iter().map(|a| 20.0 * (a - 2.0 / 3.0)).collect();
            let mu = z.iter().sum::<f64>() / z.len() as f64;
            z.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / (z.len() - 1) as f64
        };
        assert!((m.variance - var(&x)).abs() < 1e-12);
        let loo: Vec<f64> =
            (0..x.len()).map(|i| var(&x.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect::<Vec<_>>())).collect();
        let mean = loo.iter().sum::<f64>() / 7.0;
        let se = (6.0 / 7.0 * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt();
        assert!((m.variance_se - se).abs() < 1e-12);
    }

    #[test]
    fn wald_basics() {
        let mut s = EstimatorState::new(2);
        for x in [1.0, 0.0, 1.0, 0.0] {
            s.record(0, x);
            s.record(1, x);
        }
        assert_eq!(wald_test(&s, Family::Bernoulli).unwrap().z, 0.0);
        s.record(0, 1.0);
        let w = wald_test(&s, Family::Bernoulli).unwrap();
        assert!(w.z > 0.0 && !w.reject);
        assert!(wald_test(&EstimatorState::new(2), Family::Bernoulli).is_err());
    }

    #[test]
    fn erade_limits() {
        assert!((erade_selection_bias(0.5, 0.5) - 0.75).abs() < 1e-15);
        // with alpha <= 1/2 the threshold 1/(2 alpha) is never exceeded
        assert!((erade_selection_bias(0.5, 0.3) - 0.79).abs() < 1e-15);
        assert!((erade_selection_bias(0.7, 0.6) - (1.0 - 1.4 * 0.24)).abs() < 1e-15);
        assert_eq!(erade_selection_bias(0.7, 0.75), 0.75);
        assert!((erade_mlr(0.5, 0.5) - 0.25).abs() < 1e-15);
        assert!((scaled_mlr(0.198 / 0.729) - 0.831647).abs() < 1e-6);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }
}
