//! Monte Carlo replication harness.
//!
//! Replication `r` is seeded from `(seed, r)` alone, so a summary does not
//! depend on how many threads produced it.

use rayon::prelude::*;

use crate::catalog::{DesignSpec, TargetSpec};
use crate::engine::{run_trial, TrialSetup, TrialState};
use crate::error::{Error, Result};
use crate::metrics::{ReplicationRecord, ReplicationSummary};
use crate::models::{ResponseModel, Theta};
use crate::rng::SeedTree;
use crate::targets::{urn_target, TargetAllocation, DEFAULT_FLOOR};

#[derive(Debug, Clone)]
pub struct Experiment {
    pub design: DesignSpec,
    pub target: TargetSpec,
    pub floor: f64,
    pub model: ResponseModel,
    pub setup: TrialSetup,
    pub seed: u64,
}

impl Experiment {
    /// A new experiment using the design's default warm start.
    pub fn new(design: DesignSpec, target: TargetSpec, theta: Theta, n: usize, seed: u64) -> Result<Self> {
        let setup = TrialSetup::new(n).warm(design.default_warm(theta.family()));
        Ok(Experiment { design, target, floor: DEFAULT_FLOOR, model: ResponseModel::new(theta)?, setup, seed })
    }

    pub fn theta(&self) -> &Theta {
        self.model.theta()
    }

    pub fn n_arms(&self) -> usize {
        self.model.n_arms()
    }

    pub fn target_allocation(&self) -> Result<TargetAllocation> {
        TargetAllocation::new(self.target.build(self.n_arms())?).with_floor(self.floor)
    }

    /// Allocation the design converges to at the true parameter.
    pub fn limit(&self) -> Result<Vec<f64>> {
        let k = self.n_arms();
        match self.design {
            DesignSpec::CompleteRandomization => Ok(vec![1.0 / k as f64; k]),
            _ if self.design.urn_only() => {
                let q: Vec<f64> = self.theta().success_probabilities()?.iter().map(|p| 1.0 - p).collect();
                urn_target(&q)
            }
            _ => self.target_allocation()?.evaluate(self.theta()),
        }
    }

    pub fn run_one(&self, index: u64) -> Result<TrialState> {
        let target = self.target_allocation()?;
        let mut design = self.design.build(self.n_arms(), &target, self.setup.n)?;
        run_trial(design.as_mut(), &self.model, &self.setup, SeedTree::new(self.seed).replication(index))
    }

    /// Replications `range`, in parallel on `jobs` threads (all cores when
    /// `None`).
    pub fn run_range(&self, range: std::ops::Range<u64>, jobs: Option<usize>) -> Result<ReplicationSummary> {
        let rho = self.limit()?;
        let family = self.model.family();
        let work = || -> Result<Vec<ReplicationRecord>> {
            range
                .clone()
                .into_par_iter()
                .map(|r| ReplicationRecord::from_trial(r, &self.run_one(r)?, &rho, family))
                .collect()
        };
        let records = match jobs {
            Some(j) => rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?
                .install(work)?,
            None => work()?,
        };
        Ok(ReplicationSummary::new(records))
    }

    pub fn run(&self, reps: u64, jobs: Option<usize>) -> Result<ReplicationSummary> {
        self.run_range(0..reps, jobs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let theta = Theta::bernoulli(&[0.7, 0.4]).unwrap();
        let e = Experiment::new(DesignSpec::Dbcd { gamma: 2.0 }, TargetSpec::Urn, theta, 200, 5).unwrap();
        let one = e.run(40, Some(1)).unwrap();
        let four = e.run(40, Some(4)).unwrap();
        assert_eq!(one, four);
        let halves = e.run_range(0..17, Some(2)).unwrap().merge(&e.run_range(17..40, Some(3)).unwrap());
        assert_eq!(one, halves);
    }

    #[test]
    fn urn_designs_report_the_urn_limit() {
        let theta = Theta::bernoulli(&[0.7, 0.4]).unwrap();
        let e = Experiment::new(DesignSpec::Dl { immigration: 1.0 }, TargetSpec::Neyman, theta, 10, 0).unwrap();
        assert!((e.limit().unwrap()[0] - 2.0 / 3.0).abs() < 1e-12);
    }
}
