use std::sync::Arc;

use proptest::prelude::*;

use rar_core::catalog::{DesignSpec, TargetSpec};
use rar_core::delay::{observed_view, DelayModel};
use rar_core::experiment::Experiment;
use rar_core::metrics::{drop_the_loser_covariance, reference_variance, Reference, ReferenceDesign};
use rar_core::targets::{
    central_difference, optimal_allocation_multiarm, sigma_lb, NeymanTarget, OptimizerOptions, RsihrTarget, Target,
    TargetAllocation, UrnTarget, ZhangRosenbergerTarget,
};
use rar_core::urns::{reconstruct, Immigration, Urn, UrnDesign, WeiRule};
use rar_core::{run_trial, ResponseModel, SeedTree, Theta, TrialSetup, WarmStart};

fn bernoulli_pair() -> impl Strategy<Value = (f64, f64)> {
    (0.05f64..0.95, 0.05f64..0.95)
}

fn cov(r: Reference) -> nalgebra::DMatrix<f64> {
    match r {
        Reference::Covariance(m) => m,
        Reference::NonNormal => panic!("expected a covariance"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn urn_log_replays_to_the_final_urn((p1, p2) in bernoulli_pair(), seed in any::<u64>(), which in 0usize..4) {
        let model = ResponseModel::new(Theta::bernoulli(&[p1, p2]).unwrap()).unwrap();
        let target = TargetAllocation::new(Arc::new(UrnTarget));
        let mut design = match which {
            0 => UrnDesign::rpw(1.0),
            1 => UrnDesign::drop_the_loser(2, 1.0),
            2 => UrnDesign::generalized_drop_the_loser(target, 1.0, 2, 1.0),
            _ => UrnDesign::seu(target, 1.0, 2, 1.0),
        }
        .unwrap()
        .with_log();
        let setup = TrialSetup::new(150).warm(WarmStart::BayesShrinkage);
        run_trial(&mut design, &model, &setup, SeedTree::new(seed)).unwrap();
        prop_assert_eq!(&reconstruct(design.initial(), design.log().unwrap()), design.urn());
    }

    #[test]
    fn immigration_free_urn_matches_the_plain_urn((p1, p2) in bernoulli_pair(), seed in any::<u64>()) {
        let model = ResponseModel::new(Theta::bernoulli(&[p1, p2]).unwrap()).unwrap();
        let setup = TrialSetup::new(200).warm(WarmStart::BayesShrinkage);
        let mut gpu = UrnDesign::rpw(1.0).unwrap();
        let mut imu = UrnDesign::imu(
            "imu",
            Urn::with_immigration(0.0, vec![1.0, 1.0]).unwrap(),
            Arc::new(WeiRule::rpw()),
            Some(Immigration::Constant(vec![0.0, 0.0])),
        )
        .unwrap();
        let a = run_trial(&mut gpu, &model, &setup, SeedTree::new(seed)).unwrap();
        let b = run_trial(&mut imu, &model, &setup, SeedTree::new(seed)).unwrap();
        prop_assert_eq!(a.assignments(), b.assignments());
        prop_assert_eq!(gpu.urn().balls(), imu.urn().balls());
    }

    #[test]
    fn drop_the_loser_covariance_is_the_urn_lower_bound(p in prop::collection::vec(0.05f64..0.95, 2..5)) {
        let theta = Theta::bernoulli(&p).unwrap();
        let dl = drop_the_loser_covariance(&p).unwrap();
        let lb = sigma_lb(&UrnTarget, &theta).unwrap().matrix;
        prop_assert!((dl - lb).abs().max() < 1e-12);
    }

    #[test]
    fn dbcd_variance_falls_to_the_bound_as_gamma_grows((p1, p2) in bernoulli_pair()) {
        let theta = Theta::bernoulli(&[p1, p2]).unwrap();
        let at = |gamma: f64| cov(reference_variance(ReferenceDesign::Dbcd { gamma }, &theta, &UrnTarget).unwrap())[(0, 0)];
        let gammas = [0.0, 0.5, 1.0, 2.0, 4.0, 16.0, 1e3];
        for w in gammas.windows(2) {
            prop_assert!(at(w[1]) < at(w[0]));
        }
        let lb = sigma_lb(&UrnTarget, &theta).unwrap().scalar();
        let rho1 = (1.0 - p2) / (2.0 - p1 - p2);
        prop_assert!((at(1e3) - lb).abs() <= (rho1 * (1.0 - rho1) + lb) / 2001.0 + 1e-15);
    }

    #[test]
    fn restricted_block_balances_the_first_patients(
        (p1, p2) in bernoulli_pair(),
        m0 in 1usize..5,
        k in 2usize..4,
        seed in any::<u64>(),
    ) {
        let p = [p1, p2, 0.5];
        let model = ResponseModel::new(Theta::bernoulli(&p[..k]).unwrap()).unwrap();
        let setup = TrialSetup::new(k * m0 + 10).warm(WarmStart::RestrictedBlock { m0 });
        let mut design = UrnDesign::wei(k, 1.0).unwrap();
        let state = run_trial(&mut design, &model, &setup, SeedTree::new(seed)).unwrap();
        let mut counts = vec![0usize; k];
        for &a in &state.assignments()[..k * m0] {
            counts[a] += 1;
        }
        prop_assert!(counts.iter().all(|&c| c == m0));
    }

    #[test]
    fn observed_responses_only_accumulate(seed in any::<u64>(), entry in 0.2f64..3.0, response in 0.2f64..5.0) {
        let theta = Theta::bernoulli(&[0.7, 0.4]).unwrap();
        let mut e = Experiment::new(DesignSpec::Dbcd { gamma: 2.0 }, TargetSpec::Urn, theta, 120, seed).unwrap();
        e.setup = e.setup.clone().delay(DelayModel::exponential(entry, vec![response, response]).unwrap());
        let state = e.run_one(0).unwrap();
        let mut previous = vec![0usize; 2];
        for m in 0..=state.step() {
            let view = observed_view(&state, m).unwrap();
            let mut assigned = vec![0usize; 2];
            for &a in &state.assignments()[..m] {
                assigned[a] += 1;
            }
            for k in 0..2 {
                prop_assert!(view.counts[k] >= previous[k]);
                prop_assert!(view.counts[k] <= assigned[k]);
            }
            previous = view.counts;
        }
    }

    #[test]
    fn analytic_gradients_match_differences((p1, p2) in bernoulli_pair(), mu in (0.5f64..5.0, 0.5f64..5.0), var in (0.2f64..4.0, 0.2f64..4.0)) {
        let bernoulli = Theta::bernoulli(&[p1, p2]).unwrap();
        let normal = Theta::normal(&[mu.0, mu.1], &[var.0, var.1]).unwrap();
        let cases: [(&dyn Target, &Theta); 5] = [
            (&UrnTarget, &bernoulli),
            (&NeymanTarget, &bernoulli),
            (&RsihrTarget, &bernoulli),
            (&NeymanTarget, &normal),
            (&ZhangRosenbergerTarget, &normal),
        ];
        for (target, theta) in cases {
            let exact = target.gradient(theta).unwrap();
            let fd = central_difference(target, theta, 1e-6).unwrap();
            let scale = exact.abs().max().max(1.0);
            prop_assert!((&exact - &fd).abs().max() <= 1e-6 * scale, "{}: {} vs {}", target.name(), exact, fd);
        }
    }

    #[test]
    fn three_arm_optimizer_beats_a_grid(
        w in prop::collection::vec(0.5f64..2.0, 3),
        a in prop::collection::vec(0.2f64..3.0, 3),
        floor in 0.0f64..0.25,
    ) {
        let budget = 100.0;
        let phi = |m: &[f64]| m.iter().zip(&a).map(|(x, c)| c * x.max(1e-300).ln()).sum::<f64>();
        let objective = |rho: &[f64]| {
            let cost: f64 = rho.iter().zip(&w).map(|(r, c)| r * c).sum();
            let m: Vec<f64> = rho.iter().map(|r| budget * r / cost).collect();
            phi(&m)
        };
        let best = optimal_allocation_multiarm(&w, floor, budget, phi, OptimizerOptions::default()).unwrap();
        let step = 0.002f64;
        let mut grid_best = f64::NEG_INFINITY;
        let mut grid_arg = vec![0.0; 3];
        let steps = (1.0 / step).round() as usize;
        for i in 0..=steps {
            for j in 0..=steps - i {
                let rho = [i as f64 * step, j as f64 * step, 1.0 - (i + j) as f64 * step];
                if rho.iter().any(|&r| r < floor - 1e-12) {
                    continue;
                }
                let v = objective(&rho);
                if v > grid_best {
                    grid_best = v;
                    grid_arg = rho.to_vec();
                }
            }
        }
        prop_assert!(objective(&best.proportions) >= grid_best - 1e-9);
        for (x, g) in best.proportions.iter().zip(&grid_arg) {
            prop_assert!((x - g).abs() < 0.01, "{:?} vs grid {:?}", best.proportions, grid_arg);
        }
    }
}

#[test]
fn rpw_variance_grows_with_n_when_the_limit_is_not_normal() {
    // p1 + p2 > 3/2: the RPW urn proportion is no longer root-n stable
    let theta = Theta::bernoulli(&[0.9, 0.8]).unwrap();
    let rho1 = 2.0 / 3.0;
    let var = |n: usize| {
        let e = Experiment::new(DesignSpec::Rpw { initial: 1.0 }, TargetSpec::Urn, theta.clone(), n, 31).unwrap();
        e.run(1000, None).unwrap().moments(0, rho1).unwrap().variance
    };
    let (small, large) = (var(1000), var(4000));
    assert!(large > small, "{large} <= {small}");
}

#[test]
fn wald_test_holds_its_level_under_complete_randomization() {
    let theta = Theta::bernoulli(&[0.5, 0.5]).unwrap();
    let e = Experiment::new(DesignSpec::CompleteRandomization, TargetSpec::Balanced, theta, 200, 41).unwrap();
    let size = e.run(4000, None).unwrap().power().unwrap();
    assert!((size - 0.05).abs() < 0.015, "type I error {size}");
}
