use proptest::prelude::*;

use rar_core::catalog::{DesignSpec, TargetSpec};
use rar_core::models::EstimatorMode;
use rar_core::targets::BmForm;
use rar_core::{Family, Theta, WarmStart};
use rar_sim::{DelaySpec, Format, SimulationConfig};

fn number() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, prop::num::f64::NORMAL, Just(0.0)]
}

fn design() -> impl Strategy<Value = DesignSpec> {
    prop_oneof![
        Just(DesignSpec::CompleteRandomization),
        Just(DesignSpec::PlayTheWinner),
        number().prop_map(|initial| DesignSpec::Rpw { initial }),
        (number(), number()).prop_map(|(beta, initial)| DesignSpec::Seu { beta, initial }),
        number().prop_map(|immigration| DesignSpec::Dl { immigration }),
        (number(), number()).prop_map(|(beta, immigration)| DesignSpec::Gdl { beta, immigration }),
        (number(), number()).prop_map(|(initial, scale)| DesignSpec::Rru { initial, scale }),
        Just(DesignSpec::Smlp),
        number().prop_map(|gamma| DesignSpec::Dbcd { gamma }),
        number().prop_map(|alpha| DesignSpec::Erade { alpha }),
        number().prop_map(|gamma| DesignSpec::SmoothedErade { gamma }),
        Just(DesignSpec::ThallWathen),
    ]
}

fn arm(family: Family) -> BoxedStrategy<Vec<f64>> {
    match family {
        Family::Bernoulli => (0.0f64..=1.0).prop_map(|p| vec![p]).boxed(),
        Family::Normal => (-1e3f64..1e3, 1e-3f64..1e3).prop_map(|(m, v)| vec![m, v]).boxed(),
        Family::Exponential => (1e-3f64..1e3).prop_map(|r| vec![r]).boxed(),
    }
}

fn theta() -> impl Strategy<Value = (Family, Vec<f64>, Vec<f64>)> {
    prop_oneof![Just(Family::Bernoulli), Just(Family::Normal), Just(Family::Exponential)].prop_flat_map(|family| {
        (2usize..5).prop_flat_map(move |k| {
            let values = prop::collection::vec(arm(family), k).prop_map(|a| a.concat());
            (Just(family), values.clone(), values)
        })
    })
}

fn target() -> impl Strategy<Value = TargetSpec> {
    prop_oneof![
        Just(TargetSpec::Urn),
        Just(TargetSpec::Neyman),
        Just(TargetSpec::Rsihr),
        Just(TargetSpec::ZhangRosenberger),
        (number(), any::<bool>()).prop_map(|(c, printed)| TargetSpec::BiswasMandal {
            c,
            form: if printed { BmForm::AsPrinted } else { BmForm::Symmetric },
        }),
        prop::collection::vec(0.0f64..1.0, 2..5).prop_map(|rho| TargetSpec::Fixed { rho }),
        Just(TargetSpec::Balanced),
    ]
}

fn delay() -> impl Strategy<Value = DelaySpec> {
    let times = prop::collection::vec(prop_oneof![0.0f64..1e3, Just(f64::INFINITY)], 1..4);
    prop_oneof![
        Just(DelaySpec::None),
        (1e-3f64..1e3, prop::collection::vec(1e-3f64..1e3, 1..4))
            .prop_map(|(entry_mean, response_means)| DelaySpec::Exponential { entry_mean, response_means }),
        (1e-3f64..1e3, times).prop_map(|(gap, response_times)| DelaySpec::Fixed { gap, response_times }),
    ]
}

prop_compose! {
    fn config()(
        design in design(),
        (family, values, guess) in theta(),
        target in target(),
        floor in 0.0f64..0.3,
        n in 1usize..1_000_000,
        reps in 1u64..u64::MAX,
        seed in any::<u64>(),
        warm_kind in 0usize..4,
        m0 in 1usize..10,
        mle in any::<bool>(),
        delay in delay(),
        json in any::<bool>(),
    ) -> SimulationConfig {
        let warm = match warm_kind {
            0 => None,
            1 => Some(WarmStart::RestrictedBlock { m0 }),
            2 => Some(WarmStart::FixedGuess { theta0: Theta::new(family, guess).unwrap() }),
            _ => Some(WarmStart::BayesShrinkage),
        };
        SimulationConfig {
            design,
            family,
            theta: values,
            target,
            floor,
            n,
            reps,
            seed,
            warm,
            estimator: if mle { EstimatorMode::Mle } else { EstimatorMode::Shrinkage },
            delay,
            format: if json { Format::Json } else { Format::Csv },
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn text_round_trips(c in config()) {
        let text = c.to_text();
        prop_assert_eq!(SimulationConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn any_extra_key_is_rejected(c in config(), key in "[a-z]{1,8}(\\.[a-z_]{1,8})?") {
        let text = c.to_text();
        prop_assume!(!text.lines().any(|l| l.starts_with(&format!("{key} "))));
        let err = SimulationConfig::parse(&format!("{text}{key} = 1\n")).unwrap_err();
        prop_assert_eq!(err.exit_code(), 2);
    }
}
