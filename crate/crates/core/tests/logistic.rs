mod common;

use coxpsw::prelude::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rescale(c: &Cohort, col: usize, scale: f64, shift: f64) -> Cohort {
    let subjects = c
        .subjects()
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.covariates[col] = scale * s.covariates[col] + shift;
            s
        })
        .collect();
    Cohort::new(subjects, c.covariate_names().to_vec()).unwrap()
}

#[test]
fn score_vanishes_and_probabilities_interior() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let c = common::random_cohort(&mut rng, 200);
        let fit = fit_logistic(&c, LogisticOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.score_sum().amax() <= 1e-10);
        assert!(fit.e_hat.iter().all(|&e| e > 0.0 && e < 1.0));
        // information is the analytic logistic one
        let mut info = nalgebra::DMatrix::<f64>::zeros(3, 3);
        for (i, e) in fit.e_hat.iter().enumerate() {
            let x = nalgebra::DVector::from_vec(c.design_row(i));
            info += &x * x.transpose() * (e * (1.0 - e));
        }
        assert!((&info - &fit.info_matrix).amax() <= 1e-10 * info.amax());
    }
}

#[test]
fn separation_on_binary_predictor() {
    let subjects = (0..40)
        .map(|i| Subject {
            covariates: vec![(i % 2) as f64, (i as f64).sin()],
            treated: i % 2 == 1,
            time: 1.0 + i as f64,
            event: true,
        })
        .collect();
    let c = Cohort::new(subjects, vec!["z".into(), "u".into()]).unwrap();
    assert!(matches!(
        fit_logistic(&c, LogisticOptions::default()),
        Err(Error::Separation)
    ));
}

#[test]
fn iteration_cap_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let c = common::random_cohort(&mut rng, 100);
    let opts = LogisticOptions {
        tol: 1e-10,
        max_iter: 1,
    };
    assert!(matches!(
        fit_logistic(&c, opts),
        Err(Error::MaxIterExceeded { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn affine_rescaling_leaves_propensities(seed in 0u64..10_000, scale in prop_oneof![0.05f64..20.0, -20.0f64..-0.05], shift in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = common::random_cohort(&mut rng, 150);
        let Ok(base) = fit_logistic(&c, LogisticOptions::default()) else { return Ok(()); };
        let moved = fit_logistic(&rescale(&c, 0, scale, shift), LogisticOptions::default()).unwrap();
        for (a, b) in base.e_hat.iter().zip(&moved.e_hat) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
        prop_assert!((moved.gamma_hat[1] * scale - base.gamma_hat[1]).abs() <= 1e-8 * base.gamma_hat[1].abs().max(1.0));
    }
}
