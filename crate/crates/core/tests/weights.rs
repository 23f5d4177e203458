use coxpsw::prelude::*;
use proptest::prelude::*;

const H: f64 = 1e-6;

fn grid() -> impl Iterator<Item = f64> {
    (1..=99).map(|i| i as f64 / 100.0)
}

fn schemes() -> Vec<WeightScheme> {
    let mut s = WeightScheme::BUILT_IN.to_vec();
    s.push(WeightScheme::custom("squared", |e| e * e, |e| 2.0 * e));
    s.push(WeightScheme::custom(
        "entropy-like",
        |e| 1.0 + e.sin(),
        |e| e.cos(),
    ));
    s
}

#[test]
fn tilt_derivative_matches_central_difference() {
    for s in schemes() {
        for e in (1..=9).map(|i| i as f64 / 10.0) {
            let fd = (s.tilt(e + H) - s.tilt(e - H)) / (2.0 * H);
            assert!((fd - s.tilt_prime(e)).abs() < 1e-6, "{s:?} at {e}");
        }
    }
}

#[test]
fn inconsistent_custom_derivative_is_caught() {
    let bad = WeightScheme::custom("bad", |e| e * e, |e| e);
    let e = 0.5;
    let fd = (bad.tilt(e + H) - bad.tilt(e - H)) / (2.0 * H);
    assert!((fd - bad.tilt_prime(e)).abs() > 1e-3);
}

#[test]
fn k_is_logit_scale_weight_sensitivity() {
    for s in schemes() {
        for e in grid() {
            for a in [false, true] {
                let fd = (s.subject_weight(e + H, a).unwrap()
                    - s.subject_weight(e - H, a).unwrap())
                    / (2.0 * H);
                let k = s.k_factor(e, a).unwrap();
                assert!(
                    (k - e * (1.0 - e) * fd).abs() < 1e-6 * k.abs().max(1.0),
                    "{s:?} e={e} a={a}: {k} vs {}",
                    e * (1.0 - e) * fd
                );
            }
        }
    }
}

#[test]
fn ate_identity_on_grid() {
    for e in grid() {
        for a in [false, true] {
            let w = subject_weight(&WeightScheme::Ate, e, a).unwrap();
            let k = k_factor(&WeightScheme::Ate, e, a).unwrap();
            let r = if a { 1.0 - e } else { -e };
            assert!((w * r + k).abs() <= 1e-12, "e={e} a={a}");
        }
    }
}

#[test]
fn att_and_ato_signs_and_bounds() {
    for e in grid() {
        assert_eq!(k_factor(&WeightScheme::Att, e, true).unwrap(), 0.0);
        assert_eq!(subject_weight(&WeightScheme::Att, e, true).unwrap(), 1.0);
        assert!(k_factor(&WeightScheme::Ato, e, true).unwrap() < 0.0);
        assert!(k_factor(&WeightScheme::Ato, e, false).unwrap() > 0.0);
        for a in [false, true] {
            let w = subject_weight(&WeightScheme::Ato, e, a).unwrap();
            assert!(w > 0.0 && w <= 1.0);
        }
    }
}

#[test]
fn ato_weight_residual_uses_weight_function() {
    // w (A - e) for ATO is A (1-e)^2 - (1-A) e^2
    for e in grid() {
        let t = subject_weight(&WeightScheme::Ato, e, true).unwrap() * (1.0 - e);
        let c = subject_weight(&WeightScheme::Ato, e, false).unwrap() * (0.0 - e);
        assert!((t - (1.0 - e).powi(2)).abs() < 1e-15);
        assert!((c + e * e).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn builtin_weights_positive_and_finite(e in 1e-6f64..(1.0 - 1e-6), a: bool) {
        for s in WeightScheme::BUILT_IN {
            let w = s.subject_weight(e, a).unwrap();
            prop_assert!(w.is_finite() && w > 0.0);
            prop_assert!(s.k_factor(e, a).unwrap().is_finite());
        }
    }

    #[test]
    fn out_of_range_propensity_rejected(e in prop_oneof![-10.0f64..=0.0, 1.0f64..10.0], a: bool) {
        prop_assert!(matches!(subject_weight(&WeightScheme::Ato, e, a), Err(Error::PropensityOutOfRange(_))));
        prop_assert!(matches!(k_factor(&WeightScheme::Ate, e, a), Err(Error::PropensityOutOfRange(_))));
    }
}
