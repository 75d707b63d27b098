use proptest::prelude::*;

use overparam_core::verify::{concavity_inequality_check, relu_kernel_closed_form, subset_mean_variance};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn concavity_holds(la in -3.0f64..3.0, lb in -3.0f64..3.0, p in 0.0f64..1.0) {
        prop_assume!(p != 0.5);
        prop_assert!(concavity_inequality_check(10f64.powf(la), 10f64.powf(lb), p).unwrap());
    }

    #[test]
    fn kernel_is_bounded_and_monotone(r1 in -1.0f64..1.0, r2 in -1.0f64..1.0) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let (klo, khi) = (relu_kernel_closed_form(lo).unwrap(), relu_kernel_closed_form(hi).unwrap());
        prop_assert!(klo <= khi + 1e-15);
        prop_assert!(klo >= 0.0 && khi <= 0.5 + 1e-15);
        prop_assert!(klo >= lo / 2.0 - 1e-15);
    }

    #[test]
    fn subset_variance_matches_formula(raw in prop::collection::vec(-3.0f64..3.0, 2..9), b_frac in 0.0f64..1.0) {
        let n = raw.len();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let u: Vec<f64> = raw.iter().map(|x| x - mean).collect();
        prop_assume!(u.iter().sum::<f64>().abs() <= 1e-12);
        let b = 1 + ((n - 1) as f64 * b_frac).round() as usize;
        let got = subset_mean_variance(&u, b).unwrap();
        prop_assert!((got.exact - got.formula).abs() <= 1e-12);
    }
}

#[test]
fn full_batch_has_zero_variance() {
    let got = subset_mean_variance(&[0.5, -1.5, 1.0], 3).unwrap();
    assert!(got.exact.abs() <= 1e-30);
    assert_eq!(got.formula, 0.0);
}
