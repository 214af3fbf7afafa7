use epicontrol::meanfield::{
    field_residual, integrate, lipschitz_spot_check, measure_delta, FieldForm, VectorField,
};
use epicontrol::rates::RateSchedule;
use proptest::prelude::*;

fn field(lambda: RateSchedule, mu: RateSchedule, c: f64, form: FieldForm) -> VectorField {
    VectorField::new(lambda, mu, c, form).unwrap()
}

fn constant(lam: f64, mu: f64, c: f64, form: FieldForm) -> VectorField {
    field(RateSchedule::constant(lam).unwrap(), RateSchedule::constant(mu).unwrap(), c, form)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn pair_and_reduced_forms_agree(
        lam_base in 0.5f64..3.0,
        lam_amp in 0.0f64..0.9,
        lam_period in 1.0f64..10.0,
        mu_base in 0.2f64..2.0,
        mu_amp in 0.0f64..0.9,
        phase in 0.0f64..6.3,
        c in 0.5f64..2.0,
        frac in 0.0f64..=1.0,
    ) {
        let lam = RateSchedule::sinusoidal(lam_base, lam_amp * lam_base, lam_period, 0.0).unwrap();
        let mu = RateSchedule::sinusoidal(mu_base, mu_amp * mu_base, 7.0, phase).unwrap();
        let x0 = frac * c;
        let pair = field(lam.clone(), mu.clone(), c, FieldForm::Pair);
        let reduced = field(lam, mu, c, FieldForm::Reduced);
        let tp = integrate(&pair, &[x0, c - x0], 20.0, 1e-10).unwrap();
        let tr = integrate(&reduced, &[x0], 20.0, 1e-10).unwrap();
        for k in 0..tr.len() {
            let t = tr.times[k];
            let xp = tp.sample(t)[0];
            prop_assert!((xp - tr.state(k)[0]).abs() <= 2e-8, "t = {}: {} vs {}", t, xp, tr.state(k)[0]);
        }
        for k in 0..tp.len() {
            let z = tp.state(k);
            prop_assert!((z[0] + z[1] - c).abs() <= 1e-9);
        }
    }

    #[test]
    fn constant_rates_approach_monotonically(
        lam in 0.2f64..3.0,
        mu in 0.0f64..3.0,
        c in 0.5f64..2.0,
        frac in 0.0f64..=1.0,
    ) {
        let f = constant(lam, mu, c, FieldForm::Reduced);
        let target = c.min(mu / lam);
        let x0 = frac * c;
        let tr = integrate(&f, &[x0], 50.0, 1e-10).unwrap();
        let up = x0 < target;
        // Near the rest point the path may wobble by the local error tolerance.
        let slack = 1e-9;
        for k in 1..tr.len() {
            let (a, b) = (tr.state(k - 1)[0], tr.state(k)[0]);
            if up {
                prop_assert!(b >= a - slack && b <= target + slack);
            } else {
                prop_assert!(b <= a + slack && b >= target - slack);
            }
        }
    }
}

#[test]
fn halving_tolerance_halves_the_defect() {
    let f = constant(2.0, 0.5, 1.0, FieldForm::Reduced);
    let coarse = field_residual(&f, &integrate(&f, &[0.99], 20.0, 1e-8).unwrap());
    let fine = field_residual(&f, &integrate(&f, &[0.99], 20.0, 5e-9).unwrap());
    assert!(coarse >= 2.0 * fine, "{coarse:e} vs {fine:e}");
}

#[test]
fn equilibrium_has_no_defect() {
    let f = constant(2.0, 1.0, 1.0, FieldForm::Reduced);
    let tr = integrate(&f, &[0.5], 10.0, 1e-10).unwrap();
    assert!(field_residual(&f, &tr) <= 1e-14);
}

#[test]
fn delta_grows_with_amplitude() {
    let mu = RateSchedule::constant(0.8).unwrap();
    let deltas: Vec<f64> = [0.0, 0.2, 0.5, 1.0]
        .iter()
        .map(|&amp| {
            let f = field(RateSchedule::sinusoidal(2.0, amp, 4.0, 0.0).unwrap(), mu.clone(), 1.0, FieldForm::Reduced);
            let tr = integrate(&f, &[0.9], 60.0, 1e-10).unwrap();
            measure_delta(&tr, &f, 40.0).unwrap()
        })
        .collect();
    assert!(deltas[0] <= 1e-6, "{deltas:?}");
    assert!(deltas.windows(2).all(|w| w[0] < w[1]), "{deltas:?}");
}

#[test]
fn lipschitz_estimate_matches_the_slope_bound() {
    // The reduced field (lam x - mu)(x - c) has |F'| maximal at x = 0.
    for (lam, mu, c) in [(2.0, 1.0, 1.0), (0.5, 3.0, 2.0), (1.0, 0.0, 1.0)] {
        let f = constant(lam, mu, c, FieldForm::Pair);
        let bound = lam * c + mu;
        let est = lipschitz_spot_check(&f, 0.0, 1000);
        assert!(est <= bound + 1e-9 && est >= 0.99 * bound, "{est} vs {bound}");
    }
}
