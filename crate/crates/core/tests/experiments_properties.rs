use epicontrol::control::{CostFn, ControlPolicy, HorizonCostSpec, StateComponent};
use epicontrol::experiments::{argmax_rows, meanfield_gap, value_gap, GapModel, XStar};
use epicontrol::rates::RateSchedule;
use proptest::prelude::*;

fn model() -> GapModel {
    GapModel {
        lambda: RateSchedule::sinusoidal(2.0, 0.5, 4.0, 0.0).unwrap(),
        mu: RateSchedule::constant(1.0).unwrap(),
        infected0: 0.2,
    }
}

#[test]
fn quadrupling_n_shrinks_the_meanfield_gap() {
    let r = meanfield_gap(&model(), &[100, 400, 1600], 5.0, 20, 11).unwrap();
    let med: Vec<f64> = r.cells.iter().map(|c| c.metrics["median_gap"]).collect();
    for w in med.windows(2) {
        assert!(w[0] >= 1.5 * w[1], "{med:?}");
    }
    assert_eq!(r.pass, Some(true));
}

#[test]
fn terminal_cost_gap_shrinks() {
    let spec = HorizonCostSpec::new(
        CostFn::Zero,
        CostFn::Linear { slope: 1.0, intercept: 0.0 },
        5.0,
        StateComponent::Infected,
    )
    .unwrap();
    let policy = ControlPolicy::Stationary { lambda: 2.0, mu: 1.0 };
    let r = value_gap(&policy, 0.1, &[100, 1600], &spec, 20, 5).unwrap();
    let gaps: Vec<f64> = r.cells.iter().map(|c| c.metrics["gap"]).collect();
    assert!(gaps[1] < gaps[0], "{gaps:?}");
    // No running cost: the ODE cost is the logistic solution at the horizon.
    let (rest, y0) = (0.5, 0.1);
    let exact = rest / (1.0 + (rest / y0 - 1.0) * (-5.0f64).exp());
    assert!((r.cells[0].metrics["ode_cost"] - exact).abs() < 1e-8);
}

#[test]
fn reports_are_self_describing_and_reproducible() {
    let a = meanfield_gap(&model(), &[50, 100], 2.0, 10, 3).unwrap();
    for cell in &a.cells {
        assert_eq!(cell.seeds.len(), 10);
        assert_eq!(cell.metrics["reps"], 10.0);
        assert!(cell.params.contains_key("n"));
    }
    let json: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
    for key in ["name", "config", "cells", "pass"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    let b = meanfield_gap(&model(), &[50, 100], 2.0, 10, 3).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let c = meanfield_gap(&model(), &[50, 100], 2.0, 10, 4).unwrap();
    assert_ne!(a.cells[0].seeds, c.cells[0].seeds);

    let mut csv = Vec::new();
    a.write_csv(&["n", "median_gap", "p90_gap"], &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.lines().any(|l| l == "n,median_gap,p90_gap"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);
}

#[test]
fn too_few_replications_are_rejected() {
    assert!(meanfield_gap(&model(), &[50], 2.0, 9, 1).is_err());
}

proptest! {
    #[test]
    fn argmax_error_obeys_the_envelope(x in 0.01f64..0.99) {
        let ns: Vec<usize> = (1..=300).collect();
        for row in argmax_rows(XStar::Other { value: x }, &ns).unwrap() {
            prop_assert!(row.abs_err <= 1.0 / row.n as f64 + 1e-15, "{:?}", row);
        }
    }
}
