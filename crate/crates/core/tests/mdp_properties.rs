use epicontrol::ctmc::Preset;
use epicontrol::mdp::{
    bellman_residual, encode_lp_general, encode_lp_linear, extract_policy, policy_iteration, solve_closed_form,
    solve_encoding, solve_lp, value_iteration, MdpProblem, ValueFunction,
};
use epicontrol::rates::{ActionCostSpec, ProfitSpec, TableAction};
use epicontrol::Error;
use proptest::prelude::*;

fn problem(n: usize, preset: Preset, peak: f64, caps: (f64, f64), cost: ActionCostSpec) -> MdpProblem {
    MdpProblem::new(n, preset, caps.0, caps.1, ProfitSpec::quadratic(peak).unwrap(), cost).unwrap()
}

fn q(p: &MdpProblem, v: &ValueFunction, i: usize, lam: f64, mu: f64, cost: f64) -> f64 {
    let (d, s, u) = p.probs(i, lam, mu);
    let mut acc = p.cost(i) + cost + s * v.values[i];
    if d > 0.0 {
        acc += d * v.values[i - 1];
    }
    if u > 0.0 {
        acc += u * v.values[i + 1];
    }
    acc
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solvers_agree(
        n in 2usize..=64,
        peak in 0.05f64..0.95,
        lam in 0.2f64..3.0,
        mu in 0.2f64..3.0,
        sis in any::<bool>(),
        linear in any::<bool>(),
        c_lam in 0.0f64..0.5,
        c_mu in 0.0f64..0.5,
    ) {
        let preset = if sis { Preset::Sis } else { Preset::Paper };
        let cost = if linear { ActionCostSpec::linear(c_lam, c_mu).unwrap() } else { ActionCostSpec::Zero };
        let p = problem(n, preset, peak, (lam, mu), cost);
        let vi_result = value_iteration(&p, 1e-10);
        if matches!(vi_result, Err(Error::NoProperPolicy)) {
            // Only i* can reach itself; every solver must say so.
            prop_assert!(matches!(policy_iteration(&p), Err(Error::NoProperPolicy)));
            prop_assert!(matches!(solve_lp(&p, None), Err(Error::NoProperPolicy)));
            return Ok(());
        }
        let (vi, vi_pol) = vi_result.unwrap();
        let (pi, _) = policy_iteration(&p).unwrap();
        let (lp, _, _) = solve_lp(&p, None).unwrap();
        prop_assert_eq!(&vi.finite, &pi.finite);
        prop_assert_eq!(&vi.finite, &lp.finite);
        prop_assert!(vi.max_diff(&pi) <= 1e-6, "vi/pi {}", vi.max_diff(&pi));
        prop_assert!(vi.max_diff(&lp) <= 1e-6, "vi/lp {}", vi.max_diff(&lp));
        if preset == Preset::Paper && !linear {
            let (cf, _) = solve_closed_form(&p).unwrap();
            prop_assert!(vi.max_diff(&cf) <= 1e-6);
        }
        // Greedy optimality of the returned policy.
        prop_assert!(bellman_residual(&p, &vi) <= 1e-10);
        for i in 0..=n {
            if vi.finite[i] && i != p.star() {
                let (l, m) = vi_pol.actions[i];
                let chosen = q(&p, &vi, i, l, m, p.action_cost().eval(l, m).unwrap());
                let best = p.actions().iter().map(|a| q(&p, &vi, i, a.lambda, a.mu, a.cost))
                    .filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
                prop_assert!(chosen <= best + 1e-9);
            }
        }
    }

    #[test]
    fn vertices_attain_the_minimum(
        n in 3usize..=30,
        peak in 0.1f64..0.9,
        c_lam in 0.0f64..1.0,
        c_mu in 0.0f64..1.0,
    ) {
        let p = problem(n, Preset::Paper, peak, (1.5, 1.0), ActionCostSpec::linear(c_lam, c_mu).unwrap());
        let (v, _) = value_iteration(&p, 1e-10).unwrap();
        for i in 0..=n {
            if !v.finite[i] || i == p.star() || i == 0 || i == n || !v.finite[i - 1] || !v.finite[i + 1] {
                continue;
            }
            let vert = p.actions().iter().map(|a| q(&p, &v, i, a.lambda, a.mu, a.cost)).fold(f64::INFINITY, f64::min);
            for a in 0..=32 {
                for b in 0..=32 {
                    let (l, m) = (1.5 * a as f64 / 32.0, b as f64 / 32.0);
                    prop_assert!(q(&p, &v, i, l, m, c_lam * l + c_mu * m) >= vert - 1e-9);
                }
            }
        }
    }
}

#[test]
fn monotone_away_from_target() {
    for (n, peak) in [(20, 0.3), (33, 0.5), (50, 0.8)] {
        let p = problem(n, Preset::Paper, peak, (1.0, 1.0), ActionCostSpec::Zero);
        let (v, _) = solve_closed_form(&p).unwrap();
        let s = p.star();
        for i in 1..=n {
            if let Some(d) = v.increment(i) {
                if i <= s {
                    assert!(d <= 0.0, "J increasing below i* at {i}");
                } else {
                    assert!(d >= 0.0, "J decreasing above i* at {i}");
                }
            }
        }
    }
}

#[test]
fn policy_iteration_is_fast() {
    let p = problem(50, Preset::Paper, 0.5, (1.0, 1.0), ActionCostSpec::Zero);
    let (v, _) = policy_iteration(&p).unwrap();
    assert!(v.iterations <= 10, "{} rounds", v.iterations);
    let q = problem(50, Preset::Sis, 0.4, (2.0, 1.0), ActionCostSpec::linear(0.3, 0.2).unwrap());
    let (v, _) = policy_iteration(&q).unwrap();
    assert!(v.iterations <= 10, "{} rounds", v.iterations);
}

#[test]
fn expensive_cure_is_avoided() {
    let p = problem(30, Preset::Sis, 0.4, (2.0, 1.0), ActionCostSpec::linear(0.0, 1e6).unwrap());
    let (_, lp_pol, _) = solve_lp(&p, None).unwrap();
    // Values reach ~1e7 here, so an absolute 1e-10 residual is below rounding.
    let (_, vi_pol) = value_iteration(&p, 1e-6).unwrap();
    assert_eq!(lp_pol.actions, vi_pol.actions);
    for i in 0..p.star() {
        assert_eq!(lp_pol.actions[i].1, 0.0, "state {i}");
    }
}

#[test]
fn expensive_infection_is_avoided_above_target() {
    let p = problem(30, Preset::Paper, 0.4, (1.0, 1.0), ActionCostSpec::linear(1e6, 0.0).unwrap());
    let (v, pol, _) = solve_lp(&p, None).unwrap();
    for i in p.star() + 1..=30 {
        if v.finite[i] {
            assert_eq!(pol.actions[i].0, 0.0, "state {i}");
        }
    }
}

#[test]
fn refined_table_matches_vertex_lp() {
    let (c_lam, c_mu) = (0.2, 0.1);
    let p = problem(20, Preset::Paper, 0.45, (1.0, 1.0), ActionCostSpec::linear(c_lam, c_mu).unwrap());
    let (vert, _) = solve_encoding(&p, &encode_lp_linear(&p, None).unwrap()).unwrap();
    let mut table = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            let (l, m) = (a as f64 / 3.0, b as f64 / 3.0);
            table.push(TableAction { lambda: l, mu: m, cost: c_lam * l + c_mu * m });
        }
    }
    let (grid, _) = solve_encoding(&p, &encode_lp_general(&p, &table, None).unwrap()).unwrap();
    assert!(vert.max_diff(&grid) <= 1e-6);
}

#[test]
fn weight_scaling_keeps_optimizer() {
    let p = problem(25, Preset::Paper, 0.6, (1.0, 1.0), ActionCostSpec::Zero);
    let (a, _, _) = solve_lp(&p, None).unwrap();
    let w: Vec<f64> = (0..=25).map(|i| 1.0 + i as f64 / 10.0).collect();
    let (b, _, _) = solve_lp(&p, Some(&w)).unwrap();
    let w7: Vec<f64> = w.iter().map(|x| 7.0 * x).collect();
    let (c, _, _) = solve_lp(&p, Some(&w7)).unwrap();
    assert!(a.max_diff(&b) <= 1e-6 && b.max_diff(&c) <= 1e-6);
    assert!(solve_lp(&p, Some(&vec![0.0; 26])).is_err());
}

#[test]
fn zero_costs_give_zero_values() {
    // A flat profit makes every stage free.
    let flat = ProfitSpec::linear(0.0).unwrap();
    let p = MdpProblem::new(12, Preset::Paper, 1.0, 1.0, flat, ActionCostSpec::Zero).unwrap();
    let (v, _) = solve_closed_form(&p).unwrap();
    assert!(v.values.iter().zip(&v.finite).all(|(j, f)| !f || *j == 0.0));
    let pol = extract_policy(&p, &v);
    assert_eq!(pol.actions[p.star()], (0.0, 0.0));
}
