//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::time::{Duration, Instant};

use epicontrol::control::{
    evaluate_ode, evaluate_ode_cost, ideal_trajectory_controller, simulate_ode, stationary_one_sided,
    ControlPolicy, CostFn, HorizonCostSpec, RateConstrainedParams, StateComponent, ThetaBox, TrackerDecision,
};
use epicontrol::ctmc::Preset;
use epicontrol::experiments::{
    argmax_rows, argmax_scan, convergent_dips, meanfield_gap, value_gap, write_argmax_csv, ExperimentReport,
    GapModel, XStar, FIBONACCI_CHECKS,
};
use epicontrol::lp::solve_simplex;
use epicontrol::mdp::{
    bellman_residual, encode_lp_general, encode_lp_linear, solve_closed_form, solve_encoding, solve_lp,
    value_iteration, MdpProblem,
};
use epicontrol::meanfield::{integrate, measure_delta, FieldForm, OdeTrajectory, VectorField};
use epicontrol::rates::{ActionCostSpec, ProfitSpec, RateSchedule, TableAction};
use epicontrol::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

fn zero_cost_problem(n: usize, preset: Preset, cost: ActionCostSpec) -> MdpProblem {
    MdpProblem::new(n, preset, 1.0, 1.0, ProfitSpec::quadratic(0.3).unwrap(), cost).unwrap()
}

fn closed_vs_iterative() -> Result<Outcome> {
    let start = Instant::now();
    let mut worst_diff: f64 = 0.0;
    let mut worst_res: f64 = 0.0;
    for n in [4, 16, 50] {
        let p = zero_cost_problem(n, Preset::Paper, ActionCostSpec::Zero);
        let (cf, _) = solve_closed_form(&p)?;
        let (vi, _) = value_iteration(&p, 1e-10)?;
        if cf.finite != vi.finite {
            return outcome(false, format!("finite masks differ at n={n}"));
        }
        worst_diff = worst_diff.max(cf.max_diff(&vi));
        worst_res = worst_res.max(bellman_residual(&p, &vi));
    }
    let t = start.elapsed();
    outcome(
        worst_diff <= 1e-6 && worst_res <= 1e-10 && within(t, 1.0),
        format!("max |J_closed - J_vi| = {worst_diff:.2e}, residual {worst_res:.2e}, {:.2}s", t.as_secs_f64()),
    )
}

fn lp_agreement() -> Result<Outcome> {
    let start = Instant::now();
    let p = zero_cost_problem(50, Preset::Paper, ActionCostSpec::Zero);
    let (vi, _) = value_iteration(&p, 1e-10)?;
    let mut worst_diff: f64 = 0.0;
    let mut worst_res: f64 = 0.0;
    let mut vertex = true;
    for cost in [ActionCostSpec::Zero, ActionCostSpec::linear(0.0, 0.0)?] {
        let q = zero_cost_problem(50, Preset::Paper, cost);
        let (v, pol, _) = solve_lp(&q, None)?;
        worst_diff = worst_diff.max(vi.max_diff(&v));
        worst_res = worst_res.max(bellman_residual(&q, &v));
        vertex &= pol
            .actions
            .iter()
            .all(|&(l, m)| (l == 0.0 || l == 1.0) && (m == 0.0 || m == 1.0));
    }
    let t = start.elapsed();
    outcome(
        worst_diff <= 1e-6 && worst_res <= 1e-8 && vertex && within(t, 5.0),
        format!(
            "max |J_lp - J_vi| = {worst_diff:.2e}, residual {worst_res:.2e}, vertex policies {vertex}, {:.2}s",
            t.as_secs_f64()
        ),
    )
}

fn general_lp() -> Result<Outcome> {
    let p = zero_cost_problem(50, Preset::Paper, ActionCostSpec::Zero);
    let mut table: Vec<TableAction> = p
        .actions()
        .iter()
        .map(|a| TableAction {
            lambda: a.lambda,
            mu: a.mu,
            cost: 0.0,
        })
        .collect();
    table.reverse();
    let lin = encode_lp_linear(&p, None)?;
    let gen = encode_lp_general(&p, &table, None)?;
    let (a, b) = (solve_simplex(&lin.lp)?, solve_simplex(&gen.lp)?);
    let (va, _) = solve_encoding(&p, &lin)?;
    let (vb, _) = solve_encoding(&p, &gen)?;
    let d = (a.objective - b.objective).abs();
    let dv = va.max_diff(&vb);
    outcome(
        d <= 1e-9 && dv <= 1e-9,
        format!("objective difference {d:.2e}, value difference {dv:.2e}"),
    )
}

fn meanfield_gap_trend() -> Result<Outcome> {
    let start = Instant::now();
    let model = GapModel {
        lambda: RateSchedule::constant(2.0)?,
        mu: RateSchedule::constant(1.0)?,
        infected0: 0.1,
    };
    let r = meanfield_gap(&model, &[100, 1000, 10_000], 10.0, 30, 2024)?;
    let med: Vec<f64> = r.cells.iter().map(|c| c.metrics["median_gap"]).collect();
    let t = start.elapsed();
    let pass = med.windows(2).all(|w| w[1] < w[0]) && med[2] <= med[0] / 3.0 && within(t, 120.0);
    outcome(
        pass,
        format!("medians {:.4e} {:.4e} {:.4e}, {:.1}s", med[0], med[1], med[2], t.as_secs_f64()),
    )
}

fn constant_field(lam: f64, mu: f64) -> VectorField {
    VectorField::new(
        RateSchedule::constant(lam).unwrap(),
        RateSchedule::constant(mu).unwrap(),
        1.0,
        FieldForm::Reduced,
    )
    .unwrap()
}

fn value_at(traj: &OdeTrajectory, t: f64) -> f64 {
    traj.sample(t)[0]
}

fn sinusoid_delta(period: f64) -> Result<f64> {
    let f = VectorField::new(
        RateSchedule::constant(2.0)?,
        RateSchedule::sinusoidal(1.0, 0.5, period, 0.0)?,
        1.0,
        FieldForm::Reduced,
    )?;
    let horizon = 5.0 * period + 40.0;
    let tr = integrate(&f, &[0.9], horizon, 1e-10)?;
    measure_delta(&tr, &f, horizon - 2.0 * period)
}

fn stability_cases() -> Result<Outcome> {
    let mut errs = Vec::new();
    // Cases 1, 2 and 4: limit min(c, mu / lambda) by t = 200.
    for (lam, mu, x0) in [(2.0, 1.0, 0.9), (1.0, 2.0, 0.3), (1.0, 0.0, 0.7)] {
        let tr = integrate(&constant_field(lam, mu), &[x0], 200.0, 1e-10)?;
        let limit = f64::min(1.0, mu / lam);
        errs.push((value_at(&tr, 200.0) - limit).abs());
    }
    let ok_exp = errs.iter().all(|&e| e <= 1e-4);
    let tr = integrate(&constant_field(1.0, 1.0), &[0.5], 1000.0, 1e-10)?;
    let e3 = (value_at(&tr, 1000.0) - 1.0).abs();
    let d_slow = sinusoid_delta(20.0)?;
    let d_fast = sinusoid_delta(10.0)?;
    outcome(
        ok_exp && e3 <= 1e-3 && d_slow < d_fast,
        format!(
            "case errors {:.1e} {:.1e} {:.1e}, case 3 {e3:.2e}, delta(P) {d_slow:.4} < delta(P/2) {d_fast:.4}",
            errs[0], errs[1], errs[2]
        ),
    )
}

fn stationary_brute_force() -> Result<Outcome> {
    let lin = ProfitSpec::linear(1.0)?;
    let cases = [
        (ActionCostSpec::linear(0.0, 0.1)?, 1.0, 2.0),
        (ActionCostSpec::linear(0.0, 2.0)?, 1.0, 2.0),
        (ActionCostSpec::Zero, 1.0, 2.0),
    ];
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for (cost, lam, cap) in &cases {
        let (mu, val) = stationary_one_sided(&lin, cost, *lam, *cap)?;
        let c_mu = match cost {
            ActionCostSpec::Linear { c_mu, .. } => *c_mu,
            _ => 0.0,
        };
        let g = |m: f64| lin.eval((m / lam).min(1.0)) - c_mu * m;
        let m = 100_000;
        let h = cap / m as f64;
        let (mut best_mu, mut best) = (0.0, g(0.0));
        for k in 1..=m {
            let v = g(k as f64 * h);
            if v > best {
                best = v;
                best_mu = k as f64 * h;
            }
        }
        worst = worst.max((mu - best_mu).abs());
        pass &= (mu - best_mu).abs() <= h && val >= best - 1e-12;
    }
    outcome(pass, format!("max |mu* - mu_grid| = {worst:.2e} (grid step 2e-5)"))
}

fn theorem4_sweep() -> Result<Outcome> {
    let profit = ProfitSpec::quadratic(0.5)?;
    let spec = HorizonCostSpec::new(
        CostFn::ProfitGap { profit },
        CostFn::Zero,
        10.0,
        StateComponent::Susceptible,
    )?;
    let f = constant_field(1.0, 0.5);
    let mut gaps = Vec::new();
    for kappa in [1.0, 10.0, 100.0] {
        let pol = ideal_trajectory_controller(0.5, kappa, 1.0, 1.0)?;
        // The ideal objective is 0: the running cost vanishes at x*.
        gaps.push(evaluate_ode_cost(&pol, &f, &[0.1], &spec)?);
    }
    let pass = gaps.windows(2).all(|w| w[1] < w[0]) && gaps[2] <= gaps[0] / 5.0;
    outcome(pass, format!("gaps {:.4e} {:.4e} {:.4e}", gaps[0], gaps[1], gaps[2]))
}

fn target_at(decisions: &[TrackerDecision], t: f64) -> f64 {
    let k = decisions.partition_point(|d| d.t <= t);
    decisions[k.saturating_sub(1)].target
}

/// Post-burn-in sup of `|x - x*|` and of `|x - target(t)|`.
fn deviations(traj: &OdeTrajectory, decisions: &[TrackerDecision], x_star: f64, burn_in: f64, end: f64) -> (f64, f64) {
    let (mut from_star, mut from_target): (f64, f64) = (0.0, 0.0);
    for k in 0..traj.len() {
        let t = traj.times[k];
        if t < burn_in || t > end {
            continue;
        }
        let x = traj.state(k)[0];
        from_star = from_star.max((x - x_star).abs());
        if !decisions.is_empty() {
            from_target = from_target.max((x - target_at(decisions, t)).abs());
        }
    }
    (from_star, from_target)
}

fn theorem5() -> Result<Outcome> {
    let x_star = 0.5;
    let profit = ProfitSpec::quadratic(x_star)?;
    let lam_cap = 2.0;
    let f = constant_field(1.0, 0.5);
    let params = |w: f64| RateConstrainedParams {
        profit: profit.clone(),
        theta: ThetaBox::symmetric(w).unwrap(),
        lambda0: lam_cap,
        mu0: 0.1 * lam_cap,
        lambda_max: lam_cap,
        mu_max: lam_cap,
        rate_floor: 1e-3,
        control_step: 0.05,
        hysteresis: 1e-3,
    };
    let (burn_in, horizon) = (2.0, 10.0);
    let ideal = ideal_trajectory_controller(x_star, lam_cap, 1.0, 1.0)?;
    let (tu, _) = simulate_ode(&ideal, &f, &[0.1], horizon, 1e-10)?;
    let (dev_unc, _) = deviations(&tu, &[], x_star, burn_in, horizon);

    let loose = ControlPolicy::RateConstrained(params(1000.0));
    let (tl, dl) = simulate_ode(&loose, &f, &[0.1], horizon, 1e-10)?;
    let (dev_loose, _) = deviations(&tl, &dl, x_star, burn_in, horizon);
    let loose_ok = (dev_loose - dev_unc).abs() <= 0.1 * dev_unc;

    let tight = ControlPolicy::RateConstrained(params(0.01));
    let (tt, dt) = simulate_ode(&tight, &f, &[0.1], horizon, 1e-10)?;
    let (dev_star, dev_target) = deviations(&tt, &dt, x_star, burn_in, horizon);
    let unreachable = dt.iter().all(|d| d.target < x_star);
    let tight_ok = unreachable && dev_target <= dev_star;
    outcome(
        loose_ok && tight_ok,
        format!(
            "loose {dev_loose:.4e} vs unconstrained {dev_unc:.4e}; tight |x - target| {dev_target:.4e} <= |x - x*| {dev_star:.4e}"
        ),
    )
}

fn figures() -> Result<Outcome> {
    let start = Instant::now();
    let ns: Vec<usize> = (1..=1000).collect();
    let quarter = XStar::Rational { p: 1, q: 4 };
    let q = convergent_dips(&argmax_rows(quarter, &ns)?, quarter)?;
    let g = convergent_dips(&argmax_rows(XStar::Golden, &ns)?, XStar::Golden)?;
    let fib: Vec<bool> = FIBONACCI_CHECKS
        .iter()
        .map(|n| g.dips.iter().any(|d| d.n == *n && d.dip))
        .collect();
    let t = start.elapsed();
    outcome(
        q.envelope_ok && g.envelope_ok && q.exact_ok && q.exact_hits.len() == 250 && g.dips_ok && within(t, 1.0),
        format!(
            "envelope {} / {}, exact zeros at {} multiples of 4, Fibonacci dips {fib:?}, {:.2}s",
            q.envelope_ok,
            g.envelope_ok,
            q.exact_hits.len(),
            t.as_secs_f64()
        ),
    )
}

fn theorem2_policy() -> (ControlPolicy, HorizonCostSpec) {
    let pol = ideal_trajectory_controller(0.5, 1.0, 2.0, 1.0).unwrap();
    let spec = HorizonCostSpec::new(
        CostFn::Quadratic {
            center: 0.5,
            weight: 1.0,
        },
        CostFn::Zero,
        10.0,
        StateComponent::Infected,
    )
    .unwrap();
    (pol, spec)
}

fn theorem2_trend() -> Result<Outcome> {
    let start = Instant::now();
    let (pol, spec) = theorem2_policy();
    let r = value_gap(&pol, 0.1, &[100, 400, 1600], &spec, 200, 7)?;
    let gaps: Vec<f64> = r.cells.iter().map(|c| c.metrics["gap"]).collect();
    let t = start.elapsed();
    outcome(
        gaps.windows(2).all(|w| w[1] < w[0]) && within(t, 180.0),
        format!(
            "median gaps {:.4e} {:.4e} {:.4e}, {:.1}s",
            gaps[0],
            gaps[1],
            gaps[2],
            t.as_secs_f64()
        ),
    )
}

fn render(r: &ExperimentReport, header: &[&str]) -> Vec<u8> {
    let mut out = r.to_json().into_bytes();
    r.write_csv(header, &mut out).unwrap();
    out
}

fn run_all_experiments() -> Result<Vec<u8>> {
    let model = GapModel {
        lambda: RateSchedule::sinusoidal(2.0, 0.5, 4.0, 0.0)?,
        mu: RateSchedule::constant(1.0)?,
        infected0: 0.2,
    };
    let mut bytes = render(&meanfield_gap(&model, &[50, 200], 5.0, 12, 99)?, &["n", "median_gap", "p90_gap"]);
    let (pol, spec) = theorem2_policy();
    bytes.extend(render(&value_gap(&pol, 0.1, &[50, 200], &spec, 12, 99)?, &["n", "gap", "ci_halfwidth"]));
    bytes.extend(render(&argmax_scan(XStar::Golden, &(1..=200).collect::<Vec<_>>())?, &["n", "abs_err"]));
    write_argmax_csv(&argmax_rows(XStar::Golden, &[13, 21])?, &mut bytes).unwrap();
    let f = constant_field(1.0, 0.5);
    let tight = ControlPolicy::RateConstrained(RateConstrainedParams {
        profit: ProfitSpec::quadratic(0.5)?,
        theta: ThetaBox::symmetric(0.1)?,
        lambda0: 1.0,
        mu0: 0.1,
        lambda_max: 2.0,
        mu_max: 2.0,
        rate_floor: 1e-3,
        control_step: 0.05,
        hysteresis: 1e-3,
    });
    let e = evaluate_ode(&tight, &f, &[0.1], &theorem2_policy().1, 1e-9)?;
    bytes.extend(format!("{:?}", e.cost).into_bytes());
    Ok(bytes)
}

fn determinism() -> Result<Outcome> {
    let first = run_all_experiments()?;
    let second = run_all_experiments()?;
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("thread pool")
        .install(run_all_experiments)?;
    outcome(
        first == second && first == single,
        format!("{} bytes, repeated and single-threaded runs identical", first.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Result<Outcome>); 11] = [
        ("closed form vs value iteration", closed_vs_iterative),
        ("LP agreement with value iteration", lp_agreement),
        ("table LP equals vertex LP", general_lp),
        ("mean-field gap shrinks with n", meanfield_gap_trend),
        ("stability cases and delta", stability_cases),
        ("stationary one-sided policy vs brute force", stationary_brute_force),
        ("ideal-trajectory scale sweep", theorem4_sweep),
        ("rate-constrained tracking", theorem5),
        ("argmax envelope, exact hits and dips", figures),
        ("value gap shrinks with n", theorem2_trend),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("{} {:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" }, k + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
