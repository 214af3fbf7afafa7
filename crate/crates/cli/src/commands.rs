use epicontrol::control::{evaluate_ode, simulate_ode, TrackerDecision};
use epicontrol::ctmc::{simulate as simulate_chain, simulate_controlled, InitialCondition, Preset, Trajectory};
use epicontrol::experiments::{
    argmax_rows, argmax_scan, convergent_dips, derive_seed, meanfield_gap, value_gap, write_argmax_csv, GapModel,
};
use epicontrol::mdp::{
    bellman_residual, policy_iteration, solve_closed_form, solve_lp, value_iteration, write_value_csv, Policy,
    ValueFunction,
};
use epicontrol::meanfield::{
    classify, field_residual, integrate, measure_delta, write_trajectory_csv, OdeTrajectory, StabilityCase,
    VectorField,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::Config;
use crate::output::{Format, RunDir};
use crate::resolve;
use crate::CliError;

/// Agreement threshold between solvers on finite states.
pub const AGREEMENT_TOL: f64 = 1e-6;

pub struct Run {
    pub cfg: Config,
    pub out: RunDir,
    pub format: Format,
    pub seed: u64,
}

/// What a command reports back: its criteria outcome and a JSON summary.
pub struct Outcome {
    pub pass: bool,
    pub summary: Value,
}

fn reps(cfg: &Config, key: &str) -> Result<usize, CliError> {
    match cfg.usize(key)? {
        0 => Err(CliError::Config(format!("`{key}` must be at least 1"))),
        r => Ok(r),
    }
}

fn rep_seeds(seed: u64, reps: usize) -> Vec<u64> {
    (0..reps as u64).map(|r| derive_seed(seed, 0, r)).collect()
}

fn stem(prefix: &str, r: usize, reps: usize) -> String {
    if reps == 1 {
        prefix.to_string()
    } else {
        format!("{prefix}_{r:04}")
    }
}

fn write_chain(run: &mut Run, name: &str, tr: &Trajectory) -> Result<(), CliError> {
    if run.format.csv() {
        run.out.write_text(&format!("{name}.csv"), |w| tr.write_csv(w))?;
    }
    if run.format.json() {
        run.out.write_json(
            &format!("{name}.json"),
            json!({ "n": tr.n, "seed": tr.seed, "horizon": tr.horizon, "times": tr.times, "states": tr.states }),
        )?;
    }
    Ok(())
}

fn write_ode(run: &mut Run, name: &str, field: &VectorField, traj: &OdeTrajectory) -> Result<(), CliError> {
    if run.format.csv() {
        run.out.write_text(&format!("{name}.csv"), |w| write_trajectory_csv(field, traj, w))?;
    }
    if run.format.json() {
        let (x, y): (Vec<f64>, Vec<f64>) = (0..traj.len())
            .map(|k| (field.x_of(traj.state(k)), field.y_of(traj.state(k))))
            .unzip();
        run.out.write_json(&format!("{name}.json"), json!({ "t": traj.times, "x": x, "y": y }))?;
    }
    Ok(())
}

fn write_decisions(run: &mut Run, decisions: &[TrackerDecision]) -> Result<(), CliError> {
    if decisions.is_empty() {
        return Ok(());
    }
    if run.format.csv() {
        run.out.write_text("decisions.csv", |w| {
            writeln!(w, "t,lambda,mu,dlambda,dmu,target")?;
            for d in decisions {
                writeln!(w, "{},{},{},{},{},{}", d.t, d.lambda, d.mu, d.dlambda, d.dmu, d.target)?;
            }
            Ok(())
        })?;
    }
    if run.format.json() {
        run.out.write_json("decisions.json", json!({ "decisions": decisions }))?;
    }
    Ok(())
}

pub fn simulate(run: &mut Run) -> Result<Outcome, CliError> {
    let model = resolve::process_model(&run.cfg)?;
    let horizon = resolve::positive(&run.cfg, "model.horizon")?;
    let reps = reps(&run.cfg, "run.reps")?;
    let seeds = rep_seeds(run.seed, reps);
    let trajectories = seeds
        .par_iter()
        .map(|&s| simulate_chain(&model, horizon, s))
        .collect::<Result<Vec<_>, _>>()?;
    for (r, tr) in trajectories.iter().enumerate() {
        write_chain(run, &stem("trajectory", r, reps), tr)?;
    }
    Ok(Outcome {
        pass: true,
        summary: json!({
            "reps": reps,
            "seeds": seeds,
            "events": trajectories.iter().map(|t| t.num_events()).collect::<Vec<_>>(),
            "final_states": trajectories.iter().map(|t| t.final_state()).collect::<Vec<_>>(),
        }),
    })
}

fn value_json(v: &ValueFunction, p: &Policy) -> Value {
    json!({
        "J": v.values.iter().zip(&v.finite).map(|(j, f)| if *f { json!(j) } else { json!("inf") }).collect::<Vec<_>>(),
        "finite": v.finite,
        "actions": p.actions,
        "masked": p.masked,
    })
}

pub fn solve(run: &mut Run) -> Result<Outcome, CliError> {
    let cfg = &run.cfg;
    let p = resolve::mdp_problem(cfg)?;
    let tol = resolve::positive(cfg, "solver.tol")?;
    let weights = match cfg.get("solver.weights") {
        Some(_) => Some(cfg.f64_list("solver.weights")?),
        None => None,
    };
    let closed_ok = p.preset() == Preset::Paper && cfg.str("cost.kind")? == "zero";
    let methods: Vec<&str> = match cfg.str("solver.method")? {
        "all" if closed_ok => vec!["closed", "vi", "pi", "lp"],
        "all" => vec!["vi", "pi", "lp"],
        "closed" if !closed_ok => {
            return Err(CliError::Config(
                "`solver.method = closed` needs model.preset = paper and cost.kind = zero".into(),
            ))
        }
        m @ ("closed" | "vi" | "pi" | "lp") => vec![m],
        other => {
            return Err(CliError::Config(format!(
                "`solver.method`: expected closed, vi, pi, lp or all, got {other:?}"
            )))
        }
    };
    let mut solved: Vec<(&str, ValueFunction)> = Vec::new();
    let mut per_method = serde_json::Map::new();
    for m in methods {
        let (v, pol, mut info) = match m {
            "closed" => {
                let (v, pol) = solve_closed_form(&p)?;
                (v, pol, json!({}))
            }
            "vi" => {
                let (v, pol) = value_iteration(&p, tol)?;
                let sweeps = v.iterations;
                (v, pol, json!({ "sweeps": sweeps }))
            }
            "pi" => {
                let (v, pol) = policy_iteration(&p)?;
                let rounds = v.iterations;
                (v, pol, json!({ "rounds": rounds }))
            }
            _ => {
                let (v, pol, sol) = solve_lp(&p, weights.as_deref())?;
                let lp = json!({
                    "status": sol.status,
                    "objective": sol.objective,
                    "dual_objective": sol.dual_objective,
                    "pivots": sol.iterations,
                    "variables": sol.x.len(),
                    "rows": sol.dual.len(),
                });
                (v, pol, json!({ "lp": lp }))
            }
        };
        info["bellman_residual"] = json!(bellman_residual(&p, &v));
        info["finite_states"] = json!(v.finite.iter().filter(|f| **f).count());
        if run.format.csv() {
            run.out.write_text(&format!("value_{m}.csv"), |w| write_value_csv(&v, &pol, w))?;
        }
        if run.format.json() {
            run.out.write_json(&format!("value_{m}.json"), value_json(&v, &pol))?;
        }
        per_method.insert(m.to_string(), info);
        solved.push((m, v));
    }
    let mut rows = Vec::new();
    for a in 0..solved.len() {
        for b in a + 1..solved.len() {
            let (ma, va) = &solved[a];
            let (mb, vb) = &solved[b];
            rows.push((*ma, *mb, va.max_diff(vb), va.finite == vb.finite));
        }
    }
    let pass = rows.iter().all(|r| r.2 <= AGREEMENT_TOL && r.3);
    if !rows.is_empty() {
        if run.format.csv() {
            run.out.write_text("agreement.csv", |w| {
                writeln!(w, "method_a,method_b,max_diff,same_finite_states,pass")?;
                for (a, b, d, same) in &rows {
                    writeln!(w, "{a},{b},{d},{same},{}", *d <= AGREEMENT_TOL && *same)?;
                }
                Ok(())
            })?;
        }
        if run.format.json() {
            let table: Vec<Value> = rows
                .iter()
                .map(|(a, b, d, same)| json!({ "method_a": a, "method_b": b, "max_diff": d, "same_finite_states": same }))
                .collect();
            run.out.write_json("agreement.json", json!({ "rows": table, "tol": AGREEMENT_TOL, "pass": pass }))?;
        }
    }
    Ok(Outcome {
        pass,
        summary: json!({
            "n": p.n(),
            "target_state": p.star(),
            "nu": p.nu(),
            "methods": per_method,
            "agreement_pass": pass,
        }),
    })
}

pub fn ode(run: &mut Run) -> Result<Outcome, CliError> {
    let cfg = &run.cfg;
    let field = resolve::field(cfg, resolve::form(cfg)?)?;
    let z0 = resolve::initial_state(&field, "ode.x0", cfg.f64("ode.x0")?)?;
    let horizon = resolve::positive(cfg, "ode.horizon")?;
    let tol = resolve::positive(cfg, "ode.tol")?;
    let burn_in = cfg.opt_f64("ode.burn_in")?.unwrap_or(0.5 * horizon);
    let xi = cfg.f64("ode.xi")?;
    let traj = integrate(&field, &z0, horizon, tol)?;
    let mut report = classify(&field, xi, horizon)?;
    if report.case == StabilityCase::Interior {
        report.delta_measured = Some(measure_delta(&traj, &field, burn_in)?);
    }
    write_ode(run, "trajectory", &field, &traj)?;
    let residual = field_residual(&field, &traj);
    let mut stability = serde_json::to_value(&report).expect("report serializes");
    stability["field_residual"] = json!(residual);
    stability["burn_in"] = json!(burn_in);
    run.out.write_json("stability.json", stability)?;
    let end = traj.final_state();
    Ok(Outcome {
        pass: true,
        summary: json!({
            "case": report.case,
            "final_x": field.x_of(end),
            "field_residual": residual,
            "steps": traj.stats.accepted,
        }),
    })
}

pub fn control_evaluate(run: &mut Run) -> Result<Outcome, CliError> {
    let cfg = &run.cfg;
    let policy = resolve::policy(cfg)?;
    let spec = resolve::horizon_spec(cfg)?;
    let field = resolve::field(cfg, resolve::form(cfg)?)?;
    let z0 = resolve::initial_state(&field, "control.x0", cfg.f64("control.x0")?)?;
    let tol = resolve::positive(cfg, "control.tol")?;
    let e = evaluate_ode(&policy, &field, &z0, &spec, tol)?;
    write_ode(run, "trajectory", &field, &e.trajectory)?;
    write_decisions(run, &e.decisions)?;
    run.out.write_json("cost.json", json!({ "cost": e.cost, "policy": policy, "objective": spec }))?;
    Ok(Outcome {
        pass: true,
        summary: json!({ "cost": e.cost, "final_x": field.x_of(e.trajectory.final_state()) }),
    })
}

pub fn control_simulate(run: &mut Run) -> Result<Outcome, CliError> {
    let cfg = &run.cfg;
    let policy = resolve::policy(cfg)?;
    let field = resolve::field(cfg, resolve::form(cfg)?)?;
    let x0 = cfg.f64("control.x0")?;
    let z0 = resolve::initial_state(&field, "control.x0", x0)?;
    let horizon = resolve::positive(cfg, "control.horizon")?;
    let tol = resolve::positive(cfg, "control.tol")?;
    let mut model = resolve::process_model(cfg)?;
    // The chain counts the other compartment and starts where the ODE does.
    let n = model.n;
    model.initial = InitialCondition::State(((field.c - x0) / field.c * n as f64).round() as usize);
    let reps = reps(cfg, "run.reps")?;
    let (traj, decisions) = simulate_ode(&policy, &field, &z0, horizon, tol)?;
    let seeds = rep_seeds(run.seed, reps);
    let chains = seeds
        .par_iter()
        .map(|&s| simulate_controlled(&model, &policy, horizon, s))
        .collect::<Result<Vec<_>, _>>()?;
    write_ode(run, "ode_trajectory", &field, &traj)?;
    write_decisions(run, &decisions)?;
    for (r, tr) in chains.iter().enumerate() {
        write_chain(run, &stem("chain", r, reps), tr)?;
    }
    let finals: Vec<f64> = chains.iter().map(|t| t.final_state() as f64 / n as f64).collect();
    let mean_final = finals.iter().sum::<f64>() / finals.len() as f64;
    Ok(Outcome {
        pass: true,
        summary: json!({
            "reps": reps,
            "seeds": seeds,
            "ode_final_y": field.y_of(traj.final_state()),
            "chain_mean_final_frac": mean_final,
        }),
    })
}

fn experiment_lists(cfg: &Config) -> Result<(Vec<usize>, usize, u64), CliError> {
    Ok((cfg.usize_list("experiment.n_list")?, reps(cfg, "experiment.reps")?, cfg.u64("run.seed")?))
}

pub fn experiment_meanfield(run: &mut Run) -> Result<Outcome, CliError> {
    let cfg = &run.cfg;
    let model = GapModel {
        lambda: resolve::schedule(cfg, "model.lambda")?,
        mu: resolve::schedule(cfg, "model.mu")?,
        infected0: cfg.f64("experiment.infected0")?,
    };
    let (n_list, reps, seed) = experiment_lists(cfg)?;
    let horizon = resolve::positive(cfg, "experiment.horizon")?;
    let report = meanfield_gap(&model, &n_list, horizon, reps, seed)?;
    finish_report(run, report, "meanfield_gap.csv", &["n", "median_gap", "p90_gap"])
}

pub fn experiment_value(run: &mut Run) -> Result<Outcome, CliError> {
    let cfg = &run.cfg;
    let policy = resolve::policy(cfg)?;
    let spec = resolve::horizon_spec(cfg)?;
    let (n_list, reps, seed) = experiment_lists(cfg)?;
    let report = value_gap(&policy, cfg.f64("experiment.infected0")?, &n_list, &spec, reps, seed)?;
    finish_report(run, report, "value_gap.csv", &["n", "gap", "ci_halfwidth"])
}

fn finish_report(
    run: &mut Run,
    report: epicontrol::experiments::ExperimentReport,
    csv: &str,
    header: &[&str],
) -> Result<Outcome, CliError> {
    if run.format.csv() {
        run.out.write_text(csv, |w| report.write_csv(header, w))?;
    }
    let value: Value = serde_json::from_str(&report.to_json()).expect("report is valid json");
    run.out.write_json("report.json", value)?;
    Ok(Outcome {
        pass: report.pass.unwrap_or(true),
        summary: json!({ "name": report.name, "pass": report.pass, "cells": report.cells.len() }),
    })
}

pub fn experiment_argmax(run: &mut Run) -> Result<Outcome, CliError> {
    let cfg = &run.cfg;
    let x_star = resolve::xstar(cfg)?;
    let n_max = cfg.usize("experiment.n_max")?;
    if n_max == 0 {
        return Err(CliError::Config("`experiment.n_max` must be at least 1".into()));
    }
    let ns: Vec<usize> = (1..=n_max).collect();
    let rows = argmax_rows(x_star, &ns)?;
    let dips = convergent_dips(&rows, x_star).map_err(|e| CliError::Config(format!("`experiment.n_max`: {e}")))?;
    let mut report = argmax_scan(x_star, &ns)?;
    report.pass = Some(report.pass.unwrap_or(true) && dips.pass);
    if run.format.csv() {
        run.out.write_text("argmax.csv", |w| write_argmax_csv(&rows, w))?;
    }
    let mut value: Value = serde_json::from_str(&report.to_json()).expect("report is valid json");
    value["dips"] = serde_json::to_value(&dips).expect("dip check serializes");
    run.out.write_json("report.json", value)?;
    Ok(Outcome {
        pass: report.pass == Some(true),
        summary: json!({
            "x_star": x_star.value(),
            "envelope_ok": dips.envelope_ok,
            "exact_ok": dips.exact_ok,
            "dips_ok": dips.dips_ok,
            "pass": report.pass,
        }),
    })
}
