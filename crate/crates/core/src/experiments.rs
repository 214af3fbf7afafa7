//! Seeded, reproducible experiments with JSON reports and figure-ready CSVs.
//!
//! Replications run in parallel but are collected in `(cell, rep)` order, so
//! every number depends only on the configuration and the base seed.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::control::{evaluate_ode_cost, ControlPolicy, HorizonCostSpec};
use crate::ctmc::{pathwise_cost, simulate, simulate_controlled, InitialCondition, Preset, ProcessModel};
use crate::error::{domain, Error, Result};
use crate::meanfield::{integrate, FieldForm, OdeTrajectory, VectorField};
use crate::rates::{argmax_state, ProfitSpec, RateSchedule};

/// Tolerance of reference ODE solutions.
pub const REFERENCE_TOL: f64 = 1e-10;

/// Seed of replication `rep` in cell `cell`, via splitmix64 finalizers.
pub fn derive_seed(seed0: u64, cell: u64, rep: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(seed0) ^ cell) ^ rep)
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportCell {
    pub params: BTreeMap<String, Value>,
    pub metrics: BTreeMap<String, f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub config: Value,
    pub cells: Vec<ReportCell>,
    /// Outcome of the experiment's declared criteria, when it has any.
    pub pass: Option<bool>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    fn metric_column(&self, key: &str) -> Vec<f64> {
        self.cells
            .iter()
            .map(|c| c.metrics.get(key).copied().unwrap_or(f64::NAN))
            .collect()
    }

    /// Writes `header` then one row per cell from the listed metric keys.
    pub fn write_csv<W: Write>(&self, header: &[&str], mut w: W) -> io::Result<()> {
        writeln!(w, "{}", header.join(","))?;
        for c in &self.cells {
            let row: Vec<String> = header
                .iter()
                .map(|k| match c.params.get(*k) {
                    Some(v) => v.to_string(),
                    None => c.metrics.get(*k).map(|m| m.to_string()).unwrap_or_default(),
                })
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn check_n_list(n_list: &[usize]) -> Result<()> {
    if n_list.is_empty() {
        return domain("population list is empty");
    }
    if n_list.contains(&0) || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return domain(format!("population list {n_list:?} must be positive and increasing"));
    }
    Ok(())
}

/// The sis chain and its pair-form limit, started from an infected fraction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapModel {
    pub lambda: RateSchedule,
    pub mu: RateSchedule,
    pub infected0: f64,
}

impl GapModel {
    pub fn validate(&self) -> Result<()> {
        self.lambda.validate()?;
        self.mu.validate()?;
        if !(0.0..=1.0).contains(&self.infected0) {
            return domain(format!("initial infected fraction {} outside [0, 1]", self.infected0));
        }
        Ok(())
    }

    fn process(&self, n: usize) -> Result<ProcessModel> {
        ProcessModel::new(
            n,
            Preset::Sis,
            self.lambda.clone(),
            self.mu.clone(),
            InitialCondition::State((self.infected0 * n as f64).round() as usize),
        )
    }

    fn field(&self) -> Result<VectorField> {
        VectorField::new(self.lambda.clone(), self.mu.clone(), 1.0, FieldForm::Pair)
    }

    fn z0(&self) -> [f64; 2] {
        [1.0 - self.infected0, self.infected0]
    }
}

/// `sup_t |y_n(t) - y(t)|`, checked at every event with the states just
/// before and after it, and at the horizon.
pub fn sup_gap(times: &[f64], fracs: &[f64], horizon: f64, reference: &OdeTrajectory) -> f64 {
    let y = |t: f64| reference.sample(t)[1];
    let mut gap: f64 = 0.0;
    for k in 0..times.len() {
        let yt = y(times[k]);
        gap = gap.max((fracs[k] - yt).abs());
        if k > 0 {
            gap = gap.max((fracs[k - 1] - yt).abs());
        }
    }
    let last = *fracs.last().unwrap_or(&0.0);
    gap.max((last - y(horizon)).abs())
}

/// Empirical distance between the scaled chain and its mean-field limit.
pub fn meanfield_gap(
    model: &GapModel,
    n_list: &[usize],
    horizon: f64,
    reps: usize,
    seed0: u64,
) -> Result<ExperimentReport> {
    model.validate()?;
    check_n_list(n_list)?;
    if reps < 10 {
        return domain(format!("need at least 10 replications, got {reps}"));
    }
    let field = model.field()?;
    let reference = integrate(&field, &model.z0(), horizon, REFERENCE_TOL)?;
    let mut cells = Vec::with_capacity(n_list.len());
    for (cell, &n) in n_list.iter().enumerate() {
        let process = model.process(n)?;
        let seeds: Vec<u64> = (0..reps).map(|r| derive_seed(seed0, cell as u64, r as u64)).collect();
        let gaps = seeds
            .par_iter()
            .map(|&s| {
                let tr = simulate(&process, horizon, s)?;
                let fracs: Vec<f64> = tr.states.iter().map(|&i| i as f64 / n as f64).collect();
                Ok(sup_gap(&tr.times, &fracs, horizon, &reference))
            })
            .collect::<Result<Vec<f64>>>()?;
        let g = sorted(gaps);
        cells.push(ReportCell {
            params: BTreeMap::from([("n".to_string(), json!(n))]),
            metrics: BTreeMap::from([
                ("median_gap".to_string(), quantile(&g, 0.5)),
                ("p90_gap".to_string(), quantile(&g, 0.9)),
                ("reps".to_string(), reps as f64),
            ]),
            seeds,
        });
    }
    let mut report = ExperimentReport {
        name: "meanfield_gap".into(),
        config: json!({
            "model": model, "n_list": n_list, "horizon": horizon, "reps": reps, "seed": seed0,
        }),
        cells,
        pass: None,
    };
    let med = report.metric_column("median_gap");
    let degenerate = med.iter().all(|&m| m == 0.0);
    report.pass = Some(degenerate || med.windows(2).all(|w| w[1] < w[0]));
    Ok(report)
}

/// Monte Carlo cost of the lifted policy against the mean-field cost.
pub fn value_gap(
    policy: &ControlPolicy,
    infected0: f64,
    n_list: &[usize],
    spec: &HorizonCostSpec,
    reps: usize,
    seed0: u64,
) -> Result<ExperimentReport> {
    check_n_list(n_list)?;
    if reps < 2 {
        return domain(format!("need at least 2 replications, got {reps}"));
    }
    spec.validate()?;
    let zero = RateSchedule::constant(0.0)?;
    let model = GapModel {
        lambda: zero.clone(),
        mu: zero,
        infected0,
    };
    model.validate()?;
    let field = model.field()?;
    let j_ode = evaluate_ode_cost(policy, &field, &model.z0(), spec)?;
    let mut cells = Vec::with_capacity(n_list.len());
    for (cell, &n) in n_list.iter().enumerate() {
        let process = model.process(n)?;
        let seeds: Vec<u64> = (0..reps).map(|r| derive_seed(seed0, cell as u64, r as u64)).collect();
        let costs = seeds
            .par_iter()
            .map(|&s| {
                let tr = simulate_controlled(&process, policy, spec.horizon, s)?;
                pathwise_cost(&tr, spec)
            })
            .collect::<Result<Vec<f64>>>()?;
        let gaps: Vec<f64> = costs.iter().map(|j| (j - j_ode).abs()).collect();
        let m = reps as f64;
        let mean_gap = gaps.iter().sum::<f64>() / m;
        let sd = (gaps.iter().map(|g| (g - mean_gap).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
        let mean_cost = costs.iter().sum::<f64>() / m;
        let g = sorted(gaps);
        cells.push(ReportCell {
            params: BTreeMap::from([("n".to_string(), json!(n))]),
            metrics: BTreeMap::from([
                ("gap".to_string(), quantile(&g, 0.5)),
                ("ci_halfwidth".to_string(), 1.96 * sd / m.sqrt()),
                ("mean_cost".to_string(), mean_cost),
                ("ode_cost".to_string(), j_ode),
                ("mean_bias".to_string(), (mean_cost - j_ode).abs()),
                ("reps".to_string(), m),
            ]),
            seeds,
        });
    }
    let mut report = ExperimentReport {
        name: "value_gap".into(),
        config: json!({
            "policy": policy, "infected0": infected0, "n_list": n_list, "cost": spec,
            "reps": reps, "seed": seed0,
        }),
        cells,
        pass: None,
    };
    let gap = report.metric_column("gap");
    let degenerate = gap.iter().all(|&g| g == 0.0);
    report.pass = Some(degenerate || gap.windows(2).all(|w| w[1] < w[0]));
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArgmaxRow {
    pub n: usize,
    pub i_star: usize,
    pub ratio: f64,
    pub abs_err: f64,
}

/// Target maximizer for the argmax scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum XStar {
    Rational { p: u64, q: u64 },
    /// `(sqrt 5 - 1) / 2`.
    Golden,
    Other { value: f64 },
}

impl XStar {
    pub fn value(self) -> f64 {
        match self {
            XStar::Rational { p, q } => p as f64 / q as f64,
            XStar::Golden => (5f64.sqrt() - 1.0) / 2.0,
            XStar::Other { value } => value,
        }
    }

    /// Accepts `golden`, `p/q`, or a decimal.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let x = if s == "golden" || s == "phi" {
            XStar::Golden
        } else if let Some((p, q)) = s.split_once('/') {
            let p: u64 = p.trim().parse().map_err(|_| Error::Parse(format!("bad numerator in {s:?}")))?;
            let q: u64 = q.trim().parse().map_err(|_| Error::Parse(format!("bad denominator in {s:?}")))?;
            if q == 0 {
                return Err(Error::Parse(format!("zero denominator in {s:?}")));
            }
            XStar::Rational { p, q }
        } else {
            XStar::Other {
                value: s.parse().map_err(|_| Error::Parse(format!("bad target {s:?}")))?,
            }
        };
        let v = x.value();
        if !(0.0..=1.0).contains(&v) {
            return domain(format!("target {v} outside [0, 1]"));
        }
        Ok(x)
    }
}

pub fn argmax_rows(x_star: XStar, n_range: &[usize]) -> Result<Vec<ArgmaxRow>> {
    if n_range.is_empty() {
        return domain("n range is empty");
    }
    let target = x_star.value();
    let profit = ProfitSpec::quadratic(target)?;
    n_range
        .iter()
        .map(|&n| {
            let i = argmax_state(&profit, n)?;
            let ratio = i as f64 / n as f64;
            Ok(ArgmaxRow {
                n,
                i_star: i,
                ratio,
                abs_err: (ratio - target).abs(),
            })
        })
        .collect()
}

/// Grid maximizer of `-(x - x*)^2` against `n`.
pub fn argmax_scan(x_star: XStar, n_range: &[usize]) -> Result<ExperimentReport> {
    let rows = argmax_rows(x_star, n_range)?;
    let cells = rows
        .iter()
        .map(|r| ReportCell {
            params: BTreeMap::from([("n".to_string(), json!(r.n))]),
            metrics: BTreeMap::from([
                ("i_star".to_string(), r.i_star as f64),
                ("ratio".to_string(), r.ratio),
                ("abs_err".to_string(), r.abs_err),
            ]),
            seeds: Vec::new(),
        })
        .collect();
    Ok(ExperimentReport {
        name: "argmax_scan".into(),
        config: json!({ "x_star": x_star, "x_star_value": x_star.value(), "n_range": n_range }),
        cells,
        pass: Some(rows.iter().all(|r| r.abs_err <= 1.0 / r.n as f64)),
    })
}

/// CSV with header `n,i_star,ratio,abs_err`.
pub fn write_argmax_csv<W: Write>(rows: &[ArgmaxRow], mut w: W) -> io::Result<()> {
    writeln!(w, "n,i_star,ratio,abs_err")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.n, r.i_star, r.ratio, r.abs_err)?;
    }
    Ok(())
}

pub const FIBONACCI_CHECKS: [usize; 5] = [13, 21, 34, 55, 89];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DipFlag {
    pub n: usize,
    pub abs_err: f64,
    pub dip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DipCheck {
    pub envelope_ok: bool,
    /// Multiples of the denominator, for a rational target.
    pub exact_hits: Vec<usize>,
    pub exact_ok: bool,
    /// Per interior `n`: is its error strictly below both neighbors'.
    pub dips: Vec<DipFlag>,
    /// Denominators required to dip (Fibonacci numbers for the golden target).
    pub required_dips: Vec<usize>,
    pub dips_ok: bool,
    /// `n^2 |i*/n - x*|` at every scanned `n`, for inspection.
    pub scaled_err: Vec<(usize, f64)>,
    pub pass: bool,
}

/// Checks the structure of an argmax scan: the `1/n` envelope, exact hits
/// for rational targets, and dips at the golden target's convergents.
pub fn convergent_dips(rows: &[ArgmaxRow], x_star: XStar) -> Result<DipCheck> {
    let err: BTreeMap<usize, f64> = rows.iter().map(|r| (r.n, r.abs_err)).collect();
    let max_n = rows.iter().map(|r| r.n).max().unwrap_or(0);
    let required_dips: Vec<usize> = match x_star {
        XStar::Golden => FIBONACCI_CHECKS.to_vec(),
        _ => Vec::new(),
    };
    let mut missing: Vec<usize> = required_dips
        .iter()
        .flat_map(|&n| [n - 1, n, n + 1])
        .filter(|n| !err.contains_key(n))
        .collect();
    let exact_hits: Vec<usize> = match x_star {
        XStar::Rational { q, .. } => {
            let q = q as usize;
            let hits: Vec<usize> = (1..=max_n / q).map(|k| k * q).collect();
            if hits.is_empty() {
                missing.push(q);
            }
            hits.into_iter().filter(|n| err.contains_key(n)).collect()
        }
        _ => Vec::new(),
    };
    if !missing.is_empty() {
        missing.sort_unstable();
        missing.dedup();
        return domain(format!("scan is missing n = {missing:?}"));
    }
    let envelope_ok = rows.iter().all(|r| r.abs_err <= 1.0 / r.n as f64);
    let exact_ok = exact_hits.iter().all(|n| err[n] == 0.0);
    let dips: Vec<DipFlag> = err
        .iter()
        .filter_map(|(&n, &e)| {
            let (a, b) = (err.get(&(n.wrapping_sub(1)))?, err.get(&(n + 1))?);
            Some(DipFlag {
                n,
                abs_err: e,
                dip: e < *a && e < *b,
            })
        })
        .collect();
    let dips_ok = required_dips
        .iter()
        .all(|n| dips.iter().any(|d| d.n == *n && d.dip));
    let scaled_err = err.iter().map(|(&n, &e)| (n, (n * n) as f64 * e)).collect();
    Ok(DipCheck {
        envelope_ok,
        exact_hits,
        exact_ok,
        dips,
        required_dips,
        dips_ok,
        scaled_err,
        pass: envelope_ok && exact_ok && dips_ok,
    })
}
