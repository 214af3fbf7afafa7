//! Time-varying rate schedules, profit profiles and action costs.
//!
//! Everything in here is an immutable value; evaluation is pure.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// A continuous, nonnegative rate function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateSchedule {
    Constant {
        value: f64,
    },
    /// Linear interpolation between `(t, rate)` breakpoints, held flat
    /// before the first and after the last breakpoint.
    PiecewiseLinear {
        points: Vec<(f64, f64)>,
    },
    /// `base + amp * cos(2 pi t / period + phase)`.
    Sinusoidal {
        base: f64,
        amp: f64,
        period: f64,
        phase: f64,
    },
}

impl RateSchedule {
    pub fn constant(value: f64) -> Result<Self> {
        let s = RateSchedule::Constant { value };
        s.validate()?;
        Ok(s)
    }

    pub fn piecewise_linear(points: Vec<(f64, f64)>) -> Result<Self> {
        let s = RateSchedule::PiecewiseLinear { points };
        s.validate()?;
        Ok(s)
    }

    pub fn sinusoidal(base: f64, amp: f64, period: f64, phase: f64) -> Result<Self> {
        let s = RateSchedule::Sinusoidal {
            base,
            amp,
            period,
            phase,
        };
        s.validate()?;
        Ok(s)
    }

    /// Checks that the schedule is finite and nonnegative everywhere.
    pub fn validate(&self) -> Result<()> {
        match self {
            RateSchedule::Constant { value } => {
                if !value.is_finite() || *value < 0.0 {
                    return domain(format!("constant rate must be finite and >= 0, got {value}"));
                }
            }
            RateSchedule::PiecewiseLinear { points } => {
                if points.is_empty() {
                    return domain("piecewise-linear schedule needs at least one breakpoint");
                }
                for w in points.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return domain("piecewise-linear breakpoints must have strictly increasing times");
                    }
                }
                for &(t, r) in points {
                    if !t.is_finite() || !r.is_finite() || r < 0.0 {
                        return domain(format!("bad breakpoint ({t}, {r})"));
                    }
                }
            }
            RateSchedule::Sinusoidal {
                base,
                amp,
                period,
                phase,
            } => {
                if ![*base, *amp, *period, *phase].iter().all(|v| v.is_finite()) {
                    return domain("sinusoidal parameters must be finite");
                }
                if *period <= 0.0 {
                    return domain(format!("sinusoidal period must be > 0, got {period}"));
                }
                if *base < amp.abs() {
                    return domain(format!(
                        "sinusoidal schedule goes negative: base {base} < |amp| {}",
                        amp.abs()
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return domain(format!("rate evaluated at negative or NaN time {t}"));
        }
        Ok(self.eval_unchecked(t))
    }

    /// Evaluation without the time-domain check, for hot loops that already
    /// guarantee `t >= 0`.
    pub fn eval_unchecked(&self, t: f64) -> f64 {
        match self {
            RateSchedule::Constant { value } => *value,
            RateSchedule::PiecewiseLinear { points } => pwl_eval(points, t),
            RateSchedule::Sinusoidal {
                base,
                amp,
                period,
                phase,
            } => (base + amp * (TAU * t / period + phase).cos()).max(0.0),
        }
    }

    /// Tight `(lo, hi)` bounds of the schedule over `[t0, t1]`.
    pub fn rate_bounds(&self, t0: f64, t1: f64) -> Result<(f64, f64)> {
        check_window(t0, t1)?;
        Ok(match self {
            RateSchedule::Constant { value } => (*value, *value),
            RateSchedule::PiecewiseLinear { points } => {
                let mut lo = pwl_eval(points, t0);
                let mut hi = lo;
                let v1 = pwl_eval(points, t1);
                lo = lo.min(v1);
                hi = hi.max(v1);
                for &(t, r) in points {
                    if t > t0 && t < t1 {
                        lo = lo.min(r);
                        hi = hi.max(r);
                    }
                }
                (lo, hi)
            }
            RateSchedule::Sinusoidal {
                base,
                amp,
                period,
                phase,
            } => {
                let w = TAU / period;
                let (cmin, cmax) = cos_range(w * t0 + phase, w * t1 + phase);
                let (a, b) = (base + amp * cmin, base + amp * cmax);
                (a.min(b).max(0.0), a.max(b).max(0.0))
            }
        })
    }

    /// Bounds on the time derivative over `[t0, t1]`.
    pub fn slope_bounds(&self, t0: f64, t1: f64) -> Result<(f64, f64)> {
        check_window(t0, t1)?;
        Ok(match self {
            RateSchedule::Constant { .. } => (0.0, 0.0),
            RateSchedule::PiecewiseLinear { points } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                let mut touch = |s: f64| {
                    lo = lo.min(s);
                    hi = hi.max(s);
                };
                let first = points[0].0;
                let last = points[points.len() - 1].0;
                if t0 < first || t1 > last || points.len() == 1 {
                    touch(0.0);
                }
                for w in points.windows(2) {
                    let (a, b) = (w[0], w[1]);
                    if b.0 >= t0 && a.0 <= t1 {
                        touch((b.1 - a.1) / (b.0 - a.0));
                    }
                }
                (lo, hi)
            }
            RateSchedule::Sinusoidal {
                amp,
                period,
                phase,
                ..
            } => {
                // d/dt = amp * w * cos(w t + phase + pi/2)
                let w = TAU / period;
                let (cmin, cmax) = cos_range(w * t0 + phase + PI / 2.0, w * t1 + phase + PI / 2.0);
                let (a, b) = (amp * w * cmin, amp * w * cmax);
                (a.min(b), a.max(b))
            }
        })
    }
}

fn check_window(t0: f64, t1: f64) -> Result<()> {
    if !(t0 >= 0.0) || !t1.is_finite() {
        return domain(format!("window [{t0}, {t1}] must start at t >= 0 and be finite"));
    }
    if t1 < t0 {
        return domain(format!("inverted window [{t0}, {t1}]"));
    }
    Ok(())
}

fn pwl_eval(points: &[(f64, f64)], t: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if t <= first.0 {
        return first.1;
    }
    if t >= last.0 {
        return last.1;
    }
    let k = points.partition_point(|p| p.0 <= t);
    let (a, b) = (points[k - 1], points[k]);
    a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
}

/// Range of `cos` over the angle interval `[a, b]`.
fn cos_range(a: f64, b: f64) -> (f64, f64) {
    let (ca, cb) = (a.cos(), b.cos());
    let mut lo = ca.min(cb);
    let mut hi = ca.max(cb);
    if (a / TAU).ceil() * TAU <= b {
        hi = 1.0;
    }
    if ((a - PI) / TAU).ceil() * TAU + PI <= b {
        lo = -1.0;
    }
    (lo, hi)
}

/// Shape of the profit function `P` on `[0, c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfitProfile {
    /// `intercept + slope * x`.
    Linear { slope: f64, intercept: f64 },
    /// `height - curvature * (x - peak)^2` with `curvature > 0`.
    Quadratic {
        peak: f64,
        curvature: f64,
        height: f64,
    },
    /// Linear interpolation of `(x, P)` points covering `[0, c]`.
    Table { points: Vec<(f64, f64)> },
}

/// A unimodal profit function on `[0, c]` with its cached maximizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitSpec {
    profile: ProfitProfile,
    c: f64,
    x_star: f64,
}

impl ProfitSpec {
    pub fn new(profile: ProfitProfile, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return domain(format!("total mass c must be positive, got {c}"));
        }
        let x_star = match &profile {
            ProfitProfile::Linear { slope, intercept } => {
                if !slope.is_finite() || !intercept.is_finite() {
                    return domain("linear profit coefficients must be finite");
                }
                if *slope > 0.0 {
                    c
                } else {
                    0.0
                }
            }
            ProfitProfile::Quadratic {
                peak,
                curvature,
                height,
            } => {
                if !(*curvature > 0.0) || !peak.is_finite() || !height.is_finite() {
                    return domain("quadratic profit needs curvature > 0 and finite peak/height");
                }
                peak.clamp(0.0, c)
            }
            ProfitProfile::Table { points } => validate_table(points, c)?,
        };
        Ok(ProfitSpec { profile, c, x_star })
    }

    /// `P(x) = -(x - peak)^2`, the concave profile used throughout the experiments.
    pub fn quadratic(peak: f64) -> Result<Self> {
        Self::new(
            ProfitProfile::Quadratic {
                peak,
                curvature: 1.0,
                height: 0.0,
            },
            1.0,
        )
    }

    pub fn linear(slope: f64) -> Result<Self> {
        Self::new(
            ProfitProfile::Linear {
                slope,
                intercept: 0.0,
            },
            1.0,
        )
    }

    pub fn profile(&self) -> &ProfitProfile {
        &self.profile
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn x_star(&self) -> f64 {
        self.x_star
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.profile {
            ProfitProfile::Linear { slope, intercept } => intercept + slope * x,
            ProfitProfile::Quadratic {
                peak,
                curvature,
                height,
            } => height - curvature * (x - peak) * (x - peak),
            ProfitProfile::Table { points } => pwl_eval(points, x),
        }
    }

    /// Maximum of `P` on `[0, c]`.
    pub fn max_value(&self) -> f64 {
        self.eval(self.x_star)
    }
}

/// Returns the first maximizer of a table profile after checking it is
/// weakly increasing then weakly decreasing on `[0, c]`.
fn validate_table(points: &[(f64, f64)], c: f64) -> Result<f64> {
    if points.len() < 2 {
        return domain("profit table needs at least two points");
    }
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return domain("profit table entries must be finite");
    }
    if points[0].0 != 0.0 || (points[points.len() - 1].0 - c).abs() > 1e-12 {
        return domain(format!("profit table must span [0, {c}]"));
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return domain("profit table abscissae must be strictly increasing");
    }
    let mut descending = false;
    for w in points.windows(2) {
        if w[1].1 < w[0].1 {
            descending = true;
        } else if w[1].1 > w[0].1 && descending {
            return domain("profit table is not unimodal");
        }
    }
    let best = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(points.iter().find(|p| p.1 == best).map(|p| p.0).unwrap_or(0.0))
}

fn tie_tol(v: f64) -> f64 {
    1e-12 * v.abs().max(1.0)
}

/// Smallest `i` in `0..=n` maximizing `P(i c / n)`.
///
/// Values within a relative `1e-12` of the maximum count as ties so that
/// grid points placed symmetrically around the peak resolve to the lower
/// index regardless of rounding.
pub fn argmax_state(profit: &ProfitSpec, n: usize) -> Result<usize> {
    if n == 0 {
        return domain("population n must be >= 1");
    }
    let values: Vec<f64> = (0..=n).map(|i| profit.eval(grid_point(profit, n, i))).collect();
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = tie_tol(best);
    Ok(values.iter().position(|&v| v >= best - tol).unwrap_or(0))
}

/// The point `i c / n` of `[0, c]` that state `i` maps to.
pub fn grid_point(profit: &ProfitSpec, n: usize, i: usize) -> f64 {
    i as f64 / n as f64 * profit.c
}

/// Normalized stage cost `c(i) = P(x_{i*}) - P(x_i) >= 0`.
pub fn stage_cost(profit: &ProfitSpec, n: usize, i: usize) -> Result<f64> {
    if i > n {
        return domain(format!("state {i} outside [0, {n}]"));
    }
    let star = argmax_state(profit, n)?;
    Ok(stage_cost_with_star(profit, n, star, i))
}

pub(crate) fn stage_cost_with_star(profit: &ProfitSpec, n: usize, star: usize, i: usize) -> f64 {
    if i == star {
        return 0.0;
    }
    let top = profit.eval(grid_point(profit, n, star));
    (top - profit.eval(grid_point(profit, n, i))).max(0.0)
}

/// The raw per-stage cost `-P(x_i)`, kept for reporting.
pub fn raw_stage_cost(profit: &ProfitSpec, n: usize, i: usize) -> Result<f64> {
    if i > n {
        return domain(format!("state {i} outside [0, {n}]"));
    }
    Ok(-profit.eval(grid_point(profit, n, i)))
}

/// One entry of a finite action table: a rate pair and what it costs per stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableAction {
    pub lambda: f64,
    pub mu: f64,
    pub cost: f64,
}

/// Cost of deploying controlled rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionCostSpec {
    Zero,
    Linear { c_lambda: f64, c_mu: f64 },
    General { table: Vec<TableAction> },
}

impl ActionCostSpec {
    pub fn linear(c_lambda: f64, c_mu: f64) -> Result<Self> {
        if !(c_lambda >= 0.0 && c_mu >= 0.0) || !c_lambda.is_finite() || !c_mu.is_finite() {
            return domain("linear action costs must be finite and >= 0");
        }
        Ok(ActionCostSpec::Linear { c_lambda, c_mu })
    }

    pub fn general(table: Vec<TableAction>) -> Result<Self> {
        if table.is_empty() {
            return domain("action table U_K must be nonempty");
        }
        if table
            .iter()
            .any(|a| !a.lambda.is_finite() || !a.mu.is_finite() || !a.cost.is_finite())
        {
            return domain("action table entries must be finite");
        }
        Ok(ActionCostSpec::General { table })
    }

    /// Checks coefficient signs and that every table entry lies in the box.
    pub fn validate(&self, lambda_max: f64, mu_max: f64) -> Result<()> {
        match self {
            ActionCostSpec::Zero => Ok(()),
            ActionCostSpec::Linear { c_lambda, c_mu } => {
                Self::linear(*c_lambda, *c_mu).map(|_| ())
            }
            ActionCostSpec::General { table } => {
                Self::general(table.clone())?;
                for a in table {
                    if a.lambda < 0.0 || a.lambda > lambda_max || a.mu < 0.0 || a.mu > mu_max {
                        return Err(Error::Domain(format!(
                            "table action ({}, {}) outside [0, {lambda_max}] x [0, {mu_max}]",
                            a.lambda, a.mu
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Cost of the pair `(lambda, mu)`. Table kinds answer only for exact
    /// table entries.
    pub fn eval(&self, lambda: f64, mu: f64) -> Option<f64> {
        match self {
            ActionCostSpec::Zero => Some(0.0),
            ActionCostSpec::Linear { c_lambda, c_mu } => Some(c_lambda * lambda + c_mu * mu),
            ActionCostSpec::General { table } => table
                .iter()
                .find(|a| a.lambda == lambda && a.mu == mu)
                .map(|a| a.cost),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ActionCostSpec::Zero => true,
            ActionCostSpec::Linear { c_lambda, c_mu } => *c_lambda == 0.0 && *c_mu == 0.0,
            ActionCostSpec::General { .. } => false,
        }
    }
}
