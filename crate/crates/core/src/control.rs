//! Structured rate policies for the mean-field system, finite-horizon cost
//! evaluation, and lifting of those policies to the n-system.

use serde::{Deserialize, Serialize};

use crate::ctmc::RateController;
use crate::error::{domain, Error, Result};
use crate::meanfield::{
    integrate_system, project_simplex, IntegratorOptions, OdeSystem, OdeTrajectory, VectorField,
};
use crate::mdp::Policy;
use crate::rates::{ActionCostSpec, ProfitProfile, ProfitSpec, RateSchedule};

/// Which fraction a cost function reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateComponent {
    /// The tracked fraction `y` (`i / n` in the chain).
    #[default]
    Infected,
    /// `x = c - y`.
    Susceptible,
}

/// A bounded scalar cost on one state component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostFn {
    Zero,
    Constant { value: f64 },
    Linear { slope: f64, intercept: f64 },
    /// `weight * (v - center)^2`.
    Quadratic { center: f64, weight: f64 },
    /// `max P - P(v)`.
    ProfitGap { profit: ProfitSpec },
}

impl CostFn {
    pub fn eval(&self, v: f64) -> f64 {
        match self {
            CostFn::Zero => 0.0,
            CostFn::Constant { value } => *value,
            CostFn::Linear { slope, intercept } => intercept + slope * v,
            CostFn::Quadratic { center, weight } => weight * (v - center) * (v - center),
            CostFn::ProfitGap { profit } => profit.max_value() - profit.eval(v),
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = match self {
            CostFn::Zero | CostFn::ProfitGap { .. } => true,
            CostFn::Constant { value } => value.is_finite(),
            CostFn::Linear { slope, intercept } => slope.is_finite() && intercept.is_finite(),
            CostFn::Quadratic { center, weight } => center.is_finite() && weight.is_finite(),
        };
        if finite {
            Ok(())
        } else {
            domain(format!("cost function {self:?} has non-finite coefficients"))
        }
    }
}

/// Running cost, terminal cost and horizon of a finite-horizon objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonCostSpec {
    pub running: CostFn,
    pub terminal: CostFn,
    pub horizon: f64,
    #[serde(default)]
    pub component: StateComponent,
    #[serde(default = "zero_action_cost")]
    pub action_cost: ActionCostSpec,
}

fn zero_action_cost() -> ActionCostSpec {
    ActionCostSpec::Zero
}

impl HorizonCostSpec {
    pub fn new(running: CostFn, terminal: CostFn, horizon: f64, component: StateComponent) -> Result<Self> {
        let s = HorizonCostSpec {
            running,
            terminal,
            horizon,
            component,
            action_cost: ActionCostSpec::Zero,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return domain(format!("cost horizon must be positive, got {}", self.horizon));
        }
        self.running.validate()?;
        self.terminal.validate()
    }

    fn observe(&self, x: f64, y: f64) -> f64 {
        match self.component {
            StateComponent::Infected => y,
            StateComponent::Susceptible => x,
        }
    }

    fn action_term(&self, action: Option<(f64, f64)>) -> f64 {
        match action {
            Some((lam, mu)) if !self.action_cost.is_zero() => {
                self.action_cost.eval(lam, mu).unwrap_or(f64::NAN)
            }
            _ => 0.0,
        }
    }

    /// Running cost rate at chain fraction `z = i / n`.
    pub fn running_rate(&self, z: f64, action: Option<(f64, f64)>) -> f64 {
        self.running_rate_xy(1.0 - z, z, action)
    }

    pub fn running_rate_xy(&self, x: f64, y: f64, action: Option<(f64, f64)>) -> f64 {
        self.running.eval(self.observe(x, y)) + self.action_term(action)
    }

    pub fn terminal_cost(&self, z: f64) -> f64 {
        self.terminal_cost_xy(1.0 - z, z)
    }

    pub fn terminal_cost_xy(&self, x: f64, y: f64) -> f64 {
        self.terminal.eval(self.observe(x, y))
    }
}

/// Rate-of-change limits for the two channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaBox {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub mu_lo: f64,
    pub mu_hi: f64,
}

impl ThetaBox {
    pub fn new(lambda_lo: f64, lambda_hi: f64, mu_lo: f64, mu_hi: f64) -> Result<Self> {
        let b = ThetaBox {
            lambda_lo,
            lambda_hi,
            mu_lo,
            mu_hi,
        };
        b.validate()?;
        Ok(b)
    }

    /// Symmetric box `[-w, w]` on both channels.
    pub fn symmetric(w: f64) -> Result<Self> {
        Self::new(-w, w, -w, w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lo, hi) in [("lambda", self.lambda_lo, self.lambda_hi), ("mu", self.mu_lo, self.mu_hi)] {
            if !(lo < hi) {
                return domain(format!("infeasible {name} rate-of-change box [{lo}, {hi}]"));
            }
            if !(lo < 0.0 && hi > 0.0) || !lo.is_finite() || !hi.is_finite() {
                return domain(format!(
                    "{name} rate-of-change box [{lo}, {hi}] must straddle 0 with finite ends"
                ));
            }
        }
        Ok(())
    }
}

/// Fraction of the theta box actually used, so emitted derivatives stay
/// strictly inside it.
const THETA_MARGIN: f64 = 1.0 - 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateConstrainedParams {
    pub profit: ProfitSpec,
    pub theta: ThetaBox,
    pub lambda0: f64,
    pub mu0: f64,
    pub lambda_max: f64,
    pub mu_max: f64,
    /// Lower limit for both rates.
    pub rate_floor: f64,
    /// Planning step between re-decisions when no event forces one earlier.
    pub control_step: f64,
    /// Dead band around the target ratio, relative to the profit maximizer.
    pub hysteresis: f64,
}

impl RateConstrainedParams {
    pub fn validate(&self) -> Result<()> {
        self.theta.validate()?;
        if !(self.lambda0 > 0.0 && self.mu0 > 0.0) {
            return domain("initial rates must be positive");
        }
        if !(self.rate_floor >= 0.0) || !(self.control_step > 0.0) || !(self.hysteresis >= 0.0) {
            return domain("rate floor, control step and hysteresis must be nonnegative (step > 0)");
        }
        if self.lambda0 > self.lambda_max || self.mu0 > self.mu_max {
            return domain("initial rates exceed the caps");
        }
        if self.lambda0 < self.rate_floor || self.mu0 < self.rate_floor {
            return domain("initial rates are below the floor");
        }
        Ok(())
    }
}

/// A rate policy; see [`lift_policy`] and [`evaluate_ode_cost`] for how it
/// is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlPolicy {
    Nominal { lambda: RateSchedule, mu: RateSchedule },
    Stationary { lambda: f64, mu: f64 },
    IdealTrajectory { x_star: f64, kappa: f64, delta_hat: f64 },
    RateConstrained(RateConstrainedParams),
    Tabular { n: usize, policy: Policy },
}

impl ControlPolicy {
    /// Bounds `(lambda_max, mu_max)` on every rate the policy emits on `[0, horizon]`.
    pub fn caps(&self, horizon: f64) -> Result<(f64, f64)> {
        Ok(match self {
            ControlPolicy::Nominal { lambda, mu } => {
                (lambda.rate_bounds(0.0, horizon)?.1, mu.rate_bounds(0.0, horizon)?.1)
            }
            ControlPolicy::Stationary { lambda, mu } => (*lambda, *mu),
            ControlPolicy::IdealTrajectory {
                x_star,
                kappa,
                delta_hat,
            } => (kappa * delta_hat, kappa * delta_hat * x_star),
            ControlPolicy::RateConstrained(p) => (p.lambda_max, p.mu_max),
            ControlPolicy::Tabular { policy, .. } => policy
                .actions
                .iter()
                .fold((0.0, 0.0), |(a, b), &(l, m)| (f64::max(a, l), f64::max(b, m))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ControlPolicy::Nominal { lambda, mu } => {
                lambda.validate()?;
                mu.validate()
            }
            ControlPolicy::Stationary { lambda, mu } => {
                if !(*lambda >= 0.0 && *mu >= 0.0) || !lambda.is_finite() || !mu.is_finite() {
                    return domain(format!("stationary rates ({lambda}, {mu}) must be finite and >= 0"));
                }
                Ok(())
            }
            ControlPolicy::IdealTrajectory {
                x_star,
                kappa,
                delta_hat,
            } => check_ideal(*x_star, *kappa, *delta_hat, f64::INFINITY),
            ControlPolicy::RateConstrained(p) => p.validate(),
            ControlPolicy::Tabular { n, policy } => {
                if policy.actions.len() != n + 1 {
                    return domain(format!(
                        "tabular policy has {} actions for n = {n}",
                        policy.actions.len()
                    ));
                }
                Ok(())
            }
        }
    }
}

fn check_ideal(x_star: f64, kappa: f64, delta_hat: f64, c: f64) -> Result<()> {
    if !(x_star > 0.0 && x_star < c) {
        return domain(format!(
            "target {x_star} is not interior to (0, {c}); use a stationary policy with mu = 0 \
             (target 0) or mu >= lambda c (target c) instead"
        ));
    }
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return domain(format!("scale kappa must be >= 1, got {kappa}"));
    }
    if !(delta_hat > 0.0) || !delta_hat.is_finite() {
        return domain(format!("rate floor must be > 0, got {delta_hat}"));
    }
    Ok(())
}

/// Constant rates `(kappa delta_hat, kappa delta_hat x_star)`, which hold the
/// asymptotic state at `x_star`.
pub fn ideal_trajectory_controller(x_star: f64, kappa: f64, delta_hat: f64, c: f64) -> Result<ControlPolicy> {
    check_ideal(x_star, kappa, delta_hat, c)?;
    Ok(ControlPolicy::IdealTrajectory {
        x_star,
        kappa,
        delta_hat,
    })
}

/// Tracker under rate-of-change limits, with default caps at twice the
/// initial rates (the mu cap is raised so every ratio up to `c` is feasible).
pub fn rate_constrained_controller(
    profit: &ProfitSpec,
    theta: ThetaBox,
    initial_rates: (f64, f64),
) -> Result<ControlPolicy> {
    theta.validate()?;
    let (lambda0, mu0) = initial_rates;
    let lambda_max = 2.0 * lambda0;
    let p = RateConstrainedParams {
        profit: profit.clone(),
        theta,
        lambda0,
        mu0,
        lambda_max,
        mu_max: (2.0 * mu0).max(lambda_max * profit.c()),
        rate_floor: 1e-3 * lambda0.min(mu0),
        control_step: 0.05,
        hysteresis: 1e-3,
    };
    p.validate()?;
    Ok(ControlPolicy::RateConstrained(p))
}

fn tie_tol(v: f64) -> f64 {
    1e-12 * v.abs().max(1.0)
}

/// Smallest maximizer of `P` over `[lo, hi]`, clipped to `[0, c]`.
pub fn reachable_target(profit: &ProfitSpec, _ratio_now: f64, interval: (f64, f64)) -> Result<f64> {
    let (lo, hi) = interval;
    if !(lo <= hi) {
        return domain(format!("reachable interval [{lo}, {hi}] is empty"));
    }
    let c = profit.c();
    let (lo, hi) = (lo.clamp(0.0, c), hi.clamp(0.0, c));
    let mut cands = vec![lo, hi];
    let xs = profit.x_star();
    if xs > lo && xs < hi {
        cands.push(xs);
    }
    if let ProfitProfile::Table { points } = profit.profile() {
        cands.extend(points.iter().map(|p| p.0).filter(|&x| x > lo && x < hi));
    }
    cands.sort_by(|a, b| a.total_cmp(b));
    let best = cands.iter().map(|&x| profit.eval(x)).fold(f64::NEG_INFINITY, f64::max);
    Ok(cands
        .into_iter()
        .find(|&x| profit.eval(x) >= best - tie_tol(best))
        .unwrap_or(lo))
}

/// Smallest `mu` in `[0, mu_cap]` maximizing `P(min(c, mu / lambda)) - C(mu)`,
/// returned with the objective value.
pub fn stationary_one_sided(
    profit: &ProfitSpec,
    cost: &ActionCostSpec,
    lambda_fixed: f64,
    mu_cap: f64,
) -> Result<(f64, f64)> {
    if !(mu_cap > 0.0) || !mu_cap.is_finite() {
        return domain(format!("mu cap must be positive, got {mu_cap}"));
    }
    if !(lambda_fixed > 0.0) || !lambda_fixed.is_finite() {
        return domain(format!("fixed lambda must be positive, got {lambda_fixed}"));
    }
    let c_mu = match cost {
        ActionCostSpec::Zero => 0.0,
        ActionCostSpec::Linear { c_mu, .. } => *c_mu,
        ActionCostSpec::General { .. } => {
            return Err(Error::Unsupported(
                "stationary search needs a zero or linear action cost".into(),
            ))
        }
    };
    let c = profit.c();
    let g = |mu: f64| profit.eval((mu / lambda_fixed).min(c)) - c_mu * mu;

    const GRID: usize = 1000;
    let h = mu_cap / GRID as f64;
    let vals: Vec<f64> = (0..=GRID).map(|k| g(k as f64 * h)).collect();
    let mut best_mu = 0.0;
    let mut best = vals[0];
    let consider = |mu: f64, v: f64, best_mu: &mut f64, best: &mut f64| {
        if v > *best + tie_tol(*best) || (v >= *best - tie_tol(*best) && mu < *best_mu) {
            *best = v.max(*best);
            *best_mu = mu;
        }
    };
    for k in 0..=GRID {
        let left = if k > 0 { vals[k - 1] } else { f64::NEG_INFINITY };
        let right = if k < GRID { vals[k + 1] } else { f64::NEG_INFINITY };
        if vals[k] < left || vals[k] < right {
            continue;
        }
        consider(k as f64 * h, vals[k], &mut best_mu, &mut best);
        let a = k.saturating_sub(1) as f64 * h;
        let b = (k + 1).min(GRID) as f64 * h;
        let mu = golden_max(&g, a, b);
        consider(mu, g(mu), &mut best_mu, &mut best);
    }
    // Walk left to the smallest point still attaining the maximum.
    let thr = best - tie_tol(best);
    let mut lo = (best_mu - h).max(0.0);
    if g(lo) >= thr {
        lo = 0.0;
        if g(0.0) >= thr {
            return Ok((0.0, g(0.0)));
        }
    }
    let mut hi = best_mu;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) >= thr {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((hi, g(hi)))
}

fn golden_max(g: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (g(x1), g(x2));
    for _ in 0..200 {
        if b - a <= 1e-13 * b.abs().max(1.0) {
            break;
        }
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = g(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = g(x2);
        }
    }
    if f1 >= f2 {
        x1
    } else {
        x2
    }
}

/// One re-planning decision of the rate-constrained tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackerDecision {
    pub t: f64,
    pub lambda: f64,
    pub mu: f64,
    pub dlambda: f64,
    pub dmu: f64,
    pub target: f64,
}

#[derive(Debug, Clone)]
struct Tracker {
    params: RateConstrainedParams,
    t0: f64,
    lambda: f64,
    mu: f64,
    dlambda: f64,
    dmu: f64,
    target: f64,
    history: Vec<TrackerDecision>,
    record: bool,
}

impl Tracker {
    fn new(params: RateConstrainedParams, record: bool) -> Self {
        let mut tr = Tracker {
            t0: 0.0,
            lambda: params.lambda0,
            mu: params.mu0,
            dlambda: 0.0,
            dmu: 0.0,
            target: params.mu0 / params.lambda0,
            params,
            history: Vec::new(),
            record,
        };
        tr.decide(0.0);
        tr
    }

    fn rates_at(&self, t: f64) -> (f64, f64) {
        let s = (t - self.t0).clamp(0.0, self.params.control_step);
        let p = &self.params;
        (
            (self.lambda + self.dlambda * s).clamp(p.rate_floor, p.lambda_max),
            (self.mu + self.dmu * s).clamp(p.rate_floor, p.mu_max),
        )
    }

    fn decide(&mut self, t: f64) {
        let (lam, mu) = self.rates_at(t);
        let p = &self.params;
        let d = p.control_step;
        let th = p.theta;
        let (lam_lo, lam_hi) = (
            (lam + THETA_MARGIN * th.lambda_lo * d).max(p.rate_floor).min(lam),
            (lam + THETA_MARGIN * th.lambda_hi * d).min(p.lambda_max).max(lam),
        );
        let (mu_lo, mu_hi) = (
            (mu + THETA_MARGIN * th.mu_lo * d).max(p.rate_floor).min(mu),
            (mu + THETA_MARGIN * th.mu_hi * d).min(p.mu_max).max(mu),
        );
        let ratio = mu / lam;
        let c = p.profit.c();
        let interval = (
            (mu_lo / lam_hi).clamp(0.0, c),
            (mu_hi / lam_lo).clamp(0.0, c),
        );
        let target = reachable_target(&p.profit, ratio, interval).unwrap_or(ratio);
        // Hold only near the goal allowed by the caps; comparing with the
        // one-step target would freeze whenever theta is small.
        let feasible = (
            (p.rate_floor / p.lambda_max).clamp(0.0, c),
            (p.mu_max / p.rate_floor).clamp(0.0, c),
        );
        let goal = reachable_target(&p.profit, ratio, feasible).unwrap_or(target);
        let band = p.hysteresis * p.profit.x_star().max(1e-12);
        let (lam_next, mu_next) = if (ratio - goal).abs() <= band {
            (lam, mu)
        } else {
            // Prefer the largest reachable lambda: larger rates speed up the
            // approach of the state to the ratio.
            let l = lam_hi;
            let m = target * l;
            if m > mu_hi {
                (mu_hi / target, mu_hi)
            } else if m < mu_lo {
                (mu_lo / target, mu_lo)
            } else {
                (l, m)
            }
        };
        let lam_next = lam_next.clamp(lam_lo, lam_hi);
        self.t0 = t;
        self.lambda = lam;
        self.mu = mu;
        self.dlambda = (lam_next - lam) / d;
        self.dmu = (mu_next - mu) / d;
        self.target = target;
        if self.record {
            self.history.push(TrackerDecision {
                t,
                lambda: lam,
                mu,
                dlambda: self.dlambda,
                dmu: self.dmu,
                target,
            });
        }
    }
}

#[derive(Debug, Clone)]
enum Runner {
    Nominal(RateSchedule, RateSchedule),
    Constant(f64, f64),
    Table(Vec<(f64, f64)>),
    Tracker(Box<Tracker>),
}

impl Runner {
    fn new(policy: &ControlPolicy, record: bool) -> Result<Self> {
        policy.validate()?;
        Ok(match policy {
            ControlPolicy::Nominal { lambda, mu } => Runner::Nominal(lambda.clone(), mu.clone()),
            ControlPolicy::Stationary { lambda, mu } => Runner::Constant(*lambda, *mu),
            ControlPolicy::IdealTrajectory {
                x_star,
                kappa,
                delta_hat,
            } => Runner::Constant(kappa * delta_hat, kappa * delta_hat * x_star),
            ControlPolicy::RateConstrained(p) => Runner::Tracker(Box::new(Tracker::new(p.clone(), record))),
            ControlPolicy::Tabular { policy, .. } => Runner::Table(policy.actions.clone()),
        })
    }

    fn rates_at(&self, t: f64, state: Option<usize>) -> (f64, f64) {
        match self {
            Runner::Nominal(l, m) => (l.eval_unchecked(t), m.eval_unchecked(t)),
            Runner::Constant(l, m) => (*l, *m),
            Runner::Table(a) => a[state.expect("tabular policies need a chain state")],
            Runner::Tracker(tr) => tr.rates_at(t),
        }
    }

    fn decide(&mut self, t: f64) {
        if let Runner::Tracker(tr) = self {
            tr.decide(t);
        }
    }

    fn history(&self) -> Vec<TrackerDecision> {
        match self {
            Runner::Tracker(tr) => tr.history.clone(),
            _ => Vec::new(),
        }
    }
}

/// A policy made into a state-feedback rate source for the n-system.
#[derive(Debug, Clone)]
pub struct LiftedPolicy {
    runner: Runner,
    policy: ControlPolicy,
    n: usize,
}

impl LiftedPolicy {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Decisions made so far by a rate-constrained tracker (empty otherwise).
    pub fn history(&self) -> Vec<TrackerDecision> {
        self.runner.history()
    }
}

pub fn lift_policy(policy: &ControlPolicy, n: usize) -> Result<LiftedPolicy> {
    if n == 0 {
        return domain("population n must be >= 1");
    }
    if let ControlPolicy::Tabular { n: pn, .. } = policy {
        if *pn != n {
            return domain(format!("tabular policy was built for n = {pn}, not n = {n}"));
        }
    }
    Ok(LiftedPolicy {
        runner: Runner::new(policy, true)?,
        policy: policy.clone(),
        n,
    })
}

impl RateController for LiftedPolicy {
    fn caps(&self, horizon: f64) -> Result<(f64, f64)> {
        self.policy.caps(horizon)
    }

    fn rates(&mut self, t: f64, state: usize) -> Result<(f64, f64)> {
        if state > self.n {
            return domain(format!("state {state} outside [0, {}]", self.n));
        }
        self.runner.decide(t);
        Ok(self.runner.rates_at(t, Some(state)))
    }
}

struct ControlledField<'a> {
    field: &'a VectorField,
    runner: Runner,
    spec: Option<&'a HorizonCostSpec>,
}

impl OdeSystem for ControlledField<'_> {
    fn dim(&self) -> usize {
        self.field.form.dim() + usize::from(self.spec.is_some())
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.field.form.dim();
        let (lam, mu) = self.runner.rates_at(t, None);
        self.field.eval_with_rates(lam, mu, &y[..d], &mut dy[..d]);
        if let Some(spec) = self.spec {
            let z = &y[..d];
            dy[d] = spec.running_rate_xy(self.field.x_of(z), self.field.y_of(z), Some((lam, mu)));
        }
    }

    fn on_step(&mut self, t: f64, _y: &[f64]) -> Result<()> {
        self.runner.decide(t);
        Ok(())
    }

    fn project(&self, y: &mut [f64]) -> Result<()> {
        project_simplex(y, self.field.form.dim(), self.field.c)
    }
}

/// Result of running a policy on the mean-field system.
#[derive(Debug, Clone)]
pub struct OdeEvaluation {
    pub cost: f64,
    /// Field state only (the cost accumulator is stripped).
    pub trajectory: OdeTrajectory,
    pub decisions: Vec<TrackerDecision>,
}

pub const ODE_COST_TOL: f64 = 1e-9;

/// `int_0^T c1(Z(t), u(t)) dt + c2(Z(T))` along the controlled mean-field path.
pub fn evaluate_ode_cost(
    policy: &ControlPolicy,
    field: &VectorField,
    z0: &[f64],
    spec: &HorizonCostSpec,
) -> Result<f64> {
    Ok(evaluate_ode(policy, field, z0, spec, ODE_COST_TOL)?.cost)
}

pub fn evaluate_ode(
    policy: &ControlPolicy,
    field: &VectorField,
    z0: &[f64],
    spec: &HorizonCostSpec,
    tol: f64,
) -> Result<OdeEvaluation> {
    spec.validate()?;
    let (traj, decisions) = run_controlled(policy, field, z0, spec.horizon, tol, Some(spec))?;
    let d = field.form.dim();
    let last = traj.final_state();
    let z_end = &last[..d];
    let cost = last[d] + spec.terminal_cost_xy(field.x_of(z_end), field.y_of(z_end));
    if !cost.is_finite() {
        return domain("cost is not finite (action outside the cost table?)");
    }
    Ok(OdeEvaluation {
        cost,
        trajectory: strip_last_component(&traj),
        decisions,
    })
}

/// Integrates the field under `policy` without a cost accumulator.
pub fn simulate_ode(
    policy: &ControlPolicy,
    field: &VectorField,
    z0: &[f64],
    horizon: f64,
    tol: f64,
) -> Result<(OdeTrajectory, Vec<TrackerDecision>)> {
    run_controlled(policy, field, z0, horizon, tol, None)
}

fn run_controlled(
    policy: &ControlPolicy,
    field: &VectorField,
    z0: &[f64],
    horizon: f64,
    tol: f64,
    spec: Option<&HorizonCostSpec>,
) -> Result<(OdeTrajectory, Vec<TrackerDecision>)> {
    if matches!(policy, ControlPolicy::Tabular { .. }) {
        return Err(Error::Unsupported(
            "tabular policies act on chain states; simulate them on the n-system".into(),
        ));
    }
    field.check_initial(z0)?;
    let runner = Runner::new(policy, true)?;
    let mut opts = IntegratorOptions::new(tol);
    if let ControlPolicy::RateConstrained(p) = policy {
        opts.max_step = p.control_step;
    }
    let mut y0 = z0.to_vec();
    if spec.is_some() {
        y0.push(0.0);
    }
    let mut sys = ControlledField { field, runner, spec };
    let traj = integrate_system(&mut sys, 0.0, &y0, horizon, opts)?;
    Ok((traj, sys.runner.history()))
}

fn strip_last_component(traj: &OdeTrajectory) -> OdeTrajectory {
    let d = traj.dim;
    let keep = |v: &[f64]| -> Vec<f64> { v.chunks(d).flat_map(|r| r[..d - 1].to_vec()).collect() };
    OdeTrajectory {
        dim: d - 1,
        times: traj.times.clone(),
        states: keep(&traj.states),
        slope_start: keep(&traj.slope_start),
        slope_end: keep(&traj.slope_end),
        correction: keep(&traj.correction),
        stats: traj.stats,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::FieldForm;

    fn field(form: FieldForm) -> VectorField {
        VectorField::new(
            RateSchedule::constant(1.0).unwrap(),
            RateSchedule::constant(0.5).unwrap(),
            1.0,
            form,
        )
        .unwrap()
    }

    #[test]
    fn stationary_examples() {
        let p = ProfitSpec::linear(1.0).unwrap();
        let (mu, v) = stationary_one_sided(&p, &ActionCostSpec::linear(0.0, 0.1).unwrap(), 1.0, 2.0).unwrap();
        assert!((mu - 1.0).abs() < 1e-9 && (v - 0.9).abs() < 1e-9, "{mu} {v}");
        let (mu, v) = stationary_one_sided(&p, &ActionCostSpec::linear(0.0, 2.0).unwrap(), 1.0, 2.0).unwrap();
        assert_eq!((mu, v), (0.0, 0.0));
        let (mu, _) = stationary_one_sided(&p, &ActionCostSpec::Zero, 0.7, 3.0).unwrap();
        assert!((mu - 0.7).abs() < 1e-9, "{mu}");
        assert!(stationary_one_sided(&p, &ActionCostSpec::Zero, 1.0, 0.0).is_err());
    }

    #[test]
    fn stationary_matches_brute_force() {
        let p = ProfitSpec::quadratic(0.3).unwrap();
        let cost = ActionCostSpec::linear(0.0, 0.05).unwrap();
        let (mu, v) = stationary_one_sided(&p, &cost, 2.0, 3.0).unwrap();
        let g = |m: f64| p.eval((m / 2.0).min(1.0)) - 0.05 * m;
        let brute = (0..=100_000).map(|k| g(3.0 * k as f64 / 1e5)).fold(f64::NEG_INFINITY, f64::max);
        assert!(v >= brute - 1e-10);
        assert!((g(mu) - v).abs() < 1e-15);
    }

    #[test]
    fn ideal_examples() {
        let pol = ideal_trajectory_controller(0.5, 10.0, 1.0, 1.0).unwrap();
        let mut l = lift_policy(&pol, 100).unwrap();
        for (t, i) in [(0.0, 0), (3.0, 50), (7.5, 100)] {
            assert_eq!(l.rates(t, i).unwrap(), (10.0, 5.0));
        }
        assert!(ideal_trajectory_controller(1.0, 10.0, 1.0, 1.0).is_err());
        assert!(ideal_trajectory_controller(0.5, 0.5, 1.0, 1.0).is_err());
        assert!(ideal_trajectory_controller(0.5, 2.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn stationary_lift() {
        let mut l = lift_policy(&ControlPolicy::Stationary { lambda: 2.0, mu: 1.0 }, 7).unwrap();
        assert_eq!(l.rates(1.0, 3).unwrap(), (2.0, 1.0));
        let tab = ControlPolicy::Tabular {
            n: 3,
            policy: Policy {
                actions: vec![(1.0, 0.0); 4],
                masked: vec![],
            },
        };
        assert!(lift_policy(&tab, 4).is_err());
        assert_eq!(lift_policy(&tab, 3).unwrap().rates(0.0, 2).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn reachable_target_examples() {
        let p = ProfitSpec::quadratic(0.5).unwrap();
        assert_eq!(reachable_target(&p, 0.45, (0.4, 0.7)).unwrap(), 0.5);
        assert_eq!(reachable_target(&p, 0.2, (0.1, 0.3)).unwrap(), 0.3);
        assert_eq!(reachable_target(&p, 0.2, (0.19, 0.21)).unwrap(), 0.21);
        assert!(reachable_target(&p, 0.2, (0.3, 0.1)).is_err());
        let plateau = ProfitSpec::new(
            ProfitProfile::Table {
                points: vec![(0.0, 0.0), (0.3, 1.0), (0.6, 1.0), (1.0, 0.0)],
            },
            1.0,
        )
        .unwrap();
        assert_eq!(reachable_target(&plateau, 0.5, (0.35, 0.55)).unwrap(), 0.35);
        assert_eq!(reachable_target(&plateau, 0.5, (0.1, 0.55)).unwrap(), 0.3);
    }

    #[test]
    fn tracker_holds_at_optimum() {
        let p = ProfitSpec::quadratic(0.5).unwrap();
        let mut params = match rate_constrained_controller(&p, ThetaBox::symmetric(10.0).unwrap(), (2.0, 1.0)).unwrap() {
            ControlPolicy::RateConstrained(p) => p,
            _ => unreachable!(),
        };
        params.lambda_max = 2.0;
        let mut l = lift_policy(&ControlPolicy::RateConstrained(params), 10).unwrap();
        for k in 0..50 {
            assert_eq!(l.rates(k as f64 * 0.1, 5).unwrap(), (2.0, 1.0));
        }
    }

    #[test]
    fn tracker_respects_theta() {
        let p = ProfitSpec::quadratic(0.5).unwrap();
        let theta = ThetaBox::new(-0.2, 0.3, -0.1, 0.05).unwrap();
        let pol = rate_constrained_controller(&p, theta, (2.0, 0.2)).unwrap();
        let f = field(FieldForm::Reduced);
        let (_, decisions) = simulate_ode(&pol, &f, &[0.9], 30.0, 1e-9).unwrap();
        assert!(decisions.len() > 100);
        for d in &decisions {
            assert!(d.dlambda > theta.lambda_lo && d.dlambda < theta.lambda_hi);
            assert!(d.dmu > theta.mu_lo && d.dmu < theta.mu_hi);
            assert!(d.lambda <= 4.0 + 1e-12 && d.mu <= 4.0 + 1e-12);
        }
        // Ratio reaches the peak eventually.
        let last = decisions.last().unwrap();
        assert!((last.mu / last.lambda - 0.5).abs() < 1e-2);
        assert!(ThetaBox::new(0.1, 0.1, -1.0, 1.0).is_err());
    }

    #[test]
    fn constant_cost_is_horizon() {
        let spec = HorizonCostSpec::new(CostFn::Constant { value: 1.0 }, CostFn::Zero, 5.0, StateComponent::Susceptible)
            .unwrap();
        let f = field(FieldForm::Pair);
        for pol in [
            ControlPolicy::Stationary { lambda: 1.0, mu: 0.3 },
            ideal_trajectory_controller(0.5, 3.0, 1.0, 1.0).unwrap(),
        ] {
            let j = evaluate_ode_cost(&pol, &f, &[0.2, 0.8], &spec).unwrap();
            assert!((j - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn equilibrium_cost() {
        // Stationary (2, 1) holds x = 0.5.
        let spec = HorizonCostSpec::new(
            CostFn::Quadratic { center: 0.1, weight: 3.0 },
            CostFn::Linear { slope: 2.0, intercept: 0.0 },
            4.0,
            StateComponent::Susceptible,
        )
        .unwrap();
        let j = evaluate_ode_cost(&ControlPolicy::Stationary { lambda: 2.0, mu: 1.0 }, &field(FieldForm::Reduced), &[0.5], &spec)
            .unwrap();
        let expect = 4.0 * 3.0 * 0.16 + 1.0;
        assert!((j - expect).abs() < 1e-12, "{j} vs {expect}");
    }

    #[test]
    fn faster_ideal_controller_costs_less() {
        let spec = HorizonCostSpec::new(
            CostFn::Quadratic { center: 0.5, weight: 1.0 },
            CostFn::Zero,
            10.0,
            StateComponent::Susceptible,
        )
        .unwrap();
        let f = field(FieldForm::Reduced);
        let j1 = evaluate_ode_cost(&ideal_trajectory_controller(0.5, 1.0, 1.0, 1.0).unwrap(), &f, &[0.1], &spec).unwrap();
        let j100 =
            evaluate_ode_cost(&ideal_trajectory_controller(0.5, 100.0, 1.0, 1.0).unwrap(), &f, &[0.1], &spec).unwrap();
        assert!(j100 <= j1);
    }

    #[test]
    fn policy_json_roundtrip() {
        let p = ProfitSpec::quadratic(0.5).unwrap();
        let pol = rate_constrained_controller(&p, ThetaBox::symmetric(1.0).unwrap(), (1.0, 0.2)).unwrap();
        let s = serde_json::to_string(&pol).unwrap();
        assert!(s.contains("\"kind\":\"rate_constrained\""));
        let back: ControlPolicy = serde_json::from_str(&s).unwrap();
        assert_eq!(back, pol);
    }
}
