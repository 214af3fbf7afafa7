//! Uniformized stochastic-shortest-path control of the birth-death chain.
//!
//! The target is the profit-maximizing state `i*`, which is absorbing and
//! cost free. Each stage elsewhere costs `c(i)` plus the action cost. States
//! from which `i*` cannot be reached under any admissible action carry
//! infinite value and are masked rather than approximated.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::ctmc::Preset;
use crate::error::{domain, Error, Result};
use crate::lp::{solve_simplex, LpProblem, LpSolution, LpStatus};
use crate::rates::{argmax_state, stage_cost_with_star, ActionCostSpec, ProfitSpec, TableAction};

/// Ratio of the default uniformization constant to the largest outflow rate.
pub const NU_FACTOR: f64 = 1.25;
/// Values above this are treated as divergent by value iteration.
pub const DIVERGENCE_CAP: f64 = 1e12;
/// Sweeps without a new best residual before value iteration gives up.
const STALL_SWEEPS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub lambda: f64,
    pub mu: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MdpProblem {
    n: usize,
    preset: Preset,
    lambda_max: f64,
    mu_max: f64,
    nu: f64,
    profit: ProfitSpec,
    action_cost: ActionCostSpec,
    star: usize,
    costs: Vec<f64>,
}

impl MdpProblem {
    /// Problem with the default `nu`.
    pub fn new(
        n: usize,
        preset: Preset,
        lambda_max: f64,
        mu_max: f64,
        profit: ProfitSpec,
        action_cost: ActionCostSpec,
    ) -> Result<Self> {
        Self::with_nu(n, preset, lambda_max, mu_max, profit, action_cost, None)
    }

    pub fn with_nu(
        n: usize,
        preset: Preset,
        lambda_max: f64,
        mu_max: f64,
        profit: ProfitSpec,
        action_cost: ActionCostSpec,
        nu: Option<f64>,
    ) -> Result<Self> {
        if n == 0 {
            return domain("population n must be >= 1");
        }
        for (name, v) in [("lambda_max", lambda_max), ("mu_max", mu_max)] {
            if !(v >= 0.0) || !v.is_finite() {
                return domain(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        action_cost.validate(lambda_max, mu_max)?;
        let max_out = (0..=n)
            .map(|i| lambda_max * preset.up_factor(n, i) + mu_max * preset.down_factor(n, i))
            .fold(0.0, f64::max);
        let nu = match nu {
            Some(v) => {
                if !(v > max_out) || !v.is_finite() {
                    return domain(format!(
                        "uniformization constant {v} must exceed the largest outflow rate {max_out}"
                    ));
                }
                v
            }
            None if max_out > 0.0 => NU_FACTOR * max_out,
            None => 1.0,
        };
        let star = argmax_state(&profit, n)?;
        let costs = (0..=n).map(|i| stage_cost_with_star(&profit, n, star, i)).collect();
        Ok(MdpProblem {
            n,
            preset,
            lambda_max,
            mu_max,
            nu,
            profit,
            action_cost,
            star,
            costs,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn preset(&self) -> Preset {
        self.preset
    }

    pub fn caps(&self) -> (f64, f64) {
        (self.lambda_max, self.mu_max)
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn profit(&self) -> &ProfitSpec {
        &self.profit
    }

    pub fn action_cost(&self) -> &ActionCostSpec {
        &self.action_cost
    }

    /// The absorbing target state.
    pub fn star(&self) -> usize {
        self.star
    }

    /// Normalized stage cost `c(i)`.
    pub fn cost(&self, i: usize) -> f64 {
        self.costs[i]
    }

    /// The finite action set: box vertices for zero/linear costs (ordered by
    /// lambda then mu), otherwise the cost table in the same order.
    pub fn actions(&self) -> Vec<Action> {
        match &self.action_cost {
            ActionCostSpec::General { table } => table_actions(table),
            cost => {
                let mut v = Vec::with_capacity(4);
                for lambda in [0.0, self.lambda_max] {
                    for mu in [0.0, self.mu_max] {
                        let a = Action {
                            lambda,
                            mu,
                            cost: cost.eval(lambda, mu).unwrap_or(0.0),
                        };
                        if !v.contains(&a) {
                            v.push(a);
                        }
                    }
                }
                v
            }
        }
    }

    /// `(p_down, p_stay, p_up)` at state `i` under rates `(lambda, mu)`.
    pub fn probs(&self, i: usize, lambda: f64, mu: f64) -> (f64, f64, f64) {
        let up = lambda * self.preset.up_factor(self.n, i) / self.nu;
        let down = mu * self.preset.down_factor(self.n, i) / self.nu;
        (down, 1.0 - up - down, up)
    }
}

fn table_actions(table: &[TableAction]) -> Vec<Action> {
    let mut v: Vec<Action> = table
        .iter()
        .map(|a| Action {
            lambda: a.lambda,
            mu: a.mu,
            cost: a.cost,
        })
        .collect();
    v.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.mu.total_cmp(&b.mu)));
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformizedChain {
    pub actions: Vec<Action>,
    /// `probs[i][k] = (p_down, p_stay, p_up)` for state `i` and action `k`.
    pub probs: Vec<Vec<(f64, f64, f64)>>,
}

pub fn uniformize(problem: &MdpProblem) -> UniformizedChain {
    let actions = problem.actions();
    let probs = (0..=problem.n)
        .map(|i| actions.iter().map(|a| problem.probs(i, a.lambda, a.mu)).collect())
        .collect();
    UniformizedChain { actions, probs }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
    pub finite: Vec<bool>,
    /// Sweeps (value iteration) or improvement rounds (policy iteration).
    pub iterations: usize,
}

impl ValueFunction {
    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// `J(i) - J(i - 1)` where both are finite.
    pub fn increment(&self, i: usize) -> Option<f64> {
        (i > 0 && self.finite[i] && self.finite[i - 1]).then(|| self.values[i] - self.values[i - 1])
    }

    /// Largest difference over states finite in both.
    pub fn max_diff(&self, other: &ValueFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .zip(self.finite.iter().zip(&other.finite))
            .filter(|(_, (a, b))| **a && **b)
            .map(|((x, y), _)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// `(lambda, mu)` per state.
    pub actions: Vec<(f64, f64)>,
    /// States whose action was not optimized because their value is infinite.
    #[serde(default)]
    pub masked: Vec<usize>,
}

/// CSV with header `i,J,lambda,mu,finite`.
pub fn write_value_csv<W: Write>(value: &ValueFunction, policy: &Policy, mut w: W) -> io::Result<()> {
    writeln!(w, "i,J,lambda,mu,finite")?;
    for (i, ((j, fin), (l, m))) in value
        .values
        .iter()
        .zip(&value.finite)
        .zip(&policy.actions)
        .enumerate()
    {
        writeln!(w, "{i},{j},{l},{m},{fin}")?;
    }
    Ok(())
}

/// States from which `i*` is reachable, and the actions allowed at each
/// (those that never step outside the set).
struct Reach {
    lo: usize,
    hi: usize,
    allowed: Vec<Vec<usize>>,
}

impl Reach {
    fn states(&self) -> impl Iterator<Item = usize> + '_ {
        self.lo..=self.hi
    }
}

fn reach(problem: &MdpProblem, actions: &[Action]) -> Reach {
    let n = problem.n;
    let star = problem.star;
    let moves = |i: usize, a: &Action| {
        let (d, _, u) = problem.probs(i, a.lambda, a.mu);
        (d > 0.0, u > 0.0)
    };
    // The set is an interval: left of i* a state needs an upward move, right
    // of it a downward one.
    let mut lo = star;
    while lo > 0 && actions.iter().any(|a| moves(lo - 1, a).1) {
        lo -= 1;
    }
    let mut hi = star;
    while hi < n && actions.iter().any(|a| moves(hi + 1, a).0) {
        hi += 1;
    }
    // Drop actions that can leave the interval, then shrink it while an end
    // state has lost every move toward i*.
    loop {
        let allowed: Vec<Vec<usize>> = (0..=n)
            .map(|i| {
                if i < lo || i > hi || i == star {
                    return Vec::new();
                }
                (0..actions.len())
                    .filter(|&k| {
                        let (d, u) = moves(i, &actions[k]);
                        !(d && i == lo) && !(u && i == hi)
                    })
                    .collect()
            })
            .collect();
        let left_ok = lo == star || allowed[lo].iter().any(|&k| moves(lo, &actions[k]).1);
        let right_ok = hi == star || allowed[hi].iter().any(|&k| moves(hi, &actions[k]).0);
        if left_ok && right_ok {
            return Reach { lo, hi, allowed };
        }
        if !left_ok {
            lo += 1;
        }
        if !right_ok {
            hi -= 1;
        }
    }
}

/// Every solver rejects problems where no other state can reach `i*`.
fn require_proper(r: &Reach) -> Result<()> {
    if r.lo == r.hi {
        return Err(Error::NoProperPolicy);
    }
    Ok(())
}

fn q_value(problem: &MdpProblem, j: &[f64], finite: &[bool], i: usize, a: &Action) -> f64 {
    let (d, s, u) = problem.probs(i, a.lambda, a.mu);
    let g = problem.costs[i] + a.cost;
    let mut q = g + s * j[i];
    for (p, k) in [(d, i.wrapping_sub(1)), (u, i + 1)] {
        if p > 0.0 {
            if !finite[k] {
                return f64::INFINITY;
            }
            q += p * j[k];
        }
    }
    q
}

fn tie_tol(v: f64) -> f64 {
    1e-12 * v.abs().max(1.0)
}

/// `max |J(i) - (TJ)(i)|` over finite states other than `i*`.
pub fn bellman_residual(problem: &MdpProblem, value: &ValueFunction) -> f64 {
    let actions = problem.actions();
    let mut worst: f64 = 0.0;
    for i in 0..=problem.n {
        if i == problem.star || !value.finite[i] {
            continue;
        }
        let tj = actions
            .iter()
            .map(|a| q_value(problem, &value.values, &value.finite, i, a))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max((value.values[i] - tj).abs());
    }
    worst
}

/// Greedy policy: per finite state the minimizing action, ties to smaller
/// `lambda` then smaller `mu`. `i*` and infinite states get `(0, 0)`; the
/// latter are listed in `masked`.
pub fn extract_policy(problem: &MdpProblem, value: &ValueFunction) -> Policy {
    let actions = problem.actions();
    let mut out = vec![(0.0, 0.0); problem.n + 1];
    let mut masked = Vec::new();
    for (i, slot) in out.iter_mut().enumerate() {
        if i == problem.star {
            continue;
        }
        if !value.finite[i] {
            masked.push(i);
            continue;
        }
        let qs: Vec<f64> = actions
            .iter()
            .map(|a| q_value(problem, &value.values, &value.finite, i, a))
            .collect();
        let best = qs.iter().copied().fold(f64::INFINITY, f64::min);
        if let Some(k) = qs.iter().position(|&q| q <= best + tie_tol(best)) {
            *slot = (actions[k].lambda, actions[k].mu);
        }
    }
    Policy {
        actions: out,
        masked,
    }
}

fn empty_value(problem: &MdpProblem) -> ValueFunction {
    ValueFunction {
        values: vec![f64::INFINITY; problem.n + 1],
        finite: vec![false; problem.n + 1],
        iterations: 0,
    }
}

/// Exact values from the push-toward-target recursions (paper preset, no
/// action costs).
pub fn solve_closed_form(problem: &MdpProblem) -> Result<(ValueFunction, Policy)> {
    if !problem.action_cost.is_zero() {
        return Err(Error::Unsupported(
            "closed form needs zero action costs; use vi, pi or lp".into(),
        ));
    }
    if problem.preset != Preset::Paper {
        return Err(Error::Unsupported(
            "closed form recursions hold for the paper preset only".into(),
        ));
    }
    let (n, star, nu) = (problem.n, problem.star, problem.nu);
    let mut v = empty_value(problem);
    v.values[star] = 0.0;
    v.finite[star] = true;
    let mut actions = vec![(0.0, 0.0); n + 1];
    for i in (0..star).rev() {
        let push = problem.lambda_max * (i * (n - i)) as f64;
        if push <= 0.0 {
            break;
        }
        v.values[i] = v.values[i + 1] + n as f64 * nu * problem.costs[i] / push;
        v.finite[i] = true;
        actions[i] = (problem.lambda_max, 0.0);
    }
    for i in star + 1..=n {
        let push = problem.mu_max * (n - i) as f64;
        if push <= 0.0 {
            break;
        }
        v.values[i] = v.values[i - 1] + nu * problem.costs[i] / push;
        v.finite[i] = true;
        actions[i] = (0.0, problem.mu_max);
    }
    if v.finite.iter().filter(|&&f| f).count() == 1 {
        return Err(Error::NoProperPolicy);
    }
    let masked = (0..=n).filter(|&i| !v.finite[i]).collect();
    Ok((v, Policy { actions, masked }))
}

#[derive(Debug, Clone, Copy)]
pub struct ViOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    pub divergence_cap: f64,
}

impl ViOptions {
    pub fn new(tol: f64) -> Self {
        ViOptions {
            tol,
            max_sweeps: 1_000_000,
            divergence_cap: DIVERGENCE_CAP,
        }
    }
}

pub fn value_iteration(problem: &MdpProblem, tol: f64) -> Result<(ValueFunction, Policy)> {
    value_iteration_from(problem, ViOptions::new(tol), None)
}

/// Gauss-Seidel value iteration sweeping outward from `i*`, optionally warm
/// started. Each update solves the state's own equation for the self-loop,
/// which leaves the fixed points of the Bellman operator unchanged.
pub fn value_iteration_from(
    problem: &MdpProblem,
    opts: ViOptions,
    init: Option<&[f64]>,
) -> Result<(ValueFunction, Policy)> {
    if !(opts.tol > 0.0) {
        return domain(format!("tolerance must be > 0, got {}", opts.tol));
    }
    let actions = problem.actions();
    let r = reach(problem, &actions);
    require_proper(&r)?;
    let star = problem.star;
    let mut v = empty_value(problem);
    for i in r.states() {
        v.finite[i] = true;
        v.values[i] = match init {
            Some(j) if i != star && j[i].is_finite() => j[i],
            _ => 0.0,
        };
    }
    let order: Vec<usize> = (r.lo..star).rev().chain(star + 1..=r.hi).collect();
    let (mut best_res, mut best_at) = (f64::INFINITY, 0);
    loop {
        let res = bellman_residual(problem, &v);
        if res <= opts.tol {
            break;
        }
        if res < best_res {
            (best_res, best_at) = (res, v.iterations);
        } else if v.iterations - best_at >= STALL_SWEEPS {
            return Err(Error::NotConverged(format!(
                "value iteration stalled at residual {best_res:e} (tolerance {}); \
                 the tolerance is below the rounding floor for values of this size",
                opts.tol
            )));
        }
        if v.iterations >= opts.max_sweeps {
            return Err(Error::NotConverged(format!(
                "value iteration did not reach residual {} in {} sweeps",
                opts.tol, opts.max_sweeps
            )));
        }
        for &i in &order {
            let mut best = f64::INFINITY;
            for &k in &r.allowed[i] {
                let a = &actions[k];
                let (d, s, u) = problem.probs(i, a.lambda, a.mu);
                let g = problem.costs[i] + a.cost;
                let q = if s < 1.0 {
                    let mut acc = g;
                    if d > 0.0 {
                        acc += d * v.values[i - 1];
                    }
                    if u > 0.0 {
                        acc += u * v.values[i + 1];
                    }
                    acc / (1.0 - s)
                } else if g == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                best = best.min(q);
            }
            v.values[i] = best;
        }
        v.iterations += 1;
        let diverged: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| !(v.values[i] <= opts.divergence_cap))
            .collect();
        if !diverged.is_empty() {
            for i in diverged {
                v.finite[i] = false;
                v.values[i] = f64::INFINITY;
            }
        }
    }
    let policy = extract_policy(problem, &v);
    Ok((v, policy))
}

/// Solves `-a_k x_{k-1} + b_k x_k - c_k x_{k+1} = d_k` (Thomas algorithm).
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let m = diag.len();
    if m == 0 {
        return Some(Vec::new());
    }
    let mut cp = vec![0.0; m];
    let mut dp = vec![0.0; m];
    let mut piv = diag[0];
    if piv.abs() < 1e-300 {
        return None;
    }
    cp[0] = -sup[0] / piv;
    dp[0] = rhs[0] / piv;
    for k in 1..m {
        piv = diag[k] + sub[k] * cp[k - 1];
        if piv.abs() < 1e-300 {
            return None;
        }
        cp[k] = -sup[k] / piv;
        dp[k] = (rhs[k] + sub[k] * dp[k - 1]) / piv;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = dp[m - 1];
    for k in (0..m - 1).rev() {
        x[k] = dp[k] - cp[k] * x[k + 1];
    }
    Some(x)
}

fn evaluate_policy(
    problem: &MdpProblem,
    actions: &[Action],
    r: &Reach,
    choice: &[usize],
) -> Result<ValueFunction> {
    let star = problem.star;
    let mut improper = Vec::new();
    for i in r.states().filter(|&i| i != star) {
        let a = &actions[choice[i]];
        let (d, _, u) = problem.probs(i, a.lambda, a.mu);
        if (i < star && u <= 0.0) || (i > star && d <= 0.0) {
            improper.push(i);
        }
    }
    if !improper.is_empty() {
        return Err(Error::ImproperPolicy(improper));
    }
    let mut v = empty_value(problem);
    v.values[star] = 0.0;
    v.finite[star] = true;
    for seg in [(r.lo..star).collect::<Vec<_>>(), (star + 1..=r.hi).collect()] {
        let m = seg.len();
        let (mut sub, mut diag, mut sup, mut rhs) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        for (k, &i) in seg.iter().enumerate() {
            let a = &actions[choice[i]];
            let (d, s, u) = problem.probs(i, a.lambda, a.mu);
            diag[k] = 1.0 - s;
            rhs[k] = problem.costs[i] + a.cost;
            // neighbors that are i* contribute 0
            if k > 0 {
                sub[k] = d;
            }
            if k + 1 < m {
                sup[k] = u;
            }
        }
        let x = thomas(&sub, &diag, &sup, &rhs).ok_or_else(|| {
            Error::ImproperPolicy(seg.clone())
        })?;
        for (k, &i) in seg.iter().enumerate() {
            v.values[i] = x[k];
            v.finite[i] = true;
        }
    }
    Ok(v)
}

/// Policy iteration from the push-toward-target policy.
pub fn policy_iteration(problem: &MdpProblem) -> Result<(ValueFunction, Policy)> {
    let actions = problem.actions();
    let r = reach(problem, &actions);
    require_proper(&r)?;
    let star = problem.star;
    let mut choice = vec![0usize; problem.n + 1];
    for i in r.states().filter(|&i| i != star) {
        // Strongest push toward i*, ties to the earlier (cheaper-ordered) action.
        let push = |k: usize| {
            let (d, _, u) = problem.probs(i, actions[k].lambda, actions[k].mu);
            if i < star {
                u - d
            } else {
                d - u
            }
        };
        choice[i] = r.allowed[i]
            .iter()
            .copied()
            .fold(None, |best: Option<usize>, k| match best {
                Some(b) if push(b) >= push(k) => Some(b),
                _ => Some(k),
            })
            .unwrap_or(0);
    }
    policy_iteration_from(problem, &actions, &r, choice)
}

/// Policy iteration from an explicit starting policy.
pub fn policy_iteration_with(problem: &MdpProblem, start: &Policy) -> Result<(ValueFunction, Policy)> {
    let actions = problem.actions();
    let r = reach(problem, &actions);
    require_proper(&r)?;
    if start.actions.len() != problem.n + 1 {
        return domain("starting policy has the wrong length");
    }
    let mut choice = vec![0usize; problem.n + 1];
    for i in r.states().filter(|&i| i != problem.star) {
        let (l, m) = start.actions[i];
        choice[i] = actions
            .iter()
            .position(|a| a.lambda == l && a.mu == m)
            .ok_or_else(|| Error::Domain(format!("action ({l}, {m}) at state {i} is not in the action set")))?;
    }
    policy_iteration_from(problem, &actions, &r, choice)
}

fn policy_iteration_from(
    problem: &MdpProblem,
    actions: &[Action],
    r: &Reach,
    mut choice: Vec<usize>,
) -> Result<(ValueFunction, Policy)> {
    let star = problem.star;
    for round in 1..=10_000 {
        let mut v = evaluate_policy(problem, actions, r, &choice)?;
        v.iterations = round;
        let mut changed = false;
        for i in r.states().filter(|&i| i != star) {
            let cur = q_value(problem, &v.values, &v.finite, i, &actions[choice[i]]);
            let mut best = (cur, choice[i]);
            for &k in &r.allowed[i] {
                let q = q_value(problem, &v.values, &v.finite, i, &actions[k]);
                if q < best.0 - tie_tol(best.0) {
                    best = (q, k);
                }
            }
            if best.1 != choice[i] {
                choice[i] = best.1;
                changed = true;
            }
        }
        if !changed {
            let mut policy = extract_policy(problem, &v);
            for i in r.states().filter(|&i| i != star) {
                policy.actions[i] = (actions[choice[i]].lambda, actions[choice[i]].mu);
            }
            return Ok((v, policy));
        }
    }
    Err(Error::NotConverged("policy iteration did not stabilize".into()))
}

/// An LP whose variables are `J(i)` for the listed states.
#[derive(Debug, Clone, PartialEq)]
pub struct LpEncoding {
    pub lp: LpProblem,
    pub states: Vec<usize>,
}

fn check_weights(problem: &MdpProblem, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0; problem.n + 1]),
        Some(w) => {
            if w.len() != problem.n + 1 {
                return domain(format!("expected {} weights, got {}", problem.n + 1, w.len()));
            }
            if w.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return domain("LP weights must be positive and finite");
            }
            Ok(w.to_vec())
        }
    }
}

fn encode(problem: &MdpProblem, actions: &[Action], weights: Option<&[f64]>) -> Result<LpEncoding> {
    let w = check_weights(problem, weights)?;
    let r = reach(problem, actions);
    let star = problem.star;
    require_proper(&r)?;
    let states: Vec<usize> = r.states().filter(|&i| i != star).collect();
    let col = |i: usize| states.iter().position(|&s| s == i);
    let nv = states.len();
    let objective = states.iter().map(|&i| w[i]).collect();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for &i in &states {
        for &k in &r.allowed[i] {
            let act = &actions[k];
            let (d, s, u) = problem.probs(i, act.lambda, act.mu);
            let mut row = vec![0.0; nv];
            row[col(i).expect("state in LP")] += 1.0 - s;
            if d > 0.0 {
                if let Some(c) = col(i - 1) {
                    row[c] -= d;
                }
            }
            if u > 0.0 {
                if let Some(c) = col(i + 1) {
                    row[c] -= u;
                }
            }
            a.push(row);
            b.push(problem.costs[i] + act.cost);
        }
    }
    Ok(LpEncoding {
        lp: LpProblem::new(objective, a, b)?,
        states,
    })
}

/// Vertex LP for zero or linear action costs.
pub fn encode_lp_linear(problem: &MdpProblem, weights: Option<&[f64]>) -> Result<LpEncoding> {
    if matches!(problem.action_cost, ActionCostSpec::General { .. }) {
        return Err(Error::Unsupported(
            "linear LP encoding needs a zero or linear action cost; use the table encoding".into(),
        ));
    }
    encode(problem, &problem.actions(), weights)
}

/// LP over an explicit finite action table.
pub fn encode_lp_general(
    problem: &MdpProblem,
    table: &[TableAction],
    weights: Option<&[f64]>,
) -> Result<LpEncoding> {
    if table.is_empty() {
        return domain("action table U_K must be nonempty");
    }
    ActionCostSpec::general(table.to_vec())?.validate(problem.lambda_max, problem.mu_max)?;
    encode(problem, &table_actions(table), weights)
}

/// Solves an encoding and maps the optimum back to a value function.
pub fn solve_encoding(problem: &MdpProblem, enc: &LpEncoding) -> Result<(ValueFunction, LpSolution)> {
    let sol = solve_simplex(&enc.lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Unbounded | LpStatus::Infeasible => return Err(Error::NoProperPolicy),
    }
    let mut v = empty_value(problem);
    v.values[problem.star] = 0.0;
    v.finite[problem.star] = true;
    for (&i, &x) in enc.states.iter().zip(&sol.x) {
        v.values[i] = x;
        v.finite[i] = true;
    }
    v.iterations = sol.iterations;
    Ok((v, sol))
}

/// Encodes by the problem's cost kind, solves, and extracts the greedy policy.
pub fn solve_lp(problem: &MdpProblem, weights: Option<&[f64]>) -> Result<(ValueFunction, Policy, LpSolution)> {
    let enc = match &problem.action_cost {
        ActionCostSpec::General { table } => encode_lp_general(problem, table, weights)?,
        _ => encode_lp_linear(problem, weights)?,
    };
    let (v, sol) = solve_encoding(problem, &enc)?;
    let policy = extract_policy(problem, &v);
    Ok((v, policy, sol))
}
