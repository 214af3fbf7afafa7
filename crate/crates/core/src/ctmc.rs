//! Exact simulation of the finite-n time-inhomogeneous epidemic chain.
//!
//! The chain is a birth-death process on `{0, ..., n}`. Sample paths are
//! produced by thinning: candidate events arrive at the constant majorant
//! rate `lambda_max * up(i) + mu_max * down(i)` and are accepted with
//! probability `true rate / majorant`. Between accepted events the state is
//! constant, so the majorant only changes when the state does.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{lift_policy, ControlPolicy, HorizonCostSpec};
use crate::error::{domain, Error, Result};
use crate::rates::RateSchedule;

/// Transition structure of the birth-death chain.
///
/// Both presets move up at rate `lambda * i (n - i) / n`. They differ in
/// the down move: `Paper` uses `mu * (n - i)` (zero at `i = 0`), `Sis` uses
/// `mu * i`. In both, `i` is the tracked count whose scaled value `i / n`
/// is reported as the infected fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
    Sis,
}

impl Preset {
    pub fn up_factor(self, n: usize, i: usize) -> f64 {
        let (n, i) = (n as f64, i as f64);
        i * (n - i) / n
    }

    pub fn down_factor(self, n: usize, i: usize) -> f64 {
        match self {
            Preset::Paper if i == 0 => 0.0,
            Preset::Paper => (n - i) as f64,
            Preset::Sis => i as f64,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "sis" => Ok(Preset::Sis),
            other => domain(format!("unknown preset {other:?} (expected paper|sis)")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Sis => "sis",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    State(usize),
    /// Probabilities over `{0, ..., n}`.
    Distribution(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessModel {
    pub n: usize,
    pub preset: Preset,
    pub lambda: RateSchedule,
    pub mu: RateSchedule,
    pub initial: InitialCondition,
}

impl ProcessModel {
    pub fn new(
        n: usize,
        preset: Preset,
        lambda: RateSchedule,
        mu: RateSchedule,
        initial: InitialCondition,
    ) -> Result<Self> {
        let m = ProcessModel {
            n,
            preset,
            lambda,
            mu,
            initial,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return domain("population n must be >= 1");
        }
        self.lambda.validate()?;
        self.mu.validate()?;
        match &self.initial {
            InitialCondition::State(i) if *i > self.n => {
                domain(format!("initial state {i} outside [0, {}]", self.n))
            }
            InitialCondition::State(_) => Ok(()),
            InitialCondition::Distribution(p) => {
                if p.len() != self.n + 1 {
                    return domain(format!(
                        "initial distribution has {} entries, expected {}",
                        p.len(),
                        self.n + 1
                    ));
                }
                if p.iter().any(|v| !(*v >= 0.0)) {
                    return domain("initial probabilities must be >= 0");
                }
                let s: f64 = p.iter().sum();
                if s == 0.0 {
                    return domain("initial distribution has zero total probability");
                }
                if (s - 1.0).abs() > 1e-12 {
                    return domain(format!("initial distribution sums to {s}, not 1"));
                }
                Ok(())
            }
        }
    }
}

/// Source of the rate pair driving a simulation.
///
/// `rates` is called with nondecreasing `t`, once per thinning proposal.
pub trait RateController {
    /// Upper bounds `(lambda_max, mu_max)` valid on `[0, horizon]`.
    fn caps(&self, horizon: f64) -> Result<(f64, f64)>;
    fn rates(&mut self, t: f64, state: usize) -> Result<(f64, f64)>;
}

/// The model's own schedules.
pub struct NominalRates<'a> {
    lambda: &'a RateSchedule,
    mu: &'a RateSchedule,
}

impl<'a> NominalRates<'a> {
    pub fn new(lambda: &'a RateSchedule, mu: &'a RateSchedule) -> Self {
        NominalRates { lambda, mu }
    }
}

impl RateController for NominalRates<'_> {
    fn caps(&self, horizon: f64) -> Result<(f64, f64)> {
        Ok((
            self.lambda.rate_bounds(0.0, horizon)?.1,
            self.mu.rate_bounds(0.0, horizon)?.1,
        ))
    }

    fn rates(&mut self, t: f64, _state: usize) -> Result<(f64, f64)> {
        Ok((self.lambda.eval(t)?, self.mu.eval(t)?))
    }
}

/// One thinning proposal, kept when [`SimOptions::record_proposals`] is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub t: f64,
    pub state: usize,
    pub total_rate: f64,
    pub majorant: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    pub record_proposals: bool,
    pub record_actions: bool,
}

/// Event-time sample path of the unscaled chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n: usize,
    pub seed: u64,
    pub horizon: f64,
    /// `times[0] == 0`, strictly increasing.
    pub times: Vec<f64>,
    /// State holding from `times[k]` until the next event.
    pub states: Vec<usize>,
    /// Rate pair in force at the start of each segment, if recorded.
    pub actions: Option<Vec<(f64, f64)>>,
    pub proposals: Option<Vec<Proposal>>,
}

impl Trajectory {
    pub fn final_state(&self) -> usize {
        *self.states.last().expect("trajectory has an initial state")
    }

    /// State at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s <= t);
        self.states[k.saturating_sub(1)]
    }

    pub fn num_events(&self) -> usize {
        self.times.len() - 1
    }

    /// CSV with header `t,state,frac`: one row per event (the first row is
    /// the initial state at t = 0) plus a final row at the horizon.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,state,frac")?;
        let n = self.n as f64;
        for (t, s) in self.times.iter().zip(&self.states) {
            writeln!(w, "{},{},{}", t, s, *s as f64 / n)?;
        }
        let s = self.final_state();
        writeln!(w, "{},{},{}", self.horizon, s, s as f64 / n)
    }
}

/// `Z_n = Z_hat_n / n` on the same event times.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledTrajectory {
    pub n: usize,
    pub horizon: f64,
    pub times: Vec<f64>,
    pub fracs: Vec<f64>,
}

impl ScaledTrajectory {
    /// Multiplies back to integer states.
    pub fn unscale(&self) -> Vec<usize> {
        self.fracs
            .iter()
            .map(|f| (f * self.n as f64).round() as usize)
            .collect()
    }
}

pub fn scale(trajectory: &Trajectory) -> ScaledTrajectory {
    let n = trajectory.n as f64;
    ScaledTrajectory {
        n: trajectory.n,
        horizon: trajectory.horizon,
        times: trajectory.times.clone(),
        fracs: trajectory.states.iter().map(|&s| s as f64 / n).collect(),
    }
}

fn draw_initial(model: &ProcessModel, rng: &mut ChaCha8Rng) -> usize {
    match &model.initial {
        InitialCondition::State(i) => *i,
        InitialCondition::Distribution(p) => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, &pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    return i;
                }
            }
            p.iter().rposition(|&pi| pi > 0.0).unwrap_or(0)
        }
    }
}

/// Sample path under the model's nominal schedules.
pub fn simulate(model: &ProcessModel, horizon: f64, seed: u64) -> Result<Trajectory> {
    simulate_with(
        model,
        &mut NominalRates::new(&model.lambda, &model.mu),
        horizon,
        seed,
        SimOptions::default(),
    )
}

/// Sample path with rates taken from `policy`, lifted to the model's `n`.
pub fn simulate_controlled(
    model: &ProcessModel,
    policy: &ControlPolicy,
    horizon: f64,
    seed: u64,
) -> Result<Trajectory> {
    let mut lifted = lift_policy(policy, model.n)?;
    simulate_with(
        model,
        &mut lifted,
        horizon,
        seed,
        SimOptions {
            record_actions: true,
            ..SimOptions::default()
        },
    )
}

/// Thinning simulation against an arbitrary rate source.
pub fn simulate_with(
    model: &ProcessModel,
    controller: &mut dyn RateController,
    horizon: f64,
    seed: u64,
    opts: SimOptions,
) -> Result<Trajectory> {
    model.validate()?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return domain(format!("horizon must be positive and finite, got {horizon}"));
    }
    let (lam_cap, mu_cap) = controller.caps(horizon)?;
    if !(lam_cap >= 0.0 && mu_cap >= 0.0) || !lam_cap.is_finite() || !mu_cap.is_finite() {
        return Err(Error::Contract(format!(
            "rate caps must be finite and >= 0, got ({lam_cap}, {mu_cap})"
        )));
    }
    let n = model.n;
    let preset = model.preset;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = draw_initial(model, &mut rng);
    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut states = vec![state];
    let mut actions = opts.record_actions.then(Vec::new);
    let mut proposals = opts.record_proposals.then(Vec::new);
    if let Some(a) = actions.as_mut() {
        a.push(checked_rates(controller, 0.0, state, lam_cap, mu_cap)?);
    }
    let slack = |cap: f64| cap * (1.0 + 1e-12) + 1e-300;

    loop {
        let up = preset.up_factor(n, state);
        let down = preset.down_factor(n, state);
        let majorant = lam_cap * up + mu_cap * down;
        if majorant <= 0.0 {
            break;
        }
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / majorant;
        if t > horizon {
            break;
        }
        let (lam, mu) = controller.rates(t, state)?;
        if !(lam >= 0.0 && mu >= 0.0) || lam > slack(lam_cap) || mu > slack(mu_cap) {
            return Err(Error::Contract(format!(
                "controller emitted ({lam}, {mu}) at t={t}, outside [0, {lam_cap}] x [0, {mu_cap}]"
            )));
        }
        let r_up = lam * up;
        let r_down = mu * down;
        let v: f64 = rng.random::<f64>() * majorant;
        let next = if v < r_up {
            Some(state + 1)
        } else if v < r_up + r_down {
            Some(state - 1)
        } else {
            None
        };
        if let Some(p) = proposals.as_mut() {
            p.push(Proposal {
                t,
                state,
                total_rate: r_up + r_down,
                majorant,
                accepted: next.is_some(),
            });
        }
        if let Some(s) = next {
            state = s;
            times.push(t);
            states.push(state);
            if let Some(a) = actions.as_mut() {
                a.push(checked_rates(controller, t, state, lam_cap, mu_cap)?);
            }
        }
    }
    Ok(Trajectory {
        n,
        seed,
        horizon,
        times,
        states,
        actions,
        proposals,
    })
}

fn checked_rates(
    controller: &mut dyn RateController,
    t: f64,
    state: usize,
    lam_cap: f64,
    mu_cap: f64,
) -> Result<(f64, f64)> {
    let (lam, mu) = controller.rates(t, state)?;
    if !(lam >= 0.0 && mu >= 0.0)
        || lam > lam_cap * (1.0 + 1e-12) + 1e-300
        || mu > mu_cap * (1.0 + 1e-12) + 1e-300
    {
        return Err(Error::Contract(format!(
            "controller emitted ({lam}, {mu}) at t={t}, outside [0, {lam_cap}] x [0, {mu_cap}]"
        )));
    }
    Ok((lam, mu))
}

/// `int_0^T c1(Z_n(t), u(t)) dt + c2(Z_n(T))`, summed exactly over the
/// piecewise-constant path. Action terms use the rate pair recorded at the
/// start of each segment.
pub fn pathwise_cost(trajectory: &Trajectory, spec: &HorizonCostSpec) -> Result<f64> {
    spec.validate()?;
    let horizon = spec.horizon;
    if trajectory.horizon < horizon {
        return domain(format!(
            "trajectory covers [0, {}] but the cost horizon is {horizon}",
            trajectory.horizon
        ));
    }
    let needs_actions = !spec.action_cost.is_zero();
    if needs_actions && trajectory.actions.is_none() {
        return domain("action costs need a trajectory with recorded actions");
    }
    let n = trajectory.n as f64;
    let mut total = 0.0;
    for k in 0..trajectory.times.len() {
        let t0 = trajectory.times[k];
        if t0 >= horizon {
            break;
        }
        let t1 = trajectory.times.get(k + 1).copied().unwrap_or(horizon).min(horizon);
        let z = trajectory.states[k] as f64 / n;
        let action = trajectory.actions.as_ref().map(|a| a[k]);
        total += spec.running_rate(z, action) * (t1 - t0);
    }
    let z_end = trajectory.state_at(horizon) as f64 / n;
    let total = total + spec.terminal_cost(z_end);
    if !total.is_finite() {
        return domain("path cost is not finite (an action missing from the cost table?)");
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{CostFn, StateComponent};
    use crate::rates::ActionCostSpec;

    fn sis(n: usize, lam: f64, mu: f64, i0: usize) -> ProcessModel {
        ProcessModel::new(
            n,
            Preset::Sis,
            RateSchedule::constant(lam).unwrap(),
            RateSchedule::constant(mu).unwrap(),
            InitialCondition::State(i0),
        )
        .unwrap()
    }

    #[test]
    fn empty_state_is_absorbing() {
        let tr = simulate(&sis(50, 2.0, 1.0, 0), 100.0, 3).unwrap();
        assert_eq!(tr.states, vec![0]);
    }

    #[test]
    fn no_cure_means_monotone_absorption_at_n() {
        let tr = simulate(&sis(30, 2.0, 0.0, 1), 1e4, 11).unwrap();
        assert!(tr.states.windows(2).all(|w| w[1] == w[0] + 1));
        assert_eq!(tr.final_state(), 30);
    }

    #[test]
    fn path_structure() {
        let m = ProcessModel::new(
            40,
            Preset::Sis,
            RateSchedule::sinusoidal(2.0, 1.5, 3.0, 0.0).unwrap(),
            RateSchedule::constant(1.0).unwrap(),
            InitialCondition::State(10),
        )
        .unwrap();
        let tr = simulate_with(
            &m,
            &mut NominalRates::new(&m.lambda, &m.mu),
            20.0,
            5,
            SimOptions {
                record_proposals: true,
                record_actions: false,
            },
        )
        .unwrap();
        assert_eq!(tr.times[0], 0.0);
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        assert!(tr.states.windows(2).all(|w| w[0].abs_diff(w[1]) == 1));
        assert!(tr.states.iter().all(|&s| s <= 40));
        let props = tr.proposals.unwrap();
        assert!(props.iter().all(|p| p.total_rate <= p.majorant * (1.0 + 1e-12)));
        assert_eq!(props.iter().filter(|p| p.accepted).count(), tr.times.len() - 1);
    }

    #[test]
    fn reproducible_by_seed() {
        let m = sis(200, 2.0, 1.0, 20);
        let a = simulate(&m, 10.0, 99).unwrap();
        let b = simulate(&m, 10.0, 99).unwrap();
        let c = simulate(&m, 10.0, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.times, c.times);
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ba).unwrap();
        b.write_csv(&mut bb).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn initial_distribution() {
        let mut p = vec![0.0; 11];
        p[7] = 1.0;
        let m = ProcessModel::new(
            10,
            Preset::Sis,
            RateSchedule::constant(1.0).unwrap(),
            RateSchedule::constant(1.0).unwrap(),
            InitialCondition::Distribution(p),
        )
        .unwrap();
        assert_eq!(simulate(&m, 1.0, 1).unwrap().states[0], 7);
        let zero = ProcessModel::new(
            10,
            Preset::Sis,
            RateSchedule::constant(1.0).unwrap(),
            RateSchedule::constant(1.0).unwrap(),
            InitialCondition::Distribution(vec![0.0; 11]),
        );
        assert!(zero.is_err());
    }

    #[test]
    fn scale_examples() {
        let tr = Trajectory {
            n: 4,
            seed: 0,
            horizon: 3.0,
            times: vec![0.0, 1.0, 2.0],
            states: vec![2, 3, 2],
            actions: None,
            proposals: None,
        };
        let s = scale(&tr);
        assert_eq!(s.fracs, vec![0.5, 0.75, 0.5]);
        assert_eq!(s.times, tr.times);
        assert_eq!(s.unscale(), tr.states);
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,state,frac\n0,2,0.5\n1,3,0.75\n2,2,0.5\n3,2,0.5\n"
        );
    }

    fn spec(running: CostFn, terminal: CostFn, horizon: f64) -> HorizonCostSpec {
        HorizonCostSpec {
            running,
            terminal,
            horizon,
            component: StateComponent::Infected,
            action_cost: ActionCostSpec::Zero,
        }
    }

    #[test]
    fn pathwise_cost_examples() {
        let tr = Trajectory {
            n: 4,
            seed: 0,
            horizon: 5.0,
            times: vec![0.0, 1.5, 2.25, 4.0],
            states: vec![2, 3, 2, 1],
            actions: None,
            proposals: None,
        };
        let one = spec(CostFn::Constant { value: 1.0 }, CostFn::Zero, 5.0);
        assert_eq!(pathwise_cost(&tr, &one).unwrap(), 5.0);
        let term = spec(CostFn::Zero, CostFn::Linear { slope: 1.0, intercept: 0.0 }, 5.0);
        assert_eq!(pathwise_cost(&tr, &term).unwrap(), 0.25);
        let long = spec(CostFn::Zero, CostFn::Zero, 6.0);
        assert!(pathwise_cost(&tr, &long).is_err());

        // Quadratic running cost against midpoint quadrature on a refinement.
        let q = spec(
            CostFn::Quadratic {
                center: 0.3,
                weight: 2.0,
            },
            CostFn::Zero,
            4.5,
        );
        let exact = pathwise_cost(&tr, &q).unwrap();
        let m = 450_000;
        let h = 4.5 / m as f64;
        let quad: f64 = (0..m)
            .map(|k| {
                let t = (k as f64 + 0.5) * h;
                let z = tr.state_at(t) as f64 / 4.0;
                2.0 * (z - 0.3) * (z - 0.3) * h
            })
            .sum();
        assert!((exact - quad).abs() < 1e-10, "{exact} vs {quad}");
    }

    #[test]
    fn controller_contract_violation() {
        struct Liar;
        impl RateController for Liar {
            fn caps(&self, _: f64) -> Result<(f64, f64)> {
                Ok((1.0, 1.0))
            }
            fn rates(&mut self, _: f64, _: usize) -> Result<(f64, f64)> {
                Ok((2.0, 0.5))
            }
        }
        let m = sis(10, 1.0, 1.0, 5);
        let r = simulate_with(&m, &mut Liar, 10.0, 1, SimOptions::default());
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn paper_preset_boundaries() {
        assert_eq!(Preset::Paper.down_factor(4, 0), 0.0);
        assert_eq!(Preset::Paper.down_factor(4, 1), 3.0);
        assert_eq!(Preset::Paper.up_factor(4, 4), 0.0);
        assert_eq!(Preset::Sis.down_factor(4, 3), 3.0);
    }
}
