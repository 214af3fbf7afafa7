//! Mean-field ODE limit: integration, stability classification and audits.
//!
//! `x` is the non-infected fraction and `y = c - x` the infected one. The
//! pair form integrates `(x, y)` directly; the reduced form integrates
//! `dx/dt = lambda x^2 - (lambda c + mu) x + mu c`.

use std::io::{self, Write};

use serde::{Serialize, Serializer};

use crate::error::{domain, Error, Result};
use crate::rates::RateSchedule;

/// Overshoot past the simplex that is silently clamped.
pub const CLAMP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldForm {
    Pair,
    Reduced,
}

impl FieldForm {
    pub fn dim(self) -> usize {
        match self {
            FieldForm::Pair => 2,
            FieldForm::Reduced => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub lambda: RateSchedule,
    pub mu: RateSchedule,
    pub c: f64,
    pub form: FieldForm,
}

impl VectorField {
    pub fn new(lambda: RateSchedule, mu: RateSchedule, c: f64, form: FieldForm) -> Result<Self> {
        lambda.validate()?;
        mu.validate()?;
        if !(c > 0.0) || !c.is_finite() {
            return domain(format!("total mass c must be positive, got {c}"));
        }
        Ok(VectorField {
            lambda,
            mu,
            c,
            form,
        })
    }

    pub fn eval(&self, t: f64, z: &[f64], dz: &mut [f64]) {
        let lam = self.lambda.eval_unchecked(t);
        let mu = self.mu.eval_unchecked(t);
        self.eval_with_rates(lam, mu, z, dz);
    }

    /// Right-hand side with the rates supplied externally (controlled runs).
    pub fn eval_with_rates(&self, lam: f64, mu: f64, z: &[f64], dz: &mut [f64]) {
        match self.form {
            FieldForm::Pair => {
                let (x, y) = (z[0], z[1]);
                let dx = -lam * x * y + mu * y;
                dz[0] = dx;
                dz[1] = -dx;
            }
            FieldForm::Reduced => {
                let x = z[0];
                dz[0] = lam * x * x - (lam * self.c + mu) * x + mu * self.c;
            }
        }
    }

    /// Checks that `z0` lies on the simplex for this form.
    pub fn check_initial(&self, z0: &[f64]) -> Result<()> {
        if z0.len() != self.form.dim() {
            return domain(format!(
                "initial state has {} components, {:?} form needs {}",
                z0.len(),
                self.form,
                self.form.dim()
            ));
        }
        if z0.iter().any(|v| !(*v >= 0.0 && *v <= self.c)) {
            return domain(format!("initial state {z0:?} outside [0, {}]", self.c));
        }
        if self.form == FieldForm::Pair && (z0[0] + z0[1] - self.c).abs() > 1e-12 * self.c.max(1.0) {
            return domain(format!("initial pair {z0:?} does not sum to c = {}", self.c));
        }
        Ok(())
    }

    /// `x` component of a state in this form.
    pub fn x_of(&self, z: &[f64]) -> f64 {
        z[0]
    }

    pub fn y_of(&self, z: &[f64]) -> f64 {
        match self.form {
            FieldForm::Pair => z[1],
            FieldForm::Reduced => self.c - z[0],
        }
    }
}

/// A system the adaptive stepper can drive.
///
/// `rhs` must be a pure function of its arguments for the duration of one
/// step; `on_step` runs after every accepted step and may change the system
/// (controllers use it to re-plan).
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
    fn on_step(&mut self, _t: f64, _y: &[f64]) -> Result<()> {
        Ok(())
    }
    /// Projects an accepted state back onto the admissible set, or fails.
    fn project(&self, _y: &mut [f64]) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorOptions {
    /// Per-step bound on the estimated local error (max norm).
    pub tol: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl IntegratorOptions {
    pub fn new(tol: f64) -> Self {
        IntegratorOptions {
            tol,
            max_step: f64::INFINITY,
            max_steps: 5_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// Accepted steps of an adaptive integration.
///
/// Dense output is the Dormand-Prince continuous extension: the cubic
/// Hermite interpolant on each step plus a quartic correction.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeTrajectory {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Row-major, `dim` values per sample.
    pub states: Vec<f64>,
    /// Derivative at the start of each step (`times.len() - 1` rows).
    pub slope_start: Vec<f64>,
    /// Derivative at the end of each step.
    pub slope_end: Vec<f64>,
    /// Quartic correction of each step's interpolant (zero gives plain cubic Hermite).
    pub correction: Vec<f64>,
    pub stats: IntegratorStats,
}

impl OdeTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn state_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn step_sizes(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Dense output at `t` (clamped into the integration interval).
    pub fn sample(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.sample_into(t, &mut out);
        out
    }

    pub fn sample_into(&self, t: f64, out: &mut [f64]) {
        if self.len() == 1 || t <= self.times[0] {
            out.copy_from_slice(self.state(0));
            return;
        }
        if t >= self.horizon() {
            out.copy_from_slice(self.final_state());
            return;
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        self.hermite(k, t, out);
    }

    fn hermite(&self, k: usize, t: f64, out: &mut [f64]) {
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let r = 1.0 - s;
        let d = self.dim;
        for i in 0..d {
            let y0 = self.states[k * d + i];
            let diff = self.states[(k + 1) * d + i] - y0;
            let lead = h * self.slope_start[k * d + i] - diff;
            let trail = diff - h * self.slope_end[k * d + i] - lead;
            let quart = self.correction[k * d + i];
            out[i] = y0 + s * (diff + r * (lead + s * (trail + r * quart)));
        }
    }
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Continuous extension weights.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Adaptive Dormand-Prince integration of `sys` from `t0` to `t_end`.
pub fn integrate_system<S: OdeSystem + ?Sized>(
    sys: &mut S,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: IntegratorOptions,
) -> Result<OdeTrajectory> {
    if !(opts.tol > 0.0) {
        return domain(format!("tolerance must be > 0, got {}", opts.tol));
    }
    if !(t_end > t0) || !t_end.is_finite() {
        return domain(format!("integration interval [{t0}, {t_end}] is empty"));
    }
    let d = sys.dim();
    if y0.len() != d {
        return domain("initial state has the wrong dimension");
    }
    let mut stats = IntegratorStats::default();
    let mut traj = OdeTrajectory {
        dim: d,
        times: vec![t0],
        states: y0.to_vec(),
        slope_start: Vec::new(),
        slope_end: Vec::new(),
        correction: Vec::new(),
        stats,
    };
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k1 = vec![0.0; d];
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![0.0; d],
        vec![0.0; d],
        vec![0.0; d],
        vec![0.0; d],
        vec![0.0; d],
        vec![0.0; d],
    );
    let mut tmp = vec![0.0; d];
    let mut y_new = vec![0.0; d];
    sys.rhs(t, &y, &mut k1);
    stats.rhs_evals += 1;
    let mut h = opts.max_step.min((t_end - t0) * 0.01).min(0.01);
    let mut fresh_k1 = true;

    while t < t_end {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::NotConverged(format!(
                "integrator exceeded {} steps at t = {t}",
                opts.max_steps
            )));
        }
        if !fresh_k1 {
            sys.rhs(t, &y, &mut k1);
            stats.rhs_evals += 1;
            fresh_k1 = true;
        }
        let mut last = false;
        if t + h >= t_end {
            h = t_end - t;
            last = true;
        }
        let stage = |coef: &[(f64, &Vec<f64>)], out: &mut Vec<f64>| {
            for i in 0..d {
                let mut acc = y[i];
                for (c, k) in coef {
                    acc += h * c * k[i];
                }
                out[i] = acc;
            }
        };
        stage(&[(A21, &k1)], &mut tmp);
        sys.rhs(t + C2 * h, &tmp, &mut k2);
        stage(&[(A31, &k1), (A32, &k2)], &mut tmp);
        sys.rhs(t + C3 * h, &tmp, &mut k3);
        stage(&[(A41, &k1), (A42, &k2), (A43, &k3)], &mut tmp);
        sys.rhs(t + C4 * h, &tmp, &mut k4);
        stage(&[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], &mut tmp);
        sys.rhs(t + C5 * h, &tmp, &mut k5);
        stage(&[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], &mut tmp);
        sys.rhs(t + h, &tmp, &mut k6);
        stage(&[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)], &mut y_new);
        let t_new = if last { t_end } else { t + h };
        sys.rhs(t_new, &y_new, &mut k7);
        stats.rhs_evals += 6;

        let mut err: f64 = 0.0;
        for i in 0..d {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            err = err.max(e.abs());
        }
        if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            stats.rejected += 1;
            h *= 0.2;
            if h < 1e-14 * t_end.abs().max(1.0) {
                return Err(Error::NotConverged(format!("step size underflow at t = {t}")));
            }
            continue;
        }
        let ratio = err / opts.tol;
        if ratio <= 1.0 {
            sys.project(&mut y_new)?;
            traj.slope_start.extend_from_slice(&k1);
            traj.slope_end.extend_from_slice(&k7);
            traj.correction.extend((0..d).map(|i| {
                h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
            }));
            t = t_new;
            y.copy_from_slice(&y_new);
            traj.times.push(t);
            traj.states.extend_from_slice(&y);
            stats.accepted += 1;
            sys.on_step(t, &y)?;
            // FSAL: k7 is the next k1 unless on_step changed the system.
            k1.copy_from_slice(&k7);
            fresh_k1 = false;
            let fac = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * fac).min(opts.max_step);
        } else {
            stats.rejected += 1;
            h *= (0.9 * ratio.powf(-0.2)).clamp(0.1, 0.9);
            if h < 1e-14 * t_end.abs().max(1.0) {
                return Err(Error::NotConverged(format!("step size underflow at t = {t}")));
            }
        }
    }
    traj.stats = stats;
    Ok(traj)
}

/// Clamps the first `dims` components into `[0, c]`, failing on
/// excursions larger than [`CLAMP_TOL`].
pub(crate) fn project_simplex(y: &mut [f64], dims: usize, c: f64) -> Result<()> {
    for v in y.iter_mut().take(dims) {
        if *v < -CLAMP_TOL || *v > c + CLAMP_TOL {
            return Err(Error::NotConverged(format!(
                "state {v} left [0, {c}] by more than {CLAMP_TOL}"
            )));
        }
        *v = v.clamp(0.0, c);
    }
    Ok(())
}

struct FieldSystem<'a>(&'a VectorField);

impl OdeSystem for FieldSystem<'_> {
    fn dim(&self) -> usize {
        self.0.form.dim()
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        self.0.eval(t, y, dy);
    }

    fn project(&self, y: &mut [f64]) -> Result<()> {
        project_simplex(y, self.dim(), self.0.c)
    }
}

pub fn integrate(field: &VectorField, z0: &[f64], horizon: f64, tol: f64) -> Result<OdeTrajectory> {
    integrate_with(field, z0, horizon, IntegratorOptions::new(tol))
}

pub fn integrate_with(
    field: &VectorField,
    z0: &[f64],
    horizon: f64,
    opts: IntegratorOptions,
) -> Result<OdeTrajectory> {
    field.check_initial(z0)?;
    integrate_system(&mut FieldSystem(field), 0.0, z0, horizon, opts)
}

/// CSV with header `t,x,y`.
pub fn write_trajectory_csv<W: Write>(field: &VectorField, traj: &OdeTrajectory, mut w: W) -> io::Result<()> {
    writeln!(w, "t,x,y")?;
    for k in 0..traj.len() {
        let z = traj.state(k);
        writeln!(w, "{},{},{}", traj.times[k], field.x_of(z), field.y_of(z))?;
    }
    Ok(())
}

/// Which regime of the ratio `mu(t) / lambda(t)` holds on the audit window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityCase {
    /// `0 < mu/lambda <= xi < c`: trajectories settle near `mu/lambda`.
    Interior,
    /// `mu/lambda > c`: `x = c` is stable.
    AboveMass,
    /// `mu/lambda = c`: converge to `c` without a stability type.
    AtMass,
    /// `mu = 0`: converge to `0`.
    Zero,
    /// The ratio crosses between regimes.
    Mixed,
}

impl StabilityCase {
    pub fn number(self) -> Option<u8> {
        match self {
            StabilityCase::Interior => Some(1),
            StabilityCase::AboveMass => Some(2),
            StabilityCase::AtMass => Some(3),
            StabilityCase::Zero => Some(4),
            StabilityCase::Mixed => None,
        }
    }
}

impl Serialize for StabilityCase {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.number() {
            Some(k) => s.serialize_u8(k),
            None => s.serialize_str("mixed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub case: StabilityCase,
    pub x2_star: f64,
    pub xi: f64,
    pub delta_measured: Option<f64>,
    /// Range of the asymptotic state `mu/lambda` over the audit window.
    pub x1_star_min: f64,
    pub x1_star_max: f64,
}

impl StabilityReport {
    /// `mu(t) / lambda(t)`.
    pub fn x1_star(field: &VectorField, t: f64) -> f64 {
        field.mu.eval_unchecked(t) / field.lambda.eval_unchecked(t)
    }
}

pub const CLASSIFY_GRID: usize = 10_000;

pub fn classify(field: &VectorField, xi: f64, audit_horizon: f64) -> Result<StabilityReport> {
    if !(audit_horizon > 0.0) || !audit_horizon.is_finite() {
        return domain(format!("audit horizon must be positive, got {audit_horizon}"));
    }
    let c = field.c;
    let mut ratios = Vec::with_capacity(CLASSIFY_GRID + 1);
    for k in 0..=CLASSIFY_GRID {
        let t = audit_horizon * k as f64 / CLASSIFY_GRID as f64;
        let lam = field.lambda.eval(t)?;
        let mu = field.mu.eval(t)?;
        if lam <= 0.0 {
            return domain(format!(
                "unclassifiable: lambda({t}) = 0 so mu/lambda is undefined"
            ));
        }
        ratios.push(mu / lam);
    }
    let (rmin, rmax) = ratios
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
    let at_c = |r: f64| (r - c).abs() <= 1e-12 * c;
    let case = if rmax == 0.0 {
        StabilityCase::Zero
    } else if ratios.iter().all(|&r| at_c(r)) {
        StabilityCase::AtMass
    } else if rmin > c {
        StabilityCase::AboveMass
    } else if rmin > 0.0 && xi > 0.0 && xi < c && rmax <= xi {
        StabilityCase::Interior
    } else {
        StabilityCase::Mixed
    };
    Ok(StabilityReport {
        case,
        x2_star: c,
        xi,
        delta_measured: None,
        x1_star_min: rmin,
        x1_star_max: rmax,
    })
}

/// `sup_{t >= burn_in} |x(t) - mu(t)/lambda(t)|` over the trajectory samples.
pub fn measure_delta(traj: &OdeTrajectory, field: &VectorField, burn_in: f64) -> Result<f64> {
    if burn_in >= traj.horizon() {
        return domain(format!(
            "burn-in {burn_in} is not before the trajectory end {}",
            traj.horizon()
        ));
    }
    let mut delta: f64 = 0.0;
    for k in 0..traj.len() {
        let t = traj.times[k];
        if t < burn_in {
            continue;
        }
        let x = field.x_of(traj.state(k));
        delta = delta.max((x - StabilityReport::x1_star(field, t)).abs());
    }
    Ok(delta)
}

const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Largest per-interval defect `|z(t_{k+1}) - z(t_k) - int F(s, z(s)) ds|`,
/// with the integral taken by 5-point Gauss-Legendre on the dense output.
pub fn field_residual(field: &VectorField, traj: &OdeTrajectory) -> f64 {
    let d = traj.dim;
    let mut z = vec![0.0; d];
    let mut f = vec![0.0; d];
    let mut worst: f64 = 0.0;
    for k in 0..traj.len().saturating_sub(1) {
        let (t0, t1) = (traj.times[k], traj.times[k + 1]);
        let half = 0.5 * (t1 - t0);
        let mid = 0.5 * (t0 + t1);
        let mut integral = vec![0.0; d];
        for (node, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            let s = mid + half * node;
            traj.hermite(k, s, &mut z);
            field.eval(s, &z, &mut f);
            for i in 0..d {
                integral[i] += w * half * f[i];
            }
        }
        for i in 0..d {
            let dz = traj.states[(k + 1) * d + i] - traj.states[k * d + i];
            worst = worst.max((dz - integral[i]).abs());
        }
    }
    worst
}

/// Finite-difference bound on `|dF/dx|` over `[0, c]` at time `t` (reduced form).
pub fn lipschitz_spot_check(field: &VectorField, t: f64, points: usize) -> f64 {
    let reduced = VectorField {
        form: FieldForm::Reduced,
        ..field.clone()
    };
    let f = |x: f64| {
        let mut out = [0.0];
        reduced.eval(t, &[x], &mut out);
        out[0]
    };
    let h = field.c / points as f64;
    (0..points)
        .map(|k| {
            let a = k as f64 * h;
            ((f(a + h) - f(a)) / h).abs()
        })
        .fold(0.0, f64::max)
}
