use epicontrol::control::{
    ideal_trajectory_controller, rate_constrained_controller, ControlPolicy, CostFn, HorizonCostSpec, StateComponent,
    ThetaBox,
};
use epicontrol::ctmc::{InitialCondition, Preset, ProcessModel};
use epicontrol::experiments::XStar;
use epicontrol::mdp::MdpProblem;
use epicontrol::meanfield::{FieldForm, VectorField};
use epicontrol::rates::{ActionCostSpec, ProfitProfile, ProfitSpec, RateSchedule, TableAction};

use crate::config::{Config, Value};
use crate::CliError;

/// Errors raised while turning config values into model objects are config errors.
fn bad(key: &str) -> impl Fn(epicontrol::Error) -> CliError + '_ {
    move |e| CliError::Config(format!("`{key}`: {e}"))
}

fn num(key: &str, v: &Value) -> Result<f64, CliError> {
    match v {
        Value::Num(x) => Ok(*x),
        other => Err(CliError::Config(format!("`{key}`: expected a number, got {other}"))),
    }
}

/// `2.0`, `[constant, 2.0]`, `[sinusoidal, base, amp, period, phase]`
/// or `[piecewise, t0, v0, t1, v1, ...]`.
pub fn schedule(cfg: &Config, key: &str) -> Result<RateSchedule, CliError> {
    let items = match cfg.require(key)? {
        Value::Num(x) => return RateSchedule::constant(*x).map_err(bad(key)),
        Value::List(items) => items,
        other => return Err(CliError::Config(format!("`{key}`: expected a rate schedule, got {other}"))),
    };
    let (kind, args) = match items.split_first() {
        Some((Value::Str(kind), args)) => (kind.as_str(), args),
        _ => return Err(CliError::Config(format!("`{key}`: schedule list must start with its kind"))),
    };
    let args = args.iter().map(|v| num(key, v)).collect::<Result<Vec<_>, _>>()?;
    let built = match (kind, args.as_slice()) {
        ("constant", [v]) => RateSchedule::constant(*v),
        ("sinusoidal", [base, amp, period, phase]) => RateSchedule::sinusoidal(*base, *amp, *period, *phase),
        ("piecewise", pts) if !pts.is_empty() && pts.len() % 2 == 0 => {
            RateSchedule::piecewise_linear(pts.chunks(2).map(|p| (p[0], p[1])).collect())
        }
        _ => {
            return Err(CliError::Config(format!(
                "`{key}`: expected [constant, v], [sinusoidal, base, amp, period, phase] or [piecewise, t, v, ...]"
            )))
        }
    };
    built.map_err(bad(key))
}

pub fn preset(cfg: &Config) -> Result<Preset, CliError> {
    Preset::parse(cfg.str("model.preset")?).map_err(bad("model.preset"))
}

pub fn process_model(cfg: &Config) -> Result<ProcessModel, CliError> {
    let n = cfg.usize("model.n")?;
    let frac = cfg.f64("model.initial")?;
    if !(0.0..=1.0).contains(&frac) {
        return Err(CliError::Config(format!("`model.initial`: fraction {frac} outside [0, 1]")));
    }
    ProcessModel::new(
        n,
        preset(cfg)?,
        schedule(cfg, "model.lambda")?,
        schedule(cfg, "model.mu")?,
        InitialCondition::State((frac * n as f64).round() as usize),
    )
    .map_err(bad("model"))
}

pub fn positive(cfg: &Config, key: &str) -> Result<f64, CliError> {
    let v = cfg.f64(key)?;
    if !(v > 0.0) || !v.is_finite() {
        return Err(CliError::Config(format!("`{key}` must be positive, got {v}")));
    }
    Ok(v)
}

pub fn profit(cfg: &Config) -> Result<ProfitSpec, CliError> {
    let profile = match cfg.str("profit.kind")? {
        "quadratic" => ProfitProfile::Quadratic {
            peak: cfg.f64("profit.peak")?,
            curvature: cfg.f64("profit.curvature")?,
            height: cfg.f64("profit.height")?,
        },
        "linear" => ProfitProfile::Linear {
            slope: cfg.f64("profit.slope")?,
            intercept: cfg.f64("profit.intercept")?,
        },
        "table" => {
            let pts = cfg.f64_list("profit.points")?;
            if pts.len() % 2 != 0 {
                return Err(CliError::Config("`profit.points`: expected x, P pairs".into()));
            }
            ProfitProfile::Table {
                points: pts.chunks(2).map(|p| (p[0], p[1])).collect(),
            }
        }
        other => return Err(CliError::Config(format!("`profit.kind`: unknown profile {other:?}"))),
    };
    ProfitSpec::new(profile, cfg.f64("profit.c")?).map_err(bad("profit"))
}

pub fn action_cost(cfg: &Config) -> Result<ActionCostSpec, CliError> {
    match cfg.str("cost.kind")? {
        "zero" => Ok(ActionCostSpec::Zero),
        "linear" => ActionCostSpec::linear(cfg.f64("cost.c_lambda")?, cfg.f64("cost.c_mu")?).map_err(bad("cost")),
        "table" => {
            let t = cfg.f64_list("cost.table")?;
            if t.is_empty() || t.len() % 3 != 0 {
                return Err(CliError::Config("`cost.table`: expected lambda, mu, cost triples".into()));
            }
            let table = t
                .chunks(3)
                .map(|a| TableAction {
                    lambda: a[0],
                    mu: a[1],
                    cost: a[2],
                })
                .collect();
            ActionCostSpec::general(table).map_err(bad("cost.table"))
        }
        other => Err(CliError::Config(format!("`cost.kind`: unknown kind {other:?}"))),
    }
}

pub fn mdp_problem(cfg: &Config) -> Result<MdpProblem, CliError> {
    MdpProblem::with_nu(
        cfg.usize("model.n")?,
        preset(cfg)?,
        cfg.f64("solver.lambda_max")?,
        cfg.f64("solver.mu_max")?,
        profit(cfg)?,
        action_cost(cfg)?,
        cfg.opt_f64("solver.nu")?,
    )
    .map_err(bad("solver"))
}

pub fn field(cfg: &Config, form: FieldForm) -> Result<VectorField, CliError> {
    VectorField::new(
        schedule(cfg, "model.lambda")?,
        schedule(cfg, "model.mu")?,
        cfg.f64("profit.c")?,
        form,
    )
    .map_err(bad("model"))
}

pub fn form(cfg: &Config) -> Result<FieldForm, CliError> {
    match cfg.str("ode.form")? {
        "pair" => Ok(FieldForm::Pair),
        "reduced" => Ok(FieldForm::Reduced),
        other => Err(CliError::Config(format!("`ode.form`: expected pair or reduced, got {other:?}"))),
    }
}

/// Initial state of `field` from a value of `x` in `[0, c]`.
pub fn initial_state(field: &VectorField, key: &str, x0: f64) -> Result<Vec<f64>, CliError> {
    let z0 = match field.form {
        FieldForm::Pair => vec![x0, field.c - x0],
        FieldForm::Reduced => vec![x0],
    };
    field.check_initial(&z0).map_err(bad(key))?;
    Ok(z0)
}

/// `zero`, `profit_gap`, `[constant, v]`, `[linear, slope, intercept]` or
/// `[quadratic, center, weight]`.
fn cost_fn(cfg: &Config, key: &str) -> Result<CostFn, CliError> {
    let v = cfg.require(key)?;
    let (kind, args): (&str, Vec<f64>) = match v {
        Value::Str(s) => (s.as_str(), Vec::new()),
        Value::List(items) => match items.split_first() {
            Some((Value::Str(kind), rest)) => (kind.as_str(), rest.iter().map(|x| num(key, x)).collect::<Result<_, _>>()?),
            _ => return Err(CliError::Config(format!("`{key}`: cost list must start with its kind"))),
        },
        Value::Num(_) => return Err(CliError::Config(format!("`{key}`: write [constant, {v}]"))),
    };
    Ok(match (kind, args.as_slice()) {
        ("zero", []) => CostFn::Zero,
        ("profit_gap", []) => CostFn::ProfitGap { profit: profit(cfg)? },
        ("constant", [value]) => CostFn::Constant { value: *value },
        ("linear", [slope, intercept]) => CostFn::Linear {
            slope: *slope,
            intercept: *intercept,
        },
        ("quadratic", [center, weight]) => CostFn::Quadratic {
            center: *center,
            weight: *weight,
        },
        _ => return Err(CliError::Config(format!("`{key}`: unrecognized cost {v}"))),
    })
}

pub fn horizon_spec(cfg: &Config) -> Result<HorizonCostSpec, CliError> {
    let component = match cfg.str("control.component")? {
        "infected" => StateComponent::Infected,
        "susceptible" => StateComponent::Susceptible,
        other => {
            return Err(CliError::Config(format!(
                "`control.component`: expected infected or susceptible, got {other:?}"
            )))
        }
    };
    let mut spec = HorizonCostSpec::new(
        cost_fn(cfg, "control.running")?,
        cost_fn(cfg, "control.terminal")?,
        cfg.f64("control.horizon")?,
        component,
    )
    .map_err(bad("control"))?;
    spec.action_cost = action_cost(cfg)?;
    spec.validate().map_err(bad("cost"))?;
    Ok(spec)
}

pub fn policy(cfg: &Config) -> Result<ControlPolicy, CliError> {
    let p = match cfg.str("control.policy")? {
        "nominal" => ControlPolicy::Nominal {
            lambda: schedule(cfg, "model.lambda")?,
            mu: schedule(cfg, "model.mu")?,
        },
        "stationary" => ControlPolicy::Stationary {
            lambda: cfg.f64("control.lambda")?,
            mu: cfg.f64("control.mu")?,
        },
        "ideal" => {
            let x_star = match cfg.opt_f64("control.x_star")? {
                Some(x) => x,
                None => profit(cfg)?.x_star(),
            };
            ideal_trajectory_controller(
                x_star,
                cfg.f64("control.kappa")?,
                cfg.f64("control.delta_hat")?,
                cfg.f64("profit.c")?,
            )
            .map_err(bad("control"))?
        }
        "rate_constrained" => {
            let th = cfg.f64_list("control.theta")?;
            let [l_lo, l_hi, m_lo, m_hi] = th.as_slice() else {
                return Err(CliError::Config(
                    "`control.theta`: expected [lambda_lo, lambda_hi, mu_lo, mu_hi]".into(),
                ));
            };
            let theta = ThetaBox::new(*l_lo, *l_hi, *m_lo, *m_hi).map_err(bad("control.theta"))?;
            rate_constrained_controller(&profit(cfg)?, theta, (cfg.f64("control.lambda0")?, cfg.f64("control.mu0")?))
                .map_err(bad("control"))?
        }
        other => return Err(CliError::Config(format!("`control.policy`: unknown policy {other:?}"))),
    };
    p.validate().map_err(bad("control"))?;
    Ok(p)
}

pub fn xstar(cfg: &Config) -> Result<XStar, CliError> {
    let text = cfg.require("experiment.xstar")?.to_string();
    XStar::parse(&text).map_err(bad("experiment.xstar"))
}
