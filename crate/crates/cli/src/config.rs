use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::CliError;

/// A config value: number, bare or quoted string, or bracketed list.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Str(String),
    List(Vec<Value>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(v) => write!(f, "{v}"),
            Value::Str(s) => write!(f, "{s}"),
            Value::List(items) => {
                write!(f, "[")?;
                for (k, v) in items.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "]")
            }
        }
    }
}

/// Every accepted key with its default. `None` means no default: the key is
/// optional, or required by the commands that read it.
const SCHEMA: &[(&str, Option<&str>)] = &[
    ("run.seed", Some("0")),
    ("run.reps", Some("1")),
    ("model.n", None),
    ("model.preset", Some("sis")),
    ("model.lambda", Some("1")),
    ("model.mu", Some("0.5")),
    ("model.initial", Some("0.1")),
    ("model.horizon", Some("10")),
    ("profit.kind", Some("quadratic")),
    ("profit.peak", Some("0.5")),
    ("profit.curvature", Some("1")),
    ("profit.height", Some("0")),
    ("profit.slope", Some("1")),
    ("profit.intercept", Some("0")),
    ("profit.points", None),
    ("profit.c", Some("1")),
    ("cost.kind", Some("zero")),
    ("cost.c_lambda", Some("0")),
    ("cost.c_mu", Some("0")),
    ("cost.table", None),
    ("solver.method", Some("all")),
    ("solver.tol", Some("1e-10")),
    ("solver.lambda_max", Some("1")),
    ("solver.mu_max", Some("1")),
    ("solver.nu", None),
    ("solver.weights", None),
    ("ode.form", Some("pair")),
    ("ode.x0", Some("0.9")),
    ("ode.horizon", Some("50")),
    ("ode.tol", Some("1e-10")),
    ("ode.xi", Some("0.9")),
    ("ode.burn_in", None),
    ("control.policy", Some("ideal")),
    ("control.lambda", Some("1")),
    ("control.mu", Some("0.5")),
    ("control.x_star", None),
    ("control.kappa", Some("1")),
    ("control.delta_hat", Some("1")),
    ("control.theta", Some("[-0.5, 0.5, -0.5, 0.5]")),
    ("control.lambda0", Some("1")),
    ("control.mu0", Some("0.5")),
    ("control.running", Some("profit_gap")),
    ("control.terminal", Some("zero")),
    ("control.component", Some("susceptible")),
    ("control.horizon", Some("10")),
    ("control.x0", Some("0.9")),
    ("control.tol", Some("1e-9")),
    ("experiment.n_list", Some("[50, 200, 800]")),
    ("experiment.reps", Some("20")),
    ("experiment.horizon", Some("5")),
    ("experiment.infected0", Some("0.2")),
    ("experiment.xstar", Some("golden")),
    ("experiment.n_max", Some("200")),
    ("output.format", Some("both")),
];

fn config_err<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Config(msg.into()))
}

pub fn parse_value(raw: &str) -> Result<Value, CliError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return config_err("empty value");
    }
    if let Some(inner) = raw.strip_prefix('[') {
        let Some(inner) = inner.strip_suffix(']') else {
            return config_err(format!("unterminated list {raw:?}"));
        };
        if inner.trim().is_empty() {
            return Ok(Value::List(Vec::new()));
        }
        let items = inner
            .split(',')
            .map(|item| match parse_value(item)? {
                Value::List(_) => config_err(format!("nested lists are not supported: {raw:?}")),
                v => Ok(v),
            })
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(Value::List(items));
    }
    if let Some(inner) = raw.strip_prefix('"') {
        return match inner.strip_suffix('"') {
            Some(s) => Ok(Value::Str(s.to_string())),
            None => config_err(format!("unterminated string {raw:?}")),
        };
    }
    Ok(match raw.parse::<f64>() {
        Ok(v) => Value::Num(v),
        Err(_) => Value::Str(raw.to_string()),
    })
}

/// Fully resolved configuration: user entries over schema defaults.
#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<String, Value>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut given = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, raw)) = line.split_once('=') else {
                return config_err(format!("line {}: expected `section.key = value`", lineno + 1));
            };
            let key = key.trim();
            if !SCHEMA.iter().any(|(k, _)| *k == key) {
                return config_err(format!("line {}: unknown key `{key}`", lineno + 1));
            }
            let value = parse_value(raw).map_err(|e| CliError::Config(format!("line {}: `{key}`: {e}", lineno + 1)))?;
            if given.insert(key.to_string(), value).is_some() {
                return config_err(format!("line {}: duplicate key `{key}`", lineno + 1));
            }
        }
        let mut values = BTreeMap::new();
        for (key, default) in SCHEMA {
            if let Some(v) = given.remove(*key) {
                values.insert(key.to_string(), v);
            } else if let Some(d) = default {
                values.insert(key.to_string(), parse_value(d)?);
            }
        }
        Ok(Config { values })
    }

    pub fn set(&mut self, key: &str, value: Value) {
        debug_assert!(SCHEMA.iter().any(|(k, _)| *k == key));
        self.values.insert(key.to_string(), value);
    }

    /// One `key = value` line per resolved entry, sorted by key.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of the canonical echo.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        format!("{digest:x}")[..16].to_string()
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }

    pub fn require(&self, key: &str) -> Result<&Value, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        as_f64(key, self.require(key)?)
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.get(key).map(|v| as_f64(key, v)).transpose()
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        as_usize(key, self.require(key)?)
    }

    pub fn u64(&self, key: &str) -> Result<u64, CliError> {
        let v = self.f64(key)?;
        if v < 0.0 || v.fract() != 0.0 || v > 2f64.powi(53) {
            return config_err(format!("`{key}` must be a nonnegative integer, got {v}"));
        }
        Ok(v as u64)
    }

    pub fn str(&self, key: &str) -> Result<&str, CliError> {
        match self.require(key)? {
            Value::Str(s) => Ok(s),
            other => config_err(format!("`{key}` must be a word, got {other}")),
        }
    }

    pub fn list(&self, key: &str) -> Result<&[Value], CliError> {
        match self.require(key)? {
            Value::List(items) => Ok(items),
            other => config_err(format!("`{key}` must be a list, got {other}")),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.list(key)?.iter().map(|v| as_f64(key, v)).collect()
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>, CliError> {
        self.list(key)?.iter().map(|v| as_usize(key, v)).collect()
    }
}

fn as_f64(key: &str, v: &Value) -> Result<f64, CliError> {
    match v {
        Value::Num(x) => Ok(*x),
        other => config_err(format!("`{key}` must be a number, got {other}")),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize, CliError> {
    match v {
        Value::Num(x) if *x >= 0.0 && x.fract() == 0.0 && *x <= 2f64.powi(53) => Ok(*x as usize),
        other => config_err(format!("`{key}` must be a nonnegative integer, got {other}")),
    }
}
