//! Dense two-phase primal simplex for small linear programs.
//!
//! Problems are `max c'x  s.t.  A x <= b,  l <= x <= u` with optional
//! bounds. Internally every variable is shifted or split so that the
//! working form is `max c'x, A x <= b, x >= 0`, then solved on a dense
//! tableau. The tableau is rebuilt from the original columns every
//! [`REFACTOR_EVERY`] pivots and before an optimum is reported; the final
//! basis is checked for primal feasibility and reduced-cost optimality and
//! produces a dual certificate.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

pub const FEAS_TOL: f64 = 1e-8;
pub const OPT_TOL: f64 = 1e-9;
pub const PIVOT_TOL: f64 = 1e-10;
const REFACTOR_EVERY: usize = 100;
const STALL_LIMIT: usize = 50;
const MAX_VERIFY_RETRIES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    /// Maximized.
    pub objective: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Multipliers of the `A x <= b` rows (nonnegative at an optimum).
    pub dual: Vec<f64>,
    /// Value of the dual objective, including bound contributions.
    pub dual_objective: f64,
}

impl LpProblem {
    /// A problem with all variables free.
    pub fn new(objective: Vec<f64>, a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let n = objective.len();
        let lp = LpProblem {
            objective,
            a,
            b,
            lower: vec![None; n],
            upper: vec![None; n],
        };
        lp.validate()?;
        Ok(lp)
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.objective.len();
        if self.a.len() != self.b.len() {
            return Err(Error::Domain(format!(
                "{} constraint rows but {} right-hand sides",
                self.a.len(),
                self.b.len()
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Domain("bound vectors must match variable count".into()));
        }
        if let Some(r) = self.a.iter().position(|row| row.len() != n) {
            return Err(Error::Domain(format!("row {r} has wrong width")));
        }
        let finite = self.objective.iter().chain(self.b.iter()).all(|v| v.is_finite())
            && self.a.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("LP coefficients must be finite".into()));
        }
        for j in 0..n {
            if let (Some(l), Some(u)) = (self.lower[j], self.upper[j]) {
                if l > u {
                    return Err(Error::Domain(format!("variable {j} has lower > upper")));
                }
            }
        }
        Ok(())
    }

    /// Plain-text dense dump, one constraint per line. Round-trips exactly
    /// through [`LpProblem::parse_dump`].
    pub fn to_dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lp {} {}", self.num_vars(), self.num_rows());
        let _ = writeln!(s, "max {}", join(&self.objective));
        for (row, b) in self.a.iter().zip(&self.b) {
            let _ = writeln!(s, "{} <= {:?}", join(row), b);
        }
        let _ = writeln!(s, "bounds");
        for (l, u) in self.lower.iter().zip(&self.upper) {
            let l = l.map_or("-inf".to_string(), |v| format!("{v:?}"));
            let u = u.map_or("inf".to_string(), |v| format!("{v:?}"));
            let _ = writeln!(s, "{l} {u}");
        }
        s
    }

    pub fn parse_dump(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse(format!("lp dump: {msg}"));
        let num = |tok: &str| tok.parse::<f64>().map_err(|_| bad(&format!("bad number {tok:?}")));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let head: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        if head.len() != 3 || head[0] != "lp" {
            return Err(bad("expected `lp <vars> <rows>` header"));
        }
        let nv: usize = head[1].parse().map_err(|_| bad("bad variable count"))?;
        let nr: usize = head[2].parse().map_err(|_| bad("bad row count"))?;
        let obj_line = lines.next().ok_or_else(|| bad("missing objective"))?;
        let mut toks = obj_line.split_whitespace();
        if toks.next() != Some("max") {
            return Err(bad("objective line must start with `max`"));
        }
        let objective = toks.map(num).collect::<Result<Vec<_>>>()?;
        let mut a = Vec::with_capacity(nr);
        let mut b = Vec::with_capacity(nr);
        for _ in 0..nr {
            let line = lines.next().ok_or_else(|| bad("missing constraint row"))?;
            let (lhs, rhs) = line.split_once("<=").ok_or_else(|| bad("row without `<=`"))?;
            a.push(lhs.split_whitespace().map(num).collect::<Result<Vec<_>>>()?);
            b.push(num(rhs.trim())?);
        }
        if lines.next().map(str::trim) != Some("bounds") {
            return Err(bad("missing `bounds` section"));
        }
        let mut lower = Vec::with_capacity(nv);
        let mut upper = Vec::with_capacity(nv);
        for _ in 0..nv {
            let line = lines.next().ok_or_else(|| bad("missing bound line"))?;
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 2 {
                return Err(bad("bound line needs two fields"));
            }
            lower.push(if t[0] == "-inf" { None } else { Some(num(t[0])?) });
            upper.push(if t[1] == "inf" { None } else { Some(num(t[1])?) });
        }
        let lp = LpProblem {
            objective,
            a,
            b,
            lower,
            upper,
        };
        lp.validate()?;
        if lp.objective.len() != nv {
            return Err(bad("objective width does not match header"));
        }
        Ok(lp)
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

/// How an original variable is expressed through nonnegative working columns.
#[derive(Debug, Clone)]
enum VarMap {
    /// x = offset + sign * w[col]
    Shifted { col: usize, sign: f64, offset: f64 },
    /// x = w[pos] - w[neg]
    Split { pos: usize, neg: usize },
}

struct StandardForm {
    c: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    maps: Vec<VarMap>,
    objective_offset: f64,
    original_rows: usize,
}

fn standardize(lp: &LpProblem) -> StandardForm {
    let n = lp.num_vars();
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0;
    for j in 0..n {
        match (lp.lower[j], lp.upper[j]) {
            (Some(l), _) => {
                maps.push(VarMap::Shifted { col: ncols, sign: 1.0, offset: l });
                ncols += 1;
            }
            (None, Some(u)) => {
                maps.push(VarMap::Shifted { col: ncols, sign: -1.0, offset: u });
                ncols += 1;
            }
            (None, None) => {
                maps.push(VarMap::Split { pos: ncols, neg: ncols + 1 });
                ncols += 2;
            }
        }
    }
    let mut c = vec![0.0; ncols];
    let mut objective_offset = 0.0;
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    let expand = |row: &[f64], out: &mut Vec<f64>| -> f64 {
        let mut shift = 0.0;
        for (j, m) in maps.iter().enumerate() {
            match *m {
                VarMap::Shifted { col, sign, offset } => {
                    out[col] += sign * row[j];
                    shift += row[j] * offset;
                }
                VarMap::Split { pos, neg } => {
                    out[pos] += row[j];
                    out[neg] -= row[j];
                }
            }
        }
        shift
    };
    objective_offset += expand(&lp.objective, &mut c);
    for (row, &b) in lp.a.iter().zip(&lp.b) {
        let mut out = vec![0.0; ncols];
        let shift = expand(row, &mut out);
        rows.push(out);
        rhs.push(b - shift);
    }
    let original_rows = rows.len();
    for (j, m) in maps.iter().enumerate() {
        if let (Some(l), Some(u), VarMap::Shifted { col, .. }) = (lp.lower[j], lp.upper[j], m) {
            let mut out = vec![0.0; ncols];
            out[*col] = 1.0;
            rows.push(out);
            rhs.push(u - l);
        }
    }
    StandardForm {
        c,
        a: rows,
        b: rhs,
        maps,
        objective_offset,
        original_rows,
    }
}

/// Working columns: structurals, then one slack per row, then one
/// artificial per row that started infeasible.
struct Tableau {
    m: usize,
    /// Column count excluding the right-hand side.
    width: usize,
    n_struct: usize,
    first_art: usize,
    /// Original (unpivoted) columns, row-major m x width, and rhs.
    orig: Vec<f64>,
    orig_rhs: Vec<f64>,
    /// Current tableau B^-1 [M | b], row-major m x (width + 1).
    t: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
    since_refactor: usize,
}

impl Tableau {
    fn new(sf: &StandardForm) -> Self {
        let m = sf.b.len();
        let n_struct = sf.c.len();
        let negative: Vec<usize> = (0..m).filter(|&i| sf.b[i] < 0.0).collect();
        let first_art = n_struct + m;
        let width = first_art + negative.len();
        let mut orig = vec![0.0; m * width];
        for i in 0..m {
            orig[i * width..i * width + n_struct].copy_from_slice(&sf.a[i]);
            orig[i * width + n_struct + i] = 1.0;
        }
        let mut basis: Vec<usize> = (0..m).map(|i| n_struct + i).collect();
        for (k, &i) in negative.iter().enumerate() {
            orig[i * width + first_art + k] = -1.0;
            basis[i] = first_art + k;
        }
        let mut tab = Tableau {
            m,
            width,
            n_struct,
            first_art,
            orig,
            orig_rhs: sf.b.clone(),
            t: vec![0.0; m * (width + 1)],
            basis,
            pivots: 0,
            since_refactor: 0,
        };
        // Initial basis is diagonal with +-1 entries.
        for i in 0..m {
            let sign = if sf.b[i] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..width {
                tab.t[i * (width + 1) + j] = sign * tab.orig[i * width + j];
            }
            tab.t[i * (width + 1) + width] = sign * sf.b[i];
        }
        tab
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.width + 1) + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.t[i * (self.width + 1) + self.width]
    }

    fn is_art(&self, j: usize) -> bool {
        j >= self.first_art
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.width + 1;
        let p = self.t[r * w + q];
        for j in 0..w {
            self.t[r * w + j] /= p;
        }
        let prow: Vec<f64> = self.t[r * w..(r + 1) * w].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * w + q];
            if f != 0.0 {
                let row = &mut self.t[i * w..(i + 1) * w];
                for (x, &pv) in row.iter_mut().zip(&prow) {
                    *x -= f * pv;
                }
                row[q] = 0.0;
            }
        }
        self.basis[r] = q;
        self.pivots += 1;
        self.since_refactor += 1;
    }

    fn basis_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.m, |i, k| self.orig[i * self.width + self.basis[k]])
    }

    /// Rebuilds the tableau from the original columns for the current basis.
    fn refactor(&mut self) -> Result<()> {
        self.since_refactor = 0;
        if self.m == 0 {
            return Ok(());
        }
        let lu = self.basis_matrix().lu();
        let w = self.width + 1;
        let rhs = DMatrix::from_fn(self.m, w, |i, j| {
            if j < self.width {
                self.orig[i * self.width + j]
            } else {
                self.orig_rhs[i]
            }
        });
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::SolverFailure("singular basis during refactorization".into()))?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverFailure("non-finite values after refactorization".into()));
        }
        for i in 0..self.m {
            for j in 0..w {
                self.t[i * w + j] = sol[(i, j)];
            }
            let b = self.basis[i];
            for k in 0..self.m {
                self.t[k * w + b] = if k == i { 1.0 } else { 0.0 };
            }
        }
        Ok(())
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for (j, dj) in d.iter_mut().enumerate() {
                    *dj -= cb * self.at(i, j);
                }
            }
        }
        d
    }

    /// Runs primal simplex on `cost` (maximized) from the current basis.
    /// `allowed(j)` gates which columns may enter.
    fn optimize(
        &mut self,
        cost: &[f64],
        allowed: &dyn Fn(usize) -> bool,
        max_pivots: usize,
    ) -> Result<PhaseEnd> {
        let mut degenerate_run = 0usize;
        let mut retries = 0usize;
        loop {
            if self.pivots > max_pivots {
                return Err(Error::SolverFailure(format!(
                    "iteration limit {max_pivots} exceeded"
                )));
            }
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            let bland = degenerate_run >= STALL_LIMIT;
            let d = self.reduced_costs(cost);
            let entering = if bland {
                (0..self.width).find(|&j| allowed(j) && d[j] > OPT_TOL)
            } else {
                let mut best: Option<usize> = None;
                for j in 0..self.width {
                    if allowed(j) && d[j] > OPT_TOL && best.is_none_or(|b| d[j] > d[b]) {
                        best = Some(j);
                    }
                }
                best
            };
            let Some(q) = entering else {
                // Confirm optimality on a freshly factored tableau.
                if self.since_refactor == 0 || retries >= MAX_VERIFY_RETRIES {
                    return Ok(PhaseEnd::Optimal);
                }
                retries += 1;
                self.refactor()?;
                continue;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, q);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((r, best)) => {
                            let tie = (ratio - best).abs() <= 1e-12 * best.abs().max(1.0);
                            let better = if tie {
                                if bland {
                                    self.basis[i] < self.basis[r]
                                } else {
                                    a > self.at(r, q)
                                }
                            } else {
                                ratio < best
                            };
                            if better {
                                Some((i, ratio))
                            } else {
                                Some((r, best))
                            }
                        }
                    };
                }
            }
            let Some((r, step)) = leave else {
                return Ok(PhaseEnd::Unbounded);
            };
            if step <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, q);
        }
    }

    fn basic_values(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.width];
        for i in 0..self.m {
            v[self.basis[i]] = self.rhs(i);
        }
        v
    }
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

/// Solves `lp` with a deterministic pivot sequence (Dantzig's rule, falling
/// back to Bland's rule after a run of degenerate pivots).
pub fn solve_simplex(lp: &LpProblem) -> Result<LpSolution> {
    lp.validate()?;
    let sf = standardize(lp);
    let mut tab = Tableau::new(&sf);
    let max_pivots = 50 * (tab.m + tab.width) + 1000;
    let n_struct = tab.n_struct;
    let first_art = tab.first_art;

    let fail = |status: LpStatus, iterations: usize| LpSolution {
        status,
        x: vec![0.0; lp.num_vars()],
        objective: match status {
            LpStatus::Unbounded => f64::INFINITY,
            _ => f64::NEG_INFINITY,
        },
        iterations,
        dual: vec![0.0; lp.num_rows()],
        dual_objective: f64::NAN,
    };

    // Phase 1: maximize -sum(artificials).
    if tab.width > first_art {
        let mut cost1 = vec![0.0; tab.width];
        for c in cost1.iter_mut().skip(first_art) {
            *c = -1.0;
        }
        tab.optimize(&cost1, &|_| true, max_pivots)?;
        let infeas: f64 = tab.basic_values()[first_art..].iter().sum();
        let scale = sf.b.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        if infeas > FEAS_TOL * scale {
            return Ok(fail(LpStatus::Infeasible, tab.pivots));
        }
        // Drive zero-valued artificials out of the basis where possible.
        for r in 0..tab.m {
            if tab.is_art(tab.basis[r]) {
                if let Some(q) = (0..first_art).find(|&j| tab.at(r, j).abs() > PIVOT_TOL) {
                    tab.pivot(r, q);
                }
            }
        }
    }

    // Phase 2.
    let mut cost2 = vec![0.0; tab.width];
    cost2[..n_struct].copy_from_slice(&sf.c);
    let end = tab.optimize(&cost2, &|j| j < first_art, max_pivots)?;
    if let PhaseEnd::Unbounded = end {
        return Ok(fail(LpStatus::Unbounded, tab.pivots));
    }
    tab.refactor()?;
    let values = tab.basic_values();

    // Primal feasibility in working form.
    if values.iter().any(|&v| v < -FEAS_TOL * v.abs().max(1.0)) {
        return Err(Error::SolverFailure("final basis is primal infeasible".into()));
    }
    // Duals from B^T y = c_B.
    let y = if tab.m > 0 {
        let cb = DMatrix::from_fn(tab.m, 1, |k, _| cost2[tab.basis[k]]);
        let sol = tab
            .basis_matrix()
            .transpose()
            .lu()
            .solve(&cb)
            .ok_or_else(|| Error::SolverFailure("singular basis in dual solve".into()))?;
        sol.iter().copied().collect::<Vec<_>>()
    } else {
        Vec::new()
    };
    for j in 0..first_art {
        let col_dot: f64 = (0..tab.m).map(|i| tab.orig[i * tab.width + j] * y[i]).sum();
        let d = cost2[j] - col_dot;
        let scale = cost2[j].abs().max(1.0);
        if d > 1e3 * OPT_TOL * scale {
            return Err(Error::SolverFailure(format!(
                "reduced cost {d:e} on column {j} after refactorization"
            )));
        }
    }

    let x: Vec<f64> = sf
        .maps
        .iter()
        .map(|m| match *m {
            VarMap::Shifted { col, sign, offset } => offset + sign * values[col],
            VarMap::Split { pos, neg } => values[pos] - values[neg],
        })
        .collect();
    let objective: f64 = lp.objective.iter().zip(&x).map(|(c, x)| c * x).sum();
    let dual_objective = sf.b.iter().zip(&y).map(|(b, y)| b * y).sum::<f64>() + sf.objective_offset;
    let dual = y[..sf.original_rows].iter().map(|v| v.max(0.0)).collect();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        iterations: tab.pivots,
        dual,
        dual_objective,
    })
}

/// Largest violation of `A x <= b` and of the variable bounds.
pub fn max_violation(lp: &LpProblem, x: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (row, b) in lp.a.iter().zip(&lp.b) {
        let ax: f64 = row.iter().zip(x).map(|(a, x)| a * x).sum();
        worst = worst.max(ax - b);
    }
    for (j, &xj) in x.iter().enumerate() {
        if let Some(l) = lp.lower[j] {
            worst = worst.max(l - xj);
        }
        if let Some(u) = lp.upper[j] {
            worst = worst.max(xj - u);
        }
    }
    worst
}
