//! Small dense semidefinite programs.
//!
//! An [`SdpProblem`] declares symmetric matrix blocks (each constrained to be
//! positive semidefinite) and scalar variables (free, nonnegative or
//! nonpositive), a list of linear equalities over individual variable
//! entries, and an optional linear objective to minimize. [`solve`] runs a
//! primal-dual interior-point method on a homogeneous self-dual embedding,
//! so infeasible problems come back with a Farkas certificate instead of
//! stalling.
//!
//! Equality coefficients use entry semantics: a coefficient `a` on
//! `Var::entry(b, i, j)` contributes `a * X_ij` once, and `(i, j)` and
//! `(j, i)` name the same variable.

mod ipm;
mod presolve;
mod text;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

pub use text::{dump, load};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdpError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("problem text line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, SdpError>;

/// A single decision variable: one entry of a matrix block (stored with
/// `row >= col`) or one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    Entry { block: usize, row: usize, col: usize },
    Scalar(usize),
}

impl Var {
    pub fn entry(block: usize, i: usize, j: usize) -> Var {
        let (row, col) = if i >= j { (i, j) } else { (j, i) };
        Var::Entry { block, row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Free,
    NonNeg,
    NonPos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockDecl {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarDecl {
    pub name: String,
    pub sign: Sign,
}

/// Sparse linear functional; duplicate variables are summed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearExpr {
    terms: BTreeMap<Var, f64>,
}

impl LinearExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, var: Var, coeff: f64) -> Self {
        self.add(var, coeff);
        self
    }

    pub fn add(&mut self, var: Var, coeff: f64) {
        let v = self.terms.entry(var).or_insert(0.0);
        *v += coeff;
        if *v == 0.0 {
            self.terms.remove(&var);
        }
    }

    /// Adds `trace(weight * X)` for block `block`, `weight` symmetric.
    pub fn add_trace(&mut self, block: usize, weight: &DMatrix<f64>) {
        for j in 0..weight.ncols() {
            for i in j..weight.nrows() {
                let w = if i == j { weight[(i, i)] } else { weight[(i, j)] + weight[(j, i)] };
                if w != 0.0 {
                    self.add(Var::entry(block, i, j), w);
                }
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (Var, f64)> + '_ {
        self.terms.iter().map(|(&v, &c)| (v, c))
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, values: &SdpValues) -> f64 {
        self.terms.iter().map(|(&v, &c)| c * values.get(v)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equality {
    pub expr: LinearExpr,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SdpProblem {
    blocks: Vec<BlockDecl>,
    scalars: Vec<ScalarDecl>,
    equalities: Vec<Equality>,
    objective: Option<LinearExpr>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_block(&mut self, name: impl Into<String>, dim: usize) -> usize {
        self.blocks.push(BlockDecl { name: name.into(), dim });
        self.blocks.len() - 1
    }

    pub fn add_scalar(&mut self, name: impl Into<String>, sign: Sign) -> usize {
        self.scalars.push(ScalarDecl { name: name.into(), sign });
        self.scalars.len() - 1
    }

    pub fn add_equality(&mut self, expr: LinearExpr, rhs: f64) -> usize {
        self.equalities.push(Equality { expr, rhs });
        self.equalities.len() - 1
    }

    pub fn set_objective(&mut self, expr: LinearExpr) {
        self.objective = Some(expr);
    }

    pub fn blocks(&self) -> &[BlockDecl] {
        &self.blocks
    }

    pub fn scalars(&self) -> &[ScalarDecl] {
        &self.scalars
    }

    pub fn equalities(&self) -> &[Equality] {
        &self.equalities
    }

    pub fn objective(&self) -> Option<&LinearExpr> {
        self.objective.as_ref()
    }

    /// Total count of scalar unknowns (block entries counted once per symmetric pair).
    pub fn num_unknowns(&self) -> usize {
        self.blocks.iter().map(|b| b.dim * (b.dim + 1) / 2).sum::<usize>() + self.scalars.len()
    }

    pub fn validate(&self) -> Result<()> {
        for b in &self.blocks {
            if b.dim == 0 {
                return Err(SdpError::Malformed(format!("block '{}' has dimension 0", b.name)));
            }
        }
        let check_expr = |expr: &LinearExpr, what: &str| -> Result<()> {
            for (v, c) in expr.terms() {
                if !c.is_finite() {
                    return Err(SdpError::Malformed(format!("{what} has a non-finite coefficient")));
                }
                match v {
                    Var::Entry { block, row, col } => {
                        let Some(b) = self.blocks.get(block) else {
                            return Err(SdpError::Malformed(format!("{what} references undeclared block {block}")));
                        };
                        if row >= b.dim || col > row {
                            return Err(SdpError::Malformed(format!(
                                "{what} references entry ({row},{col}) outside block '{}' of dimension {}",
                                b.name, b.dim
                            )));
                        }
                    }
                    Var::Scalar(s) if s >= self.scalars.len() => {
                        return Err(SdpError::Malformed(format!("{what} references undeclared scalar {s}")));
                    }
                    Var::Scalar(_) => {}
                }
            }
            Ok(())
        };
        for (k, eq) in self.equalities.iter().enumerate() {
            check_expr(&eq.expr, &format!("equality {k}"))?;
            if !eq.rhs.is_finite() {
                return Err(SdpError::Malformed(format!("equality {k} has a non-finite right-hand side")));
            }
        }
        if let Some(obj) = &self.objective {
            check_expr(obj, "objective")?;
        }
        Ok(())
    }
}

/// Assignment to every block and scalar of a problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpValues {
    pub blocks: Vec<DMatrix<f64>>,
    pub scalars: Vec<f64>,
}

impl SdpValues {
    pub fn zeros(prob: &SdpProblem) -> Self {
        SdpValues {
            blocks: prob.blocks.iter().map(|b| DMatrix::zeros(b.dim, b.dim)).collect(),
            scalars: vec![0.0; prob.scalars.len()],
        }
    }

    pub fn get(&self, v: Var) -> f64 {
        match v {
            Var::Entry { block, row, col } => self.blocks[block][(row, col)],
            Var::Scalar(s) => self.scalars[s],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { feas_tol: 1e-8, gap_tol: 1e-8, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// Primal point; meaningful when `status == Feasible`.
    pub values: SdpValues,
    pub objective: Option<f64>,
    /// Relative duality gap on `Feasible`, certificate residual on `Infeasible`.
    pub gap: f64,
    pub iterations: usize,
    /// Farkas ray, one multiplier per equality, scaled so that `rhs . y = -1`.
    pub certificate: Option<Vec<f64>>,
    pub message: String,
}

pub fn solve(prob: &SdpProblem, opts: &SolveOptions) -> Result<SdpSolution> {
    prob.validate()?;
    let layout = presolve::Layout::new(prob);
    let reduced = match presolve::reduce(prob, &layout) {
        presolve::Presolved::Reduced(r) => r,
        presolve::Presolved::Inconsistent { y, residual } => {
            return Ok(SdpSolution {
                status: SolveStatus::Infeasible,
                values: SdpValues::zeros(prob),
                objective: None,
                gap: residual,
                iterations: 0,
                certificate: Some(y),
                message: "linear equalities are inconsistent".into(),
            });
        }
    };

    let out = ipm::run(&reduced.a, &reduced.b, &reduced.c, &layout.cone, opts);
    let mut sol = SdpSolution {
        status: SolveStatus::Marginal,
        values: SdpValues::zeros(prob),
        objective: None,
        gap: out.gap,
        iterations: out.iterations,
        certificate: None,
        message: out.message.clone(),
    };
    match out.status {
        ipm::Outcome::Optimal => {
            let full = reduced.recover(&out.x);
            sol.values = layout.to_values(prob, &full);
            sol.objective = prob.objective.as_ref().map(|o| o.eval(&sol.values));
            sol.status = if reduced.unbounded_free {
                sol.message = "objective is unbounded along an unconstrained free scalar".into();
                SolveStatus::Marginal
            } else {
                SolveStatus::Feasible
            };
        }
        ipm::Outcome::PrimalInfeasible => {
            sol.status = SolveStatus::Infeasible;
            sol.certificate = Some(reduced.lift_dual(&out.y));
        }
        ipm::Outcome::DualInfeasible => {
            sol.message = "objective is unbounded below".into();
        }
        ipm::Outcome::Stalled => {}
    }
    Ok(sol)
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckItem {
    pub label: String,
    pub value: f64,
    pub pass: bool,
}

/// Independent recomputation of a solution's feasibility claims.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionReport {
    pub items: Vec<CheckItem>,
}

impl SolutionReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.pass)
    }

    pub fn failures(&self) -> Vec<&CheckItem> {
        self.items.iter().filter(|i| !i.pass).collect()
    }
}

/// For a `Feasible` solution: equality residuals, block eigenvalue floors
/// and symmetry, scalar signs. For an `Infeasible` one: dual-cone
/// membership of the certificate's aggregated constraint. `Marginal`
/// solutions carry no claim and always fail.
pub fn check_solution(prob: &SdpProblem, sol: &SdpSolution, tol: f64) -> SolutionReport {
    let mut items = Vec::new();
    match sol.status {
        SolveStatus::Feasible => {
            for (k, eq) in prob.equalities.iter().enumerate() {
                let r = (eq.expr.eval(&sol.values) - eq.rhs).abs();
                items.push(CheckItem { label: format!("equality {k}"), value: r, pass: r <= tol });
            }
            for (b, decl) in prob.blocks.iter().enumerate() {
                let m = &sol.values.blocks[b];
                let asym = (m - m.transpose()).abs().max();
                items.push(CheckItem { label: format!("block '{}' symmetry", decl.name), value: asym, pass: asym <= tol });
                let e = min_eigenvalue(m);
                items.push(CheckItem { label: format!("block '{}' min eigenvalue", decl.name), value: e, pass: e >= -tol });
            }
            for (s, decl) in prob.scalars.iter().enumerate() {
                let v = sol.values.scalars[s];
                let pass = match decl.sign {
                    Sign::Free => v.is_finite(),
                    Sign::NonNeg => v >= -tol,
                    Sign::NonPos => v <= tol,
                };
                items.push(CheckItem { label: format!("scalar '{}' sign", decl.name), value: v, pass });
            }
        }
        SolveStatus::Infeasible => {
            let Some(y) = sol.certificate.as_ref().filter(|y| y.len() == prob.equalities.len()) else {
                items.push(CheckItem { label: "certificate present".into(), value: f64::NAN, pass: false });
                return SolutionReport { items };
            };
            let by: f64 = prob.equalities.iter().zip(y).map(|(e, yi)| e.rhs * yi).sum();
            items.push(CheckItem { label: "certificate rhs.y = -1".into(), value: by, pass: (by + 1.0).abs() <= tol });
            let mut duals: Vec<DMatrix<f64>> =
                prob.blocks.iter().map(|b| DMatrix::zeros(b.dim, b.dim)).collect();
            let mut sdual = vec![0.0; prob.scalars.len()];
            for (eq, &yi) in prob.equalities.iter().zip(y) {
                for (v, c) in eq.expr.terms() {
                    match v {
                        Var::Entry { block, row, col } if row == col => duals[block][(row, col)] += yi * c,
                        Var::Entry { block, row, col } => {
                            duals[block][(row, col)] += 0.5 * yi * c;
                            duals[block][(col, row)] += 0.5 * yi * c;
                        }
                        Var::Scalar(s) => sdual[s] += yi * c,
                    }
                }
            }
            for (b, decl) in prob.blocks.iter().enumerate() {
                let e = min_eigenvalue(&duals[b]);
                items.push(CheckItem { label: format!("dual block '{}' min eigenvalue", decl.name), value: e, pass: e >= -tol });
            }
            for (s, decl) in prob.scalars.iter().enumerate() {
                let v = sdual[s];
                let pass = match decl.sign {
                    Sign::Free => v.abs() <= tol,
                    Sign::NonNeg => v >= -tol,
                    Sign::NonPos => v <= tol,
                };
                items.push(CheckItem { label: format!("dual scalar '{}'", decl.name), value: v, pass });
            }
        }
        SolveStatus::Marginal => {
            items.push(CheckItem { label: "solver status".into(), value: f64::NAN, pass: false });
        }
    }
    SolutionReport { items }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_problem() -> SdpProblem {
        let mut p = SdpProblem::new();
        let x = p.add_block("X", 2);
        p.add_equality(LinearExpr::new().with(Var::entry(x, 0, 0), 1.0).with(Var::entry(x, 1, 1), 1.0), 1.0);
        p.set_objective(LinearExpr::new().with(Var::entry(x, 0, 0), 1.0).with(Var::entry(x, 1, 1), 2.0));
        p
    }

    #[test]
    fn minimizes_diagonal_objective_over_unit_trace() {
        let p = trace_problem();
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Feasible);
        assert!((sol.objective.unwrap() - 1.0).abs() < 1e-6);
        let x = &sol.values.blocks[0];
        assert!((x[(0, 0)] - 1.0).abs() < 1e-6);
        assert!(x[(1, 1)].abs() < 1e-6 && x[(1, 0)].abs() < 1e-6);
        assert!(sol.gap <= 1e-8);
        assert!(check_solution(&p, &sol, 1e-7).passed());
    }

    #[test]
    fn negative_diagonal_is_infeasible() {
        let mut p = SdpProblem::new();
        let x = p.add_block("X", 2);
        p.add_equality(LinearExpr::new().with(Var::entry(x, 0, 0), 1.0), -1.0);
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert!(sol.gap <= 1e-8);
        let report = check_solution(&p, &sol, 1e-7);
        assert!(report.passed(), "{:?}", report.failures());
    }

    #[test]
    fn inconsistent_rows_are_reported_infeasible() {
        let mut p = SdpProblem::new();
        let t = p.add_scalar("t", Sign::Free);
        p.add_equality(LinearExpr::new().with(Var::Scalar(t), 1.0), 1.0);
        p.add_equality(LinearExpr::new().with(Var::Scalar(t), 2.0), 3.0);
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert!(check_solution(&p, &sol, 1e-9).passed());
    }

    #[test]
    fn signed_scalars_and_free_scalars() {
        // min t - u  s.t.  t + X00 = 2, u = -3 + X11, X11 + X00 = 1, t >= 0, u <= 0
        let mut p = SdpProblem::new();
        let x = p.add_block("X", 2);
        let t = p.add_scalar("t", Sign::NonNeg);
        let u = p.add_scalar("u", Sign::NonPos);
        let w = p.add_scalar("w", Sign::Free);
        p.add_equality(LinearExpr::new().with(Var::Scalar(t), 1.0).with(Var::entry(x, 0, 0), 1.0), 2.0);
        p.add_equality(LinearExpr::new().with(Var::Scalar(u), 1.0).with(Var::entry(x, 1, 1), -1.0), -3.0);
        p.add_equality(LinearExpr::new().with(Var::entry(x, 1, 1), 1.0).with(Var::entry(x, 0, 0), 1.0), 1.0);
        p.add_equality(LinearExpr::new().with(Var::Scalar(w), 1.0).with(Var::Scalar(t), -1.0), 0.5);
        p.set_objective(LinearExpr::new().with(Var::Scalar(t), 1.0).with(Var::Scalar(u), -1.0));
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Feasible, "{}", sol.message);
        // t - u = (2 - X00) - (X11 - 3) = 5 - 1 = 4 for every feasible point
        assert!((sol.objective.unwrap() - 4.0).abs() < 1e-6);
        assert!((sol.values.scalars[w] - sol.values.scalars[t] - 0.5).abs() < 1e-9);
        assert!(check_solution(&p, &sol, 1e-7).passed());
    }

    #[test]
    fn validation_rejects_undeclared_variables() {
        let mut p = SdpProblem::new();
        p.add_block("X", 2);
        p.add_equality(LinearExpr::new().with(Var::entry(0, 2, 0), 1.0), 0.0);
        assert!(matches!(solve(&p, &SolveOptions::default()), Err(SdpError::Malformed(_))));
        let mut q = SdpProblem::new();
        q.add_equality(LinearExpr::new().with(Var::Scalar(0), 1.0), 0.0);
        assert!(q.validate().is_err());
        let mut r = SdpProblem::new();
        r.add_block("E", 0);
        assert!(r.validate().is_err());
    }

    #[test]
    fn check_solution_names_violated_equality() {
        let p = trace_problem();
        let mut sol = solve(&p, &SolveOptions::default()).unwrap();
        sol.values.blocks[0][(1, 1)] += 1.0;
        let report = check_solution(&p, &sol, 1e-6);
        let failures = report.failures();
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].label, "equality 0");
        assert!((failures[0].value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn exact_point_checks_with_zero_residual() {
        let p = trace_problem();
        let mut values = SdpValues::zeros(&p);
        values.blocks[0][(0, 0)] = 1.0;
        let sol = SdpSolution {
            status: SolveStatus::Feasible,
            values,
            objective: Some(1.0),
            gap: 0.0,
            iterations: 0,
            certificate: None,
            message: String::new(),
        };
        let report = check_solution(&p, &sol, 0.0);
        assert!(report.passed());
        assert!(report.items.iter().all(|i| i.value.abs() == 0.0));
    }

    #[test]
    fn add_trace_uses_entry_semantics() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        let mut e = LinearExpr::new();
        e.add_trace(0, &w);
        let terms: Vec<_> = e.terms().collect();
        assert_eq!(terms, vec![(Var::entry(0, 0, 0), 1.0), (Var::entry(0, 1, 0), 4.0), (Var::entry(0, 1, 1), 3.0)]);
    }
}
