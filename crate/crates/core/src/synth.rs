//! Controller and observer metric synthesis for control-affine models
//! `x' = f(x) + B u`, `y = C x` with polynomial `f`.
//!
//! Both programs look for a constant metric `W` and a polynomial multiplier
//! `rho(x)`:
//!
//! * controller: `W A(x)' + A(x) W - rho(x) B B' + 2 lambda W <= 0`
//! * observer:   `A(x)' W + W A(x) - rho(x) C' C + 2 lambda W <= 0`
//!
//! with `A = df/dx`, `rho` a sum of squares and `alpha1 I <= W <= alpha2 I`.
//! The matrix inequalities are imposed as `delta`-quadratic SOS
//! constraints, so they hold for every `x`, not just on a grid.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::poly::{Monomial, PolyError, PolyMatrix, Polynomial};
use crate::sdp::SolveOptions;
use crate::sos::{self, AffinePoly, CompileStats, MatrixBound, ParamRef, ParamSpace, SosConstraint, SosError, SosKind, SosOutcome, SosProgram};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("model: {0}")]
    Model(String),
    #[error("polynomial for f[{index}]: {source}")]
    Polynomial { index: usize, source: PolyError },
    #[error("invalid synthesis parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("metric file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// `x' = f(x) + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    f: PolyMatrix,
    a: PolyMatrix,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    names: Vec<String>,
}

impl SystemModel {
    pub fn new(f: PolyMatrix, b: DMatrix<f64>, c: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let n = f.rows();
        if f.cols() != 1 || f.nvars() != n {
            return Err(SynthError::Model(format!(
                "f must be a column with one variable per state, got {}x{} in {} variables",
                f.rows(),
                f.cols(),
                f.nvars()
            )));
        }
        if b.nrows() != n {
            return Err(SynthError::Model(format!("B has {} rows, expected {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(SynthError::Model(format!("C has {} columns, expected {n}", c.ncols())));
        }
        if names.len() != n {
            return Err(SynthError::Model(format!("{} state names for {n} states", names.len())));
        }
        let a = f.jacobian()?;
        Ok(SystemModel { f, a, b, c, names })
    }

    /// Builds a model from polynomial text, one string per component of `f`.
    pub fn from_text(names: Vec<String>, f: &[String], b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let polys = f
            .iter()
            .enumerate()
            .map(|(index, text)| Polynomial::parse(text, &names).map_err(|source| SynthError::Polynomial { index, source }))
            .collect::<Result<Vec<_>>>()?;
        if polys.is_empty() {
            return Err(SynthError::Model("f has no components".into()));
        }
        SystemModel::new(PolyMatrix::column(polys)?, b, c, names)
    }

    /// Two-state surge model `phi' = -psi - 3/2 phi^2 - 1/2 phi^3`,
    /// `psi' = phi + u`, measuring `psi`.
    pub fn moore_greitzer() -> Self {
        let names = vec!["phi".to_string(), "psi".to_string()];
        let f = ["-psi - 1.5*phi^2 - 0.5*phi^3".to_string(), "phi".to_string()];
        SystemModel::from_text(names, &f, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]), DMatrix::from_row_slice(1, 2, &[0.0, 1.0]))
            .expect("built-in model is well formed")
    }

    pub fn n(&self) -> usize {
        self.f.rows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn f(&self) -> &PolyMatrix {
        &self.f
    }

    pub fn jacobian(&self) -> &PolyMatrix {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn with_b(&self, b: DMatrix<f64>) -> Result<Self> {
        SystemModel::new(self.f.clone(), b, self.c.clone(), self.names.clone())
    }

    pub fn with_c(&self, c: DMatrix<f64>) -> Result<Self> {
        SystemModel::new(self.f.clone(), self.b.clone(), c, self.names.clone())
    }

    /// `f(x) + B u`
    pub fn rhs(&self, x: &[f64], u: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + &self.b * u
    }

    pub fn drift(&self, x: &[f64]) -> DVector<f64> {
        self.f.eval_column(x).expect("state dimension matches the model")
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }

    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec {
            names: self.names.clone(),
            f: (0..self.n()).map(|i| self.f.get(i, 0).to_text(&self.names)).collect(),
            b: rows_of(&self.b),
            c: rows_of(&self.c),
        }
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Builds a matrix from row arrays; `cols` is used when there are no rows.
pub fn matrix_from_rows(rows: &[Vec<f64>], cols: usize) -> std::result::Result<DMatrix<f64>, String> {
    let ncols = rows.first().map_or(cols, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("rows have different lengths".into());
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Serializable form of a [`SystemModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub names: Vec<String>,
    pub f: Vec<String>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<SystemModel> {
        let n = self.names.len();
        let b = matrix_from_rows(&self.b, 0).map_err(|e| SynthError::Model(format!("B: {e}")))?;
        let c = matrix_from_rows(&self.c, n).map_err(|e| SynthError::Model(format!("C: {e}")))?;
        SystemModel::from_text(self.names.clone(), &self.f, b, c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Controller,
    Observer,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Controller => "controller",
            Role::Observer => "observer",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub lambda: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub rho_degree: u32,
}

impl SynthParams {
    pub fn new(lambda: f64, alpha1: f64, alpha2: f64) -> Self {
        SynthParams { lambda, alpha1, alpha2, rho_degree: 2 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(SynthError::Params(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.alpha1 > 0.0 && self.alpha1 <= self.alpha2) || !self.alpha2.is_finite() {
            return Err(SynthError::Params(format!(
                "need 0 < alpha1 <= alpha2, got alpha1 = {}, alpha2 = {}",
                self.alpha1, self.alpha2
            )));
        }
        if self.rho_degree % 2 == 1 {
            return Err(SynthError::Params(format!("rho degree must be even, got {}", self.rho_degree)));
        }
        Ok(())
    }
}

/// Parameter layout shared by both programs.
struct ProgramVars {
    params: ParamSpace,
    w: usize,
    rho: Vec<(Monomial, ParamRef)>,
}

fn program_vars(n: usize, names: &[String], rho_degree: u32) -> ProgramVars {
    let mut params = ParamSpace::new();
    let w = params.add_matrix("W", n);
    let rho = Monomial::all_up_to(n, rho_degree)
        .into_iter()
        .map(|m| {
            let label = Polynomial::monomial(m.clone(), 1.0).to_text(names);
            let r = params.add_scalar(format!("rho[{label}]"));
            (m, r)
        })
        .collect();
    ProgramVars { params, w, rho }
}

/// `rho(x) * k` as an affine polynomial in the variables `(x, delta)`.
fn rho_times(vars: &ProgramVars, nvars: usize, k: f64) -> Result<AffinePoly> {
    let mut out = AffinePoly::zero(nvars);
    if k == 0.0 {
        return Ok(out);
    }
    for (m, r) in &vars.rho {
        let mono = Polynomial::monomial(m.clone(), k).embed(nvars, 0)?;
        out = out.add(&AffinePoly::param(*r, mono))?;
    }
    Ok(out)
}

fn delta(nvars: usize, n: usize, i: usize) -> Polynomial {
    Polynomial::var(nvars, n + i)
}

/// Builds `-delta' Q delta` from the entries of `Q` and appends the `rho`
/// and bound constraints.
fn finish_program(vars: ProgramVars, n: usize, q: Vec<Vec<AffinePoly>>, params: &SynthParams) -> Result<SosProgram> {
    let nvars = 2 * n;
    let mut form = AffinePoly::zero(nvars);
    for i in 0..n {
        for j in 0..n {
            let dd = delta(nvars, n, i).mul(&delta(nvars, n, j))?;
            form = form.add(&q[i][j].mul_poly(&dd)?.scale(-1.0))?;
        }
    }
    let mut rho = AffinePoly::zero(n);
    for (m, r) in &vars.rho {
        rho = rho.add(&AffinePoly::param(*r, Polynomial::monomial(m.clone(), 1.0)))?;
    }
    Ok(SosProgram {
        constraints: vec![
            SosConstraint { name: "contraction".into(), expr: form, kind: SosKind::QuadraticForm { n_x: n } },
            SosConstraint { name: "rho".into(), expr: rho, kind: SosKind::Scalar },
        ],
        bounds: vec![MatrixBound { matrix: vars.w, lower: params.alpha1, upper: params.alpha2 }],
        params: vars.params,
    })
}

/// Program for `W A' + A W - rho G G' + 2 lambda W <= 0`, the controller
/// condition with input matrix `G`.
pub fn lmi_program(a: &PolyMatrix, g: &DMatrix<f64>, names: &[String], params: &SynthParams) -> Result<SosProgram> {
    params.validate()?;
    let n = a.rows();
    let nvars = 2 * n;
    let vars = program_vars(n, names, params.rho_degree);
    let ggt = g * g.transpose();
    let mut q = vec![vec![AffinePoly::zero(nvars); n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut e = AffinePoly::zero(nvars);
            for k in 0..n {
                // W_ik A_jk + A_ik W_kj
                e = e.add(&AffinePoly::param(ParamRef::entry(vars.w, i, k), a.get(j, k).embed(nvars, 0)?))?;
                e = e.add(&AffinePoly::param(ParamRef::entry(vars.w, k, j), a.get(i, k).embed(nvars, 0)?))?;
            }
            e = e.add(&rho_times(&vars, nvars, -ggt[(i, j)])?)?;
            e = e.add(&AffinePoly::param(ParamRef::entry(vars.w, i, j), Polynomial::constant(nvars, 2.0 * params.lambda)))?;
            q[i][j] = e;
        }
    }
    finish_program(vars, n, q, params)
}

pub fn controller_program(model: &SystemModel, params: &SynthParams) -> Result<SosProgram> {
    lmi_program(&model.a, &model.b, &model.names, params)
}

/// Program for `A' W + W A - rho C' C + 2 lambda W <= 0`.
pub fn observer_program(model: &SystemModel, params: &SynthParams) -> Result<SosProgram> {
    params.validate()?;
    let n = model.n();
    let nvars = 2 * n;
    let vars = program_vars(n, &model.names, params.rho_degree);
    let ctc = model.c.transpose() * &model.c;
    let mut q = vec![vec![AffinePoly::zero(nvars); n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut e = AffinePoly::zero(nvars);
            for k in 0..n {
                // (A' W)_ij = A_ki W_kj, (W A)_ij = W_ik A_kj
                e = e.add(&AffinePoly::param(ParamRef::entry(vars.w, i, k), model.a.get(k, j).embed(nvars, 0)?))?;
                e = e.add(&AffinePoly::param(ParamRef::entry(vars.w, k, j), model.a.get(k, i).embed(nvars, 0)?))?;
            }
            e = e.add(&rho_times(&vars, nvars, -ctc[(i, j)])?)?;
            e = e.add(&AffinePoly::param(ParamRef::entry(vars.w, i, j), Polynomial::constant(nvars, 2.0 * params.lambda)))?;
            q[i][j] = e;
        }
    }
    finish_program(vars, n, q, params)
}

pub fn program_for(model: &SystemModel, role: Role, params: &SynthParams) -> Result<SosProgram> {
    match role {
        Role::Controller => controller_program(model, params),
        Role::Observer => observer_program(model, params),
    }
}

/// A synthesized constant metric `W` with its multiplier `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub role: Role,
    pub w: DMatrix<f64>,
    pub rho: Polynomial,
    pub lambda: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub digest: String,
}

impl Metric {
    /// Recomputes the digest from the numeric content.
    pub fn compute_digest(role: Role, w: &DMatrix<f64>, rho: &Polynomial, lambda: f64, alpha1: f64, alpha2: f64) -> String {
        let mut h = Sha256::new();
        h.update(format!("{role}\n"));
        for v in w.iter() {
            h.update(format!("{v:?} "));
        }
        h.update(format!("\n{rho}\n{lambda:?} {alpha1:?} {alpha2:?}\n"));
        hex::encode(h.finalize())
    }

    pub fn digest_matches(&self) -> bool {
        self.digest == Metric::compute_digest(self.role, &self.w, &self.rho, self.lambda, self.alpha1, self.alpha2)
    }

    /// `M = W^-1`
    pub fn m(&self) -> DMatrix<f64> {
        self.w.clone().try_inverse().expect("metric W is positive definite")
    }

    /// Upper-triangular `Theta` with `Theta' Theta = M`.
    pub fn theta(&self) -> DMatrix<f64> {
        nalgebra::Cholesky::new(self.m()).expect("metric W is positive definite").l().transpose()
    }

    /// `(min, max)` eigenvalues of `W`.
    pub fn w_eigen_range(&self) -> (f64, f64) {
        let e = SymmetricEigen::new(self.w.clone()).eigenvalues;
        (e.min(), e.max())
    }

    /// Nominal bounds on `M = W^-1` implied by the bounds on `W`.
    pub fn m_bounds(&self) -> (f64, f64) {
        (1.0 / self.alpha2, 1.0 / self.alpha1)
    }

    /// The matrix that must be negative semidefinite at state `x`.
    pub fn lmi_at(&self, model: &SystemModel, x: &[f64]) -> DMatrix<f64> {
        let a = model.a.eval(x).expect("state dimension matches the model");
        let rho = self.rho.eval(x).expect("state dimension matches the model");
        let two_lambda_w = &self.w * (2.0 * self.lambda);
        let q = match self.role {
            Role::Controller => &self.w * a.transpose() + &a * &self.w - model.b() * model.b().transpose() * rho + two_lambda_w,
            Role::Observer => a.transpose() * &self.w + &self.w * &a - model.c().transpose() * model.c() * rho + two_lambda_w,
        };
        (&q + q.transpose()) * 0.5
    }

    pub fn with_lambda(&self, lambda: f64) -> Metric {
        let mut out = self.clone();
        out.lambda = lambda;
        out.digest = Metric::compute_digest(out.role, &out.w, &out.rho, out.lambda, out.alpha1, out.alpha2);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthStats {
    pub compile: CompileStats,
    pub gram_sizes: Vec<(String, usize, usize)>,
    pub iterations: usize,
    pub seconds: f64,
    pub solver_message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthOutcome {
    Feasible(Metric),
    /// Farkas multipliers on the compiled equalities.
    Infeasible(Vec<f64>),
    Inconclusive(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub role: Role,
    pub outcome: SynthOutcome,
    pub stats: SynthStats,
    /// worst certificate mismatch and negative Gram eigenvalue on success
    pub certificate_residual: Option<(f64, f64)>,
}

/// Certificates recovered from the solver must reproduce the constraint
/// polynomials to this tolerance before a metric is returned.
pub const CERT_TOL: f64 = 1e-6;

pub fn synthesize(model: &SystemModel, role: Role, params: &SynthParams, opts: &SolveOptions) -> Result<Synthesis> {
    let program = program_for(model, role, params)?;
    let start = Instant::now();
    let solved = sos::solve(&program, opts)?;
    let seconds = start.elapsed().as_secs_f64();
    let stats = SynthStats {
        compile: solved.compiled.stats(),
        gram_sizes: solved.compiled.gram.iter().map(|g| (g.constraint.clone(), g.full_size, g.basis.len())).collect(),
        iterations: solved.solution.iterations,
        seconds,
        solver_message: solved.solution.message.clone(),
    };
    let (outcome, certificate_residual) = match &solved.outcome {
        SosOutcome::Feasible { params: values, .. } => {
            let residual = sos::verify_solve(&program, &solved)?;
            if residual.0 > CERT_TOL || residual.1 > CERT_TOL {
                let msg = format!(
                    "solver reported feasible but the certificate fails re-verification (mismatch {:.3e}, negative eigenvalue {:.3e})",
                    residual.0, residual.1
                );
                (SynthOutcome::Inconclusive(msg), Some(residual))
            } else {
                let w = values.matrices[0].clone();
                let mut rho = Polynomial::zero(model.n());
                for (k, m) in Monomial::all_up_to(model.n(), params.rho_degree).into_iter().enumerate() {
                    // the only scalar parameters are the rho coefficients, in monomial order
                    let c = values.scalars[k];
                    if c.abs() > 1e-12 {
                        rho.add_term(m, c);
                    }
                }
                let digest = Metric::compute_digest(role, &w, &rho, params.lambda, params.alpha1, params.alpha2);
                let metric = Metric { role, w, rho, lambda: params.lambda, alpha1: params.alpha1, alpha2: params.alpha2, digest };
                (SynthOutcome::Feasible(metric), Some(residual))
            }
        }
        SosOutcome::Infeasible { certificate } => (SynthOutcome::Infeasible(certificate.clone()), None),
        SosOutcome::Inconclusive { message } => (SynthOutcome::Inconclusive(message.clone()), None),
    };
    Ok(Synthesis { role, outcome, stats, certificate_residual })
}

/// Box `[lo_i, hi_i]` per state.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl GridBox {
    pub fn cube(n: usize, lo: f64, hi: f64) -> Self {
        GridBox { lo: vec![lo; n], hi: vec![hi; n] }
    }

    /// Grid point `index` (row-major over axes) with `points` per axis; a
    /// single point per axis sits at the box center.
    pub fn point(&self, points: usize, mut index: usize) -> Vec<f64> {
        let n = self.lo.len();
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let i = index % points;
            index /= points;
            x[k] = if points == 1 {
                0.5 * (self.lo[k] + self.hi[k])
            } else {
                self.lo[k] + (self.hi[k] - self.lo[k]) * i as f64 / (points - 1) as f64
            };
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    /// largest eigenvalue of the metric inequality over the grid
    pub max_violation: f64,
    pub worst_point: Vec<f64>,
    /// smallest value of `rho` over the grid
    pub min_rho: f64,
    pub points: usize,
}

impl Verification {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_violation <= tol && self.min_rho >= -tol
    }
}

pub fn verify_pointwise(metric: &Metric, model: &SystemModel, grid_box: &GridBox, points: usize) -> Result<Verification> {
    let n = model.n();
    if grid_box.lo.len() != n || grid_box.hi.len() != n {
        return Err(SynthError::Params(format!("box has {} axes for a {n}-state model", grid_box.lo.len())));
    }
    if points == 0 || grid_box.lo.iter().zip(&grid_box.hi).any(|(l, h)| !(l <= h)) {
        return Err(SynthError::Params("empty verification grid".into()));
    }
    if metric.w.nrows() != n || metric.rho.nvars() != n {
        return Err(SynthError::Params("metric dimension does not match the model".into()));
    }
    let total = points.checked_pow(n as u32).ok_or_else(|| SynthError::Params("grid too large".into()))?;
    let eval = |k: usize| {
        let x = grid_box.point(points, k);
        let lmi = metric.lmi_at(model, &x);
        let top = SymmetricEigen::new(lmi).eigenvalues.max();
        let rho = metric.rho.eval(&x).expect("state dimension matches the model");
        (top, k, rho)
    };
    // ties resolve to the lowest index so the result is deterministic
    let (max_violation, worst, min_rho) = (0..total)
        .into_par_iter()
        .map(eval)
        .reduce(
            || (f64::NEG_INFINITY, usize::MAX, f64::INFINITY),
            |a, b| {
                let (v, k) = if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { (b.0, b.1) } else { (a.0, a.1) };
                (v, k, a.2.min(b.2))
            },
        );
    Ok(Verification { max_violation, worst_point: grid_box.point(points, worst), min_rho, points: total })
}

/// On-disk metric document: the metric plus the model it was built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricFile {
    pub role: Role,
    pub lambda: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// row-major
    pub w: Vec<Vec<f64>>,
    pub rho: String,
    pub digest: String,
    pub model: ModelSpec,
}

impl MetricFile {
    pub fn new(metric: &Metric, model: &SystemModel) -> Self {
        MetricFile {
            role: metric.role,
            lambda: metric.lambda,
            alpha1: metric.alpha1,
            alpha2: metric.alpha2,
            w: rows_of(&metric.w),
            rho: metric.rho.to_text(model.names()),
            digest: metric.digest.clone(),
            model: model.to_spec(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("metric documents always serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SynthError::Format(e.to_string()))
    }

    pub fn build(&self) -> Result<(Metric, SystemModel)> {
        let model = self.model.build()?;
        let n = model.n();
        let w = matrix_from_rows(&self.w, n).map_err(|e| SynthError::Format(format!("W: {e}")))?;
        if w.nrows() != n || w.ncols() != n {
            return Err(SynthError::Format(format!("W is {}x{}, expected {n}x{n}", w.nrows(), w.ncols())));
        }
        let rho = Polynomial::parse(&self.rho, model.names()).map_err(|e| SynthError::Format(format!("rho: {e}")))?;
        let metric = Metric {
            role: self.role,
            w,
            rho,
            lambda: self.lambda,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            digest: self.digest.clone(),
        };
        Ok((metric, model))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::dump;

    #[test]
    fn moore_greitzer_jacobian() {
        let mg = SystemModel::moore_greitzer();
        let a = mg.jacobian();
        let names = mg.names();
        assert_eq!(a.get(0, 0).to_text(names), "-1.5*phi^2 - 3*phi");
        assert_eq!(a.get(0, 1).to_text(names), "-1");
        assert_eq!(a.get(1, 0).to_text(names), "1");
        assert!(a.get(1, 1).is_zero());
    }

    #[test]
    fn model_shape_errors() {
        let mg = SystemModel::moore_greitzer();
        assert!(mg.with_b(DMatrix::zeros(3, 1)).is_err());
        assert!(mg.with_c(DMatrix::zeros(1, 3)).is_err());
        let bad = ModelSpec { names: vec!["a".into()], f: vec!["a + b".into()], b: vec![vec![1.0]], c: vec![vec![1.0]] };
        assert!(matches!(bad.build(), Err(SynthError::Polynomial { index: 0, .. })));
    }

    #[test]
    fn parameters_are_validated() {
        let mg = SystemModel::moore_greitzer();
        assert!(controller_program(&mg, &SynthParams::new(0.0, 0.1, 1.0)).is_err());
        assert!(controller_program(&mg, &SynthParams::new(1.0, 2.0, 1.0)).is_err());
        let mut odd = SynthParams::new(1.0, 0.1, 1.0);
        odd.rho_degree = 3;
        assert!(controller_program(&mg, &odd).is_err());
    }

    #[test]
    fn observer_matches_controller_of_transposed_jacobian() {
        let mg = SystemModel::moore_greitzer();
        let params = SynthParams::new(0.1, 0.1, 1.3);
        let obs = sos::compile(&observer_program(&mg, &params).unwrap()).unwrap();
        let dual = lmi_program(&mg.jacobian().transpose(), &mg.c().transpose(), mg.names(), &params).unwrap();
        let dual = sos::compile(&dual).unwrap();
        assert_eq!(dump(&obs.sdp), dump(&dual.sdp));
    }

    #[test]
    fn grid_points_cover_box_corners_and_center() {
        let g = GridBox::cube(2, -5.0, 5.0);
        assert_eq!(g.point(101, 0), vec![-5.0, -5.0]);
        assert_eq!(g.point(101, 101 * 101 - 1), vec![5.0, 5.0]);
        assert_eq!(g.point(101, 100), vec![-5.0, 5.0]);
        assert_eq!(g.point(1, 0), vec![0.0, 0.0]);
    }

    #[test]
    fn digest_tracks_content() {
        let w = DMatrix::identity(2, 2);
        let rho = Polynomial::constant(2, 4.0);
        let d1 = Metric::compute_digest(Role::Controller, &w, &rho, 1.0, 0.5, 2.0);
        let d2 = Metric::compute_digest(Role::Controller, &(w * 2.0), &rho, 1.0, 0.5, 2.0);
        assert_ne!(d1, d2);
        assert_eq!(d1.len(), 64);
    }
}
