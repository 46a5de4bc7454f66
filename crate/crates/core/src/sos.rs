//! Sum-of-squares constraints with coefficients affine in decision
//! parameters, compiled to Gram-matrix semidefinite programs.
//!
//! Two constraint shapes are supported. A [`SosKind::Scalar`] constraint
//! asks a polynomial to be a sum of squares over all its variables. A
//! [`SosKind::QuadraticForm`] constraint is `delta' Q(x) delta` with the
//! trailing variables playing the role of `delta`; its Gram basis is the
//! product of low-degree `x` monomials with each `delta` component, which is
//! far smaller than the generic monomial basis.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::poly::{Monomial, PolyError, Polynomial};
use crate::sdp::{self, LinearExpr, SdpProblem, SdpSolution, SdpValues, Sign, SolveOptions, SolveStatus, Var};

/// Eigenvalues of a recovered Gram matrix below this are clipped to zero.
pub const CERT_CLIP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SosError {
    #[error("constraint '{constraint}': {message}")]
    NoBasis { constraint: String, message: String },
    #[error("constraint '{constraint}' is not homogeneous quadratic in the delta variables")]
    NotQuadratic { constraint: String },
    #[error("inconsistent declarations: {0}")]
    Declaration(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Sdp(#[from] sdp::SdpError),
}

pub type Result<T> = std::result::Result<T, SosError>;

/// A decision parameter: a declared scalar or one entry of a declared
/// symmetric matrix (stored with `row >= col`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamRef {
    Scalar(usize),
    Entry { matrix: usize, row: usize, col: usize },
}

impl ParamRef {
    pub fn entry(matrix: usize, i: usize, j: usize) -> ParamRef {
        let (row, col) = if i >= j { (i, j) } else { (j, i) };
        ParamRef::Entry { matrix, row, col }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSpace {
    scalars: Vec<String>,
    matrices: Vec<(String, usize)>,
}

impl ParamSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_scalar(&mut self, name: impl Into<String>) -> ParamRef {
        self.scalars.push(name.into());
        ParamRef::Scalar(self.scalars.len() - 1)
    }

    /// Declares a symmetric `dim x dim` matrix parameter and returns its index.
    pub fn add_matrix(&mut self, name: impl Into<String>, dim: usize) -> usize {
        self.matrices.push((name.into(), dim));
        self.matrices.len() - 1
    }

    pub fn scalar_names(&self) -> &[String] {
        &self.scalars
    }

    pub fn matrices(&self) -> &[(String, usize)] {
        &self.matrices
    }

    fn contains(&self, p: ParamRef) -> bool {
        match p {
            ParamRef::Scalar(s) => s < self.scalars.len(),
            ParamRef::Entry { matrix, row, col } => {
                self.matrices.get(matrix).is_some_and(|&(_, d)| row < d && col <= row)
            }
        }
    }
}

/// Values for every declared parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamValues {
    pub scalars: Vec<f64>,
    pub matrices: Vec<DMatrix<f64>>,
}

impl ParamValues {
    pub fn get(&self, p: ParamRef) -> f64 {
        match p {
            ParamRef::Scalar(s) => self.scalars[s],
            ParamRef::Entry { matrix, row, col } => self.matrices[matrix][(row, col)],
        }
    }
}

/// `constant + sum_k param_k * linear_k`, every piece a polynomial in the
/// same variables.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePoly {
    constant: Polynomial,
    linear: BTreeMap<ParamRef, Polynomial>,
}

impl AffinePoly {
    pub fn zero(nvars: usize) -> Self {
        AffinePoly { constant: Polynomial::zero(nvars), linear: BTreeMap::new() }
    }

    pub fn from_poly(p: Polynomial) -> Self {
        AffinePoly { constant: p, linear: BTreeMap::new() }
    }

    /// `param * p`
    pub fn param(param: ParamRef, p: Polynomial) -> Self {
        let mut out = AffinePoly::zero(p.nvars());
        if !p.is_zero() {
            out.linear.insert(param, p);
        }
        out
    }

    pub fn nvars(&self) -> usize {
        self.constant.nvars()
    }

    pub fn constant_part(&self) -> &Polynomial {
        &self.constant
    }

    pub fn linear_parts(&self) -> impl Iterator<Item = (ParamRef, &Polynomial)> {
        self.linear.iter().map(|(&k, v)| (k, v))
    }

    pub fn add(&self, other: &AffinePoly) -> Result<AffinePoly> {
        let mut out = self.clone();
        out.constant = out.constant.add(&other.constant)?;
        for (&k, p) in &other.linear {
            let sum = match out.linear.get(&k) {
                Some(q) => q.add(p)?,
                None => p.clone(),
            };
            if sum.is_zero() {
                out.linear.remove(&k);
            } else {
                out.linear.insert(k, sum);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, k: f64) -> AffinePoly {
        AffinePoly {
            constant: self.constant.scale(k),
            linear: self.linear.iter().map(|(&r, p)| (r, p.scale(k))).filter(|(_, p)| !p.is_zero()).collect(),
        }
    }

    pub fn mul_poly(&self, q: &Polynomial) -> Result<AffinePoly> {
        let mut out = AffinePoly::from_poly(self.constant.mul(q)?);
        for (&r, p) in &self.linear {
            let prod = p.mul(q)?;
            if !prod.is_zero() {
                out.linear.insert(r, prod);
            }
        }
        Ok(out)
    }

    /// Substitutes parameter values.
    pub fn instantiate(&self, values: &ParamValues) -> Result<Polynomial> {
        let mut out = self.constant.clone();
        for (&r, p) in &self.linear {
            out = out.add(&p.scale(values.get(r)))?;
        }
        Ok(out)
    }

    /// Every monomial with a structurally nonzero coefficient.
    pub fn support(&self) -> BTreeSet<Monomial> {
        let mut out: BTreeSet<Monomial> = self.constant.terms().map(|(m, _)| m.clone()).collect();
        for p in self.linear.values() {
            out.extend(p.terms().map(|(m, _)| m.clone()));
        }
        out
    }

    /// True when the coefficient of `m` is identically zero in the parameters.
    pub fn coefficient_vanishes(&self, m: &Monomial) -> bool {
        self.constant.coeff(m) == 0.0 && self.linear.values().all(|p| p.coeff(m) == 0.0)
    }

    fn degree(&self) -> u32 {
        self.support().iter().map(Monomial::degree).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SosKind {
    Scalar,
    /// The last `nvars - n_x` variables are the `delta` components.
    QuadraticForm { n_x: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SosConstraint {
    pub name: String,
    pub expr: AffinePoly,
    pub kind: SosKind,
}

/// `lower * I <= P <= upper * I` for a declared matrix parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixBound {
    pub matrix: usize,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SosProgram {
    pub params: ParamSpace,
    pub constraints: Vec<SosConstraint>,
    pub bounds: Vec<MatrixBound>,
}

/// Gram witness: `basis' * gram * basis` equals the certified polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct SosCertificate {
    pub basis: Vec<Monomial>,
    pub gram: DMatrix<f64>,
}

impl SosCertificate {
    /// The polynomial `z' G z` with `z` the basis.
    pub fn reproduce(&self) -> Polynomial {
        let nvars = self.basis.first().map_or(0, Monomial::nvars);
        let mut out = Polynomial::zero(nvars);
        for i in 0..self.basis.len() {
            for j in 0..self.basis.len() {
                let g = self.gram[(i, j)];
                if g != 0.0 {
                    out.add_term(self.basis[i].mul(&self.basis[j]), g);
                }
            }
        }
        out
    }
}

/// Largest coefficient mismatch and smallest Gram eigenvalue.
pub fn certificate_residual(p: &Polynomial, cert: &SosCertificate) -> Result<(f64, f64)> {
    if cert.gram.nrows() != cert.basis.len() || cert.gram.ncols() != cert.basis.len() {
        return Err(SosError::Declaration("Gram matrix does not match basis size".into()));
    }
    if cert.basis.iter().any(|m| m.nvars() != p.nvars()) {
        return Err(PolyError::Arity { expected: p.nvars(), found: cert.basis[0].nvars() }.into());
    }
    let mismatch = if cert.basis.is_empty() {
        p.terms().fold(0.0_f64, |acc, (_, c)| acc.max(c.abs()))
    } else {
        p.max_coeff_diff(&cert.reproduce())?
    };
    let sym = (&cert.gram + cert.gram.transpose()) * 0.5;
    let asym = (&cert.gram - cert.gram.transpose()).amax();
    let min_eig = if sym.nrows() == 0 {
        0.0
    } else {
        SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    };
    Ok((mismatch.max(asym), min_eig))
}

pub fn check_certificate(p: &Polynomial, cert: &SosCertificate, tol: f64) -> bool {
    match certificate_residual(p, cert) {
        Ok((mismatch, min_eig)) => mismatch <= tol && min_eig >= -tol,
        Err(_) => false,
    }
}

/// Unpruned Gram basis for a constraint.
pub fn gram_basis(c: &SosConstraint) -> Result<Vec<Monomial>> {
    let nvars = c.expr.nvars();
    let support = c.expr.support();
    match c.kind {
        SosKind::Scalar => {
            let deg = c.expr.degree();
            if deg % 2 == 1 {
                return Err(SosError::NoBasis {
                    constraint: c.name.clone(),
                    message: format!("odd total degree {deg} admits no sum-of-squares representation"),
                });
            }
            for v in 0..nvars {
                let dv = support.iter().map(|m| m.exponents()[v]).max().unwrap_or(0);
                if dv % 2 == 1 {
                    return Err(SosError::NoBasis {
                        constraint: c.name.clone(),
                        message: format!("odd degree {dv} in variable {}", v + 1),
                    });
                }
            }
            Ok(Monomial::all_up_to(nvars, deg / 2))
        }
        SosKind::QuadraticForm { n_x } => {
            if n_x > nvars {
                return Err(SosError::Declaration(format!(
                    "constraint '{}' declares {n_x} state variables but has {nvars}",
                    c.name
                )));
            }
            let x_vars: Vec<usize> = (0..n_x).collect();
            let d_vars: Vec<usize> = (n_x..nvars).collect();
            if support.iter().any(|m| m.degree_in(&d_vars) != 2) {
                return Err(SosError::NotQuadratic { constraint: c.name.clone() });
            }
            let dx = support.iter().map(|m| m.degree_in(&x_vars)).max().unwrap_or(0);
            let half = dx.div_ceil(2);
            let mut out = Vec::new();
            for m in Monomial::all_up_to(n_x, half) {
                for &d in &d_vars {
                    let mut e = vec![0; nvars];
                    e[..n_x].copy_from_slice(m.exponents());
                    e[d] = 1;
                    out.push(Monomial::new(e));
                }
            }
            Ok(out)
        }
    }
}

/// Drops basis elements whose square can only come from their own diagonal
/// Gram entry while the matching coefficient is identically zero; such a
/// diagonal entry is forced to zero, and with it the whole row.
pub fn prune_basis(expr: &AffinePoly, basis: Vec<Monomial>) -> Vec<Monomial> {
    let mut basis = basis;
    loop {
        let before = basis.len();
        let current = basis.clone();
        basis.retain(|zk| {
            let sq = zk.mul(zk);
            if !expr.coefficient_vanishes(&sq) {
                return true;
            }
            // an off-diagonal pair i < j can also produce the square
            current.iter().enumerate().any(|(i, zi)| current[i + 1..].iter().any(|zj| zi.mul(zj) == sq))
        });
        if basis.len() == before {
            return basis;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramBlock {
    pub constraint: String,
    pub block: usize,
    pub basis: Vec<Monomial>,
    /// size of the basis before pruning
    pub full_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledProgram {
    pub sdp: SdpProblem,
    pub gram: Vec<GramBlock>,
    scalar_vars: Vec<usize>,
    /// SDP scalar per lower-triangle entry, keyed by `(row, col)`
    matrix_vars: Vec<BTreeMap<(usize, usize), usize>>,
    matrix_dims: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompileStats {
    pub matrix_blocks: usize,
    pub scalar_variables: usize,
    pub equalities: usize,
    pub gram_entries: usize,
}

impl CompiledProgram {
    pub fn stats(&self) -> CompileStats {
        CompileStats {
            matrix_blocks: self.sdp.blocks().len(),
            scalar_variables: self.sdp.scalars().len(),
            equalities: self.sdp.equalities().len(),
            gram_entries: self.sdp.blocks().iter().map(|b| b.dim * (b.dim + 1) / 2).sum(),
        }
    }

    fn param_var(&self, p: ParamRef) -> Var {
        match p {
            ParamRef::Scalar(s) => Var::Scalar(self.scalar_vars[s]),
            ParamRef::Entry { matrix, row, col } => Var::Scalar(self.matrix_vars[matrix][&(row, col)]),
        }
    }

    pub fn param_values(&self, values: &SdpValues) -> ParamValues {
        let scalars = self.scalar_vars.iter().map(|&k| values.scalars[k]).collect();
        let matrices = self
            .matrix_vars
            .iter()
            .zip(&self.matrix_dims)
            .map(|(vars, &d)| {
                let mut m = DMatrix::zeros(d, d);
                for (&(i, j), &k) in vars {
                    m[(i, j)] = values.scalars[k];
                    m[(j, i)] = values.scalars[k];
                }
                m
            })
            .collect();
        ParamValues { scalars, matrices }
    }

    /// Gram witnesses read from a solution: symmetrized, with eigenvalues
    /// below [`CERT_CLIP`] set to zero.
    pub fn certificates(&self, values: &SdpValues) -> Vec<SosCertificate> {
        self.gram
            .iter()
            .map(|g| {
                let raw = &values.blocks[g.block];
                let sym = (raw + raw.transpose()) * 0.5;
                let eig = SymmetricEigen::new(sym);
                let clipped = eig.eigenvalues.map(|l| if l < CERT_CLIP { 0.0 } else { l });
                let gram = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
                let gram = (&gram + gram.transpose()) * 0.5;
                SosCertificate { basis: g.basis.clone(), gram }
            })
            .collect()
    }
}

fn validate(program: &SosProgram) -> Result<()> {
    for c in &program.constraints {
        for (r, _) in c.expr.linear_parts() {
            if !program.params.contains(r) {
                return Err(SosError::Declaration(format!(
                    "constraint '{}' uses undeclared parameter {r:?}",
                    c.name
                )));
            }
        }
        if c.expr.linear_parts().any(|(_, p)| p.nvars() != c.expr.nvars()) {
            return Err(SosError::Declaration(format!("constraint '{}' mixes variable counts", c.name)));
        }
    }
    for b in &program.bounds {
        if b.matrix >= program.params.matrices.len() {
            return Err(SosError::Declaration(format!("bound on undeclared matrix {}", b.matrix)));
        }
        if !(b.lower <= b.upper) {
            return Err(SosError::Declaration(format!(
                "bound on '{}' has lower {} above upper {}",
                program.params.matrices[b.matrix].0, b.lower, b.upper
            )));
        }
    }
    Ok(())
}

pub fn compile(program: &SosProgram) -> Result<CompiledProgram> {
    validate(program)?;
    let mut sdp = SdpProblem::new();
    let scalar_vars: Vec<usize> =
        program.params.scalars.iter().map(|name| sdp.add_scalar(name.clone(), Sign::Free)).collect();
    let mut matrix_vars = Vec::new();
    for (name, d) in &program.params.matrices {
        let mut vars = BTreeMap::new();
        for j in 0..*d {
            for i in j..*d {
                vars.insert((i, j), sdp.add_scalar(format!("{name}[{i},{j}]"), Sign::Free));
            }
        }
        matrix_vars.push(vars);
    }
    let mut compiled = CompiledProgram {
        sdp,
        gram: Vec::new(),
        scalar_vars,
        matrix_vars,
        matrix_dims: program.params.matrices.iter().map(|&(_, d)| d).collect(),
    };

    for c in &program.constraints {
        let full = gram_basis(c)?;
        let full_size = full.len();
        let basis = prune_basis(&c.expr, full);
        let block = if basis.is_empty() { None } else { Some(compiled.sdp.add_block(format!("gram {}", c.name), basis.len())) };

        // coefficient matching, one equality per monomial
        let mut rows: BTreeMap<Monomial, LinearExpr> = BTreeMap::new();
        if let Some(block) = block {
            for i in 0..basis.len() {
                for j in 0..=i {
                    let m = basis[i].mul(&basis[j]);
                    let w = if i == j { 1.0 } else { 2.0 };
                    rows.entry(m).or_default().add(Var::entry(block, i, j), w);
                }
            }
        }
        for m in c.expr.support() {
            rows.entry(m).or_default();
        }
        for (m, mut expr) in rows {
            for (r, p) in c.expr.linear_parts() {
                let k = p.coeff(&m);
                if k != 0.0 {
                    expr.add(compiled.param_var(r), -k);
                }
            }
            let rhs = c.expr.constant_part().coeff(&m);
            compiled.sdp.add_equality(expr, rhs);
        }
        if let Some(block) = block {
            compiled.gram.push(GramBlock { constraint: c.name.clone(), block, basis, full_size });
        }
    }

    for b in &program.bounds {
        let (name, d) = program.params.matrices[b.matrix].clone();
        let lo = compiled.sdp.add_block(format!("{name} - {}*I", b.lower), d);
        let hi = compiled.sdp.add_block(format!("{}*I - {name}", b.upper), d);
        for j in 0..d {
            for i in j..d {
                let p = compiled.param_var(ParamRef::entry(b.matrix, i, j));
                let eye = if i == j { 1.0 } else { 0.0 };
                // L = P - lower*I
                compiled.sdp.add_equality(LinearExpr::new().with(Var::entry(lo, i, j), 1.0).with(p, -1.0), -b.lower * eye);
                // U = upper*I - P
                compiled.sdp.add_equality(LinearExpr::new().with(Var::entry(hi, i, j), 1.0).with(p, 1.0), b.upper * eye);
            }
        }
    }
    Ok(compiled)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SosOutcome {
    /// Parameters and one certificate per Gram block.
    Feasible { params: ParamValues, certificates: Vec<SosCertificate> },
    /// Farkas multipliers on the compiled equalities.
    Infeasible { certificate: Vec<f64> },
    Inconclusive { message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SosSolve {
    pub compiled: CompiledProgram,
    pub solution: SdpSolution,
    pub outcome: SosOutcome,
}

pub fn solve(program: &SosProgram, opts: &SolveOptions) -> Result<SosSolve> {
    let compiled = compile(program)?;
    let solution = sdp::solve(&compiled.sdp, opts)?;
    let outcome = match solution.status {
        SolveStatus::Feasible => SosOutcome::Feasible {
            params: compiled.param_values(&solution.values),
            certificates: compiled.certificates(&solution.values),
        },
        SolveStatus::Infeasible => SosOutcome::Infeasible { certificate: solution.certificate.clone().unwrap_or_default() },
        SolveStatus::Marginal => SosOutcome::Inconclusive { message: solution.message.clone() },
    };
    Ok(SosSolve { compiled, solution, outcome })
}

/// Re-verifies every Gram certificate of a feasible solve against its
/// constraint polynomial instantiated at the recovered parameters.
/// Returns the worst `(coefficient mismatch, -min eigenvalue)` pair.
pub fn verify_solve(program: &SosProgram, solved: &SosSolve) -> Result<(f64, f64)> {
    let SosOutcome::Feasible { params, certificates } = &solved.outcome else {
        return Err(SosError::Declaration("no feasible solution to verify".into()));
    };
    let mut worst = (0.0_f64, 0.0_f64);
    for c in &program.constraints {
        let p = c.expr.instantiate(params)?;
        let (mismatch, min_eig) = match solved.compiled.gram.iter().position(|g| g.constraint == c.name) {
            Some(k) => certificate_residual(&p, &certificates[k])?,
            None => (p.terms().fold(0.0_f64, |acc, (_, v)| acc.max(v.abs())), 0.0),
        };
        worst = (worst.0.max(mismatch), worst.1.max(-min_eig));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::default_names;

    fn poly(text: &str, n: usize) -> Polynomial {
        Polynomial::parse(text, &default_names(n)).unwrap()
    }

    fn scalar(name: &str, p: Polynomial) -> SosConstraint {
        SosConstraint { name: name.into(), expr: AffinePoly::from_poly(p), kind: SosKind::Scalar }
    }

    #[test]
    fn basis_for_univariate_quadratic() {
        let c = scalar("q", poly("x1^2 + 1", 1));
        let b = gram_basis(&c).unwrap();
        assert_eq!(b, vec![Monomial::new(vec![0]), Monomial::new(vec![1])]);
    }

    #[test]
    fn odd_degree_has_no_basis() {
        let c = scalar("odd", poly("x1", 1));
        assert!(matches!(gram_basis(&c), Err(SosError::NoBasis { .. })));
        let c = scalar("odd in x2", poly("x1^4 + x2 + 1", 2));
        assert!(matches!(gram_basis(&c), Err(SosError::NoBasis { .. })));
    }

    #[test]
    fn quadratic_form_basis_construction_rule() {
        // delta' Q(x) delta with Q linear in x, n = 2: variables x1 x2 d1 d2
        let q = poly("x1*x3^2 + x2*x3*x4 + x4^2", 4);
        let c = SosConstraint { name: "qf".into(), expr: AffinePoly::from_poly(q), kind: SosKind::QuadraticForm { n_x: 2 } };
        let b = gram_basis(&c).unwrap();
        let expect: Vec<Monomial> = [[0, 0, 1, 0], [0, 0, 0, 1], [0, 1, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0], [1, 0, 0, 1]]
            .iter()
            .map(|e| Monomial::new(e.to_vec()))
            .collect();
        assert_eq!(b.len(), 6);
        let got: BTreeSet<_> = b.into_iter().collect();
        assert_eq!(got, expect.into_iter().collect());
    }

    #[test]
    fn quadratic_form_rejects_non_quadratic() {
        let q = poly("x1*x3 + x4^2", 4);
        let c = SosConstraint { name: "bad".into(), expr: AffinePoly::from_poly(q), kind: SosKind::QuadraticForm { n_x: 2 } };
        assert!(matches!(gram_basis(&c), Err(SosError::NotQuadratic { .. })));
    }

    #[test]
    fn certificate_checks() {
        let p = poly("x1^2 + 1", 1);
        let cert = SosCertificate { basis: vec![Monomial::new(vec![0]), Monomial::new(vec![1])], gram: DMatrix::identity(2, 2) };
        assert!(check_certificate(&p, &cert, 1e-12));
        // x is odd: no Gram matrix reproduces it
        let x = poly("x1", 1);
        let attempt = SosCertificate {
            basis: vec![Monomial::new(vec![0]), Monomial::new(vec![1])],
            gram: DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]),
        };
        assert!((attempt.reproduce().max_coeff_diff(&x).unwrap()).abs() < 1e-15);
        assert!(!check_certificate(&x, &attempt, 1e-6));
        assert!(!check_certificate(&x, &cert, 1e-6));
    }

    #[test]
    fn pruning_motzkin_keeps_newton_polytope() {
        let m = poly("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", 2);
        let c = scalar("motzkin", m);
        let full = gram_basis(&c).unwrap();
        assert_eq!(full.len(), 10);
        let pruned = prune_basis(&c.expr, full);
        let got: BTreeSet<Vec<u32>> = pruned.iter().map(|m| m.exponents().to_vec()).collect();
        let expect: BTreeSet<Vec<u32>> = [vec![0, 0], vec![1, 1], vec![2, 1], vec![1, 2]].into_iter().collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn rho_sos_compiles_to_one_gram_block() {
        let mut params = ParamSpace::new();
        let mut expr = AffinePoly::zero(2);
        for m in Monomial::all_up_to(2, 2) {
            let r = params.add_scalar(format!("rho {m:?}"));
            expr = expr.add(&AffinePoly::param(r, Polynomial::monomial(m, 1.0))).unwrap();
        }
        let program = SosProgram {
            params,
            constraints: vec![SosConstraint { name: "rho".into(), expr, kind: SosKind::Scalar }],
            bounds: vec![],
        };
        let compiled = compile(&program).unwrap();
        assert_eq!(compiled.sdp.blocks().len(), 1);
        assert_eq!(compiled.sdp.blocks()[0].dim, 3);
        assert_eq!(compiled.sdp.equalities().len(), 6);
    }

    #[test]
    fn undeclared_parameter_is_rejected() {
        let expr = AffinePoly::param(ParamRef::Scalar(3), poly("x1^2", 1));
        let program = SosProgram {
            params: ParamSpace::new(),
            constraints: vec![SosConstraint { name: "c".into(), expr, kind: SosKind::Scalar }],
            bounds: vec![],
        };
        assert!(matches!(compile(&program), Err(SosError::Declaration(_))));
    }
}
