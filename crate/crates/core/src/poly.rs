//! Sparse multivariate polynomials over `f64`.
//!
//! Terms live in a `BTreeMap` keyed by [`Monomial`], whose ordering is
//! graded lexicographic, so iteration order is canonical and two equal
//! polynomials always have identical term sequences. Only exact zeros are
//! pruned; numerical cleanup is the caller's business.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolyError {
    #[error("arity mismatch: expected {expected} variables, found {found}")]
    Arity { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("parse error at column {column}: {message}")]
    Parse { column: usize, message: String },
}

pub type Result<T> = std::result::Result<T, PolyError>;

fn check_arity(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(PolyError::Arity { expected, found })
    }
}

/// Exponent vector, one entry per ambient variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    pub fn var(nvars: usize, index: usize) -> Self {
        let mut e = vec![0; nvars];
        e[index] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Total degree restricted to the given variable indices.
    pub fn degree_in(&self, vars: &[usize]) -> u32 {
        vars.iter().map(|&v| self.0[v]).sum()
    }

    pub fn is_one(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), other.0.len());
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(point)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }

    /// All monomials in `nvars` variables with total degree at most `max_degree`,
    /// in canonical order.
    pub fn all_up_to(nvars: usize, max_degree: u32) -> Vec<Monomial> {
        let mut out = Vec::new();
        for d in 0..=max_degree {
            let mut cur = vec![0u32; nvars];
            collect_degree(nvars, d, 0, &mut cur, &mut out);
        }
        out.sort();
        out
    }
}

fn collect_degree(nvars: usize, remaining: u32, pos: usize, cur: &mut Vec<u32>, out: &mut Vec<Monomial>) {
    if nvars == 0 {
        if remaining == 0 {
            out.push(Monomial(Vec::new()));
        }
        return;
    }
    if pos == nvars - 1 {
        cur[pos] = remaining;
        out.push(Monomial(cur.clone()));
        cur[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        cur[pos] = e;
        collect_degree(nvars, remaining - e, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

impl Ord for Monomial {
    /// Graded lexicographic: lower total degree first, then lexicographic on
    /// the exponent vector (so `x1` sorts after `x2`).
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.0.len().cmp(&other.0.len()))
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Polynomial::zero(nvars);
        p.add_term(Monomial::one(nvars), c);
        p
    }

    pub fn var(nvars: usize, index: usize) -> Self {
        Polynomial::monomial(Monomial::var(nvars, index), 1.0)
    }

    pub fn monomial(m: Monomial, c: f64) -> Self {
        let mut p = Polynomial::zero(m.nvars());
        p.add_term(m, c);
        p
    }

    /// Builds from `(exponents, coefficient)` pairs, summing duplicates.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u32>, f64)>,
    {
        let mut p = Polynomial::zero(nvars);
        for (e, c) in terms {
            check_arity(nvars, e.len())?;
            p.add_term(Monomial(e), c);
        }
        Ok(p)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    /// Adds `c * m` in place; the resulting coefficient is dropped if it is exactly zero.
    pub fn add_term(&mut self, m: Monomial, c: f64) {
        debug_assert_eq!(m.nvars(), self.nvars);
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(m);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn degree_in(&self, vars: &[usize]) -> u32 {
        self.terms.keys().map(|m| m.degree_in(vars)).max().unwrap_or(0)
    }

    pub fn add(&self, other: &Polynomial) -> Result<Polynomial> {
        check_arity(self.nvars, other.nvars)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Polynomial) -> Result<Polynomial> {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial> {
        check_arity(self.nvars, other.nvars)?;
        let mut out = Polynomial::zero(self.nvars);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, k: f64) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (m, &c) in &self.terms {
            out.add_term(m.clone(), c * k);
        }
        out
    }

    pub fn pow(&self, e: u32) -> Polynomial {
        let mut out = Polynomial::constant(self.nvars, 1.0);
        for _ in 0..e {
            out = out.mul(self).expect("same arity");
        }
        out
    }

    /// Partial derivative with respect to variable `j`.
    pub fn derivative(&self, j: usize) -> Result<Polynomial> {
        if j >= self.nvars {
            return Err(PolyError::Shape(format!("variable index {j} out of range for {} variables", self.nvars)));
        }
        let mut out = Polynomial::zero(self.nvars);
        for (m, &c) in &self.terms {
            let e = m.0[j];
            if e == 0 {
                continue;
            }
            let mut dm = m.0.clone();
            dm[j] -= 1;
            out.add_term(Monomial(dm), c * e as f64);
        }
        Ok(out)
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        check_arity(self.nvars, point.len())?;
        Ok(self.terms.iter().map(|(m, &c)| c * m.eval(point)).sum())
    }

    /// Re-expresses the polynomial in a larger ring, mapping variable `i` to
    /// variable `offset + i` of `nvars`.
    pub fn embed(&self, nvars: usize, offset: usize) -> Result<Polynomial> {
        if offset + self.nvars > nvars {
            return Err(PolyError::Shape(format!(
                "cannot embed {} variables at offset {offset} into {nvars}",
                self.nvars
            )));
        }
        let mut out = Polynomial::zero(nvars);
        for (m, &c) in &self.terms {
            let mut e = vec![0; nvars];
            e[offset..offset + self.nvars].copy_from_slice(&m.0);
            out.add_term(Monomial(e), c);
        }
        Ok(out)
    }

    /// Restriction of `p` to the segment `a + s*b`, as a univariate polynomial in `s`.
    pub fn along_segment(&self, a: &[f64], b: &[f64]) -> Result<Univariate> {
        check_arity(self.nvars, a.len())?;
        check_arity(self.nvars, b.len())?;
        let mut total = Univariate::zero();
        for (m, &c) in &self.terms {
            let mut term = Univariate::constant(c);
            for (i, &e) in m.0.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let factor = Univariate(vec![a[i], b[i]]);
                for _ in 0..e {
                    term = term.mul(&factor);
                }
            }
            total = total.add(&term);
        }
        Ok(total)
    }

    /// Exact value of the integral of `p(a + s*b)` for `s` in `[0, 1]`.
    pub fn line_integral_unit(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let anti = self.along_segment(a, b)?.antiderivative();
        Ok(anti.eval(1.0) - anti.eval(0.0))
    }

    /// Largest absolute coefficient difference against `other`.
    pub fn max_coeff_diff(&self, other: &Polynomial) -> Result<f64> {
        check_arity(self.nvars, other.nvars)?;
        let diff = self.sub(other)?;
        Ok(diff.terms.values().fold(0.0_f64, |acc, c| acc.max(c.abs())))
    }

    /// Renders with the given variable names, e.g. `1.5*phi^2 - psi`.
    pub fn to_text(&self, names: &[String]) -> String {
        assert_eq!(names.len(), self.nvars, "one name per variable");
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (k, (m, &c)) in self.terms.iter().rev().enumerate() {
            let neg = c < 0.0;
            let mag = c.abs();
            if k == 0 {
                if neg {
                    out.push('-');
                }
            } else {
                out.push_str(if neg { " - " } else { " + " });
            }
            let factors: Vec<String> = m
                .0
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(i, &e)| if e == 1 { names[i].clone() } else { format!("{}^{}", names[i], e) })
                .collect();
            if factors.is_empty() {
                out.push_str(&format_coeff(mag));
            } else {
                if mag != 1.0 {
                    out.push_str(&format_coeff(mag));
                    out.push('*');
                }
                out.push_str(&factors.join("*"));
            }
        }
        out
    }

    /// Parses the text format produced by [`Polynomial::to_text`].
    pub fn parse(text: &str, names: &[String]) -> Result<Polynomial> {
        Parser { chars: text.chars().collect(), pos: 0, names }.parse()
    }
}

/// Default variable names `x1..xn`.
pub fn default_names(nvars: usize) -> Vec<String> {
    (1..=nvars).map(|i| format!("x{i}")).collect()
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text(&default_names(self.nvars)))
    }
}

/// Shortest text that parses back to the same `f64`.
pub fn format_coeff(c: f64) -> String {
    if c.fract() == 0.0 && c.abs() < 1e15 {
        format!("{}", c as i64)
    } else {
        format!("{c:?}")
    }
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    names: &'a [String],
}

impl Parser<'_> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(PolyError::Parse { column: self.pos + 1, message: message.into() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn parse(mut self) -> Result<Polynomial> {
        let nvars = self.names.len();
        let mut out = Polynomial::zero(nvars);
        self.skip_ws();
        if self.peek().is_none() {
            return self.err("empty polynomial");
        }
        let mut first = true;
        loop {
            self.skip_ws();
            let mut sign = 1.0;
            match self.peek() {
                Some('+') => {
                    self.pos += 1;
                }
                Some('-') => {
                    sign = -1.0;
                    self.pos += 1;
                }
                Some(_) if first => {}
                Some(c) => return self.err(format!("expected '+' or '-', found '{c}'")),
                None => break,
            }
            first = false;
            self.skip_ws();
            let (m, c) = self.term()?;
            out.add_term(m, sign * c);
            self.skip_ws();
            if self.peek().is_none() {
                break;
            }
        }
        Ok(out)
    }

    fn term(&mut self) -> Result<(Monomial, f64)> {
        let nvars = self.names.len();
        let mut exps = vec![0u32; nvars];
        let mut coeff = 1.0;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(c) if c.is_ascii_digit() || c == '.' => coeff *= self.number()?,
                Some(c) if c.is_alphabetic() || c == '_' => {
                    let start = self.pos;
                    let ident = self.ident();
                    let Some(idx) = self.names.iter().position(|n| *n == ident) else {
                        self.pos = start;
                        return self.err(format!("unknown variable '{ident}'"));
                    };
                    self.skip_ws();
                    let mut e = 1;
                    if self.peek() == Some('^') {
                        self.pos += 1;
                        self.skip_ws();
                        e = self.exponent()?;
                    }
                    exps[idx] += e;
                }
                Some(c) => return self.err(format!("unexpected character '{c}'")),
                None => return self.err("unexpected end of input"),
            }
            self.skip_ws();
            if self.peek() == Some('*') {
                self.pos += 1;
            } else {
                break;
            }
        }
        Ok((Monomial(exps), coeff))
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn exponent(&mut self) -> Result<u32> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected a non-negative integer exponent");
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        s.parse().or_else(|_| {
            self.pos = start;
            self.err("exponent out of range")
        })
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == '.') {
            self.pos += 1;
        }
        if matches!(self.peek(), Some('e') | Some('E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some('+') | Some('-')) {
                self.pos += 1;
            }
            if matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        s.parse::<f64>().or_else(|_| {
            self.pos = start;
            self.err(format!("malformed number '{s}'"))
        })
    }
}

/// Dense univariate polynomial, coefficient `k` multiplies `s^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Univariate(pub Vec<f64>);

impl Univariate {
    pub fn zero() -> Self {
        Univariate(Vec::new())
    }

    pub fn constant(c: f64) -> Self {
        Univariate(vec![c])
    }

    pub fn add(&self, other: &Univariate) -> Univariate {
        let n = self.0.len().max(other.0.len());
        Univariate(
            (0..n)
                .map(|k| self.0.get(k).copied().unwrap_or(0.0) + other.0.get(k).copied().unwrap_or(0.0))
                .collect(),
        )
    }

    pub fn mul(&self, other: &Univariate) -> Univariate {
        if self.0.is_empty() || other.0.is_empty() {
            return Univariate::zero();
        }
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Univariate(out)
    }

    pub fn antiderivative(&self) -> Univariate {
        let mut out = vec![0.0; self.0.len() + 1];
        for (k, c) in self.0.iter().enumerate() {
            out[k + 1] = c / (k + 1) as f64;
        }
        Univariate(out)
    }

    /// Horner evaluation.
    pub fn eval(&self, s: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * s + c)
    }
}

/// Matrix of polynomials sharing one variable count, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMatrix {
    rows: usize,
    cols: usize,
    nvars: usize,
    entries: Vec<Polynomial>,
    symmetric: bool,
}

impl PolyMatrix {
    pub fn zeros(rows: usize, cols: usize, nvars: usize) -> Self {
        PolyMatrix { rows, cols, nvars, entries: vec![Polynomial::zero(nvars); rows * cols], symmetric: false }
    }

    pub fn from_rows(rows: usize, cols: usize, entries: Vec<Polynomial>) -> Result<Self> {
        if entries.len() != rows * cols || entries.is_empty() {
            return Err(PolyError::Shape(format!("{} entries for a {rows}x{cols} matrix", entries.len())));
        }
        let nvars = entries[0].nvars();
        for e in &entries {
            check_arity(nvars, e.nvars())?;
        }
        let mut m = PolyMatrix { rows, cols, nvars, entries, symmetric: false };
        m.symmetric = m.is_symmetric();
        Ok(m)
    }

    pub fn column(entries: Vec<Polynomial>) -> Result<Self> {
        let n = entries.len();
        PolyMatrix::from_rows(n, 1, entries)
    }

    pub fn from_constant(m: &DMatrix<f64>, nvars: usize) -> Self {
        let mut out = PolyMatrix::zeros(m.nrows(), m.ncols(), nvars);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.set(i, j, Polynomial::constant(nvars, m[(i, j)]));
            }
        }
        out.symmetric = out.is_symmetric();
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn get(&self, i: usize, j: usize) -> &Polynomial {
        &self.entries[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, p: Polynomial) {
        assert_eq!(p.nvars(), self.nvars);
        self.entries[i * self.cols + j] = p;
        self.symmetric = self.is_symmetric();
    }

    fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn transpose(&self) -> PolyMatrix {
        let mut out = PolyMatrix::zeros(self.cols, self.rows, self.nvars);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.entries[j * self.rows + i] = self.get(i, j).clone();
            }
        }
        out.symmetric = self.symmetric;
        out
    }

    /// Jacobian of a column vector field with one variable per row.
    pub fn jacobian(&self) -> Result<PolyMatrix> {
        if self.cols != 1 {
            return Err(PolyError::Shape(format!("jacobian needs a column, got {} columns", self.cols)));
        }
        if self.nvars != self.rows {
            return Err(PolyError::Shape(format!(
                "jacobian needs {} variables for a field of size {}",
                self.rows, self.rows
            )));
        }
        let n = self.rows;
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                entries.push(self.get(i, 0).derivative(j)?);
            }
        }
        PolyMatrix::from_rows(n, n, entries)
    }

    pub fn eval(&self, point: &[f64]) -> Result<DMatrix<f64>> {
        check_arity(self.nvars, point.len())?;
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(i, j)] = self.get(i, j).eval(point)?;
            }
        }
        Ok(out)
    }

    pub fn eval_column(&self, point: &[f64]) -> Result<DVector<f64>> {
        let m = self.eval(point)?;
        Ok(DVector::from_column_slice(m.as_slice()))
    }

    pub fn max_degree(&self) -> u32 {
        self.entries.iter().map(Polynomial::degree).max().unwrap_or(0)
    }
}
