//! Maps an [`SdpProblem`] onto the internal cone vector and removes free
//! scalars and redundant rows before the interior-point iterations.
//!
//! Internal layout: every block contributes its `svec` (lower triangle,
//! column-major, off-diagonals scaled by sqrt 2), then sign-constrained
//! scalars (nonpositive ones negated), then free scalars.

use nalgebra::{DMatrix, DVector, RowDVector};

use super::{SdpProblem, SdpValues, Sign, Var};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConeSpec {
    pub blocks: Vec<usize>,
    pub orthant: usize,
}

impl ConeSpec {
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|d| d * (d + 1) / 2).sum::<usize>() + self.orthant
    }

    /// Barrier degree: sum of block orders plus orthant size.
    pub fn degree(&self) -> usize {
        self.blocks.iter().sum::<usize>() + self.orthant
    }
}

pub(crate) fn svec_index(i: usize, j: usize, d: usize) -> usize {
    debug_assert!(i >= j);
    // columns before `j` hold d + (d-1) + ... + (d-j+1) entries
    j * d - j * j.saturating_sub(1) / 2 + (i - j)
}

pub(crate) struct Layout {
    pub cone: ConeSpec,
    block_offsets: Vec<usize>,
    /// internal index and sign factor per scalar
    scalar_map: Vec<(usize, f64)>,
    pub n_cone: usize,
    pub n_free: usize,
}

impl Layout {
    pub fn new(prob: &SdpProblem) -> Self {
        let mut offset = 0;
        let mut block_offsets = Vec::with_capacity(prob.blocks.len());
        for b in &prob.blocks {
            block_offsets.push(offset);
            offset += b.dim * (b.dim + 1) / 2;
        }
        let mut scalar_map = vec![(0, 1.0); prob.scalars.len()];
        let mut orthant = 0;
        for (k, s) in prob.scalars.iter().enumerate() {
            match s.sign {
                Sign::NonNeg => {
                    scalar_map[k] = (offset + orthant, 1.0);
                    orthant += 1;
                }
                Sign::NonPos => {
                    scalar_map[k] = (offset + orthant, -1.0);
                    orthant += 1;
                }
                Sign::Free => {}
            }
        }
        let n_cone = offset + orthant;
        let mut n_free = 0;
        for (k, s) in prob.scalars.iter().enumerate() {
            if s.sign == Sign::Free {
                scalar_map[k] = (n_cone + n_free, 1.0);
                n_free += 1;
            }
        }
        Layout {
            cone: ConeSpec { blocks: prob.blocks.iter().map(|b| b.dim).collect(), orthant },
            block_offsets,
            scalar_map,
            n_cone,
            n_free,
        }
    }

    /// Internal index and factor with `original = factor * internal`.
    pub fn map(&self, prob: &SdpProblem, v: Var) -> (usize, f64) {
        match v {
            Var::Entry { block, row, col } => {
                let d = prob.blocks[block].dim;
                let idx = self.block_offsets[block] + svec_index(row, col, d);
                (idx, if row == col { 1.0 } else { std::f64::consts::FRAC_1_SQRT_2 })
            }
            Var::Scalar(s) => self.scalar_map[s],
        }
    }

    pub fn to_values(&self, prob: &SdpProblem, v: &DVector<f64>) -> SdpValues {
        let mut out = SdpValues::zeros(prob);
        for (b, decl) in prob.blocks.iter().enumerate() {
            for j in 0..decl.dim {
                for i in j..decl.dim {
                    let (idx, f) = self.map(prob, Var::entry(b, i, j));
                    out.blocks[b][(i, j)] = f * v[idx];
                    out.blocks[b][(j, i)] = f * v[idx];
                }
            }
        }
        for s in 0..prob.scalars.len() {
            let (idx, f) = self.scalar_map[s];
            out.scalars[s] = f * v[idx];
        }
        out
    }
}

pub(crate) struct Reduced {
    /// rows over the cone variables only
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    /// reduced rows as combinations of the original equalities
    t: DMatrix<f64>,
    /// `(free column, row over all internal columns + rhs)` with the free column as pivot
    pivots: Vec<(usize, DVector<f64>)>,
    n_cone: usize,
    n_free: usize,
    pub unbounded_free: bool,
}

pub(crate) enum Presolved {
    Reduced(Reduced),
    Inconsistent { y: Vec<f64>, residual: f64 },
}

impl Reduced {
    /// Fills in free scalars from the pivot rows given the cone part.
    pub fn recover(&self, cone: &DVector<f64>) -> DVector<f64> {
        let n = self.n_cone + self.n_free;
        let mut full = DVector::zeros(n);
        full.rows_mut(0, self.n_cone).copy_from(cone);
        for (col, row) in &self.pivots {
            let mut acc = row[n];
            for k in 0..self.n_cone {
                acc -= row[k] * cone[k];
            }
            full[self.n_cone + col] = acc / row[self.n_cone + col];
        }
        full
    }

    /// Maps a ray on the reduced rows back to the original equalities.
    pub fn lift_dual(&self, y: &DVector<f64>) -> Vec<f64> {
        (self.t.transpose() * y).iter().copied().collect()
    }
}

/// `m[r, :] -= f * src`
fn sub_row(m: &mut DMatrix<f64>, r: usize, f: f64, src: &RowDVector<f64>) {
    for (j, &v) in src.iter().enumerate() {
        m[(r, j)] -= f * v;
    }
}

pub(crate) fn reduce(prob: &SdpProblem, layout: &Layout) -> Presolved {
    let p = prob.equalities.len();
    let n = layout.n_cone + layout.n_free;
    let nc = layout.n_cone;
    // augmented [A | b]
    let mut m = DMatrix::zeros(p, n + 1);
    for (r, eq) in prob.equalities.iter().enumerate() {
        for (v, coeff) in eq.expr.terms() {
            let (idx, f) = layout.map(prob, v);
            m[(r, idx)] += coeff * f;
        }
        m[(r, n)] = eq.rhs;
    }
    let mut obj = DVector::zeros(n);
    if let Some(o) = &prob.objective {
        for (v, coeff) in o.terms() {
            let (idx, f) = layout.map(prob, v);
            obj[idx] += coeff * f;
        }
    }
    let mut t = DMatrix::<f64>::identity(p, p);
    let scale = m.columns(0, n).amax().max(1.0);
    let tol = 1e-11 * scale;

    // Gauss-Jordan with complete pivoting over the free columns.
    let mut row_used = vec![false; p];
    let mut col_used = vec![false; layout.n_free];
    let mut pivots = Vec::new();
    loop {
        let mut best = (0.0, usize::MAX, usize::MAX);
        for r in (0..p).filter(|&r| !row_used[r]) {
            for c in (0..layout.n_free).filter(|&c| !col_used[c]) {
                let v = m[(r, nc + c)].abs();
                if v > best.0 {
                    best = (v, r, c);
                }
            }
        }
        if best.0 <= tol {
            break;
        }
        let (_, pr, pc) = best;
        let pcol = nc + pc;
        let piv = m[(pr, pcol)];
        let prow = m.row(pr).clone_owned();
        let trow = t.row(pr).clone_owned();
        for r in 0..p {
            if r == pr {
                continue;
            }
            let f = m[(r, pcol)] / piv;
            if f != 0.0 {
                sub_row(&mut m, r, f, &prow);
                m[(r, pcol)] = 0.0;
                sub_row(&mut t, r, f, &trow);
            }
        }
        let fo = obj[pcol] / piv;
        if fo != 0.0 {
            for k in 0..n {
                obj[k] -= fo * prow[k];
            }
            obj[pcol] = 0.0;
        }
        row_used[pr] = true;
        col_used[pc] = true;
        pivots.push((pc, pr));
    }
    // later pivots also cleared their columns from earlier pivot rows
    let pivots: Vec<(usize, DVector<f64>)> = pivots
        .into_iter()
        .map(|(pc, pr)| (pc, DVector::from_iterator(n + 1, m.row(pr).iter().copied())))
        .collect();
    let unbounded_free = (0..layout.n_free).any(|c| !col_used[c] && obj[nc + c].abs() > tol);

    // Dependent-row detection on the remaining rows.
    let rest: Vec<usize> = (0..p).filter(|&r| !row_used[r]).collect();
    let mut e = DMatrix::zeros(rest.len(), nc + 1);
    let mut et = DMatrix::zeros(rest.len(), p);
    for (k, &r) in rest.iter().enumerate() {
        for j in 0..nc {
            e[(k, j)] = m[(r, j)];
        }
        e[(k, nc)] = m[(r, n)];
        et.row_mut(k).copy_from(&t.row(r));
    }
    let orig_e = e.clone();
    let orig_et = et.clone();
    let mut is_pivot = vec![false; rest.len()];
    for col in 0..nc {
        let mut best = (tol, usize::MAX);
        for k in (0..rest.len()).filter(|&k| !is_pivot[k]) {
            if e[(k, col)].abs() > best.0 {
                best = (e[(k, col)].abs(), k);
            }
        }
        if best.1 == usize::MAX {
            continue;
        }
        let pk = best.1;
        is_pivot[pk] = true;
        let prow = e.row(pk).clone_owned();
        let trow = et.row(pk).clone_owned();
        let piv = prow[col];
        for k in (0..rest.len()).filter(|&k| !is_pivot[k]) {
            let f = e[(k, col)] / piv;
            if f != 0.0 {
                sub_row(&mut e, k, f, &prow);
                e[(k, col)] = 0.0;
                sub_row(&mut et, k, f, &trow);
            }
        }
    }
    let bscale = e.column(nc).amax().max(1.0);
    for k in (0..rest.len()).filter(|&k| !is_pivot[k]) {
        let bk = e[(k, nc)];
        if bk.abs() > 1e-9 * bscale {
            let y: Vec<f64> = et.row(k).iter().map(|v| -v / bk).collect();
            let residual = e.row(k).columns(0, nc).amax() / bk.abs();
            return Presolved::Inconsistent { y, residual };
        }
    }

    let keep: Vec<usize> = (0..rest.len()).filter(|&k| is_pivot[k]).collect();
    let mut a = DMatrix::zeros(keep.len(), nc);
    let mut b = DVector::zeros(keep.len());
    let mut tk = DMatrix::zeros(keep.len(), p);
    for (i, &k) in keep.iter().enumerate() {
        for j in 0..nc {
            a[(i, j)] = orig_e[(k, j)];
        }
        b[i] = orig_e[(k, nc)];
        tk.row_mut(i).copy_from(&orig_et.row(k));
    }
    Presolved::Reduced(Reduced {
        a,
        b,
        c: obj.rows(0, nc).clone_owned(),
        t: tk,
        pivots,
        n_cone: nc,
        n_free: layout.n_free,
        unbounded_free,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_indices_are_dense_and_column_major() {
        let d = 4;
        let mut seen = Vec::new();
        for j in 0..d {
            for i in j..d {
                seen.push(svec_index(i, j, d));
            }
        }
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }
}
