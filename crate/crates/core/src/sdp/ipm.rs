//! Mehrotra predictor-corrector on the homogeneous self-dual embedding of
//!
//!   min c'x  s.t.  A x = b,  x in K
//!
//! where K is a product of PSD cones (in svec form) and a nonnegative
//! orthant. Written with the cone constraint as `G x + s = h`, `G = -I`,
//! `h = 0`, so the embedding is
//!
//!   A'y + G'z + c tau = 0,  -A x + b tau = 0,  s + G x - h tau = 0,
//!   kappa + c'x + b'y + h'z = 0,  s, z in K,  tau, kappa >= 0.
//!
//! Newton systems use Nesterov-Todd scaling and are solved densely.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::presolve::ConeSpec;
use super::SolveOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    Stalled,
}

pub(crate) struct IpmResult {
    pub status: Outcome,
    /// primal point `x / tau`
    pub x: DVector<f64>,
    /// dual ray normalized to `b'y = -1` when primal infeasible
    pub y: DVector<f64>,
    pub gap: f64,
    pub iterations: usize,
    pub message: String,
}

const STEP_FRACTION: f64 = 0.99;

fn smat(v: &[f64], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for j in 0..d {
        for i in j..d {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let x = v[k] * std::f64::consts::FRAC_1_SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

fn svec_into(m: &DMatrix<f64>, out: &mut [f64]) {
    let d = m.nrows();
    let mut k = 0;
    for j in 0..d {
        for i in j..d {
            out[k] = if i == j { m[(i, i)] } else { (m[(i, j)] + m[(j, i)]) * std::f64::consts::FRAC_1_SQRT_2 };
            k += 1;
        }
    }
}

struct PsdScale {
    dim: usize,
    offset: usize,
    r: DMatrix<f64>,
    rti: DMatrix<f64>,
    lambda: DVector<f64>,
}

/// NT scaling point for the current `(s, z)`.
struct Scaling {
    psd: Vec<PsdScale>,
    orth_offset: usize,
    orth_w: DVector<f64>,
    orth_lambda: DVector<f64>,
    n: usize,
}

impl Scaling {
    fn new(cone: &ConeSpec, s: &DVector<f64>, z: &DVector<f64>) -> Option<Scaling> {
        let mut psd = Vec::with_capacity(cone.blocks.len());
        let mut offset = 0;
        for &d in &cone.blocks {
            let len = d * (d + 1) / 2;
            let sm = smat(&s.as_slice()[offset..offset + len], d);
            let zm = smat(&z.as_slice()[offset..offset + len], d);
            let l1 = Cholesky::new(sm)?.l();
            let l2 = Cholesky::new(zm)?.l();
            let prod = l2.transpose() * &l1;
            let svd = prod.svd(true, true);
            let u = svd.u?;
            let v = svd.v_t?.transpose();
            let lambda = svd.singular_values;
            if lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
                return None;
            }
            let inv_sqrt = DMatrix::from_diagonal(&lambda.map(|l| 1.0 / l.sqrt()));
            let r = &l1 * v * &inv_sqrt;
            let rti = &l2 * u * &inv_sqrt;
            psd.push(PsdScale { dim: d, offset, r, rti, lambda });
            offset += len;
        }
        let k = cone.orthant;
        let mut orth_w = DVector::zeros(k);
        let mut orth_lambda = DVector::zeros(k);
        for i in 0..k {
            let (si, zi) = (s[offset + i], z[offset + i]);
            if !(si > 0.0 && zi > 0.0) {
                return None;
            }
            orth_w[i] = (si / zi).sqrt();
            orth_lambda[i] = (si * zi).sqrt();
        }
        Some(Scaling { psd, orth_offset: offset, orth_w, orth_lambda, n: offset + k })
    }

    fn map_psd(&self, v: &DVector<f64>, f: impl Fn(&PsdScale, &DMatrix<f64>) -> DMatrix<f64>, orth: impl Fn(usize, f64) -> f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for b in &self.psd {
            let len = b.dim * (b.dim + 1) / 2;
            let m = smat(&v.as_slice()[b.offset..b.offset + len], b.dim);
            svec_into(&f(b, &m), &mut out.as_mut_slice()[b.offset..b.offset + len]);
        }
        for i in 0..self.orth_w.len() {
            out[self.orth_offset + i] = orth(i, v[self.orth_offset + i]);
        }
        out
    }

    /// W^{-T}: S -> rti' S rti
    fn winv_t(&self, v: &DVector<f64>) -> DVector<f64> {
        self.map_psd(v, |b, m| b.rti.transpose() * m * &b.rti, |i, x| x / self.orth_w[i])
    }

    /// W^{-1}: Z~ -> rti Z~ rti'
    fn winv(&self, v: &DVector<f64>) -> DVector<f64> {
        self.map_psd(v, |b, m| &b.rti * m * b.rti.transpose(), |i, x| x / self.orth_w[i])
    }

    /// W': S~ -> r S~ r'
    fn wt(&self, v: &DVector<f64>) -> DVector<f64> {
        self.map_psd(v, |b, m| &b.r * m * b.r.transpose(), |i, x| x * self.orth_w[i])
    }

    /// Dense matrix of W^{-T}, block diagonal.
    fn winv_t_matrix(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for b in &self.psd {
            let len = b.dim * (b.dim + 1) / 2;
            let mut unit = vec![0.0; len];
            let mut col = vec![0.0; len];
            for k in 0..len {
                unit.iter_mut().for_each(|u| *u = 0.0);
                unit[k] = 1.0;
                let m = smat(&unit, b.dim);
                svec_into(&(b.rti.transpose() * m * &b.rti), &mut col);
                for (i, &c) in col.iter().enumerate() {
                    out[(b.offset + i, b.offset + k)] = c;
                }
            }
        }
        for i in 0..self.orth_w.len() {
            let k = self.orth_offset + i;
            out[(k, k)] = 1.0 / self.orth_w[i];
        }
        out
    }

    fn lambda(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for b in &self.psd {
            let m = DMatrix::from_diagonal(&b.lambda);
            let len = b.dim * (b.dim + 1) / 2;
            svec_into(&m, &mut out.as_mut_slice()[b.offset..b.offset + len]);
        }
        for i in 0..self.orth_w.len() {
            out[self.orth_offset + i] = self.orth_lambda[i];
        }
        out
    }

    /// Jordan product u o v.
    fn jordan(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for b in &self.psd {
            let len = b.dim * (b.dim + 1) / 2;
            let um = smat(&u.as_slice()[b.offset..b.offset + len], b.dim);
            let vm = smat(&v.as_slice()[b.offset..b.offset + len], b.dim);
            let p = (&um * &vm + &vm * &um) * 0.5;
            svec_into(&p, &mut out.as_mut_slice()[b.offset..b.offset + len]);
        }
        for i in 0..self.orth_w.len() {
            let k = self.orth_offset + i;
            out[k] = u[k] * v[k];
        }
        out
    }

    /// Solves lambda o u = d for u.
    fn lambda_solve(&self, d: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for b in &self.psd {
            let len = b.dim * (b.dim + 1) / 2;
            let dm = smat(&d.as_slice()[b.offset..b.offset + len], b.dim);
            let um = DMatrix::from_fn(b.dim, b.dim, |i, j| 2.0 * dm[(i, j)] / (b.lambda[i] + b.lambda[j]));
            svec_into(&um, &mut out.as_mut_slice()[b.offset..b.offset + len]);
        }
        for i in 0..self.orth_w.len() {
            let k = self.orth_offset + i;
            out[k] = d[k] / self.orth_lambda[i];
        }
        out
    }

    /// Largest step `a` with `lambda + a * dir` in the cone.
    fn max_step(&self, dir: &DVector<f64>) -> f64 {
        let mut alpha = f64::INFINITY;
        for b in &self.psd {
            let len = b.dim * (b.dim + 1) / 2;
            let dm = smat(&dir.as_slice()[b.offset..b.offset + len], b.dim);
            let scaled = DMatrix::from_fn(b.dim, b.dim, |i, j| dm[(i, j)] / (b.lambda[i] * b.lambda[j]).sqrt());
            let emin = SymmetricEigen::new(scaled).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            if emin < 0.0 {
                alpha = alpha.min(-1.0 / emin);
            }
        }
        for i in 0..self.orth_w.len() {
            let dv = dir[self.orth_offset + i];
            if dv < 0.0 {
                alpha = alpha.min(-self.orth_lambda[i] / dv);
            }
        }
        alpha
    }
}

fn identity_point(cone: &ConeSpec) -> DVector<f64> {
    let mut e = DVector::zeros(cone.dim());
    let mut offset = 0;
    for &d in &cone.blocks {
        let id = DMatrix::<f64>::identity(d, d);
        let len = d * (d + 1) / 2;
        svec_into(&id, &mut e.as_mut_slice()[offset..offset + len]);
        offset += len;
    }
    for i in 0..cone.orthant {
        e[offset + i] = 1.0;
    }
    e
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

pub(crate) fn run(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>, cone: &ConeSpec, opts: &SolveOptions) -> IpmResult {
    let n = cone.dim();
    let p = a.nrows();
    debug_assert_eq!(a.ncols(), n);
    let degree = cone.degree() as f64;
    let e = identity_point(cone);

    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(p);
    let mut s = e.clone();
    let mut z = e.clone();
    let mut tau = 1.0;
    let mut kappa = 1.0;

    let at = a.transpose();
    let big = 2 * n + p + 1;

    let result = |status, x: DVector<f64>, y: DVector<f64>, gap, iterations, message: &str| IpmResult {
        status,
        x,
        y,
        gap,
        iterations,
        message: message.to_string(),
    };

    if n == 0 {
        // Nothing left but (already consistent) linear rows.
        return result(Outcome::Optimal, x, y, 0.0, 0, "no conic variables");
    }

    for iter in 0..=opts.max_iter {
        let r1 = &at * &y - &z + c * tau;
        let r2 = -(a * &x) + b * tau;
        let r3 = &s - &x;
        let cx = c.dot(&x);
        let by = b.dot(&y);
        let r4 = kappa + cx + by;
        let sz = s.dot(&z);
        let mu = (sz + tau * kappa) / (degree + 1.0);

        // termination
        let pres = inf_norm(&r2).max(inf_norm(&r3)) / tau;
        let dres = inf_norm(&r1) / tau;
        // complementarity gap, relative to the objective once it exceeds one
        let gap = sz / (tau * tau) / (cx / tau).abs().max(1.0);
        if pres <= opts.feas_tol && dres <= opts.feas_tol && gap <= opts.gap_tol {
            return result(Outcome::Optimal, &x / tau, y / tau, gap, iter, "converged");
        }
        if by < 0.0 {
            let scale = -by;
            let res = inf_norm(&(&at * &y - &z)) / scale;
            if res <= opts.feas_tol {
                return result(Outcome::PrimalInfeasible, x, &y / scale, res, iter, "primal infeasible");
            }
        }
        if cx < 0.0 {
            let scale = -cx;
            let res = inf_norm(&(a * &x)).max(inf_norm(&(&s - &x))) / scale;
            if res <= opts.feas_tol {
                return result(Outcome::DualInfeasible, &x / scale, y, res, iter, "dual infeasible");
            }
        }
        if iter == opts.max_iter {
            return result(Outcome::Stalled, &x / tau, y, gap, iter, "iteration limit reached");
        }

        let Some(scaling) = Scaling::new(cone, &s, &z) else {
            return result(Outcome::Stalled, &x / tau, y, gap, iter, "lost strict cone feasibility");
        };
        let lambda = scaling.lambda();
        let winv_t = scaling.winv_t_matrix();

        let mut kkt = DMatrix::zeros(big, big);
        let (ox, oy, oz, ot) = (0, n, n + p, 2 * n + p);
        kkt.view_mut((ox, oy), (n, p)).copy_from(&at);
        kkt.view_mut((ox, oz), (n, n)).copy_from(&(-winv_t.transpose()));
        kkt.view_mut((ox, ot), (n, 1)).copy_from(c);
        kkt.view_mut((oy, ox), (p, n)).copy_from(&(-a));
        kkt.view_mut((oy, ot), (p, 1)).copy_from(b);
        kkt.view_mut((oz, ox), (n, n)).copy_from(&(-&winv_t));
        for i in 0..n {
            kkt[(oz + i, oz + i)] = -1.0;
        }
        kkt.view_mut((ot, ox), (1, n)).copy_from(&c.transpose());
        kkt.view_mut((ot, oy), (1, p)).copy_from(&b.transpose());
        kkt[(ot, ot)] = -kappa / tau;
        let lu = kkt.clone().lu();
        let scaled_r3 = scaling.winv_t(&r3);

        let solve_dir = |eta: f64, ds: &DVector<f64>, dk: f64| -> Option<Direction> {
            let rs = scaling.lambda_solve(ds);
            let mut rhs = DVector::zeros(big);
            rhs.rows_mut(ox, n).copy_from(&(-eta * &r1));
            rhs.rows_mut(oy, p).copy_from(&(-eta * &r2));
            rhs.rows_mut(oz, n).copy_from(&(-eta * &scaled_r3 - &rs));
            rhs[ot] = -eta * r4 - dk / tau;
            let mut sol = lu.solve(&rhs)?;
            // one round of iterative refinement
            let resid = &rhs - &kkt * &sol;
            if let Some(corr) = lu.solve(&resid) {
                sol += corr;
            }
            if sol.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let dx = sol.rows(ox, n).clone_owned();
            let dy = sol.rows(oy, p).clone_owned();
            let dzt = sol.rows(oz, n).clone_owned();
            let dtau = sol[ot];
            let dst = &rs - &dzt;
            let dkappa = (dk - kappa * dtau) / tau;
            Some(Direction { dx, dy, dzt, dst, dtau, dkappa })
        };

        let step_to_boundary = |d: &Direction| -> f64 {
            let mut alpha = scaling.max_step(&d.dst).min(scaling.max_step(&d.dzt));
            if d.dtau < 0.0 {
                alpha = alpha.min(-tau / d.dtau);
            }
            if d.dkappa < 0.0 {
                alpha = alpha.min(-kappa / d.dkappa);
            }
            alpha
        };

        // predictor
        let ds_aff = -scaling.jordan(&lambda, &lambda);
        let Some(aff) = solve_dir(1.0, &ds_aff, -tau * kappa) else {
            return result(Outcome::Stalled, &x / tau, y, gap, iter, "singular Newton system");
        };
        let alpha_aff = step_to_boundary(&aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        // corrector
        let ds = -scaling.jordan(&lambda, &lambda) - scaling.jordan(&aff.dst, &aff.dzt) + &e * (sigma * mu);
        let dk = -tau * kappa - aff.dtau * aff.dkappa + sigma * mu;
        let Some(dir) = solve_dir(1.0 - sigma, &ds, dk) else {
            return result(Outcome::Stalled, &x / tau, y, gap, iter, "singular Newton system");
        };
        let alpha = (STEP_FRACTION * step_to_boundary(&dir)).min(1.0);
        if !(alpha > 1e-12) {
            return result(Outcome::Stalled, &x / tau, y, gap, iter, "step length collapsed");
        }

        x += alpha * &dir.dx;
        y += alpha * &dir.dy;
        z += alpha * scaling.winv(&dir.dzt);
        s += alpha * scaling.wt(&dir.dst);
        tau += alpha * dir.dtau;
        kappa += alpha * dir.dkappa;
    }
    unreachable!("loop returns at max_iter")
}

struct Direction {
    dx: DVector<f64>,
    dy: DVector<f64>,
    dzt: DVector<f64>,
    dst: DVector<f64>,
    dtau: f64,
    dkappa: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smat_svec_round_trip() {
        let v = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let m = smat(&v, 3);
        let mut back = vec![0.0; 6];
        svec_into(&m, &mut back);
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-14);
        }
        // inner products agree with the trace inner product
        let w = vec![0.5, -1.0, 2.0, 0.25, 3.0, -2.0];
        let mw = smat(&w, 3);
        let trace = (&m * &mw).trace();
        let dot: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((trace - dot).abs() < 1e-12);
    }

    #[test]
    fn nt_scaling_maps_both_points_to_lambda() {
        let cone = ConeSpec { blocks: vec![2], orthant: 1 };
        let s = DVector::from_vec(vec![2.0, 0.3, 1.0, 4.0]);
        let z = DVector::from_vec(vec![1.0, -0.2, 3.0, 0.5]);
        let sc = Scaling::new(&cone, &s, &z).unwrap();
        let lam = sc.lambda();
        let a = sc.winv_t(&s);
        // W z = lambda; W = (W^{-1})^{-1}, check W^{-1} lambda = z instead
        let b = sc.winv(&lam);
        for i in 0..4 {
            assert!((a[i] - lam[i]).abs() < 1e-12, "{a} vs {lam}");
            assert!((b[i] - z[i]).abs() < 1e-12);
        }
        // W' W^{-T} is the identity
        let back = sc.wt(&a);
        for i in 0..4 {
            assert!((back[i] - s[i]).abs() < 1e-12);
        }
    }
}
