//! Geometry of constant Riemannian metrics: straight-line geodesics,
//! distances, and the metric projection onto `{x : C x = y}`.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("metric is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("measurement matrix is rank deficient; the projection system is singular")]
    RankDeficient,
}

pub type Result<T> = std::result::Result<T, GeomError>;

fn check_pd(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() || (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(GeomError::NotPositiveDefinite);
    }
    Cholesky::new(m.clone()).map(|_| ()).ok_or(GeomError::NotPositiveDefinite)
}

/// Straight segment `start + s (end - start)`, `s` in `[0, 1]`, which is
/// the geodesic of any constant metric.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicSegment {
    pub start: DVector<f64>,
    pub end: DVector<f64>,
    pub metric: DMatrix<f64>,
}

impl GeodesicSegment {
    pub fn new(start: DVector<f64>, end: DVector<f64>, metric: DMatrix<f64>) -> Result<Self> {
        if start.len() != end.len() || metric.nrows() != start.len() {
            return Err(GeomError::Dimension(format!(
                "endpoints of length {} and {} with a {}x{} metric",
                start.len(),
                end.len(),
                metric.nrows(),
                metric.ncols()
            )));
        }
        check_pd(&metric)?;
        Ok(GeodesicSegment { start, end, metric })
    }

    pub fn point(&self, s: f64) -> DVector<f64> {
        &self.start + (&self.end - &self.start) * s
    }

    /// Constant velocity `end - start`.
    pub fn tangent(&self) -> DVector<f64> {
        &self.end - &self.start
    }

    pub fn length_squared(&self) -> f64 {
        let d = self.tangent();
        d.dot(&(&self.metric * &d)).max(0.0)
    }

    pub fn length(&self) -> f64 {
        self.length_squared().sqrt()
    }
}

/// `sqrt((x2 - x1)' M (x2 - x1))`
pub fn distance(x1: &DVector<f64>, x2: &DVector<f64>, m: &DMatrix<f64>) -> Result<f64> {
    Ok(GeodesicSegment::new(x1.clone(), x2.clone(), m.clone())?.length())
}

/// Minimizer of `(x - x_hat)' W (x - x_hat)` subject to `C x = y`, from
/// the system `[[W, C'], [C, 0]] [x; mu] = [W x_hat; y]`.
pub fn project_to_measurement(x_hat: &DVector<f64>, c: &DMatrix<f64>, y: &DVector<f64>, w: &DMatrix<f64>) -> Result<DVector<f64>> {
    Projector::new(c, w)?.project(x_hat, y)
}

/// Factorized projection system for repeated use with the same `C` and `W`.
#[derive(Debug, Clone)]
pub struct Projector {
    n: usize,
    p: usize,
    w: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Projector {
    pub fn new(c: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<Self> {
        let n = w.nrows();
        let p = c.nrows();
        if c.ncols() != n {
            return Err(GeomError::Dimension(format!("C has {} columns for a metric of size {n}", c.ncols())));
        }
        check_pd(w)?;
        if p > n {
            return Err(GeomError::RankDeficient);
        }
        let mut k = DMatrix::zeros(n + p, n + p);
        k.view_mut((0, 0), (n, n)).copy_from(w);
        k.view_mut((0, n), (n, p)).copy_from(&c.transpose());
        k.view_mut((n, 0), (p, n)).copy_from(c);
        // C full row rank  <=>  C W^-1 C' nonsingular
        let winv = w.clone().try_inverse().ok_or(GeomError::NotPositiveDefinite)?;
        let schur = c * winv * c.transpose();
        if p > 0 {
            let sv = schur.clone().singular_values();
            if sv.min() <= 1e-12 * sv.max().max(1e-300) {
                return Err(GeomError::RankDeficient);
            }
        }
        Ok(Projector { n, p, w: w.clone(), lu: k.lu() })
    }

    pub fn project(&self, x_hat: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        if x_hat.len() != self.n || y.len() != self.p {
            return Err(GeomError::Dimension(format!(
                "estimate of length {} and measurement of length {}",
                x_hat.len(),
                y.len()
            )));
        }
        let mut rhs = DVector::zeros(self.n + self.p);
        rhs.rows_mut(0, self.n).copy_from(&(&self.w * x_hat));
        rhs.rows_mut(self.n, self.p).copy_from(y);
        let sol = self.lu.solve(&rhs).ok_or(GeomError::RankDeficient)?;
        Ok(sol.rows(0, self.n).clone_owned())
    }
}
