//! Executable feedback laws from constant metrics.
//!
//! With a constant metric the geodesic between two states is the straight
//! segment, so the integrated differential feedback collapses to
//!
//! ```text
//! u = u* + 1/2 (int_0^1 rho(x_hat + s D) ds) B' M D,   D = x* - x_hat
//! ```
//!
//! and the observer correction is the same expression built from the
//! observer metric along the segment from the measurement-consistent point
//! `x_bar` to the estimate. The line integral of the polynomial `rho` is
//! evaluated exactly.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geom::{GeomError, Projector};
use crate::synth::{Metric, Role, SystemModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RealizeError {
    #[error("expected a {expected} metric, got a {found} metric")]
    WrongRole { expected: Role, found: Role },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("target is not an equilibrium: |f(x*) + B u*| = {0:e}")]
    InfeasibleTarget(f64),
    #[error("metric W is not positive definite")]
    NotPositiveDefinite,
    #[error(transparent)]
    Geom(#[from] GeomError),
}

pub type Result<T> = std::result::Result<T, RealizeError>;

fn expect_role(metric: &Metric, role: Role) -> Result<()> {
    if metric.role == role {
        Ok(())
    } else {
        Err(RealizeError::WrongRole { expected: role, found: metric.role })
    }
}

fn check_metric_dims(metric: &Metric, n: usize) -> Result<()> {
    if metric.w.nrows() != n || metric.w.ncols() != n || metric.rho.nvars() != n {
        return Err(RealizeError::Dimension(format!("metric does not match a {n}-state model")));
    }
    Ok(())
}

/// State-feedback law toward a constant equilibrium `(x*, u*)`.
#[derive(Debug, Clone)]
pub struct ControlLaw {
    metric: Metric,
    m: DMatrix<f64>,
    /// `B' M`, precomputed
    btm: DMatrix<f64>,
    x_star: DVector<f64>,
    u_star: DVector<f64>,
}

impl ControlLaw {
    pub fn new(metric: Metric, model: &SystemModel, x_star: DVector<f64>, u_star: DVector<f64>) -> Result<Self> {
        expect_role(&metric, Role::Controller)?;
        check_metric_dims(&metric, model.n())?;
        if x_star.len() != model.n() || u_star.len() != model.m() {
            return Err(RealizeError::Dimension(format!(
                "target ({}, {}) for a model with {} states and {} inputs",
                x_star.len(),
                u_star.len(),
                model.n(),
                model.m()
            )));
        }
        let residual = model.rhs(x_star.as_slice(), &u_star).amax();
        if residual > 1e-9 * (1.0 + x_star.amax() + u_star.amax()) {
            return Err(RealizeError::InfeasibleTarget(residual));
        }
        let m = metric.w.clone().try_inverse().ok_or(RealizeError::NotPositiveDefinite)?;
        let btm = model.b().transpose() * &m;
        Ok(ControlLaw { metric, m, btm, x_star, u_star })
    }

    /// Regulation to the origin.
    pub fn to_origin(metric: Metric, model: &SystemModel) -> Result<Self> {
        ControlLaw::new(metric, model, DVector::zeros(model.n()), DVector::zeros(model.m()))
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    /// `M = W^-1`, the metric distances are measured in.
    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn x_star(&self) -> &DVector<f64> {
        &self.x_star
    }

    pub fn u_star(&self) -> &DVector<f64> {
        &self.u_star
    }

    /// Targets are constant; `_t` is accepted for time-varying extensions.
    pub fn control(&self, x_hat: &DVector<f64>, _t: f64) -> DVector<f64> {
        let delta = &self.x_star - x_hat;
        let avg_rho = self
            .metric
            .rho
            .line_integral_unit(x_hat.as_slice(), delta.as_slice())
            .expect("state dimension checked at construction");
        &self.u_star + &self.btm * &delta * (0.5 * avg_rho)
    }
}

/// Estimator driven by measurements and the applied input.
#[derive(Debug, Clone)]
pub struct ObserverLaw {
    metric: Metric,
    model: SystemModel,
    w_inv_ct: DMatrix<f64>,
    projector: Projector,
}

impl ObserverLaw {
    pub fn new(metric: Metric, model: &SystemModel) -> Result<Self> {
        expect_role(&metric, Role::Observer)?;
        check_metric_dims(&metric, model.n())?;
        let w_inv = metric.w.clone().try_inverse().ok_or(RealizeError::NotPositiveDefinite)?;
        let w_inv_ct = w_inv * model.c().transpose();
        let projector = Projector::new(model.c(), &metric.w)?;
        Ok(ObserverLaw { metric, model: model.clone(), w_inv_ct, projector })
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    /// Point of `{x : C x = y}` closest to `x_hat` in the observer metric.
    pub fn consistent_point(&self, x_hat: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.projector.project(x_hat, y)?)
    }

    /// `1/2 (int_0^1 rho(x_bar + s D) ds) W^-1 C' (y - C x_hat)`, `D = x_hat - x_bar`.
    pub fn correction(&self, x_hat: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        let x_bar = self.consistent_point(x_hat, y)?;
        let delta = x_hat - &x_bar;
        let avg_rho = self
            .metric
            .rho
            .line_integral_unit(x_bar.as_slice(), delta.as_slice())
            .expect("state dimension checked at construction");
        let innovation = y - self.model.c() * x_hat;
        Ok(&self.w_inv_ct * innovation * (0.5 * avg_rho))
    }

    /// Estimator dynamics `f(x_hat) + B u + correction`. The input term
    /// keeps the estimate on the plant's flow when the loop is closed.
    pub fn observer_rhs(&self, x_hat: &DVector<f64>, y: &DVector<f64>, u: &DVector<f64>, _t: f64) -> Result<DVector<f64>> {
        Ok(self.model.rhs(x_hat.as_slice(), u) + self.correction(x_hat, y)?)
    }
}

/// Candidate constants for the disturbance gain in `d' <= -lambda d + kappa |w|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IssConstants {
    /// `1 / sqrt(alpha1)`, the one used for bounds
    pub kappa: f64,
    pub sqrt_alpha1: f64,
    pub sqrt_alpha2: f64,
}

impl IssConstants {
    pub fn from_metric(metric: &Metric) -> Self {
        IssConstants {
            kappa: 1.0 / metric.alpha1.sqrt(),
            sqrt_alpha1: metric.alpha1.sqrt(),
            sqrt_alpha2: metric.alpha2.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundTrace {
    pub t: Vec<f64>,
    pub d: Vec<f64>,
    pub constants: IssConstants,
}

/// Integrates `b' = -lambda b + kappa env(t)`, `b(0) = d0`, on the grid
/// `0, dt, ..., T` with classical RK4.
pub fn iss_bound(metric: &Metric, d0: f64, env: impl Fn(f64) -> f64, horizon: f64, dt: f64) -> BoundTrace {
    let constants = IssConstants::from_metric(metric);
    let (lambda, kappa) = (metric.lambda, constants.kappa);
    let steps = (horizon / dt).round() as usize;
    let rhs = |t: f64, b: f64| -lambda * b + kappa * env(t);
    let mut t_out = Vec::with_capacity(steps + 1);
    let mut d_out = Vec::with_capacity(steps + 1);
    let mut b = d0;
    t_out.push(0.0);
    d_out.push(b);
    for k in 0..steps {
        let t = k as f64 * dt;
        let k1 = rhs(t, b);
        let k2 = rhs(t + 0.5 * dt, b + 0.5 * dt * k1);
        let k3 = rhs(t + 0.5 * dt, b + 0.5 * dt * k2);
        let k4 = rhs(t + dt, b + dt * k3);
        b += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t_out.push((k + 1) as f64 * dt);
        d_out.push(b);
    }
    BoundTrace { t: t_out, d: d_out, constants }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Polynomial;
    use nalgebra::dvector;

    fn metric(role: Role, w: DMatrix<f64>, rho: Polynomial) -> Metric {
        Metric { role, w, rho, lambda: 0.5, alpha1: 0.25, alpha2: 4.0, digest: String::new() }
    }

    #[test]
    fn zero_error_gives_feedforward() {
        let mg = SystemModel::moore_greitzer();
        let law = ControlLaw::to_origin(metric(Role::Controller, DMatrix::identity(2, 2), Polynomial::constant(2, 3.0)), &mg).unwrap();
        assert_eq!(law.control(&dvector![0.0, 0.0], 0.0), dvector![0.0]);
    }

    #[test]
    fn constant_rho_is_linear_feedback() {
        let mg = SystemModel::moore_greitzer();
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let law = ControlLaw::to_origin(metric(Role::Controller, w.clone(), Polynomial::constant(2, 3.0)), &mg).unwrap();
        let x = dvector![0.7, -1.1];
        let expect = mg.b().transpose() * w.try_inverse().unwrap() * (-&x) * 1.5;
        assert!((law.control(&x, 0.0) - expect).amax() < 1e-14);
    }

    #[test]
    fn target_must_be_an_equilibrium() {
        let mg = SystemModel::moore_greitzer();
        let m = metric(Role::Controller, DMatrix::identity(2, 2), Polynomial::constant(2, 1.0));
        let err = ControlLaw::new(m, &mg, dvector![1.0, 0.0], dvector![0.0]).unwrap_err();
        assert!(matches!(err, RealizeError::InfeasibleTarget(_)));
    }

    #[test]
    fn roles_are_checked() {
        let mg = SystemModel::moore_greitzer();
        let m = metric(Role::Observer, DMatrix::identity(2, 2), Polynomial::constant(2, 1.0));
        assert!(matches!(ControlLaw::to_origin(m.clone(), &mg), Err(RealizeError::WrongRole { .. })));
        let mut c = m;
        c.role = Role::Controller;
        assert!(ObserverLaw::new(c, &mg).is_err());
    }

    #[test]
    fn consistent_estimate_gets_no_correction() {
        let mg = SystemModel::moore_greitzer();
        let law = ObserverLaw::new(metric(Role::Observer, DMatrix::identity(2, 2), Polynomial::constant(2, 2.0)), &mg).unwrap();
        let xh = dvector![0.4, -0.3];
        let y = mg.output(&xh);
        let rhs = law.observer_rhs(&xh, &y, &dvector![0.0], 0.0).unwrap();
        assert_eq!(rhs, mg.drift(xh.as_slice()));
    }

    #[test]
    fn constant_observer_metric_is_luenberger() {
        let mg = SystemModel::moore_greitzer();
        let w = DMatrix::from_row_slice(2, 2, &[1.5, -0.4, -0.4, 2.0]);
        let law = ObserverLaw::new(metric(Role::Observer, w.clone(), Polynomial::constant(2, 5.0)), &mg).unwrap();
        let gain = w.try_inverse().unwrap() * mg.c().transpose() * 2.5;
        let xh = dvector![0.2, 0.9];
        let y = dvector![-0.6];
        let expect = mg.drift(xh.as_slice()) + &gain * (&y - mg.output(&xh));
        let got = law.observer_rhs(&xh, &y, &dvector![0.0], 0.0).unwrap();
        assert!((got - expect).amax() < 1e-14);
    }

    #[test]
    fn iss_bound_closed_forms() {
        let m = metric(Role::Controller, DMatrix::identity(2, 2), Polynomial::constant(2, 1.0));
        let b = iss_bound(&m, 2.0, |_| 0.0, 10.0, 1e-3);
        assert_eq!(b.t.len(), 10001);
        for (t, d) in b.t.iter().zip(&b.d) {
            assert!((d - 2.0 * (-0.5 * t).exp()).abs() < 1e-12);
        }
        // kappa = 1/sqrt(0.25) = 2, steady state kappa c / lambda = 2 * 0.3 / 0.5
        let b = iss_bound(&m, 0.0, |_| 0.3, 60.0, 1e-3);
        assert!((b.d.last().unwrap() - 1.2).abs() < 1e-10);
        assert_eq!(b.constants.kappa, 2.0);
        assert_eq!(b.constants.sqrt_alpha1, 0.5);
        assert_eq!(b.constants.sqrt_alpha2, 2.0);
    }
}
