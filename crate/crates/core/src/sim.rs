//! Closed-loop simulation: open loop, state feedback, and observer-based
//! output feedback, with optional measurement noise and distance traces.
//!
//! Output is recorded on the grid `0, dt, 2 dt, ...`. Measurement noise is
//! drawn once per grid interval from a seeded generator and held over the
//! interval, so the integrator sees a piecewise-constant measurement and
//! both integrators consume exactly the same noise sequence.

use std::io::{Read, Write};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geom::distance;
use crate::realize::{iss_bound, ControlLaw, ObserverLaw, RealizeError};
use crate::synth::SystemModel;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("state became non-finite or exceeded 1e12 at t = {t}")]
    Diverged { t: f64 },
    #[error("adaptive step size underflow at t = {t}")]
    StepFailure { t: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("window [{from}, {to}] is outside the trace or holds fewer than two usable samples")]
    Window { from: f64, to: f64 },
    #[error(transparent)]
    Realize(#[from] RealizeError),
    #[error("trace file: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integrator {
    Rk4,
    Rk45 { rtol: f64, atol: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub integrator: Integrator,
    pub noise_std: f64,
    pub seed: u64,
    pub x0: DVector<f64>,
    pub xhat0: DVector<f64>,
}

impl SimConfig {
    pub fn new(x0: DVector<f64>, xhat0: DVector<f64>, horizon: f64) -> Self {
        SimConfig { dt: 1e-3, horizon, integrator: Integrator::Rk4, noise_std: 0.0, seed: 0, x0, xhat0 }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.dt > 0.0) || !(self.horizon > 0.0) {
            return Err(SimError::Config(format!("dt and horizon must be positive, got {} and {}", self.dt, self.horizon)));
        }
        if !(self.noise_std >= 0.0) {
            return Err(SimError::Config(format!("noise standard deviation must be nonnegative, got {}", self.noise_std)));
        }
        if let Integrator::Rk45 { rtol, atol } = self.integrator {
            if !(rtol > 0.0 && atol > 0.0) {
                return Err(SimError::Config("adaptive tolerances must be positive".into()));
            }
        }
        if self.x0.len() != n || self.xhat0.len() != n {
            return Err(SimError::Config(format!("initial states must have {n} components")));
        }
        Ok(())
    }

    /// Number of recorded samples, `floor(T / dt) + 1`.
    pub fn samples(&self) -> usize {
        (self.horizon / self.dt * (1.0 + 1e-12)).floor() as usize + 1
    }
}

/// Integrates `z' = rhs(k, t, z)` over the output grid, where `k` is the
/// index of the grid interval containing `t`.
fn integrate_held(
    mut rhs: impl FnMut(usize, f64, &DVector<f64>) -> DVector<f64>,
    z0: &DVector<f64>,
    dt: f64,
    samples: usize,
    integrator: Integrator,
) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(samples);
    let mut z = z0.clone();
    out.push(z.clone());
    let mut h_adapt = dt;
    for k in 0..samples.saturating_sub(1) {
        let t0 = k as f64 * dt;
        let mut f = |t: f64, z: &DVector<f64>| rhs(k, t, z);
        z = match integrator {
            Integrator::Rk4 => rk4_step(&mut f, t0, &z, dt),
            Integrator::Rk45 { rtol, atol } => dopri_interval(&mut f, t0, &z, dt, rtol, atol, &mut h_adapt)?,
        };
        if z.iter().any(|v| !v.is_finite()) || z.amax() > 1e12 {
            return Err(SimError::Diverged { t: (k + 1) as f64 * dt });
        }
        out.push(z.clone());
    }
    Ok(out)
}

fn rk4_step(f: &mut impl FnMut(f64, &DVector<f64>) -> DVector<f64>, t: f64, z: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = f(t, z);
    let k2 = f(t + 0.5 * h, &(z + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(z + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(z + &k3 * h));
    z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

// Dormand-Prince 5(4) tableau
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// Adaptive steps from `t0` to exactly `t0 + span`.
fn dopri_interval(
    f: &mut impl FnMut(f64, &DVector<f64>) -> DVector<f64>,
    t0: f64,
    z0: &DVector<f64>,
    span: f64,
    rtol: f64,
    atol: f64,
    h: &mut f64,
) -> Result<DVector<f64>> {
    let t_end = t0 + span;
    let mut t = t0;
    let mut z = z0.clone();
    while t < t_end {
        let last = *h >= t_end - t;
        let step = if last { t_end - t } else { *h };
        let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
        for s in 0..7 {
            let mut zs = z.clone();
            for (j, kj) in k.iter().enumerate() {
                if A[s][j] != 0.0 {
                    zs += kj * (step * A[s][j]);
                }
            }
            k.push(f(t + C[s] * step, &zs));
        }
        let mut z5 = z.clone();
        let mut err = DVector::zeros(z.len());
        for s in 0..7 {
            z5 += &k[s] * (step * B5[s]);
            err += &k[s] * (step * (B5[s] - B4[s]));
        }
        let scaled = err
            .iter()
            .zip(z.iter().zip(z5.iter()))
            .map(|(e, (a, b))| e / (atol + rtol * a.abs().max(b.abs())))
            .map(|r| r * r)
            .sum::<f64>();
        let enorm = (scaled / z.len() as f64).sqrt();
        if enorm <= 1.0 || !enorm.is_finite() && step < 1e-14 {
            t = if last { t_end } else { t + step };
            z = z5;
            let grow = if enorm == 0.0 { 5.0 } else { (0.9 * enorm.powf(-0.2)).clamp(0.2, 5.0) };
            if !last {
                *h = step * grow;
            } else {
                *h = h.max(step * grow);
            }
        } else {
            let shrink = if enorm.is_finite() { (0.9 * enorm.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            *h = step * shrink;
        }
        if *h < 1e-14 * span.max(1.0) {
            return Err(SimError::StepFailure { t });
        }
    }
    Ok(z)
}

/// Integrates `x' = rhs(t, x)` on the grid of `cfg`, starting from `x0`.
pub fn integrate(
    mut rhs: impl FnMut(f64, &DVector<f64>) -> DVector<f64>,
    x0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    if !(cfg.dt > 0.0) || !(cfg.horizon > 0.0) {
        return Err(SimError::Config("dt and horizon must be positive".into()));
    }
    let n = cfg.samples();
    let states = integrate_held(|_, t, z| rhs(t, z), x0, cfg.dt, n, cfg.integrator)?;
    Ok(((0..n).map(|k| k as f64 * cfg.dt).collect(), states))
}

/// Per-sample record of a simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub names: Vec<String>,
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    /// equals `x` when no estimator runs
    pub x_hat: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub y_clean: Vec<DVector<f64>>,
    /// controller-metric distance to the target; Euclidean norm without a controller
    pub d: Vec<f64>,
    /// theoretical upper bound on `d`; NaN without a controller
    pub d_bound: Vec<f64>,
    /// observer-metric distance from estimate to state; zero without an estimator
    pub est_err: Vec<f64>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend(self.names.iter().cloned());
        h.extend(self.names.iter().map(|s| format!("{s}_hat")));
        h.extend(indexed("u", self.u.first().map_or(1, DVector::len)));
        let p = self.y.first().map_or(1, DVector::len);
        h.extend(indexed("y", p));
        h.extend(indexed("y_clean", p));
        h.extend(["d", "d_bound", "est_err"].map(String::from));
        h
    }

    /// CSV with full-precision numbers, one row per sample.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| SimError::Csv(e.to_string());
        w.write_record(self.header()).map_err(csv_err)?;
        for k in 0..self.len() {
            let mut row = vec![format!("{:?}", self.t[k])];
            for v in [&self.x[k], &self.x_hat[k], &self.u[k], &self.y[k], &self.y_clean[k]] {
                row.extend(v.iter().map(|x| format!("{x:?}")));
            }
            row.extend([self.d[k], self.d_bound[k], self.est_err[k]].iter().map(|x| format!("{x:?}")));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| SimError::Csv(e.to_string()))?;
        Ok(())
    }

    /// Reads a trace written by [`SimTrace::write_csv`] for an `n`-state,
    /// `m`-input, `p`-output model; dimensions are inferred from the header.
    pub fn read_csv(input: impl Read) -> Result<SimTrace> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers().map_err(|e| SimError::Csv(e.to_string()))?.iter().map(String::from).collect();
        let (names, m, p) = parse_header(&header).ok_or_else(|| SimError::Csv(format!("unrecognized header {header:?}")))?;
        let n = names.len();
        let mut trace = SimTrace::empty(names);
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| SimError::Csv(e.to_string()))?;
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| SimError::Csv(format!("row {}: {e}", line + 2)))?;
            if vals.len() != header.len() {
                return Err(SimError::Csv(format!("row {} has {} fields, expected {}", line + 2, vals.len(), header.len())));
            }
            let mut at = 0;
            let mut take = |len: usize| {
                let v = DVector::from_column_slice(&vals[at..at + len]);
                at += len;
                v
            };
            trace.t.push(take(1)[0]);
            trace.x.push(take(n));
            trace.x_hat.push(take(n));
            trace.u.push(take(m));
            trace.y.push(take(p));
            trace.y_clean.push(take(p));
            let tail = take(3);
            trace.d.push(tail[0]);
            trace.d_bound.push(tail[1]);
            trace.est_err.push(tail[2]);
        }
        Ok(trace)
    }

    fn empty(names: Vec<String>) -> SimTrace {
        SimTrace {
            names,
            t: vec![],
            x: vec![],
            x_hat: vec![],
            u: vec![],
            y: vec![],
            y_clean: vec![],
            d: vec![],
            d_bound: vec![],
            est_err: vec![],
        }
    }

    /// `(max, mean)` of `|x(t)|` over samples with `t` in `[from, to]`.
    pub fn state_norm_stats(&self, from: f64, to: f64) -> Result<(f64, f64)> {
        let norms: Vec<f64> = self.t.iter().zip(&self.x).filter(|(t, _)| **t >= from && **t <= to).map(|(_, x)| x.norm()).collect();
        if norms.is_empty() {
            return Err(SimError::Window { from, to });
        }
        let max = norms.iter().copied().fold(0.0, f64::max);
        Ok((max, norms.iter().sum::<f64>() / norms.len() as f64))
    }
}

fn indexed(base: &str, k: usize) -> Vec<String> {
    if k == 1 {
        vec![base.to_string()]
    } else {
        (1..=k).map(|i| format!("{base}{i}")).collect()
    }
}

fn parse_header(h: &[String]) -> Option<(Vec<String>, usize, usize)> {
    if h.len() < 8 || h[0] != "t" || h[h.len() - 3..] != ["d", "d_bound", "est_err"] {
        return None;
    }
    let names: Vec<String> = h[1..].iter().take_while(|s| !s.ends_with("_hat")).cloned().collect();
    let n = names.len();
    let rest = &h[1 + 2 * n..h.len() - 3];
    let m = rest.iter().filter(|s| s.starts_with('u')).count();
    let p = rest.iter().filter(|s| s.starts_with("y_clean")).count();
    let expect: Vec<String> = names
        .iter()
        .cloned()
        .chain(names.iter().map(|s| format!("{s}_hat")))
        .chain(indexed("u", m))
        .chain(indexed("y", p))
        .chain(indexed("y_clean", p))
        .collect();
    (n > 0 && m > 0 && p > 0 && h[1..h.len() - 3] == expect[..]).then_some((names, m, p))
}

/// Seeded per-interval measurement noise.
struct NoiseSource {
    samples: Vec<DVector<f64>>,
}

impl NoiseSource {
    fn new(std: f64, seed: u64, p: usize, count: usize) -> Result<Self> {
        if std == 0.0 {
            return Ok(NoiseSource { samples: vec![DVector::zeros(p); count] });
        }
        let normal = Normal::new(0.0, std).map_err(|e| SimError::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..count).map(|_| DVector::from_fn(p, |_, _| normal.sample(&mut rng))).collect();
        Ok(NoiseSource { samples })
    }
}

fn norm_distance(x: &DVector<f64>) -> f64 {
    x.norm()
}

pub fn run_open_loop(model: &SystemModel, cfg: &SimConfig) -> Result<SimTrace> {
    cfg.validate(model.n())?;
    let n_samples = cfg.samples();
    let u0 = DVector::zeros(model.m());
    let states = integrate_held(|_, _, x| model.rhs(x.as_slice(), &u0), &cfg.x0, cfg.dt, n_samples, cfg.integrator)?;
    let noise = NoiseSource::new(cfg.noise_std, cfg.seed, model.p(), n_samples)?;
    let mut trace = SimTrace::empty(model.names().to_vec());
    for (k, x) in states.into_iter().enumerate() {
        let y_clean = model.output(&x);
        trace.t.push(k as f64 * cfg.dt);
        trace.y.push(&y_clean + &noise.samples[k]);
        trace.y_clean.push(y_clean);
        trace.d.push(norm_distance(&x));
        trace.d_bound.push(f64::NAN);
        trace.est_err.push(0.0);
        trace.u.push(u0.clone());
        trace.x_hat.push(x.clone());
        trace.x.push(x);
    }
    Ok(trace)
}

pub fn run_state_feedback(model: &SystemModel, claw: &ControlLaw, cfg: &SimConfig) -> Result<SimTrace> {
    cfg.validate(model.n())?;
    let n_samples = cfg.samples();
    let states = integrate_held(
        |_, t, x| model.rhs(x.as_slice(), &claw.control(x, t)),
        &cfg.x0,
        cfg.dt,
        n_samples,
        cfg.integrator,
    )?;
    let noise = NoiseSource::new(cfg.noise_std, cfg.seed, model.p(), n_samples)?;
    let m = claw.m();
    let dist = |x: &DVector<f64>| distance(x, claw.x_star(), m).expect("controller metric is positive definite");
    let d0 = dist(&cfg.x0);
    let bound = iss_bound(claw.metric(), d0, |_| 0.0, (n_samples - 1) as f64 * cfg.dt, cfg.dt);
    let mut trace = SimTrace::empty(model.names().to_vec());
    for (k, x) in states.into_iter().enumerate() {
        let t = k as f64 * cfg.dt;
        let y_clean = model.output(&x);
        trace.t.push(t);
        trace.u.push(claw.control(&x, t));
        trace.y.push(&y_clean + &noise.samples[k]);
        trace.y_clean.push(y_clean);
        trace.d.push(dist(&x));
        trace.d_bound.push(bound.d[k]);
        trace.est_err.push(0.0);
        trace.x_hat.push(x.clone());
        trace.x.push(x);
    }
    Ok(trace)
}

/// Exponential envelope `beta exp(-alpha t)` lying above every sample with
/// `w > 1e-12 max(w)`. `alpha` comes from a least-squares fit of `log w`;
/// `beta` is then the smallest value that makes the envelope dominate.
pub fn fit_envelope(t: &[f64], w: &[f64]) -> (f64, f64) {
    let wmax = w.iter().copied().fold(0.0, f64::max);
    if !(wmax > 0.0) {
        return (0.0, 0.0);
    }
    let pts: Vec<(f64, f64)> = t.iter().zip(w).filter(|(_, &v)| v > 1e-12 * wmax).map(|(&t, &v)| (t, v)).collect();
    let slope = if pts.len() >= 2 {
        let logs: Vec<(f64, f64)> = pts.iter().map(|&(t, v)| (t, v.ln())).collect();
        least_squares_slope(&logs)
    } else {
        0.0
    };
    let alpha = (-slope).max(0.0);
    let beta = pts.iter().map(|&(t, v)| v * (alpha * t).exp()).fold(0.0, f64::max);
    (beta, alpha)
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

pub fn run_output_feedback(model: &SystemModel, claw: &ControlLaw, olaw: &ObserverLaw, cfg: &SimConfig) -> Result<SimTrace> {
    cfg.validate(model.n())?;
    let n = model.n();
    let n_samples = cfg.samples();
    let noise = NoiseSource::new(cfg.noise_std, cfg.seed, model.p(), n_samples)?;
    let mut z0 = DVector::zeros(2 * n);
    z0.rows_mut(0, n).copy_from(&cfg.x0);
    z0.rows_mut(n, n).copy_from(&cfg.xhat0);
    let mut failure: Option<RealizeError> = None;
    let states = integrate_held(
        |k, t, z| {
            let x = z.rows(0, n).clone_owned();
            let xh = z.rows(n, n).clone_owned();
            let u = claw.control(&xh, t);
            let y = model.output(&x) + &noise.samples[k];
            let mut dz = DVector::zeros(2 * n);
            dz.rows_mut(0, n).copy_from(&model.rhs(x.as_slice(), &u));
            match olaw.observer_rhs(&xh, &y, &u, t) {
                Ok(v) => dz.rows_mut(n, n).copy_from(&v),
                Err(e) => {
                    failure.get_or_insert(e);
                    dz.fill(f64::NAN);
                }
            }
            dz
        },
        &z0,
        cfg.dt,
        n_samples,
        cfg.integrator,
    );
    if let Some(e) = failure {
        return Err(e.into());
    }
    let states = states?;

    let mc = claw.m();
    let wo = &olaw.metric().w;
    let mut trace = SimTrace::empty(model.names().to_vec());
    let mut w_norm = Vec::with_capacity(n_samples);
    for (k, z) in states.into_iter().enumerate() {
        let t = k as f64 * cfg.dt;
        let x = z.rows(0, n).clone_owned();
        let xh = z.rows(n, n).clone_owned();
        let u = claw.control(&xh, t);
        // disturbance seen by the state-feedback loop
        w_norm.push((model.b() * (&u - claw.control(&x, t))).norm());
        let y_clean = model.output(&x);
        trace.t.push(t);
        trace.y.push(&y_clean + &noise.samples[k]);
        trace.y_clean.push(y_clean);
        trace.d.push(distance(&x, claw.x_star(), mc).expect("controller metric is positive definite"));
        trace.est_err.push(distance(&xh, &x, wo).expect("observer metric is positive definite"));
        trace.u.push(u);
        trace.x.push(x);
        trace.x_hat.push(xh);
    }
    let (beta, alpha) = fit_envelope(&trace.t, &w_norm);
    let bound = iss_bound(claw.metric(), trace.d[0], |t| beta * (-alpha * t).exp(), (n_samples - 1) as f64 * cfg.dt, cfg.dt);
    trace.d_bound = bound.d;
    Ok(trace)
}

/// `max_t |x(t)| / |x(0)|`
pub fn overshoot(trace: &SimTrace) -> Result<f64> {
    let first = trace.x.first().ok_or(SimError::Window { from: 0.0, to: 0.0 })?.norm();
    let peak = trace.x.iter().map(DVector::norm).fold(0.0, f64::max);
    Ok(if first == 0.0 { if peak == 0.0 { 1.0 } else { f64::INFINITY } } else { peak / first })
}

/// Least-squares slope of `log d(t)` over samples in `[from, to]` with `d > 0`.
pub fn decay_rate(trace: &SimTrace, from: f64, to: f64) -> Result<f64> {
    let end = trace.t.last().copied().unwrap_or(f64::NEG_INFINITY);
    let tol = 1e-9 * end.abs().max(1.0);
    if !(from <= to) || from < -tol || to > end + tol {
        return Err(SimError::Window { from, to });
    }
    let pts: Vec<(f64, f64)> = trace
        .t
        .iter()
        .zip(&trace.d)
        .filter(|(t, d)| **t >= from - tol && **t <= to + tol && **d > 0.0 && d.is_finite())
        .map(|(&t, &d)| (t, d.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(SimError::Window { from, to });
    }
    Ok(least_squares_slope(&pts))
}

/// State reached from `(1, -1)` after `settle` time units of open-loop flow.
pub fn limit_cycle_state(model: &SystemModel, settle: f64, dt: f64) -> Result<DVector<f64>> {
    let start = DVector::from_fn(model.n(), |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
    let mut cfg = SimConfig::new(start.clone(), start, settle);
    cfg.dt = dt;
    let trace = run_open_loop(model, &cfg)?;
    Ok(trace.x.last().expect("nonempty trace").clone())
}
