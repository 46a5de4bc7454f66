use ccm_core::realize::{ControlLaw, ObserverLaw};
use ccm_core::sdp::SolveOptions;
use ccm_core::sim::{
    decay_rate, integrate, limit_cycle_state, overshoot, run_open_loop, run_output_feedback, run_state_feedback, Integrator,
    SimConfig, SimTrace,
};
use ccm_core::synth::{synthesize, Metric, Role, SynthOutcome, SynthParams, SystemModel};
use nalgebra::{dvector, DMatrix, DVector};

fn metric(role: Role, lambda: f64, a1: f64, a2: f64) -> Metric {
    let s = synthesize(&SystemModel::moore_greitzer(), role, &SynthParams::new(lambda, a1, a2), &SolveOptions::default()).unwrap();
    match s.outcome {
        SynthOutcome::Feasible(m) => m,
        other => panic!("{other:?}"),
    }
}

fn laws() -> (SystemModel, ControlLaw, ObserverLaw) {
    let mg = SystemModel::moore_greitzer();
    let c = ControlLaw::to_origin(metric(Role::Controller, 0.1, 0.1, 1.3), &mg).unwrap();
    let o = ObserverLaw::new(metric(Role::Observer, 0.1, 0.1, 1.3), &mg).unwrap();
    (mg, c, o)
}

fn mg_field(x: &DVector<f64>) -> DVector<f64> {
    // hand-written vector field, independent of the polynomial machinery
    let (phi, psi) = (x[0], x[1]);
    dvector![-psi - 1.5 * phi * phi - 0.5 * phi * phi * phi, phi]
}

#[test]
fn rk4_and_adaptive_agree_on_open_loop() {
    let mut cfg = SimConfig::new(dvector![1.0, -1.0], dvector![1.0, -1.0], 50.0);
    cfg.dt = 0.01;
    let (_, a) = integrate(|_, x| mg_field(x), &cfg.x0, &cfg).unwrap();
    cfg.integrator = Integrator::Rk45 { rtol: 1e-9, atol: 1e-9 };
    let (_, b) = integrate(|_, x| mg_field(x), &cfg.x0, &cfg).unwrap();
    let worst = a.iter().zip(&b).map(|(p, q)| (p - q).amax()).fold(0.0, f64::max);
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn library_open_loop_matches_hand_written_field() {
    let mg = SystemModel::moore_greitzer();
    let mut cfg = SimConfig::new(dvector![0.5, 0.2], dvector![0.5, 0.2], 5.0);
    cfg.dt = 0.01;
    let trace = run_open_loop(&mg, &cfg).unwrap();
    let (_, xs) = integrate(|_, x| mg_field(x), &cfg.x0, &cfg).unwrap();
    for (p, q) in trace.x.iter().zip(&xs) {
        assert!((p - q).amax() < 1e-12);
    }
}

#[test]
fn origin_is_an_equilibrium_for_every_mode() {
    let (mg, c, o) = laws();
    let cfg = SimConfig::new(dvector![0.0, 0.0], dvector![0.0, 0.0], 2.0);
    for trace in [run_open_loop(&mg, &cfg).unwrap(), run_state_feedback(&mg, &c, &cfg).unwrap(), run_output_feedback(&mg, &c, &o, &cfg).unwrap()] {
        assert!(trace.x.iter().chain(&trace.x_hat).all(|x| x.amax() == 0.0));
    }
}

#[test]
fn open_loop_oscillates_without_diverging() {
    let mg = SystemModel::moore_greitzer();
    let mut cfg = SimConfig::new(dvector![1.0, -1.0], dvector![1.0, -1.0], 50.0);
    cfg.dt = 0.005;
    let trace = run_open_loop(&mg, &cfg).unwrap();
    assert!(trace.x.iter().all(|x| x.amax() <= 10.0));
    let tail: Vec<f64> = trace.t.iter().zip(&trace.x).filter(|(t, _)| **t >= 30.0).map(|(_, x)| x[0]).collect();
    let amp = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max) - tail.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(amp >= 0.1, "{amp}");
}

#[test]
fn small_signal_decay_matches_linearization() {
    let (mg, c, _) = laws();
    // closed-loop Jacobian at the origin by central differences
    let h = 1e-6;
    let mut j = DMatrix::zeros(2, 2);
    for k in 0..2 {
        let mut e = DVector::zeros(2);
        e[k] = h;
        let fp = mg.rhs((&e).as_slice(), &c.control(&e, 0.0));
        let fm = mg.rhs((-&e).as_slice(), &c.control(&(-&e), 0.0));
        j.set_column(k, &((fp - fm) / (2.0 * h)));
    }
    let abscissa = j.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let mut cfg = SimConfig::new(dvector![1e-6, -1e-6], dvector![1e-6, -1e-6], 40.0);
    cfg.dt = 0.01;
    let trace = run_state_feedback(&mg, &c, &cfg).unwrap();
    let slope = decay_rate(&trace, 20.0, 40.0).unwrap();
    assert!((slope - abscissa).abs() < 0.05 * abscissa.abs() + 0.01, "{slope} vs {abscissa}");
}

#[test]
fn state_feedback_contracts_at_the_certified_rate() {
    let (mg, c, _) = laws();
    let x0 = limit_cycle_state(&mg, 30.0, 1e-3).unwrap();
    let mut cfg = SimConfig::new(x0.clone(), x0, 30.0);
    cfg.dt = 0.005;
    let trace = run_state_feedback(&mg, &c, &cfg).unwrap();
    let d0 = trace.d[0];
    for (t, d) in trace.t.iter().zip(&trace.d) {
        assert!(*d <= d0 * (-0.1 * t).exp() * (1.0 + 1e-6) + 1e-15, "t={t}: {d}");
    }
    for (d, b) in trace.d.iter().zip(&trace.d_bound) {
        assert!(d <= &(b * (1.0 + 1e-6) + 1e-15));
    }
}

#[test]
fn output_feedback_with_exact_estimate_equals_state_feedback() {
    let (mg, c, o) = laws();
    let mut cfg = SimConfig::new(dvector![0.8, -0.4], dvector![0.8, -0.4], 10.0);
    cfg.dt = 0.01;
    let sf = run_state_feedback(&mg, &c, &cfg).unwrap();
    let of = run_output_feedback(&mg, &c, &o, &cfg).unwrap();
    for (a, b) in sf.x.iter().zip(&of.x) {
        assert!((a - b).amax() <= 1e-12);
    }
    assert!(of.est_err.iter().all(|e| *e <= 1e-12));
}

#[test]
fn noisy_runs_are_reproducible_per_seed() {
    let (mg, c, o) = laws();
    let mut cfg = SimConfig::new(dvector![1.0, -1.0], dvector![0.0, 0.0], 5.0);
    cfg.dt = 0.01;
    cfg.noise_std = 0.3;
    cfg.seed = 7;
    let csv = |cfg: &SimConfig| {
        let mut buf = Vec::new();
        run_output_feedback(&mg, &c, &o, cfg).unwrap().write_csv(&mut buf).unwrap();
        buf
    };
    let first = csv(&cfg);
    assert_eq!(first, csv(&cfg));
    cfg.seed = 8;
    assert_ne!(first, csv(&cfg));
}

#[test]
fn rk4_converges_at_fourth_order() {
    let (mg, c, o) = laws();
    let run = |dt: f64| {
        let mut cfg = SimConfig::new(dvector![1.0, -1.0], dvector![0.0, 0.0], 4.0);
        cfg.dt = dt;
        let tr = run_output_feedback(&mg, &c, &o, &cfg).unwrap();
        let mut z = tr.x.last().unwrap().clone_owned().data.as_vec().clone();
        z.extend(tr.x_hat.last().unwrap().iter());
        DVector::from_vec(z)
    };
    let reference = run(0.0025);
    let e1 = (run(0.04) - &reference).norm();
    let e2 = (run(0.02) - &reference).norm();
    let order = (e1 / e2).log2();
    assert!(order >= 3.5, "observed order {order} ({e1}, {e2})");
}

#[test]
fn output_feedback_distance_stays_under_its_bound() {
    let (mg, c, o) = laws();
    let x0 = limit_cycle_state(&mg, 30.0, 1e-3).unwrap();
    let mut cfg = SimConfig::new(x0, dvector![0.0, 0.0], 40.0);
    cfg.dt = 0.005;
    let trace = run_output_feedback(&mg, &c, &o, &cfg).unwrap();
    for k in 0..trace.len() {
        assert!(trace.d[k] <= 1.05 * trace.d_bound[k] + 1e-12, "t={}: {} > {}", trace.t[k], trace.d[k], trace.d_bound[k]);
    }
}

#[test]
fn measurement_is_clean_without_noise_and_noisy_otherwise() {
    let (mg, c, o) = laws();
    let mut cfg = SimConfig::new(dvector![1.0, -1.0], dvector![0.0, 0.0], 2.0);
    cfg.dt = 0.01;
    let tr = run_output_feedback(&mg, &c, &o, &cfg).unwrap();
    assert_eq!(tr.y, tr.y_clean);
    cfg.noise_std = 0.3;
    let tr = run_output_feedback(&mg, &c, &o, &cfg).unwrap();
    let resid: Vec<f64> = tr.y.iter().zip(&tr.y_clean).map(|(a, b)| a[0] - b[0]).collect();
    let var = resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64;
    assert!((var.sqrt() - 0.3).abs() < 0.05, "{}", var.sqrt());
}

#[test]
fn csv_round_trip_is_exact() {
    let (mg, c, o) = laws();
    let mut cfg = SimConfig::new(dvector![1.0, -1.0], dvector![0.1, 0.0], 1.0);
    cfg.dt = 0.05;
    cfg.noise_std = 0.1;
    let tr = run_output_feedback(&mg, &c, &o, &cfg).unwrap();
    let mut buf = Vec::new();
    tr.write_csv(&mut buf).unwrap();
    let head = String::from_utf8(buf.clone()).unwrap();
    assert!(head.starts_with("t,phi,psi,phi_hat,psi_hat,u,y,y_clean,d,d_bound,est_err\n"));
    let back = SimTrace::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, tr);
}

#[test]
fn overshoot_and_decay_fixtures() {
    let mut cfg = SimConfig::new(dvector![2.0], dvector![2.0], 3.0);
    cfg.dt = 0.01;
    let lin = SystemModel::from_text(vec!["x".into()], &["-0.5*x".into()], DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0))
        .unwrap();
    let tr = run_open_loop(&lin, &cfg).unwrap();
    assert!((overshoot(&tr).unwrap() - 1.0).abs() < 1e-15);
    assert!((decay_rate(&tr, 0.0, 3.0).unwrap() + 0.5).abs() < 1e-9);
    assert!(decay_rate(&tr, 1.0, 4.0).is_err());
}
