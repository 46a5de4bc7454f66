use ccm_core::poly::Polynomial;
use ccm_core::sdp::SolveOptions;
use ccm_core::synth::{
    synthesize, verify_pointwise, GridBox, Metric, MetricFile, Role, SynthOutcome, SynthParams, Synthesis, SystemModel,
};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run(model: &SystemModel, role: Role, lambda: f64, a1: f64, a2: f64) -> Synthesis {
    synthesize(model, role, &SynthParams::new(lambda, a1, a2), &SolveOptions::default()).unwrap()
}

fn feasible(s: &Synthesis) -> &Metric {
    match &s.outcome {
        SynthOutcome::Feasible(m) => m,
        other => panic!("expected a metric, got {other:?}"),
    }
}

fn scalar_model(f: &str, b: f64, c: f64) -> SystemModel {
    SystemModel::from_text(vec!["x".into()], &[f.to_string()], DMatrix::from_element(1, 1, b), DMatrix::from_element(1, 1, c))
        .unwrap()
}

#[test]
fn reference_parameters_are_feasible_and_verified() {
    let mg = SystemModel::moore_greitzer();
    for (lambda, a1, a2) in [(0.1, 0.1, 1.3), (5.0, 0.1, 30.0), (10.0, 0.1, 100.0)] {
        for role in [Role::Controller, Role::Observer] {
            let s = run(&mg, role, lambda, a1, a2);
            let metric = feasible(&s);
            let (w_min, w_max) = metric.w_eigen_range();
            assert!(w_min >= a1 - 1e-7 && w_max <= a2 + 1e-7, "{role} {lambda}: W spectrum [{w_min}, {w_max}]");
            let v = verify_pointwise(metric, &mg, &GridBox::cube(2, -5.0, 5.0), 101).unwrap();
            assert!(v.passed(1e-6), "{role} {lambda}: {v:?}");
        }
    }
}

#[test]
fn narrow_bounds_at_fast_rate_do_not_produce_a_metric() {
    let mg = SystemModel::moore_greitzer();
    let s = run(&mg, Role::Controller, 5.0, 0.1, 1.3);
    assert!(!matches!(s.outcome, SynthOutcome::Feasible(_)), "{:?}", s.outcome);
}

#[test]
fn unactuated_model_is_infeasible() {
    let mg = SystemModel::moore_greitzer().with_b(DMatrix::zeros(2, 1)).unwrap();
    let s = run(&mg, Role::Controller, 0.1, 0.1, 1.3);
    assert!(matches!(s.outcome, SynthOutcome::Infeasible(_)), "{:?}", s.outcome);

    // Sampling oracle: at x = 0 the Jacobian is skew, so trace(W A' + A W)
    // vanishes and the inequality has trace 2 lambda trace(W) > 0.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let q = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let eig = SymmetricEigen::new(&q + q.transpose());
        let vals = eig.eigenvalues.map(|_| rng.random_range(0.1..1.3));
        let w = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        let metric = Metric {
            role: Role::Controller,
            w,
            rho: Polynomial::constant(2, rng.random_range(0.0..100.0)),
            lambda: 0.1,
            alpha1: 0.1,
            alpha2: 1.3,
            digest: String::new(),
        };
        let top = SymmetricEigen::new(metric.lmi_at(&mg, &[0.0, 0.0])).eigenvalues.max();
        assert!(top > 0.0);
    }
}

#[test]
fn scalar_controller_examples() {
    // x' = x + u, lambda = 1: need 2w - rho + 2w <= 0, e.g. rho >= 4w
    let s = run(&scalar_model("x", 1.0, 1.0), Role::Controller, 1.0, 0.5, 2.0);
    let m = feasible(&s);
    let w = m.w[(0, 0)];
    for x in [-3.0, -1.0, 0.0, 0.5, 2.0] {
        let rho = m.rho.eval(&[x]).unwrap();
        assert!(2.0 * w - rho + 2.0 * w <= 1e-8, "x = {x}: w = {w}, rho = {rho}");
    }
    // x' = x without actuation: 2w <= -2w is impossible
    let s = run(&scalar_model("x", 0.0, 1.0), Role::Controller, 1.0, 0.5, 2.0);
    assert!(matches!(s.outcome, SynthOutcome::Infeasible(_)), "{:?}", s.outcome);
}

#[test]
fn scalar_observer_examples() {
    // x' = -x with no measurement at lambda = 2: -2w <= -4w fails
    let s = run(&scalar_model("-x", 1.0, 0.0), Role::Observer, 2.0, 0.5, 2.0);
    assert!(matches!(s.outcome, SynthOutcome::Infeasible(_)), "{:?}", s.outcome);
    // x' = x, C = 1, lambda = 1: 2w - rho <= -2w
    let s = run(&scalar_model("x", 0.0, 1.0), Role::Observer, 1.0, 0.5, 2.0);
    let m = feasible(&s);
    let w = m.w[(0, 0)];
    for x in [-2.0, 0.0, 1.0] {
        let rho = m.rho.eval(&[x]).unwrap();
        assert!(2.0 * w - rho + 2.0 * w <= 1e-8);
    }
}

#[test]
fn corrupted_metric_is_caught() {
    let mg = SystemModel::moore_greitzer();
    let s = run(&mg, Role::Controller, 0.1, 0.1, 1.3);
    let mut bad = feasible(&s).clone();
    bad.w *= 100.0;
    let v = verify_pointwise(&bad, &mg, &GridBox::cube(2, -5.0, 5.0), 101).unwrap();
    assert!(v.max_violation > 0.0);
    assert!(!v.passed(1e-6));
    let at_worst = SymmetricEigen::new(bad.lmi_at(&mg, &v.worst_point)).eigenvalues.max();
    assert_eq!(at_worst, v.max_violation);
}

#[test]
fn linear_model_violation_matches_analytic_eigenvalue() {
    let model = SystemModel::from_text(
        vec!["a".into(), "b".into()],
        &["-a".to_string(), "-2*b".to_string()],
        DMatrix::zeros(2, 1),
        DMatrix::zeros(1, 2),
    )
    .unwrap();
    let metric = Metric {
        role: Role::Controller,
        w: DMatrix::identity(2, 2),
        rho: Polynomial::zero(2),
        lambda: 0.1,
        alpha1: 1.0,
        alpha2: 1.0,
        digest: String::new(),
    };
    // W A' + A W + 2 lambda W = diag(-2 + 0.2, -4 + 0.2)
    let v = verify_pointwise(&metric, &model, &GridBox::cube(2, -5.0, 5.0), 11).unwrap();
    assert!((v.max_violation - (-1.8)).abs() < 1e-9);
}

#[test]
fn single_point_grid_uses_box_center() {
    let mg = SystemModel::moore_greitzer();
    let s = run(&mg, Role::Observer, 0.1, 0.1, 1.3);
    let m = feasible(&s);
    let v = verify_pointwise(m, &mg, &GridBox::cube(2, -1.0, 3.0), 1).unwrap();
    assert_eq!(v.points, 1);
    assert_eq!(v.worst_point, vec![1.0, 1.0]);
    let expect = SymmetricEigen::new(m.lmi_at(&mg, &[1.0, 1.0])).eigenvalues.max();
    assert_eq!(v.max_violation, expect);
}

#[test]
fn slower_rates_stay_valid() {
    let mg = SystemModel::moore_greitzer();
    for role in [Role::Controller, Role::Observer] {
        let s = run(&mg, role, 5.0, 0.1, 30.0);
        let m = feasible(&s);
        for lambda in [4.0, 1.0, 0.1] {
            let slower = m.with_lambda(lambda);
            let v = verify_pointwise(&slower, &mg, &GridBox::cube(2, -5.0, 5.0), 41).unwrap();
            assert!(v.passed(1e-6), "{role} at {lambda}: {v:?}");
        }
    }
}

#[test]
fn metric_file_round_trip_is_lossless() {
    let mg = SystemModel::moore_greitzer();
    for role in [Role::Controller, Role::Observer] {
        let s = run(&mg, role, 0.1, 0.1, 1.3);
        let m = feasible(&s);
        assert!(m.digest_matches());
        let text = MetricFile::new(m, &mg).to_toml();
        let (back, model) = MetricFile::from_toml(&text).unwrap().build().unwrap();
        assert_eq!(&back, m);
        assert_eq!(model, mg);
        assert!(back.digest_matches());
    }
}

#[test]
fn problem_scale_is_small() {
    let s = run(&SystemModel::moore_greitzer(), Role::Controller, 0.1, 0.1, 1.3);
    assert_eq!(s.stats.compile.matrix_blocks, 4);
    assert!(s.stats.gram_sizes.iter().all(|&(_, full, kept)| kept <= full && full <= 6));
}
