use ccm_core::sdp::{check_solution, dump, load, solve, LinearExpr, SdpProblem, Sign, SolveOptions, SolveStatus, Var};
use ccm_core::sos;
use ccm_core::synth::{controller_program, SynthParams, SystemModel};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random problem with a known strictly feasible point: blocks get
/// `G G' + I`, equalities are random functionals evaluated at that point.
fn constructed_problem(seed: u64, dims: &[usize], eqs: usize, with_objective: bool) -> SdpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = SdpProblem::new();
    let mut interior = Vec::new();
    for (k, &d) in dims.iter().enumerate() {
        p.add_block(format!("X{k}"), d);
        let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        interior.push(&g * g.transpose() + DMatrix::identity(d, d));
    }
    let s = p.add_scalar("s", Sign::NonNeg);
    let s_val = 0.7;
    for _ in 0..eqs {
        let mut e = LinearExpr::new();
        let mut rhs = 0.0;
        for (k, &d) in dims.iter().enumerate() {
            for i in 0..d {
                for j in 0..=i {
                    if rng.random_bool(0.6) {
                        let c: f64 = rng.random_range(-1.0..1.0);
                        e.add(Var::entry(k, i, j), c);
                        rhs += c * interior[k][(i, j)];
                    }
                }
            }
        }
        let c: f64 = rng.random_range(-1.0..1.0);
        e.add(Var::Scalar(s), c);
        rhs += c * s_val;
        p.add_equality(e, rhs);
    }
    if with_objective {
        // trace objective keeps the problem bounded below over the PSD cone
        let mut obj = LinearExpr::new();
        for (k, &d) in dims.iter().enumerate() {
            obj.add_trace(k, &DMatrix::identity(d, d));
        }
        obj.add(Var::Scalar(s), 1.0);
        p.set_objective(obj);
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn constructed_problems_are_solved_and_pass_the_checker(seed in any::<u64>(), d1 in 1usize..4, d2 in 1usize..4, eqs in 1usize..6, obj in any::<bool>()) {
        let p = constructed_problem(seed, &[d1, d2], eqs, obj);
        let opts = SolveOptions::default();
        let sol = solve(&p, &opts).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Feasible, "{}", sol.message);
        let report = check_solution(&p, &sol, 1e-7);
        prop_assert!(report.passed(), "{:?}", report.failures());
        prop_assert!(check_solution(&p, &sol, 10.0 * opts.feas_tol).passed());
        if obj {
            prop_assert!(sol.gap <= opts.gap_tol);
        }
    }

    #[test]
    fn diagonal_objective_optimum_is_the_smallest_weight(weights in proptest::collection::vec(0.1f64..10.0, 1..6)) {
        let n = weights.len();
        let mut p = SdpProblem::new();
        let x = p.add_block("X", n);
        p.add_equality(LinearExpr::new().with(Var::entry(x, 0, 0), 0.0).tap_trace(x, n), 1.0);
        p.set_objective(LinearExpr::new().tap_weighted(x, &DMatrix::from_diagonal(&DVector::from_vec(weights.clone()))));
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Feasible);
        let best = weights.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!((sol.objective.unwrap() - best).abs() < 1e-6, "{:?} vs {}", sol.objective, best);
    }

    #[test]
    fn text_dump_round_trips_bit_exactly(seed in any::<u64>(), eqs in 1usize..5) {
        let p = constructed_problem(seed, &[2, 3], eqs, seed % 2 == 0);
        let text = dump(&p);
        let back = load(&text).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(dump(&back), text);
    }
}

trait ExprExt {
    fn tap_trace(self, block: usize, n: usize) -> Self;
    fn tap_weighted(self, block: usize, w: &DMatrix<f64>) -> Self;
}

impl ExprExt for LinearExpr {
    fn tap_trace(self, block: usize, n: usize) -> Self {
        self.tap_weighted(block, &DMatrix::identity(n, n))
    }

    fn tap_weighted(mut self, block: usize, w: &DMatrix<f64>) -> Self {
        self.add_trace(block, w);
        self
    }
}

#[test]
fn solves_are_deterministic() {
    let p = constructed_problem(99, &[3, 2], 4, true);
    let a = solve(&p, &SolveOptions::default()).unwrap();
    let b = solve(&p, &SolveOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn benchmark_controller_program_passes_the_checker() {
    let prog = controller_program(&SystemModel::moore_greitzer(), &SynthParams::new(0.1, 0.1, 1.3)).unwrap();
    let solved = sos::solve(&prog, &SolveOptions::default()).unwrap();
    assert_eq!(solved.solution.status, SolveStatus::Feasible);
    let report = check_solution(&solved.compiled.sdp, &solved.solution, 1e-6);
    assert!(report.passed(), "{:?}", report.failures());
}

#[test]
fn iteration_cap_yields_marginal() {
    let p = constructed_problem(5, &[3, 3], 5, true);
    let sol = solve(&p, &SolveOptions { max_iter: 2, ..SolveOptions::default() }).unwrap();
    assert_eq!(sol.status, SolveStatus::Marginal);
}
