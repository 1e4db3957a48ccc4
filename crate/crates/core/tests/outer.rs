use std::sync::Arc;

use penbar::barrier::Barrier;
use penbar::bench::{gen_degenerate, gen_eq_qp};
use penbar::inner::{InnerConfig, InnerKind};
use penbar::model::linalg::norm_inf;
use penbar::model::prox::{BoxIndicator, Zero};
use penbar::model::{FnConstraints, FnCost, Formulation, ProblemSpec};
use penbar::outer::{kkt_report, penalty_threshold, run, trajectory_violations, ExitStatus, OuterConfig, RunRecord};

fn lp() -> ProblemSpec {
    let f = FnCost(|x: &[f64], g: &mut [f64]| {
        g[0] = 1.0;
        x[0]
    });
    let c = FnConstraints {
        rows: 1,
        eval: |x: &[f64], o: &mut [f64]| o[0] = -x[0],
        jac_t: |_x: &[f64], v: &[f64], o: &mut [f64]| o[0] = -v[0],
    };
    ProblemSpec::new(1, Arc::new(f), Arc::new(Zero), Arc::new(c), vec![f64::NEG_INFINITY], vec![0.0]).unwrap()
}

/// `min 0.5 |x - (0.6, 0.6)|^2 s.t. x1 + x2 <= 1, x in [-2, 2]^2`; KKT pair `((0.5, 0.5), 0.1)`.
fn boxed_qp() -> ProblemSpec {
    let f = FnCost(|x: &[f64], g: &mut [f64]| {
        g[0] = x[0] - 0.6;
        g[1] = x[1] - 0.6;
        0.5 * (g[0] * g[0] + g[1] * g[1])
    });
    let c = FnConstraints {
        rows: 1,
        eval: |x: &[f64], o: &mut [f64]| o[0] = x[0] + x[1],
        jac_t: |_x: &[f64], v: &[f64], o: &mut [f64]| {
            o[0] = v[0];
            o[1] = v[0];
        },
    };
    let g = BoxIndicator { lo: vec![-2.0; 2], hi: vec![2.0; 2] };
    ProblemSpec::new(2, Arc::new(f), Arc::new(g), Arc::new(c), vec![f64::NEG_INFINITY], vec![1.0]).unwrap()
}

fn variants() -> Vec<OuterConfig> {
    let mut out = Vec::new();
    for barrier in [Barrier::INVERSE, Barrier::LogLike] {
        for kind in [InnerKind::Spectral, InnerKind::Accelerated] {
            out.push(OuterConfig { barrier, inner: InnerConfig { kind, ..Default::default() }, ..Default::default() });
        }
    }
    out
}

#[test]
fn degenerate_problem_needs_growing_penalty() {
    for seed in 0..5 {
        let inst = gen_degenerate(seed);
        for base in variants() {
            let r = run(&inst.problem, &inst.x0, &base).unwrap();
            assert!(r.converged(), "seed {seed} {}", base.barrier);
            assert!(r.exit.alpha > base.alpha0);
            let rep = kkt_report(&r, &inst.problem).unwrap();
            assert!(rep.pass(), "{rep:?}");
            assert!(trajectory_violations(&r).is_empty());
            // Near the solution the penalized minimizer sits at x1 = -1/(2 alpha), so
            // eps_p-feasibility bounds |x1| by sqrt(eps_p) rather than by eps_p.
            assert!(norm_inf(&r.exit.x) <= base.eps_p.sqrt(), "{:?}", r.exit.x);
            assert!((r.exit.x[0] + 0.5 / r.exit.alpha).abs() < 1e-4);

            let tight = OuterConfig { eps_p: 1e-7, eps_d: 1e-7, ..base };
            let r = run(&inst.problem, &inst.x0, &tight).unwrap();
            assert!(r.converged());
            assert!(norm_inf(&r.exit.x) <= 1e-3, "{:?}", r.exit.x);
            assert!(kkt_report(&r, &inst.problem).unwrap().pass());
        }
    }
}

#[test]
fn exponential_barrier_stalls_on_complementarity() {
    // Its behavior profile is unbounded, so mu shrinking does not close the slack gap.
    let cfg = OuterConfig { barrier: Barrier::Exponential, max_outer: 60, ..Default::default() };
    let r = run(&lp(), &[1.0], &cfg).unwrap();
    assert_eq!(r.exit.status, ExitStatus::MaxOuter);
    assert!(r.exit.s > cfg.eps_p);
    assert!(trajectory_violations(&r).is_empty());
}

#[test]
fn threshold_examples() {
    assert!((penalty_threshold(&Barrier::INVERSE, 1, 1.0, 1.0) - 4.0).abs() < 1e-15);
    assert!((penalty_threshold(&Barrier::INVERSE, 1, 1.0, 1e-4) - 0.04).abs() < 1e-15);
    // Two-sided and equality rows count twice.
    assert!((penalty_threshold(&Barrier::INVERSE, 3, 1.0, 1.0) - 12.0).abs() < 1e-14);
}

#[test]
fn linear_program_recovers_multiplier() {
    let p = lp();
    for cfg in variants() {
        let r = run(&p, &[1.0], &cfg).unwrap();
        assert!(r.converged());
        assert!(r.exit.x[0].abs() <= cfg.eps_p);
        assert!((r.exit.y[0] - 1.0).abs() < 1e-3, "{} y = {}", cfg.barrier, r.exit.y[0]);
        assert!(kkt_report(&r, &p).unwrap().pass());
    }
}

#[test]
fn negated_multipliers_fail_dual_feasibility() {
    let p = lp();
    let r = run(&p, &[1.0], &OuterConfig::default()).unwrap();
    let mut bad = r.clone();
    bad.exit.y.iter_mut().for_each(|y| *y = -*y);
    let rep = kkt_report(&bad, &p).unwrap();
    assert!(!rep.dual_feasibility.pass);
    assert!(!rep.pass());
    assert!(rep.multiplier_mismatch > 1.0);
}

#[test]
fn moved_point_fails_stationarity() {
    let p = boxed_qp();
    let r = run(&p, &[0.0, 0.0], &OuterConfig::default()).unwrap();
    assert!(kkt_report(&r, &p).unwrap().pass());
    let mut bad = r.clone();
    bad.exit.x[0] += 1e-3;
    assert!(!kkt_report(&bad, &p).unwrap().dual_stationarity.pass);
}

#[test]
fn convex_fixtures_keep_initial_penalty() {
    let p = boxed_qp();
    for cfg in variants() {
        for x0 in [[0.0, 0.0], [2.0, 2.0], [-2.0, 1.5]] {
            let r = run(&p, &x0, &cfg).unwrap();
            assert!(r.converged());
            assert!(!r.alpha_updated(), "{} from {x0:?}", cfg.barrier);
            assert!((r.exit.x[0] - 0.5).abs() < 1e-4 && (r.exit.x[1] - 0.5).abs() < 1e-4);
            assert!((r.exit.y[0] - 0.1).abs() < 1e-3);
        }
    }
}

#[test]
fn split_formulation_solves_equalities() {
    let (inst, _) = gen_eq_qp(20, 2, 5).unwrap();
    for formulation in [Formulation::Native, Formulation::SplitEqualities] {
        let cfg = OuterConfig { formulation, ..Default::default() };
        let r = run(&inst.problem, &inst.x0, &cfg).unwrap();
        assert!(r.converged());
        assert_eq!(r.exit.y_eq.len(), 2);
        // Each equality row counts as two one-sided rows in the threshold.
        assert_eq!(r.config.m_prime, 4);
        assert!(kkt_report(&r, &inst.problem).unwrap().pass());
    }
}

#[test]
fn trajectory_checks_catch_tampering() {
    let inst = gen_degenerate(1);
    let r = run(&inst.problem, &inst.x0, &OuterConfig::default()).unwrap();
    assert!(trajectory_violations(&r).is_empty());
    assert!(r.iterations.len() > 3);

    let tamper = |f: &dyn Fn(&mut RunRecord)| {
        let mut t = r.clone();
        f(&mut t);
        trajectory_violations(&t)
    };
    assert!(!tamper(&|t| t.iterations[2].alpha = 0.5 * t.iterations[1].alpha).is_empty());
    assert!(!tamper(&|t| t.iterations[2].mu = 2.0 * t.iterations[1].mu).is_empty());
    assert!(!tamper(&|t| t.iterations[2].y_max = 2.0 * t.iterations[2].alpha).is_empty());
    assert!(!tamper(&|t| t.iterations[2].threshold = 10.0 * t.iterations[1].threshold + 1.0).is_empty());
    assert!(!tamper(&|t| {
        let (a, m) = (t.iterations[1].alpha, t.iterations[1].mu);
        t.iterations[2].alpha = a;
        t.iterations[2].mu = m;
    })
    .is_empty());
}

#[test]
fn budget_statuses_keep_trajectory() {
    let inst = gen_degenerate(3);
    let cfg = OuterConfig { max_outer: 3, eps_p: 1e-9, eps_d: 1e-9, ..Default::default() };
    let r = run(&inst.problem, &inst.x0, &cfg).unwrap();
    assert_eq!(r.exit.status, ExitStatus::MaxOuter);
    assert_eq!(r.iterations.len(), 3);

    let cfg = OuterConfig { time_limit: Some(1e-12), eps_p: 1e-9, eps_d: 1e-9, ..Default::default() };
    let r = run(&inst.problem, &inst.x0, &cfg).unwrap();
    assert_eq!(r.exit.status, ExitStatus::TimeLimit);
    assert_eq!(r.exit.status.code(), 2);
    assert_eq!(r.iterations.len(), 1);
}

#[test]
fn infeasible_start_is_projected_onto_domain() {
    let p = boxed_qp();
    let r = run(&p, &[10.0, -10.0], &OuterConfig::default()).unwrap();
    assert!(r.converged());
    assert!((r.exit.x[0] - 0.5).abs() < 1e-4);
}

#[test]
fn records_round_trip_through_json() {
    let inst = gen_degenerate(7);
    let r = run(&inst.problem, &inst.x0, &OuterConfig::default()).unwrap();
    let back: RunRecord = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
}
