use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use solar_uav::baselines::{baseline1_fixed_xy, baseline2_random_assignment};
use solar_uav::oracle::{
    best_gain_users, exhaustive_assignment_value, grid_search_oracle, position_value,
    transmit_budget, waterfilling, GridSpec,
};
use solar_uav::sca::{evaluate_original, recover_assignment};
use solar_uav::validate::check_constraints;
use solar_uav::{
    sca_solve, Error, Instance, Position3D, SolarParams, SolveStatus, SolverOptions, SystemParams,
    UserGrid,
};

fn sample(seed: u64, k: usize, n_f: usize) -> Instance {
    let sys = SystemParams {
        n_subcarriers: n_f,
        ..SystemParams::default()
    };
    Instance::sample(sys, SolarParams::default(), k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn single_user(h: f64, n_f: usize) -> Instance {
    let sys = SystemParams {
        n_subcarriers: n_f,
        ..SystemParams::default()
    };
    Instance::new(
        sys,
        SolarParams::default(),
        vec![Position3D::ground(0.0, 0.0)],
        UserGrid::filled(1, n_f, h),
    )
    .unwrap()
}

#[test]
fn recover_assignment_examples() {
    let options = SolverOptions::default();
    let p = UserGrid::from_rows(vec![vec![0.5, 0.0, 0.2], vec![1e-15, 0.0, 0.2]]).unwrap();
    let (s, q) = recover_assignment(&p, 10.0, &options);
    assert!(s[(0, 0)] && !s[(1, 0)]);
    assert_eq!(q[(0, 0)], 0.5 + 1e-15);
    // Nothing above the threshold: unassigned.
    assert!(!s[(0, 1)] && !s[(1, 1)]);
    assert_eq!(q[(0, 1)] + q[(1, 1)], 0.0);
    // Ties go to the lower index and carry the column sum.
    assert!(s[(0, 2)] && !s[(1, 2)]);
    assert!((q[(0, 2)] - 0.4).abs() < 1e-15);
}

#[test]
fn evaluate_original_examples() {
    let inst = single_user(1.96e10, 1);
    let r = Position3D::new(0.0, 0.0, 1400.0);
    let off = UserGrid::filled(1, 1, false);
    let zero = UserGrid::filled(1, 1, 0.0);
    assert_eq!(evaluate_original(&inst, &off, &zero, &r).unwrap(), 0.0);
    let on = UserGrid::filled(1, 1, true);
    let p = UserGrid::filled(1, 1, 0.1);
    let v = evaluate_original(&inst, &on, &p, &r).unwrap();
    assert!((v - 1001f64.log2()).abs() < 1e-12);
    assert!((v - 9.9672).abs() < 1e-4);
    // Over the cap.
    let hot = UserGrid::filled(1, 1, 11.0);
    match evaluate_original(&inst, &on, &hot, &r) {
        Err(Error::Validation(report)) => assert_eq!(report.violated_names(), ["C3"]),
        other => panic!("expected a C3 violation, got {other:?}"),
    }
    // Inside the cloud the panel cannot carry the UAV.
    let low = Position3D::new(0.0, 0.0, 1000.0);
    assert!(matches!(evaluate_original(&inst, &on, &p, &low), Err(Error::Validation(_))));
}

#[test]
fn validator_flags_shared_subcarriers_and_stray_power() {
    let inst = sample(1, 2, 2);
    let r = Position3D::new(0.0, 0.0, 1450.0);
    let s = UserGrid::from_rows(vec![vec![true, false], vec![true, false]]).unwrap();
    let p = UserGrid::from_rows(vec![vec![1.0, 0.0], vec![1.0, 0.5]]).unwrap();
    let report = check_constraints(&inst, &s, &p, &r, 1e-6);
    assert_eq!(report.violated_names(), ["C5", "C6"]);
    let bad = UserGrid::filled(3, 2, 0.0);
    assert_eq!(check_constraints(&inst, &s, &bad, &r, 1e-6).violated_names(), ["dim"]);
    let high = Position3D::new(0.0, 0.0, 1600.0);
    let none = UserGrid::filled(2, 2, false);
    let zero = UserGrid::filled(2, 2, 0.0);
    assert_eq!(check_constraints(&inst, &none, &zero, &high, 1e-6).violated_names(), ["C4"]);
}

#[test]
fn single_user_matches_waterfilling_at_the_optimum() {
    let inst = sample(2, 1, 8);
    let sol = sca_solve(&inst, &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Converged);
    // One user: fly straight above it at the lowest altitude whose spare
    // solar power still covers P_max.
    let u = inst.users[0];
    assert!((sol.r.x - u.x).abs() < 1.0 && (sol.r.y - u.y).abs() < 1.0);
    let budget = transmit_budget(&inst, sol.r.z).unwrap();
    assert!((budget - inst.sys.p_max).abs() <= 1e-6 * inst.sys.p_max);
    let value = position_value(&inst, &sol.r, budget).unwrap();
    assert!((sol.objective_original - value).abs() <= 1e-6 * value);
    assert!(sol.s.iter().all(|&b| b));
}

#[test]
fn solution_is_feasible_and_objectives_agree() {
    for seed in 0..4 {
        let inst = sample(100 + seed, 3, 6);
        let sol = sca_solve(&inst, &SolverOptions::default()).unwrap();
        let report = check_constraints(&inst, &sol.s, &sol.p, &sol.r, 1e-6);
        assert!(report.is_feasible(), "{report}");
        let rel = (sol.objective_original - sol.objective_relaxed).abs() / sol.objective_relaxed;
        assert!(rel <= 1e-3, "seed {seed}: {rel}");
        assert!(sol.trace.windows(2).all(|w| w[1] >= w[0] - 1e-8));
        assert_eq!(sol.trace.first(), sol.trace.first().filter(|v| v.is_finite()));
    }
}

#[test]
fn solver_is_deterministic() {
    let inst = sample(7, 3, 8);
    let a = sca_solve(&inst, &SolverOptions::default()).unwrap();
    let b = sca_solve(&inst, &SolverOptions::default()).unwrap();
    assert_eq!(a.objective_original.to_bits(), b.objective_original.to_bits());
    assert_eq!(a.r, b.r);
}

#[test]
fn infeasible_band_reports_c1() {
    let sys = SystemParams {
        n_subcarriers: 4,
        z_max: 690.0,
        ..SystemParams::default()
    };
    let inst = Instance::sample(sys, SolarParams::default(), 2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    for result in [
        sca_solve(&inst, &SolverOptions::default()),
        baseline1_fixed_xy(&inst, &SolverOptions::default()),
        grid_search_oracle(&inst, &GridSpec::default()),
    ] {
        match result {
            Err(Error::Infeasible { constraint, .. }) => assert_eq!(constraint, "C1"),
            other => panic!("expected C1 infeasibility, got {other:?}"),
        }
    }
}

#[test]
fn invalid_options_are_rejected() {
    let inst = sample(1, 2, 2);
    let bad = SolverOptions {
        rel_obj_tol: 0.0,
        ..SolverOptions::default()
    };
    assert!(sca_solve(&inst, &bad).is_err());
}

#[test]
fn baselines_never_beat_proposed() {
    for seed in 0..3 {
        let inst = sample(200 + seed, 3, 8);
        let options = SolverOptions::default();
        let prop = sca_solve(&inst, &options).unwrap().objective_original;
        let b1 = baseline1_fixed_xy(&inst, &options).unwrap();
        assert_eq!((b1.r.x, b1.r.y), (0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b2 = baseline2_random_assignment(&inst, &options, &mut rng).unwrap();
        assert!(prop >= b1.objective_original * (1.0 - 1e-6));
        assert!(prop >= b2.objective_original * (1.0 - 1e-6));
        for i in 0..8 {
            assert!(b2.s.column(i).filter(|&&b| b).count() <= 1);
        }
    }
}

#[test]
fn single_user_baseline2_equals_proposed() {
    let inst = sample(5, 1, 6);
    let options = SolverOptions::default();
    let prop = sca_solve(&inst, &options).unwrap().objective_original;
    let b2 = baseline2_random_assignment(&inst, &options, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!((prop - b2.objective_original).abs() <= 1e-6 * prop);
}

#[test]
fn baseline1_matches_proposed_for_a_centred_user() {
    let inst = single_user(1e10, 4);
    let options = SolverOptions::default();
    let prop = sca_solve(&inst, &options).unwrap();
    let b1 = baseline1_fixed_xy(&inst, &options).unwrap();
    assert!((prop.objective_original - b1.objective_original).abs() <= 1e-6 * prop.objective_original);
}

#[test]
fn waterfilling_hand_case_and_kkt() {
    let wf = waterfilling(&[1.0, 4.0], 1.0).unwrap();
    assert!((wf.powers[0] - 0.125).abs() < 1e-15);
    assert!((wf.powers[1] - 0.875).abs() < 1e-15);
    assert!((wf.water_level - 1.125).abs() < 1e-15);
    let gains = [0.3, 2.0, 7.5, 0.01, 1.1];
    let wf = waterfilling(&gains, 2.0).unwrap();
    for (&p, &g) in wf.powers.iter().zip(&gains) {
        if p > 0.0 {
            assert!((p + 1.0 / g - wf.water_level).abs() < 1e-12);
        } else {
            assert!(1.0 / g >= wf.water_level);
        }
    }
    assert!((wf.powers.iter().sum::<f64>() - 2.0).abs() < 1e-12);
}

#[test]
fn best_gain_matches_exhaustive_assignment() {
    for seed in 0..5 {
        let inst = sample(300 + seed, 2, 4);
        for r in [
            Position3D::new(0.0, 0.0, 1400.0),
            Position3D::new(inst.users[0].x, inst.users[0].y, 1450.0),
            Position3D::new(-700.0, 400.0, 1500.0),
        ] {
            let budget = transmit_budget(&inst, r.z).unwrap();
            let (owners, best) = exhaustive_assignment_value(&inst, &r, budget).unwrap();
            let greedy = position_value(&inst, &r, budget).unwrap();
            assert!((best - greedy).abs() <= 1e-12 * best);
            assert_eq!(owners, best_gain_users(&inst, &r));
        }
    }
    assert!(exhaustive_assignment_value(&sample(1, 3, 2), &Position3D::new(0.0, 0.0, 1450.0), 1.0).is_err());
}

#[test]
fn oracle_finds_a_single_user() {
    let inst = sample(9, 1, 4);
    let spec = GridSpec {
        pitch: 25.0,
        z_pitch: 10.0,
        exhaustive: false,
    };
    let sol = grid_search_oracle(&inst, &spec).unwrap();
    let u = inst.users[0];
    assert!((sol.r.x - u.x).abs() <= 25.0 && (sol.r.y - u.y).abs() <= 25.0);
    assert!(check_constraints(&inst, &sol.s, &sol.p, &sol.r, 1e-9).is_feasible());
}

#[test]
fn oracle_improves_under_refinement() {
    let inst = sample(11, 2, 4);
    let coarse = GridSpec {
        pitch: 100.0,
        z_pitch: 40.0,
        exhaustive: false,
    };
    let fine = GridSpec {
        pitch: 50.0,
        z_pitch: 20.0,
        exhaustive: false,
    };
    let a = grid_search_oracle(&inst, &coarse).unwrap().objective_original;
    let b = grid_search_oracle(&inst, &fine).unwrap().objective_original;
    assert!(b >= a);
}
