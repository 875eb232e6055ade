use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use solar_uav::oracle::{transmit_budget, waterfilling};
use solar_uav::sca::initialize;
use solar_uav::subproblem::{
    build_subproblem, g_gradient, g_value, kkt_residual, relaxed_sum_rate, solve_subproblem,
    Iterate, Restrictions, SubStatus, SubproblemOptions,
};
use solar_uav::{
    AltitudeBranch, BranchLabel, Instance, Position3D, SolarParams, SolverOptions, SystemParams,
    UserGrid,
};

fn sample(seed: u64, k: usize, n_f: usize) -> Instance {
    let sys = SystemParams {
        n_subcarriers: n_f,
        ..SystemParams::default()
    };
    Instance::sample(sys, SolarParams::default(), k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Five-point central difference with a step of 1e-3 of the coordinate.
/// `∂G/∂θ` is tiny next to `G` itself, so shorter steps drown in rounding.
fn central_difference(x: f64, f: impl Fn(f64) -> f64) -> f64 {
    let h = 1e-3 * x;
    (8.0 * (f(x + h) - f(x - h)) - (f(x + 2.0 * h) - f(x - 2.0 * h))) / (12.0 * h)
}

fn grid(k: usize, n_f: usize, values: &[f64]) -> UserGrid<f64> {
    UserGrid::from_fn(k, n_f, |a, i| values[a * n_f + i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn g_gradient_matches_central_differences(
        seed in 0u64..1000,
        powers in prop::collection::vec(0.01f64..2.0, 6),
        theta in prop::collection::vec(1e5f64..4e6, 2),
    ) {
        let inst = sample(seed, 2, 3);
        let p = grid(2, 3, &powers);
        let (gp, gt) = g_gradient(&p, &theta, &inst.h_gain).unwrap();
        for k in 0..2 {
            for i in 0..3 {
                let fd = central_difference(p[(k, i)], |v| {
                    let mut q = p.clone();
                    q[(k, i)] = v;
                    g_value(&q, &theta, &inst.h_gain).unwrap()
                });
                prop_assert!((fd - gp[(k, i)]).abs() <= 1e-5 * gp[(k, i)].abs().max(1e-9));
            }
            let fd = central_difference(theta[k], |v| {
                let mut t = theta.clone();
                t[k] = v;
                g_value(&p, &t, &inst.h_gain).unwrap()
            });
            prop_assert!((fd - gt[k]).abs() <= 1e-5 * gt[k].abs());
        }
    }

    #[test]
    fn g_is_convex_along_segments(
        seed in 0u64..1000,
        a in prop::collection::vec(0.0f64..2.0, 6),
        b in prop::collection::vec(0.0f64..2.0, 6),
        ta in prop::collection::vec(1e5f64..4e6, 2),
        tb in prop::collection::vec(1e5f64..4e6, 2),
    ) {
        let inst = sample(seed, 2, 3);
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let tm: Vec<f64> = ta.iter().zip(&tb).map(|(x, y)| 0.5 * (x + y)).collect();
        let g = |p: &[f64], t: &[f64]| g_value(&grid(2, 3, p), t, &inst.h_gain).unwrap();
        let chord = 0.5 * (g(&a, &ta) + g(&b, &tb));
        prop_assert!(g(&mid, &tm) <= chord + 1e-10 * chord.abs());
    }
}

#[test]
fn g_rejects_bad_input() {
    let inst = sample(1, 2, 3);
    let p = UserGrid::filled(2, 3, 0.1);
    assert!(g_value(&p, &[1.0], &inst.h_gain).is_err());
    assert!(g_value(&UserGrid::filled(2, 2, 0.1), &[1.0, 1.0], &inst.h_gain).is_err());
    assert!(g_value(&UserGrid::filled(2, 3, -0.1), &[1.0, 1.0], &inst.h_gain).is_err());
    assert!(g_value(&p, &[0.0, 1.0], &inst.h_gain).is_ok());
    assert!(g_value(&UserGrid::filled(2, 3, 0.0), &[0.0, 1.0], &inst.h_gain).is_err());
}

#[test]
fn variable_counts() {
    let inst = sample(2, 1, 1);
    let start = initialize(&inst, &SolverOptions::default()).unwrap();
    let spec = build_subproblem(&inst, &start, &SubproblemOptions::default()).unwrap();
    assert_eq!(spec.n_power_vars(), 1);
    assert_eq!(spec.n_theta_vars(), 1);
    assert_eq!(spec.n_position_vars(), 3);
    assert_eq!(spec.n_vars(), 5);

    let inst = sample(3, 3, 4);
    let start = initialize(&inst, &SolverOptions::default()).unwrap();
    let mask = UserGrid::from_fn(3, 4, |k, i| k == i % 2);
    let options = SubproblemOptions {
        restrictions: Restrictions {
            pin_xy: Some((0.0, 0.0)),
            power_mask: Some(mask),
        },
        ..SubproblemOptions::default()
    };
    let spec = build_subproblem(&inst, &start, &options).unwrap();
    assert_eq!(spec.n_power_vars(), 4);
    // The third user has no allowed pair and no θ variable.
    assert_eq!(spec.n_theta_vars(), 2);
    assert_eq!(spec.n_position_vars(), 1);
}

#[test]
fn below_cloud_branch_is_infeasible_with_table_constants() {
    let inst = sample(4, 2, 4);
    let start = initialize(&inst, &SolverOptions::default()).unwrap();
    let below = AltitudeBranch::clipped(BranchLabel::BelowCloud, &inst.solar, 100.0, 1500.0).unwrap();
    let probe = Iterate { branch: below, ..start };
    let spec = build_subproblem(&inst, &probe, &SubproblemOptions::default()).unwrap();
    assert!(spec.infeasible);
    assert_eq!(solve_subproblem(&spec).status, SubStatus::Infeasible);
}

#[test]
fn single_user_takes_all_power_with_tight_distance() {
    let sys = SystemParams {
        n_subcarriers: 1,
        ..SystemParams::default()
    };
    let user = Position3D::ground(0.0, 0.0);
    let inst = Instance::new(sys, SolarParams::default(), vec![user], UserGrid::filled(1, 1, 1e10)).unwrap();
    let start = initialize(&inst, &SolverOptions::default()).unwrap();
    let options = SubproblemOptions {
        restrictions: Restrictions {
            pin_xy: Some((0.0, 0.0)),
            power_mask: None,
        },
        ..SubproblemOptions::default()
    };
    let spec = build_subproblem(&inst, &start, &options).unwrap();
    let sol = solve_subproblem(&spec);
    assert_eq!(sol.status, SubStatus::Optimal);
    let z = sol.iterate.r.z;
    let budget = transmit_budget(&inst, z).unwrap();
    let p = sol.iterate.p_tilde[(0, 0)];
    assert!((p - budget).abs() <= 1e-6 * budget, "{p} vs {budget}");
    let d2 = sol.iterate.r.dist_sq(&user);
    assert!((sol.iterate.theta[0] - d2).abs() <= 1e-6 * d2);
}

#[test]
fn fixed_position_matches_waterfilling() {
    for seed in 0..5 {
        let inst = sample(10 + seed, 3, 6);
        let z = 1450.0;
        let (x, y) = (120.0, -340.0);
        let r = Position3D::new(x, y, z);
        let owners: Vec<usize> = (0..6).map(|i| i % 3).collect();
        let mask = UserGrid::from_fn(3, 6, |k, i| owners[i] == k);
        let branch = AltitudeBranch {
            label: BranchLabel::AboveCloud,
            z_interval: (z, z),
        };
        let p0 = UserGrid::from_fn(3, 6, |k, i| if owners[i] == k { 0.5 } else { 0.0 });
        let start = Iterate::with_tight_theta(&inst, p0, r, branch);
        let options = SubproblemOptions {
            restrictions: Restrictions {
                pin_xy: Some((x, y)),
                power_mask: Some(mask),
            },
            ..SubproblemOptions::default()
        };
        let spec = build_subproblem(&inst, &start, &options).unwrap();
        assert_eq!(spec.n_position_vars(), 0);
        let sol = solve_subproblem(&spec);
        assert_eq!(sol.status, SubStatus::Optimal);

        let gains: Vec<f64> = (0..6).map(|i| inst.effective_gain(owners[i], i, &r)).collect();
        let budget = transmit_budget(&inst, z).unwrap();
        let wf = waterfilling(&gains, budget).unwrap();
        for i in 0..6 {
            let got = sol.iterate.p_tilde[(owners[i], i)];
            assert!(
                (got - wf.powers[i]).abs() <= 1e-5 * wf.powers[i].max(1e-3 * budget),
                "seed {seed}, subcarrier {i}: {got} vs {}",
                wf.powers[i]
            );
        }
    }
}

#[test]
fn solver_output_is_a_kkt_point_and_perturbations_are_not() {
    let inst = sample(20, 2, 4);
    let start = initialize(&inst, &SolverOptions::default()).unwrap();
    let spec = build_subproblem(&inst, &start, &SubproblemOptions::default()).unwrap();
    let sol = solve_subproblem(&spec);
    assert_eq!(sol.status, SubStatus::Optimal);
    let residual = kkt_residual(&sol, &spec);
    assert!(residual <= 1e-6, "{residual}");
    assert!((residual - sol.kkt_residual).abs() <= 1e-12);
    assert!(sol.objective >= spec.surrogate(&start.p_tilde, &start.theta));

    let mut moved = sol.clone();
    moved.iterate.r.x += 50.0;
    moved.iterate.theta = inst.users.iter().map(|u| moved.iterate.r.dist_sq(u)).collect();
    assert!(kkt_residual(&moved, &spec) > 1e-6);
}

#[test]
fn relabeling_users_permutes_the_solution() {
    let inst = sample(30, 2, 4);
    let swapped = Instance::new(
        inst.sys,
        inst.solar,
        vec![inst.users[1], inst.users[0]],
        UserGrid::from_fn(2, 4, |k, i| inst.h_gain[(1 - k, i)]),
    )
    .unwrap();
    let solve = |inst: &Instance| {
        let start = initialize(inst, &SolverOptions::default()).unwrap();
        let spec = build_subproblem(inst, &start, &SubproblemOptions::default()).unwrap();
        solve_subproblem(&spec)
    };
    let a = solve(&inst);
    let b = solve(&swapped);
    assert!((a.objective - b.objective).abs() <= 1e-6 * a.objective.abs());
    for i in 0..4 {
        for k in 0..2 {
            let (pa, pb) = (a.iterate.p_tilde[(k, i)], b.iterate.p_tilde[(1 - k, i)]);
            assert!((pa - pb).abs() <= 1e-5 * inst.sys.p_max, "{pa} vs {pb}");
        }
    }
}

#[test]
fn relaxed_rate_without_overlap_is_interference_free() {
    let inst = sample(40, 2, 2);
    let r = Position3D::new(0.0, 0.0, 1450.0);
    let p = grid(2, 2, &[0.3, 0.0, 0.0, 0.7]);
    let theta: Vec<f64> = inst.users.iter().map(|u| r.dist_sq(u)).collect();
    let expected = (1.0 + inst.effective_gain(0, 0, &r) * 0.3).log2()
        + (1.0 + inst.effective_gain(1, 1, &r) * 0.7).log2();
    let got = relaxed_sum_rate(&inst.h_gain, &p, &theta, &Restrictions::default());
    assert!((got - expected).abs() <= 1e-12 * expected);
}
