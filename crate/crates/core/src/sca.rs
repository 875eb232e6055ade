//! Successive convex approximation over the relaxed problem.
//!
//! Each outer iteration solves one convex subproblem per altitude branch that
//! can power the UAV, keeps the candidate with the best interference-coupled
//! sum rate, and re-linearizes there. Because every surrogate is a global
//! lower bound that is tight at the current iterate, the recorded sum rate
//! never decreases. Once the surrogate stalls, each subcarrier's power is
//! handed to its best-gain user when that raises the sum rate, and the
//! iterations resume. The subcarrier assignment is read off the final
//! relaxed powers.

use serde::{Deserialize, Serialize};

use crate::channel::{Instance, Position3D};
use crate::error::{Error, Result};
use crate::grid::UserGrid;
use crate::oracle::best_gain_users;
use crate::solar::AltitudeBranch;
use crate::subproblem::{
    build_subproblem, relaxed_sum_rate, solve_subproblem, Iterate, Restrictions, SubStatus,
    SubproblemOptions,
};
use crate::validate::{check_constraints, DEFAULT_REL_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Stop once the relative change of the sum rate drops below this.
    pub rel_obj_tol: f64,
    pub max_outer_iter: usize,
    /// Relaxed powers at or below this fraction of `P_max` count as zero when
    /// reading off the assignment.
    pub power_threshold_frac: f64,
    pub kkt_tol: f64,
    /// Newton step budget of each subproblem.
    pub max_newton_steps: usize,
    /// Also start from the cell centre and from above every user, keeping
    /// the best result.
    pub multi_start: bool,
    /// Seed for randomized schemes.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rel_obj_tol: 1e-6,
            max_outer_iter: 100,
            power_threshold_frac: 1e-9,
            kkt_tol: 1e-6,
            max_newton_steps: 500,
            multi_start: true,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_obj_tol > 0.0 && self.power_threshold_frac > 0.0 && self.kkt_tol > 0.0) {
            return Err(Error::domain("solver tolerances must be positive"));
        }
        if self.max_outer_iter == 0 || self.max_newton_steps == 0 {
            return Err(Error::domain("iteration budgets must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    /// A candidate fell below the incumbent by more than the convergence
    /// tolerance; the incumbent was kept.
    AscentGuard,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::AscentGuard => "ascent_guard",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub s: UserGrid<bool>,
    /// Powers on assigned pairs, W.
    pub p: UserGrid<f64>,
    /// Relaxed powers the assignment was recovered from.
    pub p_tilde: UserGrid<f64>,
    pub r: Position3D,
    pub theta: Vec<f64>,
    /// Interference-coupled sum rate at `(p̃, r)` with tight distances.
    pub objective_relaxed: f64,
    /// Interference-free sum rate of `(s, p, r)`.
    pub objective_original: f64,
    /// Sum rate after initialization and after every accepted iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// Starting point: users' centroid (or the pinned position), altitude at the
/// middle of the highest branch that can power the UAV, and 90 % of the
/// available transmit power split evenly over the allowed pairs.
pub fn initialize(instance: &Instance, options: &SolverOptions) -> Result<Iterate> {
    options.validate()?;
    initialize_restricted(instance, &Restrictions::default())
}

pub(crate) fn initialize_restricted(
    instance: &Instance,
    restrictions: &Restrictions,
) -> Result<Iterate> {
    instance.validate()?;
    let sys = &instance.sys;
    let solar = &instance.solar;
    let branch = AltitudeBranch::all_within(solar, sys.z_min, sys.z_max)
        .into_iter()
        .find(|b| solar.power(b.z_interval.1) > sys.p_uav)
        .ok_or_else(|| Error::Infeasible {
            constraint: "C1",
            detail: format!(
                "solar output {:.4} W at z_max = {} m is below P_UAV = {} W",
                solar.power(sys.z_max),
                sys.z_max,
                sys.p_uav
            ),
        })?;
    let (lo, hi) = branch.z_interval;
    let mut z = 0.5 * (lo + hi);
    if solar.power(z) <= sys.p_uav {
        // The midpoint itself cannot fly; use the middle of the part of the
        // branch that can.
        let reach = solar
            .lowest_altitude_reaching(sys.p_uav, (lo, hi))
            .unwrap_or(hi);
        z = 0.5 * (reach + hi);
    }
    let budget = sys.p_max.min(solar.power(z) - sys.p_uav);
    let (k_users, n_f) = instance.h_gain.dims();
    let allowed = (0..k_users)
        .flat_map(|k| (0..n_f).map(move |i| (k, i)))
        .filter(|&(k, i)| restrictions.allows(k, i))
        .count();
    if allowed == 0 {
        return Err(Error::domain("no (user, subcarrier) pair may carry power"));
    }
    let share = 0.9 * budget / allowed as f64;
    let p_tilde = UserGrid::from_fn(k_users, n_f, |k, i| {
        if restrictions.allows(k, i) {
            share
        } else {
            0.0
        }
    });
    let (x, y) = restrictions.pin_xy.unwrap_or_else(|| instance.centroid());
    Ok(Iterate::with_tight_theta(
        instance,
        p_tilde,
        Position3D::new(x, y, z),
        branch,
    ))
}

/// Runs the SCA loop and recovers a feasible solution of the original
/// problem.
pub fn sca_solve(instance: &Instance, options: &SolverOptions) -> Result<Solution> {
    sca_solve_restricted(instance, options, &Restrictions::default())
}

pub(crate) fn sca_solve_restricted(
    instance: &Instance,
    options: &SolverOptions,
    restrictions: &Restrictions,
) -> Result<Solution> {
    options.validate()?;
    let start = initialize_restricted(instance, restrictions)?;
    if !options.multi_start || restrictions.pin_xy.is_some() {
        let run = ascend(instance, options, restrictions, start)?;
        return finish(instance, options, run);
    }
    // Every start is first run to a loose tolerance; only the best one is
    // refined.
    let screening = SolverOptions {
        rel_obj_tol: options.rel_obj_tol.max(SCREENING_TOL),
        ..*options
    };
    let mut anchors = vec![(start.r.x, start.r.y), (0.0, 0.0)];
    anchors.extend(instance.users.iter().map(|u| (u.x, u.y)));
    let mut best: Option<Run> = None;
    for (x, y) in anchors {
        let r = Position3D::new(x, y, start.r.z);
        let from = Iterate::with_tight_theta(instance, start.p_tilde.clone(), r, start.branch);
        let run = ascend(instance, &screening, restrictions, from)?;
        if best.as_ref().is_none_or(|b| run.value > b.value) {
            best = Some(run);
        }
    }
    let screened = best.expect("at least one start");
    if screening.rel_obj_tol <= options.rel_obj_tol {
        return finish(instance, options, screened);
    }
    let mut refined = ascend(instance, options, restrictions, screened.iterate)?;
    let mut trace = screened.trace;
    trace.extend_from_slice(&refined.trace[1..]);
    refined.trace = trace;
    refined.iterations += screened.iterations;
    finish(instance, options, refined)
}

/// Relative tolerance used to rank multiple starts.
const SCREENING_TOL: f64 = 1e-4;

struct Run {
    iterate: Iterate,
    value: f64,
    trace: Vec<f64>,
    iterations: usize,
    status: SolveStatus,
}

fn ascend(
    instance: &Instance,
    options: &SolverOptions,
    restrictions: &Restrictions,
    start: Iterate,
) -> Result<Run> {
    let sys = &instance.sys;
    let branches = AltitudeBranch::all_within(&instance.solar, sys.z_min, sys.z_max);
    let sub_options = SubproblemOptions {
        kkt_tol: options.kkt_tol,
        max_newton_steps: options.max_newton_steps,
        restrictions: restrictions.clone(),
    };
    let rate = |it: &Iterate| relaxed_sum_rate(&instance.h_gain, &it.p_tilde, &it.theta, restrictions);

    let mut current = start;
    let mut value = rate(&current);
    let mut trace = vec![value];
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    for iteration in 1..=options.max_outer_iter {
        iterations = iteration;
        let mut best: Option<(f64, Iterate)> = None;
        for branch in &branches {
            let probe = Iterate {
                branch: *branch,
                ..current.clone()
            };
            let spec = build_subproblem(instance, &probe, &sub_options).map_err(|e| {
                Error::Subproblem {
                    iteration,
                    reason: e.to_string(),
                }
            })?;
            if spec.infeasible {
                continue;
            }
            let sol = solve_subproblem(&spec);
            if sol.status == SubStatus::Infeasible {
                continue;
            }
            let candidate = rate(&sol.iterate);
            if !candidate.is_finite() {
                continue;
            }
            if best.as_ref().is_none_or(|(b, _)| candidate > *b) {
                best = Some((candidate, sol.iterate));
            }
        }
        let Some((candidate, next)) = best else {
            return Err(Error::Subproblem {
                iteration,
                reason: "no altitude branch admits a feasible subproblem".into(),
            });
        };
        let change = (candidate - value) / value.abs().max(1e-12);
        if change < -options.rel_obj_tol {
            status = SolveStatus::AscentGuard;
            break;
        }
        // A drop within tolerance is a stall: keep the incumbent.
        if candidate >= value {
            current = next;
            value = candidate;
            trace.push(value);
        }
        if change < options.rel_obj_tol {
            // Interference in the relaxed objective keeps a subcarrier with
            // whichever user took it first; hand it to the best user at the
            // converged position and resume while that helps.
            if restrictions.power_mask.is_none() {
                let moved = reassign_best_gain(instance, &current);
                let moved_value = rate(&moved);
                if moved_value > value * (1.0 + options.rel_obj_tol) {
                    current = moved;
                    value = moved_value;
                    trace.push(value);
                    continue;
                }
            }
            status = SolveStatus::Converged;
            break;
        }
    }
    Ok(Run {
        iterate: current,
        value,
        trace,
        iterations,
        status,
    })
}

fn finish(instance: &Instance, options: &SolverOptions, run: Run) -> Result<Solution> {
    let current = run.iterate;
    let (s, p) = recover_assignment(&current.p_tilde, instance.sys.p_max, options);
    let tight: Vec<f64> = instance.users.iter().map(|u| current.r.dist_sq(u)).collect();
    // Pairs outside a mask carry no power, so the unmasked rate applies.
    let objective_relaxed = relaxed_sum_rate(
        &instance.h_gain,
        &current.p_tilde,
        &tight,
        &Restrictions::default(),
    );
    let objective_original = evaluate_original(instance, &s, &p, &current.r)?;
    Ok(Solution {
        s,
        p,
        p_tilde: current.p_tilde,
        r: current.r,
        theta: current.theta,
        objective_relaxed,
        objective_original,
        trace: run.trace,
        iterations: run.iterations,
        status: run.status,
    })
}

/// Moves each subcarrier's relaxed power to the user with the largest
/// `H_k^i/‖r − r_k‖²` and tightens `θ`.
pub fn reassign_best_gain(instance: &Instance, iterate: &Iterate) -> Iterate {
    let owners = best_gain_users(instance, &iterate.r);
    let totals: Vec<f64> = (0..instance.n_f())
        .map(|i| iterate.p_tilde.column(i).sum())
        .collect();
    let p_tilde = UserGrid::from_fn(instance.k(), instance.n_f(), |k, i| {
        if owners[i] == k {
            totals[i]
        } else {
            0.0
        }
    });
    Iterate::with_tight_theta(instance, p_tilde, iterate.r, iterate.branch)
}

/// Binary assignment from relaxed powers: each subcarrier whose largest
/// relaxed power exceeds the threshold goes to that user (lowest index on
/// ties) and carries the subcarrier's whole relaxed power.
pub fn recover_assignment(
    p_tilde: &UserGrid<f64>,
    p_max: f64,
    options: &SolverOptions,
) -> (UserGrid<bool>, UserGrid<f64>) {
    let (k_users, n_f) = p_tilde.dims();
    let threshold = options.power_threshold_frac * p_max;
    let mut s = UserGrid::filled(k_users, n_f, false);
    let mut p = UserGrid::filled(k_users, n_f, 0.0);
    for i in 0..n_f {
        let mut winner = 0;
        let mut largest = f64::NEG_INFINITY;
        for (k, &v) in p_tilde.column(i).enumerate() {
            if v > largest {
                largest = v;
                winner = k;
            }
        }
        if largest > threshold {
            s[(winner, i)] = true;
            p[(winner, i)] = p_tilde.column(i).sum();
        }
    }
    (s, p)
}

/// Interference-free sum rate `Σ s_k^i log2(1 + H_k^i p_k^i / ‖r − r_k‖²)`
/// after checking every constraint of the original problem.
pub fn evaluate_original(
    instance: &Instance,
    s: &UserGrid<bool>,
    p: &UserGrid<f64>,
    r: &Position3D,
) -> Result<f64> {
    let report = check_constraints(instance, s, p, r, DEFAULT_REL_TOL);
    if !report.is_feasible() {
        return Err(Error::Validation(report));
    }
    Ok(sum_rate(instance, s, p, r))
}

pub(crate) fn sum_rate(
    instance: &Instance,
    s: &UserGrid<bool>,
    p: &UserGrid<f64>,
    r: &Position3D,
) -> f64 {
    let (k_users, n_f) = instance.h_gain.dims();
    let mut total = 0.0;
    for k in 0..k_users {
        let d2 = r.dist_sq(&instance.users[k]);
        for i in 0..n_f {
            if s[(k, i)] {
                total += (instance.h_gain[(k, i)] * p[(k, i)].max(0.0) / d2).log2_1p();
            }
        }
    }
    total
}

trait Log2OnePlus {
    fn log2_1p(self) -> f64;
}

impl Log2OnePlus for f64 {
    fn log2_1p(self) -> f64 {
        self.ln_1p() / std::f64::consts::LN_2
    }
}
