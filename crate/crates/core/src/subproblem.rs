//! One convex inner problem of the SCA loop.
//!
//! The interference-coupled sum rate is split as
//! `Σ log2(Σ_m H_k^i p̃_m^i + θ_k) + G(p̃, θ)` with
//! `G = −Σ log2(Σ_{m≠k} H_k^i p̃_m^i + θ_k)` convex. Replacing `G` by its
//! tangent plane at the current iterate, and the in-cloud solar branch by its
//! tangent-based underestimator, gives a concave maximization over
//! `(p̃, θ, x, y, z)` with smooth convex constraints:
//!
//! * `p̃ ≥ 0`, `Σ p̃ ≤ P_max`, `Σ p̃ + P_UAV ≤ P̲solar(z)`
//! * `z` inside the branch interval
//! * `‖r − r_k‖² ≤ θ_k ≤ θ_cap`
//!
//! It is solved with a log-barrier method and damped Newton centering steps.
//! Internally lengths are measured in kilometres so that every variable is of
//! order one; all public quantities are SI.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

use crate::channel::{Instance, Position3D};
use crate::error::{Error, Result};
use crate::grid::UserGrid;
use crate::solar::{AltitudeBranch, BranchLabel};

const SOLVER_LENGTH_SCALE: f64 = 1000.0;
const BARRIER_GROWTH: f64 = 20.0;

/// SCA state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    /// Relaxed powers `p̃_k^i`, W.
    pub p_tilde: UserGrid<f64>,
    pub r: Position3D,
    /// Squared-distance auxiliaries `θ_k`, m².
    pub theta: Vec<f64>,
    pub branch: AltitudeBranch,
}

/// Variables held fixed in every subproblem.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Restrictions {
    /// Horizontal UAV position, when pinned.
    pub pin_xy: Option<(f64, f64)>,
    /// `(k, i)` pairs allowed to carry power; `None` allows all.
    pub power_mask: Option<UserGrid<bool>>,
}

impl Restrictions {
    pub fn allows(&self, k: usize, i: usize) -> bool {
        self.power_mask.as_ref().is_none_or(|m| m[(k, i)])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemOptions {
    /// KKT residual accepted as optimal.
    pub kkt_tol: f64,
    /// Total Newton steps across all barrier stages.
    pub max_newton_steps: usize,
    pub restrictions: Restrictions,
}

impl Default for SubproblemOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-6,
            max_newton_steps: 500,
            restrictions: Restrictions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

/// Lagrange multipliers of the subproblem constraints, in SI units
/// (bits/s/Hz per unit of the constraint).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    /// `p̃_k^i ≥ 0`; zero for pairs that are not variables.
    pub power_lower: UserGrid<f64>,
    /// `Σ p̃ ≤ P_max`.
    pub power_budget: f64,
    /// `Σ p̃ + P_UAV ≤ P̲solar(z)`.
    pub solar_budget: f64,
    /// `‖r − r_k‖² ≤ θ_k`.
    pub distance: Vec<f64>,
    /// `θ_k ≤ θ_cap`.
    pub theta_cap: Vec<f64>,
    pub z_lower: f64,
    pub z_upper: f64,
}

impl Multipliers {
    pub fn zeros(k: usize, n_f: usize) -> Self {
        Self {
            power_lower: UserGrid::filled(k, n_f, 0.0),
            power_budget: 0.0,
            solar_budget: 0.0,
            distance: vec![0.0; k],
            theta_cap: vec![0.0; k],
            z_lower: 0.0,
            z_upper: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SubSolution {
    pub iterate: Iterate,
    /// Surrogate objective at `iterate`, bits/s/Hz.
    pub objective: f64,
    pub kkt_residual: f64,
    pub status: SubStatus,
    pub multipliers: Multipliers,
    pub newton_steps: usize,
}

/// `G(p̃, θ) = −Σ_i Σ_k log2(Σ_{m≠k} H_k^i p̃_m^i + θ_k)`.
pub fn g_value(p_tilde: &UserGrid<f64>, theta: &[f64], h_gain: &UserGrid<f64>) -> Result<f64> {
    check_dims(p_tilde, theta, h_gain)?;
    g_parts(p_tilde, theta, h_gain, None).map(|(g, _, _)| g)
}

/// Analytic gradient of [`g_value`] with respect to `p̃` and `θ`.
pub fn g_gradient(
    p_tilde: &UserGrid<f64>,
    theta: &[f64],
    h_gain: &UserGrid<f64>,
) -> Result<(UserGrid<f64>, Vec<f64>)> {
    check_dims(p_tilde, theta, h_gain)?;
    g_parts(p_tilde, theta, h_gain, None).map(|(_, gp, gt)| (gp, gt))
}

/// Tangent plane of `G` at the linearization point stored in `spec`.
pub fn g_underestimator(p_tilde: &UserGrid<f64>, theta: &[f64], spec: &SubproblemSpec<'_>) -> f64 {
    let mut value = spec.g_ref;
    for &(k, i) in &spec.layout.pairs {
        value += spec.grad_p[(k, i)] * (p_tilde[(k, i)] - spec.p_ref[(k, i)]);
    }
    for &k in &spec.layout.active_users {
        value += spec.grad_theta[k] * (theta[k] - spec.theta_ref[k]);
    }
    value
}

/// Objective of the auxiliary-variable problem: the interference-coupled sum
/// rate `Σ log2(1 + H p̃_k / (H Σ_{m≠k} p̃_m + θ_k))` over the allowed pairs.
pub fn relaxed_sum_rate(
    h_gain: &UserGrid<f64>,
    p_tilde: &UserGrid<f64>,
    theta: &[f64],
    restrictions: &Restrictions,
) -> f64 {
    let (k_users, n_f) = h_gain.dims();
    let mut total = 0.0;
    for i in 0..n_f {
        let column: f64 = (0..k_users)
            .filter(|&m| restrictions.allows(m, i))
            .map(|m| p_tilde[(m, i)])
            .sum();
        for k in 0..k_users {
            if !restrictions.allows(k, i) {
                continue;
            }
            let h = h_gain[(k, i)];
            let own = p_tilde[(k, i)];
            let interference = h * (column - own);
            total += (h * own / (interference + theta[k])).ln_1p() / LN_2;
        }
    }
    total
}

fn check_dims(p_tilde: &UserGrid<f64>, theta: &[f64], h_gain: &UserGrid<f64>) -> Result<()> {
    if p_tilde.dims() != h_gain.dims() || theta.len() != h_gain.users() {
        return Err(Error::domain(format!(
            "dimension mismatch: p̃ {:?}, θ {}, H {:?}",
            p_tilde.dims(),
            theta.len(),
            h_gain.dims()
        )));
    }
    Ok(())
}

/// Value and gradient of `G` restricted to the allowed pairs.
fn g_parts(
    p_tilde: &UserGrid<f64>,
    theta: &[f64],
    h_gain: &UserGrid<f64>,
    restrictions: Option<&Restrictions>,
) -> Result<(f64, UserGrid<f64>, Vec<f64>)> {
    let (k_users, n_f) = h_gain.dims();
    let allows = |k: usize, i: usize| restrictions.is_none_or(|r| r.allows(k, i));
    if p_tilde.iter().any(|&p| p.is_nan() || p < 0.0) {
        return Err(Error::domain("relaxed powers must be nonnegative"));
    }
    let mut value = 0.0;
    let mut grad_p = UserGrid::filled(k_users, n_f, 0.0);
    let mut grad_theta = vec![0.0; k_users];
    for i in 0..n_f {
        let column: f64 = (0..k_users)
            .filter(|&m| allows(m, i))
            .map(|m| p_tilde[(m, i)])
            .sum();
        for k in 0..k_users {
            if !allows(k, i) {
                continue;
            }
            let h = h_gain[(k, i)];
            let arg = h * (column - p_tilde[(k, i)]) + theta[k];
            if !(arg > 0.0) {
                return Err(Error::domain(format!(
                    "nonpositive log argument {arg} for user {k}, subcarrier {i}"
                )));
            }
            value -= arg.log2();
            let w = 1.0 / (arg * LN_2);
            grad_theta[k] -= w;
            for m in 0..k_users {
                if m != k && allows(m, i) {
                    grad_p[(m, i)] -= h * w;
                }
            }
        }
    }
    Ok((value, grad_p, grad_theta))
}

#[derive(Debug, Clone)]
struct Layout {
    /// `(k, i)` of each power variable; variable index is the position.
    pairs: Vec<(usize, usize)>,
    /// Per subcarrier: `(user, variable index)` of its power variables.
    carrier_vars: Vec<Vec<(usize, usize)>>,
    /// Per user: index of its `θ` variable.
    theta_var: Vec<Option<usize>>,
    active_users: Vec<usize>,
    x: Option<usize>,
    y: Option<usize>,
    z: Option<usize>,
    n: usize,
}

impl Layout {
    fn new(k_users: usize, n_f: usize, restrictions: &Restrictions, z_free: bool) -> Self {
        let mut pairs = Vec::new();
        let mut carrier_vars = vec![Vec::new(); n_f];
        for (i, vars) in carrier_vars.iter_mut().enumerate() {
            for k in 0..k_users {
                if restrictions.allows(k, i) {
                    vars.push((k, pairs.len()));
                    pairs.push((k, i));
                }
            }
        }
        let mut theta_var = vec![None; k_users];
        let mut active_users = Vec::new();
        let mut n = pairs.len();
        for (k, slot) in theta_var.iter_mut().enumerate() {
            if pairs.iter().any(|&(m, _)| m == k) {
                *slot = Some(n);
                active_users.push(k);
                n += 1;
            }
        }
        let xy_free = restrictions.pin_xy.is_none();
        let mut next = || {
            n += 1;
            Some(n - 1)
        };
        let x = if xy_free { next() } else { None };
        let y = if xy_free { next() } else { None };
        let z = if z_free { next() } else { None };
        Self {
            pairs,
            carrier_vars,
            theta_var,
            active_users,
            x,
            y,
            z,
            n,
        }
    }

    fn n_power(&self) -> usize {
        self.pairs.len()
    }
}

/// Assembled inner problem for one linearization point and one altitude
/// branch.
#[derive(Debug, Clone)]
pub struct SubproblemSpec<'a> {
    pub instance: &'a Instance,
    pub branch: AltitudeBranch,
    pub p_ref: UserGrid<f64>,
    pub theta_ref: Vec<f64>,
    pub z_ref: f64,
    /// Restricted `G` at the linearization point.
    pub g_ref: f64,
    /// `∇_p̃ G` at the linearization point, per watt.
    pub grad_p: UserGrid<f64>,
    /// `∇_θ G` at the linearization point, per m².
    pub grad_theta: Vec<f64>,
    pub theta_cap: f64,
    pub kkt_tol: f64,
    pub max_newton_steps: usize,
    pub restrictions: Restrictions,
    /// Set when no altitude in the branch leaves power for transmission.
    pub infeasible: bool,
    /// Altitude when the branch interval is a single point.
    pinned_z: Option<f64>,
    start: Option<Iterate>,
    layout: Layout,
}

impl SubproblemSpec<'_> {
    pub fn n_power_vars(&self) -> usize {
        self.layout.n_power()
    }

    pub fn n_theta_vars(&self) -> usize {
        self.layout.active_users.len()
    }

    pub fn n_position_vars(&self) -> usize {
        [self.layout.x, self.layout.y, self.layout.z]
            .iter()
            .filter(|v| v.is_some())
            .count()
    }

    pub fn n_vars(&self) -> usize {
        self.layout.n
    }

    /// Strictly feasible starting point found during assembly.
    pub fn start(&self) -> Option<&Iterate> {
        self.start.as_ref()
    }

    /// Concave surrogate `Σ log2(Σ_m H p̃_m + θ_k) + G̲(p̃, θ)` at a point.
    pub fn surrogate(&self, p_tilde: &UserGrid<f64>, theta: &[f64]) -> f64 {
        let h = &self.instance.h_gain;
        let mut value = g_underestimator(p_tilde, theta, self);
        for (i, vars) in self.layout.carrier_vars.iter().enumerate() {
            let column: f64 = vars.iter().map(|&(m, _)| p_tilde[(m, i)]).sum();
            for &(k, _) in vars {
                value += (h[(k, i)] * column + theta[k]).log2();
            }
        }
        value
    }

    fn model(&self, len: f64) -> Model<'_> {
        Model::new(self, len)
    }
}

/// Builds the subproblem linearized at `iterate` on `iterate.branch`.
///
/// When the iterate is not strictly inside the branch-restricted feasible
/// set (for instance because it sits in another branch), a strictly feasible
/// start is constructed from it; failure to do so marks the spec infeasible.
pub fn build_subproblem<'a>(
    instance: &'a Instance,
    iterate: &Iterate,
    options: &SubproblemOptions,
) -> Result<SubproblemSpec<'a>> {
    let (k_users, n_f) = instance.h_gain.dims();
    check_dims(&iterate.p_tilde, &iterate.theta, &instance.h_gain)?;
    let restrictions = options.restrictions.clone();
    if let Some(mask) = &restrictions.power_mask {
        if mask.dims() != (k_users, n_f) {
            return Err(Error::domain("power mask dimensions do not match the instance"));
        }
    }
    let branch = iterate.branch;
    let (lo, hi) = branch.z_interval;
    if !(lo <= hi) {
        return Err(Error::domain(format!("inverted altitude interval {:?}", branch.z_interval)));
    }
    let z_free = hi - lo > 1e-9 * hi.abs().max(1.0);
    let layout = Layout::new(k_users, n_f, &restrictions, z_free);
    if layout.pairs.is_empty() {
        return Err(Error::domain("no (user, subcarrier) pair may carry power"));
    }
    let z_ref = iterate.r.z.clamp(lo, hi);
    let (g_ref, grad_p, grad_theta) =
        g_parts(&iterate.p_tilde, &iterate.theta, &instance.h_gain, Some(&restrictions))?;
    let sys = &instance.sys;
    let theta_cap = (2.0 * sys.cell_radius).powi(2) + sys.z_max * sys.z_max;

    let mut spec = SubproblemSpec {
        instance,
        branch,
        p_ref: iterate.p_tilde.clone(),
        theta_ref: iterate.theta.clone(),
        z_ref,
        g_ref,
        grad_p,
        grad_theta,
        theta_cap,
        kkt_tol: options.kkt_tol,
        max_newton_steps: options.max_newton_steps,
        restrictions,
        infeasible: false,
        pinned_z: (!z_free).then_some(lo),
        start: None,
        layout,
    };

    let solar = &instance.solar;
    let peak = if z_free {
        solar.max_underestimate((lo, hi), z_ref, branch.label).1
    } else {
        solar.underestimate(lo, z_ref, branch.label).0
    };
    if peak - sys.p_uav <= 0.0 {
        spec.infeasible = true;
        return Ok(spec);
    }
    spec.start = strictly_feasible_start(&spec, iterate);
    spec.infeasible = spec.start.is_none();
    Ok(spec)
}

/// Phase one: the iterate itself when strictly feasible, otherwise a nearby
/// strictly feasible point.
fn strictly_feasible_start(spec: &SubproblemSpec<'_>, iterate: &Iterate) -> Option<Iterate> {
    let inst = spec.instance;
    let sys = &inst.sys;
    let solar = &inst.solar;
    let layout = &spec.layout;
    let (lo, hi) = spec.branch.z_interval;
    let label = spec.branch.label;
    let budget_at = |z: f64| solar.underestimate(z, spec.z_ref, label).0 - sys.p_uav;

    let z0 = match spec.pinned_z {
        Some(z) => z,
        None => {
            let inset = 1e-4 * (hi - lo);
            let near = iterate.r.z.clamp(lo + inset, hi - inset);
            if budget_at(near) > 0.0 {
                near
            } else {
                let (z_star, _) = solar.max_underestimate((lo, hi), spec.z_ref, label);
                z_star.clamp(lo + inset, hi - inset)
            }
        }
    };
    let budget = sys.p_max.min(budget_at(z0));
    if !(budget > 0.0) {
        return None;
    }

    let n_p = layout.n_power() as f64;
    let mut p0 = UserGrid::filled(inst.k(), inst.n_f(), 0.0);
    let floor = 1e-6 * budget / n_p;
    let mut total = 0.0;
    for &(k, i) in &layout.pairs {
        let p = iterate.p_tilde[(k, i)].max(floor);
        p0[(k, i)] = p;
        total += p;
    }
    if total >= 0.99 * budget {
        let shrink = 0.9 * budget / total;
        for &(k, i) in &layout.pairs {
            p0[(k, i)] *= shrink;
        }
    }

    let (x0, y0) = spec
        .restrictions
        .pin_xy
        .unwrap_or((iterate.r.x, iterate.r.y));
    let r0 = Position3D::new(x0, y0, z0);
    let mut theta0 = iterate.theta.clone();
    for &k in &layout.active_users {
        let d2 = r0.dist_sq(&inst.users[k]);
        let lower = d2 * (1.0 + 1e-9) + 1e-9;
        let mut th = theta0[k].max(lower);
        if th >= spec.theta_cap {
            th = 0.5 * (d2 + spec.theta_cap);
        }
        if !(th > d2 && th < spec.theta_cap) {
            return None;
        }
        theta0[k] = th;
    }
    Some(Iterate {
        p_tilde: p0,
        r: r0,
        theta: theta0,
        branch: spec.branch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    PowerLower(usize),
    PowerBudget,
    SolarBudget,
    Distance(usize),
    ThetaCap(usize),
    ZLower,
    ZUpper,
}

/// One constraint `s(v) ≥ 0` evaluated at a point.
struct Slack {
    kind: Kind,
    value: f64,
    /// Magnitude of the terms forming `value`, for relative measures.
    scale: f64,
    grad: Vec<(usize, f64)>,
    /// Diagonal of `∇²s`.
    curvature: Vec<(usize, f64)>,
}

/// The subproblem expressed in variables scaled by `len` (lengths in units of
/// `len` metres, `θ` in units of `len²`).
struct Model<'s> {
    spec: &'s SubproblemSpec<'s>,
    len: f64,
    h: UserGrid<f64>,
    users: Vec<(f64, f64)>,
    lin_p: Vec<f64>,
    lin_theta: Vec<f64>,
    /// Constant part of the linearized `G` (scaled units).
    lin_const: f64,
    cap: f64,
}

impl<'s> Model<'s> {
    fn new(spec: &'s SubproblemSpec<'s>, len: f64) -> Self {
        let inst = spec.instance;
        let l2 = len * len;
        let layout = &spec.layout;
        let h = inst.h_gain.map(|&h| h / l2);
        let users = inst.users.iter().map(|u| (u.x / len, u.y / len)).collect();
        let lin_p: Vec<f64> = layout.pairs.iter().map(|&(k, i)| spec.grad_p[(k, i)]).collect();
        let lin_theta: Vec<f64> = spec.grad_theta.iter().map(|g| g * l2).collect();
        // Scaled G differs from the SI one by log2(len²) per term.
        let lin_const = spec.g_ref + layout.pairs.len() as f64 * l2.log2();
        Self {
            spec,
            len,
            h,
            users,
            lin_p,
            lin_theta,
            lin_const,
            cap: spec.theta_cap / l2,
        }
    }

    fn encode(&self, it: &Iterate) -> Vec<f64> {
        let layout = &self.spec.layout;
        let mut v = vec![0.0; layout.n];
        for (a, &(k, i)) in layout.pairs.iter().enumerate() {
            v[a] = it.p_tilde[(k, i)];
        }
        for &k in &layout.active_users {
            v[layout.theta_var[k].unwrap()] = it.theta[k] / (self.len * self.len);
        }
        if let Some(ix) = layout.x {
            v[ix] = it.r.x / self.len;
        }
        if let Some(iy) = layout.y {
            v[iy] = it.r.y / self.len;
        }
        if let Some(iz) = layout.z {
            v[iz] = it.r.z / self.len;
        }
        v
    }

    fn decode(&self, v: &[f64], template: &Iterate) -> Iterate {
        let layout = &self.spec.layout;
        let inst = self.spec.instance;
        let mut p_tilde = UserGrid::filled(inst.k(), inst.n_f(), 0.0);
        for (a, &(k, i)) in layout.pairs.iter().enumerate() {
            p_tilde[(k, i)] = v[a];
        }
        let mut theta = template.theta.clone();
        for &k in &layout.active_users {
            theta[k] = v[layout.theta_var[k].unwrap()] * self.len * self.len;
        }
        let (x, y, z) = self.position(v);
        Iterate {
            p_tilde,
            r: Position3D::new(x * self.len, y * self.len, z * self.len),
            theta,
            branch: self.spec.branch,
        }
    }

    /// Scaled UAV coordinates, with pinned values filled in.
    fn position(&self, v: &[f64]) -> (f64, f64, f64) {
        let layout = &self.spec.layout;
        let pin = self.spec.restrictions.pin_xy;
        let x = layout.x.map_or_else(|| pin.unwrap().0 / self.len, |i| v[i]);
        let y = layout.y.map_or_else(|| pin.unwrap().1 / self.len, |i| v[i]);
        let z = layout
            .z
            .map_or_else(|| self.spec.pinned_z.unwrap() / self.len, |i| v[i]);
        (x, y, z)
    }

    /// Squared distance to user `k` in model units.
    fn dist_sq(&self, v: &[f64], k: usize) -> f64 {
        let (x, y, z) = self.position(v);
        let (ux, uy) = self.users[k];
        (x - ux).powi(2) + (y - uy).powi(2) + z * z
    }

    fn theta(&self, v: &[f64], k: usize) -> f64 {
        v[self.spec.layout.theta_var[k].unwrap()]
    }

    /// Surrogate value; optionally accumulates its gradient and the Hessian
    /// of `−weight·S` into the provided buffers.
    fn surrogate(&self, v: &[f64], mut grad: Option<&mut [f64]>, mut neg_hess: Option<(&mut DMatrix<f64>, f64)>) -> f64 {
        let layout = &self.spec.layout;
        let mut value = self.lin_const;
        for (a, &(k, i)) in layout.pairs.iter().enumerate() {
            value += self.lin_p[a] * (v[a] - self.spec.p_ref[(k, i)]);
        }
        let l2 = self.len * self.len;
        for &k in &layout.active_users {
            let tv = layout.theta_var[k].unwrap();
            value += self.lin_theta[k] * (v[tv] - self.spec.theta_ref[k] / l2);
        }
        if let Some(g) = grad.as_deref_mut() {
            for (a, c) in self.lin_p.iter().enumerate() {
                g[a] += c;
            }
            for &k in &layout.active_users {
                g[layout.theta_var[k].unwrap()] += self.lin_theta[k];
            }
        }
        for (i, vars) in layout.carrier_vars.iter().enumerate() {
            let column: f64 = vars.iter().map(|&(_, a)| v[a]).sum();
            for &(k, _) in vars {
                let h = self.h[(k, i)];
                let tv = layout.theta_var[k].unwrap();
                let arg = h * column + v[tv];
                value += arg.log2();
                let q = 1.0 / (arg * LN_2);
                if let Some(g) = grad.as_deref_mut() {
                    for &(_, a) in vars {
                        g[a] += q * h;
                    }
                    g[tv] += q;
                }
                if let Some((hess, weight)) = neg_hess.as_mut() {
                    // −S contributes +a·aᵀ/(arg²·ln2) with a = (H on the
                    // subcarrier's powers, 1 on θ_k).
                    let c = *weight * q * q * LN_2;
                    let entries: Vec<(usize, f64)> = vars
                        .iter()
                        .map(|&(_, a)| (a, h))
                        .chain(std::iter::once((tv, 1.0)))
                        .collect();
                    for &(r, vr) in &entries {
                        for &(s, vs) in &entries {
                            hess[(r, s)] += c * vr * vs;
                        }
                    }
                }
            }
        }
        value
    }

    fn slacks(&self, v: &[f64]) -> Vec<Slack> {
        let spec = self.spec;
        let layout = &spec.layout;
        let sys = &spec.instance.sys;
        let n_p = layout.n_power();
        let mut out = Vec::with_capacity(n_p + 2 + 2 * layout.active_users.len() + 2);
        let mut total = 0.0;
        for a in 0..n_p {
            total += v[a];
            out.push(Slack {
                kind: Kind::PowerLower(a),
                value: v[a],
                scale: sys.p_max,
                grad: vec![(a, 1.0)],
                curvature: Vec::new(),
            });
        }
        let minus_all: Vec<(usize, f64)> = (0..n_p).map(|a| (a, -1.0)).collect();
        out.push(Slack {
            kind: Kind::PowerBudget,
            value: sys.p_max - total,
            scale: sys.p_max,
            grad: minus_all.clone(),
            curvature: Vec::new(),
        });

        let (x, y, z) = self.position(v);
        let z_si = z * self.len;
        let (pbar, d1, d2) =
            spec.instance
                .solar
                .underestimate(z_si, spec.z_ref, spec.branch.label);
        let mut grad = minus_all;
        let mut curvature = Vec::new();
        if let Some(iz) = layout.z {
            grad.push((iz, d1 * self.len));
            curvature.push((iz, d2 * self.len * self.len));
        }
        out.push(Slack {
            kind: Kind::SolarBudget,
            value: pbar - sys.p_uav - total,
            scale: sys.p_uav + pbar.abs(),
            grad,
            curvature,
        });

        for &k in &layout.active_users {
            let tv = layout.theta_var[k].unwrap();
            let (ux, uy) = self.users[k];
            let d2 = self.dist_sq(v, k);
            let mut grad = vec![(tv, 1.0)];
            let mut curvature = Vec::new();
            for (var, delta) in [(layout.x, x - ux), (layout.y, y - uy), (layout.z, z)] {
                if let Some(ix) = var {
                    grad.push((ix, -2.0 * delta));
                    curvature.push((ix, -2.0));
                }
            }
            let th = v[tv];
            out.push(Slack {
                kind: Kind::Distance(k),
                value: th - d2,
                scale: th.abs().max(d2),
                grad,
                curvature,
            });
            out.push(Slack {
                kind: Kind::ThetaCap(k),
                value: self.cap - th,
                scale: self.cap,
                grad: vec![(tv, -1.0)],
                curvature: Vec::new(),
            });
        }
        if let Some(iz) = layout.z {
            let (lo, hi) = spec.branch.z_interval;
            let (lo, hi) = (lo / self.len, hi / self.len);
            out.push(Slack {
                kind: Kind::ZLower,
                value: z - lo,
                scale: hi.abs(),
                grad: vec![(iz, 1.0)],
                curvature: Vec::new(),
            });
            out.push(Slack {
                kind: Kind::ZUpper,
                value: hi - z,
                scale: hi.abs(),
                grad: vec![(iz, -1.0)],
                curvature: Vec::new(),
            });
        }
        out
    }

    /// Barrier function `−t·S − Σ log s`, or `None` outside the domain.
    fn barrier_value(&self, v: &[f64], t: f64) -> Option<f64> {
        self.barrier_value_except(v, t, &[])
    }

    /// Barrier function with the slacks in `held` left out.
    fn barrier_value_except(&self, v: &[f64], t: f64, held: &[Kind]) -> Option<f64> {
        let mut value = 0.0;
        for s in self.slacks(v).into_iter().filter(|s| !held.contains(&s.kind)) {
            if !(s.value > 0.0) {
                return None;
            }
            value -= s.value.ln();
        }
        if !self.log_domain_ok(v) {
            return None;
        }
        Some(value - t * self.surrogate(v, None, None))
    }

    fn log_domain_ok(&self, v: &[f64]) -> bool {
        let layout = &self.spec.layout;
        layout.active_users.iter().all(|&k| self.theta(v, k) > 0.0)
    }

    /// Gradient and Hessian of the barrier function.
    fn barrier_derivatives(&self, v: &[f64], t: f64) -> (DVector<f64>, DMatrix<f64>) {
        self.barrier_derivatives_except(v, t, &[])
    }

    fn barrier_derivatives_except(&self, v: &[f64], t: f64, held: &[Kind]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.spec.layout.n;
        let mut grad_s = vec![0.0; n];
        let mut hess = DMatrix::zeros(n, n);
        self.surrogate(v, Some(&mut grad_s), Some((&mut hess, t)));
        let mut grad = DVector::from_iterator(n, grad_s.iter().map(|g| -t * g));
        for s in self.slacks(v).into_iter().filter(|s| !held.contains(&s.kind)) {
            let inv = 1.0 / s.value;
            for &(i, gi) in &s.grad {
                grad[i] -= gi * inv;
                for &(j, gj) in &s.grad {
                    hess[(i, j)] += gi * gj * inv * inv;
                }
            }
            for &(i, c) in &s.curvature {
                hess[(i, i)] -= c * inv;
            }
        }
        (grad, hess)
    }

    fn multipliers_from(&self, slacks: &[Slack], t: f64) -> Multipliers {
        let inst = self.spec.instance;
        let layout = &self.spec.layout;
        let mut m = Multipliers::zeros(inst.k(), inst.n_f());
        let l2 = self.len * self.len;
        for s in slacks {
            let lambda = 1.0 / (t * s.value);
            match s.kind {
                Kind::PowerLower(a) => m.power_lower[layout.pairs[a]] = lambda,
                Kind::PowerBudget => m.power_budget = lambda,
                Kind::SolarBudget => m.solar_budget = lambda,
                Kind::Distance(k) => m.distance[k] = lambda / l2,
                Kind::ThetaCap(k) => m.theta_cap[k] = lambda / l2,
                Kind::ZLower => m.z_lower = lambda / self.len,
                Kind::ZUpper => m.z_upper = lambda / self.len,
            }
        }
        m
    }

    fn multiplier(&self, m: &Multipliers, kind: Kind) -> f64 {
        let l2 = self.len * self.len;
        match kind {
            Kind::PowerLower(a) => m.power_lower[self.spec.layout.pairs[a]],
            Kind::PowerBudget => m.power_budget,
            Kind::SolarBudget => m.solar_budget,
            Kind::Distance(k) => m.distance[k] * l2,
            Kind::ThetaCap(k) => m.theta_cap[k] * l2,
            Kind::ZLower => m.z_lower * self.len,
            Kind::ZUpper => m.z_upper * self.len,
        }
    }

    fn kkt_residual(&self, v: &[f64], mult: &Multipliers) -> f64 {
        let mut grad_s = vec![0.0; self.spec.layout.n];
        let objective = self.surrogate(v, Some(&mut grad_s), None);
        let obj_scale = 1.0 + objective.abs();
        let mut stationarity = grad_s;
        let mut worst: f64 = 0.0;
        for s in self.slacks(v) {
            let lambda = self.multiplier(mult, s.kind);
            for &(i, gi) in &s.grad {
                stationarity[i] += lambda * gi;
            }
            worst = worst
                .max((-s.value).max(0.0) / s.scale.max(f64::MIN_POSITIVE))
                .max((-lambda).max(0.0) * s.scale / obj_scale)
                .max((lambda * s.value).abs() / obj_scale);
        }
        // Objective change, relative to the objective, from moving each
        // variable across its natural range at the residual gradient. This
        // does not depend on the length unit.
        let ranges = self.variable_ranges();
        for (r, range) in stationarity.iter().zip(&ranges) {
            worst = worst.max(r.abs() * range / obj_scale);
        }
        worst
    }

    /// Natural range of each variable in model units.
    fn variable_ranges(&self) -> Vec<f64> {
        let layout = &self.spec.layout;
        let sys = &self.spec.instance.sys;
        let mut ranges = vec![sys.p_max; layout.n];
        for &k in &layout.active_users {
            ranges[layout.theta_var[k].unwrap()] = self.cap;
        }
        let span = 2.0 * sys.cell_radius / self.len;
        for ix in [layout.x, layout.y].into_iter().flatten() {
            ranges[ix] = span;
        }
        if let Some(iz) = layout.z {
            let (lo, hi) = self.spec.branch.z_interval;
            ranges[iz] = (hi - lo) / self.len;
        }
        ranges
    }
}

/// KKT residual of `solution` for `spec`: the largest of scaled
/// stationarity per variable, relative primal infeasibility, dual
/// infeasibility and complementary slackness. Zero at an exact KKT point.
pub fn kkt_residual(solution: &SubSolution, spec: &SubproblemSpec<'_>) -> f64 {
    let model = spec.model(1.0);
    let v = model.encode(&solution.iterate);
    model.kkt_residual(&v, &solution.multipliers)
}

/// Solves the subproblem with a log-barrier interior method.
pub fn solve_subproblem(spec: &SubproblemSpec<'_>) -> SubSolution {
    let inst = spec.instance;
    let infeasible = |it: Iterate| SubSolution {
        objective: f64::NEG_INFINITY,
        kkt_residual: f64::INFINITY,
        status: SubStatus::Infeasible,
        multipliers: Multipliers::zeros(inst.k(), inst.n_f()),
        newton_steps: 0,
        iterate: it,
    };
    let start = match (&spec.start, spec.infeasible) {
        (Some(s), false) => s.clone(),
        _ => {
            return infeasible(Iterate {
                p_tilde: spec.p_ref.clone(),
                r: Position3D::new(0.0, 0.0, spec.z_ref),
                theta: spec.theta_ref.clone(),
                branch: spec.branch,
            })
        }
    };

    let model = spec.model(SOLVER_LENGTH_SCALE);
    let mut v = model.encode(&start);
    if model.barrier_value(&v, 1.0).is_none() {
        return infeasible(start);
    }
    let m = model.slacks(&v).len() as f64;
    let mut t = initial_barrier_weight(&model, &v);
    let mut steps = 0usize;
    loop {
        let objective = model.surrogate(&v, None, None);
        let last_stage = m / t <= 0.1 * spec.kkt_tol * (1.0 + objective.abs());
        let tol = if last_stage { 1e-14 } else { 1e-8 };
        let path = FullBarrier { model: &model, t };
        steps += center(&path, &mut v, tol, spec.max_newton_steps.saturating_sub(steps));
        if last_stage || steps >= spec.max_newton_steps {
            break;
        }
        t *= BARRIER_GROWTH;
    }

    let slacks = model.slacks(&v);
    let mut multipliers = model.multipliers_from(&slacks, t);
    let mut residual = model.kkt_residual(&v, &multipliers);
    if let Some((w, m, r, s)) = finish_on_active_set(&model, &v, t, spec.max_newton_steps) {
        if r <= residual.max(spec.kkt_tol) {
            (v, multipliers, residual) = (w, m, r);
            steps += s;
        }
    }
    let iterate = model.decode(&v, &start);
    let status = if residual <= spec.kkt_tol {
        SubStatus::Optimal
    } else {
        SubStatus::MaxIter
    };
    SubSolution {
        objective: spec.surrogate(&iterate.p_tilde, &iterate.theta),
        kkt_residual: residual,
        status,
        multipliers,
        newton_steps: steps,
        iterate,
    }
}

/// Least-squares fit of the barrier weight to the dual residual at the
/// starting point, kept within a range that avoids long damped phases.
fn initial_barrier_weight(model: &Model<'_>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut grad_s = vec![0.0; n];
    model.surrogate(v, Some(&mut grad_s), None);
    let mut grad_b = vec![0.0; n];
    for s in model.slacks(v) {
        for &(i, gi) in &s.grad {
            grad_b[i] -= gi / s.value;
        }
    }
    // minimize ‖−t∇S + ∇barrier‖ over t.
    let num: f64 = grad_s.iter().zip(&grad_b).map(|(a, b)| a * b).sum();
    let den: f64 = grad_s.iter().map(|a| a * a).sum();
    let t = if den > 0.0 { num / den } else { 1.0 };
    if t.is_finite() {
        t.clamp(1.0, 10.0)
    } else {
        1.0
    }
}

/// A barrier function minimized by `center`. Points are full-length
/// variable vectors; Newton directions may live in a reduced space.
trait Centering {
    fn value(&self, v: &[f64]) -> Option<f64>;
    fn derivatives(&self, v: &[f64]) -> (DVector<f64>, DMatrix<f64>);
    fn advance(&self, v: &[f64], dir: &DVector<f64>, step: f64, out: &mut [f64]);
}

struct FullBarrier<'m, 's> {
    model: &'m Model<'s>,
    t: f64,
}

impl Centering for FullBarrier<'_, '_> {
    fn value(&self, v: &[f64]) -> Option<f64> {
        self.model.barrier_value(v, self.t)
    }

    fn derivatives(&self, v: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        self.model.barrier_derivatives(v, self.t)
    }

    fn advance(&self, v: &[f64], dir: &DVector<f64>, step: f64, out: &mut [f64]) {
        for i in 0..v.len() {
            out[i] = v[i] + step * dir[i];
        }
    }
}

/// The barrier problem with an identified active set held as equalities:
/// `θ_k` of each user in `tight` equals the squared distance, and the powers
/// in `idle` stay at zero. Those slacks leave the barrier.
struct ActiveSetBarrier<'m, 's> {
    model: &'m Model<'s>,
    t: f64,
    tight: Vec<usize>,
    /// Full indices of the remaining variables.
    free: Vec<usize>,
    held: Vec<Kind>,
}

impl ActiveSetBarrier<'_, '_> {
    fn complete(&self, v: &mut [f64]) {
        for &k in &self.tight {
            v[self.model.spec.layout.theta_var[k].unwrap()] = self.model.dist_sq(v, k);
        }
    }
}

impl Centering for ActiveSetBarrier<'_, '_> {
    fn value(&self, v: &[f64]) -> Option<f64> {
        self.model.barrier_value_except(v, self.t, &self.held)
    }

    fn derivatives(&self, v: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let model = self.model;
        let layout = &model.spec.layout;
        let (grad, hess) = model.barrier_derivatives_except(v, self.t, &self.held);
        let (x, y, z) = model.position(v);
        // Jacobian of the full variables with respect to the free ones.
        let mut jac = DMatrix::zeros(layout.n, self.free.len());
        for (j, &f) in self.free.iter().enumerate() {
            jac[(f, j)] = 1.0;
        }
        let mut curvature = vec![0.0; layout.n];
        for &k in &self.tight {
            let tv = layout.theta_var[k].unwrap();
            let (ux, uy) = model.users[k];
            for (var, delta) in [(layout.x, x - ux), (layout.y, y - uy), (layout.z, z)] {
                if let Some(ix) = var {
                    let j = self.free.iter().position(|&f| f == ix).unwrap();
                    jac[(tv, j)] = 2.0 * delta;
                    curvature[ix] += 2.0 * grad[tv];
                }
            }
        }
        let reduced_grad = jac.transpose() * &grad;
        let mut reduced_hess = jac.transpose() * hess * &jac;
        for (j, &f) in self.free.iter().enumerate() {
            reduced_hess[(j, j)] += curvature[f];
        }
        (reduced_grad, reduced_hess)
    }

    fn advance(&self, v: &[f64], dir: &DVector<f64>, step: f64, out: &mut [f64]) {
        out.copy_from_slice(v);
        for (j, &f) in self.free.iter().enumerate() {
            out[f] += step * dir[j];
        }
        self.complete(out);
    }
}

/// Re-centres at the final barrier weight with the active set the barrier
/// identified held exactly: powers of users whose whole row sits below
/// `p_max/√(t·(1+|S|))` go to zero and the distance constraints of the
/// other users become equalities. Multipliers of the held constraints are
/// refit from stationarity. Returns the point, multipliers, KKT residual
/// and Newton steps, or `None` when nothing is held or centering fails.
fn finish_on_active_set(
    model: &Model<'_>,
    v: &[f64],
    t: f64,
    budget: usize,
) -> Option<(Vec<f64>, Multipliers, f64, usize)> {
    let layout = &model.spec.layout;
    let n_p = layout.n_power();
    let objective = model.surrogate(v, None, None);
    let floor = model.spec.instance.sys.p_max / (t * (1.0 + objective.abs())).sqrt();
    let mut w = v.to_vec();
    let mut held = Vec::new();
    let mut tight = Vec::new();
    for &k in &layout.active_users {
        let row: Vec<usize> = (0..n_p).filter(|&a| layout.pairs[a].0 == k).collect();
        if row.iter().all(|&a| v[a] < floor) {
            for a in row {
                w[a] = 0.0;
                held.push(Kind::PowerLower(a));
            }
        } else if model.dist_sq(v, k) > 0.0 {
            tight.push(k);
            held.push(Kind::Distance(k));
        }
    }
    let fixed: Vec<usize> = held
        .iter()
        .map(|kind| match *kind {
            Kind::PowerLower(a) => a,
            Kind::Distance(k) => layout.theta_var[k].unwrap(),
            _ => unreachable!(),
        })
        .collect();
    let free = (0..layout.n).filter(|i| !fixed.contains(i)).collect();
    let reduced = ActiveSetBarrier {
        model,
        t,
        tight,
        free,
        held,
    };
    reduced.complete(&mut w);
    reduced.value(&w)?;
    let steps = center(&reduced, &mut w, 1e-14, budget);

    let kept: Vec<Slack> = model
        .slacks(&w)
        .into_iter()
        .filter(|s| !reduced.held.contains(&s.kind))
        .collect();
    let mut mult = model.multipliers_from(&kept, t);
    let mut grad_s = vec![0.0; layout.n];
    model.surrogate(&w, Some(&mut grad_s), None);
    let l2 = model.len * model.len;
    for kind in &reduced.held {
        match *kind {
            Kind::PowerLower(a) => {
                let shared = mult.power_budget + mult.solar_budget;
                mult.power_lower[layout.pairs[a]] = (shared - grad_s[a]).max(0.0);
            }
            Kind::Distance(k) => {
                let tv = layout.theta_var[k].unwrap();
                let cap = mult.theta_cap[k] * l2;
                mult.distance[k] = (cap - grad_s[tv]).max(0.0) / l2;
            }
            _ => unreachable!(),
        }
    }
    let residual = model.kkt_residual(&w, &mult);
    Some((w, mult, residual, steps))
}

/// Damped Newton minimization of a barrier function. Returns the number of
/// Newton steps taken.
fn center(barrier: &impl Centering, v: &mut Vec<f64>, tol: f64, budget: usize) -> usize {
    let n = v.len();
    let mut steps = 0;
    let mut current = match barrier.value(v) {
        Some(f) => f,
        None => return 0,
    };
    let mut previous = f64::INFINITY;
    let mut trial = vec![0.0; n];
    while steps < budget {
        let (grad, hess) = barrier.derivatives(v);
        let Some(dir) = newton_direction(hess, &grad) else {
            break;
        };
        let slope = grad.dot(&dir);
        let decrement2 = -slope;
        if !(decrement2 > 0.0) || decrement2 * 0.5 <= tol {
            break;
        }
        let quadratic_region = decrement2 < 0.04;
        // Near the centre the decrement falls quadratically; once it stops
        // doing so the gradient is at its rounding floor.
        if quadratic_region && decrement2 > 0.25 * previous {
            break;
        }
        previous = decrement2;
        steps += 1;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            barrier.advance(v, &dir, step, &mut trial);
            if let Some(f) = barrier.value(&trial) {
                // Full steps are safe in the quadratic region; barrier values
                // there are too close to compare reliably.
                if quadratic_region || f <= current + 0.01 * step * slope {
                    current = f;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        std::mem::swap(v, &mut trial);
    }
    steps
}

fn newton_direction(hess: DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let n = grad.len();
    let scale = (0..n).map(|i| hess[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut shift = 0.0;
    for _ in 0..12 {
        let mut h = hess.clone();
        if shift > 0.0 {
            for i in 0..n {
                h[(i, i)] += shift;
            }
        }
        if let Some(chol) = h.cholesky() {
            let dir = chol.solve(&(-grad));
            if dir.iter().all(|d| d.is_finite()) {
                return Some(dir);
            }
        }
        shift = if shift == 0.0 { 1e-12 * scale } else { shift * 100.0 };
    }
    None
}

impl Iterate {
    /// Iterate with every `θ_k` equal to the squared UAV–user distance.
    pub fn with_tight_theta(
        instance: &Instance,
        p_tilde: UserGrid<f64>,
        r: Position3D,
        branch: AltitudeBranch,
    ) -> Self {
        let theta = instance.users.iter().map(|u| r.dist_sq(u)).collect();
        Self {
            p_tilde,
            r,
            theta,
            branch,
        }
    }

    pub fn branch_label(&self) -> BranchLabel {
        self.branch.label
    }
}
