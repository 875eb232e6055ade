//! Brute-force reference: best-gain assignment plus water-filling at every
//! point of a 3-D grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{Instance, Position3D};
use crate::error::{Error, Result};
use crate::grid::UserGrid;
use crate::sca::{evaluate_original, Solution, SolveStatus};

#[derive(Debug, Clone, PartialEq)]
pub struct WaterFilling {
    pub powers: Vec<f64>,
    /// `μ` with `p_i = max(0, μ − 1/g_i)`.
    pub water_level: f64,
}

/// Maximizes `Σ log2(1 + g_i p_i)` subject to `Σ p_i ≤ budget`, `p_i ≥ 0`.
///
/// Solved exactly by sorting the channels: the active set is always a
/// prefix of the channels ordered by decreasing gain.
pub fn waterfilling(gains: &[f64], budget: f64) -> Result<WaterFilling> {
    if gains.is_empty() {
        return Err(Error::domain("water-filling needs at least one channel"));
    }
    if gains.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
        return Err(Error::domain("channel gains must be positive and finite"));
    }
    if !(budget >= 0.0 && budget.is_finite()) {
        return Err(Error::domain(format!("power budget must be >= 0, got {budget}")));
    }
    let mut floors: Vec<f64> = gains.iter().map(|g| 1.0 / g).collect();
    floors.sort_by(f64::total_cmp);
    let mut level = floors[0];
    let mut acc = 0.0;
    for (n, &floor) in floors.iter().enumerate() {
        acc += floor;
        let candidate = (budget + acc) / (n + 1) as f64;
        // Stop before a channel whose floor lies above the water.
        if n > 0 && candidate <= floor {
            break;
        }
        level = candidate;
    }
    let powers = gains.iter().map(|g| (level - 1.0 / g).max(0.0)).collect();
    Ok(WaterFilling {
        powers,
        water_level: level,
    })
}

/// For each subcarrier, the user with the largest `H_k^i/‖r − r_k‖²`
/// (lowest index on ties).
pub fn best_gain_users(instance: &Instance, r: &Position3D) -> Vec<usize> {
    let d2: Vec<f64> = instance.users.iter().map(|u| r.dist_sq(u)).collect();
    (0..instance.n_f())
        .map(|i| {
            let mut best = 0;
            for k in 1..instance.k() {
                if instance.h_gain[(k, i)] / d2[k] > instance.h_gain[(best, i)] / d2[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub fn best_gain_assignment(instance: &Instance, r: &Position3D) -> UserGrid<bool> {
    let owners = best_gain_users(instance, r);
    UserGrid::from_fn(instance.k(), instance.n_f(), |k, i| owners[i] == k)
}

/// Transmit budget `min(P_max, P_solar(z) − P_UAV)`, or `None` when the UAV
/// cannot fly at `z`.
pub fn transmit_budget(instance: &Instance, z: f64) -> Option<f64> {
    let spare = instance.solar.power(z) - instance.sys.p_uav;
    (spare > 0.0).then(|| spare.min(instance.sys.p_max))
}

/// Sum rate of the best-gain assignment with water-filled powers at `r`.
pub fn position_value(instance: &Instance, r: &Position3D, budget: f64) -> Result<f64> {
    let owners = best_gain_users(instance, r);
    let gains: Vec<f64> = owners
        .iter()
        .enumerate()
        .map(|(i, &k)| instance.effective_gain(k, i, r))
        .collect();
    let wf = waterfilling(&gains, budget)?;
    Ok(sum_log(&gains, &wf.powers))
}

fn sum_log(gains: &[f64], powers: &[f64]) -> f64 {
    gains
        .iter()
        .zip(powers)
        .map(|(g, p)| (g * p).ln_1p() / std::f64::consts::LN_2)
        .sum()
}

/// Best value over all `K^N_F` assignments at `r`, each with water-filled
/// powers. Only for tiny instances.
pub fn exhaustive_assignment_value(
    instance: &Instance,
    r: &Position3D,
    budget: f64,
) -> Result<(Vec<usize>, f64)> {
    let (k, n_f) = (instance.k(), instance.n_f());
    if k > 2 || n_f > 4 {
        return Err(Error::domain(format!(
            "exhaustive assignment is limited to K <= 2 and N_F <= 4, got K = {k}, N_F = {n_f}"
        )));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut owners = vec![0usize; n_f];
    for code in 0..k.pow(n_f as u32) {
        let mut c = code;
        for owner in owners.iter_mut() {
            *owner = c % k;
            c /= k;
        }
        let gains: Vec<f64> = owners
            .iter()
            .enumerate()
            .map(|(i, &u)| instance.effective_gain(u, i, r))
            .collect();
        let wf = waterfilling(&gains, budget)?;
        let value = sum_log(&gains, &wf.powers);
        if best.as_ref().is_none_or(|(_, b)| value > *b) {
            best = Some((owners.clone(), value));
        }
    }
    Ok(best.expect("at least one assignment"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    /// Horizontal pitch, m.
    pub pitch: f64,
    /// Vertical pitch, m.
    pub z_pitch: f64,
    /// Search all assignments instead of best-gain (tiny instances only).
    pub exhaustive: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            pitch: 25.0,
            z_pitch: 10.0,
            exhaustive: false,
        }
    }
}

/// Horizontal grid points inside the cell: a square lattice centred at the
/// origin.
pub fn horizontal_grid(radius: f64, pitch: f64) -> Vec<(f64, f64)> {
    let n = (radius / pitch).floor() as i64;
    let limit = radius * radius * (1.0 + 1e-12);
    let mut pts = Vec::new();
    for ix in -n..=n {
        for iy in -n..=n {
            let (x, y) = (ix as f64 * pitch, iy as f64 * pitch);
            if x * x + y * y <= limit {
                pts.push((x, y));
            }
        }
    }
    pts
}

/// Altitudes `z_min, z_min + pitch, …` plus `z_max` itself.
pub fn altitude_grid(z_min: f64, z_max: f64, pitch: f64) -> Vec<f64> {
    let mut zs = Vec::new();
    let mut j = 0u32;
    loop {
        let z = z_min + f64::from(j) * pitch;
        if z > z_max - 1e-9 {
            break;
        }
        zs.push(z);
        j += 1;
    }
    zs.push(z_max);
    zs
}

/// Grid search over UAV positions. Ties go to the first grid point in
/// (x, y, z) enumeration order, so the result does not depend on thread
/// scheduling.
pub fn grid_search_oracle(instance: &Instance, spec: &GridSpec) -> Result<Solution> {
    instance.validate()?;
    if !(spec.pitch > 0.0 && spec.z_pitch > 0.0) {
        return Err(Error::domain("grid pitches must be positive"));
    }
    let sys = &instance.sys;
    let heights: Vec<(f64, f64)> = altitude_grid(sys.z_min, sys.z_max, spec.z_pitch)
        .into_iter()
        .filter_map(|z| transmit_budget(instance, z).map(|b| (z, b)))
        .collect();
    if heights.is_empty() {
        return Err(Error::Infeasible {
            constraint: "C1",
            detail: format!(
                "no grid altitude up to z_max = {} m powers the UAV ({} W)",
                sys.z_max, sys.p_uav
            ),
        });
    }
    let points: Vec<(Position3D, f64)> = horizontal_grid(sys.cell_radius, spec.pitch)
        .into_iter()
        .flat_map(|(x, y)| heights.iter().map(move |&(z, b)| (Position3D::new(x, y, z), b)))
        .collect();

    let evaluate = |r: &Position3D, budget: f64| -> Result<f64> {
        if spec.exhaustive {
            exhaustive_assignment_value(instance, r, budget).map(|(_, v)| v)
        } else {
            position_value(instance, r, budget)
        }
    };
    let values: Vec<f64> = points
        .par_iter()
        .map(|(r, b)| evaluate(r, *b))
        .collect::<Result<_>>()?;
    let (best_idx, _) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        });
    let (r, budget) = points[best_idx];

    let owners = if spec.exhaustive {
        exhaustive_assignment_value(instance, &r, budget)?.0
    } else {
        best_gain_users(instance, &r)
    };
    let gains: Vec<f64> = owners
        .iter()
        .enumerate()
        .map(|(i, &k)| instance.effective_gain(k, i, &r))
        .collect();
    let wf = waterfilling(&gains, budget)?;
    let s = UserGrid::from_fn(instance.k(), instance.n_f(), |k, i| owners[i] == k);
    let p = UserGrid::from_fn(instance.k(), instance.n_f(), |k, i| {
        if owners[i] == k {
            wf.powers[i]
        } else {
            0.0
        }
    });
    let objective = evaluate_original(instance, &s, &p, &r)?;
    let theta = instance.users.iter().map(|u| r.dist_sq(u)).collect();
    Ok(Solution {
        s,
        p_tilde: p.clone(),
        p,
        r,
        theta,
        objective_relaxed: objective,
        objective_original: objective,
        trace: Vec::new(),
        iterations: 0,
        status: SolveStatus::Converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waterfilling_textbook_example() {
        // Floors 1/g = 0.5, 1, 2; budget 1 activates two channels at level 1.25.
        let wf = waterfilling(&[2.0, 1.0, 0.5], 1.0).unwrap();
        assert!((wf.water_level - 1.25).abs() < 1e-15);
        assert!((wf.powers[0] - 0.75).abs() < 1e-15);
        assert!((wf.powers[1] - 0.25).abs() < 1e-15);
        assert_eq!(wf.powers[2], 0.0);
    }

    #[test]
    fn waterfilling_zero_budget_and_single_channel() {
        let wf = waterfilling(&[3.0, 1.0], 0.0).unwrap();
        assert!(wf.powers.iter().all(|&p| p == 0.0));
        let one = waterfilling(&[4.0], 2.5).unwrap();
        assert_eq!(one.powers, vec![2.5]);
        assert!(waterfilling(&[], 1.0).is_err());
        assert!(waterfilling(&[1.0, 0.0], 1.0).is_err());
        assert!(waterfilling(&[1.0], -1.0).is_err());
    }

    #[test]
    fn grids_cover_the_box() {
        let zs = altitude_grid(100.0, 1500.0, 10.0);
        assert_eq!(zs.first(), Some(&100.0));
        assert_eq!(zs.last(), Some(&1500.0));
        assert_eq!(zs.len(), 141);
        let odd = altitude_grid(100.0, 1505.0, 10.0);
        assert_eq!(odd.last(), Some(&1505.0));
        let xy = horizontal_grid(1500.0, 25.0);
        assert!(xy.contains(&(0.0, 0.0)));
        assert!(xy.contains(&(1500.0, 0.0)));
        assert!(xy.iter().all(|(x, y)| x * x + y * y <= 1500.0 * 1500.0 * (1.0 + 1e-12)));
    }
}
