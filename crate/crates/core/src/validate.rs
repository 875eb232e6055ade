//! Constraint checks for solutions of the original mixed-integer problem.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::channel::{Instance, Position3D};
use crate::grid::UserGrid;

/// Relative violation tolerated by [`check_constraints`] callers by default.
pub const DEFAULT_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    /// Constraint label, `C1` … `C6`.
    pub name: String,
    pub description: String,
    /// Relative violation; zero when satisfied.
    pub violation: f64,
    pub satisfied: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub checks: Vec<ConstraintCheck>,
}

impl ConstraintReport {
    pub fn is_feasible(&self) -> bool {
        self.checks.iter().all(|c| c.satisfied)
    }

    /// One line per violated constraint.
    pub fn violations(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.satisfied)
            .map(|c| format!("{} ({}): {}", c.name, c.description, c.detail))
            .collect()
    }

    pub fn violated_names(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.satisfied)
            .map(|c| c.name.as_str())
            .collect()
    }
}

impl fmt::Display for ConstraintReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let mark = if c.satisfied { "ok  " } else { "FAIL" };
            writeln!(f, "{mark} {:<3} {:<34} {}", c.name, c.description, c.detail)?;
        }
        Ok(())
    }
}

fn rel_excess(lhs: f64, rhs: f64) -> f64 {
    ((lhs - rhs) / rhs.abs().max(1.0)).max(0.0)
}

/// Checks C1–C6 for assignment `s`, powers `p` and UAV position `r`.
pub fn check_constraints(
    instance: &Instance,
    s: &UserGrid<bool>,
    p: &UserGrid<f64>,
    r: &Position3D,
    rel_tol: f64,
) -> ConstraintReport {
    let sys = &instance.sys;
    let dims_ok = s.dims() == instance.h_gain.dims() && p.dims() == instance.h_gain.dims();
    let mut checks = Vec::new();
    let mut push = |name: &str, description: &str, violation: f64, detail: String| {
        checks.push(ConstraintCheck {
            name: name.to_string(),
            description: description.to_string(),
            violation,
            satisfied: violation <= rel_tol,
            detail,
        });
    };
    if !dims_ok {
        push(
            "dim",
            "matrix dimensions",
            f64::INFINITY,
            format!(
                "s {:?}, p {:?}, expected {:?}",
                s.dims(),
                p.dims(),
                instance.h_gain.dims()
            ),
        );
        return ConstraintReport { checks };
    }

    let used: f64 = s
        .iter()
        .zip(p.iter())
        .filter(|(&on, _)| on)
        .map(|(_, &pw)| pw)
        .sum();
    let solar = instance.solar.power(r.z.max(0.0));
    let c1 = rel_excess(used + sys.p_uav, solar);
    push(
        "C1",
        "transmit + flight power <= solar",
        c1,
        format!(
            "{:.6} W + {:.3} W vs {:.6} W available at z = {:.3} m",
            used, sys.p_uav, solar, r.z
        ),
    );

    let most_negative = p.iter().fold(0.0f64, |acc, &v| acc.min(v));
    push(
        "C2",
        "nonnegative powers",
        (-most_negative / sys.p_max).max(0.0),
        format!("min p = {most_negative:.3e} W"),
    );

    push(
        "C3",
        "transmit power <= P_max",
        rel_excess(used, sys.p_max),
        format!("{:.6} W vs P_max = {:.6} W", used, sys.p_max),
    );

    let c4 = rel_excess(sys.z_min, r.z).max(rel_excess(r.z, sys.z_max));
    push(
        "C4",
        "altitude within [z_min, z_max]",
        c4,
        format!("z = {:.3} m in [{}, {}]", r.z, sys.z_min, sys.z_max),
    );

    // Binary by type; powers on unassigned pairs are reported here.
    let stray = s
        .iter()
        .zip(p.iter())
        .filter(|(&on, &pw)| !on && pw > rel_tol * sys.p_max)
        .count();
    push(
        "C5",
        "binary assignment",
        if stray == 0 { 0.0 } else { f64::INFINITY },
        format!("{stray} unassigned pairs carry power"),
    );

    let crowded = (0..s.carriers())
        .filter(|&i| s.column(i).filter(|&&on| on).count() > 1)
        .count();
    push(
        "C6",
        "at most one user per subcarrier",
        if crowded == 0 { 0.0 } else { f64::INFINITY },
        format!("{crowded} shared subcarriers"),
    );

    ConstraintReport { checks }
}
