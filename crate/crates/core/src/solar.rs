//! Altitude-dependent solar harvesting model.
//!
//! The panel output is `η·S·G·φ(z)·φcloud(d)`, where `φ(z) = α − β·e^(−z/δ)`
//! is the atmospheric transmittance and `φcloud(d) = e^(−β_c·d)` attenuates
//! light over the in-cloud path length `d`. Three altitude regimes follow:
//! above the cloud top (`z ≥ L_up`), inside the layer (`L_low ≤ z < L_up`),
//! and below it (`z < L_low`).
//!
//! Rewritten with `A = ηSGα`, `B = ηSGβ`, `C1 = e^(−β_c·L_up)`,
//! `C2 = e^(−β_c·(L_up−L_low))` and `M(z) = A·C1·e^(β_c·z)`, only the
//! in-cloud branch is non-concave (through the convex `M`). The SCA loop
//! replaces `M` with its tangent at the current altitude, which yields a
//! concave global underestimator of the in-cloud branch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants of the solar harvesting model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolarParams {
    /// Maximum atmospheric transmittance.
    pub alpha: f64,
    /// Atmospheric extinction coefficient.
    pub beta: f64,
    /// Scale height, m.
    pub delta: f64,
    /// Cloud absorption coefficient, 1/m.
    pub beta_c: f64,
    /// Cloud bottom altitude, m.
    pub l_low: f64,
    /// Cloud top altitude, m.
    pub l_up: f64,
    /// Panel conversion efficiency.
    pub eta: f64,
    /// Panel area, m².
    pub s_area: f64,
    /// Average solar radiation, W/m².
    pub g_rad: f64,
}

impl Default for SolarParams {
    fn default() -> Self {
        Self {
            alpha: 0.8978,
            beta: 0.2804,
            delta: 8000.0,
            beta_c: 0.01,
            l_low: 700.0,
            l_up: 1400.0,
            eta: 0.4,
            s_area: 1.0,
            g_rad: 1367.0,
        }
    }
}

impl SolarParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.alpha > 0.0 && self.alpha <= 1.0, "0 < alpha <= 1"),
            (self.beta >= 0.0 && self.beta < self.alpha, "0 <= beta < alpha"),
            (self.delta > 0.0, "delta > 0"),
            (self.beta_c >= 0.0, "beta_c >= 0"),
            (self.l_low >= 0.0 && self.l_low <= self.l_up, "0 <= l_low <= l_up"),
            (self.eta > 0.0 && self.eta <= 1.0, "0 < eta <= 1"),
            (self.s_area > 0.0, "s_area > 0"),
            (self.g_rad > 0.0, "g_rad > 0"),
        ];
        for (ok, what) in checks {
            if !ok || self.has_nan() {
                return Err(Error::domain(format!("solar parameters violate {what}")));
            }
        }
        Ok(())
    }

    fn has_nan(&self) -> bool {
        [
            self.alpha,
            self.beta,
            self.delta,
            self.beta_c,
            self.l_low,
            self.l_up,
            self.eta,
            self.s_area,
            self.g_rad,
        ]
        .iter()
        .any(|v| !v.is_finite())
    }

    fn panel_scale(&self) -> f64 {
        self.eta * self.s_area * self.g_rad
    }

    pub fn a(&self) -> f64 {
        self.panel_scale() * self.alpha
    }

    pub fn b(&self) -> f64 {
        self.panel_scale() * self.beta
    }

    pub fn c1(&self) -> f64 {
        (-self.beta_c * self.l_up).exp()
    }

    pub fn c2(&self) -> f64 {
        (-self.beta_c * (self.l_up - self.l_low)).exp()
    }

    /// Convex part of the in-cloud branch, `A·C1·e^(β_c·z)`.
    pub fn m(&self, z: f64) -> f64 {
        self.a() * self.c1() * (self.beta_c * z).exp()
    }

    fn transmittance_unchecked(&self, z: f64) -> f64 {
        self.alpha - self.beta * (-z / self.delta).exp()
    }

    /// Panel output from the physical three-case form. No domain check.
    pub(crate) fn power(&self, z: f64) -> f64 {
        let attenuation = match BranchLabel::of(z, self) {
            BranchLabel::AboveCloud => 1.0,
            BranchLabel::InCloud => (-self.beta_c * (self.l_up - z)).exp(),
            BranchLabel::BelowCloud => (-self.beta_c * (self.l_up - self.l_low)).exp(),
        };
        self.panel_scale() * self.transmittance_unchecked(z) * attenuation
    }

    /// Branch expression of the underestimator together with its first and
    /// second derivatives in `z`. No domain check.
    pub(crate) fn underestimate(&self, z: f64, z_ref: f64, label: BranchLabel) -> (f64, f64, f64) {
        let (a, b) = (self.a(), self.b());
        match label {
            BranchLabel::AboveCloud | BranchLabel::BelowCloud => {
                let scale = if label == BranchLabel::AboveCloud {
                    1.0
                } else {
                    self.c2()
                };
                let e = (-z / self.delta).exp();
                let d = self.delta;
                (
                    scale * (a - b * e),
                    scale * b * e / d,
                    -scale * b * e / (d * d),
                )
            }
            BranchLabel::InCloud => {
                let c1 = self.c1();
                let gamma = self.beta_c - 1.0 / self.delta;
                let m_ref = a * c1 * (self.beta_c * z_ref).exp();
                let tail = b * c1 * (gamma * z).exp();
                (
                    m_ref * (1.0 + self.beta_c * (z - z_ref)) - tail,
                    m_ref * self.beta_c - gamma * tail,
                    -gamma * gamma * tail,
                )
            }
        }
    }

    /// Maximizer and maximum of the (concave) underestimator branch over
    /// `[lo, hi]`.
    pub(crate) fn max_underestimate(
        &self,
        (lo, hi): (f64, f64),
        z_ref: f64,
        label: BranchLabel,
    ) -> (f64, f64) {
        let slope = |z| self.underestimate(z, z_ref, label).1;
        let z_star = if slope(hi) >= 0.0 {
            hi
        } else if slope(lo) <= 0.0 {
            lo
        } else {
            // Only the in-cloud branch can turn over inside the interval, and
            // only when β_c > 1/δ.
            let gamma = self.beta_c - 1.0 / self.delta;
            let root = (self.a() * self.beta_c * (self.beta_c * z_ref).exp() / (self.b() * gamma))
                .ln()
                / gamma;
            root.clamp(lo, hi)
        };
        (z_star, self.underestimate(z_star, z_ref, label).0)
    }

    /// Smallest altitude in `[lo, hi]` at which the true panel output reaches
    /// `level`, or `None` when it never does. The output is nondecreasing in
    /// altitude on every branch.
    pub(crate) fn lowest_altitude_reaching(&self, level: f64, (lo, hi): (f64, f64)) -> Option<f64> {
        if self.power(hi) < level {
            return None;
        }
        if self.power(lo) >= level {
            return Some(lo);
        }
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if self.power(mid) >= level {
                b = mid;
            } else {
                a = mid;
            }
            if b - a <= 1e-12 * b.abs().max(1.0) {
                break;
            }
        }
        Some(b)
    }
}

/// The three altitude regimes of the panel output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchLabel {
    AboveCloud,
    InCloud,
    BelowCloud,
}

impl BranchLabel {
    /// `z = L_up` is above the cloud and `z = L_low` is inside it.
    pub fn of(z: f64, p: &SolarParams) -> Self {
        if z >= p.l_up {
            BranchLabel::AboveCloud
        } else if z >= p.l_low {
            BranchLabel::InCloud
        } else {
            BranchLabel::BelowCloud
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BranchLabel::AboveCloud => "above_cloud",
            BranchLabel::InCloud => "in_cloud",
            BranchLabel::BelowCloud => "below_cloud",
        }
    }
}

/// A regime label with its closed altitude interval, already clipped to the
/// admissible flight band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AltitudeBranch {
    pub label: BranchLabel,
    pub z_interval: (f64, f64),
}

impl AltitudeBranch {
    pub fn contains(&self, z: f64) -> bool {
        let (lo, hi) = self.z_interval;
        let slack = 1e-9 * hi.abs().max(1.0);
        z >= lo - slack && z <= hi + slack
    }

    /// Branch of the given regime clipped to `[z_min, z_max]`; `None` when the
    /// intersection is empty.
    pub fn clipped(label: BranchLabel, p: &SolarParams, z_min: f64, z_max: f64) -> Option<Self> {
        let interval = match label {
            BranchLabel::AboveCloud => {
                (z_max >= p.l_up).then(|| (z_min.max(p.l_up), z_max))
            }
            BranchLabel::InCloud => {
                let lo = z_min.max(p.l_low);
                (lo < p.l_up && lo <= z_max).then(|| (lo, z_max.min(p.l_up)))
            }
            BranchLabel::BelowCloud => (z_min < p.l_low).then(|| (z_min, z_max.min(p.l_low))),
        }?;
        (interval.0 <= interval.1).then_some(Self {
            label,
            z_interval: interval,
        })
    }

    /// The nonempty branches of `[z_min, z_max]`, highest first.
    pub fn all_within(p: &SolarParams, z_min: f64, z_max: f64) -> Vec<Self> {
        [
            BranchLabel::AboveCloud,
            BranchLabel::InCloud,
            BranchLabel::BelowCloud,
        ]
        .into_iter()
        .filter_map(|label| Self::clipped(label, p, z_min, z_max))
        .collect()
    }
}

fn check_altitude(z: f64) -> Result<()> {
    if z.is_nan() || z < 0.0 {
        return Err(Error::domain(format!("altitude must be >= 0, got {z}")));
    }
    Ok(())
}

/// Atmospheric transmittance `α − β·e^(−z/δ)` at altitude `z` (m).
pub fn transmittance(z: f64, p: &SolarParams) -> Result<f64> {
    check_altitude(z)?;
    Ok(p.transmittance_unchecked(z))
}

/// Fraction of sunlight left after `d_cloud` metres of cloud.
pub fn cloud_attenuation(d_cloud: f64, p: &SolarParams) -> Result<f64> {
    if d_cloud.is_nan() || d_cloud < 0.0 {
        return Err(Error::domain(format!(
            "cloud path length must be >= 0, got {d_cloud}"
        )));
    }
    Ok((-p.beta_c * d_cloud).exp())
}

/// Electrical panel output (W) at altitude `z`.
pub fn solar_power(z: f64, p: &SolarParams) -> Result<f64> {
    check_altitude(z)?;
    Ok(p.power(z))
}

/// Same quantity as [`solar_power`], evaluated through the `A, B, C1, C2, M`
/// constants instead of the transmittance and cloud factors.
pub fn solar_power_compact(z: f64, p: &SolarParams) -> Result<f64> {
    check_altitude(z)?;
    let (a, b) = (p.a(), p.b());
    Ok(match BranchLabel::of(z, p) {
        BranchLabel::AboveCloud => a - b * (-z / p.delta).exp(),
        BranchLabel::InCloud => p.m(z) - b * p.c1() * ((p.beta_c - 1.0 / p.delta) * z).exp(),
        BranchLabel::BelowCloud => a * p.c2() - b * p.c2() * (-z / p.delta).exp(),
    })
}

/// Concave underestimator of the panel output on `branch`, tight at `z_ref`.
///
/// The above- and below-cloud branches are returned exactly; in the cloud
/// the convex `M(z)` is replaced by its tangent at `z_ref`.
pub fn solar_power_underestimator(
    z: f64,
    z_ref: f64,
    branch: &AltitudeBranch,
    p: &SolarParams,
) -> Result<f64> {
    check_altitude(z)?;
    if !branch.contains(z_ref) {
        return Err(Error::domain(format!(
            "linearization altitude {z_ref} is outside the {} interval {:?}",
            branch.label.as_str(),
            branch.z_interval
        )));
    }
    if !branch.contains(z) {
        return Err(Error::domain(format!(
            "altitude {z} is outside the {} interval {:?}",
            branch.label.as_str(),
            branch.z_interval
        )));
    }
    Ok(p.underestimate(z, z_ref, branch.label).0)
}
