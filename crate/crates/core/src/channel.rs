//! Air-to-ground channel: free-space path loss with Rician small-scale fading.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::UserGrid;
use crate::solar::SolarParams;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn ground(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }

    pub fn dist_sq(&self, other: &Position3D) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        dx * dx + dy * dy + dz * dz
    }
}

/// Link and platform constants shared by every user in a slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemParams {
    /// Carrier centre frequency, Hz.
    pub f0: f64,
    pub n_subcarriers: usize,
    /// Subcarrier bandwidth, Hz. Rates are reported in bits/s/Hz, so this is
    /// informational.
    pub subcarrier_bw: f64,
    /// Receiver noise power, W.
    pub noise_power: f64,
    /// Transmit power cap, W.
    pub p_max: f64,
    /// Power drawn by flight and avionics, W.
    pub p_uav: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub cell_radius: f64,
    pub rician_k_db: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            f0: 2e9,
            n_subcarriers: 64,
            subcarrier_bw: 78e3,
            noise_power: 1e-14,
            p_max: 10.0,
            p_uav: 200.0,
            z_min: 100.0,
            z_max: 1500.0,
            cell_radius: 1500.0,
            rician_k_db: 3.0,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("f0", self.f0),
            ("subcarrier_bw", self.subcarrier_bw),
            ("noise_power", self.noise_power),
            ("p_max", self.p_max),
            ("p_uav", self.p_uav),
            ("z_min", self.z_min),
            ("z_max", self.z_max),
            ("cell_radius", self.cell_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_subcarriers == 0 {
            return Err(Error::domain("n_subcarriers must be >= 1"));
        }
        if self.z_min >= self.z_max {
            return Err(Error::domain(format!(
                "z_min ({}) must be below z_max ({})",
                self.z_min, self.z_max
            )));
        }
        if self.rician_k_db.is_nan() {
            return Err(Error::domain("rician_k_db is NaN"));
        }
        Ok(())
    }
}

/// One scheduling slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub sys: SystemParams,
    pub solar: SolarParams,
    pub users: Vec<Position3D>,
    /// `H_k^i = ϱ|h_k^i|²/σ²`: SNR per watt at unit distance (m²/W).
    pub h_gain: UserGrid<f64>,
}

impl Instance {
    pub fn new(
        sys: SystemParams,
        solar: SolarParams,
        users: Vec<Position3D>,
        h_gain: UserGrid<f64>,
    ) -> Result<Self> {
        let inst = Self {
            sys,
            solar,
            users,
            h_gain,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        self.sys.validate()?;
        self.solar.validate()?;
        if self.users.is_empty() {
            return Err(Error::domain("instance needs at least one user"));
        }
        if self.users.iter().any(|u| u.z != 0.0) {
            return Err(Error::domain("user positions must lie on the ground (z = 0)"));
        }
        if self.h_gain.dims() != (self.users.len(), self.sys.n_subcarriers) {
            return Err(Error::domain(format!(
                "gain matrix is {:?}, expected ({}, {})",
                self.h_gain.dims(),
                self.users.len(),
                self.sys.n_subcarriers
            )));
        }
        if self.h_gain.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::domain("channel constants must be positive and finite"));
        }
        Ok(())
    }

    /// Draws user positions and fading for `k` users from `rng`.
    pub fn sample<R: Rng + ?Sized>(
        sys: SystemParams,
        solar: SolarParams,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        sys.validate()?;
        if k == 0 {
            return Err(Error::domain("instance needs at least one user"));
        }
        let users = sample_users(rng, k, sys.cell_radius);
        let fading = sample_fading(rng, k, sys.n_subcarriers, sys.rician_k_db);
        let scale = path_gain_constant(sys.f0) / sys.noise_power;
        let h_gain = fading.map(|g| scale * g);
        Self::new(sys, solar, users, h_gain)
    }

    pub fn k(&self) -> usize {
        self.users.len()
    }

    pub fn n_f(&self) -> usize {
        self.sys.n_subcarriers
    }

    pub fn centroid(&self) -> (f64, f64) {
        let n = self.users.len() as f64;
        let (sx, sy) = self
            .users
            .iter()
            .fold((0.0, 0.0), |(sx, sy), u| (sx + u.x, sy + u.y));
        (sx / n, sy / n)
    }

    /// Per-watt SNR `H_k^i / ‖r − r_k‖²` at UAV position `r`.
    pub fn effective_gain(&self, k: usize, i: usize, r: &Position3D) -> f64 {
        self.h_gain[(k, i)] / r.dist_sq(&self.users[k])
    }
}

/// Free-space constant `ϱ = (c / 4πf0)²`.
pub fn path_gain_constant(f0: f64) -> f64 {
    let base = SPEED_OF_LIGHT / (4.0 * PI * f0);
    base * base
}

/// `k` points uniform over the disk of the given radius, on the ground.
pub fn sample_users<R: Rng + ?Sized>(rng: &mut R, k: usize, radius: f64) -> Vec<Position3D> {
    (0..k)
        .map(|_| {
            let rho = radius * rng.random::<f64>().sqrt();
            let phi = 2.0 * PI * rng.random::<f64>();
            Position3D::ground(rho * phi.cos(), rho * phi.sin())
        })
        .collect()
}

/// Power gains `|h|²` with unit mean: `h = sqrt(κ/(κ+1)) + w`,
/// `w ~ CN(0, 1/(κ+1))`, `κ = 10^(K_dB/10)`.
pub fn sample_fading<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
    n_f: usize,
    rician_k_db: f64,
) -> UserGrid<f64> {
    let kappa = 10f64.powf(rician_k_db / 10.0);
    if kappa.is_infinite() {
        return UserGrid::filled(k, n_f, 1.0);
    }
    let los = (kappa / (kappa + 1.0)).sqrt();
    let sigma = (0.5 / (kappa + 1.0)).sqrt();
    UserGrid::from_fn(k, n_f, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        let (re, im) = (los + sigma * re, sigma * im);
        re * re + im * im
    })
}

/// Interference-free rate `log2(1 + H·p/‖r − r_k‖²)` in bits/s/Hz.
pub fn rate_per_subcarrier(p: f64, h_gain: f64, r: &Position3D, r_k: &Position3D) -> Result<f64> {
    if p.is_nan() || p < 0.0 {
        return Err(Error::domain(format!("transmit power must be >= 0, got {p}")));
    }
    let d2 = r.dist_sq(r_k);
    if d2 == 0.0 {
        return Err(Error::domain("UAV and user positions coincide"));
    }
    Ok((h_gain * p / d2).ln_1p() / std::f64::consts::LN_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn path_gain_reference_values() {
        let rho = path_gain_constant(2e9);
        assert!((rho - 1.4229e-4).abs() < 5e-8, "{rho}");
        let quarter = path_gain_constant(4e9);
        assert!((rho / quarter - 4.0).abs() < 1e-12);
        assert!((path_gain_constant(SPEED_OF_LIGHT / (4.0 * PI)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn users_inside_cell_and_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let ua = sample_users(&mut a, 3, 1500.0);
        let ub = sample_users(&mut b, 3, 1500.0);
        assert_eq!(ua, ub);
        for u in &ua {
            assert!(u.x * u.x + u.y * u.y <= 1500.0 * 1500.0);
            assert_eq!(u.z, 0.0);
        }
    }

    #[test]
    fn fading_pure_los_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let los = sample_fading(&mut rng, 2, 4, f64::INFINITY);
        assert!(los.iter().all(|&g| g == 1.0));
        let a = sample_fading(&mut ChaCha8Rng::seed_from_u64(5), 3, 8, 3.0);
        let b = sample_fading(&mut ChaCha8Rng::seed_from_u64(5), 3, 8, 3.0);
        assert_eq!(a, b);
    }

    #[test]
    fn rate_examples() {
        let uav = Position3D::new(0.0, 0.0, 1000.0);
        let user = Position3D::ground(0.0, 0.0);
        assert_eq!(rate_per_subcarrier(0.0, 1e10, &uav, &user).unwrap(), 0.0);
        let r = rate_per_subcarrier(0.1, 1e10, &uav, &user).unwrap();
        assert!((r - 1001f64.log2()).abs() < 1e-12);
        assert!((r - 9.9672).abs() < 1e-4);
        // High SNR: doubling distance costs about two bits.
        let far = Position3D::new(0.0, 0.0, 2000.0);
        let hi = rate_per_subcarrier(100.0, 1e12, &uav, &user).unwrap();
        let lo = rate_per_subcarrier(100.0, 1e12, &far, &user).unwrap();
        assert!((hi - lo - 2.0).abs() < 1e-5);
        assert!(rate_per_subcarrier(1.0, 1e10, &user, &user).is_err());
        assert!(rate_per_subcarrier(-1.0, 1e10, &uav, &user).is_err());
    }

    #[test]
    fn sampled_instance_is_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sys = SystemParams {
            n_subcarriers: 8,
            ..SystemParams::default()
        };
        let inst = Instance::sample(sys, SolarParams::default(), 4, &mut rng).unwrap();
        assert_eq!(inst.h_gain.dims(), (4, 8));
        assert!(inst.h_gain.iter().all(|&h| h > 0.0));
    }
}
