use proptest::prelude::*;

use solar_uav::channel::rate_per_subcarrier;
use solar_uav::solar::{
    cloud_attenuation, solar_power, solar_power_compact, solar_power_underestimator, transmittance,
};
use solar_uav::{AltitudeBranch, BranchLabel, Position3D, SolarParams};

fn table() -> SolarParams {
    SolarParams::default()
}

/// Panel output from the physical constants, independent of the crate.
fn reference_power(z: f64, p: &SolarParams) -> f64 {
    let phi = p.alpha - p.beta * (-z / p.delta).exp();
    let d = if z >= p.l_up {
        0.0
    } else if z >= p.l_low {
        p.l_up - z
    } else {
        p.l_up - p.l_low
    };
    p.eta * p.s_area * p.g_rad * phi * (-p.beta_c * d).exp()
}

proptest! {
    #[test]
    fn physical_and_compact_forms_agree(z in 0.0f64..5000.0) {
        let p = table();
        let a = solar_power(z, &p).unwrap();
        let b = solar_power_compact(z, &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs());
        prop_assert!((a - reference_power(z, &p)).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn power_nondecreasing_in_altitude(z in 0.0f64..3000.0, dz in 0.0f64..500.0) {
        let p = table();
        prop_assert!(solar_power(z + dz, &p).unwrap() >= solar_power(z, &p).unwrap());
    }

    #[test]
    fn transmittance_within_bounds(z in 0.0f64..1e6) {
        let p = table();
        let t = transmittance(z, &p).unwrap();
        prop_assert!(t >= p.alpha - p.beta - 1e-15 && t <= p.alpha);
    }

    #[test]
    fn attenuation_in_unit_interval(d in 0.0f64..1e4) {
        let a = cloud_attenuation(d, &table()).unwrap();
        prop_assert!(a > 0.0 && a <= 1.0);
    }

    #[test]
    fn power_scales_with_panel_area(z in 0.0f64..3000.0, s in 0.1f64..4.0) {
        let p = table();
        let scaled = SolarParams { s_area: s, ..p };
        let ratio = solar_power(z, &scaled).unwrap() / solar_power(z, &p).unwrap();
        prop_assert!((ratio - s / p.s_area).abs() < 1e-12 * ratio);
    }

    #[test]
    fn underestimator_below_and_tight(u in 0.0f64..1.0, v in 0.0f64..1.0, which in 0usize..3) {
        let p = table();
        let branch = AltitudeBranch::all_within(&p, 100.0, 1500.0)[which];
        let (lo, hi) = branch.z_interval;
        let z = lo + u * (hi - lo);
        let z_ref = lo + v * (hi - lo);
        let under = solar_power_underestimator(z, z_ref, &branch, &p).unwrap();
        prop_assert!(under <= reference_power(z, &p) * (1.0 + 1e-12));
        let tight = solar_power_underestimator(z_ref, z_ref, &branch, &p).unwrap();
        prop_assert!((tight - reference_power(z_ref, &p)).abs() <= 1e-10 * tight.abs().max(1e-3));
    }

    #[test]
    fn in_cloud_underestimator_is_concave(a in 700.0f64..1400.0, b in 700.0f64..1400.0, z_ref in 700.0f64..1400.0) {
        let p = table();
        let branch = AltitudeBranch::clipped(BranchLabel::InCloud, &p, 100.0, 1500.0).unwrap();
        let f = |z| solar_power_underestimator(z, z_ref, &branch, &p).unwrap();
        let mid = f(0.5 * (a + b));
        prop_assert!(mid >= 0.5 * (f(a) + f(b)) - 1e-9 * mid.abs().max(1.0));
    }

    #[test]
    fn rate_monotone_in_power_and_distance(
        p in 0.0f64..10.0,
        dp in 0.0f64..5.0,
        z in 100.0f64..1500.0,
        dz in 0.0f64..500.0,
        x in -1500.0f64..1500.0,
    ) {
        let user = Position3D::ground(x, 0.0);
        let near = Position3D::new(0.0, 0.0, z);
        let far = Position3D::new(0.0, 0.0, z + dz);
        let h = 1e10;
        let base = rate_per_subcarrier(p, h, &near, &user).unwrap();
        prop_assert!(rate_per_subcarrier(p + dp, h, &near, &user).unwrap() >= base);
        prop_assert!(rate_per_subcarrier(p, h, &far, &user).unwrap() <= base);
        prop_assert!(base >= 0.0);
    }
}

#[test]
fn negative_arguments_are_rejected() {
    let p = table();
    assert!(solar_power(-1.0, &p).is_err());
    assert!(solar_power_compact(f64::NAN, &p).is_err());
    assert!(cloud_attenuation(-1e-3, &p).is_err());
}

#[test]
fn underestimator_rejects_points_outside_the_branch() {
    let p = table();
    let above = AltitudeBranch::clipped(BranchLabel::AboveCloud, &p, 100.0, 1500.0).unwrap();
    assert!(solar_power_underestimator(1000.0, 1450.0, &above, &p).is_err());
    assert!(solar_power_underestimator(1450.0, 1000.0, &above, &p).is_err());
}
