//! Reference schemes: a UAV pinned above the cell centre, and a random
//! subcarrier assignment with everything else optimized.

use rand::Rng;

use crate::channel::Instance;
use crate::error::Result;
use crate::grid::UserGrid;
use crate::sca::{sca_solve_restricted, Solution, SolverOptions};
use crate::subproblem::Restrictions;

/// Horizontal position fixed at the cell centre; altitude, powers and
/// assignment optimized.
pub fn baseline1_fixed_xy(instance: &Instance, options: &SolverOptions) -> Result<Solution> {
    let restrictions = Restrictions {
        pin_xy: Some((0.0, 0.0)),
        power_mask: None,
    };
    sca_solve_restricted(instance, options, &restrictions)
}

/// Each subcarrier goes to a user drawn uniformly at random; position,
/// altitude and powers are optimized for that assignment.
pub fn baseline2_random_assignment<R: Rng + ?Sized>(
    instance: &Instance,
    options: &SolverOptions,
    rng: &mut R,
) -> Result<Solution> {
    let mask = random_assignment_mask(rng, instance.k(), instance.n_f());
    let restrictions = Restrictions {
        pin_xy: None,
        power_mask: Some(mask),
    };
    sca_solve_restricted(instance, options, &restrictions)
}

/// One uniformly drawn user per subcarrier.
pub fn random_assignment_mask<R: Rng + ?Sized>(rng: &mut R, k: usize, n_f: usize) -> UserGrid<bool> {
    let owners: Vec<usize> = (0..n_f).map(|_| rng.random_range(0..k)).collect();
    UserGrid::from_fn(k, n_f, |user, i| owners[i] == user)
}
