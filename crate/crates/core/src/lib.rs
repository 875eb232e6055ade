//! Joint placement, power and subcarrier allocation for a solar-powered UAV
//! serving ground users over an OFDMA downlink.
//!
//! The mixed-integer sum-rate problem is relaxed to overlapping powers,
//! rewritten as a difference of concave functions, and solved by successive
//! convex approximation ([`sca`]). [`oracle`] provides a grid-search
//! reference, [`baselines`] two simpler schemes, and [`harness`] runs Monte
//! Carlo campaigns.

pub mod baselines;
pub mod channel;
pub mod error;
pub mod grid;
pub mod harness;
pub mod oracle;
pub mod sca;
pub mod solar;
pub mod subproblem;
pub mod validate;

pub use channel::{Instance, Position3D, SystemParams};
pub use error::{Error, Result};
pub use grid::UserGrid;
pub use sca::{sca_solve, SolveStatus, Solution, SolverOptions};
pub use solar::{AltitudeBranch, BranchLabel, SolarParams};
