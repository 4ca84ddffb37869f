//! Worst-case linear-rate certification for distributed first-order
//! optimization algorithms running over adversarially time-varying graphs.
//!
//! The crate is organized bottom-up:
//!
//! * [`toolkit`]: small dense linear-algebra helpers.
//! * [`algolib`]: algorithms in state-space form, the built-in catalog and
//!   fixed-point / implementability checks.
//! * [`oracle`]: a barrier interior-point solver for small dense LMI programs.
//! * [`certifier`]: the rate-certificate LMIs, feasibility and bisection on the rate.
//! * [`svl`]: parameter design for the SVL template and its closed-form certificate.
//! * [`tuner`]: derivative-free tuning of catalog algorithms against the certified rate.
//! * [`netsim`]: network simulation with sector-bounded functions and random Laplacians.
//! * [`adversary`]: greedy worst-case trajectories and Laplacian reconstruction.
//! * [`cli`]: the command-line front end used by the `distcert` binary.

pub mod adversary;
pub mod algolib;
pub mod certifier;
pub mod cli;
pub mod error;
pub mod netsim;
pub mod oracle;
pub mod svl;
pub mod toolkit;
pub mod tuner;

pub use algolib::{catalog, AlgorithmName, CatalogParams, Realization};
pub use certifier::{certify_rate, Certificate, ProblemClass};
pub use error::{Error, Result};
pub use svl::{design, SvlDesign};
