//! Two-phase cell cycle models on a maturity variable.
//!
//! A cell rests with maturity-dependent exit rate, proliferates for a
//! fixed duration, then divides; the daughter's initial maturity is a
//! function of the mother's at division. The crate implements the
//! generational maturity operator, an exact-event simulation of the
//! continuous-time process, the stationary age-maturity densities and the
//! delayed nonlocal transport equation for the resting-maturity profile,
//! together with classifiers deciding whether densities settle to an
//! invariant profile or sweep towards arbitrarily large maturities.

pub mod counterexample;
pub mod flows;
pub mod grid;
pub mod model;
pub mod numeric;
pub mod operator;
pub mod pde;
pub mod pdmp;
pub mod presets;
pub mod report;
pub mod scalar;
pub mod stationary;
pub mod verify;

pub use flows::{FlowError, FlowSolver, Phase};
pub use grid::{Grid, GridDensity, GridFn};
pub use model::{load_spec, save_spec, validate, ModelError, ModelSpec, ValidationReport};
pub use operator::{
    alpha_profile, classify_discrete, conjugate_check, power_iterate, KernelMatrix, KernelOp,
    Verdict,
};
pub use report::{ClassificationReport, RunManifest};
pub use scalar::ScalarFn;
pub use stationary::{classify_continuous, mean_resting_time, StationaryProfile};
