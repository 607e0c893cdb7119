//! Rank-one cutting-and-stacking constructions on a sigma-finite measure
//! space, built and analyzed with exact rational arithmetic.
//!
//! A construction is driven by a stage-1 tower height `h_1`, per-stage cut
//! counts `r_j`, and per-column spacer counts `s_j(i)`. At each stage the
//! tower of height `h_j` is cut into `r_j` columns, `s_j(i)` spacer levels
//! are stacked on top of column `i`, and the columns are restacked into a
//! single tower of height
//!
//! ```text
//! h_{j+1} = h_j * r_j + sum_i s_j(i)
//! ```
//!
//! Everything downstream works on that exact combinatorial skeleton:
//!
//! * [`construction`] builds the stage table (heights, offsets, widths,
//!   measures) with arbitrary-precision integers and rationals.
//! * [`levels`] represents measurable sets as unions of tower levels and
//!   refines them across stages without losing exactness.
//! * [`dynamics`] computes certified intervals `[lo, hi]` that are guaranteed
//!   to contain correlations `mu(T^n A /\ B)`, checks rigidity along
//!   odd-stage heights and the `I/2` weak limit along even-stage heights,
//!   and counts the invariant components of `T^n`.
//! * [`poisson`] samples Poisson configurations on finite-measure windows,
//!   transports them under `T^n`, and cross-checks count covariances against
//!   the exact base-map correlations.
//!
//! The crate never guesses: a transition that cannot be resolved at the
//! requested depth widens the certified interval instead of being estimated.

pub mod config;
pub mod construction;
pub mod dynamics;
pub mod error;
pub mod levels;
pub mod poisson;
pub mod rational;

pub use config::{ParamsSpec, RPrimeSpec, SpacerSpec};
pub use construction::{
    paper_preset_spacers, ConstructionParams, Cut, DivisibilityReport, RRule, SpacerRule, Stage,
    StageTable,
};
pub use dynamics::{
    correlation, correlation_auto, decay_scan, ergodic_components, half_limit_report, image_index,
    residue_partition, rigidity_report, ComponentReport, CorrBound, HalfLimitReport, ImageOutcome,
    RigidityReport, ScanMode, ScanRow,
};
pub use error::{Error, Result};
pub use levels::{locate, LevelRef, LevelSet, Located};
pub use poisson::{
    count_in, mc_covariance, point_in_set, sample_configuration, suspension_rigidity_test,
    transport, Configuration, CovarianceReport, PointCoord, SuspensionRigidityReport,
    TransportOutcome,
};
pub use rational::Rat;
