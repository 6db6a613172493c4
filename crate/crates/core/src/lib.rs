//! Multi-type branching trees, biased random walks on them, and the
//! statistical machinery to check both.
//!
//! The crate builds up in layers:
//!
//! * [`model`]: type alphabets, offspring laws, mean matrices, Perron
//!   eigendata, size-biased and conditioned laws.
//! * [`tree`]: an arena for lazily grown trees, plus trees with a marked
//!   ray and the height function measured from it.
//! * [`sampler`]: the branching measures (plain, conditioned on survival,
//!   ray-marked variants, and the depth-n size-biased construction).
//! * [`walk`]: discrete and continuous time biased walks on rooted and
//!   ray-marked trees, excursion decompositions, and the shifted coupling.
//! * [`harmonic`]: vertex martingale weights, harmonic coordinates for the
//!   walk, the quadratic-variation estimator, and the corrector.
//! * [`conductance`]: electrical network quantities for the biased walk and
//!   the recurrence/transience classifier for weighted models.
//! * [`stats`]: the fixed statistical toolkit (reflected normal CDF,
//!   Kolmogorov-Smirnov, chi-square, Mann-Kendall) with centralized
//!   thresholds.
//! * [`experiments`]: seeded end-to-end experiment drivers shared by the
//!   CLI and the acceptance tests.

pub mod conductance;
pub mod error;
pub mod experiments;
pub mod fixtures;
pub mod harmonic;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod tree;
pub mod walk;

pub use error::{MgwError, Result};
