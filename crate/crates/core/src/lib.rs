//! Bounds on the slope of a linear model whose regressor is latent and
//! observed only through two proxies with nonclassical measurement error.
//!
//! The pipeline is:
//!
//! - [`moments`]: partial covariates out of the outcome and both proxies and
//!   reduce the data to a [`MomentSummary`].
//! - [`bounds`]: map a summary to the identified set under one of three
//!   assumption regimes, with a grid-scan oracle for cross-checking.
//! - [`baselines`]: reduced-form, convex-combination and Lubotsky-Wittenberg
//!   estimands that ignore or only partially address the measurement error.
//! - [`inference`]: bootstrap upper bound and intersection-bounds lower bound
//!   combined into a confidence interval for the identified set.
//! - [`dgp`]: latent specifications, the moment map, seeded samplers and the
//!   constructive specs that realize every point of the identified set.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bounds;
pub mod dgp;
pub mod error;
pub mod inference;
pub mod moments;
mod regime;
pub mod rng;

pub use baselines::{
    combo_coefficient, lubotsky_wittenberg, reduced_form, BaselineEstimates, LwEstimate, ProxyIndex,
};
pub use bounds::{
    brute_force_bounds, identify, identify_baseline, identify_free_cov, identify_no_sign,
    lb_components, refine_better_proxy, BetterProxy, BoundsResult, BruteForceResult, Components,
    SetShape,
};
pub use dgp::{latent_to_observable_moments, sample_dgp, sharpness_spec, LatentSpec};
pub use error::{Error, Result};
pub use inference::{
    bootstrap_resample, confidence_interval, estimate, lower_confidence_bound, psd_sqrt,
    upper_confidence_bound, ConfidenceInterval, InferenceConfig, LowerCBDetail, PointEstimate,
};
pub use moments::{
    check_data_assumptions, moment_summary, ols_fit, residualize, AssumptionCheck,
    AssumptionReport, DivisorPolicy, MomentSummary, OlsFit, ResidualizedSample, Sample,
};
pub use regime::Regime;
