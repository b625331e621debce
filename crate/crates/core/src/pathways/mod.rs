//! Exact counterfactual pathway analysis on finite structural causal models.
//!
//! Every exogenous state is a unit, so counterfactuals need no abduction step:
//! each unit is solved once factually, once under every `do(Y = y')` and once
//! under every nested `do(Y = y1, W = W_{y0})`, and conditional probabilities
//! are ratios of state masses. Zero-mass conditioning events are errors.
//!
//! The decomposition `TV = Σ P(w,z | y0)[stable − IE] − SE` is checked with
//! the cell weights and conditioning set taken at `y0`; the same expression
//! with `y1` is reported alongside as a diagnostic.
//!
//! [`sensitivity`](sensitivity::sensitivity) and friends are the Monte Carlo
//! counterparts for trained predictors on the synthetic image and tabular
//! families.

mod discrete;
mod effects;
mod random;
pub mod sensitivity;

pub use discrete::{enumerate_joint, DiscreteScm, DiscreteVariable, JointDistribution, Roles, TablePredictor, MAX_STATES};
pub use effects::{
    ctf_effects, mle_stable_maximizer_check, pathway_report, stability_certificate, tv, verify_decomposition,
    Conditioning, CtfEffects, MaximizerCheck, PathwayAnalysis, PathwayEntry, PathwayReport, StabilityCertificate,
    EXACT_TOL,
};
pub use random::{random_predictor, random_sam, PredictorKind, RandomSamConfig};
pub use sensitivity::{ctf_accuracy, ctf_r2, sensitivity, sensitivity_on_units, InterventionValues};

#[cfg(test)]
mod tests;
