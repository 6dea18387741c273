//! Iterative learning of the model uncertainty.
//!
//! Every learning iteration synthesizes a tube MPC for the current estimate
//! `Δ̂`, runs one closed-loop trial of the true plant from the same initial
//! state, scores the trial with a learning cost, and hands the score to
//! DIRECT, which proposes the next estimates.

mod learning;
mod trial;

pub use learning::{
    check_corner_controllability, run_learning, IterationSummary, LearningReport, SynthesisCache,
};
pub use trial::{learning_cost, run_trial, run_trial_with, TrialFailure, TrialRecord};

use thiserror::Error;

use crate::direct::{DirectConfig, DirectError, SearchDomain, DEFAULT_EPSILON};
use crate::mpc::{MpcError, PlantModel, SynthesisOptions, Tuning, Uncertainty};
use crate::numerics::{induced_inf_norm, Vector};
use crate::polytope::Polytope;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IlcError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Direct(#[from] DirectError),
    #[error("plant is not controllable at search-domain corner {0}")]
    UncontrollableCorner(usize),
}

/// Which learning cost scores a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostKind {
    /// output prediction error of the estimated model on the recorded inputs
    #[default]
    Identification,
    /// output tracking error against the reference
    Performance,
}

/// Learning-loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningConfig {
    pub kind: CostKind,
    pub budget: usize,
    pub delta_term: f64,
    pub trial_length: usize,
    /// amplitude of uniform measurement noise added to the outputs
    pub noise: f64,
    pub seed: u64,
    /// `true` marks an uncertain entry of `[vec(ΔA); vec(ΔB)]`
    pub mask: Option<Vec<bool>>,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            kind: CostKind::Identification,
            budget: 200,
            delta_term: 1e-3,
            trial_length: 100,
            noise: 0.0,
            seed: 0,
            mask: None,
        }
    }
}

/// A complete learning problem: nominal plant, hidden true uncertainty,
/// bounds, constraints, weights, reference and learning settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: PlantModel,
    /// true `(ΔA, ΔB)`, used only to simulate the plant
    pub truth: Uncertainty,
    pub ell_a: f64,
    pub ell_b: f64,
    pub x_set: Polytope,
    pub u_set: Polytope,
    pub tuning: Tuning,
    /// piecewise-constant reference as `(start step, value)`, first start 0
    pub reference: Vec<(usize, Vector)>,
    pub x0: Vector,
    pub learning: LearningConfig,
    pub synthesis: SynthesisOptions,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), IlcError> {
        let n = self.model.states();
        let m = self.model.inputs();
        let p = self.model.outputs();
        let cfg = |msg: String| Err(IlcError::Config(msg));
        if self.truth.da.shape() != (n, n) || self.truth.db.shape() != (n, m) {
            return cfg("true uncertainty does not match the plant dimensions".into());
        }
        if self.x_set.dim() != n || self.u_set.dim() != m {
            return cfg("constraint sets do not match the plant dimensions".into());
        }
        if self.x0.len() != n {
            return cfg(format!("x0 has length {}, expected {n}", self.x0.len()));
        }
        if !self.x_set.contains(&self.x0) {
            return cfg("x0 lies outside the state constraint set".into());
        }
        if !(self.ell_a >= 0.0 && self.ell_b >= 0.0 && self.ell_a.is_finite() && self.ell_b.is_finite()) {
            return cfg("uncertainty bounds must be finite and nonnegative".into());
        }
        let tol = 1e-12;
        if induced_inf_norm(&self.truth.da) > self.ell_a + tol
            || induced_inf_norm(&self.truth.db) > self.ell_b + tol
        {
            return cfg("true uncertainty exceeds the declared bounds".into());
        }
        if self.reference.is_empty() || self.reference[0].0 != 0 {
            return cfg("reference must start at step 0".into());
        }
        for w in self.reference.windows(2) {
            if w[1].0 <= w[0].0 {
                return cfg("reference steps must be strictly increasing".into());
            }
        }
        if self.reference.iter().any(|(_, r)| r.len() != p || !r.iter().all(|v| v.is_finite())) {
            return cfg(format!("reference values must be finite vectors of length {p}"));
        }
        let l = &self.learning;
        if l.trial_length == 0 || l.budget == 0 {
            return cfg("trial length and budget must be positive".into());
        }
        if !(l.noise >= 0.0 && l.noise.is_finite()) {
            return cfg("noise amplitude must be finite and nonnegative".into());
        }
        if let Some(mask) = &l.mask {
            if mask.len() != Uncertainty::dim(n, m) {
                return cfg(format!(
                    "mask has {} entries, expected {}",
                    mask.len(),
                    Uncertainty::dim(n, m)
                ));
            }
        }
        self.tuning.validate()?;
        Ok(())
    }

    /// Reference value in force at step `k`.
    pub fn reference_at(&self, k: usize) -> &Vector {
        let idx = self.reference.partition_point(|(start, _)| *start <= k);
        &self.reference[idx.max(1) - 1].1
    }

    /// Box searched by DIRECT.
    pub fn domain(&self) -> Result<SearchDomain, IlcError> {
        Ok(SearchDomain::for_uncertainty(
            self.model.states(),
            self.model.inputs(),
            self.ell_a,
            self.ell_b,
            self.learning.mask.as_deref(),
        )?)
    }

    pub fn direct_config(&self) -> DirectConfig {
        DirectConfig {
            budget: self.learning.budget,
            delta_term: self.learning.delta_term,
            epsilon: DEFAULT_EPSILON,
        }
    }

    /// Cost assigned to a trial that could not be completed.
    pub fn penalty(&self) -> f64 {
        1e6 * (1.0 + self.learning.trial_length as f64)
    }

    /// First step of the tail window used for tracking-error summaries
    /// (the last quarter of the trial).
    pub fn tail_start(&self) -> usize {
        self.learning.trial_length - (self.learning.trial_length / 4).max(1)
    }
}
