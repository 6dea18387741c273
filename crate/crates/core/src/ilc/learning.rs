use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::direct::{DirectState, Termination};
use crate::mpc::{synthesize, MpcController, Uncertainty};
use crate::numerics::{controllability_rank, Vector};

use super::trial::{run_trial_with, TrialFailure, TrialRecord};
use super::{IlcError, Scenario};

/// Corner checks are skipped above this many free axes.
const MAX_CORNER_AXES: usize = 16;

type Synthesized = Result<Arc<MpcController>, String>;

/// Synthesized controllers keyed by the bit pattern of the estimate.
#[derive(Debug, Default)]
pub struct SynthesisCache {
    entries: Mutex<HashMap<Vec<u64>, Synthesized>>,
}

impl SynthesisCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Controller for `est`, synthesizing it on first use.
    pub fn get(&self, scenario: &Scenario, est: &Uncertainty) -> Result<Arc<MpcController>, String> {
        let key: Vec<u64> = est.flatten().iter().map(|v| v.to_bits()).collect();
        if let Some(hit) = self.entries.lock().expect("cache lock").get(&key) {
            return hit.clone();
        }
        let built = synthesize(
            &scenario.model,
            est,
            &scenario.x_set,
            &scenario.u_set,
            &scenario.tuning,
            scenario.ell_a,
            scenario.ell_b,
            &scenario.synthesis,
        )
        .map(Arc::new)
        .map_err(|e| e.to_string());
        self.entries
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert(built)
            .clone()
    }

    /// Runs a trial through the cache.
    pub fn trial(&self, scenario: &Scenario, est: &Uncertainty, iteration: usize) -> TrialRecord {
        match self.get(scenario, est) {
            Ok(ctrl) => run_trial_with(scenario, &ctrl, iteration),
            Err(msg) => TrialRecord::failed(
                scenario,
                iteration,
                est.clone(),
                TrialFailure::SynthesisFailed(msg),
            ),
        }
    }
}

/// One row of the learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationSummary {
    pub iteration: usize,
    /// flattened estimate `Δ̂_t`
    pub estimate: Vector,
    pub cost: f64,
    /// best cost over iterations `0..=t`
    pub best_cost: f64,
    /// `|Δ − Δ̂_t|∞`
    pub estimate_error: f64,
    /// largest `|y − ỹ_s|∞` over the tail window (infinite if infeasible)
    pub tail_error: f64,
    pub feasible: bool,
}

/// Outcome of a learning run.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningReport {
    pub iterations: Vec<IterationSummary>,
    pub best_estimate: Uncertainty,
    pub best_cost: f64,
    /// `|Δ − Δ̂_best|∞`
    pub best_error: f64,
    pub first_trial: TrialRecord,
    pub best_trial: TrialRecord,
    pub termination: Termination,
}

/// Errors unless `(A + ΔA, B + ΔB)` is controllable at every corner of the
/// search box (checked when the box has at most 16 free axes).
pub fn check_corner_controllability(scenario: &Scenario) -> Result<(), IlcError> {
    let domain = scenario.domain()?;
    if domain.free_dims() > MAX_CORNER_AXES {
        log::warn!(
            "search box has {} free axes; corner controllability check skipped",
            domain.free_dims()
        );
        return Ok(());
    }
    let n = scenario.model.states();
    let m = scenario.model.inputs();
    for (i, corner) in domain.corners().iter().enumerate() {
        let delta = Uncertainty::unflatten(corner, n, m)?;
        let (a, b) = scenario.model.perturbed(&delta);
        if controllability_rank(&a, &b) < n {
            return Err(IlcError::UncontrollableCorner(i));
        }
    }
    Ok(())
}

/// Learns the uncertainty with DIRECT, one closed-loop trial per evaluation.
///
/// Proposals of one DIRECT sweep are evaluated in parallel on `jobs` threads
/// (sequentially for `jobs <= 1`) and told in proposal order, so the result
/// does not depend on `jobs`.
pub fn run_learning(scenario: &Scenario, jobs: usize) -> Result<LearningReport, IlcError> {
    scenario.validate()?;
    check_corner_controllability(scenario)?;
    let n = scenario.model.states();
    let m = scenario.model.inputs();
    let truth = scenario.truth.flatten();
    let tail = scenario.tail_start();

    let pool = if jobs > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| IlcError::Config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let cache = SynthesisCache::new();
    let mut state = DirectState::new(scenario.domain()?, scenario.direct_config())?;
    let mut iterations: Vec<IterationSummary> = Vec::new();
    let mut first: Option<TrialRecord> = None;
    let mut best: Option<TrialRecord> = None;

    while !state.terminated() {
        let proposals = state.ask();
        let base = iterations.len();
        let estimates = proposals
            .iter()
            .map(|p| Uncertainty::unflatten(&p.point, n, m))
            .collect::<Result<Vec<_>, _>>()?;
        let eval = |(i, est): (usize, &Uncertainty)| cache.trial(scenario, est, base + i);
        let records: Vec<TrialRecord> = match &pool {
            Some(pool) => pool.install(|| estimates.par_iter().enumerate().map(eval).collect()),
            None => estimates.iter().enumerate().map(eval).collect(),
        };
        for (p, rec) in proposals.iter().zip(records) {
            state.tell(p.id, rec.cost)?;
            let prev_best = iterations.last().map_or(f64::INFINITY, |s| s.best_cost);
            let tail_error = if rec.feasible {
                rec.tracking_error_from(tail)
            } else {
                f64::INFINITY
            };
            iterations.push(IterationSummary {
                iteration: rec.iteration,
                estimate: p.point.clone(),
                cost: rec.cost,
                best_cost: prev_best.min(rec.cost),
                estimate_error: (&truth - &p.point).amax(),
                tail_error,
                feasible: rec.feasible,
            });
            log::info!(
                "iteration {}: cost {:.6e}, |delta - estimate| {:.4e}",
                rec.iteration,
                rec.cost,
                (&truth - &p.point).amax()
            );
            if best.as_ref().is_none_or(|b| rec.cost < b.cost) {
                best = Some(rec.clone());
            }
            if first.is_none() {
                first = Some(rec);
            }
        }
    }

    let best_trial = best.expect("at least one evaluation");
    let best_estimate = best_trial.estimate.clone();
    Ok(LearningReport {
        iterations,
        best_cost: best_trial.cost,
        best_error: (&truth - best_estimate.flatten()).amax(),
        best_estimate,
        first_trial: first.expect("at least one evaluation"),
        best_trial,
        termination: state.termination().expect("loop ran to termination"),
    })
}
