use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mpc::{control_law, synthesize, target_projection, MpcController, Uncertainty};
use crate::numerics::Vector;

use super::{CostKind, Scenario};

/// Why a trial stopped early.
#[derive(Debug, Clone, PartialEq)]
pub enum TrialFailure {
    SynthesisFailed(String),
    InfeasibleAtStep(usize),
}

/// One closed-loop trial of the true plant under the MPC for one estimate.
///
/// Trajectories hold one entry per simulated step; a trial that became
/// infeasible stops at the failing step, so its trajectories are shorter
/// than the trial length.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub iteration: usize,
    pub estimate: Uncertainty,
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    /// noise-free outputs `C x + D u`
    pub outputs: Vec<Vector>,
    /// outputs as measured (with noise when configured)
    pub measured: Vec<Vector>,
    /// nominal initial states `x̄*(0)` chosen at each step
    pub nominal: Vec<Vector>,
    /// tube errors `x − x̄*(0)`
    pub tube_errors: Vec<Vector>,
    /// model mismatch `w = (ΔA − Δ̂A) x + (ΔB − Δ̂B) u` at each step
    pub disturbances: Vec<Vector>,
    pub references: Vec<Vector>,
    /// closest admissible steady output for the reference in force
    pub targets: Vec<Vector>,
    /// optimal MPC cost at each step
    pub values: Vec<f64>,
    /// `x ∈ X` and `u ∈ U` at each step
    pub constraints_ok: Vec<bool>,
    /// tube error inside `Φ_K` at each step
    pub tube_ok: Vec<bool>,
    pub feasible: bool,
    pub failure: Option<TrialFailure>,
    pub cost: f64,
}

impl TrialRecord {
    pub(crate) fn failed(
        scenario: &Scenario,
        iteration: usize,
        estimate: Uncertainty,
        failure: TrialFailure,
    ) -> Self {
        let mut rec = Self::empty(iteration, estimate);
        rec.feasible = false;
        rec.failure = Some(failure);
        rec.cost = learning_cost(&rec, scenario);
        rec
    }

    fn empty(iteration: usize, estimate: Uncertainty) -> Self {
        TrialRecord {
            iteration,
            estimate,
            states: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            measured: Vec::new(),
            nominal: Vec::new(),
            tube_errors: Vec::new(),
            disturbances: Vec::new(),
            references: Vec::new(),
            targets: Vec::new(),
            values: Vec::new(),
            constraints_ok: Vec::new(),
            tube_ok: Vec::new(),
            feasible: true,
            failure: None,
            cost: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Number of steps with `x ∉ X` or `u ∉ U`.
    pub fn constraint_violations(&self) -> usize {
        self.constraints_ok.iter().filter(|ok| !**ok).count()
    }

    /// Number of steps whose tube error left `Φ_K`.
    pub fn tube_violations(&self) -> usize {
        self.tube_ok.iter().filter(|ok| !**ok).count()
    }

    /// Largest `|e(k)|∞`.
    pub fn max_tube_error(&self) -> f64 {
        self.tube_errors.iter().map(|e| e.amax()).fold(0.0, f64::max)
    }

    /// Largest `|y(k) − ỹ_s(k)|∞` over steps `from..`.
    pub fn tracking_error_from(&self, from: usize) -> f64 {
        self.outputs
            .iter()
            .zip(&self.targets)
            .skip(from)
            .map(|(y, t)| (y - t).amax())
            .fold(0.0, f64::max)
    }
}

/// Runs one trial, synthesizing the controller for `est`.
pub fn run_trial(scenario: &Scenario, est: &Uncertainty, iteration: usize) -> TrialRecord {
    match synthesize(
        &scenario.model,
        est,
        &scenario.x_set,
        &scenario.u_set,
        &scenario.tuning,
        scenario.ell_a,
        scenario.ell_b,
        &scenario.synthesis,
    ) {
        Ok(ctrl) => run_trial_with(scenario, &ctrl, iteration),
        Err(e) => TrialRecord::failed(
            scenario,
            iteration,
            est.clone(),
            TrialFailure::SynthesisFailed(e.to_string()),
        ),
    }
}

/// Runs one trial with an already synthesized controller.
///
/// The plant evolves with the true uncertainty; the controller only knows
/// its own estimate. Noise, when configured, is drawn from a generator seeded
/// by the scenario seed and the iteration index, so a trial is reproducible.
pub fn run_trial_with(scenario: &Scenario, ctrl: &MpcController, iteration: usize) -> TrialRecord {
    let mut rec = TrialRecord::empty(iteration, ctrl.estimate().clone());
    let model = &scenario.model;
    let (a_true, b_true) = model.perturbed(&scenario.truth);
    let (a_hat, b_hat) = ctrl.nominal();
    let noise = scenario.learning.noise;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.learning.seed ^ (iteration as u64).rotate_left(32));

    let mut x = scenario.x0.clone();
    let mut target: Option<(Vector, Vector)> = None;
    for k in 0..scenario.learning.trial_length {
        let r = scenario.reference_at(k).clone();
        if target.as_ref().is_none_or(|(rt, _)| *rt != r) {
            match target_projection(ctrl, &r) {
                Ok(t) => target = Some((r.clone(), t.y_s)),
                Err(_) => {
                    rec.feasible = false;
                    rec.failure = Some(TrialFailure::InfeasibleAtStep(k));
                    break;
                }
            }
        }
        let (u, sol) = match control_law(ctrl, &x, &r) {
            Ok(v) => v,
            Err(_) => {
                rec.feasible = false;
                rec.failure = Some(TrialFailure::InfeasibleAtStep(k));
                break;
            }
        };
        let y = model.output(&x, &u);
        let measured = if noise > 0.0 {
            y.map(|v| v + rng.gen_range(-noise..=noise))
        } else {
            y.clone()
        };
        let e = &x - &sol.x_bar0;
        rec.constraints_ok
            .push(scenario.x_set.contains(&x) && scenario.u_set.contains(&u));
        rec.tube_ok.push(ctrl.tube_set().contains(&e));
        rec.tube_errors.push(e);
        rec.nominal.push(sol.x_bar0.clone());
        rec.values.push(sol.value);
        rec.targets.push(target.as_ref().expect("projected above").1.clone());
        rec.references.push(r);
        rec.outputs.push(y);
        rec.measured.push(measured);
        let next = &a_true * &x + &b_true * &u;
        rec.disturbances.push(&next - (a_hat * &x + b_hat * &u));
        rec.states.push(x);
        rec.inputs.push(u);
        x = next;
    }
    rec.cost = learning_cost(&rec, scenario);
    rec
}

/// Learning cost of a finished trial.
///
/// Identification: `Σ |y_meas(k) − ŷ(k)|²` where `ŷ` replays the recorded
/// inputs through the estimated model from `x₀`. Performance:
/// `Σ |y(k) − r(k)|²`. Trials that did not complete cost
/// `10⁶ (1 + T_trial)`.
pub fn learning_cost(record: &TrialRecord, scenario: &Scenario) -> f64 {
    if !record.feasible {
        return scenario.penalty();
    }
    match scenario.learning.kind {
        CostKind::Identification => {
            let (a_hat, b_hat) = scenario.model.perturbed(&record.estimate);
            let mut x_hat = scenario.x0.clone();
            let mut total = 0.0;
            for (u, y) in record.inputs.iter().zip(&record.measured) {
                let y_hat = scenario.model.output(&x_hat, u);
                total += (y - y_hat).norm_squared();
                x_hat = &a_hat * &x_hat + &b_hat * u;
            }
            total
        }
        CostKind::Performance => record
            .measured
            .iter()
            .zip(&record.references)
            .map(|(y, r)| (y - r).norm_squared())
            .sum(),
    }
}
