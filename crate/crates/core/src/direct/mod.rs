//! DIRECT (dividing rectangles) global minimization as an ask/tell engine.
//!
//! The search box is normalized to `[0, 1]^d`. Each rectangle is stored by
//! its center and one trisection level per axis (side `3^-level`), so the
//! partition is exact up to the rounding of the centers. A sweep selects the
//! potentially optimal rectangles, samples `c ± side/3 · eᵢ` along their
//! longest axes and, once every sample has been told, trisects them.
//!
//! The engine stops when the evaluation budget is spent or when the
//! rectangle around the best point has shrunk below a diameter threshold.

mod domain;

pub use domain::SearchDomain;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::numerics::Vector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DirectError {
    #[error("invalid search domain: {0}")]
    InvalidDomain(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no outstanding proposal with id {0}")]
    UnknownPoint(usize),
    #[error("non-finite value told for proposal {0}")]
    NonFiniteValue(usize),
}

/// Balance parameter of the potentially-optimal test.
pub const DEFAULT_EPSILON: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectConfig {
    /// maximum number of function evaluations
    pub budget: usize,
    /// stop once the rectangle around the best point has at most this diameter
    pub delta_term: f64,
    /// balance parameter of the potentially-optimal test
    pub epsilon: f64,
}

impl Default for DirectConfig {
    fn default() -> Self {
        DirectConfig {
            budget: 200,
            delta_term: 1e-3,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Hyperrectangle of the partition, in normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Rect {
    pub center: Vector,
    /// side along axis `i` is `3^-levels[i]`
    pub levels: Vec<u32>,
    pub value: f64,
    /// half the Euclidean norm of the side vector
    pub diameter: f64,
}

impl Rect {
    fn new(center: Vector, levels: Vec<u32>, value: f64) -> Self {
        let diameter = diameter_of(&levels);
        Rect {
            center,
            levels,
            value,
            diameter,
        }
    }

    pub fn side(&self, axis: usize) -> f64 {
        side_of(self.levels[axis])
    }

    pub fn volume(&self) -> f64 {
        self.levels.iter().map(|&l| side_of(l)).product()
    }
}

fn side_of(level: u32) -> f64 {
    3f64.powi(-(level as i32))
}

/// Diameter from the sorted levels, so that equal level multisets give
/// bit-identical diameters regardless of axis order.
fn diameter_of(levels: &[u32]) -> f64 {
    let mut sorted = levels.to_vec();
    sorted.sort_unstable();
    0.5 * sorted
        .iter()
        .map(|&l| side_of(l) * side_of(l))
        .sum::<f64>()
        .sqrt()
}

/// One point to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub id: usize,
    /// normalized coordinates over the free axes
    pub unit: Vector,
    /// the point in domain coordinates
    pub point: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Budget,
    Diameter,
}

/// A rect selected in a sweep with its division axes; each axis carries the
/// ids sampled at `c − δeᵢ` and `c + δeᵢ`.
type Division = (usize, Vec<(usize, usize, usize)>);

#[derive(Debug, Clone)]
enum Batch {
    Init {
        id: usize,
    },
    Sweep {
        items: Vec<Division>,
    },
}

/// State of one DIRECT run.
#[derive(Debug, Clone)]
pub struct DirectState {
    domain: SearchDomain,
    config: DirectConfig,
    rects: Vec<Rect>,
    batch: Option<Batch>,
    proposals: Vec<Proposal>,
    told: BTreeMap<usize, f64>,
    next_id: usize,
    evaluations: usize,
    best: Option<(usize, f64)>,
    history: Vec<f64>,
    termination: Option<Termination>,
}

impl DirectState {
    /// Starts a run; the first proposal is the center of the box.
    pub fn new(domain: SearchDomain, config: DirectConfig) -> Result<Self, DirectError> {
        if config.budget == 0 {
            return Err(DirectError::InvalidConfig("budget must be at least 1".into()));
        }
        if !(config.delta_term >= 0.0 && config.delta_term.is_finite()) {
            return Err(DirectError::InvalidConfig(format!(
                "delta_term must be finite and nonnegative, got {}",
                config.delta_term
            )));
        }
        if !(config.epsilon >= 0.0 && config.epsilon.is_finite()) {
            return Err(DirectError::InvalidConfig(format!(
                "epsilon must be finite and nonnegative, got {}",
                config.epsilon
            )));
        }
        let d = domain.free_dims();
        let mut state = DirectState {
            domain,
            config,
            rects: Vec::new(),
            batch: None,
            proposals: Vec::new(),
            told: BTreeMap::new(),
            next_id: 0,
            evaluations: 0,
            best: None,
            history: Vec::new(),
            termination: None,
        };
        let center = Vector::from_element(d, 0.5);
        let id = state.propose(center);
        state.batch = Some(Batch::Init { id });
        Ok(state)
    }

    pub fn domain(&self) -> &SearchDomain {
        &self.domain
    }

    pub fn config(&self) -> &DirectConfig {
        &self.config
    }

    /// Outstanding proposals of the current sweep that have not been told.
    pub fn ask(&self) -> Vec<Proposal> {
        self.proposals
            .iter()
            .filter(|p| !self.told.contains_key(&p.id))
            .cloned()
            .collect()
    }

    /// Records the value at a proposed point. Values may arrive in any order;
    /// the sweep is processed in proposal order once all have arrived.
    pub fn tell(&mut self, id: usize, value: f64) -> Result<(), DirectError> {
        if !self.proposals.iter().any(|p| p.id == id) || self.told.contains_key(&id) {
            return Err(DirectError::UnknownPoint(id));
        }
        if !value.is_finite() {
            return Err(DirectError::NonFiniteValue(id));
        }
        self.told.insert(id, value);
        if self.told.len() == self.proposals.len() {
            self.finish_sweep();
        }
        Ok(())
    }

    pub fn terminated(&self) -> bool {
        self.termination.is_some()
    }

    pub fn termination(&self) -> Option<Termination> {
        self.termination
    }

    /// Best point (domain coordinates) and value seen so far.
    pub fn best(&self) -> Option<(Vector, f64)> {
        self.best
            .map(|(r, v)| (self.domain.to_point(&self.rects[r].center), v))
    }

    /// Best point in normalized coordinates.
    pub fn best_unit(&self) -> Option<(Vector, f64)> {
        self.best.map(|(r, v)| (self.rects[r].center.clone(), v))
    }

    pub fn best_rect(&self) -> Option<&Rect> {
        self.best.map(|(r, _)| &self.rects[r])
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    /// Best-so-far value after each evaluation, in proposal order.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn rects(&self) -> &[Rect] {
        &self.rects
    }

    /// Sum of rect volumes (1 for an exact tiling).
    pub fn total_volume(&self) -> f64 {
        self.rects.iter().map(Rect::volume).sum()
    }

    pub fn max_diameter(&self) -> f64 {
        self.rects.iter().map(|r| r.diameter).fold(0.0, f64::max)
    }

    /// Indices of the potentially optimal rects, smallest diameter first.
    pub fn select_potentially_optimal(&self) -> Vec<usize> {
        let pairs: Vec<(f64, f64)> = self.rects.iter().map(|r| (r.diameter, r.value)).collect();
        potentially_optimal(&pairs, self.config.epsilon)
    }

    fn propose(&mut self, unit: Vector) -> usize {
        let id = self.next_id;
        self.next_id += 1;
        let point = self.domain.to_point(&unit);
        self.proposals.push(Proposal { id, unit, point });
        id
    }

    fn record(&mut self, rect: usize) {
        let value = self.rects[rect].value;
        self.evaluations += 1;
        match self.best {
            Some((_, b)) if value >= b => {}
            _ => self.best = Some((rect, value)),
        }
        self.history.push(self.best.expect("set above").1);
    }

    fn finish_sweep(&mut self) {
        let batch = self.batch.take().expect("a sweep is outstanding");
        let values = std::mem::take(&mut self.told);
        let units: BTreeMap<usize, Vector> = std::mem::take(&mut self.proposals)
            .into_iter()
            .map(|p| (p.id, p.unit))
            .collect();
        match batch {
            Batch::Init { id } => {
                let d = self.domain.free_dims();
                self.rects
                    .push(Rect::new(units[&id].clone(), vec![0; d], values[&id]));
                self.record(0);
            }
            Batch::Sweep { items } => {
                for (rect, samples) in items {
                    self.trisect(rect, &samples, &units, &values);
                }
            }
        }
        self.check_termination();
        if self.termination.is_none() {
            self.plan_sweep();
        }
    }

    /// Splits `rect` along its sampled axes, best sampled value first.
    fn trisect(
        &mut self,
        rect: usize,
        samples: &[(usize, usize, usize)],
        units: &BTreeMap<usize, Vector>,
        values: &BTreeMap<usize, f64>,
    ) {
        let mut order: Vec<(f64, usize, usize, usize)> = samples
            .iter()
            .map(|&(axis, lo, hi)| (values[&lo].min(values[&hi]), axis, lo, hi))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut levels = self.rects[rect].levels.clone();
        for (_, axis, lo, hi) in order {
            levels[axis] += 1;
            for id in [lo, hi] {
                self.rects
                    .push(Rect::new(units[&id].clone(), levels.clone(), values[&id]));
                let idx = self.rects.len() - 1;
                self.record(idx);
            }
        }
        let parent = &mut self.rects[rect];
        parent.diameter = diameter_of(&levels);
        parent.levels = levels;
    }

    fn check_termination(&mut self) {
        if self.evaluations >= self.config.budget {
            self.termination = Some(Termination::Budget);
        } else if let Some(r) = self.best_rect() {
            if r.diameter <= self.config.delta_term {
                self.termination = Some(Termination::Diameter);
            }
        }
    }

    fn plan_sweep(&mut self) {
        let remaining = self.config.budget - self.evaluations;
        let selected = self.select_potentially_optimal();
        let mut used = 0;
        let mut items = Vec::new();
        for rect in selected {
            let r = &self.rects[rect];
            let top = match r.levels.iter().min() {
                Some(&l) => l,
                None => continue,
            };
            let axes: Vec<usize> = (0..r.levels.len()).filter(|&i| r.levels[i] == top).collect();
            if used + 2 * axes.len() > remaining {
                break;
            }
            used += 2 * axes.len();
            let center = r.center.clone();
            let delta = side_of(top) / 3.0;
            let mut samples = Vec::with_capacity(axes.len());
            for axis in axes {
                let mut lo = center.clone();
                lo[axis] -= delta;
                let mut hi = center.clone();
                hi[axis] += delta;
                let lo_id = self.propose(lo);
                let hi_id = self.propose(hi);
                samples.push((axis, lo_id, hi_id));
            }
            items.push((rect, samples));
        }
        if items.is_empty() {
            // nothing divisible fits in the remaining budget
            self.termination = Some(Termination::Budget);
            return;
        }
        self.batch = Some(Batch::Sweep { items });
    }
}

/// Potentially optimal points among `(diameter, value)` pairs.
///
/// Point `j` qualifies when it has the lowest value among points of equal
/// diameter (earliest index on ties) and some slope `K > 0` satisfies
/// `f_j − K d_j ≤ f_i − K d_i` for all `i` and
/// `f_j − K d_j ≤ f_min − ε|f_min|`. Indices are returned smallest
/// diameter first.
pub fn potentially_optimal(points: &[(f64, f64)], epsilon: f64) -> Vec<usize> {
    if points.is_empty() {
        return Vec::new();
    }
    // representative of each diameter group
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .0
            .total_cmp(&points[b].0)
            .then(points[a].1.total_cmp(&points[b].1))
            .then(a.cmp(&b))
    });
    let mut reps: Vec<usize> = Vec::new();
    for &i in &order {
        match reps.last() {
            Some(&r) if points[r].0 == points[i].0 => {}
            _ => reps.push(i),
        }
    }
    let f_min = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);

    let mut out = Vec::new();
    for (pos, &j) in reps.iter().enumerate() {
        let (dj, fj) = points[j];
        let k_low = reps[..pos]
            .iter()
            .map(|&i| (fj - points[i].1) / (dj - points[i].0))
            .fold(f64::NEG_INFINITY, f64::max);
        let k_high = reps[pos + 1..]
            .iter()
            .map(|&i| (points[i].1 - fj) / (points[i].0 - dj))
            .fold(f64::INFINITY, f64::min);
        if k_high <= 0.0 || k_low > k_high {
            continue;
        }
        let eps_ok = if k_high.is_infinite() {
            true
        } else if f_min != 0.0 {
            epsilon <= (f_min - fj) / f_min.abs() + dj / f_min.abs() * k_high
        } else {
            fj <= dj * k_high
        };
        if eps_ok {
            out.push(j);
        }
    }
    out
}

/// Runs DIRECT to termination on a plain function of the domain point.
pub fn minimize<F>(
    domain: SearchDomain,
    config: DirectConfig,
    mut f: F,
) -> Result<DirectState, DirectError>
where
    F: FnMut(&Vector) -> f64,
{
    let mut state = DirectState::new(domain, config)?;
    while !state.terminated() {
        for p in state.ask() {
            let v = f(&p.point);
            state.tell(p.id, v)?;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(d: usize) -> SearchDomain {
        SearchDomain::new(Vector::zeros(d), Vector::from_element(d, 1.0)).unwrap()
    }

    #[test]
    fn init_proposes_the_center() {
        let s = DirectState::new(unit_box(1), DirectConfig::default()).unwrap();
        assert_eq!(s.ask()[0].unit.as_slice(), &[0.5]);
        let s = DirectState::new(unit_box(2), DirectConfig::default()).unwrap();
        assert_eq!(s.ask()[0].unit.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn frozen_axis_is_dropped() {
        let dom = SearchDomain::new(
            Vector::from_vec(vec![0.0, 2.0]),
            Vector::from_vec(vec![1.0, 2.0]),
        )
        .unwrap();
        assert_eq!(dom.free_dims(), 1);
        let s = DirectState::new(dom, DirectConfig::default()).unwrap();
        let p = &s.ask()[0];
        assert_eq!(p.unit.len(), 1);
        assert_eq!(p.point.as_slice(), &[0.5, 2.0]);
    }

    #[test]
    fn dominance_within_a_diameter() {
        assert_eq!(potentially_optimal(&[(1.0, 1.0), (1.0, 2.0)], 0.0), vec![0]);
        assert_eq!(potentially_optimal(&[(1.0, 2.0), (1.0, 1.0)], 0.0), vec![1]);
    }

    #[test]
    fn constant_values_select_one_largest() {
        let pts = [(0.5, 3.0), (1.0, 3.0), (1.0, 3.0), (0.2, 3.0)];
        assert_eq!(potentially_optimal(&pts, 1e-4), vec![1]);
        let zeros = [(0.5, 0.0), (1.0, 0.0), (0.2, 0.0)];
        assert_eq!(potentially_optimal(&zeros, 1e-4), vec![1]);
    }

    #[test]
    fn hand_computed_hull() {
        let pts = [(1.0, 5.0), (1.0 / 3.0, 4.0), (1.0 / 9.0, 4.5)];
        assert_eq!(potentially_optimal(&pts, 0.0), vec![1, 0]);
    }

    #[test]
    fn first_trisections() {
        let mut s = DirectState::new(unit_box(1), DirectConfig::default()).unwrap();
        s.tell(0, 1.0).unwrap();
        let units: Vec<f64> = s.ask().iter().map(|p| p.unit[0]).collect();
        assert_eq!(units.len(), 2);
        assert!((units[0] - 1.0 / 6.0).abs() < 1e-15 && (units[1] - 5.0 / 6.0).abs() < 1e-15);

        let mut s = DirectState::new(unit_box(2), DirectConfig::default()).unwrap();
        s.tell(0, 1.0).unwrap();
        let ps = s.ask();
        assert_eq!(ps.len(), 4);
        for p in &ps {
            let off = &p.unit - Vector::from_element(2, 0.5);
            let nz: Vec<f64> = off.iter().copied().filter(|v| v.abs() > 1e-15).collect();
            assert_eq!(nz.len(), 1);
            assert!((nz[0].abs() - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_longest_axis_gives_two_proposals() {
        let mut s = DirectState::new(unit_box(2), DirectConfig::default()).unwrap();
        s.tell(0, 0.0).unwrap();
        // make the x-axis samples better so x is split first
        for p in s.ask() {
            let v = if (p.unit[0] - 0.5).abs() > 1e-9 { 1.0 } else { 2.0 };
            s.tell(p.id, v).unwrap();
        }
        // the center rect now has levels (1, 1); rects split only along y keep side 1 on x
        let longest_single = s
            .rects()
            .iter()
            .filter(|r| r.levels.iter().filter(|&&l| l == *r.levels.iter().min().unwrap()).count() == 1)
            .count();
        assert!(longest_single > 0);
        for p in s.ask() {
            let owner = s
                .rects()
                .iter()
                .position(|r| (0..2).all(|i| (p.unit[i] - r.center[i]).abs() <= r.side(i) / 2.0 + 1e-12))
                .unwrap();
            let r = &s.rects()[owner];
            let top = *r.levels.iter().min().unwrap();
            let longest = r.levels.iter().filter(|&&l| l == top).count();
            let from_owner = s
                .ask()
                .iter()
                .filter(|q| (0..2).all(|i| (q.unit[i] - r.center[i]).abs() <= r.side(i) / 2.0 + 1e-12))
                .count();
            assert_eq!(from_owner, 2 * longest);
        }
    }

    #[test]
    fn budget_of_one_terminates() {
        let mut s = DirectState::new(unit_box(1), DirectConfig { budget: 1, ..Default::default() }).unwrap();
        s.tell(0, 3.0).unwrap();
        assert!(s.terminated());
        assert_eq!(s.termination(), Some(Termination::Budget));
    }

    #[test]
    fn unknown_and_repeated_tells_are_rejected() {
        let mut s = DirectState::new(unit_box(1), DirectConfig::default()).unwrap();
        assert_eq!(s.tell(7, 1.0), Err(DirectError::UnknownPoint(7)));
        assert_eq!(s.tell(0, f64::NAN), Err(DirectError::NonFiniteValue(0)));
        s.tell(0, 1.0).unwrap();
        assert_eq!(s.tell(0, 1.0), Err(DirectError::UnknownPoint(0)));
    }

    #[test]
    fn out_of_order_tells_match_in_order() {
        let f = |z: &Vector| (z[0] - 0.3).powi(2) + (z[1] - 0.6).powi(2);
        let run = |reverse: bool| {
            let mut s = DirectState::new(unit_box(2), DirectConfig { budget: 60, ..Default::default() }).unwrap();
            while !s.terminated() {
                let mut ps = s.ask();
                if reverse {
                    ps.reverse();
                }
                for p in ps {
                    s.tell(p.id, f(&p.point)).unwrap();
                }
            }
            s
        };
        let a = run(false);
        let b = run(true);
        assert_eq!(a.rects(), b.rects());
        assert_eq!(a.history(), b.history());
    }

    #[test]
    fn one_dimensional_quadratic() {
        let s = minimize(unit_box(1), DirectConfig { budget: 60, ..Default::default() }, |z| {
            (z[0] - 0.2).powi(2)
        })
        .unwrap();
        let (best, _) = s.best().unwrap();
        assert!((best[0] - 0.2).abs() <= 0.01, "best {}", best[0]);
        assert!(s.evaluations() <= 60);
    }

    #[test]
    fn constant_function_keeps_first_value_and_tiling() {
        let s = minimize(unit_box(2), DirectConfig { budget: 40, ..Default::default() }, |_| 1.5).unwrap();
        assert_eq!(s.best().unwrap().1, 1.5);
        assert_eq!(s.best_unit().unwrap().0.as_slice(), &[0.5, 0.5]);
        assert_eq!(s.termination(), Some(Termination::Budget));
        assert!((s.total_volume() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn diameter_threshold_stops_early() {
        let s = minimize(
            unit_box(1),
            DirectConfig { budget: 10_000, delta_term: 1e-3, ..Default::default() },
            |z| (z[0] - 0.2).abs(),
        )
        .unwrap();
        assert_eq!(s.termination(), Some(Termination::Diameter));
        assert!(s.best_rect().unwrap().diameter <= 1e-3);
        assert!(s.evaluations() < 10_000);
    }

    #[test]
    fn zero_dimensional_domain_needs_one_evaluation() {
        let dom = SearchDomain::new(Vector::from_element(2, 0.1), Vector::from_element(2, 0.1)).unwrap();
        let s = minimize(dom, DirectConfig::default(), |z| z.sum()).unwrap();
        assert_eq!(s.evaluations(), 1);
        assert_eq!(s.termination(), Some(Termination::Diameter));
        assert_eq!(s.best().unwrap().0.as_slice(), &[0.1, 0.1]);
    }
}
