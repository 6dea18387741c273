//! TOML scenario files.
//!
//! Matrices are nested arrays of rows. Constraint sets accept a symmetric box
//! shorthand (`{ box = 2.0 }`), explicit bounds (`{ lower = [...], upper =
//! [...] }`) or an H-representation (`{ normals = [[...]], offsets = [...] }`).
//! Every semantic error carries the line and column of the offending value.

use std::ops::Range;
use std::path::Path;

use esilc::ilc::{CostKind, LearningConfig, Scenario};
use esilc::mpc::{PlantModel, SynthesisOptions, Tuning, Uncertainty};
use esilc::numerics::{Mat, Vector};
use esilc::polytope::Polytope;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::CliError;

type Matrix = Spanned<Vec<Vec<f64>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub x0: Spanned<Vec<f64>>,
    pub plant: PlantSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthSection>,
    pub bounds: BoundsSection,
    pub constraints: ConstraintsSection,
    pub tuning: TuningSection,
    pub reference: ReferenceSection,
    #[serde(default)]
    pub learning: LearningSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<SynthesisSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    #[serde(rename = "A")]
    pub a: Matrix,
    #[serde(rename = "B")]
    pub b: Matrix,
    #[serde(rename = "C")]
    pub c: Matrix,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    #[serde(rename = "dA")]
    pub da: Matrix,
    #[serde(rename = "dB")]
    pub db: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    #[serde(rename = "ell_A")]
    pub ell_a: Spanned<f64>,
    #[serde(rename = "ell_B")]
    pub ell_b: Spanned<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsSection {
    #[serde(rename = "X")]
    pub x: Spanned<SetSpec>,
    #[serde(rename = "U")]
    pub u: Spanned<SetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SetSpec {
    Symmetric {
        #[serde(rename = "box")]
        radius: f64,
    },
    Bounds {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    HRep {
        normals: Vec<Vec<f64>>,
        offsets: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSection {
    #[serde(rename = "Qt")]
    pub q: Matrix,
    #[serde(rename = "R")]
    pub r: Matrix,
    #[serde(rename = "Tw")]
    pub t_w: Matrix,
    #[serde(rename = "N")]
    pub horizon: Spanned<usize>,
    pub lambda: Spanned<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    pub steps: Spanned<Vec<ReferenceStep>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceStep {
    pub k: usize,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KindSpec {
    #[default]
    Identification,
    Performance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningSection {
    #[serde(default)]
    pub kind: KindSpec,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_delta_term")]
    pub delta_term: f64,
    #[serde(default = "default_trial_length")]
    pub trial_length: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Spanned<Vec<bool>>>,
}

fn default_budget() -> usize {
    LearningConfig::default().budget
}

fn default_delta_term() -> f64 {
    LearningConfig::default().delta_term
}

fn default_trial_length() -> usize {
    LearningConfig::default().trial_length
}

impl Default for LearningSection {
    fn default() -> Self {
        LearningSection {
            kind: KindSpec::Identification,
            budget: default_budget(),
            delta_term: default_delta_term(),
            trial_length: default_trial_length(),
            noise: 0.0,
            seed: 0,
            mask: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invariant_cap: Option<usize>,
    /// fixed tube feedback `K` instead of the LQR gain
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tube_gain: Option<Matrix>,
}

/// Parsed scenario file together with its source, for error locations.
#[derive(Debug, Clone)]
pub struct SourcedScenario {
    pub file: ScenarioFile,
    pub origin: String,
    source: String,
}

impl SourcedScenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let source = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&source, &path.display().to_string())
    }

    pub fn parse(source: &str, origin: &str) -> Result<Self, CliError> {
        let file: ScenarioFile = toml::from_str(source).map_err(|e| {
            let at = e
                .span()
                .map(|s| {
                    let (line, col) = line_col(source, s.start);
                    format!(":{line}:{col}")
                })
                .unwrap_or_default();
            CliError::Parse(format!("{origin}{at}: {}", e.message()))
        })?;
        Ok(SourcedScenario {
            file,
            origin: origin.to_string(),
            source: source.to_string(),
        })
    }

    fn error_at(&self, span: Range<usize>, msg: impl std::fmt::Display) -> CliError {
        let (line, col) = line_col(&self.source, span.start);
        CliError::Parse(format!("{}:{line}:{col}: {msg}", self.origin))
    }

    /// Builds and validates the library scenario.
    pub fn to_scenario(&self) -> Result<Scenario, CliError> {
        let f = &self.file;
        let a = self.matrix(&f.plant.a, "A")?;
        let n = a.nrows();
        if a.ncols() != n {
            return Err(self.error_at(f.plant.a.span(), format!("A must be square, got {n}x{}", a.ncols())));
        }
        let b = self.matrix(&f.plant.b, "B")?;
        self.shape(&f.plant.b, &b, n, None, "B")?;
        let m = b.ncols();
        let c = self.matrix(&f.plant.c, "C")?;
        self.shape(&f.plant.c, &c, 0, Some(n), "C")?;
        let p = c.nrows();
        let d = match &f.plant.d {
            Some(d) => {
                let mat = self.matrix(d, "D")?;
                self.shape(d, &mat, p, Some(m), "D")?;
                mat
            }
            None => Mat::zeros(p, m),
        };
        let model = PlantModel::new(a, b, c, d).map_err(|e| self.error_at(f.plant.a.span(), e))?;

        let truth = match &f.truth {
            Some(t) => {
                let da = self.matrix(&t.da, "dA")?;
                self.shape(&t.da, &da, n, Some(n), "dA")?;
                let db = self.matrix(&t.db, "dB")?;
                self.shape(&t.db, &db, n, Some(m), "dB")?;
                Uncertainty::new(da, db).map_err(|e| self.error_at(t.da.span(), e))?
            }
            None => Uncertainty::zeros(n, m),
        };

        let x_set = self.set(&f.constraints.x, n, "X")?;
        let u_set = self.set(&f.constraints.u, m, "U")?;

        let t = &f.tuning;
        let q = self.matrix(&t.q, "Qt")?;
        self.shape(&t.q, &q, n, Some(n), "Qt")?;
        let r = self.matrix(&t.r, "R")?;
        self.shape(&t.r, &r, m, Some(m), "R")?;
        let t_w = self.matrix(&t.t_w, "Tw")?;
        self.shape(&t.t_w, &t_w, p, Some(p), "Tw")?;
        let tuning = Tuning::new(q, r, t_w, *t.horizon.get_ref(), *t.lambda.get_ref())
            .map_err(|e| self.error_at(t.q.span(), e))?;

        let steps = &f.reference.steps;
        let mut reference = Vec::with_capacity(steps.get_ref().len());
        for s in steps.get_ref() {
            if s.value.len() != p {
                return Err(self.error_at(
                    steps.span(),
                    format!("reference at step {} has {} values, expected {p}", s.k, s.value.len()),
                ));
            }
            reference.push((s.k, Vector::from_vec(s.value.clone())));
        }

        let x0 = f.x0.get_ref();
        if x0.len() != n {
            return Err(self.error_at(f.x0.span(), format!("x0 has {} entries, expected {n}", x0.len())));
        }

        let l = &f.learning;
        let learning = LearningConfig {
            kind: match l.kind {
                KindSpec::Identification => CostKind::Identification,
                KindSpec::Performance => CostKind::Performance,
            },
            budget: l.budget,
            delta_term: l.delta_term,
            trial_length: l.trial_length,
            noise: l.noise,
            seed: l.seed,
            mask: l.mask.as_ref().map(|m| m.get_ref().clone()),
        };

        let mut synthesis = SynthesisOptions::default();
        if let Some(s) = &f.synthesis {
            if let Some(alpha) = s.alpha_max {
                synthesis.alpha_max = alpha;
            }
            if let Some(cap) = s.invariant_cap {
                synthesis.invariant_cap = cap;
            }
            if let Some(k) = &s.tube_gain {
                let mat = self.matrix(k, "tube_gain")?;
                self.shape(k, &mat, m, Some(n), "tube_gain")?;
                synthesis.tube_gain = Some(mat);
            }
        }

        let scenario = Scenario {
            model,
            truth,
            ell_a: *f.bounds.ell_a.get_ref(),
            ell_b: *f.bounds.ell_b.get_ref(),
            x_set,
            u_set,
            tuning,
            reference,
            x0: Vector::from_vec(x0.clone()),
            learning,
            synthesis,
        };
        scenario
            .validate()
            .map_err(|e| CliError::Parse(format!("{}: {e}", self.origin)))?;
        Ok(scenario)
    }

    fn matrix(&self, m: &Matrix, name: &str) -> Result<Mat, CliError> {
        let rows = m.get_ref();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || ncols == 0 {
            return Err(self.error_at(m.span(), format!("{name} must be a nonempty matrix")));
        }
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(self.error_at(m.span(), format!("rows of {name} have different lengths")));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(self.error_at(m.span(), format!("{name} has non-finite entries")));
        }
        Ok(Mat::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
    }

    /// Checks `rows` (skipped when 0) and `cols` (skipped when `None`).
    fn shape(&self, spanned: &Matrix, m: &Mat, rows: usize, cols: Option<usize>, name: &str) -> Result<(), CliError> {
        let rows_ok = rows == 0 || m.nrows() == rows;
        let cols_ok = cols.is_none_or(|c| m.ncols() == c);
        if rows_ok && cols_ok {
            return Ok(());
        }
        let want_rows = if rows == 0 { "*".to_string() } else { rows.to_string() };
        let want_cols = cols.map_or("*".to_string(), |c| c.to_string());
        Err(self.error_at(
            spanned.span(),
            format!("{name} is {}x{}, expected {want_rows}x{want_cols}", m.nrows(), m.ncols()),
        ))
    }

    fn set(&self, spec: &Spanned<SetSpec>, dim: usize, name: &str) -> Result<Polytope, CliError> {
        let at = |msg: String| self.error_at(spec.span(), msg);
        let built = match spec.get_ref() {
            SetSpec::Symmetric { radius } => Polytope::symmetric_box(dim, *radius),
            SetSpec::Bounds { lower, upper } => {
                if lower.len() != dim || upper.len() != dim {
                    return Err(at(format!("{name} bounds must have {dim} entries")));
                }
                Polytope::from_box(&Vector::from_vec(lower.clone()), &Vector::from_vec(upper.clone()))
            }
            SetSpec::HRep { normals, offsets } => {
                if normals.len() != offsets.len() || normals.iter().any(|r| r.len() != dim) {
                    return Err(at(format!(
                        "{name} needs one offset per normal and normals of length {dim}"
                    )));
                }
                Polytope::new(
                    Mat::from_row_iterator(normals.len(), dim, normals.iter().flatten().copied()),
                    Vector::from_vec(offsets.clone()),
                )
            }
        };
        let set = built.map_err(|e| at(format!("{name}: {e}")))?;
        if set.is_empty() {
            return Err(at(format!("{name} is empty")));
        }
        Ok(set)
    }
}

impl ScenarioFile {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario files always serialize")
    }
}

/// 1-based line and column of byte offset `pos`.
fn line_col(source: &str, pos: usize) -> (usize, usize) {
    let before = &source[..pos.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, col)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_col_is_one_based() {
        let s = "a\nbc\nd";
        assert_eq!(line_col(s, 0), (1, 1));
        assert_eq!(line_col(s, 3), (2, 2));
        assert_eq!(line_col(s, 5), (3, 1));
    }
}
