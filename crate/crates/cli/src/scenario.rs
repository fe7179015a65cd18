//! Scenario files: JSON description of a system, its moving set, the initial
//! state and the horizon.
//!
//! Matrices are row-major nested arrays. Infinite box bounds are written as
//! the strings `"inf"` and `"-inf"`. Time-varying bounds and offsets are
//! piecewise-linear tables `{"t": [...], "v": [...]}`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use lure::linalg::spectral_norm;
use lure::moving::TimeVectorMap;
use lure::{BoxSet, Drift, Error as CoreError, LureSystem, Matrix, MovingSet, PiecewiseLinear, Vector};
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// A real number that may be infinite, written as `"inf"`/`"-inf"` in JSON.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Real(pub f64);

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Real(v)),
            Raw::Text(s) => match s.as_str() {
                "inf" | "+inf" => Ok(Real(f64::INFINITY)),
                "-inf" => Ok(Real(f64::NEG_INFINITY)),
                other => Err(de::Error::custom(format!(
                    "expected a number, \"inf\" or \"-inf\", got \"{other}\""
                ))),
            },
        }
    }
}

/// Piecewise-linear scalar table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarTable {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
}

/// Piecewise-linear vector table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorTable {
    pub t: Vec<f64>,
    pub v: Vec<Vec<f64>>,
}

/// One box bound: a constant (possibly infinite) or a time table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Constant(Real),
    Table(ScalarTable),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetMode {
    /// `K₁(t) + Hx + g(t)` with `rge(H), g(t) ⊂ rge(D+Dᵀ)`.
    #[default]
    Decomposed,
    /// Same formula, without the range condition; uniqueness is not
    /// guaranteed.
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSpec {
    pub lower: Vec<Bound>,
    pub upper: Vec<Bound>,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<VectorTable>,
    #[serde(default)]
    pub mode: SetMode,
}

/// Declared constants; any that are absent are computed from the data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    #[serde(rename = "Lf", default, skip_serializing_if = "Option::is_none")]
    pub lf: Option<f64>,
    #[serde(rename = "LK1", default, skip_serializing_if = "Option::is_none")]
    pub lk1: Option<f64>,
    #[serde(rename = "LK2", default, skip_serializing_if = "Option::is_none")]
    pub lk2: Option<f64>,
    #[serde(rename = "Lh", default, skip_serializing_if = "Option::is_none")]
    pub lh: Option<f64>,
}

impl Constants {
    fn is_empty(&self) -> bool {
        self == &Constants::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub n: usize,
    pub m: usize,
    /// Linear drift `f(t,x) = Ax`.
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<Vec<f64>>>,
    pub set: SetSpec,
    pub x0: Vec<f64>,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub n_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Constants::is_empty")]
    pub constants: Constants,
    /// Load-time checks to skip; currently only `"kernel_inclusion"`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub waive: Vec<String>,
    /// Declared, unchecked assumptions (e.g. `"A3": true`), echoed by `check`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub assumptions: BTreeMap<String, bool>,
}

pub const WAIVE_KERNEL_INCLUSION: &str = "kernel_inclusion";

/// A scenario turned into solver objects.
#[derive(Debug, Clone)]
pub struct Built {
    pub system: LureSystem,
    pub x0: Vector,
    pub t_end: f64,
    pub n_steps: usize,
    /// Knots of all time tables, used to sample Lipschitz checks.
    pub knots: Vec<f64>,
}

impl fmt::Display for SetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SetMode::Decomposed => "decomposed",
            SetMode::General => "general",
        })
    }
}

pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Parse {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn read_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_scenario(&text, &path.display().to_string())
}

/// Reads, validates and builds a scenario.
pub fn load_scenario(path: &Path) -> Result<(Scenario, Built), CliError> {
    let scenario = read_scenario(path)?;
    let built = scenario.build()?;
    Ok((scenario, built))
}

pub fn emit(scenario: &Scenario) -> String {
    let mut text = serde_json::to_string_pretty(scenario).expect("scenario serializes");
    text.push('\n');
    text
}

pub fn matrix_from_rows(rows: &[Vec<f64>], shape: (usize, usize), what: &str) -> Result<Matrix, CliError> {
    let invalid = || {
        CliError::Validation(format!(
            "{what} must be a {}×{} matrix of finite numbers",
            shape.0, shape.1
        ))
    };
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(invalid());
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid());
    }
    Ok(Matrix::from_fn(shape.0, shape.1, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] + 0.0).collect())
        .collect()
}

fn table(t: &ScalarTable, what: &str) -> Result<PiecewiseLinear, CliError> {
    if t.v.len() != t.t.len() {
        return Err(CliError::Validation(format!("{what}: t and v differ in length")));
    }
    let knots: Vec<(f64, f64)> = t.t.iter().copied().zip(t.v.iter().copied()).collect();
    PiecewiseLinear::scalar(&knots).map_err(|e| CliError::Validation(format!("{what}: {e}")))
}

/// Time-dependent box bound.
#[derive(Debug, Clone)]
enum BoundFn {
    Constant(f64),
    Table(PiecewiseLinear),
}

impl BoundFn {
    fn eval(&self, t: f64) -> f64 {
        match self {
            BoundFn::Constant(v) => *v,
            BoundFn::Table(p) => p.eval_scalar(t),
        }
    }

    fn slope(&self) -> f64 {
        match self {
            BoundFn::Constant(_) => 0.0,
            BoundFn::Table(p) => p.lipschitz(),
        }
    }
}

fn bound_fn(b: &Bound, what: &str) -> Result<BoundFn, CliError> {
    match b {
        Bound::Constant(Real(v)) if v.is_nan() => Err(CliError::Validation(format!("{what} is NaN"))),
        Bound::Constant(Real(v)) => Ok(BoundFn::Constant(*v)),
        Bound::Table(t) => Ok(BoundFn::Table(table(t, what)?)),
    }
}

fn validation(context: &str, e: CoreError) -> CliError {
    CliError::Validation(format!("{context}: {}", describe(&e)))
}

/// Names the assumption behind a core validation error.
pub fn describe(e: &CoreError) -> String {
    match e {
        CoreError::NotPsd => "Assumption 2: D is not positive semidefinite".into(),
        CoreError::KernelInclusionViolated => {
            "Assumption 2: kernel inclusion ker(D+Dᵀ) ⊂ ker(PB−Cᵀ) fails".into()
        }
        CoreError::NotPositiveDefinite | CoreError::NotSymmetric => {
            format!("Assumption 2: storage matrix P: {e}")
        }
        CoreError::LipschitzBound { lk2, bound } => {
            format!("Assumption 1 bound: LK2 = {lk2} exceeds c2/|C| = {bound}")
        }
        CoreError::RangeConditionViolated(msg) => format!("Assumption 1': {msg}"),
        other => other.to_string(),
    }
}

impl Scenario {
    pub fn waives(&self, check: &str) -> bool {
        self.waive.iter().any(|w| w == check)
    }

    pub fn build(&self) -> Result<Built, CliError> {
        let (n, m) = (self.n, self.m);
        if n == 0 || m == 0 {
            return Err(CliError::Validation("n and m must be positive".into()));
        }
        for w in &self.waive {
            if w != WAIVE_KERNEL_INCLUSION {
                return Err(CliError::Validation(format!("unknown waiver \"{w}\"")));
            }
        }
        let a = matrix_from_rows(&self.a, (n, n), "A")?;
        let b = matrix_from_rows(&self.b, (n, m), "B")?;
        let c = matrix_from_rows(&self.c, (m, n), "C")?;
        let d = matrix_from_rows(&self.d, (m, m), "D")?;
        let p = self.p.as_ref().map(|p| matrix_from_rows(p, (n, n), "P")).transpose()?;
        if self.x0.len() != n || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Validation(format!("x0 must have {n} finite entries")));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(CliError::Validation("T must be positive".into()));
        }
        if self.n_steps == 0 {
            return Err(CliError::Validation("n_steps must be positive".into()));
        }

        let lf = spectral_norm(&a);
        let drift = match self.constants.lf {
            Some(declared) if declared + 1e-12 < lf => {
                return Err(CliError::Validation(format!(
                    "Assumption 5: declared Lf = {declared} is below ‖A‖ = {lf}"
                )))
            }
            Some(declared) => {
                let shared = a.clone();
                Drift::new(move |_, x| &shared * x, declared)
            }
            None => Drift::linear(a.clone()),
        };
        if let Some(sigma) = self.sigma {
            let sym = (&a + a.transpose()) * 0.5;
            let top = sym.symmetric_eigenvalues().max();
            if top > -sigma + 1e-12 {
                return Err(CliError::Validation(format!(
                    "decay hypothesis: ⟨Ax,x⟩ <= −σ‖x‖² needs λmax((A+Aᵀ)/2) = {top} <= −{sigma}"
                )));
            }
        }

        let (set, knots) = self.moving_set(n, m)?;
        let mut builder = LureSystem::builder(b, c, d, drift, set);
        if let Some(p) = p {
            builder = builder.storage(p);
        }
        if let Some(sigma) = self.sigma {
            builder = builder.sigma(sigma);
        }
        if self.waives(WAIVE_KERNEL_INCLUSION) {
            builder = builder.waive_kernel_inclusion();
        }
        let system = builder.build().map_err(|e| validation(&self.name, e))?;
        Ok(Built {
            system,
            x0: Vector::from_vec(self.x0.clone()),
            t_end: self.t_end,
            n_steps: self.n_steps,
            knots,
        })
    }

    fn moving_set(&self, n: usize, m: usize) -> Result<(MovingSet, Vec<f64>), CliError> {
        let spec = &self.set;
        if spec.lower.len() != m || spec.upper.len() != m {
            return Err(CliError::Validation(format!("set bounds must have {m} entries")));
        }
        let lower: Vec<BoundFn> = spec
            .lower
            .iter()
            .enumerate()
            .map(|(i, b)| bound_fn(b, &format!("set.lower[{i}]")))
            .collect::<Result<_, _>>()?;
        let upper: Vec<BoundFn> = spec
            .upper
            .iter()
            .enumerate()
            .map(|(i, b)| bound_fn(b, &format!("set.upper[{i}]")))
            .collect::<Result<_, _>>()?;
        let mut knots: Vec<f64> = spec
            .lower
            .iter()
            .chain(&spec.upper)
            .filter_map(|b| match b {
                Bound::Table(t) => Some(t.t.clone()),
                Bound::Constant(_) => None,
            })
            .flatten()
            .collect();
        // d_H(K₁(t), K₁(s)) <= sqrt(Σᵢ max(|Δlᵢ|, |Δuᵢ|)²).
        let lh1 = lower
            .iter()
            .zip(&upper)
            .map(|(l, u)| l.slope().max(u.slope()).powi(2))
            .sum::<f64>()
            .sqrt();
        let h = match &spec.h {
            Some(rows) => matrix_from_rows(rows, (m, n), "set.H")?,
            None => Matrix::zeros(m, n),
        };
        let g = match &spec.g {
            Some(t) => {
                if t.v.iter().any(|v| v.len() != m) {
                    return Err(CliError::Validation(format!("set.g values must have {m} entries")));
                }
                knots.extend(&t.t);
                Some(
                    PiecewiseLinear::new(t.t.clone(), t.v.iter().map(|v| Vector::from_vec(v.clone())).collect())
                        .map_err(|e| CliError::Validation(format!("set.g: {e}")))?,
                )
            }
            None => None,
        };
        let lh2 = g.as_ref().map_or(0.0, |g| g.lipschitz());
        let h_norm = spectral_norm(&h);
        let declared_at_least = |declared: Option<f64>, computed: f64, name: &str| -> Result<f64, CliError> {
            match declared {
                Some(v) if v + 1e-12 < computed => Err(CliError::Validation(format!(
                    "Assumption 1: declared {name} = {v} is below the value {computed} implied by the data"
                ))),
                Some(v) => Ok(v),
                None => Ok(computed),
            }
        };
        let lh = declared_at_least(self.constants.lh, h_norm, "Lh")?;
        let lk1 = declared_at_least(self.constants.lk1, lh1 + lh2, "LK1")?;
        let lk2 = declared_at_least(self.constants.lk2, lh, "LK2")?;

        for t in knots.iter().copied().chain([0.0, self.t_end]) {
            for i in 0..m {
                if lower[i].eval(t) > upper[i].eval(t) {
                    return Err(CliError::Validation(format!(
                        "Assumption 1: K(t) is empty at t = {t} (coordinate {i})"
                    )));
                }
            }
        }
        let base = move |t: f64| -> lure::Result<lure::ConvexSet> {
            let lo: Vec<f64> = lower.iter().map(|b| b.eval(t)).collect();
            let hi: Vec<f64> = upper.iter().map(|b| b.eval(t)).collect();
            Ok(BoxSet::from_bounds(&lo, &hi)?.into())
        };
        let offset: Option<TimeVectorMap> = g.map(|g| Arc::new(move |t: f64| g.eval(t)) as TimeVectorMap);
        let set = match spec.mode {
            SetMode::Decomposed => {
                if let Some(g) = &offset {
                    let sym = matrix_from_rows(&self.d, (m, m), "D")?;
                    let sym = &sym + sym.transpose();
                    for &t in &knots {
                        let gt = g(t);
                        let gm = Matrix::from_column_slice(m, 1, gt.as_slice());
                        if !lure::linalg::range_contained(&gm, &sym, lure::linalg::RANK_TOL) {
                            return Err(CliError::Validation(format!(
                                "Assumption 1': g({t}) is not in rge(D+Dᵀ)"
                            )));
                        }
                    }
                }
                let lh1 = if self.constants.lk1.is_some() { lk1 - lh2 } else { lh1 };
                MovingSet::decomposed(base, h, offset, Some(lk2), lh1, lh2)
            }
            SetMode::General => MovingSet::general(
                move |t, x: &Vector| {
                    let mut shift = &h * x;
                    if let Some(g) = &offset {
                        shift += g(t);
                    }
                    Ok(base(t)?.translate(shift))
                },
                lk1,
                lk2,
            ),
        };
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        Ok((set, knots))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "unit",
        "n": 1, "m": 1,
        "A": [[-1]], "B": [[1]], "C": [[1]], "D": [[0]],
        "set": {"lower": [{"t": [0, 2], "v": [-1, 1]}], "upper": ["inf"]},
        "x0": [0], "T": 2, "n_steps": 20
    }"#;

    #[test]
    fn parses_infinities_and_tables() {
        let s = parse_scenario(MINIMAL, "inline").unwrap();
        assert_eq!(s.set.upper[0], Bound::Constant(Real(f64::INFINITY)));
        let built = s.build().unwrap();
        let k = built.system.set().evaluate(1.0, &Vector::zeros(1)).unwrap().as_box().unwrap();
        assert_eq!(k.lower()[0], 0.0);
        assert_eq!(k.upper()[0], f64::INFINITY);
        assert_eq!(built.system.set().lipschitz_constants(), (1.0, 0.0));
        assert_eq!(built.knots, vec![0.0, 2.0]);
    }

    #[test]
    fn round_trip() {
        let s = parse_scenario(MINIMAL, "inline").unwrap();
        assert_eq!(parse_scenario(&emit(&s), "emitted").unwrap(), s);
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = parse_scenario("{\n  \"name\": 3\n}", "bad.json").unwrap_err();
        match err {
            CliError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_names_assumptions() {
        let mut s = parse_scenario(MINIMAL, "inline").unwrap();
        s.d = vec![vec![-1.0]];
        let msg = s.build().unwrap_err().to_string();
        assert!(msg.contains("Assumption 2"), "{msg}");

        let mut s = parse_scenario(MINIMAL, "inline").unwrap();
        s.constants.lk2 = Some(2.0);
        let msg = s.build().unwrap_err().to_string();
        assert!(msg.contains("Assumption 1 bound"), "{msg}");

        let mut s = parse_scenario(MINIMAL, "inline").unwrap();
        s.constants.lk1 = Some(0.5);
        let msg = s.build().unwrap_err().to_string();
        assert!(msg.contains("Assumption 1"), "{msg}");

        let mut s = parse_scenario(MINIMAL, "inline").unwrap();
        s.sigma = Some(2.0);
        assert!(s.build().is_err());
    }
}
