//! Declarative experiments: a JSON config binds a domain, coefficient
//! fields, solver settings and the set of inequalities to verify.
//!
//! Every number in a config is a decimal string (`"3.14"`, `"128"`), so the
//! files read the same under any locale. Builtin configs ship with the crate
//! and are addressed as `builtin:<name>`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use crate::assembly::{assemble, OperatorPair};
use crate::bounds::{
    bound_constant, cor32_check, gap_check, lemma32_check, yang_check, BoundKind, Cor32Row,
    ErrorModel, GapReport, Lemma32Row, RowStatus, TestFunction, YangReport,
};
use crate::fields::{
    compute_c0, compute_eta_radial_constants, compute_t0, tensor_bounds,
    validate_radially_constant, ConstantSource, DriftField, OperatorConstants, ScalarField,
    TensorField,
};
use crate::geometry::{domain_origin_distance, make_box_domain, GridDomain, MetricModel, OriginPoint};
use crate::spectral::{
    parseval_defect, solve_lowest, validate_spectrum, SolverMethod, SolverSettings,
    SpectrumResult, ValidationReport,
};
use crate::{Error, Result};

pub const CONFIG_SCHEMA: &str = "1";
pub const REPORT_SCHEMA: u32 = 1;

/// Real number written as a decimal string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decimal(pub f64);

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match f64::from_str(s.trim()) {
            Ok(v) if v.is_finite() => Ok(Decimal(v)),
            _ => Err(de::Error::custom(format!("`{s}` is not a finite decimal number"))),
        }
    }
}

/// Nonnegative integer written as a decimal string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Count(pub usize);

impl Serialize for Count {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

impl<'de> Deserialize<'de> for Count {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        usize::from_str(s.trim())
            .map(Count)
            .map_err(|_| de::Error::custom(format!("`{s}` is not a nonnegative integer")))
    }
}

fn reals(v: &[Decimal]) -> Vec<f64> {
    v.iter().map(|d| d.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSpec {
    Euclidean,
    Hyperbolic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskSpec {
    All,
    /// Cells whose center lies in the open ball.
    Ball { center: Vec<Decimal>, radius: Decimal },
    /// Cells whose center lies in the open box.
    Box { bounds: Vec<[Decimal; 2]> },
    /// Cells whose center lies outside the closed box.
    ExcludeBox { bounds: Vec<[Decimal; 2]> },
}

impl MaskSpec {
    fn contains(&self, x: &[f64]) -> bool {
        let in_box = |b: &[[Decimal; 2]], strict: bool| {
            b.iter().zip(x).all(|(r, v)| if strict { r[0].0 < *v && *v < r[1].0 } else { r[0].0 <= *v && *v <= r[1].0 })
        };
        match self {
            MaskSpec::All => true,
            MaskSpec::Ball { center, radius } => {
                center.iter().zip(x).map(|(c, v)| (v - c.0).powi(2)).sum::<f64>() < radius.0 * radius.0
            }
            MaskSpec::Box { bounds } => in_box(bounds, true),
            MaskSpec::ExcludeBox { bounds } => !in_box(bounds, false),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub bounds: Vec<[Decimal; 2]>,
    pub resolution: Vec<Count>,
    #[serde(default = "default_mask")]
    pub mask: MaskSpec,
}

fn default_mask() -> MaskSpec {
    MaskSpec::All
}

/// Closed-form scalar presets, used for `η` and for diagonal entries of `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarSpec {
    Constant {
        value: Decimal,
    },
    Affine {
        constant: Decimal,
        coeffs: Vec<Decimal>,
    },
    Quadratic {
        constant: Decimal,
        linear: Vec<Decimal>,
        hessian: Vec<Vec<Decimal>>,
    },
    Gaussian {
        amplitude: Decimal,
        center: Vec<Decimal>,
        width: Decimal,
    },
    Sine {
        offset: Decimal,
        amplitude: Decimal,
        axis: Count,
        frequency: Decimal,
        #[serde(default = "zero")]
        phase: Decimal,
    },
    SineSquared {
        offset: Decimal,
        amplitude: Decimal,
        axis: Count,
        frequency: Decimal,
    },
}

fn zero() -> Decimal {
    Decimal(0.0)
}

impl ScalarSpec {
    pub fn build(&self, n: usize) -> Result<ScalarField> {
        let f = match self {
            ScalarSpec::Constant { value } => ScalarField::Constant(value.0),
            ScalarSpec::Affine { constant, coeffs } => {
                ScalarField::Affine { constant: constant.0, coeffs: reals(coeffs) }
            }
            ScalarSpec::Quadratic { constant, linear, hessian } => {
                if hessian.len() != n || hessian.iter().any(|r| r.len() != n) {
                    return Err(Error::Config(format!("quadratic hessian must be {n}×{n}")));
                }
                ScalarField::Quadratic {
                    constant: constant.0,
                    linear: reals(linear),
                    hessian: DMatrix::from_fn(n, n, |i, j| hessian[i][j].0),
                }
            }
            ScalarSpec::Gaussian { amplitude, center, width } => ScalarField::Gaussian {
                amplitude: amplitude.0,
                center: reals(center),
                width: width.0,
            },
            ScalarSpec::Sine { offset, amplitude, axis, frequency, phase } => ScalarField::Sine {
                offset: offset.0,
                amplitude: amplitude.0,
                axis: axis.0,
                frequency: frequency.0,
                phase: phase.0,
            },
            ScalarSpec::SineSquared { offset, amplitude, axis, frequency } => {
                ScalarField::SineSquared {
                    offset: offset.0,
                    amplitude: amplitude.0,
                    axis: axis.0,
                    frequency: frequency.0,
                }
            }
        };
        f.check_dim(n).map_err(|e| Error::Config(format!("scalar preset: {e}")))?;
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TensorSpec {
    Identity,
    ScaledIdentity { scale: Decimal },
    Constant { matrix: Vec<Vec<Decimal>> },
    Diagonal { entries: Vec<ScalarSpec> },
}

impl TensorSpec {
    pub fn build(&self, n: usize) -> Result<TensorField> {
        match self {
            TensorSpec::Identity => Ok(TensorField::identity(n)),
            TensorSpec::ScaledIdentity { scale } => Ok(TensorField::scaled_identity(n, scale.0)),
            TensorSpec::Constant { matrix } => {
                if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
                    return Err(Error::Config(format!("tensor matrix must be {n}×{n}")));
                }
                TensorField::constant(DMatrix::from_fn(n, n, |i, j| matrix[i][j].0))
            }
            TensorSpec::Diagonal { entries } => {
                if entries.len() != n {
                    return Err(Error::Config(format!("diagonal tensor needs {n} entries")));
                }
                TensorField::diagonal(entries.iter().map(|e| e.build(n)).collect::<Result<_>>()?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub k: Option<Count>,
    pub solve_tol: Option<Decimal>,
    pub ortho_tol: Option<Decimal>,
    pub multiplicity_rel_tol: Option<Decimal>,
    #[serde(default)]
    pub dense: bool,
    pub seed: Option<Count>,
    pub max_iter: Option<Count>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSpec {
    pub h0: Option<Decimal>,
    pub kappa1: Option<Decimal>,
    pub kappa2: Option<Decimal>,
    pub origin: Option<Vec<Decimal>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Gap,
    Yang,
    Cor32,
    Lemma32,
    Parseval,
}

impl FromStr for Check {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gap" => Ok(Check::Gap),
            "yang" => Ok(Check::Yang),
            "cor32" => Ok(Check::Cor32),
            "lemma32" => Ok(Check::Lemma32),
            "parseval" => Ok(Check::Parseval),
            other => Err(Error::Config(format!("unknown check `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GapSpec {
    pub k_min: Option<Count>,
    pub k_max: Option<Count>,
}

/// Test functions by name: `x1`, `x2`, … (coordinates), `ln_xn` (log of the
/// last coordinate) and `one` (the constant, a hypothesis negative control).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Cor32Spec {
    pub j: Option<Count>,
    pub k_max: Option<Count>,
    pub functions: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lemma32Spec {
    pub functions: Vec<String>,
    pub j: Count,
    pub k_values: Vec<Count>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleSpec {
    Interval {
        length: Option<Decimal>,
    },
    Box {
        lengths: Vec<Decimal>,
    },
    Anisotropic {
        lengths: Vec<Decimal>,
        coeffs: Vec<Decimal>,
    },
    DriftedInterval {
        c: Decimal,
        length: Option<Decimal>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    #[serde(flatten)]
    pub spectrum: OracleSpec,
    pub rel_tol: Decimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: String,
    pub name: String,
    pub metric: MetricSpec,
    pub domain: DomainSpec,
    pub tensor: TensorSpec,
    pub drift: ScalarSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub bounds: Vec<BoundKind>,
    #[serde(default)]
    pub constants: ConstantsSpec,
    #[serde(default)]
    pub verify: Vec<Check>,
    #[serde(default)]
    pub gap: GapSpec,
    #[serde(default)]
    pub cor32: Cor32Spec,
    pub lemma32: Option<Lemma32Spec>,
    pub oracle: Option<OracleConfig>,
    /// Factor applied to every bound constant; anything below one is a
    /// deliberate negative control.
    pub bound_scale: Option<Decimal>,
    /// Default output directory, relative to the working directory.
    pub output: Option<String>,
}

const BUILTINS: &[(&str, &str)] = &[
    ("interval_laplacian", include_str!("../scenarios/interval_laplacian.json")),
    ("square_laplacian", include_str!("../scenarios/square_laplacian.json")),
    ("anisotropic_square", include_str!("../scenarios/anisotropic_square.json")),
    ("drift_interval", include_str!("../scenarios/drift_interval.json")),
    ("hyperbolic_cy", include_str!("../scenarios/hyperbolic_cy.json")),
    ("lemma32_rectangle", include_str!("../scenarios/lemma32_rectangle.json")),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|(n, _)| *n).collect()
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        if cfg.schema_version != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported schema_version `{}` (expected `{CONFIG_SCHEMA}`)",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let text = BUILTINS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::Config(format!("no builtin scenario named `{name}`")))?;
        Self::from_json(text)
    }

    /// A file path, or `builtin:<name>`.
    pub fn load(source: &str) -> Result<Self> {
        match source.strip_prefix("builtin:") {
            Some(name) => Self::builtin(name),
            None => {
                let text = fs::read_to_string(source)
                    .map_err(|e| Error::Config(format!("cannot read `{source}`: {e}")))?;
                Self::from_json(&text)
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn dim(&self) -> usize {
        self.domain.bounds.len()
    }
}

/// Command-line adjustable settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub resolution: Option<Vec<usize>>,
    pub k: Option<usize>,
    pub solve_tol: Option<f64>,
    pub ortho_tol: Option<f64>,
    pub multiplicity_rel_tol: Option<f64>,
    pub seed: Option<u64>,
    /// Replaces the config's verification list.
    pub checks: Option<Vec<Check>>,
}

/// Closed-form Dirichlet spectra obtained by separation of variables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum OracleSpectrum {
    /// `(πk/L)²`
    Interval { length: f64 },
    /// `Σ (π p_i / L_i)²`
    Box { lengths: Vec<f64> },
    /// `Σ c_i (π p_i / L_i)²`
    Anisotropic { lengths: Vec<f64>, coeffs: Vec<f64> },
    /// `(πk/L)² + c²/4`, the drift `η = c·x`.
    DriftedInterval { c: f64, length: f64 },
}

impl From<&OracleSpec> for OracleSpectrum {
    fn from(s: &OracleSpec) -> Self {
        let len = |l: &Option<Decimal>| l.map_or(std::f64::consts::PI, |d| d.0);
        match s {
            OracleSpec::Interval { length } => OracleSpectrum::Interval { length: len(length) },
            OracleSpec::Box { lengths } => OracleSpectrum::Box { lengths: reals(lengths) },
            OracleSpec::Anisotropic { lengths, coeffs } => {
                OracleSpectrum::Anisotropic { lengths: reals(lengths), coeffs: reals(coeffs) }
            }
            OracleSpec::DriftedInterval { c, length } => {
                OracleSpectrum::DriftedInterval { c: c.0, length: len(length) }
            }
        }
    }
}

/// The `k` lowest oracle eigenvalues, ascending and repeated by multiplicity.
pub fn oracle_eigenvalues(oracle: &OracleSpectrum, k: usize) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    let (lengths, coeffs, shift) = match oracle {
        OracleSpectrum::Interval { length } => (vec![*length], vec![1.0], 0.0),
        OracleSpectrum::Box { lengths } => (lengths.clone(), vec![1.0; lengths.len()], 0.0),
        OracleSpectrum::Anisotropic { lengths, coeffs } => (lengths.clone(), coeffs.clone(), 0.0),
        OracleSpectrum::DriftedInterval { c, length } => (vec![*length], vec![1.0], c * c / 4.0),
    };
    let n = lengths.len();
    // the k lowest modes never use an index above k along any axis
    let mut values = Vec::new();
    let mut index = vec![1usize; n];
    loop {
        values.push(
            shift
                + (0..n)
                    .map(|a| coeffs[a] * (pi * index[a] as f64 / lengths[a]).powi(2))
                    .sum::<f64>(),
        );
        let mut a = 0;
        while a < n {
            index[a] += 1;
            if index[a] <= k {
                break;
            }
            index[a] = 1;
            a += 1;
        }
        if a == n {
            break;
        }
    }
    values.sort_by(f64::total_cmp);
    values.truncate(k);
    values
}

/// Everything needed to run a scenario, after validation.
pub struct ResolvedScenario {
    pub config: ScenarioConfig,
    pub domain: GridDomain,
    pub field: TensorField,
    pub drift: DriftField,
    pub settings: SolverSettings,
    pub checks: BTreeSet<Check>,
    pub bound_scale: f64,
}

impl ResolvedScenario {
    pub fn new(config: &ScenarioConfig, overrides: &Overrides) -> Result<Self> {
        let cfg = config.clone();
        let n = cfg.dim();
        if n == 0 {
            return Err(Error::Config("domain needs at least one axis".into()));
        }
        let metric = match cfg.metric {
            MetricSpec::Euclidean => MetricModel::euclidean(n)?,
            MetricSpec::Hyperbolic => MetricModel::hyperbolic(n)?,
        };
        let bounds: Vec<(f64, f64)> = cfg.domain.bounds.iter().map(|b| (b[0].0, b[1].0)).collect();
        let resolution: Vec<usize> = match &overrides.resolution {
            Some(r) if r.len() == 1 => vec![r[0]; n],
            Some(r) => r.clone(),
            None => cfg.domain.resolution.iter().map(|c| c.0).collect(),
        };
        let mask = cfg.domain.mask.clone();
        let domain = make_box_domain(&bounds, &resolution, metric, |x| mask.contains(x))?;
        let field = cfg.tensor.build(n)?;
        let drift = DriftField::preset(n, cfg.drift.build(n)?)?;

        let mut settings = SolverSettings::new(cfg.solver.k.map_or(10, |c| c.0));
        if let Some(v) = cfg.solver.solve_tol {
            settings.solve_tol = v.0;
        }
        if let Some(v) = cfg.solver.ortho_tol {
            settings.ortho_tol = v.0;
        }
        if let Some(v) = cfg.solver.multiplicity_rel_tol {
            settings.multiplicity_rel_tol = v.0;
        }
        if let Some(v) = cfg.solver.seed {
            settings.seed = v.0 as u64;
        }
        if let Some(v) = cfg.solver.max_iter {
            settings.max_iter = v.0;
        }
        if cfg.solver.dense {
            settings.method = SolverMethod::Dense;
        }
        if let Some(k) = overrides.k {
            settings.k = k;
        }
        if let Some(v) = overrides.solve_tol {
            settings.solve_tol = v;
        }
        if let Some(v) = overrides.ortho_tol {
            settings.ortho_tol = v;
        }
        if let Some(v) = overrides.multiplicity_rel_tol {
            settings.multiplicity_rel_tol = v;
        }
        if let Some(v) = overrides.seed {
            settings.seed = v;
        }
        if settings.k == 0 || settings.k > domain.dof_count() {
            return Err(Error::Config(format!(
                "k = {} is outside 1..={} (the number of interior nodes)",
                settings.k,
                domain.dof_count()
            )));
        }
        if !(settings.solve_tol > 0.0 && settings.ortho_tol > 0.0 && settings.multiplicity_rel_tol >= 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }

        let checks: BTreeSet<Check> = match &overrides.checks {
            Some(c) => c.iter().copied().collect(),
            None => cfg.verify.iter().copied().collect(),
        };
        let bound_scale = cfg.bound_scale.map_or(1.0, |d| d.0);
        if !(bound_scale > 0.0) {
            return Err(Error::Config("bound_scale must be positive".into()));
        }

        let resolved = ResolvedScenario { config: cfg, domain, field, drift, settings, checks, bound_scale };
        resolved.validate_hypotheses()?;
        Ok(resolved)
    }

    fn is_hyperbolic(&self) -> bool {
        self.config.metric == MetricSpec::Hyperbolic
    }

    /// Configuration-level hypothesis checks for the selected bounds.
    fn validate_hypotheses(&self) -> Result<()> {
        let c = &self.config.constants;
        let cfg_err = |m: String| Err(Error::Config(m));
        if !self.is_hyperbolic() {
            if c.h0.is_some_and(|h| h.0 != 0.0) {
                return cfg_err("H₀ is zero in Euclidean space; remove `constants.h0`".into());
            }
            if c.kappa1.is_some() || c.kappa2.is_some() || c.origin.is_some() {
                return cfg_err("κ₁, κ₂ and the origin only apply to hyperbolic scenarios".into());
            }
        } else if c.h0.is_none() {
            return cfg_err("hyperbolic scenarios require `constants.h0`".into());
        }
        if let Some(h) = c.h0 {
            if !(h.0 >= 0.0) {
                return cfg_err("H₀ must be nonnegative".into());
            }
        }
        for &kind in &self.config.bounds {
            let family = kind.family();
            if family == 1 && self.is_hyperbolic() {
                return cfg_err(format!("{kind} is a Euclidean bound; the scenario is hyperbolic"));
            }
            if family >= 2 && !self.is_hyperbolic() {
                return cfg_err(format!("{kind} requires the hyperbolic metric"));
            }
            if family == 2 {
                validate_radially_constant(&self.field, &self.drift, &self.domain).map_err(|e| {
                    Error::Config(format!("{kind} requires radially constant fields: {e}"))
                })?;
            }
            if family == 3 {
                if !self.field.is_scaled_identity() {
                    return cfg_err(format!("{kind} requires a radially parallel tensor (c·id)"));
                }
                if c.origin.is_none() {
                    return cfg_err(format!("{kind} requires `constants.origin`"));
                }
                let k1 = c.kappa1.map_or(1.0, |d| d.0);
                let k2 = c.kappa2.map_or(1.0, |d| d.0);
                if k1 != 1.0 || k2 != 1.0 {
                    return cfg_err("the half-space model has κ₁ = κ₂ = 1".into());
                }
            }
            if kind.needs_identity_tensor() && !self.field.is_identity() {
                return cfg_err(format!("{kind} is the Laplacian variant and needs T = id"));
            }
            if kind.needs_constant_drift() && !self.drift.is_constant() {
                return cfg_err(format!("{kind} needs a constant drift"));
            }
        }
        if self.checks.contains(&Check::Gap) && self.config.bounds.is_empty() {
            return cfg_err("the gap check needs at least one entry in `bounds`".into());
        }
        if self.checks.contains(&Check::Lemma32) && self.config.lemma32.is_none() {
            return cfg_err("the lemma32 check needs a `lemma32` section".into());
        }
        Ok(())
    }

    /// Named test function.
    pub fn test_function(&self, name: &str) -> Result<TestFunction> {
        let n = self.domain.dim();
        let f = if name == "one" {
            ScalarField::Constant(1.0)
        } else if name == "ln_xn" {
            ScalarField::Log { axis: n - 1, scale: 1.0 }
        } else if let Some(axis) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
            if axis == 0 || axis > n {
                return Err(Error::Config(format!("test function `{name}` names a missing axis")));
            }
            ScalarField::coordinate(axis - 1, n)
        } else {
            return Err(Error::Config(format!("unknown test function `{name}`")));
        };
        Ok(TestFunction { label: name.to_string(), f })
    }

    /// Every constant the bounds consume, with provenance.
    pub fn operator_constants(&self) -> Result<OperatorConstants> {
        let metric = self.domain.metric();
        let mut c = OperatorConstants::trivial(self.domain.dim());
        let (eps, delta) = tensor_bounds(&self.field, &self.domain)?;
        c.set("epsilon", eps, ConstantSource::Computed);
        c.set("delta", delta, ConstantSource::Computed);
        c.set("t0", compute_t0(&self.field, &metric, &self.domain)?, ConstantSource::Computed);
        c.set("c0", compute_c0(&self.field, &self.drift, &metric, &self.domain)?, ConstantSource::Computed);
        let cs = &self.config.constants;
        if self.is_hyperbolic() {
            let h0 = cs.h0.map_or(0.0, |d| d.0);
            c.set("h0", h0, ConstantSource::ConfigInput);
            let k1 = cs.kappa1.map_or(1.0, |d| d.0);
            let k2 = cs.kappa2.map_or(1.0, |d| d.0);
            let src = |given: bool| if given { ConstantSource::ConfigInput } else { ConstantSource::Default };
            c.set("kappa1", k1, src(cs.kappa1.is_some()));
            c.set("kappa2", k2, src(cs.kappa2.is_some()));
            if let Some(o) = &cs.origin {
                let o = OriginPoint(reals(o));
                c.set("d", domain_origin_distance(&self.domain, &o)?, ConstantSource::Computed);
                let (e1, er) = compute_eta_radial_constants(&self.drift, &metric, &self.domain, &o)?;
                c.set("eta1", e1, ConstantSource::Computed);
                c.set("eta_r", er, ConstantSource::Computed);
            }
        } else {
            c.set("h0", 0.0, ConstantSource::Forced);
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleComparison {
    pub spectrum: OracleSpectrum,
    pub expected: Vec<f64>,
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
    pub rel_tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedRow {
    pub label: String,
    pub j: usize,
    pub k: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundFailure {
    pub bound: BoundKind,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParsevalOutcome {
    pub eigenpairs: usize,
    pub dof_count: usize,
    pub norm_squared: f64,
    pub defect: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub pass: usize,
    pub fail: usize,
    pub inconclusive: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    Inconclusive,
}

impl Counts {
    pub fn outcome(&self) -> Outcome {
        if self.fail > 0 {
            Outcome::Fail
        } else if self.inconclusive > 0 {
            Outcome::Inconclusive
        } else {
            Outcome::Pass
        }
    }

    fn record(&mut self, ok: bool) {
        if ok {
            self.pass += 1;
        } else {
            self.fail += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumSummary {
    pub method: SolverMethod,
    pub k: usize,
    pub solve_tol: f64,
    pub ortho_tol: f64,
    pub multiplicity_rel_tol: f64,
    pub seed: u64,
    pub iterations: usize,
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub multiplicity_groups: Vec<usize>,
}

impl From<&SpectrumResult> for SpectrumSummary {
    fn from(s: &SpectrumResult) -> Self {
        SpectrumSummary {
            method: s.settings.method,
            k: s.settings.k,
            solve_tol: s.settings.solve_tol,
            ortho_tol: s.settings.ortho_tol,
            multiplicity_rel_tol: s.settings.multiplicity_rel_tol,
            seed: s.settings.seed,
            iterations: s.iterations,
            eigenvalues: s.eigenvalues.clone(),
            residuals: s.residuals.clone(),
            multiplicity_groups: s.multiplicity_groups.clone(),
        }
    }
}

/// Everything a scenario run produced. Serialized as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportBundle {
    pub schema_version: u32,
    pub name: String,
    pub metric: MetricSpec,
    pub resolution: Vec<usize>,
    pub dof_count: usize,
    pub quadrature: String,
    pub spectrum: SpectrumSummary,
    pub validation: ValidationReport,
    pub constants: Option<OperatorConstants>,
    pub bound_scale: f64,
    pub oracle: Option<OracleComparison>,
    pub gap_reports: Vec<GapReport>,
    pub bound_failures: Vec<BoundFailure>,
    pub yang: Option<YangReport>,
    pub cor32: Vec<Cor32Row>,
    pub lemma32: Vec<Lemma32Row>,
    pub skipped: Vec<SkippedRow>,
    pub parseval: Option<ParsevalOutcome>,
    pub counts: Counts,
    pub outcome: Outcome,
}

/// A finished run: the report plus the objects it was computed from.
pub struct ScenarioRun {
    pub report: ReportBundle,
    pub spectrum: SpectrumResult,
    pub pair: OperatorPair,
}

/// Assembles, solves and validates only.
pub fn run_spectrum(resolved: &ResolvedScenario) -> Result<(OperatorPair, SpectrumResult, ValidationReport)> {
    let pair = assemble(&resolved.domain, &resolved.field, &resolved.drift)?;
    let spectrum = solve_lowest(&pair, &resolved.settings)?;
    let validation = validate_spectrum(&spectrum, &pair);
    Ok((pair, spectrum, validation))
}

fn oracle_comparison(cfg: &OracleConfig, spectrum: &SpectrumResult) -> OracleComparison {
    let oracle = OracleSpectrum::from(&cfg.spectrum);
    let expected = oracle_eigenvalues(&oracle, spectrum.len());
    let relative_errors: Vec<f64> = expected
        .iter()
        .zip(&spectrum.eigenvalues)
        .map(|(e, l)| (l - e).abs() / e.abs())
        .collect();
    let max_relative_error = relative_errors.iter().copied().fold(0.0, f64::max);
    OracleComparison {
        spectrum: oracle,
        expected,
        relative_errors,
        max_relative_error,
        rel_tol: cfg.rel_tol.0,
        pass: max_relative_error <= cfg.rel_tol.0,
    }
}

/// Full pipeline: assemble, solve, validate, then every selected check.
pub fn run_scenario(resolved: &ResolvedScenario) -> Result<ScenarioRun> {
    let cfg = &resolved.config;
    let (pair, spectrum, validation) = run_spectrum(resolved)?;
    let mut counts = Counts::default();
    counts.record(validation.passed());

    let oracle = cfg.oracle.as_ref().map(|o| oracle_comparison(o, &spectrum));
    if let Some(o) = &oracle {
        counts.record(o.pass);
    }

    let checks = &resolved.checks;
    let needs_constants = checks.contains(&Check::Gap) || checks.contains(&Check::Yang) || checks.contains(&Check::Cor32);
    let constants = if needs_constants { Some(resolved.operator_constants()?) } else { None };
    let lambda1 = spectrum.lambda(1);

    let mut gap_reports = Vec::new();
    let mut bound_failures = Vec::new();
    if checks.contains(&Check::Gap) {
        let consts = constants.as_ref().expect("constants computed for gap");
        let k_max = cfg.gap.k_max.map_or(spectrum.len() - 1, |c| c.0);
        let k_min = cfg.gap.k_min.map_or(2, |c| c.0);
        let errors = ErrorModel { h: resolved.domain.metric_spacing(), epsilon: consts.epsilon };
        for &kind in &cfg.bounds {
            match bound_constant(kind, lambda1, consts) {
                Ok(mut b) => {
                    b.c *= resolved.bound_scale;
                    let report = gap_check(&spectrum, &b, k_min, k_max, &errors)?;
                    counts.pass += report.count(RowStatus::Pass);
                    counts.fail += report.count(RowStatus::Fail);
                    counts.inconclusive += report.count(RowStatus::Inconclusive);
                    gap_reports.push(report);
                }
                Err(e @ Error::NonpositiveRadicand { .. }) => {
                    counts.inconclusive += 1;
                    bound_failures.push(BoundFailure { bound: kind, reason: e.to_string() });
                }
                Err(e) => return Err(e),
            }
        }
    }

    let yang = if checks.contains(&Check::Yang) {
        let r = yang_check(&spectrum.eigenvalues, constants.as_ref().expect("constants computed"))?;
        for row in &r.rows {
            counts.record(row.pass);
        }
        Some(r)
    } else {
        None
    };

    let mut skipped = Vec::new();
    let mut cor32 = Vec::new();
    if checks.contains(&Check::Cor32) {
        let consts = constants.as_ref().expect("constants computed");
        let names = cfg.cor32.functions.clone().unwrap_or_else(|| {
            if resolved.is_hyperbolic() {
                vec!["ln_xn".to_string()]
            } else {
                (1..=resolved.domain.dim()).map(|a| format!("x{a}")).collect()
            }
        });
        let j = cfg.cor32.j.map_or(1, |c| c.0);
        let k_max = cfg.cor32.k_max.map_or(spectrum.len().saturating_sub(2), |c| c.0);
        for name in &names {
            let test = resolved.test_function(name)?;
            for k in 1..=k_max {
                match cor32_check(&spectrum, &pair, &resolved.field, &resolved.drift, &test, consts, j, k) {
                    Ok(row) => {
                        counts.record(row.passed());
                        cor32.push(row);
                    }
                    Err(e @ (Error::DegenerateGap { .. } | Error::HypothesisViolated(_))) => {
                        counts.skipped += 1;
                        skipped.push(SkippedRow { label: format!("cor32:{name}"), j, k, reason: e.to_string() });
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }

    let mut lemma32 = Vec::new();
    if checks.contains(&Check::Lemma32) {
        let spec = cfg.lemma32.as_ref().expect("validated");
        for name in &spec.functions {
            let g = resolved.test_function(name)?;
            for k in &spec.k_values {
                match lemma32_check(&spectrum, &pair, &resolved.field, &resolved.drift, &g, spec.j.0, k.0) {
                    Ok(row) => {
                        counts.record(row.holds);
                        lemma32.push(row);
                    }
                    Err(e @ Error::HypothesisViolated(_)) => {
                        counts.skipped += 1;
                        skipped.push(SkippedRow {
                            label: format!("lemma32:{name}"),
                            j: spec.j.0,
                            k: k.0,
                            reason: e.to_string(),
                        });
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }

    let parseval = if checks.contains(&Check::Parseval) {
        let mut rng = ChaCha8Rng::seed_from_u64(resolved.settings.seed);
        let f: Vec<f64> = (0..pair.dof_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm_squared = pair.mass.bilinear(&f, &f);
        let defect = parseval_defect(&spectrum, &pair, &f)?;
        let tol = 1e-10 * norm_squared;
        let complete = spectrum.len() == pair.dof_count();
        let pass = defect >= -tol && (!complete || defect <= tol);
        counts.record(pass);
        Some(ParsevalOutcome {
            eigenpairs: spectrum.len(),
            dof_count: pair.dof_count(),
            norm_squared,
            defect,
            pass,
        })
    } else {
        None
    };

    let report = ReportBundle {
        schema_version: REPORT_SCHEMA,
        name: cfg.name.clone(),
        metric: cfg.metric,
        resolution: resolved.domain.resolution().to_vec(),
        dof_count: pair.dof_count(),
        quadrature: pair.quadrature.describe(),
        spectrum: SpectrumSummary::from(&spectrum),
        validation,
        constants,
        bound_scale: resolved.bound_scale,
        oracle,
        gap_reports,
        bound_failures,
        yang,
        cor32,
        lemma32,
        skipped,
        parseval,
        outcome: counts.outcome(),
        counts,
    };
    Ok(ScenarioRun { report, spectrum, pair })
}

impl ReportBundle {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `report.json` and one CSV per table into `dir`.
    pub fn write(&self, spectrum: &SpectrumResult, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json()? + "\n")?;
        let mut buf = Vec::new();
        spectrum.write_csv(&mut buf)?;
        fs::write(dir.join("spectrum.csv"), buf)?;
        for g in &self.gap_reports {
            let mut buf = Vec::new();
            g.write_csv(&mut buf)?;
            fs::write(dir.join(format!("gap_{}.csv", g.bound)), buf)?;
            fs::write(dir.join(format!("gap_{}.json", g.bound)), g.to_json()? + "\n")?;
        }
        if let Some(y) = &self.yang {
            let mut s = String::from("k,upsilon_k1,rhs,pass\n");
            for r in &y.rows {
                s += &format!("{},{:.15e},{:.15e},{}\n", r.k, r.upsilon_k1, r.rhs, r.pass);
            }
            fs::write(dir.join("yang.csv"), s)?;
        }
        if !self.cor32.is_empty() {
            let mut s = String::from(
                "f,j,k,lambda_j,lambda_k1,lambda_k2,i1,i2,i3,lhs_squared,rhs_squared,holds_squared,lhs_linear,rhs_linear,holds_linear,chain_ok,implication_ok\n",
            );
            for r in &self.cor32 {
                s += &format!(
                    "{},{},{},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{},{:.15e},{:.15e},{},{},{}\n",
                    r.f, r.j, r.k, r.lambda_j, r.lambda_k1, r.lambda_k2, r.i1, r.i2, r.i3,
                    r.lhs_squared, r.rhs_squared, r.holds_squared, r.lhs_linear, r.rhs_linear,
                    r.holds_linear, r.chain_ok, r.implication_ok
                );
            }
            fs::write(dir.join("cor32.csv"), s)?;
        }
        if !self.lemma32.is_empty() {
            let mut s = String::from("g,j,k,lhs,rhs,margin,holds,overlap,projection_residual\n");
            for r in &self.lemma32 {
                s += &format!(
                    "{},{},{},{:.15e},{:.15e},{:.15e},{},{:.15e},{:.15e}\n",
                    r.g, r.j, r.k, r.lhs, r.rhs, r.margin, r.holds, r.overlap, r.projection_residual
                );
            }
            fs::write(dir.join("lemma32.csv"), s)?;
        }
        Ok(())
    }

    /// Short human-readable summary.
    pub fn summary_lines(&self) -> Vec<String> {
        let mut out = vec![format!(
            "{}: {} metric, resolution {:?}, {} DOFs, {} eigenpairs",
            self.name,
            match self.metric {
                MetricSpec::Euclidean => "euclidean",
                MetricSpec::Hyperbolic => "hyperbolic",
            },
            self.resolution,
            self.dof_count,
            self.spectrum.eigenvalues.len()
        )];
        out.push(format!(
            "  spectrum validation: {} (rayleigh margin {:.3e}, orthonormality defect {:.3e})",
            if self.validation.passed() { "pass" } else { "FAIL" },
            self.validation.rayleigh_margin,
            self.validation.orthonormality_defect
        ));
        if let Some(o) = &self.oracle {
            out.push(format!(
                "  oracle: max relative error {:.3e} (tolerance {:.1e}) {}",
                o.max_relative_error,
                o.rel_tol,
                if o.pass { "pass" } else { "FAIL" }
            ));
        }
        for g in &self.gap_reports {
            out.push(format!(
                "  gap {}: C = {:.6e}, exponent {:.4}, k {}..={}: {} pass, {} inconclusive, {} fail",
                g.bound,
                g.c,
                g.exponent,
                g.k_min,
                g.k_max,
                g.count(RowStatus::Pass),
                g.count(RowStatus::Inconclusive),
                g.count(RowStatus::Fail)
            ));
        }
        for f in &self.bound_failures {
            out.push(format!("  gap {}: not evaluated ({})", f.bound, f.reason));
        }
        if let Some(y) = &self.yang {
            let bad = y.rows.iter().filter(|r| !r.pass).count();
            out.push(format!("  yang: {} rows, {} violations", y.rows.len(), bad));
        }
        if !self.cor32.is_empty() {
            let bad = self.cor32.iter().filter(|r| !r.passed()).count();
            out.push(format!("  cor32: {} rows, {} violations", self.cor32.len(), bad));
        }
        if !self.lemma32.is_empty() {
            let bad = self.lemma32.iter().filter(|r| !r.holds).count();
            out.push(format!("  lemma32: {} rows, {} violations", self.lemma32.len(), bad));
        }
        if let Some(p) = &self.parseval {
            out.push(format!(
                "  parseval: defect {:.3e} of {:.3e} {}",
                p.defect,
                p.norm_squared,
                if p.pass { "pass" } else { "FAIL" }
            ));
        }
        for s in &self.skipped {
            out.push(format!("  skipped {} j={} k={}: {}", s.label, s.j, s.k, s.reason));
        }
        out.push(format!(
            "  outcome: {} ({} pass, {} inconclusive, {} fail, {} skipped)",
            self.outcome,
            self.counts.pass,
            self.counts.inconclusive,
            self.counts.fail,
            self.counts.skipped
        ));
        out
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::Inconclusive => "inconclusive",
        })
    }
}
