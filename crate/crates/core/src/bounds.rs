//! Gap-bound constants and the auxiliary inequalities they rest on.
//!
//! Every gap bound has the shape `λ_{k+1} − λ_k ≤ C · k^{δ/(nε)}` for `k > 1`.
//! [`bound_constant`] evaluates `C` for the flat, half-space and pinched
//! negatively curved settings together with their specializations to the
//! Cheng–Yau operator and the (drifted) Laplacian; [`gap_check`] compares a
//! computed spectrum against it.

use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{project_function, OperatorPair};
use crate::fields::{
    apply_operator_l, operator_l_differential, DriftField, OperatorConstants, ScalarField,
    TensorField,
};
use crate::spectral::SpectrumResult;
use crate::{Error, Result};

pub const GAP_REPORT_SCHEMA: u32 = 1;

/// Relative slack granted to every "≤" comparison against a bound.
pub const BOUND_REL_TOL: f64 = 1e-12;

/// A nondecreasing positive sequence `μ` with weights `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma31Instance {
    pub mu: Vec<f64>,
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma31Outcome {
    /// `Σ μ_j r_j²`
    pub s: f64,
    /// `Σ μ_j² r_j²`
    pub a: f64,
    /// `Σ r_j²`
    pub b: f64,
    /// Multiplicity of `μ₁`.
    pub m1: usize,
    /// `(A + μ_{m₁} μ_{m₁+1} B) / (μ_{m₁} + μ_{m₁+1})`
    pub bound: f64,
    /// `S < √(AB)`
    pub hypothesis_ok: bool,
    pub conclusion_ok: bool,
}

impl Lemma31Instance {
    pub fn new(mu: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        let inst = Lemma31Instance { mu, r };
        inst.validate()?;
        Ok(inst)
    }

    pub fn m1(&self) -> usize {
        self.mu.iter().take_while(|&&m| m == self.mu[0]).count()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInstance(m.to_string()));
        if self.mu.len() != self.r.len() {
            return bad("μ and r must have equal length");
        }
        if self.mu.is_empty() {
            return bad("empty sequence");
        }
        if self.mu.iter().chain(&self.r).any(|v| !v.is_finite()) {
            return bad("non-finite entry");
        }
        if !(self.mu[0] > 0.0) {
            return bad("μ₁ must be positive");
        }
        if self.mu.windows(2).any(|w| w[1] < w[0]) {
            return bad("μ must be nondecreasing");
        }
        let m1 = self.m1();
        if m1 == self.mu.len() {
            return bad("μ needs a value above μ₁");
        }
        if self.r[m1 - 1] == 0.0 {
            return bad("r_{m₁} must be nonzero");
        }
        Ok(())
    }
}

pub fn lemma31_check(inst: &Lemma31Instance) -> Result<Lemma31Outcome> {
    inst.validate()?;
    let (mut s, mut a, mut b) = (0.0, 0.0, 0.0);
    for (m, r) in inst.mu.iter().zip(&inst.r) {
        let r2 = r * r;
        s += m * r2;
        a += m * m * r2;
        b += r2;
    }
    let m1 = inst.m1();
    let (lo, hi) = (inst.mu[m1 - 1], inst.mu[m1]);
    let bound = (a + lo * hi * b) / (lo + hi);
    Ok(Lemma31Outcome {
        s,
        a,
        b,
        m1,
        bound,
        hypothesis_ok: s < (a * b).sqrt(),
        conclusion_ok: s <= bound + BOUND_REL_TOL * bound.abs().max(1.0),
    })
}

/// Seeded random instance: length in `2..=50`, ties in `μ` with
/// probability ¼, occasional zero weights (never at `m₁`).
pub fn random_lemma31_instance<R: Rng>(rng: &mut R) -> Lemma31Instance {
    let len = rng.gen_range(2..=50);
    let mut mu = Vec::with_capacity(len);
    let mut current = rng.gen_range(0.01..10.0);
    for j in 0..len {
        if j > 0 && !rng.gen_bool(0.25) {
            current += rng.gen_range(1e-3..5.0);
        }
        mu.push(current);
    }
    if mu.iter().all(|&m| m == mu[0]) {
        mu[len - 1] += 1.0;
    }
    let mut r: Vec<f64> = (0..len)
        .map(|_| if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(-1.0..1.0) })
        .collect();
    let m1 = mu.iter().take_while(|&&m| m == mu[0]).count();
    if r[m1 - 1] == 0.0 {
        r[m1 - 1] = 0.5;
    }
    Lemma31Instance { mu, r }
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma31Suite {
    pub trials: usize,
    pub seed: u64,
    pub hypothesis_satisfied: usize,
    pub counterexamples: Vec<(Lemma31Instance, Lemma31Outcome)>,
    /// Largest `|S − bound| / max(1, |bound|)` over two-term instances.
    pub two_term_max_defect: f64,
}

/// Runs `trials` random instances plus one two-term instance per trial.
pub fn lemma31_suite(trials: usize, seed: u64) -> Result<Lemma31Suite> {
    if trials == 0 {
        return Err(Error::InvalidInstance("at least one trial is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut suite = Lemma31Suite {
        trials,
        seed,
        hypothesis_satisfied: 0,
        counterexamples: Vec::new(),
        two_term_max_defect: 0.0,
    };
    for _ in 0..trials {
        let inst = random_lemma31_instance(&mut rng);
        let out = lemma31_check(&inst)?;
        if out.hypothesis_ok {
            suite.hypothesis_satisfied += 1;
            if !out.conclusion_ok {
                suite.counterexamples.push((inst, out));
            }
        }
        let m1 = rng.gen_range(0.1..10.0);
        let two = Lemma31Instance {
            mu: vec![m1, m1 + rng.gen_range(1e-3..10.0)],
            r: vec![rng.gen_range(0.1..1.0), rng.gen_range(-1.0..1.0)],
        };
        let out = lemma31_check(&two)?;
        suite.two_term_max_defect =
            suite.two_term_max_defect.max((out.s - out.bound).abs() / out.bound.abs().max(1.0));
    }
    Ok(suite)
}

/// Which gap-bound constant to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BoundKind {
    /// Euclidean domains, general `T` and `η`.
    #[serde(rename = "thm11")]
    Thm11,
    /// Drifted Cheng–Yau operator: `T₀ = 0`.
    #[serde(rename = "cor1_i")]
    Cor1I,
    /// Cheng–Yau operator: `T₀ = C₀ = 0`.
    #[serde(rename = "cor1_ii")]
    Cor1Ii,
    /// Drifted Laplacian: `ε = δ = 1`, `T₀ = 0`.
    #[serde(rename = "cor1_iii")]
    Cor1Iii,
    /// Laplacian.
    #[serde(rename = "cor1_iv")]
    Cor1Iv,
    /// Hyperbolic space, radially constant `η` and `T(∂_n) = ψ∂_n`.
    #[serde(rename = "thm12")]
    Thm12,
    #[serde(rename = "cor2_i")]
    Cor2I,
    #[serde(rename = "cor2_ii")]
    Cor2Ii,
    #[serde(rename = "cor2_iii")]
    Cor2Iii,
    #[serde(rename = "cor2_iv")]
    Cor2Iv,
    /// Pinched Cartan–Hadamard manifolds with radially parallel `T`.
    #[serde(rename = "thm13")]
    Thm13,
    /// Cheng–Yau operator: `η` terms and `C₀` vanish.
    #[serde(rename = "cor3_i")]
    Cor3I,
    /// Drifted Laplacian: `ε = δ = 1`.
    #[serde(rename = "cor3_ii")]
    Cor3Ii,
    /// Laplacian.
    #[serde(rename = "cor3_iii")]
    Cor3Iii,
}

impl BoundKind {
    pub const ALL: [BoundKind; 14] = [
        BoundKind::Thm11,
        BoundKind::Cor1I,
        BoundKind::Cor1Ii,
        BoundKind::Cor1Iii,
        BoundKind::Cor1Iv,
        BoundKind::Thm12,
        BoundKind::Cor2I,
        BoundKind::Cor2Ii,
        BoundKind::Cor2Iii,
        BoundKind::Cor2Iv,
        BoundKind::Thm13,
        BoundKind::Cor3I,
        BoundKind::Cor3Ii,
        BoundKind::Cor3Iii,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            BoundKind::Thm11 => "thm11",
            BoundKind::Cor1I => "cor1_i",
            BoundKind::Cor1Ii => "cor1_ii",
            BoundKind::Cor1Iii => "cor1_iii",
            BoundKind::Cor1Iv => "cor1_iv",
            BoundKind::Thm12 => "thm12",
            BoundKind::Cor2I => "cor2_i",
            BoundKind::Cor2Ii => "cor2_ii",
            BoundKind::Cor2Iii => "cor2_iii",
            BoundKind::Cor2Iv => "cor2_iv",
            BoundKind::Thm13 => "thm13",
            BoundKind::Cor3I => "cor3_i",
            BoundKind::Cor3Ii => "cor3_ii",
            BoundKind::Cor3Iii => "cor3_iii",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    /// The theorem this constant belongs to: 1 (flat), 2 (half-space) or
    /// 3 (pinched).
    pub fn family(self) -> u8 {
        match self {
            BoundKind::Thm11
            | BoundKind::Cor1I
            | BoundKind::Cor1Ii
            | BoundKind::Cor1Iii
            | BoundKind::Cor1Iv => 1,
            BoundKind::Thm12
            | BoundKind::Cor2I
            | BoundKind::Cor2Ii
            | BoundKind::Cor2Iii
            | BoundKind::Cor2Iv => 2,
            _ => 3,
        }
    }

    /// Whether the variant assumes `T = id`.
    pub fn needs_identity_tensor(self) -> bool {
        matches!(
            self,
            BoundKind::Cor1Iii
                | BoundKind::Cor1Iv
                | BoundKind::Cor2Iii
                | BoundKind::Cor2Iv
                | BoundKind::Cor3Ii
                | BoundKind::Cor3Iii
        )
    }

    /// Whether the variant assumes a constant drift.
    pub fn needs_constant_drift(self) -> bool {
        matches!(
            self,
            BoundKind::Cor1Ii
                | BoundKind::Cor1Iv
                | BoundKind::Cor2Ii
                | BoundKind::Cor2Iv
                | BoundKind::Cor3I
                | BoundKind::Cor3Iii
        )
    }

    /// Whether the variant assumes `tr(∇T) = 0`.
    pub fn needs_divergence_free_tensor(self) -> bool {
        matches!(
            self,
            BoundKind::Cor1I | BoundKind::Cor1Ii | BoundKind::Cor2I | BoundKind::Cor2Ii
        )
    }

    /// Constants as the variant's formula sees them.
    pub fn specialize(self, c: &OperatorConstants) -> OperatorConstants {
        let mut e = c.clone();
        if self.needs_identity_tensor() {
            e.epsilon = 1.0;
            e.delta = 1.0;
        }
        if self.needs_identity_tensor() || self.needs_divergence_free_tensor() {
            e.t0 = 0.0;
        }
        if self.needs_constant_drift() {
            e.c0 = 0.0;
            e.eta1 = 0.0;
            e.eta_r = 0.0;
        }
        if self == BoundKind::Cor3Ii {
            // the drifted-Laplacian variant of the pinched bound carries no C₀
            e.c0 = 0.0;
        }
        e
    }
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// `a(n, T) = max(0, 2(n−1)δ² − (n−1)²ε²)`.
pub fn a_nt(n: usize, epsilon: f64, delta: f64) -> f64 {
    let m = n as f64 - 1.0;
    (2.0 * m * delta * delta - m * m * epsilon * epsilon).max(0.0)
}

fn positive(what: &str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonpositiveRadicand { what: what.to_string(), value })
    }
}

fn check_lambda1(lambda1: f64) -> Result<()> {
    if lambda1 > 0.0 && lambda1.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInstance(format!("λ₁ must be positive, got {lambda1}")))
    }
}

/// `C = 4(λ₁ + (4C₀ + T₀²)/(4δ)) √(δ/(σn) · (1 + 4δ/(nε)))`.
pub fn theorem11_constant(lambda1: f64, c: &OperatorConstants) -> Result<f64> {
    c.validate()?;
    check_lambda1(lambda1)?;
    let n = c.n as f64;
    let shifted = positive(
        "λ₁ + (4C₀ + T₀²)/(4δ)",
        lambda1 + (4.0 * c.c0 + c.t0 * c.t0) / (4.0 * c.delta),
    )?;
    let growth = 1.0 + 4.0 * c.delta / (n * c.epsilon);
    Ok(4.0 * shifted * (c.delta / (c.sigma() * n) * growth).sqrt())
}

/// `C = (4/√σ)[(1 + 4δ/(nε))(δλ₁ − ε²(n−1)²/4)(λ₁ + (n²H₀² + 4C₀ + T₀²)/(4δ))]^{1/2}`.
pub fn theorem12_constant(lambda1: f64, c: &OperatorConstants) -> Result<f64> {
    c.validate()?;
    check_lambda1(lambda1)?;
    let n = c.n as f64;
    let ground = positive(
        "δλ₁ − ε²(n−1)²/4",
        c.delta * lambda1 - c.epsilon * c.epsilon * (n - 1.0).powi(2) / 4.0,
    )?;
    let shifted = positive(
        "λ₁ + (n²H₀² + 4C₀ + T₀²)/(4δ)",
        lambda1 + (n * n * c.h0 * c.h0 + 4.0 * c.c0 + c.t0 * c.t0) / (4.0 * c.delta),
    )?;
    let growth = 1.0 + 4.0 * c.delta / (n * c.epsilon);
    Ok(4.0 / c.sigma().sqrt() * (growth * ground * shifted).sqrt())
}

/// The pinched-curvature constant; needs `d = dist(Ω, o)`.
pub fn theorem13_constant(lambda1: f64, c: &OperatorConstants) -> Result<f64> {
    c.validate()?;
    check_lambda1(lambda1)?;
    let d = c
        .d
        .ok_or_else(|| Error::InvalidInstance("distance d to the origin is required".into()))?;
    let n = c.n as f64;
    let (e2, d2) = (c.epsilon * c.epsilon, c.delta * c.delta);
    let curvature = (2.0 * (n - 1.0) * d2 - (2.0 * n - 3.0) * e2) * c.kappa1 * c.kappa1
        - (n * n - 2.0 * n + 2.0) * e2 * c.kappa2 * c.kappa2
        + 2.0 * d2 * c.eta1;
    let first = positive(
        "first factor of the pinched bound",
        c.delta * lambda1
            + curvature / 4.0
            + d2 * c.eta_r * (n - 1.0) * (c.kappa1 + 1.0 / d) / 2.0
            + a_nt(c.n, c.epsilon, c.delta) / (4.0 * d * d),
    )?;
    let shifted = positive(
        "λ₁ + (n²H₀² + 4C₀)/(4δ)",
        lambda1 + (n * n * c.h0 * c.h0 + 4.0 * c.c0) / (4.0 * c.delta),
    )?;
    let growth = 1.0 + 4.0 * c.delta / (n * c.epsilon);
    Ok(4.0 / c.sigma().sqrt() * (first * growth * shifted).sqrt())
}

/// An evaluated gap-bound constant with the constants it consumed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundConstant {
    pub kind: BoundKind,
    pub lambda1: f64,
    pub c: f64,
    pub exponent: f64,
    pub constants: OperatorConstants,
}

pub fn bound_constant(
    kind: BoundKind,
    lambda1: f64,
    consts: &OperatorConstants,
) -> Result<BoundConstant> {
    let e = kind.specialize(consts);
    let c = match kind.family() {
        1 => theorem11_constant(lambda1, &e)?,
        2 => theorem12_constant(lambda1, &e)?,
        _ => theorem13_constant(lambda1, &e)?,
    };
    Ok(BoundConstant { kind, lambda1, c, exponent: e.exponent(), constants: e })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YangRow {
    pub k: usize,
    pub upsilon_k1: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YangReport {
    pub shift: f64,
    pub upsilon1: f64,
    pub rows: Vec<YangRow>,
}

impl YangReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// `υ_{k+1} ≤ (1 + 4δ/(nε)) k^{2δ/(nε)} υ₁` with
/// `υ_j = λ_j + (n²H₀² + 4C₀ + T₀²)/(4δ)`, for every `k` the list allows.
pub fn yang_check(eigenvalues: &[f64], c: &OperatorConstants) -> Result<YangReport> {
    c.validate()?;
    if eigenvalues.len() < 2 {
        return Err(Error::InsufficientSpectrum { required: 2, available: eigenvalues.len() });
    }
    let n = c.n as f64;
    let shift = (n * n * c.h0 * c.h0 + 4.0 * c.c0 + c.t0 * c.t0) / (4.0 * c.delta);
    let upsilon1 = eigenvalues[0] + shift;
    if !(upsilon1 > 0.0) {
        return Err(Error::NonpositiveUpsilon(upsilon1));
    }
    let growth = 1.0 + 4.0 * c.delta / (n * c.epsilon);
    let rows = (1..eigenvalues.len())
        .map(|k| {
            let upsilon_k1 = eigenvalues[k] + shift;
            let rhs = growth * (k as f64).powf(2.0 * c.exponent()) * upsilon1;
            YangRow { k, upsilon_k1, rhs, pass: upsilon_k1 <= rhs * (1.0 + BOUND_REL_TOL) }
        })
        .collect();
    Ok(YangReport { shift, upsilon1, rows })
}

/// Heuristic discretization error for eigenvalue `λ`: `λ² h² / (12 ε)`, the
/// leading term of linear-element eigenvalue error for `T = ε·id`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorModel {
    /// Mesh width measured in the metric.
    pub h: f64,
    pub epsilon: f64,
}

impl ErrorModel {
    pub fn eigenvalue_error(&self, lambda: f64) -> f64 {
        lambda * lambda * self.h * self.h / (12.0 * self.epsilon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Pass,
    /// Violated by less than three times the estimated numerical error.
    Inconclusive,
    Fail,
    /// `k = 1`: outside the range the bounds claim.
    Informational,
}

impl RowStatus {
    pub fn tag(self) -> &'static str {
        match self {
            RowStatus::Pass => "pass",
            RowStatus::Inconclusive => "inconclusive",
            RowStatus::Fail => "fail",
            RowStatus::Informational => "informational",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub k: usize,
    pub lambda_k: f64,
    pub lambda_k1: f64,
    /// `λ_{k+1} − λ_k`, zero inside a multiplet.
    pub gap: f64,
    pub bound: f64,
    pub margin: f64,
    pub same_multiplet: bool,
    pub residual: f64,
    pub error_estimate: f64,
    pub status: RowStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub schema_version: u32,
    pub bound: BoundKind,
    pub lambda1: f64,
    pub c: f64,
    pub exponent: f64,
    pub constants: OperatorConstants,
    pub k_min: usize,
    pub k_max: usize,
    pub rows: Vec<GapRow>,
}

impl GapReport {
    pub fn count(&self, status: RowStatus) -> usize {
        self.rows.iter().filter(|r| r.status == status).count()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "k,lambda_k,lambda_k1,gap,bound,margin,same_multiplet,residual,error_estimate,status"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{},{:.6e},{:.6e},{}",
                r.k,
                r.lambda_k,
                r.lambda_k1,
                r.gap,
                r.bound,
                r.margin,
                r.same_multiplet,
                r.residual,
                r.error_estimate,
                r.status.tag()
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Compares `λ_{k+1} − λ_k` with `C k^{exponent}` for `k` in `k_min..=k_max`.
/// Rows with `k = 1` are informational only.
pub fn gap_check(
    spectrum: &SpectrumResult,
    bound: &BoundConstant,
    k_min: usize,
    k_max: usize,
    errors: &ErrorModel,
) -> Result<GapReport> {
    if !(bound.c > 0.0) {
        return Err(Error::InvalidInstance(format!("bound constant must be positive, got {}", bound.c)));
    }
    if k_min == 0 || k_min > k_max {
        return Err(Error::InvalidInstance(format!("empty k range {k_min}..={k_max}")));
    }
    if spectrum.len() < k_max + 1 {
        return Err(Error::InsufficientSpectrum { required: k_max + 1, available: spectrum.len() });
    }
    let rows = (k_min..=k_max)
        .map(|k| {
            let (lk, lk1) = (spectrum.lambda(k), spectrum.lambda(k + 1));
            let same = spectrum.same_multiplet(k, k + 1);
            let gap = if same { 0.0 } else { lk1 - lk };
            let b = bound.c * (k as f64).powf(bound.exponent);
            let residual = spectrum.residuals[k - 1].max(spectrum.residuals[k]);
            let error_estimate = errors.eigenvalue_error(lk)
                + errors.eigenvalue_error(lk1)
                + spectrum.residuals[k - 1]
                + spectrum.residuals[k];
            let status = if k == 1 {
                RowStatus::Informational
            } else if gap <= b * (1.0 + BOUND_REL_TOL) {
                RowStatus::Pass
            } else if gap - b <= 3.0 * error_estimate {
                RowStatus::Inconclusive
            } else {
                RowStatus::Fail
            };
            GapRow {
                k,
                lambda_k: lk,
                lambda_k1: lk1,
                gap,
                bound: b,
                margin: b - gap,
                same_multiplet: same,
                residual,
                error_estimate,
                status,
            }
        })
        .collect();
    Ok(GapReport {
        schema_version: GAP_REPORT_SCHEMA,
        bound: bound.kind,
        lambda1: bound.lambda1,
        c: bound.c,
        exponent: bound.exponent,
        constants: bound.constants.clone(),
        k_min,
        k_max,
        rows,
    })
}

/// Test function `f` with `|∇f| = 1` for the gap-difference inequalities.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub label: String,
    pub f: ScalarField,
}

/// The three integrals of the gap-difference inequalities for one
/// eigenvector `u`:
/// `I₁ = ∫⟨T∇u, ∇f⟩² dm`, `I₂ = ∫(𝓛f)² u² dm`, `I₃ = ∫⟨∇(𝓛f), T∇f⟩ u² dm`.
pub fn cor32_integrals(
    pair: &OperatorPair,
    field: &TensorField,
    drift: &DriftField,
    f: &ScalarField,
    u: &[f64],
) -> Result<(f64, f64, f64)> {
    let metric = pair.domain.metric();
    let (mut i1, mut i2, mut i3) = (0.0, 0.0, 0.0);
    for qp in &pair.quadrature.points {
        let (uv, ug) = pair.evaluate(qp, u);
        let df = f.jet(&qp.x).gradient;
        let t_df = &qp.tensor * &df;
        let tu_f = qp.gamma * DVector::from_vec(ug).dot(&t_df);
        let lf = apply_operator_l(field, drift, &metric, f, &qp.x)?;
        let dlf = operator_l_differential(field, drift, &metric, f, &qp.x)?;
        i1 += qp.dm * tu_f * tu_f;
        i2 += qp.dm * lf * lf * uv * uv;
        i3 += qp.dm * qp.gamma * dlf.dot(&t_df) * uv * uv;
    }
    Ok((i1, i2, i3))
}

/// Rejects `f` unless `|∇f|_g = 1` (to 1e−10) at every quadrature point.
pub fn check_unit_gradient(pair: &OperatorPair, f: &ScalarField) -> Result<f64> {
    let metric = pair.domain.metric();
    let mut worst: f64 = 0.0;
    for qp in &pair.quadrature.points {
        let g = f.jet(&qp.x).gradient;
        let norm = metric.covector_norm(&qp.x, g.as_slice())?;
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::UnitGradientViolation { point: qp.x.clone(), value: norm });
        }
        worst = worst.max((norm - 1.0).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cor32Row {
    pub f: String,
    pub j: usize,
    pub k: usize,
    pub lambda_j: f64,
    pub lambda_k1: f64,
    pub lambda_k2: f64,
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    /// `(λ_{k+2} − λ_{k+1})²`
    pub lhs_squared: f64,
    /// `(16/σ)(I₁ − I₂/4 − I₃/2) λ_{k+2}`
    pub rhs_squared: f64,
    pub margin_squared: f64,
    pub holds_squared: bool,
    /// `λ_{k+2} − λ_{k+1}`
    pub lhs_linear: f64,
    /// `(4/√σ)(δλ_j − I₂/4 − I₃/2)^{1/2} √λ_{k+2}`
    pub rhs_linear: f64,
    pub margin_linear: f64,
    pub holds_linear: bool,
    /// `I₁ ≤ δλ_j`, the step that turns the squared form into the linear one.
    pub chain_ok: bool,
    pub implication_ok: bool,
}

impl Cor32Row {
    pub fn passed(&self) -> bool {
        self.holds_squared && self.holds_linear && self.implication_ok
    }
}

/// Evaluates both gap-difference inequalities for eigenvector `u_j` and the
/// pair `λ_{k+1} < λ_{k+2}`.
#[allow(clippy::too_many_arguments)]
pub fn cor32_check(
    spectrum: &SpectrumResult,
    pair: &OperatorPair,
    field: &TensorField,
    drift: &DriftField,
    test: &TestFunction,
    consts: &OperatorConstants,
    j: usize,
    k: usize,
) -> Result<Cor32Row> {
    if spectrum.len() < k + 2 || j == 0 || j > spectrum.len() {
        return Err(Error::InsufficientSpectrum { required: (k + 2).max(j), available: spectrum.len() });
    }
    if spectrum.same_multiplet(k + 1, k + 2) {
        return Err(Error::DegenerateGap { k1: k + 1, k2: k + 2 });
    }
    if spectrum.lambda(j) >= spectrum.lambda(k + 1) || spectrum.same_multiplet(j, k + 1) {
        return Err(Error::HypothesisViolated(format!("need λ_{j} < λ_{}", k + 1)));
    }
    check_unit_gradient(pair, &test.f)?;
    let u = &spectrum.eigenvectors[j - 1];
    let (i1, i2, i3) = cor32_integrals(pair, field, drift, &test.f, u)?;
    let (lj, l1, l2) = (spectrum.lambda(j), spectrum.lambda(k + 1), spectrum.lambda(k + 2));
    let sigma = consts.sigma();
    let tail = -i2 / 4.0 - i3 / 2.0;
    let lhs_squared = (l2 - l1).powi(2);
    let rhs_squared = 16.0 / sigma * (i1 + tail) * l2;
    let inner = positive("δλ_j − I₂/4 − I₃/2", consts.delta * lj + tail)?;
    let lhs_linear = l2 - l1;
    let rhs_linear = 4.0 / sigma.sqrt() * inner.sqrt() * l2.sqrt();
    let holds_squared = lhs_squared <= rhs_squared * (1.0 + BOUND_REL_TOL);
    let holds_linear = lhs_linear <= rhs_linear * (1.0 + BOUND_REL_TOL);
    Ok(Cor32Row {
        f: test.label.clone(),
        j,
        k,
        lambda_j: lj,
        lambda_k1: l1,
        lambda_k2: l2,
        i1,
        i2,
        i3,
        lhs_squared,
        rhs_squared,
        margin_squared: rhs_squared - lhs_squared,
        holds_squared,
        lhs_linear,
        rhs_linear,
        margin_linear: rhs_linear - lhs_linear,
        holds_linear,
        chain_ok: i1 <= consts.delta * lj * (1.0 + 1e-10),
        implication_ok: !holds_squared || holds_linear,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma32Row {
    pub g: String,
    pub j: usize,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
    /// `∫ g u_j u_{k+1} dm`
    pub overlap: f64,
    /// Relative `B`-norm of `g·u_j` outside `span{u₁, …, u_{k+1}}`.
    pub projection_residual: f64,
}

/// The real-`g` instance of the two-eigenvalue inequality behind the gap
/// bounds, after checking its hypotheses on the discrete eigenbasis.
pub fn lemma32_check(
    spectrum: &SpectrumResult,
    pair: &OperatorPair,
    field: &TensorField,
    drift: &DriftField,
    g: &TestFunction,
    j: usize,
    k: usize,
) -> Result<Lemma32Row> {
    if spectrum.len() < k + 2 || j == 0 || j > spectrum.len() {
        return Err(Error::InsufficientSpectrum { required: (k + 2).max(j), available: spectrum.len() });
    }
    let (lj, l1, l2) = (spectrum.lambda(j), spectrum.lambda(k + 1), spectrum.lambda(k + 2));
    if spectrum.same_multiplet(j, k + 1) || lj > l1 {
        return Err(Error::HypothesisViolated(format!("need λ_{j} < λ_{}", k + 1)));
    }
    if spectrum.same_multiplet(k + 1, k + 2) {
        return Err(Error::HypothesisViolated(format!("need λ_{} < λ_{}", k + 1, k + 2)));
    }
    let metric = pair.domain.metric();
    let uj = &spectrum.eigenvectors[j - 1];
    let uk1 = &spectrum.eigenvectors[k];

    let nodal_g = project_function(&pair.domain, &g.f)?;
    let w: Vec<f64> = nodal_g.iter().zip(uj).map(|(a, b)| a * b).collect();
    let bw = pair.mass.mul_vec(&w)?;
    let w_norm2: f64 = w.iter().zip(&bw).map(|(a, b)| a * b).sum();
    let captured: f64 = spectrum.eigenvectors[..=k]
        .iter()
        .map(|u| u.iter().zip(&bw).map(|(a, b)| a * b).sum::<f64>().powi(2))
        .sum();
    let projection_residual = ((w_norm2 - captured).max(0.0) / w_norm2.max(f64::MIN_POSITIVE)).sqrt();
    if !(projection_residual > 1e-8) {
        return Err(Error::HypothesisViolated(format!(
            "g·u_{j} lies in span(u_1..u_{}) (residual {projection_residual:e})",
            k + 1
        )));
    }

    let (mut overlap, mut grad_term, mut square_term, mut mass_term) = (0.0, 0.0, 0.0, 0.0);
    for qp in &pair.quadrature.points {
        let (uv, ug) = pair.evaluate(qp, uj);
        let (u1v, _) = pair.evaluate(qp, uk1);
        let jet = g.f.jet(&qp.x);
        let t_dg = &qp.tensor * &jet.gradient;
        let lg = apply_operator_l(field, drift, &metric, &g.f, &qp.x)?;
        let cross = qp.gamma * DVector::from_vec(ug).dot(&t_dg);
        overlap += qp.dm * jet.value * uv * u1v;
        grad_term += qp.dm * qp.gamma * jet.gradient.dot(&t_dg) * uv * uv;
        square_term += qp.dm * (2.0 * cross + uv * lg).powi(2);
        mass_term += qp.dm * (jet.value * uv).powi(2);
    }
    if overlap.abs() <= 1e-10 {
        return Err(Error::HypothesisViolated(format!(
            "∫ g u_{j} u_{} dm vanishes ({overlap:e})",
            k + 1
        )));
    }
    let lhs = ((l1 - lj) + (l2 - lj)) * grad_term;
    let rhs = square_term + (l2 - lj) * (l1 - lj) * mass_term;
    Ok(Lemma32Row {
        g: g.label.clone(),
        j,
        k,
        lhs,
        rhs,
        margin: rhs - lhs,
        holds: lhs <= rhs * (1.0 + BOUND_REL_TOL),
        overlap,
        projection_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::ConstantSource;

    fn consts(n: usize) -> OperatorConstants {
        OperatorConstants::trivial(n)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn lemma31_examples() {
        let o = lemma31_check(&Lemma31Instance::new(vec![1.0, 2.0], vec![1.0, 0.1]).unwrap()).unwrap();
        assert!(close(o.s, 1.02, 1e-15) && close(o.bound, 1.02, 1e-15));
        assert!(o.hypothesis_ok && o.conclusion_ok);
        assert!(close((o.a * o.b).sqrt(), 1.0504f64.sqrt(), 1e-15));

        let o = lemma31_check(&Lemma31Instance::new(vec![1.0, 2.0, 3.0], vec![1.0, 0.1, 0.1]).unwrap())
            .unwrap();
        assert!(close(o.s, 1.05, 1e-15));
        assert!(close(o.bound, 3.17 / 3.0, 1e-15));
        assert!(o.hypothesis_ok && o.conclusion_ok);

        let o = lemma31_check(&Lemma31Instance::new(vec![2.0, 3.0, 5.0], vec![1.0, 0.0, 0.0]).unwrap())
            .unwrap();
        assert_eq!(o.s, 2.0);
        assert!(!o.hypothesis_ok);
        assert!(o.conclusion_ok && close(o.s, o.bound, 1e-15));
    }

    #[test]
    fn lemma31_rejects_bad_instances() {
        let bad = [
            (vec![1.0, 2.0], vec![1.0]),
            (vec![2.0, 1.0], vec![1.0, 1.0]),
            (vec![0.0, 1.0], vec![1.0, 1.0]),
            (vec![1.0, 1.0], vec![1.0, 1.0]),
            (vec![1.0, 1.0, 2.0], vec![1.0, 0.0, 1.0]),
        ];
        for (mu, r) in bad {
            assert!(matches!(Lemma31Instance::new(mu, r), Err(Error::InvalidInstance(_))));
        }
    }

    #[test]
    fn lemma31_multiplicity_uses_next_distinct_value() {
        let inst = Lemma31Instance::new(vec![1.0, 1.0, 4.0], vec![0.5, 1.0, 0.2]).unwrap();
        let o = lemma31_check(&inst).unwrap();
        assert_eq!(o.m1, 2);
        assert!(close(o.bound, (o.a + 4.0 * o.b) / 5.0, 1e-15));
    }

    #[test]
    fn suite_is_reproducible() {
        let a = lemma31_suite(200, 3).unwrap();
        let b = lemma31_suite(200, 3).unwrap();
        assert_eq!(a.hypothesis_satisfied, b.hypothesis_satisfied);
        assert!(a.counterexamples.is_empty());
        assert!(a.two_term_max_defect <= 1e-12);
        assert!(lemma31_suite(0, 3).is_err());
    }

    #[test]
    fn theorem11_examples() {
        assert!(close(theorem11_constant(1.0, &consts(1)).unwrap(), 4.0 * 5f64.sqrt(), 1e-15));
        assert!(close(theorem11_constant(2.0, &consts(2)).unwrap(), 8.0 * 1.5f64.sqrt(), 1e-15));
        let mut c = consts(1);
        c.set("c0", -0.25, ConstantSource::Computed);
        assert!(close(theorem11_constant(1.25, &c).unwrap(), 4.0 * 5f64.sqrt(), 1e-15));
        c.set("c0", -2.0, ConstantSource::Computed);
        assert!(matches!(theorem11_constant(1.25, &c), Err(Error::NonpositiveRadicand { .. })));
    }

    #[test]
    fn anisotropic_constant() {
        let mut c = consts(2);
        c.set("epsilon", 2.0, ConstantSource::Computed);
        c.set("delta", 3.0, ConstantSource::Computed);
        let b = bound_constant(BoundKind::Thm11, 5.0, &c).unwrap();
        // 4·5·√(3/8 · 4) = 20√1.5
        assert!(close(b.c, 20.0 * 1.5f64.sqrt(), 1e-15));
        assert_eq!(b.exponent, 0.75);
        assert!(close(b.c * 2f64.powf(0.75), 41.19, 1e-3));
    }

    #[test]
    fn theorem12_examples() {
        let mut c = consts(2);
        c.set("h0", 1.0, ConstantSource::ConfigInput);
        assert!(close(theorem12_constant(3.0, &c).unwrap(), 4.0 * 33f64.sqrt(), 1e-15));
        assert!(matches!(theorem12_constant(0.25, &c), Err(Error::NonpositiveRadicand { .. })));

        let mut c = consts(2);
        c.set("delta", 2.0, ConstantSource::Computed);
        let v = theorem12_constant(1.0, &c).unwrap();
        assert!(close(v, 4.0 / 3f64.sqrt() * 8.75f64.sqrt(), 1e-15));
        assert!(close(v, 6.831, 1e-4));
    }

    #[test]
    fn theorem13_examples() {
        let mut c = consts(2);
        c.set("kappa1", 1.0, ConstantSource::ConfigInput);
        c.set("kappa2", 1.0, ConstantSource::ConfigInput);
        c.set("h0", 1.0, ConstantSource::ConfigInput);
        c.set("d", 1.0, ConstantSource::Computed);
        assert!(close(bound_constant(BoundKind::Cor3Iii, 3.0, &c).unwrap().c, 24.0, 1e-15));
        assert!(close(theorem13_constant(3.0, &c).unwrap(), 24.0, 1e-15));

        // flat curvature, far origin: Cor 2 shape without the (n−1)² term
        let mut c = consts(3);
        c.set("h0", 0.5, ConstantSource::ConfigInput);
        c.set("d", 1e12, ConstantSource::Computed);
        let l: f64 = 4.0;
        let expected = 4.0 * (l * (1.0 + 4.0 / 3.0) * (l + 9.0 * 0.25 / 4.0)).sqrt();
        assert!(close(theorem13_constant(l, &c).unwrap(), expected, 1e-12));

        // a-term alone: n = 2, d = ½ adds a/(4d²) = 1 to the first factor
        let mut c = consts(2);
        c.set("d", 0.5, ConstantSource::Computed);
        let with = theorem13_constant(2.0, &c).unwrap();
        let expected = 4.0 * ((2.0 + 1.0) * 3.0 * 2.0f64).sqrt();
        assert!(close(with, expected, 1e-15));

        let mut c = consts(2);
        c.d = None;
        assert!(theorem13_constant(2.0, &c).is_err());
    }

    #[test]
    fn a_nt_examples() {
        assert_eq!(a_nt(3, 1.0, 1.0), 0.0);
        assert_eq!(a_nt(2, 1.0, 1.0), 1.0);
        assert_eq!(a_nt(3, 1.0, 2.0), 12.0);
        assert_eq!(a_nt(5, 1.0, 1.0), 0.0);
    }

    #[test]
    fn corollary_specializations() {
        let mut c = consts(2);
        c.set("epsilon", 2.0, ConstantSource::Computed);
        c.set("delta", 3.0, ConstantSource::Computed);
        c.set("t0", 0.7, ConstantSource::Computed);
        c.set("c0", 0.3, ConstantSource::Computed);
        let l = 5.0;
        let g = |d: f64, e: f64| (d / ((2.0 * d - e) * 2.0) * (1.0 + 4.0 * d / (2.0 * e))).sqrt();
        let v = |k| bound_constant(k, l, &c).unwrap().c;
        assert!(close(v(BoundKind::Cor1I), 4.0 * (l + 0.3 / 3.0) * g(3.0, 2.0), 1e-15));
        assert!(close(v(BoundKind::Cor1Ii), 4.0 * l * g(3.0, 2.0), 1e-15));
        assert!(close(v(BoundKind::Cor1Iii), 4.0 * (l + 0.3) * (0.5f64 * 3.0).sqrt(), 1e-15));
        assert!(close(v(BoundKind::Cor1Iv), 4.0 * l * 1.5f64.sqrt(), 1e-15));
        assert_eq!(bound_constant(BoundKind::Cor1Iii, l, &c).unwrap().exponent, 0.5);
    }

    #[test]
    fn yang_examples() {
        let r = yang_check(&[2.0, 5.0], &consts(2)).unwrap();
        assert_eq!(r.rows[0].upsilon_k1, 5.0);
        assert_eq!(r.rows[0].rhs, 6.0);
        assert!(r.passed());

        let mut c = consts(1);
        c.set("c0", -0.25, ConstantSource::Computed);
        let l: Vec<f64> = (1..=9).map(|k| (k * k) as f64 + 0.25).collect();
        let r = yang_check(&l, &c).unwrap();
        for row in &r.rows {
            assert!(close(row.upsilon_k1, ((row.k + 1) * (row.k + 1)) as f64, 1e-15));
            assert!(close(row.rhs, 5.0 * (row.k * row.k) as f64, 1e-15));
        }
        assert!(r.passed());

        let r = yang_check(&[3.0, 3.0], &consts(2)).unwrap();
        assert!(r.rows[0].pass && r.rows[0].upsilon_k1 < r.rows[0].rhs);

        c.set("c0", -4.0, ConstantSource::Computed);
        assert!(matches!(yang_check(&l, &c), Err(Error::NonpositiveUpsilon(_))));
    }

    fn fake_spectrum(values: Vec<f64>) -> SpectrumResult {
        let n = values.len();
        let mut s = crate::spectral::SolverSettings::new(n);
        s.multiplicity_rel_tol = 1e-6;
        SpectrumResult {
            multiplicity_groups: crate::spectral::multiplicity_groups(&values, 1e-6),
            eigenvectors: vec![vec![]; n],
            residuals: vec![0.0; n],
            eigenvalues: values,
            iterations: 0,
            settings: s,
        }
    }

    #[test]
    fn gap_check_interval_and_square() {
        let spec = fake_spectrum((1..=12).map(|k| (k * k) as f64).collect());
        let b = bound_constant(BoundKind::Cor1Iv, 1.0, &consts(1)).unwrap();
        let em = ErrorModel { h: 0.0, epsilon: 1.0 };
        let r = gap_check(&spec, &b, 1, 11, &em).unwrap();
        assert_eq!(r.rows[0].status, RowStatus::Informational);
        for row in &r.rows[1..] {
            assert_eq!(row.gap, (2 * row.k + 1) as f64);
            assert!(close(row.bound, 4.0 * 5f64.sqrt() * row.k as f64, 1e-14));
            assert_eq!(row.status, RowStatus::Pass);
        }
        assert!(matches!(gap_check(&spec, &b, 2, 12, &em), Err(Error::InsufficientSpectrum { .. })));

        let sq = fake_spectrum(vec![2.0, 5.0, 5.0, 8.0, 10.0, 10.0]);
        let b = bound_constant(BoundKind::Thm11, 2.0, &consts(2)).unwrap();
        let r = gap_check(&sq, &b, 2, 5, &em).unwrap();
        assert_eq!(r.rows[0].gap, 0.0);
        assert!(r.rows[0].same_multiplet);
        assert_eq!(r.rows[1].gap, 3.0);
        assert!(close(r.rows[1].bound, 8.0 * 1.5f64.sqrt() * 3f64.sqrt(), 1e-14));
        assert_eq!(r.count(RowStatus::Fail), 0);
    }

    #[test]
    fn scaled_down_bound_fails() {
        let spec = fake_spectrum((1..=10).map(|k| (k * k) as f64).collect());
        let mut b = bound_constant(BoundKind::Cor1Iv, 1.0, &consts(1)).unwrap();
        b.c /= 1e6;
        let r = gap_check(&spec, &b, 2, 9, &ErrorModel { h: 1e-3, epsilon: 1.0 }).unwrap();
        assert_eq!(r.count(RowStatus::Fail), 8);
    }

    #[test]
    fn small_violation_is_inconclusive() {
        let spec = fake_spectrum(vec![1.0, 4.0, 9.0]);
        let mut b = bound_constant(BoundKind::Cor1Iv, 1.0, &consts(1)).unwrap();
        b.c = 5.0 / 2.0 - 1e-3;
        let r = gap_check(&spec, &b, 2, 2, &ErrorModel { h: 0.01, epsilon: 1.0 }).unwrap();
        assert_eq!(r.rows[0].status, RowStatus::Inconclusive);
        let r = gap_check(&spec, &b, 2, 2, &ErrorModel { h: 1e-5, epsilon: 1.0 }).unwrap();
        assert_eq!(r.rows[0].status, RowStatus::Fail);
    }

    #[test]
    fn report_serializations() {
        let spec = fake_spectrum(vec![1.0, 4.0, 9.0, 16.0]);
        let b = bound_constant(BoundKind::Cor1Iv, 1.0, &consts(1)).unwrap();
        let r = gap_check(&spec, &b, 2, 3, &ErrorModel { h: 0.01, epsilon: 1.0 }).unwrap();
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().ends_with(",pass"));
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(json["schema_version"], 1);
        assert_eq!(json["bound"], "cor1_iv");
        assert_eq!(BoundKind::from_tag("cor2_iii"), Some(BoundKind::Cor2Iii));
    }
}
