//! Coefficient fields and the constants extracted from them.
//!
//! `T` is given as a symmetric matrix field in the orthonormal frame (which
//! coincides with the coordinate matrix, see [`crate::geometry`]), `η` as a
//! scalar field. Preset families carry analytic first and second
//! derivatives; user closures fall back to central differences.
//!
//! All covariant quantities are computed in coordinates with the inverse
//! metric `g^{ij} = γ δ^{ij}` and the Christoffel symbols of the model, so the
//! same code serves the flat and the half-space metric.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{GridDomain, MetricModel, OriginPoint};
use crate::{Error, Result};

/// Closed-form scalar functions with analytic gradient and Hessian.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarField {
    Constant(f64),
    /// `c + b·x`
    Affine { constant: f64, coeffs: Vec<f64> },
    /// `c + b·x + ½ xᵀ H x` with `H` symmetric
    Quadratic { constant: f64, linear: Vec<f64>, hessian: DMatrix<f64> },
    /// `a · exp(−|x − x₀|² / (2w²))`
    Gaussian { amplitude: f64, center: Vec<f64>, width: f64 },
    /// `c + a · sin(ω x_axis + φ)`
    Sine { offset: f64, amplitude: f64, axis: usize, frequency: f64, phase: f64 },
    /// `c + a · sin²(ω x_axis)`
    SineSquared { offset: f64, amplitude: f64, axis: usize, frequency: f64 },
    /// `s · ln x_axis`
    Log { axis: usize, scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarJet {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl ScalarField {
    pub fn coordinate(axis: usize, dim: usize) -> Self {
        let mut coeffs = vec![0.0; dim];
        coeffs[axis] = 1.0;
        ScalarField::Affine { constant: 0.0, coeffs }
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        let bad = |got| Err(Error::DimensionMismatch { expected: n, got });
        match self {
            ScalarField::Constant(_) => Ok(()),
            ScalarField::Affine { coeffs, .. } if coeffs.len() != n => bad(coeffs.len()),
            ScalarField::Quadratic { linear, hessian, .. }
                if linear.len() != n || hessian.nrows() != n || hessian.ncols() != n =>
            {
                bad(linear.len())
            }
            ScalarField::Quadratic { hessian, .. } if hessian != &hessian.transpose() => Err(
                Error::Config("quadratic field needs a symmetric Hessian".into()),
            ),
            ScalarField::Gaussian { center, .. } if center.len() != n => bad(center.len()),
            ScalarField::Gaussian { width, .. } if !(*width > 0.0) => {
                Err(Error::Config("gaussian width must be positive".into()))
            }
            ScalarField::Sine { axis, .. }
            | ScalarField::SineSquared { axis, .. }
            | ScalarField::Log { axis, .. }
                if *axis >= n =>
            {
                bad(axis + 1)
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        match self {
            ScalarField::Constant(c) => *c,
            ScalarField::Affine { constant, coeffs } => {
                constant + coeffs.iter().zip(p).map(|(b, x)| b * x).sum::<f64>()
            }
            ScalarField::Quadratic { constant, linear, hessian } => {
                let x = DVector::from_column_slice(p);
                constant + linear.iter().zip(p).map(|(b, x)| b * x).sum::<f64>()
                    + 0.5 * x.dot(&(hessian * &x))
            }
            ScalarField::Gaussian { amplitude, center, width } => {
                let r2: f64 = p.iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum();
                amplitude * (-r2 / (2.0 * width * width)).exp()
            }
            ScalarField::Sine { offset, amplitude, axis, frequency, phase } => {
                offset + amplitude * (frequency * p[*axis] + phase).sin()
            }
            ScalarField::SineSquared { offset, amplitude, axis, frequency } => {
                offset + amplitude * (frequency * p[*axis]).sin().powi(2)
            }
            ScalarField::Log { axis, scale } => scale * p[*axis].ln(),
        }
    }

    pub fn jet(&self, p: &[f64]) -> ScalarJet {
        let n = p.len();
        let mut gradient = DVector::zeros(n);
        let mut hessian = DMatrix::zeros(n, n);
        match self {
            ScalarField::Constant(_) => {}
            ScalarField::Affine { coeffs, .. } => {
                gradient.copy_from_slice(coeffs);
            }
            ScalarField::Quadratic { linear, hessian: h, .. } => {
                let x = DVector::from_column_slice(p);
                gradient = DVector::from_column_slice(linear) + h * x;
                hessian.copy_from(h);
            }
            ScalarField::Gaussian { amplitude, center, width } => {
                let w2 = width * width;
                let d = DVector::from_iterator(n, p.iter().zip(center).map(|(x, c)| x - c));
                let v = amplitude * (-d.norm_squared() / (2.0 * w2)).exp();
                gradient = &d * (-v / w2);
                hessian = (&d * d.transpose()) * (v / (w2 * w2))
                    - DMatrix::identity(n, n) * (v / w2);
            }
            ScalarField::Sine { amplitude, axis, frequency, phase, .. } => {
                let t = frequency * p[*axis] + phase;
                gradient[*axis] = amplitude * frequency * t.cos();
                hessian[(*axis, *axis)] = -amplitude * frequency * frequency * t.sin();
            }
            ScalarField::SineSquared { amplitude, axis, frequency, .. } => {
                let t = 2.0 * frequency * p[*axis];
                gradient[*axis] = amplitude * frequency * t.sin();
                hessian[(*axis, *axis)] = 2.0 * amplitude * frequency * frequency * t.cos();
            }
            ScalarField::Log { axis, scale } => {
                gradient[*axis] = scale / p[*axis];
                hessian[(*axis, *axis)] = -scale / (p[*axis] * p[*axis]);
            }
        }
        ScalarJet { value: self.value(p), gradient, hessian }
    }

    pub fn scaled(&self, c: f64) -> ScalarField {
        match self.clone() {
            ScalarField::Constant(v) => ScalarField::Constant(c * v),
            ScalarField::Affine { constant, coeffs } => ScalarField::Affine {
                constant: c * constant,
                coeffs: coeffs.iter().map(|b| c * b).collect(),
            },
            ScalarField::Quadratic { constant, linear, hessian } => ScalarField::Quadratic {
                constant: c * constant,
                linear: linear.iter().map(|b| c * b).collect(),
                hessian: hessian * c,
            },
            ScalarField::Gaussian { amplitude, center, width } => {
                ScalarField::Gaussian { amplitude: c * amplitude, center, width }
            }
            ScalarField::Sine { offset, amplitude, axis, frequency, phase } => ScalarField::Sine {
                offset: c * offset,
                amplitude: c * amplitude,
                axis,
                frequency,
                phase,
            },
            ScalarField::SineSquared { offset, amplitude, axis, frequency } => {
                ScalarField::SineSquared {
                    offset: c * offset,
                    amplitude: c * amplitude,
                    axis,
                    frequency,
                }
            }
            ScalarField::Log { axis, scale } => ScalarField::Log { axis, scale: c * scale },
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            ScalarField::Constant(_) => true,
            ScalarField::Affine { coeffs, .. } => coeffs.iter().all(|b| *b == 0.0),
            ScalarField::Gaussian { amplitude, .. } => *amplitude == 0.0,
            ScalarField::Sine { amplitude, .. } | ScalarField::SineSquared { amplitude, .. } => {
                *amplitude == 0.0
            }
            ScalarField::Quadratic { linear, hessian, .. } => {
                linear.iter().all(|b| *b == 0.0) && hessian.iter().all(|h| *h == 0.0)
            }
            ScalarField::Log { scale, .. } => *scale == 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DerivativeMode {
    Analytic,
    FiniteDifference(f64),
}

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
enum ScalarSource {
    Preset(ScalarField),
    Custom(ScalarFn),
}

/// The drift function η; the measure is `dm = e^{−η} dV_g`.
#[derive(Clone)]
pub struct DriftField {
    dim: usize,
    source: ScalarSource,
    mode: DerivativeMode,
}

impl fmt::Debug for DriftField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            ScalarSource::Preset(p) => write!(f, "DriftField({p:?}, {:?})", self.mode),
            ScalarSource::Custom(_) => write!(f, "DriftField(<custom>, {:?})", self.mode),
        }
    }
}

impl DriftField {
    pub fn preset(dim: usize, field: ScalarField) -> Result<Self> {
        field.check_dim(dim)?;
        Ok(DriftField { dim, source: ScalarSource::Preset(field), mode: DerivativeMode::Analytic })
    }

    pub fn zero(dim: usize) -> Self {
        DriftField {
            dim,
            source: ScalarSource::Preset(ScalarField::Constant(0.0)),
            mode: DerivativeMode::Analytic,
        }
    }

    /// User-supplied η; derivatives by central differences with `step`.
    pub fn custom<F>(dim: usize, f: F, step: f64) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        DriftField {
            dim,
            source: ScalarSource::Custom(Arc::new(f)),
            mode: DerivativeMode::FiniteDifference(step),
        }
    }

    pub fn with_mode(mut self, mode: DerivativeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_preset(&self) -> Option<&ScalarField> {
        match &self.source {
            ScalarSource::Preset(p) => Some(p),
            ScalarSource::Custom(_) => None,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.as_preset().is_some_and(ScalarField::is_constant)
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        match &self.source {
            ScalarSource::Preset(s) => s.value(p),
            ScalarSource::Custom(f) => f(p),
        }
    }

    pub fn jet(&self, p: &[f64]) -> Result<ScalarJet> {
        match (&self.source, self.mode) {
            (ScalarSource::Preset(s), DerivativeMode::Analytic) => Ok(s.jet(p)),
            (_, DerivativeMode::FiniteDifference(h)) => {
                let jet = fd_jet(&|x: &[f64]| DMatrix::from_element(1, 1, self.value(x)), p, h);
                Ok(ScalarJet {
                    value: jet.value[(0, 0)],
                    gradient: DVector::from_iterator(p.len(), jet.first.iter().map(|m| m[(0, 0)])),
                    hessian: DMatrix::from_fn(p.len(), p.len(), |k, l| {
                        jet.second[k * p.len() + l][(0, 0)]
                    }),
                })
            }
            (ScalarSource::Custom(_), DerivativeMode::Analytic) => Err(
                Error::DerivativeUnavailable("custom drift has no analytic derivatives".into()),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorPreset {
    Constant(DMatrix<f64>),
    Diagonal(Vec<ScalarField>),
}

#[derive(Clone)]
enum TensorSource {
    Preset(TensorPreset),
    Custom(MatrixFn),
}

/// Symmetric positive definite (1,1)-tensor field `T`.
#[derive(Clone)]
pub struct TensorField {
    dim: usize,
    source: TensorSource,
    mode: DerivativeMode,
}

impl fmt::Debug for TensorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            TensorSource::Preset(p) => write!(f, "TensorField({p:?}, {:?})", self.mode),
            TensorSource::Custom(_) => write!(f, "TensorField(<custom>, {:?})", self.mode),
        }
    }
}

/// Value and coordinate derivatives of a matrix field at one point.
/// `second[k * n + l]` holds `∂_k ∂_l`.
#[derive(Debug, Clone)]
pub struct TensorJet {
    pub value: DMatrix<f64>,
    pub first: Vec<DMatrix<f64>>,
    pub second: Vec<DMatrix<f64>>,
}

impl TensorField {
    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        TensorField {
            dim,
            source: TensorSource::Preset(TensorPreset::Constant(DMatrix::identity(dim, dim) * c)),
            mode: DerivativeMode::Analytic,
        }
    }

    pub fn constant(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
        }
        if m != m.transpose() {
            return Err(Error::NotSymmetric(vec![]));
        }
        Ok(TensorField {
            dim: m.nrows(),
            source: TensorSource::Preset(TensorPreset::Constant(m)),
            mode: DerivativeMode::Analytic,
        })
    }

    pub fn diagonal(entries: Vec<ScalarField>) -> Result<Self> {
        let dim = entries.len();
        for e in &entries {
            e.check_dim(dim)?;
        }
        Ok(TensorField {
            dim,
            source: TensorSource::Preset(TensorPreset::Diagonal(entries)),
            mode: DerivativeMode::Analytic,
        })
    }

    /// User-supplied matrix field; derivatives by central differences.
    pub fn custom<F>(dim: usize, f: F, step: f64) -> Self
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        TensorField {
            dim,
            source: TensorSource::Custom(Arc::new(f)),
            mode: DerivativeMode::FiniteDifference(step),
        }
    }

    pub fn with_mode(mut self, mode: DerivativeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_preset(&self) -> Option<&TensorPreset> {
        match &self.source {
            TensorSource::Preset(p) => Some(p),
            TensorSource::Custom(_) => None,
        }
    }

    /// `T = c·I` with a constant `c`, the only preset that is parallel along
    /// every direction.
    pub fn is_scaled_identity(&self) -> bool {
        match self.as_preset() {
            Some(TensorPreset::Constant(m)) => {
                let c = m[(0, 0)];
                *m == DMatrix::identity(self.dim, self.dim) * c
            }
            Some(TensorPreset::Diagonal(entries)) => match entries.first() {
                Some(ScalarField::Constant(c)) => {
                    entries.iter().all(|e| *e == ScalarField::Constant(*c))
                }
                _ => false,
            },
            None => false,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.is_scaled_identity() && self.value(&vec![0.5; self.dim])[(0, 0)] == 1.0
    }

    /// The field `c·T`.
    pub fn scaled(&self, c: f64) -> TensorField {
        let source = match &self.source {
            TensorSource::Preset(TensorPreset::Constant(m)) => {
                TensorSource::Preset(TensorPreset::Constant(m * c))
            }
            TensorSource::Preset(TensorPreset::Diagonal(e)) => TensorSource::Preset(
                TensorPreset::Diagonal(e.iter().map(|s| s.scaled(c)).collect()),
            ),
            TensorSource::Custom(f) => {
                let f = Arc::clone(f);
                TensorSource::Custom(Arc::new(move |p: &[f64]| f(p) * c))
            }
        };
        TensorField { dim: self.dim, source, mode: self.mode }
    }

    pub fn value(&self, p: &[f64]) -> DMatrix<f64> {
        match &self.source {
            TensorSource::Preset(TensorPreset::Constant(m)) => m.clone(),
            TensorSource::Preset(TensorPreset::Diagonal(e)) => {
                DMatrix::from_diagonal(&DVector::from_iterator(e.len(), e.iter().map(|s| s.value(p))))
            }
            TensorSource::Custom(f) => f(p),
        }
    }

    pub fn jet(&self, p: &[f64]) -> Result<TensorJet> {
        let n = self.dim;
        match (&self.source, self.mode) {
            (TensorSource::Preset(TensorPreset::Constant(m)), DerivativeMode::Analytic) => {
                Ok(TensorJet {
                    value: m.clone(),
                    first: vec![DMatrix::zeros(n, n); n],
                    second: vec![DMatrix::zeros(n, n); n * n],
                })
            }
            (TensorSource::Preset(TensorPreset::Diagonal(e)), DerivativeMode::Analytic) => {
                let jets: Vec<ScalarJet> = e.iter().map(|s| s.jet(p)).collect();
                let value = DMatrix::from_diagonal(&DVector::from_iterator(
                    n,
                    jets.iter().map(|j| j.value),
                ));
                let first = (0..n)
                    .map(|k| {
                        DMatrix::from_diagonal(&DVector::from_iterator(
                            n,
                            jets.iter().map(|j| j.gradient[k]),
                        ))
                    })
                    .collect();
                let second = (0..n * n)
                    .map(|kl| {
                        DMatrix::from_diagonal(&DVector::from_iterator(
                            n,
                            jets.iter().map(|j| j.hessian[(kl / n, kl % n)]),
                        ))
                    })
                    .collect();
                Ok(TensorJet { value, first, second })
            }
            (_, DerivativeMode::FiniteDifference(h)) => Ok(fd_jet(&|x| self.value(x), p, h)),
            (TensorSource::Custom(_), DerivativeMode::Analytic) => Err(
                Error::DerivativeUnavailable("custom tensor has no analytic derivatives".into()),
            ),
        }
    }
}

/// Central-difference value, gradient and Hessian of a matrix-valued map.
fn fd_jet(f: &dyn Fn(&[f64]) -> DMatrix<f64>, p: &[f64], h: f64) -> TensorJet {
    let n = p.len();
    let shifted = |moves: &[(usize, f64)]| {
        let mut x = p.to_vec();
        for &(axis, d) in moves {
            x[axis] += d;
        }
        f(&x)
    };
    let value = f(p);
    let first = (0..n)
        .map(|k| (shifted(&[(k, h)]) - shifted(&[(k, -h)])) / (2.0 * h))
        .collect();
    let mut second = vec![DMatrix::zeros(value.nrows(), value.ncols()); n * n];
    for k in 0..n {
        second[k * n + k] =
            (shifted(&[(k, h)]) - &value * 2.0 + shifted(&[(k, -h)])) / (h * h);
        for l in k + 1..n {
            let d = (shifted(&[(k, h), (l, h)]) - shifted(&[(k, h), (l, -h)])
                - shifted(&[(k, -h), (l, h)])
                + shifted(&[(k, -h), (l, -h)]))
                / (4.0 * h * h);
            second[l * n + k] = d.clone();
            second[k * n + l] = d;
        }
    }
    TensorJet { value, first, second }
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub(crate) fn extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 1 {
        return (m[(0, 0)], m[(0, 0)]);
    }
    let eig = m.clone().symmetric_eigenvalues();
    (eig.min(), eig.max())
}

pub(crate) fn check_spd(m: &DMatrix<f64>, p: &[f64]) -> Result<(f64, f64)> {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            if m[(i, j)] != m[(j, i)] {
                return Err(Error::NotSymmetric(p.to_vec()));
            }
        }
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(p.to_vec()));
    }
    let (lo, hi) = extreme_eigenvalues(m);
    if !(lo > 0.0) {
        return Err(Error::NotPositiveDefinite { point: p.to_vec(), min_eigenvalue: lo });
    }
    Ok((lo, hi))
}

/// `(ε, δ)`: extreme eigenvalues of `T` over the Gauss points of Ω.
pub fn tensor_bounds(field: &TensorField, domain: &GridDomain) -> Result<(f64, f64)> {
    let mut eps = f64::INFINITY;
    let mut delta = f64::NEG_INFINITY;
    for p in domain.gauss_points() {
        let (lo, hi) = check_spd(&field.value(&p), &p)?;
        eps = eps.min(lo);
        delta = delta.max(hi);
    }
    Ok((eps, delta))
}

/// Coordinate components of `tr(∇T) = g^{jk} (∇_j T)(∂_k)`.
fn trace_nabla_coords(jet: &TensorJet, metric: &MetricModel, p: &[f64]) -> DVector<f64> {
    let n = p.len();
    let t = &jet.value;
    let gamma = metric.inverse_factor(p);
    DVector::from_fn(n, |a, _| {
        let mut s = 0.0;
        for j in 0..n {
            let mut cov = jet.first[j][(a, j)];
            for l in 0..n {
                cov += metric.christoffel(p, a, j, l) * t[(l, j)]
                    - metric.christoffel(p, l, j, j) * t[(a, l)];
            }
            s += cov;
        }
        gamma * s
    })
}

/// `∂_m` of [`trace_nabla_coords`]; needs second derivatives of `T`.
fn trace_nabla_coords_derivative(
    jet: &TensorJet,
    metric: &MetricModel,
    p: &[f64],
    m: usize,
) -> DVector<f64> {
    let n = p.len();
    let t = &jet.value;
    let dt = &jet.first[m];
    let gamma = metric.inverse_factor(p);
    let dgamma = metric.inverse_factor_derivative(p, m);
    DVector::from_fn(n, |a, _| {
        let mut inner = 0.0;
        let mut d_inner = 0.0;
        for j in 0..n {
            inner += jet.first[j][(a, j)];
            d_inner += jet.second[m * n + j][(a, j)];
            for l in 0..n {
                let g_ajl = metric.christoffel(p, a, j, l);
                let g_ljj = metric.christoffel(p, l, j, j);
                inner += g_ajl * t[(l, j)] - g_ljj * t[(a, l)];
                d_inner += metric.christoffel_derivative(p, m, a, j, l) * t[(l, j)]
                    + g_ajl * dt[(l, j)]
                    - metric.christoffel_derivative(p, m, l, j, j) * t[(a, l)]
                    - g_ljj * dt[(a, l)];
            }
        }
        dgamma * inner + gamma * d_inner
    })
}

/// `tr(∇T)` at `p`, in orthonormal-frame components.
pub fn trace_nabla_t(field: &TensorField, metric: &MetricModel, p: &[f64]) -> Result<DVector<f64>> {
    metric.check_point(p)?;
    let jet = field.jet(p)?;
    let coords = trace_nabla_coords(&jet, metric, p);
    Ok(coords / metric.inverse_factor(p).sqrt())
}

/// `T₀ = sup_Ω |tr(∇T)|`, sampled at the Gauss points.
pub fn compute_t0(field: &TensorField, metric: &MetricModel, domain: &GridDomain) -> Result<f64> {
    let mut t0: f64 = 0.0;
    for p in domain.gauss_points() {
        t0 = t0.max(trace_nabla_t(field, metric, &p)?.norm());
    }
    Ok(t0)
}

/// `½ div(T(T(∇η) − tr(∇T))) − ¼|T(∇η)|²` at one point.
pub fn c0_integrand(
    field: &TensorField,
    drift: &DriftField,
    metric: &MetricModel,
    p: &[f64],
) -> Result<f64> {
    metric.check_point(p)?;
    let n = p.len();
    let tj = field.jet(p)?;
    let ej = drift.jet(p)?;
    let t = &tj.value;
    let gamma = metric.inverse_factor(p);

    let grad_eta = &ej.gradient * gamma;
    let tau = trace_nabla_coords(&tj, metric, p);
    let t_grad_eta = t * &grad_eta;
    let w = &t_grad_eta - &tau;
    let v = t * &w;

    let mut div = 0.0;
    for m in 0..n {
        let dgamma = metric.inverse_factor_derivative(p, m);
        let d_grad_eta = DVector::from_fn(n, |b, _| {
            dgamma * ej.gradient[b] + gamma * ej.hessian[(m, b)]
        });
        let d_tau = trace_nabla_coords_derivative(&tj, metric, p, m);
        let d_w = &tj.first[m] * &grad_eta + t * d_grad_eta - d_tau;
        let d_v = &tj.first[m] * &w + t * d_w;
        div += d_v[m] + v[m] * metric.log_volume_derivative(p, m);
    }
    let norm2 = t_grad_eta.norm_squared() / gamma;
    Ok(0.5 * div - 0.25 * norm2)
}

/// `C₀`: maximum of [`c0_integrand`] over the Gauss points. May be negative.
pub fn compute_c0(
    field: &TensorField,
    drift: &DriftField,
    metric: &MetricModel,
    domain: &GridDomain,
) -> Result<f64> {
    let mut c0 = f64::NEG_INFINITY;
    for p in domain.gauss_points() {
        c0 = c0.max(c0_integrand(field, drift, metric, &p)?);
    }
    Ok(c0)
}

/// `(η₁, η_r)`: maxima of `|∇²η(∂_r, ∂_r)|` and `|⟨∇η, ∂_r⟩|` over the
/// Gauss points, with `r` the distance from `o`.
pub fn compute_eta_radial_constants(
    drift: &DriftField,
    metric: &MetricModel,
    domain: &GridDomain,
    o: &OriginPoint,
) -> Result<(f64, f64)> {
    if domain.closure_contains(&o.0) {
        return Err(Error::OriginInsideDomain(o.0.clone()));
    }
    let mut eta1: f64 = 0.0;
    let mut eta_r: f64 = 0.0;
    for p in domain.gauss_points() {
        let n = p.len();
        let dr = metric.radial_direction(&o.0, &p)?;
        let jet = drift.jet(&p)?;
        let mut hess_rr = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut h = jet.hessian[(i, j)];
                for k in 0..n {
                    h -= metric.christoffel(&p, k, i, j) * jet.gradient[k];
                }
                hess_rr += h * dr[i] * dr[j];
            }
        }
        let radial: f64 = (0..n).map(|i| jet.gradient[i] * dr[i]).sum();
        eta1 = eta1.max(hess_rr.abs());
        eta_r = eta_r.max(radial.abs());
    }
    Ok((eta1, eta_r))
}

/// Pointwise `𝓛f = div_g(T∇f) − ⟨∇η, T∇f⟩_g` for a closed-form `f`.
pub fn apply_operator_l(
    field: &TensorField,
    drift: &DriftField,
    metric: &MetricModel,
    f: &ScalarField,
    p: &[f64],
) -> Result<f64> {
    metric.check_point(p)?;
    let n = p.len();
    let tj = field.jet(p)?;
    let ej = drift.jet(p)?;
    let fj = f.jet(p);
    let t = &tj.value;
    let gamma = metric.inverse_factor(p);
    let grad_f = &fj.gradient * gamma;
    let v = t * &grad_f;
    let mut div = 0.0;
    for m in 0..n {
        let dgamma = metric.inverse_factor_derivative(p, m);
        let d_grad_f =
            DVector::from_fn(n, |b, _| dgamma * fj.gradient[b] + gamma * fj.hessian[(m, b)]);
        let d_v = &tj.first[m] * &grad_f + t * d_grad_f;
        div += d_v[m] + v[m] * metric.log_volume_derivative(p, m);
    }
    Ok(div - ej.gradient.dot(&v))
}

/// Coordinate differential of `𝓛f`, by fourth-order central differences of
/// the pointwise operator.
pub fn operator_l_differential(
    field: &TensorField,
    drift: &DriftField,
    metric: &MetricModel,
    f: &ScalarField,
    p: &[f64],
) -> Result<DVector<f64>> {
    let n = p.len();
    let mut h: f64 = 1e-3;
    if metric.is_hyperbolic() {
        h = h.min(p[n - 1] / 8.0);
    }
    let mut out = DVector::zeros(n);
    for k in 0..n {
        let at = |d: f64| {
            let mut x = p.to_vec();
            x[k] += d;
            apply_operator_l(field, drift, metric, f, &x)
        };
        out[k] = (-at(2.0 * h)? + 8.0 * at(h)? - 8.0 * at(-h)? + at(-2.0 * h)?) / (12.0 * h);
    }
    Ok(out)
}

/// Rejects fields that vary along `x_n` or for which `∂_n` is not an
/// eigenvector of `T` (beyond 1e−12). Used for half-space gap bounds that
/// assume radially constant `η` and `T(∂_n) = ψ ∂_n`.
pub fn validate_radially_constant(
    field: &TensorField,
    drift: &DriftField,
    domain: &GridDomain,
) -> Result<()> {
    const TOL: f64 = 1e-12;
    let n = domain.dim();
    let (lo, hi) = domain.bounds()[n - 1];
    let probes = [lo, 0.5 * (lo + hi), hi];
    for p in domain.gauss_points() {
        let t = field.value(&p);
        for i in 0..n - 1 {
            if t[(i, n - 1)].abs() > TOL || t[(n - 1, i)].abs() > TOL {
                return Err(Error::HypothesisViolated(format!(
                    "T(∂_n) is not parallel to ∂_n at {p:?}"
                )));
            }
        }
        let eta = drift.value(&p);
        for &z in &probes {
            let mut q = p.clone();
            q[n - 1] = z;
            if (drift.value(&q) - eta).abs() > TOL {
                return Err(Error::HypothesisViolated(format!("η varies along x_n at {p:?}")));
            }
            if (field.value(&q)[(n - 1, n - 1)] - t[(n - 1, n - 1)]).abs() > TOL {
                return Err(Error::HypothesisViolated(format!("ψ varies along x_n at {p:?}")));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantSource {
    Computed,
    ConfigInput,
    Forced,
    Default,
}

/// Every scalar the bound formulas consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorConstants {
    pub n: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub t0: f64,
    pub c0: f64,
    pub h0: f64,
    pub eta1: f64,
    pub eta_r: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub d: Option<f64>,
    pub provenance: BTreeMap<String, ConstantSource>,
}

impl OperatorConstants {
    /// ε = δ = 1 and every other constant zero (the plain Laplacian).
    pub fn trivial(n: usize) -> Self {
        let provenance = ["epsilon", "delta", "t0", "c0", "h0", "eta1", "eta_r", "kappa1", "kappa2"]
            .iter()
            .map(|k| (k.to_string(), ConstantSource::Default))
            .collect();
        OperatorConstants {
            n,
            epsilon: 1.0,
            delta: 1.0,
            t0: 0.0,
            c0: 0.0,
            h0: 0.0,
            eta1: 0.0,
            eta_r: 0.0,
            kappa1: 0.0,
            kappa2: 0.0,
            d: None,
            provenance,
        }
    }

    pub fn sigma(&self) -> f64 {
        2.0 * self.delta - self.epsilon
    }

    /// Gap exponent `δ/(nε)`.
    pub fn exponent(&self) -> f64 {
        self.delta / (self.n as f64 * self.epsilon)
    }

    pub fn set(&mut self, name: &str, value: f64, source: ConstantSource) {
        match name {
            "epsilon" => self.epsilon = value,
            "delta" => self.delta = value,
            "t0" => self.t0 = value,
            "c0" => self.c0 = value,
            "h0" => self.h0 = value,
            "eta1" => self.eta1 = value,
            "eta_r" => self.eta_r = value,
            "kappa1" => self.kappa1 = value,
            "kappa2" => self.kappa2 = value,
            "d" => self.d = Some(value),
            _ => return,
        }
        self.provenance.insert(name.to_string(), source);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInstance(m.to_string()));
        if self.n == 0 {
            return bad("n must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon <= self.delta) {
            return bad("need 0 < ε ≤ δ");
        }
        if !(self.t0 >= 0.0 && self.eta1 >= 0.0 && self.eta_r >= 0.0 && self.h0 >= 0.0) {
            return bad("T₀, η₁, η_r, H₀ must be nonnegative");
        }
        if !(self.kappa2 >= 0.0 && self.kappa2 <= self.kappa1) {
            return bad("need 0 ≤ κ₂ ≤ κ₁");
        }
        if !self.c0.is_finite() {
            return bad("C₀ must be finite");
        }
        if let Some(d) = self.d {
            if !(d > 0.0) {
                return bad("d must be positive");
            }
        }
        Ok(())
    }
}
