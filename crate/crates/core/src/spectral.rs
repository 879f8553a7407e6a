//! Lowest eigenpairs of the pencil `A u = λ B u`.
//!
//! The default solver is block shift-invert subspace iteration: each sweep
//! applies `A⁻¹B` through an envelope Cholesky factor of `A`, then performs a
//! Rayleigh–Ritz step in the `B` inner product. A dense solver is kept for
//! small problems and serves as the reference.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::OperatorPair;
use crate::sparse::{CsrMatrix, SkylineCholesky};
use crate::{Error, Result};

/// Largest DOF count accepted by the dense solver.
pub const DENSE_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    SubspaceIteration,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub k: usize,
    /// Bound on `‖Au − λBu‖₂ / ‖u‖_B` for every returned pair.
    pub solve_tol: f64,
    pub ortho_tol: f64,
    /// Relative spacing below which neighbouring eigenvalues form a multiplet.
    pub multiplicity_rel_tol: f64,
    pub method: SolverMethod,
    pub seed: u64,
    pub max_iter: usize,
}

impl SolverSettings {
    pub fn new(k: usize) -> Self {
        SolverSettings {
            k,
            solve_tol: 1e-9,
            ortho_tol: 1e-8,
            multiplicity_rel_tol: 1e-6,
            method: SolverMethod::SubspaceIteration,
            seed: 0x5eed,
            max_iter: 1000,
        }
    }

    pub fn dense(mut self) -> Self {
        self.method = SolverMethod::Dense;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumResult {
    /// Ascending, repeated by multiplicity.
    pub eigenvalues: Vec<f64>,
    /// `B`-orthonormal eigenvectors over the free DOFs.
    pub eigenvectors: Vec<Vec<f64>>,
    /// `‖Au_j − λ_jBu_j‖₂ / ‖u_j‖_B`.
    pub residuals: Vec<f64>,
    /// 1-based multiplet label of each eigenvalue.
    pub multiplicity_groups: Vec<usize>,
    pub iterations: usize,
    pub settings: SolverSettings,
}

impl SpectrumResult {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `λ_j` with 1-based `j`.
    pub fn lambda(&self, j: usize) -> f64 {
        self.eigenvalues[j - 1]
    }

    /// Whether `λ_i` and `λ_j` (1-based) belong to the same multiplet.
    pub fn same_multiplet(&self, i: usize, j: usize) -> bool {
        self.multiplicity_groups[i - 1] == self.multiplicity_groups[j - 1]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "j,lambda,residual,multiplicity_group")?;
        for j in 0..self.len() {
            writeln!(
                out,
                "{},{:.17e},{:.6e},{}",
                j + 1,
                self.eigenvalues[j],
                self.residuals[j],
                self.multiplicity_groups[j]
            )?;
        }
        Ok(())
    }
}

/// Multiplet labels for an ascending list.
pub fn multiplicity_groups(eigenvalues: &[f64], rel_tol: f64) -> Vec<usize> {
    let mut groups = Vec::with_capacity(eigenvalues.len());
    let mut label = 0;
    for (j, &l) in eigenvalues.iter().enumerate() {
        if j == 0 || l - eigenvalues[j - 1] > rel_tol * l.abs() {
            label += 1;
        }
        groups.push(label);
    }
    groups
}

fn residual(pair: &OperatorPair, lambda: f64, u: &[f64]) -> f64 {
    let au = pair.stiffness.mul_vec(u).expect("dimension checked");
    let bu = pair.mass.mul_vec(u).expect("dimension checked");
    let r2: f64 = au.iter().zip(&bu).map(|(a, b)| (a - lambda * b).powi(2)).sum();
    let unorm = u.iter().zip(&bu).map(|(x, y)| x * y).sum::<f64>().sqrt();
    r2.sqrt() / unorm
}

/// Lowest `settings.k` eigenpairs of `(A, B)`.
pub fn solve_lowest(pair: &OperatorPair, settings: &SolverSettings) -> Result<SpectrumResult> {
    let n = pair.dof_count();
    if settings.k == 0 || settings.k > n {
        return Err(Error::DimensionError { requested: settings.k, available: n });
    }
    let (eigenvalues, eigenvectors, iterations) = match settings.method {
        SolverMethod::Dense => {
            let (vals, vecs) = dense_pencil(&pair.stiffness, &pair.mass, settings.k)?;
            (vals, vecs, 0)
        }
        SolverMethod::SubspaceIteration => subspace_iteration(pair, settings)?,
    };
    let residuals: Vec<f64> =
        eigenvalues.iter().zip(&eigenvectors).map(|(l, u)| residual(pair, *l, u)).collect();
    if settings.method == SolverMethod::Dense
        && residuals.iter().any(|r| !(*r <= settings.solve_tol))
    {
        return Err(Error::ConvergenceFailure { iterations: 0, residuals });
    }
    let multiplicity_groups = multiplicity_groups(&eigenvalues, settings.multiplicity_rel_tol);
    Ok(SpectrumResult {
        eigenvalues,
        eigenvectors,
        residuals,
        multiplicity_groups,
        iterations,
        settings: settings.clone(),
    })
}

/// Dense generalized eigensolver: `B = LLᵀ`, eigen-decompose `L⁻¹AL⁻ᵀ`.
fn dense_pencil(a: &CsrMatrix, b: &CsrMatrix, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.dim();
    if n > DENSE_LIMIT {
        return Err(Error::Config(format!(
            "dense solver is limited to {DENSE_LIMIT} DOFs, problem has {n}"
        )));
    }
    let (vals, vecs) = dense_generalized(&a.to_dense(), &b.to_dense())?;
    Ok((vals[..k].to_vec(), vecs[..k].to_vec()))
}

/// All eigenpairs of a small symmetric-definite pencil, ascending, with
/// `B`-orthonormal vectors.
fn dense_generalized(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::FactorizationFailed("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let l_inv_a = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::FactorizationFailed("singular Cholesky factor".into()))?;
    let c = l
        .solve_lower_triangular(&l_inv_a.transpose())
        .ok_or_else(|| Error::FactorizationFailed("singular Cholesky factor".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lt = l.transpose();
    let mut vals = Vec::with_capacity(order.len());
    let mut vecs = Vec::with_capacity(order.len());
    for i in order {
        vals.push(eig.eigenvalues[i]);
        let v = lt
            .solve_upper_triangular(&eig.eigenvectors.column(i).into_owned())
            .ok_or_else(|| Error::FactorizationFailed("singular Cholesky factor".into()))?;
        vecs.push(v.as_slice().to_vec());
    }
    Ok((vals, vecs))
}

fn subspace_iteration(
    pair: &OperatorPair,
    settings: &SolverSettings,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, usize)> {
    let n = pair.dof_count();
    let k = settings.k;
    let p = n.min((2 * k).max(k + 8));
    let chol = SkylineCholesky::factor(&pair.stiffness)?;
    let b = &pair.mass;

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut x: Vec<Vec<f64>> =
        (0..p).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut last_residuals = vec![f64::INFINITY; k];

    for iter in 1..=settings.max_iter {
        let bx: Vec<Vec<f64>> = x.par_iter().map(|v| mul(b, v)).collect();
        let y: Vec<Vec<f64>> = bx
            .par_iter()
            .map(|v| {
                let mut w = v.clone();
                chol.solve_in_place(&mut w);
                w
            })
            .collect();
        let by: Vec<Vec<f64>> = y.par_iter().map(|v| mul(b, v)).collect();
        // A restricted to span(Y) is YᵀAY = YᵀBX since AY = BX.
        let a_hat = gram(&y, &bx);
        let b_hat = gram(&y, &by);
        let (theta, q) = dense_generalized(&a_hat, &b_hat)?;
        x = combine(&y, &q);

        let residuals: Vec<f64> =
            (0..k).into_par_iter().map(|j| residual(pair, theta[j], &x[j])).collect();
        if residuals.iter().all(|r| *r <= settings.solve_tol) {
            x.truncate(k);
            return Ok((theta[..k].to_vec(), x, iter));
        }
        last_residuals = residuals;
    }
    Err(Error::ConvergenceFailure { iterations: settings.max_iter, residuals: last_residuals })
}

fn mul(m: &CsrMatrix, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    m.mul_vec_into(v, &mut out);
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Symmetrized `UᵀV` for column sets `U`, `V`.
fn gram(u: &[Vec<f64>], v: &[Vec<f64>]) -> DMatrix<f64> {
    let p = u.len();
    let m = DMatrix::from_fn(p, p, |i, j| dot(&u[i], &v[j]));
    (&m + m.transpose()) * 0.5
}

/// Columns of `Y Q`, with `Q` given as a list of coefficient vectors.
fn combine(y: &[Vec<f64>], q: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = y[0].len();
    q.par_iter()
        .map(|coeffs| {
            let mut out = vec![0.0; n];
            for (c, col) in coeffs.iter().zip(y) {
                for (o, v) in out.iter_mut().zip(col) {
                    *o += c * v;
                }
            }
            out
        })
        .collect()
}

/// Outcome of [`validate_spectrum`] with per-check margins (positive means
/// the check holds with that much room).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    /// `|u_jᵀAu_j − λ_j|` per eigenpair.
    pub rayleigh_defects: Vec<f64>,
    /// `min_j (10·solve_tol·λ_j − defect_j)`.
    pub rayleigh_margin: f64,
    /// `max_ij |u_iᵀBu_j − δ_ij|`.
    pub orthonormality_defect: f64,
    pub orthonormality_margin: f64,
    /// `min_j (λ_{j+1} − λ_j)`; zero for repeated eigenvalues.
    pub ordering_margin: f64,
    pub positivity_margin: f64,
}

impl ValidationReport {
    pub fn rayleigh_ok(&self) -> bool {
        self.rayleigh_margin >= 0.0
    }

    pub fn orthonormality_ok(&self) -> bool {
        self.orthonormality_margin >= 0.0
    }

    pub fn ordering_ok(&self) -> bool {
        self.ordering_margin >= 0.0
    }

    pub fn positivity_ok(&self) -> bool {
        self.positivity_margin > 0.0
    }

    pub fn passed(&self) -> bool {
        self.rayleigh_ok() && self.orthonormality_ok() && self.ordering_ok() && self.positivity_ok()
    }
}

/// Checks the Rayleigh identity `λ_j = u_jᵀAu_j`, `B`-orthonormality,
/// ascending order and `λ₁ > 0`.
pub fn validate_spectrum(result: &SpectrumResult, pair: &OperatorPair) -> ValidationReport {
    let k = result.len();
    let bu: Vec<Vec<f64>> = result.eigenvectors.par_iter().map(|u| mul(&pair.mass, u)).collect();
    let rayleigh_defects: Vec<f64> = result
        .eigenvectors
        .iter()
        .zip(&result.eigenvalues)
        .map(|(u, l)| (pair.stiffness.bilinear(u, u) - l).abs())
        .collect();
    let rayleigh_margin = rayleigh_defects
        .iter()
        .zip(&result.eigenvalues)
        .map(|(d, l)| 10.0 * result.settings.solve_tol * l - d)
        .fold(f64::INFINITY, f64::min);
    let mut orthonormality_defect: f64 = 0.0;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            orthonormality_defect =
                orthonormality_defect.max((dot(&result.eigenvectors[i], &bu[j]) - target).abs());
        }
    }
    let ordering_margin = result
        .eigenvalues
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
        .min(if k > 1 { f64::INFINITY } else { 0.0 });
    ValidationReport {
        rayleigh_defects,
        rayleigh_margin,
        orthonormality_defect,
        orthonormality_margin: result.settings.ortho_tol - orthonormality_defect,
        ordering_margin,
        positivity_margin: result.eigenvalues.first().copied().unwrap_or(0.0),
    }
}

/// `‖f‖²_B − Σ_j (u_jᵀBf)²` over the eigenvectors held by `result`.
pub fn parseval_defect(result: &SpectrumResult, pair: &OperatorPair, f: &[f64]) -> Result<f64> {
    if f.len() != pair.dof_count() {
        return Err(Error::DimensionError { requested: f.len(), available: pair.dof_count() });
    }
    let bf = mul(&pair.mass, f);
    let norm2 = dot(f, &bf);
    let captured: f64 = result.eigenvectors.iter().map(|u| dot(u, &bf).powi(2)).sum();
    Ok(norm2 - captured)
}

/// `B`-inner product of two DOF vectors.
pub fn mass_inner(pair: &OperatorPair, u: &[f64], v: &[f64]) -> f64 {
    pair.mass.bilinear(u, v)
}

/// Coefficients of `f` in the returned eigenbasis.
pub fn expansion_coefficients(result: &SpectrumResult, pair: &OperatorPair, f: &[f64]) -> Vec<f64> {
    let bf = mul(&pair.mass, f);
    result.eigenvectors.iter().map(|u| dot(u, &bf)).collect()
}

/// Dense `DVector` view of an eigenvector, for callers doing small algebra.
pub fn eigenvector(result: &SpectrumResult, j: usize) -> DVector<f64> {
    DVector::from_column_slice(&result.eigenvectors[j - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble;
    use crate::fields::{DriftField, ScalarField, TensorField};
    use crate::geometry::{make_box_domain, GridDomain, MetricModel};
    use std::f64::consts::PI;

    fn interval(cells: usize) -> GridDomain {
        make_box_domain(&[(0.0, PI)], &[cells], MetricModel::euclidean(1).unwrap(), |_| true).unwrap()
    }

    fn square(cells: usize) -> GridDomain {
        make_box_domain(
            &[(0.0, PI), (0.0, PI)],
            &[cells, cells],
            MetricModel::euclidean(2).unwrap(),
            |_| true,
        )
        .unwrap()
    }

    fn laplacian(d: &GridDomain) -> OperatorPair {
        assemble(d, &TensorField::identity(d.dim()), &DriftField::zero(d.dim())).unwrap()
    }

    #[test]
    fn single_dof_eigenvalue() {
        let pair = laplacian(&interval(2));
        for s in [SolverSettings::new(1), SolverSettings::new(1).dense()] {
            let r = solve_lowest(&pair, &s).unwrap();
            assert!((r.lambda(1) - 12.0 / (PI * PI)).abs() < 1e-15);
            let v = validate_spectrum(&r, &pair);
            assert!(v.passed());
            assert!(v.rayleigh_defects[0] < 1e-15 && v.orthonormality_defect < 1e-15);
        }
    }

    #[test]
    fn interval_spectrum() {
        let pair = laplacian(&interval(2000));
        let r = solve_lowest(&pair, &SolverSettings::new(10)).unwrap();
        for j in 1..=10 {
            let exact = (j * j) as f64;
            assert!((r.lambda(j) - exact).abs() / exact < 1e-3, "λ_{j} = {}", r.lambda(j));
            assert!(r.residuals[j - 1] <= 1e-9);
        }
        let v = validate_spectrum(&r, &pair);
        assert!(v.passed(), "{v:?}");
        assert!(v.rayleigh_defects.iter().all(|d| *d < 1e-8));
    }

    #[test]
    fn drifted_interval_shifts_by_quarter() {
        let eta = DriftField::preset(1, ScalarField::coordinate(0, 1)).unwrap();
        let pair = assemble(&interval(1000), &TensorField::identity(1), &eta).unwrap();
        let r = solve_lowest(&pair, &SolverSettings::new(5)).unwrap();
        for j in 1..=5 {
            let exact = (j * j) as f64 + 0.25;
            assert!((r.lambda(j) - exact).abs() / exact < 2e-3, "λ_{j} = {}", r.lambda(j));
        }
    }

    #[test]
    fn iterative_matches_dense() {
        let d = make_box_domain(
            &[(0.0, 1.0), (1.0, 2.0)],
            &[20, 20],
            MetricModel::hyperbolic(2).unwrap(),
            |_| true,
        )
        .unwrap();
        let t = TensorField::diagonal(vec![
            ScalarField::Sine { offset: 2.0, amplitude: 0.5, axis: 0, frequency: 3.0, phase: 0.0 },
            ScalarField::Constant(1.0),
        ])
        .unwrap();
        let eta = DriftField::preset(2, ScalarField::Affine { constant: 0.0, coeffs: vec![0.8, 0.0] })
            .unwrap();
        let pair = assemble(&d, &t, &eta).unwrap();
        assert!(pair.dof_count() <= 500);
        let it = solve_lowest(&pair, &SolverSettings::new(8)).unwrap();
        let de = solve_lowest(&pair, &SolverSettings::new(8).dense()).unwrap();
        for j in 1..=8 {
            assert!((it.lambda(j) - de.lambda(j)).abs() <= 1e-8 * de.lambda(j));
        }
        assert!(validate_spectrum(&de, &pair).passed());
    }

    #[test]
    fn scaling_tensor_scales_spectrum() {
        let d = square(12);
        let eta = DriftField::preset(2, ScalarField::coordinate(1, 2)).unwrap();
        let t = TensorField::constant(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let base = solve_lowest(&assemble(&d, &t, &eta).unwrap(), &SolverSettings::new(6).dense()).unwrap();
        let c = 3.5;
        let scaled =
            solve_lowest(&assemble(&d, &t.scaled(c), &eta).unwrap(), &SolverSettings::new(6).dense())
                .unwrap();
        for j in 1..=6 {
            assert!((scaled.lambda(j) / base.lambda(j) - c).abs() < 1e-12);
        }
    }

    #[test]
    fn shrinking_domain_raises_first_eigenvalue() {
        let big = laplacian(&square(16));
        let small_domain = make_box_domain(
            &[(0.0, PI), (0.0, PI)],
            &[16, 16],
            MetricModel::euclidean(2).unwrap(),
            |x| x[0] < 2.5 && x[1] > 0.4,
        )
        .unwrap();
        let small = laplacian(&small_domain);
        let s = SolverSettings::new(1);
        assert!(solve_lowest(&small, &s).unwrap().lambda(1) >= solve_lowest(&big, &s).unwrap().lambda(1));
    }

    #[test]
    fn refinement_rate_is_quadratic() {
        let l: Vec<f64> = [8, 16, 32]
            .iter()
            .map(|&c| solve_lowest(&laplacian(&square(c)), &SolverSettings::new(1)).unwrap().lambda(1))
            .collect();
        let ratio = (l[0] - l[1]) / (l[1] - l[2]);
        assert!((ratio - 4.0).abs() < 0.3, "{ratio}");
    }

    #[test]
    fn perturbed_eigenvector_fails_orthonormality() {
        let pair = laplacian(&interval(50));
        let mut r = solve_lowest(&pair, &SolverSettings::new(3)).unwrap();
        assert!(validate_spectrum(&r, &pair).orthonormality_ok());
        r.eigenvectors[1][10] += 0.1;
        let v = validate_spectrum(&r, &pair);
        assert!(!v.orthonormality_ok() && !v.passed());
    }

    #[test]
    fn parseval_examples() {
        let pair = laplacian(&square(8));
        let n = pair.dof_count();
        let full = solve_lowest(&pair, &SolverSettings::new(n).dense()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm2 = mass_inner(&pair, &f, &f);
        let defect = parseval_defect(&full, &pair, &f).unwrap();
        assert!(defect.abs() <= 1e-10 * norm2);

        let one = solve_lowest(&pair, &SolverSettings::new(1)).unwrap();
        let u1 = one.eigenvectors[0].clone();
        assert!(parseval_defect(&one, &pair, &u1).unwrap().abs() < 1e-12);
        let c = mass_inner(&pair, &f, &u1);
        let g: Vec<f64> = f.iter().zip(&u1).map(|(a, b)| a - c * b).collect();
        let gn = mass_inner(&pair, &g, &g);
        assert!((parseval_defect(&one, &pair, &g).unwrap() - gn).abs() < 1e-12 * gn);
        assert!(matches!(parseval_defect(&one, &pair, &[1.0]), Err(Error::DimensionError { .. })));
    }

    #[test]
    fn square_has_double_eigenvalue() {
        let pair = laplacian(&square(24));
        let r = solve_lowest(&pair, &SolverSettings::new(4)).unwrap();
        assert_eq!(r.multiplicity_groups, vec![1, 2, 2, 3]);
        assert!(r.same_multiplet(2, 3));
    }

    #[test]
    fn bad_requests() {
        let pair = laplacian(&interval(4));
        assert!(matches!(solve_lowest(&pair, &SolverSettings::new(4)), Err(Error::DimensionError { .. })));
        let mut s = SolverSettings::new(2);
        s.max_iter = 1;
        s.solve_tol = 1e-30;
        assert!(matches!(
            solve_lowest(&laplacian(&interval(200)), &s),
            Err(Error::ConvergenceFailure { .. })
        ));
    }

    #[test]
    fn deterministic_across_runs() {
        let pair = laplacian(&square(20));
        let a = solve_lowest(&pair, &SolverSettings::new(5)).unwrap();
        let b = solve_lowest(&pair, &SolverSettings::new(5)).unwrap();
        assert_eq!(a.eigenvalues, b.eigenvalues);
        let mut csv_a = Vec::new();
        a.write_csv(&mut csv_a).unwrap();
        let text = String::from_utf8(csv_a).unwrap();
        assert!(text.starts_with("j,lambda,residual,multiplicity_group\n1,"));
    }
}
