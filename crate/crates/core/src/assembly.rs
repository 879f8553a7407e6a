//! Q1 finite elements for the weighted forms
//!
//! ```text
//! a(u, v) = ∫ ⟨T∇u, ∇v⟩_g e^{−η} dV_g      m(u, v) = ∫ u v e^{−η} dV_g
//! ```
//!
//! on the masked-in cells of a [`GridDomain`], with Dirichlet conditions by
//! dropping boundary nodes from the unknowns.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::fields::{check_spd, DriftField, ScalarField, TensorField};
use crate::geometry::{GridDomain, GAUSS2};
use crate::sparse::CsrMatrix;
use crate::{Error, Result};

/// Shape-function tables of the reference cell at the tensor Gauss points.
#[derive(Debug, Clone)]
pub struct ReferenceElement {
    dim: usize,
    /// `points[q][a]`: reference coordinate in `[0, 1]`.
    pub points: Vec<Vec<f64>>,
    /// Product Gauss weight of point `q` (weights sum to 1).
    pub weights: Vec<f64>,
    /// `shape[q][b]`: value of the shape function of corner `b`.
    pub shape: Vec<Vec<f64>>,
    /// `shape_grad[q][b][a]`: `∂_a` of corner `b`'s shape function in
    /// reference coordinates.
    pub shape_grad: Vec<Vec<Vec<f64>>>,
}

impl ReferenceElement {
    pub fn new(dim: usize) -> Self {
        let corners = 1usize << dim;
        let count = 2usize.pow(dim as u32);
        let mut points = Vec::with_capacity(count);
        let mut weights = Vec::with_capacity(count);
        for q in 0..count {
            points.push((0..dim).map(|a| GAUSS2[(q >> a) & 1].0).collect::<Vec<_>>());
            weights.push((0..dim).map(|a| GAUSS2[(q >> a) & 1].1).product());
        }
        let factor = |b: usize, a: usize, xi: f64| if (b >> a) & 1 == 1 { xi } else { 1.0 - xi };
        let shape = points
            .iter()
            .map(|xi| (0..corners).map(|b| (0..dim).map(|a| factor(b, a, xi[a])).product()).collect())
            .collect();
        let shape_grad = points
            .iter()
            .map(|xi| {
                (0..corners)
                    .map(|b| {
                        (0..dim)
                            .map(|a| {
                                let sign = if (b >> a) & 1 == 1 { 1.0 } else { -1.0 };
                                sign * (0..dim)
                                    .filter(|&c| c != a)
                                    .map(|c| factor(b, c, xi[c]))
                                    .product::<f64>()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        ReferenceElement { dim, points, weights, shape, shape_grad }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }
}

/// Coefficient data at one quadrature point of one cell.
#[derive(Debug, Clone)]
pub struct QuadraturePoint {
    pub cell: usize,
    /// Index into the reference tables.
    pub local: usize,
    pub x: Vec<f64>,
    /// `w_q · |cell| · W_g(x) · e^{−η(x)}`: the measure `dm` carried by the point.
    pub dm: f64,
    /// Inverse-metric factor `γ` with `g^{ij} = γ δ^{ij}`.
    pub gamma: f64,
    pub tensor: DMatrix<f64>,
}

/// Quadrature rule used for assembly; reused by integral verifiers so that
/// discrete and continuous quantities share one sampling.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub reference: ReferenceElement,
    pub points: Vec<QuadraturePoint>,
}

impl Quadrature {
    pub fn describe(&self) -> String {
        format!("tensor 2-point Gauss, {} points per cell", self.reference.point_count())
    }
}

/// Stiffness/mass pair over the free DOFs of a domain.
#[derive(Debug, Clone)]
pub struct OperatorPair {
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    pub domain: GridDomain,
    pub quadrature: Quadrature,
}

impl OperatorPair {
    pub fn dof_count(&self) -> usize {
        self.stiffness.dim()
    }

    /// DOF indices of the corners of `cell` (`None` for Dirichlet nodes).
    pub fn cell_dofs(&self, cell: usize) -> Vec<Option<usize>> {
        self.domain.cell_nodes(cell).into_iter().map(|n| self.domain.dof_of_node(n)).collect()
    }

    /// Interpolates a nodal vector and its coordinate gradient at a
    /// quadrature point.
    pub fn evaluate(&self, qp: &QuadraturePoint, u: &[f64]) -> (f64, Vec<f64>) {
        let n = self.domain.dim();
        let re = &self.quadrature.reference;
        let mut value = 0.0;
        let mut grad = vec![0.0; n];
        for (b, dof) in self.cell_dofs(qp.cell).into_iter().enumerate() {
            if let Some(d) = dof {
                value += re.shape[qp.local][b] * u[d];
                for a in 0..n {
                    grad[a] += re.shape_grad[qp.local][b][a] * u[d] / self.domain.spacing(a);
                }
            }
        }
        (value, grad)
    }

    /// Writes both matrices in `row,col,value` coordinate format.
    pub fn dump<W: Write>(&self, mut stiffness: W, mass: W) -> Result<()> {
        self.stiffness.write_coordinate(&mut stiffness)?;
        self.mass.write_coordinate(mass)?;
        Ok(())
    }
}

/// Assembles `(A, B)`. Cells are processed in parallel, but triplets are
/// merged in cell order so the matrices are bit-reproducible.
pub fn assemble(domain: &GridDomain, field: &TensorField, drift: &DriftField) -> Result<OperatorPair> {
    let n = domain.dim();
    if field.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: field.dim() });
    }
    if drift.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: drift.dim() });
    }
    if domain.dof_count() == 0 {
        return Err(Error::EmptyDomain);
    }
    let metric = domain.metric();
    let reference = ReferenceElement::new(n);
    let cell_volume: f64 = (0..n).map(|a| domain.spacing(a)).product();
    let cells: Vec<usize> = domain.inside_cells().collect();

    let per_cell: Vec<Result<Vec<QuadraturePoint>>> = cells
        .par_iter()
        .map(|&cell| {
            let (lo, _) = domain.cell_box(cell);
            (0..reference.point_count())
                .map(|q| {
                    let x: Vec<f64> = (0..n)
                        .map(|a| lo[a] + reference.points[q][a] * domain.spacing(a))
                        .collect();
                    let tensor = field.value(&x);
                    check_spd(&tensor, &x)?;
                    let eta = drift.value(&x);
                    if !eta.is_finite() {
                        return Err(Error::NonFiniteValue(x));
                    }
                    let dm = reference.weights[q]
                        * cell_volume
                        * metric.volume_weight_unchecked(&x)
                        * (-eta).exp();
                    let gamma = metric.inverse_factor(&x);
                    Ok(QuadraturePoint { cell, local: q, x, dm, gamma, tensor })
                })
                .collect()
        })
        .collect();
    let mut points = Vec::with_capacity(cells.len() * reference.point_count());
    for r in per_cell {
        points.extend(r?);
    }

    let corners = 1usize << n;
    let q_per_cell = reference.point_count();
    let inv_h: Vec<f64> = (0..n).map(|a| 1.0 / domain.spacing(a)).collect();
    let element_triplets: Vec<(Vec<(usize, usize, f64)>, Vec<(usize, usize, f64)>)> = points
        .par_chunks(q_per_cell)
        .map(|qps| {
            let cell = qps[0].cell;
            let dofs: Vec<Option<usize>> =
                domain.cell_nodes(cell).into_iter().map(|nd| domain.dof_of_node(nd)).collect();
            let mut a_tr = Vec::new();
            let mut b_tr = Vec::new();
            for b in 0..corners {
                let Some(db) = dofs[b] else { continue };
                for c in b..corners {
                    let Some(dc) = dofs[c] else { continue };
                    let mut a_val = 0.0;
                    let mut m_val = 0.0;
                    for qp in qps {
                        let gb = &reference.shape_grad[qp.local][b];
                        let gc = &reference.shape_grad[qp.local][c];
                        let mut form = 0.0;
                        for i in 0..n {
                            for j in 0..n {
                                form += gb[i] * inv_h[i] * qp.tensor[(i, j)] * gc[j] * inv_h[j];
                            }
                        }
                        a_val += qp.dm * qp.gamma * form;
                        m_val += qp.dm * reference.shape[qp.local][b] * reference.shape[qp.local][c];
                    }
                    a_tr.push((db, dc, a_val));
                    b_tr.push((db, dc, m_val));
                    if db != dc {
                        a_tr.push((dc, db, a_val));
                        b_tr.push((dc, db, m_val));
                    }
                }
            }
            (a_tr, b_tr)
        })
        .collect();

    let dofs = domain.dof_count();
    let mut a_all = Vec::new();
    let mut b_all = Vec::new();
    for (a, b) in element_triplets {
        a_all.extend(a);
        b_all.extend(b);
    }
    Ok(OperatorPair {
        stiffness: CsrMatrix::from_triplets(dofs, a_all),
        mass: CsrMatrix::from_triplets(dofs, b_all),
        domain: domain.clone(),
        quadrature: Quadrature { reference, points },
    })
}

/// `A·u`.
pub fn apply_discrete(pair: &OperatorPair, u: &[f64]) -> Result<Vec<f64>> {
    pair.stiffness.mul_vec(u)
}

/// Nodal interpolant of `f` at the free DOFs.
pub fn project_function(domain: &GridDomain, f: &ScalarField) -> Result<Vec<f64>> {
    project_with(domain, |x| f.value(x))
}

/// Nodal interpolant of an arbitrary closure.
pub fn project_with<F: Fn(&[f64]) -> f64>(domain: &GridDomain, f: F) -> Result<Vec<f64>> {
    (0..domain.dof_count())
        .map(|d| {
            let x = domain.dof_coordinates(d);
            let v = f(&x);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFiniteValue(x))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_box_domain, MetricModel};
    use crate::sparse::SkylineCholesky;
    use std::f64::consts::PI;

    fn interval(cells: usize) -> GridDomain {
        make_box_domain(&[(0.0, PI)], &[cells], MetricModel::euclidean(1).unwrap(), |_| true).unwrap()
    }

    #[test]
    fn single_dof_interval() {
        let pair = assemble(&interval(2), &TensorField::identity(1), &DriftField::zero(1)).unwrap();
        assert_eq!(pair.dof_count(), 1);
        let a = pair.stiffness.get(0, 0);
        let b = pair.mass.get(0, 0);
        assert!((a - 4.0 / PI).abs() < 1e-15);
        assert!((b - PI / 3.0).abs() < 1e-15);
        assert!((a / b - 12.0 / (PI * PI)).abs() < 1e-15);
        let au = apply_discrete(&pair, &[1.0]).unwrap();
        assert!((au[0] - 4.0 / PI).abs() < 1e-15);
        assert_eq!(apply_discrete(&pair, &[0.0]).unwrap(), vec![0.0]);
        assert!(matches!(apply_discrete(&pair, &[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
    }

    /// Adaptive Simpson quadrature as an independent integrator.
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (f(a), f(m), f(b));
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
    }

    #[test]
    fn drift_stiffness_matches_adaptive_quadrature() {
        let eta = DriftField::preset(1, ScalarField::coordinate(0, 1)).unwrap();
        let entry = |cells: usize| {
            let pair = assemble(&interval(cells), &TensorField::identity(1), &eta).unwrap();
            let h = PI / cells as f64;
            let exact = simpson(&|x: f64| (-x).exp() / (h * h), 0.0, 2.0 * h, 1e-14);
            (pair.stiffness.get(0, 0), exact)
        };
        // two cells: the 2-point Gauss rule is the only error source, O(h⁴)
        let (coarse, exact) = entry(2);
        assert!((coarse - exact).abs() < 1e-3, "{coarse} vs {exact}");
        let (fine, exact) = entry(32);
        assert!((fine - exact).abs() < 1e-6, "{fine} vs {exact}");
        let (finer, exact2) = entry(64);
        let ratio = (fine - exact).abs() / (finer - exact2).abs();
        assert!(ratio > 7.0, "{ratio}");
    }

    #[test]
    fn matrices_are_exactly_symmetric_and_definite() {
        let d = make_box_domain(
            &[(0.0, 1.0), (1.0, 2.0)],
            &[9, 7],
            MetricModel::hyperbolic(2).unwrap(),
            |x| x[0] + x[1] < 2.6,
        )
        .unwrap();
        let t = TensorField::constant(DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0])).unwrap();
        let eta = DriftField::preset(
            2,
            ScalarField::Gaussian { amplitude: 0.5, center: vec![0.3, 1.2], width: 0.4 },
        )
        .unwrap();
        let pair = assemble(&d, &t, &eta).unwrap();
        assert_eq!(pair.stiffness.asymmetry(), 0.0);
        assert_eq!(pair.mass.asymmetry(), 0.0);
        assert!(SkylineCholesky::factor(&pair.stiffness).is_ok());
        assert!(SkylineCholesky::factor(&pair.mass).is_ok());
        let again = assemble(&d, &t, &eta).unwrap();
        assert_eq!(pair.stiffness, again.stiffness);
    }

    /// `vᵀAu` against a direct evaluation of the form with interpolated
    /// gradients at the same quadrature points.
    #[test]
    fn stiffness_realizes_weighted_form() {
        let d = make_box_domain(&[(0.0, 2.0), (0.5, 1.5)], &[6, 5], MetricModel::hyperbolic(2).unwrap(), |_| true)
            .unwrap();
        let t = TensorField::diagonal(vec![
            ScalarField::Sine { offset: 2.0, amplitude: 0.5, axis: 0, frequency: 1.0, phase: 0.0 },
            ScalarField::Constant(1.5),
        ])
        .unwrap();
        let eta = DriftField::preset(2, ScalarField::Affine { constant: 0.0, coeffs: vec![0.3, 0.0] }).unwrap();
        let pair = assemble(&d, &t, &eta).unwrap();
        let u: Vec<f64> = (0..pair.dof_count()).map(|i| (i as f64 * 0.37).sin()).collect();
        let v: Vec<f64> = (0..pair.dof_count()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut form = 0.0;
        let mut mass = 0.0;
        for qp in &pair.quadrature.points {
            let (uv, ug) = pair.evaluate(qp, &u);
            let (vv, vg) = pair.evaluate(qp, &v);
            let tg = &qp.tensor * nalgebra::DVector::from_vec(ug);
            form += qp.dm * qp.gamma * tg.dot(&nalgebra::DVector::from_vec(vg));
            mass += qp.dm * uv * vv;
        }
        let lhs = pair.stiffness.bilinear(&v, &u);
        assert!((lhs - form).abs() < 1e-12 * form.abs().max(1.0));
        assert!((pair.mass.bilinear(&v, &u) - mass).abs() < 1e-12 * mass.abs().max(1.0));
    }

    #[test]
    fn mass_total_approaches_weighted_volume() {
        // ∫_{(0,π)} e^{−x} dx with all nodes free would be 1 − e^{−π}; with
        // Dirichlet nodes removed the missing boundary hats shrink as h → 0.
        let eta = DriftField::preset(1, ScalarField::coordinate(0, 1)).unwrap();
        let exact = 1.0 - (-PI).exp();
        let mut prev = f64::INFINITY;
        for cells in [16, 64, 256] {
            let pair = assemble(&interval(cells), &TensorField::identity(1), &eta).unwrap();
            let ones = vec![1.0; pair.dof_count()];
            let total = pair.mass.bilinear(&ones, &ones);
            let err = (exact - total).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 0.01);
    }

    #[test]
    fn projection_examples() {
        let d = interval(4);
        let v = project_function(&d, &ScalarField::coordinate(0, 1)).unwrap();
        for (a, e) in v.iter().zip([PI / 4.0, PI / 2.0, 3.0 * PI / 4.0]) {
            assert!((a - e).abs() < 1e-15);
        }
        assert_eq!(project_function(&d, &ScalarField::Constant(0.0)).unwrap(), vec![0.0; 3]);
        let h = make_box_domain(&[(0.0, 1.0), (1.0, 2.0)], &[2, 2], MetricModel::hyperbolic(2).unwrap(), |_| true)
            .unwrap();
        let v = project_function(&h, &ScalarField::Log { axis: 1, scale: 1.0 }).unwrap();
        assert_eq!(v, vec![1.5f64.ln()]);
        assert!(matches!(project_with(&d, |_| f64::NAN), Err(Error::NonFiniteValue(_))));
    }

    #[test]
    fn indefinite_tensor_rejected() {
        let t = TensorField::constant(DMatrix::from_row_slice(1, 1, &[-1.0])).unwrap();
        assert!(matches!(
            assemble(&interval(4), &t, &DriftField::zero(1)),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}
