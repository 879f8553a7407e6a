//! Ambient metric models and masked grid domains.
//!
//! Two models are supported:
//!
//! * `Euclidean(n)`: the flat metric on ℝⁿ.
//! * `HyperbolicHalfPlane(n)`: ℍⁿ(−1) as `{x_n > 0}` with `g = δ_ij / x_n²`.
//!
//! In the half-space model the orthonormal frame is `e_i = x_n ∂_i`, so a
//! (1,1)-tensor has the same matrix in the coordinate and the orthonormal
//! frame. This is what lets the coefficient tensor be given as a plain
//! matrix field in both models.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricModel {
    Euclidean(usize),
    HyperbolicHalfPlane(usize),
}

impl MetricModel {
    pub fn euclidean(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidBounds("dimension must be at least 1".into()));
        }
        Ok(MetricModel::Euclidean(dim))
    }

    pub fn hyperbolic(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidBounds(
                "hyperbolic half-space needs dimension at least 2".into(),
            ));
        }
        Ok(MetricModel::HyperbolicHalfPlane(dim))
    }

    pub fn dim(&self) -> usize {
        match *self {
            MetricModel::Euclidean(n) | MetricModel::HyperbolicHalfPlane(n) => n,
        }
    }

    pub fn is_hyperbolic(&self) -> bool {
        matches!(self, MetricModel::HyperbolicHalfPlane(_))
    }

    pub fn tag(&self) -> &'static str {
        match self {
            MetricModel::Euclidean(_) => "euclidean",
            MetricModel::HyperbolicHalfPlane(_) => "hyperbolic",
        }
    }

    /// Checks dimension and, for the half-space, `x_n > 0`.
    pub fn check_point(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: p.len() });
        }
        if self.is_hyperbolic() && !(p[p.len() - 1] > 0.0) {
            return Err(Error::OutOfDomain(p.to_vec()));
        }
        Ok(())
    }

    /// `√det g`: 1 for Euclidean space, `x_n^{−n}` for the half-space.
    pub fn volume_weight(&self, p: &[f64]) -> Result<f64> {
        self.check_point(p)?;
        Ok(self.volume_weight_unchecked(p))
    }

    pub(crate) fn volume_weight_unchecked(&self, p: &[f64]) -> f64 {
        match *self {
            MetricModel::Euclidean(_) => 1.0,
            MetricModel::HyperbolicHalfPlane(n) => p[n - 1].powi(-(n as i32)),
        }
    }

    /// Conformal factor γ of the inverse metric, `g^{ij} = γ δ^{ij}`.
    pub(crate) fn inverse_factor(&self, p: &[f64]) -> f64 {
        match *self {
            MetricModel::Euclidean(_) => 1.0,
            MetricModel::HyperbolicHalfPlane(n) => p[n - 1] * p[n - 1],
        }
    }

    /// `∂_m γ`.
    pub(crate) fn inverse_factor_derivative(&self, p: &[f64], m: usize) -> f64 {
        match *self {
            MetricModel::Euclidean(_) => 0.0,
            MetricModel::HyperbolicHalfPlane(n) => {
                if m == n - 1 {
                    2.0 * p[n - 1]
                } else {
                    0.0
                }
            }
        }
    }

    /// `∂_m ln √det g`.
    pub(crate) fn log_volume_derivative(&self, p: &[f64], m: usize) -> f64 {
        match *self {
            MetricModel::Euclidean(_) => 0.0,
            MetricModel::HyperbolicHalfPlane(n) => {
                if m == n - 1 {
                    -(n as f64) / p[n - 1]
                } else {
                    0.0
                }
            }
        }
    }

    /// Christoffel symbol `Γ^k_{ij}` in coordinates.
    pub(crate) fn christoffel(&self, p: &[f64], k: usize, i: usize, j: usize) -> f64 {
        match *self {
            MetricModel::Euclidean(_) => 0.0,
            MetricModel::HyperbolicHalfPlane(n) => {
                let last = n - 1;
                let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
                -(d(i, k) * d(j, last) + d(j, k) * d(i, last) - d(i, j) * d(k, last)) / p[last]
            }
        }
    }

    /// `∂_m Γ^k_{ij}`.
    pub(crate) fn christoffel_derivative(
        &self,
        p: &[f64],
        m: usize,
        k: usize,
        i: usize,
        j: usize,
    ) -> f64 {
        match *self {
            MetricModel::Euclidean(_) => 0.0,
            MetricModel::HyperbolicHalfPlane(n) => {
                if m == n - 1 {
                    -self.christoffel(p, k, i, j) / p[n - 1]
                } else {
                    0.0
                }
            }
        }
    }

    /// Metric gradient (coordinate components) of a function with the given
    /// coordinate differential.
    pub fn raise_gradient(&self, p: &[f64], covector: &[f64]) -> Result<Vec<f64>> {
        self.check_point(p)?;
        if covector.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: covector.len() });
        }
        let gamma = self.inverse_factor(p);
        Ok(covector.iter().map(|c| gamma * c).collect())
    }

    /// `|v|_g` for a vector with coordinate components `v`.
    pub fn vector_norm(&self, p: &[f64], v: &[f64]) -> Result<f64> {
        self.check_point(p)?;
        let euclid = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(euclid / self.inverse_factor(p).sqrt())
    }

    /// `|∇f|_g` from the coordinate differential of `f`.
    pub fn covector_norm(&self, p: &[f64], covector: &[f64]) -> Result<f64> {
        self.check_point(p)?;
        let euclid = covector.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(euclid * self.inverse_factor(p).sqrt())
    }

    pub fn geodesic_distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        let chord = euclidean_distance(x, y);
        Ok(match *self {
            MetricModel::Euclidean(_) => chord,
            MetricModel::HyperbolicHalfPlane(n) => {
                // arccosh(1 + |x−y|²/(2 x_n y_n)) written as 2·asinh(·) to keep
                // precision for nearby points.
                let s = chord / (2.0 * (x[n - 1] * y[n - 1]).sqrt());
                2.0 * s.asinh()
            }
        })
    }

    /// Unit radial field `∂_r` at `x` for the distance from `o`, in
    /// coordinate components (`|∂_r|_g = 1`).
    pub fn radial_direction(&self, o: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(o)?;
        self.check_point(x)?;
        let chord = euclidean_distance(x, o);
        if chord == 0.0 {
            return Err(Error::OriginInsideDomain(o.to_vec()));
        }
        match *self {
            MetricModel::Euclidean(_) => {
                Ok(x.iter().zip(o).map(|(a, b)| (a - b) / chord).collect())
            }
            MetricModel::HyperbolicHalfPlane(n) => {
                let last = n - 1;
                let root = (x[last] * o[last]).sqrt();
                let s = chord / (2.0 * root);
                let ds_scale = 2.0 / (1.0 + s * s).sqrt();
                let gamma = x[last] * x[last];
                Ok((0..n)
                    .map(|i| {
                        let mut ds = (x[i] - o[i]) / (chord * 2.0 * root);
                        if i == last {
                            ds -= s / (2.0 * x[last]);
                        }
                        gamma * ds_scale * ds
                    })
                    .collect())
            }
        }
    }
}

pub(crate) fn euclidean_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Point `o` outside the closed domain from which `r(x) = dist(o, x)` is taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginPoint(pub Vec<f64>);

/// Uniform Cartesian grid over a box, with a per-cell inside mask.
///
/// Nodes and cells are numbered lexicographically with axis 0 fastest. A node
/// is a free degree of freedom when every one of its `2ⁿ` incident cells
/// exists and is masked in; all other nodes carry the Dirichlet value 0.
#[derive(Debug, Clone)]
pub struct GridDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    cells: Vec<usize>,
    mask: Vec<bool>,
    metric: MetricModel,
    node_dof: Vec<Option<usize>>,
    dof_node: Vec<usize>,
}

pub fn make_box_domain<F>(
    bounds: &[(f64, f64)],
    resolution: &[usize],
    metric: MetricModel,
    mask_rule: F,
) -> Result<GridDomain>
where
    F: Fn(&[f64]) -> bool,
{
    let n = metric.dim();
    if bounds.len() != n || resolution.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if bounds.len() != n { bounds.len() } else { resolution.len() },
        });
    }
    for (axis, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidBounds(format!("axis {axis}: [{lo}, {hi}]")));
        }
        if resolution[axis] < 2 {
            return Err(Error::InvalidBounds(format!(
                "axis {axis}: resolution {} < 2",
                resolution[axis]
            )));
        }
    }
    if metric.is_hyperbolic() && !(bounds[n - 1].0 > 0.0) {
        return Err(Error::InvalidHalfPlane(bounds[n - 1].0));
    }

    let mut domain = GridDomain {
        lower: bounds.iter().map(|b| b.0).collect(),
        upper: bounds.iter().map(|b| b.1).collect(),
        cells: resolution.to_vec(),
        mask: Vec::new(),
        metric,
        node_dof: Vec::new(),
        dof_node: Vec::new(),
    };
    let mut center = vec![0.0; n];
    domain.mask = (0..domain.cell_count())
        .map(|c| {
            domain.cell_center_into(c, &mut center);
            mask_rule(&center)
        })
        .collect();
    domain.classify_nodes();
    if domain.dof_node.is_empty() {
        return Err(Error::EmptyDomain);
    }
    Ok(domain)
}

impl GridDomain {
    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn metric(&self) -> MetricModel {
        self.metric
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.lower.iter().copied().zip(self.upper.iter().copied()).collect()
    }

    pub fn resolution(&self) -> &[usize] {
        &self.cells
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.cells[axis] as f64
    }

    pub fn cell_count(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn node_count(&self) -> usize {
        self.cells.iter().map(|c| c + 1).product()
    }

    pub fn dof_count(&self) -> usize {
        self.dof_node.len()
    }

    pub fn dof_of_node(&self, node: usize) -> Option<usize> {
        self.node_dof[node]
    }

    pub fn node_of_dof(&self, dof: usize) -> usize {
        self.dof_node[dof]
    }

    pub fn is_cell_inside(&self, cell: usize) -> bool {
        self.mask[cell]
    }

    pub fn inside_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.cell_count()).filter(move |&c| self.mask[c])
    }

    pub fn box_diagonal(&self) -> f64 {
        euclidean_distance(&self.lower, &self.upper)
    }

    /// Lower-corner multi-index of a cell.
    pub fn cell_multi_index(&self, cell: usize) -> Vec<usize> {
        let mut rest = cell;
        self.cells
            .iter()
            .map(|&c| {
                let i = rest % c;
                rest /= c;
                i
            })
            .collect()
    }

    pub fn node_multi_index(&self, node: usize) -> Vec<usize> {
        let mut rest = node;
        self.cells
            .iter()
            .map(|&c| {
                let i = rest % (c + 1);
                rest /= c + 1;
                i
            })
            .collect()
    }

    pub fn node_coordinates(&self, node: usize) -> Vec<f64> {
        self.node_multi_index(node)
            .iter()
            .enumerate()
            .map(|(axis, &i)| self.lower[axis] + i as f64 * self.spacing(axis))
            .collect()
    }

    pub fn dof_coordinates(&self, dof: usize) -> Vec<f64> {
        self.node_coordinates(self.dof_node[dof])
    }

    fn cell_center_into(&self, cell: usize, out: &mut [f64]) {
        let mut rest = cell;
        for axis in 0..self.dim() {
            let i = rest % self.cells[axis];
            rest /= self.cells[axis];
            out[axis] = self.lower[axis] + (i as f64 + 0.5) * self.spacing(axis);
        }
    }

    /// Global node indices of the `2ⁿ` corners of a cell. Corner `b` has bit
    /// `a` set when it sits on the upper face along axis `a`.
    pub fn cell_nodes(&self, cell: usize) -> Vec<usize> {
        let corner = self.cell_multi_index(cell);
        let n = self.dim();
        (0..1usize << n)
            .map(|b| {
                let mut node = 0;
                let mut stride = 1;
                for axis in 0..n {
                    node += (corner[axis] + ((b >> axis) & 1)) * stride;
                    stride *= self.cells[axis] + 1;
                }
                node
            })
            .collect()
    }

    fn classify_nodes(&mut self) {
        let n = self.dim();
        let node_count = self.node_count();
        self.node_dof = vec![None; node_count];
        self.dof_node.clear();
        for node in 0..node_count {
            let idx = self.node_multi_index(node);
            let interior = (0..1usize << n).all(|b| {
                let mut cell = 0;
                let mut stride = 1;
                for axis in 0..n {
                    let lower_side = (b >> axis) & 1 == 1;
                    let ci = if lower_side {
                        if idx[axis] == 0 {
                            return false;
                        }
                        idx[axis] - 1
                    } else {
                        if idx[axis] == self.cells[axis] {
                            return false;
                        }
                        idx[axis]
                    };
                    cell += ci * stride;
                    stride *= self.cells[axis];
                }
                self.mask[cell]
            });
            if interior {
                self.node_dof[node] = Some(self.dof_node.len());
                self.dof_node.push(node);
            }
        }
    }

    /// Lower and upper corners of a cell.
    pub fn cell_box(&self, cell: usize) -> (Vec<f64>, Vec<f64>) {
        let idx = self.cell_multi_index(cell);
        let lo: Vec<f64> = idx
            .iter()
            .enumerate()
            .map(|(a, &i)| self.lower[a] + i as f64 * self.spacing(a))
            .collect();
        let hi = lo.iter().enumerate().map(|(a, &l)| l + self.spacing(a)).collect();
        (lo, hi)
    }

    /// True when `p` lies in the closure of some masked-in cell.
    pub fn closure_contains(&self, p: &[f64]) -> bool {
        let tol = 1e-12 * self.box_diagonal();
        self.inside_cells().any(|c| {
            let (lo, hi) = self.cell_box(c);
            p.iter().zip(lo.iter().zip(&hi)).all(|(x, (l, h))| *x >= l - tol && *x <= h + tol)
        })
    }

    /// Largest cell width measured in the metric (coordinate width divided by
    /// the smallest `x_n` for the half-space).
    pub fn metric_spacing(&self) -> f64 {
        let h = (0..self.dim()).map(|a| self.spacing(a)).fold(0.0, f64::max);
        match self.metric {
            MetricModel::Euclidean(_) => h,
            MetricModel::HyperbolicHalfPlane(n) => h / self.lower[n - 1],
        }
    }

    /// Nodes that are corners of at least one masked-in cell.
    pub fn inside_cell_corner_nodes(&self) -> Vec<usize> {
        let mut touched = vec![false; self.node_count()];
        for c in self.inside_cells() {
            for node in self.cell_nodes(c) {
                touched[node] = true;
            }
        }
        touched.iter().enumerate().filter(|(_, &t)| t).map(|(i, _)| i).collect()
    }
}

/// Two-point Gauss–Legendre rule on `[0, 1]`: nodes and weights.
pub const GAUSS2: [(f64, f64); 2] = [
    (0.211_324_865_405_187_1, 0.5),
    (0.788_675_134_594_812_9, 0.5),
];

impl GridDomain {
    /// Tensor-product 2-point Gauss points of every masked-in cell, in cell
    /// order. These are the sample points for all suprema over Ω.
    pub fn gauss_points(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut out = Vec::with_capacity(self.cell_count() << n);
        for c in self.inside_cells() {
            let (lo, _) = self.cell_box(c);
            for q in 0..1usize << n {
                out.push(
                    (0..n)
                        .map(|a| lo[a] + GAUSS2[(q >> a) & 1].0 * self.spacing(a))
                        .collect(),
                );
            }
        }
        out
    }
}

/// Grid approximation of `dist(Ω, o)`: the minimum distance from `o` to the
/// corner nodes of masked-in cells. This over-estimates the true distance by
/// at most one cell diameter.
pub fn domain_origin_distance(domain: &GridDomain, o: &OriginPoint) -> Result<f64> {
    domain.metric.check_point(&o.0)?;
    if domain.closure_contains(&o.0) {
        return Err(Error::OriginInsideDomain(o.0.clone()));
    }
    let mut best = f64::INFINITY;
    for node in domain.inside_cell_corner_nodes() {
        let x = domain.node_coordinates(node);
        best = best.min(domain.metric.geodesic_distance(&o.0, &x)?);
    }
    Ok(best)
}
