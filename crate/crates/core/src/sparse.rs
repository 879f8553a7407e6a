//! Compressed sparse row storage and an envelope (skyline) Cholesky factor.
//!
//! Grid numberings give every row a short profile, so the envelope factor
//! stays within `O(n · bandwidth)` storage without any fill-reducing ordering.

use std::io::Write;

use crate::{Error, Result};

/// Square sparse matrix in CSR form with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed in the
    /// order they appear, so the result only depends on the triplet order.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        // stable: equal (row, col) keep insertion order
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: x.len() });
        }
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        Ok(y)
    }

    pub(crate) fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// `xᵀ M y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.n).map(|i| x[i] * self.row(i).map(|(j, v)| v * y[j]).sum::<f64>()).sum()
    }

    /// Largest `|M_ij − M_ji|`.
    pub fn asymmetry(&self) -> f64 {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> CsrMatrix {
        CsrMatrix { values: self.values.iter().map(|v| v * factor).collect(), ..self.clone() }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Writes `row col value` lines (0-based indices, full storage).
    pub fn write_coordinate<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "row,col,value")?;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                writeln!(out, "{i},{j},{v:.17e}")?;
            }
        }
        Ok(())
    }
}

/// Lower Cholesky factor stored row-wise over each row's envelope.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    pub fn factor(m: &CsrMatrix) -> Result<Self> {
        let n = m.dim();
        let first: Vec<usize> =
            (0..n).map(|i| m.row(i).map(|(j, _)| j).next().unwrap_or(i).min(i)).collect();
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + i - first[i] + 1);
        }
        let mut data = vec![0.0; offset[n]];
        for i in 0..n {
            for (j, v) in m.row(i) {
                if j <= i {
                    data[offset[i] + j - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let (done, rest) = data.split_at_mut(offset[i]);
            let row_i = &mut rest[..i - first[i] + 1];
            for j in first[i]..i {
                let start = first[i].max(first[j]);
                let row_j = &done[offset[j]..offset[j + 1]];
                let mut s = row_i[j - first[i]];
                for k in start..j {
                    s -= row_i[k - first[i]] * row_j[k - first[j]];
                }
                row_i[j - first[i]] = s / row_j[j - first[j]];
            }
            let mut d = row_i[i - first[i]];
            for k in first[i]..i {
                d -= row_i[k - first[i]] * row_i[k - first[i]];
            }
            if !(d > 0.0) {
                return Err(Error::FactorizationFailed(format!(
                    "pivot {i} is {d:e}"
                )));
            }
            row_i[i - first[i]] = d.sqrt();
        }
        Ok(SkylineCholesky { first, offset, data })
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    /// Solves `L Lᵀ x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            let f = self.first[i];
            let mut s = x[i];
            for k in f..i {
                s -= row[k - f] * x[k];
            }
            x[i] = s / row[i - f];
        }
        for i in (0..n).rev() {
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            let f = self.first[i];
            x[i] /= row[i - f];
            let xi = x[i];
            for k in f..i {
                x[k] -= row[k - f] * xi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, t)
    }

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (1, 0, 2.0), (0, 0, 0.5)]);
        assert_eq!(m.get(0, 0), 1.5);
        assert_eq!(m.get(1, 0), 2.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn cholesky_solves_tridiagonal() {
        let m = laplacian_1d(50);
        let chol = SkylineCholesky::factor(&m).unwrap();
        let x_true: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = m.mul_vec(&x_true).unwrap();
        chol.solve_in_place(&mut b);
        for (a, e) in b.iter().zip(&x_true) {
            assert!((a - e).abs() < 1e-11);
        }
    }

    #[test]
    fn cholesky_matches_dense_on_2d_stencil() {
        let (nx, ny) = (6, 5);
        let n = nx * ny;
        let mut t = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let r = i + nx * j;
                t.push((r, r, 4.5));
                if i + 1 < nx {
                    t.push((r, r + 1, -1.0));
                    t.push((r + 1, r, -1.0));
                }
                if j + 1 < ny {
                    t.push((r, r + nx, -1.0));
                    t.push((r + nx, r, -1.0));
                }
                if i + 1 < nx && j + 1 < ny {
                    t.push((r, r + nx + 1, -0.25));
                    t.push((r + nx + 1, r, -0.25));
                }
            }
        }
        let m = CsrMatrix::from_triplets(n, t);
        let chol = SkylineCholesky::factor(&m).unwrap();
        let b: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let mut x = b.clone();
        chol.solve_in_place(&mut x);
        let dense = m.to_dense().cholesky().unwrap();
        let xd = dense.solve(&nalgebra::DVector::from_vec(b));
        for i in 0..n {
            assert!((x[i] - xd[i]).abs() < 1e-12 * (1.0 + xd[i].abs()));
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let m = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(matches!(SkylineCholesky::factor(&m), Err(Error::FactorizationFailed(_))));
    }

    #[test]
    fn dimension_checked() {
        let m = laplacian_1d(3);
        assert!(matches!(m.mul_vec(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }
}
