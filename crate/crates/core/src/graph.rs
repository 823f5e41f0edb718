//! k-nearest-neighbor affinity graph.
//!
//! The pipeline is `build_affinity -> symmetrize -> normalize`: a sparse
//! affinity `A` whose column `j` holds the neighbors of point `j`, the
//! symmetric adjacency `W = A + A^T`, and `D^-1/2 W D^-1/2`.

use std::io::{self, Write};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Compressed sparse row matrix with nonnegative values.
///
/// Column indices are strictly increasing within a row and no explicit zeros
/// are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_offsets: vec![0; n_rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Assembles a matrix from `(row, col, value)` triplets.
    ///
    /// Duplicates are summed in input order; entries that end up zero are
    /// dropped. Negative or non-finite values are rejected.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut counts = vec![0usize; n_rows + 1];
        for &(i, j, v) in triplets {
            if i >= n_rows || j >= n_cols {
                return Err(Error::InvalidParameter(format!(
                    "entry ({i}, {j}) outside a {n_rows}x{n_cols} matrix"
                )));
            }
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "entry ({i}, {j}) has invalid value {v}"
                )));
            }
            counts[i + 1] += 1;
        }
        for i in 0..n_rows {
            counts[i + 1] += counts[i];
        }
        // bucket by row, keeping input order within a row (stable)
        let mut next = counts.clone();
        let mut bucket = vec![(0usize, 0.0f64); triplets.len()];
        for &(i, j, v) in triplets {
            bucket[next[i]] = (j, v);
            next[i] += 1;
        }

        let mut row_offsets = Vec::with_capacity(n_rows + 1);
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_offsets.push(0);
        for i in 0..n_rows {
            let row = &mut bucket[counts[i]..counts[i + 1]];
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut sum = 0.0;
                while k < row.len() && row[k].0 == j {
                    sum += row[k].1;
                    k += 1;
                }
                if sum != 0.0 {
                    col_indices.push(j);
                    values.push(sum);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Keeps every entry above `threshold` in absolute value.
    pub fn from_dense(dense: ArrayView2<'_, f64>, threshold: f64) -> Result<Self> {
        let triplets: Vec<_> = dense
            .indexed_iter()
            .filter(|(_, &v)| v.abs() > threshold)
            .map(|((i, j), &v)| (i, j, v))
            .collect();
        Self::from_triplets(dense.nrows(), dense.ncols(), &triplets)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        (&self.col_indices[range.clone()], &self.values[range])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
    }

    /// Number of stored entries in every column.
    pub fn col_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_cols];
        for &j in &self.col_indices {
            counts[j] += 1;
        }
        counts
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &j in &self.col_indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // rows visited in order, so each output row comes out sorted
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                col_indices[next[j]] = i;
                values[next[j]] = v;
                next[j] += 1;
            }
        }
        Self {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_offsets: counts,
            col_indices,
            values,
        }
    }

    /// Elementwise sum of two matrices of the same shape.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows * self.n_cols,
                actual: other.n_rows * other.n_cols,
            });
        }
        let mut row_offsets = Vec::with_capacity(self.n_rows + 1);
        let mut col_indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        row_offsets.push(0);
        for i in 0..self.n_rows {
            let (ac, av) = self.row(i);
            let (bc, bv) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ac.len() || q < bc.len() {
                let (j, v) = match (ac.get(p), bc.get(q)) {
                    (Some(&ja), Some(&jb)) if ja == jb => {
                        p += 1;
                        q += 1;
                        (ja, av[p - 1] + bv[q - 1])
                    }
                    (Some(&ja), Some(&jb)) if ja < jb => {
                        p += 1;
                        (ja, av[p - 1])
                    }
                    (Some(_), Some(&jb)) => {
                        q += 1;
                        (jb, bv[q - 1])
                    }
                    (Some(&ja), None) => {
                        p += 1;
                        (ja, av[p - 1])
                    }
                    (None, Some(&jb)) => {
                        q += 1;
                        (jb, bv[q - 1])
                    }
                    (None, None) => unreachable!(),
                };
                if v != 0.0 {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Multiplies every stored value by `factor` (must be positive).
    pub fn scaled(&self, factor: f64) -> Self {
        assert!(factor > 0.0, "scale factor must be positive");
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// `out = self * x`.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(out.len(), self.n_rows);
        for (i, o) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *o = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// Largest `|m_ij - m_ji|` over all stored entries.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn diagonal_is_zero(&self) -> bool {
        (0..self.n_rows.min(self.n_cols)).all(|i| self.get(i, i) == 0.0)
    }

    /// Writes `i j value` lines sorted by `(i, j)`.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> io::Result<()> {
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                writeln!(out, "{i} {j} {v}")?;
            }
        }
        Ok(())
    }
}

/// What `normalize` does with nodes of zero degree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ZeroDegreePolicy {
    /// Treat `d^-1/2` as 0: the node's row and column stay empty.
    #[default]
    Isolate,
    /// Add a constant to every degree before taking the inverse square root.
    AddEpsilon(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub k: usize,
    pub gamma: f64,
    #[serde(default)]
    pub zero_degree: ZeroDegreePolicy,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k: 50,
            gamma: 3.0,
            zero_degree: ZeroDegreePolicy::Isolate,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 || self.k >= n {
            return Err(Error::InvalidParameter(format!(
                "k must satisfy 1 <= k < n, got k = {} with n = {n}",
                self.k
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if let ZeroDegreePolicy::AddEpsilon(eps) = self.zero_degree {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {eps}")));
            }
        }
        Ok(())
    }
}

/// Nearest neighbors of one point, most similar first.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbors {
    pub indices: Vec<usize>,
    pub similarities: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact k-nearest neighbors by inner product.
///
/// Rows of `descriptors` are expected to be unit-norm, which makes the inner
/// product the cosine similarity; this is not checked. Ties go to the lower
/// index.
pub fn knn_search(descriptors: ArrayView2<'_, f64>, k: usize) -> Result<Vec<Neighbors>> {
    let n = descriptors.nrows();
    if k == 0 || k >= n {
        return Err(Error::InvalidParameter(format!(
            "k must satisfy 1 <= k < n, got k = {k} with n = {n}"
        )));
    }
    let rows = descriptors.as_standard_layout();
    let d = rows.ncols();
    let flat = rows.as_slice().expect("standard layout");
    let row = |i: usize| &flat[i * d..(i + 1) * d];

    let result = (0..n)
        .into_par_iter()
        .map(|j| {
            let query = row(j);
            let mut scored: Vec<(f64, usize)> = (0..n)
                .filter(|&i| i != j)
                .map(|i| (dot(row(i), query), i))
                .collect();
            let by_rank =
                |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
            if k < scored.len() {
                scored.select_nth_unstable_by(k - 1, by_rank);
                scored.truncate(k);
            }
            scored.sort_unstable_by(by_rank);
            let (similarities, indices) = scored.into_iter().unzip();
            Neighbors {
                indices,
                similarities,
            }
        })
        .collect();
    Ok(result)
}

/// Affinity `a_ij = max(v_i . v_j, 0)^gamma` for every neighbor `i` of `j`.
///
/// Column `j` holds the neighbor set of point `j`; entries that evaluate to
/// zero are not stored.
pub fn build_affinity(descriptors: ArrayView2<'_, f64>, config: &GraphConfig) -> Result<SparseMatrix> {
    let n = descriptors.nrows();
    config.validate(n)?;
    let neighbors = knn_search(descriptors, config.k)?;
    let mut triplets = Vec::with_capacity(n * config.k);
    for (j, nb) in neighbors.iter().enumerate() {
        for (&i, &s) in nb.indices.iter().zip(&nb.similarities) {
            let a = s.max(0.0).powf(config.gamma);
            if a > 0.0 {
                triplets.push((i, j, a));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, &triplets)
}

/// `W = A + A^T`.
pub fn symmetrize(affinity: &SparseMatrix) -> Result<SparseMatrix> {
    if affinity.n_rows() != affinity.n_cols() {
        return Err(Error::InvalidParameter(format!(
            "affinity must be square, got {}x{}",
            affinity.n_rows(),
            affinity.n_cols()
        )));
    }
    if !affinity.diagonal_is_zero() {
        return Err(Error::InvalidParameter("affinity diagonal must be zero".into()));
    }
    affinity.add(&affinity.transpose())
}

/// Symmetric normalization `D^-1/2 W D^-1/2` with `D = diag(W 1)`.
///
/// Returns the normalized matrix and the degree vector.
pub fn normalize(adjacency: &SparseMatrix) -> (SparseMatrix, Vec<f64>) {
    normalize_with(adjacency, ZeroDegreePolicy::Isolate)
}

pub fn normalize_with(adjacency: &SparseMatrix, policy: ZeroDegreePolicy) -> (SparseMatrix, Vec<f64>) {
    let degrees = adjacency.row_sums();
    let inv_sqrt: Vec<f64> = degrees
        .iter()
        .map(|&d| match policy {
            ZeroDegreePolicy::Isolate if d > 0.0 => 1.0 / d.sqrt(),
            ZeroDegreePolicy::Isolate => 0.0,
            ZeroDegreePolicy::AddEpsilon(eps) => 1.0 / (d + eps).sqrt(),
        })
        .collect();
    let mut values = Vec::with_capacity(adjacency.nnz());
    for i in 0..adjacency.n_rows() {
        let (cols, vals) = adjacency.row(i);
        for (&j, &w) in cols.iter().zip(vals) {
            values.push(w * inv_sqrt[i] * inv_sqrt[j]);
        }
    }
    let normalized = SparseMatrix {
        values,
        ..adjacency.clone()
    };
    (normalized, degrees)
}

/// The three graph stages in one call.
#[derive(Debug, Clone)]
pub struct Graph {
    pub adjacency: SparseMatrix,
    pub normalized: SparseMatrix,
    pub degrees: Vec<f64>,
}

pub fn build_graph(descriptors: ArrayView2<'_, f64>, config: &GraphConfig) -> Result<Graph> {
    let affinity = build_affinity(descriptors, config)?;
    let adjacency = symmetrize(&affinity)?;
    let (normalized, degrees) = normalize_with(&adjacency, config.zero_degree);
    Ok(Graph {
        adjacency,
        normalized,
        degrees,
    })
}
