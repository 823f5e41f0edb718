//! Label diffusion: solve `(I - alpha * Wn) Z = Y` and turn the scores into
//! pseudo-labels with per-example certainty and per-class balancing weights.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_label_matrix, Dataset, LabelMatrix};
use crate::graph::{build_graph, GraphConfig, SparseMatrix};
use crate::{Error, Result};

/// Largest `n` accepted by [`diffuse_dense_oracle`].
pub const DENSE_ORACLE_CAP: usize = 2000;

/// Row sums at or below this are treated as empty by [`row_normalize`].
pub const DEGENERATE_ROW_SUM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub alpha: f64,
    pub max_cg_iters: usize,
    pub cg_tolerance: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            max_cg_iters: 20,
            cg_tolerance: 1e-6,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must satisfy 0 <= alpha < 1, got {}",
                self.alpha
            )));
        }
        if self.max_cg_iters == 0 {
            return Err(Error::InvalidParameter("max_cg_iters must be >= 1".into()));
        }
        if !(self.cg_tolerance > 0.0 && self.cg_tolerance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "cg_tolerance must be > 0, got {}",
                self.cg_tolerance
            )));
        }
        Ok(())
    }
}

/// Convergence record of one CG solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgColumn {
    pub iterations: usize,
    /// `||b - A x|| / ||b||` after every iteration, starting with the initial
    /// guess (always 1 unless `b = 0`).
    pub residual_history: Vec<f64>,
}

impl CgColumn {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&0.0)
    }
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub z: Array2<f64>,
    pub columns: Vec<CgColumn>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Plain conjugate gradient on `(I - alpha * wn) x = b` from `x = 0`.
fn cg_column(
    wn: &SparseMatrix,
    b: &[f64],
    config: &DiffusionConfig,
    column: usize,
) -> Result<(Vec<f64>, CgColumn)> {
    let n = b.len();
    let apply = |p: &[f64], out: &mut [f64]| {
        wn.mul_vec_into(p, out);
        for (o, &pi) in out.iter_mut().zip(p) {
            *o = pi - config.alpha * *o;
        }
    };

    let mut x = vec![0.0; n];
    let b_norm = dot(b, b).sqrt();
    if !b_norm.is_finite() {
        return Err(Error::NonFinite { column });
    }
    if b_norm == 0.0 {
        return Ok((
            x,
            CgColumn {
                iterations: 0,
                residual_history: vec![0.0],
            },
        ));
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rs = dot(&r, &r);
    let mut history = vec![1.0];
    let mut iterations = 0;
    while iterations < config.max_cg_iters {
        apply(&p, &mut ap);
        let p_ap = dot(&p, &ap);
        if !p_ap.is_finite() {
            return Err(Error::NonFinite { column });
        }
        if p_ap <= 0.0 {
            break;
        }
        let step = rs / p_ap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rs_next = dot(&r, &r);
        if !rs_next.is_finite() {
            return Err(Error::NonFinite { column });
        }
        iterations += 1;
        let rel = rs_next.sqrt() / b_norm;
        history.push(rel);
        if rel <= config.cg_tolerance {
            break;
        }
        let beta = rs_next / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_next;
    }
    Ok((
        x,
        CgColumn {
            iterations,
            residual_history: history,
        },
    ))
}

/// Solves `(I - alpha * wn) Z = Y` column by column with conjugate gradient.
///
/// `wn` must be the symmetrically normalized adjacency; each column starts
/// from zero and stops at `cg_tolerance` relative residual or after
/// `max_cg_iters` iterations.
pub fn diffuse_cg(wn: &SparseMatrix, labels: &LabelMatrix, config: &DiffusionConfig) -> Result<CgSolution> {
    config.validate()?;
    let y = labels.as_array();
    if wn.n_rows() != y.nrows() || wn.n_cols() != y.nrows() {
        return Err(Error::DimensionMismatch {
            expected: y.nrows(),
            actual: wn.n_rows(),
        });
    }
    let solved: Vec<(Vec<f64>, CgColumn)> = (0..y.ncols())
        .into_par_iter()
        .map(|c| cg_column(wn, &y.column(c).to_vec(), config, c))
        .collect::<Result<_>>()?;

    let mut z = Array2::zeros(y.raw_dim());
    let mut columns = Vec::with_capacity(solved.len());
    for (c, (x, report)) in solved.into_iter().enumerate() {
        z.column_mut(c).assign(&ndarray::Array1::from(x));
        columns.push(report);
    }
    Ok(CgSolution { z, columns })
}

/// Exact `Z = (I - alpha * wn)^-1 Y` by dense Cholesky factorization.
///
/// Meant as a reference for testing; refuses `n` above [`DENSE_ORACLE_CAP`].
pub fn diffuse_dense_oracle(
    wn: ArrayView2<'_, f64>,
    labels: ArrayView2<'_, f64>,
    alpha: f64,
) -> Result<Array2<f64>> {
    let n = wn.nrows();
    if n > DENSE_ORACLE_CAP {
        return Err(Error::TooLarge {
            n,
            cap: DENSE_ORACLE_CAP,
        });
    }
    if wn.ncols() != n || labels.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: labels.nrows(),
        });
    }
    let system = DMatrix::from_fn(n, n, |i, j| {
        let identity = if i == j { 1.0 } else { 0.0 };
        identity - alpha * wn[[i, j]]
    });
    let rhs = DMatrix::from_fn(n, labels.ncols(), |i, j| labels[[i, j]]);
    let chol = system.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let z = chol.solve(&rhs);
    Ok(Array2::from_shape_fn(labels.dim(), |(i, j)| z[(i, j)]))
}

/// Row-normalized scores and which rows had no mass.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedScores {
    pub z_hat: Array2<f64>,
    pub degenerate: Vec<bool>,
}

/// Clips negatives to zero, then divides each row by its sum.
///
/// Rows whose sum is at most [`DEGENERATE_ROW_SUM`] become uniform.
pub fn row_normalize(z: ArrayView2<'_, f64>) -> NormalizedScores {
    let c = z.ncols();
    let mut z_hat = z.mapv(|v| v.max(0.0));
    let mut degenerate = Vec::with_capacity(z.nrows());
    for mut row in z_hat.axis_iter_mut(Axis(0)) {
        let sum: f64 = row.sum();
        if sum > DEGENERATE_ROW_SUM {
            row.mapv_inplace(|v| v / sum);
            degenerate.push(false);
        } else {
            row.fill(1.0 / c as f64);
            degenerate.push(true);
        }
    }
    NormalizedScores { z_hat, degenerate }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (j, v) in row.into_iter().enumerate() {
        if v > best_val {
            best = j;
            best_val = v;
        }
    }
    best
}

/// Row-wise argmax over the unlabeled rows, in the order of `unlabeled`.
pub fn assign_pseudo_labels(z_hat: ArrayView2<'_, f64>, unlabeled: &[usize]) -> Vec<usize> {
    unlabeled
        .iter()
        .map(|&i| argmax(z_hat.row(i).iter().copied()))
        .collect()
}

/// Shannon entropy in nats with `0 log 0 = 0`.
pub fn entropy(distribution: impl IntoIterator<Item = f64>) -> f64 {
    -distribution
        .into_iter()
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// `1 - H(p) / ln c`, clamped to `[0, 1]`.
pub fn raw_certainty(distribution: impl IntoIterator<Item = f64>, num_classes: usize) -> f64 {
    let h = entropy(distribution);
    (1.0 - h / (num_classes as f64).ln()).clamp(0.0, 1.0)
}

/// Entropy-based certainty of every unlabeled row, rescaled so the largest
/// weight is 1 (all-zero weights stay zero).
pub fn certainty_weights(z_hat: ArrayView2<'_, f64>, unlabeled: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    if num_classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "certainty weights need at least 2 classes, got {num_classes}"
        )));
    }
    let mut omega: Vec<f64> = unlabeled
        .iter()
        .map(|&i| raw_certainty(z_hat.row(i).iter().copied(), num_classes))
        .collect();
    rescale_to_unit_max(&mut omega);
    Ok(omega)
}

pub fn rescale_to_unit_max(weights: &mut [f64]) {
    let max = weights.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        for w in weights.iter_mut() {
            *w /= max;
        }
    }
}

/// Examples per class counting both given labels and pseudo-labels.
pub fn class_populations(labels: &[usize], pseudo_labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut pops = vec![0; num_classes];
    for &c in labels.iter().chain(pseudo_labels) {
        pops[c] += 1;
    }
    pops
}

/// Inverse class populations, rescaled so their mean over non-empty classes
/// is 1. Empty classes get weight 0.
pub fn class_weights(labels: &[usize], pseudo_labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    weights_from_populations(&class_populations(labels, pseudo_labels, num_classes))
}

pub fn weights_from_populations(populations: &[usize]) -> Result<Vec<f64>> {
    let raw: Vec<f64> = populations
        .iter()
        .map(|&p| if p > 0 { 1.0 / p as f64 } else { 0.0 })
        .collect();
    let present = populations.iter().filter(|&&p| p > 0).count();
    if present == 0 {
        return Err(Error::AllClassesEmpty);
    }
    let mean = raw.iter().sum::<f64>() / present as f64;
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

/// Everything one round of label propagation produces.
#[derive(Debug, Clone)]
pub struct DiffusionOutput {
    pub z: Array2<f64>,
    pub z_hat: Array2<f64>,
    pub degenerate: Vec<bool>,
    /// Unlabeled indices, ascending; `pseudo_labels` and `omega` align with it.
    pub unlabeled: Vec<usize>,
    pub pseudo_labels: Vec<usize>,
    pub omega: Vec<f64>,
    pub zeta: Vec<f64>,
    pub populations: Vec<usize>,
    pub cg: Vec<CgColumn>,
}

impl DiffusionOutput {
    pub fn cg_residuals(&self) -> Vec<f64> {
        self.cg.iter().map(CgColumn::final_residual).collect()
    }

    /// Fraction of pseudo-labels that agree with `truth` (indexed by example).
    /// Returns `None` when there are no unlabeled examples.
    pub fn accuracy(&self, truth: &[usize]) -> Option<f64> {
        if self.unlabeled.is_empty() {
            return None;
        }
        let hits = self
            .unlabeled
            .iter()
            .zip(&self.pseudo_labels)
            .filter(|(&i, &c)| truth[i] == c)
            .count();
        Some(hits as f64 / self.unlabeled.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexedLabel {
    pub index: usize,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationSettings {
    pub graph: GraphConfig,
    pub diffusion: DiffusionConfig,
}

/// Serializable summary of one propagation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationRecord {
    /// Pseudo-labels of the unlabeled examples, ascending by index.
    pub pseudo_labels: Vec<IndexedLabel>,
    /// Certainty weight per entry of `pseudo_labels`.
    pub omega: Vec<f64>,
    pub zeta: Vec<f64>,
    pub cg_residuals: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labeled: Vec<IndexedLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub config: PropagationSettings,
}

impl PropagationRecord {
    pub fn new(
        unlabeled: &[usize],
        pseudo_labels: &[usize],
        omega: &[f64],
        zeta: &[f64],
        cg_residuals: &[f64],
        graph: &GraphConfig,
        diffusion: &DiffusionConfig,
    ) -> Self {
        Self {
            pseudo_labels: unlabeled
                .iter()
                .zip(pseudo_labels)
                .map(|(&index, &class)| IndexedLabel { index, class })
                .collect(),
            omega: omega.to_vec(),
            zeta: zeta.to_vec(),
            cg_residuals: cg_residuals.to_vec(),
            labeled: Vec::new(),
            accuracy: None,
            config: PropagationSettings {
                graph: graph.clone(),
                diffusion: diffusion.clone(),
            },
        }
    }

    pub fn from_output(output: &DiffusionOutput, graph: &GraphConfig, diffusion: &DiffusionConfig) -> Self {
        Self::new(
            &output.unlabeled,
            &output.pseudo_labels,
            &output.omega,
            &output.zeta,
            &output.cg_residuals(),
            graph,
            diffusion,
        )
    }

    pub fn with_labeled(mut self, pairs: Vec<(usize, usize)>) -> Self {
        self.labeled = pairs
            .into_iter()
            .map(|(index, class)| IndexedLabel { index, class })
            .collect();
        self
    }

    pub fn with_accuracy(mut self, accuracy: Option<f64>) -> Self {
        self.accuracy = accuracy;
        self
    }

    /// Class of every example: labeled entries first, then pseudo-labels.
    /// Returns `None` if some index in `0..n` has neither.
    pub fn all_classes(&self, n: usize) -> Option<Vec<usize>> {
        let mut out = vec![None; n];
        for e in self.labeled.iter().chain(&self.pseudo_labels) {
            *out.get_mut(e.index)? = Some(e.class);
        }
        out.into_iter().collect()
    }
}

/// Graph construction, diffusion and weighting on the dataset's descriptors.
pub fn propagate(
    dataset: &Dataset,
    graph_config: &GraphConfig,
    config: &DiffusionConfig,
) -> Result<DiffusionOutput> {
    config.validate()?;
    let c = dataset.num_classes();
    if c < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 classes, got {c}")));
    }
    let graph = build_graph(dataset.descriptors(), graph_config)?;
    let y = build_label_matrix(dataset);
    let solution = diffuse_cg(&graph.normalized, &y, config)?;
    let NormalizedScores { z_hat, degenerate } = row_normalize(solution.z.view());
    let unlabeled = dataset.unlabeled_indices();
    let pseudo_labels = assign_pseudo_labels(z_hat.view(), &unlabeled);
    let omega = certainty_weights(z_hat.view(), &unlabeled, c)?;
    let populations = class_populations(dataset.labels(), &pseudo_labels, c);
    let zeta = weights_from_populations(&populations)?;
    Ok(DiffusionOutput {
        z: solution.z,
        z_hat,
        degenerate,
        unlabeled,
        pseudo_labels,
        omega,
        zeta,
        populations,
        cg: solution.columns,
    })
}

/// The quadratic smoothness-plus-fit cost
/// `alpha/2 * sum_ij w_ij |z_i/sqrt(d_i) - z_j/sqrt(d_j)|^2 + (1 - alpha) |Y - Z|_F^2`
/// evaluated from the unnormalized adjacency `w`.
pub fn quadratic_cost(w: &SparseMatrix, y: ArrayView2<'_, f64>, z: ArrayView2<'_, f64>, alpha: f64) -> f64 {
    let degrees = w.row_sums();
    let scaled = |i: usize| {
        let s = if degrees[i] > 0.0 { degrees[i].sqrt().recip() } else { 0.0 };
        z.row(i).mapv(|v| v * s)
    };
    let mut smooth = 0.0;
    for i in 0..w.n_rows() {
        let zi = scaled(i);
        let (cols, vals) = w.row(i);
        for (&j, &wij) in cols.iter().zip(vals) {
            let diff = &zi - &scaled(j);
            smooth += wij * diff.dot(&diff);
        }
    }
    let fit: f64 = (&y - &z).iter().map(|v| v * v).sum();
    0.5 * alpha * smooth + (1.0 - alpha) * fit
}
