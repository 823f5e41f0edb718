//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

/// `n` random unit rows in `d` dimensions drawn around `clusters` centers.
pub fn clustered_unit_rows(n: usize, d: usize, clusters: usize, rng: &mut impl Rng) -> Array2<f64> {
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        let c = &centers[i % clusters];
        let mut norm = 0.0;
        for k in 0..d {
            let v = c[k] + 0.4 * rng.sample::<f64, _>(StandardNormal);
            out[[i, k]] = v;
            norm += v * v;
        }
        let norm = norm.sqrt();
        for k in 0..d {
            out[[i, k]] /= norm;
        }
    }
    out
}

pub fn naive_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// Neighbors of every point by sorting all other points: similarity
/// descending, then index ascending.
pub fn knn_full_sort(x: ArrayView2<'_, f64>, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    (0..n)
        .map(|j| {
            let mut all: Vec<(usize, f64)> = (0..n)
                .filter(|&i| i != j)
                .map(|i| (i, naive_dot(&rows[i], &rows[j])))
                .collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            all.truncate(k);
            all
        })
        .collect()
}

/// Dense `W = A + A^T` with `A[i][j] = max(s, 0)^gamma` for neighbor `i` of `j`.
pub fn dense_adjacency(x: ArrayView2<'_, f64>, k: usize, gamma: f64) -> Array2<f64> {
    let n = x.nrows();
    let mut a = Array2::<f64>::zeros((n, n));
    for (j, nb) in knn_full_sort(x, k).into_iter().enumerate() {
        for (i, s) in nb {
            a[[i, j]] = s.max(0.0).powf(gamma);
        }
    }
    &a + &a.t()
}

/// `D^-1/2 W D^-1/2`, zero-degree rows left at zero.
pub fn dense_normalized(w: &Array2<f64>) -> Array2<f64> {
    let n = w.nrows();
    let d: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if d[i] > 0.0 && d[j] > 0.0 {
            w[[i, j]] / (d[i].sqrt() * d[j].sqrt())
        } else {
            0.0
        }
    })
}

fn to_na(m: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

/// `(I - alpha Wn)^-1 Y` by LU with partial pivoting.
pub fn lu_solve(wn: &Array2<f64>, y: &Array2<f64>, alpha: f64) -> Array2<f64> {
    let n = wn.nrows();
    let system = DMatrix::identity(n, n) - to_na(wn.view()) * alpha;
    let z = system.lu().solve(&to_na(y.view())).expect("nonsingular system");
    Array2::from_shape_fn(y.dim(), |(i, j)| z[(i, j)])
}

pub fn symmetric_eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    to_na(m.view()).symmetric_eigen().eigenvalues.iter().copied().collect()
}

/// Gradient of `alpha/2 sum_ij w_ij |z_i/sqrt(d_i) - z_j/sqrt(d_j)|^2 +
/// (1 - alpha) |Y - Z|^2` with respect to `Z`, summed pair by pair.
pub fn quadratic_cost_gradient(w: &Array2<f64>, y: &Array2<f64>, z: &Array2<f64>, alpha: f64) -> Array2<f64> {
    let (n, c) = z.dim();
    let d: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    let s = |i: usize| if d[i] > 0.0 { 1.0 / d[i].sqrt() } else { 0.0 };
    let mut g = Array2::zeros((n, c));
    for i in 0..n {
        for j in 0..n {
            let wij = w[[i, j]];
            if wij == 0.0 {
                continue;
            }
            for col in 0..c {
                // the (i, j) and (j, i) terms contribute equally
                g[[i, col]] += 2.0 * alpha * wij * (z[[i, col]] * s(i) - z[[j, col]] * s(j)) * s(i);
            }
        }
        for col in 0..c {
            g[[i, col]] -= 2.0 * (1.0 - alpha) * (y[[i, col]] - z[[i, col]]);
        }
    }
    g
}

/// One-hot rows for `labeled`, zeros elsewhere.
pub fn one_hot(n: usize, c: usize, labeled: &[(usize, usize)]) -> Array2<f64> {
    let mut y = Array2::zeros((n, c));
    for &(i, k) in labeled {
        y[[i, k]] = 1.0;
    }
    y
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_k |a_k - b_k| / max(|a|_inf, |b|_inf, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = a
        .iter()
        .chain(b)
        .map(|v| v.abs())
        .fold(floor, f64::max);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}
