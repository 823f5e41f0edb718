//! Fixed Gaussian landmark features.
//!
//! Each input is mapped to `exp(-|x - c_m|^2 / (2 sigma^2))` for landmarks
//! `c_m` laid on a regular grid over the data. Inner products between encoded
//! points then decay with Euclidean distance, which is what cosine kNN needs
//! on low-dimensional data such as the two-moons toy set.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Upper bound on the number of grid landmarks.
pub const MAX_LANDMARKS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkConfig {
    pub bandwidth: f64,
    pub step: f64,
    /// Extra space around the data bounding box, in units of `bandwidth`.
    pub margin: f64,
}

impl Default for LandmarkConfig {
    fn default() -> Self {
        Self {
            bandwidth: 0.2,
            step: 0.15,
            margin: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkEncoding {
    centers: Array2<f64>,
    bandwidth: f64,
}

impl LandmarkEncoding {
    pub fn new(centers: Array2<f64>, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!("bandwidth must be > 0, got {bandwidth}")));
        }
        if centers.nrows() == 0 || centers.ncols() == 0 {
            return Err(Error::InvalidParameter("landmark set is empty".into()));
        }
        Ok(Self { centers, bandwidth })
    }

    /// Lays a grid over the bounding box of `inputs`.
    pub fn covering(inputs: ArrayView2<'_, f64>, config: &LandmarkConfig) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if !(config.step > 0.0 && config.step.is_finite()) {
            return Err(Error::InvalidParameter(format!("grid step must be > 0, got {}", config.step)));
        }
        if !(config.margin >= 0.0 && config.margin.is_finite()) {
            return Err(Error::InvalidParameter(format!("margin must be >= 0, got {}", config.margin)));
        }
        let pad = config.margin * config.bandwidth;
        let axes: Vec<Vec<f64>> = inputs
            .axis_iter(Axis(1))
            .map(|col| {
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min) - pad;
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max) + pad;
                let count = ((hi - lo) / config.step).floor() as usize + 1;
                (0..count).map(|k| lo + k as f64 * config.step).collect()
            })
            .collect();
        let total = axes
            .iter()
            .try_fold(1usize, |acc, a| acc.checked_mul(a.len()))
            .filter(|&t| t <= MAX_LANDMARKS)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "landmark grid exceeds {MAX_LANDMARKS} points; increase the step"
                ))
            })?;

        let dims = axes.len();
        let mut centers = Array2::zeros((total, dims));
        for (m, mut row) in centers.axis_iter_mut(Axis(0)).enumerate() {
            // mixed-radix decode, last axis fastest
            let mut rest = m;
            for d in (0..dims).rev() {
                row[d] = axes[d][rest % axes[d].len()];
                rest /= axes[d].len();
            }
        }
        Self::new(centers, config.bandwidth)
    }

    pub fn input_dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.centers.nrows()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn centers(&self) -> ArrayView2<'_, f64> {
        self.centers.view()
    }

    pub fn encode(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: inputs.ncols(),
            });
        }
        let scale = -0.5 / (self.bandwidth * self.bandwidth);
        let mut out = Array2::zeros((inputs.nrows(), self.output_dim()));
        for (x, mut row) in inputs.rows().into_iter().zip(out.rows_mut()) {
            for (c, o) in self.centers.rows().into_iter().zip(row.iter_mut()) {
                let d2: f64 = x.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                *o = (scale * d2).exp();
            }
        }
        Ok(out)
    }
}

/// Landmark features of `inputs` on a grid covering them, rows l2-normalized.
pub fn lifted_descriptors(inputs: ArrayView2<'_, f64>, config: &LandmarkConfig) -> Result<Array2<f64>> {
    let mut out = LandmarkEncoding::covering(inputs, config)?.encode(inputs)?;
    crate::dataset::l2_normalize_rows_in_place(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn grid_covers_bounding_box() {
        let x = array![[0.0, 0.0], [1.0, 0.5]];
        let cfg = LandmarkConfig {
            bandwidth: 0.5,
            step: 0.5,
            margin: 0.0,
        };
        let enc = LandmarkEncoding::covering(x.view(), &cfg).unwrap();
        assert_eq!(enc.output_dim(), 3 * 2);
        assert_eq!(enc.centers().row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(enc.centers().row(1).to_vec(), vec![0.0, 0.5]);
        assert_eq!(enc.centers().row(5).to_vec(), vec![1.0, 0.5]);
    }

    #[test]
    fn features_peak_at_landmarks() {
        let enc = LandmarkEncoding::new(array![[0.0, 0.0], [1.0, 0.0]], 1.0).unwrap();
        let f = enc.encode(array![[0.0, 0.0]].view()).unwrap();
        assert_eq!(f[[0, 0]], 1.0);
        assert!((f[[0, 1]] - (-0.5f64).exp()).abs() < 1e-15);
        assert!(enc.encode(array![[0.0]].view()).is_err());
    }

    #[test]
    fn oversized_grid_rejected() {
        let x = array![[0.0, 0.0], [100.0, 100.0]];
        let cfg = LandmarkConfig {
            bandwidth: 0.1,
            step: 0.1,
            margin: 0.0,
        };
        assert!(LandmarkEncoding::covering(x.view(), &cfg).is_err());
    }
}
