//! Data model: examples, labeled/unlabeled split, label matrix, and the
//! synthetic two-moons generator used for toy experiments.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Points with a known class for every example.
///
/// Produced by the synthetic generators or loaded from an embedding file plus
/// a ground-truth CSV. The classes are held out of band: they are consumed by
/// [`select_labels`] and by evaluation, never by propagation itself.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub inputs: Array2<f64>,
    pub classes: Vec<usize>,
    pub num_classes: usize,
}

impl GroundTruth {
    pub fn new(inputs: Array2<f64>, classes: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if classes.len() != inputs.nrows() {
            return Err(Error::DimensionMismatch {
                expected: inputs.nrows(),
                actual: classes.len(),
            });
        }
        if let Some(&bad) = classes.iter().find(|&&c| c >= num_classes) {
            return Err(Error::InvalidDataset(format!(
                "class id {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            classes,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Number of examples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &c in &self.classes {
            counts[c] += 1;
        }
        counts
    }
}

/// A semi-supervised dataset: every example has an input and a descriptor,
/// a subset `L` carries labels, and the rest form the unlabeled set `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Array2<f64>,
    descriptors: Array2<f64>,
    labeled: Vec<usize>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    /// Builds a dataset whose descriptors are the raw inputs.
    ///
    /// `labeled` pairs `(index, class)` may come in any order; they are stored
    /// sorted by index.
    pub fn new(inputs: Array2<f64>, labeled: &[(usize, usize)], num_classes: usize) -> Result<Self> {
        let descriptors = inputs.clone();
        Self::with_parts(inputs, descriptors, labeled, num_classes)
    }

    pub fn with_parts(
        inputs: Array2<f64>,
        descriptors: Array2<f64>,
        labeled: &[(usize, usize)],
        num_classes: usize,
    ) -> Result<Self> {
        let n = inputs.nrows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if descriptors.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: descriptors.nrows(),
            });
        }
        if num_classes == 0 {
            return Err(Error::InvalidDataset("at least one class is required".into()));
        }
        if labeled.is_empty() {
            return Err(Error::InvalidDataset("at least one labeled example is required".into()));
        }
        let mut pairs = labeled.to_vec();
        pairs.sort_unstable();
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidDataset(format!("index {} labeled twice", w[0].0)));
            }
        }
        for &(i, c) in &pairs {
            if i >= n {
                return Err(Error::InvalidDataset(format!(
                    "labeled index {i} out of range for {n} examples"
                )));
            }
            if c >= num_classes {
                return Err(Error::InvalidDataset(format!(
                    "label {c} of example {i} out of range for {num_classes} classes"
                )));
            }
        }
        let (labeled, labels) = pairs.into_iter().unzip();
        Ok(Self {
            inputs,
            descriptors,
            labeled,
            labels,
            num_classes,
        })
    }

    /// Same split and labels with a new descriptor matrix.
    pub fn with_descriptors(&self, descriptors: Array2<f64>) -> Result<Self> {
        if descriptors.nrows() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: descriptors.nrows(),
            });
        }
        Ok(Self {
            descriptors,
            ..self.clone()
        })
    }

    /// Applies [`l2_normalize_rows`] to the descriptors.
    pub fn normalized(mut self) -> Self {
        l2_normalize_rows_in_place(&mut self.descriptors);
        self
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn descriptors(&self) -> ArrayView2<'_, f64> {
        self.descriptors.view()
    }

    /// Labeled indices in ascending order.
    pub fn labeled_indices(&self) -> &[usize] {
        &self.labeled
    }

    /// Labels aligned with [`labeled_indices`](Self::labeled_indices).
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_of(&self, index: usize) -> Option<usize> {
        self.labeled
            .binary_search(&index)
            .ok()
            .map(|pos| self.labels[pos])
    }

    /// The complement of `L`, ascending.
    pub fn unlabeled_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len() - self.labeled.len());
        let mut next = self.labeled.iter().peekable();
        for i in 0..self.len() {
            if next.peek() == Some(&&i) {
                next.next();
            } else {
                out.push(i);
            }
        }
        out
    }

    pub fn labeled_pairs(&self) -> Vec<(usize, usize)> {
        self.labeled.iter().copied().zip(self.labels.iter().copied()).collect()
    }
}

/// Dense `n x c` one-hot matrix of the known labels; unlabeled rows are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix(Array2<f64>);

impl LabelMatrix {
    /// Wraps an arbitrary score matrix; entries must be finite and >= 0.
    pub fn from_array(y: Array2<f64>) -> Result<Self> {
        if let Some(col) = y
            .columns()
            .into_iter()
            .position(|c| c.iter().any(|v| !v.is_finite() || *v < 0.0))
        {
            return Err(Error::NonFinite { column: col });
        }
        Ok(Self(y))
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.ncols()
    }
}

pub fn build_label_matrix(dataset: &Dataset) -> LabelMatrix {
    let mut y = Array2::zeros((dataset.len(), dataset.num_classes()));
    for (&i, &c) in dataset.labeled_indices().iter().zip(dataset.labels()) {
        y[[i, c]] = 1.0;
    }
    LabelMatrix(y)
}

/// Divides every nonzero row by its Euclidean norm. Zero rows stay zero.
pub fn l2_normalize_rows(matrix: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = matrix.to_owned();
    l2_normalize_rows_in_place(&mut out);
    out
}

pub fn l2_normalize_rows_in_place(matrix: &mut Array2<f64>) {
    for mut row in matrix.axis_iter_mut(Axis(0)) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
}

/// Two interleaved half circles of radius 1, `n` points split evenly.
///
/// The first moon is the upper half circle centered at the origin. The second
/// is the lower half circle centered at `(1, 0.5)`. Points alternate between
/// the moons, so point `i` belongs to class `i % 2`; within a moon the angle is
/// spaced evenly over `[0, pi]`. Gaussian noise of standard deviation `noise`
/// is added to each coordinate.
pub fn generate_two_moons(n: usize, noise: f64, seed: u64) -> Result<GroundTruth> {
    generate_moons_with_sizes([n.div_ceil(2), n / 2], noise, seed)
}

/// Two moons with an explicit point count per moon.
///
/// Points alternate between the moons while both have points left; the
/// remainder of the larger moon follows.
pub fn generate_moons_with_sizes(sizes: [usize; 2], noise: f64, seed: u64) -> Result<GroundTruth> {
    let n = sizes[0] + sizes[1];
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise must be >= 0, got {noise}")));
    }

    let mut classes = Vec::with_capacity(n);
    let mut emitted = [0usize; 2];
    let mut inputs = Array2::zeros((n, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_class = 0;
    for i in 0..n {
        let class = if emitted[next_class] < sizes[next_class] {
            next_class
        } else {
            1 - next_class
        };
        next_class = 1 - class;

        let j = emitted[class];
        emitted[class] += 1;
        let t = if sizes[class] > 1 {
            PI * j as f64 / (sizes[class] - 1) as f64
        } else {
            0.0
        };
        let (x, y) = match class {
            0 => (t.cos(), t.sin()),
            _ => (1.0 - t.cos(), 0.5 - t.sin()),
        };
        inputs[[i, 0]] = x;
        inputs[[i, 1]] = y;
        classes.push(class);
    }
    if noise > 0.0 {
        for v in inputs.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += noise * z;
        }
    }
    GroundTruth::new(inputs, classes, 2)
}

/// Draws `per_class` labeled examples uniformly at random from every class.
pub fn select_labels(truth: &GroundTruth, per_class: usize, seed: u64) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::InvalidParameter("per_class must be at least 1".into()));
    }
    let mut by_class = vec![Vec::new(); truth.num_classes];
    for (i, &c) in truth.classes.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled = Vec::with_capacity(per_class * truth.num_classes);
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < per_class {
            return Err(Error::InsufficientClass {
                class,
                available: members.len(),
                requested: per_class,
            });
        }
        members.shuffle(&mut rng);
        labeled.extend(members[..per_class].iter().map(|&i| (i, class)));
    }
    Dataset::new(truth.inputs.clone(), &labeled, truth.num_classes)
}
