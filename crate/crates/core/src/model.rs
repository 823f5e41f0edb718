//! A small differentiable classifier written from scratch.
//!
//! The feature extractor is an optional fixed [`LandmarkEncoding`], zero or
//! more ReLU layers and a linear projection. Its output is l2-normalized to
//! give the descriptor used for the graph, and a linear head with softmax on
//! top of the descriptor gives class probabilities.
//!
//! Everything works on row-major batches: one example per row.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::argmax;
use crate::encoding::LandmarkEncoding;
use crate::{Error, Result};

/// Probabilities are clamped from below before taking the log.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LPMDL1\0\0";

/// Fully connected layer computing `x W + b` for a batch `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// Shape `(inputs, outputs)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Weights and biases uniform in `+-1/sqrt(inputs)`.
    pub fn uniform(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((inputs, outputs), || rng.random_range(-bound..=bound));
        let bias = Array1::from_shape_simple_fn(outputs, || rng.random_range(-bound..=bound));
        Self { weight, bias }
    }

    pub fn identity(size: usize) -> Self {
        Self {
            weight: Array2::eye(size),
            bias: Array1::zeros(size),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// How the projection layer is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionInit {
    Uniform,
    /// Identity weights and zero bias; needs a square projection.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    encoding: Option<LandmarkEncoding>,
    hidden: Vec<Dense>,
    projection: Dense,
    head: Dense,
}

/// Per-parameter gradients, laid out like the model's trainable layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<Dense>,
    pub projection: Dense,
    pub head: Dense,
}

impl Gradients {
    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.hidden.iter().chain([&self.projection, &self.head])
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flatten(self.layers())
    }

    pub fn max_abs(&self) -> f64 {
        self.to_flat().into_iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

fn flatten<'a>(layers: impl Iterator<Item = &'a Dense>) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in layers {
        out.extend(layer.weight.iter());
        out.extend(layer.bias.iter());
    }
    out
}

/// Descriptors and probabilities for a batch.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub descriptors: Array2<f64>,
    pub probabilities: Array2<f64>,
}

/// Descriptor and class probabilities of a single example.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub descriptor: Array1<f64>,
    pub probabilities: Array1<f64>,
}

struct Trace {
    /// Input to each hidden layer, then the input to the projection.
    layer_inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    hidden_pre: Vec<Array2<f64>>,
    norms: Array1<f64>,
    descriptors: Array2<f64>,
    probabilities: Array2<f64>,
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

impl Model {
    /// Plain MLP `input -> hidden... -> descriptor_dim -> num_classes`.
    pub fn mlp(
        input_dim: usize,
        hidden: &[usize],
        descriptor_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        Self::build(None, input_dim, hidden, descriptor_dim, ProjectionInit::Uniform, num_classes, seed)
    }

    /// Landmark encoding followed by an identity-initialized linear projection
    /// onto a descriptor of the same width.
    pub fn landmark(encoding: LandmarkEncoding, num_classes: usize, seed: u64) -> Result<Self> {
        let width = encoding.output_dim();
        let input_dim = encoding.input_dim();
        Self::build(Some(encoding), input_dim, &[], width, ProjectionInit::Identity, num_classes, seed)
    }

    pub fn build(
        encoding: Option<LandmarkEncoding>,
        input_dim: usize,
        hidden: &[usize],
        descriptor_dim: usize,
        init: ProjectionInit,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 classes, got {num_classes}")));
        }
        if input_dim == 0 || descriptor_dim == 0 || hidden.contains(&0) {
            return Err(Error::InvalidParameter("layer widths must be positive".into()));
        }
        if let Some(enc) = &encoding {
            if enc.input_dim() != input_dim {
                return Err(Error::DimensionMismatch {
                    expected: input_dim,
                    actual: enc.input_dim(),
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut width = encoding.as_ref().map_or(input_dim, LandmarkEncoding::output_dim);
        let mut layers = Vec::with_capacity(hidden.len());
        for &h in hidden {
            layers.push(Dense::uniform(width, h, &mut rng));
            width = h;
        }
        let projection = match init {
            ProjectionInit::Uniform => Dense::uniform(width, descriptor_dim, &mut rng),
            ProjectionInit::Identity if width == descriptor_dim => Dense::identity(width),
            ProjectionInit::Identity => {
                return Err(Error::InvalidParameter(format!(
                    "identity projection needs a square layer, got {width}x{descriptor_dim}"
                )))
            }
        };
        let head = Dense::uniform(descriptor_dim, num_classes, &mut rng);
        Ok(Self {
            encoding,
            hidden: layers,
            projection,
            head,
        })
    }

    pub fn input_dim(&self) -> usize {
        match &self.encoding {
            Some(enc) => enc.input_dim(),
            None => self.hidden.first().unwrap_or(&self.projection).inputs(),
        }
    }

    pub fn descriptor_dim(&self) -> usize {
        self.projection.outputs()
    }

    pub fn num_classes(&self) -> usize {
        self.head.outputs()
    }

    pub fn encoding(&self) -> Option<&LandmarkEncoding> {
        self.encoding.as_ref()
    }

    pub fn head_mut(&mut self) -> &mut Dense {
        &mut self.head
    }

    fn trainable(&self) -> impl Iterator<Item = &Dense> {
        self.hidden.iter().chain([&self.projection, &self.head])
    }

    fn trainable_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.hidden.iter_mut().chain([&mut self.projection, &mut self.head])
    }

    pub fn param_count(&self) -> usize {
        self.trainable().map(Dense::param_count).sum()
    }

    /// All trainable parameters in a fixed order.
    pub fn params_flat(&self) -> Vec<f64> {
        flatten(self.trainable())
    }

    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                actual: values.len(),
            });
        }
        let mut it = values.iter();
        for layer in self.trainable_mut() {
            for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *w = *it.next().unwrap();
            }
        }
        Ok(())
    }

    fn trace(&self, x: ArrayView2<'_, f64>) -> Result<Trace> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        let mut current = match &self.encoding {
            Some(enc) => enc.encode(x)?,
            None => x.to_owned(),
        };
        let mut layer_inputs = Vec::with_capacity(self.hidden.len() + 1);
        let mut hidden_pre = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let pre = layer.forward(current.view());
            let act = pre.mapv(|v| v.max(0.0));
            layer_inputs.push(current);
            hidden_pre.push(pre);
            current = act;
        }
        let features = self.projection.forward(current.view());
        layer_inputs.push(current);

        let norms = features.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        let mut descriptors = features;
        for (mut row, &norm) in descriptors.axis_iter_mut(Axis(0)).zip(&norms) {
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
            }
        }
        let mut probabilities = self.head.forward(descriptors.view());
        softmax_rows(&mut probabilities);
        Ok(Trace {
            layer_inputs,
            hidden_pre,
            norms,
            descriptors,
            probabilities,
        })
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<BatchOutput> {
        let t = self.trace(x)?;
        Ok(BatchOutput {
            descriptors: t.descriptors,
            probabilities: t.probabilities,
        })
    }

    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<Output> {
        let out = self.forward_batch(x.insert_axis(Axis(0)))?;
        Ok(Output {
            descriptor: out.descriptors.row(0).to_owned(),
            probabilities: out.probabilities.row(0).to_owned(),
        })
    }

    /// Unit-norm descriptors for every row of `x`.
    pub fn descriptors(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_batch(x)?.descriptors)
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<usize> {
        Ok(argmax(self.forward(x)?.probabilities.iter().copied()))
    }

    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let probs = self.forward_batch(x)?.probabilities;
        Ok(probs.rows().into_iter().map(|r| argmax(r.iter().copied())).collect())
    }

    /// Fraction of rows of `x` predicted as `labels`.
    pub fn accuracy(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
        let pred = self.predict_batch(x)?;
        if pred.is_empty() {
            return Ok(0.0);
        }
        let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / pred.len() as f64)
    }

    /// `sum_b coeff_b * -ln p_b[target_b]` and its gradient.
    pub fn weighted_cross_entropy(
        &self,
        x: ArrayView2<'_, f64>,
        targets: &[usize],
        coefficients: &[f64],
    ) -> Result<(f64, Gradients)> {
        if targets.len() != x.nrows() || coefficients.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                actual: targets.len().min(coefficients.len()),
            });
        }
        let c = self.num_classes();
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::InvalidParameter(format!("target class {bad} >= {c}")));
        }
        let t = self.trace(x)?;

        let mut loss = 0.0;
        let mut d_logits = t.probabilities.clone();
        for (b, (&y, &s)) in targets.iter().zip(coefficients).enumerate() {
            loss -= s * t.probabilities[[b, y]].max(PROBABILITY_FLOOR).ln();
            let mut row = d_logits.row_mut(b);
            row[y] -= 1.0;
            row.mapv_inplace(|v| v * s);
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }

        let head = Dense {
            weight: t.descriptors.t().dot(&d_logits),
            bias: d_logits.sum_axis(Axis(0)),
        };
        let d_desc = d_logits.dot(&self.head.weight.t());

        // v = u / |u|  =>  du = (dv - v (v . dv)) / |u|
        let mut d_features = d_desc;
        Zip::from(d_features.rows_mut())
            .and(t.descriptors.rows())
            .and(&t.norms)
            .for_each(|mut g, v, &norm| {
                if norm > 0.0 {
                    let along = v.dot(&g);
                    g.zip_mut_with(&v, |gi, &vi| *gi = (*gi - vi * along) / norm);
                } else {
                    g.fill(0.0);
                }
            });

        let proj_in = t.layer_inputs.last().unwrap();
        let projection = Dense {
            weight: proj_in.t().dot(&d_features),
            bias: d_features.sum_axis(Axis(0)),
        };
        let mut upstream = d_features.dot(&self.projection.weight.t());

        let mut hidden = Vec::with_capacity(self.hidden.len());
        for l in (0..self.hidden.len()).rev() {
            let mut d_pre = upstream;
            d_pre.zip_mut_with(&t.hidden_pre[l], |g, &p| {
                if p <= 0.0 {
                    *g = 0.0;
                }
            });
            hidden.push(Dense {
                weight: t.layer_inputs[l].t().dot(&d_pre),
                bias: d_pre.sum_axis(Axis(0)),
            });
            upstream = d_pre.dot(&self.hidden[l].weight.t());
        }
        hidden.reverse();
        Ok((
            loss,
            Gradients {
                hidden,
                projection,
                head,
            },
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_bytes(&fs::read(path)?)
    }
}

/// Mean cross-entropy over the batch.
pub fn supervised_loss(model: &Model, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Gradients)> {
    if x.nrows() == 0 {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let coeff = vec![1.0 / x.nrows() as f64; x.nrows()];
    model.weighted_cross_entropy(x, labels, &coeff)
}

/// A batch of inputs with their (pseudo-)labels.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub targets: &'a [usize],
}

/// Class- and certainty-weighted loss over a labeled and a pseudo-labeled
/// batch: `mean_L zeta_y * ce + mean_U omega * zeta_yhat * ce`.
pub fn weighted_loss(
    model: &Model,
    labeled: Batch<'_>,
    pseudo: Batch<'_>,
    omega: &[f64],
    zeta: &[f64],
) -> Result<(f64, Gradients)> {
    if omega.len() < pseudo.targets.len() {
        return Err(Error::MissingWeight { index: omega.len() });
    }
    if zeta.len() < model.num_classes() {
        return Err(Error::InvalidParameter(format!(
            "need {} class weights, got {}",
            model.num_classes(),
            zeta.len()
        )));
    }
    let n_l = labeled.targets.len();
    let n_u = pseudo.targets.len();
    if labeled.inputs.nrows() != n_l || pseudo.inputs.nrows() != n_u {
        return Err(Error::DimensionMismatch {
            expected: n_l + n_u,
            actual: labeled.inputs.nrows() + pseudo.inputs.nrows(),
        });
    }
    if n_l + n_u == 0 {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let mut coeff = Vec::with_capacity(n_l + n_u);
    coeff.extend(labeled.targets.iter().map(|&y| zeta[y] / n_l as f64));
    coeff.extend(
        pseudo
            .targets
            .iter()
            .zip(omega)
            .map(|(&y, &w)| w * zeta[y] / n_u as f64),
    );
    let targets: Vec<usize> = labeled.targets.iter().chain(pseudo.targets).copied().collect();
    let inputs = ndarray::concatenate(Axis(0), &[labeled.inputs, pseudo.inputs])
        .map_err(|_| Error::DimensionMismatch {
            expected: labeled.inputs.ncols(),
            actual: pseudo.inputs.ncols(),
        })?;
    model.weighted_cross_entropy(inputs.view(), &targets, &coeff)
}

/// SGD with heavy-ball momentum: `v = mu v + g; theta -= lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(model: &Model, momentum: f64) -> Self {
        Self::with_len(model.param_count(), momentum)
    }

    pub fn with_len(len: usize, momentum: f64) -> Self {
        Self {
            momentum,
            velocity: vec![0.0; len],
        }
    }

    /// Updates a flat parameter vector in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if grads.len() != self.velocity.len() || params.len() != self.velocity.len() {
            return Err(Error::DimensionMismatch {
                expected: self.velocity.len(),
                actual: grads.len(),
            });
        }
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            *v = self.momentum * *v + g;
            *p -= lr * *v;
        }
        Ok(())
    }

    pub fn step(&mut self, model: &mut Model, gradients: &Gradients, lr: f64) -> Result<()> {
        let mut params = model.params_flat();
        self.update(&mut params, &gradients.to_flat(), lr)?;
        model.set_params_flat(&params)
    }
}

/// `base * 0.5 * (1 + cos(pi * epoch / horizon))`; zero at and past the horizon.
pub fn cosine_lr(base: f64, epoch: usize, horizon: usize) -> f64 {
    if horizon == 0 || epoch >= horizon {
        return 0.0;
    }
    base * 0.5 * (1.0 + (PI * epoch as f64 / horizon as f64).cos())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Supervised warm-up epochs.
    pub epochs_supervised: usize,
    /// Propagate-then-train epochs.
    pub epochs_iterative: usize,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    /// Cosine schedule horizon in epochs, counted across both phases; `None`
    /// uses `epochs_supervised + epochs_iterative`.
    pub cosine_horizon: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs_supervised: 30,
            epochs_iterative: 70,
            batch_labeled: 8,
            batch_unlabeled: 32,
            cosine_horizon: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_labeled + self.batch_unlabeled == 0 {
            return Err(Error::InvalidParameter("batch size must be positive".into()));
        }
        if self.batch_labeled == 0 {
            return Err(Error::InvalidParameter("batch_labeled must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

// Checkpoint layout (little-endian): magic, u32 layer count, then per layer
// u32 kind, u32 rows, u32 cols and the f32 payload. Encoding layers store the
// `rows x cols` centers followed by the bandwidth; dense layers store the
// `rows x cols` weight followed by `cols` biases.
const KIND_ENCODING: u32 = 0;
const KIND_HIDDEN: u32 = 1;
const KIND_PROJECTION: u32 = 2;
const KIND_HEAD: u32 = 3;

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn push_f32s<'a>(out: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, len: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len()).ok_or(
            Error::Truncated {
                expected: self.pos.saturating_add(len),
                actual: self.bytes.len(),
            },
        )?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32s(&mut self, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let count = rows.checked_mul(cols).ok_or(Error::DimensionOverflow {
            rows: rows as u64,
            cols: cols as u64,
        })?;
        let len = count.checked_mul(4).ok_or(Error::DimensionOverflow {
            rows: rows as u64,
            cols: cols as u64,
        })?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }

    fn dense(&mut self, rows: usize, cols: usize) -> Result<Dense> {
        let weight = Array2::from_shape_vec((rows, cols), self.f32s(rows, cols)?).unwrap();
        let bias = Array1::from(self.f32s(1, cols)?);
        Ok(Dense { weight, bias })
    }
}

impl Model {
    /// Serializes the model; parameters are stored as `f32`.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        let layers = self.hidden.len() + 2 + usize::from(self.encoding.is_some());
        push_u32(&mut out, layers);
        if let Some(enc) = &self.encoding {
            out.extend_from_slice(&KIND_ENCODING.to_le_bytes());
            push_u32(&mut out, enc.output_dim());
            push_u32(&mut out, enc.input_dim());
            push_f32s(&mut out, enc.centers().iter());
            push_f32s(&mut out, [enc.bandwidth()].iter());
        }
        let dense = self
            .hidden
            .iter()
            .map(|l| (KIND_HIDDEN, l))
            .chain([(KIND_PROJECTION, &self.projection), (KIND_HEAD, &self.head)]);
        for (kind, layer) in dense {
            out.extend_from_slice(&kind.to_le_bytes());
            push_u32(&mut out, layer.inputs());
            push_u32(&mut out, layer.outputs());
            push_f32s(&mut out, layer.weight.iter());
            push_f32s(&mut out, layer.bias.iter());
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic { kind: "checkpoint" });
        }
        let mut r = Reader { bytes, pos: 8 };
        let count = r.u32()?;
        let mut encoding = None;
        let mut hidden = Vec::new();
        let mut projection = None;
        let mut head = None;
        for _ in 0..count {
            let kind = r.u32()? as u32;
            let rows = r.u32()?;
            let cols = r.u32()?;
            match kind {
                KIND_ENCODING if encoding.is_none() && hidden.is_empty() && projection.is_none() => {
                    let centers = Array2::from_shape_vec((rows, cols), r.f32s(rows, cols)?).unwrap();
                    let bandwidth = r.f32s(1, 1)?[0];
                    encoding = Some(LandmarkEncoding::new(centers, bandwidth)?);
                }
                KIND_HIDDEN if projection.is_none() => hidden.push(r.dense(rows, cols)?),
                KIND_PROJECTION if projection.is_none() => projection = Some(r.dense(rows, cols)?),
                KIND_HEAD if projection.is_some() && head.is_none() => head = Some(r.dense(rows, cols)?),
                _ => {
                    return Err(Error::Parse {
                        line: 0,
                        message: format!("unexpected checkpoint layer kind {kind}"),
                    })
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Parse {
                line: 0,
                message: format!("{} trailing bytes in checkpoint", bytes.len() - r.pos),
            });
        }
        let (projection, head) = match (projection, head) {
            (Some(p), Some(h)) => (p, h),
            _ => {
                return Err(Error::Parse {
                    line: 0,
                    message: "checkpoint lacks projection or head layer".into(),
                })
            }
        };
        let model = Self {
            encoding,
            hidden,
            projection,
            head,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let mut width = match &self.encoding {
            Some(enc) => enc.output_dim(),
            None => self.hidden.first().unwrap_or(&self.projection).inputs(),
        };
        for layer in self.trainable() {
            if layer.inputs() != width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    actual: layer.inputs(),
                });
            }
            width = layer.outputs();
        }
        if self.num_classes() < 2 {
            return Err(Error::InvalidParameter("head needs at least 2 classes".into()));
        }
        Ok(())
    }
}
