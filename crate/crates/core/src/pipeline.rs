//! The two-phase training loop.
//!
//! Phase 1 trains the classifier on the labeled examples alone. Phase 2
//! repeats, once per epoch: extract descriptors for every example, build the
//! kNN graph, diffuse the labels, weight the pseudo-labels, and run one epoch
//! of weighted training over the originally unlabeled examples.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::diffusion::{
    class_populations, propagate, raw_certainty, rescale_to_unit_max, weights_from_populations,
    DiffusionConfig, DiffusionOutput, PropagationRecord,
};
use crate::encoding::{LandmarkConfig, LandmarkEncoding};
use crate::graph::GraphConfig;
use crate::io::{encode_embeddings, read_embeddings_f64};
use crate::model::{cosine_lr, supervised_loss, weighted_loss, Batch, Model, Sgd, TrainConfig};
use crate::{Error, Result};

/// Where phase-2 pseudo-labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PseudoLabelSource {
    /// Row-wise argmax of the diffusion scores.
    #[default]
    Diffusion,
    /// The classifier's own predictions, with certainty taken from the entropy
    /// of its output distribution.
    Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Gaussian landmark encoding with an identity-initialized projection.
    Landmark(LandmarkConfig),
    /// Plain ReLU MLP.
    Mlp { hidden: Vec<usize>, descriptor_dim: usize },
}

impl Default for Architecture {
    fn default() -> Self {
        Self::Landmark(LandmarkConfig::default())
    }
}

impl Architecture {
    pub fn build(&self, inputs: ArrayView2<'_, f64>, num_classes: usize, seed: u64) -> Result<Model> {
        match self {
            Self::Landmark(cfg) => {
                let encoding = LandmarkEncoding::covering(inputs, cfg)?;
                Model::landmark(encoding, num_classes, seed)
            }
            Self::Mlp {
                hidden,
                descriptor_dim,
            } => Model::mlp(inputs.ncols(), hidden, *descriptor_dim, num_classes, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub graph: GraphConfig,
    pub diffusion: DiffusionConfig,
    pub train: TrainConfig,
    pub architecture: Architecture,
    pub use_omega: bool,
    pub use_zeta: bool,
    pub pseudo_labels: PseudoLabelSource,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            graph: GraphConfig::default(),
            diffusion: DiffusionConfig::default(),
            train: TrainConfig::default(),
            architecture: Architecture::default(),
            use_omega: true,
            use_zeta: true,
            pseudo_labels: PseudoLabelSource::Diffusion,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        self.graph.validate(n)?;
        self.diffusion.validate()?;
        self.train.validate()
    }

    fn horizon(&self) -> usize {
        self.train
            .cosine_horizon
            .unwrap_or(self.train.epochs_supervised + self.train.epochs_iterative)
    }
}

/// Optional ground truth used only for reporting.
#[derive(Debug, Clone, Copy, Default)]
pub struct Evaluation<'a> {
    /// Class of every training example, indexed like the dataset.
    pub truth: Option<&'a [usize]>,
    pub test: Option<(ArrayView2<'a, f64>, &'a [usize])>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub pseudo_label_accuracy: Option<f64>,
    pub mean_omega: f64,
    pub populations: Vec<usize>,
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
    pub test_error: Option<f64>,
    pub cg_residuals: Vec<f64>,
}

/// Pseudo-labels and weights as consumed by one phase-2 epoch.
#[derive(Debug, Clone)]
pub struct EpochTargets {
    pub diffusion: DiffusionOutput,
    pub pseudo_labels: Vec<usize>,
    pub omega: Vec<f64>,
    pub zeta: Vec<f64>,
    pub populations: Vec<usize>,
}

/// Positions into the labeled set and into the epoch's unlabeled list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Training state carried across epochs: model, optimizer and shuffling RNG.
pub struct Trainer {
    pub model: Model,
    config: PipelineConfig,
    optimizer: Sgd,
    rng: ChaCha8Rng,
    labeled_pool: Vec<usize>,
    epoch: usize,
}

fn rows(x: ArrayView2<'_, f64>, indices: &[usize]) -> Array2<f64> {
    x.select(Axis(0), indices)
}

impl Trainer {
    pub fn new(model: Model, config: PipelineConfig) -> Self {
        let optimizer = Sgd::new(&model, config.train.momentum);
        let rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        Self {
            model,
            config,
            optimizer,
            rng,
            labeled_pool: Vec::new(),
            epoch: 0,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn learning_rate(&self) -> f64 {
        cosine_lr(self.config.train.learning_rate, self.epoch, self.config.horizon())
    }

    /// One supervised epoch over the labeled set. Returns the mean batch loss.
    pub fn supervised_epoch(&mut self, dataset: &Dataset) -> Result<f64> {
        let lr = self.learning_rate();
        let batch = self.config.train.batch_labeled + self.config.train.batch_unlabeled;
        let mut order: Vec<usize> = (0..dataset.labeled_indices().len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut count = 0;
        for chunk in order.chunks(batch) {
            let idx: Vec<usize> = chunk.iter().map(|&k| dataset.labeled_indices()[k]).collect();
            let y: Vec<usize> = chunk.iter().map(|&k| dataset.labels()[k]).collect();
            let x = rows(dataset.inputs(), &idx);
            let (loss, grads) = supervised_loss(&self.model, x.view(), &y)?;
            self.optimizer.step(&mut self.model, &grads, lr)?;
            total += loss;
            count += 1;
        }
        self.epoch += 1;
        Ok(total / count.max(1) as f64)
    }

    /// Next `count` positions into the labeled set, reshuffling whenever the
    /// pool runs dry.
    fn draw_labeled(&mut self, count: usize, labeled_len: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.labeled_pool.is_empty() {
                self.labeled_pool = (0..labeled_len).collect();
                self.labeled_pool.shuffle(&mut self.rng);
                self.labeled_pool.reverse();
            }
            out.push(self.labeled_pool.pop().unwrap());
        }
        out
    }

    /// Descriptors, diffusion and weights for the current model.
    pub fn compute_targets(&self, dataset: &Dataset) -> Result<EpochTargets> {
        let descriptors = self.model.descriptors(dataset.inputs())?;
        let diffusion = propagate(
            &dataset.with_descriptors(descriptors)?,
            &self.config.graph,
            &self.config.diffusion,
        )?;
        let c = dataset.num_classes();
        let (pseudo_labels, mut omega, populations, mut zeta) = match self.config.pseudo_labels {
            PseudoLabelSource::Diffusion => (
                diffusion.pseudo_labels.clone(),
                diffusion.omega.clone(),
                diffusion.populations.clone(),
                diffusion.zeta.clone(),
            ),
            PseudoLabelSource::Network => {
                let x = rows(dataset.inputs(), &diffusion.unlabeled);
                let probs = self.model.forward_batch(x.view())?.probabilities;
                let labels = probs
                    .rows()
                    .into_iter()
                    .map(|r| crate::diffusion::argmax(r.iter().copied()))
                    .collect::<Vec<_>>();
                let mut omega: Vec<f64> = probs
                    .rows()
                    .into_iter()
                    .map(|r| raw_certainty(r.iter().copied(), c))
                    .collect();
                rescale_to_unit_max(&mut omega);
                let populations = class_populations(dataset.labels(), &labels, c);
                let zeta = weights_from_populations(&populations)?;
                (labels, omega, populations, zeta)
            }
        };
        if !self.config.use_omega {
            omega.fill(1.0);
        }
        if !self.config.use_zeta {
            zeta.fill(1.0);
        }
        Ok(EpochTargets {
            diffusion,
            pseudo_labels,
            omega,
            zeta,
            populations,
        })
    }

    /// Batch composition for one phase-2 epoch.
    ///
    /// With unlabeled examples present, every position in `0..n_unlabeled`
    /// lands in exactly one batch of at most `batch_unlabeled`, and each batch
    /// carries exactly `batch_labeled` positions from the cycled labeled pool.
    /// Without them, the labeled set is covered once in batches of
    /// `batch_labeled`.
    pub fn plan_epoch(&mut self, n_labeled: usize, n_unlabeled: usize) -> Vec<BatchPlan> {
        let b_l = self.config.train.batch_labeled;
        if n_unlabeled == 0 {
            let mut order: Vec<usize> = (0..n_labeled).collect();
            order.shuffle(&mut self.rng);
            return order
                .chunks(b_l.max(1))
                .map(|chunk| BatchPlan {
                    labeled: chunk.to_vec(),
                    unlabeled: Vec::new(),
                })
                .collect();
        }
        let mut order: Vec<usize> = (0..n_unlabeled).collect();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.config.train.batch_unlabeled.max(1))
            .map(|chunk| BatchPlan {
                labeled: self.draw_labeled(b_l, n_labeled),
                unlabeled: chunk.to_vec(),
            })
            .collect()
    }

    /// One pass over the unlabeled examples with the weighted loss. Returns
    /// the mean batch loss.
    pub fn weighted_epoch(&mut self, dataset: &Dataset, targets: &EpochTargets) -> Result<f64> {
        let lr = self.learning_rate();
        let unlabeled = &targets.diffusion.unlabeled;
        let plan = self.plan_epoch(dataset.labeled_indices().len(), unlabeled.len());

        let mut total = 0.0;
        for batch in &plan {
            let l_idx: Vec<usize> = batch.labeled.iter().map(|&k| dataset.labeled_indices()[k]).collect();
            let l_y: Vec<usize> = batch.labeled.iter().map(|&k| dataset.labels()[k]).collect();
            let u_idx: Vec<usize> = batch.unlabeled.iter().map(|&k| unlabeled[k]).collect();
            let u_y: Vec<usize> = batch.unlabeled.iter().map(|&k| targets.pseudo_labels[k]).collect();
            let u_w: Vec<f64> = batch.unlabeled.iter().map(|&k| targets.omega[k]).collect();
            let xl = rows(dataset.inputs(), &l_idx);
            let xu = rows(dataset.inputs(), &u_idx);
            let (loss, grads) = weighted_loss(
                &self.model,
                Batch { inputs: xl.view(), targets: &l_y },
                Batch { inputs: xu.view(), targets: &u_y },
                &u_w,
                &targets.zeta,
            )?;
            self.optimizer.step(&mut self.model, &grads, lr)?;
            total += loss;
        }
        self.epoch += 1;
        Ok(total / plan.len().max(1) as f64)
    }

    /// Propagation followed by one weighted epoch.
    pub fn phase2_epoch(
        &mut self,
        dataset: &Dataset,
        eval: &Evaluation<'_>,
        epoch: usize,
    ) -> Result<(EpochReport, EpochTargets)> {
        let targets = self.compute_targets(dataset)?;
        let train_loss = self.weighted_epoch(dataset, &targets)?;

        let pseudo_label_accuracy = eval.truth.and_then(|truth| {
            let u = &targets.diffusion.unlabeled;
            (!u.is_empty()).then(|| {
                let hits = u
                    .iter()
                    .zip(&targets.pseudo_labels)
                    .filter(|(&i, &c)| truth[i] == c)
                    .count();
                hits as f64 / u.len() as f64
            })
        });
        let test_accuracy = match eval.test {
            Some((x, y)) => Some(self.model.accuracy(x, y)?),
            None => None,
        };
        let mean_omega = if targets.omega.is_empty() {
            0.0
        } else {
            targets.omega.iter().sum::<f64>() / targets.omega.len() as f64
        };
        let report = EpochReport {
            epoch,
            pseudo_label_accuracy,
            mean_omega,
            populations: targets.populations.clone(),
            train_loss,
            test_accuracy,
            test_error: test_accuracy.map(|a| 1.0 - a),
            cg_residuals: targets.diffusion.cg_residuals(),
        };
        Ok((report, targets))
    }
}

/// Phase 1 on its own: `epochs_supervised` epochs of supervised training.
pub fn run_phase1(model: Model, dataset: &Dataset, config: &PipelineConfig) -> Result<Model> {
    config.train.validate()?;
    let mut trainer = Trainer::new(model, config.clone());
    for _ in 0..config.train.epochs_supervised {
        trainer.supervised_epoch(dataset)?;
    }
    Ok(trainer.model)
}

/// One phase-2 epoch on its own, with a fresh optimizer.
pub fn run_phase2_epoch(
    model: Model,
    dataset: &Dataset,
    config: &PipelineConfig,
    eval: &Evaluation<'_>,
) -> Result<(Model, EpochReport)> {
    config.validate(dataset.len())?;
    let mut trainer = Trainer::new(model, config.clone());
    let (report, _) = trainer.phase2_epoch(dataset, eval, 0)?;
    Ok((trainer.model, report))
}

/// Output of a full run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub model: Model,
    pub reports: Vec<EpochReport>,
    /// Targets used in the last phase-2 epoch, if any ran.
    pub last_targets: Option<EpochTargets>,
}

impl RunResult {
    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.reports.last().and_then(|r| r.test_accuracy)
    }
}

/// Builds the model from `config.architecture`, then runs both phases.
pub fn run_lpdssl(dataset: &Dataset, config: &PipelineConfig, eval: &Evaluation<'_>) -> Result<RunResult> {
    let model = config
        .architecture
        .build(dataset.inputs(), dataset.num_classes(), config.train.seed)?;
    run_lpdssl_with(model, dataset, config, eval, |_| {})
}

/// Runs both phases from a given model, calling `on_report` after every
/// phase-2 epoch.
pub fn run_lpdssl_with(
    model: Model,
    dataset: &Dataset,
    config: &PipelineConfig,
    eval: &Evaluation<'_>,
    mut on_report: impl FnMut(&EpochReport),
) -> Result<RunResult> {
    config.validate(dataset.len())?;
    let mut trainer = Trainer::new(model, config.clone());
    for _ in 0..config.train.epochs_supervised {
        trainer.supervised_epoch(dataset)?;
    }
    let mut reports = Vec::with_capacity(config.train.epochs_iterative);
    let mut last_targets = None;
    for epoch in 0..config.train.epochs_iterative {
        let (report, targets) = trainer.phase2_epoch(dataset, eval, epoch)?;
        on_report(&report);
        reports.push(report);
        last_targets = Some(targets);
    }
    Ok(RunResult {
        model: trainer.model,
        reports,
        last_targets,
    })
}

pub const CONFIG_FILE: &str = "config.json";
pub const REPORTS_FILE: &str = "reports.jsonl";
pub const CHECKPOINT_FILE: &str = "model.lpmdl";
pub const INPUTS_FILE: &str = "inputs.lpemb";
pub const PROPAGATION_FILE: &str = "propagation.json";

pub fn format_reports(reports: &[EpochReport]) -> Result<String> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes config snapshot, report stream, checkpoint, training inputs and
/// the final propagation into `dir` (created if missing).
pub fn save_run(
    dir: impl AsRef<Path>,
    config: &PipelineConfig,
    dataset: &Dataset,
    result: &RunResult,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(config)? + "\n")?;
    fs::write(dir.join(REPORTS_FILE), format_reports(&result.reports)?)?;
    result.model.save(dir.join(CHECKPOINT_FILE))?;
    let inputs = dataset.inputs().mapv(|v| v as f32);
    fs::write(dir.join(INPUTS_FILE), encode_embeddings(inputs.view())?)?;
    if let Some(t) = &result.last_targets {
        let record = PropagationRecord::new(
            &t.diffusion.unlabeled,
            &t.pseudo_labels,
            &t.omega,
            &t.zeta,
            &t.diffusion.cg_residuals(),
            &config.graph,
            &config.diffusion,
        )
        .with_labeled(dataset.labeled_pairs());
        let mut file = fs::File::create(dir.join(PROPAGATION_FILE))?;
        file.write_all(serde_json::to_string_pretty(&record)?.as_bytes())?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_reports(dir: impl AsRef<Path>) -> Result<Vec<EpochReport>> {
    let file = fs::File::open(dir.as_ref().join(REPORTS_FILE))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn load_propagation(dir: impl AsRef<Path>) -> Result<PropagationRecord> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.as_ref().join(PROPAGATION_FILE))?)?)
}

pub fn load_inputs(dir: impl AsRef<Path>) -> Result<Array2<f64>> {
    read_embeddings_f64(dir.as_ref().join(INPUTS_FILE))
}

/// Fails unless `dir` looks like a completed run.
pub fn check_run_dir(dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for name in [CONFIG_FILE, REPORTS_FILE] {
        if !dir.join(name).is_file() {
            return Err(Error::InvalidParameter(format!(
                "{} is not a run directory (missing {name})",
                dir.display()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::dataset::{generate_two_moons, select_labels};

    fn tiny_config() -> PipelineConfig {
        PipelineConfig {
            graph: GraphConfig {
                k: 5,
                ..Default::default()
            },
            train: TrainConfig {
                epochs_supervised: 3,
                epochs_iterative: 2,
                batch_labeled: 2,
                batch_unlabeled: 4,
                ..Default::default()
            },
            architecture: Architecture::Mlp {
                hidden: vec![8],
                descriptor_dim: 4,
            },
            ..Default::default()
        }
    }

    fn tiny_dataset() -> Dataset {
        let truth = generate_two_moons(30, 0.05, 3).unwrap();
        select_labels(&truth, 2, 1).unwrap()
    }

    #[test]
    fn phase1_with_zero_epochs_is_identity() {
        let ds = tiny_dataset();
        let mut cfg = tiny_config();
        cfg.train.epochs_supervised = 0;
        let model = cfg.architecture.build(ds.inputs(), 2, 0).unwrap();
        let out = run_phase1(model.clone(), &ds, &cfg).unwrap();
        assert_eq!(out, model);
    }

    #[test]
    fn separable_pair_is_learned() {
        let x = array![[-1.0, 0.0], [1.0, 0.0]];
        let ds = Dataset::new(x.clone(), &[(0, 0), (1, 1)], 2).unwrap();
        let mut cfg = tiny_config();
        cfg.train.epochs_supervised = 30;
        let model = cfg.architecture.build(ds.inputs(), 2, 4).unwrap();
        let out = run_phase1(model, &ds, &cfg).unwrap();
        assert_eq!(out.accuracy(x.view(), &[0, 1]).unwrap(), 1.0);
    }

    #[test]
    fn batches_hold_exact_labeled_quota() {
        let ds = tiny_dataset();
        let cfg = tiny_config();
        let model = cfg.architecture.build(ds.inputs(), 2, 0).unwrap();
        let mut trainer = Trainer::new(model, cfg);
        let plan = trainer.plan_epoch(4, 10);
        assert_eq!(plan.len(), 3);
        assert!(plan.iter().all(|b| b.labeled.len() == 2));
        assert_eq!(plan[2].unlabeled.len(), 2);
        let mut seen: Vec<usize> = plan.iter().flat_map(|b| b.unlabeled.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        // the pool of 4 is used up by the first two batches, once each
        let mut first: Vec<usize> = plan[..2].iter().flat_map(|b| b.labeled.clone()).collect();
        first.sort_unstable();
        assert_eq!(first, vec![0, 1, 2, 3]);
    }

    #[test]
    fn fully_labeled_dataset_runs_supervised_epoch() {
        let truth = generate_two_moons(20, 0.05, 1).unwrap();
        let ds = select_labels(&truth, 10, 0).unwrap();
        let cfg = tiny_config();
        let model = cfg.architecture.build(ds.inputs(), 2, 0).unwrap();
        let (_, report) = run_phase2_epoch(model, &ds, &cfg, &Evaluation::default()).unwrap();
        assert_eq!(report.populations, vec![10, 10]);
        assert_eq!(report.pseudo_label_accuracy, None);
    }

    #[test]
    fn reports_round_trip_through_run_dir() {
        let ds = tiny_dataset();
        let cfg = tiny_config();
        let truth = generate_two_moons(30, 0.05, 3).unwrap().classes;
        let eval = Evaluation {
            truth: Some(&truth),
            test: None,
        };
        let result = run_lpdssl(&ds, &cfg, &eval).unwrap();
        assert_eq!(result.reports.len(), 2);
        for r in &result.reports {
            assert_eq!(r.populations.iter().sum::<usize>(), 30);
            let acc = r.pseudo_label_accuracy.unwrap();
            assert!((0.0..=1.0).contains(&acc));
        }
        let dir = tempfile::tempdir().unwrap();
        save_run(dir.path(), &cfg, &ds, &result).unwrap();
        check_run_dir(dir.path()).unwrap();
        assert_eq!(load_reports(dir.path()).unwrap(), result.reports);
        let prop = load_propagation(dir.path()).unwrap();
        assert_eq!(prop.pseudo_labels.len(), 26);
        assert_eq!(load_inputs(dir.path()).unwrap().nrows(), 30);
        assert!(check_run_dir(dir.path().join("missing")).is_err());
    }
}
