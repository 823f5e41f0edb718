use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use labelprop::dataset::{generate_moons_with_sizes, generate_two_moons, select_labels};
use labelprop::diffusion::PropagationRecord;
use labelprop::encoding::{lifted_descriptors, LandmarkConfig};
use labelprop::io::{dense_classes, read_embeddings_f64, read_labels, write_embeddings, write_labels};
use labelprop::pipeline::{
    check_run_dir, format_reports, load_inputs, load_propagation, load_reports, run_lpdssl_with, save_run,
    Architecture, Evaluation, PseudoLabelSource,
};
use labelprop::{propagate as diffuse, Dataset, DiffusionConfig, GraphConfig, GroundTruth, PipelineConfig, TrainConfig};

use crate::{ArchitectureKind, ExportPlotArgs, Failure, GenDataArgs, GraphArgs, PlotKind, PropagateArgs, TrainToyArgs};

type CmdResult = Result<(), Failure>;

fn require_file(path: &Path, flag: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{flag} {}: no such file", path.display())))
    }
}

fn read_truth(path: &Path, n: usize) -> Result<Vec<usize>, Failure> {
    require_file(path, "truth file")?;
    let pairs = read_labels(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(dense_classes(&pairs, n)?)
}

fn truth_pairs(truth: &GroundTruth) -> Vec<(usize, usize)> {
    truth.classes.iter().copied().enumerate().collect()
}

fn write_output(path: Option<&PathBuf>, text: &str) -> CmdResult {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

impl GraphArgs {
    fn graph(&self) -> GraphConfig {
        GraphConfig {
            k: self.k,
            gamma: self.gamma,
            ..Default::default()
        }
    }

    fn diffusion(&self) -> DiffusionConfig {
        DiffusionConfig {
            alpha: self.alpha,
            max_cg_iters: self.cg_iters,
            cg_tolerance: self.cg_tol,
        }
    }
}

pub fn gen_data(args: &GenDataArgs) -> CmdResult {
    if args.per_class == 0 {
        return Err(Failure::usage("--per-class must be at least 1"));
    }
    let truth = match &args.class_sizes {
        Some(sizes) => generate_moons_with_sizes([sizes[0], sizes[1]], args.noise, args.seed)?,
        None => generate_two_moons(args.n, args.noise, args.seed)?,
    };
    let dataset = select_labels(&truth, args.per_class, args.seed)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_embeddings(truth.inputs.mapv(|v| v as f32).view(), args.out.join("inputs.lpemb"))?;
    write_labels(&dataset.labeled_pairs(), args.out.join("labels.csv"))?;
    write_labels(&truth_pairs(&truth), args.out.join("truth.csv"))?;
    if let Some(test_n) = args.test_n {
        let seed = args.test_seed.unwrap_or(args.seed.wrapping_add(1000));
        let test = generate_two_moons(test_n, args.noise, seed)?;
        write_embeddings(test.inputs.mapv(|v| v as f32).view(), args.out.join("test_inputs.lpemb"))?;
        write_labels(&truth_pairs(&test), args.out.join("test_truth.csv"))?;
    }
    eprintln!(
        "wrote {} points ({} labeled) to {}",
        truth.len(),
        dataset.labeled_indices().len(),
        args.out.display()
    );
    Ok(())
}

fn num_classes(labels: &[(usize, usize)], truth: Option<&[usize]>, explicit: Option<usize>) -> usize {
    explicit.unwrap_or_else(|| {
        let from_labels = labels.iter().map(|&(_, c)| c);
        let from_truth = truth.into_iter().flatten().copied();
        from_labels.chain(from_truth).max().map_or(0, |m| m + 1).max(2)
    })
}

pub fn propagate(args: &PropagateArgs) -> CmdResult {
    require_file(&args.embeddings, "--embeddings")?;
    require_file(&args.labels, "--labels")?;
    if !(0.0..1.0).contains(&args.graph.alpha) {
        return Err(Failure::usage(format!("--alpha must lie in [0, 1), got {}", args.graph.alpha)));
    }
    let inputs = read_embeddings_f64(&args.embeddings)?;
    let labels = read_labels(&args.labels).with_context(|| format!("reading {}", args.labels.display()))?;
    let truth = args
        .truth
        .as_deref()
        .map(|p| read_truth(p, inputs.nrows()))
        .transpose()?;
    let c = num_classes(&labels, truth.as_deref(), args.classes);

    let descriptors = match args.lift_bandwidth {
        Some(bandwidth) => {
            let cfg = LandmarkConfig {
                bandwidth,
                step: args.lift_step,
                ..Default::default()
            };
            lifted_descriptors(inputs.view(), &cfg)?
        }
        None => inputs.clone(),
    };
    let mut dataset = Dataset::with_parts(inputs, descriptors, &labels, c)?;
    if !args.no_normalize {
        dataset = dataset.normalized();
    }

    let (graph, diffusion) = (args.graph.graph(), args.graph.diffusion());
    let out = diffuse(&dataset, &graph, &diffusion)?;
    let accuracy = truth.as_deref().and_then(|t| out.accuracy(t));
    let record = PropagationRecord::from_output(&out, &graph, &diffusion)
        .with_labeled(dataset.labeled_pairs())
        .with_accuracy(accuracy);

    write_output(
        args.out.as_ref(),
        &(serde_json::to_string_pretty(&record).context("serializing propagation")? + "\n"),
    )?;
    if let Some(path) = &args.csv {
        let mut csv = String::from("index,class,omega\n");
        for (e, w) in record.pseudo_labels.iter().zip(&record.omega) {
            writeln!(csv, "{},{},{w}", e.index, e.class).expect("writing to a String");
        }
        fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!(
        "{} pseudo-labels, mean omega {:.4}",
        record.pseudo_labels.len(),
        record.omega.iter().sum::<f64>() / record.omega.len().max(1) as f64
    );
    if let Some(acc) = accuracy {
        eprintln!("pseudo-label accuracy {acc:.4}");
    }
    Ok(())
}

impl TrainToyArgs {
    fn pipeline_config(&self) -> PipelineConfig {
        let architecture = match self.architecture {
            ArchitectureKind::Landmark => Architecture::Landmark(LandmarkConfig {
                bandwidth: self.landmark_bandwidth,
                step: self.landmark_step,
                ..Default::default()
            }),
            ArchitectureKind::Mlp => Architecture::Mlp {
                hidden: self.hidden.clone(),
                descriptor_dim: self.descriptor_dim,
            },
        };
        PipelineConfig {
            graph: self.graph.graph(),
            diffusion: self.graph.diffusion(),
            train: TrainConfig {
                learning_rate: self.lr,
                momentum: self.momentum,
                epochs_supervised: self.epochs_supervised,
                epochs_iterative: self.epochs_iterative,
                batch_labeled: self.batch_labeled,
                batch_unlabeled: self.batch_unlabeled,
                cosine_horizon: None,
                seed: self.seed,
            },
            architecture,
            use_omega: !self.no_omega,
            use_zeta: !self.no_zeta,
            pseudo_labels: if self.use_network_predictions {
                PseudoLabelSource::Network
            } else {
                PseudoLabelSource::Diffusion
            },
        }
    }
}

pub fn train_toy(args: &TrainToyArgs) -> CmdResult {
    require_file(&args.embeddings, "--embeddings")?;
    require_file(&args.labels, "--labels")?;
    let inputs = read_embeddings_f64(&args.embeddings)?;
    let n = inputs.nrows();
    let labels = read_labels(&args.labels).with_context(|| format!("reading {}", args.labels.display()))?;
    let truth = args.truth.as_deref().map(|p| read_truth(p, n)).transpose()?;
    let test = match (&args.test_embeddings, &args.test_truth) {
        (Some(x), Some(t)) => {
            require_file(x, "--test-embeddings")?;
            let x = read_embeddings_f64(x)?;
            if x.ncols() != inputs.ncols() {
                return Err(labelprop::Error::DimensionMismatch {
                    expected: inputs.ncols(),
                    actual: x.ncols(),
                }
                .into());
            }
            let t = read_truth(t, x.nrows())?;
            Some((x, t))
        }
        _ => None,
    };
    let c = num_classes(&labels, truth.as_deref(), None);
    let dataset = Dataset::new(inputs, &labels, c)?;
    let config = args.pipeline_config();
    config.validate(dataset.len())?;

    let eval = Evaluation {
        truth: truth.as_deref(),
        test: test.as_ref().map(|(x, t)| (x.view(), t.as_slice())),
    };
    let model = config
        .architecture
        .build(dataset.inputs(), dataset.num_classes(), config.train.seed)?;
    let result = run_lpdssl_with(model, &dataset, &config, &eval, |r| {
        eprint!("{}", format_reports(std::slice::from_ref(r)).unwrap_or_default());
    })?;
    save_run(&args.out, &config, &dataset, &result)?;

    let mut summary = format!("final: epochs {}", result.reports.len());
    if let Some(r) = result.reports.last() {
        if let Some(acc) = r.pseudo_label_accuracy {
            write!(summary, ", pseudo-label accuracy {acc:.4}").expect("writing to a String");
        }
    }
    match result.final_test_accuracy() {
        Some(acc) => write!(summary, ", test accuracy {acc:.4}"),
        None => write!(summary, ", test accuracy n/a"),
    }
    .expect("writing to a String");
    println!("{summary}");
    Ok(())
}

fn opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

pub fn export_plot(args: &ExportPlotArgs) -> CmdResult {
    check_run_dir(&args.run_dir)?;
    let csv = match args.what {
        PlotKind::Points => {
            let inputs = load_inputs(&args.run_dir)?;
            if inputs.ncols() < 2 {
                return Err(Failure::usage("points export needs at least 2 input dimensions"));
            }
            let record = load_propagation(&args.run_dir)
                .context("run has no propagation record; was it trained with zero iterative epochs?")?;
            let n = inputs.nrows();
            let classes = record
                .all_classes(n)
                .ok_or_else(|| anyhow::anyhow!("propagation record does not cover all {n} points"))?;
            let mut omega = vec![1.0; n];
            for (e, &w) in record.pseudo_labels.iter().zip(&record.omega) {
                omega[e.index] = w;
            }
            let mut out = String::from("x,y,class,omega\n");
            for (i, row) in inputs.rows().into_iter().enumerate() {
                writeln!(out, "{},{},{},{}", row[0], row[1], classes[i], omega[i]).expect("writing to a String");
            }
            out
        }
        PlotKind::Accuracy => {
            let reports = load_reports(&args.run_dir)?;
            let mut out = String::from("epoch,pseudo_label_accuracy,test_accuracy,test_error,mean_omega,train_loss\n");
            for r in &reports {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.epoch,
                    opt(r.pseudo_label_accuracy),
                    opt(r.test_accuracy),
                    opt(r.test_error),
                    r.mean_omega,
                    r.train_loss
                )
                .expect("writing to a String");
            }
            out
        }
    };
    write_output(args.out.as_ref(), &csv)
}
