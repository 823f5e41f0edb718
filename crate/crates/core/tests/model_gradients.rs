mod common;

use labelprop::dataset::{generate_two_moons, select_labels};
use labelprop::encoding::{LandmarkConfig, LandmarkEncoding};
use labelprop::graph::{build_affinity, GraphConfig};
use labelprop::model::{supervised_loss, weighted_loss, Batch};
use labelprop::pipeline::{Architecture, PipelineConfig, Trainer};
use labelprop::Model;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use common::*;

fn random_model(rng: &mut ChaCha8Rng, instance: usize) -> Model {
    let p = rng.random_range(1..=4);
    let c = rng.random_range(2..=4);
    if instance % 4 == 3 {
        let centers = Array2::from_shape_fn((rng.random_range(3..=12), p), |_| rng.random_range(-1.0..1.0));
        let enc = LandmarkEncoding::new(centers, rng.random_range(0.3..1.0)).unwrap();
        let mut model = Model::landmark(enc, c, rng.random()).unwrap();
        // move away from the identity so the projection gradient is generic
        let params: Vec<f64> = model
            .params_flat()
            .iter()
            .map(|v| v + 0.2 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        model.set_params_flat(&params).unwrap();
        model
    } else {
        let depth = rng.random_range(0..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=8)).collect();
        Model::mlp(p, &hidden, rng.random_range(2..=6), c, rng.random()).unwrap()
    }
}

fn random_batch(rng: &mut ChaCha8Rng, model: &Model, size: usize) -> (Array2<f64>, Vec<usize>) {
    let x = Array2::from_shape_fn((size, model.input_dim()), |_| rng.sample::<f64, _>(StandardNormal));
    let y = (0..size).map(|_| rng.random_range(0..model.num_classes())).collect();
    (x, y)
}

fn loss_at(model: &Model, params: &[f64], f: impl Fn(&Model) -> f64) -> f64 {
    let mut probe = model.clone();
    probe.set_params_flat(params).unwrap();
    f(&probe)
}

#[test]
fn supervised_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for instance in 0..20 {
        let model = random_model(&mut rng, instance);
        let size = rng.random_range(1..=6);
        let (x, y) = random_batch(&mut rng, &model, size);
        let (_, grads) = supervised_loss(&model, x.view(), &y).unwrap();
        let fd = central_differences(&model.params_flat(), 1e-5, |p| {
            loss_at(&model, p, |m| supervised_loss(m, x.view(), &y).unwrap().0)
        });
        let err = relative_error(&grads.to_flat(), &fd, 1e-6);
        assert!(err <= 1e-4, "instance {instance}: {err}");
    }
}

#[test]
fn weighted_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for instance in 0..20 {
        let model = random_model(&mut rng, instance);
        let (n_l, n_u) = (rng.random_range(1..=4), rng.random_range(0..=6));
        let (xl, yl) = random_batch(&mut rng, &model, n_l);
        let (xu, yu) = random_batch(&mut rng, &model, n_u);
        let omega: Vec<f64> = (0..yu.len()).map(|_| rng.random()).collect();
        let zeta: Vec<f64> = (0..model.num_classes()).map(|_| rng.random_range(0.1..2.0)).collect();
        let eval = |m: &Model| {
            weighted_loss(
                m,
                Batch { inputs: xl.view(), targets: &yl },
                Batch { inputs: xu.view(), targets: &yu },
                &omega,
                &zeta,
            )
            .unwrap()
        };
        let (_, grads) = eval(&model);
        let fd = central_differences(&model.params_flat(), 1e-5, |p| loss_at(&model, p, |m| eval(m).0));
        let err = relative_error(&grads.to_flat(), &fd, 1e-6);
        assert!(err <= 1e-4, "instance {instance}: {err}");
    }
}

#[test]
fn loss_ignores_batch_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = random_model(&mut rng, 0);
    let (x, y) = random_batch(&mut rng, &model, 8);
    let order = [3, 1, 7, 0, 5, 2, 6, 4];
    let xp = x.select(ndarray::Axis(0), &order);
    let yp: Vec<usize> = order.iter().map(|&i| y[i]).collect();
    let (a, ga) = supervised_loss(&model, x.view(), &y).unwrap();
    let (b, gb) = supervised_loss(&model, xp.view(), &yp).unwrap();
    assert!((a - b).abs() <= 1e-12);
    assert!(relative_error(&ga.to_flat(), &gb.to_flat(), 1e-12) <= 1e-12);
}

fn phase1_losses(architecture: Architecture) -> Vec<f64> {
    let truth = generate_two_moons(300, 0.1, 1).unwrap();
    let ds = select_labels(&truth, 3, 1).unwrap();
    let cfg = PipelineConfig {
        architecture,
        ..Default::default()
    };
    let model = cfg.architecture.build(ds.inputs(), 2, 1).unwrap();
    let mut trainer = Trainer::new(model, cfg);
    (0..10).map(|_| trainer.supervised_epoch(&ds).unwrap()).collect()
}

#[test]
fn phase1_loss_strictly_decreases() {
    for architecture in [
        Architecture::default(),
        Architecture::Mlp {
            hidden: vec![64, 64],
            descriptor_dim: 16,
        },
    ] {
        let losses = phase1_losses(architecture.clone());
        for pair in losses.windows(2) {
            assert!(pair[1] < pair[0], "{architecture:?}: {losses:?}");
        }
    }
}

#[test]
fn descriptor_affinities_lie_in_unit_interval() {
    let truth = generate_two_moons(200, 0.1, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mlp = Model::mlp(2, &[64, 64], 16, 2, 2).unwrap();
    let enc = LandmarkEncoding::covering(truth.inputs.view(), &LandmarkConfig::default()).unwrap();
    let mut lifted = Model::landmark(enc, 2, 2).unwrap();
    let params: Vec<f64> = lifted.params_flat().iter().map(|v| v + 0.1 * rng.random::<f64>()).collect();
    lifted.set_params_flat(&params).unwrap();
    for model in [mlp, lifted] {
        let desc = model.descriptors(truth.inputs.view()).unwrap();
        for row in desc.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-12);
        }
        let a = build_affinity(desc.view(), &GraphConfig { k: 10, ..Default::default() }).unwrap();
        assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let truth = generate_two_moons(50, 0.1, 0).unwrap();
    let enc = LandmarkEncoding::covering(truth.inputs.view(), &LandmarkConfig::default()).unwrap();
    for model in [Model::mlp(2, &[8, 4], 3, 2, 9).unwrap(), Model::landmark(enc, 2, 9).unwrap()] {
        let bytes = model.to_checkpoint_bytes();
        let back = Model::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back.to_checkpoint_bytes(), bytes);
        let p = model.forward_batch(truth.inputs.view()).unwrap().probabilities;
        let q = back.forward_batch(truth.inputs.view()).unwrap().probabilities;
        assert!(max_abs_diff(&p, &q) < 1e-5);
    }
}
