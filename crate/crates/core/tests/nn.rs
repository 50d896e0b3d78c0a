use tnlayers::data::{synthetic_images, synthetic_separable, FloatSet, NormMode, Normalizer};
use tnlayers::init::Rng;
use tnlayers::nn::{
    evaluate, load_checkpoint, read_metrics, save_checkpoint, train, write_metrics, AdamConfig, DropoutConfig,
    HeadKind, Model, ModelConfig, StopReason, TrainConfig, TrainData,
};
use tnlayers::{Error, Tensor};

fn small(head: HeadKind, classes: usize) -> ModelConfig {
    ModelConfig {
        input: [16, 16, 1],
        conv_channels: vec![8, 8, 8, 8, 8, 16],
        head,
        fc2_width: 8,
        head_in: 64,
        head_out: 16,
        classes,
        ..ModelConfig::default()
    }
}

fn floats(ds: &tnlayers::data::Dataset) -> FloatSet {
    Normalizer::fit(ds, NormMode::PerPixel).unwrap().apply(ds)
}

#[test]
fn separable_toy_is_learned_perfectly() {
    let ds = floats(&synthetic_separable(200, 16, 1, 3));
    let mut cfg = small(HeadKind::Fc2, 2);
    cfg.dropout = DropoutConfig::off();
    let model = Model::build(&cfg, &Rng::new(1)).unwrap();
    let tc = TrainConfig {
        batch_size: 20,
        check_interval: 100,
        patience: 10,
        max_iter: Some(2000),
        augment: false,
        seed: 1,
        ..TrainConfig::default()
    };
    let data = TrainData {
        train: &ds,
        val: &ds,
        test: &ds,
    };
    let out = train(model, &data, &tc, |_| {}).unwrap();
    assert!(out.iterations <= 2000);
    assert_eq!(out.best.val_acc, 1.0, "{:?}", out.metrics);
    assert_eq!(evaluate(&out.best.model, &ds, 64).unwrap(), 1.0);
}

#[test]
fn flat_validation_stops_after_ten_checks() {
    let ds = floats(&synthetic_images(40, 3, 16, 1, 20.0, 2));
    let mut cfg = small(HeadKind::Mera, 3);
    cfg.batch_norm = false;
    let model = Model::build(&cfg, &Rng::new(0)).unwrap();
    let tc = TrainConfig {
        batch_size: 10,
        check_interval: 3,
        adam: AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    let data = TrainData {
        train: &ds,
        val: &ds,
        test: &ds,
    };
    let out = train(model, &data, &tc, |_| {}).unwrap();
    assert_eq!(out.stop, StopReason::Patience);
    assert_eq!(out.metrics.len(), 11);
    assert_eq!(out.iterations, 33);
    assert_eq!(out.best.iteration, 3);
}

fn run(seed: u64, dir: &std::path::Path, name: &str) -> (Vec<f64>, std::path::PathBuf) {
    let ds = floats(&synthetic_images(60, 3, 16, 1, 40.0, 5));
    let model = Model::build(&small(HeadKind::Tt, 3), &Rng::new(seed)).unwrap();
    let tc = TrainConfig {
        batch_size: 10,
        check_interval: 5,
        max_iter: Some(20),
        seed,
        ..TrainConfig::default()
    };
    let data = TrainData {
        train: &ds,
        val: &ds,
        test: &ds,
    };
    let out = train(model, &data, &tc, |_| {}).unwrap();
    let mut rows = out.metrics.clone();
    rows.iter_mut().for_each(|r| r.wall_ms = 0);
    let path = dir.join(name);
    write_metrics(&path, &rows).unwrap();
    (out.losses, path)
}

#[test]
fn seeded_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (la, a) = run(9, dir.path(), "a.csv");
    let (lb, b) = run(9, dir.path(), "b.csv");
    let (lc, _) = run(10, dir.path(), "c.csv");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(la.iter().zip(&lb).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_ne!(la, lc);
    let rows = read_metrics(&a).unwrap();
    assert_eq!(rows.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![5, 10, 15, 20]);
}

#[test]
fn checkpoint_roundtrip_restores_the_best_state() {
    let ds = floats(&synthetic_images(30, 2, 16, 1, 30.0, 1));
    let model = Model::build(&small(HeadKind::Mera, 2), &Rng::new(4)).unwrap();
    let tc = TrainConfig {
        batch_size: 10,
        check_interval: 2,
        max_iter: Some(6),
        seed: 4,
        ..TrainConfig::default()
    };
    let data = TrainData {
        train: &ds,
        val: &ds,
        test: &ds,
    };
    let out = train(model, &data, &tc, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.ckpt");
    save_checkpoint(&path, &out.best).unwrap();
    assert_eq!(&std::fs::read(&path).unwrap()[..4], b"TNCK");
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.iteration, out.best.iteration);
    assert_eq!(back.adam.step, out.best.adam.step);
    assert_eq!(back.model.params, out.best.model.params);
    assert_eq!(back.adam.m, out.best.adam.m);
    assert_eq!(back.model.running, out.best.model.running);
    assert_eq!(evaluate(&back.model, &ds, 7).unwrap(), out.best.val_acc);
}

#[test]
fn eval_mode_is_a_deterministic_function() {
    let model = Model::<f32>::build(&small(HeadKind::Tt, 4), &Rng::new(2)).unwrap();
    let x = Tensor::from_fn(&[3, 16, 16, 1], |i| ((i[1] * 7 + i[2] * 3 + i[0]) % 11) as f32 / 11.0);
    let a = model.predict(x.clone()).unwrap();
    let b = model.predict(x).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn non_finite_loss_aborts_with_the_iteration() {
    let mut ds = floats(&synthetic_images(20, 2, 16, 1, 30.0, 1));
    ds.x.iter_mut().for_each(|v| *v = f32::NAN);
    let model = Model::build(&small(HeadKind::Fc1, 2), &Rng::new(0)).unwrap();
    let tc = TrainConfig {
        batch_size: 10,
        ..TrainConfig::default()
    };
    let data = TrainData {
        train: &ds,
        val: &ds,
        test: &ds,
    };
    match train(model, &data, &tc, |_| {}) {
        Err(Error::NonFinite(msg)) => assert!(msg.contains("iteration 1"), "{msg}"),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn mismatched_images_are_rejected() {
    let ds = floats(&synthetic_images(20, 2, 8, 1, 30.0, 1));
    let model = Model::build(&small(HeadKind::Fc1, 2), &Rng::new(0)).unwrap();
    let data = TrainData {
        train: &ds,
        val: &ds,
        test: &ds,
    };
    assert!(matches!(train(model, &data, &TrainConfig::default(), |_| {}), Err(Error::Config(_))));
}
