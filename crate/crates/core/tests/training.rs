use binsight::checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint};
use binsight::data::{tta_views, AugmentPolicy, LabelVocabulary, Split};
use binsight::model::{LayerGroup, Model, ModelConfig};
use binsight::optim::{adam_step, AdamConfig, AdamState};
use binsight::synth::{generate, SynthConfig, SHAPES};
use binsight::train::{fit, predict_records, predict_tta, validate, TrainConfig};
use binsight::{rng, Tensor};
use rand::Rng;

fn tiny() -> binsight::synth::SynthDataset {
    generate(&SynthConfig { train: 96, valid: 24, test: 16, seed: 3, ..Default::default() }).unwrap()
}

fn vocab() -> LabelVocabulary {
    LabelVocabulary::from_names(&SHAPES).unwrap()
}

fn quick_cfg(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 2, batch_size: 32, seed, ..Default::default() }
}

fn trained(seed: u64) -> (Model, binsight::train::FitReport) {
    let data = tiny();
    let mut model = Model::build(ModelConfig::desk(4), &mut rng::seeded(1)).unwrap();
    let rep = fit(
        &mut model,
        &data.split(Split::Train),
        &data.split(Split::Valid),
        &vocab(),
        &AugmentPolicy::desk(),
        &data.source(),
        &quick_cfg(seed),
    )
    .unwrap();
    (model, rep)
}

fn random_input(seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    Tensor::new(vec![3, 36, 47], (0..3 * 36 * 47).map(|_| r.gen_range(-2.0..2.0)).collect()).unwrap()
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let (model, _) = trained(0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&model, Some(&vocab()), &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    back.check_vocab(&vocab()).unwrap();
    assert_eq!(back.model, model);
    let x = random_input(5);
    let (a, b) = (model.logits(&x).unwrap(), back.model.logits(&x).unwrap());
    assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    let bytes = checkpoint_bytes(&model, Some(&vocab())).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(parse_checkpoint(&bytes).unwrap().model, model);
}

#[test]
fn fit_is_deterministic_and_seed_sensitive() {
    let (m1, r1) = trained(11);
    let (m2, r2) = trained(11);
    let (m3, r3) = trained(12);
    assert_eq!(m1, m2);
    assert_eq!(r1.to_json().unwrap(), r2.to_json().unwrap());
    assert_ne!(m1, m3);
    assert_ne!(r1.train_loss, r3.train_loss);
    assert_eq!(r1.steps, 2 * 3);
    assert_eq!(r1.lr_trace.len(), r1.steps);
}

#[test]
fn fit_does_not_depend_on_thread_count() {
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| trained(4))
    };
    let (a, ra) = run(1);
    let (b, rb) = run(4);
    assert_eq!(a, b);
    assert_eq!(ra.to_json().unwrap(), rb.to_json().unwrap());
}

#[test]
fn checkpoints_written_per_epoch() {
    let data = tiny();
    let dir = tempfile::tempdir().unwrap();
    let mut model = Model::build(ModelConfig::desk(4), &mut rng::seeded(1)).unwrap();
    let cfg = TrainConfig { checkpoint_dir: Some(dir.path().to_path_buf()), ..quick_cfg(0) };
    let rep = fit(
        &mut model,
        &data.split(Split::Train),
        &data.split(Split::Valid),
        &vocab(),
        &AugmentPolicy::desk(),
        &data.source(),
        &cfg,
    )
    .unwrap();
    assert_eq!(load_checkpoint(&dir.path().join("final.ckpt")).unwrap().model, model);
    assert!(dir.path().join("best.ckpt").exists());
    assert!(rep.best_epoch.is_some());
}

#[test]
fn tta_is_mean_of_view_sigmoids() {
    let model = Model::build(ModelConfig::desk(4), &mut rng::seeded(2)).unwrap();
    let data = tiny();
    let policy = AugmentPolicy::desk();
    let img = &data.images[0];
    let got = predict_tta(&model, img, &policy, 5, &mut rng::seeded(6)).unwrap();
    let views = tta_views(img, &policy, 5, &mut rng::seeded(6)).unwrap();
    for (k, g) in got.iter().enumerate() {
        let want = views.iter().map(|v| 1.0 / (1.0 + (-model.logits(v).unwrap()[k]).exp())).sum::<f64>() / 5.0;
        assert!((g - want).abs() <= 1e-12);
    }
    let test = data.split(Split::Test);
    let scores = predict_records(&model, &test, &data.source(), &policy, 5, 9).unwrap();
    assert_eq!(scores, predict_records(&model, &test, &data.source(), &policy, 5, 9).unwrap());
    assert_eq!((scores.rows(), scores.cols()), (test.len(), 4));
}

#[test]
fn zero_gradient_groups_stay_frozen() {
    let mut model = Model::build(ModelConfig::desk(4), &mut rng::seeded(3)).unwrap();
    let before = model.param_values();
    let groups: Vec<LayerGroup> = model.params().iter().map(|p| p.group).collect();
    let x = vec![random_input(1), random_input(2)];
    let y = vec![
        binsight::LabelVector::new(vec![1, 0, 1, 0]).unwrap(),
        binsight::LabelVector::new(vec![0, 1, 0, 0]).unwrap(),
    ];
    let (_, mut grads) = model.loss_and_grad(&x, &y).unwrap();
    for (g, grad) in groups.iter().zip(grads.iter_mut()) {
        if *g != LayerGroup::Head {
            *grad = Tensor::zeros(grad.shape());
        }
    }
    let lrs = vec![1e-2; grads.len()];
    let mut values = model.param_values();
    let mut state = AdamState::new(&values, AdamConfig::default());
    let mut refs: Vec<&mut Tensor> = values.iter_mut().collect();
    adam_step(&mut refs, &grads, &mut state, &lrs).unwrap();
    model.set_param_values(values).unwrap();
    for ((p, old), g) in model.params().iter().zip(&before).zip(&groups) {
        if *g == LayerGroup::Head {
            assert_ne!(&p.value, old, "{}", p.name);
        } else {
            assert_eq!(&p.value, old, "{}", p.name);
        }
    }
}

#[test]
fn validation_loss_ignores_record_order() {
    let data = tiny();
    let model = Model::build(ModelConfig::desk(4), &mut rng::seeded(4)).unwrap();
    let mut records = data.split(Split::Valid);
    let policy = AugmentPolicy::desk();
    let a = validate(&model, &records, &vocab(), &policy, &data.source()).unwrap();
    records.reverse();
    let b = validate(&model, &records, &vocab(), &policy, &data.source()).unwrap();
    assert!((a - b).abs() <= 1e-12);
}
