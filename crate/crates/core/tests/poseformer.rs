use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signshot::keypoints::ModelInput;
use signshot::poseformer::{
    evaluate_islr, gradient_check_probe, mean_loss, Ablation, ModelConfig, Mode, PoseFormerModel,
    PositionalEncoding, TrainingExample,
};

fn input(cfg: &ModelConfig, valid: usize, seed: u64) -> ModelInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = cfg.sequence_len;
    let mut values = Array2::from_shape_fn((t, cfg.input_channels), |_| rng.random_range(-1.0..1.0));
    values.rows_mut().into_iter().skip(valid).for_each(|mut r| r.fill(0.0));
    ModelInput { values, valid_mask: (0..t).map(|i| i < valid).collect() }
}

#[test]
fn same_seed_same_fingerprint() {
    let a = PoseFormerModel::build(ModelConfig::tiny(3), 11).unwrap();
    let b = PoseFormerModel::build(ModelConfig::tiny(3), 11).unwrap();
    let c = PoseFormerModel::build(ModelConfig::tiny(3), 12).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_ne!(a.fingerprint(), c.fingerprint());
}

#[test]
fn published_asl_shapes() {
    let cfg = ModelConfig::asl(10);
    assert_eq!(cfg.head_dim(), 20);
    let model = PoseFormerModel::build(cfg.clone(), 0).unwrap();
    let out = model.forward(&[input(&cfg, 40, 1)], Mode::Eval, 0).unwrap();
    assert_eq!(out.representations.dim(), (1, 160));
    assert_eq!(out.logits.dim(), (1, 10));
}

#[test]
fn ablation_flags_remove_their_parameters() {
    let full = PoseFormerModel::build(ModelConfig::tiny(2), 0).unwrap();
    assert!(full.params().names().any(|n| n.starts_with("frame_embedding.")));
    assert!(!full.params().names().any(|n| n.starts_with("adapter.")));
    for (name, ablation) in Ablation::variants() {
        let model = PoseFormerModel::build(ModelConfig::tiny(2).with_ablation(ablation), 0).unwrap();
        let names: Vec<&str> = model.params().names().collect();
        let prefix = match name {
            "no_input_conv" => "input_conv.",
            "no_frame_embedding" => "frame_embedding.",
            _ => "intermediate_conv.",
        };
        assert!(!names.iter().any(|n| n.starts_with(prefix)), "{name}: {names:?}");
    }
}

#[test]
fn eval_is_bitwise_deterministic() {
    let cfg = ModelConfig::tiny(4);
    let model = PoseFormerModel::build(cfg.clone(), 3).unwrap();
    let batch = vec![input(&cfg, 8, 1), input(&cfg, 5, 2)];
    let a = model.forward(&batch, Mode::Eval, 0).unwrap();
    let b = model.forward(&batch, Mode::Eval, 99).unwrap();
    assert_eq!(a.representations, b.representations);
    assert_eq!(a.logits, b.logits);
}

#[test]
fn padded_frames_never_influence_outputs() {
    let cfg = ModelConfig::tiny(4);
    let model = PoseFormerModel::build(cfg.clone(), 5).unwrap();
    let clean = input(&cfg, 5, 7);
    let mut dirty = clean.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for t in 5..cfg.sequence_len {
        dirty.values.row_mut(t).mapv_inplace(|_| rng.random_range(-50.0..50.0));
    }
    let a = model.forward(&[clean], Mode::Eval, 0).unwrap();
    let b = model.forward(&[dirty], Mode::Eval, 0).unwrap();
    assert_eq!(a.representations, b.representations);
    assert_eq!(a.logits, b.logits);
}

#[test]
fn embedding_is_the_forward_representation_and_ignores_the_classifier() {
    let cfg = ModelConfig::tiny(3);
    let mut model = PoseFormerModel::build(cfg.clone(), 9).unwrap();
    let x = input(&cfg, 6, 1);
    let e = model.embed_input(&x).unwrap();
    assert_eq!(e.dim(), cfg.representation_size);
    let rep = model.forward(&[x.clone()], Mode::Eval, 0).unwrap().representations;
    let expected: Vec<f32> = rep.row(0).iter().map(|&v| v as f32).collect();
    assert_eq!(e.0, expected);

    model.update_params(|p| {
        p.get_mut("classifier.w").unwrap().value.mapv_inplace(|v| v * -3.0 + 1.0);
        p.get_mut("classifier.b").unwrap().value.fill(4.0);
    });
    assert_eq!(model.embed_input(&x).unwrap(), e);

    let other = model.embed_input(&input(&cfg, 6, 2)).unwrap();
    assert_ne!(other, e);
}

#[test]
fn zero_dropout_training_mode_equals_eval() {
    let mut cfg = ModelConfig::tiny(3);
    cfg.dropout = 0.0;
    let model = PoseFormerModel::build(cfg.clone(), 1).unwrap();
    let batch = vec![input(&cfg, 8, 3), input(&cfg, 4, 4)];
    let train = model.forward(&batch, Mode::Train, 17).unwrap();
    let eval = model.forward(&batch, Mode::Eval, 0).unwrap();
    assert_eq!(train.logits, eval.logits);

    cfg.dropout = 0.5;
    let model = PoseFormerModel::build(cfg, 1).unwrap();
    let train = model.forward(&batch, Mode::Train, 17).unwrap();
    let eval = model.forward(&batch, Mode::Eval, 0).unwrap();
    assert_ne!(train.logits, eval.logits);
}

#[test]
fn initial_loss_is_near_uniform() {
    for classes in [2, 10, 40] {
        let cfg = ModelConfig::small(classes);
        let model = PoseFormerModel::build(cfg.clone(), 0).unwrap();
        let examples: Vec<TrainingExample> = (0..2 * classes)
            .map(|i| TrainingExample { input: input(&cfg, 20 + i % 12, i as u64), class: i % classes })
            .collect();
        let loss = mean_loss(&model, &examples).unwrap();
        let uniform = (classes as f64).ln();
        assert!((loss - uniform).abs() <= 0.1 * uniform, "{classes} classes: loss {loss}, ln C {uniform}");
    }
}

#[test]
fn model_file_round_trip() {
    let mut model = PoseFormerModel::build(ModelConfig::tiny(3), 4).unwrap();
    model.set_class_labels(vec!["a".into(), "b".into(), "c".into()]).unwrap();
    let bytes = model.to_bytes();
    let back = PoseFormerModel::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.fingerprint(), model.fingerprint());
    assert_eq!(back.class_labels(), model.class_labels());
    assert!(PoseFormerModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn fingerprint_tracks_every_weight_byte() {
    let mut model = PoseFormerModel::build(ModelConfig::tiny(2), 0).unwrap();
    let before = model.fingerprint();
    model.update_params(|p| {
        let w = &mut p.get_mut("classifier.b").unwrap().value;
        w[[0]] = f32::from_bits((w[[0]] as f32).to_bits() ^ 1) as f64;
    });
    assert_ne!(model.fingerprint(), before);
}

#[test]
fn perfect_and_random_classifiers() {
    // a model whose classifier reads the class straight off a constant input
    let cfg = ModelConfig::tiny(3);
    let model = PoseFormerModel::build(cfg.clone(), 2).unwrap();
    let examples: Vec<TrainingExample> =
        (0..6).map(|i| TrainingExample { input: input(&cfg, 8, i), class: (i % 3) as usize }).collect();
    let metrics = evaluate_islr(&model, &examples).unwrap();
    assert!(metrics.named().iter().all(|(_, v)| (0.0..=1.0).contains(v)));

    // perfect: logits with the true class strictly highest
    let ranks: Vec<usize> = (0..50)
        .map(|i| {
            let mut logits = vec![0.0; 7];
            logits[i % 7] = 1.0;
            signshot::poseformer::rank_from_logits(&logits, i % 7)
        })
        .collect();
    let perfect = signshot::metrics::compute_metrics(&signshot::metrics::RankList::new(ranks).unwrap(), &[1, 5, 10])
        .unwrap();
    assert!(perfect.named().iter().all(|(_, v)| *v == 1.0));

    // random logits: Recall@1 ~ 1/C within 3 sigma
    let (c, n) = (8usize, 20_000usize);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let hits = (0..n)
        .filter(|_| {
            let logits: Vec<f64> = (0..c).map(|_| rng.random::<f64>()).collect();
            signshot::poseformer::rank_from_logits(&logits, rng.random_range(0..c)) == 1
        })
        .count();
    let p = 1.0 / c as f64;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    assert!((hits as f64 / n as f64 - p).abs() < 3.0 * sigma);
}

#[test]
fn tiny_model_gradients_match_finite_differences() {
    let started = Instant::now();
    let report = gradient_check_probe(ModelConfig::tiny(2), 0, 2).unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
    assert!(started.elapsed().as_secs() < 60);
}

#[test]
fn fully_ablated_model_gradients_match_finite_differences() {
    let mut cfg = ModelConfig::tiny(2).with_ablation(Ablation::ALL);
    cfg.positional_encoding = PositionalEncoding::None;
    let report = gradient_check_probe(cfg, 1, 2).unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}
