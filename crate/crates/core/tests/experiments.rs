use signshot::dataset::Dataset;
use signshot::experiments::{
    perturbation_from_embeddings, pretrain, run_perturbation, run_scaling, scaling_from_embeddings,
    split_disjoint_classes, synth_generate, synth_prototypes, training_examples, ExperimentError, OneShotPool,
    ProtocolOptions, SynthConfig, METRICS_CSV_HEADER, SUMMARY_CSV_HEADER,
};
use signshot::keypoints::{resample_uniform, KeypointSequence};
use signshot::poseformer::{evaluate_islr, ModelConfig, PoseFormerModel, TrainConfig};

fn small_synth(classes: usize, samples: usize, seed: u64) -> SynthConfig {
    SynthConfig { num_classes: classes, samples_per_class: samples, min_len: 12, max_len: 24, seed, ..SynthConfig::default() }
}

fn rms(a: &KeypointSequence, b: &KeypointSequence) -> f64 {
    let (a, b) = (resample_uniform(a, 32), resample_uniform(b, 32));
    let mut sum = 0.0;
    let mut n = 0;
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        for (pa, pb) in fa.coords.iter().zip(&fb.coords) {
            for d in 0..3 {
                sum += (pa[d] - pb[d]).powi(2);
                n += 1;
            }
        }
    }
    (sum / n as f64).sqrt()
}

#[test]
fn noiseless_unwarped_samples_are_identical() {
    let cfg = SynthConfig { noise: 0.0, warp: 0.0, ..small_synth(4, 3, 1) };
    let data = synth_generate(&cfg).unwrap();
    for idx in data.by_label().values() {
        let first = &data.items[idx[0]].sequence.frames;
        assert!(idx.iter().all(|&i| &data.items[i].sequence.frames == first));
    }
}

#[test]
fn generation_is_seeded() {
    let a = synth_generate(&small_synth(5, 4, 3)).unwrap();
    let b = synth_generate(&small_synth(5, 4, 3)).unwrap();
    let c = synth_generate(&small_synth(5, 4, 4)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.len(), 20);
    assert_eq!(a.labels().len(), 5);
    let lens: Vec<usize> = a.items.iter().map(|it| it.sequence.len()).collect();
    assert!(lens.iter().all(|&l| (12..=24).contains(&l)));
}

#[test]
fn prototypes_are_far_apart_relative_to_small_noise() {
    let cfg = SynthConfig { noise: 1e-3, warp: 0.0, ..small_synth(30, 5, 11) };
    let protos = synth_prototypes(&cfg).unwrap();
    let data = synth_generate(&cfg).unwrap();
    let intra = data
        .by_label()
        .values()
        .enumerate()
        .flat_map(|(c, idx)| idx.iter().map(move |&i| (c, i)))
        .map(|(c, i)| rms(&protos[c], &data.items[i].sequence))
        .fold(0.0, f64::max);
    let mut inter = f64::INFINITY;
    for i in 0..protos.len() {
        for j in i + 1..protos.len() {
            inter = inter.min(rms(&protos[i], &protos[j]));
        }
    }
    assert!(inter > 10.0 * intra, "inter {inter} intra {intra}");
}

#[test]
fn invalid_synth_configs() {
    for bad in [
        SynthConfig { num_classes: 0, ..SynthConfig::default() },
        SynthConfig { min_len: 10, max_len: 5, ..SynthConfig::default() },
        SynthConfig { noise: -1.0, ..SynthConfig::default() },
        SynthConfig { warp: 0.5, ..SynthConfig::default() },
        SynthConfig { control_points: 1, ..SynthConfig::default() },
    ] {
        assert!(matches!(synth_generate(&bad), Err(ExperimentError::InvalidConfig(_))), "{bad:?}");
    }
}

#[test]
fn class_split_is_disjoint_complete_and_seeded() {
    let data = synth_generate(&SynthConfig { min_len: 2, max_len: 3, samples_per_class: 2, ..SynthConfig::default() })
        .unwrap();
    let (pre, one) = split_disjoint_classes(&data, 0.6, 5).unwrap();
    let (pl, ol) = (pre.labels(), one.labels());
    assert_eq!((pl.len(), ol.len()), (60, 40));
    assert!(pl.iter().all(|l| !ol.contains(l)));
    let mut union = [pl.clone(), ol].concat();
    union.sort();
    assert_eq!(union, data.labels());
    assert_eq!(pre.len() + one.len(), data.len());
    let (again, _) = split_disjoint_classes(&data, 0.6, 5).unwrap();
    assert_eq!(again, pre);
    let (other, _) = split_disjoint_classes(&data, 0.6, 6).unwrap();
    assert_ne!(other.labels(), pl);

    assert!(matches!(split_disjoint_classes(&data, 1.0, 0), Err(ExperimentError::InvalidFraction(_))));
    let single = data.filter_labels(|l| l == "sign-0000");
    assert!(matches!(split_disjoint_classes(&single, 0.5, 0), Err(ExperimentError::TooFewClasses(1))));
}

#[test]
fn dataset_directory_round_trip() {
    let data = synth_generate(&small_synth(3, 2, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.write_dir(dir.path()).unwrap();
    assert!(dir.path().join("sign-0001/0001.json").is_file());
    let back = Dataset::load_dir(dir.path()).unwrap();
    assert_eq!(back, data);

    let flat = tempfile::tempdir().unwrap();
    std::fs::write(flat.path().join("hello.json"), signshot::keypoints::write_poseseq(&data.items[0].sequence)).unwrap();
    let dict = Dataset::load_dir(flat.path()).unwrap();
    assert_eq!(dict.labels(), ["hello"]);
    assert!(Dataset::load_dir(tempfile::tempdir().unwrap().path()).is_err());
}

fn frozen_model(seed: u64) -> PoseFormerModel {
    PoseFormerModel::build(ModelConfig::tiny(2), seed).unwrap()
}

#[test]
fn perturbation_protocol() {
    let data = synth_generate(&small_synth(6, 5, 8)).unwrap();
    let model = frozen_model(1);
    let pool = OneShotPool::split(&data, 3).unwrap();
    let opts = ProtocolOptions { seed: 40, ..ProtocolOptions::default() };
    let report = run_perturbation(&pool, &model, 12, &opts).unwrap();
    assert_eq!(report.rows.len(), 12);
    assert_eq!(report.rows.iter().map(|r| r.seed).collect::<Vec<_>>(), (40..52).collect::<Vec<_>>());
    assert!(report.rows.iter().all(|r| r.n_support == 6));
    let again = run_perturbation(&pool, &model, 12, &opts).unwrap();
    assert_eq!(again, report);
    assert_eq!(again.metrics_csv(), report.metrics_csv());
    assert_eq!(again.summary_csv(), report.summary_csv());
    assert_eq!(report.metrics_csv().lines().next(), Some(METRICS_CSV_HEADER));
    assert_eq!(report.summary_csv().lines().next(), Some(SUMMARY_CSV_HEADER));
    assert_eq!(report.summary_for("perturbation", "mrr").unwrap().n_seeds, 12);

    let single = OneShotPool::split(&data, 1).unwrap();
    let flat = run_perturbation(&single, &model, 5, &opts).unwrap();
    for s in &flat.summary {
        assert_eq!(s.std, Some(0.0), "{s:?}");
    }

    assert!(matches!(OneShotPool::split(&data, 5), Err(ExperimentError::NoQueries(_))));
    let candidates = data.filter_labels(|l| l != "sign-0005");
    let queries = data.filter_labels(|l| l == "sign-0000");
    assert!(matches!(OneShotPool::new(&candidates, queries), Err(ExperimentError::NoQueries(_))));
    let embedded = pool.embed(&model).unwrap();
    assert!(perturbation_from_embeddings(&embedded, 0, &opts).is_err());
}

#[test]
fn scaling_is_monotone_for_nested_dictionaries() {
    let data = synth_generate(&small_synth(12, 3, 9)).unwrap();
    let model = frozen_model(2);
    let pool = OneShotPool::split(&data, 1).unwrap();
    for seed in 0..5 {
        let opts = ProtocolOptions { seed, ..ProtocolOptions::default() };
        let report = run_scaling(&pool, &model, &[3, 6, 12], &opts).unwrap();
        assert_eq!(report.rows.iter().map(|r| r.n_support).collect::<Vec<_>>(), [3, 6, 12]);
        for w in report.rows.windows(2) {
            assert!(w[1].metrics.recall_at(1) <= w[0].metrics.recall_at(1));
            assert!(w[1].metrics.mrr <= w[0].metrics.mrr);
            assert!(w[1].metrics.ndcg <= w[0].metrics.ndcg);
        }
    }
    let embedded = pool.embed(&model).unwrap();
    let opts = ProtocolOptions::default();
    assert!(matches!(
        scaling_from_embeddings(&embedded, &[4, 13], &opts),
        Err(ExperimentError::SizeExceedsClasses { size: 13, classes: 12 })
    ));
    assert!(matches!(scaling_from_embeddings(&embedded, &[4, 4], &opts), Err(ExperimentError::SizesNotIncreasing)));
}

#[test]
fn overfits_a_tiny_task() {
    let data = synth_generate(&SynthConfig { num_classes: 5, samples_per_class: 20, seed: 21, ..SynthConfig::default() })
        .unwrap();
    let tcfg = TrainConfig { epochs: 50, patience: 0, validation_fraction: 0.0, batch_size: 16, ..TrainConfig::small() };
    let (model, outcome) = pretrain(&data, ModelConfig::small(0), &tcfg, 3).unwrap();
    let best = outcome.history.iter().map(|h| h.train_accuracy).fold(0.0, f64::max);
    assert!(best >= 0.95, "best train accuracy {best}");
    let (_, examples) = training_examples(&data, 32).unwrap();
    assert!(evaluate_islr(&model, &examples).unwrap().recall_at(1).unwrap() >= 0.95);
    assert_eq!(model.class_labels(), data.labels());
}

#[test]
fn training_is_reproducible() {
    let data = synth_generate(&small_synth(3, 6, 4)).unwrap();
    let tcfg = TrainConfig { epochs: 2, batch_size: 5, ..TrainConfig::small() };
    let (a, ha) = pretrain(&data, ModelConfig::tiny(0), &tcfg, 1).unwrap();
    let (b, hb) = pretrain(&data, ModelConfig::tiny(0), &tcfg, 1).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_eq!(ha.history, hb.history);
    let (c, _) = pretrain(&data, ModelConfig::tiny(0), &TrainConfig { seed: 9, ..tcfg }, 1).unwrap();
    assert_ne!(a.fingerprint(), c.fingerprint());
    // saved and reloaded weights are the trained ones exactly
    assert_eq!(PoseFormerModel::from_bytes(&a.to_bytes()).unwrap().fingerprint(), a.fingerprint());
}
