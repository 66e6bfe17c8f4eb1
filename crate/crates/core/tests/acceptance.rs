//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criteria 4-6 share one pretrained model, so this target runs its checks
//! sequentially from `main` instead of through the test harness.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signshot::dataset::Dataset;
use signshot::experiments::{
    pretrain, run_perturbation, run_scaling, split_disjoint_classes, synth_generate, ExperimentReport, OneShotPool,
    ProtocolOptions, SynthConfig,
};
use signshot::keypoints::{parse_poseseq, write_poseseq};
use signshot::metrics::{compute_metrics, RankList};
use signshot::poseformer::{gradient_check_probe, Ablation, EmbeddingVector, ModelConfig, PoseFormerModel, TrainConfig};
use signshot::retrieval::{build_support_set, RankedResult, Similarity, SupportOptions, SupportSet};

const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
const METRIC_LISTS: usize = 1000;
const HARMONIC_TOLERANCE: f64 = 1e-12;
const NORMALIZATION_DRIFT: f64 = 1e-5;
const TRAIN_BUDGET: Duration = Duration::from_secs(30 * 60);
const PERTURBATION_SEEDS: usize = 100;
const MIN_RECALL_AT_1: f64 = 0.25;
const MIN_MRR: f64 = 0.40;
const SCALING_SIZES: [usize; 3] = [10, 20, 40];
const CANDIDATES_PER_CLASS: usize = 10;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1 -------------------------------------------------------------------------

fn gradient_correctness() -> Outcome {
    let started = Instant::now();
    let report = gradient_check_probe(ModelConfig::tiny(2), 0, 2).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    check(
        report.max_relative_error < GRADCHECK_TOLERANCE && elapsed < GRADCHECK_BUDGET,
        format!(
            "max relative error {:.3e} over {} coordinates in {:.1}s",
            report.max_relative_error,
            report.coords_checked,
            elapsed.as_secs_f64()
        ),
    )
}

// 2 -------------------------------------------------------------------------

/// Scores an explicit ranked list of relevance flags with the textbook
/// definitions, knowing nothing about the single-relevant shortcut.
struct BruteForce {
    hits: Vec<usize>,
    reciprocal: f64,
    dcg: f64,
}

fn brute_force(ranks: &[usize], ks: &[usize]) -> BruteForce {
    let mut out = BruteForce { hits: vec![0; ks.len()], reciprocal: 0.0, dcg: 0.0 };
    for &r in ranks {
        let relevance: Vec<bool> = (1..=r.max(*ks.iter().max().unwrap())).map(|pos| pos == r).collect();
        for (j, &k) in ks.iter().enumerate() {
            if relevance[..k].iter().any(|&rel| rel) {
                out.hits[j] += 1;
            }
        }
        let first = relevance.iter().position(|&rel| rel).unwrap() + 1;
        out.reciprocal += 1.0 / first as f64;
        let dcg: f64 =
            relevance.iter().enumerate().map(|(i, &rel)| if rel { 1.0 / ((i + 2) as f64).log2() } else { 0.0 }).sum();
        let ideal = 1.0 / 2f64.log2();
        out.dcg += dcg / ideal;
    }
    out
}

fn metric_oracle() -> Outcome {
    let ks = [1, 5, 10];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_harmonic: f64 = 0.0;
    for list in 0..METRIC_LISTS {
        let len = rng.random_range(1..=200);
        let max_rank = rng.random_range(1..=60);
        let ranks: Vec<usize> = (0..len).map(|_| rng.random_range(1..=max_rank)).collect();
        let m = compute_metrics(&RankList::new(ranks.clone()).map_err(|e| e.to_string())?, &ks)
            .map_err(|e| e.to_string())?;
        let bf = brute_force(&ranks, &ks);
        let n = len as f64;
        for (j, &k) in ks.iter().enumerate() {
            if m.recall_at(k) != Some(bf.hits[j] as f64 / n) {
                return Err(format!("list {list}: recall@{k} {:?} vs {}", m.recall_at(k), bf.hits[j] as f64 / n));
            }
        }
        if m.mrr != bf.reciprocal / n || m.ndcg != bf.dcg / n {
            return Err(format!("list {list}: mrr {} vs {}, ndcg {} vs {}", m.mrr, bf.reciprocal / n, m.ndcg, bf.dcg / n));
        }
        let harmonic = n / ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>();
        worst_harmonic = worst_harmonic.max((1.0 / m.mrr - harmonic).abs() / harmonic);
    }
    check(
        worst_harmonic <= HARMONIC_TOLERANCE,
        format!("{METRIC_LISTS} lists exact; max |1/MRR - harmonic mean| relative {worst_harmonic:.2e}"),
    )
}

// 3 -------------------------------------------------------------------------

fn random_support(seed: u64, n: usize, d: usize, similarity: Similarity) -> SupportSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..n)
        .map(|i| (format!("sign-{i:03}"), EmbeddingVector((0..d).map(|_| rng.random_range(-2.0f32..2.0)).collect())))
        .collect();
    SupportSet::new(entries, [1; 32], SupportOptions { similarity, temperature: 1.0 }).unwrap()
}

fn random_query(seed: u64, d: usize) -> EmbeddingVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    EmbeddingVector((0..d).map(|_| rng.random_range(-2.0f32..2.0)).collect())
}

fn order(r: &RankedResult) -> Vec<String> {
    r.entries.iter().map(|e| e.label.clone()).collect()
}

fn run_property<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases: 256, failure_persistence: None, ..Config::default() });
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn retrieval_invariants() -> Outcome {
    let sim = (0u8..4).prop_map(|id| Similarity::from_id(id).unwrap());
    run_property("normalization", (any::<u64>(), 1usize..3000, 0.01f64..100.0, sim.clone()), |(seed, n, t, s)| {
        let support = random_support(seed, n, 16, s);
        let total: f64 = support.rank(&random_query(seed, 16), Some(t)).unwrap().entries.iter().map(|e| e.probability).sum();
        prop_assert!((total - 1.0).abs() <= NORMALIZATION_DRIFT, "sum {}", total);
        Ok(())
    })?;
    run_property("permutation", (any::<u64>(), 1usize..80, sim.clone()), |(seed, n, s)| {
        let support = random_support(seed, n, 12, s);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let q = random_query(seed, 12);
        let (a, b) = (support.rank(&q, None).unwrap(), support.select(&perm).unwrap().rank(&q, None).unwrap());
        for e in &a.entries {
            let other = b.entries.iter().find(|x| x.label == e.label).unwrap();
            prop_assert!((other.probability - e.probability).abs() <= 1e-12 * e.probability.max(1e-300));
        }
        let scores = support.scores(&q).unwrap();
        let distinct = scores.iter().enumerate().all(|(i, x)| scores[..i].iter().all(|y| y != x));
        if distinct {
            prop_assert_eq!(order(&a), order(&b));
        }
        Ok(())
    })?;
    run_property("temperature", (any::<u64>(), 1usize..80, 0.01f64..100.0, 0.01f64..100.0, sim), |(seed, n, t1, t2, s)| {
        let support = random_support(seed, n, 12, s);
        let q = random_query(seed, 12);
        prop_assert_eq!(order(&support.rank(&q, Some(t1)).unwrap()), order(&support.rank(&q, Some(t2)).unwrap()));
        Ok(())
    })?;
    run_property("cosine self-retrieval", (any::<u64>(), 1usize..80), |(seed, n)| {
        let support = random_support(seed, n, 16, Similarity::Cosine);
        for i in 0..n {
            let top = support.query_embedding(&EmbeddingVector(support.row(i).to_vec()), 1, None).unwrap();
            prop_assert_eq!(&top.entries[0].label, &support.labels()[i]);
        }
        Ok(())
    })?;
    Ok("normalization, permutation, temperature and cosine self-retrieval properties hold (256 cases each)".into())
}

// 4-6 -----------------------------------------------------------------------

struct Transfer {
    model: PoseFormerModel,
    pool: OneShotPool,
    report: ExperimentReport,
    train_time: Duration,
    epochs: usize,
}

fn one_shot_transfer() -> Result<Transfer, String> {
    let data = synth_generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let (pretrain_set, one_shot) = split_disjoint_classes(&data, 0.6, 7).map_err(|e| e.to_string())?;
    let started = Instant::now();
    let (model, outcome) =
        pretrain(&pretrain_set, ModelConfig::small(0), &TrainConfig::small(), 0).map_err(|e| e.to_string())?;
    let train_time = started.elapsed();
    let pool = OneShotPool::split(&one_shot, CANDIDATES_PER_CLASS).map_err(|e| e.to_string())?;
    let report = run_perturbation(&pool, &model, PERTURBATION_SEEDS, &ProtocolOptions::default())
        .map_err(|e| e.to_string())?;
    Ok(Transfer { model, pool, report, train_time, epochs: outcome.history.len() })
}

fn transfer_verdict(t: &Transfer) -> Outcome {
    let get = |m: &str| t.report.summary_for("perturbation", m).cloned();
    let (r1, mrr) = (get("recall@1").ok_or("missing recall@1")?, get("mrr").ok_or("missing mrr")?);
    let std_positive = r1.std.is_some_and(|s| s > 0.0) && mrr.std.is_some_and(|s| s > 0.0);
    check(
        t.pool.num_classes() == 40
            && r1.n_seeds == PERTURBATION_SEEDS
            && r1.mean >= MIN_RECALL_AT_1
            && mrr.mean >= MIN_MRR
            && std_positive
            && t.train_time <= TRAIN_BUDGET,
        format!(
            "40 unseen classes: R@1 {:.3} ± {:.3}, MRR {:.3} ± {:.3} over {} seeds; trained {} epochs in {:.0}s",
            r1.mean,
            r1.std.unwrap_or(f64::NAN),
            mrr.mean,
            mrr.std.unwrap_or(f64::NAN),
            r1.n_seeds,
            t.epochs,
            t.train_time.as_secs_f64()
        ),
    )
}

fn scaling_monotonicity(t: &Transfer) -> Outcome {
    let mut details = Vec::new();
    for seed in 0..5 {
        let opts = ProtocolOptions { seed, ..ProtocolOptions::default() };
        let report = run_scaling(&t.pool, &t.model, &SCALING_SIZES, &opts).map_err(|e| e.to_string())?;
        let sizes: Vec<usize> = report.rows.iter().map(|r| r.n_support).collect();
        if sizes != SCALING_SIZES {
            return Err(format!("seed {seed}: sizes {sizes:?}"));
        }
        for w in report.rows.windows(2) {
            let (a, b) = (&w[0].metrics, &w[1].metrics);
            if b.recall_at(1) > a.recall_at(1) || b.mrr > a.mrr {
                return Err(format!("seed {seed}: {} -> {} increased", w[0].n_support, w[1].n_support));
            }
        }
        if seed == 0 {
            details = report.rows.iter().map(|r| format!("{}: MRR {:.3}", r.n_support, r.metrics.mrr)).collect();
        }
    }
    Ok(format!("non-increasing over 5 class orders ({})", details.join(", ")))
}

fn protocol_fidelity(t: &Transfer) -> Outcome {
    let again = run_perturbation(&t.pool, &t.model, PERTURBATION_SEEDS, &ProtocolOptions::default())
        .map_err(|e| e.to_string())?;
    let bits = |r: &ExperimentReport| {
        r.rows.iter().flat_map(|row| row.metrics.named()).map(|(_, v)| v.to_bits()).collect::<Vec<_>>()
    };
    let reproducible = again == t.report
        && bits(&again) == bits(&t.report)
        && again.metrics_csv() == t.report.metrics_csv()
        && again.summary_csv() == t.report.summary_csv();
    let single = OneShotPool::new(
        &Dataset::new(t.pool.candidates.values().map(|d| d.items[0].clone()).collect()),
        t.pool.queries.clone(),
    )
    .map_err(|e| e.to_string())?;
    let flat = run_perturbation(&single, &t.model, PERTURBATION_SEEDS, &ProtocolOptions::default())
        .map_err(|e| e.to_string())?;
    let zero_std = flat.summary.iter().all(|s| s.std == Some(0.0));
    check(
        reproducible && zero_std,
        format!("rerun bit-identical: {reproducible}; single-candidate std all zero: {zero_std}"),
    )
}

// 7 -------------------------------------------------------------------------

fn ablation_harness() -> Outcome {
    let data = synth_generate(&SynthConfig { num_classes: 4, samples_per_class: 4, ..SynthConfig::default() })
        .map_err(|e| e.to_string())?;
    let one_epoch = TrainConfig { epochs: 1, batch_size: 4, ..TrainConfig::small() };
    let mut details = Vec::new();
    for (name, ablation) in Ablation::variants() {
        let (model, outcome) = pretrain(&data, ModelConfig::small(0).with_ablation(ablation), &one_epoch, 1)
            .map_err(|e| format!("{name}: {e}"))?;
        if outcome.history.len() != 1 || model.config().ablation != ablation {
            return Err(format!("{name}: trained {} epochs", outcome.history.len()));
        }
        let report = gradient_check_probe(ModelConfig::tiny(2).with_ablation(ablation), 3, 2)
            .map_err(|e| format!("{name}: {e}"))?;
        if report.max_relative_error >= GRADCHECK_TOLERANCE {
            return Err(format!("{name}: gradient error {:.3e}", report.max_relative_error));
        }
        details.push(format!("{name} {:.1e}", report.max_relative_error));
    }
    Ok(format!("built, trained 1 epoch, gradients ok ({})", details.join(", ")))
}

// 8 -------------------------------------------------------------------------

fn formats() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = synth_generate(&SynthConfig { num_classes: 6, samples_per_class: 1, ..SynthConfig::default() })
        .map_err(|e| e.to_string())?;
    let dictionary: Vec<_> = data.items.iter().map(|it| (it.label.clone(), it.sequence.clone())).collect();

    for item in &data.items {
        let bytes = write_poseseq(&item.sequence);
        let back = parse_poseseq(&bytes).map_err(|e| e.to_string())?;
        if back != item.sequence || write_poseseq(&back) != bytes {
            return Err(format!("poseseq {} did not round-trip", item.sequence.source_id));
        }
    }

    let mut rejected = 0;
    for seed in 0..4u64 {
        let model = PoseFormerModel::build(ModelConfig::tiny(3), seed).map_err(|e| e.to_string())?;
        let model_path = dir.path().join(format!("model-{seed}.bin"));
        model.save(&model_path).map_err(|e| e.to_string())?;
        let on_disk = std::fs::read(&model_path).map_err(|e| e.to_string())?;
        let loaded = PoseFormerModel::load(&model_path).map_err(|e| e.to_string())?;
        if loaded.to_bytes() != on_disk || loaded.fingerprint() != model.fingerprint() {
            return Err(format!("model {seed} did not round-trip"));
        }

        let options = SupportOptions { similarity: Similarity::from_id(seed as u8).unwrap(), temperature: 0.5 };
        let support = build_support_set(&model, &dictionary, options).map_err(|e| e.to_string())?;
        let support_path = dir.path().join(format!("support-{seed}.sset"));
        support.save(&support_path).map_err(|e| e.to_string())?;
        let on_disk = std::fs::read(&support_path).map_err(|e| e.to_string())?;
        let loaded = SupportSet::load_for_model(&support_path, &model).map_err(|e| e.to_string())?;
        if loaded != support || loaded.to_bytes() != on_disk {
            return Err(format!("support set {seed} did not round-trip"));
        }

        // any other model, including one differing in a single weight bit, is refused
        let other = PoseFormerModel::build(ModelConfig::tiny(3), seed + 100).map_err(|e| e.to_string())?;
        let mut flipped = model.to_bytes();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        let flipped = PoseFormerModel::from_bytes(&flipped).map_err(|e| e.to_string())?;
        for wrong in [&other, &flipped] {
            let refused = SupportSet::load_for_model(&support_path, wrong).is_err()
                && support.query(wrong, &dictionary[0].1, 1, None).is_err()
                && support.add_entry(wrong, "extra", &dictionary[0].1).is_err();
            if !refused {
                return Err(format!("support set {seed} accepted a mismatched model"));
            }
            rejected += 1;
        }
    }
    Ok(format!("poseseq, model and support files byte-identical after reload; {rejected}/8 mismatched models refused"))
}

fn main() -> ExitCode {
    let mut all_passed = true;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (verdict, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                all_passed = false;
                ("FAIL", d)
            }
        };
        println!("{verdict} criterion {n} ({name}): {detail}");
    };
    report(1, "gradient correctness", gradient_correctness());
    report(2, "metric oracle", metric_oracle());
    report(3, "retrieval invariants", retrieval_invariants());
    match one_shot_transfer() {
        Ok(t) => {
            report(4, "one-shot transfer", transfer_verdict(&t));
            report(5, "scaling monotonicity", scaling_monotonicity(&t));
            report(6, "perturbation protocol", protocol_fidelity(&t));
        }
        Err(e) => {
            for (n, name) in [(4, "one-shot transfer"), (5, "scaling monotonicity"), (6, "perturbation protocol")] {
                report(n, name, Err(format!("pipeline failed: {e}")));
            }
        }
    }
    report(7, "ablation harness", ablation_harness());
    report(8, "formats", formats());
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
