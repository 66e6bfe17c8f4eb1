use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::anyhow;
use serde::Serialize;
use signshot::dataset::Dataset;
use signshot::experiments::{
    pretrain, run_ablation, run_perturbation, run_scaling, split_disjoint_classes, synth_generate, ExperimentError,
    ExperimentReport, OneShotPool, ProtocolOptions, ReportRow, SynthConfig,
};
use signshot::keypoints::{parse_poseseq, KeypointSequence};
use signshot::metrics::{compute_metrics, rank_of_correct, RankList};
use signshot::poseformer::{gradient_check_probe, Ablation, ModelConfig, ModelError, PoseFormerModel, TrainConfig};
use signshot::retrieval::{build_support_set, RetrievalError, SupportOptions, SupportSet};
use signshot_service::ServiceConfig;

use crate::args::*;

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flag values or combinations (exit 1).
    Usage(String),
    /// Unreadable or invalid input data (exit 2).
    Data(anyhow::Error),
    /// Everything else (exit 3).
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Data(e) | Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

trait Classify<T> {
    fn data(self, what: impl FnOnce() -> String) -> Outcome<T>;
    fn runtime(self, what: impl FnOnce() -> String) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn data(self, what: impl FnOnce() -> String) -> Outcome<T> {
        self.map_err(|e| Failure::Data(e.into().context(what())))
    }

    fn runtime(self, what: impl FnOnce() -> String) -> Outcome<T> {
        self.map_err(|e| Failure::Runtime(e.into().context(what())))
    }
}

/// Experiment errors caused by the input data are data errors; bad parameters
/// are usage errors; the rest are runtime failures.
fn experiment(e: ExperimentError) -> Failure {
    use ExperimentError::*;
    match e {
        InvalidConfig(_) | InvalidFraction(_) | SizeExceedsClasses { .. } | SizesNotIncreasing => {
            Failure::Usage(e.to_string())
        }
        TooFewClasses(_) | NoCandidates(_) | NoQueries(_) | UnknownQueryLabel(_) | EmptyDataset | Sample { .. } => {
            Failure::Data(e.into())
        }
        Model(ModelError::InvalidConfig(_)) => Failure::Usage(e.to_string()),
        Retrieval(RetrievalError::InvalidK { .. } | RetrievalError::InvalidTemperature(_)) => Failure::Usage(e.to_string()),
        _ => Failure::Runtime(e.into()),
    }
}

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Embed(a) => embed(a),
        Command::Index(a) => index(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(a),
        Command::Perturb(a) => perturb(a),
        Command::Scale(a) => scale(a),
        Command::Ablate(a) => ablate(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Serve(a) => serve(a),
    }
}

// loading ---------------------------------------------------------------

fn load_model(path: &Path) -> Outcome<PoseFormerModel> {
    PoseFormerModel::load(path).data(|| format!("loading model {}", path.display()))
}

fn load_support(path: &Path, model: &PoseFormerModel) -> Outcome<SupportSet> {
    SupportSet::load_for_model(path, model).data(|| format!("loading support set {}", path.display()))
}

fn load_dataset(dir: &Path) -> Outcome<Dataset> {
    Dataset::load_dir(dir).data(|| format!("loading dataset {}", dir.display()))
}

fn read_document(path: &Path) -> Outcome<KeypointSequence> {
    let bytes = fs::read(path).data(|| format!("reading {}", path.display()))?;
    let seq = parse_poseseq(&bytes).data(|| format!("parsing {}", path.display()))?;
    Ok(if seq.source_id.is_empty() { seq.with_source_id(path.display().to_string()) } else { seq })
}

/// A preset name, or else a JSON file of the given type.
fn preset_or_file<T: serde::de::DeserializeOwned>(spec: &str, preset: impl FnOnce(&str) -> Option<T>) -> Outcome<T> {
    if let Some(cfg) = preset(spec) {
        return Ok(cfg);
    }
    let path = Path::new(spec);
    if !path.is_file() {
        return Err(Failure::Usage(format!("{spec:?} is neither a preset nor a readable JSON file")));
    }
    let text = fs::read_to_string(path).data(|| format!("reading {spec}"))?;
    serde_json::from_str(&text).data(|| format!("parsing {spec}"))
}

fn model_config(spec: &str, num_classes: usize) -> Outcome<ModelConfig> {
    let mut cfg = preset_or_file(spec, |name| ModelConfig::preset(name, num_classes))?;
    cfg.num_classes = num_classes;
    Ok(cfg)
}

fn train_config(spec: &str, epochs: Option<usize>, seed: u64) -> Outcome<TrainConfig> {
    let mut cfg = preset_or_file(spec, TrainConfig::preset)?;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.seed = seed;
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn ablation_named(name: &str) -> Outcome<Ablation> {
    Ablation::variants().into_iter().find(|(n, _)| *n == name).map(|(_, a)| a).ok_or_else(|| {
        let names: Vec<&str> = Ablation::variants().iter().map(|(n, _)| *n).collect();
        Failure::Usage(format!("unknown ablation {name:?}; expected one of {}", names.join(", ")))
    })
}

fn ensure_empty_dir(dir: &Path) -> Outcome {
    if dir.exists() && fs::read_dir(dir).data(|| format!("reading {}", dir.display()))?.next().is_some() {
        return Err(Failure::Data(anyhow!("output directory {} is not empty", dir.display())));
    }
    Ok(())
}

// output ----------------------------------------------------------------

fn print_json<T: Serialize>(value: &T) -> Outcome {
    let text = serde_json::to_string_pretty(value).runtime(|| "serializing output".into())?;
    println!("{text}");
    Ok(())
}

fn emit_report(report: &ExperimentReport, args: &ReportArgs) -> Outcome {
    if let Some(dir) = &args.out {
        report.write_csv(dir).map_err(experiment)?;
        log::info!("wrote {} and {}", dir.join("metrics.csv").display(), dir.join("summary.csv").display());
    }
    match args.format {
        Format::Csv => print!("{}", report.summary_csv()),
        Format::Json => print_json(report)?,
    }
    Ok(())
}

fn protocol(pool: &PoolArgs) -> ProtocolOptions {
    ProtocolOptions {
        dataset: pool.report.dataset.clone(),
        seed: pool.seed,
        ks: pool.report.ks.clone(),
        similarity: pool.support.similarity,
        temperature: pool.support.temperature,
    }
}

fn one_shot_pool(args: &PoolArgs) -> Outcome<OneShotPool> {
    let data = load_dataset(&args.data)?;
    match &args.queries {
        Some(dir) => OneShotPool::new(&data, load_dataset(dir)?),
        None => OneShotPool::split(&data, args.candidates),
    }
    .map_err(experiment)
}

// commands --------------------------------------------------------------

fn synth(a: SynthArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).data(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).data(|| format!("parsing {}", path.display()))?
        }
        None => SynthConfig::default(),
    };
    cfg.num_classes = a.classes.unwrap_or(cfg.num_classes);
    cfg.samples_per_class = a.samples.unwrap_or(cfg.samples_per_class);
    cfg.min_len = a.min_len.unwrap_or(cfg.min_len);
    cfg.max_len = a.max_len.unwrap_or(cfg.max_len);
    cfg.noise = a.noise.unwrap_or(cfg.noise);
    cfg.warp = a.warp.unwrap_or(cfg.warp);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    ensure_empty_dir(&a.out)?;
    let data = synth_generate(&cfg).map_err(experiment)?;
    let write = |d: &Dataset, dir: &Path| d.write_dir(dir).runtime(|| format!("writing {}", dir.display()));
    match a.split {
        Some(fraction) => {
            let (pre, one) = split_disjoint_classes(&data, fraction, cfg.seed).map_err(experiment)?;
            write(&pre, &a.out.join("pretrain"))?;
            write(&one, &a.out.join("oneshot"))?;
            log::info!("{} pretraining and {} one-shot classes", pre.labels().len(), one.labels().len());
        }
        None => write(&data, &a.out)?,
    }
    log::info!("wrote {} sequences of {} classes to {}", data.len(), cfg.num_classes, a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Outcome {
    let data = load_dataset(&a.data)?;
    let config = model_config(&a.model.config, 0)?;
    let tcfg = train_config(&a.model.train_config, a.model.epochs, a.model.seed)?;
    log::info!("training on {} sequences of {} classes", data.len(), data.labels().len());
    let (model, outcome) = pretrain(&data, config, &tcfg, a.model.seed).map_err(experiment)?;
    model.save(&a.out).runtime(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.history {
        let mut w = csv::Writer::from_path(path).runtime(|| format!("writing {}", path.display()))?;
        for s in &outcome.history {
            w.serialize(s).runtime(|| format!("writing {}", path.display()))?;
        }
        w.flush().runtime(|| format!("writing {}", path.display()))?;
    }
    log::info!(
        "kept epoch {} of {}{}",
        outcome.best_epoch,
        outcome.history.len(),
        if outcome.stopped_early { " (stopped early)" } else { "" }
    );
    println!("{}", model.fingerprint_hex());
    Ok(())
}

#[derive(Serialize)]
struct EmbeddingRow<'a> {
    source: &'a str,
    label: &'a str,
    embedding: &'a [f32],
}

fn embed(a: EmbedArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let items: Vec<(String, KeypointSequence)> = if a.input.is_dir() {
        load_dataset(&a.input)?.items.into_iter().map(|it| (it.label, it.sequence)).collect()
    } else {
        vec![(String::new(), read_document(&a.input)?)]
    };
    let seqs: Vec<KeypointSequence> = items.iter().map(|(_, s)| s.clone()).collect();
    let embeddings = model
        .embed_batch(&seqs)
        .into_iter()
        .zip(&items)
        .map(|(e, (_, s))| e.data(|| format!("embedding {}", s.source_id)))
        .collect::<Outcome<Vec<_>>>()?;
    let rows: Vec<EmbeddingRow> = items
        .iter()
        .zip(&embeddings)
        .map(|((label, s), e)| EmbeddingRow { source: &s.source_id, label, embedding: e.as_slice() })
        .collect();
    match a.format {
        Format::Json => print_json(&rows),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            let mut header = vec!["source".to_string(), "label".into()];
            header.extend((0..model.config().representation_size).map(|i| format!("e{i}")));
            w.write_record(&header).runtime(|| "writing output".into())?;
            for r in &rows {
                let mut rec = vec![r.source.to_string(), r.label.to_string()];
                rec.extend(r.embedding.iter().map(|v| v.to_string()));
                w.write_record(&rec).runtime(|| "writing output".into())?;
            }
            w.flush().runtime(|| "writing output".into())
        }
    }
}

fn index(a: IndexArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.dict)?;
    let mut skipped = 0;
    let dictionary: Vec<(String, KeypointSequence)> = data
        .by_label()
        .into_iter()
        .map(|(label, idx)| {
            skipped += idx.len() - 1;
            (label, data.items[idx[0]].sequence.clone())
        })
        .collect();
    if skipped > 0 {
        log::warn!("{skipped} extra samples ignored; the first sample of each label is its exemplar");
    }
    let options = SupportOptions { similarity: a.support.similarity, temperature: a.support.temperature };
    if !(options.temperature > 0.0 && options.temperature.is_finite()) {
        return Err(Failure::Usage(format!("temperature must be positive, got {}", options.temperature)));
    }
    let support = build_support_set(&model, &dictionary, options).data(|| format!("indexing {}", a.dict.display()))?;
    support.save(&a.out).runtime(|| format!("writing {}", a.out.display()))?;
    log::info!("indexed {} labels ({}-d, {})", support.len(), support.dim(), support.similarity());
    Ok(())
}

fn query(a: QueryArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let support = load_support(&a.support, &model)?;
    if a.k == 0 || a.k > support.len() {
        return Err(Failure::Usage(format!("--k must be in 1..={}, got {}", support.len(), a.k)));
    }
    if let Some(t) = a.temperature {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::Usage(format!("--temperature must be positive, got {t}")));
        }
    }
    let seq = read_document(&a.input)?;
    let result = support.query(&model, &seq, a.k, a.temperature).data(|| format!("querying {}", a.input.display()))?;
    let mut out = std::io::stdout().lock();
    for e in &result.entries {
        writeln!(out, "{}\t{}\t{:.6}", e.rank, e.label, e.probability).runtime(|| "writing output".into())?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let support = load_support(&a.support, &model)?;
    let queries = load_dataset(&a.queries)?;
    let seqs: Vec<KeypointSequence> = queries.items.iter().map(|it| it.sequence.clone()).collect();
    let mut ranks = Vec::with_capacity(seqs.len());
    for (item, e) in queries.items.iter().zip(model.embed_batch(&seqs)) {
        let e = e.data(|| format!("embedding {}", item.sequence.source_id))?;
        let ranked = support.rank(&e, None).runtime(|| "ranking".into())?;
        ranks.push(
            rank_of_correct(&ranked, &item.label)
                .data(|| format!("query {} has no support entry", item.sequence.source_id))?,
        );
    }
    let ranks = RankList::new(ranks).runtime(|| "collecting ranks".into())?;
    let metrics = compute_metrics(&ranks, &a.report.ks).map_err(|e| Failure::Usage(e.to_string()))?;
    let row = ReportRow {
        condition: "eval".into(),
        dataset: a.report.dataset.clone(),
        seed: 0,
        n_support: support.len(),
        metrics,
    };
    let report = ExperimentReport::from_rows(vec![row], 0.0).map_err(experiment)?;
    if let Some(dir) = &a.report.out {
        report.write_csv(dir).map_err(experiment)?;
    }
    match a.report.format {
        Format::Csv => print!("{}", report.metrics_csv()),
        Format::Json => print_json(&report.rows[0])?,
    }
    Ok(())
}

fn perturb(a: PerturbArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let pool = one_shot_pool(&a.pool)?;
    log::info!("{} classes, {} queries, {} seeds", pool.num_classes(), pool.queries.len(), a.seeds);
    let report = run_perturbation(&pool, &model, a.seeds, &protocol(&a.pool)).map_err(experiment)?;
    emit_report(&report, &a.pool.report)
}

fn scale(a: ScaleArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let pool = one_shot_pool(&a.pool)?;
    let report = run_scaling(&pool, &model, &a.sizes, &protocol(&a.pool)).map_err(experiment)?;
    emit_report(&report, &a.pool.report)
}

fn ablate(a: AblateArgs) -> Outcome {
    let pretrain_set = load_dataset(&a.pretrain)?;
    let pool = one_shot_pool(&a.pool)?;
    let overlap = pretrain_set.labels().into_iter().filter(|l| pool.candidates.contains_key(l)).count();
    if overlap > 0 {
        log::warn!("{overlap} labels appear in both the pretraining and the one-shot data");
    }
    let base = model_config(&a.config, 0)?;
    let tcfg = train_config(&a.train_config, a.epochs, a.model_seed)?;
    let report = run_ablation(&pretrain_set, &pool, &base, &tcfg, a.model_seed, a.seeds, &protocol(&a.pool))
        .map_err(experiment)?;
    emit_report(&report, &a.pool.report)
}

#[derive(Serialize)]
struct GradcheckLine {
    max_relative_error: f64,
    coords_checked: usize,
    tolerance: f64,
    passed: bool,
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    if a.classes < 2 {
        return Err(Failure::Usage("--classes must be at least 2".into()));
    }
    let mut config = model_config(&a.config, a.classes)?;
    if let Some(name) = &a.ablation {
        config = config.with_ablation(ablation_named(name)?);
    }
    let report = gradient_check_probe(config, a.seed, a.samples).map_err(|e| match e {
        ModelError::InvalidConfig(m) => Failure::Usage(m),
        other => Failure::Runtime(other.into()),
    })?;
    let line = GradcheckLine {
        max_relative_error: report.max_relative_error,
        coords_checked: report.coords_checked,
        tolerance: a.tolerance,
        passed: report.passes(a.tolerance),
    };
    match a.format {
        Format::Json => print_json(&line)?,
        Format::Csv => {
            println!("max_relative_error,coords_checked,tolerance,passed");
            println!("{:e},{},{:e},{}", line.max_relative_error, line.coords_checked, line.tolerance, line.passed);
        }
    }
    if line.passed {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow!(
            "maximum relative error {:e} is not below {:e}",
            line.max_relative_error,
            line.tolerance
        )))
    }
}

fn serve(a: ServeArgs) -> Outcome {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .runtime(|| "starting the async runtime".into())?;
    let config = ServiceConfig { model: a.model, support: a.support, wal: a.wal, addr: a.addr };
    runtime.block_on(signshot_service::serve(config)).map_err(|e| match e {
        signshot_service::ServiceError::Startup(_) => Failure::Data(e.into()),
        other => Failure::Runtime(other.into()),
    })
}
