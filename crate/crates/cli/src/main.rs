mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use srrdoc::corpus::{load_jsonl, load_raw_jsonl, save_jsonl, synthesize_corpus, CorpusRecord, LayoutTemplate};
use srrdoc::cpd::{compare_strategies, prune_layers, skip_layer_sweep, strategy_csv, PruneSpec, PruneStrategy};
use srrdoc::document::ParsedDocument;
use srrdoc::eval::{bench_csv, end_to_end_report, throughput_bench, MetricReport};
use srrdoc::pipeline::{run_parse, unordered_record, DetectorKind, OrderKind, PipelineConfig, RecognizerKind};
use srrdoc::recognition::{LatencyModel, MockRecognizer};
use srrdoc::relation::{
    autolabel_block_order, evaluate_order, finetune, predict_order, train_relation_model, LrSchedule, RelationModelConfig,
    RelationModelParams, TrainConfig, TrainingExample,
};

use config::{apply_env, config_error, load_file, parse_name, ConfigError};

#[derive(Parser)]
#[command(name = "srrdoc", version, about = "Detect, recognize and order document blocks")]
struct Cli {
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus as JSONL.
    Synth(SynthArgs),
    /// Train a reading-order model.
    Train(TrainArgs),
    /// Run the full pipeline over a corpus.
    Parse(ParseArgs),
    /// Print the predicted reading order of each page.
    Order(OrderArgs),
    /// Remove layers from a model and optionally fine-tune it.
    Prune(PruneArgs),
    /// Accuracy drop from skipping each layer, as CSV.
    Sweep(SweepArgs),
    /// Score parse predictions against ground truth.
    Eval(EvalArgs),
    /// Block-parallel versus full-page recognition throughput.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Comma-separated templates, or `all` (the default).
    #[arg(long, alias = "templates", value_delimiter = ',')]
    template: Vec<String>,
    #[arg(long, alias = "pages", default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSONL file, or a directory that receives `corpus.jsonl`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Held-out corpus to report accuracy on.
    #[arg(long)]
    eval: Option<PathBuf>,
    /// Derive block order from line order instead of `gt_order`.
    #[arg(long)]
    autolabel: bool,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    coord_dim: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    max_elements: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long)]
    no_category_embedding: bool,
    /// Starting values of the coordinate tables: sinusoidal or uniform.
    #[arg(long, default_value = "sinusoidal")]
    coord_init: String,
}

#[derive(Args)]
struct ParseArgs {
    /// TOML pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus JSONL to parse.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// oracle, xycut or external.
    #[arg(long)]
    detector: Option<String>,
    /// Detections JSONL for the external detector.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// mock or remote.
    #[arg(long)]
    recognizer: Option<String>,
    /// model, gt or geometric.
    #[arg(long)]
    order: Option<String>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Split and jitter text detections.
    #[arg(long)]
    perturb: bool,
    #[arg(long)]
    char_error_rate: Option<f64>,
    /// Inject boundary artifacts into perturbed regions.
    #[arg(long)]
    boundary_artifact: bool,
}

#[derive(Args)]
struct OrderArgs {
    #[arg(long)]
    model: PathBuf,
    /// Pages in corpus JSONL form.
    #[arg(long)]
    page: PathBuf,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    /// middle, shallow, deep or importance.
    #[arg(long, default_value = "middle")]
    strategy: String,
    #[arg(long)]
    keep: usize,
    /// Corpus to fine-tune on; also the importance calibration set.
    #[arg(long)]
    finetune_data: Option<PathBuf>,
    /// Share of the original step budget to fine-tune for.
    #[arg(long, default_value_t = 0.3)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Compare all strategies on this held-out corpus and print CSV.
    #[arg(long)]
    compare: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    eval: PathBuf,
    /// Also write the CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// `predictions.jsonl` from `parse`.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Directory for report.json and report.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Corpus to draw pages from; synthetic pages otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 24)]
    pages: usize,
    /// Blocks per page.
    #[arg(long, default_value_t = 8)]
    blocks: usize,
    #[arg(long, default_value_t = 30)]
    per_request_ms: u64,
    #[arg(long, default_value_t = 1)]
    per_token_ms: u64,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    parallelism: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// The run finished but every page failed.
#[derive(Debug)]
struct AllPagesFailed(String);

impl std::fmt::Display for AllPagesFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for AllPagesFailed {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Parse(a) => parse(a),
        Command::Order(a) => order(a),
        Command::Prune(a) => prune(a),
        Command::Sweep(a) => sweep(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// Write to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn write_output(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let path = srrdoc::corpus::corpus_file(path);
    load_jsonl(&path).with_context(|| format!("loading {}", path.display()))
}

/// Pages whose `gt_order` may be missing.
fn pages(path: &Path) -> Result<Vec<CorpusRecord>> {
    let path = srrdoc::corpus::corpus_file(path);
    let raw = load_raw_jsonl(&path).with_context(|| format!("loading {}", path.display()))?;
    raw.into_iter()
        .map(|r| {
            if r.reading_order()?.is_some() {
                r.into_record()
            } else {
                let page = r.to_page();
                page.validate()?;
                Ok(unordered_record(page))
            }
        })
        .collect::<srrdoc::Result<Vec<_>>>()
        .with_context(|| format!("reading pages from {}", path.display()))
}

fn model(path: &Path) -> Result<(RelationModelParams, srrdoc::relation::ModelMeta)> {
    RelationModelParams::load(path)
        .with_context(|| format!("loading model {}", path.display()))
        .map_err(config_error)
}

fn examples(records: &[CorpusRecord]) -> Result<Vec<TrainingExample>> {
    records.iter().map(|r| Ok(TrainingExample::from_record(r)?)).collect()
}

fn synth(a: SynthArgs) -> Result<()> {
    let templates: Vec<LayoutTemplate> = if a.template.is_empty() || a.template.iter().any(|t| t.eq_ignore_ascii_case("all")) {
        LayoutTemplate::ALL.to_vec()
    } else {
        a.template.iter().map(|t| t.parse()).collect::<srrdoc::Result<_>>().map_err(config_error)?
    };
    if a.count == 0 {
        return Err(config_error("--count must be at least 1"));
    }
    let records = synthesize_corpus(&templates, a.count, a.seed);
    let is_dir = a.out.is_dir() || a.out.to_string_lossy().ends_with(std::path::MAIN_SEPARATOR) || a.out.extension().is_none();
    let out = if is_dir {
        fs::create_dir_all(&a.out)?;
        a.out.join("corpus.jsonl")
    } else {
        if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        a.out.clone()
    };
    save_jsonl(&out, &records)?;
    println!("wrote {} pages to {}", records.len(), out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let config = RelationModelConfig {
        coord_embed_dim: a.coord_dim,
        layers: a.layers,
        heads: a.heads,
        ffn_multiplier: 4,
        max_elements: a.max_elements,
        dropout: a.dropout,
        category_embedding: !a.no_category_embedding,
        coord_init: parse_name(&a.coord_init)?,
    };
    config.validate().map_err(config_error)?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        seed: a.seed,
        ..Default::default()
    };
    tc.validate().map_err(config_error)?;
    let mut records = corpus(&a.data)?;
    if a.autolabel {
        for r in &mut records {
            r.gt_order = autolabel_block_order(&r.page.blocks, &r.page.lines);
        }
    }
    let train = examples(&records)?;
    let params = RelationModelParams::init(&config, a.seed)?;
    let (params, meta) = train_relation_model(params, &train, &tc)?;
    params.save(&a.out, &meta)?;
    println!(
        "trained {} steps; loss {:.4} -> {:.4}; saved {}",
        meta.steps,
        meta.loss_curve.first().copied().unwrap_or(f64::NAN),
        meta.loss_curve.last().copied().unwrap_or(f64::NAN),
        a.out.display()
    );
    if let Some(path) = a.eval {
        let stats = evaluate_order(&params, &examples(&corpus(&path)?)?, &[])?;
        println!("{}", serde_json::to_string(&stats)?);
    }
    Ok(())
}

fn parse_config(a: &ParseArgs) -> Result<PipelineConfig> {
    let mut cfg = match &a.config {
        Some(path) => load_file(path)?,
        None => PipelineConfig::default(),
    };
    apply_env(&mut cfg, |k| std::env::var(k).ok())?;
    if let Some(v) = &a.out {
        cfg.out = v.clone();
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.parallelism {
        cfg.parallelism = v;
    }
    if let Some(v) = &a.detector {
        cfg.detector.kind = parse_name::<DetectorKind>(v)?;
    }
    if let Some(v) = &a.detections {
        cfg.detector.path = Some(v.clone());
    }
    if let Some(v) = &a.recognizer {
        cfg.recognizer.kind = parse_name::<RecognizerKind>(v)?;
    }
    if let Some(v) = &a.order {
        cfg.order.kind = parse_name::<OrderKind>(v)?;
    }
    if let Some(v) = &a.model {
        cfg.order.model = Some(v.clone());
    }
    if a.perturb {
        cfg.perturb.enabled = true;
    }
    if let Some(v) = a.char_error_rate {
        cfg.recognizer.char_error_rate = v;
    }
    if a.boundary_artifact {
        cfg.recognizer.boundary_artifact = true;
    }
    cfg.validate().map_err(config_error)?;
    Ok(cfg)
}

fn parse(a: ParseArgs) -> Result<()> {
    let cfg = parse_config(&a)?;
    let records = pages(&a.input)?;
    let (run, manifest) = match run_parse(&cfg, &records) {
        Ok(x) => x,
        Err(srrdoc::Error::InvalidInput(m)) => return Err(config_error(m)),
        Err(e @ srrdoc::Error::Stage { stage: "pipeline", .. }) => return Err(AllPagesFailed(e.to_string()).into()),
        Err(e) => return Err(e.into()),
    };
    println!(
        "parsed {} of {} pages into {} (config {})",
        run.pages.len() - run.failed(),
        run.pages.len(),
        cfg.out.display(),
        &manifest.config_hash[..12]
    );
    if let Some(report) = &run.report {
        emit(&report.to_csv())?;
    }
    Ok(())
}

fn order(a: OrderArgs) -> Result<()> {
    let (params, _) = model(&a.model)?;
    for r in pages(&a.page)? {
        let page = &r.page;
        let order = predict_order(&page.blocks, page.width, page.height, &params)?;
        let ids: Vec<&str> = order.sequence().into_iter().map(|i| page.blocks[i].id.as_str()).collect();
        emit(&format!("{}\n", serde_json::json!({ "page_id": page.id, "order": ids })))?;
    }
    Ok(())
}

fn prune(a: PruneArgs) -> Result<()> {
    let strategy: PruneStrategy = a.strategy.parse().map_err(config_error)?;
    let (params, meta) = model(&a.model)?;
    if a.keep == 0 || a.keep > params.layers.len() {
        return Err(config_error(format!("--keep must be in 1..={}", params.layers.len())));
    }
    let data = match &a.finetune_data {
        Some(p) => examples(&corpus(p)?)?,
        None => Vec::new(),
    };
    if strategy == PruneStrategy::Importance && data.is_empty() {
        return Err(config_error("importance pruning needs --finetune-data as its calibration set"));
    }
    let tc = TrainConfig {
        seed: a.seed,
        schedule: LrSchedule::Constant,
        ..Default::default()
    };
    if let Some(eval_path) = &a.compare {
        if data.is_empty() {
            return Err(config_error("--compare needs --finetune-data"));
        }
        let held = examples(&corpus(eval_path)?)?;
        emit(&strategy_csv(&compare_strategies(&params, &meta, &data, &held, a.keep, a.fraction, &tc)?))?;
    }
    let pruned = prune_layers(&params, &PruneSpec::new(strategy, a.keep).with_calibration(&data))?;
    let (out, mut out_meta) = if data.is_empty() {
        (pruned, meta.clone())
    } else {
        finetune(pruned, &data, a.fraction, &meta, &tc)?
    };
    out_meta.notes.insert(0, format!("pruned to {} layers ({strategy})", a.keep));
    out.save(&a.out, &out_meta)?;
    eprintln!("saved {} ({} parameters)", a.out.display(), out.num_params());
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let (params, _) = model(&a.model)?;
    let report = skip_layer_sweep(&params, &examples(&corpus(&a.eval)?)?)?;
    let csv = report.to_csv();
    if let Some(path) = &a.out {
        write_output(path, &csv)?;
    }
    emit(&csv)?;
    eprintln!("baseline accuracy {:.4}", report.baseline);
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let gt = corpus(&a.gt)?;
    let text = fs::read_to_string(&a.pred).with_context(|| format!("reading {}", a.pred.display()))?;
    let mut preds = std::collections::HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let doc: ParsedDocument = serde_json::from_str(line).with_context(|| format!("{}:{}", a.pred.display(), i + 1))?;
        preds.insert(doc.page_id.clone(), doc);
    }
    let mut pages = Vec::new();
    for r in &gt {
        match preds.get(&r.page.id) {
            Some(doc) => pages.push(end_to_end_report(doc, r)),
            None => log::warn!("no prediction for page {}", r.page.id),
        }
    }
    if pages.is_empty() {
        bail!("no predicted page matches the ground truth");
    }
    let report = MetricReport::from_pages(pages);
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        fs::write(dir.join("report.csv"), report.to_csv())?;
    }
    emit(&report.to_csv())
}

fn bench(a: BenchArgs) -> Result<()> {
    if a.parallelism.contains(&0) || a.blocks == 0 || a.pages == 0 {
        return Err(config_error("--parallelism, --blocks and --pages must be positive"));
    }
    let source = match &a.data {
        Some(p) => corpus(p)?,
        None => synthesize_corpus(&LayoutTemplate::ALL, a.pages * 4, a.seed),
    };
    let records: Vec<CorpusRecord> = source.iter().filter_map(|r| r.truncated(a.blocks)).take(a.pages).collect();
    if records.is_empty() {
        return Err(anyhow!("no page has {} blocks", a.blocks));
    }
    let recognizer = MockRecognizer {
        latency: LatencyModel {
            per_request: Duration::from_millis(a.per_request_ms),
            per_token: Duration::from_millis(a.per_token_ms),
        },
        ..Default::default()
    };
    let rows = throughput_bench(&records, &recognizer, &a.parallelism)?;
    let csv = bench_csv(&rows);
    if let Some(path) = &a.out {
        write_output(path, &csv)?;
    }
    emit(&csv)?;
    Ok(())
}
