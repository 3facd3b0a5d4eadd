//! Command-line surface for the pipeline: dataset synthesis, ingestion,
//! training, evaluation, and the efficiency/ablation harnesses.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 client
//! failure, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use lir::client::{
    ChatClient, EmbedClient, HttpChatClient, HttpEmbedClient, MockChatClient, MockEmbedClient,
};
use lir::ctr::{CtrConfig, CtrModel, FieldSchema};
use lir::data::{default_topics, generate_synthetic_stream, load_interactions, write_tsv, Dataset, LabelRule};
use lir::encoding::Projection;
use lir::error::Error;
use lir::ledger::{ledger_report, EfficiencyLedger, EfficiencyReport};
use lir::metrics::{auc, log_loss};
use lir::pipeline::{
    build_training_samples, split_cutoff, Pipeline, ProcessOutcome, SampleSplit, Variant,
    VariantConfig,
};
use lir::prompt::PromptTemplates;
use lir::store::RepresentationStore;

#[derive(Parser)]
#[command(name = "lir", version, about = "Lifelong interest representations for CTR models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic topic-drift dataset
    Synth(SynthArgs),
    /// Run the stream pipeline and populate the representation store
    Ingest(IngestArgs),
    /// Build samples from the store and train the CTR model
    Train(TrainArgs),
    /// Score a trained model on the test split
    Evaluate(EvaluateArgs),
    /// Compare call accounting across variants
    Efficiency(EfficiencyArgs),
    /// Run the four ablation variants end to end
    Ablate(AblateArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset file: TSV with a header line, or JSON-lines
    #[arg(long)]
    dataset: PathBuf,
    /// Positive label rule: rating > threshold
    #[arg(long, default_value_t = 3)]
    label_threshold: u8,
    /// Treat only this exact rating as positive (book-style data)
    #[arg(long)]
    positive_only_rating: Option<u8>,
    /// Drop users and items with fewer interactions than this
    #[arg(long)]
    min_interactions: Option<usize>,
    /// Override the prompt factor words (default: the dataset's attribute names)
    #[arg(long, value_delimiter = ',')]
    factors: Option<Vec<String>>,
}

impl DataArgs {
    fn label_rule(&self) -> LabelRule {
        LabelRule {
            threshold: self.label_threshold,
            positive_only: self.positive_only_rating,
        }
    }

    fn load(&self) -> Result<Dataset, Error> {
        let mut dataset = load_interactions(&self.dataset, &self.label_rule())?;
        if let Some(min) = self.min_interactions {
            dataset = dataset.filter_min_interactions(min);
            if dataset.records.is_empty() {
                return Err(Error::Config(format!(
                    "--min-interactions {min} removed every record"
                )));
            }
        }
        if let Some(factors) = &self.factors {
            dataset.factors = factors.clone();
        }
        Ok(dataset)
    }
}

#[derive(Args, Clone)]
struct ClientArgs {
    /// Use the deterministic offline chat client
    #[arg(long, conflicts_with = "chat_endpoint")]
    mock_chat: bool,
    /// Chat completion endpoint (JSON over HTTP); API key via CHAT_API_KEY
    #[arg(long)]
    chat_endpoint: Option<String>,
    #[arg(long, default_value = "chat-default")]
    chat_model: String,
    /// Sampling temperature for the chat endpoint
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Use the deterministic offline embedding client
    #[arg(long, conflicts_with = "embed_endpoint")]
    mock_embed: bool,
    /// Text embedding endpoint (JSON over HTTP); API key via EMBED_API_KEY
    #[arg(long)]
    embed_endpoint: Option<String>,
    #[arg(long, default_value = "embed-default")]
    embed_model: String,
    /// Output dimension of the mock embedding client
    #[arg(long, default_value_t = 64)]
    embed_dim: usize,
}

impl ClientArgs {
    fn chat(&self) -> Result<Box<dyn ChatClient>, Error> {
        if self.mock_chat {
            return Ok(Box::new(MockChatClient::new()));
        }
        match &self.chat_endpoint {
            Some(endpoint) => Ok(Box::new(
                HttpChatClient::new(endpoint, &self.chat_model).with_temperature(self.temperature),
            )),
            None => Err(Error::Config(
                "pass --mock-chat or --chat-endpoint <URL>".into(),
            )),
        }
    }

    fn embed(&self) -> Result<Box<dyn EmbedClient>, Error> {
        if self.mock_embed {
            return Ok(Box::new(MockEmbedClient::new(self.embed_dim)));
        }
        match &self.embed_endpoint {
            Some(endpoint) => Ok(Box::new(HttpEmbedClient::new(endpoint, &self.embed_model))),
            None => Err(Error::Config(
                "pass --mock-embed or --embed-endpoint <URL>".into(),
            )),
        }
    }

    fn kinds(&self) -> (String, String) {
        let chat = if self.mock_chat { "mock" } else { "http" };
        let embed = if self.mock_embed { "mock" } else { "http" };
        (chat.into(), embed.into())
    }
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// full | no-partition | no-interest-shift | no-attention-fuse | per-step:<L>
    #[arg(long, default_value = "full")]
    variant: String,
    /// Partition condition coefficient K
    #[arg(long, default_value_t = 20)]
    k: u32,
    /// Reduced and attention dimensions as "<d_red>,<d_att>"
    #[arg(long, default_value = "32,32")]
    dims: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train fraction of the global-timestamp split
    #[arg(long, default_value_t = 0.9)]
    split: f64,
    /// Directory holding alternative prompt template files
    #[arg(long)]
    templates: Option<PathBuf>,
}

impl PipelineArgs {
    fn parse_dims(&self) -> Result<(usize, usize), Error> {
        let parts: Vec<&str> = self.dims.split(',').collect();
        if parts.len() != 2 {
            return Err(Error::Config(format!(
                "--dims expects `<d_red>,<d_att>`, got `{}`",
                self.dims
            )));
        }
        let parse = |s: &str| -> Result<usize, Error> {
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|d| *d >= 1)
                .ok_or_else(|| Error::Config(format!("bad dimension `{s}` in --dims")))
        };
        Ok((parse(parts[0])?, parse(parts[1])?))
    }

    fn variant_config(&self) -> Result<VariantConfig, Error> {
        let (d_red, d_att) = self.parse_dims()?;
        Ok(VariantConfig {
            variant: Variant::parse(&self.variant)?,
            k: self.k,
            d_red,
            d_att,
            seed: self.seed,
        })
    }

    fn templates(&self) -> Result<PromptTemplates, Error> {
        match &self.templates {
            Some(dir) => PromptTemplates::from_dir(dir),
            None => Ok(PromptTemplates::default()),
        }
    }
}

#[derive(Args, Clone)]
struct TrainHyperArgs {
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Learning-rate grid, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-3, 7.5e-4, 5e-4, 2.5e-4, 1e-4])]
    lr_grid: Vec<f64>,
    /// Batch-size grid, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = vec![512usize, 1024])]
    batch_grid: Vec<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    users: usize,
    #[arg(long, default_value_t = 180)]
    behaviors: usize,
    /// Topic names, comma separated
    #[arg(long, value_delimiter = ',')]
    topics: Option<Vec<String>>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "text")]
    report: String,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    clients: ClientArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Representation store file (one per variant)
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "text")]
    report: String,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    clients: ClientArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    store: PathBuf,
    /// Where to write the best checkpoint
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    hyper: TrainHyperArgs,
    #[arg(long, default_value = "text")]
    report: String,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    clients: ClientArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    store: PathBuf,
    /// Trained checkpoint to score
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "text")]
    report: String,
}

#[derive(Args)]
struct EfficiencyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    clients: ClientArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Variants to account, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = vec![
        "full".to_string(),
        "no-interest-shift".to_string(),
        "per-step:20".to_string(),
        "per-step:100".to_string(),
    ])]
    variants: Vec<String>,
    /// Directory for the per-variant store files
    #[arg(long)]
    store_dir: PathBuf,
    #[arg(long, default_value = "text")]
    report: String,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    clients: ClientArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Directory for the per-variant store files
    #[arg(long)]
    store_dir: PathBuf,
    #[command(flatten)]
    hyper: TrainHyperArgs,
    #[arg(long, default_value = "text")]
    report: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Ingest(args) => cmd_ingest(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Efficiency(args) => cmd_efficiency(args),
        Command::Ablate(args) => cmd_ablate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Precondition(_) => 2,
        Error::Data { .. } | Error::Format(_) => 3,
        Error::Transport { .. } | Error::Protocol(_) => 4,
        _ => 1,
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_run_metadata(primary_artifact: &Path, payload: serde_json::Value) -> Result<(), Error> {
    let path = PathBuf::from(format!("{}.runmeta.json", primary_artifact.display()));
    std::fs::write(&path, serde_json::to_string_pretty(&payload).unwrap())?;
    Ok(())
}

fn base_metadata(command: &str, seed: u64, clients: Option<&ClientArgs>) -> serde_json::Value {
    let mut meta = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "timestamp_unix": now_unix(),
        "seed": seed,
    });
    if let Some(c) = clients {
        let (chat, embed) = c.kinds();
        meta["chat_client"] = json!(chat);
        meta["embed_client"] = json!(embed);
        meta["chat_model"] = json!(c.chat_model);
        meta["embed_model"] = json!(c.embed_model);
        meta["temperature"] = json!(c.temperature);
        meta["embed_dim"] = json!(c.embed_dim);
    }
    meta
}

fn projection_path(store: &Path) -> PathBuf {
    PathBuf::from(format!("{}.pca", store.display()))
}

struct RunArtifacts {
    outcome: ProcessOutcome,
    ledger: EfficiencyLedger,
    report: EfficiencyReport,
}

/// Shared ingest path: open the store, reuse a saved projection when one
/// exists, process the stream, and persist a freshly fitted projection.
fn run_pipeline(
    dataset: &Dataset,
    cfg: VariantConfig,
    chat: &dyn ChatClient,
    embed: &dyn EmbedClient,
    templates: &PromptTemplates,
    store: &mut RepresentationStore,
    split: f64,
) -> Result<RunArtifacts, Error> {
    let pca_path = projection_path(store.path());
    let pretrained = if pca_path.exists() {
        Some(Projection::load(&pca_path)?)
    } else {
        None
    };
    let had_pretrained = pretrained.is_some();
    let cutoff = split_cutoff(dataset, split).ok();
    let ledger = EfficiencyLedger::new(cfg.variant.label());
    let pipeline = Pipeline {
        cfg,
        chat,
        embed,
        templates,
    };
    let outcome = pipeline.process_stream(dataset, store, &ledger, pretrained, cutoff)?;
    if !had_pretrained {
        if let Some(p) = &outcome.projection {
            p.save(&pca_path)?;
        }
    }
    let report = ledger_report(&ledger, dataset.user_count().max(1));
    Ok(RunArtifacts {
        outcome,
        ledger,
        report,
    })
}

fn cmd_synth(args: SynthArgs) -> Result<(), Error> {
    let topics = args.topics.clone().unwrap_or_else(default_topics);
    let dataset = generate_synthetic_stream(args.users, args.behaviors, &topics, args.seed)?;
    write_tsv(&dataset, &args.out)?;
    let mut meta = base_metadata("synth", args.seed, None);
    meta["users"] = json!(args.users);
    meta["behaviors_per_user"] = json!(args.behaviors);
    meta["topics"] = json!(topics);
    meta["out"] = json!(args.out.display().to_string());
    write_run_metadata(&args.out, meta)?;
    let positives: usize = dataset.records.iter().filter(|r| r.label == 1).count();
    if args.report == "json" {
        println!(
            "{}",
            json!({
                "records": dataset.records.len(),
                "users": dataset.user_count(),
                "positive_rate": positives as f64 / dataset.records.len() as f64,
                "out": args.out.display().to_string(),
            })
        );
    } else {
        println!(
            "wrote {} records for {} users to {} (positive rate {:.3})",
            dataset.records.len(),
            dataset.user_count(),
            args.out.display(),
            positives as f64 / dataset.records.len() as f64
        );
    }
    Ok(())
}

fn print_efficiency_table(rows: &[EfficiencyReport]) {
    println!(
        "{:<20} {:>12} {:>15} {:>14}",
        "variant", "calls/user", "tokens/prompt", "time/user (s)"
    );
    for r in rows {
        println!(
            "{:<20} {:>12.2} {:>15.1} {:>14.6}",
            r.variant, r.calls_per_user, r.tokens_per_prompt, r.time_per_user_secs
        );
    }
}

fn cmd_ingest(args: IngestArgs) -> Result<(), Error> {
    let dataset = args.data.load()?;
    let cfg = args.pipeline.variant_config()?;
    let templates = args.pipeline.templates()?;
    let chat = args.clients.chat()?;
    let embed = args.clients.embed()?;
    let mut store = RepresentationStore::open(&args.store)?;
    let arts = run_pipeline(
        &dataset,
        cfg.clone(),
        chat.as_ref(),
        embed.as_ref(),
        &templates,
        &mut store,
        args.pipeline.split,
    )?;

    let mut meta = base_metadata("ingest", cfg.seed, Some(&args.clients));
    meta["dataset"] = json!(args.data.dataset.display().to_string());
    meta["store"] = json!(args.store.display().to_string());
    meta["variant"] = json!(cfg.variant.label());
    meta["k"] = json!(cfg.k);
    meta["dims"] = json!([cfg.d_red, cfg.d_att]);
    meta["split"] = json!(args.pipeline.split);
    meta["label_threshold"] = json!(args.data.label_threshold);
    meta["positive_only_rating"] = json!(args.data.positive_only_rating);
    write_run_metadata(&args.store, meta)?;

    if args.report == "json" {
        println!(
            "{}",
            json!({
                "variant": arts.report.variant,
                "calls_per_user": arts.report.calls_per_user,
                "tokens_per_prompt": arts.report.tokens_per_prompt,
                "time_per_user_secs": arts.report.time_per_user_secs,
                "stored_records": store.len(),
                "new_writes": store.write_count(),
                "failed_users": arts.outcome.failed_users.len(),
            })
        );
    } else {
        println!(
            "ingested {} users: {} stored representations ({} new writes), {} failed users",
            dataset.user_count(),
            store.len(),
            store.write_count(),
            arts.outcome.failed_users.len()
        );
        print_efficiency_table(std::slice::from_ref(&arts.report));
    }
    Ok(())
}

/// Effective reduced dimension: whatever the store actually holds.
fn effective_d_red(split: &SampleSplit, fallback: usize) -> usize {
    split
        .train
        .iter()
        .chain(&split.test)
        .flat_map(|s| s.long_term.first())
        .map(|v| v.len())
        .next()
        .unwrap_or(fallback)
}

struct GridRow {
    lr: f64,
    batch: usize,
    train_loss: f64,
    test_auc: f64,
    test_logloss: f64,
}

fn train_and_score(
    split: &SampleSplit,
    cfg: &CtrConfig,
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
) -> Result<(CtrModel, GridRow), Error> {
    let schema = FieldSchema::build(&split.train);
    let mut model = CtrModel::new(schema, cfg.clone());
    let report = model.train(&split.train, epochs, lr, batch, seed)?;
    let scores = model.predict_batch(&split.test);
    let labels: Vec<u8> = split.test.iter().map(|s| s.label).collect();
    let row = GridRow {
        lr,
        batch,
        train_loss: report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        test_auc: auc(&scores, &labels)?,
        test_logloss: log_loss(&scores, &labels)?,
    };
    Ok((model, row))
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let dataset = args.data.load()?;
    let cfg = args.pipeline.variant_config()?;
    let templates = args.pipeline.templates()?;
    let chat = args.clients.chat()?;
    let embed = args.clients.embed()?;
    let mut store = RepresentationStore::open(&args.store)?;
    let arts = run_pipeline(
        &dataset,
        cfg.clone(),
        chat.as_ref(),
        embed.as_ref(),
        &templates,
        &mut store,
        args.pipeline.split,
    )?;
    let split = build_training_samples(
        &dataset,
        &arts.outcome,
        &store,
        &cfg.variant,
        args.pipeline.split,
        20,
    )?;

    let ctr_cfg = CtrConfig {
        embed_dim: 32,
        hidden: vec![200, 80],
        d_red: effective_d_red(&split, cfg.d_red),
        d_att: cfg.d_att,
        fuse: cfg.variant.fuse_mode(),
        history_max: 20,
        seed: cfg.seed,
    };

    let mut rows: Vec<GridRow> = Vec::new();
    let mut best: Option<(CtrModel, usize)> = None;
    for &lr in &args.hyper.lr_grid {
        for &batch in &args.hyper.batch_grid {
            let (model, row) = train_and_score(&split, &ctr_cfg, args.hyper.epochs, lr, batch, cfg.seed)?;
            let better = match &best {
                Some((_, idx)) => row.test_auc > rows[*idx].test_auc,
                None => true,
            };
            rows.push(row);
            if better {
                best = Some((model, rows.len() - 1));
            }
        }
    }
    let (best_model, best_idx) = best.expect("grid is non-empty");
    best_model.save(&args.model)?;

    let mut meta = base_metadata("train", cfg.seed, Some(&args.clients));
    meta["dataset"] = json!(args.data.dataset.display().to_string());
    meta["store"] = json!(args.store.display().to_string());
    meta["model"] = json!(args.model.display().to_string());
    meta["variant"] = json!(cfg.variant.label());
    meta["k"] = json!(cfg.k);
    meta["dims"] = json!([ctr_cfg.d_red, ctr_cfg.d_att]);
    meta["split"] = json!(args.pipeline.split);
    meta["epochs"] = json!(args.hyper.epochs);
    meta["lr_grid"] = json!(args.hyper.lr_grid);
    meta["batch_grid"] = json!(args.hyper.batch_grid);
    write_run_metadata(&args.model, meta)?;

    if args.report == "json" {
        let rows_json: Vec<serde_json::Value> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                json!({
                    "lr": r.lr, "batch": r.batch, "train_loss": r.train_loss,
                    "test_auc": r.test_auc, "test_logloss": r.test_logloss,
                    "selected": i == best_idx,
                })
            })
            .collect();
        println!("{}", json!({"grid": rows_json, "model": args.model.display().to_string()}));
    } else {
        println!(
            "{:<10} {:>7} {:>12} {:>10} {:>12}",
            "lr", "batch", "train loss", "test AUC", "test logloss"
        );
        for (i, r) in rows.iter().enumerate() {
            let marker = if i == best_idx { " *" } else { "" };
            println!(
                "{:<10} {:>7} {:>12.4} {:>10.4} {:>12.4}{marker}",
                r.lr, r.batch, r.train_loss, r.test_auc, r.test_logloss
            );
        }
        println!("saved best checkpoint to {}", args.model.display());
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Error> {
    let dataset = args.data.load()?;
    let cfg = args.pipeline.variant_config()?;
    let templates = args.pipeline.templates()?;
    let chat = args.clients.chat()?;
    let embed = args.clients.embed()?;
    let mut store = RepresentationStore::open(&args.store)?;
    let arts = run_pipeline(
        &dataset,
        cfg.clone(),
        chat.as_ref(),
        embed.as_ref(),
        &templates,
        &mut store,
        args.pipeline.split,
    )?;
    let split = build_training_samples(
        &dataset,
        &arts.outcome,
        &store,
        &cfg.variant,
        args.pipeline.split,
        20,
    )?;
    let model = CtrModel::load(&args.model)?;
    let calls_before = arts.ledger.total_calls();
    let scores = model.predict_batch(&split.test);
    assert_eq!(
        arts.ledger.total_calls(),
        calls_before,
        "prediction must not touch the chat client"
    );
    let labels: Vec<u8> = split.test.iter().map(|s| s.label).collect();
    let test_auc = auc(&scores, &labels)?;
    let test_logloss = log_loss(&scores, &labels)?;

    let mut meta = base_metadata("evaluate", cfg.seed, Some(&args.clients));
    meta["dataset"] = json!(args.data.dataset.display().to_string());
    meta["model"] = json!(args.model.display().to_string());
    meta["variant"] = json!(cfg.variant.label());
    meta["test_auc"] = json!(test_auc);
    meta["test_logloss"] = json!(test_logloss);
    write_run_metadata(&args.model, meta)?;

    if args.report == "json" {
        println!(
            "{}",
            json!({"test_auc": test_auc, "test_logloss": test_logloss, "test_samples": labels.len()})
        );
    } else {
        println!(
            "test AUC {test_auc:.4}  test LogLoss {test_logloss:.4}  ({} samples)",
            labels.len()
        );
    }
    Ok(())
}

fn cmd_efficiency(args: EfficiencyArgs) -> Result<(), Error> {
    let dataset = args.data.load()?;
    std::fs::create_dir_all(&args.store_dir)?;
    let templates = args.pipeline.templates()?;
    let chat = args.clients.chat()?;
    let embed = args.clients.embed()?;
    let base_cfg = args.pipeline.variant_config()?;

    let mut rows = Vec::new();
    for name in &args.variants {
        let variant = Variant::parse(name)?;
        let cfg = VariantConfig {
            variant: variant.clone(),
            ..base_cfg.clone()
        };
        let store_path = args
            .store_dir
            .join(format!("store-{}.bin", variant.label().replace(':', "-")));
        let mut store = RepresentationStore::open(&store_path)?;
        let arts = run_pipeline(
            &dataset,
            cfg,
            chat.as_ref(),
            embed.as_ref(),
            &templates,
            &mut store,
            args.pipeline.split,
        )?;
        rows.push(arts.report);
    }

    let mut meta = base_metadata("efficiency", base_cfg.seed, Some(&args.clients));
    meta["dataset"] = json!(args.data.dataset.display().to_string());
    meta["variants"] = json!(args.variants);
    meta["k"] = json!(base_cfg.k);
    write_run_metadata(&args.store_dir.join("efficiency"), meta)?;

    if args.report == "json" {
        println!("{}", serde_json::to_string(&rows).unwrap());
    } else {
        print_efficiency_table(&rows);
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<(), Error> {
    let dataset = args.data.load()?;
    std::fs::create_dir_all(&args.store_dir)?;
    let templates = args.pipeline.templates()?;
    let chat = args.clients.chat()?;
    let embed = args.clients.embed()?;
    let base_cfg = args.pipeline.variant_config()?;
    let lr = *args.hyper.lr_grid.first().unwrap_or(&1e-3);
    let batch = *args.hyper.batch_grid.first().unwrap_or(&512);

    let variants = [
        Variant::Full,
        Variant::NoPartition,
        Variant::NoInterestShift,
        Variant::NoAttentionFuse,
    ];
    let mut rows: Vec<serde_json::Value> = Vec::new();
    for variant in variants {
        let cfg = VariantConfig {
            variant: variant.clone(),
            ..base_cfg.clone()
        };
        let store_path = args.store_dir.join(format!("store-{}.bin", variant.label()));
        let mut store = RepresentationStore::open(&store_path)?;
        let arts = run_pipeline(
            &dataset,
            cfg.clone(),
            chat.as_ref(),
            embed.as_ref(),
            &templates,
            &mut store,
            args.pipeline.split,
        )?;
        let split = build_training_samples(
            &dataset,
            &arts.outcome,
            &store,
            &variant,
            args.pipeline.split,
            20,
        )?;
        let ctr_cfg = CtrConfig {
            embed_dim: 32,
            hidden: vec![200, 80],
            d_red: effective_d_red(&split, cfg.d_red),
            d_att: cfg.d_att,
            fuse: variant.fuse_mode(),
            history_max: 20,
            seed: cfg.seed,
        };
        let (_, row) = train_and_score(&split, &ctr_cfg, args.hyper.epochs, lr, batch, cfg.seed)?;
        rows.push(json!({
            "variant": variant.label(),
            "auc": row.test_auc,
            "logloss": row.test_logloss,
            "calls_per_user": arts.report.calls_per_user,
            "tokens_per_prompt": arts.report.tokens_per_prompt,
        }));
    }

    let mut meta = base_metadata("ablate", base_cfg.seed, Some(&args.clients));
    meta["dataset"] = json!(args.data.dataset.display().to_string());
    meta["epochs"] = json!(args.hyper.epochs);
    meta["lr"] = json!(lr);
    meta["batch"] = json!(batch);
    write_run_metadata(&args.store_dir.join("ablate"), meta)?;

    if args.report == "json" {
        println!("{}", serde_json::to_string(&rows).unwrap());
    } else {
        println!(
            "{:<20} {:>8} {:>9} {:>12} {:>15}",
            "variant", "AUC", "LogLoss", "calls/user", "tokens/prompt"
        );
        for row in &rows {
            println!(
                "{:<20} {:>8.4} {:>9.4} {:>12.2} {:>15.1}",
                row["variant"].as_str().unwrap(),
                row["auc"].as_f64().unwrap(),
                row["logloss"].as_f64().unwrap(),
                row["calls_per_user"].as_f64().unwrap(),
                row["tokens_per_prompt"].as_f64().unwrap(),
            );
        }
    }
    Ok(())
}
