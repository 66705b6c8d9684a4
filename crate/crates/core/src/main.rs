use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use disentangle::config::RunConfig;
use disentangle::corpus::{generate_synthetic, load_corpus, load_partitions, write_corpus, write_partitions, TopicReplyGenerator};
use disentangle::cotrain::{cotrain_loop, IterationReport};
use disentangle::encoder::Checkpoint;
use disentangle::error::{Error, Result};
use disentangle::manifest::Manifest;
use disentangle::metrics::{evaluate, MetricReport};
use disentangle::pair_model::{augment_generated, build_pseudo_pairs_ret, train_pair, PairDataset, PairModel};
use disentangle::respsel::{
    build_respsel_dataset, evaluate_respsel, instance_partitions, train_respsel, write_respsel_dataset,
    PartitionSource, RespSelInstance, RespselModel,
};
use disentangle::session_model::{
    build_pseudo_sessions, disentangle_e2e, train_session_init, DecodeMode, SessionDataset, SessionModel,
};
use disentangle::two_step::greedy_disentangle;
use disentangle::vocab::Vocab;
use disentangle::{Corpus, Partition};

/// Unsupervised conversation disentanglement with co-trained pair and
/// session classifiers.
#[derive(Parser, Debug)]
#[command(name = "disentangle", version)]
struct Cli {
    /// JSON run configuration; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for pseudo-data sampling, model initialisation and dataset construction.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Embedding and hidden size of every encoder.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus with gold sessions.
    GenSynth(GenSynthArgs),
    /// Build speaker-based pseudo training data.
    BuildPseudo {
        #[arg(value_enum)]
        kind: PseudoKind,
        #[command(flatten)]
        args: BuildPseudoArgs,
    },
    /// Train a classifier.
    Train {
        #[arg(value_enum)]
        kind: TrainKind,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Co-train the pair and session classifiers.
    Cotrain(CotrainArgs),
    /// Predict session partitions.
    Disentangle {
        #[arg(value_enum)]
        method: Method,
        #[command(flatten)]
        args: DisentangleArgs,
    },
    /// Score predicted partitions against gold.
    Evaluate(EvaluateArgs),
    /// Evaluate a response-selection model.
    RespselEval(RespselEvalArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PseudoKind {
    Pair,
    Session,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TrainKind {
    Pair,
    Session,
    Respsel,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    TwoStep,
    E2e,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Source {
    None,
    Predicted,
    Gold,
}

impl From<Source> for PartitionSource {
    fn from(s: Source) -> Self {
        match s {
            Source::None => PartitionSource::None,
            Source::Predicted => PartitionSource::Predicted,
            Source::Gold => PartitionSource::Gold,
        }
    }
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    /// Output corpus JSONL.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    conversations: Option<usize>,
    /// Generator seed (defaults to the config's synth seed).
    #[arg(long)]
    synth_seed: Option<u64>,
    #[arg(long)]
    violation_rate: Option<f64>,
    #[arg(long)]
    topics: Option<usize>,
}

#[derive(Args, Debug)]
struct BuildPseudoArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output dataset JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Negatives per positive.
    #[arg(long)]
    ratio: Option<f64>,
    /// Pair data only: corpus messages sent to the synthetic reply generator.
    #[arg(long)]
    generated: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Pseudo dataset from build-pseudo (pair and session models).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Response selection: which sessions feed the scorer.
    #[arg(long, value_enum, default_value = "none")]
    partition_source: Source,
    /// Response selection with predicted sessions: session checkpoint used to
    /// disentangle each context.
    #[arg(long)]
    session: Option<PathBuf>,
    /// Response selection: candidates per instance.
    #[arg(long)]
    candidates: Option<usize>,
}

#[derive(Args, Debug)]
struct CotrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Corpus with gold sessions used for per-iteration scores.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Initial pair checkpoint.
    #[arg(long)]
    pair: PathBuf,
    /// Session checkpoint trained on session pseudo data.
    #[arg(long)]
    session: PathBuf,
    /// Pair pseudo dataset the pair checkpoint was trained on.
    #[arg(long)]
    pairs: PathBuf,
    /// Directory receiving pair.ckpt, session.ckpt, report.json and manifest.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Reward weight of the pair classifier against the speaker reward.
    #[arg(long)]
    gamma: Option<f64>,
    /// Preceding session-mates paired with each message when harvesting.
    #[arg(long)]
    lookback: Option<usize>,
    #[arg(long)]
    rl_lr: Option<f64>,
    /// Learning rate for retraining the pair classifier each iteration.
    #[arg(long)]
    pair_lr: Option<f64>,
    /// Epochs for retraining the pair classifier each iteration.
    #[arg(long)]
    pair_epochs: Option<usize>,
    /// Stop when the monitored score stops improving and keep the best iteration.
    #[arg(long)]
    early_stop: bool,
}

#[derive(Args, Debug)]
struct DisentangleArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Pair checkpoint (two-step) or session checkpoint (e2e).
    #[arg(long)]
    model: PathBuf,
    /// Output partition JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Two-step only: link threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Two-step only: how many preceding messages may be linked.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Predicted partition JSONL.
    #[arg(long)]
    pred: PathBuf,
    /// Gold partition JSONL.
    #[arg(long, conflicts_with = "corpus")]
    gold: Option<PathBuf>,
    /// Corpus whose gold sessions serve as reference.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RespselEvalArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Response-selection checkpoint.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    partition_source: Source,
    /// Session checkpoint for predicted sessions.
    #[arg(long)]
    session: Option<PathBuf>,
    #[arg(long)]
    candidates: Option<usize>,
    /// Report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Also write the evaluation instances as JSONL.
    #[arg(long)]
    dataset_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dim) = cli.dim {
        config.dim = dim;
    }
    match cli.command {
        Command::GenSynth(a) => gen_synth(config, a),
        Command::BuildPseudo { kind, args } => build_pseudo(config, kind, args),
        Command::Train { kind, args } => train(config, kind, args),
        Command::Cotrain(a) => cotrain(config, a),
        Command::Disentangle { method, args } => disentangle(config, method, args),
        Command::Evaluate(a) => evaluate_cmd(config, a),
        Command::RespselEval(a) => respsel_eval(config, a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `out.jsonl` → `out.jsonl.manifest.json`.
fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn corpus_path(flag: Option<PathBuf>, config: &RunConfig) -> Result<PathBuf> {
    flag.or_else(|| config.paths.corpus.clone())
        .ok_or_else(|| Error::Config("no corpus given (--corpus or paths.corpus)".into()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

fn gen_synth(mut config: RunConfig, a: GenSynthArgs) -> Result<()> {
    if let Some(n) = a.conversations {
        config.synth.n_conversations = n;
    }
    if let Some(s) = a.synth_seed {
        config.synth.seed = s;
    }
    if let Some(v) = a.violation_rate {
        config.synth.speaker_violation_rate = v;
    }
    if let Some(t) = a.topics {
        config.synth.n_topics = t;
    }
    config.validate()?;
    let corpus = generate_synthetic(&config.synth)?;
    write_corpus(&corpus, create(&a.out)?)?;
    let mut m = Manifest::new("gen-synth", &config)?;
    m.seed("synth", config.synth.seed).output("corpus", &a.out)?;
    m.write(manifest_path(&a.out))?;
    println!("wrote {} conversations to {}", corpus.len(), a.out.display());
    Ok(())
}

fn build_pseudo(mut config: RunConfig, kind: PseudoKind, a: BuildPseudoArgs) -> Result<()> {
    match kind {
        PseudoKind::Pair => {
            if let Some(r) = a.ratio {
                config.pair.negatives_per_positive = r;
            }
            if let Some(g) = a.generated {
                config.pair.generated_messages = g;
            }
        }
        PseudoKind::Session => {
            if let Some(r) = a.ratio {
                config.session.negatives_per_positive = r;
            }
        }
    }
    config.validate()?;
    let path = corpus_path(a.corpus, &config)?;
    let corpus = load_corpus(&path)?;
    let mut m = Manifest::new(format!("build-pseudo {kind:?}").to_lowercase(), &config)?;
    m.seed("pseudo", config.seed).input("corpus", &path)?;
    let (positives, total) = match kind {
        PseudoKind::Pair => {
            let mut ds = build_pseudo_pairs_ret(&corpus, config.pair.negatives_per_positive, config.seed)?;
            if config.pair.generated_messages > 0 {
                let mut generator = TopicReplyGenerator::new(&config.synth, config.seed)?;
                ds = augment_generated(&ds, &corpus, &mut generator, config.pair.generated_messages, config.seed);
            }
            ds.write_jsonl(&corpus, create(&a.out)?)?;
            (ds.positives(), ds.len())
        }
        PseudoKind::Session => {
            let ds = build_pseudo_sessions(&corpus, config.session.negatives_per_positive, config.seed)?;
            ds.write_jsonl(&corpus, create(&a.out)?)?;
            (ds.positives(), ds.len())
        }
    };
    m.output("dataset", &a.out)?;
    m.write(manifest_path(&a.out))?;
    println!("{positives} positives, {} negatives", total - positives);
    Ok(())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn train(mut config: RunConfig, kind: TrainKind, a: TrainArgs) -> Result<()> {
    let section = match kind {
        TrainKind::Pair => &mut config.pair.train,
        TrainKind::Session => &mut config.session.train,
        TrainKind::Respsel => &mut config.respsel.train,
    };
    if let Some(e) = a.epochs {
        section.epochs = e;
    }
    if let Some(lr) = a.lr {
        section.lr = lr;
    }
    if let Some(b) = a.batch_size {
        section.batch_size = b;
    }
    if let Some(c) = a.candidates {
        config.respsel.n_candidates = c;
    }
    config.validate()?;
    let path = corpus_path(a.corpus, &config)?;
    let corpus = load_corpus(&path)?;
    let vocab = Vocab::from_corpus(&corpus);
    let mut m = Manifest::new(format!("train {kind:?}").to_lowercase(), &config)?;
    m.seed("init", config.seed).input("corpus", &path)?;
    let data = |m: &mut Manifest| -> Result<PathBuf> {
        let d = a.data.clone().ok_or_else(|| Error::Config("--data is required".into()))?;
        m.input("data", &d)?;
        Ok(d)
    };
    let (report, ckpt) = match kind {
        TrainKind::Pair => {
            let ds = PairDataset::read_jsonl(&corpus, open(&data(&mut m)?)?)?;
            let mut model = PairModel::new(vocab, config.dim, config.seed);
            m.seed("train", config.pair.train.seed);
            (train_pair(&mut model, &corpus, &ds, &config.pair.train)?, model.to_checkpoint())
        }
        TrainKind::Session => {
            let ds = SessionDataset::read_jsonl(&corpus, open(&data(&mut m)?)?)?;
            let mut model = SessionModel::new(vocab, config.dim, config.seed);
            m.seed("train", config.session.train.seed);
            (train_session_init(&mut model, &corpus, &ds, &config.session.train)?, model.to_checkpoint())
        }
        TrainKind::Respsel => {
            let instances = build_respsel_dataset(&corpus, config.respsel.n_candidates, config.seed)?;
            let parts = respsel_partitions(&instances, a.partition_source, a.session.as_deref(), &mut m)?;
            let mut model = RespselModel::new(vocab, config.dim, config.seed);
            m.seed("dataset", config.seed).seed("train", config.respsel.train.seed);
            (train_respsel(&mut model, &instances, &parts, &config.respsel.train)?, model.to_checkpoint())
        }
    };
    ckpt.save(&a.out)?;
    let report_path = a.out.with_extension("report.json");
    write_json(&report_path, &report)?;
    m.output("checkpoint", &a.out)?.output("report", &report_path)?;
    m.write(manifest_path(&a.out))?;
    println!(
        "final loss {:.4}, accuracy {:.4}",
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        report.final_accuracy
    );
    Ok(())
}

fn respsel_partitions(
    instances: &[RespSelInstance],
    source: Source,
    session: Option<&Path>,
    m: &mut Manifest,
) -> Result<Vec<Partition>> {
    let predicted = match source {
        Source::Predicted => {
            let path = session.ok_or_else(|| Error::Config("--session is required for predicted sessions".into()))?;
            m.input("session", path)?;
            let model = SessionModel::from_checkpoint(load_checkpoint(path)?)?;
            Some(instances.iter().map(|i| model.disentangle(&i.context)).collect::<Vec<_>>())
        }
        _ => None,
    };
    instance_partitions(instances, source.into(), predicted.as_deref())
}

fn cotrain(mut config: RunConfig, a: CotrainArgs) -> Result<()> {
    let c = &mut config.cotrain;
    if let Some(n) = a.iterations {
        c.iterations = n;
    }
    if let Some(g) = a.gamma {
        c.reward.gamma = g;
    }
    if let Some(l) = a.lookback {
        c.harvest.lookback = l;
    }
    if let Some(lr) = a.rl_lr {
        c.rl_lr = lr;
    }
    if let Some(lr) = a.pair_lr {
        c.pair_retrain.lr = lr;
    }
    if let Some(e) = a.pair_epochs {
        c.pair_retrain.epochs = e;
    }
    c.early_stop |= a.early_stop;
    if a.dev.is_some() {
        config.paths.dev_corpus = a.dev.clone();
    }
    config.validate()?;
    let out_dir = a
        .out_dir
        .or_else(|| config.paths.out_dir.clone())
        .ok_or_else(|| Error::Config("no output directory (--out-dir or paths.out_dir)".into()))?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let path = corpus_path(a.corpus, &config)?;
    let corpus = load_corpus(&path)?;
    let dev = config.paths.dev_corpus.as_ref().map(load_corpus).transpose()?;
    let pair = PairModel::from_checkpoint(load_checkpoint(&a.pair)?)?;
    let session = SessionModel::from_checkpoint(load_checkpoint(&a.session)?)?;
    let d_m = PairDataset::read_jsonl(&corpus, open(&a.pairs)?)?;
    let mut m = Manifest::new("cotrain", &config)?;
    m.seed("cotrain", config.cotrain.seed)
        .seed("pair_retrain", config.cotrain.pair_retrain.seed)
        .input("corpus", &path)?
        .input("pair", &a.pair)?
        .input("session", &a.session)?
        .input("pairs", &a.pairs)?;
    if let Some(d) = &config.paths.dev_corpus {
        m.input("dev", d)?;
    }
    let outcome = cotrain_loop(&corpus, dev.as_ref(), &pair, &session, &d_m, &config.cotrain)?;
    let pair_out = out_dir.join("pair.ckpt");
    let session_out = out_dir.join("session.ckpt");
    let report_out = out_dir.join("report.json");
    outcome.pair.to_checkpoint().save(&pair_out)?;
    outcome.session.to_checkpoint().save(&session_out)?;
    write_json(&report_out, &outcome.reports)?;
    m.output("pair", &pair_out)?
        .output("session", &session_out)?
        .output("report", &report_out)?;
    m.write(out_dir.join("manifest.json"))?;
    print_iterations(&outcome.reports);
    Ok(())
}

fn print_iterations(reports: &[IterationReport]) {
    for r in reports {
        let f1 = r.pair_f1.map_or("-".to_string(), |f| format!("{f:.2}"));
        let shen = r.metrics.as_ref().map_or("-".to_string(), |m| format!("{:.2}", m.shen_f));
        println!(
            "iteration {}: reward {:.4}, harvested {}, pair F1 {f1}, Shen-F {shen}",
            r.iter, r.mean_reward, r.harvested_pairs
        );
    }
}

fn disentangle(mut config: RunConfig, method: Method, a: DisentangleArgs) -> Result<()> {
    if let Some(t) = a.threshold {
        config.greedy.threshold = t;
    }
    if a.window.is_some() {
        config.greedy.window = a.window;
    }
    config.validate()?;
    let path = corpus_path(a.corpus, &config)?;
    let corpus = load_corpus(&path)?;
    let ckpt = load_checkpoint(&a.model)?;
    let preds: Vec<Partition> = match method {
        Method::TwoStep => {
            let pair = PairModel::from_checkpoint(ckpt)?;
            corpus.conversations.iter().map(|c| greedy_disentangle(&pair, c, &config.greedy)).collect()
        }
        Method::E2e => {
            let session = SessionModel::from_checkpoint(ckpt)?;
            corpus
                .conversations
                .iter()
                .map(|c| disentangle_e2e(&session, c, DecodeMode::Argmax).0)
                .collect()
        }
    };
    write_partitions(
        corpus.conversations.iter().map(|c| c.conv_id.as_str()).zip(&preds),
        create(&a.out)?,
    )?;
    let mut m = Manifest::new(format!("disentangle {method:?}").to_lowercase(), &config)?;
    m.input("corpus", &path)?.input("model", &a.model)?.output("partitions", &a.out)?;
    m.write(manifest_path(&a.out))?;
    let sessions: usize = preds.iter().map(Partition::session_count).sum();
    println!("{} conversations, {sessions} sessions", preds.len());
    Ok(())
}

/// Predicted and gold partitions aligned by conversation id.
fn aligned(pred: &Path, gold: Vec<(String, Partition)>) -> Result<(Vec<Partition>, Vec<Partition>)> {
    let mut by_id = std::collections::HashMap::new();
    for r in load_partitions(pred)? {
        let p = Partition::new(r.assignment)?;
        if by_id.insert(r.conv_id.clone(), p).is_some() {
            return Err(Error::invalid(format!("conversation {} predicted twice", r.conv_id)));
        }
    }
    let mut preds = Vec::with_capacity(gold.len());
    let mut golds = Vec::with_capacity(gold.len());
    for (id, g) in gold {
        let p = by_id
            .remove(&id)
            .ok_or_else(|| Error::Mismatch(format!("no prediction for conversation {id}")))?;
        preds.push(p);
        golds.push(g);
    }
    if let Some(id) = by_id.keys().next() {
        return Err(Error::Mismatch(format!("prediction for unknown conversation {id}")));
    }
    Ok((preds, golds))
}

fn evaluate_cmd(config: RunConfig, a: EvaluateArgs) -> Result<()> {
    let mut m = Manifest::new("evaluate", &config)?;
    m.input("pred", &a.pred)?;
    let gold: Vec<(String, Partition)> = match (&a.gold, &a.corpus) {
        (Some(g), _) => {
            m.input("gold", g)?;
            load_partitions(g)?
                .into_iter()
                .map(|r| Ok((r.conv_id, Partition::new(r.assignment)?)))
                .collect::<Result<_>>()?
        }
        (None, corpus) => {
            let path = corpus_path(corpus.clone(), &config)?;
            m.input("corpus", &path)?;
            let corpus: Corpus = load_corpus(&path)?;
            corpus
                .conversations
                .iter()
                .map(|c| Ok((c.conv_id.clone(), c.gold()?.clone())))
                .collect::<Result<_>>()?
        }
    };
    let (preds, golds) = aligned(&a.pred, gold)?;
    let report: MetricReport = evaluate(&preds, &golds)?;
    if let Some(out) = &a.out {
        write_json(out, &report)?;
        m.output("report", out)?;
        m.write(manifest_path(out))?;
    }
    println!("{}", serde_json::to_string(&report)?);
    print!("{}", report.table());
    Ok(())
}

fn respsel_eval(mut config: RunConfig, a: RespselEvalArgs) -> Result<()> {
    if let Some(c) = a.candidates {
        config.respsel.n_candidates = c;
    }
    config.validate()?;
    let path = corpus_path(a.corpus, &config)?;
    let corpus = load_corpus(&path)?;
    let model = RespselModel::from_checkpoint(load_checkpoint(&a.model)?)?;
    let mut m = Manifest::new("respsel-eval", &config)?;
    m.seed("dataset", config.seed).input("corpus", &path)?.input("model", &a.model)?;
    let instances = build_respsel_dataset(&corpus, config.respsel.n_candidates, config.seed)?;
    let parts = respsel_partitions(&instances, a.partition_source, a.session.as_deref(), &mut m)?;
    let report = evaluate_respsel(&model, &instances, &parts)?;
    write_json(&a.out, &report)?;
    m.output("report", &a.out)?;
    if let Some(d) = &a.dataset_out {
        write_respsel_dataset(&instances, Some(&parts), create(d)?)?;
        m.output("dataset", d)?;
    }
    m.write(manifest_path(&a.out))?;
    println!(
        "Hits@1 {:.2}  Hits@2 {:.2}  Hits@5 {:.2}  MRR {:.2}  ({} instances)",
        report.hits_at_1, report.hits_at_2, report.hits_at_5, report.mrr, report.instances
    );
    Ok(())
}
