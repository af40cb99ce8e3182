//! Command-line entry point. Stages exchange JSONL records:
//!
//! ```text
//! parse     captions.txt      -> {"image_id", "objects", "attributes", "relations"}
//! decompose graph records     -> {"image_id", "positives": [graph]}
//! augment   positive records  -> {"image_id", "samples": [{"positive", "negatives"}]}
//! batch     sample records    -> {"batch", "stage", "images", "texts", ...}
//! ```
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::batch::{build_batch, epoch_order, BatchConfig, SentenceCache, TrainBatch};
use crate::decompose::{decompose, DecompositionConfig};
use crate::graph::SceneGraph;
use crate::loss::{check_gradients, clip_loss, mosaiclip_loss, RandomBatch};
use crate::negatives::{mine_negatives, NegativeSpec, SubGraphSample, Vocab};
use crate::parser::{load_graph_json, parse_caption, Lexicon};
use crate::render::render;
use crate::seed;
use crate::synth::{self, CorpusRecord, EvalPair, Perturbation, SynthConfig};
use crate::train::{
    evaluate_swap_retrieval, metrics_csv, train, CurriculumSchedule, HashedEncoderParams, Objective,
    TrainConfig,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data { file: String, line: Option<usize>, message: String },
}

impl CliError {
    fn data(file: &Path, line: usize, message: impl ToString) -> Self {
        CliError::Data { file: file.display().to_string(), line: Some(line), message: message.to_string() }
    }

    fn file(file: &Path, message: impl ToString) -> Self {
        CliError::Data { file: file.display().to_string(), line: None, message: message.to_string() }
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data { .. } => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data { file, line: Some(l), message } => write!(f, "{file}: line {l}: {message}"),
            CliError::Data { file, line: None, message } => write!(f, "{file}: {message}"),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "mosaiclip", version, about = "Scene-graph sub-graph contrastive training pipeline")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse captions (one per line) into scene-graph records.
    Parse(ParseArgs),
    /// Decompose scene graphs into positive sub-graphs.
    Decompose(DecomposeArgs),
    /// Mine hard negatives for each positive sub-graph.
    Augment(AugmentArgs),
    /// Render scene-graph records to text, one line each.
    Render(RenderArgs),
    /// Assemble training batches from augmented records.
    Batch(BatchArgs),
    /// Check analytic loss gradients against finite differences.
    Losscheck(LosscheckArgs),
    /// Train the hashed dual encoder.
    TrainToy(TrainArgs),
    /// Swap-retrieval accuracy of saved parameters.
    Eval(EvalArgs),
    /// parse -> decompose -> augment -> batch in one run.
    Pipeline(PipelineArgs),
    /// Write the synthetic corpus, eval pairs, lexicon and vocab.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct CommonConfig {
    /// key=value file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ParseArgs {
    #[arg(long)]
    captions: PathBuf,
    #[arg(long)]
    lexicon_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonConfig,
}

#[derive(Args, Debug, Clone)]
struct DecomposeOpts {
    #[arg(long, default_value_t = 10)]
    max_subgraphs: usize,
    #[arg(long, default_value_t = 2)]
    max_attr_subset: usize,
    #[arg(long)]
    no_bare_objects: bool,
}

impl DecomposeOpts {
    fn config(&self, seed: u64) -> DecompositionConfig {
        DecompositionConfig {
            max_subgraphs: self.max_subgraphs,
            max_attr_subset: self.max_attr_subset,
            include_bare_objects: !self.no_bare_objects,
            seed,
        }
    }
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    #[arg(long)]
    graphs: PathBuf,
    #[command(flatten)]
    opts: DecomposeOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonConfig,
}

#[derive(Args, Debug, Clone)]
struct AugmentOpts {
    #[arg(long, default_value_t = 0.15)]
    p_obj: f64,
    #[arg(long, default_value_t = 0.425)]
    p_rel: f64,
    #[arg(long, default_value_t = 0.425)]
    p_attr: f64,
    /// Maximum negatives per positive sub-graph.
    #[arg(long = "max-neg-per-positive", default_value_t = 6)]
    max_neg_per_positive: usize,
    #[arg(long)]
    no_join: bool,
}

impl AugmentOpts {
    fn spec(&self, seed: u64) -> NegativeSpec {
        NegativeSpec {
            probs: [self.p_obj, self.p_rel, self.p_attr],
            max_negatives_per_positive: self.max_neg_per_positive,
            join_enabled: !self.no_join,
            seed,
        }
    }
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[arg(long)]
    positives: PathBuf,
    /// Directory with objects.txt, attributes.txt, relations.txt. Without
    /// it the vocabulary is collected from the input positives.
    #[arg(long)]
    vocab_dir: Option<PathBuf>,
    #[command(flatten)]
    opts: AugmentOpts,
    /// Alias of --max-neg-per-positive.
    #[arg(long)]
    max_neg: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonConfig,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    graphs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonConfig,
}

#[derive(Args, Debug, Clone)]
struct BatchOpts {
    #[arg(long, default_value_t = 256)]
    n: usize,
    /// Defaults to 3 in stage 2 and 1 in stage 1.
    #[arg(long)]
    max_pos: Option<usize>,
    /// Defaults to 6 in stage 2 and 1 in stage 1.
    #[arg(long)]
    max_neg: Option<usize>,
    /// Defaults to n·(max_pos + max_neg).
    #[arg(long)]
    text_batch_size: Option<usize>,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: u8,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
}

#[derive(Args, Debug)]
struct BatchArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    opts: BatchOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonConfig,
}

#[derive(Args, Debug)]
struct LosscheckArgs {
    #[arg(long, default_value_t = 100)]
    batches: usize,
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    common: CommonConfig,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ObjectiveArg {
    Mosaic,
    Clip,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Records with image_id, image_graph and caption.
    #[arg(long)]
    corpus: PathBuf,
    /// Eval pairs scored after every epoch.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Defaults to the bundled synthetic lexicon.
    #[arg(long)]
    lexicon_dir: Option<PathBuf>,
    /// Defaults to the vocabulary of the corpus image graphs.
    #[arg(long)]
    vocab_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mosaic")]
    objective: ObjectiveArg,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    stage1_epochs: usize,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    max_pos: usize,
    #[arg(long, default_value_t = 6)]
    max_neg: usize,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    tau_lr: Option<f64>,
    #[arg(long)]
    init_std: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 4096)]
    hash_dim: usize,
    #[arg(long, default_value_t = 64)]
    embed_dim: usize,
    #[command(flatten)]
    decompose: DecomposeOpts,
    #[command(flatten)]
    augment: AugmentOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    #[arg(long)]
    params_out: Option<PathBuf>,
    #[arg(long)]
    batch_log: Option<PathBuf>,
    #[command(flatten)]
    common: CommonConfig,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[command(flatten)]
    common: CommonConfig,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    captions: PathBuf,
    #[arg(long)]
    lexicon_dir: PathBuf,
    #[arg(long)]
    vocab_dir: Option<PathBuf>,
    #[command(flatten)]
    decompose: DecomposeOpts,
    #[command(flatten)]
    augment: AugmentOpts,
    #[command(flatten)]
    batch: BatchOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonConfig,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum PerturbationArg {
    AttributeSwap,
    ObjectSwap,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    records: usize,
    #[arg(long, default_value_t = 1000)]
    eval_pairs: usize,
    /// Perturbations used for eval pairs, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "attribute-swap")]
    perturbations: Vec<PerturbationArg>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Receives corpus.jsonl, pairs.jsonl, lexicon/ and vocab/.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    common: CommonConfig,
}

/// A scene graph with its image id, serialized flat.
#[derive(Debug, Clone, Serialize)]
struct GraphRecord {
    image_id: String,
    #[serde(flatten)]
    graph: SceneGraph,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PositivesRecord {
    image_id: String,
    positives: Vec<SceneGraph>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SamplesRecord {
    image_id: String,
    samples: Vec<SubGraphSample>,
}

#[derive(Debug, Clone, Serialize)]
struct BatchRecord {
    epoch: usize,
    batch: usize,
    stage: u8,
    #[serde(flatten)]
    contents: TrainBatch<String>,
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code. Errors go to standard error.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let argv = match with_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Splices `key=value` lines of the `--config` file in front of the
/// subcommand's own flags, so that explicit flags override them.
fn with_config(argv: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            path = Some(argv.get(i + 1).ok_or_else(|| CliError::Usage("--config needs a file".into()))?.clone());
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("config {path}: {e}")))?;
    let mut extra = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config {path}: line {}: expected key=value", no + 1)))?;
        let flag = format!("--{}", key.trim().replace('_', "-"));
        match value.trim() {
            "true" => extra.push(flag),
            "false" => {}
            v => {
                extra.push(flag);
                extra.push(v.to_string());
            }
        }
    }
    if argv.len() < 2 {
        return Ok(argv);
    }
    let mut out = argv[..2].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Parse(a) => cmd_parse(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Render(a) => cmd_render(a),
        Command::Batch(a) => cmd_batch(a),
        Command::Losscheck(a) => cmd_losscheck(a),
        Command::TrainToy(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

// ---- io helpers ----

/// Non-blank lines with their 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    read_lines(path)?
        .into_iter()
        .map(|(no, line)| {
            let de = &mut serde_json::Deserializer::from_str(&line);
            serde_path_to_error::deserialize(de)
                .map(|v| (no, v))
                .map_err(|e| CliError::data(path, no, format!("at {}: {}", e.path(), e.inner())))
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    let f = fs::File::create(path).map_err(|e| CliError::file(path, e))?;
    Ok(BufWriter::new(f))
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = create(path)?;
    let io_err = |e: io::Error| CliError::file(path, e);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| CliError::file(path, e))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::file(path, e))
}

fn load_lexicon(dir: &Path) -> Result<Lexicon> {
    Lexicon::load_dir(dir).map_err(|e| CliError::file(dir, e))
}

fn load_vocab(dir: &Path) -> Result<Vocab> {
    Vocab::load_dir(dir).map_err(|e| CliError::file(dir, e))
}

// ---- stages ----

fn stage_parse(path: &Path, lex: &Lexicon) -> Result<Vec<(usize, GraphRecord)>> {
    read_lines(path)?
        .into_iter()
        .enumerate()
        .map(|(k, (no, line))| {
            let graph = parse_caption(&line, lex).map_err(|e| CliError::data(path, no, e))?;
            Ok((no, GraphRecord { image_id: format!("caption-{k}"), graph }))
        })
        .collect()
}

fn stage_decompose(
    path: &Path,
    records: &[(usize, GraphRecord)],
    opts: &DecomposeOpts,
    seed: u64,
) -> Result<Vec<(usize, PositivesRecord)>> {
    let base = opts.config(seed);
    records
        .iter()
        .enumerate()
        .map(|(k, (no, r))| {
            let positives = decompose(&r.graph, &base.for_item(k as u64)).map_err(|e| CliError::data(path, *no, e))?;
            Ok((*no, PositivesRecord { image_id: r.image_id.clone(), positives }))
        })
        .collect()
}

fn stage_augment(
    path: &Path,
    records: &[(usize, PositivesRecord)],
    vocab: Option<Vocab>,
    opts: &AugmentOpts,
    seed: u64,
) -> Result<Vec<(usize, SamplesRecord)>> {
    let vocab = vocab.unwrap_or_else(|| Vocab::from_graphs(records.iter().flat_map(|(_, r)| &r.positives)));
    let base = opts.spec(seed);
    base.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    records
        .iter()
        .enumerate()
        .map(|(k, (no, r))| {
            let samples =
                mine_negatives(&r.positives, &vocab, &base.for_item(k as u64)).map_err(|e| CliError::data(path, *no, e))?;
            Ok((*no, SamplesRecord { image_id: r.image_id.clone(), samples }))
        })
        .collect()
}

fn stage_batch(path: &Path, records: &[(usize, SamplesRecord)], opts: &BatchOpts, seed: u64) -> Result<Vec<BatchRecord>> {
    if records.is_empty() {
        return Err(CliError::file(path, "no records"));
    }
    let n = opts.n.min(records.len());
    let stage_default = |v: Option<usize>, two: usize| v.unwrap_or(if opts.stage == 1 { 1 } else { two });
    let (max_pos, max_neg) = (stage_default(opts.max_pos, 3), stage_default(opts.max_neg, 6));
    let cfg = BatchConfig {
        n,
        max_pos,
        max_neg,
        text_batch_size: opts.text_batch_size.unwrap_or(n * (max_pos + max_neg)),
        stage: opts.stage,
        seed,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut cache = SentenceCache::new(cfg.text_batch_size);
    let mut out = Vec::new();
    for epoch in 0..opts.epochs {
        let order = epoch_order(records.len(), seed, epoch as u64);
        for (b, chunk) in order.chunks_exact(n).enumerate() {
            let samples: Vec<(String, Vec<SubGraphSample>)> = chunk
                .iter()
                .map(|&k| (records[k].1.image_id.clone(), records[k].1.samples.clone()))
                .collect();
            let contents = build_batch(&samples, &cfg, &mut cache).map_err(|e| match e {
                crate::batch::BatchError::EmptyPositives(i) => {
                    CliError::data(path, records[chunk[i]].0, "record has no positives")
                }
                other => CliError::file(path, other),
            })?;
            out.push(BatchRecord { epoch, batch: b, stage: opts.stage, contents });
        }
    }
    Ok(out)
}

fn strip<T: Clone>(records: &[(usize, T)]) -> Vec<T> {
    records.iter().map(|(_, r)| r.clone()).collect()
}

// ---- commands ----

fn read_graph_records(path: &Path) -> Result<Vec<(usize, GraphRecord)>> {
    read_lines(path)?
        .into_iter()
        .enumerate()
        .map(|(k, (no, line))| {
            let graph = load_graph_json(&line).map_err(|e| CliError::data(path, no, e))?;
            let id = serde_json::from_str::<serde_json::Value>(&line)
                .ok()
                .and_then(|v| v.get("image_id").and_then(|x| x.as_str()).map(str::to_string))
                .unwrap_or_else(|| format!("record-{k}"));
            Ok((no, GraphRecord { image_id: id, graph }))
        })
        .collect()
}

fn cmd_parse(a: ParseArgs) -> Result<()> {
    let lex = load_lexicon(&a.lexicon_dir)?;
    let records = stage_parse(&a.captions, &lex)?;
    write_jsonl(&a.out, &strip(&records))
}

fn cmd_decompose(a: DecomposeArgs) -> Result<()> {
    let graphs = read_graph_records(&a.graphs)?;
    let records = stage_decompose(&a.graphs, &graphs, &a.opts, a.seed)?;
    write_jsonl(&a.out, &strip(&records))
}

fn cmd_augment(a: AugmentArgs) -> Result<()> {
    let records: Vec<(usize, PositivesRecord)> = read_jsonl(&a.positives)?;
    let vocab = a.vocab_dir.as_deref().map(load_vocab).transpose()?;
    let mut opts = a.opts.clone();
    if let Some(m) = a.max_neg {
        opts.max_neg_per_positive = m;
    }
    let out = stage_augment(&a.positives, &records, vocab, &opts, a.seed)?;
    write_jsonl(&a.out, &strip(&out))
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let graphs = read_graph_records(&a.graphs)?;
    let mut text = String::new();
    for (no, r) in &graphs {
        text.push_str(&render(&r.graph).map_err(|e| CliError::data(&a.graphs, *no, e))?);
        text.push('\n');
    }
    write_text(&a.out, &text)
}

fn cmd_batch(a: BatchArgs) -> Result<()> {
    let records: Vec<(usize, SamplesRecord)> = read_jsonl(&a.corpus)?;
    let batches = stage_batch(&a.corpus, &records, &a.opts, a.seed)?;
    write_jsonl(&a.out, &batches)
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let lex = load_lexicon(&a.lexicon_dir)?;
    let vocab = a.vocab_dir.as_deref().map(load_vocab).transpose()?;
    let parsed = stage_parse(&a.captions, &lex)?;
    let positives = stage_decompose(&a.captions, &parsed, &a.decompose, a.seed)?;
    let samples = stage_augment(&a.captions, &positives, vocab, &a.augment, a.seed)?;
    let batches = stage_batch(&a.captions, &samples, &a.batch, a.seed)?;
    write_jsonl(&a.out, &batches)
}

fn cmd_losscheck(a: LosscheckArgs) -> Result<()> {
    if !(a.h > 0.0) {
        return Err(CliError::Usage("--h must be positive".into()));
    }
    let mut rng = seed::derived_rng(a.seed, seed::stream::GRADCHECK, 0);
    let (mut worst_clip, mut worst_mosaic): (f64, f64) = (0.0, 0.0);
    for _ in 0..a.batches {
        let b = RandomBatch::generate(&mut rng, 8, 32, 16);
        let e = check_gradients(
            |u, v, t| mosaiclip_loss(u, v, &b.pos_sets, &b.pos_owner, t),
            b.u.view(),
            b.v.view(),
            b.tau,
            a.h,
        )
        .map_err(|e| CliError::file(Path::new("<random batch>"), e))?;
        worst_mosaic = worst_mosaic.max(e);
        let n = b.u.nrows();
        let vp = b.v.slice(ndarray::s![..n, ..]);
        let e = check_gradients(clip_loss, b.u.view(), vp, b.tau, a.h)
            .map_err(|e| CliError::file(Path::new("<random batch>"), e))?;
        worst_clip = worst_clip.max(e);
    }
    println!("batches={} h={:e}", a.batches, a.h);
    println!("clip_loss max_rel_error={worst_clip:.3e}");
    println!("mosaiclip_loss max_rel_error={worst_mosaic:.3e}");
    if worst_clip.max(worst_mosaic) > a.tolerance {
        return Err(CliError::file(
            Path::new("<random batches>"),
            format!("gradient error exceeds tolerance {:e}", a.tolerance),
        ));
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let records: Vec<CorpusRecord> = strip(&read_jsonl(&a.corpus)?);
    let pairs: Vec<EvalPair> = match &a.pairs {
        Some(p) => strip(&read_jsonl(p)?),
        None => Vec::new(),
    };
    let lex = match &a.lexicon_dir {
        Some(d) => load_lexicon(d)?,
        None => synth::lexicon(),
    };
    let vocab = match &a.vocab_dir {
        Some(d) => load_vocab(d)?,
        None => Vocab::from_graphs(records.iter().map(|r| &r.image_graph)),
    };
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        objective: match a.objective {
            ObjectiveArg::Mosaic => Objective::Mosaic,
            ObjectiveArg::Clip => Objective::Clip,
        },
        schedule: CurriculumSchedule { stage1_epochs: a.stage1_epochs, total_epochs: a.epochs },
        batch_size: a.n,
        max_pos: a.max_pos,
        max_neg: a.max_neg,
        lr: a.lr.unwrap_or(defaults.lr),
        tau_lr: a.tau_lr.unwrap_or(defaults.tau_lr),
        init_std: a.init_std.unwrap_or(defaults.init_std),
        init_tau: a.tau.unwrap_or(defaults.init_tau),
        seed: a.seed,
        hash_dim: a.hash_dim,
        embed_dim: a.embed_dim,
        decompose: a.decompose.config(a.seed),
        negatives: a.augment.spec(a.seed),
    };
    let mut log = a.batch_log.as_deref().map(create).transpose()?;
    let out = train(&records, &pairs, &lex, &vocab, &cfg, log.as_mut().map(|w| w as &mut dyn Write))
        .map_err(|e| match e {
            crate::train::TrainError::Parse { index, source } => CliError::data(&a.corpus, index + 1, source),
            crate::train::TrainError::Config(m) => CliError::Usage(m),
            other => CliError::file(&a.corpus, other),
        })?;
    if let (Some(w), Some(p)) = (log.as_mut(), &a.batch_log) {
        w.flush().map_err(|e| CliError::file(p, e))?;
    }
    let csv = metrics_csv(&out.history);
    match &a.metrics_out {
        Some(p) => write_text(p, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(p) = &a.params_out {
        let json = serde_json::to_string(&out.params).map_err(|e| CliError::file(p, e))?;
        write_text(p, &json)?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let text = fs::read_to_string(&a.params).map_err(|e| CliError::file(&a.params, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let params: HashedEncoderParams = serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::file(&a.params, format!("at {}: {}", e.path(), e.inner())))?;
    params.validate().map_err(|e| CliError::file(&a.params, e))?;
    let pairs: Vec<EvalPair> = strip(&read_jsonl(&a.pairs)?);
    if pairs.is_empty() {
        return Err(CliError::file(&a.pairs, "no eval pairs"));
    }
    println!("pairs={} swap_accuracy={:.6}", pairs.len(), evaluate_swap_retrieval(&params, &pairs));
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let perturbations = a
        .perturbations
        .iter()
        .map(|p| match p {
            PerturbationArg::AttributeSwap => Perturbation::AttributeSwap,
            PerturbationArg::ObjectSwap => Perturbation::ObjectSwap,
        })
        .collect();
    let corpus = synth::generate(&SynthConfig { records: a.records, eval_pairs: a.eval_pairs, perturbations, seed: a.seed });
    let dir = &a.out_dir;
    for sub in ["lexicon", "vocab"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| CliError::file(dir, e))?;
    }
    write_jsonl(&dir.join("corpus.jsonl"), &corpus.records)?;
    write_jsonl(&dir.join("pairs.jsonl"), &corpus.eval_pairs)?;
    let list = |words: &[&str]| words.iter().map(|w| format!("{w}\n")).collect::<String>();
    write_text(&dir.join("lexicon/attributes.txt"), &list(&synth::ATTRIBUTES))?;
    write_text(&dir.join("lexicon/relations.txt"), &list(&synth::RELATIONS))?;
    write_text(&dir.join("vocab/objects.txt"), &list(&synth::OBJECTS))?;
    write_text(&dir.join("vocab/attributes.txt"), &list(&synth::ATTRIBUTES))?;
    write_text(&dir.join("vocab/relations.txt"), &list(&synth::RELATIONS))?;
    Ok(())
}
