//! Desk-scale dual encoder trained end to end on the contrastive objective.
//!
//! Both encoders hash discrete features into `H` signed buckets and
//! project them with a dense `d×H` matrix. Text features are token
//! unigrams and bigrams; image features are the object, attribute and
//! relation triples of the image's scene graph.

use std::collections::BTreeMap;
use std::hash::Hasher;
use std::io::Write;

use fnv::FnvHasher;
use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::{build_batch, epoch_order, BatchConfig, BatchError, SentenceCache};
use crate::decompose::{decompose, DecomposeError, DecompositionConfig};
use crate::graph::SceneGraph;
use crate::loss::{clip_loss, mosaiclip_loss, normalize, Embedding, LossError, Temperature};
use crate::negatives::{mine_negatives, MineError, NegativeSpec, Vocab};
use crate::parser::{parse_caption, tokenize, Lexicon, ParseError};
use crate::seed;
use crate::synth::{CorpusRecord, EvalPair};

pub const DEFAULT_HASH_DIM: usize = 4096;
pub const DEFAULT_EMBED_DIM: usize = 64;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty text")]
    EmptyText,
    #[error("empty graph")]
    EmptyGraph,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("record {index}: {source}")]
    Parse {
        index: usize,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Mine(#[from] MineError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Sparse feature vector: `(bucket, value)` sorted by bucket, no zeros.
pub type Features = Vec<(usize, f64)>;

fn hash_feature(key: &str, h: usize, acc: &mut BTreeMap<usize, f64>) {
    let mut hasher = FnvHasher::default();
    hasher.write(key.as_bytes());
    let x = hasher.finish();
    let sign = if x >> 63 == 0 { 1.0 } else { -1.0 };
    *acc.entry((x % h as u64) as usize).or_insert(0.0) += sign;
}

fn collect(acc: BTreeMap<usize, f64>) -> Features {
    acc.into_iter().filter(|&(_, v)| v != 0.0).collect()
}

/// Signed hash of token unigrams and bigrams.
pub fn text_features(text: &str, h: usize) -> Result<Features, TrainError> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(TrainError::EmptyText);
    }
    let mut acc = BTreeMap::new();
    for t in &tokens {
        hash_feature(&format!("u {t}"), h, &mut acc);
    }
    for w in tokens.windows(2) {
        hash_feature(&format!("b {} {}", w[0], w[1]), h, &mut acc);
    }
    Ok(collect(acc))
}

/// Signed hash of object, (attribute, owner) and (source, predicate,
/// target) triples, plus the (source, predicate) and (predicate, target)
/// halves of each relation.
pub fn image_features(g: &SceneGraph, h: usize) -> Result<Features, TrainError> {
    if g.object_count() == 0 {
        return Err(TrainError::EmptyGraph);
    }
    let noun = |id: u32| g.object(id).expect("validated graph").noun();
    let mut acc = BTreeMap::new();
    for o in g.objects() {
        hash_feature(&format!("o {}", o.noun()), h, &mut acc);
    }
    for a in g.attributes() {
        hash_feature(&format!("a {}|{}", a.value, noun(a.owner)), h, &mut acc);
    }
    for r in g.relations() {
        let (src, tgt) = (noun(r.source), noun(r.target));
        hash_feature(&format!("r {src}|{}|{tgt}", r.predicate), h, &mut acc);
        hash_feature(&format!("s {src}|{}", r.predicate), h, &mut acc);
        hash_feature(&format!("t {}|{tgt}", r.predicate), h, &mut acc);
    }
    Ok(collect(acc))
}

pub trait DualEncoder {
    fn encode_text(&self, text: &str) -> Result<Embedding, TrainError>;
    fn encode_image(&self, g: &SceneGraph) -> Result<Embedding, TrainError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashedEncoderParams {
    pub hash_dim: usize,
    pub embed_dim: usize,
    pub w_text: Array2<f64>,
    pub w_image: Array2<f64>,
    pub temperature: Temperature,
}

/// Projection of sparse features, before normalization.
fn project(w: &Array2<f64>, x: &Features) -> Array1<f64> {
    let mut out = Array1::zeros(w.nrows());
    for &(k, v) in x {
        out.scaled_add(v, &w.column(k));
    }
    out
}

fn embed(w: &Array2<f64>, x: &Features) -> Result<(Array1<f64>, f64), TrainError> {
    let raw = project(w, x);
    let norm = raw.dot(&raw).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(LossError::ZeroVector.into());
    }
    Ok((raw / norm, norm))
}

impl HashedEncoderParams {
    /// Entries drawn i.i.d. from N(0, 1/d).
    pub fn init(hash_dim: usize, embed_dim: usize, tau: Temperature, seed: u64) -> Result<Self, TrainError> {
        Self::init_with_std(hash_dim, embed_dim, 1.0 / (embed_dim as f64).sqrt(), tau, seed)
    }

    /// Entries drawn i.i.d. from N(0, std²).
    pub fn init_with_std(
        hash_dim: usize,
        embed_dim: usize,
        std: f64,
        tau: Temperature,
        seed: u64,
    ) -> Result<Self, TrainError> {
        if hash_dim < 2 || embed_dim < 2 {
            return Err(TrainError::Config("hash and embedding dims must be >= 2".into()));
        }
        let normal = Normal::new(0.0, std).map_err(|e| TrainError::Config(format!("init std: {e}")))?;
        let mut rng = seed::derived_rng(seed, seed::stream::INIT, 0);
        let w_text = Array2::from_shape_simple_fn((embed_dim, hash_dim), || normal.sample(&mut rng));
        let w_image = Array2::from_shape_simple_fn((embed_dim, hash_dim), || normal.sample(&mut rng));
        Ok(HashedEncoderParams { hash_dim, embed_dim, w_text, w_image, temperature: tau })
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let shape = [self.embed_dim, self.hash_dim];
        if self.hash_dim < 2 || self.embed_dim < 2 {
            return Err(TrainError::Params("dims must be >= 2".into()));
        }
        if self.w_text.shape() != shape || self.w_image.shape() != shape {
            return Err(TrainError::Params(format!("projections must be {}x{}", shape[0], shape[1])));
        }
        if !self.w_text.iter().chain(self.w_image.iter()).all(|x| x.is_finite()) {
            return Err(TrainError::Params("non-finite projection entry".into()));
        }
        self.temperature.validate()?;
        Ok(())
    }

    /// `W -= lr·∇W` on touched columns, and `log_tau -= tau_lr·∂L/∂log_tau`.
    pub fn apply(&mut self, grads: &Gradients, lr: f64, tau_lr: f64) {
        for (k, g) in &grads.w_text {
            self.w_text.column_mut(*k).scaled_add(-lr, g);
        }
        for (k, g) in &grads.w_image {
            self.w_image.column_mut(*k).scaled_add(-lr, g);
        }
        self.temperature.step(grads.log_tau, tau_lr);
    }
}

impl DualEncoder for HashedEncoderParams {
    fn encode_text(&self, text: &str) -> Result<Embedding, TrainError> {
        let x = text_features(text, self.hash_dim)?;
        Ok(normalize(&Embedding::new(project(&self.w_text, &x).to_vec()))?)
    }

    fn encode_image(&self, g: &SceneGraph) -> Result<Embedding, TrainError> {
        let x = image_features(g, self.hash_dim)?;
        Ok(normalize(&Embedding::new(project(&self.w_image, &x).to_vec()))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Multi-positive loss over decomposed and mined texts.
    Mosaic,
    /// One caption per image, no negatives, CLIP loss.
    Clip,
}

/// Featurized batch ready for the loss.
#[derive(Debug, Clone)]
pub struct BatchInput {
    pub images: Vec<Features>,
    pub texts: Vec<Features>,
    pub pos_sets: Vec<Vec<usize>>,
    pub pos_owner: Vec<usize>,
    pub objective: Objective,
}

/// Sparse gradient: touched projection columns and `log_tau`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub w_text: BTreeMap<usize, Array1<f64>>,
    pub w_image: BTreeMap<usize, Array1<f64>>,
    pub log_tau: f64,
}

impl Gradients {
    pub fn sq_norm(&self) -> f64 {
        let cols = self.w_text.values().chain(self.w_image.values());
        cols.map(|c| c.dot(c)).sum::<f64>() + self.log_tau * self.log_tau
    }
}

/// Back-propagates through normalization and projection, accumulating into
/// the sparse column gradients.
fn backprop(
    grad_unit: ndarray::ArrayView1<f64>,
    unit: &Array1<f64>,
    norm: f64,
    x: &Features,
    acc: &mut BTreeMap<usize, Array1<f64>>,
) {
    // d/d(raw) of raw/|raw| applied to g: (g - (uᵀg) u) / |raw|
    let raw_grad = (&grad_unit - &(unit * unit.dot(&grad_unit))) / norm;
    for &(k, v) in x {
        acc.entry(k)
            .or_insert_with(|| Array1::zeros(unit.len()))
            .scaled_add(v, &raw_grad);
    }
}

/// Loss of one batch and its gradient with respect to the parameters. The
/// multi-positive loss is divided by the number of images so that both
/// objectives are per-image means.
pub fn batch_loss(params: &HashedEncoderParams, input: &BatchInput) -> Result<(f64, Gradients), TrainError> {
    let d = params.embed_dim;
    let embed_all = |w: &Array2<f64>, xs: &[Features]| -> Result<(Array2<f64>, Vec<f64>), TrainError> {
        let mut m = Array2::zeros((xs.len(), d));
        let mut norms = Vec::with_capacity(xs.len());
        for (i, x) in xs.iter().enumerate() {
            let (u, n) = embed(w, x)?;
            m.row_mut(i).assign(&u);
            norms.push(n);
        }
        Ok((m, norms))
    };
    let (u, u_norms) = embed_all(&params.w_image, &input.images)?;
    let (v, v_norms) = embed_all(&params.w_text, &input.texts)?;
    let tau = params.temperature;
    let (mut result, scale) = match input.objective {
        Objective::Clip => (clip_loss(u.view(), v.view(), tau)?, 1.0),
        Objective::Mosaic => (
            mosaiclip_loss(u.view(), v.view(), &input.pos_sets, &input.pos_owner, tau)?,
            1.0 / input.images.len() as f64,
        ),
    };
    result.grad_u *= scale;
    result.grad_v *= scale;
    let mut grads = Gradients {
        log_tau: if tau.trainable { result.grad_log_tau * scale } else { 0.0 },
        ..Default::default()
    };
    for (i, x) in input.images.iter().enumerate() {
        backprop(result.grad_u.row(i), &u.row(i).to_owned(), u_norms[i], x, &mut grads.w_image);
    }
    for (j, x) in input.texts.iter().enumerate() {
        backprop(result.grad_v.row(j), &v.row(j).to_owned(), v_norms[j], x, &mut grads.w_text);
    }
    Ok((result.value * scale, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurriculumSchedule {
    pub stage1_epochs: usize,
    pub total_epochs: usize,
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.stage1_epochs > self.total_epochs {
            return Err(TrainError::Config(format!(
                "stage1_epochs {} > total_epochs {}",
                self.stage1_epochs, self.total_epochs
            )));
        }
        Ok(())
    }

    /// Stage of 0-based `epoch`.
    pub fn stage(&self, epoch: usize) -> u8 {
        if epoch < self.stage1_epochs {
            1
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub schedule: CurriculumSchedule,
    pub batch_size: usize,
    pub max_pos: usize,
    pub max_neg: usize,
    pub lr: f64,
    /// Learning rate of log τ; 0 keeps τ at `init_tau`.
    pub tau_lr: f64,
    /// Std of the zero-mean normal projection init.
    pub init_std: f64,
    pub seed: u64,
    pub hash_dim: usize,
    pub embed_dim: usize,
    pub init_tau: f64,
    pub decompose: DecompositionConfig,
    pub negatives: NegativeSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Mosaic,
            schedule: CurriculumSchedule { stage1_epochs: 0, total_epochs: 20 },
            batch_size: 64,
            max_pos: 3,
            max_neg: 6,
            lr: 0.1,
            tau_lr: 0.0,
            init_std: 0.03,
            seed: 0,
            hash_dim: DEFAULT_HASH_DIM,
            embed_dim: DEFAULT_EMBED_DIM,
            init_tau: Temperature::DEFAULT_TAU,
            decompose: DecompositionConfig::default(),
            negatives: NegativeSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub swap_accuracy: f64,
    pub stage: u8,
}

/// One line of the batch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLogEntry {
    pub epoch: usize,
    pub batch: usize,
    pub stage: u8,
    pub images: usize,
    pub positives: usize,
    pub texts: usize,
    pub max_pos_per_image: usize,
    pub max_neg_per_image: usize,
    pub cache_padded: usize,
    pub deficit: usize,
    pub loss: f64,
}

/// Fraction of pairs whose image is strictly closer to the correct caption
/// than to the perturbed one. Encoding failures count as misses.
pub fn evaluate_swap_retrieval<E: DualEncoder + ?Sized>(encoder: &E, pairs: &[EvalPair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let hit = |p: &EvalPair| -> Result<bool, TrainError> {
        let img = encoder.encode_image(&p.image_graph)?;
        let good = encoder.encode_text(&p.correct_caption)?;
        let bad = encoder.encode_text(&p.perturbed_caption)?;
        Ok(img.dot(&good) > img.dot(&bad))
    };
    let hits = pairs.iter().filter(|p| hit(p).unwrap_or(false)).count();
    hits as f64 / pairs.len() as f64
}

/// Caption graphs and positive sub-graphs of each record.
struct Prepared {
    image: Features,
    caption: Features,
    positives: Vec<SceneGraph>,
}

fn prepare(
    records: &[CorpusRecord],
    lex: &Lexicon,
    cfg: &TrainConfig,
) -> Result<Vec<Prepared>, TrainError> {
    records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            let graph = parse_caption(&r.caption, lex).map_err(|source| TrainError::Parse { index, source })?;
            let positives = match cfg.objective {
                Objective::Mosaic => decompose(&graph, &cfg.decompose.for_item(index as u64))?,
                Objective::Clip => Vec::new(),
            };
            Ok(Prepared {
                image: image_features(&r.image_graph, cfg.hash_dim)?,
                caption: text_features(&r.caption, cfg.hash_dim)?,
                positives,
            })
        })
        .collect()
}

pub struct TrainOutput {
    pub params: HashedEncoderParams,
    pub history: Vec<EpochMetrics>,
    /// Accuracy of the initial parameters.
    pub initial_accuracy: f64,
}

/// Trains from scratch. Epochs before `schedule.stage1_epochs` use one
/// positive and one negative per image. Negatives are mined afresh each
/// epoch. When `batch_log` is given, one JSON line is written per batch.
pub fn train(
    records: &[CorpusRecord],
    eval_pairs: &[EvalPair],
    lex: &Lexicon,
    vocab: &Vocab,
    cfg: &TrainConfig,
    mut batch_log: Option<&mut dyn Write>,
) -> Result<TrainOutput, TrainError> {
    cfg.schedule.validate()?;
    if records.len() < 2 {
        return Err(TrainError::Config("need at least 2 records".into()));
    }
    if cfg.batch_size < 2 || !(cfg.lr > 0.0) {
        return Err(TrainError::Config("batch_size must be >= 2 and lr > 0".into()));
    }
    let n = cfg.batch_size.min(records.len());
    let base = BatchConfig {
        n,
        max_pos: cfg.max_pos,
        max_neg: cfg.max_neg,
        text_batch_size: n * (cfg.max_pos + cfg.max_neg),
        stage: 2,
        seed: cfg.seed,
    };
    base.validate()?;
    cfg.negatives.validate()?;

    let prepared = prepare(records, lex, cfg)?;
    let tau = Temperature::new(cfg.init_tau, true)?;
    let mut params = HashedEncoderParams::init_with_std(cfg.hash_dim, cfg.embed_dim, cfg.init_std, tau, cfg.seed)?;
    let initial_accuracy = evaluate_swap_retrieval(&params, eval_pairs);
    let mut cache = SentenceCache::new(base.text_batch_size);
    let mut history = Vec::with_capacity(cfg.schedule.total_epochs);

    for epoch in 0..cfg.schedule.total_epochs {
        let stage = cfg.schedule.stage(epoch);
        let bcfg = base.for_stage(stage);
        let order = epoch_order(records.len(), cfg.seed, epoch as u64);
        let epoch_spec = NegativeSpec {
            seed: seed::derive(cfg.negatives.seed ^ cfg.seed, seed::stream::EPOCH_MINING, epoch as u64),
            ..cfg.negatives.clone()
        };
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks_exact(n).enumerate() {
            let (input, entry) = match cfg.objective {
                Objective::Clip => {
                    let input = BatchInput {
                        images: chunk.iter().map(|&k| prepared[k].image.clone()).collect(),
                        texts: chunk.iter().map(|&k| prepared[k].caption.clone()).collect(),
                        pos_sets: (0..n).map(|i| vec![i]).collect(),
                        pos_owner: (0..n).collect(),
                        objective: Objective::Clip,
                    };
                    let entry = BatchLogEntry {
                        epoch,
                        batch: b,
                        stage,
                        images: n,
                        positives: n,
                        texts: n,
                        max_pos_per_image: 1,
                        max_neg_per_image: 0,
                        cache_padded: 0,
                        deficit: 0,
                        loss: 0.0,
                    };
                    (input, entry)
                }
                Objective::Mosaic => {
                    let samples = chunk
                        .iter()
                        .map(|&k| {
                            let mined = mine_negatives(&prepared[k].positives, vocab, &epoch_spec.for_item(k as u64))?;
                            Ok((k, mined))
                        })
                        .collect::<Result<Vec<_>, TrainError>>()?;
                    let batch = build_batch(&samples, &bcfg, &mut cache)?;
                    let texts = batch
                        .texts
                        .iter()
                        .map(|t| text_features(t, cfg.hash_dim))
                        .collect::<Result<Vec<_>, _>>()?;
                    let mut neg_counts = vec![0; n];
                    for i in batch.neg_owner.iter().flatten() {
                        neg_counts[*i] += 1;
                    }
                    let entry = BatchLogEntry {
                        epoch,
                        batch: b,
                        stage,
                        images: n,
                        positives: batch.n_pos,
                        texts: batch.texts.len(),
                        max_pos_per_image: batch.pos_sets.iter().map(Vec::len).max().unwrap_or(0),
                        max_neg_per_image: neg_counts.into_iter().max().unwrap_or(0),
                        cache_padded: batch.cache_padded,
                        deficit: batch.deficit,
                        loss: 0.0,
                    };
                    let input = BatchInput {
                        images: batch.images.iter().map(|&k| prepared[k].image.clone()).collect(),
                        texts,
                        pos_sets: batch.pos_sets,
                        pos_owner: batch.pos_owner,
                        objective: Objective::Mosaic,
                    };
                    (input, entry)
                }
            };
            let (loss, grads) = batch_loss(&params, &input)?;
            params.apply(&grads, cfg.lr, cfg.tau_lr);
            loss_sum += loss;
            batches += 1;
            if let Some(w) = batch_log.as_deref_mut() {
                let entry = BatchLogEntry { loss, ..entry };
                serde_json::to_writer(&mut *w, &entry).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
            }
        }
        history.push(EpochMetrics {
            epoch,
            loss: loss_sum / batches.max(1) as f64,
            swap_accuracy: evaluate_swap_retrieval(&params, eval_pairs),
            stage,
        });
    }
    Ok(TrainOutput { params, history, initial_accuracy })
}

/// Metrics as CSV with a header row; floats use six decimals.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,loss,swap_accuracy,stage\n");
    for m in history {
        out.push_str(&format!("{},{:.6},{:.6},{}\n", m.epoch, m.loss, m.swap_accuracy, m.stage));
    }
    out
}
