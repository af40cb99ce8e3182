//! Training batch assembly: per-image positive and negative texts, the
//! positive index maps, and a sentence cache that tops batches up to a
//! constant text count.

use std::collections::{HashSet, VecDeque};

use rand::seq::SliceRandom;
use serde::Serialize;
use thiserror::Error;

use crate::negatives::SubGraphSample;
use crate::render::{render, RenderError};
use crate::seed;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BatchError {
    #[error("invalid batch config: {0}")]
    Config(String),
    #[error("image {0} has no positive sub-graphs")]
    EmptyPositives(usize),
    #[error("expected {expected} images, got {got}")]
    WrongSize { expected: usize, got: usize },
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchConfig {
    pub n: usize,
    pub max_pos: usize,
    pub max_neg: usize,
    pub text_batch_size: usize,
    pub stage: u8,
    pub seed: u64,
}

impl BatchConfig {
    /// Stage-2 config with 3 positives and 6 negatives per image and a
    /// text batch of `9n`.
    pub fn new(n: usize, seed: u64) -> Self {
        BatchConfig { n, max_pos: 3, max_neg: 6, text_batch_size: 9 * n, stage: 2, seed }
    }

    /// Same config moved to `stage`. Stage 1 takes one positive and one
    /// negative per image, so its text batch is `2n`.
    pub fn for_stage(&self, stage: u8) -> Self {
        if stage == 1 {
            BatchConfig { max_pos: 1, max_neg: 1, text_batch_size: 2 * self.n, stage, ..self.clone() }
        } else {
            BatchConfig { stage, ..self.clone() }
        }
    }

    pub fn validate(&self) -> Result<(), BatchError> {
        let err = |m: String| Err(BatchError::Config(m));
        if self.n == 0 {
            return err("n must be >= 1".into());
        }
        if self.max_pos == 0 {
            return err("max_pos must be >= 1".into());
        }
        match self.stage {
            1 if self.max_pos != 1 || self.max_neg != 1 => {
                return err(format!(
                    "stage 1 requires max_pos = max_neg = 1, got {} and {}",
                    self.max_pos, self.max_neg
                ))
            }
            1 | 2 => {}
            s => return err(format!("stage must be 1 or 2, got {s}")),
        }
        if self.text_batch_size < self.n {
            return err(format!("text_batch_size {} < n {}", self.text_batch_size, self.n));
        }
        Ok(())
    }
}

/// FIFO of recent positive texts. Padding reads from it without consuming.
#[derive(Debug, Clone, Default)]
pub struct SentenceCache {
    entries: VecDeque<String>,
    capacity: usize,
}

impl SentenceCache {
    pub fn new(capacity: usize) -> Self {
        SentenceCache { entries: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }

    pub fn extend<I: IntoIterator<Item = String>>(&mut self, texts: I) {
        for t in texts {
            self.entries.push_back(t);
            if self.entries.len() > self.capacity {
                self.entries.pop_front();
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainBatch<I> {
    pub images: Vec<I>,
    /// Positives grouped by image, then negatives grouped by image, then
    /// cache padding.
    pub texts: Vec<String>,
    pub n_pos: usize,
    /// Owning image of each positive text `j < n_pos`.
    pub pos_owner: Vec<usize>,
    /// Positive text indices of each image.
    pub pos_sets: Vec<Vec<usize>>,
    /// Source image of each text `j ≥ n_pos`; `None` for cache padding.
    pub neg_owner: Vec<Option<usize>>,
    pub cache_padded: usize,
    /// How many texts short of `text_batch_size` the batch is.
    pub deficit: usize,
}

impl<I> TrainBatch<I> {
    pub fn n_images(&self) -> usize {
        self.images.len()
    }

    pub fn n_neg(&self) -> usize {
        self.texts.len() - self.n_pos
    }
}

struct ImageTexts {
    pos: Vec<String>,
    neg: Vec<String>,
}

fn select_texts(index: usize, samples: &[SubGraphSample], cfg: &BatchConfig) -> Result<ImageTexts, BatchError> {
    let mut seen = HashSet::new();
    let mut pos = Vec::new();
    for s in samples {
        if pos.len() == cfg.max_pos {
            break;
        }
        let text = render(&s.positive)?;
        if seen.insert(text.clone()) {
            pos.push(text);
        }
    }
    if pos.is_empty() {
        return Err(BatchError::EmptyPositives(index));
    }
    let mut ranked: Vec<_> = samples.iter().flat_map(|s| &s.negatives).collect();
    ranked.sort_by_key(|n| n.draw);
    let mut neg = Vec::new();
    for n in ranked {
        if neg.len() == cfg.max_neg {
            break;
        }
        let text = render(&n.graph)?;
        if seen.insert(text.clone()) {
            neg.push(text);
        }
    }
    Ok(ImageTexts { pos, neg })
}

/// Drops texts until the batch fits: negatives first, then surplus
/// positives, each time from the image holding the most (later image on
/// ties).
fn trim(per_image: &mut [ImageTexts], limit: usize) {
    let total = |p: &[ImageTexts]| p.iter().map(|t| t.pos.len() + t.neg.len()).sum::<usize>();
    while total(per_image) > limit {
        let most = |f: fn(&ImageTexts) -> usize, floor: usize| {
            per_image
                .iter()
                .enumerate()
                .filter(|(_, t)| f(t) > floor)
                .max_by_key(|&(i, t)| (f(t), i))
                .map(|(i, _)| i)
        };
        if let Some(i) = most(|t| t.neg.len(), 0) {
            per_image[i].neg.pop();
        } else if let Some(i) = most(|t| t.pos.len(), 1) {
            per_image[i].pos.pop();
        } else {
            break;
        }
    }
}

/// Builds one batch from `n` images and their mined samples, then appends
/// the batch's positive texts to `cache`.
pub fn build_batch<I: Clone>(
    samples: &[(I, Vec<SubGraphSample>)],
    cfg: &BatchConfig,
    cache: &mut SentenceCache,
) -> Result<TrainBatch<I>, BatchError> {
    cfg.validate()?;
    if samples.len() != cfg.n {
        return Err(BatchError::WrongSize { expected: cfg.n, got: samples.len() });
    }
    let mut per_image = samples
        .iter()
        .enumerate()
        .map(|(i, (_, s))| select_texts(i, s, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    trim(&mut per_image, cfg.text_batch_size);

    let mut texts = Vec::with_capacity(cfg.text_batch_size);
    let mut pos_owner = Vec::new();
    let mut pos_sets = vec![Vec::new(); per_image.len()];
    for (i, t) in per_image.iter().enumerate() {
        for p in &t.pos {
            pos_sets[i].push(texts.len());
            pos_owner.push(i);
            texts.push(p.clone());
        }
    }
    let n_pos = texts.len();
    let mut neg_owner = Vec::new();
    for (i, t) in per_image.iter().enumerate() {
        for n in &t.neg {
            neg_owner.push(Some(i));
            texts.push(n.clone());
        }
    }

    let mut in_batch: HashSet<&str> = texts.iter().map(String::as_str).collect();
    let mut padding = Vec::new();
    for c in cache.iter() {
        if texts.len() + padding.len() >= cfg.text_batch_size {
            break;
        }
        if in_batch.insert(c) {
            padding.push(c.to_string());
        }
    }
    let cache_padded = padding.len();
    neg_owner.extend(std::iter::repeat_n(None, cache_padded));
    texts.extend(padding);
    let deficit = cfg.text_batch_size.saturating_sub(texts.len());

    cache.extend(texts[..n_pos].iter().cloned());
    Ok(TrainBatch {
        images: samples.iter().map(|(img, _)| img.clone()).collect(),
        texts,
        n_pos,
        pos_owner,
        pos_sets,
        neg_owner,
        cache_padded,
        deficit,
    })
}

/// Image order for one epoch, seeded by `(seed, epoch)`.
pub fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut seed::derived_rng(seed, seed::stream::BATCH_ORDER, epoch));
    order
}
