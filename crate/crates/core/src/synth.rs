//! Synthetic image-caption corpus. Each "image" is its ground-truth scene
//! graph; each caption renders a sub-graph of it, so caption graphs are
//! sub-graphs of image graphs by construction.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::graph::{is_subgraph, GraphBuilder, SceneGraph};
use crate::negatives::{swap_endpoints, Vocab};
use crate::parser::{Lexicon, ParseError};
use crate::render::render;
use crate::seed::{self, Rng};
use crate::train::text_features;

pub const OBJECTS: [&str; 50] = [
    "cat", "dog", "horse", "cow", "sheep", "bird", "duck", "table", "chair", "sofa", "bed", "lamp", "desk",
    "car", "bus", "truck", "bike", "boat", "train", "plane", "tree", "flower", "bush", "rock", "fence",
    "house", "door", "window", "wall", "road", "bench", "ball", "kite", "cup", "plate", "bowl", "bottle",
    "vase", "book", "phone", "laptop", "clock", "mirror", "shelf", "box", "bag", "hat", "shirt", "shoe",
    "umbrella",
];

pub const ATTRIBUTES: [&str; 20] = [
    "red", "blue", "green", "yellow", "black", "white", "brown", "gray", "orange", "purple", "pink",
    "wooden", "metal", "plastic", "glass", "small", "large", "old", "new", "striped",
];

pub const RELATIONS: [&str; 10] = [
    "on", "under", "behind", "near", "above", "next to", "in front of", "beside", "holding", "inside",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub image_id: String,
    pub image_graph: SceneGraph,
    pub caption: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    AttributeSwap,
    ObjectSwap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub image_graph: SceneGraph,
    pub correct_caption: String,
    pub perturbed_caption: String,
    pub perturbation: Perturbation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthConfig {
    pub records: usize,
    pub eval_pairs: usize,
    /// Perturbations eval pairs may use; one is picked uniformly per pair
    /// among those that apply.
    pub perturbations: Vec<Perturbation>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            records: 2000,
            eval_pairs: 1000,
            perturbations: vec![Perturbation::AttributeSwap],
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub records: Vec<CorpusRecord>,
    pub eval_pairs: Vec<EvalPair>,
}

/// Lexicon that parses every synthetic caption.
pub fn lexicon() -> Lexicon {
    Lexicon::new(["a", "an", "the"], ATTRIBUTES, RELATIONS).expect("static lexicon is valid")
}

pub fn vocab() -> Vocab {
    Vocab::new(OBJECTS, ATTRIBUTES, RELATIONS)
}

/// 2 or 3 objects with distinct nouns, one attribute each (two with
/// probability 0.3), connected
/// by a tree of relations whose first edge joins objects 0 and 1.
fn image_graph(rng: &mut Rng) -> SceneGraph {
    let n = rng.random_range(2..=3);
    let nouns: Vec<&str> = OBJECTS.choose_multiple(rng, n).copied().collect();
    let mut b = GraphBuilder::new();
    let ids: Vec<u32> = nouns.iter().map(|noun| b.object(noun)).collect();
    for &id in &ids {
        let k = if rng.random_bool(0.3) { 2 } else { 1 };
        for a in ATTRIBUTES.choose_multiple(rng, k) {
            b.attribute(id, a);
        }
    }
    b.relation(ids[0], RELATIONS.choose(rng).expect("non-empty"), ids[1]);
    if n == 3 {
        let other = ids[rng.random_range(0..2)];
        let pred = RELATIONS.choose(rng).expect("non-empty");
        if rng.random_bool(0.5) {
            b.relation(other, pred, ids[2]);
        } else {
            b.relation(ids[2], pred, other);
        }
    }
    b.build().expect("generated graph is valid")
}

/// The first relation with both endpoints and all their attributes.
fn caption_graph(image: &SceneGraph) -> SceneGraph {
    let r = &image.relations()[0];
    let objects = [r.source, r.target].into_iter().collect();
    let attrs = image
        .attributes()
        .iter()
        .filter(|a| a.owner == r.source || a.owner == r.target)
        .map(|a| a.id)
        .collect();
    image
        .extract(&objects, &attrs, &[r.id].into_iter().collect())
        .expect("sub-graph of a valid graph")
}

/// Exchanges the last attribute of each endpoint, i.e. the ones rendered
/// next to the head nouns.
fn swap_last_attributes(g: &SceneGraph) -> Option<SceneGraph> {
    let r = &g.relations()[0];
    let last = |o: u32| g.attributes().iter().rposition(|a| a.owner == o);
    let (i, j) = (last(r.source)?, last(r.target)?);
    let (objects, mut attributes, relations) = g.clone().into_parts();
    let tmp = attributes[i].value.clone();
    attributes[i].value = attributes[j].value.clone();
    attributes[j].value = tmp;
    let swapped = SceneGraph::new(objects, attributes, relations).ok()?;
    let values = |o: u32| swapped.attributes_of(o).map(|a| a.value.clone()).collect::<Vec<_>>();
    let distinct = |v: Vec<String>| v.iter().collect::<std::collections::BTreeSet<_>>().len() == v.len();
    (swapped != *g && distinct(values(r.source)) && distinct(values(r.target))).then_some(swapped)
}

fn perturb(caption: &SceneGraph, kind: Perturbation) -> Option<SceneGraph> {
    match kind {
        Perturbation::ObjectSwap => Some(swap_endpoints(caption)),
        Perturbation::AttributeSwap => swap_last_attributes(caption),
    }
}

/// Builds an eval pair for `image`, or `None` when no perturbation yields a
/// caption that is both false for the image and distinguishable by its
/// hashed text features.
pub fn eval_pair(image: SceneGraph, kinds: &[Perturbation], rng: &mut Rng) -> Option<EvalPair> {
    let caption = caption_graph(&image);
    let correct = render(&caption).ok()?;
    let mut kinds = kinds.to_vec();
    kinds.shuffle(rng);
    for kind in kinds {
        let Some(perturbed) = perturb(&caption, kind) else { continue };
        if is_subgraph(&perturbed, &image) {
            continue;
        }
        let text = render(&perturbed).ok()?;
        let h = crate::train::DEFAULT_HASH_DIM;
        if text == correct || text_features(&text, h).ok()? == text_features(&correct, h).ok()? {
            continue;
        }
        return Some(EvalPair {
            image_graph: image,
            correct_caption: correct,
            perturbed_caption: text,
            perturbation: kind,
        });
    }
    None
}

/// Generates the corpus. Panics if `cfg.perturbations` is empty while
/// eval pairs are requested.
pub fn generate(cfg: &SynthConfig) -> SyntheticCorpus {
    assert!(cfg.eval_pairs == 0 || !cfg.perturbations.is_empty(), "no perturbation kinds");
    let records = (0..cfg.records)
        .map(|k| {
            let mut rng = seed::derived_rng(cfg.seed, seed::stream::SYNTH, k as u64);
            let image_graph = image_graph(&mut rng);
            let caption = render(&caption_graph(&image_graph)).expect("non-empty caption graph");
            CorpusRecord { image_id: format!("img{k:05}"), image_graph, caption }
        })
        .collect();
    let mut eval_pairs = Vec::with_capacity(cfg.eval_pairs);
    let mut rng = seed::derived_rng(cfg.seed, seed::stream::SYNTH_EVAL, 0);
    while eval_pairs.len() < cfg.eval_pairs {
        if let Some(pair) = eval_pair(image_graph(&mut rng), &cfg.perturbations, &mut rng) {
            eval_pairs.push(pair);
        }
    }
    SyntheticCorpus { records, eval_pairs }
}

/// Checks that every caption parses under `lex` to a sub-graph of its image.
pub fn check_record(record: &CorpusRecord, lex: &Lexicon) -> Result<bool, ParseError> {
    let parsed = crate::parser::parse_caption(&record.caption, lex)?;
    Ok(is_subgraph(&parsed, &record.image_graph))
}
