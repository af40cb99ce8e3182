//! Hard-negative sub-graph mining.
//!
//! Three transformations perturb a positive sub-graph:
//!
//! * [`f_obj`] replaces attributes of a single-object graph,
//! * [`f_rel`] swaps the endpoints of a one-relation graph, replaces an
//!   endpoint or the predicate, or joins a random attributed object to it,
//! * [`f_attr`] swaps or replaces attributes of a one-relation graph.
//!
//! [`mine_negatives`] pools the candidates of every positive of one image by
//! category and draws them without replacement: each draw picks a category
//! with probabilities `(p_obj, p_rel, p_attr)` renormalized over the
//! categories that still have candidates, then a candidate uniformly. The
//! draw rank is kept on every negative, so any prefix of the draw order
//! follows the configured category mix.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{canonicalize, AttributeNode, ObjectNode, RelationEdge, SceneGraph};
use crate::parser::{read_word_list, tokenize};
use crate::seed::{self, Rng};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MineError {
    #[error("wrong graph shape for {transform}: {reason}")]
    WrongShape { transform: &'static str, reason: String },
    #[error("vocabulary list '{0}' is empty but required")]
    EmptyVocab(&'static str),
    #[error("empty positive set")]
    EmptyPositives,
    #[error("invalid negative spec: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "c_obj")]
    Obj,
    #[serde(rename = "c_rel")]
    Rel,
    #[serde(rename = "c_attr")]
    Attr,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Obj, Category::Rel, Category::Attr];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    Swap,
    ReplaceNode,
    ReplaceEdge,
    Join,
}

/// External object, attribute and relation sets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    objects: Vec<String>,
    attributes: Vec<String>,
    relations: Vec<String>,
}

fn normalize_list<I: IntoIterator<Item = S>, S: AsRef<str>>(items: I) -> Vec<String> {
    let mut seen = HashSet::new();
    items
        .into_iter()
        .map(|s| tokenize(s.as_ref()).join(" "))
        .filter(|s| !s.is_empty() && seen.insert(s.clone()))
        .collect()
}

impl Vocab {
    /// Entries are lowercased, whitespace-normalized and deduplicated
    /// (first occurrence kept).
    pub fn new<O, A, R>(objects: O, attributes: A, relations: R) -> Self
    where
        O: IntoIterator,
        O::Item: AsRef<str>,
        A: IntoIterator,
        A::Item: AsRef<str>,
        R: IntoIterator,
        R::Item: AsRef<str>,
    {
        Vocab {
            objects: normalize_list(objects),
            attributes: normalize_list(attributes),
            relations: normalize_list(relations),
        }
    }

    /// Reads `objects.txt`, `attributes.txt` and `relations.txt`; a missing
    /// file yields an empty list.
    pub fn load_dir(dir: &Path) -> Result<Self, crate::parser::ParseError> {
        let read = |name: &str| {
            let p = dir.join(name);
            if p.exists() {
                read_word_list(&p)
            } else {
                Ok(Vec::new())
            }
        };
        Ok(Vocab::new(read("objects.txt")?, read("attributes.txt")?, read("relations.txt")?))
    }

    /// Vocabulary observed in a corpus of graphs, in first-seen order.
    pub fn from_graphs<'a>(graphs: impl IntoIterator<Item = &'a SceneGraph>) -> Self {
        let (mut o, mut a, mut r) = (Vec::new(), Vec::new(), Vec::new());
        for g in graphs {
            o.extend(g.objects().iter().map(ObjectNode::noun));
            a.extend(g.attributes().iter().map(|x| x.value.clone()));
            r.extend(g.relations().iter().map(|x| x.predicate.clone()));
        }
        Vocab::new(o, a, r)
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSpec {
    /// Category probabilities `(p_obj, p_rel, p_attr)`.
    pub probs: [f64; 3],
    pub max_negatives_per_positive: usize,
    pub join_enabled: bool,
    pub seed: u64,
}

impl Default for NegativeSpec {
    fn default() -> Self {
        NegativeSpec {
            probs: [0.15, 0.425, 0.425],
            max_negatives_per_positive: 6,
            join_enabled: true,
            seed: 0,
        }
    }
}

impl NegativeSpec {
    pub fn validate(&self) -> Result<(), MineError> {
        if self.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(MineError::Spec(format!("negative probability in {:?}", self.probs)));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MineError::Spec(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Spec for the `index`-th image of a corpus, with its own seed.
    pub fn for_item(&self, index: u64) -> Self {
        NegativeSpec {
            seed: seed::derive(self.seed, seed::stream::MINE_CANDIDATES, index),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Negative {
    pub graph: SceneGraph,
    pub category: Category,
    pub technique: Technique,
    /// Rank in the image-level draw order.
    pub draw: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubGraphSample {
    pub positive: SceneGraph,
    pub negatives: Vec<Negative>,
}

struct Parts {
    objects: Vec<ObjectNode>,
    attributes: Vec<AttributeNode>,
    relations: Vec<RelationEdge>,
}

impl Parts {
    fn of(g: &SceneGraph) -> Self {
        let (objects, attributes, relations) = g.clone().into_parts();
        Parts { objects, attributes, relations }
    }

    fn build(self) -> SceneGraph {
        SceneGraph::new(self.objects, self.attributes, self.relations)
            .expect("perturbation keeps graph valid")
    }
}

fn pick<'a>(pool: &'a [String], exclude: &HashSet<&str>, rng: &mut Rng) -> Option<&'a String> {
    let allowed: Vec<&String> = pool.iter().filter(|s| !exclude.contains(s.as_str())).collect();
    allowed.choose(rng).copied()
}

fn owner_values(g: &SceneGraph, owner: u32) -> HashSet<&str> {
    g.attributes_of(owner).map(|a| a.value.as_str()).collect()
}

fn split_noun(noun: &str) -> (String, Vec<String>) {
    let mut tokens: Vec<String> = noun.split_whitespace().map(str::to_string).collect();
    let head = tokens.pop().unwrap_or_default();
    (head, tokens)
}

fn single_relation(g: &SceneGraph, transform: &'static str) -> Result<RelationEdge, MineError> {
    match g.relations() {
        [r] => Ok(r.clone()),
        rs => Err(MineError::WrongShape {
            transform,
            reason: format!("expected exactly 1 relation, found {}", rs.len()),
        }),
    }
}

/// Replaces each attribute of a single-object graph in turn with one drawn
/// from the vocabulary, excluding attributes already on the object.
pub fn f_obj(g: &SceneGraph, vocab: &Vocab, rng: &mut Rng) -> Result<Vec<SceneGraph>, MineError> {
    Ok(obj_variants(g, vocab, rng)?.into_iter().map(|(g, _)| g).collect())
}

fn obj_variants(g: &SceneGraph, vocab: &Vocab, rng: &mut Rng) -> Result<Vec<(SceneGraph, Technique)>, MineError> {
    if g.object_count() != 1 {
        return Err(MineError::WrongShape {
            transform: "f_obj",
            reason: format!("expected exactly 1 object, found {}", g.object_count()),
        });
    }
    let owner = g.objects()[0].id;
    let exclude = owner_values(g, owner);
    let mut out = Vec::new();
    for (k, _) in g.attributes().iter().enumerate() {
        if let Some(new) = pick(&vocab.attributes, &exclude, rng) {
            let mut p = Parts::of(g);
            p.attributes[k].value = new.clone();
            out.push((p.build(), Technique::ReplaceNode));
        }
    }
    Ok(out)
}

/// Relation-focused negatives of a one-relation graph: endpoint swap,
/// endpoint replacement, predicate replacement and (optionally) a join with
/// a random attributed object.
pub fn f_rel(g: &SceneGraph, vocab: &Vocab, rng: &mut Rng, join_enabled: bool) -> Result<Vec<SceneGraph>, MineError> {
    Ok(rel_variants(g, vocab, rng, join_enabled)?
        .into_iter()
        .map(|(g, _)| g)
        .collect())
}

fn rel_variants(
    g: &SceneGraph,
    vocab: &Vocab,
    rng: &mut Rng,
    join_enabled: bool,
) -> Result<Vec<(SceneGraph, Technique)>, MineError> {
    let rel = single_relation(g, "f_rel")?;
    let mut out = Vec::new();

    out.push((swap_endpoints(g), Technique::Swap));

    let nouns: Vec<String> = g.objects().iter().map(ObjectNode::noun).collect();
    let current: HashSet<&str> = nouns.iter().map(String::as_str).collect();
    let endpoint = if rng.random_bool(0.5) { rel.source } else { rel.target };
    if let Some(noun) = pick(&vocab.objects, &current, rng) {
        let mut p = Parts::of(g);
        let o = p.objects.iter_mut().find(|o| o.id == endpoint).expect("endpoint exists");
        (o.head, o.modifiers) = split_noun(noun);
        out.push((p.build(), Technique::ReplaceNode));
    }

    if let Some(pred) = pick(&vocab.relations, &HashSet::from([rel.predicate.as_str()]), rng) {
        let mut p = Parts::of(g);
        p.relations[0].predicate = pred.clone();
        out.push((p.build(), Technique::ReplaceEdge));
    }

    if join_enabled {
        let anchor = if rng.random_bool(0.5) { rel.source } else { rel.target };
        let noun = pick(&vocab.objects, &current, rng);
        let attr = vocab.attributes.choose(rng);
        let pred = vocab.relations.choose(rng);
        if let (Some(noun), Some(pred)) = (noun, pred) {
            let mut p = Parts::of(g);
            let new_id = p.objects.iter().map(|o| o.id).max().unwrap_or(0) + 1;
            let (head, modifiers) = split_noun(noun);
            p.objects.push(ObjectNode { id: new_id, head, modifiers });
            if let Some(value) = attr {
                let id = p.attributes.iter().map(|a| a.id + 1).max().unwrap_or(0);
                p.attributes.push(AttributeNode { id, value: value.clone(), owner: new_id });
            }
            let id = p.relations.iter().map(|r| r.id + 1).max().unwrap_or(0);
            p.relations.push(RelationEdge {
                id,
                predicate: pred.clone(),
                source: anchor,
                target: new_id,
            });
            out.push((p.build(), Technique::Join));
        }
    }
    Ok(out)
}

/// Exchanges source and target of every relation. An involution.
pub fn swap_endpoints(g: &SceneGraph) -> SceneGraph {
    let mut p = Parts::of(g);
    for r in &mut p.relations {
        std::mem::swap(&mut r.source, &mut r.target);
    }
    p.build()
}

/// Attribute-focused negatives of a one-relation graph: exchange of the
/// endpoints' first attributes, and per-attribute replacement.
pub fn f_attr(g: &SceneGraph, vocab: &Vocab, rng: &mut Rng) -> Result<Vec<SceneGraph>, MineError> {
    Ok(attr_variants(g, vocab, rng)?.into_iter().map(|(g, _)| g).collect())
}

fn attr_variants(g: &SceneGraph, vocab: &Vocab, rng: &mut Rng) -> Result<Vec<(SceneGraph, Technique)>, MineError> {
    let rel = single_relation(g, "f_attr")?;
    let mut out = Vec::new();
    if g.attributes().is_empty() {
        return Ok(out);
    }
    if let Some(swapped) = swap_first_attributes(g, rel.source, rel.target) {
        out.push((swapped, Technique::Swap));
    }
    for (k, a) in g.attributes().iter().enumerate() {
        let exclude = owner_values(g, a.owner);
        if let Some(new) = pick(&vocab.attributes, &exclude, rng) {
            let mut p = Parts::of(g);
            p.attributes[k].value = new.clone();
            out.push((p.build(), Technique::ReplaceNode));
        }
    }
    Ok(out)
}

/// Exchanges the first attribute of `a` with the first attribute of `b`.
/// `None` when either side is bare, the values are equal, or the exchange
/// would duplicate a value on its new owner.
pub fn swap_first_attributes(g: &SceneGraph, a: u32, b: u32) -> Option<SceneGraph> {
    let first = |o: u32| g.attributes().iter().position(|x| x.owner == o);
    let (i, j) = (first(a)?, first(b)?);
    let (va, vb) = (&g.attributes()[i].value, &g.attributes()[j].value);
    if va == vb || owner_values(g, a).contains(vb.as_str()) || owner_values(g, b).contains(va.as_str()) {
        return None;
    }
    let mut p = Parts::of(g);
    let tmp = p.attributes[i].value.clone();
    p.attributes[i].value = p.attributes[j].value.clone();
    p.attributes[j].value = tmp;
    Some(p.build())
}

struct Candidate {
    positive: usize,
    graph: SceneGraph,
    technique: Technique,
}

fn check_vocab(positives: &[SceneGraph], vocab: &Vocab, spec: &NegativeSpec) -> Result<(), MineError> {
    let [p_obj, p_rel, p_attr] = spec.probs;
    for g in positives {
        let attributed = !g.attributes().is_empty();
        let one_relation = g.relations().len() == 1;
        if p_obj > 0.0 && g.object_count() == 1 && attributed && vocab.attributes.is_empty() {
            return Err(MineError::EmptyVocab("attributes"));
        }
        if p_rel > 0.0 && one_relation {
            if vocab.objects.is_empty() {
                return Err(MineError::EmptyVocab("objects"));
            }
            if vocab.relations.is_empty() {
                return Err(MineError::EmptyVocab("relations"));
            }
        }
        if p_attr > 0.0 && one_relation && attributed && vocab.attributes.is_empty() {
            return Err(MineError::EmptyVocab("attributes"));
        }
    }
    Ok(())
}

/// Mines hard negatives for the positive set of one image.
///
/// Returns one sample per positive, in input order; each sample's
/// negatives are sorted by draw rank. No negative is canonically equal to
/// any positive of the set, and negatives are unique across the set.
pub fn mine_negatives(
    positives: &[SceneGraph],
    vocab: &Vocab,
    spec: &NegativeSpec,
) -> Result<Vec<SubGraphSample>, MineError> {
    spec.validate()?;
    if positives.is_empty() {
        return Err(MineError::EmptyPositives);
    }
    check_vocab(positives, vocab, spec)?;

    let mut seen: HashSet<_> = positives
        .iter()
        .map(|g| canonicalize(g).expect("valid positive"))
        .collect();

    let mut pools: [Vec<Candidate>; 3] = Default::default();
    for (k, g) in positives.iter().enumerate() {
        let mut rng = seed::derived_rng(spec.seed, seed::stream::MINE_CANDIDATES, k as u64);
        let mut add = |category: Category, variants: Vec<(SceneGraph, Technique)>| {
            for (graph, technique) in variants {
                if seen.insert(canonicalize(&graph).expect("valid negative")) {
                    pools[category.index()].push(Candidate { positive: k, graph, technique });
                }
            }
        };
        if g.object_count() == 1 && !g.attributes().is_empty() {
            add(Category::Obj, obj_variants(g, vocab, &mut rng)?);
        }
        if g.relations().len() == 1 {
            add(Category::Rel, rel_variants(g, vocab, &mut rng, spec.join_enabled)?);
            add(Category::Attr, attr_variants(g, vocab, &mut rng)?);
        }
    }

    let mut samples: Vec<SubGraphSample> = positives
        .iter()
        .map(|g| SubGraphSample { positive: g.clone(), negatives: Vec::new() })
        .collect();
    let cap = spec.max_negatives_per_positive;
    let mut rng = seed::derived_rng(spec.seed, seed::stream::MINE_DRAWS, 0);
    let mut draw = 0;
    loop {
        let eligible = |pool: &Vec<Candidate>| -> Vec<usize> {
            pool.iter()
                .enumerate()
                .filter(|(_, c)| samples[c.positive].negatives.len() < cap)
                .map(|(i, _)| i)
                .collect()
        };
        let open: Vec<(Category, Vec<usize>)> = Category::ALL
            .into_iter()
            .filter(|c| spec.probs[c.index()] > 0.0)
            .map(|c| (c, eligible(&pools[c.index()])))
            .filter(|(_, e)| !e.is_empty())
            .collect();
        if open.is_empty() {
            break;
        }
        let total: f64 = open.iter().map(|(c, _)| spec.probs[c.index()]).sum();
        let mut u = rng.random::<f64>() * total;
        let mut chosen = open.len() - 1;
        for (i, (c, _)) in open.iter().enumerate() {
            u -= spec.probs[c.index()];
            if u < 0.0 {
                chosen = i;
                break;
            }
        }
        let (category, indices) = &open[chosen];
        let idx = *indices.choose(&mut rng).expect("non-empty");
        let cand = pools[category.index()].remove(idx);
        samples[cand.positive].negatives.push(Negative {
            graph: cand.graph,
            category: *category,
            technique: cand.technique,
            draw,
        });
        draw += 1;
    }
    Ok(samples)
}
