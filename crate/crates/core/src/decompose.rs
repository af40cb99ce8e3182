//! Coarse-to-fine decomposition of a caption graph into positive sub-graphs.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::graph::{canonicalize, subsets, SceneGraph};
use crate::seed;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecomposeError {
    #[error("graph has no objects")]
    EmptyGraph,
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecompositionConfig {
    /// Maximum number of sub-graphs returned.
    pub max_subgraphs: usize,
    /// Largest attribute subset enumerated per object; the full attribute
    /// set is always included as well.
    pub max_attr_subset: usize,
    pub include_bare_objects: bool,
    pub seed: u64,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        DecompositionConfig {
            max_subgraphs: 10,
            max_attr_subset: 2,
            include_bare_objects: true,
            seed: 0,
        }
    }
}

impl DecompositionConfig {
    /// Config for the `index`-th graph of a corpus, with its own seed.
    pub fn for_item(&self, index: u64) -> Self {
        DecompositionConfig {
            seed: seed::derive(self.seed, seed::stream::DECOMPOSE, index),
            ..self.clone()
        }
    }

    /// A config that keeps the whole candidate pool.
    pub fn uncapped() -> Self {
        DecompositionConfig {
            max_subgraphs: usize::MAX,
            max_attr_subset: usize::MAX,
            ..Default::default()
        }
    }
}

/// Attribute-id choices for one object: every subset up to the cap, plus
/// the full set.
fn attribute_options(g: &SceneGraph, object: u32, cfg: &DecompositionConfig) -> Vec<Vec<u32>> {
    let ids: Vec<u32> = g.attributes_of(object).map(|a| a.id).collect();
    let mut options: Vec<Vec<u32>> = subsets(&ids)
        .into_iter()
        .filter(|s| s.len() <= cfg.max_attr_subset || s.len() == ids.len())
        .collect();
    if !cfg.include_bare_objects && !ids.is_empty() {
        options.retain(|s| !s.is_empty());
    }
    options
}

/// Decomposes `g` into at most `cfg.max_subgraphs` connected sub-graphs of
/// one or two objects.
///
/// When the candidate pool exceeds the cap, two-object graphs with full
/// attributes come first, then one-object graphs with full attributes, and
/// the remaining slots are filled by a seeded uniform draw.
pub fn decompose(g: &SceneGraph, cfg: &DecompositionConfig) -> Result<Vec<SceneGraph>, DecomposeError> {
    if g.object_count() == 0 {
        return Err(DecomposeError::EmptyGraph);
    }
    if cfg.max_subgraphs == 0 {
        return Err(DecomposeError::Config("max_subgraphs must be >= 1".into()));
    }

    let full = |o: u32| -> BTreeSet<u32> { g.attributes_of(o).map(|a| a.id).collect() };
    let no_edges = BTreeSet::new();

    let mut primary: Vec<SceneGraph> = Vec::new();
    for r in g.relations() {
        let objects = BTreeSet::from([r.source, r.target]);
        let attrs = &full(r.source) | &full(r.target);
        primary.push(extract(g, &objects, &attrs, &BTreeSet::from([r.id])));
    }
    for o in g.objects() {
        primary.push(extract(g, &BTreeSet::from([o.id]), &full(o.id), &no_edges));
    }

    let mut rest: Vec<SceneGraph> = Vec::new();
    for o in g.objects() {
        for attrs in attribute_options(g, o.id, cfg) {
            rest.push(extract(g, &BTreeSet::from([o.id]), &attrs.into_iter().collect(), &no_edges));
        }
    }
    for r in g.relations() {
        let objects = BTreeSet::from([r.source, r.target]);
        for a in attribute_options(g, r.source, cfg) {
            for b in attribute_options(g, r.target, cfg) {
                let attrs: BTreeSet<u32> = a.iter().chain(b.iter()).copied().collect();
                rest.push(extract(g, &objects, &attrs, &BTreeSet::from([r.id])));
            }
        }
    }

    let mut seen = HashSet::new();
    let mut dedup = |list: Vec<SceneGraph>| -> Vec<SceneGraph> {
        list.into_iter()
            .filter(|s| seen.insert(canonicalize(s).expect("valid sub-graph")))
            .collect()
    };
    let mut out = dedup(primary);
    let mut rest = dedup(rest);

    if out.len() >= cfg.max_subgraphs {
        out.truncate(cfg.max_subgraphs);
        return Ok(out);
    }
    let slots = cfg.max_subgraphs - out.len();
    if rest.len() > slots {
        rest.shuffle(&mut seed::rng(cfg.seed));
        rest.truncate(slots);
    }
    out.extend(rest);
    Ok(out)
}

fn extract(g: &SceneGraph, objects: &BTreeSet<u32>, attrs: &BTreeSet<u32>, edges: &BTreeSet<u32>) -> SceneGraph {
    g.extract(objects, attrs, edges)
        .expect("sub-graph of a valid graph is valid")
}
