//! Scene-graph data model.
//!
//! A [`SceneGraph`] holds object nodes, attribute nodes attached to objects,
//! and directed labelled relation edges between objects. Graphs are validated
//! on construction and immutable afterwards.
//!
//! This module also provides the canonical key used for deduplication, the
//! label-preserving sub-graph test, and an exhaustive sub-graph enumerator
//! used as a reference for the production decomposer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("invalid graph at {path}: {reason}")]
    Invalid { path: String, reason: String },
}

impl GraphError {
    fn invalid(path: impl Into<String>, reason: impl Into<String>) -> Self {
        GraphError::Invalid {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Field path of the offending entry, e.g. `attributes[0].owner`.
    pub fn path(&self) -> &str {
        match self {
            GraphError::Invalid { path, .. } => path,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub id: u32,
    pub head: String,
    #[serde(default)]
    pub modifiers: Vec<String>,
}

impl ObjectNode {
    /// Modifiers followed by the head, space-joined ("traffic light").
    pub fn noun(&self) -> String {
        let mut s = String::new();
        for m in &self.modifiers {
            s.push_str(m);
            s.push(' ');
        }
        s.push_str(&self.head);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeNode {
    pub id: u32,
    pub value: String,
    pub owner: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub id: u32,
    pub predicate: String,
    pub source: u32,
    pub target: u32,
}

/// Unvalidated graph record as read from JSON.
#[derive(Deserialize)]
pub(crate) struct RawGraph {
    objects: Vec<ObjectNode>,
    #[serde(default)]
    attributes: Vec<AttributeNode>,
    #[serde(default)]
    relations: Vec<RelationEdge>,
}

/// A validated scene graph.
///
/// Serializes to the JSONL graph record
/// `{"objects":[...],"attributes":[...],"relations":[...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph")]
pub struct SceneGraph {
    objects: Vec<ObjectNode>,
    attributes: Vec<AttributeNode>,
    relations: Vec<RelationEdge>,
}

impl TryFrom<RawGraph> for SceneGraph {
    type Error = GraphError;

    fn try_from(raw: RawGraph) -> Result<Self, Self::Error> {
        SceneGraph::new(raw.objects, raw.attributes, raw.relations)
    }
}

impl SceneGraph {
    pub fn new(
        objects: Vec<ObjectNode>,
        attributes: Vec<AttributeNode>,
        relations: Vec<RelationEdge>,
    ) -> Result<Self, GraphError> {
        let g = SceneGraph {
            objects,
            attributes,
            relations,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<(), GraphError> {
        let mut object_ids = BTreeSet::new();
        for (i, o) in self.objects.iter().enumerate() {
            if !object_ids.insert(o.id) {
                return Err(GraphError::invalid(
                    format!("objects[{i}].id"),
                    format!("duplicate object id {}", o.id),
                ));
            }
            if o.head.is_empty() {
                return Err(GraphError::invalid(format!("objects[{i}].head"), "empty head"));
            }
        }
        let mut seen = BTreeSet::new();
        for (i, a) in self.attributes.iter().enumerate() {
            if !seen.insert(a.id) {
                return Err(GraphError::invalid(
                    format!("attributes[{i}].id"),
                    format!("duplicate attribute id {}", a.id),
                ));
            }
            if a.value.is_empty() {
                return Err(GraphError::invalid(format!("attributes[{i}].value"), "empty value"));
            }
            if !object_ids.contains(&a.owner) {
                return Err(GraphError::invalid(
                    format!("attributes[{i}].owner"),
                    format!("unknown object id {}", a.owner),
                ));
            }
        }
        seen.clear();
        for (i, r) in self.relations.iter().enumerate() {
            if !seen.insert(r.id) {
                return Err(GraphError::invalid(
                    format!("relations[{i}].id"),
                    format!("duplicate relation id {}", r.id),
                ));
            }
            if r.predicate.is_empty() {
                return Err(GraphError::invalid(
                    format!("relations[{i}].predicate"),
                    "empty predicate",
                ));
            }
            if !object_ids.contains(&r.source) {
                return Err(GraphError::invalid(
                    format!("relations[{i}].source"),
                    format!("unknown object id {}", r.source),
                ));
            }
            if !object_ids.contains(&r.target) {
                return Err(GraphError::invalid(
                    format!("relations[{i}].target"),
                    format!("unknown object id {}", r.target),
                ));
            }
            if r.source == r.target {
                return Err(GraphError::invalid(
                    format!("relations[{i}].target"),
                    "self-loop relation",
                ));
            }
        }
        Ok(())
    }

    pub fn objects(&self) -> &[ObjectNode] {
        &self.objects
    }

    pub fn attributes(&self) -> &[AttributeNode] {
        &self.attributes
    }

    pub fn relations(&self) -> &[RelationEdge] {
        &self.relations
    }

    pub fn object_count(&self) -> usize {
        self.objects.len()
    }

    pub fn object(&self, id: u32) -> Option<&ObjectNode> {
        self.objects.iter().find(|o| o.id == id)
    }

    fn object_index(&self, id: u32) -> usize {
        self.objects
            .iter()
            .position(|o| o.id == id)
            .expect("validated graph references existing object")
    }

    /// Attributes owned by `owner`, in insertion order.
    pub fn attributes_of(&self, owner: u32) -> impl Iterator<Item = &AttributeNode> {
        self.attributes.iter().filter(move |a| a.owner == owner)
    }

    pub fn into_parts(self) -> (Vec<ObjectNode>, Vec<AttributeNode>, Vec<RelationEdge>) {
        (self.objects, self.attributes, self.relations)
    }

    /// Extracts the sub-graph induced by the given object ids (in this
    /// graph's object order), the given attribute ids and relation ids.
    /// Ids are renumbered densely from 0, preserving relative order.
    pub fn extract(
        &self,
        object_ids: &BTreeSet<u32>,
        attribute_ids: &BTreeSet<u32>,
        relation_ids: &BTreeSet<u32>,
    ) -> Result<SceneGraph, GraphError> {
        let mut remap = BTreeMap::new();
        let mut objects = Vec::new();
        for o in self.objects.iter().filter(|o| object_ids.contains(&o.id)) {
            let new_id = objects.len() as u32;
            remap.insert(o.id, new_id);
            objects.push(ObjectNode {
                id: new_id,
                head: o.head.clone(),
                modifiers: o.modifiers.clone(),
            });
        }
        let lookup = |old: u32, path: &str| {
            remap
                .get(&old)
                .copied()
                .ok_or_else(|| GraphError::invalid(path, format!("object {old} not extracted")))
        };
        let mut attributes = Vec::new();
        for a in self.attributes.iter().filter(|a| attribute_ids.contains(&a.id)) {
            attributes.push(AttributeNode {
                id: attributes.len() as u32,
                value: a.value.clone(),
                owner: lookup(a.owner, "attributes.owner")?,
            });
        }
        let mut relations = Vec::new();
        for r in self.relations.iter().filter(|r| relation_ids.contains(&r.id)) {
            relations.push(RelationEdge {
                id: relations.len() as u32,
                predicate: r.predicate.clone(),
                source: lookup(r.source, "relations.source")?,
                target: lookup(r.target, "relations.target")?,
            });
        }
        SceneGraph::new(objects, attributes, relations)
    }
}

/// Incremental construction helper; ids are assigned densely.
#[derive(Debug, Default, Clone)]
pub struct GraphBuilder {
    objects: Vec<ObjectNode>,
    attributes: Vec<AttributeNode>,
    relations: Vec<RelationEdge>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an object from a possibly multi-word noun; the last token is the head.
    pub fn object(&mut self, noun: &str) -> u32 {
        let mut tokens: Vec<String> = noun.split_whitespace().map(str::to_string).collect();
        let head = tokens.pop().unwrap_or_default();
        self.object_parts(head, tokens)
    }

    pub fn object_parts(&mut self, head: String, modifiers: Vec<String>) -> u32 {
        let id = self.objects.len() as u32;
        self.objects.push(ObjectNode { id, head, modifiers });
        id
    }

    pub fn attribute(&mut self, owner: u32, value: &str) -> &mut Self {
        let id = self.attributes.len() as u32;
        self.attributes.push(AttributeNode {
            id,
            value: value.to_string(),
            owner,
        });
        self
    }

    pub fn relation(&mut self, source: u32, predicate: &str, target: u32) -> &mut Self {
        let id = self.relations.len() as u32;
        self.relations.push(RelationEdge {
            id,
            predicate: predicate.to_string(),
            source,
            target,
        });
        self
    }

    pub fn build(self) -> Result<SceneGraph, GraphError> {
        SceneGraph::new(self.objects, self.attributes, self.relations)
    }
}

/// Deterministic, order- and id-independent serialization of a scene graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalKey(Vec<u8>);

impl CanonicalKey {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from_utf8_lossy(&self.0))
    }
}

#[derive(Serialize, PartialEq, Eq, PartialOrd, Ord, Clone)]
struct CanonObject<'a> {
    modifiers: &'a [String],
    head: &'a str,
    attributes: Vec<&'a str>,
}

#[derive(Serialize)]
struct CanonForm<'a> {
    objects: Vec<&'a CanonObject<'a>>,
    relations: Vec<(usize, usize, &'a str)>,
}

/// Computes the canonical key of `g`.
///
/// Objects are ordered by label (modifiers, head, sorted attribute multiset),
/// refined by neighbourhood signatures until stable; any remaining ties are
/// broken by trying every ordering inside each tie class and keeping the
/// lexicographically smallest serialization.
pub fn canonicalize(g: &SceneGraph) -> Result<CanonicalKey, GraphError> {
    g.validate()?;
    let n = g.objects.len();
    let labels: Vec<CanonObject> = g
        .objects
        .iter()
        .map(|o| {
            let mut attributes: Vec<&str> =
                g.attributes_of(o.id).map(|a| a.value.as_str()).collect();
            attributes.sort_unstable();
            CanonObject {
                modifiers: &o.modifiers,
                head: &o.head,
                attributes,
            }
        })
        .collect();
    let edges: Vec<(usize, usize, &str)> = g
        .relations
        .iter()
        .map(|r| (g.object_index(r.source), g.object_index(r.target), r.predicate.as_str()))
        .collect();

    let colors = refine_colors(&labels, &edges);

    // Tie classes in ascending colour order.
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in colors.iter().enumerate() {
        classes.entry(c).or_default().push(i);
    }
    let classes: Vec<Vec<usize>> = classes.into_values().collect();

    let mut best: Option<Vec<u8>> = None;
    let mut order = Vec::with_capacity(n);
    enumerate_orders(&classes, 0, &mut order, &mut |order| {
        let bytes = serialize_in_order(order, &labels, &edges);
        if best.as_ref().is_none_or(|b| bytes < *b) {
            best = Some(bytes);
        }
    });
    Ok(CanonicalKey(best.unwrap_or_default()))
}

fn serialize_in_order(order: &[usize], labels: &[CanonObject], edges: &[(usize, usize, &str)]) -> Vec<u8> {
    let mut position = vec![0usize; order.len()];
    for (pos, &obj) in order.iter().enumerate() {
        position[obj] = pos;
    }
    let mut relations: Vec<(usize, usize, &str)> = edges
        .iter()
        .map(|&(s, t, p)| (position[s], position[t], p))
        .collect();
    relations.sort_unstable();
    let form = CanonForm {
        objects: order.iter().map(|&i| &labels[i]).collect(),
        relations,
    };
    serde_json::to_vec(&form).expect("canonical form serializes")
}

/// Colour refinement: colours are ranks of (label, sorted neighbour colour
/// signatures), iterated until the partition stops splitting.
fn refine_colors(labels: &[CanonObject], edges: &[(usize, usize, &str)]) -> Vec<usize> {
    let n = labels.len();
    let mut colors = rank(labels);
    loop {
        let signatures: Vec<(usize, Vec<(bool, &str, usize)>)> = (0..n)
            .map(|i| {
                let mut sig: Vec<(bool, &str, usize)> = edges
                    .iter()
                    .filter_map(|&(s, t, p)| {
                        if s == i {
                            Some((true, p, colors[t]))
                        } else if t == i {
                            Some((false, p, colors[s]))
                        } else {
                            None
                        }
                    })
                    .collect();
                sig.sort_unstable();
                (colors[i], sig)
            })
            .collect();
        let next = rank(&signatures);
        let classes = |c: &[usize]| c.iter().collect::<BTreeSet<_>>().len();
        if classes(&next) == classes(&colors) {
            return next;
        }
        colors = next;
    }
}

fn rank<T: Ord>(items: &[T]) -> Vec<usize> {
    let sorted: BTreeSet<&T> = items.iter().collect();
    let index: BTreeMap<&T, usize> = sorted.into_iter().enumerate().map(|(i, t)| (t, i)).collect();
    items.iter().map(|t| index[t]).collect()
}

fn enumerate_orders(
    classes: &[Vec<usize>],
    class: usize,
    order: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]),
) {
    if class == classes.len() {
        visit(order);
        return;
    }
    let members = &classes[class];
    permute(members.clone(), 0, &mut |perm| {
        let len = order.len();
        order.extend_from_slice(perm);
        enumerate_orders(classes, class + 1, order, visit);
        order.truncate(len);
    });
}

fn permute(mut items: Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k >= items.len() {
        visit(&items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items.clone(), k + 1, visit);
        items.swap(k, i);
    }
}

/// True iff `g` embeds into `big` by an injective, label-preserving map of
/// objects under which every attribute and relation of `g` (as multisets)
/// is present in `big`.
pub fn is_subgraph(g: &SceneGraph, big: &SceneGraph) -> bool {
    if g.objects.len() > big.objects.len()
        || g.attributes.len() > big.attributes.len()
        || g.relations.len() > big.relations.len()
    {
        return false;
    }
    let big_attrs: Vec<Vec<&str>> = big
        .objects
        .iter()
        .map(|o| big.attributes_of(o.id).map(|a| a.value.as_str()).collect())
        .collect();
    let small_attrs: Vec<Vec<&str>> = g
        .objects
        .iter()
        .map(|o| g.attributes_of(o.id).map(|a| a.value.as_str()).collect())
        .collect();

    let candidates: Vec<Vec<usize>> = g
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            big.objects
                .iter()
                .enumerate()
                .filter(|(j, b)| {
                    b.head == o.head
                        && b.modifiers == o.modifiers
                        && multiset_contains(&big_attrs[*j], &small_attrs[i])
                })
                .map(|(j, _)| j)
                .collect()
        })
        .collect();

    let small_edges: Vec<(usize, usize, &str)> = g
        .relations
        .iter()
        .map(|r| (g.object_index(r.source), g.object_index(r.target), r.predicate.as_str()))
        .collect();
    let big_edges: Vec<(usize, usize, &str)> = big
        .relations
        .iter()
        .map(|r| (big.object_index(r.source), big.object_index(r.target), r.predicate.as_str()))
        .collect();

    let mut mapping = vec![usize::MAX; g.objects.len()];
    let mut used = vec![false; big.objects.len()];
    search_embedding(0, &candidates, &mut mapping, &mut used, &mut |mapping| {
        let mapped: Vec<(usize, usize, &str)> = small_edges
            .iter()
            .map(|&(s, t, p)| (mapping[s], mapping[t], p))
            .collect();
        multiset_contains(&big_edges, &mapped)
    })
}

fn search_embedding(
    i: usize,
    candidates: &[Vec<usize>],
    mapping: &mut Vec<usize>,
    used: &mut Vec<bool>,
    accept: &mut dyn FnMut(&[usize]) -> bool,
) -> bool {
    if i == candidates.len() {
        return accept(mapping);
    }
    for &j in &candidates[i] {
        if used[j] {
            continue;
        }
        used[j] = true;
        mapping[i] = j;
        if search_embedding(i + 1, candidates, mapping, used, accept) {
            return true;
        }
        used[j] = false;
    }
    false
}

fn multiset_contains<T: Ord + Clone>(big: &[T], small: &[T]) -> bool {
    let mut counts: BTreeMap<&T, isize> = BTreeMap::new();
    for x in big {
        *counts.entry(x).or_default() += 1;
    }
    for x in small {
        let c = counts.entry(x).or_default();
        *c -= 1;
        if *c < 0 {
            return false;
        }
    }
    true
}

/// All subsets of `items`, smallest first, each preserving input order.
pub(crate) fn subsets<T: Copy>(items: &[T]) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = (0u64..(1u64 << items.len()))
        .map(|mask| {
            items
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &x)| x)
                .collect()
        })
        .collect();
    out.sort_by_key(Vec::len);
    out
}

/// Exhaustive enumeration of connected sub-graphs with at most
/// `max_objects` objects.
///
/// Multi-object sub-graphs are spanned by a tree of relations (exactly one
/// relation for two objects); every included object carries any subset of
/// its attributes. Results are deduplicated and keyed by canonical form.
///
/// This is a reference enumerator: its cost is exponential in attribute
/// and relation counts.
pub fn brute_force_subgraphs(
    big: &SceneGraph,
    max_objects: usize,
) -> BTreeMap<CanonicalKey, SceneGraph> {
    let mut out = BTreeMap::new();
    if max_objects == 0 {
        return out;
    }
    let relation_ids: Vec<u32> = big.relations.iter().map(|r| r.id).collect();
    let mut object_sets: Vec<(BTreeSet<u32>, BTreeSet<u32>)> = big
        .objects
        .iter()
        .map(|o| (BTreeSet::from([o.id]), BTreeSet::new()))
        .collect();
    for edge_set in subsets(&relation_ids) {
        if edge_set.is_empty() || edge_set.len() + 1 > max_objects {
            continue;
        }
        let objects: BTreeSet<u32> = big
            .relations
            .iter()
            .filter(|r| edge_set.contains(&r.id))
            .flat_map(|r| [r.source, r.target])
            .collect();
        if objects.len() == edge_set.len() + 1 && connected(big, &objects, &edge_set) {
            object_sets.push((objects, edge_set.into_iter().collect()));
        }
    }
    for (objects, edges) in object_sets {
        let per_object: Vec<Vec<Vec<u32>>> = objects
            .iter()
            .map(|&o| {
                let ids: Vec<u32> = big.attributes_of(o).map(|a| a.id).collect();
                subsets(&ids)
            })
            .collect();
        for choice in cartesian(&per_object) {
            let attrs: BTreeSet<u32> = choice.into_iter().flatten().collect();
            let g = big
                .extract(&objects, &attrs, &edges)
                .expect("extraction from a valid graph is valid");
            let key = canonicalize(&g).expect("valid graph");
            out.entry(key).or_insert(g);
        }
    }
    out
}

fn connected(g: &SceneGraph, objects: &BTreeSet<u32>, edges: &[u32]) -> bool {
    let Some(&start) = objects.iter().next() else {
        return false;
    };
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(o) = stack.pop() {
        for r in g.relations.iter().filter(|r| edges.contains(&r.id)) {
            let next = if r.source == o {
                r.target
            } else if r.target == o {
                r.source
            } else {
                continue;
            };
            if seen.insert(next) {
                stack.push(next);
            }
        }
    }
    seen.len() == objects.len()
}

pub(crate) fn cartesian<T: Clone>(lists: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = vec![Vec::new()];
    for list in lists {
        let mut next = Vec::with_capacity(out.len() * list.len());
        for prefix in &out {
            for item in list {
                let mut p = prefix.clone();
                p.push(item.clone());
                next.push(p);
            }
        }
        out = next;
    }
    out
}
