#![allow(dead_code)]

use std::collections::BTreeMap;

use mosaiclip::graph::{AttributeNode, ObjectNode, RelationEdge, SceneGraph};
use proptest::prelude::*;
use proptest::sample::subsequence;

pub const HEADS: [&str; 5] = ["cat", "dog", "table", "lamp", "car"];
pub const MODIFIERS: [&str; 2] = ["toy", "traffic"];
pub const ATTRS: [&str; 5] = ["black", "red", "wooden", "small", "old"];
pub const PREDS: [&str; 4] = ["on", "under", "near", "next to"];

/// Graph shape: per object (head, modifier, attribute indices), relations
/// as (source, predicate, target) object positions.
#[derive(Debug, Clone)]
pub struct Shape {
    pub objects: Vec<(usize, Option<usize>, Vec<usize>)>,
    pub relations: Vec<(usize, usize, usize)>,
}

impl Shape {
    pub fn build(&self) -> SceneGraph {
        let objects = self
            .objects
            .iter()
            .enumerate()
            .map(|(i, (h, m, _))| ObjectNode {
                id: i as u32,
                head: HEADS[*h].to_string(),
                modifiers: m.iter().map(|m| MODIFIERS[*m].to_string()).collect(),
            })
            .collect();
        let mut attributes = Vec::new();
        for (i, (_, _, attrs)) in self.objects.iter().enumerate() {
            for a in attrs {
                attributes.push(AttributeNode {
                    id: attributes.len() as u32,
                    value: ATTRS[*a].to_string(),
                    owner: i as u32,
                });
            }
        }
        let relations = self
            .relations
            .iter()
            .enumerate()
            .map(|(k, (s, p, t))| RelationEdge {
                id: k as u32,
                predicate: PREDS[*p].to_string(),
                source: *s as u32,
                target: *t as u32,
            })
            .collect();
        SceneGraph::new(objects, attributes, relations).expect("shape builds a valid graph")
    }
}

fn object() -> impl Strategy<Value = (usize, Option<usize>, Vec<usize>)> {
    (
        0..HEADS.len(),
        prop::option::weighted(0.2, 0..MODIFIERS.len()),
        (0..=2usize).prop_flat_map(|k| subsequence((0..ATTRS.len()).collect::<Vec<_>>(), k)),
    )
}

/// Arbitrary graphs: up to `max_objects` objects with up to 2 distinct
/// attributes each and up to `max_relations` relations (self-loops excluded).
pub fn graph(max_objects: usize, max_relations: usize) -> impl Strategy<Value = Shape> {
    prop::collection::vec(object(), 1..=max_objects).prop_flat_map(move |objects| {
        let n = objects.len();
        let edge = (0..n, 0..PREDS.len(), 0..n).prop_filter("self-loop", |(s, _, t)| s != t);
        let relations = if n < 2 {
            prop::collection::vec(edge, 0..=0).boxed()
        } else {
            prop::collection::vec(edge, 0..=max_relations).boxed()
        };
        (Just(objects), relations).prop_map(|(objects, relations)| Shape { objects, relations })
    })
}

/// Connected graphs whose relations form a tree over the objects.
pub fn tree_graph(max_objects: usize) -> impl Strategy<Value = Shape> {
    prop::collection::vec(object(), 1..=max_objects).prop_flat_map(|objects| {
        let n = objects.len();
        let edges: Vec<_> = (1..n)
            .map(|k| (0..k, 0..PREDS.len(), any::<bool>()).prop_map(move |(p, pred, fwd)| {
                if fwd {
                    (p, pred, k)
                } else {
                    (k, pred, p)
                }
            }))
            .collect();
        (Just(objects), edges).prop_map(|(objects, relations)| Shape { objects, relations })
    })
}

/// Graphs with pairwise distinct nouns and predicates, where no two
/// sub-graphs can be isomorphic.
pub fn distinct_label_graph(max_objects: usize) -> impl Strategy<Value = Shape> {
    (1..=max_objects.min(HEADS.len()))
        .prop_flat_map(|n| {
            let heads = Just((0..HEADS.len()).collect::<Vec<_>>()).prop_shuffle();
            let attrs = prop::collection::vec(
                (0..=2usize).prop_flat_map(|k| subsequence((0..ATTRS.len()).collect::<Vec<_>>(), k)),
                n,
            );
            let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).filter(|(a, b)| a < b).collect();
            let edges = subsequence(pairs.clone(), 0..=pairs.len().min(PREDS.len()));
            let dirs = prop::collection::vec(any::<bool>(), pairs.len());
            (Just(n), heads, attrs, edges, dirs)
        })
        .prop_map(|(n, heads, attrs, edges, dirs)| Shape {
            objects: (0..n).map(|i| (heads[i], None, attrs[i].clone())).collect(),
            relations: edges
                .iter()
                .enumerate()
                .map(|(k, &(a, b))| if dirs[k] { (a, k, b) } else { (b, k, a) })
                .collect(),
        })
}

/// Same graph with shuffled list order and renumbered ids.
pub fn shuffled(g: &SceneGraph, perm_seed: u64) -> SceneGraph {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed);
    let (mut objects, mut attributes, mut relations) = g.clone().into_parts();
    let mut new_ids: Vec<u32> = (0..objects.len() as u32).map(|k| 100 + 7 * k).collect();
    new_ids.shuffle(&mut rng);
    let map: BTreeMap<u32, u32> = objects.iter().zip(&new_ids).map(|(o, &n)| (o.id, n)).collect();
    for o in &mut objects {
        o.id = map[&o.id];
    }
    for (k, a) in attributes.iter_mut().enumerate() {
        a.owner = map[&a.owner];
        a.id = 50 + k as u32;
    }
    for (k, r) in relations.iter_mut().enumerate() {
        r.source = map[&r.source];
        r.target = map[&r.target];
        r.id = 900 - k as u32;
    }
    objects.shuffle(&mut rng);
    attributes.shuffle(&mut rng);
    relations.shuffle(&mut rng);
    SceneGraph::new(objects, attributes, relations).expect("shuffle keeps validity")
}

/// Isomorphism by exhaustive search over noun-preserving bijections.
pub fn isomorphic(a: &SceneGraph, b: &SceneGraph) -> bool {
    if a.object_count() != b.object_count()
        || a.attributes().len() != b.attributes().len()
        || a.relations().len() != b.relations().len()
    {
        return false;
    }
    let attrs = |g: &SceneGraph, o: u32| {
        let mut v: Vec<String> = g.attributes_of(o).map(|x| x.value.clone()).collect();
        v.sort();
        v
    };
    let rels = |g: &SceneGraph, map: &dyn Fn(u32) -> usize| {
        let mut v: Vec<(usize, String, usize)> = g
            .relations()
            .iter()
            .map(|r| (map(r.source), r.predicate.clone(), map(r.target)))
            .collect();
        v.sort();
        v
    };
    let ao = a.objects();
    let bo = b.objects();
    let a_pos = |id: u32| ao.iter().position(|o| o.id == id).unwrap();
    let a_rels = rels(a, &a_pos);
    let n = ao.len();
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        // perm[i] = index in b of the image of a's i-th object
        let ok = (0..n).all(|i| {
            ao[i].head == bo[perm[i]].head
                && ao[i].modifiers == bo[perm[i]].modifiers
                && attrs(a, ao[i].id) == attrs(b, bo[perm[i]].id)
        });
        if ok {
            let inv = |id: u32| {
                let j = bo.iter().position(|o| o.id == id).unwrap();
                perm.iter().position(|&p| p == j).unwrap()
            };
            if rels(b, &inv) == a_rels {
                return true;
            }
        }
        if !next_permutation(&mut perm) {
            return false;
        }
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}
