//! Template rendering of sub-graphs back to text.

use thiserror::Error;

use crate::graph::{ObjectNode, SceneGraph};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("cannot render an empty graph")]
    EmptyGraph,
}

/// Modifiers, then attributes in insertion order, then the head.
fn node_text(g: &SceneGraph, o: &ObjectNode) -> String {
    let mut words: Vec<&str> = o.modifiers.iter().map(String::as_str).collect();
    words.extend(g.attributes_of(o.id).map(|a| a.value.as_str()));
    words.push(&o.head);
    words.join(" ")
}

/// Renders `g` with the `{N1} {R} {N2}` template.
///
/// A one-object graph renders as `{N1}`. Graphs with several relations
/// render each relation in edge-id order, joined by " and "; objects not
/// touched by any relation are appended the same way.
pub fn render(g: &SceneGraph) -> Result<String, RenderError> {
    if g.object_count() == 0 {
        return Err(RenderError::EmptyGraph);
    }
    let mut edges: Vec<_> = g.relations().iter().collect();
    edges.sort_by_key(|r| r.id);

    let node = |id: u32| {
        let o = g.object(id).expect("validated graph");
        node_text(g, o)
    };
    let mut clauses: Vec<String> = edges
        .iter()
        .map(|r| format!("{} {} {}", node(r.source), r.predicate, node(r.target)))
        .collect();
    for o in g.objects() {
        if !edges.iter().any(|r| r.source == o.id || r.target == o.id) {
            clauses.push(node_text(g, o));
        }
    }
    Ok(clauses.join(" and "))
}
