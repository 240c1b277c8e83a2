//! Typed knowledge graph of story facts.
//!
//! The atom of the graph is a [`KgEntry`]: one directed, described relationship
//! written as `A -> B -> R : D` (subject, object, relation, description). Entries
//! are partitioned by [`NodeType`], and every entry carries a stable [`EntryId`]
//! so that edits can refer to it across regenerations.

mod edit;
mod entry;
mod graph;
mod grammar;
mod registry;
mod subgraph;

pub use edit::{apply_edits, diff, Author, EditCommand, EditError, EditErrorKind, EditSet, NewEntry};
pub use entry::{EntryId, Field, FieldError, IdMint, KgEntry, NodeType, NodeTypeError, Provenance};
pub use graph::{dedup_cleanup, normalize_triple, GraphError, KnowledgeGraph, TripleKey};
pub use grammar::{
    parse_entry, parse_graph_block, parse_graph_text, serialize_entry, serialize_graph,
    LineDiagnostic, MalformedEntry, ARROW, ARROW_ALIAS, DESCRIPTION_SEPARATOR,
};
pub use registry::{Node, NodeRegistry};
pub use subgraph::lexical_subgraph;
pub(crate) use grammar::strip_list_marker;

/// The four element kinds a story graph tracks unless the user supplies their own.
pub fn default_type_set() -> Vec<NodeType> {
    ["characters", "locations", "objects", "events"]
        .into_iter()
        .map(|name| NodeType::new(name).expect("default type names are valid"))
        .collect()
}
