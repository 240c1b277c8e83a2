use std::collections::HashSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::entry::{EntryId, KgEntry, NodeType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("entry id {0} is already in use")]
    DuplicateId(EntryId),
    #[error("unknown node type {0:?}")]
    UnknownType(String),
}

/// Entries partitioned by node type. Partition order is the type-set order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    partitions: IndexMap<NodeType, Vec<KgEntry>>,
}

impl KnowledgeGraph {
    pub fn new(types: &[NodeType]) -> Self {
        Self {
            partitions: types.iter().map(|t| (t.clone(), Vec::new())).collect(),
        }
    }

    pub fn types(&self) -> impl Iterator<Item = &NodeType> {
        self.partitions.keys()
    }

    pub fn partitions(&self) -> impl Iterator<Item = (&NodeType, &[KgEntry])> {
        self.partitions.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn partition(&self, node_type: &NodeType) -> &[KgEntry] {
        self.partitions.get(node_type).map(Vec::as_slice).unwrap_or(&[])
    }

    pub(crate) fn partition_mut(&mut self, node_type: &NodeType) -> Option<&mut Vec<KgEntry>> {
        self.partitions.get_mut(node_type)
    }

    pub fn ensure_partition(&mut self, node_type: &NodeType) {
        self.partitions.entry(node_type.clone()).or_default();
    }

    /// All entries, partition by partition, in stored order.
    pub fn entries(&self) -> impl Iterator<Item = &KgEntry> {
        self.partitions.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.partitions.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: EntryId) -> Option<&KgEntry> {
        self.entries().find(|e| e.id == id)
    }

    pub fn contains_id(&self, id: EntryId) -> bool {
        self.get(id).is_some()
    }

    pub fn ids(&self) -> Vec<EntryId> {
        self.entries().map(|e| e.id).collect()
    }

    /// First entry (in graph order) with the given normalized triple.
    pub fn find_by_triple(&self, key: &TripleKey) -> Option<&KgEntry> {
        self.entries().find(|e| &normalize_triple(e) == key)
    }

    /// Append to the end of the entry's partition.
    pub fn push(&mut self, entry: KgEntry) -> Result<(), GraphError> {
        if self.contains_id(entry.id) {
            return Err(GraphError::DuplicateId(entry.id));
        }
        let partition = self
            .partitions
            .get_mut(&entry.node_type)
            .ok_or_else(|| GraphError::UnknownType(entry.node_type.to_string()))?;
        partition.push(entry);
        Ok(())
    }

    /// Keep only entries whose id is in `keep`, preserving order.
    pub fn retain_ids(&mut self, keep: &HashSet<EntryId>) {
        for entries in self.partitions.values_mut() {
            entries.retain(|e| keep.contains(&e.id));
        }
    }

    /// Structural invariants: partition keys match entry types, ids are unique.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = HashSet::new();
        for (node_type, entries) in &self.partitions {
            for entry in entries {
                if &entry.node_type != node_type {
                    return Err(format!("entry {} of type {} filed under {}", entry.id, entry.node_type, node_type));
                }
                if !seen.insert(entry.id) {
                    return Err(format!("duplicate entry id {}", entry.id));
                }
                entry.validate().map_err(|e| format!("entry {}: {e}", entry.id))?;
            }
        }
        Ok(())
    }
}

/// Dedup key: casefolded, trimmed subject/object/relation. Descriptions are not part of it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TripleKey(pub String, pub String, pub String);

fn casefold(s: &str) -> String {
    s.trim().to_lowercase()
}

pub fn normalize_triple(entry: &KgEntry) -> TripleKey {
    TripleKey(casefold(&entry.subject), casefold(&entry.object), casefold(&entry.relation))
}

/// Merge entries sharing a normalized triple within each partition.
///
/// The earliest entry survives in place and takes the longest description seen
/// (earliest wins a tie). Returns the cleaned graph and the entries dropped.
pub fn dedup_cleanup(graph: &KnowledgeGraph) -> (KnowledgeGraph, Vec<KgEntry>) {
    let mut out = graph.clone();
    let mut removed = Vec::new();
    for entries in out.partitions.values_mut() {
        let mut first_at: IndexMap<TripleKey, usize> = IndexMap::new();
        let mut kept: Vec<KgEntry> = Vec::with_capacity(entries.len());
        for entry in entries.drain(..) {
            let key = normalize_triple(&entry);
            match first_at.get(&key) {
                Some(&pos) => {
                    let survivor = &mut kept[pos];
                    if entry.description.chars().count() > survivor.description.chars().count() {
                        survivor.description = entry.description.clone();
                    }
                    removed.push(entry);
                }
                None => {
                    first_at.insert(key, kept.len());
                    kept.push(entry);
                }
            }
        }
        *entries = kept;
    }
    (out, removed)
}
