use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::entry::NodeType;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    #[serde(rename = "type")]
    pub node_type: NodeType,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

/// Typed node set. Graph entries refer to nodes by name only; nothing here is enforced
/// against the graph.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRegistry {
    type_set: Vec<NodeType>,
    nodes: Vec<Node>,
}

impl NodeRegistry {
    pub fn new(type_set: Vec<NodeType>) -> Self {
        Self {
            type_set,
            nodes: Vec::new(),
        }
    }

    pub fn type_set(&self) -> &[NodeType] {
        &self.type_set
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn position(&self, name: &str, node_type: &NodeType) -> Option<usize> {
        let folded = name.trim().to_lowercase();
        self.nodes
            .iter()
            .position(|n| &n.node_type == node_type && n.name.to_lowercase() == folded)
    }

    /// Case-insensitive lookup by `(name, type)`.
    pub fn get(&self, name: &str, node_type: &NodeType) -> Option<&Node> {
        self.position(name, node_type).map(|i| &self.nodes[i])
    }

    /// Insert a node or merge attributes into the existing one. Returns `true` when a
    /// node was added. Names are trimmed; blank names and types outside the type set
    /// are ignored and return `false`.
    pub fn upsert(&mut self, name: &str, node_type: &NodeType, attributes: &[(String, String)]) -> bool {
        let name = name.trim();
        if name.is_empty() || !self.type_set.contains(node_type) {
            return false;
        }
        match self.position(name, node_type) {
            Some(i) => {
                let node = &mut self.nodes[i];
                for (k, v) in attributes {
                    node.attributes.insert(k.clone(), v.clone());
                }
                false
            }
            None => {
                self.nodes.push(Node {
                    name: name.to_string(),
                    node_type: node_type.clone(),
                    attributes: attributes.iter().cloned().collect(),
                });
                true
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsert_merges_case_insensitively() {
        let chars = NodeType::new("characters").unwrap();
        let mut reg = NodeRegistry::new(crate::kg::default_type_set());
        assert!(reg.upsert("Mara", &chars, &[]));
        assert!(!reg.upsert("mara ", &chars, &[("mood".into(), "desperate".into())]));
        assert_eq!(reg.len(), 1);
        assert_eq!(reg.get("MARA", &chars).unwrap().attributes["mood"], "desperate");
        assert!(!reg.upsert("Dragon", &NodeType::new("monsters").unwrap(), &[]));
        assert!(!reg.upsert("  ", &chars, &[]));
    }
}
