//! Node lines emitted by the node steps:
//!
//! ```text
//! characters: Mara
//! characters: Mara | mood = desperate | age = 31
//! ```

use serde::Serialize;

use crate::kg::{strip_list_marker, NodeRegistry, NodeType};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeLine {
    pub node_type: NodeType,
    pub name: String,
    pub attributes: Vec<(String, String)>,
}

fn resolve_type(raw: &str, type_set: &[NodeType]) -> Option<NodeType> {
    let folded = raw.trim().to_lowercase();
    type_set
        .iter()
        .find(|t| t.as_str() == folded || t.as_str() == format!("{folded}s"))
        .cloned()
}

/// Parse node lines leniently. Returns the parsed lines and one message per skipped
/// line or attribute.
pub fn parse_node_lines(text: &str, type_set: &[NodeType]) -> (Vec<NodeLine>, Vec<String>) {
    let mut lines = Vec::new();
    let mut diagnostics = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_list_marker(raw).trim();
        if line.is_empty() {
            continue;
        }
        let Some((type_part, rest)) = line.split_once(':') else {
            diagnostics.push(format!("line {line_no}: expected 'type: name', got {line:?}"));
            continue;
        };
        let Some(node_type) = resolve_type(type_part, type_set) else {
            diagnostics.push(format!("line {line_no}: unknown node type {:?}", type_part.trim()));
            continue;
        };
        let mut parts = rest.split('|');
        let name = parts.next().unwrap_or_default().trim();
        if name.is_empty() {
            diagnostics.push(format!("line {line_no}: missing node name"));
            continue;
        }
        let mut attributes = Vec::new();
        for attr in parts {
            match attr.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => attributes.push((k.trim().to_string(), v.trim().to_string())),
                _ => diagnostics.push(format!("line {line_no}: expected 'attribute = value', got {:?}", attr.trim())),
            }
        }
        lines.push(NodeLine {
            node_type,
            name: name.to_string(),
            attributes,
        });
    }
    (lines, diagnostics)
}

/// `type: name | k = v` lines for every node, or `(none)`.
pub(crate) fn registry_text(registry: &NodeRegistry) -> String {
    if registry.is_empty() {
        return "(none)".to_string();
    }
    registry
        .nodes()
        .iter()
        .map(|n| {
            let mut line = format!("{}: {}", n.node_type, n.name);
            for (k, v) in &n.attributes {
                line.push_str(&format!(" | {k} = {v}"));
            }
            line
        })
        .collect::<Vec<_>>()
        .join("\n")
}
