//! Line grammar for graph entries.
//!
//! ```text
//! subject -> object -> relation : description
//! ```
//!
//! The first two arrows split the name fields; the first `:` after the second
//! arrow ends the relation. Everything after it is the description, which may
//! itself contain `:` or arrows. `→` is accepted as an alias for `->`.

use serde::Serialize;
use thiserror::Error;

use super::entry::{validate_name_field, Field, IdMint, KgEntry, NodeType, Provenance};
use super::graph::KnowledgeGraph;

pub const ARROW: &str = "->";
pub const ARROW_ALIAS: &str = "→";
pub const DESCRIPTION_SEPARATOR: char = ':';

const HEADER_PREFIX: &str = "## ";

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("malformed entry at byte {offset}: {reason} (line: {line:?})")]
pub struct MalformedEntry {
    pub line: String,
    pub offset: usize,
    pub reason: String,
}

/// A line that could not be parsed, reported instead of failing the whole block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineDiagnostic {
    /// 1-based line number within the block.
    pub line_no: usize,
    pub error: MalformedEntry,
}

fn find_arrow(s: &str, from: usize) -> Option<(usize, usize)> {
    let hay = &s[from..];
    let ascii = hay.find(ARROW).map(|i| (i, ARROW.len()));
    let alias = hay.find(ARROW_ALIAS).map(|i| (i, ARROW_ALIAS.len()));
    let (at, len) = match (ascii, alias) {
        (Some(a), Some(b)) => {
            if a.0 <= b.0 {
                a
            } else {
                b
            }
        }
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => return None,
    };
    Some((from + at, len))
}

/// Byte offset of the first non-whitespace char of `line[start..end]`, or `start` if blank.
fn field_offset(line: &str, start: usize, end: usize) -> usize {
    let slice = &line[start..end];
    if slice.trim().is_empty() {
        return start;
    }
    start + (slice.len() - slice.trim_start().len())
}

pub fn parse_entry(line: &str, node_type: &NodeType, ids: &mut IdMint) -> Result<KgEntry, MalformedEntry> {
    let malformed = |offset: usize, reason: &str| MalformedEntry {
        line: line.to_string(),
        offset,
        reason: reason.to_string(),
    };

    if let Some(nl) = line.find(['\n', '\r']) {
        return Err(malformed(nl, "entry must be a single line"));
    }
    let (a1, a1_len) = find_arrow(line, 0).ok_or_else(|| malformed(line.len(), "missing first arrow separator"))?;
    let obj_start = a1 + a1_len;
    let (a2, a2_len) =
        find_arrow(line, obj_start).ok_or_else(|| malformed(line.len(), "missing second arrow separator"))?;
    let rel_start = a2 + a2_len;
    let colon = line[rel_start..]
        .find(DESCRIPTION_SEPARATOR)
        .map(|i| rel_start + i)
        .ok_or_else(|| malformed(line.len(), "missing description separator ':'"))?;

    let fields = [
        (Field::Subject, 0, a1),
        (Field::Object, obj_start, a2),
        (Field::Relation, rel_start, colon),
    ];
    let mut values = Vec::with_capacity(3);
    for (field, start, end) in fields {
        let value = line[start..end].trim();
        if let Err(err) = validate_name_field(field, value) {
            return Err(malformed(field_offset(line, start, end), &err.to_string()));
        }
        values.push(value.to_string());
    }
    let description = line[colon + DESCRIPTION_SEPARATOR.len_utf8()..].trim().to_string();
    let relation = values.pop().unwrap_or_default();
    let object = values.pop().unwrap_or_default();
    let subject = values.pop().unwrap_or_default();

    Ok(KgEntry {
        id: ids.mint(),
        subject,
        object,
        relation,
        description,
        node_type: node_type.clone(),
        provenance: Provenance::Initial,
    })
}

pub fn serialize_entry(entry: &KgEntry) -> String {
    format!(
        "{} {ARROW} {} {ARROW} {} {DESCRIPTION_SEPARATOR} {}",
        entry.subject, entry.object, entry.relation, entry.description
    )
}

/// Drop a leading list marker (`- `, `* `, `• `, `3. `, `3) `) that models like to add.
pub(crate) fn strip_list_marker(line: &str) -> &str {
    let trimmed = line.trim_start();
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = trimmed.strip_prefix(bullet) {
            return rest;
        }
    }
    let digits = trimmed.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && digits <= 3 {
        let rest = &trimmed[digits..];
        if let Some(rest) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return rest;
        }
    }
    trimmed
}

/// Parse free-form generator output, one entry per nonempty line.
///
/// Lenient mode skips bad lines and reports them; strict mode fails on the first one.
pub fn parse_graph_block(
    text: &str,
    node_type: &NodeType,
    strict: bool,
    ids: &mut IdMint,
) -> Result<(Vec<KgEntry>, Vec<LineDiagnostic>), LineDiagnostic> {
    let mut entries = Vec::new();
    let mut diagnostics = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        match parse_entry(strip_list_marker(raw), node_type, ids) {
            Ok(entry) => entries.push(entry),
            Err(error) => {
                let diag = LineDiagnostic { line_no: idx + 1, error };
                if strict {
                    return Err(diag);
                }
                diagnostics.push(diag);
            }
        }
    }
    Ok((entries, diagnostics))
}

/// Canonical multi-partition text: a `## <type>` header followed by that partition's lines.
pub fn serialize_graph(graph: &KnowledgeGraph) -> String {
    let mut out = String::new();
    for (node_type, entries) in graph.partitions() {
        out.push_str(HEADER_PREFIX);
        out.push_str(node_type.as_str());
        out.push('\n');
        for entry in entries {
            out.push_str(&serialize_entry(entry));
            out.push('\n');
        }
    }
    out
}

/// Inverse of [`serialize_graph`]. Strict: any bad line or unknown header fails.
pub fn parse_graph_text(text: &str, ids: &mut IdMint) -> Result<KnowledgeGraph, LineDiagnostic> {
    let mut graph = KnowledgeGraph::default();
    let mut current: Option<NodeType> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fail = |offset: usize, reason: String| LineDiagnostic {
            line_no,
            error: MalformedEntry {
                line: raw.to_string(),
                offset,
                reason,
            },
        };
        if let Some(name) = line.strip_prefix(HEADER_PREFIX) {
            let node_type = NodeType::new(name.trim()).map_err(|e| fail(0, e.to_string()))?;
            graph.ensure_partition(&node_type);
            current = Some(node_type);
            continue;
        }
        let Some(node_type) = current.as_ref() else {
            return Err(fail(0, "entry before any '## <type>' header".to_string()));
        };
        let entry = parse_entry(line, node_type, ids).map_err(|error| LineDiagnostic { line_no, error })?;
        graph
            .push(entry)
            .map_err(|e| fail(0, e.to_string()))?;
    }
    Ok(graph)
}
