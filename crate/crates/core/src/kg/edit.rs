//! Edit commands over a graph: add, remove, modify, reconnect.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::entry::{
    validate_description, validate_name_field, EntryId, Field, FieldError, IdMint, KgEntry, NodeType, Provenance,
};
use super::graph::KnowledgeGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    #[default]
    User,
    System,
}

/// Payload of an `add` command. A missing id is minted on application.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<EntryId>,
    pub subject: String,
    pub object: String,
    pub relation: String,
    #[serde(default)]
    pub description: String,
    #[serde(rename = "type")]
    pub node_type: NodeType,
}

impl From<&KgEntry> for NewEntry {
    fn from(e: &KgEntry) -> Self {
        Self {
            id: Some(e.id),
            subject: e.subject.clone(),
            object: e.object.clone(),
            relation: e.relation.clone(),
            description: e.description.clone(),
            node_type: e.node_type.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditCommand {
    Add {
        entry: NewEntry,
    },
    Remove {
        id: EntryId,
    },
    Modify {
        id: EntryId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subject: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        object: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        relation: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        description: Option<String>,
    },
    Reconnect {
        id: EntryId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subject: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        object: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditSet {
    #[serde(default)]
    pub author: Author,
    pub commands: Vec<EditCommand>,
}

impl EditSet {
    pub fn user(commands: Vec<EditCommand>) -> Self {
        Self {
            author: Author::User,
            commands,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum EditErrorKind {
    #[error("unknown entry id {id}")]
    UnknownEntryId { id: EntryId },
    #[error("invalid {field}: {reason}")]
    InvalidField { field: Field, reason: String },
}

/// A rejected edit set. `command` is the index of the offending command.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("edit command {command}: {kind}")]
pub struct EditError {
    pub command: usize,
    #[serde(flatten)]
    pub kind: EditErrorKind,
}

fn invalid(command: usize, err: FieldError) -> EditError {
    EditError {
        command,
        kind: EditErrorKind::InvalidField {
            field: err.field,
            reason: err.reason,
        },
    }
}

fn clean_name(field: Field, value: &str) -> Result<String, FieldError> {
    let value = value.trim();
    validate_name_field(field, value)?;
    Ok(value.to_string())
}

fn clean_description(value: &str) -> Result<String, FieldError> {
    let value = value.trim();
    validate_description(value)?;
    Ok(value.to_string())
}

fn locate(graph: &KnowledgeGraph, id: EntryId) -> Option<(NodeType, usize)> {
    let (node_type, pos) = graph
        .partitions()
        .find_map(|(t, entries)| entries.iter().position(|e| e.id == id).map(|p| (t.clone(), p)))?;
    Some((node_type, pos))
}

fn entry_mut(graph: &mut KnowledgeGraph, id: EntryId) -> Option<&mut KgEntry> {
    let (node_type, pos) = locate(graph, id)?;
    graph.partition_mut(&node_type).map(|p| &mut p[pos])
}

/// Apply `edits` in order. Either every command applies or the input is left as is
/// and the first failure is returned. Fields are trimmed; no dedup is performed.
pub fn apply_edits(graph: &KnowledgeGraph, edits: &EditSet, ids: &mut IdMint) -> Result<KnowledgeGraph, EditError> {
    let mut out = graph.clone();
    let mut mint = ids.clone();
    for (idx, cmd) in edits.commands.iter().enumerate() {
        let unknown = |id: EntryId| EditError {
            command: idx,
            kind: EditErrorKind::UnknownEntryId { id },
        };
        match cmd {
            EditCommand::Add { entry } => {
                let id = match entry.id {
                    Some(id) if out.contains_id(id) => {
                        return Err(invalid(
                            idx,
                            FieldError {
                                field: Field::Id,
                                reason: format!("id {id} is already in use"),
                            },
                        ))
                    }
                    Some(id) => {
                        mint.observe(id);
                        id
                    }
                    None => mint.mint(),
                };
                let new = KgEntry {
                    id,
                    subject: clean_name(Field::Subject, &entry.subject).map_err(|e| invalid(idx, e))?,
                    object: clean_name(Field::Object, &entry.object).map_err(|e| invalid(idx, e))?,
                    relation: clean_name(Field::Relation, &entry.relation).map_err(|e| invalid(idx, e))?,
                    description: clean_description(&entry.description).map_err(|e| invalid(idx, e))?,
                    node_type: entry.node_type.clone(),
                    provenance: Provenance::UserEdit,
                };
                out.push(new).map_err(|e| {
                    invalid(
                        idx,
                        FieldError {
                            field: Field::Type,
                            reason: e.to_string(),
                        },
                    )
                })?;
            }
            EditCommand::Remove { id } => {
                let (node_type, pos) = locate(&out, *id).ok_or_else(|| unknown(*id))?;
                if let Some(partition) = out.partition_mut(&node_type) {
                    partition.remove(pos);
                }
            }
            EditCommand::Modify {
                id,
                subject,
                object,
                relation,
                description,
            } => {
                let subject = subject
                    .as_deref()
                    .map(|v| clean_name(Field::Subject, v))
                    .transpose()
                    .map_err(|e| invalid(idx, e))?;
                let object = object
                    .as_deref()
                    .map(|v| clean_name(Field::Object, v))
                    .transpose()
                    .map_err(|e| invalid(idx, e))?;
                let relation = relation
                    .as_deref()
                    .map(|v| clean_name(Field::Relation, v))
                    .transpose()
                    .map_err(|e| invalid(idx, e))?;
                let description = description
                    .as_deref()
                    .map(clean_description)
                    .transpose()
                    .map_err(|e| invalid(idx, e))?;
                let entry = entry_mut(&mut out, *id).ok_or_else(|| unknown(*id))?;
                if let Some(v) = subject {
                    entry.subject = v;
                }
                if let Some(v) = object {
                    entry.object = v;
                }
                if let Some(v) = relation {
                    entry.relation = v;
                }
                if let Some(v) = description {
                    entry.description = v;
                }
            }
            EditCommand::Reconnect { id, subject, object } => {
                let subject = subject
                    .as_deref()
                    .map(|v| clean_name(Field::Subject, v))
                    .transpose()
                    .map_err(|e| invalid(idx, e))?;
                let object = object
                    .as_deref()
                    .map(|v| clean_name(Field::Object, v))
                    .transpose()
                    .map_err(|e| invalid(idx, e))?;
                let entry = entry_mut(&mut out, *id).ok_or_else(|| unknown(*id))?;
                if let Some(v) = subject {
                    entry.subject = v;
                }
                if let Some(v) = object {
                    entry.object = v;
                }
            }
        }
    }
    *ids = mint;
    Ok(out)
}

/// Minimal id-keyed edit set turning `before` into `after`.
///
/// Entries only in `after` become adds (carrying their id), entries only in `before`
/// become removes, and changed entries become a reconnect when only endpoints moved,
/// otherwise a modify listing just the changed fields. An entry whose type changed is
/// removed and re-added under the same id.
pub fn diff(before: &KnowledgeGraph, after: &KnowledgeGraph) -> EditSet {
    let old: HashMap<EntryId, &KgEntry> = before.entries().map(|e| (e.id, e)).collect();
    let new: HashMap<EntryId, &KgEntry> = after.entries().map(|e| (e.id, e)).collect();
    let same_type = |id: &EntryId| match (old.get(id), new.get(id)) {
        (Some(a), Some(b)) => a.node_type == b.node_type,
        _ => false,
    };

    let mut commands = Vec::new();
    for e in before.entries() {
        if !same_type(&e.id) {
            commands.push(EditCommand::Remove { id: e.id });
        }
    }
    for e in before.entries() {
        if !same_type(&e.id) {
            continue;
        }
        let n = new[&e.id];
        let changed = |a: &String, b: &String| (a != b).then(|| b.clone());
        let subject = changed(&e.subject, &n.subject);
        let object = changed(&e.object, &n.object);
        let relation = changed(&e.relation, &n.relation);
        let description = changed(&e.description, &n.description);
        if relation.is_none() && description.is_none() {
            if subject.is_some() || object.is_some() {
                commands.push(EditCommand::Reconnect { id: e.id, subject, object });
            }
        } else {
            commands.push(EditCommand::Modify {
                id: e.id,
                subject,
                object,
                relation,
                description,
            });
        }
    }
    for e in after.entries() {
        if !same_type(&e.id) {
            commands.push(EditCommand::Add { entry: e.into() });
        }
    }
    EditSet::user(commands)
}
