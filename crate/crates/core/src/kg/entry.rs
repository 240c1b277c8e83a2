use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grammar::{ARROW, ARROW_ALIAS, DESCRIPTION_SEPARATOR};

/// Name of a graph partition, e.g. `characters`.
///
/// Lowercase ASCII letters, digits, `_` and `-` only.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NodeType(String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid node type {name:?}: {reason}")]
pub struct NodeTypeError {
    pub name: String,
    pub reason: &'static str,
}

impl NodeType {
    pub fn new(name: impl Into<String>) -> Result<Self, NodeTypeError> {
        let name = name.into();
        let reason = if name.trim().is_empty() {
            Some("must not be empty")
        } else if !name
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-')
        {
            Some("only lowercase letters, digits, '_' and '-' are allowed")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(NodeTypeError { name, reason }),
            None => Ok(Self(name)),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for NodeType {
    type Error = NodeTypeError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<NodeType> for String {
    fn from(value: NodeType) -> Self {
        value.0
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntryId(pub u64);

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Deterministic id source. Two runs that mint in the same order get the same ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdMint {
    next: u64,
}

impl IdMint {
    pub fn new() -> Self {
        Self { next: 1 }
    }

    pub fn starting_at(next: u64) -> Self {
        Self { next }
    }

    pub fn mint(&mut self) -> EntryId {
        // A default-constructed mint starts at 0; skip it so ids are always >= 1.
        if self.next == 0 {
            self.next = 1;
        }
        let id = EntryId(self.next);
        self.next += 1;
        id
    }

    /// Make sure ids minted later never collide with `id`.
    pub fn observe(&mut self, id: EntryId) {
        if id.0 >= self.next {
            self.next = id.0 + 1;
        }
    }
}

/// Where an entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Initial,
    Scene(u32),
    UserEdit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Id,
    Subject,
    Object,
    Relation,
    Description,
    Type,
}

impl Field {
    pub fn name(self) -> &'static str {
        match self {
            Field::Id => "id",
            Field::Subject => "subject",
            Field::Object => "object",
            Field::Relation => "relation",
            Field::Description => "description",
            Field::Type => "type",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("{field}: {reason}")]
pub struct FieldError {
    pub field: Field,
    pub reason: String,
}

/// One relationship `subject -> object -> relation : description` in partition `node_type`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgEntry {
    pub id: EntryId,
    pub subject: String,
    pub object: String,
    pub relation: String,
    pub description: String,
    #[serde(rename = "type")]
    pub node_type: NodeType,
    pub provenance: Provenance,
}

impl KgEntry {
    /// Equality on everything except id and provenance.
    pub fn same_content(&self, other: &KgEntry) -> bool {
        self.subject == other.subject
            && self.object == other.object
            && self.relation == other.relation
            && self.description == other.description
            && self.node_type == other.node_type
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        validate_name_field(Field::Subject, &self.subject)?;
        validate_name_field(Field::Object, &self.object)?;
        validate_name_field(Field::Relation, &self.relation)?;
        validate_description(&self.description)
    }
}

pub(crate) fn validate_name_field(field: Field, value: &str) -> Result<(), FieldError> {
    let fail = |reason: &str| {
        Err(FieldError {
            field,
            reason: reason.to_string(),
        })
    };
    if value.trim().is_empty() {
        return fail("must not be empty");
    }
    if value.trim() != value {
        return fail("must not have leading or trailing whitespace");
    }
    if value.contains(['\n', '\r']) {
        return fail("must not contain a line break");
    }
    if value.contains(ARROW) || value.contains(ARROW_ALIAS) {
        return fail("must not contain the arrow separator");
    }
    if value.contains(DESCRIPTION_SEPARATOR) {
        return fail("must not contain the description separator ':'");
    }
    Ok(())
}

pub(crate) fn validate_description(value: &str) -> Result<(), FieldError> {
    let fail = |reason: &str| {
        Err(FieldError {
            field: Field::Description,
            reason: reason.to_string(),
        })
    };
    if value.contains(['\n', '\r']) {
        return fail("must not contain a line break");
    }
    if value.trim() != value {
        return fail("must not have leading or trailing whitespace");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_type_rules() {
        assert!(NodeType::new("characters").is_ok());
        assert!(NodeType::new("quest-items_2").is_ok());
        assert!(NodeType::new("").is_err());
        assert!(NodeType::new("   ").is_err());
        assert!(NodeType::new("Characters").is_err());
        assert!(NodeType::new("magic items").is_err());
    }

    #[test]
    fn mint_skips_observed_ids() {
        let mut mint = IdMint::new();
        assert_eq!(mint.mint(), EntryId(1));
        mint.observe(EntryId(10));
        assert_eq!(mint.mint(), EntryId(11));
        mint.observe(EntryId(3));
        assert_eq!(mint.mint(), EntryId(12));
        assert_eq!(IdMint::default().mint(), EntryId(1));
    }

    #[test]
    fn provenance_json_shape() {
        assert_eq!(serde_json::to_string(&Provenance::Initial).unwrap(), "\"initial\"");
        assert_eq!(serde_json::to_string(&Provenance::Scene(3)).unwrap(), "{\"scene\":3}");
        assert_eq!(serde_json::to_string(&Provenance::UserEdit).unwrap(), "\"user_edit\"");
    }

    #[test]
    fn field_validation() {
        assert!(validate_name_field(Field::Subject, "Mara").is_ok());
        assert!(validate_name_field(Field::Subject, " Mara").is_err());
        assert!(validate_name_field(Field::Object, "a -> b").is_err());
        assert!(validate_name_field(Field::Object, "a → b").is_err());
        assert!(validate_name_field(Field::Relation, "at 10:30").is_err());
        assert!(validate_description("keycard: the only one").is_ok());
        assert!(validate_description("").is_ok());
        assert!(validate_description("two\nlines").is_err());
    }
}
