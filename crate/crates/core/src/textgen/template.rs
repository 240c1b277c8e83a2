use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One generator-backed step of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateId {
    InitializeNodes,
    ExtractKG,
    Query,
    GenerateScene,
    Summarize,
    UpdateNodes,
    UpdateKG,
    CleanUpLLM,
    Regenerate,
}

impl TemplateId {
    pub const ALL: [TemplateId; 9] = [
        TemplateId::InitializeNodes,
        TemplateId::ExtractKG,
        TemplateId::Query,
        TemplateId::GenerateScene,
        TemplateId::Summarize,
        TemplateId::UpdateNodes,
        TemplateId::UpdateKG,
        TemplateId::CleanUpLLM,
        TemplateId::Regenerate,
    ];

    /// File stem used when loading templates from a directory.
    pub fn file_stem(self) -> &'static str {
        match self {
            TemplateId::InitializeNodes => "initialize_nodes",
            TemplateId::ExtractKG => "extract_kg",
            TemplateId::Query => "query",
            TemplateId::GenerateScene => "generate_scene",
            TemplateId::Summarize => "summarize",
            TemplateId::UpdateNodes => "update_nodes",
            TemplateId::UpdateKG => "update_kg",
            TemplateId::CleanUpLLM => "clean_up_llm",
            TemplateId::Regenerate => "regenerate",
        }
    }

    /// Placeholders the pipeline binds when it renders this template.
    pub fn bindings(self) -> &'static [&'static str] {
        match self {
            TemplateId::InitializeNodes => &["world", "types"],
            TemplateId::ExtractKG => &["world", "nodes", "node_type"],
            TemplateId::Query => &["graph", "context", "previous_scene"],
            TemplateId::GenerateScene => &["world", "graph", "context", "previous_scene", "scene_number", "scene_count"],
            TemplateId::Summarize => &["context", "scene"],
            TemplateId::UpdateNodes => &["nodes", "types", "scene"],
            TemplateId::UpdateKG => &["graph", "node_type", "scene"],
            TemplateId::CleanUpLLM => &["graph", "context"],
            TemplateId::Regenerate => &[
                "world",
                "graph",
                "context",
                "previous_scene",
                "scene",
                "scene_number",
                "scene_count",
            ],
        }
    }

    /// Steps that write story graph state rather than prose.
    pub fn is_kg_step(self) -> bool {
        matches!(
            self,
            TemplateId::InitializeNodes
                | TemplateId::ExtractKG
                | TemplateId::Query
                | TemplateId::UpdateNodes
                | TemplateId::UpdateKG
                | TemplateId::CleanUpLLM
        )
    }

    fn default_body(self) -> &'static str {
        match self {
            TemplateId::InitializeNodes => include_str!("../../templates/initialize_nodes.txt"),
            TemplateId::ExtractKG => include_str!("../../templates/extract_kg.txt"),
            TemplateId::Query => include_str!("../../templates/query.txt"),
            TemplateId::GenerateScene => include_str!("../../templates/generate_scene.txt"),
            TemplateId::Summarize => include_str!("../../templates/summarize.txt"),
            TemplateId::UpdateNodes => include_str!("../../templates/update_nodes.txt"),
            TemplateId::UpdateKG => include_str!("../../templates/update_kg.txt"),
            TemplateId::CleanUpLLM => include_str!("../../templates/clean_up_llm.txt"),
            TemplateId::Regenerate => include_str!("../../templates/regenerate.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("missing placeholder {0:?}")]
    MissingPlaceholder(String),
    #[error("template {template} uses placeholder {placeholder:?}, which the pipeline never binds")]
    UnknownPlaceholder { template: TemplateId, placeholder: String },
    #[error("reading template {path}: {message}")]
    Io { path: String, message: String },
}

/// A `{name}` placeholder occurrence: byte range and name.
fn placeholders(body: &str) -> impl Iterator<Item = (usize, usize, &str)> {
    let bytes = body.as_bytes();
    let mut i = 0;
    std::iter::from_fn(move || {
        while i < bytes.len() {
            if bytes[i] == b'{' {
                let start = i;
                let mut j = i + 1;
                while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j].is_ascii_digit() || bytes[j] == b'_') {
                    j += 1;
                }
                let name_ok = j > i + 1 && (bytes[i + 1].is_ascii_lowercase() || bytes[i + 1] == b'_');
                if name_ok && j < bytes.len() && bytes[j] == b'}' {
                    i = j + 1;
                    return Some((start, j + 1, &body[start + 1..j]));
                }
            }
            i += 1;
        }
        None
    })
}

/// Prompt body with `{name}` placeholders. Braces that do not enclose an identifier
/// are literal text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    id: TemplateId,
    body: String,
    required: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn new(id: TemplateId, body: impl Into<String>) -> Self {
        let body = body.into();
        let required = placeholders(&body).map(|(_, _, name)| name.to_string()).collect();
        Self { id, body, required }
    }

    pub fn id(&self) -> TemplateId {
        self.id
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn required_placeholders(&self) -> &BTreeSet<String> {
        &self.required
    }
}

/// Substitute every placeholder. Extra bindings are ignored.
pub fn render_prompt(template: &PromptTemplate, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
    if let Some(missing) = template.required.iter().find(|name| !bindings.contains_key(*name)) {
        return Err(TemplateError::MissingPlaceholder(missing.clone()));
    }
    let body = &template.body;
    let mut out = String::with_capacity(body.len());
    let mut last = 0;
    for (start, end, name) in placeholders(body) {
        out.push_str(&body[last..start]);
        out.push_str(&bindings[name]);
        last = end;
    }
    out.push_str(&body[last..]);
    Ok(out)
}

/// One template per pipeline step.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::defaults()
    }
}

impl TemplateSet {
    pub fn defaults() -> Self {
        let templates = TemplateId::ALL
            .into_iter()
            .map(|id| (id, PromptTemplate::new(id, id.default_body())))
            .collect();
        Self { templates }
    }

    /// Defaults overridden by `<dir>/<file_stem>.txt` where present.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::defaults();
        for id in TemplateId::ALL {
            let path = dir.join(format!("{}.txt", id.file_stem()));
            if !path.exists() {
                continue;
            }
            let body = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            set.templates.insert(id, PromptTemplate::new(id, body));
        }
        set.validate()?;
        Ok(set)
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Result<Self, TemplateError> {
        self.templates.insert(template.id(), template);
        self.validate()?;
        Ok(self)
    }

    /// Every placeholder a template uses must be one the pipeline binds for it.
    pub fn validate(&self) -> Result<(), TemplateError> {
        for (id, template) in &self.templates {
            if let Some(p) = template.required.iter().find(|p| !id.bindings().contains(&p.as_str())) {
                return Err(TemplateError::UnknownPlaceholder {
                    template: *id,
                    placeholder: p.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn render(&self, id: TemplateId, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        render_prompt(self.get(id), bindings)
    }
}
