//! Scene-by-scene story generation over a live knowledge graph.
//!
//! A run starts with [`Engine::initialize`], which extracts nodes and one graph
//! partition per node type from the world settings. Each [`Engine::step`] then
//! selects a scene subgraph, writes the scene, folds it into the running summary and
//! updates nodes and graph from it. With edit mode on, the state pauses in
//! [`Phase::AwaitingEdit`] after every scene so the graph can be edited and the scene
//! regenerated before moving on.
//!
//! Every operation is a pure transition from one [`PipelineState`] to the next, plus
//! the [`Event`]s that let [`replay`] rebuild it.

mod engine;
mod events;
mod export;
mod nodes;
mod replay;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{default_type_set, EditError, IdMint, KgEntry, KnowledgeGraph, NodeRegistry, NodeType};
use crate::textgen::{BackendError, TemplateError};

pub use engine::{Diagnostic, Engine, Trace, Transition};
pub use events::{state_hash, CallOutcome, Event, GeneratorCall, LogRecord};
pub use export::{export_json, export_text};
pub use nodes::{parse_node_lines, NodeLine};
pub use replay::{parse_log, recover_log, replay, ReplayError, ReplayReport, Verdict};

pub const DEFAULT_SCENE_COUNT: u32 = 5;
pub const DEFAULT_QUERY_CAP: usize = 40;
/// Characters of scene text kept when a summary has to be synthesized without the generator.
pub const SUMMARY_FALLBACK_CHARS: usize = 500;

/// World settings plus run configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorySpec {
    pub title: String,
    #[serde(default)]
    pub genre: String,
    #[serde(default)]
    pub protagonists: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_type_set")]
    pub type_set: Vec<NodeType>,
    #[serde(default = "default_scene_count")]
    pub scene_count: u32,
    #[serde(default = "default_true")]
    pub kg_enabled: bool,
    #[serde(default = "default_query_cap")]
    pub query_cap: usize,
    #[serde(default)]
    pub edit_mode: bool,
    /// Run a generator-backed cleanup pass after the deterministic dedup.
    #[serde(default)]
    pub llm_cleanup: bool,
}

fn default_scene_count() -> u32 {
    DEFAULT_SCENE_COUNT
}

fn default_true() -> bool {
    true
}

fn default_query_cap() -> usize {
    DEFAULT_QUERY_CAP
}

impl StorySpec {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            genre: String::new(),
            protagonists: String::new(),
            description: String::new(),
            type_set: default_type_set(),
            scene_count: DEFAULT_SCENE_COUNT,
            kg_enabled: true,
            query_cap: DEFAULT_QUERY_CAP,
            edit_mode: false,
            llm_cleanup: false,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |msg: &str| Err(PipelineError::InvalidSpec(msg.to_string()));
        if self.title.trim().is_empty() {
            return invalid("title must not be empty");
        }
        if self.scene_count < 1 {
            return invalid("scene_count must be at least 1");
        }
        if self.query_cap < 1 {
            return invalid("query_cap must be at least 1");
        }
        if self.kg_enabled && self.type_set.is_empty() {
            return invalid("type_set must not be empty when the knowledge graph is enabled");
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.type_set.iter().find(|t| !seen.insert(*t)) {
            return Err(PipelineError::InvalidSpec(format!("type {dup} listed twice")));
        }
        Ok(())
    }

    /// The world settings block shown to the generator.
    pub fn world_text(&self) -> String {
        let or_none = |s: &str| if s.trim().is_empty() { "(none)".to_string() } else { s.trim().to_string() };
        format!(
            "Title: {}\nGenre: {}\nProtagonists: {}\nDescription: {}",
            or_none(&self.title),
            or_none(&self.genre),
            or_none(&self.protagonists),
            or_none(&self.description)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    /// 1-based.
    pub index: u32,
    pub text: String,
    /// Number of times this scene has been regenerated.
    pub generation: u32,
}

/// Running summary and the `(scene index, generation)` pairs folded into it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSummary {
    pub text: String,
    pub basis: Vec<(u32, u32)>,
}

impl ContextSummary {
    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", content = "scene", rename_all = "snake_case")]
pub enum Phase {
    Initializing,
    Generating(u32),
    AwaitingEdit(u32),
    Finished,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Initializing => f.write_str("initializing"),
            Phase::Generating(i) => write!(f, "generating({i})"),
            Phase::AwaitingEdit(i) => write!(f, "awaiting_edit({i})"),
            Phase::Finished => f.write_str("finished"),
        }
    }
}

/// Graph and context as they stood when a scene started.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub graph: KnowledgeGraph,
    pub context: ContextSummary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineState {
    pub spec: StorySpec,
    pub registry: NodeRegistry,
    pub graph: KnowledgeGraph,
    pub ids: IdMint,
    pub context: ContextSummary,
    pub scenes: Vec<Scene>,
    /// Current scene index, 0 before the first scene starts.
    pub cursor: u32,
    pub phase: Phase,
    pub snapshots: BTreeMap<u32, Snapshot>,
}

impl PipelineState {
    pub fn new(spec: StorySpec) -> Self {
        let types = spec.type_set.clone();
        Self {
            registry: NodeRegistry::new(types.clone()),
            graph: KnowledgeGraph::new(&types),
            ids: IdMint::new(),
            context: ContextSummary::default(),
            scenes: Vec::new(),
            cursor: 0,
            phase: Phase::Initializing,
            snapshots: BTreeMap::new(),
            spec,
        }
    }

    pub fn scene(&self, index: u32) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.index == index)
    }

    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Finished
    }

    /// Enter scene `index`, recording where it started.
    pub(crate) fn begin_scene(&mut self, index: u32) {
        self.cursor = index;
        self.phase = Phase::Generating(index);
        self.snapshots.insert(
            index,
            Snapshot {
                graph: self.graph.clone(),
                context: self.context.clone(),
            },
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubgraphSource {
    FullGraph,
    GeneratorQuery,
    LexicalFallback,
}

/// Entries chosen to guide one scene.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSubgraph {
    pub entries: Vec<KgEntry>,
    pub source: SubgraphSource,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("invalid story spec: {0}")]
    InvalidSpec(String),
    #[error("operation needs phase {expected}, session is {actual}")]
    WrongPhase { expected: &'static str, actual: Phase },
    #[error("the knowledge graph is disabled for this story")]
    KgDisabled,
    #[error("no nodes could be extracted from the world settings")]
    ExtractionEmpty,
    #[error("the generator returned an empty scene {index}")]
    EmptyScene { index: u32 },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Edit(#[from] EditError),
}
