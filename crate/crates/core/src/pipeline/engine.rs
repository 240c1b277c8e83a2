use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use super::events::{sha256_hex, state_hash, CallOutcome, Event, GeneratorCall};
use super::nodes::{parse_node_lines, registry_text};
use super::{
    ContextSummary, Phase, PipelineError, PipelineState, Scene, SceneSubgraph, StorySpec, SubgraphSource,
    SUMMARY_FALLBACK_CHARS,
};
use crate::kg::{
    apply_edits, dedup_cleanup, lexical_subgraph, normalize_triple, parse_graph_block, serialize_entry,
    serialize_graph, EditSet, EntryId, IdMint, KgEntry, KnowledgeGraph, NodeRegistry, NodeType, Provenance,
};
use crate::textgen::{GenerationParams, GeneratorBackend, TemplateId, TemplateSet};

const NONE: &str = "(none)";
const NO_GRAPH: &str = "(no knowledge graph)";

/// A non-fatal problem met while running a step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub step: TemplateId,
    pub message: String,
}

/// Events and diagnostics collected while an operation runs.
#[derive(Debug, Default)]
pub struct Trace {
    pub events: Vec<Event>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    fn diag(&mut self, step: TemplateId, message: impl Into<String>) {
        let message = message.into();
        tracing::debug!(%step, %message, "pipeline diagnostic");
        self.diagnostics.push(Diagnostic { step, message });
    }

    pub fn calls(&self) -> impl Iterator<Item = &GeneratorCall> {
        self.events.iter().filter_map(|e| match e {
            Event::GeneratorCall(call) => Some(call),
            _ => None,
        })
    }
}

/// Result of a successful operation: the next state and what to append to the log.
#[derive(Debug)]
pub struct Transition {
    pub state: PipelineState,
    pub events: Vec<Event>,
    pub diagnostics: Vec<Diagnostic>,
}

fn bind<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn or_none(text: &str) -> String {
    if text.trim().is_empty() {
        NONE.to_string()
    } else {
        text.to_string()
    }
}

fn entry_lines(entries: &[KgEntry]) -> String {
    entries.iter().map(serialize_entry).collect::<Vec<_>>().join("\n")
}

fn require_awaiting(state: &PipelineState) -> Result<u32, PipelineError> {
    match state.phase {
        Phase::AwaitingEdit(i) => Ok(i),
        actual => Err(PipelineError::WrongPhase {
            expected: "awaiting_edit",
            actual,
        }),
    }
}

/// Runs pipeline operations against one generator backend.
pub struct Engine<'a> {
    backend: &'a dyn GeneratorBackend,
    templates: &'a TemplateSet,
    params: GenerationParams,
}

impl<'a> Engine<'a> {
    pub fn new(backend: &'a dyn GeneratorBackend, templates: &'a TemplateSet) -> Self {
        Self {
            backend,
            templates,
            params: GenerationParams::default(),
        }
    }

    pub fn with_params(mut self, params: GenerationParams) -> Self {
        self.params = params;
        self
    }

    fn call(
        &self,
        trace: &mut Trace,
        id: TemplateId,
        bindings: BTreeMap<String, String>,
    ) -> Result<String, PipelineError> {
        let request = self.params.request(self.templates, id, bindings)?;
        let prompt_hash = sha256_hex(request.prompt.as_bytes());
        let result = self.backend.complete(&request);
        let (usage, outcome) = match &result {
            Ok(r) => (Some(r.usage), CallOutcome::Ok { text: r.text.clone() }),
            Err(e) => (None, CallOutcome::Failed { error: e.clone() }),
        };
        trace.events.push(Event::GeneratorCall(GeneratorCall {
            template_id: id,
            prompt_hash,
            usage,
            outcome,
        }));
        Ok(result?.text)
    }

    /// Prose steps get one retry on a blank reply or a backend error.
    fn creative_call(
        &self,
        trace: &mut Trace,
        id: TemplateId,
        bindings: BTreeMap<String, String>,
        index: u32,
    ) -> Result<String, PipelineError> {
        let mut last_err = PipelineError::EmptyScene { index };
        for attempt in 0..2 {
            match self.call(trace, id, bindings.clone()) {
                Ok(text) if !text.trim().is_empty() => return Ok(text.trim().to_string()),
                Ok(_) => {
                    trace.diag(id, format!("blank scene text on attempt {}", attempt + 1));
                    last_err = PipelineError::EmptyScene { index };
                }
                Err(PipelineError::Backend(e)) => {
                    trace.diag(id, format!("backend error on attempt {}: {e}", attempt + 1));
                    last_err = PipelineError::Backend(e);
                }
                Err(other) => return Err(other),
            }
        }
        Err(last_err)
    }

    pub fn initialize_nodes(&self, spec: &StorySpec, trace: &mut Trace) -> Result<NodeRegistry, PipelineError> {
        if !spec.kg_enabled {
            return Err(PipelineError::KgDisabled);
        }
        let types = spec.type_set.iter().map(NodeType::as_str).collect::<Vec<_>>().join(", ");
        for _ in 0..2 {
            let text = self.call(
                trace,
                TemplateId::InitializeNodes,
                bind([("world", spec.world_text()), ("types", types.clone())]),
            )?;
            let (lines, diagnostics) = parse_node_lines(&text, &spec.type_set);
            for d in diagnostics {
                trace.diag(TemplateId::InitializeNodes, d);
            }
            let mut registry = NodeRegistry::new(spec.type_set.clone());
            for line in &lines {
                registry.upsert(&line.name, &line.node_type, &line.attributes);
            }
            if !registry.is_empty() {
                return Ok(registry);
            }
            trace.diag(TemplateId::InitializeNodes, "no parseable nodes");
        }
        Err(PipelineError::ExtractionEmpty)
    }

    pub fn extract_kg(
        &self,
        registry: &NodeRegistry,
        node_type: &NodeType,
        spec: &StorySpec,
        ids: &mut IdMint,
        trace: &mut Trace,
    ) -> Result<Vec<KgEntry>, PipelineError> {
        if !spec.kg_enabled {
            return Err(PipelineError::KgDisabled);
        }
        let text = self.call(
            trace,
            TemplateId::ExtractKG,
            bind([
                ("world", spec.world_text()),
                ("nodes", registry_text(registry)),
                ("node_type", node_type.to_string()),
            ]),
        )?;
        Ok(self.parse_entries(&text, node_type, Provenance::Initial, ids, TemplateId::ExtractKG, trace))
    }

    fn parse_entries(
        &self,
        text: &str,
        node_type: &NodeType,
        provenance: Provenance,
        ids: &mut IdMint,
        step: TemplateId,
        trace: &mut Trace,
    ) -> Vec<KgEntry> {
        let (mut entries, diagnostics) = match parse_graph_block(text, node_type, false, ids) {
            Ok(parsed) => parsed,
            Err(d) => (Vec::new(), vec![d]),
        };
        for d in diagnostics {
            trace.diag(step, format!("line {}: {}", d.line_no, d.error));
        }
        for e in &mut entries {
            e.provenance = provenance;
        }
        entries
    }

    /// Build the initial nodes and graph, then enter scene 1.
    pub fn initialize(&self, spec: StorySpec) -> Result<Transition, PipelineError> {
        spec.validate()?;
        let mut trace = Trace::new();
        let mut state = PipelineState::new(spec);
        if state.spec.kg_enabled {
            state.registry = self.initialize_nodes(&state.spec, &mut trace)?;
            for node_type in state.spec.type_set.clone() {
                let entries = self.extract_kg(&state.registry, &node_type, &state.spec, &mut state.ids, &mut trace)?;
                for entry in entries {
                    state.graph.push(entry).expect("freshly minted ids are unique");
                }
            }
            state.graph = self.cleanup(&state.spec, &state.graph, &state.context, &mut trace);
        }
        state.begin_scene(1);
        let hash = state_hash(&state);
        trace.events.push(Event::Initialized { state_hash: hash });
        Ok(Transition {
            state,
            events: trace.events,
            diagnostics: trace.diagnostics,
        })
    }

    /// Subgraph for the current scene, against the current graph and context.
    pub fn query_subgraph(&self, state: &PipelineState, trace: &mut Trace) -> SceneSubgraph {
        let spec = &state.spec;
        let index = state.cursor.max(1);
        if !spec.kg_enabled || index == 1 {
            return SceneSubgraph {
                entries: state.graph.entries().cloned().collect(),
                source: SubgraphSource::FullGraph,
            };
        }
        let prev_scene = state.scene(index - 1).map(|s| s.text.as_str()).unwrap_or_default();
        let fallback = |trace: &mut Trace, why: &str| {
            trace.diag(TemplateId::Query, format!("{why}; using lexical selection"));
            SceneSubgraph {
                entries: lexical_subgraph(&state.graph, &state.context.text, prev_scene, spec.query_cap),
                source: SubgraphSource::LexicalFallback,
            }
        };
        let reply = self.call(
            trace,
            TemplateId::Query,
            bind([
                ("graph", serialize_graph(&state.graph)),
                ("context", or_none(&state.context.text)),
                ("previous_scene", or_none(prev_scene)),
            ]),
        );
        let text = match reply {
            Ok(text) => text,
            Err(e) => return fallback(trace, &format!("query failed: {e}")),
        };
        let matched = self.match_back(&state.graph, &text, TemplateId::Query, trace);
        if matched.is_empty() {
            return fallback(trace, "query matched no existing entries");
        }
        SceneSubgraph {
            entries: state
                .graph
                .entries()
                .filter(|e| matched.contains(&e.id))
                .take(spec.query_cap)
                .cloned()
                .collect(),
            source: SubgraphSource::GeneratorQuery,
        }
    }

    /// Ids of existing entries named by the lines of `text`. Lines are matched by
    /// normalized triple only; anything else is reported and dropped.
    fn match_back(&self, graph: &KnowledgeGraph, text: &str, step: TemplateId, trace: &mut Trace) -> HashSet<EntryId> {
        let Some(any_type) = graph.types().next().cloned() else {
            return HashSet::new();
        };
        let mut scratch = IdMint::new();
        let lines = self.parse_entries(text, &any_type, Provenance::Initial, &mut scratch, step, trace);
        let mut matched = HashSet::new();
        for line in lines {
            match graph.find_by_triple(&normalize_triple(&line)) {
                Some(existing) => {
                    matched.insert(existing.id);
                }
                None => trace.diag(step, format!("no existing entry for {:?}", serialize_entry(&line))),
            }
        }
        matched
    }

    fn scene_bindings(&self, state: &PipelineState, subgraph: &SceneSubgraph, index: u32) -> BTreeMap<String, String> {
        let graph = if !state.spec.kg_enabled {
            NO_GRAPH.to_string()
        } else {
            or_none(&entry_lines(&subgraph.entries))
        };
        let previous = if index > 1 {
            state.scene(index - 1).map(|s| s.text.clone()).unwrap_or_default()
        } else {
            String::new()
        };
        bind([
            ("world", state.spec.world_text()),
            ("graph", graph),
            ("context", or_none(&state.context.text)),
            ("previous_scene", or_none(&previous)),
            ("scene_number", index.to_string()),
            ("scene_count", state.spec.scene_count.to_string()),
        ])
    }

    pub fn generate_scene(
        &self,
        state: &PipelineState,
        subgraph: &SceneSubgraph,
        trace: &mut Trace,
    ) -> Result<Scene, PipelineError> {
        let index = match state.phase {
            Phase::Generating(i) => i,
            actual => {
                return Err(PipelineError::WrongPhase {
                    expected: "generating",
                    actual,
                })
            }
        };
        let bindings = self.scene_bindings(state, subgraph, index);
        let text = self.creative_call(trace, TemplateId::GenerateScene, bindings, index)?;
        Ok(Scene {
            index,
            text,
            generation: 0,
        })
    }

    /// Fold `scene` into `context`. Falls back to appending the scene's opening when the
    /// generator fails or answers blank.
    pub fn summarize(&self, context: &ContextSummary, scene: &Scene, trace: &mut Trace) -> ContextSummary {
        let reply = self.call(
            trace,
            TemplateId::Summarize,
            bind([("context", or_none(&context.text)), ("scene", scene.text.clone())]),
        );
        let text = match reply {
            Ok(text) if !text.trim().is_empty() => text.trim().to_string(),
            other => {
                let why = match other {
                    Err(e) => e.to_string(),
                    Ok(_) => "blank summary".to_string(),
                };
                trace.diag(TemplateId::Summarize, format!("{why}; appending scene opening"));
                let opening: String = scene.text.chars().take(SUMMARY_FALLBACK_CHARS).collect();
                if context.text.is_empty() {
                    opening
                } else {
                    format!("{}\n{}", context.text, opening)
                }
            }
        };
        let mut basis = context.basis.clone();
        basis.push((scene.index, scene.generation));
        ContextSummary { text, basis }
    }

    pub fn update_nodes(&self, registry: &NodeRegistry, scene: &Scene, trace: &mut Trace) -> NodeRegistry {
        let types = registry.type_set().iter().map(NodeType::as_str).collect::<Vec<_>>().join(", ");
        let reply = self.call(
            trace,
            TemplateId::UpdateNodes,
            bind([("nodes", registry_text(registry)), ("types", types), ("scene", scene.text.clone())]),
        );
        let text = match reply {
            Ok(text) => text,
            Err(e) => {
                trace.diag(TemplateId::UpdateNodes, format!("{e}; nodes unchanged"));
                return registry.clone();
            }
        };
        let (lines, diagnostics) = parse_node_lines(&text, registry.type_set());
        for d in diagnostics {
            trace.diag(TemplateId::UpdateNodes, d);
        }
        let mut out = registry.clone();
        for line in &lines {
            out.upsert(&line.name, &line.node_type, &line.attributes);
        }
        out
    }

    /// Union new relationships for `node_type` from `scene` into the graph, then dedup.
    pub fn update_kg(
        &self,
        graph: &KnowledgeGraph,
        node_type: &NodeType,
        scene: &Scene,
        ids: &mut IdMint,
        trace: &mut Trace,
    ) -> KnowledgeGraph {
        let reply = self.call(
            trace,
            TemplateId::UpdateKG,
            bind([
                ("graph", serialize_graph(graph)),
                ("node_type", node_type.to_string()),
                ("scene", scene.text.clone()),
            ]),
        );
        let text = match reply {
            Ok(text) => text,
            Err(e) => {
                trace.diag(TemplateId::UpdateKG, format!("{e}; partition {node_type} unchanged"));
                return graph.clone();
            }
        };
        let entries = self.parse_entries(
            &text,
            node_type,
            Provenance::Scene(scene.index),
            ids,
            TemplateId::UpdateKG,
            trace,
        );
        let mut out = graph.clone();
        out.ensure_partition(node_type);
        for entry in entries {
            out.push(entry).expect("freshly minted ids are unique");
        }
        dedup_cleanup(&out).0
    }

    /// Deterministic dedup, then the optional generator pass.
    pub fn cleanup(
        &self,
        spec: &StorySpec,
        graph: &KnowledgeGraph,
        context: &ContextSummary,
        trace: &mut Trace,
    ) -> KnowledgeGraph {
        let (mut out, removed) = dedup_cleanup(graph);
        let mut removed = removed.len();
        if spec.llm_cleanup && !out.is_empty() {
            let reply = self.call(
                trace,
                TemplateId::CleanUpLLM,
                bind([("graph", serialize_graph(&out)), ("context", or_none(&context.text))]),
            );
            match reply {
                Ok(text) => {
                    let keep = self.match_back(&out, &text, TemplateId::CleanUpLLM, trace);
                    if keep.is_empty() {
                        trace.diag(TemplateId::CleanUpLLM, "cleanup kept nothing; ignoring it");
                    } else {
                        let before = out.len();
                        out.retain_ids(&keep);
                        removed += before - out.len();
                    }
                }
                Err(e) => trace.diag(TemplateId::CleanUpLLM, format!("{e}; keeping deduplicated graph")),
            }
        }
        trace.events.push(Event::CleanupRan {
            removed,
            remaining: out.len(),
        });
        out
    }

    /// Refresh nodes and every partition from `scene`.
    fn absorb_scene(&self, state: &mut PipelineState, scene: &Scene, trace: &mut Trace) {
        state.registry = self.update_nodes(&state.registry, scene, trace);
        for node_type in state.spec.type_set.clone() {
            state.graph = self.update_kg(&state.graph, &node_type, scene, &mut state.ids, trace);
        }
    }

    /// One scene: query, generate, summarize, update nodes and graph, clean up.
    pub fn step(&self, state: &PipelineState) -> Result<Transition, PipelineError> {
        let index = match state.phase {
            Phase::Generating(i) => i,
            actual => {
                return Err(PipelineError::WrongPhase {
                    expected: "generating",
                    actual,
                })
            }
        };
        let mut trace = Trace::new();
        let mut next = state.clone();
        let subgraph = if next.spec.kg_enabled {
            self.query_subgraph(&next, &mut trace)
        } else {
            SceneSubgraph {
                entries: Vec::new(),
                source: SubgraphSource::FullGraph,
            }
        };
        let scene = self.generate_scene(&next, &subgraph, &mut trace)?;
        next.context = self.summarize(&next.context, &scene, &mut trace);
        next.scenes.retain(|s| s.index != index);
        next.scenes.push(scene.clone());
        if next.spec.kg_enabled {
            self.absorb_scene(&mut next, &scene, &mut trace);
            next.graph = self.cleanup(&next.spec, &next.graph, &next.context, &mut trace);
        }
        if next.spec.edit_mode {
            next.phase = Phase::AwaitingEdit(index);
        } else if index >= next.spec.scene_count {
            next.phase = Phase::Finished;
        } else {
            next.begin_scene(index + 1);
        }
        trace.events.push(Event::SceneGenerated {
            index,
            generation: 0,
            state_hash: state_hash(&next),
        });
        Ok(Transition {
            state: next,
            events: trace.events,
            diagnostics: trace.diagnostics,
        })
    }

    pub fn submit_edits(&self, state: &PipelineState, edits: &EditSet) -> Result<Transition, PipelineError> {
        require_awaiting(state)?;
        if !state.spec.kg_enabled {
            return Err(PipelineError::KgDisabled);
        }
        let mut next = state.clone();
        next.graph = apply_edits(&state.graph, edits, &mut next.ids)?;
        let hash = state_hash(&next);
        Ok(Transition {
            state: next,
            events: vec![Event::EditApplied {
                edits: edits.clone(),
                state_hash: hash,
            }],
            diagnostics: Vec::new(),
        })
    }

    /// Rewrite the current scene against the (possibly edited) graph.
    ///
    /// The context is rolled back to where it stood when the scene started before the
    /// new version is summarized, so the old version leaves no trace in it.
    pub fn regenerate_current(&self, state: &PipelineState) -> Result<Transition, PipelineError> {
        let index = require_awaiting(state)?;
        let mut trace = Trace::new();
        let mut next = state.clone();
        if let Some(snapshot) = state.snapshots.get(&index) {
            next.context = snapshot.context.clone();
        }
        let old = state.scene(index).cloned().ok_or(PipelineError::WrongPhase {
            expected: "awaiting_edit with a generated scene",
            actual: state.phase,
        })?;
        let subgraph = if next.spec.kg_enabled {
            self.query_subgraph(&next, &mut trace)
        } else {
            SceneSubgraph {
                entries: Vec::new(),
                source: SubgraphSource::FullGraph,
            }
        };
        let mut bindings = self.scene_bindings(&next, &subgraph, index);
        bindings.insert("scene".to_string(), old.text.clone());
        let text = self.creative_call(&mut trace, TemplateId::Regenerate, bindings, index)?;
        let scene = Scene {
            index,
            text,
            generation: old.generation + 1,
        };
        next.context = self.summarize(&next.context, &scene, &mut trace);
        for s in &mut next.scenes {
            if s.index == index {
                *s = scene.clone();
            }
        }
        if next.spec.kg_enabled {
            self.absorb_scene(&mut next, &scene, &mut trace);
        }
        trace.events.push(Event::Regenerated {
            index,
            generation: scene.generation,
            state_hash: state_hash(&next),
        });
        Ok(Transition {
            state: next,
            events: trace.events,
            diagnostics: trace.diagnostics,
        })
    }

    /// Leave edit mode for this scene: clean up and move on (or finish).
    pub fn advance(&self, state: &PipelineState) -> Result<Transition, PipelineError> {
        let index = require_awaiting(state)?;
        let mut trace = Trace::new();
        let mut next = state.clone();
        if next.spec.kg_enabled {
            next.graph = self.cleanup(&next.spec, &next.graph, &next.context, &mut trace);
        }
        if index >= next.spec.scene_count {
            next.phase = Phase::Finished;
        } else {
            next.begin_scene(index + 1);
        }
        trace.events.push(Event::Advanced {
            from: index,
            state_hash: state_hash(&next),
        });
        Ok(Transition {
            state: next,
            events: trace.events,
            diagnostics: trace.diagnostics,
        })
    }

    /// Initialize and step until finished. Edit mode must be off.
    pub fn run(&self, spec: StorySpec) -> Result<Transition, PipelineError> {
        if spec.edit_mode {
            return Err(PipelineError::InvalidSpec(
                "a headless run needs edit_mode off".to_string(),
            ));
        }
        let init = self.initialize(spec)?;
        let mut state = init.state;
        let mut events = init.events;
        let mut diagnostics = init.diagnostics;
        while !state.is_finished() {
            let t = self.step(&state)?;
            state = t.state;
            events.extend(t.events);
            diagnostics.extend(t.diagnostics);
        }
        Ok(Transition {
            state,
            events,
            diagnostics,
        })
    }
}
