//! Live sessions and the jobs that drive them.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use chrono::{DateTime, Utc};
use serde::Serialize;
use storygraph_core::kg::{EditSet, KnowledgeGraph, NodeRegistry};
use storygraph_core::pipeline::{
    ContextSummary, Diagnostic, Engine, Phase, PipelineError, PipelineState, Scene, StorySpec, Transition,
};
use storygraph_core::textgen::{GenerationParams, GeneratorBackend, TemplateSet};
use tokio::sync::broadcast;

use crate::store::{Recovered, SessionLog, SessionMeta, SessionStore};
use crate::{SpecDefaults, StoreError};

/// Machine-readable failure of a background job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JobError {
    pub code: &'static str,
    pub message: String,
}

pub fn pipeline_error_code(e: &PipelineError) -> &'static str {
    match e {
        PipelineError::InvalidSpec(_) => "invalid_spec",
        PipelineError::WrongPhase { .. } => "wrong_phase",
        PipelineError::KgDisabled => "kg_disabled",
        PipelineError::ExtractionEmpty => "extraction_empty",
        PipelineError::EmptyScene { .. } => "empty_scene",
        PipelineError::Backend(_) => "generator",
        PipelineError::Template(_) => "template",
        PipelineError::Edit(_) => "validation",
    }
}

/// Pushed to event stream subscribers after every commit or job failure.
#[derive(Debug, Clone, Serialize)]
pub struct Notice {
    pub kind: &'static str,
    pub phase: Phase,
    pub cursor: u32,
    pub event_count: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<JobError>,
}

#[derive(Debug)]
pub struct SessionData {
    pub meta: SessionMeta,
    pub spec: StorySpec,
    /// `None` until initialization commits.
    pub state: Option<PipelineState>,
    pub log: SessionLog,
    pub last_error: Option<JobError>,
    pub diagnostics: Vec<Diagnostic>,
}

/// What `GET /sessions/{id}` returns.
#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    pub id: String,
    pub title: String,
    #[serde(flatten)]
    pub phase: Phase,
    pub cursor: u32,
    pub scene_count: u32,
    pub kg_enabled: bool,
    pub edit_mode: bool,
    pub scenes: Vec<Scene>,
    pub graph: KnowledgeGraph,
    pub registry: NodeRegistry,
    pub context: ContextSummary,
    /// Scene index to regeneration count.
    pub generations: BTreeMap<u32, u32>,
    pub busy: bool,
    pub last_error: Option<JobError>,
    pub diagnostics: Vec<Diagnostic>,
    pub event_count: u64,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

pub struct Session {
    pub id: String,
    busy: AtomicBool,
    data: Mutex<SessionData>,
    notices: broadcast::Sender<Notice>,
}

/// Held while a mutation runs; clears the busy flag when dropped.
pub struct BusyGuard(Arc<Session>);

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

impl Session {
    fn new(meta: SessionMeta, spec: StorySpec, state: Option<PipelineState>, log: SessionLog) -> Arc<Self> {
        let (notices, _) = broadcast::channel(64);
        Arc::new(Self {
            id: meta.id.clone(),
            busy: AtomicBool::new(false),
            data: Mutex::new(SessionData {
                meta,
                spec,
                state,
                log,
                last_error: None,
                diagnostics: Vec::new(),
            }),
            notices,
        })
    }

    pub fn data(&self) -> MutexGuard<'_, SessionData> {
        self.data.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    pub fn is_busy(&self) -> bool {
        self.busy.load(Ordering::Acquire)
    }

    /// Claim the single mutation slot, or `None` if a mutation is running.
    pub fn try_claim(self: &Arc<Self>) -> Option<BusyGuard> {
        self.busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| BusyGuard(Arc::clone(self)))
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Notice> {
        self.notices.subscribe()
    }

    /// Current state, or a blank one if initialization has not committed.
    pub fn current_state(&self) -> PipelineState {
        let data = self.data();
        data.state.clone().unwrap_or_else(|| PipelineState::new(data.spec.clone()))
    }

    pub fn phase(&self) -> Phase {
        self.data().state.as_ref().map_or(Phase::Initializing, |s| s.phase)
    }

    pub fn view(&self) -> SessionView {
        let data = self.data();
        let state = data.state.clone().unwrap_or_else(|| PipelineState::new(data.spec.clone()));
        SessionView {
            id: self.id.clone(),
            title: state.spec.title.clone(),
            phase: state.phase,
            cursor: state.cursor,
            scene_count: state.spec.scene_count,
            kg_enabled: state.spec.kg_enabled,
            edit_mode: state.spec.edit_mode,
            generations: state.scenes.iter().map(|s| (s.index, s.generation)).collect(),
            scenes: state.scenes,
            graph: state.graph,
            registry: state.registry,
            context: state.context,
            busy: self.is_busy(),
            last_error: data.last_error.clone(),
            diagnostics: data.diagnostics.clone(),
            event_count: data.log.len(),
            created_at: data.meta.created_at,
            updated_at: data.meta.updated_at,
        }
    }

    fn notify(&self, kind: &'static str, data: &SessionData) {
        let (phase, cursor) = data.state.as_ref().map_or((Phase::Initializing, 0), |s| (s.phase, s.cursor));
        // No subscribers is fine.
        let _ = self.notices.send(Notice {
            kind,
            phase,
            cursor,
            event_count: data.log.len(),
            error: data.last_error.clone(),
        });
    }
}

/// Background work on one session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Job {
    /// Initialize if needed, then generate until the session waits for input or ends.
    Drive,
    Regenerate,
    /// Close the current scene, then drive.
    Advance,
}

/// Shared service state.
pub struct AppState {
    pub store: SessionStore,
    pub backend: Arc<dyn GeneratorBackend>,
    pub templates: TemplateSet,
    pub params: GenerationParams,
    pub defaults: SpecDefaults,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl AppState {
    pub fn new(
        store: SessionStore,
        backend: Arc<dyn GeneratorBackend>,
        templates: TemplateSet,
        params: GenerationParams,
        defaults: SpecDefaults,
    ) -> Arc<Self> {
        Arc::new(Self {
            store,
            backend,
            templates,
            params,
            defaults,
            sessions: RwLock::new(HashMap::new()),
        })
    }

    pub fn engine(&self) -> Engine<'_> {
        Engine::new(self.backend.as_ref(), &self.templates).with_params(self.params.clone())
    }

    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.read().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().unwrap_or_else(|p| p.into_inner()).keys().cloned().collect();
        ids.sort();
        ids
    }

    fn insert(&self, session: Arc<Session>) {
        self.sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(session.id.clone(), session);
    }

    /// Persist a new session. The caller starts the drive job.
    pub fn create_session(&self, spec: StorySpec) -> Result<Arc<Session>, StoreError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let (meta, log) = self.store.create(&id, &spec)?;
        let session = Session::new(meta, spec, None, log);
        self.insert(Arc::clone(&session));
        Ok(session)
    }

    /// Load every session from disk. Returns those whose drive should resume.
    pub fn restore(&self) -> Result<Vec<Arc<Session>>, StoreError> {
        let mut unfinished = Vec::new();
        for Recovered {
            meta, spec, state, log, ..
        } in self.store.recover_all(&self.templates)?
        {
            let pending = matches!(state.as_ref().map(|s| s.phase), None | Some(Phase::Generating(_)));
            let session = Session::new(meta, spec, state, log);
            if pending {
                unfinished.push(Arc::clone(&session));
            }
            self.insert(session);
        }
        Ok(unfinished)
    }

    /// Append a transition to the log, then publish its state.
    pub fn commit(&self, session: &Session, kind: &'static str, t: Transition) -> Result<(), StoreError> {
        let mut data = session.data();
        data.log.append(t.events)?;
        self.store.write_state(&session.id, &t.state)?;
        data.meta.updated_at = Utc::now();
        self.store.write_meta(&data.meta)?;
        data.state = Some(t.state);
        data.diagnostics = t.diagnostics;
        data.last_error = None;
        session.notify(kind, &data);
        Ok(())
    }

    fn fail(&self, session: &Session, error: JobError) {
        tracing::warn!(session = %session.id, code = error.code, message = %error.message, "job failed");
        let mut data = session.data();
        data.last_error = Some(error);
        session.notify("failed", &data);
    }

    /// Apply an edit set synchronously. The caller holds the busy guard.
    pub fn submit_edits(&self, session: &Session, edits: &EditSet) -> Result<PipelineState, SubmitError> {
        let state = session.data().state.clone().ok_or(PipelineError::WrongPhase {
            expected: "awaiting_edit",
            actual: Phase::Initializing,
        })?;
        let t = self.engine().submit_edits(&state, edits)?;
        let next = t.state.clone();
        self.commit(session, "edited", t)?;
        Ok(next)
    }

    /// Run `job` to completion on the calling thread. Failures land in `last_error`.
    pub fn run_job(&self, session: &Session, job: Job) {
        if let Err(e) = self.try_job(session, job) {
            self.fail(session, e);
        }
    }

    fn try_job(&self, session: &Session, job: Job) -> Result<(), JobError> {
        let engine = self.engine();
        let pipeline = |e: PipelineError| JobError {
            code: pipeline_error_code(&e),
            message: e.to_string(),
        };
        let storage = |e: StoreError| JobError {
            code: "storage",
            message: e.to_string(),
        };
        match job {
            Job::Drive => {}
            Job::Regenerate => {
                let t = engine.regenerate_current(&session.current_state()).map_err(pipeline)?;
                return self.commit(session, "regenerated", t).map_err(storage);
            }
            Job::Advance => {
                let t = engine.advance(&session.current_state()).map_err(pipeline)?;
                self.commit(session, "advanced", t).map_err(storage)?;
            }
        }
        if session.data().state.is_none() {
            let spec = session.data().spec.clone();
            let t = engine.initialize(spec).map_err(pipeline)?;
            self.commit(session, "initialized", t).map_err(storage)?;
        }
        while let Phase::Generating(_) = session.phase() {
            let t = engine.step(&session.current_state()).map_err(pipeline)?;
            self.commit(session, "scene_generated", t).map_err(storage)?;
        }
        Ok(())
    }

    /// Run `job` on the blocking pool, releasing `guard` when it ends.
    pub fn spawn_job(self: &Arc<Self>, session: Arc<Session>, job: Job, guard: BusyGuard) {
        let app = Arc::clone(self);
        tokio::task::spawn_blocking(move || {
            let _guard = guard;
            app.run_job(&session, job);
        });
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SubmitError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Store(#[from] StoreError),
}
