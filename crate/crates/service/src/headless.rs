//! Headless story runs for the CLI.

use std::fs;
use std::path::{Path, PathBuf};

use storygraph_core::kg::serialize_graph;
use storygraph_core::pipeline::{
    export_json, export_text, Diagnostic, Engine, Event, LogRecord, PipelineError, PipelineState, StorySpec,
};

pub const SPEC_FILE: &str = "spec.json";
pub const STORY_TEXT_FILE: &str = "story.txt";
pub const STORY_JSON_FILE: &str = "story.json";
pub const GRAPH_FILE: &str = "graph.txt";
pub const LOG_FILE: &str = "events.jsonl";

#[derive(Debug)]
pub struct RunOutputs {
    pub state: PipelineState,
    /// Full session log, starting with the effective spec.
    pub records: Vec<LogRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Run `spec` start to finish with edit mode off.
pub fn run_story(engine: &Engine<'_>, mut spec: StorySpec) -> Result<RunOutputs, PipelineError> {
    spec.edit_mode = false;
    let t = engine.run(spec.clone())?;
    let records = std::iter::once(Event::SpecCreated { spec })
        .chain(t.events)
        .enumerate()
        .map(|(seq, event)| LogRecord { seq: seq as u64, event })
        .collect();
    Ok(RunOutputs {
        state: t.state,
        records,
        diagnostics: t.diagnostics,
    })
}

/// Write the run's files into `dir`. `input_spec` is the spec as given, before
/// per-arm overrides, so paired arms write the same `spec.json`.
pub fn write_outputs(dir: &Path, input_spec: &StorySpec, outputs: &RunOutputs) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut log = String::new();
    for record in &outputs.records {
        log.push_str(&serde_json::to_string(record).expect("log records serialize"));
        log.push('\n');
    }
    let files = [
        (SPEC_FILE, serde_json::to_string_pretty(input_spec).expect("specs serialize")),
        (STORY_TEXT_FILE, export_text(&outputs.state)),
        (STORY_JSON_FILE, export_json(&outputs.state)),
        (GRAPH_FILE, serialize_graph(&outputs.state.graph)),
        (LOG_FILE, log),
    ];
    files
        .into_iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            fs::write(&path, body)?;
            Ok(path)
        })
        .collect()
}
