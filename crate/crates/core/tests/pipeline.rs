mod common;

use std::collections::HashSet;
use std::time::Instant;

use common::{spec, ty, RoleBackend};
use storygraph_core::kg::{serialize_entry, EditCommand, EditSet, NewEntry, Provenance};
use storygraph_core::pipeline::{
    replay, state_hash, Engine, Event, LogRecord, Phase, PipelineError, PipelineState, SubgraphSource, Trace,
    Verdict,
};
use storygraph_core::textgen::{BackendError, ScriptedBackend, TemplateId, TemplateSet};

fn templates() -> TemplateSet {
    TemplateSet::defaults()
}

fn to_records(spec: &storygraph_core::pipeline::StorySpec, events: Vec<Event>) -> Vec<LogRecord> {
    std::iter::once(Event::SpecCreated { spec: spec.clone() })
        .chain(events)
        .enumerate()
        .map(|(seq, event)| LogRecord {
            seq: seq as u64,
            event,
        })
        .collect()
}

#[test]
fn five_scene_run_follows_the_loop_order() {
    let t = templates();
    let backend = RoleBackend::new();
    let engine = Engine::new(&backend, &t);
    let started = Instant::now();
    let done = engine.run(spec(5)).unwrap();
    assert!(started.elapsed().as_secs_f64() < 1.0);
    assert!(done.state.is_finished());

    use TemplateId::*;
    let mut expected = vec![InitializeNodes, ExtractKG, ExtractKG, ExtractKG, ExtractKG];
    for i in 1..=5 {
        if i > 1 {
            expected.push(Query);
        }
        expected.extend([GenerateScene, Summarize, UpdateNodes, UpdateKG, UpdateKG, UpdateKG, UpdateKG]);
    }
    assert_eq!(backend.ids(), expected);
    let indices: Vec<u32> = done.state.scenes.iter().map(|s| s.index).collect();
    assert_eq!(indices, vec![1, 2, 3, 4, 5]);

    // ExtractKG follows type_set order.
    let types: Vec<String> = backend
        .requests()
        .iter()
        .filter(|r| r.template_id == ExtractKG)
        .map(|r| r.bindings["node_type"].clone())
        .collect();
    assert_eq!(types, vec!["characters", "locations", "objects", "events"]);

    // Scene 2's prompt carries scene 1's text verbatim.
    let scene1 = &done.state.scene(1).unwrap().text;
    let gen2 = backend
        .requests()
        .into_iter()
        .filter(|r| r.template_id == GenerateScene)
        .nth(1)
        .unwrap();
    assert!(gen2.prompt.contains(scene1.as_str()));
}

#[test]
fn ablation_run_uses_only_prose_templates() {
    let t = templates();
    let backend = RoleBackend::new();
    let mut s = spec(3);
    s.kg_enabled = false;
    let done = Engine::new(&backend, &t).run(s).unwrap();
    let allowed: HashSet<TemplateId> = [TemplateId::GenerateScene, TemplateId::Regenerate, TemplateId::Summarize].into();
    assert!(backend.ids().iter().all(|id| allowed.contains(id)));
    assert!(done.state.graph.is_empty());
    assert!(done.state.registry.is_empty());
    for r in backend.requests() {
        assert!(!r.prompt.contains(" -> Ivo ->"));
    }
    assert_eq!(done.state.scenes.len(), 3);
}

#[test]
fn initialize_dedups_across_partitions() {
    let t = templates();
    let dup = "Mara -> Harbor -> works at : Night shift.".to_string();
    let backend = RoleBackend::new().queue(
        TemplateId::ExtractKG,
        vec![
            Ok(format!("{dup}\nmara -> harbor -> WORKS AT : She runs the night crane.")),
            Ok(dup.clone()),
            Ok(String::new()),
            Ok(String::new()),
        ],
    );
    let init = Engine::new(&backend, &t).initialize(spec(2)).unwrap();
    // Dedup works per partition: the copy under "locations" stays.
    assert_eq!(init.state.graph.len(), 2);
    assert_eq!(init.state.graph.partition(&ty("characters")).len(), 1);
    let survivor = init.state.graph.entries().next().unwrap();
    assert_eq!(survivor.node_type, ty("characters"));
    assert_eq!(survivor.description, "She runs the night crane.");
    assert_eq!(init.state.phase, Phase::Generating(1));
    assert!(init.state.snapshots.contains_key(&1));
}

#[test]
fn node_extraction_failure_modes() {
    let t = templates();
    let junk = RoleBackend::new().queue(TemplateId::InitializeNodes, vec![Ok("junk".into()), Ok("more junk".into())]);
    assert_eq!(
        Engine::new(&junk, &t).initialize(spec(2)).unwrap_err(),
        PipelineError::ExtractionEmpty
    );
    let retry = RoleBackend::new().queue(TemplateId::InitializeNodes, vec![Ok("junk".into())]);
    assert!(Engine::new(&retry, &t).initialize(spec(2)).is_ok());
    let down = RoleBackend::new().queue(TemplateId::InitializeNodes, vec![Err(BackendError::Timeout)]);
    assert_eq!(
        Engine::new(&down, &t).initialize(spec(2)).unwrap_err(),
        PipelineError::Backend(BackendError::Timeout)
    );
}

#[test]
fn query_matches_back_and_falls_back() {
    let t = templates();
    let backend = RoleBackend::new();
    let engine = Engine::new(&backend, &t);
    let init = engine.initialize(spec(4)).unwrap();
    let s1 = engine.step(&init.state).unwrap().state;

    let mut trace = Trace::new();
    let q = engine.query_subgraph(&init.state, &mut trace);
    assert_eq!(q.source, SubgraphSource::FullGraph);
    assert_eq!(q.entries.len(), init.state.graph.len());

    let two_and_novel = "Mara -> Ivo -> sister of : x\nIVO -> ledger -> owes : y\nMara -> Moon -> loves : new";
    let b2 = RoleBackend::new().queue(TemplateId::Query, vec![Ok(two_and_novel.into())]);
    let mut trace = Trace::new();
    let q = Engine::new(&b2, &t).query_subgraph(&s1, &mut trace);
    assert_eq!(q.source, SubgraphSource::GeneratorQuery);
    assert_eq!(q.entries.len(), 2);
    assert_eq!(trace.diagnostics.len(), 1);
    let ids: HashSet<_> = s1.graph.ids().into_iter().collect();
    assert!(q.entries.iter().all(|e| ids.contains(&e.id)));

    let b3 = RoleBackend::new().queue(TemplateId::Query, vec![Err(BackendError::Timeout)]);
    let mut trace = Trace::new();
    let q = Engine::new(&b3, &t).query_subgraph(&s1, &mut trace);
    assert_eq!(q.source, SubgraphSource::LexicalFallback);
    assert!(q.entries.len() <= s1.spec.query_cap);
    assert!(q.entries.iter().all(|e| ids.contains(&e.id)));
}

#[test]
fn fatal_step_error_leaves_state_untouched() {
    let t = templates();
    let ok = RoleBackend::new();
    let init = Engine::new(&ok, &t).initialize(spec(2)).unwrap();
    let failing = RoleBackend::new().queue(
        TemplateId::GenerateScene,
        vec![Err(BackendError::Timeout), Ok("   ".into())],
    );
    let before = init.state.clone();
    let err = Engine::new(&failing, &t).step(&init.state).unwrap_err();
    assert_eq!(err, PipelineError::EmptyScene { index: 1 });
    assert_eq!(init.state, before);

    let retry_ok = RoleBackend::new().queue(TemplateId::GenerateScene, vec![Ok(String::new())]);
    let next = Engine::new(&retry_ok, &t).step(&init.state).unwrap();
    assert_eq!(next.state.scene(1).unwrap().text, "Scene 1. Mara walked the Harbor at night.");
}

#[test]
fn summary_fallback_appends_scene_opening() {
    let t = templates();
    let backend = RoleBackend::new().queue(TemplateId::Summarize, vec![Err(BackendError::Timeout)]);
    let engine = Engine::new(&backend, &t);
    let init = engine.initialize(spec(2)).unwrap();
    let s1 = engine.step(&init.state).unwrap().state;
    assert_eq!(s1.context.text, "Scene 1. Mara walked the Harbor at night.");
    assert_eq!(s1.context.basis, vec![(1, 0)]);
}

#[test]
fn edit_mode_regenerate_and_advance() {
    let t = templates();
    let backend = RoleBackend::new();
    let engine = Engine::new(&backend, &t);
    let mut s = spec(2);
    s.edit_mode = true;
    let init = engine.initialize(s).unwrap();
    let s1 = engine.step(&init.state).unwrap().state;
    assert_eq!(s1.phase, Phase::AwaitingEdit(1));

    let edits = EditSet::user(vec![EditCommand::Add {
        entry: NewEntry {
            id: None,
            subject: "Mara".into(),
            object: "Blaster".into(),
            relation: "breaks".into(),
            description: "weapon shatters".into(),
            node_type: ty("objects"),
        },
    }]);
    let edited = engine.submit_edits(&s1, &edits).unwrap().state;
    assert_eq!(edited.graph.len(), s1.graph.len() + 1);
    assert_eq!(edited.phase, Phase::AwaitingEdit(1));
    let added = edited.graph.entries().find(|e| e.object == "Blaster").unwrap().clone();
    assert_eq!(added.provenance, Provenance::UserEdit);

    let r1 = engine.regenerate_current(&edited).unwrap().state;
    let regen = backend
        .requests()
        .into_iter()
        .find(|r| r.template_id == TemplateId::Regenerate)
        .unwrap();
    assert!(regen.prompt.contains(&serialize_entry(&added)));
    assert!(regen.prompt.contains("Scene 1. Mara walked the Harbor at night."));
    assert_eq!(r1.scene(1).unwrap().generation, 1);
    assert_eq!(r1.context.basis, vec![(1, 1)]);
    // The old version's summary is gone from the context.
    assert_eq!(r1.context.text, "[Scene 1, rewritten]");

    let r2 = engine.regenerate_current(&r1).unwrap().state;
    assert_eq!(r2.scene(1).unwrap().generation, 2);
    assert_eq!(r2.context.basis, vec![(1, 2)]);

    let a = engine.advance(&r2).unwrap().state;
    assert_eq!(a.phase, Phase::Generating(2));
    assert!(a.graph.entries().any(|e| e.object == "Blaster"));
    let s2 = engine.step(&a).unwrap().state;
    let gen2 = backend.requests().into_iter().rfind(|r| r.template_id == TemplateId::GenerateScene).unwrap();
    assert!(gen2.prompt.contains("Scene 1, rewritten."));
    let fin = engine.advance(&s2).unwrap().state;
    assert!(fin.is_finished());
    assert!(matches!(engine.regenerate_current(&fin), Err(PipelineError::WrongPhase { .. })));
    assert!(matches!(engine.submit_edits(&init.state, &edits), Err(PipelineError::WrongPhase { .. })));
}

#[test]
fn failed_edit_leaves_state_unchanged() {
    let t = templates();
    let backend = RoleBackend::new();
    let engine = Engine::new(&backend, &t);
    let mut s = spec(1);
    s.edit_mode = true;
    let s1 = engine.step(&engine.initialize(s).unwrap().state).unwrap().state;
    let bad = EditSet::user(vec![
        EditCommand::Remove {
            id: s1.graph.ids()[0],
        },
        EditCommand::Remove {
            id: storygraph_core::kg::EntryId(9999),
        },
    ]);
    assert!(matches!(engine.submit_edits(&s1, &bad), Err(PipelineError::Edit(_))));
}

#[test]
fn identical_runs_are_bit_identical() {
    let t = templates();
    let a = Engine::new(&RoleBackend::new(), &t).run(spec(3)).unwrap().state;
    let b = Engine::new(&RoleBackend::new(), &t).run(spec(3)).unwrap().state;
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
}

#[test]
fn llm_cleanup_runs_when_enabled() {
    let t = templates();
    let backend = RoleBackend::new().queue(
        TemplateId::CleanUpLLM,
        vec![Ok("Mara -> Ivo -> sister of : They grew up on the docks.".into())],
    );
    let mut s = spec(1);
    s.llm_cleanup = true;
    let init = Engine::new(&backend, &t).initialize(s).unwrap();
    assert_eq!(init.state.graph.len(), 1);
    assert!(backend.ids().contains(&TemplateId::CleanUpLLM));
}

#[test]
fn replay_reproduces_an_edit_session() {
    let t = templates();
    let backend = RoleBackend::new();
    let engine = Engine::new(&backend, &t);
    let mut s = spec(2);
    s.edit_mode = true;
    let mut events = Vec::new();
    let init = engine.initialize(s.clone()).unwrap();
    events.extend(init.events);
    let t1 = engine.step(&init.state).unwrap();
    events.extend(t1.events);
    let edits = EditSet::user(vec![EditCommand::Remove {
        id: t1.state.graph.ids()[0],
    }]);
    let t2 = engine.submit_edits(&t1.state, &edits).unwrap();
    events.extend(t2.events);
    let t3 = engine.regenerate_current(&t2.state).unwrap();
    events.extend(t3.events);
    let t4 = engine.advance(&t3.state).unwrap();
    events.extend(t4.events);
    let records = to_records(&s, events);

    let report = replay(&records, &t).unwrap();
    assert_eq!(report.verdict, Verdict::Match);
    assert_eq!(report.applied, 5);
    assert_eq!(report.final_hash.as_deref(), Some(state_hash(&t4.state).as_str()));
    assert_eq!(report.state.unwrap(), t4.state);

    // A tampered reply changes what the pipeline does next.
    let mut tampered = records.clone();
    for r in &mut tampered {
        if let Event::GeneratorCall(call) = &mut r.event {
            if call.template_id == TemplateId::ExtractKG {
                call.outcome = storygraph_core::pipeline::CallOutcome::Ok {
                    text: "A -> B -> c : d".into(),
                };
                break;
            }
        }
    }
    assert!(matches!(replay(&tampered, &t).unwrap().verdict, Verdict::Mismatch { .. }));

    // Different templates render different prompts.
    let other = t
        .clone()
        .with_template(storygraph_core::textgen::PromptTemplate::new(TemplateId::Summarize, "S {context} {scene}"))
        .unwrap();
    assert!(matches!(replay(&records, &other).unwrap().verdict, Verdict::Mismatch { .. }));
}

#[test]
fn replay_of_every_prefix_matches_last_commit() {
    let t = templates();
    let backend = RoleBackend::new();
    let engine = Engine::new(&backend, &t);
    let s = spec(2);
    let mut events = Vec::new();
    let mut hashes = Vec::new();
    let init = engine.initialize(s.clone()).unwrap();
    events.extend(init.events);
    hashes.push((events.len(), state_hash(&init.state)));
    let mut state = init.state;
    while !state.is_finished() {
        let tr = engine.step(&state).unwrap();
        events.extend(tr.events);
        state = tr.state;
        hashes.push((events.len(), state_hash(&state)));
    }
    let records = to_records(&s, events);
    for cut in 1..=records.len() {
        let report = replay(&records[..cut], &t).unwrap();
        assert_eq!(report.verdict, Verdict::Match);
        // Events (without the SpecCreated record) that fit in the prefix.
        let committed = hashes.iter().rfind(|(n, _)| *n < cut);
        assert_eq!(report.final_hash, committed.map(|(_, h)| h.clone()), "cut {cut}");
        assert_eq!(report.pending, cut - 1 - committed.map_or(0, |(n, _)| *n));
    }
}

#[test]
fn scripted_backend_drives_a_run_in_order() {
    let t = templates();
    let mut s = spec(1);
    s.kg_enabled = false;
    let backend = ScriptedBackend::new(["Scene one prose.", "Summary A."]);
    let done = Engine::new(&backend, &t).run(s).unwrap();
    let scene = done.state.scene(1).unwrap();
    assert_eq!(scene.text, "Scene one prose.");
    assert_eq!(scene.generation, 0);
    assert_eq!(done.state.context.text, "Summary A.");
    assert_eq!(done.state.context.basis, vec![(1, 0)]);
    assert!(backend.requests()[0].prompt.contains("(no knowledge graph)"));
    let _: &PipelineState = &done.state;
}
