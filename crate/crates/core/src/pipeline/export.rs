use super::PipelineState;

/// Plain-text story: a title line, then one section per scene in order.
pub fn export_text(state: &PipelineState) -> String {
    let mut scenes: Vec<_> = state.scenes.iter().collect();
    scenes.sort_by_key(|s| s.index);
    let mut out = format!("# {}\n", state.spec.title.trim());
    for scene in scenes {
        out.push_str(&format!("\n## Scene {}\n\n{}\n", scene.index, scene.text.trim_end()));
    }
    out
}

/// Full state as pretty JSON.
pub fn export_json(state: &PipelineState) -> String {
    serde_json::to_string_pretty(state).expect("pipeline state always serializes")
}
