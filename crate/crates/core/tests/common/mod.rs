#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Mutex;

use storygraph_core::kg::NodeType;
use storygraph_core::pipeline::StorySpec;
use storygraph_core::textgen::{
    BackendError, GenerationRequest, GenerationResult, GeneratorBackend, TemplateId, Usage,
};

/// Answers by template, so tests need not know the exact call order. Per-template
/// queues are consumed first, then the fallback reply for that template is used.
pub struct RoleBackend {
    queues: Mutex<HashMap<TemplateId, Vec<Result<String, BackendError>>>>,
    requests: Mutex<Vec<GenerationRequest>>,
}

pub fn default_reply(req: &GenerationRequest) -> String {
    let scene_no = req.bindings.get("scene_number").cloned().unwrap_or_default();
    match req.template_id {
        TemplateId::InitializeNodes => {
            "characters: Mara\ncharacters: Ivo\nlocations: Harbor\nobjects: Ledger\nevents: Storm".into()
        }
        TemplateId::ExtractKG => match req.bindings["node_type"].as_str() {
            "characters" => "Mara -> Ivo -> sister of : They grew up on the docks.\nIvo -> Ledger -> owes : He owes the guild.".into(),
            "locations" => "Mara -> Harbor -> works at : She runs the night crane.".into(),
            "objects" => "Ledger -> Harbor -> kept at : Locked in the harbor office.".into(),
            _ => "Storm -> Harbor -> threatens : A storm is due in three days.".into(),
        },
        TemplateId::Query => "Mara -> Ivo -> sister of : They grew up on the docks.".into(),
        TemplateId::GenerateScene => format!("Scene {scene_no}. Mara walked the Harbor at night."),
        TemplateId::Regenerate => format!("Scene {scene_no}, rewritten. Mara waited at the Harbor."),
        TemplateId::Summarize => {
            let prev = req.bindings["context"].clone();
            let prev = if prev == "(none)" { String::new() } else { format!("{prev} ") };
            format!("{prev}[{}]", req.bindings["scene"].split('.').next().unwrap_or_default())
        }
        TemplateId::UpdateNodes => "characters: Mara | mood = tense".into(),
        TemplateId::UpdateKG => match req.bindings["node_type"].as_str() {
            "events" => "Mara -> Storm -> fears : She saw the clouds.".into(),
            _ => String::new(),
        },
        TemplateId::CleanUpLLM => req.bindings["graph"]
            .lines()
            .filter(|l| !l.starts_with("## "))
            .collect::<Vec<_>>()
            .join("\n"),
    }
}

impl RoleBackend {
    pub fn new() -> Self {
        Self {
            queues: Mutex::new(HashMap::new()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn queue(self, id: TemplateId, replies: Vec<Result<String, BackendError>>) -> Self {
        self.queues.lock().unwrap().insert(id, replies);
        self
    }

    pub fn requests(&self) -> Vec<GenerationRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn ids(&self) -> Vec<TemplateId> {
        self.requests().iter().map(|r| r.template_id).collect()
    }
}

impl GeneratorBackend for RoleBackend {
    fn id(&self) -> &str {
        "role"
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        self.requests.lock().unwrap().push(request.clone());
        let queued = {
            let mut queues = self.queues.lock().unwrap();
            queues
                .get_mut(&request.template_id)
                .filter(|q| !q.is_empty())
                .map(|q| q.remove(0))
        };
        let text = match queued {
            Some(r) => r?,
            None => default_reply(request),
        };
        Ok(GenerationResult {
            usage: Usage::estimate(&request.prompt, &text),
            text,
            backend_id: "role".into(),
        })
    }
}

pub fn spec(scenes: u32) -> StorySpec {
    let mut s = StorySpec::new("Harbor Lights");
    s.genre = "noir".into();
    s.protagonists = "Mara".into();
    s.description = "A crane operator uncovers a smuggling ring.".into();
    s.scene_count = scenes;
    s
}

pub fn ty(name: &str) -> NodeType {
    NodeType::new(name).unwrap()
}
