use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;

use super::{BackendError, GenerationRequest, GenerationResult, GeneratorBackend, TemplateId, Usage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptedReply {
    Text(String),
    Fail(BackendError),
}

impl From<&str> for ScriptedReply {
    fn from(value: &str) -> Self {
        ScriptedReply::Text(value.to_string())
    }
}

impl From<String> for ScriptedReply {
    fn from(value: String) -> Self {
        ScriptedReply::Text(value)
    }
}

/// Replays canned replies in order, whatever the request says. Every request is kept
/// so tests can assert on prompts.
#[derive(Debug)]
pub struct ScriptedBackend {
    id: String,
    replies: Mutex<VecDeque<ScriptedReply>>,
    requests: Mutex<Vec<GenerationRequest>>,
}

impl ScriptedBackend {
    pub fn new<I, R>(replies: I) -> Self
    where
        I: IntoIterator<Item = R>,
        R: Into<ScriptedReply>,
    {
        Self {
            id: "scripted".to_string(),
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<GenerationRequest> {
        self.requests.lock().expect("request log poisoned").clone()
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().expect("reply queue poisoned").len()
    }
}

impl GeneratorBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        self.requests.lock().expect("request log poisoned").push(request.clone());
        let next = self.replies.lock().expect("reply queue poisoned").pop_front();
        match next {
            Some(ScriptedReply::Text(text)) => Ok(GenerationResult {
                usage: Usage::estimate(&request.prompt, &text),
                text,
                backend_id: self.id.clone(),
            }),
            Some(ScriptedReply::Fail(err)) => Err(err),
            None => Err(BackendError::unavailable("scripted backend exhausted")),
        }
    }
}

/// Canned replies per template. Each queue is consumed in order and its last reply is
/// repeated once the rest are used up. `{name}` in a reply is replaced by the request's
/// binding of that name, so one reply can yield distinct scenes.
#[derive(Debug)]
pub struct KeyedScriptedBackend {
    id: String,
    replies: Mutex<BTreeMap<TemplateId, VecDeque<ScriptedReply>>>,
    requests: Mutex<Vec<GenerationRequest>>,
}

impl KeyedScriptedBackend {
    pub fn new<I, R>(replies: BTreeMap<TemplateId, I>) -> Self
    where
        I: IntoIterator<Item = R>,
        R: Into<ScriptedReply>,
    {
        Self {
            id: "scripted-keyed".to_string(),
            replies: Mutex::new(
                replies
                    .into_iter()
                    .map(|(k, v)| (k, v.into_iter().map(Into::into).collect()))
                    .collect(),
            ),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<GenerationRequest> {
        self.requests.lock().expect("request log poisoned").clone()
    }

    fn next_reply(&self, id: TemplateId) -> Option<ScriptedReply> {
        let mut replies = self.replies.lock().expect("reply queues poisoned");
        let queue = replies.get_mut(&id)?;
        if queue.len() > 1 {
            queue.pop_front()
        } else {
            queue.front().cloned()
        }
    }
}

fn fill_bindings(text: &str, request: &GenerationRequest) -> String {
    request
        .bindings
        .iter()
        .fold(text.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
}

impl GeneratorBackend for KeyedScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        self.requests.lock().expect("request log poisoned").push(request.clone());
        match self.next_reply(request.template_id) {
            Some(ScriptedReply::Text(text)) => {
                let text = fill_bindings(&text, request);
                Ok(GenerationResult {
                    usage: Usage::estimate(&request.prompt, &text),
                    text,
                    backend_id: self.id.clone(),
                })
            }
            Some(ScriptedReply::Fail(err)) => Err(err),
            None => Err(BackendError::unavailable(format!(
                "no scripted reply for {}",
                request.template_id
            ))),
        }
    }
}
