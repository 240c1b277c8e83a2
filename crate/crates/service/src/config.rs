use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use storygraph_core::kg::{default_type_set, NodeType};
use storygraph_core::pipeline::{DEFAULT_QUERY_CAP, DEFAULT_SCENE_COUNT};
use storygraph_core::textgen::{
    GenerationParams, GeneratorBackend, HttpBackend, HttpBackendConfig, KeyedScriptedBackend, ScriptedBackend,
    TemplateId, TemplateSet,
};

use crate::ConfigError;

/// Spec fields a new session gets when the request leaves them out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecDefaults {
    pub scene_count: u32,
    pub query_cap: usize,
    pub type_set: Vec<NodeType>,
    pub edit_mode: bool,
}

impl Default for SpecDefaults {
    fn default() -> Self {
        Self {
            scene_count: DEFAULT_SCENE_COUNT,
            query_cap: DEFAULT_QUERY_CAP,
            type_set: default_type_set(),
            edit_mode: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSettings {
    /// Replies from a JSON file: an array (replayed in order) or an object keyed by
    /// template id (per-template queues, last reply repeats).
    Scripted { script: PathBuf },
    Http(HttpBackendConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    pub session_dir: PathBuf,
    pub backend: BackendSettings,
    #[serde(default)]
    pub template_dir: Option<PathBuf>,
    #[serde(default)]
    pub defaults: SpecDefaults,
    #[serde(default)]
    pub generation: GenerationParams,
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut config: ServiceConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        // Relative paths are relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        config.session_dir = base.join(&config.session_dir);
        config.template_dir = config.template_dir.map(|d| base.join(d));
        if let BackendSettings::Scripted { script } = &mut config.backend {
            *script = base.join(&*script);
        }
        Ok(config)
    }

    pub fn templates(&self) -> Result<TemplateSet, ConfigError> {
        load_templates(self.template_dir.as_deref())
    }
}

pub fn load_templates(dir: Option<&Path>) -> Result<TemplateSet, ConfigError> {
    match dir {
        Some(dir) => TemplateSet::from_dir(dir).map_err(|e| ConfigError::Templates(e.to_string())),
        None => Ok(TemplateSet::defaults()),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    Ordered(Vec<String>),
    Keyed(BTreeMap<TemplateId, Vec<String>>),
}

/// Build a scripted backend from a script file.
pub fn scripted_backend(path: &Path) -> Result<Arc<dyn GeneratorBackend>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let script: ScriptFile = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: format!("expected a JSON array of replies or an object keyed by template id: {e}"),
    })?;
    Ok(match script {
        ScriptFile::Ordered(replies) => Arc::new(ScriptedBackend::new(replies)),
        ScriptFile::Keyed(replies) => Arc::new(KeyedScriptedBackend::new(replies)),
    })
}

pub fn build_backend(settings: &BackendSettings) -> Result<Arc<dyn GeneratorBackend>, ConfigError> {
    match settings {
        BackendSettings::Scripted { script } => scripted_backend(script),
        BackendSettings::Http(config) => HttpBackend::new(config.clone())
            .map(|b| Arc::new(b) as Arc<dyn GeneratorBackend>)
            .map_err(|e| ConfigError::Backend(e.to_string())),
    }
}
