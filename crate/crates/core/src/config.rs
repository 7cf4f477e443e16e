//! Run configuration: one JSON file with a section per component.
//!
//! Relative paths inside the file are resolved against the file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::gate::GateConfig;
use crate::llm::{
    ChatTransport, GenerationConfig, HttpTransport, LogSink, LoggingTransport, ScriptedRule,
    ScriptedTransport,
};
use crate::reward::{Matching, RewardConfig};
use crate::rollback::{ChatQaClient, QaClient, RollbackConfig, ScriptedAnswer, ScriptedQa};
use crate::semantic::{LlmSemanticExecutor, MockExecutor, NoSemanticExecutor, SemanticExecutor};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    #[default]
    Scripted,
    Http,
}

/// Client selection plus generation parameters in one flat object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Map<String, serde_json::Value>")]
pub struct GeneratorSection {
    #[serde(default)]
    pub kind: ClientKind,
    /// JSON file holding a scripted transport (`rules`, `default`).
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub rules: Vec<ScriptedRule>,
    #[serde(default)]
    pub default: Option<String>,
    #[serde(flatten)]
    pub params: GenerationConfig,
}

impl TryFrom<serde_json::Map<String, serde_json::Value>> for GeneratorSection {
    type Error = String;

    // Flattened fields cannot reject unknown keys, so split the object by hand
    // and let GenerationConfig reject whatever is left over.
    fn try_from(mut m: serde_json::Map<String, serde_json::Value>) -> Result<Self, String> {
        fn take<T: serde::de::DeserializeOwned + Default>(
            m: &mut serde_json::Map<String, serde_json::Value>,
            key: &str,
        ) -> Result<T, String> {
            match m.remove(key) {
                Some(v) => serde_json::from_value(v).map_err(|e| format!("generator.{key}: {e}")),
                None => Ok(T::default()),
            }
        }
        let kind = take(&mut m, "kind")?;
        let script = take(&mut m, "script")?;
        let rules = take(&mut m, "rules")?;
        let default = take(&mut m, "default")?;
        let params = serde_json::from_value(serde_json::Value::Object(m)).map_err(|e| format!("generator: {e}"))?;
        Ok(GeneratorSection {
            kind,
            script,
            rules,
            default,
            params,
        })
    }
}

impl Default for GeneratorSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

fn default_qa_model() -> String {
    "default".into()
}
fn default_timeout() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaSection {
    #[serde(default)]
    pub kind: ClientKind,
    /// JSON file holding a scripted QA table (`answers`, `default`).
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub answers: Vec<ScriptedAnswer>,
    #[serde(default)]
    pub default: Option<String>,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default = "default_qa_model")]
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
}

impl Default for QaSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    #[default]
    None,
    Mock,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutorSection {
    #[serde(default)]
    pub kind: ExecutorKind,
    /// Mock rules file: `{pattern: {input: output}}`.
    #[serde(default)]
    pub rules_file: Option<PathBuf>,
    #[serde(default)]
    pub rules: Option<serde_json::Value>,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default = "default_qa_model")]
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

impl Default for ExecutorSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

fn default_parallelism() -> usize {
    4
}
fn default_max_requests() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Candidates per question; overrides `generator.n` when set.
    #[serde(default, rename = "N", alias = "n")]
    pub n: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Instances processed concurrently.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Cap on in-flight generation requests across all instances.
    #[serde(default = "default_max_requests")]
    pub max_concurrent_requests: usize,
    /// Skip preparation and answer from the original table.
    #[serde(default)]
    pub no_prep: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default)]
    pub matching: Matching,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub qa: QaSection,
    #[serde(default)]
    pub semantic_executor: ExecutorSection,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub gate: GateConfig,
    #[serde(default)]
    pub rollback: RollbackConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Config {
    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Config, ConfigError> {
        let mut cfg: Config = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json_str(&text, base).map_err(|e| err(format!("{}: {}", path.display(), e.0)))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Generation parameters with the run-level overrides applied.
    pub fn generation(&self) -> GenerationConfig {
        let mut g = self.generator.params.clone();
        if let Some(n) = self.run.n {
            g.n = n;
        }
        g.seed = Some(self.run.seed);
        g
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.generation().validate().map_err(|e| err(e.to_string()))?;
        self.gate.validate().map_err(|e| err(e.to_string()))?;
        crate::reward::length_reward(0, self.reward.l_max, self.reward.l_cache).map_err(|e| err(e.to_string()))?;
        for (name, w) in [("lambda1", self.reward.lambda1), ("lambda2", self.reward.lambda2)] {
            if !w.is_finite() {
                return Err(err(format!("reward.{name} must be finite")));
            }
        }
        if self.run.parallelism == 0 {
            return Err(err("run.parallelism must be at least 1"));
        }
        if self.generator.kind == ClientKind::Http && self.generator.params.endpoint.is_empty() {
            return Err(err("generator.endpoint is required for kind \"http\""));
        }
        if self.qa.kind == ClientKind::Http && self.qa.endpoint.is_empty() {
            return Err(err("qa.endpoint is required for kind \"http\""));
        }
        if self.semantic_executor.kind == ExecutorKind::Llm && self.semantic_executor.endpoint.is_empty() {
            return Err(err("semantic_executor.endpoint is required for kind \"llm\""));
        }
        Ok(())
    }

    fn http(&self, endpoint: &str, key_env: &Option<String>, timeout: f64) -> Result<HttpTransport, ConfigError> {
        let g = GenerationConfig {
            endpoint: endpoint.to_string(),
            api_key_env: key_env.clone(),
            timeout_secs: timeout,
            ..Default::default()
        };
        HttpTransport::from_config(&g).map_err(|e| err(e.to_string()))
    }

    fn logged(t: impl ChatTransport + 'static, log: &Option<LogSink>) -> Arc<dyn ChatTransport> {
        match log {
            Some(sink) => Arc::new(LoggingTransport::with_sink(t, sink.clone())),
            None => Arc::new(t),
        }
    }

    pub fn build_generator(&self, log: &Option<LogSink>) -> Result<Arc<dyn ChatTransport>, ConfigError> {
        let g = &self.generator;
        match g.kind {
            ClientKind::Scripted => {
                let mut t = match &g.script {
                    Some(p) => ScriptedTransport::from_path(&self.resolve(p)).map_err(err)?,
                    None => ScriptedTransport::new(),
                };
                t.rules.extend(g.rules.iter().cloned());
                if g.default.is_some() {
                    t.default = g.default.clone();
                }
                Ok(Self::logged(t, log))
            }
            ClientKind::Http => {
                let t = HttpTransport::from_config(&g.params).map_err(|e| err(e.to_string()))?;
                Ok(Self::logged(t, log))
            }
        }
    }

    pub fn build_qa(&self, log: &Option<LogSink>) -> Result<Arc<dyn QaClient>, ConfigError> {
        let q = &self.qa;
        match q.kind {
            ClientKind::Scripted => {
                let mut s = match &q.script {
                    Some(p) => ScriptedQa::from_path(&self.resolve(p)).map_err(err)?,
                    None => ScriptedQa::new(),
                };
                s.answers.extend(q.answers.iter().cloned());
                if q.default.is_some() {
                    s.default = q.default.clone();
                }
                Ok(Arc::new(s))
            }
            ClientKind::Http => {
                let t = Self::logged(self.http(&q.endpoint, &q.api_key_env, q.timeout_secs)?, log);
                Ok(Arc::new(ChatQaClient::new(t, q.model.clone()).with_max_tokens(q.max_tokens.or(Some(256)))))
            }
        }
    }

    pub fn build_executor(&self, log: &Option<LogSink>) -> Result<Arc<dyn SemanticExecutor>, ConfigError> {
        let e = &self.semantic_executor;
        match e.kind {
            ExecutorKind::None => Ok(Arc::new(NoSemanticExecutor)),
            ExecutorKind::Mock => {
                let mut ex = match &e.rules_file {
                    Some(p) => MockExecutor::from_path(&self.resolve(p)).map_err(err)?,
                    None => MockExecutor::new(),
                };
                if let Some(rules) = &e.rules {
                    let inline = MockExecutor::from_json(rules).map_err(err)?;
                    ex = ex.extend(inline);
                }
                Ok(Arc::new(ex))
            }
            ExecutorKind::Llm => {
                let t = Self::logged(self.http(&e.endpoint, &e.api_key_env, e.timeout_secs)?, log);
                Ok(Arc::new(LlmSemanticExecutor::new(t, e.model.clone())))
            }
        }
    }
}
