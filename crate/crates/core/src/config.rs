//! Service configuration: one TOML document, secrets overridable from the
//! environment.
//!
//! ```toml
//! embedding_dim = 768
//! concurrency = 8
//! templates_dir = "templates"      # optional; builtin copies otherwise
//! event_log = "sessions.ndjson"    # optional
//!
//! [provider]
//! kind = "http"                    # or "mock"
//! base_url = "https://api.openai.com/v1"
//! chat_model = "gpt-3.5-turbo"
//! embedding_model = "text-embedding-3-small"
//!
//! [tasks.esc]
//! data_dir = "data/esc"            # trained model + centroids
//! m = 4
//! top_k = 3
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coordination::Coordinator;
use crate::corpus::{load_checkpoint, DataDir};
use crate::dialogue::Task;
use crate::error::{Error, Result};
use crate::gateway::{Gateway, HttpChat, HttpEmbedder, HttpProviderConfig, DEFAULT_EMBEDDING_DIM};
use crate::pipeline::{demo_coordinator, TurnPipeline};
use crate::profile::TaskProfile;

pub const API_KEY_ENV: &str = "DIALCOORD_API_KEY";
pub const BASE_URL_ENV: &str = "DIALCOORD_BASE_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSection {
    #[serde(default)]
    pub kind: ProviderKind,
    #[serde(flatten)]
    pub http: HttpProviderConfig,
}

impl Default for ProviderSection {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            http: HttpProviderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskSection {
    pub data_dir: Option<PathBuf>,
    pub m: Option<usize>,
    pub top_k: Option<usize>,
    /// Use an untrained ranker with random centroids when no data
    /// directory is configured (mock demos only).
    #[serde(default)]
    pub demo: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub provider: ProviderSection,
    pub embedding_dim: usize,
    pub concurrency: usize,
    pub templates_dir: Option<PathBuf>,
    pub event_log: Option<PathBuf>,
    pub tasks: BTreeMap<Task, TaskSection>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            provider: ProviderSection::default(),
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            concurrency: 8,
            templates_dir: None,
            event_log: None,
            tasks: BTreeMap::new(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| Error::SchemaViolation {
            path: "config".into(),
            message: e.to_string(),
        })?;
        cfg.apply_env(|k| std::env::var(k).ok());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        // Relative paths are relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.templates_dir.as_mut().map(fix);
        cfg.event_log.as_mut().map(fix);
        for t in cfg.tasks.values_mut() {
            t.data_dir.as_mut().map(fix);
        }
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(k) = get(API_KEY_ENV) {
            self.provider.http.api_key = Some(k);
        }
        if let Some(u) = get(BASE_URL_ENV) {
            self.provider.http.base_url = u;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::invalid("embedding_dim must be positive"));
        }
        if self.concurrency == 0 {
            return Err(Error::invalid("concurrency must be positive"));
        }
        for (task, t) in &self.tasks {
            if t.m == Some(0) || t.top_k == Some(0) {
                return Err(Error::invalid(format!(
                    "tasks.{task}: m and top_k must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn gateway(&self) -> Gateway {
        let g = match self.provider.kind {
            ProviderKind::Mock => Gateway::mock(self.embedding_dim),
            ProviderKind::Http => Gateway::new(
                Arc::new(HttpChat::new(self.provider.http.clone())),
                Arc::new(HttpEmbedder::new(self.provider.http.clone())),
                self.embedding_dim,
            ),
        };
        g.with_concurrency(self.concurrency)
    }

    pub fn profile(&self, task: Task) -> Result<TaskProfile> {
        let mut p = match &self.templates_dir {
            Some(dir) => TaskProfile::from_dir(dir, task)?,
            None => TaskProfile::builtin(task),
        };
        if let Some(t) = self.tasks.get(&task) {
            if let Some(m) = t.m {
                p = p.with_candidate_count(m);
            }
            if let Some(k) = t.top_k {
                p = p.with_top_k(k);
            }
        }
        Ok(p)
    }

    /// The coordinator for a task, or `None` when nothing is configured.
    pub fn coordinator(&self, task: Task, n_aspects: usize) -> Result<Option<Coordinator>> {
        let Some(section) = self.tasks.get(&task) else {
            return Ok(None);
        };
        match &section.data_dir {
            Some(dir) => {
                let dir = DataDir::new(dir);
                let hash = dir.read_manifest()?.corpus_hash;
                let (model, _) = load_checkpoint(&dir.model(), None, hash.as_deref())?;
                let centroids = dir.load_all_centroids(n_aspects, Some(self.embedding_dim))?;
                Ok(Some(Coordinator::new(model, centroids)?))
            }
            None if section.demo => {
                Ok(Some(demo_coordinator(n_aspects, self.embedding_dim, 5, 7)?))
            }
            None => Ok(None),
        }
    }

    /// Pipelines for every task that has a coordinator.
    pub fn pipelines(&self) -> Result<BTreeMap<Task, Arc<TurnPipeline>>> {
        let gateway = self.gateway();
        let mut out = BTreeMap::new();
        for task in Task::all() {
            let profile = self.profile(task)?;
            if let Some(c) = self.coordinator(task, profile.n_aspects())? {
                out.insert(
                    task,
                    Arc::new(TurnPipeline::new(profile, c, gateway.clone())?),
                );
            }
        }
        Ok(out)
    }
}
