//! The JSON file read by `serve`, `tally` and `analyze`.
//!
//! Relative paths are resolved against the directory holding the file. The
//! admin token may come from the file or from `EVOTE_ADMIN_TOKEN`, which
//! wins when both are set.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use evote_core::election::ServiceConfig;
use evote_core::he::read_public_key;
use evote_core::ledger::NodeSet;
use evote_core::schema::{load_schema, FactorSchema};
use serde::{Deserialize, Serialize};

pub const ADMIN_TOKEN_ENV: &str = "EVOTE_ADMIN_TOKEN";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub election_id: String,
    pub candidates: Vec<String>,
    /// The bundled default profile when absent.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    pub public_key: PathBuf,
    /// Fallback for `analyze` when `--secret-key` is not given.
    #[serde(default)]
    pub secret_key: Option<PathBuf>,
    pub data_dir: PathBuf,
    /// Verifier node ids; one per candidate when absent.
    #[serde(default)]
    pub nodes: Option<Vec<String>>,
    /// Majority of the verifier nodes when absent.
    #[serde(default)]
    pub quorum: Option<usize>,
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default)]
    pub admin_token: Option<String>,
    #[serde(default)]
    pub password_iterations: Option<u32>,
    #[serde(default)]
    pub session_ttl_secs: Option<u64>,
    #[serde(default)]
    pub sync_writes: Option<bool>,
    #[serde(default)]
    pub records_per_block: Option<usize>,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: FileConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.public_key);
        fix(&mut self.data_dir);
        if let Some(p) = self.schema.as_mut() {
            fix(p);
        }
        if let Some(p) = self.secret_key.as_mut() {
            fix(p);
        }
    }

    pub fn admin_token(&self) -> Result<String> {
        match std::env::var(ADMIN_TOKEN_ENV) {
            Ok(t) if !t.is_empty() => Ok(t),
            _ => match &self.admin_token {
                Some(t) => Ok(t.clone()),
                None => bail!("no admin token: set admin_token or {ADMIN_TOKEN_ENV}"),
            },
        }
    }

    pub fn schema(&self) -> Result<FactorSchema> {
        match &self.schema {
            None => Ok(FactorSchema::default_profile()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading schema {}", path.display()))?;
                load_schema(&text).with_context(|| format!("schema {}", path.display()))
            }
        }
    }

    pub fn node_set(&self) -> Option<NodeSet> {
        if self.nodes.is_none() && self.quorum.is_none() {
            return None;
        }
        let mut set = NodeSet::for_candidates(self.candidates.len());
        if let Some(nodes) = &self.nodes {
            set.candidate_nodes = nodes.clone();
            set.ack_quorum = NodeSet::majority(nodes.len());
        }
        if let Some(q) = self.quorum {
            set.ack_quorum = q;
        }
        Some(set)
    }

    pub fn service_config(&self) -> Result<ServiceConfig> {
        let public_key = read_public_key(&self.public_key)
            .with_context(|| format!("reading public key {}", self.public_key.display()))?;
        let mut config = ServiceConfig::new(
            self.election_id.clone(),
            self.candidates.clone(),
            self.schema()?,
            public_key,
            self.data_dir.clone(),
            self.admin_token()?,
        );
        config.nodes = self.node_set();
        if let Some(i) = self.password_iterations {
            config.password_iterations = i;
        }
        if let Some(s) = self.session_ttl_secs {
            config.session_ttl = Duration::from_secs(s);
        }
        if let Some(s) = self.sync_writes {
            config.sync_writes = s;
        }
        if let Some(r) = self.records_per_block {
            config.records_per_block = r;
        }
        Ok(config)
    }
}
