use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::env::EnvConfig;
use crate::fixtures;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct ProviderError(pub String);

/// Turns a natural-language query into protocol text.
pub trait WorkflowProvider: Send + Sync {
    fn id(&self) -> &str;

    fn generate(&self, query: &str, env: &EnvConfig) -> Result<String, ProviderError>;
}

/// Case-folded, whitespace-collapsed form used as a lookup key.
pub fn normalize_query(query: &str) -> String {
    query
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Canned transcripts keyed by query.
#[derive(Debug, Clone, Default)]
pub struct FixtureProvider {
    transcripts: BTreeMap<String, String>,
}

impl FixtureProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, query: &str, text: impl Into<String>) -> Self {
        self.transcripts.insert(normalize_query(query), text.into());
        self
    }

    /// HepG2 medium change, HUVEC freeze and HeLa passaging.
    pub fn builtin() -> Self {
        Self::new()
            .with(
                "How to change the medium for HepG2 cells in detail?",
                fixtures::MEDIUM_CHANGE,
            )
            .with(
                "How to freeze and store HUVEC cells in detail?",
                fixtures::FREEZE_HUVEC,
            )
            .with(
                "How to perform passaging of HeLa cells in detail?",
                fixtures::PASSAGING,
            )
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.transcripts.keys().map(String::as_str)
    }
}

impl WorkflowProvider for FixtureProvider {
    fn id(&self) -> &str {
        "fixture"
    }

    fn generate(&self, query: &str, _: &EnvConfig) -> Result<String, ProviderError> {
        self.transcripts
            .get(&normalize_query(query))
            .cloned()
            .ok_or_else(|| ProviderError(format!("no transcript for `{}`", query.trim())))
    }
}

/// Loads `<dir>/<slug>.blp`, where the slug is the query's lowercase alphanumeric words joined by `-`.
#[derive(Debug, Clone)]
pub struct FileProvider {
    pub dir: PathBuf,
}

pub fn query_slug(query: &str) -> String {
    query
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_ascii_lowercase)
        .collect::<Vec<_>>()
        .join("-")
}

impl FileProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, query: &str) -> PathBuf {
        self.dir.join(format!("{}.blp", query_slug(query)))
    }
}

impl WorkflowProvider for FileProvider {
    fn id(&self) -> &str {
        "file"
    }

    fn generate(&self, query: &str, _: &EnvConfig) -> Result<String, ProviderError> {
        let path = self.path_for(query);
        std::fs::read_to_string(&path)
            .map_err(|e| ProviderError(format!("{}: {e}", path.display())))
    }
}
