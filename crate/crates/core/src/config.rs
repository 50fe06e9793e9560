//! The TOML run configuration: `[engine]`, `[backend]`, `[harness]` and an
//! optional `[judge]` section.
//!
//! ```toml
//! [engine]
//! budget = 12
//! enable_ifinish = true
//!
//! [backend]
//! mode = "live"
//! editor_url = "http://localhost:8000"
//! segmenter_url = "http://localhost:8000"
//! mllm_url = "http://localhost:8000"
//!
//! [harness]
//! parallelism = 4
//! repeats = 3
//!
//! [judge]
//! mllm_url = "http://localhost:8001"
//! ```
//!
//! Relative paths are resolved against the file's directory. The
//! `EDITFLOW_EDITOR_URL`, `EDITFLOW_SEGMENTER_URL`, `EDITFLOW_MLLM_URL` and
//! `EDITFLOW_JUDGE_URL` environment variables override the endpoint URLs.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backends::{Backend, BackendConfig, BackendError, BackendMode, HttpBackend, HttpEndpoints, MockBackend, ReqwestTransport};
use crate::harness::HarnessConfig;
use crate::planner::EngineConfig;

/// Where judge scores come from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    /// Score with the main backend's completion endpoint.
    pub use_backend: bool,
    pub mllm_url: Option<String>,
    pub mock_script: Option<PathBuf>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub engine: EngineConfig,
    pub backend: BackendConfig,
    pub harness: HarnessConfig,
    pub judge: Option<JudgeConfig>,
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.to_path_buf(), source })?;
        let mut config = Self::parse(&text).map_err(|message| LoadError::Parse { path: path.to_path_buf(), message })?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let config: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        config.engine.validate().map_err(|e| e.to_string())?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p.as_mut().filter(|p| p.is_relative()) {
                *path = base.join(&*path);
            }
        };
        fix(&mut self.backend.mock_script);
        fix(&mut self.harness.trace_dir);
        if let Some(j) = self.judge.as_mut() {
            fix(&mut j.mock_script);
        }
    }

    /// Applies `EDITFLOW_*_URL` overrides from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        for (var, slot) in [
            ("EDITFLOW_EDITOR_URL", &mut self.backend.editor_url),
            ("EDITFLOW_SEGMENTER_URL", &mut self.backend.segmenter_url),
            ("EDITFLOW_MLLM_URL", &mut self.backend.mllm_url),
        ] {
            if let Some(v) = lookup(var).filter(|v| !v.is_empty()) {
                *slot = Some(v);
            }
        }
        if let Some(v) = lookup("EDITFLOW_JUDGE_URL").filter(|v| !v.is_empty()) {
            self.judge.get_or_insert_with(JudgeConfig::default).mllm_url = Some(v);
        }
    }

    pub fn apply_process_env(&mut self) {
        self.apply_env(|k| std::env::var(k).ok());
    }

    /// The judge backend, if one is configured.
    pub fn build_judge(&self, main: &Arc<dyn Backend>) -> Result<Option<Arc<dyn Backend>>, LoadError> {
        let Some(j) = &self.judge else {
            return Ok(None);
        };
        if let Some(script) = &j.mock_script {
            return Ok(Some(Arc::new(MockBackend::load(script)?)));
        }
        if let Some(url) = &j.mllm_url {
            let timeout = Duration::from_secs(j.timeout_secs.unwrap_or(self.backend.timeout_secs));
            // Only the completion endpoint is ever called on a judge.
            let endpoints =
                HttpEndpoints { editor: url.clone(), segmenter: url.clone(), mllm: url.clone(), editor_timeout: timeout, timeout };
            let transport = ReqwestTransport::new(self.backend.bearer_token.clone())?;
            return Ok(Some(Arc::new(HttpBackend::new(endpoints, Arc::new(transport)))));
        }
        if j.use_backend {
            return Ok(Some(main.clone()));
        }
        Err(LoadError::Backend(BackendError::Config("[judge] needs use_backend, mllm_url or mock_script".into())))
    }

    pub fn is_mock(&self) -> bool {
        self.backend.mode == BackendMode::Mock
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_env_overrides() {
        let mut c =
            AppConfig::parse("[engine]\nbudget = 6\n[backend]\nmode = \"live\"\neditor_url = \"http://a\"\n[harness]\nrepeats = 3\n")
                .unwrap();
        assert_eq!(c.engine.budget, 6);
        assert_eq!(c.harness.repeats, 3);
        assert!(c.judge.is_none());
        c.apply_env(|k| match k {
            "EDITFLOW_MLLM_URL" => Some("http://m".into()),
            "EDITFLOW_JUDGE_URL" => Some("http://j".into()),
            _ => None,
        });
        assert_eq!(c.backend.editor_url.as_deref(), Some("http://a"));
        assert_eq!(c.backend.mllm_url.as_deref(), Some("http://m"));
        assert_eq!(c.judge.unwrap().mllm_url.as_deref(), Some("http://j"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_engine() {
        assert!(AppConfig::parse("[engine]\nbudgett = 1").is_err());
        assert!(AppConfig::parse("[engine]\nbudget = 0").is_err());
        assert_eq!(AppConfig::parse("").unwrap(), AppConfig::default());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let mut c = AppConfig::parse("[backend]\nmock_script = \"m.json\"\n[judge]\nmock_script = \"/abs/j.json\"").unwrap();
        c.resolve_paths(Path::new("/cfg"));
        assert_eq!(c.backend.mock_script, Some(PathBuf::from("/cfg/m.json")));
        assert_eq!(c.judge.unwrap().mock_script, Some(PathBuf::from("/abs/j.json")));
    }
}
