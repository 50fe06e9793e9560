//! Clients for the editor, segmenter and MLLM services.
//!
//! A [`Backend`] performs single wire calls. A [`SessionClient`] wraps one for
//! the duration of a session: it validates requests, retries transient
//! failures and keeps the [`CallLedger`].

mod http;
mod mock;
pub mod wire;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PixelBox;
use crate::raster::{ImageBuffer, Mask};

pub use http::{HttpBackend, HttpEndpoints, ReqwestTransport, Transport};
pub use mock::{CaseScript, EditorMode, EditorScript, InstanceSpec, MockBackend, MockScript, TRANSPORT_FAILURE};

/// Role keys for `/v1/complete` calls. Mock transcripts are keyed by these.
pub mod roles {
    pub const PROFILE: &str = "profile";
    pub const ROUTER: &str = "router";
    pub const PLANNER: &str = "planner";
    pub const REWRITE: &str = "rewrite";
    pub const VERIFY: &str = "verify";
    pub const REFINE: &str = "refine";
    pub const OFFSET: &str = "offset";
    pub const JUDGE: &str = "judge";
    pub const SCORE: &str = "score";
    pub const EDITOR: &str = "editor";
    pub const SEGMENTER: &str = "segmenter";
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("http status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed reply: {0}")]
    Decode(String),
    #[error("no mock fixture for case '{case}', role '{role}'")]
    MissingFixture { case: String, role: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { code, .. } => *code >= 500 || *code == 429,
            _ => false,
        }
    }
}

/// Identifies one logical call for fixture lookup and request metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallContext {
    pub case_id: String,
    pub role: String,
    /// Zero-based index of this call among the session's calls with the same role.
    pub seq: u32,
    /// Zero-based retry attempt of this call.
    #[serde(default)]
    pub attempt: u32,
}

/// One segmentation candidate as returned by the service, unfiltered.
#[derive(Debug, Clone, PartialEq)]
pub struct RawInstance {
    /// Full-frame mask at the source image's dimensions.
    pub mask: Mask,
    pub region: PixelBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Part {
    Text(String),
    Image { name: String, image: ImageBuffer },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub role: String,
    pub parts: Vec<Part>,
}

impl CompletionRequest {
    pub fn new(role: &str) -> Self {
        Self { role: role.to_string(), parts: Vec::new() }
    }

    pub fn text(mut self, text: impl Into<String>) -> Self {
        self.parts.push(Part::Text(text.into()));
        self
    }

    pub fn image(mut self, name: &str, image: &ImageBuffer) -> Self {
        self.parts.push(Part::Image { name: name.to_string(), image: image.clone() });
        self
    }
}

pub trait Backend: Send + Sync {
    fn edit(&self, ctx: &CallContext, image: &ImageBuffer, instruction: &str) -> Result<ImageBuffer, BackendError>;
    fn segment(&self, ctx: &CallContext, image: &ImageBuffer, query: &str) -> Result<Vec<RawInstance>, BackendError>;
    fn complete(&self, ctx: &CallContext, request: &CompletionRequest) -> Result<String, BackendError>;
    fn is_mock(&self) -> bool {
        false
    }
}

/// Successful logical calls per service within one session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallLedger {
    pub editor_calls: u32,
    pub segmenter_calls: u32,
    pub mllm_calls: u32,
    #[serde(default)]
    pub mllm_by_role: BTreeMap<String, u32>,
}

impl CallLedger {
    pub fn total(&self) -> u32 {
        self.editor_calls + self.segmenter_calls + self.mllm_calls
    }

    /// MLLM calls made under `role`, ignoring any `:label` suffix on recorded keys.
    pub fn role_calls(&self, role: &str) -> u32 {
        self.mllm_by_role.iter().filter(|(k, _)| k.as_str() == role || k.split(':').next() == Some(role)).map(|(_, v)| v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    Live,
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub mode: BackendMode,
    pub editor_url: Option<String>,
    pub segmenter_url: Option<String>,
    pub mllm_url: Option<String>,
    pub editor_timeout_secs: u64,
    pub timeout_secs: u64,
    pub retry_limit: u32,
    pub mock_script: Option<PathBuf>,
    /// Passed through as `Authorization: Bearer ...` on live calls.
    pub bearer_token: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            mode: BackendMode::Mock,
            editor_url: None,
            segmenter_url: None,
            mllm_url: None,
            editor_timeout_secs: 120,
            timeout_secs: 60,
            retry_limit: 2,
            mock_script: None,
            bearer_token: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        match self.mode {
            BackendMode::Live => {
                for (name, url) in [("editor_url", &self.editor_url), ("segmenter_url", &self.segmenter_url), ("mllm_url", &self.mllm_url)]
                {
                    if url.as_deref().is_none_or(str::is_empty) {
                        return Err(BackendError::Config(format!("live mode requires {name}")));
                    }
                }
            }
            BackendMode::Mock => {
                if self.mock_script.is_none() {
                    return Err(BackendError::Config("mock mode requires mock_script".into()));
                }
            }
        }
        Ok(())
    }

    /// Instantiates the configured backend.
    pub fn build(&self) -> Result<Arc<dyn Backend>, BackendError> {
        self.validate()?;
        match self.mode {
            BackendMode::Mock => {
                let path = self.mock_script.as_ref().expect("validated");
                Ok(Arc::new(MockBackend::load(path)?))
            }
            BackendMode::Live => {
                let endpoints = HttpEndpoints {
                    editor: self.editor_url.clone().expect("validated"),
                    segmenter: self.segmenter_url.clone().expect("validated"),
                    mllm: self.mllm_url.clone().expect("validated"),
                    editor_timeout: Duration::from_secs(self.editor_timeout_secs),
                    timeout: Duration::from_secs(self.timeout_secs),
                };
                let transport = ReqwestTransport::new(self.bearer_token.clone())?;
                Ok(Arc::new(HttpBackend::new(endpoints, Arc::new(transport))))
            }
        }
    }
}

/// Session-scoped view of a backend.
///
/// Each method is one logical call: it is retried up to `retry_limit` extra
/// times on transient errors and counted once in the ledger if it succeeds.
pub struct SessionClient {
    backend: Arc<dyn Backend>,
    case_id: String,
    retry_limit: u32,
    ledger: Mutex<CallLedger>,
    seq: Mutex<BTreeMap<String, u32>>,
}

impl SessionClient {
    pub fn new(backend: Arc<dyn Backend>, case_id: impl Into<String>, retry_limit: u32) -> Self {
        Self { backend, case_id: case_id.into(), retry_limit, ledger: Mutex::new(CallLedger::default()), seq: Mutex::new(BTreeMap::new()) }
    }

    pub fn case_id(&self) -> &str {
        &self.case_id
    }

    pub fn is_mock(&self) -> bool {
        self.backend.is_mock()
    }

    pub fn ledger(&self) -> CallLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    fn context(&self, role: &str) -> CallContext {
        let mut seq = self.seq.lock().expect("seq lock");
        let n = seq.entry(role.to_string()).or_insert(0);
        let ctx = CallContext { case_id: self.case_id.clone(), role: role.to_string(), seq: *n, attempt: 0 };
        *n += 1;
        ctx
    }

    fn with_retries<T>(
        &self,
        mut ctx: CallContext,
        mut call: impl FnMut(&CallContext) -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        loop {
            match call(&ctx) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && ctx.attempt < self.retry_limit => {
                    ctx.attempt += 1;
                    tracing::warn!(role = %ctx.role, attempt = ctx.attempt, error = %e, "retrying backend call");
                }
                Err(e) => return Err(e),
            }
        }
    }

    pub fn edit(&self, image: &ImageBuffer, instruction: &str) -> Result<ImageBuffer, BackendError> {
        if instruction.trim().is_empty() {
            return Err(BackendError::InvalidRequest("edit instruction is empty".into()));
        }
        let ctx = self.context(roles::EDITOR);
        let out = self.with_retries(ctx, |ctx| self.backend.edit(ctx, image, instruction))?;
        self.ledger.lock().expect("ledger lock").editor_calls += 1;
        Ok(out)
    }

    pub fn segment(&self, image: &ImageBuffer, query: &str) -> Result<Vec<RawInstance>, BackendError> {
        if query.trim().is_empty() {
            return Err(BackendError::InvalidRequest("segmentation query is empty".into()));
        }
        let ctx = self.context(roles::SEGMENTER);
        let out = self.with_retries(ctx, |ctx| self.backend.segment(ctx, image, query))?;
        self.ledger.lock().expect("ledger lock").segmenter_calls += 1;
        Ok(out)
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        if !request.parts.iter().any(|p| matches!(p, Part::Text(_))) {
            return Err(BackendError::InvalidRequest("completion needs at least one text part".into()));
        }
        let ctx = self.context(&request.role);
        let out = self.with_retries(ctx, |ctx| self.backend.complete(ctx, request))?;
        let mut ledger = self.ledger.lock().expect("ledger lock");
        ledger.mllm_calls += 1;
        *ledger.mllm_by_role.entry(request.role.clone()).or_insert(0) += 1;
        Ok(out)
    }
}
