use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::wire::{self, CompleteResponseBody, EditResponseBody, SegmentResponseBody};
use super::{Backend, BackendError, CallContext, CompletionRequest, RawInstance};
use crate::raster::ImageBuffer;

/// Moves one JSON body to an endpoint and back.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, body: &Value, timeout: Duration) -> Result<Value, BackendError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
    bearer_token: Option<String>,
}

impl ReqwestTransport {
    pub fn new(bearer_token: Option<String>) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder().build().map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { client, bearer_token })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(&self, url: &str, body: &Value, timeout: Duration) -> Result<Value, BackendError> {
        let mut req = self.client.post(url).timeout(timeout).json(body);
        if let Some(token) = &self.bearer_token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status { code: status.as_u16(), body: text });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Decode(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpEndpoints {
    pub editor: String,
    pub segmenter: String,
    pub mllm: String,
    pub editor_timeout: Duration,
    pub timeout: Duration,
}

/// Live backend speaking the `/v1/*` protocol over a [`Transport`].
pub struct HttpBackend {
    endpoints: HttpEndpoints,
    transport: Arc<dyn Transport>,
}

impl HttpBackend {
    pub fn new(endpoints: HttpEndpoints, transport: Arc<dyn Transport>) -> Self {
        Self { endpoints, transport }
    }

    fn call<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        base: &str,
        path: &str,
        body: &Req,
        timeout: Duration,
    ) -> Result<Resp, BackendError> {
        let url = format!("{}{}", base.trim_end_matches('/'), path);
        let body = serde_json::to_value(body).map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let reply = self.transport.post_json(&url, &body, timeout)?;
        serde_json::from_value(reply).map_err(|e| BackendError::Decode(format!("{path}: {e}")))
    }
}

impl Backend for HttpBackend {
    fn edit(&self, ctx: &CallContext, image: &ImageBuffer, instruction: &str) -> Result<ImageBuffer, BackendError> {
        let body = wire::edit_request(ctx, image, instruction);
        let resp: EditResponseBody = self.call(&self.endpoints.editor, wire::EDIT_PATH, &body, self.endpoints.editor_timeout)?;
        wire::decode_image(&resp.image)
    }

    fn segment(&self, ctx: &CallContext, image: &ImageBuffer, query: &str) -> Result<Vec<RawInstance>, BackendError> {
        let body = wire::segment_request(ctx, image, query);
        let resp: SegmentResponseBody = self.call(&self.endpoints.segmenter, wire::SEGMENT_PATH, &body, self.endpoints.timeout)?;
        wire::decode_instances(resp, image.dims())
    }

    fn complete(&self, ctx: &CallContext, request: &CompletionRequest) -> Result<String, BackendError> {
        let body = wire::complete_request(ctx, request);
        let resp: CompleteResponseBody = self.call(&self.endpoints.mllm, wire::COMPLETE_PATH, &body, self.endpoints.timeout)?;
        Ok(resp.text)
    }
}
