//! Session traces as line-delimited JSON.
//!
//! A trace is one `header` line, one `step` line per executed action and one
//! `footer` line. Images never appear inline, only as digests. Every map is
//! key-ordered, so identical sessions serialize to identical bytes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{ActionKind, EngineConfig, QueryProfile, Route};
use crate::backends::CallLedger;
use crate::toolkit::{ToolCall, ToolResult, ToolStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    /// Profile, route, then the agentic loop.
    Atr,
    /// A single editor call.
    Direct,
    /// Two editor calls and a judge.
    Bo2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub case_id: String,
    pub mode: SessionMode,
    pub instruction: String,
    pub source_image: String,
    pub route: Option<Route>,
    pub profile: Option<QueryProfile>,
    pub config: EngineConfig,
    pub fallback_enabled: bool,
    pub prompt_version: String,
}

/// How the executed action was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    /// Only one action was allowed; no planner call.
    Forced,
    /// The planner's reply named an allowed action.
    Planner,
    /// The planner's reply was unusable; the graph's canonical move was taken.
    Canonical,
}

/// One tool invocation inside a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub tool: String,
    pub arguments: Value,
    pub args_digest: String,
    pub inputs: BTreeMap<String, String>,
    pub status: ToolStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<String>,
    pub payload: Value,
    pub outputs: BTreeMap<String, String>,
}

impl CallRecord {
    pub fn new(call: &ToolCall, result: &ToolResult) -> Self {
        Self {
            tool: call.tool_name.clone(),
            arguments: call.arguments.clone(),
            args_digest: digest_json(&call.arguments),
            inputs: call.images.iter().map(|(k, v)| (k.clone(), v.digest())).collect(),
            status: result.status,
            error_kind: result.error_kind.clone(),
            payload: result.payload.clone(),
            outputs: result.images.iter().map(|(k, v)| (k.clone(), v.digest())).collect(),
        }
    }
}

pub fn digest_json(v: &Value) -> String {
    let bytes = serde_json::to_vec(v).expect("json value serializes");
    crate::raster::hex(&Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: u32,
    pub action: ActionKind,
    pub allowed: Vec<ActionKind>,
    pub choice: Choice,
    pub calls: Vec<CallRecord>,
    pub status: ToolStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    /// Digest of the current image after the step.
    pub image: String,
    pub instruction: String,
    /// Cumulative ledger after the step.
    pub ledger: CallLedger,
    /// Logical step counter for mock runs, Unix milliseconds for live runs.
    pub timestamp: u64,
}

impl StepRecord {
    pub fn tool(&self) -> Option<&str> {
        self.calls.first().map(|c| c.tool.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Fallback,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub outcome: Outcome,
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub final_image: Option<String>,
    /// Bo2: index of the selected candidate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<u32>,
    pub steps: u32,
    pub ledger: CallLedger,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub steps: Vec<StepRecord>,
    pub footer: TraceFooter,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(TraceHeader),
    Step(StepRecord),
    Footer(TraceFooter),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("trace parse error at byte {offset} (line {line}): {message}")]
pub struct TraceParseError {
    pub offset: usize,
    pub line: usize,
    pub message: String,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &Line| {
            out.push_str(&serde_json::to_string(line).expect("trace line serializes"));
            out.push('\n');
        };
        push(&Line::Header(self.header.clone()));
        for s in &self.steps {
            push(&Line::Step(s.clone()));
        }
        push(&Line::Footer(self.footer.clone()));
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, TraceParseError> {
        let mut header = None;
        let mut steps: Vec<StepRecord> = Vec::new();
        let mut footer = None;
        let mut offset = 0;
        for (n, raw) in text.split_inclusive('\n').enumerate() {
            let line_no = n + 1;
            let start = offset;
            offset += raw.len();
            let body = raw.trim_end_matches(['\n', '\r']);
            if body.trim().is_empty() {
                continue;
            }
            let fail = |at: usize, message: String| TraceParseError { offset: at, line: line_no, message };
            if footer.is_some() {
                return Err(fail(start, "content after the footer".into()));
            }
            let parsed: Line = serde_json::from_str(body).map_err(|e| fail(start + e.column().saturating_sub(1), e.to_string()))?;
            match parsed {
                Line::Header(h) if header.is_none() && steps.is_empty() => header = Some(h),
                Line::Header(_) => return Err(fail(start, "unexpected second header".into())),
                _ if header.is_none() => return Err(fail(start, "trace must start with a header".into())),
                Line::Step(s) => {
                    if s.index as usize != steps.len() {
                        return Err(fail(start, format!("step index {} out of order, expected {}", s.index, steps.len())));
                    }
                    steps.push(s);
                }
                Line::Footer(f) => footer = Some(f),
            }
        }
        let eof = |message: &str| TraceParseError { offset: text.len(), line: text.lines().count(), message: message.into() };
        let header = header.ok_or_else(|| eof("missing header"))?;
        let footer = footer.ok_or_else(|| eof("missing footer (truncated trace?)"))?;
        if footer.steps as usize != steps.len() {
            return Err(eof("footer step count does not match the step lines"));
        }
        Ok(Trace { header, steps, footer })
    }

    pub fn route(&self) -> Option<Route> {
        self.header.route
    }

    pub fn fallback(&self) -> bool {
        self.footer.fallback
    }

    pub fn actions(&self) -> Vec<ActionKind> {
        self.steps.iter().map(|s| s.action).collect()
    }
}
