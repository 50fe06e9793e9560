//! The session driver: direct, best-of-two and route-conditioned sessions.

use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::json;

use super::graph::{allowed_actions, canonical_action};
use super::profile::{self, QueryProfile};
use super::trace::{CallRecord, Choice, Outcome, SessionMode, StepRecord, Trace, TraceFooter, TraceHeader};
use super::{ActionKind, ConfigError, EditRequest, EngineConfig, Route};
use crate::backends::{Backend, CallLedger, SessionClient};
use crate::geometry::{RelBox, RelOffset, REL_CANVAS};
use crate::raster::ImageBuffer;
use crate::toolkit::{parse, prompts, registry as tools, FinishVerdict, Registry, ToolCall, ToolResult, ToolStatus};

/// Fraction of the target's size added on every side of a local workspace.
pub const WORKSPACE_PADDING: f64 = 0.25;

/// The segmented subject of a spatial or local edit.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub rel_box: RelBox,
    pub cutout: ImageBuffer,
}

/// Intermediate products carried between steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scratch {
    pub target: Option<Target>,
    /// Route B: the image with the subject removed.
    pub plate: Option<ImageBuffer>,
    pub offset: Option<RelOffset>,
    pub dest_box: Option<RelBox>,
    /// Route C: the crop region, set while a crop is active.
    pub workspace: Option<RelBox>,
    /// Route C: the full image the active crop was cut from.
    pub base: Option<ImageBuffer>,
    pub last_verdict: Option<FinishVerdict>,
    pub not_finished: u32,
    pub edits: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionState {
    pub original_image: ImageBuffer,
    pub original_instruction: String,
    pub current_image: ImageBuffer,
    pub current_instruction: String,
    pub route: Route,
    pub profile: QueryProfile,
    pub history: Vec<StepRecord>,
    pub budget: u32,
    pub scratch: Scratch,
}

impl ExecutionState {
    pub fn new(request: &EditRequest, route: Route, profile: QueryProfile, budget: u32) -> Self {
        Self {
            original_image: request.image.clone(),
            original_instruction: request.instruction.clone(),
            current_image: request.image.clone(),
            current_instruction: request.instruction.clone(),
            route,
            profile,
            history: Vec::new(),
            budget,
            scratch: Scratch::default(),
        }
    }

    pub fn step_count(&self) -> u32 {
        self.history.len() as u32
    }

    /// The full-size image: the crop's base while a crop is active.
    fn full_image(&self) -> &ImageBuffer {
        self.scratch.base.as_ref().unwrap_or(&self.current_image)
    }

    fn target_text(&self) -> &str {
        let t = self.profile.target.trim();
        if t.is_empty() {
            &self.original_instruction
        } else {
            t
        }
    }

    fn summary(&self) -> String {
        let steps: Vec<String> =
            self.history.iter().map(|s| format!("{}:{}", s.action, if s.status == ToolStatus::Ok { "ok" } else { "error" })).collect();
        let verdict = match &self.scratch.last_verdict {
            Some(v) => format!("{} ({})", if v.is_finished { "finished" } else { "not finished" }, v.reasoning),
            None => "none".into(),
        };
        format!(
            "Route: {}\nInstruction: {}\nTarget: {}\nSteps so far: {}\nLast verification: {}\nSteps left: {}",
            self.route,
            self.current_instruction,
            self.target_text(),
            if steps.is_empty() { "none".into() } else { steps.join(", ") },
            verdict,
            self.budget.saturating_sub(self.step_count()),
        )
    }
}

/// Why a session could not continue.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StepFailure {
    #[error("step budget of {0} exhausted")]
    BudgetExceeded(u32),
    #[error("{action} failed: {kind}: {message}")]
    Tool { action: ActionKind, kind: String, message: String },
    #[error("verification said not finished {0} times")]
    VerifyRetriesExhausted(u32),
    #[error("terminated early: {0}")]
    IncompleteTermination(&'static str),
}

/// What to do after a successful step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepFlow {
    Continue,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutput {
    pub image: ImageBuffer,
    pub trace: Trace,
    pub ledger: CallLedger,
}

impl SessionOutput {
    pub fn route(&self) -> Option<Route> {
        self.trace.route()
    }

    pub fn fallback(&self) -> bool {
        self.trace.fallback()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("session {case_id} failed: {reason}")]
pub struct SessionFailed {
    pub case_id: String,
    pub reason: String,
    pub trace: Box<Trace>,
    pub ledger: CallLedger,
}

/// A step's tool error, before it is classified as recoverable or not.
struct StepError {
    kind: String,
    message: String,
}

impl StepError {
    fn missing(what: &str) -> Self {
        Self { kind: "MissingState".into(), message: format!("no {what} in the session state") }
    }

    fn from_result(r: &ToolResult) -> Self {
        Self { kind: r.error_kind.clone().unwrap_or_else(|| "ToolError".into()), message: r.error_message.clone().unwrap_or_default() }
    }
}

pub struct Engine {
    backend: Arc<dyn Backend>,
    config: EngineConfig,
    retry_limit: u32,
    registry: Registry,
}

impl Engine {
    pub fn new(backend: Arc<dyn Backend>, config: EngineConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self { backend, config, retry_limit: 2, registry: Registry::standard() })
    }

    /// Transport retries per logical backend call.
    pub fn with_retry_limit(mut self, retry_limit: u32) -> Self {
        self.retry_limit = retry_limit;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn client(&self, case_id: &str) -> SessionClient {
        SessionClient::new(self.backend.clone(), case_id, self.retry_limit)
    }

    /// Runs one session in the mode the configuration selects.
    pub fn run_session(&self, case_id: &str, request: &EditRequest) -> Result<SessionOutput, SessionFailed> {
        let client = self.client(case_id);
        if self.config.bo2 {
            self.run_bo2(&client, request)
        } else if self.config.is_direct_only() {
            self.run_direct(&client, request)
        } else {
            self.run_atr(&client, request)
        }
    }

    fn header(
        &self,
        client: &SessionClient,
        request: &EditRequest,
        mode: SessionMode,
        route: Option<Route>,
        profile: Option<QueryProfile>,
    ) -> TraceHeader {
        TraceHeader {
            case_id: client.case_id().to_string(),
            mode,
            instruction: request.instruction.clone(),
            source_image: request.image.digest(),
            route,
            profile,
            config: self.config.clone(),
            fallback_enabled: self.config.enable_fallback,
            prompt_version: prompts::PROMPT_VERSION.to_string(),
        }
    }

    fn timestamp(client: &SessionClient, index: u32) -> u64 {
        if client.is_mock() {
            index as u64
        } else {
            SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
        }
    }

    fn invoke(&self, client: &SessionClient, calls: &mut Vec<CallRecord>, call: ToolCall) -> Result<ToolResult, StepError> {
        let result = self.registry.invoke(client, &call);
        calls.push(CallRecord::new(&call, &result));
        if result.is_ok() {
            Ok(result)
        } else {
            Err(StepError::from_result(&result))
        }
    }

    fn edit_call(image: &ImageBuffer, instruction: &str) -> ToolCall {
        ToolCall::new(tools::EDIT, json!({ "instruction": instruction })).image("image", image)
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        client: &SessionClient,
        state_image: &ImageBuffer,
        instruction: &str,
        index: u32,
        action: ActionKind,
        allowed: Vec<ActionKind>,
        choice: Choice,
        calls: Vec<CallRecord>,
        error: Option<&StepError>,
    ) -> StepRecord {
        StepRecord {
            index,
            action,
            allowed,
            choice,
            calls,
            status: if error.is_some() { ToolStatus::Error } else { ToolStatus::Ok },
            error_kind: error.map(|e| e.kind.clone()),
            error_message: error.map(|e| e.message.clone()),
            image: state_image.digest(),
            instruction: instruction.to_string(),
            ledger: client.ledger(),
            timestamp: Self::timestamp(client, index),
        }
    }

    fn finish(
        client: &SessionClient,
        header: TraceHeader,
        steps: Vec<StepRecord>,
        image: &ImageBuffer,
        selected: Option<u32>,
    ) -> SessionOutput {
        let ledger = client.ledger();
        let footer = TraceFooter {
            outcome: Outcome::Success,
            fallback: false,
            fallback_reason: None,
            failure: None,
            final_image: Some(image.digest()),
            selected,
            steps: steps.len() as u32,
            ledger: ledger.clone(),
        };
        SessionOutput { image: image.clone(), trace: Trace { header, steps, footer }, ledger }
    }

    fn fail(client: &SessionClient, header: TraceHeader, steps: Vec<StepRecord>, reason: String) -> SessionFailed {
        let ledger = client.ledger();
        let footer = TraceFooter {
            outcome: Outcome::Failed,
            fallback: false,
            fallback_reason: None,
            failure: Some(reason.clone()),
            final_image: None,
            selected: None,
            steps: steps.len() as u32,
            ledger: ledger.clone(),
        };
        SessionFailed { case_id: client.case_id().to_string(), reason, trace: Box::new(Trace { header, steps, footer }), ledger }
    }

    /// One editor call on the request; no profiling or routing.
    pub fn run_direct(&self, client: &SessionClient, request: &EditRequest) -> Result<SessionOutput, SessionFailed> {
        let header = self.header(client, request, SessionMode::Direct, None, None);
        let mut calls = Vec::new();
        let result = self.invoke(client, &mut calls, Self::edit_call(&request.image, &request.instruction));
        let out = result.as_ref().ok().and_then(|r| r.image("image").cloned());
        let err = result.err();
        let shown = out.as_ref().unwrap_or(&request.image);
        let step = Self::record(
            client,
            shown,
            &request.instruction,
            0,
            ActionKind::Edit,
            vec![ActionKind::Edit],
            Choice::Forced,
            calls,
            err.as_ref(),
        );
        match (out, err) {
            (Some(img), _) => Ok(Self::finish(client, header, vec![step], &img, None)),
            (None, e) => {
                let reason =
                    e.map(|e| format!("edit failed: {}: {}", e.kind, e.message)).unwrap_or_else(|| "edit returned no image".into());
                Err(Self::fail(client, header, vec![step], reason))
            }
        }
    }

    /// Two editor calls on the request and one judge call picking between them.
    pub fn run_bo2(&self, client: &SessionClient, request: &EditRequest) -> Result<SessionOutput, SessionFailed> {
        let header = self.header(client, request, SessionMode::Bo2, None, None);
        let mut steps = Vec::new();
        let mut candidates = Vec::new();
        for index in 0..2 {
            let mut calls = Vec::new();
            let result = self.invoke(client, &mut calls, Self::edit_call(&request.image, &request.instruction));
            let (img, err) = match result {
                Ok(r) => (r.image("image").cloned(), None),
                Err(e) => (None, Some(e)),
            };
            let shown = img.as_ref().unwrap_or(&request.image);
            steps.push(Self::record(
                client,
                shown,
                &request.instruction,
                index,
                ActionKind::Edit,
                vec![ActionKind::Edit],
                Choice::Forced,
                calls,
                err.as_ref(),
            ));
            candidates.push(img);
        }
        let selected = match (&candidates[0], &candidates[1]) {
            (Some(a), Some(b)) => {
                let reply = client.complete(&prompts::judge(&request.instruction, a, b, &request.image));
                match reply.ok().and_then(|r| parse::first_number(&r)) {
                    Some(2.0) => 1,
                    _ => 0,
                }
            }
            (Some(_), None) => 0,
            (None, Some(_)) => 1,
            (None, None) => return Err(Self::fail(client, header, steps, "both candidate edits failed".into())),
        };
        let image = candidates[selected].clone().expect("selected candidate exists");
        Ok(Self::finish(client, header, steps, &image, Some(selected as u32)))
    }

    /// Picks the next action: forced when only one is allowed, otherwise
    /// the planner's reply if it names an allowed action, else the canonical one.
    pub fn plan_next(&self, client: &SessionClient, state: &ExecutionState, allowed: &[ActionKind]) -> (ActionKind, Choice) {
        let canonical = canonical_action(state, &self.config);
        if allowed.len() == 1 {
            return (allowed[0], Choice::Forced);
        }
        let names: Vec<&str> = allowed.iter().map(|a| a.as_str()).collect();
        let reply = client.complete(&prompts::planner(&state.summary(), &names, &state.current_image));
        let parsed = reply.ok().and_then(|r| {
            parse::json_object(&r)
                .and_then(|m| m.get("action").and_then(|v| v.as_str()).and_then(ActionKind::parse))
                .or_else(|| ActionKind::parse(&parse::bare_word(&r)))
        });
        match parsed {
            Some(k) if allowed.contains(&k) => (k, Choice::Planner),
            _ => (canonical, Choice::Canonical),
        }
    }

    /// Executes one action and appends its record to the history.
    ///
    /// Refinement errors and actions whose inputs do not exist yet are
    /// recorded and leave the state unchanged; other tool errors end the session.
    pub fn execute_step(
        &self,
        client: &SessionClient,
        state: &mut ExecutionState,
        action: ActionKind,
        allowed: Vec<ActionKind>,
        choice: Choice,
    ) -> Result<StepFlow, StepFailure> {
        if state.step_count() >= state.budget {
            return Err(StepFailure::BudgetExceeded(state.budget));
        }
        let mut calls = Vec::new();
        let result = self.apply(client, state, action, &mut calls);
        let index = state.step_count();
        let err = result.as_ref().err();
        let record = Self::record(client, &state.current_image, &state.current_instruction, index, action, allowed, choice, calls, err);
        state.history.push(record);
        tracing::debug!(case = client.case_id(), index, action = %action, ok = err.is_none(), "step");

        if let Err(e) = result {
            let recoverable = action == ActionKind::Refine || e.kind == "MissingState";
            if !recoverable {
                return Err(StepFailure::Tool { action, kind: e.kind, message: e.message });
            }
            return Ok(StepFlow::Continue);
        }
        match action {
            ActionKind::Verify if state.scratch.not_finished >= self.config.verify_retry_limit => {
                Err(StepFailure::VerifyRetriesExhausted(state.scratch.not_finished))
            }
            ActionKind::Terminate => {
                if state.scratch.edits == 0 {
                    Err(StepFailure::IncompleteTermination("no edit was made"))
                } else if state.scratch.base.is_some() {
                    Err(StepFailure::IncompleteTermination("a crop was never composed back"))
                } else if self.config.enable_ifinish && !state.scratch.last_verdict.as_ref().is_some_and(|v| v.is_finished) {
                    Err(StepFailure::IncompleteTermination("verification never said finished"))
                } else {
                    Ok(StepFlow::Done)
                }
            }
            _ => Ok(StepFlow::Continue),
        }
    }

    fn apply(
        &self,
        client: &SessionClient,
        state: &mut ExecutionState,
        action: ActionKind,
        calls: &mut Vec<CallRecord>,
    ) -> Result<(), StepError> {
        match action {
            ActionKind::Rewrite => {
                let call =
                    ToolCall::new(tools::FIXPROMPT, json!({ "instruction": state.current_instruction })).image("image", state.full_image());
                let r = self.invoke(client, calls, call)?;
                if let Some(text) = r.payload["instruction"].as_str() {
                    state.current_instruction = text.to_string();
                }
            }
            ActionKind::Localize | ActionKind::Isolate => {
                let call = ToolCall::new(tools::SAM3, json!({ "query": state.target_text(), "multi_target": state.profile.multi_target }))
                    .image("image", state.full_image());
                let r = self.invoke(client, calls, call)?;
                let rel_box: RelBox = serde_json::from_value(r.payload["rel_box"].clone())
                    .map_err(|e| StepError { kind: "InvalidOutput".into(), message: e.to_string() })?;
                let cutout = r.image("cutout").cloned().ok_or_else(|| StepError::missing("cutout"))?;
                state.scratch.target = Some(Target { rel_box, cutout });
            }
            ActionKind::Crop => {
                let target = state.scratch.target.as_ref().ok_or_else(|| StepError::missing("target"))?;
                let [x1, y1, x2, y2] = target.rel_box.corners();
                let (px, py) = (target.rel_box.w() * WORKSPACE_PADDING, target.rel_box.h() * WORKSPACE_PADDING);
                let raw = [x1 - px, y1 - py, x2 + px, y2 + py].map(|v| v.clamp(0.0, REL_CANVAS));
                let full = state.full_image().clone();
                let r = self.invoke(client, calls, ToolCall::new(tools::CROP, json!({ "box": raw })).image("image", &full))?;
                let workspace: RelBox = serde_json::from_value(r.payload["rel_box"].clone())
                    .map_err(|e| StepError { kind: "InvalidOutput".into(), message: e.to_string() })?;
                state.current_image = r.image("patch").cloned().ok_or_else(|| StepError::missing("patch"))?;
                state.scratch.workspace = Some(workspace);
                state.scratch.base = Some(full);
            }
            ActionKind::Edit => {
                let background = state.route == Route::BSpatial && state.scratch.target.is_some() && state.scratch.plate.is_none();
                let instruction =
                    if background { prompts::background_completion(state.target_text()) } else { state.current_instruction.clone() };
                let r = self.invoke(client, calls, Self::edit_call(&state.current_image, &instruction))?;
                let out = r.image("image").cloned().ok_or_else(|| StepError::missing("edited image"))?;
                if background {
                    state.scratch.plate = Some(out.clone());
                }
                state.current_image = out;
                state.scratch.edits += 1;
            }
            ActionKind::EstimateOffset => {
                let target = state.scratch.target.as_ref().ok_or_else(|| StepError::missing("target"))?;
                let offset = self.estimate_offset(client, state, &target.rel_box);
                let call = ToolCall::new(tools::TARGET, json!({ "box": target.rel_box, "offset": offset }));
                let r = self.invoke(client, calls, call)?;
                let dest: RelBox = serde_json::from_value(r.payload["box"].clone())
                    .map_err(|e| StepError { kind: "InvalidOutput".into(), message: e.to_string() })?;
                state.scratch.offset = Some(offset);
                state.scratch.dest_box = Some(dest);
            }
            ActionKind::Paste => {
                let target = state.scratch.target.as_ref().ok_or_else(|| StepError::missing("target"))?;
                let dest = state.scratch.dest_box.ok_or_else(|| StepError::missing("destination box"))?;
                let background = state.scratch.plate.as_ref().unwrap_or(&state.current_image);
                let call = ToolCall::new(tools::SMARTPASTE, json!({ "box": dest }))
                    .image("cutout", &target.cutout)
                    .image("background", background);
                let r = self.invoke(client, calls, call)?;
                state.current_image = r.image("composed").cloned().ok_or_else(|| StepError::missing("composed image"))?;
            }
            ActionKind::Compose => {
                let base = state.scratch.base.as_ref().ok_or_else(|| StepError::missing("active crop"))?;
                let workspace = state.scratch.workspace.ok_or_else(|| StepError::missing("workspace"))?;
                let call = ToolCall::new(tools::CROPPASTE, json!({ "box": workspace }))
                    .image("original", base)
                    .image("patch", &state.current_image);
                let r = self.invoke(client, calls, call)?;
                state.current_image = r.image("composed").cloned().ok_or_else(|| StepError::missing("composed image"))?;
                state.scratch.base = None;
            }
            ActionKind::Refine => {
                if state.scratch.base.is_some() {
                    return Err(StepError::missing("composed image (a crop is active)"));
                }
                let call = ToolCall::new(tools::REFINEMENT, json!({}))
                    .image("original", &state.original_image)
                    .image("composed", &state.current_image);
                let r = self.invoke(client, calls, call)?;
                let prompt = r.payload["prompt"].as_str().unwrap_or_default().to_string();
                let r = self.invoke(client, calls, Self::edit_call(&state.current_image, &prompt))?;
                state.current_image = r.image("image").cloned().ok_or_else(|| StepError::missing("edited image"))?;
                state.scratch.edits += 1;
            }
            ActionKind::Verify => {
                let call = ToolCall::new(tools::IFINISH, json!({ "instruction": state.original_instruction }))
                    .image("original", &state.original_image)
                    .image("current", state.full_image());
                let r = self.invoke(client, calls, call)?;
                let text = |k: &str| r.payload[k].as_str().unwrap_or_default().to_string();
                let verdict = FinishVerdict {
                    status: text("status"),
                    is_finished: r.payload["is_finished"].as_bool().unwrap_or(false),
                    reasoning: text("reasoning"),
                };
                if !verdict.is_finished {
                    state.scratch.not_finished += 1;
                }
                state.scratch.last_verdict = Some(verdict);
            }
            ActionKind::Terminate => {}
        }
        Ok(())
    }

    /// Asks for a `[dx, dy]` displacement; failures and unreadable replies mean no move.
    fn estimate_offset(&self, client: &SessionClient, state: &ExecutionState, source: &RelBox) -> RelOffset {
        let req = prompts::offset(&state.original_image, &state.current_instruction, source.to_array());
        let reply = match client.complete(&req) {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(case = client.case_id(), error = %e, "offset call failed, not moving");
                return RelOffset::zero();
            }
        };
        let from_map = parse::json_object(&reply).and_then(|m| {
            let n = |k: &str| m.get(k).and_then(parse::loose_number);
            Some([n("dx")?, n("dy")?])
        });
        let pair = from_map.or_else(|| parse::number_array::<2>(&reply));
        match pair {
            Some([dx, dy]) => {
                RelOffset::new(dx.clamp(-REL_CANVAS, REL_CANVAS), dy.clamp(-REL_CANVAS, REL_CANVAS)).unwrap_or_else(|_| RelOffset::zero())
            }
            None => {
                tracing::warn!(case = client.case_id(), reply = %reply, "offset reply unreadable, not moving");
                RelOffset::zero()
            }
        }
    }

    /// Profile, route, then plan and execute until the session ends.
    pub fn run_atr(&self, client: &SessionClient, request: &EditRequest) -> Result<SessionOutput, SessionFailed> {
        let profile = profile::profile(client, request);
        let route = profile::route(client, request, &profile, &self.config);
        tracing::info!(case = client.case_id(), route = %route, "routed");
        let header = self.header(client, request, SessionMode::Atr, Some(route), Some(profile.clone()));
        let mut state = ExecutionState::new(request, route, profile, self.config.budget);
        let outcome = loop {
            let allowed = allowed_actions(&state, &self.config);
            if allowed.is_empty() {
                break Err(StepFailure::IncompleteTermination("no action is allowed"));
            }
            if state.step_count() >= state.budget {
                break Err(StepFailure::BudgetExceeded(state.budget));
            }
            let (action, choice) = self.plan_next(client, &state, &allowed);
            match self.execute_step(client, &mut state, action, allowed, choice) {
                Ok(StepFlow::Continue) => {}
                Ok(StepFlow::Done) => break Ok(()),
                Err(e) => break Err(e),
            }
        };
        let steps = std::mem::take(&mut state.history);
        match outcome {
            Ok(()) => Ok(Self::finish(client, header, steps, &state.current_image, None)),
            Err(failure) if self.config.enable_fallback => self.fallback(client, request, header, steps, failure),
            Err(failure) => Err(Self::fail(client, header, steps, failure.to_string())),
        }
    }

    /// Exactly one editor call on the untouched request.
    fn fallback(
        &self,
        client: &SessionClient,
        request: &EditRequest,
        header: TraceHeader,
        steps: Vec<StepRecord>,
        failure: StepFailure,
    ) -> Result<SessionOutput, SessionFailed> {
        tracing::info!(case = client.case_id(), reason = %failure, "falling back to a direct edit");
        match client.edit(&request.image, &request.instruction) {
            Ok(image) => {
                let ledger = client.ledger();
                let footer = TraceFooter {
                    outcome: Outcome::Fallback,
                    fallback: true,
                    fallback_reason: Some(failure.to_string()),
                    failure: None,
                    final_image: Some(image.digest()),
                    selected: None,
                    steps: steps.len() as u32,
                    ledger: ledger.clone(),
                };
                Ok(SessionOutput { image, trace: Trace { header, steps, footer }, ledger })
            }
            Err(e) => {
                let mut failed = Self::fail(client, header, steps, format!("{failure}; fallback edit failed: {e}"));
                failed.trace.footer.fallback = true;
                failed.trace.footer.fallback_reason = Some(failure.to_string());
                Err(failed)
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::backends::{roles, CaseScript, EditorMode, EditorScript, InstanceSpec, MockBackend, MockScript};
    use serde_json::Value;

    pub(crate) fn state_for(route: Route) -> ExecutionState {
        let img = ImageBuffer::filled(8, 8, [10, 20, 30, 255]).unwrap();
        let req = EditRequest::new(img, "make it red").unwrap();
        ExecutionState::new(&req, route, QueryProfile::permissive("make it red"), 12)
    }

    pub(crate) fn push_step(state: &mut ExecutionState, action: ActionKind) {
        let index = state.step_count();
        state.history.push(StepRecord {
            index,
            action,
            allowed: vec![action],
            choice: Choice::Forced,
            calls: vec![],
            status: ToolStatus::Ok,
            error_kind: None,
            error_message: None,
            image: String::new(),
            instruction: state.current_instruction.clone(),
            ledger: CallLedger::default(),
            timestamp: index as u64,
        });
        if action == ActionKind::Edit {
            state.scratch.edits += 1;
        }
    }

    fn payload_offset(v: &Value) -> Option<[f64; 2]> {
        let a = v.as_array()?;
        Some([a.first()?.as_f64()?, a.get(1)?.as_f64()?])
    }

    fn request() -> EditRequest {
        let img = ImageBuffer::from_fn(64, 48, |x, y| [(x * 4) as u8, (y * 5) as u8, 90, 255]).unwrap();
        EditRequest::new(img, "make the mug blue").unwrap()
    }

    const PROFILE: &str =
        r#"{"target":"mug","constraint":"none","scope":"localized","scene_context":"desk","small_target":true,"multi_target":false}"#;
    const DONE: &str = r#"{"status":"done","is_finished":true,"reasoning":"ok"}"#;
    const NOT_DONE: &str = r#"{"status":"no","is_finished":false,"reasoning":"not yet"}"#;

    fn engine(case: CaseScript, config: EngineConfig) -> Engine {
        let backend = MockBackend::new(MockScript::default().with_case("k", case));
        Engine::new(Arc::new(backend), config).unwrap().with_retry_limit(0)
    }

    fn mug() -> InstanceSpec {
        InstanceSpec::rel(RelBox::new(300.0, 250.0, 200.0, 250.0).unwrap(), 0.9)
    }

    #[test]
    fn route_c_walks_the_local_graph() {
        let case = CaseScript::default()
            .reply(roles::PROFILE, &[PROFILE])
            .reply(roles::ROUTER, &["C"])
            .reply(roles::VERIFY, &[DONE])
            .segment(vec![mug()])
            .editor(EditorScript::Mode(EditorMode::Invert));
        let e = engine(case, EngineConfig::default());
        let out = e.run_session("k", &request()).unwrap();
        use ActionKind::*;
        assert_eq!(out.trace.actions(), vec![Localize, Crop, Edit, Compose, Verify, Terminate]);
        assert_eq!(out.route(), Some(Route::CLocal));
        assert!(!out.fallback());
        assert_eq!(out.ledger.editor_calls, 1);
        assert_eq!(out.ledger.segmenter_calls, 1);
        assert_eq!(out.image.dims(), request().image.dims());
        // The two two-way choices went to the planner, whose silence means canonical.
        assert!(out.trace.steps.iter().any(|s| s.choice == Choice::Canonical));
    }

    #[test]
    fn route_b_moves_the_object() {
        let case = CaseScript::default()
            .reply(roles::PROFILE, &[PROFILE])
            .reply(roles::ROUTER, &["B"])
            .reply(roles::OFFSET, &["[200, 0]"])
            .reply(roles::PLANNER, &["verify"])
            .reply(roles::VERIFY, &[DONE])
            .segment(vec![mug()])
            .editor(EditorScript::Mode(EditorMode::Echo));
        let out = engine(case, EngineConfig::default()).run_session("k", &request()).unwrap();
        use ActionKind::*;
        assert_eq!(out.trace.actions(), vec![Isolate, Edit, EstimateOffset, Paste, Verify, Terminate]);
        let est = &out.trace.steps[2];
        assert_eq!(payload_offset(&est.calls[0].arguments["offset"]), Some([200.0, 0.0]));
        let src = &est.calls[0].arguments["box"];
        let dest = &est.calls[0].payload["box"];
        assert_eq!(dest[0].as_f64().unwrap() - src[0].as_f64().unwrap(), 200.0);
        assert_eq!((&dest[1], &dest[2], &dest[3]), (&src[1], &src[2], &src[3]));
        assert!(out.trace.steps[1].calls[0].arguments["instruction"].as_str().unwrap().starts_with("remove the mug"));
    }

    #[test]
    fn verify_retry_cap_triggers_a_single_fallback_edit() {
        let case = CaseScript::default()
            .reply(roles::PROFILE, &[PROFILE])
            .reply(roles::ROUTER, &["A"])
            .reply(roles::VERIFY, &[NOT_DONE])
            .reply(roles::PLANNER, &["edit"])
            .editor(EditorScript::Mode(EditorMode::Invert));
        let out = engine(case.clone(), EngineConfig::default()).run_session("k", &request()).unwrap();
        use ActionKind::*;
        assert_eq!(out.trace.actions(), vec![Edit, Verify, Edit, Verify]);
        assert!(out.fallback());
        assert_eq!(out.ledger.editor_calls, 3);
        // The fallback edits the untouched request.
        let inverted = ImageBuffer::from_fn(64, 48, |x, y| {
            let p = request().image.pixel(x, y);
            [255 - p[0], 255 - p[1], 255 - p[2], p[3]]
        })
        .unwrap();
        assert_eq!(out.image, inverted);

        let no_fb = EngineConfig { enable_fallback: false, ..EngineConfig::default() };
        let err = engine(case, no_fb).run_session("k", &request()).unwrap_err();
        assert!(err.reason.contains("not finished"), "{}", err.reason);
        assert_eq!(err.trace.footer.outcome, Outcome::Failed);
    }

    #[test]
    fn budget_is_never_exceeded() {
        let case = CaseScript::default()
            .reply(roles::PROFILE, &[PROFILE])
            .reply(roles::ROUTER, &["A"])
            .reply(roles::VERIFY, &[NOT_DONE])
            .reply(roles::PLANNER, &["edit"]);
        let cfg = EngineConfig { budget: 3, verify_retry_limit: 10, enable_fallback: false, ..EngineConfig::default() };
        let err = engine(case, cfg).run_session("k", &request()).unwrap_err();
        assert_eq!(err.trace.steps.len(), 3);
        assert!(err.reason.contains("budget"));
    }

    #[test]
    fn direct_and_bo2_call_counts() {
        let direct = EngineConfig::component_preset("a").unwrap();
        let out = engine(CaseScript::default(), direct).run_session("k", &request()).unwrap();
        assert_eq!((out.ledger.editor_calls, out.ledger.mllm_calls), (1, 0));
        assert_eq!(out.image, request().image);

        let bo2 = EngineConfig { bo2: true, ..EngineConfig::default() };
        let case = CaseScript::default().reply(roles::JUDGE, &["2"]).editor(EditorScript::Mode(EditorMode::Invert));
        let out = engine(case, bo2).run_session("k", &request()).unwrap();
        assert_eq!((out.ledger.editor_calls, out.ledger.role_calls(roles::JUDGE)), (2, 1));
        assert_eq!(out.trace.footer.selected, Some(1));
    }

    #[test]
    fn unrecoverable_tool_error_falls_back() {
        // No segmentation instances: localize fails.
        let case = CaseScript::default().reply(roles::PROFILE, &[PROFILE]).reply(roles::ROUTER, &["C"]).segment(vec![]);
        let out = engine(case, EngineConfig::default()).run_session("k", &request()).unwrap();
        assert!(out.fallback());
        assert_eq!(out.trace.steps.len(), 1);
        assert_eq!(out.trace.steps[0].error_kind.as_deref(), Some("NoInstances"));
        assert_eq!(out.ledger.editor_calls, 1);
    }

    #[test]
    fn illegal_planner_choice_is_replaced_by_the_canonical_move() {
        let case = CaseScript::default()
            .reply(roles::PROFILE, &[PROFILE])
            .reply(roles::ROUTER, &["C"])
            .reply(roles::PLANNER, &["paste"])
            .reply(roles::VERIFY, &[DONE])
            .segment(vec![mug()]);
        let out = engine(case, EngineConfig::default()).run_session("k", &request()).unwrap();
        for s in &out.trace.steps {
            assert!(s.allowed.contains(&s.action));
        }
        assert_eq!(out.trace.steps[2].choice, Choice::Canonical);
    }
}
