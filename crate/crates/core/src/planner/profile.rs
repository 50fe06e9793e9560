//! Query profiling and route selection.

use serde::{Deserialize, Serialize};

use super::{EditRequest, EngineConfig, Route};
use crate::backends::SessionClient;
use crate::toolkit::{parse, prompts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Ambiguity,
    StructuralDependency,
    BackgroundCoupling,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Localized,
    SceneLevel,
}

/// What the profiler learned about a request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryProfile {
    pub target: String,
    pub constraint: Constraint,
    pub scope: Scope,
    pub scene_context: String,
    pub small_target: bool,
    pub multi_target: bool,
}

impl QueryProfile {
    /// Used when the profiler's reply cannot be read; steers routing toward
    /// plain editing and uses the instruction itself as the target text.
    pub fn permissive(instruction: &str) -> Self {
        Self {
            target: instruction.to_string(),
            constraint: Constraint::None,
            scope: Scope::SceneLevel,
            scene_context: String::new(),
            small_target: false,
            multi_target: false,
        }
    }

    /// Parses a profile document. `target`, `constraint` and `scope` are
    /// required; the rest default to empty/false.
    pub fn parse(reply: &str) -> Option<Self> {
        let map = parse::json_object(reply)?;
        let target = map.get("target")?.as_str()?.trim().to_string();
        if target.is_empty() {
            return None;
        }
        let constraint = serde_json::from_value(norm(map.get("constraint")?)?).ok()?;
        let scope = serde_json::from_value(norm(map.get("scope")?)?).ok()?;
        let flag = |key: &str| map.get(key).and_then(parse::loose_bool).unwrap_or(false);
        Some(Self {
            target,
            constraint,
            scope,
            scene_context: map.get("scene_context").and_then(|v| v.as_str()).unwrap_or_default().trim().to_string(),
            small_target: flag("small_target"),
            multi_target: flag("multi_target"),
        })
    }
}

fn norm(v: &serde_json::Value) -> Option<serde_json::Value> {
    let s = v.as_str()?.trim().to_ascii_lowercase().replace(['-', ' '], "_");
    Some(serde_json::Value::String(s))
}

/// One profiling round trip; unreadable replies and failures give the
/// permissive profile.
pub fn profile(client: &SessionClient, request: &EditRequest) -> QueryProfile {
    match client.complete(&prompts::profile(&request.image, &request.instruction)) {
        Ok(reply) => QueryProfile::parse(&reply).unwrap_or_else(|| {
            tracing::warn!(case = client.case_id(), "profile reply unreadable, using the permissive profile");
            QueryProfile::permissive(&request.instruction)
        }),
        Err(e) => {
            tracing::warn!(case = client.case_id(), error = %e, "profile call failed, using the permissive profile");
            QueryProfile::permissive(&request.instruction)
        }
    }
}

fn describe(route: Route) -> &'static str {
    match route {
        Route::CLocal => "edit a small or entangled target inside a cropped local workspace, then paste it back",
        Route::BSpatial => "isolate the object, fill in the vacated background, and re-place it at a new position",
        Route::ARewrite => "rewrite the unclear instruction into an explicit action, then edit the full image",
        Route::ADirect => "edit the full image with the instruction as given",
    }
}

/// Reads a router reply; `None` if it names no route.
pub fn parse_route(reply: &str) -> Option<Route> {
    if let Some(map) = parse::json_object(reply) {
        if let Some(r) = map.get("route").and_then(|v| v.as_str()) {
            return r.parse().ok();
        }
    }
    let bare = parse::bare_word(reply);
    if let Ok(r) = bare.parse() {
        return Some(r);
    }
    bare.split(|c: char| c.is_whitespace() || c == ':' || c == ',')
        .filter(|w| !w.is_empty() && *w != "route")
        .find_map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '_').parse().ok())
}

/// Picks the route. An oracle wins outright; with a single enabled route no
/// call is made; otherwise one router call, and anything unreadable or
/// disabled becomes `A_direct`.
pub fn route(client: &SessionClient, request: &EditRequest, profile: &QueryProfile, config: &EngineConfig) -> Route {
    if let Some(oracle) = config.oracle_route {
        return oracle;
    }
    let enabled = config.enabled_routes();
    if enabled.len() == 1 {
        return enabled[0];
    }
    let choices: Vec<prompts::RouteChoice> =
        enabled.iter().map(|r| prompts::RouteChoice { code: r.code(), description: describe(*r) }).collect();
    let mut shown = profile.clone();
    if !config.enable_context {
        shown.scene_context.clear();
    }
    let profile_json = serde_json::to_string(&shown).expect("profile serializes");
    let context = config.enable_context.then_some(profile.scene_context.as_str()).filter(|c| !c.is_empty());
    let req = prompts::router(&request.image, &request.instruction, &profile_json, context, &choices);
    match client.complete(&req) {
        Ok(reply) => match parse_route(&reply) {
            Some(r) if enabled.contains(&r) => r,
            other => {
                tracing::warn!(case = client.case_id(), reply = %reply, parsed = ?other, "router reply unusable, using A_direct");
                Route::ADirect
            }
        },
        Err(e) => {
            tracing::warn!(case = client.case_id(), error = %e, "router call failed, using A_direct");
            Route::ADirect
        }
    }
}
