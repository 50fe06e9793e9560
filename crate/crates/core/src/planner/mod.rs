//! Query profiling, routing and the route-conditioned execution loop.
//!
//! A session profiles the request, picks a [`Route`], then repeatedly asks
//! [`graph::allowed_actions`] what may happen next, lets the planner choose
//! among those, and executes the choice through the tool registry until the
//! session terminates, fails, or runs out of budget.

pub mod config;
pub mod engine;
pub mod graph;
pub mod profile;
pub mod trace;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::raster::ImageBuffer;

pub use config::{ConfigError, EngineConfig};
pub use engine::{Engine, ExecutionState, Scratch, SessionFailed, SessionOutput, StepFailure};
pub use graph::{allowed_actions, canonical_action};
pub use profile::{Constraint, QueryProfile, Scope};
pub use trace::{CallRecord, Choice, Outcome, SessionMode, StepRecord, Trace, TraceFooter, TraceHeader, TraceParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Route {
    #[serde(rename = "A_direct")]
    ADirect,
    #[serde(rename = "A_rewrite")]
    ARewrite,
    #[serde(rename = "B_spatial")]
    BSpatial,
    #[serde(rename = "C_local")]
    CLocal,
}

impl Route {
    pub const ALL: [Route; 4] = [Route::ADirect, Route::ARewrite, Route::BSpatial, Route::CLocal];

    pub fn as_str(self) -> &'static str {
        match self {
            Route::ADirect => "A_direct",
            Route::ARewrite => "A_rewrite",
            Route::BSpatial => "B_spatial",
            Route::CLocal => "C_local",
        }
    }

    /// Short code used on the command line and in router replies.
    pub fn code(self) -> &'static str {
        match self {
            Route::ADirect => "A",
            Route::ARewrite => "A2",
            Route::BSpatial => "B",
            Route::CLocal => "C",
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Route {
    type Err = String;

    /// Accepts codes (`A`, `A1`, `A2`, `B`, `C`), full names and the plain
    /// words `direct`, `rewrite`, `spatial`, `local`, case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', ' '], "_");
        let norm = norm.strip_prefix("ROUTE_").unwrap_or(&norm);
        match norm {
            "A" | "A1" | "A_DIRECT" | "DIRECT" => Ok(Route::ADirect),
            "A2" | "A_REWRITE" | "REWRITE" => Ok(Route::ARewrite),
            "B" | "B_SPATIAL" | "SPATIAL" => Ok(Route::BSpatial),
            "C" | "C_LOCAL" | "LOCAL" => Ok(Route::CLocal),
            _ => Err(format!("unknown route '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Rewrite,
    Localize,
    Crop,
    Isolate,
    EstimateOffset,
    Edit,
    Paste,
    Compose,
    Refine,
    Verify,
    Terminate,
}

impl ActionKind {
    pub const ALL: [ActionKind; 11] = [
        ActionKind::Rewrite,
        ActionKind::Localize,
        ActionKind::Crop,
        ActionKind::Isolate,
        ActionKind::EstimateOffset,
        ActionKind::Edit,
        ActionKind::Paste,
        ActionKind::Compose,
        ActionKind::Refine,
        ActionKind::Verify,
        ActionKind::Terminate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Rewrite => "rewrite",
            ActionKind::Localize => "localize",
            ActionKind::Crop => "crop",
            ActionKind::Isolate => "isolate",
            ActionKind::EstimateOffset => "estimate_offset",
            ActionKind::Edit => "edit",
            ActionKind::Paste => "paste",
            ActionKind::Compose => "compose",
            ActionKind::Refine => "refine",
            ActionKind::Verify => "verify",
            ActionKind::Terminate => "terminate",
        }
    }

    /// Reads a planner reply word; `offset` and `stop`/`finish` are accepted aliases.
    pub fn parse(word: &str) -> Option<Self> {
        let w = word.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        ActionKind::ALL.into_iter().find(|k| k.as_str() == w).or(match w.as_str() {
            "offset" => Some(ActionKind::EstimateOffset),
            "stop" | "finish" | "done" => Some(ActionKind::Terminate),
            _ => None,
        })
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The user's request: an image and what to do to it.
#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    pub image: ImageBuffer,
    pub instruction: String,
}

impl EditRequest {
    pub fn new(image: ImageBuffer, instruction: impl Into<String>) -> Result<Self, String> {
        let instruction = instruction.into();
        if instruction.trim().is_empty() {
            return Err("instruction is empty".into());
        }
        Ok(Self { image, instruction })
    }
}
