//! Per-route action graphs.
//!
//! Successor lists are ordered: the first entry is the canonical move, taken
//! whenever the planner's reply is missing, unreadable or not allowed.
//!
//! ```text
//! A: [rewrite] → edit → verify → terminate | (edit → verify …)
//! B: isolate → edit (background) → estimate_offset → paste → [refine] → verify → terminate | (estimate_offset …)
//! C: localize → crop → [rewrite] → edit → compose → [refine] → verify → terminate | (crop … | localize …)
//! ```
//!
//! Without verification the node after `paste`/`compose`/`edit` that would
//! be `verify` is `terminate`.

use super::engine::ExecutionState;
use super::{ActionKind, EngineConfig, Route};
use ActionKind::*;

/// Graph successors of the state's last action, canonical first.
pub fn successors(state: &ExecutionState, config: &EngineConfig) -> Vec<ActionKind> {
    let close = if config.enable_ifinish { Verify } else { Terminate };
    let last = state.history.last().map(|s| s.action);
    let finished = state.scratch.last_verdict.as_ref().map(|v| v.is_finished);
    match (state.route, last) {
        (_, Some(Terminate)) => vec![],
        (_, Some(Verify)) if finished == Some(true) => vec![Terminate],

        (Route::ARewrite, None) => vec![Rewrite],
        (Route::ADirect, None) => vec![Edit],
        (Route::ADirect | Route::ARewrite, Some(Rewrite)) => vec![Edit],
        (Route::ADirect | Route::ARewrite, Some(Edit)) => vec![close],
        (Route::ADirect | Route::ARewrite, Some(Verify)) => vec![Edit, Terminate],

        (Route::BSpatial, None) => vec![Isolate],
        (Route::BSpatial, Some(Isolate)) => vec![Edit],
        (Route::BSpatial, Some(Edit)) => vec![EstimateOffset],
        (Route::BSpatial, Some(EstimateOffset)) => vec![Paste],
        (Route::BSpatial, Some(Paste)) => vec![close, Refine],
        (Route::BSpatial, Some(Refine)) => vec![close],
        (Route::BSpatial, Some(Verify)) => vec![EstimateOffset, Terminate],

        (Route::CLocal, None) => vec![Localize],
        (Route::CLocal, Some(Localize)) => vec![Crop],
        (Route::CLocal, Some(Crop)) if config.enable_rewrite => vec![Edit, Rewrite],
        (Route::CLocal, Some(Crop | Rewrite)) => vec![Edit],
        (Route::CLocal, Some(Edit)) => vec![Compose],
        (Route::CLocal, Some(Compose)) => vec![close, Refine],
        (Route::CLocal, Some(Refine)) => vec![close],
        (Route::CLocal, Some(Verify)) => vec![Crop, Localize, Terminate],

        // Only reachable when the planner is unconstrained.
        _ if state.scratch.edits == 0 => vec![Edit],
        _ => vec![close],
    }
}

/// Actions the planner may choose from next.
///
/// With graph constraints on, the route graph's successors; otherwise every
/// action (minus `verify` when verification is off), still ordered with the
/// graph's canonical move first.
pub fn allowed_actions(state: &ExecutionState, config: &EngineConfig) -> Vec<ActionKind> {
    let graph = successors(state, config);
    if config.enable_mdp {
        return graph;
    }
    let mut all = graph;
    for k in ActionKind::ALL {
        if !all.contains(&k) && (k != Verify || config.enable_ifinish) {
            all.push(k);
        }
    }
    all
}

/// The move taken when the planner gives no usable answer.
pub fn canonical_action(state: &ExecutionState, config: &EngineConfig) -> ActionKind {
    successors(state, config).first().copied().unwrap_or(Terminate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::engine::tests::{push_step, state_for};
    use crate::toolkit::FinishVerdict;

    fn cfg() -> EngineConfig {
        EngineConfig::default()
    }

    #[test]
    fn route_c_starts_with_localize() {
        let s = state_for(Route::CLocal);
        assert_eq!(allowed_actions(&s, &cfg()), vec![Localize]);
    }

    #[test]
    fn route_a_retry_edge() {
        let mut s = state_for(Route::ADirect);
        assert_eq!(allowed_actions(&s, &cfg()), vec![Edit]);
        push_step(&mut s, Edit);
        assert_eq!(allowed_actions(&s, &cfg()), vec![Verify]);
        push_step(&mut s, Verify);
        s.scratch.last_verdict = Some(FinishVerdict { status: "no".into(), is_finished: false, reasoning: String::new() });
        assert_eq!(allowed_actions(&s, &cfg()), vec![Edit, Terminate]);
        s.scratch.last_verdict.as_mut().unwrap().is_finished = true;
        assert_eq!(allowed_actions(&s, &cfg()), vec![Terminate]);
    }

    #[test]
    fn route_b_walk() {
        let mut s = state_for(Route::BSpatial);
        let mut seen = Vec::new();
        for step in [Isolate, Edit, EstimateOffset, Paste, Refine] {
            seen.push(allowed_actions(&s, &cfg()));
            push_step(&mut s, step);
        }
        seen.push(allowed_actions(&s, &cfg()));
        assert_eq!(seen, vec![vec![Isolate], vec![Edit], vec![EstimateOffset], vec![Paste], vec![Verify, Refine], vec![Verify]]);
    }

    #[test]
    fn route_c_rewrite_and_ifinish_switches() {
        let mut s = state_for(Route::CLocal);
        push_step(&mut s, Localize);
        push_step(&mut s, Crop);
        assert_eq!(allowed_actions(&s, &cfg()), vec![Edit, Rewrite]);
        let no_rw = EngineConfig { enable_rewrite: false, ..cfg() };
        assert_eq!(allowed_actions(&s, &no_rw), vec![Edit]);
        push_step(&mut s, Edit);
        push_step(&mut s, Compose);
        let no_verify = EngineConfig { enable_ifinish: false, ..cfg() };
        assert_eq!(allowed_actions(&s, &no_verify), vec![Terminate, Refine]);
    }

    #[test]
    fn unconstrained_planner_sees_everything() {
        let s = state_for(Route::CLocal);
        let free = EngineConfig { enable_mdp: false, ..cfg() };
        let all = allowed_actions(&s, &free);
        assert_eq!(all.len(), ActionKind::ALL.len());
        assert_eq!(all[0], Localize);
        let free = EngineConfig { enable_mdp: false, enable_ifinish: false, ..cfg() };
        assert!(!allowed_actions(&s, &free).contains(&Verify));
    }
}
