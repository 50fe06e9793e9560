//! Prompt templates for every `/v1/complete` role.
//!
//! Bump [`PROMPT_VERSION`] whenever wording changes; it is stamped into every
//! trace header so recorded sessions can be matched to the prompts that
//! produced them.

use crate::backends::{roles, CompletionRequest};
use crate::raster::ImageBuffer;

pub const PROMPT_VERSION: &str = "editflow-prompts/1";

pub const MAX_REFINEMENT_CHARS: usize = 200;

/// Instruction for the background-completion edit that empties the source
/// region before an isolated object is re-placed.
pub fn background_completion(target: &str) -> String {
    format!("remove the {target} and fill the background naturally")
}

pub fn fixprompt(image: &ImageBuffer, instruction: &str) -> CompletionRequest {
    CompletionRequest::new(roles::REWRITE)
        .text(
            "You prepare instructions for an image editing model.\n\
             If the instruction below already states a concrete, unambiguous physical action on a \
             visible target, reply with the single word DIRECT.\n\
             Otherwise reply with one rewritten instruction that names the target explicitly and \
             describes only the visible change to make. Reply with the instruction text only.",
        )
        .text(format!("Instruction: {instruction}"))
        .image("source", image)
}

pub fn ifinish(original: &ImageBuffer, current: &ImageBuffer, instruction: &str) -> CompletionRequest {
    CompletionRequest::new(roles::VERIFY)
        .text(
            "Judge whether an edit is complete. Compare the original image with the current result.\n\
             Only the core requested action matters: ignore small artifacts, texture noise and \
             minor style differences. Decide whether the requested action itself has happened.\n\
             Reply with JSON: {\"status\": \"<short label>\", \"is_finished\": true|false, \"reasoning\": \"<one sentence>\"}",
        )
        .text(format!("Instruction: {instruction}"))
        .image("original", original)
        .image("current", current)
}

pub fn refinement(original: &ImageBuffer, composed: &ImageBuffer) -> CompletionRequest {
    CompletionRequest::new(roles::REFINE)
        .text(format!(
            "A patch was pasted into the original image. Inspect only the integration: cut-off object parts, \
             absent or wrong shadows, visible seams along the pasted region.\n\
             Reply with one short editing prompt (at most {MAX_REFINEMENT_CHARS} characters) that fixes them."
        ))
        .image("original", original)
        .image("composed", composed)
}

pub fn profile(image: &ImageBuffer, instruction: &str) -> CompletionRequest {
    CompletionRequest::new(roles::PROFILE)
        .text(
            "Summarise this image editing request. Reply with JSON:\n\
             {\"target\": \"<object or region to change>\",\n \
             \"constraint\": \"ambiguity\" | \"structural_dependency\" | \"background_coupling\" | \"none\",\n \
             \"scope\": \"localized\" | \"scene_level\",\n \
             \"scene_context\": \"<one sentence describing the whole scene>\",\n \
             \"small_target\": true|false,\n \
             \"multi_target\": true|false}",
        )
        .text(format!("Instruction: {instruction}"))
        .image("source", image)
}

/// One routing option as shown to the router.
pub struct RouteChoice {
    pub code: &'static str,
    pub description: &'static str,
}

pub fn router(
    image: &ImageBuffer,
    instruction: &str,
    profile_json: &str,
    scene_context: Option<&str>,
    choices: &[RouteChoice],
) -> CompletionRequest {
    let mut options = String::new();
    for c in choices {
        options.push_str(&format!("{}: {}\n", c.code, c.description));
    }
    let mut req = CompletionRequest::new(roles::ROUTER)
        .text(format!(
            "Choose how to execute this image edit. First decide whether the edit needs a local \
             workspace or must move an object; otherwise execute on the full image, rewriting the \
             instruction only if it is unclear.\nOptions:\n{options}Reply with the option code only."
        ))
        .text(format!("Instruction: {instruction}"))
        .text(format!("Profile: {profile_json}"));
    if let Some(ctx) = scene_context {
        req = req.text(format!("Scene: {ctx}"));
    }
    req.image("source", image)
}

pub fn planner(state_summary: &str, allowed: &[&str], current: &ImageBuffer) -> CompletionRequest {
    CompletionRequest::new(roles::PLANNER)
        .text(format!(
            "You control an image editing session step by step.\n{state_summary}\n\
             Allowed next actions: {}.\nReply with exactly one action name.",
            allowed.join(", ")
        ))
        .image("current", current)
}

pub fn offset(image: &ImageBuffer, instruction: &str, source_box: [f64; 4]) -> CompletionRequest {
    CompletionRequest::new(roles::OFFSET)
        .text(format!(
            "The image is addressed on a 1000x1000 canvas. The object to move occupies \
             [x, y, w, h] = [{:.1}, {:.1}, {:.1}, {:.1}].\n\
             Reply with the displacement as a JSON array [dx, dy] in canvas units.",
            source_box[0], source_box[1], source_box[2], source_box[3]
        ))
        .text(format!("Instruction: {instruction}"))
        .image("source", image)
}

pub fn judge(instruction: &str, first: &ImageBuffer, second: &ImageBuffer, source: &ImageBuffer) -> CompletionRequest {
    CompletionRequest::new(roles::JUDGE)
        .text("Two candidate edits of the source image follow. Reply 1 or 2 for the one that better carries out the instruction.")
        .text(format!("Instruction: {instruction}"))
        .image("source", source)
        .image("candidate_1", first)
        .image("candidate_2", second)
}

pub fn score(role: &str, instruction: &str, source: &ImageBuffer, result: &ImageBuffer) -> CompletionRequest {
    CompletionRequest::new(role)
        .text("Rate how well the result carries out the instruction while keeping everything else intact. Reply with a single number.")
        .text(format!("Instruction: {instruction}"))
        .image("source", source)
        .image("result", result)
}
