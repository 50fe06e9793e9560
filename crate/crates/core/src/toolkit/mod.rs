//! The agent-callable tool library.
//!
//! Geometric tools work on the rel1000 canvas and delegate pixel work to
//! [`crate::raster`]; model-backed tools go through a [`SessionClient`] so
//! their calls land in the session ledger. [`registry`] wraps every tool in
//! uniform [`ToolCall`]/[`ToolResult`] envelopes.

pub mod parse;
pub mod prompts;
pub mod registry;

use serde::Serialize;
use thiserror::Error;

use crate::backends::{BackendError, SessionClient};
use crate::geometry::{normalize_rel_box, offset_clamped, pixel_to_rel, rel_to_pixel, PixelBox, RelBox, RelOffset, REL_CANVAS};
use crate::raster::{self, ImageBuffer, Mask, PasteMode, RasterError};

pub use registry::{ArgKind, ArgSpec, Registry, ToolCall, ToolManifest, ToolResult, ToolStatus};

/// Smallest crop side, in rel units before conversion and in pixels after.
pub const MIN_CROP_SIDE: f64 = 8.0;
pub const MIN_CROP_PX: u32 = 8;

/// Multi-target segmentation keeps instances scoring strictly above this.
pub const MULTI_TARGET_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToolError {
    #[error("unknown tool '{0}'")]
    UnknownTool(String),
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("segmentation found no usable instance")]
    NoInstances,
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("model returned an empty reply")]
    EmptyReply,
}

impl ToolError {
    pub fn kind(&self) -> &'static str {
        match self {
            ToolError::UnknownTool(_) => "UnknownTool",
            ToolError::InvalidArguments(_) => "InvalidArguments",
            ToolError::InvalidImage(_) => "InvalidImage",
            ToolError::Raster(e) => e.kind(),
            ToolError::NoInstances => "NoInstances",
            ToolError::Backend(_) => "BackendError",
            ToolError::EmptyReply => "EmptyReply",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropOutput {
    pub patch: ImageBuffer,
    /// The region actually cropped; feed it back to [`croppaste_tool`].
    pub rel_box: RelBox,
    pub pixel_box: PixelBox,
}

/// Normalizes a raw corner box, guards against collapse and crops.
///
/// A zero-extent axis grows to [`MIN_CROP_SIDE`] rel units about its centre;
/// a patch narrower than [`MIN_CROP_PX`] grows symmetrically in pixels, both
/// shifted back inside the canvas/image. The returned `rel_box` is the pixel
/// box mapped back, so it round-trips exactly through `rel_to_pixel`.
pub fn crop_tool(image: &ImageBuffer, raw: [f64; 4]) -> Result<CropOutput, ToolError> {
    if !raw.iter().all(|v| v.is_finite()) {
        return Err(ToolError::InvalidArguments("crop box has a non-finite coordinate".into()));
    }
    let rel = match normalize_rel_box(raw) {
        Ok(b) => b,
        Err(_) => expand_degenerate(raw),
    };
    let dims = image.dims();
    let px = rel_to_pixel(&rel, dims);
    let (x, w) = widen_axis(px.x, px.w, dims.width);
    let (y, h) = widen_axis(px.y, px.h, dims.height);
    let pixel_box = PixelBox::new(x, y, w, h);
    let patch = raster::crop(image, pixel_box)?;
    Ok(CropOutput { patch, rel_box: pixel_to_rel(&pixel_box, dims), pixel_box })
}

fn expand_degenerate(raw: [f64; 4]) -> RelBox {
    let grow = |a: f64, b: f64| {
        let (lo, hi) = crate::geometry::ordered_clamped(a, b);
        if hi - lo >= MIN_CROP_SIDE {
            return (lo, hi - lo);
        }
        let centre = (lo + hi) / 2.0;
        let start = (centre - MIN_CROP_SIDE / 2.0).clamp(0.0, REL_CANVAS - MIN_CROP_SIDE);
        (start, MIN_CROP_SIDE)
    };
    let (x, w) = grow(raw[0], raw[2]);
    let (y, h) = grow(raw[1], raw[3]);
    RelBox::new(x, y, w, h).expect("expanded box lies on the canvas")
}

/// Widens `[start, start+len)` to at least `MIN_CROP_PX` (or the full extent).
fn widen_axis(start: u32, len: u32, extent: u32) -> (u32, u32) {
    let target = MIN_CROP_PX.min(extent);
    if len >= target {
        return (start, len);
    }
    let grow = target - len;
    let new_start = start.saturating_sub(grow / 2).min(extent - target);
    (new_start, target)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PasteOutput {
    pub image: ImageBuffer,
    pub mode: PasteMode,
    pub pixel_box: PixelBox,
    /// The editor changed the patch size and it was resampled back.
    pub resampled: bool,
}

/// Pastes an edited crop back where [`crop_tool`] took it from.
pub fn croppaste_tool(original: &ImageBuffer, edited_patch: &ImageBuffer, rel_box: &RelBox) -> Result<PasteOutput, ToolError> {
    let pixel_box = rel_to_pixel(rel_box, original.dims());
    let resampled = (edited_patch.width(), edited_patch.height()) != (pixel_box.w, pixel_box.h);
    let patch = if resampled { raster::resize_exact(edited_patch, pixel_box.w, pixel_box.h) } else { edited_patch.clone() };
    let (image, mode) = raster::mixed_paste(&patch, original, pixel_box)?;
    Ok(PasteOutput { image, mode, pixel_box, resampled })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceSummary {
    #[serde(rename = "box")]
    pub pixel_box: PixelBox,
    pub rel_box: RelBox,
    pub score: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    /// Every instance the segmenter returned, in its order.
    pub instances: Vec<InstanceSummary>,
    /// Fused mask over the kept instances, at source dimensions.
    pub mask: Mask,
    pub pixel_box: PixelBox,
    pub rel_box: RelBox,
    /// Source colours with the fused mask as alpha.
    pub cutout: ImageBuffer,
    /// Source with mask outlines (green) and kept boxes (red) drawn in.
    pub overlay: ImageBuffer,
}

impl SegmentationResult {
    pub fn kept(&self) -> impl Iterator<Item = &InstanceSummary> {
        self.instances.iter().filter(|i| i.kept)
    }
}

/// Text-prompted segmentation with single- or multi-target selection.
///
/// Single-target keeps the best-scoring instance (the first on ties).
/// Multi-target keeps every instance above [`MULTI_TARGET_THRESHOLD`] and ORs
/// their masks; the fused box is the union of the kept boxes.
pub fn sam3_tool(client: &SessionClient, image: &ImageBuffer, query: &str, multi_target: bool) -> Result<SegmentationResult, ToolError> {
    let raw = client.segment(image, query)?;
    let dims = image.dims();
    let keep: Vec<bool> = if multi_target {
        raw.iter().map(|i| i.score > MULTI_TARGET_THRESHOLD).collect()
    } else {
        let best = raw
            .iter()
            .enumerate()
            .fold(None::<(usize, f64)>, |acc, (k, i)| match acc {
                Some((_, s)) if s >= i.score => acc,
                _ => Some((k, i.score)),
            })
            .map(|(k, _)| k);
        (0..raw.len()).map(|k| Some(k) == best).collect()
    };

    let mut fused: Option<(Mask, PixelBox)> = None;
    for (inst, _) in raw.iter().zip(&keep).filter(|(_, k)| **k) {
        if (inst.mask.width(), inst.mask.height()) != (dims.width, dims.height) {
            return Err(ToolError::Backend(BackendError::Decode("instance mask does not match the image".into())));
        }
        fused = Some(match fused {
            None => (inst.mask.clone(), inst.region),
            Some((m, b)) => (m.or(&inst.mask), b.union(&inst.region)),
        });
    }
    let (mask, pixel_box) = fused.ok_or(ToolError::NoInstances)?;

    let instances = raw
        .iter()
        .zip(&keep)
        .map(|(i, k)| InstanceSummary { pixel_box: i.region, rel_box: pixel_to_rel(&i.region, dims), score: i.score, kept: *k })
        .collect::<Vec<_>>();
    let cutout = ImageBuffer::from_fn(dims.width, dims.height, |x, y| {
        let [r, g, b, _] = image.pixel(x, y);
        [r, g, b, if mask.get(x, y) { 255 } else { 0 }]
    })?;
    let kept_boxes: Vec<PixelBox> = instances.iter().filter(|i| i.kept).map(|i| i.pixel_box).collect();
    let overlay = draw_overlay(image, &mask, &kept_boxes);
    Ok(SegmentationResult { instances, mask, pixel_box, rel_box: pixel_to_rel(&pixel_box, dims), cutout, overlay })
}

fn draw_overlay(image: &ImageBuffer, mask: &Mask, boxes: &[PixelBox]) -> ImageBuffer {
    let (w, h) = (image.width(), image.height());
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let [r, g, b, _] = image.pixel(x, y);
            out.set_pixel(x, y, [r, g, b, 255]);
            let inside = mask.get(x, y);
            let edge = inside
                && (x == 0
                    || y == 0
                    || x + 1 == w
                    || y + 1 == h
                    || !mask.get(x - 1, y)
                    || !mask.get(x + 1, y)
                    || !mask.get(x, y - 1)
                    || !mask.get(x, y + 1));
            if edge {
                out.set_pixel(x, y, [0, 255, 0, 255]);
            }
        }
    }
    for b in boxes {
        let (x1, y1) = (b.x + b.w - 1, b.y + b.h - 1);
        for x in b.x..=x1 {
            out.set_pixel(x, b.y, [255, 0, 0, 255]);
            out.set_pixel(x, y1, [255, 0, 0, 255]);
        }
        for y in b.y..=y1 {
            out.set_pixel(b.x, y, [255, 0, 0, 255]);
            out.set_pixel(x1, y, [255, 0, 0, 255]);
        }
    }
    out
}

/// Destination box for a relocation: same size, moved and clamped.
pub fn target_tool(source: &RelBox, offset: RelOffset) -> RelBox {
    offset_clamped(source, offset)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmartPasteOutput {
    pub image: ImageBuffer,
    /// Destination box in background pixels.
    pub pixel_box: PixelBox,
    /// Where the fitted object actually landed.
    pub placed: PixelBox,
}

/// Trims a cutout to its opaque support, fits it into `dest` and composites it.
pub fn smartpaste_tool(cutout: &ImageBuffer, bg: &ImageBuffer, dest: &RelBox) -> Result<SmartPasteOutput, ToolError> {
    let (trimmed, _) = raster::alpha_trim(cutout)?;
    let pixel_box = rel_to_pixel(dest, bg.dims());
    let (fitted, at) = raster::resample_fit(&trimmed, pixel_box.w, pixel_box.h);
    let placed = PixelBox::new(pixel_box.x + at.x, pixel_box.y + at.y, fitted.width(), fitted.height());
    let image = raster::alpha_composite(&fitted, bg, placed.x as i64, placed.y as i64)?;
    Ok(SmartPasteOutput { image, pixel_box, placed })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RewriteOutcome {
    pub instruction: String,
    pub was_rewritten: bool,
}

/// Rewrites an unclear instruction; any failure keeps the original.
pub fn fixprompt_tool(client: &SessionClient, image: &ImageBuffer, instruction: &str) -> RewriteOutcome {
    let keep = || RewriteOutcome { instruction: instruction.to_string(), was_rewritten: false };
    let reply = match client.complete(&prompts::fixprompt(image, instruction)) {
        Ok(r) => r,
        Err(e) => {
            tracing::warn!(error = %e, "rewrite call failed, keeping the instruction");
            return keep();
        }
    };
    let text = reply.trim().trim_matches(|c| c == '"' || c == '`').trim();
    if text.is_empty() || parse::bare_word(text) == "direct" || text == instruction {
        return keep();
    }
    RewriteOutcome { instruction: text.to_string(), was_rewritten: true }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct FinishVerdict {
    pub status: String,
    pub is_finished: bool,
    pub reasoning: String,
}

impl FinishVerdict {
    pub fn unparseable() -> Self {
        Self { status: "unparseable".into(), is_finished: false, reasoning: "unparseable".into() }
    }

    /// Reads a verdict document; anything without a readable `is_finished`
    /// is treated as not finished.
    pub fn parse(reply: &str) -> Self {
        let Some(map) = parse::json_object(reply) else {
            return Self::unparseable();
        };
        let Some(is_finished) = map.get("is_finished").and_then(parse::loose_bool) else {
            return Self::unparseable();
        };
        let text = |key: &str| map.get(key).and_then(|v| v.as_str()).unwrap_or_default().to_string();
        Self { status: text("status"), is_finished, reasoning: text("reasoning") }
    }
}

pub fn ifinish_tool(
    client: &SessionClient,
    original: &ImageBuffer,
    current: &ImageBuffer,
    instruction: &str,
) -> Result<FinishVerdict, ToolError> {
    let reply = client.complete(&prompts::ifinish(original, current, instruction))?;
    Ok(FinishVerdict::parse(&reply))
}

/// Corrective prompt for integration artifacts, at most
/// [`prompts::MAX_REFINEMENT_CHARS`] characters.
pub fn refinement_tool(client: &SessionClient, original: &ImageBuffer, composed: &ImageBuffer) -> Result<String, ToolError> {
    let reply = client.complete(&prompts::refinement(original, composed))?;
    let prompt: String = reply.trim().chars().take(prompts::MAX_REFINEMENT_CHARS).collect();
    if prompt.trim().is_empty() {
        return Err(ToolError::EmptyReply);
    }
    Ok(prompt)
}
