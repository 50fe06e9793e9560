//! Scripted backend for offline runs.
//!
//! A [`MockScript`] holds one [`CaseScript`] per case id plus an optional
//! default. Completion replies are transcripts keyed by role; the n-th call
//! for a role gets the n-th entry, and the last entry repeats once the list is
//! exhausted. Lookups never depend on mutable backend state, so a session's
//! calls are a pure function of the script and the session's own call order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, CallContext, CompletionRequest, RawInstance};
use crate::geometry::{rel_to_pixel, PixelBox, RelBox};
use crate::raster::{ImageBuffer, Mask};

/// A transcript entry with this text fails the call with a transport error.
pub const TRANSPORT_FAILURE: &str = "!transport";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditorMode {
    /// Return the input unchanged.
    Echo,
    /// Return the colour-inverted input.
    Invert,
    /// Fail every call with a transport error.
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EditorScript {
    Mode(EditorMode),
    /// PNG files returned in call order, relative to the script file.
    Images {
        images: Vec<PathBuf>,
    },
}

/// A scripted segmentation instance; the mask fills the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub pixel_box: Option<PixelBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_box: Option<RelBox>,
    pub score: f64,
}

impl InstanceSpec {
    pub fn rel(rel_box: RelBox, score: f64) -> Self {
        Self { pixel_box: None, rel_box: Some(rel_box), score }
    }

    pub fn pixels(pixel_box: PixelBox, score: f64) -> Self {
        Self { pixel_box: Some(pixel_box), rel_box: None, score }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaseScript {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub editor: Option<EditorScript>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment: Option<Vec<InstanceSpec>>,
    pub complete: BTreeMap<String, Vec<String>>,
}

impl CaseScript {
    pub fn reply(mut self, role: &str, replies: &[&str]) -> Self {
        self.complete.insert(role.to_string(), replies.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn editor(mut self, editor: EditorScript) -> Self {
        self.editor = Some(editor);
        self
    }

    pub fn segment(mut self, instances: Vec<InstanceSpec>) -> Self {
        self.segment = Some(instances);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub default: Option<CaseScript>,
    pub cases: BTreeMap<String, CaseScript>,
}

impl MockScript {
    pub fn with_case(mut self, id: &str, script: CaseScript) -> Self {
        self.cases.insert(id.to_string(), script);
        self
    }

    pub fn with_default(mut self, script: CaseScript) -> Self {
        self.default = Some(script);
        self
    }
}

pub struct MockBackend {
    script: MockScript,
    base_dir: PathBuf,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self { script, base_dir: PathBuf::from(".") }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| BackendError::Config(format!("reading mock script {}: {e}", path.display())))?;
        let script: MockScript =
            serde_json::from_str(&text).map_err(|e| BackendError::Config(format!("parsing mock script {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { script, base_dir })
    }

    fn case(&self, id: &str) -> Option<&CaseScript> {
        self.script.cases.get(id)
    }

    fn missing(ctx: &CallContext) -> BackendError {
        BackendError::MissingFixture { case: ctx.case_id.clone(), role: ctx.role.clone() }
    }

    fn pick<'a, T>(&'a self, ctx: &CallContext, get: impl Fn(&'a CaseScript) -> Option<&'a T>) -> Option<&'a T> {
        self.case(&ctx.case_id).and_then(&get).or_else(|| self.script.default.as_ref().and_then(&get))
    }
}

fn nth<T>(items: &[T], seq: u32) -> Option<&T> {
    items.get(seq as usize).or_else(|| items.last())
}

impl Backend for MockBackend {
    fn edit(&self, ctx: &CallContext, image: &ImageBuffer, _instruction: &str) -> Result<ImageBuffer, BackendError> {
        let script = self.pick(ctx, |c| c.editor.as_ref());
        match script {
            None | Some(EditorScript::Mode(EditorMode::Echo)) => Ok(image.clone()),
            Some(EditorScript::Mode(EditorMode::Invert)) => {
                let mut out = image.clone();
                for y in 0..out.height() {
                    for x in 0..out.width() {
                        let [r, g, b, a] = out.pixel(x, y);
                        out.set_pixel(x, y, [255 - r, 255 - g, 255 - b, a]);
                    }
                }
                Ok(out)
            }
            Some(EditorScript::Mode(EditorMode::Fail)) => Err(BackendError::Transport("scripted editor failure".into())),
            Some(EditorScript::Images { images }) => {
                let path = nth(images, ctx.seq).ok_or_else(|| Self::missing(ctx))?;
                let path = self.base_dir.join(path);
                let bytes = std::fs::read(&path).map_err(|e| BackendError::Decode(format!("mock image {}: {e}", path.display())))?;
                ImageBuffer::decode_png(&bytes).map_err(|e| BackendError::Decode(e.to_string()))
            }
        }
    }

    fn segment(&self, ctx: &CallContext, image: &ImageBuffer, _query: &str) -> Result<Vec<RawInstance>, BackendError> {
        let specs = self.pick(ctx, |c| c.segment.as_ref()).ok_or_else(|| Self::missing(ctx))?;
        let dims = image.dims();
        specs
            .iter()
            .map(|spec| {
                let region = match (spec.pixel_box, spec.rel_box) {
                    (Some(b), _) => b,
                    (None, Some(r)) => rel_to_pixel(&r, dims),
                    (None, None) => return Err(BackendError::Decode("mock instance without a box".into())),
                };
                if !region.fits(dims) {
                    return Err(BackendError::Decode(format!("mock box {region:?} outside image")));
                }
                Ok(RawInstance { mask: Mask::from_box(dims, region), region, score: spec.score })
            })
            .collect()
    }

    fn complete(&self, ctx: &CallContext, _request: &CompletionRequest) -> Result<String, BackendError> {
        // "score:direct" falls back to "score"
        let base_role = ctx.role.split(':').next().unwrap_or(&ctx.role);
        let replies = self
            .pick(ctx, |c| c.complete.get(&ctx.role))
            .or_else(|| self.pick(ctx, |c| c.complete.get(base_role)))
            .ok_or_else(|| Self::missing(ctx))?;
        // A retry reads past the reply that failed it.
        let reply = nth(replies, ctx.seq + ctx.attempt).ok_or_else(|| Self::missing(ctx))?;
        if reply == TRANSPORT_FAILURE {
            return Err(BackendError::Transport("scripted transport failure".into()));
        }
        Ok(reply.clone())
    }

    fn is_mock(&self) -> bool {
        true
    }
}
