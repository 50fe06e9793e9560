//! Uniform envelopes around the typed tools.
//!
//! Every tool has a [`ToolManifest`] describing its arguments, input images,
//! payload fields and output images. [`Registry::invoke`] validates a
//! [`ToolCall`] against the manifest, runs the tool and always returns a
//! [`ToolResult`]; failures come back as `status = error` with a stable
//! `error_kind`.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Map, Value};

use super::{crop_tool, croppaste_tool, fixprompt_tool, ifinish_tool, refinement_tool, sam3_tool, smartpaste_tool, target_tool, ToolError};
use crate::backends::SessionClient;
use crate::geometry::{RelBox, RelOffset};
use crate::raster::ImageBuffer;

pub const CROP: &str = "crop_tool";
pub const CROPPASTE: &str = "croppaste_tool";
pub const SAM3: &str = "sam3_tool";
pub const TARGET: &str = "target_tool";
pub const SMARTPASTE: &str = "smartpaste_tool";
pub const FIXPROMPT: &str = "fixprompt_tool";
pub const IFINISH: &str = "ifinish_tool";
pub const REFINEMENT: &str = "refinement_tool";
/// The editor model itself, exposed as a tool.
pub const EDIT: &str = "edit";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgKind {
    /// Non-empty string.
    Text,
    Bool,
    Number,
    /// Four numbers: raw corners or `[x, y, w, h]` depending on the tool.
    Rect,
    /// `[dx, dy]`.
    Offset,
    List,
}

impl ArgKind {
    fn schema(self) -> Value {
        let num = json!({"type": "number"});
        match self {
            ArgKind::Text => json!({"type": "string", "minLength": 1}),
            ArgKind::Bool => json!({"type": "boolean"}),
            ArgKind::Number => num,
            ArgKind::Rect => json!({"type": "array", "items": num, "minItems": 4, "maxItems": 4}),
            ArgKind::Offset => json!({"type": "array", "items": num, "minItems": 2, "maxItems": 2}),
            ArgKind::List => json!({"type": "array"}),
        }
    }

    fn accepts(self, v: &Value) -> bool {
        let numbers = |n: usize| v.as_array().is_some_and(|a| a.len() == n && a.iter().all(|x| x.as_f64().is_some_and(f64::is_finite)));
        match self {
            ArgKind::Text => v.as_str().is_some_and(|s| !s.trim().is_empty()),
            ArgKind::Bool => v.is_boolean(),
            ArgKind::Number => v.as_f64().is_some_and(f64::is_finite),
            ArgKind::Rect => numbers(4),
            ArgKind::Offset => numbers(2),
            ArgKind::List => v.is_array(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArgSpec {
    pub name: &'static str,
    pub kind: ArgKind,
    pub required: bool,
    pub description: &'static str,
}

const fn arg(name: &'static str, kind: ArgKind, description: &'static str) -> ArgSpec {
    ArgSpec { name, kind, required: true, description }
}

const fn opt(name: &'static str, kind: ArgKind, description: &'static str) -> ArgSpec {
    ArgSpec { name, kind, required: false, description }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolManifest {
    pub name: &'static str,
    pub description: &'static str,
    pub arguments: Vec<ArgSpec>,
    pub input_images: Vec<&'static str>,
    pub outputs: Vec<ArgSpec>,
    pub output_images: Vec<&'static str>,
}

fn object_schema(specs: &[ArgSpec]) -> Value {
    let mut props = Map::new();
    for s in specs {
        let mut schema = s.kind.schema();
        schema["description"] = Value::String(s.description.to_string());
        props.insert(s.name.to_string(), schema);
    }
    let required: Vec<&str> = specs.iter().filter(|s| s.required).map(|s| s.name).collect();
    json!({"type": "object", "properties": props, "required": required, "additionalProperties": false})
}

impl ToolManifest {
    /// JSON-Schema view of the manifest.
    pub fn document(&self) -> Value {
        json!({
            "name": self.name,
            "description": self.description,
            "input_schema": object_schema(&self.arguments),
            "input_images": self.input_images,
            "output_schema": object_schema(&self.outputs),
            "output_images": self.output_images,
        })
    }

    fn check(&self, specs: &[ArgSpec], doc: &Value, what: &str) -> Result<(), String> {
        let map = doc.as_object().ok_or_else(|| format!("{what} must be an object"))?;
        for key in map.keys() {
            if !specs.iter().any(|s| s.name == key) {
                return Err(format!("{}: unexpected {what} field '{key}'", self.name));
            }
        }
        for s in specs {
            match map.get(s.name) {
                None if s.required => return Err(format!("{}: missing {what} field '{}'", self.name, s.name)),
                Some(v) if !s.kind.accepts(v) => {
                    return Err(format!("{}: {what} field '{}' is not a valid {:?}", self.name, s.name, s.kind))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate_call(&self, call: &ToolCall) -> Result<(), ToolError> {
        self.check(&self.arguments, &call.arguments, "argument").map_err(ToolError::InvalidArguments)?;
        for name in &self.input_images {
            if !call.images.contains_key(*name) {
                return Err(ToolError::InvalidImage(format!("{}: missing input image '{name}'", self.name)));
            }
        }
        Ok(())
    }

    /// Checks an ok result's payload and images against the declared outputs.
    pub fn validate_output(&self, result: &ToolResult) -> Result<(), String> {
        self.check(&self.outputs, &result.payload, "payload")?;
        for name in &self.output_images {
            if !result.images.contains_key(*name) {
                return Err(format!("{}: missing output image '{name}'", self.name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolCall {
    pub tool_name: String,
    pub arguments: Value,
    pub images: BTreeMap<String, ImageBuffer>,
}

impl ToolCall {
    pub fn new(tool_name: &str, arguments: Value) -> Self {
        Self { tool_name: tool_name.to_string(), arguments, images: BTreeMap::new() }
    }

    pub fn image(mut self, name: &str, image: &ImageBuffer) -> Self {
        self.images.insert(name.to_string(), image.clone());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolResult {
    pub status: ToolStatus,
    pub payload: Value,
    pub images: BTreeMap<String, ImageBuffer>,
    pub error_kind: Option<String>,
    pub error_message: Option<String>,
}

impl ToolResult {
    fn ok(payload: Value, images: Vec<(&str, ImageBuffer)>) -> Self {
        Self {
            status: ToolStatus::Ok,
            payload,
            images: images.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            error_kind: None,
            error_message: None,
        }
    }

    pub fn failed(err: &ToolError) -> Self {
        Self {
            status: ToolStatus::Error,
            payload: Value::Object(Map::new()),
            images: BTreeMap::new(),
            error_kind: Some(err.kind().to_string()),
            error_message: Some(err.to_string()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ToolStatus::Ok
    }

    pub fn image(&self, name: &str) -> Option<&ImageBuffer> {
        self.images.get(name)
    }
}

pub struct Registry {
    manifests: BTreeMap<&'static str, ToolManifest>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::standard()
    }
}

impl Registry {
    pub fn standard() -> Self {
        use ArgKind::*;
        let list = vec![
            ToolManifest {
                name: CROP,
                description: "Crop a workspace given raw rel1000 corners (x1, y1, x2, y2); guards against degenerate boxes.",
                arguments: vec![arg("box", Rect, "raw corners on the rel1000 canvas")],
                input_images: vec!["image"],
                outputs: vec![
                    arg("rel_box", Rect, "region used, [x, y, w, h] rel1000"),
                    arg("pixel_box", Rect, "region used, [x, y, w, h] pixels"),
                ],
                output_images: vec!["patch"],
            },
            ToolManifest {
                name: CROPPASTE,
                description: "Paste an edited crop back into the original with boundary-aware blending.",
                arguments: vec![arg("box", Rect, "rel_box returned by crop_tool")],
                input_images: vec!["original", "patch"],
                outputs: vec![
                    arg("mode", Text, "hard or poisson"),
                    arg("pixel_box", Rect, "paste region in pixels"),
                    arg("resampled", Bool, "patch was resized to the region"),
                ],
                output_images: vec!["composed"],
            },
            ToolManifest {
                name: SAM3,
                description: "Segment objects named by a text query; returns boxes, scores, a cutout and an overlay.",
                arguments: vec![arg("query", Text, "what to segment"), arg("multi_target", Bool, "fuse every confident instance")],
                input_images: vec!["image"],
                outputs: vec![
                    arg("instances", List, "every returned instance with its box, rel_box, score and kept flag"),
                    arg("box", Rect, "fused box in pixels"),
                    arg("rel_box", Rect, "fused box in rel1000"),
                ],
                output_images: vec!["cutout", "overlay"],
            },
            ToolManifest {
                name: TARGET,
                description: "Move a box by a rel1000 offset, keeping its size and clamping it onto the canvas.",
                arguments: vec![arg("box", Rect, "source [x, y, w, h] rel1000"), arg("offset", Offset, "[dx, dy] rel1000")],
                input_images: vec![],
                outputs: vec![arg("box", Rect, "destination [x, y, w, h] rel1000")],
                output_images: vec![],
            },
            ToolManifest {
                name: SMARTPASTE,
                description: "Trim a cutout to its opaque support, fit it into a box and alpha-composite it.",
                arguments: vec![arg("box", Rect, "destination [x, y, w, h] rel1000")],
                input_images: vec!["cutout", "background"],
                outputs: vec![arg("pixel_box", Rect, "destination in pixels"), arg("placed", Rect, "where the object landed, pixels")],
                output_images: vec!["composed"],
            },
            ToolManifest {
                name: FIXPROMPT,
                description: "Rewrite an unclear instruction into an explicit physical action; passes clear ones through.",
                arguments: vec![arg("instruction", Text, "instruction to check")],
                input_images: vec!["image"],
                outputs: vec![arg("instruction", Text, "instruction to use"), arg("was_rewritten", Bool, "the text changed")],
                output_images: vec![],
            },
            ToolManifest {
                name: IFINISH,
                description: "Decide whether the requested action has been achieved in the current image.",
                arguments: vec![arg("instruction", Text, "the user's instruction")],
                input_images: vec!["original", "current"],
                outputs: vec![
                    opt("status", Text, "short verdict label"),
                    arg("is_finished", Bool, "the core action is done"),
                    opt("reasoning", Text, "short justification"),
                ],
                output_images: vec![],
            },
            ToolManifest {
                name: REFINEMENT,
                description: "Suggest a short corrective prompt for integration artifacts of a pasted patch.",
                arguments: vec![],
                input_images: vec!["original", "composed"],
                outputs: vec![arg("prompt", Text, "corrective prompt, at most 200 characters")],
                output_images: vec![],
            },
            ToolManifest {
                name: EDIT,
                description: "Run the editing model on an image with an instruction.",
                arguments: vec![arg("instruction", Text, "editing instruction")],
                input_images: vec!["image"],
                outputs: vec![],
                output_images: vec!["image"],
            },
        ];
        Self { manifests: list.into_iter().map(|m| (m.name, m)).collect() }
    }

    pub fn manifest(&self, name: &str) -> Option<&ToolManifest> {
        self.manifests.get(name)
    }

    pub fn manifests(&self) -> impl Iterator<Item = &ToolManifest> {
        self.manifests.values()
    }

    /// Machine-readable listing of every tool.
    pub fn document(&self) -> Value {
        Value::Array(self.manifests.values().map(ToolManifest::document).collect())
    }

    pub fn invoke(&self, client: &SessionClient, call: &ToolCall) -> ToolResult {
        match self.try_invoke(client, call) {
            Ok(result) => result,
            Err(e) => ToolResult::failed(&e),
        }
    }

    fn try_invoke(&self, client: &SessionClient, call: &ToolCall) -> Result<ToolResult, ToolError> {
        let manifest = self.manifest(&call.tool_name).ok_or_else(|| ToolError::UnknownTool(call.tool_name.clone()))?;
        manifest.validate_call(call)?;
        let args = &call.arguments;
        let img = |name: &str| &call.images[name];
        let text = |name: &str| args[name].as_str().unwrap_or_default().to_string();
        let rect = |name: &str| -> [f64; 4] {
            let a = args[name].as_array().expect("validated rect");
            [0, 1, 2, 3].map(|i| a[i].as_f64().expect("validated number"))
        };
        let rel_box = |name: &str| {
            let [x, y, w, h] = rect(name);
            RelBox::new(x, y, w, h).map_err(|e| ToolError::InvalidArguments(format!("{name}: {e}")))
        };

        let result = match manifest.name {
            CROP => {
                let out = crop_tool(img("image"), rect("box"))?;
                ToolResult::ok(json!({"rel_box": out.rel_box, "pixel_box": out.pixel_box}), vec![("patch", out.patch)])
            }
            CROPPASTE => {
                let out = croppaste_tool(img("original"), img("patch"), &rel_box("box")?)?;
                ToolResult::ok(
                    json!({"mode": out.mode.as_str(), "pixel_box": out.pixel_box, "resampled": out.resampled}),
                    vec![("composed", out.image)],
                )
            }
            SAM3 => {
                let multi = args["multi_target"].as_bool().unwrap_or(false);
                let seg = sam3_tool(client, img("image"), &text("query"), multi)?;
                ToolResult::ok(
                    json!({"instances": seg.instances, "box": seg.pixel_box, "rel_box": seg.rel_box}),
                    vec![("cutout", seg.cutout), ("overlay", seg.overlay)],
                )
            }
            TARGET => {
                let a = args["offset"].as_array().expect("validated offset");
                let offset = RelOffset::new(a[0].as_f64().unwrap_or(0.0), a[1].as_f64().unwrap_or(0.0))
                    .map_err(|e| ToolError::InvalidArguments(e.to_string()))?;
                let dest = target_tool(&rel_box("box")?, offset);
                ToolResult::ok(json!({"box": dest}), vec![])
            }
            SMARTPASTE => {
                let out = smartpaste_tool(img("cutout"), img("background"), &rel_box("box")?)?;
                ToolResult::ok(json!({"pixel_box": out.pixel_box, "placed": out.placed}), vec![("composed", out.image)])
            }
            FIXPROMPT => {
                let out = fixprompt_tool(client, img("image"), &text("instruction"));
                ToolResult::ok(json!({"instruction": out.instruction, "was_rewritten": out.was_rewritten}), vec![])
            }
            IFINISH => {
                let v = ifinish_tool(client, img("original"), img("current"), &text("instruction"))?;
                let mut payload = json!({"is_finished": v.is_finished});
                if !v.status.trim().is_empty() {
                    payload["status"] = json!(v.status);
                }
                if !v.reasoning.trim().is_empty() {
                    payload["reasoning"] = json!(v.reasoning);
                }
                ToolResult::ok(payload, vec![])
            }
            REFINEMENT => {
                let prompt = refinement_tool(client, img("original"), img("composed"))?;
                ToolResult::ok(json!({"prompt": prompt}), vec![])
            }
            EDIT => {
                let out = client.edit(img("image"), &text("instruction"))?;
                ToolResult::ok(json!({}), vec![("image", out)])
            }
            other => return Err(ToolError::UnknownTool(other.to_string())),
        };
        debug_assert!(manifest.validate_output(&result).is_ok(), "{:?}", manifest.validate_output(&result));
        Ok(result)
    }
}
