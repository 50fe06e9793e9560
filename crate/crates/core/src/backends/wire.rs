//! JSON bodies for the `/v1/*` protocol.
//!
//! Images travel as base64 PNG; masks as base64 single-channel PNG at the
//! source image's resolution; boxes as `[x, y, w, h]` pixel arrays.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{BackendError, CallContext, CompletionRequest, Part, RawInstance};
use crate::geometry::{ImageDims, PixelBox};
use crate::raster::{ImageBuffer, Mask};

pub const EDIT_PATH: &str = "/v1/edit";
pub const SEGMENT_PATH: &str = "/v1/segment";
pub const COMPLETE_PATH: &str = "/v1/complete";

/// JSON schema for every request and response body, shipped with the crate.
pub const SCHEMA: &str = include_str!("../../schema/wire-v1.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub case_id: String,
    pub role: String,
    pub seq: u32,
}

impl From<&CallContext> for Meta {
    fn from(ctx: &CallContext) -> Self {
        Meta { case_id: ctx.case_id.clone(), role: ctx.role.clone(), seq: ctx.seq }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRequestBody {
    pub image: String,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Meta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResponseBody {
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequestBody {
    pub image: String,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Meta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireInstance {
    pub mask: String,
    #[serde(rename = "box")]
    pub region: [u32; 4],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponseBody {
    pub instances: Vec<WireInstance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WirePart {
    Text { text: String },
    Image { name: String, image: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteRequestBody {
    pub role: String,
    pub parts: Vec<WirePart>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Meta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteResponseBody {
    pub text: String,
}

pub fn encode_image(image: &ImageBuffer) -> String {
    BASE64.encode(image.encode_png())
}

pub fn decode_image(b64: &str) -> Result<ImageBuffer, BackendError> {
    let bytes = BASE64.decode(b64.trim()).map_err(|e| BackendError::Decode(format!("base64: {e}")))?;
    ImageBuffer::decode_png(&bytes).map_err(|e| BackendError::Decode(e.to_string()))
}

pub fn encode_mask(mask: &Mask) -> String {
    BASE64.encode(mask.encode_png())
}

pub fn decode_mask(b64: &str) -> Result<Mask, BackendError> {
    let bytes = BASE64.decode(b64.trim()).map_err(|e| BackendError::Decode(format!("base64: {e}")))?;
    Mask::decode_png(&bytes).map_err(|e| BackendError::Decode(e.to_string()))
}

pub fn edit_request(ctx: &CallContext, image: &ImageBuffer, instruction: &str) -> EditRequestBody {
    EditRequestBody { image: encode_image(image), instruction: instruction.to_string(), meta: Some(ctx.into()) }
}

pub fn segment_request(ctx: &CallContext, image: &ImageBuffer, query: &str) -> SegmentRequestBody {
    SegmentRequestBody { image: encode_image(image), query: query.to_string(), meta: Some(ctx.into()) }
}

pub fn complete_request(ctx: &CallContext, request: &CompletionRequest) -> CompleteRequestBody {
    let parts = request
        .parts
        .iter()
        .map(|p| match p {
            Part::Text(text) => WirePart::Text { text: text.clone() },
            Part::Image { name, image } => WirePart::Image { name: name.clone(), image: encode_image(image) },
        })
        .collect();
    CompleteRequestBody { role: request.role.clone(), parts, temperature: 0.0, meta: Some(ctx.into()) }
}

/// Converts and validates a segmentation reply against the source image.
pub fn decode_instances(body: SegmentResponseBody, dims: ImageDims) -> Result<Vec<RawInstance>, BackendError> {
    body.instances
        .into_iter()
        .enumerate()
        .map(|(i, inst)| {
            if !inst.score.is_finite() || !(0.0..=1.0).contains(&inst.score) {
                return Err(BackendError::Decode(format!("instance {i}: score {} outside [0, 1]", inst.score)));
            }
            let [x, y, w, h] = inst.region;
            let region = PixelBox::new(x, y, w, h);
            if !region.fits(dims) {
                return Err(BackendError::Decode(format!("instance {i}: box {:?} outside image", inst.region)));
            }
            let mask = decode_mask(&inst.mask)?;
            if (mask.width(), mask.height()) != (dims.width, dims.height) {
                return Err(BackendError::Decode(format!(
                    "instance {i}: mask is {}x{}, image is {}x{}",
                    mask.width(),
                    mask.height(),
                    dims.width,
                    dims.height
                )));
            }
            Ok(RawInstance { mask, region, score: inst.score })
        })
        .collect()
}

pub fn encode_instances(instances: &[RawInstance]) -> SegmentResponseBody {
    SegmentResponseBody {
        instances: instances
            .iter()
            .map(|i| WireInstance { mask: encode_mask(&i.mask), region: [i.region.x, i.region.y, i.region.w, i.region.h], score: i.score })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> CallContext {
        CallContext { case_id: "c1".into(), role: "router".into(), seq: 0, attempt: 0 }
    }

    #[test]
    fn complete_body_shape() {
        let img = ImageBuffer::filled(2, 2, [0, 0, 0, 255]).unwrap();
        let req = CompletionRequest::new("router").text("pick").image("source", &img);
        let body = serde_json::to_value(complete_request(&ctx(), &req)).unwrap();
        assert_eq!(body["role"], "router");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["parts"][0]["type"], "text");
        assert_eq!(body["parts"][1]["type"], "image");
        assert_eq!(body["parts"][1]["name"], "source");
        let back = decode_image(body["parts"][1]["image"].as_str().unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn instance_validation() {
        let dims = ImageDims::new(4, 4).unwrap();
        let mask = Mask::from_box(dims, PixelBox::new(1, 1, 2, 2));
        let good = RawInstance { mask: mask.clone(), region: PixelBox::new(1, 1, 2, 2), score: 0.5 };
        let body = encode_instances(std::slice::from_ref(&good));
        assert_eq!(decode_instances(body.clone(), dims).unwrap(), vec![good]);

        let mut bad = body.clone();
        bad.instances[0].score = 1.3;
        assert!(decode_instances(bad, dims).is_err());
        let mut bad = body.clone();
        bad.instances[0].region = [3, 3, 2, 2];
        assert!(decode_instances(bad, dims).is_err());
        assert!(decode_instances(body, ImageDims::new(5, 4).unwrap()).is_err());
        assert!(decode_image("%%%").is_err());
    }

    #[test]
    fn schema_is_valid_json() {
        let v: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
        for def in ["EditRequest", "EditResponse", "SegmentRequest", "SegmentResponse", "CompleteRequest", "CompleteResponse"] {
            assert!(v["$defs"][def].is_object(), "{def} missing");
        }
    }
}
