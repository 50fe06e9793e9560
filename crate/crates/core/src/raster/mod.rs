//! Pixel primitives for the tool layer.
//!
//! All operations take their inputs by reference and return fresh buffers.
//! Images are 8-bit RGBA with straight alpha.

mod poisson;

use std::io::Cursor;

use image::{imageops, ImageFormat, Rgba, RgbaImage};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{ImageDims, PixelBox};

pub use poisson::{poisson_blend, poisson_blend_with, PoissonSettings, PoissonStats};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RasterError {
    #[error("region {region:?} does not fit inside a {width}x{height} image")]
    OutOfBounds { region: PixelBox, width: u32, height: u32 },
    #[error("placement ({x}, {y}) puts the foreground entirely outside the background")]
    OutsidePlacement { x: i64, y: i64 },
    #[error("patch is {patch_w}x{patch_h} but region is {box_w}x{box_h}")]
    DimMismatch { patch_w: u32, patch_h: u32, box_w: u32, box_h: u32 },
    #[error("no pixel has non-zero alpha")]
    ZeroAlpha,
    #[error("blend mask has no interior pixels")]
    ZeroMask,
    #[error("image must be at least 1x1")]
    EmptyImage,
    #[error("pixel buffer has {got} bytes, expected {expected}")]
    BadBuffer { got: usize, expected: usize },
    #[error("image codec: {0}")]
    Codec(String),
}

impl RasterError {
    /// Stable identifier used in tool envelopes and traces.
    pub fn kind(&self) -> &'static str {
        match self {
            RasterError::OutOfBounds { .. } | RasterError::OutsidePlacement { .. } => "OutOfBounds",
            RasterError::DimMismatch { .. } => "DimMismatch",
            RasterError::ZeroAlpha => "ZeroAlpha",
            RasterError::ZeroMask => "ZeroMask",
            RasterError::EmptyImage | RasterError::BadBuffer { .. } | RasterError::Codec(_) => "InvalidImage",
        }
    }
}

/// Non-empty RGBA raster.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer(RgbaImage);

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ImageBuffer({}x{})", self.0.width(), self.0.height())
    }
}

impl ImageBuffer {
    pub fn filled(width: u32, height: u32, rgba: [u8; 4]) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyImage);
        }
        Ok(Self(RgbaImage::from_pixel(width, height, Rgba(rgba))))
    }

    pub fn from_fn(width: u32, height: u32, f: impl FnMut(u32, u32) -> [u8; 4]) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyImage);
        }
        let mut f = f;
        Ok(Self(RgbaImage::from_fn(width, height, |x, y| Rgba(f(x, y)))))
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RasterError> {
        let expected = width as usize * height as usize * 4;
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyImage);
        }
        if pixels.len() != expected {
            return Err(RasterError::BadBuffer { got: pixels.len(), expected });
        }
        let img = RgbaImage::from_raw(width, height, pixels).expect("length checked");
        Ok(Self(img))
    }

    pub fn from_rgba(img: RgbaImage) -> Result<Self, RasterError> {
        if img.width() == 0 || img.height() == 0 {
            return Err(RasterError::EmptyImage);
        }
        Ok(Self(img))
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| RasterError::Codec(e.to_string()))?;
        Self::from_rgba(img.to_rgba8())
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        self.0.write_to(&mut out, ImageFormat::Png).expect("encoding an in-memory RGBA buffer cannot fail");
        out.into_inner()
    }

    pub fn width(&self) -> u32 {
        self.0.width()
    }

    pub fn height(&self) -> u32 {
        self.0.height()
    }

    pub fn dims(&self) -> ImageDims {
        ImageDims { width: self.0.width(), height: self.0.height() }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 4] {
        self.0.get_pixel(x, y).0
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgba: [u8; 4]) {
        self.0.put_pixel(x, y, Rgba(rgba));
    }

    pub fn as_rgba(&self) -> &RgbaImage {
        &self.0
    }

    pub fn raw(&self) -> &[u8] {
        self.0.as_raw()
    }

    /// SHA-256 over dimensions and samples, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width().to_le_bytes());
        h.update(self.height().to_le_bytes());
        h.update(self.raw());
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Binary per-pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    values: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32, value: bool) -> Self {
        Self { width, height, values: vec![value; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self { width, height, values }
    }

    /// Mask of `dims` with `region` set.
    pub fn from_box(dims: ImageDims, region: PixelBox) -> Self {
        Self::from_fn(dims.width, dims.height, |x, y| {
            x >= region.x && (x as u64) < region.right() && y >= region.y && (y as u64) < region.bottom()
        })
    }

    /// Decodes a single-channel PNG; any non-zero sample is inside.
    pub fn decode_png(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| RasterError::Codec(e.to_string()))?.to_luma8();
        let (w, h) = img.dimensions();
        Ok(Self { width: w, height: h, values: img.as_raw().iter().map(|&v| v > 0).collect() })
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let img = image::GrayImage::from_raw(self.width, self.height, self.values.iter().map(|&v| if v { 255 } else { 0 }).collect())
            .expect("mask length matches dims");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).expect("in-memory encode");
        out.into_inner()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.values[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.values.iter().any(|&v| v)
    }

    /// Pixelwise OR. Panics on mismatched dimensions.
    pub fn or(&self, other: &Mask) -> Mask {
        assert_eq!((self.width, self.height), (other.width, other.height), "mask dims differ");
        Mask { width: self.width, height: self.height, values: self.values.iter().zip(&other.values).map(|(a, b)| *a || *b).collect() }
    }

    /// Erosion with a 3x3 square; pixels on the frame edge are cleared.
    pub fn erode(&self) -> Mask {
        let (w, h) = (self.width as i64, self.height as i64);
        Mask::from_fn(self.width, self.height, |x, y| {
            let (x, y) = (x as i64, y as i64);
            (-1..=1).all(|dy| {
                (-1..=1).all(|dx| {
                    let (nx, ny) = (x + dx, y + dy);
                    nx >= 0 && ny >= 0 && nx < w && ny < h && self.get(nx as u32, ny as u32)
                })
            })
        })
    }

    /// Tight bounding box of set pixels.
    pub fn bounding_box(&self) -> Option<PixelBox> {
        let mut min = (u32::MAX, u32::MAX);
        let mut max = (0u32, 0u32);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    min = (min.0.min(x), min.1.min(y));
                    max = (max.0.max(x), max.1.max(y));
                }
            }
        }
        any.then(|| PixelBox::new(min.0, min.1, max.0 - min.0 + 1, max.1 - min.1 + 1))
    }
}

fn check_box(region: PixelBox, dims: ImageDims) -> Result<(), RasterError> {
    if region.fits(dims) {
        Ok(())
    } else {
        Err(RasterError::OutOfBounds { region, width: dims.width, height: dims.height })
    }
}

pub fn crop(image: &ImageBuffer, region: PixelBox) -> Result<ImageBuffer, RasterError> {
    check_box(region, image.dims())?;
    let view = imageops::crop_imm(&image.0, region.x, region.y, region.w, region.h);
    Ok(ImageBuffer(view.to_image()))
}

/// Crops to the tight box of pixels with non-zero alpha.
pub fn alpha_trim(image: &ImageBuffer) -> Result<(ImageBuffer, PixelBox), RasterError> {
    let support = Mask::from_fn(image.width(), image.height(), |x, y| image.pixel(x, y)[3] > 0);
    let region = support.bounding_box().ok_or(RasterError::ZeroAlpha)?;
    Ok((crop(image, region)?, region))
}

/// Where a fitted image sits inside its target box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Placement {
    pub x: u32,
    pub y: u32,
}

/// Lanczos3 resize to exact dimensions.
///
/// Colour is resampled premultiplied so transparent pixels do not bleed into
/// opaque edges.
pub fn resize_exact(image: &ImageBuffer, width: u32, height: u32) -> ImageBuffer {
    let (width, height) = (width.max(1), height.max(1));
    if (width, height) == (image.width(), image.height()) {
        return image.clone();
    }
    let mut pre = image.0.clone();
    for p in pre.pixels_mut() {
        let a = p.0[3] as u32;
        for c in 0..3 {
            p.0[c] = ((p.0[c] as u32 * a + 127) / 255) as u8;
        }
    }
    let mut out = imageops::resize(&pre, width, height, imageops::FilterType::Lanczos3);
    for p in out.pixels_mut() {
        let a = p.0[3] as u32;
        for c in 0..3 {
            p.0[c] = (p.0[c] as u32 * 255 + a / 2).checked_div(a).map_or(0, |v| v.min(255) as u8);
        }
    }
    ImageBuffer(out)
}

/// Aspect-preserving fit into a `target_w`×`target_h` box, centred.
pub fn resample_fit(image: &ImageBuffer, target_w: u32, target_h: u32) -> (ImageBuffer, Placement) {
    let (target_w, target_h) = (target_w.max(1), target_h.max(1));
    let (sw, sh) = (image.width() as f64, image.height() as f64);
    let scale = (target_w as f64 / sw).min(target_h as f64 / sh);
    let ow = ((sw * scale).round() as u32).clamp(1, target_w);
    let oh = ((sh * scale).round() as u32).clamp(1, target_h);
    let out = resize_exact(image, ow, oh);
    (out, Placement { x: (target_w - ow) / 2, y: (target_h - oh) / 2 })
}

/// Straight-alpha "over" of `fg` placed at `(at_x, at_y)` onto an opaque `bg`.
pub fn alpha_composite(fg: &ImageBuffer, bg: &ImageBuffer, at_x: i64, at_y: i64) -> Result<ImageBuffer, RasterError> {
    let (bw, bh) = (bg.width() as i64, bg.height() as i64);
    let x0 = at_x.max(0);
    let y0 = at_y.max(0);
    let x1 = (at_x + fg.width() as i64).min(bw);
    let y1 = (at_y + fg.height() as i64).min(bh);
    if x0 >= x1 || y0 >= y1 {
        return Err(RasterError::OutsidePlacement { x: at_x, y: at_y });
    }
    let mut out = bg.0.clone();
    for p in out.pixels_mut() {
        p.0[3] = 255;
    }
    for y in y0..y1 {
        for x in x0..x1 {
            let f = fg.pixel((x - at_x) as u32, (y - at_y) as u32);
            let a = f[3] as u32;
            let px = out.get_pixel_mut(x as u32, y as u32);
            for (o, v) in px.0.iter_mut().zip(f).take(3) {
                *o = ((a * v as u32 + (255 - a) * *o as u32 + 127) / 255) as u8;
            }
        }
    }
    Ok(ImageBuffer(out))
}

fn check_patch(patch: &ImageBuffer, region: PixelBox) -> Result<(), RasterError> {
    if patch.width() != region.w || patch.height() != region.h {
        return Err(RasterError::DimMismatch { patch_w: patch.width(), patch_h: patch.height(), box_w: region.w, box_h: region.h });
    }
    Ok(())
}

/// Replaces `region` of `bg` with `patch` verbatim.
pub fn hard_paste(patch: &ImageBuffer, bg: &ImageBuffer, region: PixelBox) -> Result<ImageBuffer, RasterError> {
    check_patch(patch, region)?;
    check_box(region, bg.dims())?;
    let mut out = bg.0.clone();
    imageops::replace(&mut out, &patch.0, region.x as i64, region.y as i64);
    Ok(ImageBuffer(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PasteMode {
    Hard,
    Poisson,
}

impl PasteMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PasteMode::Hard => "hard",
            PasteMode::Poisson => "poisson",
        }
    }
}

/// Boundary-aware paste: hard paste when the region touches the image border,
/// Poisson blending otherwise, with hard paste as the fallback for an empty
/// blend mask.
pub fn mixed_paste(patch: &ImageBuffer, bg: &ImageBuffer, region: PixelBox) -> Result<(ImageBuffer, PasteMode), RasterError> {
    check_patch(patch, region)?;
    check_box(region, bg.dims())?;
    if region.touches_border(bg.dims()) {
        return Ok((hard_paste(patch, bg, region)?, PasteMode::Hard));
    }
    let mask = Mask::new(region.w, region.h, true).erode();
    match poisson_blend(patch, bg, region, &mask) {
        Ok(out) => Ok((out, PasteMode::Poisson)),
        Err(RasterError::ZeroMask) => {
            tracing::debug!(?region, "poisson mask empty, using hard paste");
            Ok((hard_paste(patch, bg, region)?, PasteMode::Hard))
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn noise(w: u32, h: u32, seed: u32) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, |x, y| {
            let v = (x.wrapping_mul(73) ^ y.wrapping_mul(151) ^ seed.wrapping_mul(2654435761)).wrapping_mul(2246822519);
            [(v >> 8) as u8, (v >> 16) as u8, (v >> 24) as u8, 255]
        })
        .unwrap()
    }

    #[test]
    fn crop_full_is_identity() {
        let img = noise(31, 17, 1);
        assert_eq!(crop(&img, PixelBox::full(img.dims())).unwrap(), img);
    }

    #[test]
    fn crop_matches_index_arithmetic() {
        let img = noise(2000, 1000, 2);
        let patch = crop(&img, PixelBox::new(0, 0, 1000, 500)).unwrap();
        assert_eq!((patch.width(), patch.height()), (1000, 500));
        for y in (0..500).step_by(37) {
            for x in (0..1000).step_by(41) {
                assert_eq!(patch.pixel(x, y), img.pixel(x, y));
            }
        }
        let off = crop(&img, PixelBox::new(13, 7, 5, 3)).unwrap();
        assert_eq!(off.pixel(4, 2), img.pixel(17, 9));
    }

    #[test]
    fn crop_out_of_bounds() {
        let img = noise(10, 10, 3);
        assert_eq!(crop(&img, PixelBox::new(5, 0, 6, 2)).unwrap_err().kind(), "OutOfBounds");
    }

    #[test]
    fn alpha_trim_cases() {
        let opaque = noise(12, 9, 4);
        let (t, b) = alpha_trim(&opaque).unwrap();
        assert_eq!(t, opaque);
        assert_eq!(b, PixelBox::full(opaque.dims()));

        let sq = ImageBuffer::from_fn(
            100,
            100,
            |x, y| {
                if (40..50).contains(&x) && (40..50).contains(&y) {
                    [9, 8, 7, 255]
                } else {
                    [0, 0, 0, 0]
                }
            },
        )
        .unwrap();
        let (t, b) = alpha_trim(&sq).unwrap();
        assert_eq!(b, PixelBox::new(40, 40, 10, 10));
        assert_eq!((t.width(), t.height()), (10, 10));
        assert!(t.raw().chunks(4).all(|p| p == [9, 8, 7, 255]));

        let clear = ImageBuffer::filled(8, 8, [1, 2, 3, 0]).unwrap();
        assert_eq!(alpha_trim(&clear).unwrap_err(), RasterError::ZeroAlpha);
    }

    #[test]
    fn resample_fit_examples() {
        let (o, p) = resample_fit(&noise(100, 50, 5), 200, 200);
        assert_eq!((o.width(), o.height(), p), (200, 100, Placement { x: 0, y: 50 }));

        let src = noise(200, 200, 6);
        let (o, p) = resample_fit(&src, 200, 200);
        assert_eq!(o, src);
        assert_eq!(p, Placement { x: 0, y: 0 });

        let (o, p) = resample_fit(&noise(50, 100, 7), 200, 200);
        assert_eq!((o.width(), o.height(), p), (100, 200, Placement { x: 50, y: 0 }));
    }

    #[test]
    fn resize_keeps_constant_colour() {
        let src = ImageBuffer::filled(10, 10, [200, 30, 90, 255]).unwrap();
        let out = resize_exact(&src, 40, 40);
        assert!(out.raw().chunks(4).all(|p| p == [200, 30, 90, 255]));
    }

    #[test]
    fn composite_examples() {
        let bg = noise(20, 20, 8);
        let opaque = noise(5, 5, 9);
        let out = alpha_composite(&opaque, &bg, 3, 4).unwrap();
        assert_eq!(out, hard_paste(&opaque, &bg, PixelBox::new(3, 4, 5, 5)).unwrap());

        let clear = ImageBuffer::filled(5, 5, [255, 255, 255, 0]).unwrap();
        assert_eq!(alpha_composite(&clear, &bg, 3, 4).unwrap(), bg);

        let fg = ImageBuffer::filled(1, 1, [255, 0, 0, 128]).unwrap();
        let black = ImageBuffer::filled(3, 3, [0, 0, 0, 255]).unwrap();
        let out = alpha_composite(&fg, &black, 1, 1).unwrap();
        assert_eq!(out.pixel(1, 1), [128, 0, 0, 255]);
        assert_eq!(out.pixel(0, 0), [0, 0, 0, 255]);
    }

    #[test]
    fn composite_partial_and_outside() {
        let bg = ImageBuffer::filled(4, 4, [0, 0, 0, 255]).unwrap();
        let fg = ImageBuffer::filled(3, 3, [10, 10, 10, 255]).unwrap();
        let out = alpha_composite(&fg, &bg, -2, -2).unwrap();
        assert_eq!(out.pixel(0, 0), [10, 10, 10, 255]);
        assert_eq!(out.pixel(1, 1), [0, 0, 0, 255]);
        assert_eq!(alpha_composite(&fg, &bg, 4, 0).unwrap_err().kind(), "OutOfBounds");
        assert_eq!(alpha_composite(&fg, &bg, -3, 0).unwrap_err().kind(), "OutOfBounds");
    }

    #[test]
    fn hard_paste_examples() {
        let white = ImageBuffer::filled(100, 100, [255, 255, 255, 255]).unwrap();
        let black = ImageBuffer::filled(10, 10, [0, 0, 0, 255]).unwrap();
        let out = hard_paste(&black, &white, PixelBox::new(0, 0, 10, 10)).unwrap();
        assert_eq!(out.raw().chunks(4).filter(|p| p[..3] == [0, 0, 0]).count(), 100);

        let nine = ImageBuffer::filled(9, 10, [0, 0, 0, 255]).unwrap();
        assert_eq!(hard_paste(&nine, &white, PixelBox::new(0, 0, 10, 10)).unwrap_err().kind(), "DimMismatch");
        assert_eq!(hard_paste(&black, &white, PixelBox::new(95, 0, 10, 10)).unwrap_err().kind(), "OutOfBounds");
    }

    #[test]
    fn mixed_paste_modes() {
        let bg = noise(40, 30, 10);
        let edge = PixelBox::new(0, 0, 8, 8);
        let patch = ImageBuffer::filled(8, 8, [1, 2, 3, 255]).unwrap();
        let (out, mode) = mixed_paste(&patch, &bg, edge).unwrap();
        assert_eq!(mode, PasteMode::Hard);
        assert_eq!(crop(&out, edge).unwrap(), patch);

        let inner = PixelBox::new(10, 10, 12, 9);
        let own = crop(&bg, inner).unwrap();
        let (out, mode) = mixed_paste(&own, &bg, inner).unwrap();
        assert_eq!(mode, PasteMode::Poisson);
        for (a, b) in out.raw().iter().zip(bg.raw()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }

        let one = PixelBox::new(5, 5, 1, 1);
        let dot = ImageBuffer::filled(1, 1, [7, 7, 7, 255]).unwrap();
        let (out, mode) = mixed_paste(&dot, &bg, one).unwrap();
        assert_eq!(mode, PasteMode::Hard);
        assert_eq!(out.pixel(5, 5), [7, 7, 7, 255]);
    }

    #[test]
    fn mixed_paste_poisson_only_touches_eroded_mask() {
        let bg = noise(30, 30, 11);
        let region = PixelBox::new(5, 6, 10, 12);
        let patch = noise(10, 12, 12);
        let (out, mode) = mixed_paste(&patch, &bg, region).unwrap();
        assert_eq!(mode, PasteMode::Poisson);
        for y in 0..30 {
            for x in 0..30 {
                let inside = x > region.x && x < region.x + region.w - 1 && y > region.y && y < region.y + region.h - 1;
                if !inside {
                    assert_eq!(out.pixel(x, y), bg.pixel(x, y), "({x},{y}) changed");
                }
            }
        }
    }

    #[test]
    fn mask_helpers() {
        let m = Mask::new(5, 4, true).erode();
        assert_eq!(m.count(), 3 * 2);
        assert_eq!(m.bounding_box(), Some(PixelBox::new(1, 1, 3, 2)));
        assert!(Mask::new(1, 1, true).erode().is_empty());
        let png = m.encode_png();
        assert_eq!(Mask::decode_png(&png).unwrap(), m);
    }

    #[test]
    fn png_round_trip() {
        let img = ImageBuffer::from_fn(7, 5, |x, y| [x as u8 * 30, y as u8 * 40, 99, (x * y) as u8 * 10]).unwrap();
        assert_eq!(ImageBuffer::decode_png(&img.encode_png()).unwrap(), img);
        assert_eq!(ImageBuffer::decode_png(b"not a png").unwrap_err().kind(), "InvalidImage");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn crop_then_paste_is_identity(w in 1u32..40, h in 1u32..40, seed in any::<u32>(), fx in 0.0..1.0f64, fy in 0.0..1.0f64, fw in 0.0..1.0f64, fh in 0.0..1.0f64) {
            let img = noise(w, h, seed);
            let x = (fx * w as f64) as u32 % w;
            let y = (fy * h as f64) as u32 % h;
            let bw = 1 + ((w - x - 1) as f64 * fw) as u32;
            let bh = 1 + ((h - y - 1) as f64 * fh) as u32;
            let region = PixelBox::new(x, y, bw, bh);
            let patch = crop(&img, region).unwrap();
            prop_assert_eq!(hard_paste(&patch, &img, region).unwrap(), img);
        }

        #[test]
        fn fit_stays_inside_and_keeps_aspect(sw in 1u32..300, sh in 1u32..300, tw in 1u32..300, th in 1u32..300) {
            let src = ImageBuffer::filled(sw, sh, [1, 2, 3, 255]).unwrap();
            let (o, p) = resample_fit(&src, tw, th);
            prop_assert!(o.width() <= tw && o.height() <= th);
            prop_assert!(p.x + o.width() <= tw && p.y + o.height() <= th);
            // aspect within one pixel: compare against the exact scaled extent
            let scale = (tw as f64 / sw as f64).min(th as f64 / sh as f64);
            prop_assert!((o.width() as f64 - sw as f64 * scale).abs() <= 1.0);
            prop_assert!((o.height() as f64 - sh as f64 * scale).abs() <= 1.0);
        }

        #[test]
        fn composite_extremes_are_channel_exact(seed in any::<u32>(), x in -3i64..12, y in -3i64..12) {
            let bg = noise(10, 10, seed);
            let fg = noise(4, 4, seed ^ 0xabcd);
            let clear = ImageBuffer::from_fn(4, 4, |x, y| { let p = fg.pixel(x, y); [p[0], p[1], p[2], 0] }).unwrap();
            if let Ok(out) = alpha_composite(&clear, &bg, x, y) {
                prop_assert_eq!(out, bg.clone());
                let out = alpha_composite(&fg, &bg, x, y).unwrap();
                for yy in 0..10i64 {
                    for xx in 0..10i64 {
                        let inside = xx >= x && xx < x + 4 && yy >= y && yy < y + 4;
                        let expect = if inside { fg.pixel((xx - x) as u32, (yy - y) as u32) } else { bg.pixel(xx as u32, yy as u32) };
                        prop_assert_eq!(out.pixel(xx as u32, yy as u32), expect);
                    }
                }
            }
        }
    }
}
