//! The rel1000 coordinate system.
//!
//! Every geometric tool addresses regions on a 1000×1000 continuous canvas
//! independent of the underlying image resolution. [`RelBox`] lives on that
//! canvas, [`PixelBox`] in a concrete image, and the conversions between them
//! round half away from zero.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Side length of the relative canvas.
pub const REL_CANVAS: f64 = 1000.0;

/// Slack for float comparisons against the canvas edge.
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate box: zero width or height after normalization")]
    DegenerateBox,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("box [{x}, {y}, {w}, {h}] violates the rel1000 canvas")]
    InvalidRelBox { x: f64, y: f64, w: f64, h: f64 },
    #[error("image dimensions must be positive, got {width}x{height}")]
    InvalidDims { width: u32, height: u32 },
}

/// Region on the rel1000 canvas, stored as origin plus extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl RelBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let ok = x >= -EPS && y >= -EPS && w > 0.0 && h > 0.0 && x + w <= REL_CANVAS + EPS && y + h <= REL_CANVAS + EPS;
        if !ok {
            return Err(GeometryError::InvalidRelBox { x, y, w, h });
        }
        Ok(Self { x: x.max(0.0), y: y.max(0.0), w, h })
    }

    /// The whole canvas.
    pub fn full() -> Self {
        Self { x: 0.0, y: 0.0, w: REL_CANVAS, h: REL_CANVAS }
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Corner form `[x1, y1, x2, y2]`.
    pub fn corners(&self) -> [f64; 4] {
        [self.x, self.y, self.right(), self.bottom()]
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &RelBox) -> RelBox {
        let x1 = self.x.min(other.x);
        let y1 = self.y.min(other.y);
        let x2 = self.right().max(other.right());
        let y2 = self.bottom().max(other.bottom());
        RelBox { x: x1, y: y1, w: x2 - x1, h: y2 - y1 }
    }
}

impl Serialize for RelBox {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RelBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y, w, h] = <[f64; 4]>::deserialize(d)?;
        RelBox::new(x, y, w, h).map_err(serde::de::Error::custom)
    }
}

/// Region in absolute pixels of some image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn full(dims: ImageDims) -> Self {
        Self::new(0, 0, dims.width, dims.height)
    }

    pub fn right(&self) -> u64 {
        self.x as u64 + self.w as u64
    }

    pub fn bottom(&self) -> u64 {
        self.y as u64 + self.h as u64
    }

    /// True when the box is non-empty and lies fully inside `dims`.
    pub fn fits(&self, dims: ImageDims) -> bool {
        self.w >= 1 && self.h >= 1 && self.right() <= dims.width as u64 && self.bottom() <= dims.height as u64
    }

    /// True when any edge coincides with the image border.
    pub fn touches_border(&self, dims: ImageDims) -> bool {
        self.x == 0 || self.y == 0 || self.right() == dims.width as u64 || self.bottom() == dims.height as u64
    }

    pub fn union(&self, other: &PixelBox) -> PixelBox {
        let x1 = self.x.min(other.x);
        let y1 = self.y.min(other.y);
        let x2 = self.right().max(other.right());
        let y2 = self.bottom().max(other.bottom());
        PixelBox::new(x1, y1, (x2 - x1 as u64) as u32, (y2 - y1 as u64) as u32)
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }
}

impl Serialize for PixelBox {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y, self.w, self.h].serialize(s)
    }
}

impl<'de> Deserialize<'de> for PixelBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y, w, h] = <[u32; 4]>::deserialize(d)?;
        Ok(PixelBox::new(x, y, w, h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidDims { width, height });
        }
        Ok(Self { width, height })
    }
}

/// Displacement on the rel1000 canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelOffset {
    pub dx: f64,
    pub dy: f64,
}

impl RelOffset {
    /// Any finite offset is accepted; the clamp in [`offset_clamped`] bounds
    /// the result regardless of magnitude.
    pub fn new(dx: f64, dy: f64) -> Result<Self, GeometryError> {
        if !dx.is_finite() || !dy.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { dx, dy })
    }

    pub fn zero() -> Self {
        Self { dx: 0.0, dy: 0.0 }
    }
}

impl Serialize for RelOffset {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.dx, self.dy].serialize(s)
    }
}

impl<'de> Deserialize<'de> for RelOffset {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [dx, dy] = <[f64; 2]>::deserialize(d)?;
        RelOffset::new(dx, dy).map_err(serde::de::Error::custom)
    }
}

/// Orders and clamps raw corner coordinates `(x1, y1, x2, y2)` onto the canvas.
pub fn normalize_rel_box(raw: [f64; 4]) -> Result<RelBox, GeometryError> {
    if !raw.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let (x1, x2) = ordered_clamped(raw[0], raw[2]);
    let (y1, y2) = ordered_clamped(raw[1], raw[3]);
    if x2 - x1 <= 0.0 || y2 - y1 <= 0.0 {
        return Err(GeometryError::DegenerateBox);
    }
    RelBox::new(x1, y1, x2 - x1, y2 - y1)
}

/// Clamps a coordinate pair to the canvas and returns it in ascending order.
pub(crate) fn ordered_clamped(a: f64, b: f64) -> (f64, f64) {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    (lo.clamp(0.0, REL_CANVAS), hi.clamp(0.0, REL_CANVAS))
}

fn round_half_away(v: f64) -> i64 {
    // f64::round already rounds half away from zero.
    v.round() as i64
}

/// Maps one axis of a rel interval to pixels: returns (start, length).
fn axis_to_pixels(start: f64, len: f64, extent: u32) -> (u32, u32) {
    let scale = extent as f64 / REL_CANVAS;
    let extent = extent as i64;
    let lo = round_half_away(start * scale).clamp(0, extent);
    let hi = round_half_away((start + len) * scale).clamp(0, extent);
    let size = (hi - lo).max(1);
    let lo = lo.min(extent - size);
    (lo as u32, size as u32)
}

pub fn rel_to_pixel(b: &RelBox, dims: ImageDims) -> PixelBox {
    let (x, w) = axis_to_pixels(b.x, b.w, dims.width);
    let (y, h) = axis_to_pixels(b.y, b.h, dims.height);
    PixelBox::new(x, y, w, h)
}

pub fn pixel_to_rel(b: &PixelBox, dims: ImageDims) -> RelBox {
    let sx = REL_CANVAS / dims.width as f64;
    let sy = REL_CANVAS / dims.height as f64;
    let x1 = (b.x as f64 * sx).min(REL_CANVAS);
    let y1 = (b.y as f64 * sy).min(REL_CANVAS);
    let x2 = (b.right() as f64 * sx).min(REL_CANVAS);
    let y2 = (b.bottom() as f64 * sy).min(REL_CANVAS);
    RelBox { x: x1, y: y1, w: (x2 - x1).max(f64::MIN_POSITIVE), h: (y2 - y1).max(f64::MIN_POSITIVE) }
}

/// Moves a box by an offset, keeping its size and clamping it onto the canvas.
pub fn offset_clamped(b: &RelBox, offset: RelOffset) -> RelBox {
    let x = (b.x + offset.dx).min(REL_CANVAS - b.w).max(0.0);
    let y = (b.y + offset.dy).min(REL_CANVAS - b.h).max(0.0);
    RelBox { x, y, w: b.w, h: b.h }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rb(x: f64, y: f64, w: f64, h: f64) -> RelBox {
        RelBox::new(x, y, w, h).unwrap()
    }

    fn dims(w: u32, h: u32) -> ImageDims {
        ImageDims::new(w, h).unwrap()
    }

    #[test]
    fn normalize_reorders_corners() {
        assert_eq!(normalize_rel_box([300.0, 200.0, 100.0, 400.0]).unwrap(), rb(100.0, 200.0, 200.0, 200.0));
    }

    #[test]
    fn normalize_clamps_to_canvas() {
        assert_eq!(normalize_rel_box([-50.0, 0.0, 500.0, 1100.0]).unwrap(), rb(0.0, 0.0, 500.0, 1000.0));
    }

    #[test]
    fn normalize_rejects_zero_width() {
        assert_eq!(normalize_rel_box([100.0, 100.0, 100.0, 400.0]), Err(GeometryError::DegenerateBox));
        // fully off-canvas collapses onto the edge
        assert_eq!(normalize_rel_box([1200.0, 0.0, 1500.0, 10.0]), Err(GeometryError::DegenerateBox));
        assert_eq!(normalize_rel_box([f64::NAN, 0.0, 1.0, 1.0]), Err(GeometryError::NonFinite));
    }

    #[test]
    fn rel_to_pixel_examples() {
        assert_eq!(rel_to_pixel(&rb(100.0, 100.0, 200.0, 150.0), dims(2000, 1000)), PixelBox::new(200, 100, 400, 150));
        assert_eq!(rel_to_pixel(&RelBox::full(), dims(37, 91)), PixelBox::new(0, 0, 37, 91));
        assert_eq!(rel_to_pixel(&rb(0.0, 0.0, 1.0, 1.0), dims(100, 100)), PixelBox::new(0, 0, 1, 1));
    }

    #[test]
    fn rel_to_pixel_minimum_stays_inside() {
        let px = rel_to_pixel(&rb(999.9, 999.9, 0.1, 0.1), dims(100, 100));
        assert_eq!(px, PixelBox::new(99, 99, 1, 1));
        assert!(px.fits(dims(100, 100)));
    }

    #[test]
    fn rel_to_pixel_rounds_half_away() {
        // 0.5 px edges round outward
        let px = rel_to_pixel(&rb(5.0, 5.0, 10.0, 10.0), dims(100, 100));
        assert_eq!(px, PixelBox::new(1, 1, 1, 1));
    }

    #[test]
    fn pixel_to_rel_examples() {
        assert_eq!(pixel_to_rel(&PixelBox::new(200, 100, 400, 150), dims(2000, 1000)), rb(100.0, 100.0, 200.0, 150.0));
        assert_eq!(pixel_to_rel(&PixelBox::new(0, 0, 640, 480), dims(640, 480)), RelBox::full());
        assert_eq!(pixel_to_rel(&PixelBox::new(0, 0, 1, 1), dims(1000, 1000)), rb(0.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn offset_examples() {
        let b = rb(100.0, 100.0, 200.0, 150.0);
        assert_eq!(offset_clamped(&b, RelOffset::new(900.0, 0.0).unwrap()), rb(800.0, 100.0, 200.0, 150.0));
        assert_eq!(offset_clamped(&b, RelOffset::zero()), b);
        let full = RelBox::full();
        assert_eq!(offset_clamped(&full, RelOffset::new(-400.0, 730.0).unwrap()), full);
    }

    #[test]
    fn serializes_as_arrays() {
        let b = rb(1.0, 2.0, 3.0, 4.0);
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1.0,2.0,3.0,4.0]");
        assert_eq!(serde_json::to_string(&RelOffset::new(-5.0, 2.5).unwrap()).unwrap(), "[-5.0,2.5]");
        let back: RelBox = serde_json::from_str("[1,2,3,4]").unwrap();
        assert_eq!(back, b);
        assert!(serde_json::from_str::<RelBox>("[900,0,200,10]").is_err());
    }

    fn arb_box() -> impl Strategy<Value = RelBox> {
        (0.0..1000.0f64, 0.0..1000.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(|(x, y, fw, fh)| {
            let w = ((1000.0 - x) * fw).max(1e-3).min(1000.0 - x);
            let h = ((1000.0 - y) * fh).max(1e-3).min(1000.0 - y);
            RelBox::new(x, y, w, h).unwrap()
        })
    }

    proptest! {
        #[test]
        fn offset_keeps_size_and_stays_on_canvas(b in arb_box(), dx in -1500.0..1500.0f64, dy in -1500.0..1500.0f64) {
            let out = offset_clamped(&b, RelOffset::new(dx, dy).unwrap());
            prop_assert_eq!(out.w(), b.w());
            prop_assert_eq!(out.h(), b.h());
            prop_assert!(RelBox::new(out.x(), out.y(), out.w(), out.h()).is_ok());
        }

        #[test]
        fn normalize_is_idempotent(a in -200.0..1200.0f64, b in -200.0..1200.0f64, c in -200.0..1200.0f64, d in -200.0..1200.0f64) {
            if let Ok(n) = normalize_rel_box([a, b, c, d]) {
                prop_assert_eq!(normalize_rel_box(n.corners()).unwrap(), n);
            }
        }

        #[test]
        fn rel_to_pixel_always_fits(b in arb_box(), w in 1u32..4000, h in 1u32..4000) {
            let d = dims(w, h);
            let px = rel_to_pixel(&b, d);
            prop_assert!(px.fits(d));
        }

        #[test]
        fn round_trip_is_exact_on_divisor_dims(
            x in 0u32..100, y in 0u32..100, fw in 0.0..1.0f64, fh in 0.0..1.0f64,
            which in 0usize..4,
        ) {
            let side = [100u32, 200, 500, 1000][which];
            let d = dims(side, side);
            let (x, y) = (x * side / 100, y * side / 100);
            let w = ((side - x) as f64 * fw).max(1.0) as u32;
            let h = ((side - y) as f64 * fh).max(1.0) as u32;
            let px = PixelBox::new(x, y, w.min(side - x), h.min(side - y));
            let rel = pixel_to_rel(&px, d);
            prop_assert_eq!(rel_to_pixel(&rel, d), px);
        }

        #[test]
        fn round_trip_moves_edges_less_than_a_pixel(b in arb_box(), w in 1u32..3000, h in 1u32..3000) {
            let d = dims(w, h);
            let px = rel_to_pixel(&b, d);
            let back = pixel_to_rel(&px, d);
            prop_assert!(RelBox::new(back.x(), back.y(), back.w(), back.h()).is_ok());
            // the floor to one pixel may grow tiny boxes, so compare the origin
            let px_w = 1000.0 / w as f64;
            let px_h = 1000.0 / h as f64;
            prop_assert!((back.x() - b.x()).abs() <= px_w);
            prop_assert!((back.y() - b.y()).abs() <= px_h);
            if px.w > 1 { prop_assert!((back.right() - b.right()).abs() < px_w); }
            if px.h > 1 { prop_assert!((back.bottom() - b.bottom()).abs() < px_h); }
        }
    }
}
