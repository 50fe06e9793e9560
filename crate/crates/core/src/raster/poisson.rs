//! Gradient-domain blending.
//!
//! Solves, per colour channel, the discrete Poisson equation over the mask:
//! the 4-neighbour Laplacian of the output matches the patch's, with the
//! background as Dirichlet boundary. Mask pixels on the region's outer edge
//! count as boundary, so every unknown has all four neighbours inside the
//! patch. Iterates Gauss–Seidel sweeps with
//! successive over-relaxation until the largest per-pixel update drops below
//! the tolerance or the sweep cap is hit.

use super::{check_box, check_patch, ImageBuffer, Mask, RasterError};
use crate::geometry::PixelBox;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonSettings {
    /// Stop once the largest update in a sweep is below this (intensity levels).
    pub tolerance: f64,
    pub max_sweeps: u32,
    /// Relaxation factor; `None` picks the optimum for the mask's bounding box.
    /// `Some(1.0)` is plain Gauss–Seidel.
    pub omega: Option<f64>,
}

impl Default for PoissonSettings {
    fn default() -> Self {
        Self { tolerance: 0.1, max_sweeps: 10_000, omega: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonStats {
    /// Most sweeps used by any channel.
    pub sweeps: u32,
    pub converged: bool,
    pub omega: f64,
}

pub fn poisson_blend(patch: &ImageBuffer, bg: &ImageBuffer, region: PixelBox, mask: &Mask) -> Result<ImageBuffer, RasterError> {
    poisson_blend_with(patch, bg, region, mask, PoissonSettings::default()).map(|(img, _)| img)
}

const NEIGHBOURS: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

pub fn poisson_blend_with(
    patch: &ImageBuffer,
    bg: &ImageBuffer,
    region: PixelBox,
    mask: &Mask,
    settings: PoissonSettings,
) -> Result<(ImageBuffer, PoissonStats), RasterError> {
    check_patch(patch, region)?;
    if mask.width() != region.w || mask.height() != region.h {
        return Err(RasterError::DimMismatch { patch_w: mask.width(), patch_h: mask.height(), box_w: region.w, box_h: region.h });
    }
    check_box(region, bg.dims())?;
    // a one-pixel ring of background must surround the region
    let interior = region.x >= 1 && region.y >= 1 && region.right() < bg.width() as u64 && region.bottom() < bg.height() as u64;
    if !interior {
        return Err(RasterError::OutOfBounds { region, width: bg.width(), height: bg.height() });
    }
    let (w, h) = (region.w as usize, region.h as usize);
    let mut index = vec![usize::MAX; w * h];
    let mut cells = Vec::new();
    for j in 1..h.saturating_sub(1) {
        for i in 1..w.saturating_sub(1) {
            if mask.get(i as u32, j as u32) {
                index[j * w + i] = cells.len();
                cells.push((i, j));
            }
        }
    }

    if cells.is_empty() {
        return Err(RasterError::ZeroMask);
    }

    let omega = settings.omega.unwrap_or_else(|| {
        let (mut lo, mut hi) = ((usize::MAX, usize::MAX), (0, 0));
        for &(i, j) in &cells {
            lo = (lo.0.min(i), lo.1.min(j));
            hi = (hi.0.max(i), hi.1.max(j));
        }
        optimal_omega((hi.0 - lo.0 + 1) as u32, (hi.1 - lo.1 + 1) as u32)
    });

    let mut out = bg.clone();
    let mut stats = PoissonStats { sweeps: 0, converged: true, omega };

    for channel in 0..3 {
        // Per unknown: constant right-hand side and indices of unknown neighbours.
        let mut rhs = vec![0.0f64; cells.len()];
        let mut links: Vec<[usize; 4]> = vec![[usize::MAX; 4]; cells.len()];
        let mut values = vec![0.0f64; cells.len()];

        for (k, &(i, j)) in cells.iter().enumerate() {
            let gp = patch.pixel(i as u32, j as u32)[channel] as f64;
            values[k] = gp;
            for (slot, (di, dj)) in NEIGHBOURS.iter().enumerate() {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                let gq = patch.pixel(ni as u32, nj as u32)[channel] as f64;
                rhs[k] += gp - gq;
                let q = index[nj as usize * w + ni as usize];
                if q != usize::MAX {
                    links[k][slot] = q;
                } else {
                    let gx = (region.x as i64 + ni) as u32;
                    let gy = (region.y as i64 + nj) as u32;
                    rhs[k] += bg.pixel(gx, gy)[channel] as f64;
                }
            }
        }

        let mut sweeps = 0;
        let mut converged = false;
        while sweeps < settings.max_sweeps {
            sweeps += 1;
            let mut max_update = 0.0f64;
            for k in 0..values.len() {
                let mut sum = rhs[k];
                for &q in &links[k] {
                    if q != usize::MAX {
                        sum += values[q];
                    }
                }
                let delta = omega * (sum / 4.0 - values[k]);
                values[k] += delta;
                max_update = max_update.max(delta.abs());
            }
            if max_update < settings.tolerance {
                converged = true;
                break;
            }
        }
        stats.sweeps = stats.sweeps.max(sweeps);
        stats.converged &= converged;

        for (k, &(i, j)) in cells.iter().enumerate() {
            let (gx, gy) = (region.x + i as u32, region.y + j as u32);
            let mut px = out.pixel(gx, gy);
            px[channel] = values[k].round().clamp(0.0, 255.0) as u8;
            out.set_pixel(gx, gy, px);
        }
    }
    if !stats.converged {
        tracing::warn!(sweeps = stats.sweeps, "poisson solve hit the sweep cap");
    }
    Ok((out, stats))
}

/// Optimal SOR factor for the 5-point Laplacian on an `a`×`b` grid.
fn optimal_omega(a: u32, b: u32) -> f64 {
    let pi = std::f64::consts::PI;
    let rho = ((pi / (a as f64 + 1.0)).cos() + (pi / (b as f64 + 1.0)).cos()) / 2.0;
    2.0 / (1.0 + (1.0 - rho * rho).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_guidance_returns_background() {
        let bg = ImageBuffer::from_fn(24, 20, |x, y| [(x * 9) as u8, (y * 11) as u8, ((x + y) * 5) as u8, 255]).unwrap();
        let region = PixelBox::new(3, 2, 16, 14);
        let patch = super::super::crop(&bg, region).unwrap();
        let out = poisson_blend(&patch, &bg, region, &Mask::new(16, 14, true)).unwrap();
        for (a, b) in out.raw().iter().zip(bg.raw()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
    }

    #[test]
    fn constant_patch_converges_to_background_constant() {
        let bg = ImageBuffer::filled(20, 20, [100, 150, 200, 255]).unwrap();
        let patch = ImageBuffer::filled(10, 10, [3, 250, 40, 255]).unwrap();
        let region = PixelBox::new(5, 5, 10, 10);
        let out = poisson_blend(&patch, &bg, region, &Mask::new(10, 10, true)).unwrap();
        for p in out.raw().chunks(4) {
            assert!((p[0] as i32 - 100).abs() <= 1);
            assert!((p[1] as i32 - 150).abs() <= 1);
            assert!((p[2] as i32 - 200).abs() <= 1);
        }
    }

    #[test]
    fn empty_mask_is_rejected() {
        let bg = ImageBuffer::filled(10, 10, [0, 0, 0, 255]).unwrap();
        let patch = ImageBuffer::filled(4, 4, [0, 0, 0, 255]).unwrap();
        let err = poisson_blend(&patch, &bg, PixelBox::new(3, 3, 4, 4), &Mask::new(4, 4, false)).unwrap_err();
        assert_eq!(err, RasterError::ZeroMask);
    }

    #[test]
    fn region_must_leave_a_border() {
        let bg = ImageBuffer::filled(10, 10, [0, 0, 0, 255]).unwrap();
        let patch = ImageBuffer::filled(4, 4, [0, 0, 0, 255]).unwrap();
        let err = poisson_blend(&patch, &bg, PixelBox::new(0, 3, 4, 4), &Mask::new(4, 4, true)).unwrap_err();
        assert_eq!(err.kind(), "OutOfBounds");
        let err = poisson_blend(&patch, &bg, PixelBox::new(6, 3, 4, 4), &Mask::new(4, 4, true)).unwrap_err();
        assert_eq!(err.kind(), "OutOfBounds");
    }

    #[test]
    fn omega_for_tiny_grid_is_near_one() {
        assert!((optimal_omega(1, 1) - 1.0).abs() < 1e-9);
        let w = optimal_omega(16, 16);
        assert!(w > 1.6 && w < 1.8);
    }
}
