//! Slide thumbnail to tissue mask to tile grid.
//!
//! Pipeline:
//!   1. 5×5 binomial blur of the RGB thumbnail.
//!   2. Luma grayscale, Otsu threshold; tissue is the darker class.
//!   3. Pen markings (blue, green, black) removed via HSV ranges.
//!   4. Non-overlapping tile grid at the target resolution, kept where the
//!      projected footprint carries enough tissue.

mod blur;
pub mod io;
mod mask;
mod otsu;
mod pen;
mod tiles;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use blur::gaussian_blur5;
pub use mask::{build_tissue_mask, grayscale, TissueMask};
pub use otsu::{gray_histogram, otsu_threshold};
pub use pen::{pen_mask, rgb_to_hsv, HsvRange, PenConfig};
pub use tiles::{enumerate_tiles, footprint_tissue_fraction, TileCoord, TileGrid, TileParams};

pub const DEFAULT_TILE_PX: u32 = 224;
pub const DEFAULT_TARGET_MPP: f64 = 0.5;
pub const DEFAULT_MIN_TISSUE_FRAC: f64 = 0.25;
pub const DEFAULT_THUMBNAIL_LONG_SIDE: usize = 2048;

/// Base-level extent and resolution of one slide, as read from its JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideGeometry {
    pub slide_id: String,
    pub width_px: u32,
    pub height_px: u32,
    pub base_mpp: f64,
}

impl SlideGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::InvalidInput(format!(
                "slide {} has zero extent",
                self.slide_id
            )));
        }
        if !(self.base_mpp > 0.0 && self.base_mpp <= 10.0) {
            return Err(Error::InvalidInput(format!(
                "slide {} base_mpp {} outside (0, 10]",
                self.slide_id, self.base_mpp
            )));
        }
        Ok(())
    }
}

/// Interleaved 8-bit RGB thumbnail; `downsample` is base pixels per thumbnail pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Thumbnail {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub downsample: f64,
}

impl Thumbnail {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>, downsample: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("empty thumbnail".into()));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "thumbnail {}x{} needs {} bytes, got {}",
                width,
                height,
                width * height * 3,
                pixels.len()
            )));
        }
        if !(downsample.is_finite() && downsample > 0.0) {
            return Err(Error::InvalidInput(format!("downsample {downsample} not positive")));
        }
        Ok(Self {
            width,
            height,
            pixels,
            downsample,
        })
    }

    /// Solid-color thumbnail, mostly useful in tests.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3], downsample: f64) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, pixels, downsample)
    }

    /// Build a thumbnail for `geom` from a decoded image, deriving the downsample
    /// from the width ratio and checking the height agrees within one pixel.
    pub fn for_slide(width: usize, height: usize, pixels: Vec<u8>, geom: &SlideGeometry) -> Result<Self> {
        geom.validate()?;
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!("slide {}: empty thumbnail", geom.slide_id)));
        }
        let downsample = geom.width_px as f64 / width as f64;
        let expected_h = geom.height_px as f64 / downsample;
        if (height as f64 - expected_h).abs() > 1.0 {
            return Err(Error::Shape(format!(
                "slide {}: thumbnail {}x{} inconsistent with slide {}x{}",
                geom.slide_id, width, height, geom.width_px, geom.height_px
            )));
        }
        Self::new(width, height, pixels, downsample)
    }

    #[inline]
    pub fn rgb(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set_rgb(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Shrink by an integer area-averaging factor until the long side is at
    /// most `max_long_side`. Returns `self` unchanged when already small enough.
    pub fn fit_long_side(self, max_long_side: usize) -> Self {
        let long = self.width.max(self.height);
        if max_long_side == 0 || long <= max_long_side {
            return self;
        }
        let factor = long.div_ceil(max_long_side);
        let out_w = self.width.div_ceil(factor);
        let out_h = self.height.div_ceil(factor);
        let mut out = vec![0u8; out_w * out_h * 3];
        for oy in 0..out_h {
            let y0 = oy * factor;
            let y1 = (y0 + factor).min(self.height);
            for ox in 0..out_w {
                let x0 = ox * factor;
                let x1 = (x0 + factor).min(self.width);
                let mut acc = [0u64; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let px = self.rgb(x, y);
                        for c in 0..3 {
                            acc[c] += px[c] as u64;
                        }
                    }
                }
                let n = ((y1 - y0) * (x1 - x0)) as u64;
                let o = (oy * out_w + ox) * 3;
                for c in 0..3 {
                    out[o + c] = ((acc[c] + n / 2) / n) as u8;
                }
            }
        }
        Self {
            width: out_w,
            height: out_h,
            pixels: out,
            downsample: self.downsample * factor as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_bounds() {
        let mut g = SlideGeometry {
            slide_id: "s".into(),
            width_px: 10,
            height_px: 10,
            base_mpp: 0.25,
        };
        assert!(g.validate().is_ok());
        g.base_mpp = 0.0;
        assert!(g.validate().is_err());
        g.base_mpp = 10.5;
        assert!(g.validate().is_err());
        g.base_mpp = 0.5;
        g.width_px = 0;
        assert!(g.validate().is_err());
    }

    #[test]
    fn thumbnail_for_slide_checks_aspect() {
        let g = SlideGeometry {
            slide_id: "s".into(),
            width_px: 4000,
            height_px: 2000,
            base_mpp: 0.25,
        };
        let t = Thumbnail::for_slide(400, 200, vec![0; 400 * 200 * 3], &g).unwrap();
        assert_eq!(t.downsample, 10.0);
        assert!(Thumbnail::for_slide(400, 300, vec![0; 400 * 300 * 3], &g).is_err());
    }

    #[test]
    fn fit_long_side_area_averages() {
        let mut t = Thumbnail::filled(4, 2, [0, 0, 0], 1.0).unwrap();
        t.set_rgb(0, 0, [255, 255, 255]);
        let small = t.fit_long_side(2);
        assert_eq!((small.width, small.height), (2, 1));
        assert_eq!(small.downsample, 2.0);
        // (255 + 0 + 0 + 0) / 4 rounds to 64
        assert_eq!(small.rgb(0, 0), [64, 64, 64]);
        assert_eq!(small.rgb(1, 0), [0, 0, 0]);
    }

    #[test]
    fn empty_thumbnail_rejected() {
        assert!(matches!(
            Thumbnail::new(0, 3, vec![], 1.0),
            Err(Error::InvalidInput(_))
        ));
    }
}
