use super::{gaussian_blur5, gray_histogram, otsu_threshold, PenConfig, Thumbnail};
use crate::error::{Error, Result};

/// Boolean tissue mask aligned to a thumbnail.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueMask {
    pub width: usize,
    pub height: usize,
    /// Base pixels per mask pixel, inherited from the thumbnail.
    pub downsample: f64,
    pub bits: Vec<bool>,
    pub tissue_fraction: f64,
    /// Set when the histogram had a single occupied bin; the mask is then empty.
    pub degenerate: bool,
    pub threshold: Option<u8>,
}

impl TissueMask {
    pub fn from_bits(width: usize, height: usize, downsample: f64, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Shape(format!(
                "mask {}x{} needs {} bits, got {}",
                width,
                height,
                width * height,
                bits.len()
            )));
        }
        let tissue_fraction = fraction(&bits);
        Ok(Self {
            width,
            height,
            downsample,
            bits,
            tissue_fraction,
            degenerate: false,
            threshold: None,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }
}

fn fraction(bits: &[bool]) -> f64 {
    if bits.is_empty() {
        return 0.0;
    }
    bits.iter().filter(|&&b| b).count() as f64 / bits.len() as f64
}

/// Rounded integer luma, `0.299 R + 0.587 G + 0.114 B`.
pub fn grayscale(image: &Thumbnail) -> Vec<u8> {
    image
        .pixels
        .chunks_exact(3)
        .map(|px| {
            let l = 299 * px[0] as u32 + 587 * px[1] as u32 + 114 * px[2] as u32;
            ((l + 500) / 1000) as u8
        })
        .collect()
}

/// Blur, grayscale, Otsu, then drop pen pixels. Tissue is the dark class.
///
/// Pen detection runs on the unblurred thumbnail so that a pen pixel can never
/// survive into the mask.
pub fn build_tissue_mask(image: &Thumbnail, pen: &PenConfig) -> Result<TissueMask> {
    let blurred = gaussian_blur5(image)?;
    let gray = grayscale(&blurred);
    let n = gray.len();
    let (threshold, degenerate) = match otsu_threshold(&gray_histogram(&gray)) {
        Ok(t) => (Some(t), false),
        Err(Error::DegenerateHistogram) => {
            log::warn!("degenerate gray histogram; emitting empty tissue mask");
            (None, true)
        }
        Err(e) => return Err(e),
    };
    let bits: Vec<bool> = match threshold {
        None => vec![false; n],
        Some(t) => {
            let pens = super::pen_mask(image, pen);
            gray.iter().zip(&pens).map(|(&g, &p)| g <= t && !p).collect()
        }
    };
    let tissue_fraction = fraction(&bits);
    Ok(TissueMask {
        width: image.width,
        height: image.height,
        downsample: image.downsample,
        bits,
        tissue_fraction,
        degenerate,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TISSUE: [u8; 3] = [150, 50, 120];
    const GLASS: [u8; 3] = [255, 255, 255];

    fn half_and_half(w: usize, h: usize) -> Thumbnail {
        let mut img = Thumbnail::filled(w, h, GLASS, 1.0).unwrap();
        for y in 0..h {
            for x in 0..w / 2 {
                img.set_rgb(x, y, TISSUE);
            }
        }
        img
    }

    #[test]
    fn luma_rounding() {
        let img = Thumbnail::new(3, 1, vec![255, 255, 255, 0, 0, 0, 100, 50, 200], 1.0).unwrap();
        // 0.299*100 + 0.587*50 + 0.114*200 = 82.15
        assert_eq!(grayscale(&img), vec![255, 0, 82]);
    }

    #[test]
    fn half_dark_half_glass() {
        let img = half_and_half(20, 12);
        let mask = build_tissue_mask(&img, &PenConfig::default()).unwrap();
        assert!(!mask.degenerate);
        for y in 0..12 {
            for x in 0..20 {
                assert_eq!(mask.get(x, y), x < 10, "pixel ({x},{y})");
            }
        }
        assert_eq!(mask.tissue_fraction, 0.5);
    }

    #[test]
    fn blank_slide_is_degenerate() {
        let img = Thumbnail::filled(8, 8, GLASS, 1.0).unwrap();
        let mask = build_tissue_mask(&img, &PenConfig::default()).unwrap();
        assert!(mask.degenerate);
        assert!(mask.bits.iter().all(|b| !b));
        assert_eq!(mask.tissue_fraction, 0.0);
    }

    #[test]
    fn pen_over_tissue_is_excluded() {
        let mut img = half_and_half(20, 12);
        for y in 2..6 {
            for x in 2..6 {
                img.set_rgb(x, y, [0, 0, 255]);
            }
        }
        let mask = build_tissue_mask(&img, &PenConfig::default()).unwrap();
        for y in 2..6 {
            for x in 2..6 {
                assert!(!mask.get(x, y));
            }
        }
        assert!(mask.get(8, 10));
    }

    #[test]
    fn fraction_matches_count() {
        let m = TissueMask::from_bits(2, 2, 1.0, vec![true, false, false, false]).unwrap();
        assert_eq!(m.tissue_fraction, 0.25);
        assert!(TissueMask::from_bits(2, 2, 1.0, vec![true]).is_err());
    }
}
