use super::Thumbnail;
use crate::error::{Error, Result};

/// Binomial taps; the separable 5×5 kernel is their outer product over 16².
const TAPS: [u32; 5] = [1, 4, 6, 4, 1];

/// 5×5 Gaussian (binomial) blur with edge replication.
///
/// Both passes run in integer arithmetic and the result is rounded once at
/// the end, so the output is exact and platform independent.
pub fn gaussian_blur5(image: &Thumbnail) -> Result<Thumbnail> {
    let (w, h) = (image.width, image.height);
    if w == 0 || h == 0 || image.pixels.is_empty() {
        return Err(Error::InvalidInput("cannot blur an empty image".into()));
    }
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;

    // horizontal pass, scale 16
    let mut horiz = vec![0u32; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0u32; 3];
            for (k, tap) in TAPS.iter().enumerate() {
                let sx = clamp(x as isize + k as isize - 2, w);
                let px = image.rgb(sx, y);
                for c in 0..3 {
                    acc[c] += tap * px[c] as u32;
                }
            }
            let o = (y * w + x) * 3;
            horiz[o..o + 3].copy_from_slice(&acc);
        }
    }

    // vertical pass, scale 256
    let mut out = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0u32; 3];
            for (k, tap) in TAPS.iter().enumerate() {
                let sy = clamp(y as isize + k as isize - 2, h);
                let i = (sy * w + x) * 3;
                for c in 0..3 {
                    acc[c] += tap * horiz[i + c];
                }
            }
            let o = (y * w + x) * 3;
            for c in 0..3 {
                out[o + c] = ((acc[c] + 128) >> 8) as u8;
            }
        }
    }

    Ok(Thumbnail {
        width: w,
        height: h,
        pixels: out,
        downsample: image.downsample,
    })
}
