use crate::error::{Error, Result};

/// Between-class variance (up to the constant factor 1/N²) for the split
/// `[0..=t] | [t+1..=255]`, from integer class moments.
///
/// `w0·w1·(μ0 − μ1)² · N² = (N·S0 − N0·S)² / (N0·N1)`. The difference is formed
/// exactly in i128 so equal moments always give bit-equal scores.
#[inline]
pub(crate) fn between_class_score(total: u64, sum: u128, n0: u64, s0: u128) -> f64 {
    let n1 = total - n0;
    if n0 == 0 || n1 == 0 {
        return 0.0;
    }
    let diff = total as i128 * s0 as i128 - n0 as i128 * sum as i128;
    let diff = diff as f64;
    diff * diff / (n0 as f64 * n1 as f64)
}

/// Otsu threshold over a 256-bin histogram.
///
/// Returns the smallest `t` maximising between-class variance for the classes
/// `[0..=t]` and `[t+1..=255]`.
pub fn otsu_threshold(histogram: &[u64; 256]) -> Result<u8> {
    let occupied = histogram.iter().filter(|&&c| c > 0).count();
    if occupied < 2 {
        return Err(Error::DegenerateHistogram);
    }
    let total: u64 = histogram.iter().sum();
    let sum: u128 = histogram
        .iter()
        .enumerate()
        .map(|(i, &c)| i as u128 * c as u128)
        .sum();

    let mut best_t = 0u8;
    let mut best = f64::NEG_INFINITY;
    let (mut n0, mut s0) = (0u64, 0u128);
    for t in 0..255usize {
        n0 += histogram[t];
        s0 += t as u128 * histogram[t] as u128;
        let score = between_class_score(total, sum, n0, s0);
        if score > best {
            best = score;
            best_t = t as u8;
        }
    }
    Ok(best_t)
}

/// Histogram of an 8-bit single-channel buffer.
pub fn gray_histogram(gray: &[u8]) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &g in gray {
        hist[g as usize] += 1;
    }
    hist
}
