use super::Thumbnail;

/// An HSV box. Hue in degrees, saturation and value in `[0, 1]`.
///
/// Lower bounds are inclusive, upper bounds exclusive. A hue interval with
/// `min > max` wraps through 0°.
#[derive(Debug, Clone, PartialEq)]
pub struct HsvRange {
    pub hue: Option<(f64, f64)>,
    pub sat_min: f64,
    pub sat_max: Option<f64>,
    pub val_min: f64,
    pub val_max: Option<f64>,
}

impl HsvRange {
    pub fn contains(&self, h: f64, s: f64, v: f64) -> bool {
        if let Some((lo, hi)) = self.hue {
            let inside = if lo <= hi {
                h >= lo && h <= hi
            } else {
                h >= lo || h <= hi
            };
            if !inside {
                return false;
            }
        }
        s >= self.sat_min
            && self.sat_max.map_or(true, |m| s < m)
            && v >= self.val_min
            && self.val_max.map_or(true, |m| v < m)
    }
}

/// Pen-marking color ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct PenConfig {
    pub ranges: Vec<HsvRange>,
}

impl PenConfig {
    pub fn none() -> Self {
        Self { ranges: Vec::new() }
    }

    pub fn blue() -> HsvRange {
        HsvRange {
            hue: Some((200.0, 260.0)),
            sat_min: 0.30,
            sat_max: None,
            val_min: 0.20,
            val_max: None,
        }
    }

    pub fn green() -> HsvRange {
        HsvRange {
            hue: Some((80.0, 160.0)),
            sat_min: 0.30,
            sat_max: None,
            val_min: 0.20,
            val_max: None,
        }
    }

    pub fn black() -> HsvRange {
        HsvRange {
            hue: None,
            sat_min: 0.0,
            sat_max: None,
            val_min: 0.0,
            val_max: Some(0.20),
        }
    }

    pub fn is_pen(&self, rgb: [u8; 3]) -> bool {
        if self.ranges.is_empty() {
            return false;
        }
        let (h, s, v) = rgb_to_hsv(rgb);
        self.ranges.iter().any(|r| r.contains(h, s, v))
    }
}

impl Default for PenConfig {
    fn default() -> Self {
        Self {
            ranges: vec![Self::blue(), Self::green(), Self::black()],
        }
    }
}

/// Standard hexcone RGB→HSV. Hue in `[0, 360)`, zero for achromatic pixels.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let r = rgb[0] as f64 / 255.0;
    let g = rgb[1] as f64 / 255.0;
    let b = rgb[2] as f64 / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let h = if h >= 360.0 { h - 360.0 } else { h };
    (h, s, v)
}

/// Row-major `H×W` mask of pixels matching any configured pen range.
pub fn pen_mask(image: &Thumbnail, config: &PenConfig) -> Vec<bool> {
    image
        .pixels
        .chunks_exact(3)
        .map(|px| config.is_pen([px[0], px[1], px[2]]))
        .collect()
}
