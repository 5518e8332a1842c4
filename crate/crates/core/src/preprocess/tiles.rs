use serde::{Deserialize, Serialize};

use super::{SlideGeometry, TissueMask, DEFAULT_MIN_TISSUE_FRAC, DEFAULT_TARGET_MPP, DEFAULT_TILE_PX};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileCoord {
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileParams {
    pub tile_px: u32,
    pub target_mpp: f64,
    pub min_tissue_frac: f64,
}

impl Default for TileParams {
    fn default() -> Self {
        Self {
            tile_px: DEFAULT_TILE_PX,
            target_mpp: DEFAULT_TARGET_MPP,
            min_tissue_frac: DEFAULT_MIN_TISSUE_FRAC,
        }
    }
}

/// Tiles kept for one slide. Coordinates are base-level top-left corners.
#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    pub slide_id: String,
    pub tile_px: u32,
    pub target_mpp: f64,
    /// Resolution actually sampled: `base_mpp` times the integer level factor.
    pub effective_mpp: f64,
    pub tiles: Vec<TileCoord>,
    pub tissue_frac: Vec<f64>,
}

impl TileGrid {
    pub fn empty(slide_id: &str, tile_px: u32, target_mpp: f64) -> Self {
        Self {
            slide_id: slide_id.to_string(),
            tile_px,
            target_mpp,
            effective_mpp: target_mpp,
            tiles: Vec::new(),
            tissue_frac: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }
}

/// Integer downscale from base to target resolution (nearest level, at least 1).
pub(crate) fn level_factor(base_mpp: f64, target_mpp: f64) -> u32 {
    ((target_mpp / base_mpp).round() as u32).max(1)
}

/// Overlap length of `[a0, a1)` with the unit cell `[i, i + 1)`.
#[inline]
fn cell_overlap(i: usize, a0: f64, a1: f64) -> f64 {
    let lo = a0.max(i as f64);
    let hi = a1.min(i as f64 + 1.0);
    (hi - lo).max(0.0)
}

/// Area-weighted tissue fraction of a base-level rectangle projected onto the mask.
///
/// Mask pixels outside the mask extent count as background. A footprint that
/// is fully tissue yields exactly 1.0.
pub fn footprint_tissue_fraction(mask: &TissueMask, x0: f64, y0: f64, size: f64) -> f64 {
    let ds = mask.downsample;
    let (mx0, mx1) = (x0 / ds, (x0 + size) / ds);
    let (my0, my1) = (y0 / ds, (y0 + size) / ds);
    let (cx0, cx1) = (mx0.floor() as usize, mx1.ceil() as usize);
    let (cy0, cy1) = (my0.floor() as usize, my1.ceil() as usize);

    let mut tissue = 0.0;
    let mut total = 0.0;
    for j in cy0..cy1 {
        let wy = cell_overlap(j, my0, my1);
        if wy == 0.0 {
            continue;
        }
        let mut row_tissue = 0.0;
        let mut row_total = 0.0;
        for i in cx0..cx1 {
            let wx = cell_overlap(i, mx0, mx1);
            if wx == 0.0 {
                continue;
            }
            row_total += wx;
            if j < mask.height && i < mask.width && mask.get(i, j) {
                row_tissue += wx;
            }
        }
        tissue += wy * row_tissue;
        total += wy * row_total;
    }
    if total > 0.0 {
        tissue / total
    } else {
        0.0
    }
}

/// Non-overlapping tile grid at the target resolution, filtered by tissue fraction.
///
/// Tiles are emitted row-major. The stride equals the tile footprint, so all
/// coordinates are multiples of `tile_px × level_factor` base pixels.
pub fn enumerate_tiles(mask: &TissueMask, geom: &SlideGeometry, params: &TileParams) -> Result<TileGrid> {
    geom.validate()?;
    if !(0.0..=1.0).contains(&params.min_tissue_frac) {
        return Err(Error::InvalidInput(format!(
            "min_tissue_frac {} outside [0, 1]",
            params.min_tissue_frac
        )));
    }
    if params.tile_px == 0 {
        return Err(Error::InvalidInput("tile_px must be positive".into()));
    }
    if !(params.target_mpp > 0.0) || params.target_mpp < geom.base_mpp * (1.0 - 1e-9) {
        return Err(Error::UnsupportedResolution {
            target_mpp: params.target_mpp,
            base_mpp: geom.base_mpp,
        });
    }
    let factor = level_factor(geom.base_mpp, params.target_mpp);
    let effective_mpp = geom.base_mpp * factor as f64;
    if (effective_mpp - params.target_mpp).abs() > 1e-9 {
        log::info!(
            "slide {}: target {} mpp sampled at {} mpp (level factor {})",
            geom.slide_id,
            params.target_mpp,
            effective_mpp,
            factor
        );
    }
    let footprint = params.tile_px as u64 * factor as u64;
    let nx = geom.width_px as u64 / footprint;
    let ny = geom.height_px as u64 / footprint;

    let mut grid = TileGrid {
        slide_id: geom.slide_id.clone(),
        tile_px: params.tile_px,
        target_mpp: params.target_mpp,
        effective_mpp,
        tiles: Vec::new(),
        tissue_frac: Vec::new(),
    };
    for ty in 0..ny {
        for tx in 0..nx {
            let (x, y) = (tx * footprint, ty * footprint);
            let frac = footprint_tissue_fraction(mask, x as f64, y as f64, footprint as f64);
            // an all-background footprint is never a tile, even at threshold 0
            if frac > 0.0 && frac >= params.min_tissue_frac {
                grid.tiles.push(TileCoord {
                    x: x as u32,
                    y: y as u32,
                });
                grid.tissue_frac.push(frac);
            }
        }
    }
    Ok(grid)
}
