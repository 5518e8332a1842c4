//! File formats for the tiling stage: PNG thumbnails with JSON geometry
//! sidecars in, tile-grid CSV and mask PNG out.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};

use super::{SlideGeometry, Thumbnail, TileCoord, TileGrid, TissueMask};
use crate::error::{Error, Result};

pub const TILE_CSV_HEADER: &str = "slide_id,x,y,tile_px,target_mpp,tissue_frac";

pub fn read_geometry(path: &Path) -> Result<SlideGeometry> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let geom: SlideGeometry = serde_json::from_str(&text)?;
    geom.validate()?;
    Ok(geom)
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    Ok(img.to_rgb8())
}

/// Load a thumbnail PNG for the slide described by `geom`.
pub fn read_thumbnail(path: &Path, geom: &SlideGeometry) -> Result<Thumbnail> {
    let bytes = std::fs::read(path)?;
    let rgb = decode_png(&bytes)?;
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Thumbnail::for_slide(w, h, rgb.into_raw(), geom)
}

pub fn write_thumbnail_png(thumb: &Thumbnail, path: &Path) -> Result<()> {
    let img = RgbImage::from_raw(thumb.width as u32, thumb.height as u32, thumb.pixels.clone())
        .ok_or_else(|| Error::Shape("thumbnail buffer size".into()))?;
    img.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Mask as an 8-bit PNG: 255 tissue, 0 background.
pub fn write_mask_png(mask: &TissueMask, path: &Path) -> Result<()> {
    let data: Vec<u8> = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(mask.width as u32, mask.height as u32, data)
        .ok_or_else(|| Error::Shape("mask buffer size".into()))?;
    img.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Writes the grid with one row per tile. `target_mpp` holds the sampled
/// (effective) resolution.
pub fn write_tile_grid<W: Write>(grid: &TileGrid, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{TILE_CSV_HEADER}")?;
    for (t, frac) in grid.tiles.iter().zip(&grid.tissue_frac) {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            grid.slide_id, t.x, t.y, grid.tile_px, grid.effective_mpp, frac
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_tile_grid_file(grid: &TileGrid, path: &Path) -> Result<()> {
    write_tile_grid(grid, File::create(path)?)
}

#[derive(Debug, serde::Deserialize)]
struct TileRow {
    slide_id: String,
    x: u32,
    y: u32,
    tile_px: u32,
    target_mpp: f64,
    tissue_frac: f64,
}

/// Parse a tile-grid CSV. An empty grid needs `slide_id` from the caller
/// since the file then has only a header.
pub fn read_tile_grid<R: Read>(input: R, fallback_slide_id: &str) -> Result<TileGrid> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != TILE_CSV_HEADER {
        return Err(Error::Format(format!("unexpected tile grid header '{header}'")));
    }
    let mut grid = TileGrid::empty(fallback_slide_id, super::DEFAULT_TILE_PX, super::DEFAULT_TARGET_MPP);
    let mut seen = std::collections::HashSet::new();
    for (i, row) in rdr.deserialize::<TileRow>().enumerate() {
        let row = row?;
        if i == 0 {
            grid.slide_id = row.slide_id.clone();
            grid.tile_px = row.tile_px;
            grid.target_mpp = row.target_mpp;
            grid.effective_mpp = row.target_mpp;
        } else if row.slide_id != grid.slide_id || row.tile_px != grid.tile_px {
            return Err(Error::Format(format!("row {}: mixed slides or tile sizes", i + 1)));
        }
        let c = TileCoord { x: row.x, y: row.y };
        if !seen.insert(c) {
            return Err(Error::InvalidData(format!("duplicate tile ({}, {})", c.x, c.y)));
        }
        grid.tiles.push(c);
        grid.tissue_frac.push(row.tissue_frac);
    }
    Ok(grid)
}

pub fn read_tile_grid_file(path: &Path) -> Result<TileGrid> {
    let stem = path
        .file_name()
        .and_then(|s| s.to_str())
        .map(|s| s.trim_end_matches(".csv").trim_end_matches(".tiles"))
        .unwrap_or_default()
        .to_string();
    read_tile_grid(File::open(path)?, &stem)
}
