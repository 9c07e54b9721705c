//! Synthetic aligned multimodal tiles with known cross-modal couplings.

mod anchor;
mod attributes;
mod classes;
mod container;
mod fields;
mod generate;
mod geomorphon;
mod manifest;
mod raster;
mod water;

use thiserror::Error;

pub use anchor::{fnv1a64, temporal_anchor, ANCHOR_DAY, ANCHOR_YEARS};
pub use attributes::{
    climate_zone, ElevationBand, ElevationStats, GeoTags, ReliefBand, StructuredAttributes,
    SURROUNDING_MIN_FRACTION,
};
pub use classes::{DwClass, EsaClass, DW_CLASSES, ESA_CLASSES};
pub use container::{
    attributes_from_text, attributes_to_text, decode_tile, encode_tile, read_tile, write_tile, FormatError,
    TILE_MAGIC, TILE_VERSION,
};
pub use fields::{gaussian_blur, smooth_field};
pub use generate::{
    generate_rasters, tile_seed, AcquisitionMeta, GeneratorConfig, TileSample, S1_BANDS, S1_BAND_NAMES,
    S2_BANDS, S2_BAND_NAMES,
};
pub use geomorphon::{
    geomorphon_classify, landform_from_counts, landform_mode, GeomorphonParams, Landform, LANDFORMS,
};
pub use manifest::{
    format_manifest, parse_manifest, read_manifest, write_dataset, ManifestEntry, MANIFEST_FILE, TILE_DIR,
};
pub use raster::{ClassMap, Raster};
pub use water::water_consensus;

use crate::caption::{caption_tile, CaptionAudit, CaptionError, DEFAULT_CANDIDATES};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error(transparent)]
    Caption(#[from] CaptionError),
}

/// Generates a tile and runs the captioning pipeline over it.
pub fn generate_tile(tile_id: &str, cfg: &GeneratorConfig, seed: u64) -> Result<TileSample, SynthError> {
    generate_tile_with_audit(tile_id, cfg, seed).map(|(t, _)| t)
}

pub fn generate_tile_with_audit(
    tile_id: &str,
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<(TileSample, CaptionAudit), SynthError> {
    let mut tile = generate_rasters(tile_id, cfg, seed)?;
    let audit = caption_tile(&tile, DEFAULT_CANDIDATES)?;
    tile.caption = audit.final_caption.clone();
    Ok((tile, audit))
}

/// Tile id used by dataset generation for the `index`-th tile.
pub fn dataset_tile_id(seed: u64, index: usize) -> String {
    format!("s{seed}-t{index:06}")
}

/// Generates `n` tiles with ids from [`dataset_tile_id`].
pub fn generate_dataset(n: usize, cfg: &GeneratorConfig, seed: u64) -> Result<Vec<TileSample>, SynthError> {
    (0..n).map(|i| generate_tile(&dataset_tile_id(seed, i), cfg, seed)).collect()
}
