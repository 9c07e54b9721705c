//! Dataset index: one tab-separated line per tile,
//! `tile_id  path  anchor_date  dominant_class  water_fraction`.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::{DwClass, FormatError, TileSample};

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub tile_id: String,
    pub path: PathBuf,
    pub anchor_date: NaiveDate,
    pub dominant_class: DwClass,
    pub water_fraction: f64,
}

impl ManifestEntry {
    pub fn for_tile(tile: &TileSample, path: PathBuf) -> Self {
        Self {
            tile_id: tile.tile_id.clone(),
            path,
            anchor_date: tile.anchor_date,
            dominant_class: tile.attributes.dominant_class,
            water_fraction: tile.attributes.water_fraction,
        }
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.tile_id,
            self.path.display(),
            self.anchor_date.format("%Y-%m-%d"),
            self.dominant_class.key(),
            self.water_fraction
        )
    }
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    entries.iter().map(|e| e.to_line() + "\n").collect()
}

/// Parses an index. Relative tile paths resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| FormatError::Malformed(format!("manifest line {}: {what}", i + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(bad(&format!("expected 5 columns, found {}", cols.len())));
        }
        let path = PathBuf::from(cols[1]);
        let path = if path.is_relative() { base.join(path) } else { path };
        let anchor_date = NaiveDate::parse_from_str(cols[2], "%Y-%m-%d").map_err(|_| bad("bad date"))?;
        let dominant_class =
            DwClass::ALL.into_iter().find(|c| c.key() == cols[3]).ok_or_else(|| bad("unknown class"))?;
        let water_fraction = cols[4].parse().map_err(|_| bad("bad water fraction"))?;
        out.push(ManifestEntry { tile_id: cols[0].to_string(), path, anchor_date, dominant_class, water_fraction });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, FormatError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| FormatError::Io { path: path.display().to_string(), source })?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const TILE_DIR: &str = "tiles";

/// Writes every tile to `dir/tiles/<id>.gmtl` and the index to
/// `dir/manifest.tsv` with relative paths. Returns the manifest path.
pub fn write_dataset(dir: &Path, tiles: &[TileSample]) -> Result<PathBuf, FormatError> {
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| FormatError::Io { path: path.clone(), source }
    };
    let tile_dir = dir.join(TILE_DIR);
    std::fs::create_dir_all(&tile_dir).map_err(io(&tile_dir))?;
    let mut entries = Vec::with_capacity(tiles.len());
    for t in tiles {
        let rel = PathBuf::from(TILE_DIR).join(format!("{}.gmtl", t.tile_id));
        super::write_tile(&dir.join(&rel), t)?;
        entries.push(ManifestEntry::for_tile(t, rel));
    }
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, format_manifest(&entries)).map_err(io(&path))?;
    Ok(path)
}
