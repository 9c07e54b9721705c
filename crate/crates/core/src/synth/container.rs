//! Binary tile container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     b"GMTL"
//! version   u16
//! header    tile_id (u16 len + UTF-8), anchor (i32 year, u8 month, u8 day),
//!           lat f64, lon f64, gsd_m f64, window_days u32, max_cloud f64,
//!           height u32, width u32,
//!           modality count u8, then per modality:
//!             name (u8 len + UTF-8), kind u8 (0 continuous, 1 categorical),
//!             channels or class count u16
//! payloads  per modality in table order: f32 values (channel-major) or u8 labels
//! caption   u32 len + UTF-8
//! attrs     u32 len + UTF-8 key=value lines
//! checksum  u32 CRC-32 of every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use thiserror::Error;

use super::attributes::{ElevationStats, GeoTags, StructuredAttributes};
use super::generate::{AcquisitionMeta, TileSample, S1_BANDS, S2_BANDS};
use super::geomorphon::Landform;
use super::{ClassMap, DwClass, Raster, DW_CLASSES, ESA_CLASSES};

pub const TILE_MAGIC: [u8; 4] = *b"GMTL";
pub const TILE_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad magic bytes {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported container version {found}")]
    UnsupportedVersion { found: u16 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed container: {0}")]
    Malformed(String),
}

const CONTINUOUS: u8 = 0;
const CATEGORICAL: u8 = 1;

const TABLE: [(&str, u8, usize); 6] = [
    ("s2", CONTINUOUS, S2_BANDS),
    ("s1", CONTINUOUS, S1_BANDS),
    ("dem", CONTINUOUS, 1),
    ("canopy", CONTINUOUS, 1),
    ("dw", CATEGORICAL, DW_CLASSES),
    ("esa", CATEGORICAL, ESA_CLASSES),
];

pub fn encode_tile(tile: &TileSample) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&TILE_MAGIC);
    buf.extend_from_slice(&TILE_VERSION.to_le_bytes());
    put_str16(&mut buf, &tile.tile_id);
    buf.extend_from_slice(&tile.anchor_date.year().to_le_bytes());
    buf.push(tile.anchor_date.month() as u8);
    buf.push(tile.anchor_date.day() as u8);
    buf.extend_from_slice(&tile.latlon.0.to_le_bytes());
    buf.extend_from_slice(&tile.latlon.1.to_le_bytes());
    buf.extend_from_slice(&tile.acquisition.gsd_m.to_le_bytes());
    buf.extend_from_slice(&tile.acquisition.window_days.to_le_bytes());
    buf.extend_from_slice(&tile.acquisition.max_cloud_fraction.to_le_bytes());
    buf.extend_from_slice(&(tile.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(tile.width() as u32).to_le_bytes());
    buf.push(TABLE.len() as u8);
    for (name, kind, count) in TABLE {
        buf.push(name.len() as u8);
        buf.extend_from_slice(name.as_bytes());
        buf.push(kind);
        buf.extend_from_slice(&(count as u16).to_le_bytes());
    }
    for r in [&tile.s2, &tile.s1, &tile.dem, &tile.canopy] {
        for v in r.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf.extend_from_slice(tile.dw.data());
    buf.extend_from_slice(tile.esa.data());
    put_str32(&mut buf, &tile.caption);
    put_str32(&mut buf, &attributes_to_text(&tile.attributes));
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn decode_tile(bytes: &[u8]) -> Result<TileSample, FormatError> {
    if bytes.len() >= 4 && bytes[..4] != TILE_MAGIC {
        return Err(FormatError::BadMagic { found: bytes[..4].to_vec() });
    }
    if bytes.len() >= 6 {
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != TILE_VERSION {
            return Err(FormatError::UnsupportedVersion { found: version });
        }
    }
    if bytes.len() < 10 {
        return Err(FormatError::Checksum { stored: 0, computed: crc32fast::hash(bytes) });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 6 };
    let tile_id = r.str16()?;
    let year = r.i32()?;
    let month = r.u8()? as u32;
    let day = r.u8()? as u32;
    let anchor_date = NaiveDate::from_ymd_opt(year, month, day)
        .ok_or_else(|| FormatError::Malformed(format!("invalid date {year}-{month}-{day}")))?;
    let lat = r.f64()?;
    let lon = r.f64()?;
    let acquisition = AcquisitionMeta { gsd_m: r.f64()?, window_days: r.u32()?, max_cloud_fraction: r.f64()? };
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let count = r.u8()? as usize;
    if count != TABLE.len() {
        return Err(FormatError::Malformed(format!("expected {} modalities, found {count}", TABLE.len())));
    }
    for (name, kind, channels) in TABLE {
        let n = r.u8()? as usize;
        let found = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| FormatError::Malformed("modality name is not UTF-8".into()))?;
        let k = r.u8()?;
        let c = r.u16()? as usize;
        if found != name || k != kind || c != channels {
            return Err(FormatError::Malformed(format!(
                "modality table entry {found}/{k}/{c} where {name}/{kind}/{channels} expected"
            )));
        }
    }
    let plane = height
        .checked_mul(width)
        .ok_or_else(|| FormatError::Malformed("geometry overflows".into()))?;
    let mut rasters = Vec::new();
    for (_, _, channels) in &TABLE[..4] {
        let n = channels * plane;
        let raw = r.take(n * 4)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        rasters.push(
            Raster::new(*channels, height, width, data).map_err(|e| FormatError::Malformed(e.to_string()))?,
        );
    }
    let dw = ClassMap::new(DW_CLASSES, height, width, r.take(plane)?.to_vec())
        .map_err(|e| FormatError::Malformed(e.to_string()))?;
    let esa = ClassMap::new(ESA_CLASSES, height, width, r.take(plane)?.to_vec())
        .map_err(|e| FormatError::Malformed(e.to_string()))?;
    let caption = r.str32()?;
    let attributes = attributes_from_text(&r.str32()?)?;
    if r.pos != body.len() {
        return Err(FormatError::Malformed(format!("{} trailing bytes", body.len() - r.pos)));
    }
    let mut it = rasters.into_iter();
    let (s2, s1, dem, canopy) =
        (it.next().unwrap(), it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
    Ok(TileSample {
        tile_id,
        s2,
        s1,
        dem,
        canopy,
        dw,
        esa,
        anchor_date,
        latlon: (lat, lon),
        acquisition,
        caption,
        attributes,
    })
}

pub fn write_tile(path: &Path, tile: &TileSample) -> Result<(), FormatError> {
    let io = |source| FormatError::Io { path: path.display().to_string(), source };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&encode_tile(tile)).map_err(io)?;
    f.sync_all().map_err(io)
}

pub fn read_tile(path: &Path) -> Result<TileSample, FormatError> {
    let bytes = fs::read(path).map_err(|source| FormatError::Io { path: path.display().to_string(), source })?;
    decode_tile(&bytes)
}

fn put_str16(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u16).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn put_str32(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| FormatError::Malformed(format!("need {n} bytes at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn i32(&mut self) -> Result<i32, FormatError> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn utf8(&mut self, n: usize) -> Result<String, FormatError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| FormatError::Malformed("invalid UTF-8".into()))
    }

    fn str16(&mut self) -> Result<String, FormatError> {
        let n = self.u16()? as usize;
        self.utf8(n)
    }

    fn str32(&mut self) -> Result<String, FormatError> {
        let n = self.u32()? as usize;
        self.utf8(n)
    }
}

pub fn attributes_to_text(a: &StructuredAttributes) -> String {
    let join_f = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        s.push_str(k);
        s.push('=');
        s.push_str(&v);
        s.push('\n');
    };
    kv("dominant_class", a.dominant_class.key().into());
    kv("dominant_fraction", a.dominant_fraction.to_string());
    kv("class_fractions", join_f(&a.class_fractions));
    kv("water_fraction", a.water_fraction.to_string());
    kv("terrain_class", a.terrain_class.key().into());
    kv("elevation_min", a.elevation.min.to_string());
    kv("elevation_max", a.elevation.max.to_string());
    kv("elevation_mean", a.elevation.mean.to_string());
    kv("tags_center", a.geo_tags.center.join(";"));
    kv("tags_surrounding", a.geo_tags.surrounding.join(";"));
    kv("tags_area", a.geo_tags.area.join(";"));
    s
}

pub fn attributes_from_text(text: &str) -> Result<StructuredAttributes, FormatError> {
    let mut map = std::collections::HashMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FormatError::Malformed(format!("attribute line without '=': {line}")))?;
        map.insert(k, v);
    }
    let get = |k: &str| map.get(k).copied().ok_or_else(|| FormatError::Malformed(format!("missing attribute {k}")));
    let num = |k: &str| -> Result<f64, FormatError> {
        get(k)?.parse().map_err(|_| FormatError::Malformed(format!("attribute {k} is not a number")))
    };
    let list = |k: &str| -> Result<Vec<String>, FormatError> {
        let v = get(k)?;
        Ok(if v.is_empty() { Vec::new() } else { v.split(';').map(str::to_string).collect() })
    };
    let dominant = get("dominant_class")?;
    let dominant_class = DwClass::ALL
        .into_iter()
        .find(|c| c.key() == dominant)
        .ok_or_else(|| FormatError::Malformed(format!("unknown class {dominant}")))?;
    let terrain = get("terrain_class")?;
    let terrain_class =
        Landform::from_key(terrain).ok_or_else(|| FormatError::Malformed(format!("unknown landform {terrain}")))?;
    let class_fractions = get("class_fractions")?
        .split(',')
        .map(|x| x.parse::<f64>().map_err(|_| FormatError::Malformed("bad class fraction".into())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StructuredAttributes {
        dominant_class,
        dominant_fraction: num("dominant_fraction")?,
        class_fractions,
        water_fraction: num("water_fraction")?,
        terrain_class,
        elevation: ElevationStats {
            min: num("elevation_min")?,
            max: num("elevation_max")?,
            mean: num("elevation_mean")?,
        },
        geo_tags: GeoTags {
            center: list("tags_center")?,
            surrounding: list("tags_surrounding")?,
            area: list("tags_area")?,
        },
    })
}
