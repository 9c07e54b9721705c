use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::anchor::{fnv1a64, temporal_anchor};
use super::attributes::StructuredAttributes;
use super::fields::smooth_field;
use super::geomorphon::GeomorphonParams;
use super::{ClassMap, DwClass, EsaClass, Raster, SynthError, DW_CLASSES, ESA_CLASSES};

pub const S2_BANDS: usize = 12;
pub const S1_BANDS: usize = 4;
pub const S2_BAND_NAMES: [&str; S2_BANDS] =
    ["B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B9", "B11", "B12"];
pub const S1_BAND_NAMES: [&str; S1_BANDS] = ["VV", "VH", "HH", "HV"];

/// Acquisition protocol parameters kept as metadata. Synthetic modalities
/// are generated jointly, so none of these filter anything.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcquisitionMeta {
    pub gsd_m: f64,
    pub window_days: u32,
    pub max_cloud_fraction: f64,
}

impl Default for AcquisitionMeta {
    fn default() -> Self {
        Self { gsd_m: 10.0, window_days: 15, max_cloud_fraction: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TileSample {
    pub tile_id: String,
    pub s2: Raster,
    pub s1: Raster,
    pub dem: Raster,
    pub canopy: Raster,
    pub dw: ClassMap,
    pub esa: ClassMap,
    pub anchor_date: NaiveDate,
    pub latlon: (f64, f64),
    pub acquisition: AcquisitionMeta,
    pub caption: String,
    pub attributes: StructuredAttributes,
}

impl TileSample {
    pub fn height(&self) -> usize {
        self.s2.height()
    }

    pub fn width(&self) -> usize {
        self.s2.width()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub geomorphon: GeomorphonParams,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { height: 128, width: 128, patch: 4, geomorphon: GeomorphonParams::default() }
    }
}

impl GeneratorConfig {
    pub fn square(side: usize) -> Self {
        Self { height: side, width: side, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.height < 16 || self.width < 16 {
            return Err(SynthError::Config(format!(
                "tile geometry {}x{} is below the 16x16 minimum",
                self.height, self.width
            )));
        }
        if self.patch == 0 || !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(SynthError::Config(format!(
                "tile geometry {}x{} is not divisible by patch size {}",
                self.height, self.width, self.patch
            )));
        }
        if self.geomorphon.radius == 0 || self.geomorphon.radius > self.height.min(self.width) / 2 {
            return Err(SynthError::Config(format!(
                "geomorphon radius {} does not fit a {}x{} tile",
                self.geomorphon.radius, self.height, self.width
            )));
        }
        Ok(())
    }
}

struct Theme {
    base: (f64, f64),
    relief: (f64, f64),
    lat: (f64, f64),
}

fn theme(c: EsaClass) -> Theme {
    let t = |base, relief, lat| Theme { base, relief, lat };
    match c {
        EsaClass::TreeCover => t((100.0, 1800.0), (60.0, 700.0), (-50.0, 65.0)),
        EsaClass::Shrubland => t((100.0, 1500.0), (30.0, 450.0), (-45.0, 50.0)),
        EsaClass::Grassland => t((50.0, 1400.0), (20.0, 400.0), (-50.0, 60.0)),
        EsaClass::Cropland => t((0.0, 600.0), (10.0, 150.0), (-40.0, 58.0)),
        EsaClass::BuiltUp => t((0.0, 700.0), (10.0, 150.0), (-40.0, 60.0)),
        EsaClass::BareSparse => t((200.0, 2500.0), (60.0, 800.0), (-35.0, 45.0)),
        EsaClass::SnowIce => t((2500.0, 4200.0), (300.0, 1000.0), (45.0, 72.0)),
        EsaClass::PermanentWater => t((0.0, 40.0), (5.0, 40.0), (-50.0, 65.0)),
        EsaClass::HerbaceousWetland => t((0.0, 60.0), (5.0, 40.0), (-45.0, 65.0)),
        EsaClass::Mangroves => t((0.0, 20.0), (3.0, 20.0), (-25.0, 25.0)),
        EsaClass::MossLichen => t((1500.0, 3000.0), (100.0, 500.0), (55.0, 72.0)),
    }
}

// Class score: offset + moisture affinity * M + elevation affinity * E.
#[rustfmt::skip]
const AFFINITY: [(f64, f64, f64); ESA_CLASSES] = [
    ( 0.0,  0.3,  0.0), // tree cover
    ( 0.0, -0.3,  0.2), // shrubland
    ( 0.0,  0.0, -0.1), // grassland
    ( 0.0,  0.1, -0.4), // cropland
    (-0.6,  0.0, -0.5), // built-up
    (-0.5, -0.6,  0.3), // bare
    (-1.2,  0.0,  0.8), // snow and ice
    (-1.8,  1.2, -1.0), // water
    (-0.9,  0.9, -0.6), // herbaceous wetland
    (-1.0,  0.8, -0.8), // mangroves
    (-0.8, -0.2,  0.6), // moss and lichen
];

const THEME_BONUS: f64 = 1.6;
const CLASS_NOISE: f64 = 0.8;

#[rustfmt::skip]
const SIGNATURES: [[f64; S2_BANDS]; ESA_CLASSES] = [
    [0.03, 0.04, 0.06, 0.04, 0.09, 0.22, 0.27, 0.30, 0.31, 0.30, 0.16, 0.08],
    [0.05, 0.06, 0.09, 0.10, 0.14, 0.20, 0.23, 0.25, 0.26, 0.25, 0.26, 0.17],
    [0.04, 0.05, 0.08, 0.07, 0.12, 0.25, 0.30, 0.33, 0.34, 0.33, 0.25, 0.14],
    [0.04, 0.05, 0.09, 0.06, 0.13, 0.32, 0.40, 0.44, 0.45, 0.44, 0.24, 0.12],
    [0.10, 0.12, 0.14, 0.16, 0.17, 0.19, 0.20, 0.21, 0.22, 0.21, 0.25, 0.22],
    [0.12, 0.15, 0.20, 0.25, 0.27, 0.29, 0.30, 0.31, 0.32, 0.31, 0.38, 0.33],
    [0.80, 0.82, 0.80, 0.78, 0.76, 0.72, 0.70, 0.68, 0.66, 0.60, 0.10, 0.08],
    [0.06, 0.06, 0.05, 0.03, 0.02, 0.015, 0.012, 0.01, 0.01, 0.01, 0.005, 0.003],
    [0.04, 0.05, 0.07, 0.05, 0.08, 0.15, 0.18, 0.20, 0.20, 0.19, 0.10, 0.05],
    [0.03, 0.04, 0.05, 0.03, 0.07, 0.18, 0.22, 0.25, 0.25, 0.24, 0.11, 0.05],
    [0.07, 0.08, 0.11, 0.12, 0.15, 0.19, 0.21, 0.22, 0.23, 0.22, 0.24, 0.16],
];

// Nominal canopy height in meters per fine class.
const CANOPY: [f64; ESA_CLASSES] = [18.0, 2.5, 0.4, 0.8, 1.0, 0.0, 0.0, 0.0, 0.6, 12.0, 0.0];

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Per-tile generator seed mixing the dataset seed with the tile id hash.
pub fn tile_seed(tile_id: &str, seed: u64) -> u64 {
    fnv1a64(tile_id.as_bytes()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Builds every raster of a tile from shared latent fields and computes its
/// structured attributes. The caption is left empty.
pub fn generate_rasters(tile_id: &str, cfg: &GeneratorConfig, seed: u64) -> Result<TileSample, SynthError> {
    if tile_id.is_empty() {
        return Err(SynthError::Config("tile id must be non-empty".into()));
    }
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let n = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(tile_seed(tile_id, seed));

    let theme_class = EsaClass::ALL[rng.random_range(0..ESA_CLASSES)];
    let th = theme(theme_class);
    let base = uniform(&mut rng, th.base);
    let relief = uniform(&mut rng, th.relief);
    let lat = uniform(&mut rng, th.lat);
    let lon = uniform(&mut rng, (-180.0, 180.0));

    let side = h.min(w) as f64;
    let elev = smooth_field(&mut rng, h, w, side / 8.0);
    let detail = smooth_field(&mut rng, h, w, 0.8);
    let moist = smooth_field(&mut rng, h, w, side / 8.0);
    let texture = smooth_field(&mut rng, h, w, 1.5);
    let class_noise: Vec<Vec<f64>> =
        (0..ESA_CLASSES).map(|_| smooth_field(&mut rng, h, w, side / 10.0)).collect();

    let dem: Vec<f32> =
        (0..n).map(|i| (base + relief * (0.3 * elev[i] + 0.25 * detail[i])) as f32).collect();

    let esa: Vec<u8> = (0..n)
        .map(|i| {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (k, &(offset, a_m, a_e)) in AFFINITY.iter().enumerate() {
                let bonus = if k == theme_class.id() as usize { THEME_BONUS } else { 0.0 };
                let s = offset + bonus + a_m * moist[i] + a_e * elev[i] + CLASS_NOISE * class_noise[k][i];
                if s > best_score {
                    best_score = s;
                    best = k;
                }
            }
            best as u8
        })
        .collect();

    // The coarse product disagrees with the fine one along wet margins.
    let dw: Vec<u8> = (0..n)
        .map(|i| {
            let fine = EsaClass::ALL[esa[i] as usize];
            match fine {
                EsaClass::HerbaceousWetland if moist[i] > 1.2 => DwClass::Water.id(),
                EsaClass::PermanentWater if detail[i] > 1.5 => DwClass::FloodedVegetation.id(),
                _ => fine.to_dw().id(),
            }
        })
        .collect();

    let canopy: Vec<f32> = (0..n)
        .map(|i| {
            let nominal = CANOPY[esa[i] as usize];
            let treeline = (1.0 - 0.15 * elev[i]).clamp(0.3, 1.5);
            (nominal * treeline * (1.0 + 0.8 * detail[i] + 0.1 * texture[i])).max(0.0) as f32
        })
        .collect();

    let mut s2 = Raster::zeros(S2_BANDS, h, w);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            let gx = (dem[y * w + xr] - dem[y * w + xl]) as f64 / (10.0 * (xr - xl).max(1) as f64);
            let gy = (dem[yd * w + x] - dem[yu * w + x]) as f64 / (10.0 * (yd - yu).max(1) as f64);
            let shade = (1.0 - 0.35 * (gx + gy) / (1.0 + gx * gx + gy * gy).sqrt()).clamp(0.5, 1.4);
            let sig = &SIGNATURES[esa[i] as usize];
            for (b, &s) in sig.iter().enumerate() {
                let wet = match b {
                    7 | 8 => 1.0 + 0.08 * moist[i],
                    10 | 11 => 1.0 - 0.08 * moist[i],
                    _ => 1.0,
                };
                let eps: f64 = rng.sample(StandardNormal);
                let v = s * shade * wet * (1.0 + 0.05 * texture[i]) + 0.004 * eps;
                s2.set(b, y, x, v.clamp(0.0, 1.0) as f32);
            }
        }
    }

    let mut s1 = Raster::zeros(S1_BANDS, h, w);
    for y in 0..h {
        for x in 0..w {
            let b = |k: usize| s2.get(k, y, x) as f64;
            let (green, red, nir, swir1, swir2) = (b(2), b(3), b(7), b(10), b(11));
            let ndvi = (nir - red) / (nir + red + 1e-6);
            let ndwi = (green - nir) / (green + nir + 1e-6);
            let open_water = ndwi.max(0.0);
            let vv = (0.01 + 0.15 * nir + 0.4 * swir2 - 0.02 * open_water).max(0.002);
            let vh = (0.003 + 0.08 * nir * (ndvi + 1.0) / 2.0 + 0.05 * swir1).max(0.0005);
            let hh = vv * (1.1 + 0.2 * ndvi);
            let hv = vh * (0.9 + 0.1 * red);
            for (k, sigma0) in [vv, vh, hh, hv].into_iter().enumerate() {
                let eps: f64 = rng.sample(StandardNormal);
                let db = 10.0 * sigma0.log10() + 0.3 * eps;
                s1.set(k, y, x, db.clamp(-30.0, 5.0) as f32);
            }
        }
    }

    let dem = Raster::new(1, h, w, dem)?;
    let dw = ClassMap::new(DW_CLASSES, h, w, dw)?;
    let esa = ClassMap::new(ESA_CLASSES, h, w, esa)?;
    let attributes = StructuredAttributes::compute(&dw, &esa, &dem, lat, cfg.geomorphon)?;

    Ok(TileSample {
        tile_id: tile_id.to_string(),
        s2,
        s1,
        dem,
        canopy: Raster::new(1, h, w, canopy)?,
        dw,
        esa,
        anchor_date: temporal_anchor(tile_id),
        latlon: (lat, lon),
        acquisition: AcquisitionMeta::default(),
        caption: String::new(),
        attributes,
    })
}
