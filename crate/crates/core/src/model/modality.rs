use std::collections::BTreeMap;

use geomeld_autograd::Tensor;

use crate::masking::gather_visible;
use crate::synth::{ClassMap, Raster, TileSample, DW_CLASSES, ESA_CLASSES, S1_BANDS, S2_BANDS};

use super::text::Tokenizer;
use super::{ModelConfig, ModelError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    S2,
    S1,
    Dem,
    Canopy,
    Dw,
    Esa,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModalityKind {
    Continuous { channels: usize },
    Categorical { classes: usize },
}

impl Modality {
    pub const ALL: [Modality; 6] =
        [Modality::S2, Modality::S1, Modality::Dem, Modality::Canopy, Modality::Dw, Modality::Esa];

    pub fn key(self) -> &'static str {
        match self {
            Modality::S2 => "s2",
            Modality::S1 => "s1",
            Modality::Dem => "dem",
            Modality::Canopy => "canopy",
            Modality::Dw => "dw",
            Modality::Esa => "esa",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.key() == key)
    }

    pub fn kind(self) -> ModalityKind {
        match self {
            Modality::S2 => ModalityKind::Continuous { channels: S2_BANDS },
            Modality::S1 => ModalityKind::Continuous { channels: S1_BANDS },
            Modality::Dem | Modality::Canopy => ModalityKind::Continuous { channels: 1 },
            Modality::Dw => ModalityKind::Categorical { classes: DW_CLASSES },
            Modality::Esa => ModalityKind::Categorical { classes: ESA_CLASSES },
        }
    }

    pub fn is_continuous(self) -> bool {
        matches!(self.kind(), ModalityKind::Continuous { .. })
    }

    /// Fixed `(offset, scale)` standardization for continuous rasters,
    /// measured on generated data. Inputs and targets use the same values.
    pub fn standardization(self) -> (f64, f64) {
        match self {
            Modality::S2 => (0.2, 0.15),
            Modality::S1 => (-14.0, 5.5),
            Modality::Dem => (900.0, 1000.0),
            Modality::Canopy => (3.0, 6.6),
            Modality::Dw | Modality::Esa => (0.0, 1.0),
        }
    }

    /// Width of one decoded patch row.
    pub fn output_dim(self, patch: usize) -> usize {
        match self.kind() {
            ModalityKind::Continuous { channels } => channels * patch * patch,
            ModalityKind::Categorical { classes } => classes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModalitySpec {
    pub modality: Modality,
    pub kind: ModalityKind,
    pub loss_weight: f64,
}

impl ModalitySpec {
    pub fn new(modality: Modality, loss_weight: f64) -> Result<Self, ModelError> {
        if !(loss_weight.is_finite() && loss_weight >= 0.0) {
            return Err(ModelError::Config(format!("loss weight for {} must be >= 0", modality.key())));
        }
        Ok(Self { modality, kind: modality.kind(), loss_weight })
    }
}

/// Model-ready view of one tile: standardized patch rows, patch-mode class
/// labels, and caption tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedTile {
    pub tile_id: String,
    pub continuous: BTreeMap<Modality, Tensor>,
    pub labels: BTreeMap<Modality, Vec<usize>>,
    pub tokens: Vec<u32>,
    pub dominant_class: usize,
    /// Per-band mean of raw optical reflectance.
    pub pixel_means: Vec<f64>,
}

impl PreparedTile {
    pub fn s2(&self) -> &Tensor {
        &self.continuous[&Modality::S2]
    }
}

fn patch_rows(r: &Raster, m: Modality, patch: usize, n: usize) -> Result<Tensor, ModelError> {
    let (offset, scale) = m.standardization();
    let x: Vec<f64> = r.data().iter().map(|&v| (v as f64 - offset) / scale).collect();
    let all: Vec<usize> = (0..n).collect();
    Ok(gather_visible(&x, r.channels(), r.height(), r.width(), &all, patch)?)
}

/// Most frequent class inside each patch; ties go to the lower class id.
pub fn patch_modes(map: &ClassMap, patch: usize) -> Vec<usize> {
    let (rows, cols) = (map.height() / patch, map.width() / patch);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut counts = vec![0usize; map.classes()];
            for dy in 0..patch {
                for dx in 0..patch {
                    counts[map.get(r * patch + dy, c * patch + dx) as usize] += 1;
                }
            }
            let mut best = 0;
            for (k, &n) in counts.iter().enumerate() {
                if n > counts[best] {
                    best = k;
                }
            }
            out.push(best);
        }
    }
    out
}

pub fn prepare_tile(tile: &TileSample, cfg: &ModelConfig, tokenizer: &Tokenizer) -> Result<PreparedTile, ModelError> {
    if tile.height() != cfg.tile_height || tile.width() != cfg.tile_width {
        return Err(ModelError::Config(format!(
            "tile {} is {}x{}, model expects {}x{}",
            tile.tile_id,
            tile.height(),
            tile.width(),
            cfg.tile_height,
            cfg.tile_width
        )));
    }
    let n = cfg.num_patches();
    let mut continuous = BTreeMap::new();
    for (m, r) in [
        (Modality::S2, &tile.s2),
        (Modality::S1, &tile.s1),
        (Modality::Dem, &tile.dem),
        (Modality::Canopy, &tile.canopy),
    ] {
        continuous.insert(m, patch_rows(r, m, cfg.patch, n)?);
    }
    let mut labels = BTreeMap::new();
    labels.insert(Modality::Dw, patch_modes(&tile.dw, cfg.patch));
    labels.insert(Modality::Esa, patch_modes(&tile.esa, cfg.patch));
    let plane = (tile.height() * tile.width()) as f64;
    let pixel_means =
        (0..tile.s2.channels()).map(|b| tile.s2.plane(b).iter().map(|&v| v as f64).sum::<f64>() / plane).collect();
    Ok(PreparedTile {
        tile_id: tile.tile_id.clone(),
        continuous,
        labels,
        tokens: tokenizer.encode(&tile.caption, cfg.max_caption_len).ids,
        dominant_class: tile.attributes.dominant_class.id() as usize,
        pixel_means,
    })
}
