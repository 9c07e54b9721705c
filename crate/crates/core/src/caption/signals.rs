use crate::synth::{DwClass, ElevationBand, ElevationStats, GeoTags, Landform, ReliefBand, TileSample};

use super::CaptionError;

/// Minimum consensus water fraction that permits a water claim.
pub const WATER_CLAIM_THRESHOLD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TagLevel {
    Center,
    Surrounding,
    Area,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Signal {
    Dominant { class: DwClass, fraction: f64 },
    Secondary { class: DwClass, fraction: f64 },
    SurfaceWater { fraction: f64 },
    NoSurfaceWater,
    Terrain(Landform),
    Elevation { stats: ElevationStats, band: ElevationBand },
    Relief(ReliefBand),
    Tag { level: TagLevel, value: String },
}

/// Everything the caption recipes may draw on, consolidated from a tile's
/// measured attributes.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalBundle {
    pub dominant: (DwClass, f64),
    /// Up to three classes by pixel fraction, dominant first.
    pub top_classes: Vec<(DwClass, f64)>,
    pub water_fraction: f64,
    pub terrain: Landform,
    pub elevation: ElevationStats,
    pub tags: GeoTags,
}

impl SignalBundle {
    pub fn surface_water(&self) -> bool {
        self.water_fraction >= WATER_CLAIM_THRESHOLD
    }

    pub fn elevation_band(&self) -> ElevationBand {
        self.elevation.band()
    }

    pub fn relief_band(&self) -> ReliefBand {
        self.elevation.relief_band()
    }

    pub fn entries(&self) -> Vec<Signal> {
        let mut out = vec![Signal::Dominant { class: self.dominant.0, fraction: self.dominant.1 }];
        for &(class, fraction) in self.top_classes.iter().skip(1) {
            out.push(Signal::Secondary { class, fraction });
        }
        out.push(if self.surface_water() {
            Signal::SurfaceWater { fraction: self.water_fraction }
        } else {
            Signal::NoSurfaceWater
        });
        out.push(Signal::Terrain(self.terrain));
        out.push(Signal::Elevation { stats: self.elevation, band: self.elevation_band() });
        out.push(Signal::Relief(self.relief_band()));
        let levels = [
            (TagLevel::Center, &self.tags.center),
            (TagLevel::Surrounding, &self.tags.surrounding),
            (TagLevel::Area, &self.tags.area),
        ];
        for (level, values) in levels {
            out.extend(values.iter().map(|v| Signal::Tag { level, value: v.clone() }));
        }
        out
    }
}

pub fn orchestrate(tile: &TileSample) -> Result<SignalBundle, CaptionError> {
    let a = &tile.attributes;
    let missing = |what: &str| Err(CaptionError::IncompleteSignal(format!("{}: {what}", tile.tile_id)));
    if a.class_fractions.len() != DwClass::ALL.len() || a.class_fractions.iter().any(|f| !f.is_finite()) {
        return missing("land-cover fractions");
    }
    if !a.water_fraction.is_finite() || !(0.0..=1.0).contains(&a.water_fraction) {
        return missing("water fraction");
    }
    let e = a.elevation;
    if !(e.min.is_finite() && e.max.is_finite() && e.mean.is_finite()) {
        return missing("elevation statistics");
    }
    if a.geo_tags.center.is_empty() || a.geo_tags.area.is_empty() {
        return missing("geographic tags");
    }
    let top_classes: Vec<(DwClass, f64)> =
        a.ranked_classes().into_iter().filter(|(_, f)| *f > 0.0).take(3).collect();
    if top_classes.is_empty() {
        return missing("land-cover fractions");
    }
    Ok(SignalBundle {
        dominant: (a.dominant_class, a.dominant_fraction),
        top_classes,
        water_fraction: a.water_fraction,
        terrain: a.terrain_class,
        elevation: e,
        tags: a.geo_tags.clone(),
    })
}
