use super::geomorphon::{geomorphon_classify, landform_mode, GeomorphonParams, Landform};
use super::{water_consensus, ClassMap, DwClass, Raster, SynthError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElevationStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl ElevationStats {
    pub fn of(dem: &Raster) -> Self {
        let z = dem.plane(0);
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &v in z {
            let v = v as f64;
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        Self { min, max, mean: sum / z.len().max(1) as f64 }
    }

    pub fn relief(&self) -> f64 {
        self.max - self.min
    }

    pub fn band(&self) -> ElevationBand {
        if self.mean < 300.0 {
            ElevationBand::Lowland
        } else if self.mean < 1500.0 {
            ElevationBand::Upland
        } else {
            ElevationBand::Highland
        }
    }

    pub fn relief_band(&self) -> ReliefBand {
        let r = self.relief();
        if r < 100.0 {
            ReliefBand::Gentle
        } else if r < 300.0 {
            ReliefBand::Undulating
        } else {
            ReliefBand::Rugged
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ElevationBand {
    Lowland,
    Upland,
    Highland,
}

impl ElevationBand {
    pub fn word(self) -> &'static str {
        match self {
            ElevationBand::Lowland => "lowland",
            ElevationBand::Upland => "upland",
            ElevationBand::Highland => "highland",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReliefBand {
    Gentle,
    Undulating,
    Rugged,
}

impl ReliefBand {
    pub fn word(self) -> &'static str {
        match self {
            ReliefBand::Gentle => "gentle",
            ReliefBand::Undulating => "undulating",
            ReliefBand::Rugged => "rugged",
        }
    }
}

pub fn climate_zone(lat: f64) -> &'static str {
    let a = lat.abs();
    if a < 23.5 {
        "tropical"
    } else if a < 35.0 {
        "subtropical"
    } else if a < 55.0 {
        "temperate"
    } else if a < 66.5 {
        "boreal"
    } else {
        "polar"
    }
}

/// Tags at three spatial levels: the center pixel, the surrounding tile,
/// and the wider area.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GeoTags {
    pub center: Vec<String>,
    pub surrounding: Vec<String>,
    pub area: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructuredAttributes {
    pub dominant_class: DwClass,
    pub dominant_fraction: f64,
    /// Pixel fraction per coarse land-cover class.
    pub class_fractions: Vec<f64>,
    pub water_fraction: f64,
    pub terrain_class: Landform,
    pub elevation: ElevationStats,
    pub geo_tags: GeoTags,
}

pub const SURROUNDING_MIN_FRACTION: f64 = 0.05;

impl StructuredAttributes {
    pub fn compute(
        dw: &ClassMap,
        esa: &ClassMap,
        dem: &Raster,
        lat: f64,
        geomorphon: GeomorphonParams,
    ) -> Result<Self, SynthError> {
        let class_fractions = dw.fractions();
        let (dominant_class, dominant_fraction) = argmax_class(&class_fractions);
        let (_, water_fraction) = water_consensus(dw, esa)?;
        let forms = geomorphon_classify(dem, geomorphon)?;
        let terrain_class = landform_mode(&forms);
        let elevation = ElevationStats::of(dem);

        let (cy, cx) = (dw.height() / 2, dw.width() / 2);
        let center_class = DwClass::from_id(dw.get(cy, cx)).expect("validated class map");
        let center_form = Landform::from_id(forms.get(cy, cx)).expect("validated landform map");
        let center = vec![center_class.noun().to_string(), center_form.key().to_string()];

        let mut ranked: Vec<(DwClass, f64)> =
            DwClass::ALL.iter().map(|&c| (c, class_fractions[c.id() as usize])).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let surrounding = ranked
            .iter()
            .filter(|(c, f)| *c != center_class && *f >= SURROUNDING_MIN_FRACTION)
            .map(|(c, _)| c.noun().to_string())
            .collect();
        let area = vec![
            climate_zone(lat).to_string(),
            elevation.band().word().to_string(),
            elevation.relief_band().word().to_string(),
        ];

        Ok(Self {
            dominant_class,
            dominant_fraction,
            class_fractions,
            water_fraction,
            terrain_class,
            elevation,
            geo_tags: GeoTags { center, surrounding, area },
        })
    }

    /// Classes by descending pixel fraction; ties go to the lower id.
    pub fn ranked_classes(&self) -> Vec<(DwClass, f64)> {
        let mut v: Vec<(DwClass, f64)> = self
            .class_fractions
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| DwClass::from_id(i as u8).map(|c| (c, f)))
            .collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    /// The three most frequent classes that actually occur.
    pub fn top_classes(&self) -> Vec<DwClass> {
        self.ranked_classes().into_iter().filter(|(_, f)| *f > 0.0).take(3).map(|(c, _)| c).collect()
    }
}

fn argmax_class(fractions: &[f64]) -> (DwClass, f64) {
    let mut best = 0;
    for (i, &f) in fractions.iter().enumerate() {
        if f > fractions[best] {
            best = i;
        }
    }
    (DwClass::ALL[best], fractions[best])
}
