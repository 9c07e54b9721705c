//! Closed claim vocabulary and keyword claim extraction.

use crate::synth::{DwClass, ElevationBand, Landform, ReliefBand};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClaimKind {
    Water,
    NoWater,
    Terrain(&'static [Landform]),
    LandCover(DwClass),
    Elevation(ElevationBand),
    Relief(ReliefBand),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RuleId {
    WaterPresence,
    WaterAbsence,
    Terrain,
    LandCover,
    Elevation,
    Relief,
}

impl RuleId {
    pub fn key(self) -> &'static str {
        match self {
            RuleId::WaterPresence => "water_presence",
            RuleId::WaterAbsence => "water_absence",
            RuleId::Terrain => "terrain",
            RuleId::LandCover => "land_cover",
            RuleId::Elevation => "elevation",
            RuleId::Relief => "relief",
        }
    }
}

impl ClaimKind {
    pub fn rule(self) -> RuleId {
        match self {
            ClaimKind::Water => RuleId::WaterPresence,
            ClaimKind::NoWater => RuleId::WaterAbsence,
            ClaimKind::Terrain(_) => RuleId::Terrain,
            ClaimKind::LandCover(_) => RuleId::LandCover,
            ClaimKind::Elevation(_) => RuleId::Elevation,
            ClaimKind::Relief(_) => RuleId::Relief,
        }
    }

    /// Ranking weight of the claim.
    pub fn weight(self) -> f64 {
        match self {
            ClaimKind::Elevation(_) | ClaimKind::Relief(_) => 0.5,
            _ => 1.0,
        }
    }
}

use ClaimKind as K;
use Landform as L;

const HILLS: &[Landform] =
    &[L::Peak, L::Ridge, L::Shoulder, L::Spur, L::Slope, L::Hollow, L::Footslope, L::Valley];

const fn t(forms: &'static [Landform]) -> ClaimKind {
    K::Terrain(forms)
}

/// Phrase table. Matching is longest-first, so multi-word entries win.
pub const PHRASES: &[(&[&str], &[ClaimKind])] = &[
    (&["no", "surface", "water"], &[K::NoWater]),
    (&["surface", "water"], &[K::Water]),
    (&["open", "water"], &[K::Water, K::LandCover(DwClass::Water)]),
    (&["water"], &[K::Water, K::LandCover(DwClass::Water)]),
    (&["lake"], &[K::Water]),
    (&["lakes"], &[K::Water]),
    (&["river"], &[K::Water]),
    (&["rivers"], &[K::Water]),
    (&["pond"], &[K::Water]),
    (&["ponds"], &[K::Water]),
    (&["reservoir"], &[K::Water]),
    (&["stream"], &[K::Water]),
    (&["streams"], &[K::Water]),
    (&["flat"], &[t(&[L::Flat])]),
    (&["plain"], &[t(&[L::Flat])]),
    (&["plains"], &[t(&[L::Flat])]),
    (&["level"], &[t(&[L::Flat])]),
    (&["peak"], &[t(&[L::Peak])]),
    (&["peaks"], &[t(&[L::Peak])]),
    (&["summit"], &[t(&[L::Peak])]),
    (&["summits"], &[t(&[L::Peak])]),
    (&["ridge"], &[t(&[L::Ridge])]),
    (&["ridges"], &[t(&[L::Ridge])]),
    (&["shoulder"], &[t(&[L::Shoulder])]),
    (&["shoulders"], &[t(&[L::Shoulder])]),
    (&["spur"], &[t(&[L::Spur])]),
    (&["spurs"], &[t(&[L::Spur])]),
    (&["slope"], &[t(&[L::Slope])]),
    (&["slopes"], &[t(&[L::Slope])]),
    (&["sloping"], &[t(&[L::Slope])]),
    (&["hillside"], &[t(&[L::Slope])]),
    (&["hollow"], &[t(&[L::Hollow])]),
    (&["hollows"], &[t(&[L::Hollow])]),
    (&["footslope"], &[t(&[L::Footslope])]),
    (&["footslopes"], &[t(&[L::Footslope])]),
    (&["valley"], &[t(&[L::Valley])]),
    (&["valleys"], &[t(&[L::Valley])]),
    (&["pit"], &[t(&[L::Pit])]),
    (&["pits"], &[t(&[L::Pit])]),
    (&["depression"], &[t(&[L::Pit])]),
    (&["depressions"], &[t(&[L::Pit])]),
    (&["hills"], &[t(HILLS)]),
    (&["hilly"], &[t(HILLS)]),
    (&["forest"], &[K::LandCover(DwClass::Trees)]),
    (&["forests"], &[K::LandCover(DwClass::Trees)]),
    (&["woodland"], &[K::LandCover(DwClass::Trees)]),
    (&["grassland"], &[K::LandCover(DwClass::Grass)]),
    (&["grasslands"], &[K::LandCover(DwClass::Grass)]),
    (&["meadow"], &[K::LandCover(DwClass::Grass)]),
    (&["meadows"], &[K::LandCover(DwClass::Grass)]),
    (&["wetland"], &[K::LandCover(DwClass::FloodedVegetation)]),
    (&["wetlands"], &[K::LandCover(DwClass::FloodedVegetation)]),
    (&["marsh"], &[K::LandCover(DwClass::FloodedVegetation)]),
    (&["cropland"], &[K::LandCover(DwClass::Crops)]),
    (&["croplands"], &[K::LandCover(DwClass::Crops)]),
    (&["farmland"], &[K::LandCover(DwClass::Crops)]),
    (&["fields"], &[K::LandCover(DwClass::Crops)]),
    (&["shrubland"], &[K::LandCover(DwClass::ShrubAndScrub)]),
    (&["scrub"], &[K::LandCover(DwClass::ShrubAndScrub)]),
    (&["settlement"], &[K::LandCover(DwClass::Built)]),
    (&["settlements"], &[K::LandCover(DwClass::Built)]),
    (&["town"], &[K::LandCover(DwClass::Built)]),
    (&["buildings"], &[K::LandCover(DwClass::Built)]),
    (&["barrens"], &[K::LandCover(DwClass::Bare)]),
    (&["rock"], &[K::LandCover(DwClass::Bare)]),
    (&["snowfield"], &[K::LandCover(DwClass::SnowAndIce)]),
    (&["snowfields"], &[K::LandCover(DwClass::SnowAndIce)]),
    (&["snow"], &[K::LandCover(DwClass::SnowAndIce)]),
    (&["ice"], &[K::LandCover(DwClass::SnowAndIce)]),
    (&["glacier"], &[K::LandCover(DwClass::SnowAndIce)]),
    (&["lowland"], &[K::Elevation(ElevationBand::Lowland)]),
    (&["lowlands"], &[K::Elevation(ElevationBand::Lowland)]),
    (&["upland"], &[K::Elevation(ElevationBand::Upland)]),
    (&["uplands"], &[K::Elevation(ElevationBand::Upland)]),
    (&["highland"], &[K::Elevation(ElevationBand::Highland)]),
    (&["highlands"], &[K::Elevation(ElevationBand::Highland)]),
    (&["mountainous"], &[K::Elevation(ElevationBand::Highland)]),
    (&["alpine"], &[K::Elevation(ElevationBand::Highland)]),
    (&["gentle"], &[K::Relief(ReliefBand::Gentle)]),
    (&["undulating"], &[K::Relief(ReliefBand::Undulating)]),
    (&["rugged"], &[K::Relief(ReliefBand::Rugged)]),
];

/// Connective words used by the caption recipes.
pub const TEMPLATE_WORDS: &[&str] = &[
    "a", "an", "the", "of", "and", "with", "by", "in", "at", "on", "among", "around", "it", "area", "landscape",
    "dominated", "patches", "mostly", "covered", "relief", "setting", "center", "surrounded", "mixed", "region",
    "tropical", "subtropical", "temperate", "boreal", "polar",
];

/// Canonical single word naming a landform.
pub fn landform_word(l: Landform) -> &'static str {
    match l {
        L::Flat => "plains",
        L::Peak => "peaks",
        L::Ridge => "ridges",
        L::Shoulder => "shoulders",
        L::Spur => "spurs",
        L::Slope => "slopes",
        L::Hollow => "hollows",
        L::Footslope => "footslopes",
        L::Valley => "valleys",
        L::Pit => "depressions",
    }
}

/// Lowercases and strips surrounding punctuation.
pub fn normalize_word(w: &str) -> String {
    w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// A claim found in a caption, spanning whitespace tokens `start..end`.
#[derive(Clone, Debug, PartialEq)]
pub struct Claim {
    pub kind: ClaimKind,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

pub fn extract_claims(caption: &str) -> Vec<Claim> {
    let words: Vec<String> = caption.split_whitespace().map(normalize_word).collect();
    let mut claims = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let mut best: Option<(usize, &[ClaimKind])> = None;
        for (phrase, kinds) in PHRASES {
            let n = phrase.len();
            if i + n <= words.len()
                && phrase.iter().zip(&words[i..i + n]).all(|(p, w)| p == w)
                && best.is_none_or(|(m, _)| n > m)
            {
                best = Some((n, kinds));
            }
        }
        match best {
            Some((n, kinds)) => {
                let text = words[i..i + n].join(" ");
                for &kind in kinds {
                    claims.push(Claim { kind, start: i, end: i + n, text: text.clone() });
                }
                i += n;
            }
            None => i += 1,
        }
    }
    claims
}

/// Every word that captions built by this crate may contain.
pub fn vocabulary() -> Vec<String> {
    let mut v: Vec<String> = PHRASES
        .iter()
        .flat_map(|(p, _)| p.iter().map(|s| s.to_string()))
        .chain(TEMPLATE_WORDS.iter().map(|s| s.to_string()))
        .chain(DwClass::ALL.iter().map(|c| c.noun().to_string()))
        .chain(Landform::ALL.iter().map(|&l| landform_word(l).to_string()))
        .collect();
    v.sort();
    v.dedup();
    v
}
