use crate::synth::DwClass;

use super::lexicon::landform_word;
use super::signals::SignalBundle;
use super::CaptionError;

/// Share a class needs before recipes mention it next to the dominant one.
const MENTION_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Recipe {
    LandCoverLed,
    TerrainLed,
    HydrologyLed,
    TagLed,
}

impl Recipe {
    pub const ALL: [Recipe; 4] = [Recipe::LandCoverLed, Recipe::TerrainLed, Recipe::HydrologyLed, Recipe::TagLed];

    pub fn key(self) -> &'static str {
        match self {
            Recipe::LandCoverLed => "land_cover_led",
            Recipe::TerrainLed => "terrain_led",
            Recipe::HydrologyLed => "hydrology_led",
            Recipe::TagLed => "tag_led",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.key() == key)
    }

    pub fn render(self, s: &SignalBundle) -> String {
        let dominant = s.dominant.0.noun();
        let terrain = landform_word(s.terrain);
        let band = s.elevation_band().word();
        let relief = s.relief_band().word();
        match self {
            Recipe::LandCoverLed => {
                let others = secondary_nouns(s, None);
                match others.as_slice() {
                    [] => format!("{dominant} dominated landscape among {terrain}"),
                    [a] => format!("{dominant} dominated landscape with patches of {a}"),
                    [a, b, ..] => format!("{dominant} dominated landscape with patches of {a} and {b}"),
                }
            }
            Recipe::TerrainLed => {
                format!("{band} {terrain} with {relief} relief covered mostly by {dominant}")
            }
            Recipe::HydrologyLed => {
                if s.surface_water() {
                    format!("{dominant} area with surface water among {terrain}")
                } else {
                    format!("{dominant} area with no surface water among {terrain}")
                }
            }
            Recipe::TagLed => {
                let top: Vec<DwClass> = s.top_classes.iter().map(|(c, _)| *c).collect();
                let center = s
                    .tags
                    .center
                    .first()
                    .and_then(|n| top.iter().copied().find(|c| c.noun() == n))
                    .unwrap_or(s.dominant.0);
                let zone = s.tags.area.first().map(String::as_str).unwrap_or("mixed");
                let around = secondary_nouns(s, Some(center));
                let mut text = format!("{zone} {band} region with {} at the center", center.noun());
                match around.as_slice() {
                    [] => {}
                    [a] => text.push_str(&format!(" and {a} around it")),
                    [a, b, ..] => text.push_str(&format!(" and {a} and {b} around it")),
                }
                text
            }
        }
    }
}

/// Nouns of the top classes other than `exclude` (the dominant class when
/// `None`) that are large enough to mention.
fn secondary_nouns(s: &SignalBundle, exclude: Option<DwClass>) -> Vec<&'static str> {
    let exclude = exclude.unwrap_or(s.dominant.0);
    s.top_classes
        .iter()
        .filter(|(c, f)| *c != exclude && (*f >= MENTION_FRACTION || *c == s.dominant.0))
        .filter(|(c, _)| *c != DwClass::Water || s.surface_water())
        .map(|(c, _)| c.noun())
        .collect()
}

pub fn generate_candidates(signals: &SignalBundle, k: usize) -> Result<Vec<(String, Recipe)>, CaptionError> {
    if k < 2 {
        return Err(CaptionError::Config(format!("candidate count {k} is below 2")));
    }
    if k > Recipe::ALL.len() {
        return Err(CaptionError::Config(format!(
            "candidate count {k} exceeds the {} available recipes",
            Recipe::ALL.len()
        )));
    }
    Ok(Recipe::ALL[..k].iter().map(|&r| (r.render(signals), r)).collect())
}
