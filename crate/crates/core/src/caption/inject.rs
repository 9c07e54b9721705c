use crate::synth::{DwClass, ElevationBand, Landform, ReliefBand, StructuredAttributes};

use super::{landform_word, RuleId, WATER_CLAIM_THRESHOLD};

/// Adds one claim that contradicts `a` to `caption` and returns the rule the
/// verifier should cite. `variant` cycles through the five rule families.
pub fn inject_contradiction(a: &StructuredAttributes, caption: &str, variant: usize) -> (String, RuleId) {
    match variant % 5 {
        0 if a.water_fraction < WATER_CLAIM_THRESHOLD => (format!("{caption} beside a lake"), RuleId::WaterPresence),
        0 => (format!("{caption} with no surface water"), RuleId::WaterAbsence),
        1 => {
            let wrong = Landform::ALL.iter().find(|&&l| l != a.terrain_class).copied().unwrap_or(Landform::Peak);
            (format!("{caption} near {}", landform_word(wrong)), RuleId::Terrain)
        }
        2 => {
            let top = a.top_classes();
            let wrong = DwClass::ALL
                .iter()
                .rev()
                .find(|c| !top.contains(c) && **c != DwClass::Water)
                .copied()
                .unwrap_or(DwClass::SnowAndIce);
            (format!("{caption} and {}", wrong.noun()), RuleId::LandCover)
        }
        3 => {
            let wrong = [ElevationBand::Lowland, ElevationBand::Upland, ElevationBand::Highland]
                .into_iter()
                .find(|&b| b != a.elevation.band())
                .unwrap_or(ElevationBand::Highland);
            (format!("{} {caption}", wrong.word()), RuleId::Elevation)
        }
        _ => {
            let wrong = [ReliefBand::Gentle, ReliefBand::Undulating, ReliefBand::Rugged]
                .into_iter()
                .find(|&r| r != a.elevation.relief_band())
                .unwrap_or(ReliefBand::Rugged);
            (format!("{caption} with {} relief", wrong.word()), RuleId::Relief)
        }
    }
}
