use crate::synth::{DwClass, StructuredAttributes};

use super::lexicon::{extract_claims, landform_word, normalize_word, Claim, ClaimKind, RuleId};
use super::signals::WATER_CLAIM_THRESHOLD;
use super::CaptionError;

#[derive(Clone, Debug, PartialEq)]
pub struct Conflict {
    pub claim: String,
    pub evidence: String,
    pub rule: RuleId,
}

/// Checks one claim against measured attributes. `Err` carries the evidence.
pub fn check_claim(kind: ClaimKind, a: &StructuredAttributes) -> Result<(), String> {
    match kind {
        ClaimKind::Water if a.water_fraction < WATER_CLAIM_THRESHOLD => {
            Err(format!("water_fraction={:.4} below {WATER_CLAIM_THRESHOLD}", a.water_fraction))
        }
        ClaimKind::NoWater if a.water_fraction >= WATER_CLAIM_THRESHOLD => {
            Err(format!("water_fraction={:.4} at or above {WATER_CLAIM_THRESHOLD}", a.water_fraction))
        }
        ClaimKind::Terrain(forms) if !forms.contains(&a.terrain_class) => {
            Err(format!("terrain_class={}", a.terrain_class.key()))
        }
        ClaimKind::LandCover(c) if !a.top_classes().contains(&c) => {
            let top: Vec<&str> = a.top_classes().iter().map(|c| c.key()).collect();
            Err(format!("top_classes={}", top.join(",")))
        }
        ClaimKind::Elevation(b) if b != a.elevation.band() => {
            Err(format!("elevation_mean={:.1} is {}", a.elevation.mean, a.elevation.band().word()))
        }
        ClaimKind::Relief(r) if r != a.elevation.relief_band() => {
            Err(format!("relief={:.1} is {}", a.elevation.relief(), a.elevation.relief_band().word()))
        }
        _ => Ok(()),
    }
}

pub fn find_conflicts(caption: &str, a: &StructuredAttributes) -> Vec<(Claim, Conflict)> {
    extract_claims(caption)
        .into_iter()
        .filter_map(|claim| {
            check_claim(claim.kind, a).err().map(|evidence| {
                let conflict = Conflict { claim: claim.text.clone(), evidence, rule: claim.kind.rule() };
                (claim, conflict)
            })
        })
        .collect()
}

/// Alignment score: summed weights of corroborated claims minus those of
/// uncorroborated ones.
pub fn score_caption(caption: &str, a: &StructuredAttributes) -> f64 {
    extract_claims(caption)
        .iter()
        .map(|c| if check_claim(c.kind, a).is_ok() { c.kind.weight() } else { -c.kind.weight() })
        .sum()
}

/// Scores every candidate; the best index is the first maximum.
pub fn rank_candidates(a: &StructuredAttributes, candidates: &[String]) -> Result<(Vec<f64>, usize), CaptionError> {
    if candidates.is_empty() {
        return Err(CaptionError::Input("no candidate captions to rank".into()));
    }
    let scores: Vec<f64> = candidates.iter().map(|c| score_caption(c, a)).collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok((scores, best))
}

const MAX_ROUNDS: usize = 8;

/// Detects claims contradicted by the attributes and rewrites them until the
/// caption is consistent. Consistent captions are returned unchanged.
pub fn verify_and_revise(a: &StructuredAttributes, caption: &str) -> Result<(String, Vec<Conflict>), CaptionError> {
    if caption.trim().is_empty() {
        return Err(CaptionError::Input("caption is empty".into()));
    }
    let mut text = caption.to_string();
    let mut conflicts = Vec::new();
    for _ in 0..MAX_ROUNDS {
        let found = find_conflicts(&text, a);
        if found.is_empty() {
            break;
        }
        let mut words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        let mut last_start = usize::MAX;
        // Right to left so earlier spans keep their indices.
        for (claim, conflict) in found.into_iter().rev() {
            if claim.end > last_start {
                conflicts.push(conflict);
                continue;
            }
            let replacement = revision(&claim, &words, a);
            splice(&mut words, claim.start, claim.end, &replacement);
            last_start = claim.start;
            conflicts.push(conflict);
        }
        text = words.join(" ");
    }
    conflicts.reverse();
    if !find_conflicts(&text, a).is_empty() {
        return Err(CaptionError::Degenerate(format!("could not reconcile \"{caption}\"")));
    }
    if !extract_claims(&text).iter().any(|c| matches!(c.kind, ClaimKind::LandCover(_))) {
        return Err(CaptionError::Degenerate(format!("no land-cover content left in \"{text}\"")));
    }
    Ok((text, conflicts))
}

fn revision(claim: &Claim, words: &[String], a: &StructuredAttributes) -> Vec<String> {
    let one = |w: &str| vec![w.to_string()];
    match claim.kind {
        ClaimKind::NoWater => vec!["surface".into(), "water".into()],
        ClaimKind::Water if claim.text == "surface water" => {
            vec!["no".into(), "surface".into(), "water".into()]
        }
        ClaimKind::Water | ClaimKind::LandCover(_) => {
            let mentioned: Vec<String> = words.iter().map(|w| normalize_word(w)).collect();
            let usable: Vec<DwClass> = a
                .top_classes()
                .into_iter()
                .filter(|&c| c != DwClass::Water || a.water_fraction >= WATER_CLAIM_THRESHOLD)
                .collect();
            usable
                .iter()
                .find(|c| !mentioned.iter().any(|m| m == c.noun()))
                .or(usable.first())
                .map(|c| one(c.noun()))
                .unwrap_or_default()
        }
        ClaimKind::Terrain(_) => one(landform_word(a.terrain_class)),
        ClaimKind::Elevation(_) => one(a.elevation.band().word()),
        ClaimKind::Relief(_) => one(a.elevation.relief_band().word()),
    }
}

/// Replaces `words[start..end]`, keeping leading punctuation of the first
/// word, trailing punctuation of the last, and initial capitalization.
fn splice(words: &mut Vec<String>, start: usize, end: usize, replacement: &[String]) {
    let first = &words[start];
    let last = &words[end - 1];
    let lead: String = first.chars().take_while(|c| !c.is_alphanumeric()).collect();
    let trail: String = {
        let t: Vec<char> = last.chars().rev().take_while(|c| !c.is_alphanumeric()).collect();
        t.into_iter().rev().collect()
    };
    let capital = first.chars().find(|c| c.is_alphanumeric()).is_some_and(char::is_uppercase);
    let mut rep: Vec<String> = replacement.to_vec();
    if let Some(w) = rep.first_mut() {
        if capital {
            let mut cs = w.chars();
            if let Some(c0) = cs.next() {
                *w = c0.to_uppercase().chain(cs).collect();
            }
        }
        w.insert_str(0, &lead);
    }
    if let Some(w) = rep.last_mut() {
        w.push_str(&trail);
    } else if !trail.is_empty() && start > 0 {
        let prev = &mut words[start - 1];
        prev.push_str(&trail);
    }
    words.splice(start..end, rep);
}
