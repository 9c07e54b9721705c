//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use geomeld_core::caption::{ClaimKind, PHRASES};
use geomeld_core::model::ModelConfig;
use geomeld_core::synth::{ElevationBand, ReliefBand, StructuredAttributes};

/// A model small enough for many short training runs.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        tile_height: 16,
        tile_width: 16,
        dim: 32,
        depth: 2,
        heads: 2,
        mlp_hidden: 48,
        pred_dim: 16,
        pred_depth: 1,
        pred_heads: 2,
        pred_hidden: 32,
        dec_dim: 16,
        dec_heads: 2,
        dec_hidden: 32,
        text_width: 16,
        text_depth: 2,
        text_heads: 2,
        text_hidden: 32,
        text_dim: 24,
        max_caption_len: 16,
        proj_hidden: 20,
        shared_dim: 8,
        ..ModelConfig::default()
    }
}

/// Claim score computed by enumerating every phrase occurrence, dropping
/// occurrences nested inside a longer one, and checking each claim with rules
/// written out from scratch.
pub fn oracle_score(caption: &str, a: &StructuredAttributes) -> f64 {
    let words: Vec<String> = caption
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .collect();
    let mut hits: Vec<(usize, usize, &[ClaimKind])> = Vec::new();
    for (phrase, kinds) in PHRASES {
        for s in 0..words.len() {
            if s + phrase.len() <= words.len() && phrase.iter().zip(&words[s..]).all(|(p, w)| p == w) {
                hits.push((s, s + phrase.len(), kinds));
            }
        }
    }
    let maximal: Vec<_> = hits
        .iter()
        .filter(|(s, e, _)| !hits.iter().any(|(s2, e2, _)| s2 <= s && e <= e2 && (e2 - s2) > (e - s)))
        .collect();
    let mut ranked: Vec<(usize, f64)> = a.class_fractions.iter().copied().enumerate().collect();
    ranked.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    let top: Vec<usize> = ranked.iter().filter(|(_, f)| *f > 0.0).take(3).map(|(i, _)| *i).collect();
    let mean = a.elevation.mean;
    let relief = a.elevation.max - a.elevation.min;
    let mut score = 0.0;
    for (_, _, kinds) in maximal {
        for kind in kinds.iter() {
            let (ok, w) = match *kind {
                ClaimKind::Water => (a.water_fraction >= 0.02, 1.0),
                ClaimKind::NoWater => (a.water_fraction < 0.02, 1.0),
                ClaimKind::Terrain(forms) => (forms.contains(&a.terrain_class), 1.0),
                ClaimKind::LandCover(c) => (top.contains(&(c.id() as usize)), 1.0),
                ClaimKind::Elevation(b) => {
                    let actual = if mean < 300.0 {
                        ElevationBand::Lowland
                    } else if mean < 1500.0 {
                        ElevationBand::Upland
                    } else {
                        ElevationBand::Highland
                    };
                    (b == actual, 0.5)
                }
                ClaimKind::Relief(r) => {
                    let actual = if relief < 100.0 {
                        ReliefBand::Gentle
                    } else if relief < 300.0 {
                        ReliefBand::Undulating
                    } else {
                        ReliefBand::Rugged
                    };
                    (r == actual, 0.5)
                }
            };
            score += if ok { w } else { -w };
        }
    }
    score
}
