//! Rule-based caption pipeline: signal orchestration, templated candidates,
//! claim-based ranking, and conflict-driven verification.

mod candidates;
mod inject;
mod lexicon;
mod signals;
mod verify;

use std::fmt::Write as _;

use thiserror::Error;

use crate::synth::TileSample;

pub use candidates::{generate_candidates, Recipe};
pub use inject::inject_contradiction;
pub use lexicon::{
    extract_claims, landform_word, normalize_word, vocabulary, Claim, ClaimKind, RuleId, PHRASES, TEMPLATE_WORDS,
};
pub use signals::{orchestrate, Signal, SignalBundle, TagLevel, WATER_CLAIM_THRESHOLD};
pub use verify::{check_claim, find_conflicts, rank_candidates, score_caption, verify_and_revise, Conflict};

pub const DEFAULT_CANDIDATES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaptionError {
    #[error("incomplete signal: {0}")]
    IncompleteSignal(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("degenerate caption: {0}")]
    Degenerate(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionAudit {
    pub candidates: Vec<(String, Recipe)>,
    pub scores: Vec<f64>,
    pub best: usize,
    pub conflicts: Vec<Conflict>,
    pub final_caption: String,
    pub revised: bool,
    /// Set when verification could not salvage the best candidate and the
    /// land-cover recipe was used instead.
    pub fallback: bool,
}

impl CaptionAudit {
    /// One structured text record; records are separated by blank lines.
    pub fn to_record(&self, tile_id: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tile={tile_id}");
        for (i, ((text, recipe), score)) in self.candidates.iter().zip(&self.scores).enumerate() {
            let _ = writeln!(s, "candidate.{i}={}|{score}|{text}", recipe.key());
        }
        let _ = writeln!(s, "best={}", self.best);
        for (i, c) in self.conflicts.iter().enumerate() {
            let _ = writeln!(s, "conflict.{i}={}|{}|{}", c.rule.key(), c.claim, c.evidence);
        }
        let _ = writeln!(s, "final={}", self.final_caption);
        let _ = writeln!(s, "revised={}", self.revised);
        let _ = writeln!(s, "fallback={}", self.fallback);
        s
    }
}

/// Full pipeline over one tile. Pure function of the tile.
pub fn caption_tile(tile: &TileSample, k: usize) -> Result<CaptionAudit, CaptionError> {
    let signals = orchestrate(tile)?;
    let candidates = generate_candidates(&signals, k)?;
    let texts: Vec<String> = candidates.iter().map(|(t, _)| t.clone()).collect();
    let (scores, best) = rank_candidates(&tile.attributes, &texts)?;
    let (final_caption, conflicts, fallback) = match verify_and_revise(&tile.attributes, &texts[best]) {
        Ok((text, conflicts)) => (text, conflicts, false),
        Err(CaptionError::Degenerate(_)) => {
            let text = Recipe::LandCoverLed.render(&signals);
            let (text, conflicts) = verify_and_revise(&tile.attributes, &text)?;
            (text, conflicts, true)
        }
        Err(e) => return Err(e),
    };
    Ok(CaptionAudit {
        revised: !conflicts.is_empty() || fallback,
        candidates,
        scores,
        best,
        conflicts,
        final_caption,
        fallback,
    })
}
