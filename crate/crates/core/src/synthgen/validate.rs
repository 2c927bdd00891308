//! Structural checks on generator output. Hard failures make a record
//! unusable; warnings are kept for inspection.

use serde::{Deserialize, Serialize};

use super::parse::StepOutputs;
use crate::corpus::Passage;
use crate::evalharness::metrics::rouge1_f1;
use crate::text::normalize_for_match;

pub const MAX_CLAIM_WORDS: usize = 15;
/// Factual text closer than this to the source passage is a literal copy.
pub const LITERAL_PARAPHRASE_OVERLAP: f64 = 0.9;
/// Unfactual text further than this from the factual text drifted beyond the
/// falsified span.
pub const UNFACTUAL_DRIFT_OVERLAP: f64 = 0.5;
/// Minimum overlap for accepting a lightly rephrased original claim.
pub const FUZZY_MATCH_OVERLAP: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum HardFailure {
    EmptyClaims,
    OriginalNotInClaims,
    AlteredEqualsOriginal,
    EmptyAlteredClaim,
    EmptyFactualText,
    EmptyUnfactualText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum Warning {
    ClaimTooLong { index: usize, words: usize },
    DuplicateClaim { index: usize, first: usize },
    FuzzyOriginalMatch { index: usize, overlap: f64 },
    LiteralParaphrase { overlap: f64 },
    UnfactualDrift { overlap: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub hard_failures: Vec<HardFailure>,
    pub warnings: Vec<Warning>,
}

impl ValidationReport {
    pub fn is_usable(&self) -> bool {
        self.hard_failures.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClaimMatch {
    Exact(usize),
    Fuzzy { index: usize, overlap: f64 },
}

impl ClaimMatch {
    pub fn index(&self) -> usize {
        match *self {
            ClaimMatch::Exact(i) | ClaimMatch::Fuzzy { index: i, .. } => i,
        }
    }
}

/// Position of the falsified pair's original claim within the claim list:
/// first case/whitespace-normalized exact match, else the best ROUGE-1 match
/// at or above [`FUZZY_MATCH_OVERLAP`].
pub fn locate_original(outputs: &StepOutputs) -> Option<ClaimMatch> {
    let target = normalize_for_match(&outputs.falsified.original);
    if let Some(i) = outputs
        .claims
        .iter()
        .position(|c| normalize_for_match(c) == target)
    {
        return Some(ClaimMatch::Exact(i));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in outputs.claims.iter().enumerate() {
        let overlap = rouge1_f1(c, &outputs.falsified.original);
        if overlap >= FUZZY_MATCH_OVERLAP && best.is_none_or(|(_, b)| overlap > b) {
            best = Some((i, overlap));
        }
    }
    best.map(|(index, overlap)| ClaimMatch::Fuzzy { index, overlap })
}

pub fn validate_record(passage: &Passage, outputs: &StepOutputs) -> ValidationReport {
    let mut report = ValidationReport::default();
    let hard = &mut report.hard_failures;
    let blank = |s: &str| s.trim().is_empty();

    if outputs.claims.is_empty() {
        hard.push(HardFailure::EmptyClaims);
    }
    let located = locate_original(outputs);
    if !outputs.claims.is_empty() && located.is_none() {
        hard.push(HardFailure::OriginalNotInClaims);
    }
    if blank(&outputs.falsified.altered) {
        hard.push(HardFailure::EmptyAlteredClaim);
    } else if normalize_for_match(&outputs.falsified.altered)
        == normalize_for_match(&outputs.falsified.original)
    {
        hard.push(HardFailure::AlteredEqualsOriginal);
    }
    if blank(&outputs.factual_text) {
        hard.push(HardFailure::EmptyFactualText);
    }
    if blank(&outputs.unfactual_text) {
        hard.push(HardFailure::EmptyUnfactualText);
    }

    let warn = &mut report.warnings;
    for (index, claim) in outputs.claims.iter().enumerate() {
        let words = claim.split_whitespace().count();
        if words > MAX_CLAIM_WORDS {
            warn.push(Warning::ClaimTooLong { index, words });
        }
        let norm = normalize_for_match(claim);
        if let Some(first) = outputs.claims[..index]
            .iter()
            .position(|c| normalize_for_match(c) == norm)
        {
            warn.push(Warning::DuplicateClaim { index, first });
        }
    }
    if let Some(ClaimMatch::Fuzzy { index, overlap }) = located {
        warn.push(Warning::FuzzyOriginalMatch { index, overlap });
    }
    if !blank(&outputs.factual_text) {
        let overlap = rouge1_f1(&outputs.factual_text, &passage.text);
        if overlap > LITERAL_PARAPHRASE_OVERLAP {
            warn.push(Warning::LiteralParaphrase { overlap });
        }
        if !blank(&outputs.unfactual_text) {
            let overlap = rouge1_f1(&outputs.unfactual_text, &outputs.factual_text);
            if overlap < UNFACTUAL_DRIFT_OVERLAP {
                warn.push(Warning::UnfactualDrift { overlap });
            }
        }
    }
    report
}
