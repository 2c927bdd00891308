//! NLI claim verification and text-level aggregation.
//!
//! A claim is checked against its retrieved passages in rank order: the first
//! entailing passage verifies it, the first contradicting passage refutes it,
//! and a claim that only meets neutral passages (or none) counts as verified.
//! A text is factual when every extracted claim is verified.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{
    BackendError, ChatBackend, ChatRequest, EmbeddingBackend, Fingerprint, NliBackend,
};
use crate::corpus::SentenceSplitter;
use crate::jsonl::{self, JsonlError};
use crate::retrieval::{PassageIndex, RankedResult, RetrievalError};
use crate::synthgen::parse::{parse_claim_list, ParseError};
use crate::synthgen::prompt::build_extraction_prompt;
use crate::text::normalize_for_match;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NliLabel {
    #[serde(rename = "ENT")]
    Entailment,
    #[serde(rename = "NEUT")]
    Neutral,
    #[serde(rename = "CONTR")]
    Contradiction,
}

impl NliLabel {
    pub const ALL: [NliLabel; 3] = [
        NliLabel::Entailment,
        NliLabel::Neutral,
        NliLabel::Contradiction,
    ];
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid NLI distribution ({entailment}, {neutral}, {contradiction}): {reason}")]
pub struct DistributionError {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
    pub reason: &'static str,
}

pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// Probabilities over the three NLI labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliDistribution {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

impl NliDistribution {
    pub fn new(
        entailment: f64,
        neutral: f64,
        contradiction: f64,
    ) -> Result<Self, DistributionError> {
        let err = |reason| DistributionError {
            entailment,
            neutral,
            contradiction,
            reason,
        };
        let parts = [entailment, neutral, contradiction];
        if parts
            .iter()
            .any(|p| !p.is_finite() || !(0.0..=1.0).contains(p))
        {
            return Err(err("each probability must lie in [0, 1]"));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(err("probabilities must sum to 1"));
        }
        Ok(NliDistribution {
            entailment,
            neutral,
            contradiction,
        })
    }

    pub fn probability(&self, label: NliLabel) -> f64 {
        match label {
            NliLabel::Entailment => self.entailment,
            NliLabel::Neutral => self.neutral,
            NliLabel::Contradiction => self.contradiction,
        }
    }

    /// Most probable label; ties resolve ENT, then CONTR, then NEUT.
    pub fn argmax(&self) -> NliLabel {
        if self.entailment >= self.contradiction && self.entailment >= self.neutral {
            NliLabel::Entailment
        } else if self.contradiction >= self.neutral {
            NliLabel::Contradiction
        } else {
            NliLabel::Neutral
        }
    }

    pub fn point(label: NliLabel) -> Self {
        let mut d = NliDistribution {
            entailment: 0.0,
            neutral: 0.0,
            contradiction: 0.0,
        };
        match label {
            NliLabel::Entailment => d.entailment = 1.0,
            NliLabel::Neutral => d.neutral = 1.0,
            NliLabel::Contradiction => d.contradiction = 1.0,
        }
        d
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
    #[error("NLI backend failed at rank {rank}: {source}")]
    NliAtRank {
        rank: usize,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("NLI backend returned an invalid distribution: {0}")]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("claim extraction output: {0}")]
    Extraction(#[from] ParseError),
    #[error("no claims could be extracted; the text is unverifiable")]
    NoClaims,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("ranked passage `{0}` is not in the index")]
    UnknownPassage(String),
}

/// Label the pair by the argmax of the backend's distribution.
pub fn classify(
    nli: &dyn NliBackend,
    premise: &str,
    hypothesis: &str,
) -> Result<NliLabel, VerifyError> {
    if premise.trim().is_empty() {
        return Err(VerifyError::EmptyInput("premise"));
    }
    if hypothesis.trim().is_empty() {
        return Err(VerifyError::EmptyInput("hypothesis"));
    }
    let d = nli.nli(premise, hypothesis)?;
    // Re-check: backends built outside this crate may skip validation.
    let d = NliDistribution::new(d.entailment, d.neutral, d.contradiction)?;
    Ok(d.argmax())
}

/// A passage offered as evidence, in rank order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub passage_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimTrace {
    pub claim: String,
    pub decision: bool,
    /// Passage whose label decided the claim; `None` when every passage was
    /// neutral.
    pub deciding_passage_id: Option<String>,
    /// 1-based rank of the deciding passage, or the number of passages
    /// examined when none decided.
    pub rank_examined: usize,
}

/// Scan `evidence` in order; the first non-neutral label decides.
pub fn verify_claim(
    claim: &str,
    evidence: &[Evidence],
    nli: &dyn NliBackend,
) -> Result<ClaimTrace, VerifyError> {
    for (i, passage) in evidence.iter().enumerate() {
        let rank = i + 1;
        let label = classify(nli, &passage.text, claim).map_err(|e| match e {
            VerifyError::Backend(source) => VerifyError::NliAtRank { rank, source },
            other => other,
        })?;
        let decision = match label {
            NliLabel::Entailment => true,
            NliLabel::Contradiction => false,
            NliLabel::Neutral => continue,
        };
        return Ok(ClaimTrace {
            claim: claim.to_owned(),
            decision,
            deciding_passage_id: Some(passage.passage_id.clone()),
            rank_examined: rank,
        });
    }
    Ok(ClaimTrace {
        claim: claim.to_owned(),
        decision: true,
        deciding_passage_id: None,
        rank_examined: evidence.len(),
    })
}

/// Resolve ranked ids to evidence passages.
pub fn evidence_from(
    index: &PassageIndex,
    ranked: &RankedResult,
) -> Result<Vec<Evidence>, VerifyError> {
    ranked
        .ids()
        .map(|id| {
            index
                .get(id)
                .map(|e| Evidence {
                    passage_id: e.passage_id.clone(),
                    text: e.text.clone(),
                })
                .ok_or_else(|| VerifyError::UnknownPassage(id.to_owned()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub factual: bool,
    pub claim_traces: Vec<ClaimTrace>,
}

impl Verdict {
    pub fn from_traces(claim_traces: Vec<ClaimTrace>) -> Self {
        Verdict {
            factual: claim_traces.iter().all(|t| t.decision),
            claim_traces,
        }
    }
}

/// Turns a text into the claims to verify.
pub trait ClaimExtractor: Send + Sync {
    fn extract(&self, text: &str) -> Result<Vec<String>, VerifyError>;
}

/// Claim extraction through a chat model using the step-1 instructions.
pub struct ChatClaimExtractor<C> {
    chat: C,
}

impl<C: ChatBackend> ChatClaimExtractor<C> {
    pub fn new(chat: C) -> Self {
        ChatClaimExtractor { chat }
    }
}

impl<C: ChatBackend> ClaimExtractor for ChatClaimExtractor<C> {
    fn extract(&self, text: &str) -> Result<Vec<String>, VerifyError> {
        let request = ChatRequest::user(build_extraction_prompt(text)).with_temperature(0.0);
        let reply = self.chat.chat(&request)?;
        Ok(parse_claim_list(&reply)?
            .into_iter()
            .filter(|c| !c.trim().is_empty())
            .collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimsFixture {
    pub text: String,
    pub claims: Vec<String>,
}

/// Fixed text-to-claims table. Unknown texts fall back to sentence splitting
/// when a splitter is configured, otherwise yield no claims.
#[derive(Debug, Clone, Default)]
pub struct ScriptedExtractor {
    by_text: HashMap<String, Vec<String>>,
    fallback: Option<SentenceSplitter>,
}

impl ScriptedExtractor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_sentence_fallback(mut self) -> Self {
        self.fallback = Some(SentenceSplitter::default());
        self
    }

    pub fn insert(&mut self, text: &str, claims: Vec<String>) -> &mut Self {
        self.by_text.insert(normalize_for_match(text), claims);
        self
    }

    pub fn load(path: &Path) -> Result<Self, JsonlError> {
        let (_, rows): (_, Vec<ClaimsFixture>) = jsonl::read_jsonl(path, None)?;
        let mut out = Self::new();
        for row in rows {
            out.insert(&row.text, row.claims);
        }
        Ok(out)
    }
}

impl ClaimExtractor for ScriptedExtractor {
    fn extract(&self, text: &str) -> Result<Vec<String>, VerifyError> {
        if let Some(claims) = self.by_text.get(&normalize_for_match(text)) {
            return Ok(claims.clone());
        }
        Ok(self
            .fallback
            .as_ref()
            .map(|s| s.split(text))
            .unwrap_or_default())
    }
}

/// The full pipeline: extract claims, retrieve the top `k` passages for each,
/// verify each claim, and aggregate by conjunction. Claims are processed in
/// parallel; traces keep extraction order.
pub fn verify_text(
    text: &str,
    extractor: &dyn ClaimExtractor,
    index: &PassageIndex,
    embedder: &dyn EmbeddingBackend,
    nli: &dyn NliBackend,
    k: usize,
) -> Result<Verdict, VerifyError> {
    if k == 0 {
        return Err(VerifyError::InvalidK);
    }
    if text.trim().is_empty() {
        return Err(VerifyError::EmptyInput("text"));
    }
    let claims = extractor.extract(text)?;
    if claims.is_empty() {
        return Err(VerifyError::NoClaims);
    }
    let traces = claims
        .par_iter()
        .map(|claim| {
            let ranked = index.search(claim, embedder, k)?;
            let evidence = evidence_from(index, &ranked)?;
            verify_claim(claim, &evidence, nli)
        })
        .collect::<Result<Vec<_>, VerifyError>>()?;
    Ok(Verdict::from_traces(traces))
}

/// Fingerprint of an NLI request, for correlating trace lines with backend logs.
pub fn nli_fingerprint(premise: &str, hypothesis: &str) -> Fingerprint {
    Fingerprint::nli(premise, hypothesis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::TableNli;
    use crate::backends::BackendErrorKind;

    fn dist(e: f64, n: f64, c: f64) -> NliDistribution {
        NliDistribution::new(e, n, c).unwrap()
    }

    struct Fixed(NliDistribution);

    impl NliBackend for Fixed {
        fn nli(&self, _: &str, _: &str) -> Result<NliDistribution, BackendError> {
            Ok(self.0)
        }
    }

    struct Failing;

    impl NliBackend for Failing {
        fn nli(&self, p: &str, h: &str) -> Result<NliDistribution, BackendError> {
            Err(BackendError::new(
                Fingerprint::nli(p, h),
                BackendErrorKind::Timeout,
            ))
        }
    }

    #[test]
    fn distribution_validation() {
        assert!(NliDistribution::new(0.5, 0.5, 0.0).is_ok());
        assert!(NliDistribution::new(0.5, 0.5, 0.1).is_err());
        assert!(NliDistribution::new(1.2, -0.2, 0.0).is_err());
        assert!(NliDistribution::new(f64::NAN, 0.5, 0.5).is_err());
        assert!(NliDistribution::new(0.5, 0.5, 1e-7).is_ok());
    }

    #[test]
    fn classify_argmax_and_ties() {
        let c = |d| classify(&Fixed(d), "premise", "hypothesis").unwrap();
        assert_eq!(c(dist(0.7, 0.2, 0.1)), NliLabel::Entailment);
        assert_eq!(c(dist(0.1, 0.2, 0.7)), NliLabel::Contradiction);
        assert_eq!(c(dist(0.1, 0.8, 0.1)), NliLabel::Neutral);
        let third = 1.0 / 3.0;
        assert_eq!(c(dist(third, third, third)), NliLabel::Entailment);
        assert_eq!(c(dist(0.2, 0.4, 0.4)), NliLabel::Contradiction);
        assert_eq!(c(dist(0.4, 0.4, 0.2)), NliLabel::Entailment);
        assert!(matches!(
            classify(&Fixed(dist(1.0, 0.0, 0.0)), "p", " "),
            Err(VerifyError::EmptyInput("hypothesis"))
        ));
        assert!(matches!(
            classify(&Fixed(dist(1.0, 0.0, 0.0)), "", "h"),
            Err(VerifyError::EmptyInput("premise"))
        ));
    }

    fn scripted(labels: &[NliLabel]) -> (TableNli, Vec<Evidence>) {
        let mut nli = TableNli::new(NliDistribution::point(NliLabel::Neutral));
        let evidence = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let text = format!("passage {i}");
                nli.insert(text.clone(), NliDistribution::point(*l));
                Evidence {
                    passage_id: format!("p{i}"),
                    text,
                }
            })
            .collect();
        (nli, evidence)
    }

    #[test]
    fn first_non_neutral_decides() {
        use NliLabel::*;
        let (nli, ev) = scripted(&[Neutral, Entailment, Contradiction]);
        let t = verify_claim("c", &ev, &nli).unwrap();
        assert!(t.decision);
        assert_eq!(
            (t.deciding_passage_id.as_deref(), t.rank_examined),
            (Some("p1"), 2)
        );

        let (nli, ev) = scripted(&[Neutral, Contradiction]);
        let t = verify_claim("c", &ev, &nli).unwrap();
        assert!(!t.decision);
        assert_eq!(t.rank_examined, 2);

        let (nli, ev) = scripted(&[Neutral, Neutral, Neutral]);
        let t = verify_claim("c", &ev, &nli).unwrap();
        assert!(t.decision);
        assert_eq!((t.deciding_passage_id, t.rank_examined), (None, 3));

        let t = verify_claim("c", &[], &nli).unwrap();
        assert!(t.decision);
    }

    #[test]
    fn backend_failure_carries_rank() {
        let ev = vec![Evidence {
            passage_id: "p".into(),
            text: "x".into(),
        }];
        match verify_claim("c", &ev, &Failing) {
            Err(VerifyError::NliAtRank { rank, source }) => {
                assert_eq!(rank, 1);
                assert_eq!(source.kind, BackendErrorKind::Timeout);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn verdict_is_conjunction() {
        let trace = |d| ClaimTrace {
            claim: "c".into(),
            decision: d,
            deciding_passage_id: None,
            rank_examined: 0,
        };
        assert!(Verdict::from_traces(vec![trace(true); 3]).factual);
        assert!(!Verdict::from_traces(vec![trace(true), trace(false), trace(true)]).factual);
    }

    #[test]
    fn scripted_extractor_lookup_and_fallback() {
        let mut ex = ScriptedExtractor::new();
        ex.insert("Known  text.", vec!["claim".into()]);
        assert_eq!(ex.extract("known text.").unwrap(), ["claim"]);
        assert!(ex.extract("Unknown. Text.").unwrap().is_empty());
        let ex = ex.with_sentence_fallback();
        assert_eq!(ex.extract("Unknown. Text.").unwrap(), ["Unknown.", "Text."]);
    }

    #[test]
    fn chat_extractor_parses_step_one() {
        let chat = crate::backends::mock::ConstantChat::new(
            r#"Sure: {"step_1": ["A is B.", " ", "C is D."]}"#,
        );
        let ex = ChatClaimExtractor::new(chat);
        assert_eq!(ex.extract("whatever").unwrap(), ["A is B.", "C is D."]);
        let bad = ChatClaimExtractor::new(crate::backends::mock::ConstantChat::new("no json"));
        assert!(matches!(bad.extract("x"), Err(VerifyError::Extraction(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn label() -> impl Strategy<Value = NliLabel> {
            prop_oneof![
                Just(NliLabel::Entailment),
                Just(NliLabel::Neutral),
                Just(NliLabel::Contradiction)
            ]
        }

        proptest! {
            #[test]
            fn only_first_non_neutral_matters(
                prefix in 0usize..4,
                decisive in label(),
                tail_a in proptest::collection::vec(label(), 0..4),
                tail_b in proptest::collection::vec(label(), 0..4),
            ) {
                let build = |tail: &[NliLabel]| {
                    let mut seq = vec![NliLabel::Neutral; prefix];
                    seq.push(decisive);
                    seq.extend_from_slice(tail);
                    seq
                };
                let (nli_a, ev_a) = scripted(&build(&tail_a));
                let (nli_b, ev_b) = scripted(&build(&tail_b));
                let a = verify_claim("c", &ev_a, &nli_a).unwrap();
                let b = verify_claim("c", &ev_b, &nli_b).unwrap();
                if decisive != NliLabel::Neutral {
                    prop_assert_eq!(a, b);
                }
            }

            #[test]
            fn flipping_a_claim_to_false_never_helps(decisions in proptest::collection::vec(any::<bool>(), 1..8), flip in 0usize..8) {
                let trace = |d| ClaimTrace { claim: "c".into(), decision: d, deciding_passage_id: None, rank_examined: 0 };
                let before = Verdict::from_traces(decisions.iter().map(|d| trace(*d)).collect());
                let mut flipped = decisions.clone();
                let i = flip % flipped.len();
                flipped[i] = false;
                let after = Verdict::from_traces(flipped.into_iter().map(trace).collect());
                prop_assert!(!( !before.factual && after.factual));
                prop_assert!(after.factual <= before.factual);
            }
        }
    }
}
