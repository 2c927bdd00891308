//! Splits and derived training/benchmark sets built from resource records.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::NliBackend;
use crate::corpus::Passage;
use crate::jsonl::{self, JsonlError, SchemaHeader};
use crate::synthgen::ResourceRecord;
use crate::verification::{NliLabel, VerifyError};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("need at least 2 records to split, got {0}")]
    TooFewRecords(usize),
    #[error("split ratio must lie strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
    #[error("no candidate passages to mine a neutral premise from")]
    NoCandidates,
    #[error("neutral mining: {0}")]
    Nli(#[from] VerifyError),
}

/// Train/validation partition at record granularity, so every item derived
/// from one record lands on the same side.
pub fn split_train_val(
    records: &[ResourceRecord],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<ResourceRecord>, Vec<ResourceRecord>), DatasetError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::InvalidRatio(ratio));
    }
    let n = records.len();
    if n < 2 {
        return Err(DatasetError::TooFewRecords(n));
    }
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_idx, val_idx) = order.split_at(n_train);
    // Keep input order inside each side so outputs do not depend on the shuffle
    // beyond membership.
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter()
            .map(|i| records[i].clone())
            .collect::<Vec<_>>()
    };
    Ok((pick(train_idx), pick(val_idx)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingKind {
    ClaimPassage,
    ClaimFactual,
    ClaimUnfactual,
    FalsifiedPassage,
    FalsifiedFactual,
    FalsifiedUnfactual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrieverPair {
    pub claim: String,
    pub passage_text: String,
    pub record_id: String,
    pub pairing_kind: PairingKind,
}

/// Every claim against the source passage, F and U, plus the falsified claim
/// against the same three: `3(n+1)` pairs.
pub fn derive_retriever_pairs(record: &ResourceRecord) -> Vec<RetrieverPair> {
    use PairingKind::*;
    let out = &record.outputs;
    let targets = |claim_kinds: [PairingKind; 3]| {
        [
            (claim_kinds[0], record.passage.text.as_str()),
            (claim_kinds[1], out.factual_text.as_str()),
            (claim_kinds[2], out.unfactual_text.as_str()),
        ]
    };
    let mut pairs = Vec::with_capacity(3 * (out.claims.len() + 1));
    let mut emit = |claim: &str, kinds| {
        for (kind, text) in targets(kinds) {
            pairs.push(RetrieverPair {
                claim: claim.to_owned(),
                passage_text: text.to_owned(),
                record_id: record.record_id.clone(),
                pairing_kind: kind,
            });
        }
    };
    for claim in &out.claims {
        emit(claim, [ClaimPassage, ClaimFactual, ClaimUnfactual]);
    }
    emit(
        &out.falsified.altered,
        [FalsifiedPassage, FalsifiedFactual, FalsifiedUnfactual],
    );
    pairs
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliTriplet {
    pub premise: String,
    pub hypothesis: String,
    pub label: NliLabel,
}

/// NLI training triplets for one record. `neutrals`, when given, holds one
/// mined premise per claim (same order as the claims).
///
/// Without neutrals: `2n+4` triplets; with them: `3n+4`.
pub fn derive_nli_triplets(
    record: &ResourceRecord,
    neutrals: Option<&[String]>,
) -> Vec<NliTriplet> {
    let out = &record.outputs;
    let t = record.passage.text.as_str();
    let f = out.factual_text.as_str();
    let u = out.unfactual_text.as_str();
    let triplet = |premise: &str, hypothesis: &str, label| NliTriplet {
        premise: premise.to_owned(),
        hypothesis: hypothesis.to_owned(),
        label,
    };
    let mut triplets = Vec::with_capacity(3 * out.claims.len() + 4);
    for claim in &out.claims {
        triplets.push(triplet(t, claim, NliLabel::Entailment));
        triplets.push(triplet(f, claim, NliLabel::Entailment));
    }
    let altered = out.falsified.altered.as_str();
    let original = out.falsified.original.as_str();
    triplets.push(triplet(t, altered, NliLabel::Contradiction));
    triplets.push(triplet(f, altered, NliLabel::Contradiction));
    triplets.push(triplet(u, altered, NliLabel::Entailment));
    triplets.push(triplet(u, original, NliLabel::Contradiction));
    if let Some(neutrals) = neutrals {
        for (claim, premise) in out.claims.iter().zip(neutrals) {
            triplets.push(triplet(premise, claim, NliLabel::Neutral));
        }
    }
    triplets
}

/// The candidate with the highest neutral probability for `claim`; ties go to
/// the lowest passage id.
pub fn mine_neutral_passage<'a>(
    claim: &str,
    candidates: &'a [Passage],
    nli: &dyn NliBackend,
) -> Result<&'a Passage, DatasetError> {
    let mut best: Option<(&Passage, f64)> = None;
    for candidate in candidates {
        let p = nli
            .nli(&candidate.text, claim)
            .map_err(VerifyError::from)?
            .neutral;
        let better = match best {
            None => true,
            Some((b, bp)) => p > bp || (p == bp && candidate.passage_id < b.passage_id),
        };
        if better {
            best = Some((candidate, p));
        }
    }
    best.map(|(p, _)| p).ok_or(DatasetError::NoCandidates)
}

/// Mine one neutral premise per claim from the other passages of the record's
/// page. `None` when the page has no other passage.
pub fn mine_neutrals_for_record(
    record: &ResourceRecord,
    page_passages: &[Passage],
    nli: &dyn NliBackend,
) -> Result<Option<Vec<String>>, DatasetError> {
    let candidates: Vec<Passage> = page_passages
        .iter()
        .filter(|p| {
            p.page_id == record.passage.page_id && p.passage_id != record.passage.passage_id
        })
        .cloned()
        .collect();
    if candidates.is_empty() {
        return Ok(None);
    }
    record
        .claims()
        .iter()
        .map(|c| mine_neutral_passage(c, &candidates, nli).map(|p| p.text.clone()))
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

/// Triplets for many records in parallel. With `pages` and `nli` present,
/// neutrals are mined per record; records whose page offers no other passage
/// fall back to the neutral-free form. Returns the triplets and how many
/// records got neutrals.
/// Passages grouped by page id, plus the NLI model that scores them.
pub type NeutralSource<'a> = (&'a BTreeMap<String, Vec<Passage>>, &'a dyn NliBackend);

pub fn derive_all_triplets(
    records: &[ResourceRecord],
    neutral_source: Option<NeutralSource<'_>>,
) -> Result<(Vec<NliTriplet>, usize), DatasetError> {
    let per_record = records
        .par_iter()
        .map(|r| {
            let neutrals = match neutral_source {
                Some((pages, nli)) => match pages.get(&r.passage.page_id) {
                    Some(passages) => mine_neutrals_for_record(r, passages, nli)?,
                    None => None,
                },
                None => None,
            };
            let mined = neutrals.is_some();
            Ok((derive_nli_triplets(r, neutrals.as_deref()), mined))
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let mined = per_record.iter().filter(|(_, m)| *m).count();
    Ok((per_record.into_iter().flat_map(|(t, _)| t).collect(), mined))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TextOrigin {
    F,
    U,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task1Instance {
    pub text: String,
    pub label: bool,
    pub origin: TextOrigin,
    pub record_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task2Instance {
    pub claim: String,
    pub evidence: String,
    pub label: bool,
    pub record_id: String,
}

/// Common view of benchmark instances for the evaluation harness.
pub trait LabeledInstance {
    fn gold(&self) -> bool;
    fn record_id(&self) -> &str;
}

impl LabeledInstance for Task1Instance {
    fn gold(&self) -> bool {
        self.label
    }
    fn record_id(&self) -> &str {
        &self.record_id
    }
}

impl LabeledInstance for Task2Instance {
    fn gold(&self) -> bool {
        self.label
    }
    fn record_id(&self) -> &str {
        &self.record_id
    }
}

/// `(F, true)` and `(U, false)` for every usable record. The source passage is
/// never emitted.
pub fn build_task1(records: &[ResourceRecord]) -> Vec<Task1Instance> {
    records
        .iter()
        .filter(|r| r.is_usable())
        .flat_map(|r| {
            [
                Task1Instance {
                    text: r.outputs.factual_text.clone(),
                    label: true,
                    origin: TextOrigin::F,
                    record_id: r.record_id.clone(),
                },
                Task1Instance {
                    text: r.outputs.unfactual_text.clone(),
                    label: false,
                    origin: TextOrigin::U,
                    record_id: r.record_id.clone(),
                },
            ]
        })
        .collect()
}

/// The original claim (true) and its falsified twin (false), both against F.
pub fn build_task2(records: &[ResourceRecord]) -> Vec<Task2Instance> {
    records
        .iter()
        .filter(|r| r.is_usable())
        .flat_map(|r| {
            [(r.original_claim(), true), (r.falsified_claim(), false)].map(|(claim, label)| {
                Task2Instance {
                    claim: claim.to_owned(),
                    evidence: r.outputs.factual_text.clone(),
                    label,
                    record_id: r.record_id.clone(),
                }
            })
        })
        .collect()
}

pub const RETRIEVER_SCHEMA: &str = "factline.retriever_pairs";
pub const NLI_SCHEMA: &str = "factline.nli_triplets";
pub const TASK1_SCHEMA: &str = "factline.task1";
pub const TASK2_SCHEMA: &str = "factline.task2";
pub const DERIVED_SCHEMA_VERSION: u32 = 1;

pub fn write_derived<T: Serialize>(
    path: &Path,
    header: &SchemaHeader,
    items: &[T],
) -> Result<usize, JsonlError> {
    jsonl::write_jsonl(path, Some(header), items)
}

pub fn read_task1(path: &Path) -> Result<Vec<Task1Instance>, JsonlError> {
    Ok(jsonl::read_jsonl(path, Some((TASK1_SCHEMA, DERIVED_SCHEMA_VERSION)))?.1)
}

pub fn read_task2(path: &Path) -> Result<Vec<Task2Instance>, JsonlError> {
    Ok(jsonl::read_jsonl(path, Some((TASK2_SCHEMA, DERIVED_SCHEMA_VERSION)))?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::TableNli;
    use crate::synthgen::{FalsifiedPair, StepOutputs};
    use crate::verification::NliDistribution;

    fn record(id: &str, n: usize) -> ResourceRecord {
        let claims: Vec<String> = (0..n)
            .map(|i| format!("Entity {id} has property {i}."))
            .collect();
        let passage = Passage::new(id, 0, claims.clone());
        let outputs = StepOutputs {
            claims: claims.clone(),
            falsified: FalsifiedPair {
                altered: format!("Entity {id} lacks property 0."),
                original: claims[0].clone(),
            },
            factual_text: format!("Paraphrase of {id}."),
            unfactual_text: format!("Altered paraphrase of {id}."),
        };
        ResourceRecord::new(id, passage, outputs)
    }

    fn count(triplets: &[NliTriplet], label: NliLabel) -> usize {
        triplets.iter().filter(|t| t.label == label).count()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let records: Vec<_> = (0..10).map(|i| record(&format!("r{i}"), 2)).collect();
        let (train, val) = split_train_val(&records, 0.8, 7).unwrap();
        assert_eq!((train.len(), val.len()), (8, 2));
        assert_eq!(
            split_train_val(&records, 0.8, 7).unwrap(),
            (train.clone(), val.clone())
        );
        let mut ids: Vec<_> = train
            .iter()
            .chain(&val)
            .map(|r| r.record_id.clone())
            .collect();
        ids.sort();
        let mut expected: Vec<_> = records.iter().map(|r| r.record_id.clone()).collect();
        expected.sort();
        assert_eq!(ids, expected);
        let (t2, v2) = split_train_val(&records, 0.8, 8).unwrap();
        assert_eq!((t2.len(), v2.len()), (8, 2));
    }

    #[test]
    fn split_errors_and_clamping() {
        let one = vec![record("a", 1)];
        assert!(matches!(
            split_train_val(&one, 0.8, 0),
            Err(DatasetError::TooFewRecords(1))
        ));
        let two = vec![record("a", 1), record("b", 1)];
        assert!(matches!(
            split_train_val(&two, 1.0, 0),
            Err(DatasetError::InvalidRatio(_))
        ));
        assert!(matches!(
            split_train_val(&two, 0.0, 0),
            Err(DatasetError::InvalidRatio(_))
        ));
        let (t, v) = split_train_val(&two, 0.99, 0).unwrap();
        assert_eq!((t.len(), v.len()), (1, 1));
    }

    #[test]
    fn retriever_pair_counts() {
        assert_eq!(derive_retriever_pairs(&record("a", 5)).len(), 18);
        let pairs = derive_retriever_pairs(&record("a", 1));
        assert_eq!(pairs.len(), 6);
        let last = pairs.last().unwrap();
        assert_eq!(last.pairing_kind, PairingKind::FalsifiedUnfactual);
        assert_eq!(last.passage_text, "Altered paraphrase of a.");
    }

    #[test]
    fn triplet_counts() {
        let r = record("a", 5);
        let neutrals: Vec<String> = (0..5).map(|i| format!("neutral {i}")).collect();
        let with = derive_nli_triplets(&r, Some(&neutrals));
        assert_eq!(with.len(), 19);
        assert_eq!(
            (
                count(&with, NliLabel::Entailment),
                count(&with, NliLabel::Contradiction),
                count(&with, NliLabel::Neutral)
            ),
            (11, 3, 5)
        );
        assert_eq!(derive_nli_triplets(&record("b", 2), None).len(), 8);
    }

    #[test]
    fn neutral_mining_argmax_and_ties() {
        let passages: Vec<Passage> = ["x", "y", "z"]
            .iter()
            .map(|s| Passage::from_text("page", s))
            .collect();
        let mut passages = passages;
        for (i, p) in passages.iter_mut().enumerate() {
            p.passage_id = format!("page#{i}");
        }
        let mut nli = TableNli::new(NliDistribution::point(NliLabel::Entailment));
        for (text, neut) in [("x", 0.1), ("y", 0.9), ("z", 0.4)] {
            nli.insert(text, NliDistribution::new(1.0 - neut, neut, 0.0).unwrap());
        }
        assert_eq!(
            mine_neutral_passage("c", &passages, &nli).unwrap().text,
            "y"
        );
        assert_eq!(
            mine_neutral_passage("c", &passages[..1], &nli)
                .unwrap()
                .text,
            "x"
        );

        let flat = TableNli::new(NliDistribution::point(NliLabel::Neutral));
        let reversed: Vec<Passage> = passages.iter().rev().cloned().collect();
        assert_eq!(
            mine_neutral_passage("c", &reversed, &flat)
                .unwrap()
                .passage_id,
            "page#0"
        );
        assert!(matches!(
            mine_neutral_passage("c", &[], &flat),
            Err(DatasetError::NoCandidates)
        ));
    }

    #[test]
    fn mining_excludes_source_passage() {
        let r = record("pg", 2);
        let other = Passage::new("pg", 1, vec!["Unrelated sentence.".into()]);
        let nli = TableNli::new(NliDistribution::point(NliLabel::Neutral));
        let mined = mine_neutrals_for_record(&r, &[r.passage.clone(), other.clone()], &nli)
            .unwrap()
            .unwrap();
        assert_eq!(mined, vec![other.text.clone(); 2]);
        assert_eq!(
            mine_neutrals_for_record(&r, std::slice::from_ref(&r.passage), &nli).unwrap(),
            None
        );
    }

    #[test]
    fn tasks_are_balanced_and_skip_unusable() {
        let mut records: Vec<_> = (0..10).map(|i| record(&format!("r{i}"), 3)).collect();
        let t1 = build_task1(&records);
        assert_eq!(t1.len(), 20);
        assert_eq!(t1.iter().filter(|i| i.label).count(), 10);
        assert!(t1.iter().all(|i| (i.origin == TextOrigin::F) == i.label));
        assert!(t1
            .iter()
            .all(|i| !records.iter().any(|r| r.passage.text == i.text)));
        let t2 = build_task2(&records);
        assert_eq!(t2.len(), 20);
        assert!(t2.iter().all(|i| i.evidence.starts_with("Paraphrase")));

        let bad = &mut records[0];
        bad.outputs.factual_text.clear();
        bad.validation = crate::synthgen::validate_record(&bad.passage, &bad.outputs);
        assert_eq!(build_task1(&records).len(), 18);
        assert_eq!(build_task2(&records).len(), 18);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]
            #[test]
            fn cardinalities(n in 1usize..=20) {
                let r = record("p", n);
                prop_assert_eq!(derive_retriever_pairs(&r).len(), 3 * (n + 1));
                let neutrals = vec!["neutral".to_string(); n];
                let with = derive_nli_triplets(&r, Some(&neutrals));
                prop_assert_eq!(with.len(), 3 * n + 4);
                prop_assert_eq!(count(&with, NliLabel::Entailment), 2 * n + 1);
                prop_assert_eq!(count(&with, NliLabel::Contradiction), 3);
                prop_assert_eq!(count(&with, NliLabel::Neutral), n);
                prop_assert_eq!(derive_nli_triplets(&r, None).len(), 2 * n + 4);
            }
        }
    }
}
