//! Benchmark runner for both tasks, LLM-baseline and pipeline systems, and
//! the metrics they are scored with.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{ChatBackend, ChatRequest, EmbeddingBackend, NliBackend};
use crate::dataset::{LabeledInstance, Task1Instance, Task2Instance};
use crate::retrieval::PassageIndex;
use crate::verification::{
    evidence_from, verify_claim, verify_text, ClaimExtractor, Evidence, VerifyError,
};

pub mod metrics;
pub mod prompt;

pub use metrics::{
    balanced_accuracy, easiness_f1, easiness_p, easiness_r, mean_std, rouge1_f1, Confusion,
    MetricError,
};
pub use prompt::{
    build_prompt, parse_llm_verdict, BuiltPrompt, FewShotExample, PromptError, PromptMode,
    PromptSpec, UnparseableVerdict,
};

pub const EVAL_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Task1,
    Task2,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Task1 => "task1",
            Task::Task2 => "task2",
        })
    }
}

/// Why a system produced no verdict for an instance.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SystemFailure {
    #[error(transparent)]
    Unparseable(#[from] UnparseableVerdict),
    #[error("{0}")]
    Error(String),
}

impl From<VerifyError> for SystemFailure {
    fn from(e: VerifyError) -> Self {
        SystemFailure::Error(e.to_string())
    }
}

impl From<PromptError> for SystemFailure {
    fn from(e: PromptError) -> Self {
        SystemFailure::Error(e.to_string())
    }
}

impl From<crate::backends::BackendError> for SystemFailure {
    fn from(e: crate::backends::BackendError) -> Self {
        SystemFailure::Error(e.to_string())
    }
}

/// Anything that labels instances. `seed` is the run seed, for systems that
/// are themselves stochastic.
pub trait VerdictSystem<I>: Sync {
    fn judge(&self, instance: &I, seed: u64) -> Result<bool, SystemFailure>;
}

impl<I, F> VerdictSystem<I> for F
where
    F: Fn(&I, u64) -> Result<bool, SystemFailure> + Sync,
{
    fn judge(&self, instance: &I, seed: u64) -> Result<bool, SystemFailure> {
        self(instance, seed)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("no instances to evaluate")]
    NoInstances,
    #[error("at least one seed is required")]
    NoSeeds,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub balanced_accuracy: f64,
    pub recall_true: f64,
    pub recall_false: f64,
    pub confusion: Confusion,
    /// Instances with no verdict (scored as wrong), including unparseable ones.
    pub failed: usize,
    pub unparseable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub n_instances: usize,
    pub balanced_accuracy: f64,
    pub balanced_accuracy_std: f64,
    pub recall_true: f64,
    pub recall_false: f64,
    /// Summed over seeds.
    pub confusion: Confusion,
    pub failed: usize,
    pub unparseable: usize,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<u64>,
}

impl EvalReport {
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut body = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        body.push('\n');
        std::fs::write(path, body)
    }
}

/// Score `system` on `instances` once per seed. Each seed visits the
/// instances in its own shuffled order with at most `max_in_flight` calls
/// outstanding; failed instances count as wrong and are tallied separately.
pub fn run_benchmark<I, S>(
    task: Task,
    system: &S,
    instances: &[I],
    seeds: &[u64],
    max_in_flight: usize,
) -> Result<EvalReport, EvalError>
where
    I: LabeledInstance + Sync,
    S: VerdictSystem<I> + ?Sized,
{
    if instances.is_empty() {
        return Err(EvalError::NoInstances);
    }
    if seeds.is_empty() {
        return Err(EvalError::NoSeeds);
    }
    let golds: Vec<bool> = instances.iter().map(LabeledInstance::gold).collect();
    if golds.iter().all(|g| *g) || golds.iter().all(|g| !*g) {
        return Err(MetricError::SingleClass.into());
    }
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .expect("thread pool");
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut order: Vec<usize> = (0..instances.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let outcomes: Vec<(bool, Result<bool, SystemFailure>)> = pool.install(|| {
            order
                .par_iter()
                .map(|&i| (golds[i], system.judge(&instances[i], seed)))
                .collect()
        });
        let mut confusion = Confusion::default();
        let (mut failed, mut unparseable) = (0, 0);
        for (gold, outcome) in outcomes {
            let predicted = match outcome {
                Ok(p) => p,
                Err(e) => {
                    failed += 1;
                    if matches!(e, SystemFailure::Unparseable(_)) {
                        unparseable += 1;
                    }
                    log::debug!("seed {seed}: no verdict ({e})");
                    !gold
                }
            };
            confusion.record(predicted, gold);
        }
        per_seed.push(SeedResult {
            seed,
            balanced_accuracy: confusion.balanced_accuracy()?,
            recall_true: confusion.recall_true().unwrap_or(0.0),
            recall_false: confusion.recall_false().unwrap_or(0.0),
            confusion,
            failed,
            unparseable,
        });
    }
    let mean = |f: fn(&SeedResult) -> f64| mean_std(&per_seed.iter().map(f).collect::<Vec<_>>());
    let (balanced_accuracy, balanced_accuracy_std) = mean(|s| s.balanced_accuracy);
    let mut confusion = Confusion::default();
    for s in &per_seed {
        confusion.merge(&s.confusion);
    }
    Ok(EvalReport {
        task,
        n_instances: instances.len(),
        balanced_accuracy,
        balanced_accuracy_std,
        recall_true: mean(|s| s.recall_true).0,
        recall_false: mean(|s| s.recall_false).0,
        confusion,
        failed: per_seed.iter().map(|s| s.failed).sum(),
        unparseable: per_seed.iter().map(|s| s.unparseable).sum(),
        seeds: seeds.to_vec(),
        per_seed,
        runtime_ms: Some(started.elapsed().as_millis() as u64),
    })
}

/// Dense top-k evidence lookup for RAG prompts.
#[derive(Clone, Copy)]
pub struct Retriever<'a> {
    pub index: &'a PassageIndex,
    pub embedder: &'a dyn EmbeddingBackend,
    pub k: usize,
}

impl Retriever<'_> {
    pub fn retrieve(&self, query: &str) -> Result<Vec<Evidence>, VerifyError> {
        let ranked = self.index.search(query, self.embedder, self.k)?;
        evidence_from(self.index, &ranked)
    }
}

/// A chat model prompted with one of the baseline settings.
pub struct LlmJudge<'a> {
    chat: &'a dyn ChatBackend,
    template: PromptSpec,
    retriever: Option<Retriever<'a>>,
}

impl<'a> LlmJudge<'a> {
    /// `template` carries mode, examples, budget and separator; its evidence
    /// is filled per instance.
    pub fn new(chat: &'a dyn ChatBackend, template: PromptSpec) -> Self {
        LlmJudge {
            chat,
            template,
            retriever: None,
        }
    }

    pub fn with_retriever(mut self, retriever: Retriever<'a>) -> Self {
        self.retriever = Some(retriever);
        self
    }

    pub fn judge_text(
        &self,
        text: &str,
        evidence: Option<Vec<Evidence>>,
    ) -> Result<bool, SystemFailure> {
        let mut spec = self.template.clone();
        spec.evidence = evidence;
        let prompt = build_prompt(&spec, text, self.chat.supports_system())?;
        let request = ChatRequest::new(prompt.messages).with_temperature(EVAL_TEMPERATURE);
        let reply = self.chat.chat(&request)?;
        Ok(parse_llm_verdict(&reply, spec.mode.explain())?)
    }
}

impl VerdictSystem<Task1Instance> for LlmJudge<'_> {
    fn judge(&self, instance: &Task1Instance, _seed: u64) -> Result<bool, SystemFailure> {
        let evidence = match (&self.retriever, self.template.mode) {
            (Some(r), PromptMode::Rag) => Some(r.retrieve(&instance.text)?),
            _ => None,
        };
        self.judge_text(&instance.text, evidence)
    }
}

impl VerdictSystem<Task2Instance> for LlmJudge<'_> {
    fn judge(&self, instance: &Task2Instance, _seed: u64) -> Result<bool, SystemFailure> {
        let evidence = Evidence {
            passage_id: instance.record_id.clone(),
            text: instance.evidence.clone(),
        };
        self.judge_text(&instance.claim, Some(vec![evidence]))
    }
}

/// The extraction, retrieval and NLI pipeline as a benchmark system.
pub struct PipelineJudge<'a> {
    pub extractor: &'a dyn ClaimExtractor,
    pub index: &'a PassageIndex,
    pub embedder: &'a dyn EmbeddingBackend,
    pub nli: &'a dyn NliBackend,
    pub k: usize,
}

impl VerdictSystem<Task1Instance> for PipelineJudge<'_> {
    fn judge(&self, instance: &Task1Instance, _seed: u64) -> Result<bool, SystemFailure> {
        Ok(verify_text(
            &instance.text,
            self.extractor,
            self.index,
            self.embedder,
            self.nli,
            self.k,
        )?
        .factual)
    }
}

/// The NLI claim verifier alone, with the supplied evidence as the only
/// passage.
pub struct ClaimVerifierJudge<'a> {
    pub nli: &'a dyn NliBackend,
}

impl VerdictSystem<Task2Instance> for ClaimVerifierJudge<'_> {
    fn judge(&self, instance: &Task2Instance, _seed: u64) -> Result<bool, SystemFailure> {
        let evidence = [Evidence {
            passage_id: instance.record_id.clone(),
            text: instance.evidence.clone(),
        }];
        Ok(verify_claim(&instance.claim, &evidence, self.nli)?.decision)
    }
}
