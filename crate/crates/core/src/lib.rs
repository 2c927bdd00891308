//! Synthetic factuality data generation, dense evidence retrieval, NLI claim
//! verification and a benchmark harness for factuality classifiers.
//!
//! Every stage talks to models through the traits in [`backends`], which ship
//! with HTTP clients and deterministic mocks.

pub mod backends;
pub mod corpus;
pub mod dataset;
pub mod evalharness;
pub mod jsonl;
pub mod retrieval;
pub mod synthgen;
pub mod text;
pub mod verification;

pub use backends::{
    BackendError, BackendErrorKind, BackendProfile, ChatBackend, ChatRequest, EmbeddingBackend,
    Fingerprint, Message, NliBackend,
};
pub use corpus::{Page, Passage, Windowing};
pub use dataset::{NliTriplet, RetrieverPair, Task1Instance, Task2Instance};
pub use evalharness::{EvalReport, PromptMode, PromptSpec, Task};
pub use retrieval::{EmbeddingVector, PassageIndex, RankedHit, RankedResult};
pub use synthgen::{ResourceRecord, StepOutputs};
pub use verification::{ClaimTrace, Evidence, NliDistribution, NliLabel, Verdict};
