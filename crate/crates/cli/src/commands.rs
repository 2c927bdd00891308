use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use factline::backends::BackendProfile;
use factline::corpus::{
    self, load_pages, passage_header, read_passages, write_passages, Passage, Windowing,
};
use factline::dataset;
use factline::evalharness::prompt::DEFAULT_EVIDENCE_SEPARATOR;
use factline::evalharness::{
    run_benchmark, ClaimVerifierJudge, FewShotExample, LlmJudge, PipelineJudge, PromptMode,
    PromptSpec, Retriever, Task,
};
use factline::jsonl::{self, SchemaHeader};
use factline::retrieval::{index_build, read_index, write_index, PassageIndex, DEFAULT_TOP_K};
use factline::synthgen::{generate_records, read_records, write_records, ResourceRecord};
use factline::verification::{verify_text, ChatClaimExtractor, ClaimExtractor, ScriptedExtractor};
use serde::Serialize;
use serde_json::json;

use crate::config::Roles;
use crate::{
    DeriveArgs, DeriveWhat, EvalArgs, GenerateArgs, Globals, IndexArgs, IngestArgs, ModeArg,
    SplitSide,
};
use crate::{SystemKind, VerifyArgs};

pub const TRACE_SCHEMA: &str = "factline.trace";
const DEFAULT_RATIO: f64 = 0.8;
const DEFAULT_MAX_RETRIES: u32 = 3;
const DEFAULT_SEEDS: usize = 5;

fn require(path: &Path, what: &str) -> Result<()> {
    ensure!(path.exists(), "{what} `{}` does not exist", path.display());
    Ok(())
}

/// In dry-run mode print the plan and report that the command should stop.
fn dry_run(g: &Globals, plan: serde_json::Value) -> Result<bool> {
    if g.dry_run {
        println!("{}", serde_json::to_string_pretty(&plan)?);
    }
    Ok(g.dry_run)
}

fn positive(value: usize, name: &str) -> Result<usize> {
    ensure!(value >= 1, "{name} must be at least 1");
    Ok(value)
}

pub fn ingest(g: &Globals, a: IngestArgs) -> Result<()> {
    require(&a.pages, "pages")?;
    let window = positive(
        a.window
            .or(g.config.run.window)
            .unwrap_or(corpus::DEFAULT_WINDOW),
        "window",
    )?;
    let stride = positive(
        a.stride
            .or(g.config.run.stride)
            .unwrap_or(corpus::DEFAULT_STRIDE),
        "stride",
    )?;
    let plan = json!({
        "command": "ingest", "pages": a.pages, "out": a.out,
        "window": window, "stride": stride, "sample": a.sample, "seed": g.seed,
    });
    if dry_run(g, plan)? {
        return Ok(());
    }
    let pages = load_pages(&a.pages)?;
    let windowing = Windowing {
        window,
        stride,
        ..Windowing::default()
    };
    let passages = if a.sample {
        windowing.sample_each(&pages, g.seed)?
    } else {
        windowing.ingest(&pages)?
    };
    let mut header = passage_header(&windowing).with_meta("sampled", a.sample);
    if a.sample {
        header = header.with_meta("seed", g.seed);
    }
    write_passages(&a.out, &header, &passages)?;
    log::info!("{} pages -> {} passages", pages.len(), passages.len());
    Ok(())
}

#[derive(Serialize)]
struct FailedPassage {
    passage_id: String,
    error: String,
}

pub fn generate(g: &Globals, a: GenerateArgs) -> Result<()> {
    require(&a.passages, "passages")?;
    let profile = g.config.profile(&a.backend)?;
    let max_retries = a
        .max_retries
        .or(g.config.run.max_retries)
        .unwrap_or(DEFAULT_MAX_RETRIES);
    let in_flight = positive(
        a.max_in_flight
            .or(g.config.run.max_in_flight)
            .unwrap_or(profile.max_in_flight),
        "max_in_flight",
    )?;
    let plan = json!({
        "command": "generate", "passages": a.passages, "backend": profile, "out": a.out,
        "max_retries": max_retries, "max_in_flight": in_flight, "failures": a.failures,
    });
    if dry_run(g, plan)? {
        return Ok(());
    }
    let passages = read_passages(&a.passages)?;
    let chat = profile.build_chat()?;
    let mut records = Vec::new();
    let mut failed = Vec::new();
    for (passage, result) in passages.iter().zip(generate_records(
        &passages,
        chat.as_ref(),
        max_retries,
        in_flight,
    )) {
        match result {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("{}: {e}", passage.passage_id);
                failed.push(FailedPassage {
                    passage_id: passage.passage_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    if records.is_empty() && !passages.is_empty() {
        bail!(
            "no passage produced a usable record ({} failed)",
            failed.len()
        );
    }
    write_records(&a.out, &records)?;
    if let Some(path) = &a.failures {
        jsonl::write_jsonl(path, None, &failed)?;
    }
    log::info!(
        "{} records written, {} passages failed",
        records.len(),
        failed.len()
    );
    Ok(())
}

fn derived_header(schema: &str, a: &DeriveArgs, ratio: f64, seed: u64) -> SchemaHeader {
    let split = match a.split {
        SplitSide::Train => "train",
        SplitSide::Val => "val",
        SplitSide::All => "all",
    };
    let header =
        SchemaHeader::new(schema, dataset::DERIVED_SCHEMA_VERSION).with_meta("split", split);
    if a.split == SplitSide::All {
        header
    } else {
        header.with_meta("ratio", ratio).with_meta("seed", seed)
    }
}

pub fn derive(g: &Globals, a: DeriveArgs) -> Result<()> {
    require(&a.records, "records")?;
    if let Some(p) = &a.passages {
        require(p, "passages")?;
    }
    let ratio = a.ratio.or(g.config.run.ratio).unwrap_or(DEFAULT_RATIO);
    ensure!(
        ratio > 0.0 && ratio < 1.0,
        "ratio must lie strictly between 0 and 1"
    );
    let nli_profile = a.nli.as_deref().map(|n| g.config.profile(n)).transpose()?;
    let plan = json!({
        "command": "derive", "records": a.records, "what": format!("{:?}", a.what).to_lowercase(),
        "out": a.out, "split": format!("{:?}", a.split).to_lowercase(), "ratio": ratio, "seed": g.seed,
        "neutral_passages": a.passages, "nli": nli_profile,
    });
    if dry_run(g, plan)? {
        return Ok(());
    }
    let records = read_records(&a.records)?;
    let selected = match a.split {
        SplitSide::All => records,
        side => {
            let (train, val) = dataset::split_train_val(&records, ratio, g.seed)?;
            if side == SplitSide::Train {
                train
            } else {
                val
            }
        }
    };
    let usable: Vec<ResourceRecord> = selected
        .into_iter()
        .filter(ResourceRecord::is_usable)
        .collect();
    let n = match a.what {
        DeriveWhat::Retriever => {
            let pairs: Vec<_> = usable
                .iter()
                .flat_map(dataset::derive_retriever_pairs)
                .collect();
            dataset::write_derived(
                &a.out,
                &derived_header(dataset::RETRIEVER_SCHEMA, &a, ratio, g.seed),
                &pairs,
            )?
        }
        DeriveWhat::Nli => {
            let (triplets, mined) = match (&a.passages, &nli_profile) {
                (Some(path), Some(profile)) => {
                    let mut pages: BTreeMap<String, Vec<Passage>> = BTreeMap::new();
                    for p in read_passages(path)? {
                        pages.entry(p.page_id.clone()).or_default().push(p);
                    }
                    let nli = profile.build_nli()?;
                    dataset::derive_all_triplets(&usable, Some((&pages, nli.as_ref())))?
                }
                _ => dataset::derive_all_triplets(&usable, None)?,
            };
            if nli_profile.is_some() && mined < usable.len() {
                log::warn!(
                    "{} of {} records had no other passage to mine a neutral from",
                    usable.len() - mined,
                    usable.len()
                );
            }
            let header = derived_header(dataset::NLI_SCHEMA, &a, ratio, g.seed)
                .with_meta("neutrals", if mined > 0 { "mined" } else { "none" })
                .with_meta("records_with_neutrals", mined);
            dataset::write_derived(&a.out, &header, &triplets)?
        }
        DeriveWhat::Task1 => {
            let items = dataset::build_task1(&usable);
            dataset::write_derived(
                &a.out,
                &derived_header(dataset::TASK1_SCHEMA, &a, ratio, g.seed),
                &items,
            )?
        }
        DeriveWhat::Task2 => {
            let items = dataset::build_task2(&usable);
            dataset::write_derived(
                &a.out,
                &derived_header(dataset::TASK2_SCHEMA, &a, ratio, g.seed),
                &items,
            )?
        }
    };
    log::info!("{} usable records -> {n} items", usable.len());
    Ok(())
}

pub fn index(g: &Globals, a: IndexArgs) -> Result<()> {
    require(&a.passages, "passages")?;
    let profile = g.config.profile(&a.backend)?;
    let plan =
        json!({"command": "index", "passages": a.passages, "backend": profile, "out": a.out});
    if dry_run(g, plan)? {
        return Ok(());
    }
    let passages = read_passages(&a.passages)?;
    let embedder = profile.build_embedder()?;
    let index = index_build(&passages, embedder.as_ref())?;
    write_index(&index, &a.out)?;
    log::info!(
        "indexed {} passages (dimension {})",
        index.len(),
        index.dimension()
    );
    Ok(())
}

fn read_text(source: &str) -> Result<String> {
    if source == "-" {
        let mut text = String::new();
        std::io::stdin()
            .read_to_string(&mut text)
            .context("reading text from stdin")?;
        Ok(text)
    } else {
        std::fs::read_to_string(source).with_context(|| format!("reading {source}"))
    }
}

/// Chat profile, claims table, or plain sentence splitting, in that order.
fn extractor(
    chat: Option<&BackendProfile>,
    claims: Option<&Path>,
) -> Result<Box<dyn ClaimExtractor>> {
    Ok(match (chat, claims) {
        (Some(_), Some(_)) => {
            bail!("give either a chat profile or --claims for claim extraction, not both")
        }
        (Some(p), None) => Box::new(ChatClaimExtractor::new(p.build_chat()?)),
        (None, Some(path)) => Box::new(ScriptedExtractor::load(path)?.with_sentence_fallback()),
        (None, None) => Box::new(ScriptedExtractor::new().with_sentence_fallback()),
    })
}

fn load_index(path: Option<&PathBuf>) -> Result<PassageIndex> {
    let path = path.context("an --index file is required here")?;
    read_index(path).with_context(|| format!("loading index {}", path.display()))
}

pub fn verify(g: &Globals, a: VerifyArgs) -> Result<()> {
    let Roles {
        chat,
        embedding,
        nli,
    } = g.config.roles(&a.backends)?;
    let embedding = embedding.context("--backends needs an embedding profile")?;
    let nli = nli.context("--backends needs an NLI profile")?;
    let k = positive(a.k.or(g.config.run.k).unwrap_or(DEFAULT_TOP_K), "k")?;
    require(&a.index, "index")?;
    if a.text != "-" {
        require(Path::new(&a.text), "text")?;
    }
    if let Some(c) = &a.claims {
        require(c, "claims")?;
    }
    let plan = json!({
        "command": "verify", "text": a.text, "index": a.index, "k": k, "trace": a.trace, "verdict": a.verdict,
        "extractor": chat.as_ref().map(|c| c.name.clone()).or(a.claims.as_ref().map(|c| c.display().to_string())).unwrap_or_else(|| "sentences".into()),
        "embedding": embedding, "nli": nli,
    });
    if dry_run(g, plan)? {
        return Ok(());
    }
    let text = read_text(&a.text)?;
    let index = read_index(&a.index)?;
    let extractor = extractor(chat.as_ref(), a.claims.as_deref())?;
    let embedder = embedding.build_embedder()?;
    let nli = nli.build_nli()?;
    let verdict = verify_text(
        &text,
        extractor.as_ref(),
        &index,
        embedder.as_ref(),
        nli.as_ref(),
        k,
    )?;
    let header = SchemaHeader::new(TRACE_SCHEMA, 1)
        .with_meta("factual", verdict.factual)
        .with_meta("k", k);
    jsonl::write_jsonl(&a.trace, Some(&header), &verdict.claim_traces)?;
    if let Some(path) = &a.verdict {
        std::fs::write(path, serde_json::to_string_pretty(&verdict)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    log::info!(
        "{} ({} claims)",
        if verdict.factual {
            "factual"
        } else {
            "not factual"
        },
        verdict.claim_traces.len()
    );
    Ok(())
}

fn prompt_mode(m: ModeArg) -> PromptMode {
    match m {
        ModeArg::Zs => PromptMode::Zs,
        ModeArg::Fs => PromptMode::Fs,
        ModeArg::ZsEx => PromptMode::ZsEx,
        ModeArg::FsEx => PromptMode::FsEx,
        ModeArg::Rag => PromptMode::Rag,
    }
}

pub fn eval(g: &Globals, a: EvalArgs) -> Result<()> {
    let task = if a.task == 1 {
        Task::Task1
    } else {
        Task::Task2
    };
    let mode = prompt_mode(a.mode);
    let n_seeds = positive(
        a.seeds.or(g.config.run.seeds).unwrap_or(DEFAULT_SEEDS),
        "seeds",
    )?;
    let seeds: Vec<u64> = (0..n_seeds as u64)
        .map(|i| g.seed.wrapping_add(i))
        .collect();
    let k = positive(a.k.or(g.config.run.k).unwrap_or(DEFAULT_TOP_K), "k")?;
    let in_flight = positive(
        a.max_in_flight.or(g.config.run.max_in_flight).unwrap_or(4),
        "max_in_flight",
    )?;
    let roles = g.config.roles(&a.backends)?;
    require(&a.instances, "instances")?;
    for path in [&a.examples, &a.index, &a.claims].into_iter().flatten() {
        require(path, "input file")?;
    }
    let needs_index =
        task == Task::Task1 && (a.system == SystemKind::Pipeline || mode == PromptMode::Rag);
    match a.system {
        SystemKind::Llm => {
            ensure!(
                roles.chat.is_some(),
                "the llm system needs a chat profile in --backends"
            );
            ensure!(
                !mode.few_shot() || a.examples.is_some(),
                "{mode} mode needs --examples"
            );
        }
        SystemKind::Pipeline => {
            ensure!(
                roles.nli.is_some(),
                "the pipeline system needs an NLI profile in --backends"
            );
        }
    }
    if needs_index {
        ensure!(
            a.index.is_some(),
            "this configuration retrieves evidence and needs --index"
        );
        ensure!(
            roles.embedding.is_some(),
            "this configuration retrieves evidence and needs an embedding profile"
        );
    }
    let plan = json!({
        "command": "eval", "task": task, "mode": mode, "system": format!("{:?}", a.system).to_lowercase(),
        "instances": a.instances, "seeds": seeds, "k": k, "max_in_flight": in_flight, "report": a.report,
        "examples": a.examples, "index": a.index, "claims": a.claims, "token_budget": a.token_budget,
        "separator": a.separator.as_deref().unwrap_or(DEFAULT_EVIDENCE_SEPARATOR), "backends": roles,
    });
    if dry_run(g, plan)? {
        return Ok(());
    }

    let index = if needs_index {
        Some(load_index(a.index.as_ref())?)
    } else {
        None
    };
    let embedder = match (&roles.embedding, needs_index) {
        (Some(p), true) => Some(p.build_embedder()?),
        _ => None,
    };
    let mut spec = PromptSpec::new(mode);
    if let Some(path) = &a.examples {
        let (_, examples): (_, Vec<FewShotExample>) = jsonl::read_jsonl(path, None)?;
        spec = spec.with_examples(examples);
    }
    if let Some(budget) = a.token_budget {
        spec = spec.with_token_budget(budget);
    }
    if let Some(sep) = &a.separator {
        spec = spec.with_separator(sep.clone());
    }

    let mut report = match (a.system, task) {
        (SystemKind::Llm, _) => {
            let chat = roles.chat.as_ref().expect("checked above").build_chat()?;
            let mut judge = LlmJudge::new(chat.as_ref(), spec);
            if let (Some(index), Some(embedder)) = (&index, &embedder) {
                judge = judge.with_retriever(Retriever {
                    index,
                    embedder: embedder.as_ref(),
                    k,
                });
            }
            match task {
                Task::Task1 => run_benchmark(
                    task,
                    &judge,
                    &dataset::read_task1(&a.instances)?,
                    &seeds,
                    in_flight,
                )?,
                Task::Task2 => run_benchmark(
                    task,
                    &judge,
                    &dataset::read_task2(&a.instances)?,
                    &seeds,
                    in_flight,
                )?,
            }
        }
        (SystemKind::Pipeline, Task::Task1) => {
            let nli = roles.nli.as_ref().expect("checked above").build_nli()?;
            let extractor = extractor(roles.chat.as_ref(), a.claims.as_deref())?;
            let judge = PipelineJudge {
                extractor: extractor.as_ref(),
                index: index.as_ref().expect("checked above"),
                embedder: embedder.as_deref().expect("checked above"),
                nli: nli.as_ref(),
                k,
            };
            run_benchmark(
                task,
                &judge,
                &dataset::read_task1(&a.instances)?,
                &seeds,
                in_flight,
            )?
        }
        (SystemKind::Pipeline, Task::Task2) => {
            let nli = roles.nli.as_ref().expect("checked above").build_nli()?;
            let judge = ClaimVerifierJudge { nli: nli.as_ref() };
            run_benchmark(
                task,
                &judge,
                &dataset::read_task2(&a.instances)?,
                &seeds,
                in_flight,
            )?
        }
    };
    if !a.with_runtime {
        report.runtime_ms = None;
    }
    report
        .write(&a.report)
        .with_context(|| format!("writing {}", a.report.display()))?;
    log::info!(
        "{task}: balanced accuracy {:.4} ± {:.4} over {} seeds ({} failed, {} unparseable)",
        report.balanced_accuracy,
        report.balanced_accuracy_std,
        seeds.len(),
        report.failed,
        report.unparseable
    );
    Ok(())
}
