//! Synthetic town corpus shared by the CLI and acceptance tests.
//!
//! Every town has six sentences, so a five-sentence window yields two
//! passages per page. One sentence names a trade partner; the falsified claim
//! swaps it for a place that appears nowhere in the corpus, and the rule NLI
//! is told that the two places contradict each other.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use factline::corpus::{Page, Passage};
use factline::synthgen::{FalsifiedPair, ResourceRecord, StepOutputs};
use factline::verification::ClaimsFixture;

const STEMS: [&str; 20] = [
    "Avel", "Brin", "Corra", "Dunmer", "Eskel", "Falor", "Gorran", "Halve", "Ithel", "Jorund",
    "Kelmar", "Lunde", "Morrow", "Norvik", "Ormand", "Pellan", "Quenby", "Rosval", "Selden",
    "Torvik",
];

pub struct Town {
    pub page_id: String,
    pub name: String,
    pub partner: String,
    pub false_partner: String,
    pub sentences: Vec<String>,
}

impl Town {
    pub fn new(k: usize) -> Self {
        let stem = STEMS[k % STEMS.len()];
        let name = format!("{stem}wick");
        let partner = format!("{stem}haven");
        let false_partner = format!("{stem}ford");
        let sentences = vec![
            format!("{name} is a river town in the {stem}dale valley."),
            format!("{name} was founded by fishermen from the northern coast."),
            format!("The old mayor of {name} lives beside the {stem}gate market."),
            format!("{name} exports salt to {partner}."),
            format!("The spring festival of {name} draws large crowds."),
            format!("Travellers to {name} usually rest at the {stem}lodge inn."),
        ];
        Town {
            page_id: format!("{name}_town"),
            name,
            partner,
            false_partner,
            sentences,
        }
    }

    pub fn page(&self) -> Page {
        Page {
            page_id: self.page_id.clone(),
            title: self.name.clone(),
            text: self.sentences.join(" "),
            popularity_rank: None,
        }
    }

    pub fn trade_claim(&self) -> &str {
        &self.sentences[3]
    }

    pub fn falsified_claim(&self) -> String {
        self.trade_claim()
            .replace(&self.partner, &self.false_partner)
    }
}

pub fn towns(n: usize) -> Vec<Town> {
    (0..n).map(Town::new).collect()
}

pub fn contradictions(towns: &[Town]) -> Vec<(String, String)> {
    towns
        .iter()
        .map(|t| (t.partner.clone(), t.false_partner.clone()))
        .collect()
}

fn town_for<'a>(towns: &'a [Town], page_id: &str) -> &'a Town {
    towns
        .iter()
        .find(|t| t.page_id == page_id)
        .expect("passage from a fixture town")
}

/// What a well-behaved generator would answer for `passage`.
pub fn outputs_for(towns: &[Town], passage: &Passage) -> StepOutputs {
    let town = town_for(towns, &passage.page_id);
    let factual_text = format!(
        "A short account of {}. {}",
        town.name,
        passage.sentences.join(" ")
    );
    StepOutputs {
        claims: passage.sentences.clone(),
        falsified: FalsifiedPair {
            altered: town.falsified_claim(),
            original: town.trade_claim().to_owned(),
        },
        unfactual_text: factual_text.replace(&town.partner, &town.false_partner),
        factual_text,
    }
}

/// The first-window record of every town, built without a chat backend.
pub fn records(towns: &[Town]) -> Vec<ResourceRecord> {
    towns
        .iter()
        .map(|t| {
            let passage = Passage::new(&t.page_id, 0, t.sentences[..5].to_vec());
            let outputs = outputs_for(towns, &passage);
            ResourceRecord::new(passage.passage_id.clone(), passage, outputs)
        })
        .collect()
}

/// Claims for each record's F (its own claims) and U (the falsified claim in
/// place of the original).
pub fn claims_table(records: &[ResourceRecord]) -> Vec<ClaimsFixture> {
    records
        .iter()
        .flat_map(|r| {
            let swapped = r
                .claims()
                .iter()
                .map(|c| {
                    if c == r.original_claim() {
                        r.falsified_claim().to_owned()
                    } else {
                        c.clone()
                    }
                })
                .collect();
            [
                ClaimsFixture {
                    text: r.outputs.factual_text.clone(),
                    claims: r.claims().to_vec(),
                },
                ClaimsFixture {
                    text: r.outputs.unfactual_text.clone(),
                    claims: swapped,
                },
            ]
        })
        .collect()
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_factline")
}

pub fn factline(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn factline")
}

/// Run `factline` and fail loudly with its stderr on a non-zero exit.
pub fn factline_ok(dir: &Path, args: &[&str]) -> Output {
    let out = factline(dir, args);
    assert!(
        out.status.success(),
        "factline {args:?} exited with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn write_config(dir: &Path, towns: &[Town]) {
    let pairs: Vec<String> = contradictions(towns)
        .iter()
        .map(|(a, b)| format!("[\"{a}\", \"{b}\"]"))
        .collect();
    let config = format!(
        r#"seed = 42

[run]
k = 30
seeds = 3

[profiles.gen]
kind = "chat"
provider = "mock"
script = "gen_script.jsonl"
max_in_flight = 3

[profiles.judge]
kind = "chat"
provider = "mock"
response = "Factual"

[profiles.embed]
kind = "embedding"
provider = "mock"
dimension = 256

[profiles.nli]
kind = "nli"
provider = "mock"
contradictions = [{}]
"#,
        pairs.join(", ")
    );
    std::fs::write(dir.join("factline.toml"), config).unwrap();
}

/// Every stage of the pipeline through the binary, offline. Returns the
/// produced artifacts in a fixed order.
pub fn full_pipeline(dir: &Path) -> Vec<PathBuf> {
    use factline::backends::mock::{write_script, ScriptEntry};
    use factline::backends::ChatRequest;
    use factline::synthgen::build_unified_prompt;

    let towns = towns(20);
    write_config(dir, &towns);
    let pages: Vec<Page> = towns.iter().map(Town::page).collect();
    factline::jsonl::write_jsonl(&dir.join("pages.jsonl"), None, &pages).unwrap();

    let cfg = ["--config", "factline.toml"];
    let run = |args: &[&str]| {
        let mut full: Vec<&str> = cfg.to_vec();
        full.extend_from_slice(args);
        factline_ok(dir, &full);
    };
    run(&[
        "ingest",
        "--pages",
        "pages.jsonl",
        "--out",
        "passages.jsonl",
    ]);
    run(&[
        "ingest",
        "--pages",
        "pages.jsonl",
        "--out",
        "sampled.jsonl",
        "--sample",
    ]);

    let sampled = factline::corpus::read_passages(&dir.join("sampled.jsonl")).unwrap();
    let entries: Vec<ScriptEntry> = sampled
        .iter()
        .map(|p| {
            let request = ChatRequest::user(build_unified_prompt(p)).with_temperature(0.0);
            ScriptEntry::for_request(&request, outputs_for(&towns, p).to_reply())
        })
        .collect();
    write_script(&dir.join("gen_script.jsonl"), &entries).unwrap();

    run(&[
        "generate",
        "--passages",
        "sampled.jsonl",
        "--backend",
        "gen",
        "--out",
        "records.jsonl",
    ]);
    run(&[
        "derive",
        "--records",
        "records.jsonl",
        "--what",
        "retriever",
        "--split",
        "train",
        "--out",
        "pairs.jsonl",
    ]);
    run(&[
        "derive",
        "--records",
        "records.jsonl",
        "--what",
        "nli",
        "--split",
        "train",
        "--passages",
        "passages.jsonl",
        "--nli",
        "nli",
        "--out",
        "triplets.jsonl",
    ]);
    run(&[
        "derive",
        "--records",
        "records.jsonl",
        "--what",
        "task1",
        "--out",
        "task1.jsonl",
    ]);
    run(&[
        "derive",
        "--records",
        "records.jsonl",
        "--what",
        "task2",
        "--out",
        "task2.jsonl",
    ]);
    run(&[
        "index",
        "--passages",
        "passages.jsonl",
        "--backend",
        "embed",
        "--out",
        "index.bin",
    ]);

    let records = factline::synthgen::read_records(&dir.join("records.jsonl")).unwrap();
    factline::jsonl::write_jsonl(&dir.join("claims.jsonl"), None, &claims_table(&records)).unwrap();
    std::fs::write(dir.join("text.txt"), &records[0].outputs.unfactual_text).unwrap();

    run(&[
        "verify",
        "--text",
        "text.txt",
        "--index",
        "index.bin",
        "--backends",
        "embed,nli",
        "--claims",
        "claims.jsonl",
        "--trace",
        "trace.jsonl",
        "--verdict",
        "verdict.json",
    ]);
    run(&[
        "eval",
        "--task",
        "1",
        "--system",
        "pipeline",
        "--instances",
        "task1.jsonl",
        "--backends",
        "embed,nli",
        "--index",
        "index.bin",
        "--claims",
        "claims.jsonl",
        "--report",
        "report_pipeline.json",
    ]);
    run(&[
        "eval",
        "--task",
        "1",
        "--mode",
        "rag",
        "--instances",
        "task1.jsonl",
        "--backends",
        "judge,embed",
        "--index",
        "index.bin",
        "--report",
        "report_rag.json",
    ]);
    run(&[
        "eval",
        "--task",
        "2",
        "--system",
        "pipeline",
        "--instances",
        "task2.jsonl",
        "--backends",
        "nli",
        "--report",
        "report_verifier.json",
    ]);

    [
        "passages.jsonl",
        "sampled.jsonl",
        "gen_script.jsonl",
        "records.jsonl",
        "pairs.jsonl",
        "triplets.jsonl",
        "task1.jsonl",
        "task2.jsonl",
        "index.bin",
        "claims.jsonl",
        "trace.jsonl",
        "verdict.json",
        "report_pipeline.json",
        "report_rag.json",
        "report_verifier.json",
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect()
}
