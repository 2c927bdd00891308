//! Page ingestion, rule-based sentence segmentation and sliding-window
//! passages.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError, SchemaHeader};

/// Window size used to build the resource.
pub const DEFAULT_WINDOW: usize = 5;
/// Window stride used to build the resource.
pub const DEFAULT_STRIDE: usize = 1;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("window size and stride must be at least 1 (got window={window}, stride={stride})")]
    InvalidWindow { window: usize, stride: usize },
    #[error("page `{0}` has no usable sentences")]
    EmptyPage(String),
    #[error("duplicate page id `{0}`")]
    DuplicatePage(String),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    PageFile {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub page_id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub popularity_rank: Option<u32>,
}

/// A window of consecutive sentences from one page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "PassageRecord", into = "PassageRecord")]
pub struct Passage {
    pub passage_id: String,
    pub page_id: String,
    pub start: usize,
    pub sentences: Vec<String>,
    pub text: String,
}

/// On-disk shape of a passage; `text` is rebuilt from the sentences.
#[derive(Serialize, Deserialize)]
struct PassageRecord {
    passage_id: String,
    page_id: String,
    start: usize,
    sentences: Vec<String>,
}

impl From<PassageRecord> for Passage {
    fn from(r: PassageRecord) -> Self {
        Passage {
            text: r.sentences.join(" "),
            passage_id: r.passage_id,
            page_id: r.page_id,
            start: r.start,
            sentences: r.sentences,
        }
    }
}

impl From<Passage> for PassageRecord {
    fn from(p: Passage) -> Self {
        PassageRecord {
            passage_id: p.passage_id,
            page_id: p.page_id,
            start: p.start,
            sentences: p.sentences,
        }
    }
}

impl Passage {
    pub fn new(page_id: &str, start: usize, sentences: Vec<String>) -> Self {
        Passage {
            passage_id: passage_id(page_id, start),
            page_id: page_id.to_owned(),
            start,
            text: sentences.join(" "),
            sentences,
        }
    }

    /// A single-sentence-list passage built from free text.
    pub fn from_text(page_id: &str, text: &str) -> Self {
        Self::new(page_id, 0, SentenceSplitter::default().split(text))
    }
}

pub fn passage_id(page_id: &str, start: usize) -> String {
    format!("{page_id}#{start}")
}

const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "ft", "vs", "e.g", "i.e", "inc",
    "ltd", "corp", "gen", "gov", "sen", "rep", "capt", "col", "lt", "sgt", "u.s", "u.k", "approx",
    "ca", "cf", "al", "fig", "vol",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201D}', '\u{2019}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '\u{201C}', '\u{2018}'];

/// Splits on `.`, `!` and `?` followed by whitespace (or end of text), except
/// after a word in the abbreviation guard list. Blank lines always split.
#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    abbreviations: HashSet<String>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        Self::with_abbreviations(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl SentenceSplitter {
    /// Guard entries are matched case-insensitively, without the final period.
    pub fn with_abbreviations<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        SentenceSplitter {
            abbreviations: words
                .into_iter()
                .map(|w| w.trim_end_matches('.').to_lowercase())
                .collect(),
        }
    }

    pub fn split(&self, text: &str) -> Vec<String> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut sentences = Vec::new();
        let mut begin = 0usize;
        let mut i = 0usize;
        while i < chars.len() {
            let (pos, c) = chars[i];
            if c == '\n' && chars.get(i + 1).is_some_and(|&(_, n)| n == '\n') {
                push_trimmed(&mut sentences, &text[begin..pos]);
                begin = pos;
                i += 1;
                continue;
            }
            if !matches!(c, '.' | '!' | '?') {
                i += 1;
                continue;
            }
            let mut j = i;
            while j + 1 < chars.len()
                && (matches!(chars[j + 1].1, '.' | '!' | '?') || CLOSERS.contains(&chars[j + 1].1))
            {
                j += 1;
            }
            let end = chars.get(j + 1).map_or(text.len(), |&(p, _)| p);
            let at_boundary = chars.get(j + 1).is_none_or(|&(_, n)| n.is_whitespace());
            if at_boundary && !(c == '.' && self.is_abbreviation(&text[begin..pos])) {
                push_trimmed(&mut sentences, &text[begin..end]);
                begin = end;
            }
            i = j + 1;
        }
        push_trimmed(&mut sentences, &text[begin..]);
        sentences
    }

    fn is_abbreviation(&self, before_period: &str) -> bool {
        let word = before_period
            .rsplit(char::is_whitespace)
            .next()
            .unwrap_or("")
            .trim_start_matches(OPENERS);
        !word.is_empty() && self.abbreviations.contains(&word.to_lowercase())
    }
}

fn push_trimmed(out: &mut Vec<String>, piece: &str) {
    let piece = piece.trim();
    if !piece.is_empty() {
        out.push(piece.to_owned());
    }
}

/// Split with the default abbreviation guard list.
pub fn split_sentences(text: &str) -> Vec<String> {
    SentenceSplitter::default().split(text)
}

/// Windows of `window` sentences starting every `stride` sentences. Pages
/// shorter than the window yield one passage holding every sentence.
pub fn window_passages(
    page_id: &str,
    sentences: &[String],
    window: usize,
    stride: usize,
) -> Result<Vec<Passage>, CorpusError> {
    if window == 0 || stride == 0 {
        return Err(CorpusError::InvalidWindow { window, stride });
    }
    if sentences.is_empty() {
        return Ok(Vec::new());
    }
    if sentences.len() < window {
        return Ok(vec![Passage::new(page_id, 0, sentences.to_vec())]);
    }
    Ok((0..=sentences.len() - window)
        .step_by(stride)
        .map(|start| Passage::new(page_id, start, sentences[start..start + window].to_vec()))
        .collect())
}

/// Segmentation and windowing settings for one ingestion run.
#[derive(Debug, Clone)]
pub struct Windowing {
    pub window: usize,
    pub stride: usize,
    pub splitter: SentenceSplitter,
}

impl Default for Windowing {
    fn default() -> Self {
        Windowing {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            splitter: SentenceSplitter::default(),
        }
    }
}

impl Windowing {
    pub fn page_passages(&self, page: &Page) -> Result<Vec<Passage>, CorpusError> {
        let sentences = self.splitter.split(&page.text);
        window_passages(&page.page_id, &sentences, self.window, self.stride)
    }

    /// Uniformly pick one of the page's windows; the draw depends only on
    /// `seed` and the page id.
    pub fn sample_passage(&self, page: &Page, seed: u64) -> Result<Passage, CorpusError> {
        let mut windows = self.page_passages(page)?;
        if windows.is_empty() {
            return Err(CorpusError::EmptyPage(page.page_id.clone()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ crate::text::fnv1a(page.page_id.as_bytes()));
        let pick = rng.random_range(0..windows.len());
        Ok(windows.swap_remove(pick))
    }

    /// All windows of all pages, pages processed in parallel, output in page
    /// order.
    pub fn ingest(&self, pages: &[Page]) -> Result<Vec<Passage>, CorpusError> {
        use rayon::prelude::*;
        check_pages(pages)?;
        let per_page: Vec<Vec<Passage>> = pages
            .par_iter()
            .map(|p| self.page_passages(p))
            .collect::<Result<_, _>>()?;
        Ok(per_page.into_iter().flatten().collect())
    }

    /// One sampled window per page; unusable pages are skipped with a warning.
    pub fn sample_each(&self, pages: &[Page], seed: u64) -> Result<Vec<Passage>, CorpusError> {
        check_pages(pages)?;
        let mut out = Vec::with_capacity(pages.len());
        for page in pages {
            match self.sample_passage(page, seed) {
                Ok(p) => out.push(p),
                Err(CorpusError::EmptyPage(id)) => log::warn!("skipping page `{id}`: no sentences"),
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }
}

pub fn sample_passage(page: &Page, seed: u64) -> Result<Passage, CorpusError> {
    Windowing::default().sample_passage(page, seed)
}

fn check_pages(pages: &[Page]) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for page in pages {
        if !seen.insert(page.page_id.as_str()) {
            return Err(CorpusError::DuplicatePage(page.page_id.clone()));
        }
    }
    Ok(())
}

/// Load pages from a line-delimited record file, or from a directory holding
/// one `.json` record or one `.txt` body per page (file stem = page id).
/// Directory entries are read in file-name order.
pub fn load_pages(path: &Path) -> Result<Vec<Page>, CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    if !path.is_dir() {
        return Ok(jsonl::read_jsonl(path, None)?.1);
    }
    let mut files: Vec<_> = std::fs::read_dir(path)
        .map_err(io)?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut pages = Vec::new();
    for file in files {
        let body = std::fs::read_to_string(&file).map_err(|source| CorpusError::Io {
            path: file.display().to_string(),
            source,
        })?;
        let stem = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        match file.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                pages.push(
                    serde_json::from_str(&body).map_err(|source| CorpusError::PageFile {
                        path: file.display().to_string(),
                        source,
                    })?,
                )
            }
            Some("txt") => pages.push(Page {
                page_id: stem.clone(),
                title: stem,
                text: body,
                popularity_rank: None,
            }),
            _ => log::debug!("ignoring {}", file.display()),
        }
    }
    Ok(pages)
}

pub const PASSAGE_SCHEMA: &str = "factline.passages";
pub const PASSAGE_SCHEMA_VERSION: u32 = 1;

pub fn passage_header(windowing: &Windowing) -> SchemaHeader {
    SchemaHeader::new(PASSAGE_SCHEMA, PASSAGE_SCHEMA_VERSION)
        .with_meta("window", windowing.window)
        .with_meta("stride", windowing.stride)
}

pub fn write_passages(
    path: &Path,
    header: &SchemaHeader,
    passages: &[Passage],
) -> Result<usize, JsonlError> {
    jsonl::write_jsonl(path, Some(header), passages)
}

pub fn read_passages(path: &Path) -> Result<Vec<Passage>, JsonlError> {
    Ok(jsonl::read_jsonl(path, Some((PASSAGE_SCHEMA, PASSAGE_SCHEMA_VERSION)))?.1)
}
