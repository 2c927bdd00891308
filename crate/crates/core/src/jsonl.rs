//! Line-delimited JSON files, optionally led by a schema header record.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: expected schema header `{expected}` version {version}, found {found}")]
    Schema {
        path: PathBuf,
        expected: String,
        version: u32,
        found: String,
    },
}

/// First line of a versioned file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaHeader {
    pub schema: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl SchemaHeader {
    pub fn new(schema: &str, version: u32) -> Self {
        Self {
            schema: schema.to_owned(),
            version,
            meta: serde_json::Map::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.meta.insert(key.to_owned(), value.into());
        self
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> JsonlError + '_ {
    move |source| JsonlError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Serialize `items` one per line, preceded by `header` when given.
pub fn write_jsonl<'a, T, I>(
    path: &Path,
    header: Option<&SchemaHeader>,
    items: I,
) -> Result<usize, JsonlError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let mut count = 0;
    let mut put = |value: String| -> std::io::Result<()> {
        out.write_all(value.as_bytes())?;
        out.write_all(b"\n")
    };
    if let Some(header) = header {
        put(serde_json::to_string(header).expect("header serializes")).map_err(io_err(path))?;
    }
    for item in items {
        let line = serde_json::to_string(item).map_err(|source| JsonlError::Parse {
            path: path.to_owned(),
            line: count + 1,
            source,
        })?;
        put(line).map_err(io_err(path))?;
        count += 1;
    }
    out.flush().map_err(io_err(path))?;
    Ok(count)
}

/// Read every non-blank line as `T`. When `schema` is given the first line
/// must be a matching [`SchemaHeader`], which is returned alongside.
pub fn read_jsonl<T: DeserializeOwned>(
    path: &Path,
    schema: Option<(&str, u32)>,
) -> Result<(Option<SchemaHeader>, Vec<T>), JsonlError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_jsonl_from(BufReader::new(file), path, schema)
}

pub fn read_jsonl_from<T: DeserializeOwned, R: BufRead>(
    reader: R,
    path: &Path,
    schema: Option<(&str, u32)>,
) -> Result<(Option<SchemaHeader>, Vec<T>), JsonlError> {
    let mut header = None;
    let mut items = Vec::new();
    let mut expect_header = schema;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        if let Some((expected, version)) = expect_header.take() {
            let found: Result<SchemaHeader, _> = serde_json::from_str(&line);
            match found {
                Ok(h) if h.schema == expected && h.version == version => {
                    header = Some(h);
                    continue;
                }
                Ok(h) => {
                    return Err(JsonlError::Schema {
                        path: path.to_owned(),
                        expected: expected.to_owned(),
                        version,
                        found: format!("`{}` version {}", h.schema, h.version),
                    })
                }
                Err(_) => {
                    return Err(JsonlError::Schema {
                        path: path.to_owned(),
                        expected: expected.to_owned(),
                        version,
                        found: "no header".to_owned(),
                    })
                }
            }
        }
        let item = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            path: path.to_owned(),
            line: idx + 1,
            source,
        })?;
        items.push(item);
    }
    if let Some((expected, version)) = expect_header {
        return Err(JsonlError::Schema {
            path: path.to_owned(),
            expected: expected.to_owned(),
            version,
            found: "empty file".to_owned(),
        });
    }
    Ok((header, items))
}
