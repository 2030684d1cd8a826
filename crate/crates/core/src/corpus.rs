//! Document model and line-delimited JSON corpus files.
//!
//! One document per line. Required keys are `id`, `text` and `domain`;
//! `source`, `token_count`, `quality_score`, `is_instruction` and
//! `length_chars` are optional on input. Any other keys are carried through
//! untouched so that downstream tools can attach their own metadata.
//!
//! Files whose name ends in `.gz` are read and written gzip-compressed.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Web,
    Chinese,
    Code,
    Math,
    GeneralKnowledge,
    Book,
    Encyclopedia,
    Instruction,
    Synthetic,
}

impl Domain {
    pub const ALL: [Domain; 9] = [
        Domain::Web,
        Domain::Chinese,
        Domain::Code,
        Domain::Math,
        Domain::GeneralKnowledge,
        Domain::Book,
        Domain::Encyclopedia,
        Domain::Instruction,
        Domain::Synthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Web => "web",
            Domain::Chinese => "chinese",
            Domain::Code => "code",
            Domain::Math => "math",
            Domain::GeneralKnowledge => "general_knowledge",
            Domain::Book => "book",
            Domain::Encyclopedia => "encyclopedia",
            Domain::Instruction => "instruction",
            Domain::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::invalid("domain", s.to_string()))
    }
}

/// One corpus record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub domain: Domain,
    pub source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quality_score: Option<u8>,
    pub is_instruction: bool,
    pub length_chars: u64,
    /// Keys not recognised by this crate, preserved verbatim.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, domain: Domain) -> Self {
        let text = text.into();
        Document {
            id: id.into(),
            length_chars: text.chars().count() as u64,
            text,
            domain,
            source: String::new(),
            token_count: None,
            quality_score: None,
            is_instruction: false,
            extra: Map::new(),
        }
    }

    pub fn with_tokens(mut self, n: u64) -> Self {
        self.token_count = Some(n);
        self
    }

    pub fn with_score(mut self, score: u8) -> Self {
        self.quality_score = Some(score);
        self
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn instruction(mut self, flag: bool) -> Self {
        self.is_instruction = flag;
        self
    }

    /// Replaces the text and keeps `length_chars` in sync.
    pub fn set_text(&mut self, text: String) {
        self.length_chars = text.chars().count() as u64;
        self.text = text;
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if let Some(s) = self.quality_score {
            if !(1..=5).contains(&s) {
                return Err(format!("quality_score {s} outside 1..=5"));
            }
        }
        let chars = self.text.chars().count() as u64;
        if self.length_chars != chars {
            return Err(format!(
                "length_chars {} does not match text length {chars}",
                self.length_chars
            ));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawDocument {
    id: String,
    text: String,
    domain: Domain,
    #[serde(default)]
    source: String,
    #[serde(default)]
    token_count: Option<u64>,
    #[serde(default)]
    quality_score: Option<u8>,
    #[serde(default)]
    is_instruction: bool,
    #[serde(default)]
    length_chars: Option<u64>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

/// Parses a single record. `line` is 1-based and only used for error context.
pub fn parse_line(text: &str, line: usize) -> Result<Document> {
    let raw: RawDocument = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    let length_chars = raw
        .length_chars
        .unwrap_or_else(|| raw.text.chars().count() as u64);
    let doc = Document {
        id: raw.id,
        text: raw.text,
        domain: raw.domain,
        source: raw.source,
        token_count: raw.token_count,
        quality_score: raw.quality_score,
        is_instruction: raw.is_instruction,
        length_chars,
        extra: raw.extra,
    };
    doc.validate()
        .map_err(|message| Error::Parse { line, message })?;
    Ok(doc)
}

/// Parses records from any reader; blank lines are skipped.
pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_line(&line, line_no)?;
        if !seen.insert(doc.id.clone()) {
            return Err(Error::DuplicateId {
                id: doc.id,
                line: line_no,
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

pub(crate) fn open_reader(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let inner: Box<dyn Read> = if is_gzip(path) {
        Box::new(MultiGzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(inner)))
}

/// Reads a corpus file in order, rejecting duplicate ids.
pub fn ingest(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    read_records(open_reader(path.as_ref())?)
}

/// Reads several shards concurrently; results are concatenated in shard order
/// and ids must be unique across all shards.
pub fn ingest_shards<P: AsRef<Path> + Sync>(paths: &[P]) -> Result<Vec<Document>> {
    let shards: Vec<Vec<Document>> = paths
        .par_iter()
        .map(|p| ingest(p))
        .collect::<Result<_>>()?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(shards.iter().map(Vec::len).sum());
    for doc in shards.into_iter().flatten() {
        if !seen.insert(doc.id.clone()) {
            return Err(Error::DuplicateId {
                id: doc.id,
                line: 0,
            });
        }
        out.push(doc);
    }
    Ok(out)
}

/// Serialises documents into the line format. Keys are emitted in a fixed
/// order so identical inputs always produce identical bytes.
pub fn write_records<W: Write>(docs: &[Document], mut w: W) -> std::io::Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut w, doc)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn to_bytes(docs: &[Document]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_records(docs, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn emit(docs: &[Document], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let res = if is_gzip(path) {
        // fixed header (no mtime) keeps compressed output reproducible
        let enc = flate2::GzBuilder::new().mtime(0).write(file, Compression::default());
        write_gz(docs, enc)
    } else {
        write_records(docs, BufWriter::new(file))
    };
    res.map_err(|e| Error::io(path, e))
}

fn write_gz(docs: &[Document], enc: GzEncoder<File>) -> std::io::Result<()> {
    let mut w = BufWriter::new(enc);
    write_records(docs, &mut w)?;
    w.into_inner().map_err(|e| e.into_error())?.finish()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub doc_count: u64,
    pub total_tokens: u64,
    pub per_domain_tokens: BTreeMap<Domain, u64>,
    pub per_domain_fraction: BTreeMap<Domain, f64>,
}

/// Token-weighted corpus composition. Every document must carry a token count.
pub fn stats(docs: &[Document]) -> Result<CorpusStats> {
    let mut per_domain_tokens: BTreeMap<Domain, u64> = BTreeMap::new();
    let mut total = 0u64;
    for doc in docs {
        let n = doc.token_count.ok_or_else(|| Error::MissingField {
            id: doc.id.clone(),
            field: "token_count",
        })?;
        *per_domain_tokens.entry(doc.domain).or_default() += n;
        total += n;
    }
    let per_domain_fraction = if total == 0 {
        BTreeMap::new()
    } else {
        per_domain_tokens
            .iter()
            .map(|(&d, &n)| (d, n as f64 / total as f64))
            .collect()
    };
    Ok(CorpusStats {
        doc_count: docs.len() as u64,
        total_tokens: total,
        per_domain_tokens,
        per_domain_fraction,
    })
}
