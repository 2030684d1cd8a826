//! Benchmark decontamination by token n-grams.
//!
//! Grams are stored as seeded 64-bit hashes of their token-id tuples. The
//! checked build keeps every tuple alongside its hash and fails on a
//! collision, which tests use to confirm hashing never merges distinct grams.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::tokenizer::BpeModel;

pub const DEFAULT_N: usize = 20;
pub const DEFAULT_MAX_OCCURRENCES: u64 = 4;
pub const DEFAULT_THRESHOLD: f64 = 0.10;

const MAGIC: &[u8; 4] = b"DCTM";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContaminationSet {
    pub n: usize,
    pub hash_seed: u64,
    grams: HashSet<u64>,
    /// Occurrences across all benchmark windows, before the cap.
    pub source_counts: HashMap<u64, u64>,
}

pub fn gram_hash(tokens: &[u32], seed: u64) -> u64 {
    let bytes: Vec<u8> = tokens.iter().flat_map(|t| t.to_le_bytes()).collect();
    xxh3_64_with_seed(&bytes, seed)
}

impl ContaminationSet {
    pub fn empty(n: usize, hash_seed: u64) -> Self {
        ContaminationSet {
            n,
            hash_seed,
            grams: HashSet::new(),
            source_counts: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn contains(&self, gram: &[u32]) -> bool {
        gram.len() == self.n && self.grams.contains(&gram_hash(gram, self.hash_seed))
    }

    /// Adds a gram directly, bypassing the occurrence cap.
    pub fn insert(&mut self, gram: &[u32]) -> Result<()> {
        if gram.len() != self.n {
            return Err(Error::Shape(format!("gram of length {} in a set with n = {}", gram.len(), self.n)));
        }
        self.grams.insert(gram_hash(gram, self.hash_seed));
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut hashes: Vec<u64> = self.grams.iter().copied().collect();
        hashes.sort_unstable();
        let mut out = Vec::with_capacity(HEADER_LEN + hashes.len() * 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&self.hash_seed.to_le_bytes());
        out.extend_from_slice(&(hashes.len() as u64).to_le_bytes());
        for h in hashes {
            out.extend_from_slice(&h.to_le_bytes());
            out.extend_from_slice(&self.source_counts.get(&h).copied().unwrap_or(0).to_le_bytes());
        }
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes). Counts are only kept for
    /// grams that survived the cap.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::decode(bytes.len(), "truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::decode(0, "bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::decode(4, format!("unsupported version {version}")));
        }
        let n = u32_at(8) as usize;
        if n == 0 {
            return Err(Error::decode(8, "gram length 0"));
        }
        let hash_seed = u64_at(12);
        let count = u64_at(20);
        let body = bytes.len() - HEADER_LEN;
        if count.checked_mul(16) != Some(body as u64) {
            return Err(Error::decode(HEADER_LEN, format!("{count} entries but {body} body bytes")));
        }
        let mut set = ContaminationSet::empty(n, hash_seed);
        let mut prev = None;
        for i in 0..count as usize {
            let o = HEADER_LEN + i * 16;
            let h = u64_at(o);
            if prev.is_some_and(|p| p >= h) {
                return Err(Error::decode(o, "hashes not strictly increasing"));
            }
            prev = Some(h);
            set.grams.insert(h);
            set.source_counts.insert(h, u64_at(o + 8));
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub n: usize,
    pub max_occurrences: u64,
    pub hash_seed: u64,
    pub check_collisions: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            n: DEFAULT_N,
            max_occurrences: DEFAULT_MAX_OCCURRENCES,
            hash_seed: 0,
            check_collisions: false,
        }
    }
}

pub fn build_contamination_set(benchmarks: &[Document], model: &BpeModel, n: usize) -> Result<ContaminationSet> {
    build_with(benchmarks, model, &BuildOptions { n, ..BuildOptions::default() })
}

/// Counts every window of every benchmark, then drops grams seen more than
/// `max_occurrences` times.
pub fn build_with(benchmarks: &[Document], model: &BpeModel, opts: &BuildOptions) -> Result<ContaminationSet> {
    if opts.n == 0 {
        return Err(Error::invalid("n", "gram length must be at least 1"));
    }
    let encoded: Vec<Vec<u32>> = benchmarks.par_iter().map(|d| model.encode(&d.text).token_ids).collect();
    let mut set = ContaminationSet::empty(opts.n, opts.hash_seed);
    let mut seen: HashMap<u64, Vec<u32>> = HashMap::new();
    for toks in &encoded {
        for w in toks.windows(opts.n) {
            let h = gram_hash(w, opts.hash_seed);
            if opts.check_collisions {
                if let Some(prev) = seen.get(&h) {
                    if prev.as_slice() != w {
                        return Err(Error::HashCollision { hash: h });
                    }
                } else {
                    seen.insert(h, w.to_vec());
                }
            }
            *set.source_counts.entry(h).or_default() += 1;
        }
    }
    set.grams = set
        .source_counts
        .iter()
        .filter(|(_, &c)| c <= opts.max_occurrences)
        .map(|(&h, _)| h)
        .collect();
    Ok(set)
}

fn ratio_of(tokens: &[u32], set: &ContaminationSet) -> f64 {
    if tokens.len() < set.n {
        return 0.0;
    }
    let total = tokens.len() - set.n + 1;
    let hits = tokens
        .windows(set.n)
        .filter(|w| set.grams.contains(&gram_hash(w, set.hash_seed)))
        .count();
    hits as f64 / total as f64
}

/// Fraction of the document's token n-grams found in the set.
pub fn contamination_ratio(doc: &Document, set: &ContaminationSet, model: &BpeModel) -> f64 {
    ratio_of(&model.encode(&doc.text).token_ids, set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub id: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecontamOutput {
    pub kept: Vec<Document>,
    pub removed: Vec<Removal>,
}

/// Removes documents whose ratio is strictly above `threshold`.
pub fn decontaminate(
    docs: &[Document],
    set: &ContaminationSet,
    model: &BpeModel,
    threshold: f64,
) -> Result<DecontamOutput> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid("threshold", format!("{threshold} outside [0, 1]")));
    }
    let ratios: Vec<f64> = docs.par_iter().map(|d| contamination_ratio(d, set, model)).collect();
    let mut out = DecontamOutput {
        kept: Vec::new(),
        removed: Vec::new(),
    };
    for (d, r) in docs.iter().zip(ratios) {
        if r > threshold {
            out.removed.push(Removal { id: d.id.clone(), ratio: r });
        } else {
            out.kept.push(d.clone());
        }
    }
    Ok(out)
}

pub fn write_removal_log(removed: &[Removal], mut w: impl Write) -> std::io::Result<()> {
    for r in removed {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Exact-tuple reference used by tests: counts every window of every
/// benchmark without hashing.
pub fn naive_gram_counts(benchmarks: &[Vec<u32>], n: usize) -> BTreeMap<Vec<u32>, u64> {
    let mut counts = BTreeMap::new();
    for b in benchmarks {
        for w in b.windows(n.max(1)) {
            *counts.entry(w.to_vec()).or_default() += 1;
        }
    }
    counts
}
