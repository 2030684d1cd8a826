//! Byte-level BPE with merge dropout and digit splitting.
//!
//! Tokens are stored in the usual byte-to-unicode escaped form, so the
//! vocabulary/merges files look like the familiar two-file GPT-2 layout:
//! `vocab.txt` holds `token<TAB>id` per line and `merges.txt` holds
//! `left right` per line in rank order (an optional `#version` header line is
//! ignored).

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BASE_SIZE: usize = 256;

fn byte_tables() -> &'static ([char; 256], HashMap<char, u8>) {
    static TABLES: OnceLock<([char; 256], HashMap<char, u8>)> = OnceLock::new();
    TABLES.get_or_init(|| {
        let printable = |b: u32| {
            (u32::from(b'!')..=u32::from(b'~')).contains(&b)
                || (0xA1..=0xAC).contains(&b)
                || (0xAE..=0xFF).contains(&b)
        };
        let mut enc = ['\0'; 256];
        let mut n = 0u32;
        for b in 0..256u32 {
            enc[b as usize] = if printable(b) {
                char::from_u32(b).unwrap()
            } else {
                n += 1;
                char::from_u32(255 + n).unwrap()
            };
        }
        let dec = enc.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        (enc, dec)
    })
}

/// Escapes raw bytes into the printable byte-level alphabet.
pub fn escape_bytes(bytes: &[u8]) -> String {
    let (enc, _) = byte_tables();
    bytes.iter().map(|&b| enc[b as usize]).collect()
}

/// Inverse of [`escape_bytes`]; `None` if a character is outside the alphabet.
pub fn unescape(token: &str) -> Option<Vec<u8>> {
    let (_, dec) = byte_tables();
    token.chars().map(|c| dec.get(&c).copied()).collect()
}

fn digit_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\p{Nd}").unwrap())
}

pub fn is_decimal_digit(c: char) -> bool {
    let mut buf = [0u8; 4];
    digit_regex().is_match(c.encode_utf8(&mut buf))
}

/// Splits text into the chunks that merges are applied within. With
/// `digit_split`, every decimal digit is a chunk of its own.
pub fn pre_tokenize(text: &str, digit_split: bool) -> Vec<&str> {
    if text.is_empty() {
        return Vec::new();
    }
    if !digit_split {
        return vec![text];
    }
    let mut chunks = Vec::new();
    let mut last = 0;
    for m in digit_regex().find_iter(text) {
        if m.start() > last {
            chunks.push(&text[last..m.start()]);
        }
        chunks.push(m.as_str());
        last = m.end();
    }
    if last < text.len() {
        chunks.push(&text[last..]);
    }
    chunks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Merge {
    left: u32,
    right: u32,
    product: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum TokenKind {
    Base,
    Merged,
    Reserved,
}

#[derive(Debug, Clone)]
struct Token {
    text: String,
    bytes: Vec<u8>,
    kind: TokenKind,
}

/// Immutable after construction; share freely between threads.
#[derive(Debug, Clone)]
pub struct BpeModel {
    tokens: HashMap<u32, Token>,
    vocab: HashMap<String, u32>,
    byte_ids: [u32; BASE_SIZE],
    merges: Vec<Merge>,
    ranks: HashMap<(u32, u32), (u32, u32)>,
    reserved: Vec<String>,
    pub dropout_rate: f64,
    pub digit_split: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Encoding {
    pub token_ids: Vec<u32>,
    pub token_strings: Vec<String>,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

impl BpeModel {
    /// Builds a model from a `(token, id)` vocabulary and rank-ordered merges.
    ///
    /// All 256 byte-level base symbols must be present. Vocabulary entries
    /// that are neither base symbols nor merge products become reserved tokens.
    pub fn from_parts(vocab: Vec<(String, u32)>, merges: Vec<(String, String)>) -> Result<Self> {
        let mut tokens = HashMap::with_capacity(vocab.len());
        let mut index = HashMap::with_capacity(vocab.len());
        for (text, id) in vocab {
            if index.contains_key(&text) {
                return Err(Error::invalid("vocab", format!("token {text:?} listed twice")));
            }
            if tokens.contains_key(&id) {
                return Err(Error::invalid("vocab", format!("id {id} assigned twice")));
            }
            index.insert(text.clone(), id);
            tokens.insert(
                id,
                Token {
                    bytes: Vec::new(),
                    text,
                    kind: TokenKind::Reserved,
                },
            );
        }

        let mut byte_ids = [0u32; BASE_SIZE];
        for b in 0..BASE_SIZE {
            let s = escape_bytes(&[b as u8]);
            let id = *index
                .get(&s)
                .ok_or_else(|| Error::invalid("vocab", format!("missing base symbol for byte {b:#04x}")))?;
            byte_ids[b] = id;
            let t = tokens.get_mut(&id).unwrap();
            t.kind = TokenKind::Base;
            t.bytes = vec![b as u8];
        }

        let mut derivable: HashSet<u32> = byte_ids.iter().copied().collect();
        let mut merge_list = Vec::with_capacity(merges.len());
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, (l, r)) in merges.into_iter().enumerate() {
            let lookup = |s: &str| {
                index
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::invalid("merges", format!("rank {rank}: {s:?} not in vocab")))
            };
            let left = lookup(&l)?;
            let right = lookup(&r)?;
            let product = lookup(&format!("{l}{r}"))?;
            for (part, id) in [(&l, left), (&r, right)] {
                if !derivable.contains(&id) {
                    return Err(Error::invalid(
                        "merges",
                        format!("rank {rank}: {part:?} is neither a base symbol nor an earlier merge product"),
                    ));
                }
            }
            if ranks.contains_key(&(left, right)) {
                return Err(Error::invalid("merges", format!("rank {rank}: pair ({l:?}, {r:?}) repeated")));
            }
            if tokens[&product].kind == TokenKind::Base {
                return Err(Error::invalid("merges", format!("rank {rank}: product is a base symbol")));
            }
            let bytes: Vec<u8> = tokens[&left].bytes.iter().chain(&tokens[&right].bytes).copied().collect();
            let t = tokens.get_mut(&product).unwrap();
            t.kind = TokenKind::Merged;
            t.bytes = bytes;
            derivable.insert(product);
            ranks.insert((left, right), (rank as u32, product));
            merge_list.push(Merge { left, right, product });
        }

        let mut reserved: Vec<(u32, String)> = Vec::new();
        for (id, t) in tokens.iter_mut() {
            if t.kind == TokenKind::Reserved {
                t.bytes = t.text.as_bytes().to_vec();
                reserved.push((*id, t.text.clone()));
            }
        }
        reserved.sort();

        Ok(BpeModel {
            tokens,
            vocab: index,
            byte_ids,
            merges: merge_list,
            ranks,
            reserved: reserved.into_iter().map(|(_, s)| s).collect(),
            dropout_rate: 0.0,
            digit_split: false,
        })
    }

    /// Byte-level model with ids 0..256 for the bytes, then merge products in
    /// rank order, then reserved tokens. Merge parts are given escaped.
    pub fn byte_level<S: AsRef<str>>(merges: &[(S, S)], reserved: &[S]) -> Result<Self> {
        let mut vocab: Vec<(String, u32)> = (0..BASE_SIZE)
            .map(|b| (escape_bytes(&[b as u8]), b as u32))
            .collect();
        let mut seen: HashSet<String> = vocab.iter().map(|(s, _)| s.clone()).collect();
        for (l, r) in merges {
            let p = format!("{}{}", l.as_ref(), r.as_ref());
            if seen.insert(p.clone()) {
                vocab.push((p, vocab.len() as u32));
            }
        }
        for r in reserved {
            if seen.insert(r.as_ref().to_string()) {
                vocab.push((r.as_ref().to_string(), vocab.len() as u32));
            }
        }
        let merges = merges
            .iter()
            .map(|(l, r)| (l.as_ref().to_string(), r.as_ref().to_string()))
            .collect();
        Self::from_parts(vocab, merges)
    }

    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::invalid("dropout_rate", format!("{rate} outside [0, 1]")));
        }
        self.dropout_rate = rate;
        Ok(self)
    }

    pub fn with_digit_split(mut self, on: bool) -> Self {
        self.digit_split = on;
        self
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merge_count(&self) -> usize {
        self.merges.len()
    }

    pub fn reserved_tokens(&self) -> &[String] {
        &self.reserved
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.vocab.get(token).copied()
    }

    pub fn token_str(&self, id: u32) -> Option<&str> {
        self.tokens.get(&id).map(|t| t.text.as_str())
    }

    /// Merge rules as escaped `(left, right)` strings in rank order.
    pub fn merges(&self) -> Vec<(String, String)> {
        self.merges
            .iter()
            .map(|m| (self.tokens[&m.left].text.clone(), self.tokens[&m.right].text.clone()))
            .collect()
    }

    /// Vocabulary sorted by id.
    pub fn vocab(&self) -> Vec<(String, u32)> {
        let mut v: Vec<_> = self.vocab.iter().map(|(s, &i)| (s.clone(), i)).collect();
        v.sort_by_key(|&(_, i)| i);
        v
    }

    /// Every merge's parts are base symbols or products of earlier merges,
    /// and every product is in the vocabulary.
    pub fn check_closure(&self) -> Result<()> {
        let mut derivable: HashSet<u32> = self.byte_ids.iter().copied().collect();
        for (rank, m) in self.merges.iter().enumerate() {
            if !derivable.contains(&m.left) || !derivable.contains(&m.right) {
                return Err(Error::invalid("merges", format!("rank {rank} is not derivable")));
            }
            if !self.tokens.contains_key(&m.product) {
                return Err(Error::invalid("merges", format!("rank {rank} product missing from vocab")));
            }
            derivable.insert(m.product);
        }
        Ok(())
    }

    /// Deterministic encoding (no dropout).
    pub fn encode(&self, text: &str) -> Encoding {
        self.encode_inner(text, None::<&mut ChaCha8Rng>)
    }

    /// Encoding with BPE-dropout at the model's `dropout_rate`.
    pub fn encode_with_rng<R: Rng>(&self, text: &str, rng: &mut R) -> Encoding {
        self.encode_inner(text, Some(rng))
    }

    /// Dropout encoding with a stream keyed by `(seed, key)`, so documents can
    /// be encoded in any order or in parallel with reproducible results.
    pub fn encode_seeded(&self, text: &str, seed: u64, key: &str) -> Encoding {
        let mut rng = doc_rng(seed, key);
        self.encode_with_rng(text, &mut rng)
    }

    pub fn count_tokens(&self, text: &str) -> usize {
        pre_tokenize(text, self.digit_split)
            .into_iter()
            .map(|c| self.merge_chunk(c.as_bytes(), None::<&mut ChaCha8Rng>).len())
            .sum()
    }

    fn encode_inner<R: Rng>(&self, text: &str, mut rng: Option<&mut R>) -> Encoding {
        let mut ids = Vec::new();
        for chunk in pre_tokenize(text, self.digit_split) {
            let r = rng.as_deref_mut();
            ids.extend(self.merge_chunk(chunk.as_bytes(), r));
        }
        let token_strings = ids.iter().map(|id| self.tokens[id].text.clone()).collect();
        Encoding {
            token_ids: ids,
            token_strings,
        }
    }

    fn merge_chunk<R: Rng>(&self, bytes: &[u8], mut rng: Option<&mut R>) -> Vec<u32> {
        let n = bytes.len();
        let mut syms: Vec<Symbol> = bytes
            .iter()
            .enumerate()
            .map(|(i, &b)| Symbol {
                id: self.byte_ids[b as usize],
                prev: i.checked_sub(1),
                next: (i + 1 < n).then_some(i + 1),
                alive: true,
            })
            .collect();
        if n < 2 || self.merges.is_empty() {
            return syms.into_iter().map(|s| s.id).collect();
        }
        let p = match rng {
            Some(_) => self.dropout_rate,
            None => 0.0,
        };

        let mut heap = BinaryHeap::new();
        for i in 0..n - 1 {
            if let Some(&(rank, _)) = self.ranks.get(&(syms[i].id, syms[i + 1].id)) {
                heap.push(Candidate { rank, pos: i });
            }
        }
        let mut skipped = Vec::new();
        while let Some(top) = heap.pop() {
            let left = &syms[top.pos];
            let Some(next) = left.next.filter(|_| left.alive) else {
                continue;
            };
            let Some(&(rank, product)) = self.ranks.get(&(left.id, syms[next].id)) else {
                continue;
            };
            if rank != top.rank {
                continue;
            }
            if p > 0.0 {
                if let Some(r) = rng.as_deref_mut() {
                    if r.gen::<f64>() < p {
                        skipped.push(top);
                        continue;
                    }
                }
            }

            let after = syms[next].next;
            syms[top.pos].id = product;
            syms[top.pos].next = after;
            syms[next].alive = false;
            if let Some(a) = after {
                syms[a].prev = Some(top.pos);
            }
            heap.extend(skipped.drain(..));
            if let Some(prev) = syms[top.pos].prev {
                if let Some(&(rank, _)) = self.ranks.get(&(syms[prev].id, product)) {
                    heap.push(Candidate { rank, pos: prev });
                }
            }
            if let Some(a) = after {
                if let Some(&(rank, _)) = self.ranks.get(&(product, syms[a].id)) {
                    heap.push(Candidate { rank, pos: top.pos });
                }
            }
        }
        let mut out = Vec::new();
        let mut cur = Some(0);
        while let Some(i) = cur {
            out.push(syms[i].id);
            cur = syms[i].next;
        }
        out
    }

    /// Concatenated bytes of the given tokens.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for id in ids {
            let t = self
                .tokens
                .get(id)
                .ok_or_else(|| Error::invalid("token id", id.to_string()))?;
            out.extend_from_slice(&t.bytes);
        }
        Ok(out)
    }

    pub fn save(&self, vocab_path: impl AsRef<Path>, merges_path: impl AsRef<Path>) -> Result<()> {
        let mut v = String::new();
        for (tok, id) in self.vocab() {
            if tok.contains(['\t', '\n', '\r']) {
                return Err(Error::invalid("vocab", format!("token {tok:?} cannot be written")));
            }
            v.push_str(&format!("{tok}\t{id}\n"));
        }
        let mut m = String::from("#version: 0.2\n");
        for (l, r) in self.merges() {
            m.push_str(&format!("{l} {r}\n"));
        }
        let vp = vocab_path.as_ref();
        let mp = merges_path.as_ref();
        fs::write(vp, v).map_err(|e| Error::io(vp, e))?;
        fs::write(mp, m).map_err(|e| Error::io(mp, e))?;
        Ok(())
    }

    pub fn load(vocab_path: impl AsRef<Path>, merges_path: impl AsRef<Path>) -> Result<Self> {
        let vp = vocab_path.as_ref();
        let mp = merges_path.as_ref();
        let v = fs::read_to_string(vp).map_err(|e| Error::io(vp, e))?;
        let m = fs::read_to_string(mp).map_err(|e| Error::io(mp, e))?;
        Self::from_parts(parse_vocab(&v)?, parse_merges(&m)?)
    }
}

#[derive(Debug, Clone, Copy)]
struct Symbol {
    id: u32,
    prev: Option<usize>,
    next: Option<usize>,
    alive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Candidate {
    rank: u32,
    pos: usize,
}

impl Ord for Candidate {
    // min-heap on (rank, pos)
    fn cmp(&self, other: &Self) -> Ordering {
        other.rank.cmp(&self.rank).then_with(|| other.pos.cmp(&self.pos))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn doc_rng(seed: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(xxhash_rust::xxh3::xxh3_64_with_seed(key.as_bytes(), seed))
}

/// Parses `token<TAB>id` lines. Empty lines are ignored.
pub fn parse_vocab(text: &str) -> Result<Vec<(String, u32)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (tok, id) = line.rsplit_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: "expected `token<TAB>id`".into(),
        })?;
        let id = id.trim().parse::<u32>().map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("bad id: {e}"),
        })?;
        if tok.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                message: "empty token".into(),
            });
        }
        out.push((tok.to_string(), id));
    }
    Ok(out)
}

/// Parses `left right` lines in rank order; a leading `#version` line is skipped.
pub fn parse_merges(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || (i == 0 && line.starts_with("#version")) {
            continue;
        }
        let mut parts = line.split(' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                out.push((l.to_string(), r.to_string()))
            }
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected `left right`".into(),
                })
            }
        }
    }
    Ok(out)
}

/// Relative token-count increase caused by dropout at `rate` over `texts`.
pub fn encode_dropout_stats(model: &BpeModel, texts: &[&str], rate: f64, seed: u64) -> Result<f64> {
    if texts.is_empty() {
        return Err(Error::invalid("texts", "empty input"));
    }
    let m = model.clone().with_dropout(rate)?;
    let mut base = 0usize;
    let mut dropped = 0usize;
    for (i, t) in texts.iter().enumerate() {
        base += model.encode(t).len();
        dropped += m.encode_seeded(t, seed, &i.to_string()).len();
    }
    if base == 0 {
        return Err(Error::invalid("texts", "no tokens"));
    }
    Ok((dropped as f64 - base as f64) / base as f64)
}

/// UTF-8 bytes per token under deterministic encoding.
pub fn compression_rate(model: &BpeModel, texts: &[&str]) -> Result<f64> {
    let bytes: usize = texts.iter().map(|t| t.len()).sum();
    if bytes == 0 {
        return Err(Error::invalid("texts", "empty input"));
    }
    let tokens: usize = texts.iter().map(|t| model.count_tokens(t)).sum();
    Ok(bytes as f64 / tokens as f64)
}

/// Shrinks the vocabulary to at most `target_size` entries.
///
/// Explicit `removals` go first, taking every merge that needs them along.
/// Then the latest-ranked merges are dropped until the size fits. Base
/// symbols and reserved tokens are always kept.
pub fn truncate_vocab(model: &BpeModel, target_size: usize, removals: &[&str]) -> Result<BpeModel> {
    let floor = BASE_SIZE + model.reserved.len();
    if target_size < floor {
        return Err(Error::invalid(
            "target_size",
            format!("{target_size} is below the {floor} base and reserved tokens"),
        ));
    }
    let mut removed: HashSet<u32> = HashSet::new();
    for r in removals {
        let id = model
            .token_id(r)
            .ok_or_else(|| Error::invalid("removal", format!("{r:?} not in vocab")))?;
        if model.tokens[&id].kind != TokenKind::Merged {
            return Err(Error::invalid("removal", format!("{r:?} is a base or reserved token")));
        }
        removed.insert(id);
    }

    let mut alive_merge = vec![false; model.merges.len()];
    let mut producers: HashMap<u32, usize> = HashMap::new();
    let mut derivable: HashSet<u32> = model.byte_ids.iter().copied().collect();
    for (i, m) in model.merges.iter().enumerate() {
        if removed.contains(&m.product) || !derivable.contains(&m.left) || !derivable.contains(&m.right) {
            continue;
        }
        alive_merge[i] = true;
        *producers.entry(m.product).or_default() += 1;
        derivable.insert(m.product);
    }

    let mut size = floor + producers.len();
    for i in (0..model.merges.len()).rev() {
        if size <= target_size {
            break;
        }
        if !alive_merge[i] {
            continue;
        }
        alive_merge[i] = false;
        let c = producers.get_mut(&model.merges[i].product).unwrap();
        *c -= 1;
        if *c == 0 {
            producers.remove(&model.merges[i].product);
            size -= 1;
        }
    }

    let mut keep: Vec<u32> = model
        .tokens
        .iter()
        .filter(|(id, t)| t.kind != TokenKind::Merged || producers.contains_key(id))
        .map(|(&id, _)| id)
        .collect();
    keep.sort_unstable();
    let vocab = keep
        .iter()
        .enumerate()
        .map(|(new_id, old)| (model.tokens[old].text.clone(), new_id as u32))
        .collect();
    let merges = model
        .merges
        .iter()
        .zip(&alive_merge)
        .filter(|(_, &a)| a)
        .map(|(m, _)| (model.tokens[&m.left].text.clone(), model.tokens[&m.right].text.clone()))
        .collect();
    let mut out = BpeModel::from_parts(vocab, merges)?;
    out.dropout_rate = model.dropout_rate;
    out.digit_split = model.digit_split;
    Ok(out)
}
