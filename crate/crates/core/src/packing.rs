//! Fixed-length sequence packing.
//!
//! Pretraining documents are spliced across sequence boundaries. In
//! instruction-aware mode an instruction document that would straddle a
//! boundary starts the next sequence instead; the gap it leaves is filled
//! from a FIFO reservoir of pretraining tokens, and padded only when the
//! reservoir runs dry.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PKSQ";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDoc {
    pub id: String,
    pub tokens: Vec<u32>,
    #[serde(default)]
    pub is_instruction: bool,
}

impl TokenizedDoc {
    pub fn new(id: impl Into<String>, tokens: Vec<u32>, is_instruction: bool) -> Self {
        TokenizedDoc {
            id: id.into(),
            tokens,
            is_instruction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Pretrain,
    Instruction,
    Backfill,
    Pad,
}

impl SegmentKind {
    fn code(self) -> u8 {
        match self {
            SegmentKind::Pretrain => 0,
            SegmentKind::Instruction => 1,
            SegmentKind::Backfill => 2,
            SegmentKind::Pad => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => SegmentKind::Pretrain,
            1 => SegmentKind::Instruction,
            2 => SegmentKind::Backfill,
            3 => SegmentKind::Pad,
            _ => return None,
        })
    }

    fn as_str(self) -> &'static str {
        match self {
            SegmentKind::Pretrain => "pretrain",
            SegmentKind::Instruction => "instruction",
            SegmentKind::Backfill => "backfill",
            SegmentKind::Pad => "pad",
        }
    }
}

/// Half-open span `[start, end)` holding tokens `doc_offset..` of one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub doc_id: Option<String>,
    pub start: usize,
    pub end: usize,
    pub doc_offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub token_ids: Vec<u32>,
    pub segments: Vec<Segment>,
}

impl PackedSequence {
    /// Spans where padding was replaced by reservoir tokens.
    pub fn pad_replaced_spans(&self) -> Vec<(usize, usize)> {
        self.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::Backfill)
            .map(|s| (s.start, s.end))
            .collect()
    }

    pub fn validate(&self, seq_len: usize) -> Result<()> {
        if self.token_ids.len() != seq_len {
            return Err(Error::Shape(format!("sequence of {} tokens, expected {seq_len}", self.token_ids.len())));
        }
        let mut at = 0;
        for s in &self.segments {
            if s.start != at || s.end <= s.start || s.end > seq_len {
                return Err(Error::Shape(format!("segment [{}, {}) does not continue at {at}", s.start, s.end)));
            }
            if (s.kind == SegmentKind::Pad) != s.doc_id.is_none() {
                return Err(Error::Shape("only pad segments lack a document id".into()));
            }
            at = s.end;
        }
        if at != seq_len {
            return Err(Error::Shape(format!("segments cover {at} of {seq_len} positions")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackConfig {
    pub seq_len: usize,
    pub pad_id: u32,
}

/// FIFO source of pretraining tokens used in place of padding.
#[derive(Debug, Clone, Default)]
pub struct Reservoir {
    docs: VecDeque<TokenizedDoc>,
    offset: usize,
}

impl Reservoir {
    pub fn new(docs: impl IntoIterator<Item = TokenizedDoc>) -> Self {
        Reservoir {
            docs: docs.into_iter().filter(|d| !d.tokens.is_empty()).collect(),
            offset: 0,
        }
    }

    pub fn remaining(&self) -> usize {
        self.docs.iter().map(|d| d.tokens.len()).sum::<usize>() - self.offset
    }

    fn take(&mut self, mut n: usize, out: &mut Builder) {
        while n > 0 {
            let Some(front) = self.docs.front() else { return };
            let avail = front.tokens.len() - self.offset;
            let k = avail.min(n);
            out.push(
                SegmentKind::Backfill,
                Some(&front.id),
                &front.tokens[self.offset..self.offset + k],
                self.offset,
            );
            n -= k;
            self.offset += k;
            if self.offset == front.tokens.len() {
                self.docs.pop_front();
                self.offset = 0;
            }
        }
    }
}

struct Builder {
    cfg: PackConfig,
    cur: PackedSequence,
    done: Vec<PackedSequence>,
}

impl Builder {
    fn new(cfg: PackConfig) -> Self {
        Builder {
            cfg,
            cur: PackedSequence {
                token_ids: Vec::with_capacity(cfg.seq_len),
                segments: Vec::new(),
            },
            done: Vec::new(),
        }
    }

    fn room(&self) -> usize {
        self.cfg.seq_len - self.cur.token_ids.len()
    }

    fn push(&mut self, kind: SegmentKind, id: Option<&str>, tokens: &[u32], doc_offset: usize) {
        let start = self.cur.token_ids.len();
        self.cur.token_ids.extend_from_slice(tokens);
        self.cur.segments.push(Segment {
            kind,
            doc_id: id.map(str::to_string),
            start,
            end: self.cur.token_ids.len(),
            doc_offset,
        });
        if self.room() == 0 {
            let fresh = PackedSequence {
                token_ids: Vec::with_capacity(self.cfg.seq_len),
                segments: Vec::new(),
            };
            self.done.push(std::mem::replace(&mut self.cur, fresh));
        }
    }

    fn pad_out(&mut self, reservoir: Option<&mut Reservoir>) {
        if self.cur.token_ids.is_empty() {
            return;
        }
        if let Some(r) = reservoir {
            r.take(self.room(), self);
        }
        if !self.cur.token_ids.is_empty() {
            let pad = vec![self.cfg.pad_id; self.room()];
            self.push(SegmentKind::Pad, None, &pad, 0);
        }
    }

    fn splice(&mut self, kind: SegmentKind, doc: &TokenizedDoc) {
        let mut off = 0;
        while off < doc.tokens.len() {
            let k = self.room().min(doc.tokens.len() - off);
            self.push(kind, Some(&doc.id), &doc.tokens[off..off + k], off);
            off += k;
        }
    }
}

fn kind_of(doc: &TokenizedDoc) -> SegmentKind {
    if doc.is_instruction {
        SegmentKind::Instruction
    } else {
        SegmentKind::Pretrain
    }
}

fn check_cfg(cfg: &PackConfig) -> Result<()> {
    if cfg.seq_len == 0 {
        return Err(Error::invalid("seq_len", "must be positive"));
    }
    if cfg.seq_len > u32::MAX as usize {
        return Err(Error::invalid("seq_len", "must fit in 32 bits"));
    }
    Ok(())
}

/// Greedy concatenation in input order; the last sequence is padded.
pub fn pack_pretrain(docs: &[TokenizedDoc], cfg: &PackConfig) -> Result<Vec<PackedSequence>> {
    check_cfg(cfg)?;
    let mut b = Builder::new(*cfg);
    for d in docs {
        b.splice(kind_of(d), d);
    }
    b.pad_out(None);
    Ok(b.done)
}

pub fn pack_instruction_aware(
    docs: &[TokenizedDoc],
    cfg: &PackConfig,
    reservoir: &mut Reservoir,
) -> Result<Vec<PackedSequence>> {
    check_cfg(cfg)?;
    if let Some(d) = docs.iter().find(|d| d.is_instruction && d.tokens.len() > cfg.seq_len) {
        return Err(Error::invalid(
            "instruction document",
            format!("{:?} has {} tokens, more than the sequence length {}", d.id, d.tokens.len(), cfg.seq_len),
        ));
    }
    let mut b = Builder::new(*cfg);
    for d in docs {
        if d.tokens.is_empty() {
            continue;
        }
        if d.is_instruction {
            if d.tokens.len() > b.room() {
                b.pad_out(Some(reservoir));
            }
            b.push(SegmentKind::Instruction, Some(&d.id), &d.tokens, 0);
        } else {
            b.splice(SegmentKind::Pretrain, d);
        }
    }
    b.pad_out(Some(reservoir));
    Ok(b.done)
}

/// Attention segments of a packed sequence; a token may only attend to
/// earlier tokens in its own segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionSegments {
    pub spans: Vec<(usize, usize)>,
    owner: Vec<usize>,
}

impl AttentionSegments {
    pub fn can_attend(&self, query: usize, key: usize) -> bool {
        key <= query && self.owner[query] == self.owner[key]
    }

    pub fn len(&self) -> usize {
        self.owner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owner.is_empty()
    }
}

/// `(start, length)` per segment.
pub fn doc_mask_segments(seq: &PackedSequence) -> AttentionSegments {
    let mut owner = Vec::with_capacity(seq.token_ids.len());
    let spans = seq
        .segments
        .iter()
        .enumerate()
        .map(|(i, s)| {
            owner.extend(std::iter::repeat(i).take(s.len()));
            (s.start, s.len())
        })
        .collect();
    AttentionSegments { spans, owner }
}

pub fn to_bytes(seqs: &[PackedSequence], seq_len: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(seq_len as u32).to_le_bytes());
    out.extend_from_slice(&(seqs.len() as u64).to_le_bytes());
    for s in seqs {
        for t in &s.token_ids {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out.extend_from_slice(&(s.segments.len() as u32).to_le_bytes());
        for g in &s.segments {
            out.push(g.kind.code());
            for v in [g.start, g.end, g.doc_offset] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
            let id = g.doc_id.as_deref().unwrap_or("");
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::decode(self.at, format!("need {n} more bytes")))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Inverse of [`to_bytes`]; returns the sequence length and the sequences.
pub fn from_bytes(bytes: &[u8]) -> Result<(usize, Vec<PackedSequence>)> {
    let mut c = Cursor { buf: bytes, at: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::decode(0, "bad magic"));
    }
    let v = c.u32()?;
    if v != VERSION {
        return Err(Error::decode(4, format!("unsupported version {v}")));
    }
    let seq_len = c.u32()? as usize;
    if seq_len == 0 {
        return Err(Error::decode(8, "sequence length 0"));
    }
    let count = c.u64()?;
    let mut seqs = Vec::new();
    for _ in 0..count {
        let at = c.at;
        let raw = c.take(seq_len.checked_mul(4).ok_or_else(|| Error::decode(at, "length overflow"))?)?;
        let token_ids = raw.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect();
        let n = c.u32()?;
        let mut segments = Vec::new();
        for _ in 0..n {
            let at = c.at;
            let kind = SegmentKind::from_code(c.take(1)?[0])
                .ok_or_else(|| Error::decode(at, "unknown segment kind"))?;
            let (start, end, doc_offset) = (c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
            let len = c.u32()? as usize;
            let at = c.at;
            let id = std::str::from_utf8(c.take(len)?).map_err(|e| Error::decode(at, e.to_string()))?;
            segments.push(Segment {
                kind,
                doc_id: (kind != SegmentKind::Pad).then(|| id.to_string()),
                start,
                end,
                doc_offset,
            });
        }
        let seq = PackedSequence { token_ids, segments };
        seq.validate(seq_len).map_err(|e| Error::decode(at, e.to_string()))?;
        seqs.push(seq);
    }
    if c.at != bytes.len() {
        return Err(Error::decode(c.at, "trailing bytes"));
    }
    Ok((seq_len, seqs))
}

/// Human-readable dump: one header line per sequence, one line per segment.
pub fn debug_dump(seqs: &[PackedSequence]) -> String {
    let mut out = String::new();
    for (i, s) in seqs.iter().enumerate() {
        let _ = writeln!(out, "sequence {i} ({} tokens)", s.token_ids.len());
        for g in &s.segments {
            let _ = writeln!(
                out,
                "  [{}, {}) {} {} +{}: {:?}",
                g.start,
                g.end,
                g.kind.as_str(),
                g.doc_id.as_deref().unwrap_or("-"),
                g.doc_offset,
                &s.token_ids[g.start..g.end]
            );
        }
    }
    out
}
