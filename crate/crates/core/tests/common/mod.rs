//! Fixtures and reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use pretrain_core::corpus::{self, Document, Domain};
use pretrain_core::pipeline::{DecontamParams, PackParams, PipelineConfig, TokenizerConfig};
use pretrain_core::tokenizer::{escape_bytes, pre_tokenize, BpeModel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Greedy byte-level BPE trainer: repeatedly merges the most frequent
/// adjacent pair (ties broken by the lexicographically smallest pair).
pub fn train_bpe(texts: &[&str], max_merges: usize) -> BpeModel {
    let mut words: BTreeMap<Vec<String>, u64> = BTreeMap::new();
    for t in texts {
        for chunk in pre_tokenize(t, true) {
            let syms = chunk.bytes().map(|b| escape_bytes(&[b])).collect();
            *words.entry(syms).or_default() += 1;
        }
    }
    let mut merges: Vec<(String, String)> = Vec::new();
    while merges.len() < max_merges {
        let mut pairs: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (w, &c) in &words {
            for p in w.windows(2) {
                *pairs.entry((p[0].clone(), p[1].clone())).or_default() += c;
            }
        }
        let Some((best, count)) = pairs
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        else {
            break;
        };
        if count < 2 {
            break;
        }
        let joined = format!("{}{}", best.0, best.1);
        words = words
            .into_iter()
            .map(|(w, c)| {
                let mut out = Vec::with_capacity(w.len());
                let mut i = 0;
                while i < w.len() {
                    if i + 1 < w.len() && w[i] == best.0 && w[i + 1] == best.1 {
                        out.push(joined.clone());
                        i += 2;
                    } else {
                        out.push(w[i].clone());
                        i += 1;
                    }
                }
                (out, c)
            })
            .fold(BTreeMap::new(), |mut m, (w, c)| {
                *m.entry(w).or_default() += c;
                m
            });
        merges.push(best);
    }
    BpeModel::byte_level::<String>(&merges, &[]).unwrap()
}

pub const SAMPLE_TEXT: &[&str] = &[
    "the quick brown fox jumps over the lazy dog",
    "the lazy dog sleeps while the quick fox runs",
    "def main():\n    return 42\n",
    "在训练过程中，我们使用了大量的中文数据。",
    "price 1234 and 5678 units in 2024",
    "then there was the thing that the other one thought",
];

pub fn sample_model() -> BpeModel {
    train_bpe(SAMPLE_TEXT, 120)
}

const ALPHABET: &[&str] = &[
    "a", "b", "e", "t", "h", " ", " ", "\n", "\t", "0", "7", "٣", "é", "ß", "中", "文", "😀", "\u{301}", "\u{200b}",
    "th", "the ", "ing", "\r\n", "{", "}", "\\", "\"",
];

/// Random UTF-8 mixing ASCII, multi-byte scripts, non-ASCII digits,
/// combining marks and emoji.
pub fn random_text<R: Rng>(rng: &mut R, max_pieces: usize) -> String {
    let n = rng.gen_range(0..=max_pieces);
    let mut s = String::new();
    for _ in 0..n {
        if rng.gen_bool(0.15) {
            s.push(rng.gen::<char>());
        } else {
            s.push_str(ALPHABET.choose(rng).unwrap());
        }
    }
    s
}

pub fn words<R: Rng>(rng: &mut R, vocab: &[&str], n: usize) -> String {
    (0..n).map(|_| *vocab.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub const WORDS: &[&str] = &[
    "alpha", "beta", "gamma", "delta", "river", "stone", "cloud", "paper", "green", "quiet", "orbit", "maple",
    "signal", "frame", "vector", "token", "window", "branch", "socket", "lantern", "harbor", "meadow", "copper",
    "velvet", "canyon", "ember", "falcon", "glacier", "hollow", "island", "jungle", "kettle", "ladder", "mirror",
    "nectar", "oyster", "pepper", "quartz", "raven", "saddle", "thistle", "umbrella", "valley", "walnut", "yarrow",
    "zephyr", "anchor", "basket", "candle", "dragon",
];

pub fn random_docs<R: Rng>(rng: &mut R, n: usize) -> Vec<Document> {
    (0..n)
        .map(|i| {
            let domain = *Domain::ALL.choose(rng).unwrap();
            let len = rng.gen_range(5..60);
            let mut d = Document::new(format!("doc-{i:05}"), words(rng, WORDS, len), domain)
                .with_source(format!("src{}", rng.gen_range(0..3)))
                .instruction(rng.gen_bool(0.2));
            if rng.gen_bool(0.5) {
                d = d.with_score(rng.gen_range(1..=5));
            }
            if rng.gen_bool(0.5) {
                d = d.with_tokens(rng.gen_range(0..10_000));
            }
            d
        })
        .collect()
}

/// Exact reference for decontamination: tuple windows, no hashing.
/// Returns, per document, `(hits, windows)`.
pub fn window_scan(docs: &[Vec<u32>], benchmarks: &[Vec<u32>], n: usize, max_occurrences: u64) -> Vec<(usize, usize)> {
    let mut counts: BTreeMap<&[u32], u64> = BTreeMap::new();
    for b in benchmarks {
        if b.len() >= n {
            for i in 0..=b.len() - n {
                *counts.entry(&b[i..i + n]).or_default() += 1;
            }
        }
    }
    let allowed: BTreeSet<&[u32]> = counts
        .into_iter()
        .filter(|&(_, c)| c <= max_occurrences)
        .map(|(g, _)| g)
        .collect();
    docs.iter()
        .map(|d| {
            if d.len() < n {
                return (0, 0);
            }
            let total = d.len() - n + 1;
            let hits = (0..total).filter(|&i| allowed.contains(&d[i..i + n])).count();
            (hits, total)
        })
        .collect()
}

/// Removal decision for a rational threshold `num/den`, in exact integer
/// arithmetic.
pub fn exceeds(hits: usize, total: usize, num: u64, den: u64) -> bool {
    total > 0 && (hits as u64) * den > num * total as u64
}

pub fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Two shingle-like sets with exactly `shared` common elements and `only`
/// elements unique to each side, so the Jaccard index is
/// `shared / (shared + 2·only)`.
pub fn set_pair(offset: u64, shared: u64, only: u64) -> (BTreeSet<u64>, BTreeSet<u64>) {
    let h = |r: std::ops::Range<u64>| r.map(splitmix).collect::<BTreeSet<u64>>();
    let base = h(offset..offset + shared);
    let mut a = base.clone();
    let mut b = base;
    a.extend(h(offset + shared..offset + shared + only));
    b.extend(h(offset + shared + only..offset + shared + 2 * only));
    (a, b)
}

/// Standard deviation of samples.
pub fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

/// Benchmarks of random words; corpus documents carry spliced benchmark
/// spans of random length so ratios land on both sides of the threshold.
pub fn planted_corpus(seed: u64, n_docs: usize) -> (Vec<Document>, Vec<Document>) {
    let mut r = rng(seed);
    let mut bench: Vec<Document> = (0..40)
        .map(|i| Document::new(format!("q{i}"), words(&mut r, WORDS, 40), Domain::Web))
        .collect();
    // a phrase shared by many benchmark items is too common to count
    let boiler = "answer the following question with a single word please";
    for (i, b) in bench.iter_mut().enumerate().take(6) {
        let t = format!("{boiler} {}", b.text);
        b.set_text(t);
        b.id = format!("q{i}");
    }
    let docs = (0..n_docs)
        .map(|i| {
            let n = r.gen_range(10..80);
            let mut text = words(&mut r, WORDS, n);
            if r.gen_bool(0.4) {
                let src = &bench[r.gen_range(0..bench.len())].text;
                let ws: Vec<&str> = src.split(' ').collect();
                let len = r.gen_range(1..ws.len());
                let start = r.gen_range(0..ws.len() - len);
                let span = ws[start..start + len].join(" ");
                let tail = r.gen_range(0..30);
                text = format!("{text} {span} {}", words(&mut r, WORDS, tail));
            }
            if r.gen_bool(0.05) {
                text = format!("{boiler} {text}");
            }
            Document::new(format!("d{i:04}"), text, Domain::Web)
        })
        .collect();
    (docs, bench)
}

/// 300 documents: every fifth has an exact copy, every seventh carries a
/// long benchmark excerpt, some are instruction data.
pub fn write_fixture(dir: &Path) -> (Vec<Document>, Vec<Document>) {
    let mut r = rng(42);
    let bench: Vec<Document> = (0..10)
        .map(|i| Document::new(format!("q{i}"), words(&mut r, WORDS, 60), Domain::Web))
        .collect();
    let mut docs = Vec::new();
    for i in 0..300 {
        let n = r.gen_range(30..120);
        let mut text = words(&mut r, WORDS, n);
        if i % 7 == 0 {
            text = format!("{} {text}", bench[i % bench.len()].text);
        }
        let d = Document::new(format!("d{i:03}"), text.clone(), Domain::ALL[i % 5])
            .instruction(i % 11 == 0)
            .with_score(r.gen_range(2..=5));
        docs.push(d);
        if i % 5 == 0 {
            docs.push(Document::new(format!("d{i:03}-copy"), text, Domain::ALL[i % 5]));
        }
    }
    corpus::emit(&docs[..200], dir.join("shard0.jsonl")).unwrap();
    corpus::emit(&docs[200..], dir.join("shard1.jsonl.gz")).unwrap();
    corpus::emit(&bench, dir.join("bench.jsonl")).unwrap();
    (docs, bench)
}

pub fn pipeline_config(dir: &Path, out: &str) -> PipelineConfig {
    let model = sample_model();
    model.save(dir.join("vocab.txt"), dir.join("merges.txt")).unwrap();
    PipelineConfig {
        seed: 5,
        input: vec![dir.join("shard0.jsonl"), dir.join("shard1.jsonl.gz")],
        output: dir.join(out),
        tokenizer: TokenizerConfig {
            vocab: Some(dir.join("vocab.txt")),
            merges: Some(dir.join("merges.txt")),
            dropout: 0.2,
            digit_split: true,
        },
        decontam: DecontamParams {
            benchmarks: vec![dir.join("bench.jsonl")],
            ..DecontamParams::default()
        },
        pack: PackParams {
            seq_len: 2048,
            reservoir: Some(dir.join("shard0.jsonl")),
            ..Default::default()
        },
        ..PipelineConfig::default()
    }
}

