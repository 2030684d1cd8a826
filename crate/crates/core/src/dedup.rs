//! MinHash near-duplicate detection with LSH banding.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64;

use crate::corpus::Document;
use crate::error::{Error, Result};

const MERSENNE_61: u64 = (1 << 61) - 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupConfig {
    pub num_permutations: usize,
    pub bands: usize,
    pub rows: usize,
    pub shingle_size: usize,
    pub seed: u64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            num_permutations: 128,
            bands: 16,
            rows: 8,
            shingle_size: 3,
            seed: 0,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_permutations == 0 || self.bands == 0 || self.rows == 0 || self.shingle_size == 0 {
            return Err(Error::invalid("dedup config", "all sizes must be positive"));
        }
        if self.bands * self.rows != self.num_permutations {
            return Err(Error::invalid(
                "dedup config",
                format!(
                    "bands × rows = {} but num_permutations = {}",
                    self.bands * self.rows,
                    self.num_permutations
                ),
            ));
        }
        Ok(())
    }

    /// Probability that a pair with similarity `s` shares at least one band.
    pub fn candidate_probability(&self, s: f64) -> f64 {
        1.0 - (1.0 - s.powi(self.rows as i32)).powi(self.bands as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub values: Vec<u64>,
    pub shingle_size: usize,
}

impl MinHashSignature {
    /// Fraction of coordinates on which the two signatures agree.
    pub fn estimate(&self, other: &MinHashSignature) -> Result<f64> {
        if self.values.len() != other.values.len() || self.shingle_size != other.shingle_size {
            return Err(Error::Shape(format!(
                "signatures of length {} (k={}) and {} (k={})",
                self.values.len(),
                self.shingle_size,
                other.values.len(),
                other.shingle_size
            )));
        }
        let eq = self.values.iter().zip(&other.values).filter(|(a, b)| a == b).count();
        Ok(eq as f64 / self.values.len() as f64)
    }
}

/// Hashes of every window of `k` lowercase whitespace-delimited words.
/// Texts shorter than `k` words hash to a single shingle of the whole text.
pub fn shingles(text: &str, k: usize) -> Result<BTreeSet<u64>> {
    if k == 0 {
        return Err(Error::invalid("shingle_size", "must be at least 1"));
    }
    let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    if words.len() < k {
        return Ok(BTreeSet::from([xxh3_64(words.join(" ").as_bytes())]));
    }
    Ok(words.windows(k).map(|w| xxh3_64(w.join(" ").as_bytes())).collect())
}

/// Seeded family of universal hashes `(a·x + b) mod (2^61 − 1)`.
#[derive(Debug, Clone)]
pub struct MinHasher {
    params: Vec<(u64, u64)>,
    shingle_size: usize,
}

impl MinHasher {
    pub fn new(config: &DedupConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = (0..config.num_permutations)
            .map(|_| (rng.gen_range(1..MERSENNE_61), rng.gen_range(0..MERSENNE_61)))
            .collect();
        MinHasher {
            params,
            shingle_size: config.shingle_size,
        }
    }

    pub fn signature(&self, shingles: &BTreeSet<u64>) -> Result<MinHashSignature> {
        if shingles.is_empty() {
            return Err(Error::invalid("shingles", "empty set"));
        }
        let mut values = vec![u64::MAX; self.params.len()];
        for &x in shingles {
            let x = u128::from(x % MERSENNE_61);
            for (v, &(a, b)) in values.iter_mut().zip(&self.params) {
                let h = ((u128::from(a) * x + u128::from(b)) % u128::from(MERSENNE_61)) as u64;
                if h < *v {
                    *v = h;
                }
            }
        }
        Ok(MinHashSignature {
            values,
            shingle_size: self.shingle_size,
        })
    }
}

pub fn signature(shingles: &BTreeSet<u64>, config: &DedupConfig) -> Result<MinHashSignature> {
    MinHasher::new(config).signature(shingles)
}

pub fn jaccard_exact<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> Result<f64> {
    if a.is_empty() && b.is_empty() {
        return Err(Error::invalid("jaccard", "both sets empty"));
    }
    let inter = a.intersection(b).count();
    Ok(inter as f64 / (a.len() + b.len() - inter) as f64)
}

/// Index pairs `(i, j)`, `i < j`, that share at least one band bucket.
pub fn candidate_pairs(sigs: &[MinHashSignature], config: &DedupConfig) -> BTreeSet<(usize, usize)> {
    let mut buckets: BTreeMap<(usize, u64), Vec<usize>> = BTreeMap::new();
    for (i, sig) in sigs.iter().enumerate() {
        for (band, chunk) in sig.values.chunks(config.rows).enumerate() {
            let bytes: Vec<u8> = chunk.iter().flat_map(|v| v.to_le_bytes()).collect();
            buckets.entry((band, xxh3_64(&bytes))).or_default().push(i);
        }
    }
    let mut pairs = BTreeSet::new();
    for members in buckets.values() {
        for (x, &i) in members.iter().enumerate() {
            for &j in &members[x + 1..] {
                pairs.insert((i, j));
            }
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupOutput {
    pub kept: Vec<Document>,
    /// Duplicate clusters (size ≥ 2), each in input order, ordered by first member.
    pub clusters: Vec<Vec<String>>,
}

pub fn dedup_corpus(docs: &[Document], config: &DedupConfig, threshold: f64) -> Result<DedupOutput> {
    config.validate()?;
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid("threshold", format!("{threshold} outside (0, 1]")));
    }
    let hasher = MinHasher::new(config);
    let sigs = docs
        .par_iter()
        .map(|d| hasher.signature(&shingles(&d.text, config.shingle_size)?))
        .collect::<Result<Vec<_>>>()?;

    let mut parent: Vec<usize> = (0..docs.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, j) in candidate_pairs(&sigs, config) {
        if sigs[i].estimate(&sigs[j])? >= threshold {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            // smaller index stays root so the root is the first member
            if ri != rj {
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }

    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..docs.len() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let kept = docs
        .iter()
        .enumerate()
        .filter(|&(i, _)| find(&mut parent, i) == i)
        .map(|(_, d)| d.clone())
        .collect();
    let mut clusters: Vec<(usize, Vec<String>)> = groups
        .into_iter()
        .filter(|(_, m)| m.len() > 1)
        .map(|(r, m)| (r, m.into_iter().map(|i| docs[i].id.clone()).collect()))
        .collect();
    clusters.sort_by_key(|(r, _)| *r);
    Ok(DedupOutput {
        kept,
        clusters: clusters.into_iter().map(|(_, m)| m).collect(),
    })
}

/// One cluster per line, member ids separated by tabs.
pub fn write_cluster_report(clusters: &[Vec<String>], mut w: impl Write) -> std::io::Result<()> {
    for c in clusters {
        writeln!(w, "{}", c.join("\t"))?;
    }
    Ok(())
}
