//! Stage runner and planning front end.
//!
//! A run reads corpus shards, applies the configured stages in the fixed
//! order dedup → filter → decontam → tokenize → pack, and writes each
//! stage's output plus a `manifest.json` describing counts and SHA-256
//! hashes. Wall-clock timings go to `timings.json` so the manifest itself
//! stays reproducible.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{self, Document};
use crate::curriculum::{self, PhasePlan, PlanOptions, Stage};
use crate::decontam::{self, BuildOptions};
use crate::dedup::{self, DedupConfig};
use crate::error::{Error, Result};
use crate::filter::{self, FilterReport, FilterRule, RuleSet};
use crate::initplan::{mup_plan, sigma_base, InitPlan, ModelShape};
use crate::packing::{self, PackConfig, Reservoir, SegmentKind, TokenizedDoc};
use crate::schedule::{self, ScheduleSpec, DEFAULT_BATCH_TOKENS};
use crate::tokenizer::BpeModel;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Dedup,
    Filter,
    Decontam,
    Tokenize,
    Pack,
}

impl StageName {
    pub const ALL: [StageName; 5] = [
        StageName::Dedup,
        StageName::Filter,
        StageName::Decontam,
        StageName::Tokenize,
        StageName::Pack,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Dedup => "dedup",
            StageName::Filter => "filter",
            StageName::Decontam => "decontam",
            StageName::Tokenize => "tokenize",
            StageName::Pack => "pack",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    /// Vocab and merges files; both absent means the bare byte-level model.
    pub vocab: Option<PathBuf>,
    pub merges: Option<PathBuf>,
    pub dropout: f64,
    pub digit_split: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            vocab: None,
            merges: None,
            dropout: 0.0,
            digit_split: true,
        }
    }
}

impl TokenizerConfig {
    pub fn load(&self) -> Result<BpeModel> {
        let model = match (&self.vocab, &self.merges) {
            (Some(v), Some(m)) => BpeModel::load(v, m)?,
            (None, None) => BpeModel::byte_level::<&str>(&[], &[])?,
            _ => return Err(Error::invalid("tokenizer", "vocab and merges must be given together")),
        };
        Ok(model.with_dropout(self.dropout)?.with_digit_split(self.digit_split))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupParams {
    pub threshold: f64,
    pub num_permutations: usize,
    pub bands: usize,
    pub rows: usize,
    pub shingle_size: usize,
}

impl Default for DedupParams {
    fn default() -> Self {
        let d = DedupConfig::default();
        DedupParams {
            threshold: 0.8,
            num_permutations: d.num_permutations,
            bands: d.bands,
            rows: d.rows,
            shingle_size: d.shingle_size,
        }
    }
}

impl DedupParams {
    pub fn to_config(&self, seed: u64) -> DedupConfig {
        DedupConfig {
            num_permutations: self.num_permutations,
            bands: self.bands,
            rows: self.rows,
            shingle_size: self.shingle_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    /// Inline rules; `None` selects the default rule set.
    pub rules: Option<Vec<FilterRule>>,
}

impl FilterParams {
    pub fn rule_set(&self) -> Result<RuleSet> {
        match &self.rules {
            Some(r) => RuleSet::new(r.clone()),
            None => Ok(RuleSet::defaults()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecontamParams {
    /// Benchmark corpora in the record format.
    pub benchmarks: Vec<PathBuf>,
    pub n: usize,
    pub max_occurrences: u64,
    pub threshold: f64,
}

impl Default for DecontamParams {
    fn default() -> Self {
        DecontamParams {
            benchmarks: Vec::new(),
            n: decontam::DEFAULT_N,
            max_occurrences: decontam::DEFAULT_MAX_OCCURRENCES,
            threshold: decontam::DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PackParams {
    pub seq_len: usize,
    pub pad_id: u32,
    /// Keep instruction documents whole and back-fill the gaps.
    pub instruction_aware: bool,
    /// Corpus whose tokens back-fill padding; none means pads stay.
    pub reservoir: Option<PathBuf>,
}

impl Default for PackParams {
    fn default() -> Self {
        PackParams {
            seq_len: 4096,
            pad_id: 0,
            instruction_aware: true,
            reservoir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub input: Vec<PathBuf>,
    pub output: PathBuf,
    pub stages: Vec<StageName>,
    pub tokenizer: TokenizerConfig,
    pub dedup: DedupParams,
    pub filter: FilterParams,
    pub decontam: DecontamParams,
    pub pack: PackParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            input: Vec::new(),
            output: PathBuf::from("out"),
            stages: StageName::ALL.to_vec(),
            tokenizer: TokenizerConfig::default(),
            dedup: DedupParams::default(),
            filter: FilterParams::default(),
            decontam: DecontamParams::default(),
            pack: PackParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid("pipeline config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::invalid("stages", "at least one stage is required"));
        }
        if !self.stages.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid(
                "stages",
                "stages must be distinct and follow dedup, filter, decontam, tokenize, pack",
            ));
        }
        if self.stages.contains(&StageName::Pack) && !self.stages.contains(&StageName::Tokenize) {
            return Err(Error::invalid("stages", "pack needs tokenize"));
        }
        if self.stages.contains(&StageName::Decontam) && self.decontam.benchmarks.is_empty() {
            return Err(Error::invalid("decontam", "no benchmark files given"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub stage: String,
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupSummary {
    pub input_count: u64,
    pub kept_count: u64,
    pub removed_count: u64,
    pub cluster_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecontamSummary {
    pub input_count: u64,
    pub kept_count: u64,
    pub removed_count: u64,
    pub contamination_grams: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizeSummary {
    pub doc_count: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackSummary {
    pub sequences: u64,
    pub seq_len: u64,
    pub document_tokens: u64,
    pub backfill_tokens: u64,
    pub pad_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: RunStatus,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub seed: u64,
    pub stages: Vec<StageName>,
    pub inputs: Vec<Artifact>,
    pub input_count: u64,
    pub output_count: u64,
    pub removed_count: u64,
    pub dedup: Option<DedupSummary>,
    pub filter: Option<FilterReport>,
    pub decontam: Option<DecontamSummary>,
    pub tokenize: Option<TokenizeSummary>,
    pub pack: Option<PackSummary>,
    /// Outputs of completed stages; on failure these are partial.
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    fn new(cfg: &PipelineConfig) -> Self {
        RunManifest {
            status: RunStatus::Ok,
            failed_stage: None,
            error: None,
            seed: cfg.seed,
            stages: cfg.stages.clone(),
            inputs: Vec::new(),
            input_count: 0,
            output_count: 0,
            removed_count: 0,
            dedup: None,
            filter: None,
            decontam: None,
            tokenize: None,
            pack: None,
            artifacts: Vec::new(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn describe(stage: &str, path: String, bytes: &[u8]) -> Artifact {
    Artifact {
        stage: stage.to_string(),
        path,
        bytes: bytes.len() as u64,
        sha256: sha256_hex(bytes),
    }
}

fn jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).expect("serializable");
        out.push(b'\n');
    }
    out
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    manifest: RunManifest,
    timings: Vec<(String, f64)>,
}

impl Run<'_> {
    fn write(&mut self, stage: &str, name: &str, bytes: Vec<u8>) -> Result<()> {
        let path = self.cfg.output.join(name);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.artifacts.push(describe(stage, name.to_string(), &bytes));
        Ok(())
    }

    fn records(&mut self, stage: &str, name: &str, docs: &[Document]) -> Result<()> {
        self.write(stage, name, corpus::to_bytes(docs))
    }

    fn stage(&mut self, name: StageName, docs: Vec<Document>, model: &BpeModel) -> Result<(Vec<Document>, Option<Vec<TokenizedDoc>>)> {
        let st = name.as_str();
        let cfg = self.cfg;
        match name {
            StageName::Dedup => {
                let out = dedup::dedup_corpus(&docs, &cfg.dedup.to_config(cfg.seed), cfg.dedup.threshold)?;
                let mut report = Vec::new();
                dedup::write_cluster_report(&out.clusters, &mut report).map_err(|e| Error::io("clusters.tsv", e))?;
                self.records(st, "dedup.jsonl", &out.kept)?;
                self.write(st, "clusters.tsv", report)?;
                self.manifest.dedup = Some(DedupSummary {
                    input_count: docs.len() as u64,
                    kept_count: out.kept.len() as u64,
                    removed_count: (docs.len() - out.kept.len()) as u64,
                    cluster_count: out.clusters.len() as u64,
                });
                Ok((out.kept, None))
            }
            StageName::Filter => {
                let rules = cfg.filter.rule_set()?;
                let docs = if rules.needs_token_counts() {
                    docs.into_par_iter()
                        .map(|d| match d.token_count {
                            Some(_) => d,
                            None => {
                                let n = model.count_tokens(&d.text) as u64;
                                d.with_tokens(n)
                            }
                        })
                        .collect()
                } else {
                    docs
                };
                let out = filter::run_filters(&docs, &rules)?;
                self.records(st, "filter.jsonl", &out.kept)?;
                self.write(st, "filter_audit.jsonl", jsonl(&out.audit))?;
                self.manifest.filter = Some(out.report);
                Ok((out.kept, None))
            }
            StageName::Decontam => {
                let bench = corpus::ingest_shards(&cfg.decontam.benchmarks)?;
                let opts = BuildOptions {
                    n: cfg.decontam.n,
                    max_occurrences: cfg.decontam.max_occurrences,
                    hash_seed: cfg.seed,
                    check_collisions: false,
                };
                let set = decontam::build_with(&bench, model, &opts)?;
                let out = decontam::decontaminate(&docs, &set, model, cfg.decontam.threshold)?;
                self.records(st, "decontam.jsonl", &out.kept)?;
                self.write(st, "decontam_removed.jsonl", jsonl(&out.removed))?;
                self.write(st, "contamination.dctm", set.to_bytes())?;
                self.manifest.decontam = Some(DecontamSummary {
                    input_count: docs.len() as u64,
                    kept_count: out.kept.len() as u64,
                    removed_count: out.removed.len() as u64,
                    contamination_grams: set.len() as u64,
                });
                Ok((out.kept, None))
            }
            StageName::Tokenize => {
                let encoded: Vec<Vec<u32>> = docs
                    .par_iter()
                    .map(|d| model.encode_seeded(&d.text, cfg.seed, &d.id).token_ids)
                    .collect();
                let mut docs = docs;
                let mut tokens = Vec::with_capacity(docs.len());
                for (d, ids) in docs.iter_mut().zip(encoded) {
                    d.token_count = Some(ids.len() as u64);
                    tokens.push(TokenizedDoc::new(d.id.clone(), ids, d.is_instruction));
                }
                self.records(st, "tokenize.jsonl", &docs)?;
                self.write(st, "tokens.jsonl", jsonl(&tokens))?;
                self.manifest.tokenize = Some(TokenizeSummary {
                    doc_count: docs.len() as u64,
                    total_tokens: tokens.iter().map(|t| t.tokens.len() as u64).sum(),
                });
                Ok((docs, Some(tokens)))
            }
            StageName::Pack => unreachable!("pack consumes tokens"),
        }
    }

    fn pack(&mut self, tokens: &[TokenizedDoc], model: &BpeModel) -> Result<()> {
        let p = &self.cfg.pack;
        let pc = PackConfig {
            seq_len: p.seq_len,
            pad_id: p.pad_id,
        };
        let seqs = if p.instruction_aware {
            let mut reservoir = match &p.reservoir {
                Some(path) => {
                    let docs = corpus::ingest(path)?;
                    Reservoir::new(docs.iter().map(|d| {
                        let ids = model.encode_seeded(&d.text, self.cfg.seed, &d.id).token_ids;
                        TokenizedDoc::new(d.id.clone(), ids, false)
                    }))
                }
                None => Reservoir::default(),
            };
            packing::pack_instruction_aware(tokens, &pc, &mut reservoir)?
        } else {
            packing::pack_pretrain(tokens, &pc)?
        };
        let mut summary = PackSummary {
            sequences: seqs.len() as u64,
            seq_len: p.seq_len as u64,
            ..PackSummary::default()
        };
        for seg in seqs.iter().flat_map(|s| &s.segments) {
            let n = seg.len() as u64;
            match seg.kind {
                SegmentKind::Pretrain | SegmentKind::Instruction => summary.document_tokens += n,
                SegmentKind::Backfill => summary.backfill_tokens += n,
                SegmentKind::Pad => summary.pad_tokens += n,
            }
        }
        self.write("pack", "packed.bin", packing::to_bytes(&seqs, p.seq_len))?;
        self.manifest.pack = Some(summary);
        Ok(())
    }

    fn execute(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let t = Instant::now();
        let mut docs = Vec::new();
        for path in &cfg.input {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            self.manifest.inputs.push(describe("input", path.display().to_string(), &bytes));
        }
        if !cfg.input.is_empty() {
            docs = corpus::ingest_shards(&cfg.input)?;
        }
        self.manifest.input_count = docs.len() as u64;
        let model = cfg.tokenizer.load()?;
        self.timings.push(("ingest".into(), t.elapsed().as_secs_f64()));

        let mut tokens: Option<Vec<TokenizedDoc>> = None;
        for &name in &cfg.stages {
            let t = Instant::now();
            let res = if name == StageName::Pack {
                let toks = tokens.take().unwrap_or_default();
                self.pack(&toks, &model)
            } else {
                self.stage(name, std::mem::take(&mut docs), &model).map(|(d, tk)| {
                    docs = d;
                    if tk.is_some() {
                        tokens = tk;
                    }
                })
            };
            res.map_err(|e| Error::Stage {
                stage: name.as_str().to_string(),
                source: Box::new(e),
            })?;
            self.timings.push((name.as_str().to_string(), t.elapsed().as_secs_f64()));
        }
        self.manifest.output_count = docs.len() as u64;
        self.manifest.removed_count = self.manifest.input_count - self.manifest.output_count;
        Ok(())
    }
}

/// Runs the pipeline and writes the manifest. A failing stage still
/// writes a manifest with `status = failed` before the error is returned.
pub fn run(cfg: &PipelineConfig) -> Result<RunManifest> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    let mut run = Run {
        cfg,
        manifest: RunManifest::new(cfg),
        timings: Vec::new(),
    };
    let result = run.execute();
    if let Err(e) = &result {
        run.manifest.status = RunStatus::Failed;
        if let Error::Stage { stage, .. } = e {
            run.manifest.failed_stage = Some(stage.clone());
        }
        run.manifest.error = Some(e.to_string());
    }
    let mpath = cfg.output.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&run.manifest).expect("serializable") + "\n";
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    let tpath = cfg.output.join(TIMINGS_FILE);
    let timings: serde_json::Map<String, serde_json::Value> =
        run.timings.into_iter().map(|(k, v)| (k, v.into())).collect();
    fs::write(&tpath, serde_json::to_string_pretty(&timings).expect("serializable"))
        .map_err(|e| Error::io(&tpath, e))?;
    result.map(|_| run.manifest)
}

/// Curriculum parameters in units of `token_unit` tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumParams {
    pub total: u64,
    pub warmup: u64,
    pub anneal_ratio: f64,
    pub phase_size: u64,
    pub token_unit: u64,
    pub cap_points: f64,
}

impl Default for CurriculumParams {
    fn default() -> Self {
        CurriculumParams {
            total: 1080,
            warmup: 10,
            anneal_ratio: 0.0808,
            phase_size: 40,
            token_unit: 1_000_000_000,
            cap_points: curriculum::DEFAULT_CAP_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitParams {
    pub target: String,
    pub proxy: String,
    pub eta_base: f64,
    /// Defaults to `sigma_base` of the proxy width.
    pub sigma: Option<f64>,
}

impl Default for InitParams {
    fn default() -> Self {
        InitParams {
            target: "target-2.4b".into(),
            proxy: "proxy-0.05b".into(),
            eta_base: 0.01,
            sigma: None,
        }
    }
}

impl InitParams {
    pub fn plan(&self) -> Result<InitPlan> {
        let preset = |n: &str| ModelShape::preset(n).ok_or_else(|| Error::invalid("shape", format!("unknown preset {n:?}")));
        let (target, proxy) = (preset(&self.target)?, preset(&self.proxy)?);
        mup_plan(&target, &proxy, self.eta_base, self.sigma.unwrap_or(sigma_base(proxy.d_model)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub curriculum: CurriculumParams,
    /// `None` derives step counts from the stage budgets.
    pub schedule: Option<ScheduleSpec>,
    pub batch_tokens: u64,
    /// Relative tolerance when comparing stage tokens to schedule steps.
    pub tolerance: f64,
    pub lr_stride: u64,
    pub init: InitParams,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            curriculum: CurriculumParams::default(),
            schedule: None,
            batch_tokens: DEFAULT_BATCH_TOKENS,
            tolerance: 0.01,
            lr_stride: 100,
            init: InitParams::default(),
        }
    }
}

impl PlanConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid("plan config", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanArtifacts {
    pub phases: PhasePlan,
    pub schedule: ScheduleSpec,
    pub lr_csv: String,
    pub init: InitPlan,
}

/// Step counts for a budget: the stock schedule for the stock budget,
/// otherwise each stage rounded up to whole steps with the stock share of
/// the anneal span held at the floor.
pub fn derive_schedule(c: &CurriculumParams, batch_tokens: u64) -> Result<ScheduleSpec> {
    if *c == CurriculumParams::default() && batch_tokens == DEFAULT_BATCH_TOKENS {
        return Ok(ScheduleSpec::default());
    }
    let b = curriculum::stage_budgets(c.total, c.warmup, c.anneal_ratio, c.phase_size)?;
    let steps = |t: u64| schedule::tokens_to_steps(t * c.token_unit, batch_tokens);
    let anneal_all = steps(b.anneal_tokens);
    let stock = ScheduleSpec::default();
    let tail = (anneal_all as f64 * stock.tail_constant_steps as f64
        / (stock.anneal_steps + stock.tail_constant_steps) as f64)
        .round() as u64;
    let (w, s) = (steps(b.warmup_tokens), steps(b.stable_tokens));
    Ok(ScheduleSpec {
        warmup_steps: w,
        total_steps: w + s + anneal_all,
        anneal_steps: anneal_all - tail,
        tail_constant_steps: tail,
        ..stock
    })
}

fn check_stage(stage: Stage, planned: u64, scheduled: u64, tol: f64) -> Result<()> {
    let ok = if planned == 0 {
        scheduled == 0
    } else {
        (scheduled as f64 - planned as f64).abs() <= tol * planned as f64
    };
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(
            "plan",
            format!(
                "{} stage has {planned} tokens in the curriculum but {scheduled} in the schedule",
                stage.as_str()
            ),
        ))
    }
}

/// Builds the phase plan, LR schedule and init plan and checks that the
/// curriculum and the schedule agree on each stage's token count.
pub fn plan(cfg: &PlanConfig) -> Result<PlanArtifacts> {
    let c = &cfg.curriculum;
    let budget = curriculum::stage_budgets(c.total, c.warmup, c.anneal_ratio, c.phase_size)?;
    let opts = PlanOptions {
        cap_points: c.cap_points,
        ..PlanOptions::default()
    };
    let phases = curriculum::plan_phases_with(
        &budget,
        &curriculum::default_start_mix(),
        &curriculum::default_targets(),
        &[],
        &opts,
    )?;
    let spec = match cfg.schedule {
        Some(s) => s,
        None => derive_schedule(c, cfg.batch_tokens)?,
    };
    spec.validate()?;
    let unit = c.token_unit;
    let bt = cfg.batch_tokens;
    check_stage(Stage::Warmup, budget.warmup_tokens * unit, spec.warmup_steps * bt, cfg.tolerance)?;
    check_stage(Stage::Stable, budget.stable_tokens * unit, spec.stable_steps() * bt, cfg.tolerance)?;
    check_stage(
        Stage::Annealing,
        budget.anneal_tokens * unit,
        (spec.anneal_steps + spec.tail_constant_steps) * bt,
        cfg.tolerance,
    )?;
    let lr_csv = schedule::lr_curve_csv(&spec, cfg.lr_stride)?;
    Ok(PlanArtifacts {
        phases,
        schedule: spec,
        lr_csv,
        init: cfg.init.plan()?,
    })
}

/// Writes `phases.json`, `phases.md`, `lr.csv` and `init.json` into `dir`.
pub fn write_plan(a: &PlanArtifacts, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("phases.json", serde_json::to_string_pretty(&a.phases).expect("serializable")),
        ("phases.md", curriculum::phase_table(&a.phases)),
        ("lr.csv", a.lr_csv.clone()),
        ("init.json", serde_json::to_string_pretty(&a.init).expect("serializable")),
    ];
    let mut out = Vec::new();
    for (name, text) in files {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        out.push(p);
    }
    Ok(out)
}
