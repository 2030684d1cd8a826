//! `ptk`: command-line front end for the pre-training data and planning toolkit.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pretrain_core::corpus;
use pretrain_core::filter::RuleSet;
use pretrain_core::pipeline::{self, PipelineConfig, PlanConfig, StageName};
use pretrain_core::stability::{run_ablation, AblationManifest};
use pretrain_core::{Error, Result};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "ptk", version, about = "Corpus processing, training plans and stability simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Flags override the config file, which
/// overrides built-in defaults.
#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Input JSONL shard, `.gz` allowed; repeatable.
    #[arg(long, global = true)]
    input: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
struct TokenizerArgs {
    /// Vocabulary file (`token<TAB>id` per line).
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Merge list (`left right` per line, in priority order).
    #[arg(long)]
    merges: Option<PathBuf>,
    /// BPE-dropout rate.
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the configured stages in order and write a run manifest.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Near-duplicate removal with MinHash LSH.
    Dedup {
        #[command(flatten)]
        common: Common,
        /// Jaccard threshold for confirming a candidate pair.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Heuristic and score-based filtering.
    Filter {
        #[command(flatten)]
        common: Common,
        /// TOML file with `[[rules]]` tables replacing the configured rules.
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Remove documents overlapping benchmark n-grams.
    Decontam {
        #[command(flatten)]
        common: Common,
        /// Benchmark JSONL file; repeatable.
        #[arg(long = "benchmark")]
        benchmarks: Vec<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        ngram: Option<usize>,
    },
    /// Encode documents with the BPE tokenizer.
    Tokenize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tokenizer: TokenizerArgs,
    },
    /// Tokenize, then pack into fixed-length sequences.
    Pack {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tokenizer: TokenizerArgs,
        #[arg(long)]
        seq_len: Option<usize>,
        /// Pretraining corpus used in place of padding.
        #[arg(long)]
        reservoir: Option<PathBuf>,
        /// Pack greedily without keeping instruction documents whole.
        #[arg(long)]
        plain: bool,
    },
    /// Curriculum, LR curve and init plan, cross-checked.
    Plan {
        #[command(flatten)]
        common: Common,
    },
    /// Phase plan and composition table.
    PlanCurriculum {
        #[command(flatten)]
        common: Common,
    },
    /// Learning-rate curve as CSV.
    PlanSchedule {
        #[command(flatten)]
        common: Common,
    },
    /// Initialization and learning-rate plan.
    PlanInit {
        #[command(flatten)]
        common: Common,
    },
    /// Forward-pass stability simulation over the configured variants.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Token-weighted domain composition of a corpus.
    Stats {
        #[command(flatten)]
        common: Common,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn unused(common: &Common, cmd: &str, seed: bool, input: bool) -> Result<()> {
    if seed && common.seed.is_some() {
        return Err(Error::invalid("--seed", format!("{cmd} is deterministic and takes no seed")));
    }
    if input && !common.input.is_empty() {
        return Err(Error::invalid("--input", format!("{cmd} reads no corpus input")));
    }
    Ok(())
}

fn pipeline_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::from_toml(&read(p)?)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if !common.input.is_empty() {
        cfg.input = common.input.clone();
    }
    if let Some(o) = &common.output {
        cfg.output = o.clone();
    }
    if cfg.input.is_empty() {
        return Err(Error::invalid("--input", "no input files given"));
    }
    Ok(cfg)
}

fn apply_tokenizer(cfg: &mut PipelineConfig, t: &TokenizerArgs) {
    if t.vocab.is_some() {
        cfg.tokenizer.vocab = t.vocab.clone();
    }
    if t.merges.is_some() {
        cfg.tokenizer.merges = t.merges.clone();
    }
    if let Some(d) = t.dropout {
        cfg.tokenizer.dropout = d;
    }
}

fn run_stages(mut cfg: PipelineConfig, stages: Option<Vec<StageName>>) -> Result<String> {
    if let Some(s) = stages {
        cfg.stages = s;
    }
    let manifest = pipeline::run(&cfg)?;
    Ok(to_json(&manifest))
}

fn plan_config(common: &Common) -> Result<(PlanConfig, PathBuf)> {
    unused(common, "planning", true, true)?;
    let cfg = match &common.config {
        Some(p) => PlanConfig::from_toml(&read(p)?)?,
        None => PlanConfig::default(),
    };
    let out = common
        .output
        .clone()
        .ok_or_else(|| Error::invalid("--output", "an output directory is required"))?;
    Ok((cfg, out))
}

/// Writes `files` under `dir` and reports their paths.
fn emit(dir: &Path, files: &[(&str, String)]) -> Result<String> {
    let mut written = Vec::new();
    for (name, text) in files {
        let p = dir.join(name);
        write(&p, text)?;
        written.push(p);
    }
    Ok(to_json(&written))
}

const DEFAULT_SWEEP: &str = r#"
[[variant]]
name = "baseline"

[[variant]]
name = "scaled"
init = "scaled"
"#;

fn simulate(common: &Common) -> Result<String> {
    unused(common, "simulate", false, true)?;
    let mut m = match &common.config {
        Some(p) => AblationManifest::from_toml(&read(p)?)?,
        None => AblationManifest::from_toml(DEFAULT_SWEEP)?,
    };
    if m.variants.is_empty() {
        m.variants = AblationManifest::from_toml(DEFAULT_SWEEP)?.variants;
    }
    if let Some(s) = common.seed {
        m.seed = s;
    }
    let results = run_ablation(&m)?;
    let summary: Vec<_> = results.iter().map(|(r, _)| r).collect();
    if let Some(dir) = &common.output {
        let mut files = vec![("results.json".to_string(), to_json(&summary))];
        for (r, trace) in &results {
            files.push((format!("trace-{}.csv", r.name), trace.to_csv()));
        }
        let refs: Vec<(&str, String)> = files.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
        emit(dir, &refs)?;
    }
    Ok(to_json(&summary))
}

fn stats(common: &Common) -> Result<String> {
    unused(common, "stats", true, false)?;
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::from_toml(&read(p)?)?,
        None => PipelineConfig::default(),
    };
    if !common.input.is_empty() {
        cfg.input = common.input.clone();
    }
    if cfg.input.is_empty() {
        return Err(Error::invalid("--input", "no input files given"));
    }
    let mut docs = corpus::ingest_shards(&cfg.input)?;
    if docs.iter().any(|d| d.token_count.is_none()) {
        let model = cfg.tokenizer.load()?;
        for d in docs.iter_mut().filter(|d| d.token_count.is_none()) {
            d.token_count = Some(model.count_tokens(&d.text) as u64);
        }
    }
    let s = to_json(&corpus::stats(&docs)?);
    if let Some(dir) = &common.output {
        write(&dir.join("stats.json"), &s)?;
    }
    Ok(s)
}

fn execute(cmd: Command) -> Result<String> {
    match cmd {
        Command::Run { common } => run_stages(pipeline_config(&common)?, None),
        Command::Dedup { common, threshold } => {
            let mut cfg = pipeline_config(&common)?;
            if let Some(t) = threshold {
                cfg.dedup.threshold = t;
            }
            run_stages(cfg, Some(vec![StageName::Dedup]))
        }
        Command::Filter { common, rules } => {
            let mut cfg = pipeline_config(&common)?;
            if let Some(p) = rules {
                cfg.filter.rules = Some(RuleSet::from_toml(&read(&p)?)?.rules().to_vec());
            }
            run_stages(cfg, Some(vec![StageName::Filter]))
        }
        Command::Decontam {
            common,
            benchmarks,
            threshold,
            ngram,
        } => {
            let mut cfg = pipeline_config(&common)?;
            if !benchmarks.is_empty() {
                cfg.decontam.benchmarks = benchmarks;
            }
            if let Some(t) = threshold {
                cfg.decontam.threshold = t;
            }
            if let Some(n) = ngram {
                cfg.decontam.n = n;
            }
            run_stages(cfg, Some(vec![StageName::Decontam]))
        }
        Command::Tokenize { common, tokenizer } => {
            let mut cfg = pipeline_config(&common)?;
            apply_tokenizer(&mut cfg, &tokenizer);
            run_stages(cfg, Some(vec![StageName::Tokenize]))
        }
        Command::Pack {
            common,
            tokenizer,
            seq_len,
            reservoir,
            plain,
        } => {
            let mut cfg = pipeline_config(&common)?;
            apply_tokenizer(&mut cfg, &tokenizer);
            if let Some(l) = seq_len {
                cfg.pack.seq_len = l;
            }
            if reservoir.is_some() {
                cfg.pack.reservoir = reservoir;
            }
            if plain {
                cfg.pack.instruction_aware = false;
            }
            run_stages(cfg, Some(vec![StageName::Tokenize, StageName::Pack]))
        }
        Command::Plan { common } => {
            let (cfg, out) = plan_config(&common)?;
            let a = pipeline::plan(&cfg)?;
            Ok(to_json(&pipeline::write_plan(&a, &out)?))
        }
        Command::PlanCurriculum { common } => {
            let (cfg, out) = plan_config(&common)?;
            let a = pipeline::plan(&cfg)?;
            emit(
                &out,
                &[
                    ("phases.json", to_json(&a.phases)),
                    ("phases.md", pretrain_core::curriculum::phase_table(&a.phases)),
                ],
            )
        }
        Command::PlanSchedule { common } => {
            let (cfg, out) = plan_config(&common)?;
            let a = pipeline::plan(&cfg)?;
            emit(&out, &[("lr.csv", a.lr_csv), ("schedule.json", to_json(&a.schedule))])
        }
        Command::PlanInit { common } => {
            let (cfg, out) = plan_config(&common)?;
            let init = cfg.init.plan()?;
            emit(&out, &[("init.json", to_json(&init))])
        }
        Command::Simulate { common } => simulate(&common),
        Command::Stats { common } => stats(&common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
