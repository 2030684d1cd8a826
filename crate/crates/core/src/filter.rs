//! Per-document heuristic and score-based filtering.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Domain};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterRule {
    /// Remove documents with fewer than `min` tokens.
    MinTokens { min: u64 },
    /// Remove code whose average line length exceeds `max_avg_line_len` or
    /// whose alphabetic-character ratio is below `min_alpha_ratio`.
    CodeMetrics {
        #[serde(default = "default_max_avg_line_len")]
        max_avg_line_len: f64,
        #[serde(default = "default_min_alpha_ratio")]
        min_alpha_ratio: f64,
        #[serde(default = "default_code_domains")]
        domains: Vec<Domain>,
    },
    /// Remove synthetic responses without an answer marker. When
    /// `source_pattern` is set, only documents whose source matches it are checked.
    SyntheticAnswer {
        #[serde(default = "default_answer_pattern")]
        pattern: String,
        #[serde(default = "default_synthetic_domains")]
        domains: Vec<Domain>,
        #[serde(default = "default_answer_source")]
        source_pattern: Option<String>,
    },
    /// Remove synthetic text where the most frequent `window`-character
    /// substring covers more than `max_coverage` of the text.
    SyntheticRepetition {
        #[serde(default = "default_window")]
        window: usize,
        #[serde(default = "default_max_coverage")]
        max_coverage: f64,
        #[serde(default = "default_synthetic_domains")]
        domains: Vec<Domain>,
    },
    /// Keep documents whose score lies in `min..=max`; unscored documents pass.
    ScoreGate {
        #[serde(default = "default_score_min")]
        min: u8,
        #[serde(default = "default_score_max")]
        max: u8,
    },
}

fn default_max_avg_line_len() -> f64 {
    100.0
}
fn default_min_alpha_ratio() -> f64 {
    0.25
}
fn default_code_domains() -> Vec<Domain> {
    vec![Domain::Code]
}
fn default_answer_pattern() -> String {
    r"\\boxed\{|\$box\{".to_string()
}
fn default_synthetic_domains() -> Vec<Domain> {
    vec![Domain::Synthetic]
}
fn default_answer_source() -> Option<String> {
    Some("math".to_string())
}
fn default_window() -> usize {
    20
}
fn default_max_coverage() -> f64 {
    0.3
}
fn default_score_min() -> u8 {
    3
}
fn default_score_max() -> u8 {
    5
}

impl FilterRule {
    pub fn name(&self) -> &'static str {
        match self {
            FilterRule::MinTokens { .. } => "min_tokens",
            FilterRule::CodeMetrics { .. } => "code_metrics",
            FilterRule::SyntheticAnswer { .. } => "synthetic_answer",
            FilterRule::SyntheticRepetition { .. } => "synthetic_repetition",
            FilterRule::ScoreGate { .. } => "score_gate",
        }
    }

    pub fn code_metrics() -> Self {
        FilterRule::CodeMetrics {
            max_avg_line_len: default_max_avg_line_len(),
            min_alpha_ratio: default_min_alpha_ratio(),
            domains: default_code_domains(),
        }
    }

    pub fn synthetic_answer() -> Self {
        FilterRule::SyntheticAnswer {
            pattern: default_answer_pattern(),
            domains: default_synthetic_domains(),
            source_pattern: default_answer_source(),
        }
    }

    pub fn synthetic_repetition() -> Self {
        FilterRule::SyntheticRepetition {
            window: default_window(),
            max_coverage: default_max_coverage(),
            domains: default_synthetic_domains(),
        }
    }

    pub fn score_gate() -> Self {
        FilterRule::ScoreGate { min: 3, max: 5 }
    }

    pub fn defaults() -> Vec<FilterRule> {
        vec![
            FilterRule::MinTokens { min: 20 },
            FilterRule::code_metrics(),
            FilterRule::synthetic_answer(),
            FilterRule::synthetic_repetition(),
            FilterRule::score_gate(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Keep,
    Remove { rule: String, reason: String },
}

impl Decision {
    pub fn is_keep(&self) -> bool {
        matches!(self, Decision::Keep)
    }
}

#[derive(Debug, Clone)]
enum Compiled {
    MinTokens(u64),
    Code {
        max_avg_line_len: f64,
        min_alpha_ratio: f64,
        domains: Vec<Domain>,
    },
    Answer {
        pattern: Regex,
        domains: Vec<Domain>,
        source: Option<Regex>,
    },
    Repetition {
        window: usize,
        max_coverage: f64,
        domains: Vec<Domain>,
    },
    Score(u8, u8),
}

/// Validated rules with compiled patterns.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<FilterRule>,
    compiled: Vec<Compiled>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesFile {
    #[serde(default)]
    rules: Vec<FilterRule>,
}

fn check_nonneg(what: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(what, format!("{v} must be a finite nonnegative number")))
    }
}

fn compile_regex(what: &'static str, p: &str) -> Result<Regex> {
    Regex::new(p).map_err(|e| Error::invalid(what, e.to_string()))
}

impl RuleSet {
    pub fn new(rules: Vec<FilterRule>) -> Result<Self> {
        let mut compiled = Vec::with_capacity(rules.len());
        for r in &rules {
            compiled.push(match r {
                FilterRule::MinTokens { min } => Compiled::MinTokens(*min),
                FilterRule::CodeMetrics {
                    max_avg_line_len,
                    min_alpha_ratio,
                    domains,
                } => {
                    check_nonneg("max_avg_line_len", *max_avg_line_len)?;
                    check_nonneg("min_alpha_ratio", *min_alpha_ratio)?;
                    Compiled::Code {
                        max_avg_line_len: *max_avg_line_len,
                        min_alpha_ratio: *min_alpha_ratio,
                        domains: domains.clone(),
                    }
                }
                FilterRule::SyntheticAnswer {
                    pattern,
                    domains,
                    source_pattern,
                } => Compiled::Answer {
                    pattern: compile_regex("pattern", pattern)?,
                    domains: domains.clone(),
                    source: source_pattern
                        .as_deref()
                        .map(|p| compile_regex("source_pattern", p))
                        .transpose()?,
                },
                FilterRule::SyntheticRepetition {
                    window,
                    max_coverage,
                    domains,
                } => {
                    if *window == 0 {
                        return Err(Error::invalid("window", "must be at least 1"));
                    }
                    check_nonneg("max_coverage", *max_coverage)?;
                    Compiled::Repetition {
                        window: *window,
                        max_coverage: *max_coverage,
                        domains: domains.clone(),
                    }
                }
                FilterRule::ScoreGate { min, max } => {
                    if !(1..=5).contains(min) || !(1..=5).contains(max) || min > max {
                        return Err(Error::invalid("score_gate", format!("bounds {min}..={max} outside 1..=5")));
                    }
                    Compiled::Score(*min, *max)
                }
            });
        }
        Ok(RuleSet { rules, compiled })
    }

    pub fn defaults() -> Self {
        Self::new(FilterRule::defaults()).expect("default rules are valid")
    }

    /// Parses `[[rules]]` tables, each with a `kind` key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let f: RulesFile = toml::from_str(text).map_err(|e| Error::invalid("filter rules", e.to_string()))?;
        Self::new(f.rules)
    }

    pub fn rules(&self) -> &[FilterRule] {
        &self.rules
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// True if any rule needs `token_count`.
    pub fn needs_token_counts(&self) -> bool {
        self.compiled.iter().any(|c| matches!(c, Compiled::MinTokens(_)))
    }
}

fn applies(domains: &[Domain], d: Domain) -> bool {
    domains.is_empty() || domains.contains(&d)
}

pub fn average_line_length(text: &str) -> f64 {
    let lines: Vec<&str> = text.lines().collect();
    if lines.is_empty() {
        return 0.0;
    }
    lines.iter().map(|l| l.chars().count()).sum::<usize>() as f64 / lines.len() as f64
}

pub fn alpha_ratio(text: &str) -> f64 {
    let total = text.chars().count();
    if total == 0 {
        return 0.0;
    }
    text.chars().filter(|c| c.is_alphabetic()).count() as f64 / total as f64
}

/// Share of character positions covered by occurrences of the most frequent
/// `window`-character substring. Ties go to the earliest window.
pub fn repetition_coverage(text: &str, window: usize) -> f64 {
    let chars: Vec<char> = text.chars().collect();
    if window == 0 || chars.len() < window {
        return 0.0;
    }
    let mut counts: HashMap<&[char], (usize, usize)> = HashMap::new();
    for (i, w) in chars.windows(window).enumerate() {
        counts.entry(w).or_insert((0, i)).0 += 1;
    }
    let (&top, _) = counts
        .iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .unwrap();
    let mut covered = vec![false; chars.len()];
    for (i, w) in chars.windows(window).enumerate() {
        if w == top {
            covered[i..i + window].iter_mut().for_each(|c| *c = true);
        }
    }
    covered.iter().filter(|&&c| c).count() as f64 / chars.len() as f64
}

fn check_score(doc: &Document) -> Result<Option<u8>> {
    match doc.quality_score {
        Some(s) if !(1..=5).contains(&s) => Err(Error::invalid(
            "quality_score",
            format!("document {:?} has score {s} outside 1..=5", doc.id),
        )),
        s => Ok(s),
    }
}

fn remove(rule: &str, reason: String) -> Decision {
    Decision::Remove {
        rule: rule.to_string(),
        reason,
    }
}

/// Evaluates rules in order; the first failing rule names the removal.
pub fn heuristic_filter(doc: &Document, rules: &RuleSet) -> Result<Decision> {
    for (rule, c) in rules.rules.iter().zip(&rules.compiled) {
        let name = rule.name();
        match c {
            Compiled::MinTokens(min) => {
                let n = doc.token_count.ok_or_else(|| Error::MissingField {
                    id: doc.id.clone(),
                    field: "token_count",
                })?;
                if n < *min {
                    return Ok(remove(name, format!("{n} tokens < {min}")));
                }
            }
            Compiled::Code {
                max_avg_line_len,
                min_alpha_ratio,
                domains,
            } if applies(domains, doc.domain) => {
                let avg = average_line_length(&doc.text);
                if avg > *max_avg_line_len {
                    return Ok(remove(name, format!("average line length {avg:.1} > {max_avg_line_len}")));
                }
                let alpha = alpha_ratio(&doc.text);
                if alpha < *min_alpha_ratio {
                    return Ok(remove(name, format!("alphabetic ratio {alpha:.3} < {min_alpha_ratio}")));
                }
            }
            Compiled::Answer {
                pattern,
                domains,
                source,
            } if applies(domains, doc.domain) => {
                let in_scope = source.as_ref().map_or(true, |s| s.is_match(&doc.source));
                if in_scope && !pattern.is_match(&doc.text) {
                    return Ok(remove(name, "no answer marker".to_string()));
                }
            }
            Compiled::Repetition {
                window,
                max_coverage,
                domains,
            } if applies(domains, doc.domain) => {
                let cov = repetition_coverage(&doc.text, *window);
                if cov > *max_coverage {
                    return Ok(remove(name, format!("repeated substring covers {cov:.3} > {max_coverage}")));
                }
            }
            Compiled::Score(min, max) => {
                if let Some(s) = check_score(doc)? {
                    if s < *min || s > *max {
                        return Ok(remove(name, format!("score {s} outside {min}..={max}")));
                    }
                }
            }
            _ => {}
        }
    }
    Ok(Decision::Keep)
}

/// Default quality gate: scores 1 and 2 are removed, unscored documents kept.
pub fn score_filter(doc: &Document) -> Result<Decision> {
    Ok(match check_score(doc)? {
        Some(s) if s < 3 => remove("score_gate", format!("score {s} outside 3..=5")),
        _ => Decision::Keep,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_count: u64,
    pub kept_count: u64,
    pub removed_by_rule: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub id: String,
    pub rule: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub kept: Vec<Document>,
    pub report: FilterReport,
    pub audit: Vec<AuditEntry>,
}

pub fn run_filters(docs: &[Document], rules: &RuleSet) -> Result<FilterOutput> {
    let decisions = docs
        .par_iter()
        .map(|d| heuristic_filter(d, rules))
        .collect::<Result<Vec<_>>>()?;
    let mut report = FilterReport {
        input_count: docs.len() as u64,
        kept_count: 0,
        removed_by_rule: rules.rules.iter().map(|r| (r.name().to_string(), 0)).collect(),
    };
    let mut kept = Vec::new();
    let mut audit = Vec::new();
    for (doc, decision) in docs.iter().zip(decisions) {
        match decision {
            Decision::Keep => {
                report.kept_count += 1;
                kept.push(doc.clone());
            }
            Decision::Remove { rule, reason } => {
                *report.removed_by_rule.entry(rule.clone()).or_default() += 1;
                audit.push(AuditEntry {
                    id: doc.id.clone(),
                    rule,
                    reason,
                });
            }
        }
    }
    Ok(FilterOutput { kept, report, audit })
}

pub fn write_audit(entries: &[AuditEntry], mut w: impl Write) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
