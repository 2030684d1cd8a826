//! Token-budget staging and per-phase data-mix planning.
//!
//! Token counts are plain integers in whatever unit the caller picks; the
//! defaults below are in billions of tokens.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Domain;
use crate::error::{Error, Result};

pub const DEFAULT_CAP_POINTS: f64 = 3.0;
pub const STABLE_INSTRUCTION_CAP: f64 = 0.05;
pub const ANNEAL_INSTRUCTION_FRACTION: f64 = 0.1919;
pub const ANNEAL_LONG_CONTEXT_FRACTION: f64 = 0.1421;
/// Code, math and general instruction shares of the annealing mix.
pub const ANNEAL_INSTRUCTION_BREAKDOWN: [(&str, f64); 3] = [("code", 0.11), ("math", 0.07), ("general", 0.01)];

const SUM_TOL: f64 = 1e-9;
const CAP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Warmup,
    Stable,
    Annealing,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Warmup => "warmup",
            Stage::Stable => "stable",
            Stage::Annealing => "annealing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageBudget {
    pub warmup_tokens: u64,
    pub stable_tokens: u64,
    pub anneal_tokens: u64,
    pub phase_size_tokens: u64,
    pub phase_count: u64,
}

impl StageBudget {
    pub fn total(&self) -> u64 {
        self.warmup_tokens + self.stable_tokens + self.anneal_tokens
    }
}

fn round_half_up(x: f64) -> u64 {
    x.round() as u64
}

/// Splits `total − warmup` into stable and anneal with
/// `anneal = round(anneal_ratio × stable)`.
pub fn stage_budgets(total_tokens: u64, warmup_tokens: u64, anneal_ratio: f64, phase_size: u64) -> Result<StageBudget> {
    if warmup_tokens >= total_tokens {
        return Err(Error::invalid("stage budgets", format!("warmup {warmup_tokens} ≥ total {total_tokens}")));
    }
    if !(0.0..1.0).contains(&anneal_ratio) {
        return Err(Error::invalid("anneal_ratio", format!("{anneal_ratio} outside [0, 1)")));
    }
    if phase_size == 0 {
        return Err(Error::invalid("phase_size", "must be positive"));
    }
    let rest = total_tokens - warmup_tokens;
    let f = |s: u64| s + round_half_up(anneal_ratio * s as f64);
    // f is strictly increasing, so binary search for f(s) = rest
    let (mut lo, mut hi) = (0u64, rest);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if f(mid) < rest {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    if f(lo) != rest {
        return Err(Error::invalid(
            "stage budgets",
            format!("no integer stable budget s satisfies s + round({anneal_ratio}·s) = {rest}"),
        ));
    }
    let stable = lo;
    if stable == 0 {
        return Err(Error::invalid("stage budgets", "stable stage would be empty"));
    }
    Ok(StageBudget {
        warmup_tokens,
        stable_tokens: stable,
        anneal_tokens: rest - stable,
        phase_size_tokens: phase_size,
        phase_count: total_tokens.div_ceil(phase_size),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub proportions: BTreeMap<Domain, f64>,
    #[serde(default)]
    pub instruction_fraction: f64,
    #[serde(default)]
    pub long_context_fraction: f64,
}

impl MixSpec {
    pub fn new(proportions: impl IntoIterator<Item = (Domain, f64)>) -> Result<Self> {
        let m = MixSpec {
            proportions: proportions.into_iter().collect(),
            instruction_fraction: 0.0,
            long_context_fraction: 0.0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_fractions(mut self, instruction: f64, long_context: f64) -> Result<Self> {
        self.instruction_fraction = instruction;
        self.long_context_fraction = long_context;
        self.validate()?;
        Ok(self)
    }

    pub fn get(&self, d: Domain) -> f64 {
        self.proportions.get(&d).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        for (d, &p) in &self.proportions {
            if !in_unit(p) {
                return Err(Error::invalid("mix", format!("{d} proportion {p} outside [0, 1]")));
            }
        }
        let sum: f64 = self.proportions.values().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::invalid("mix", format!("proportions sum to {sum}")));
        }
        if !in_unit(self.instruction_fraction) || !in_unit(self.long_context_fraction) {
            return Err(Error::invalid("mix", "instruction and long-context fractions must lie in [0, 1]"));
        }
        Ok(())
    }

    fn domains_with(&self, other: &MixSpec) -> Vec<Domain> {
        let mut ds: Vec<Domain> = self.proportions.keys().chain(other.proportions.keys()).copied().collect();
        ds.sort();
        ds.dedup();
        ds
    }
}

/// Stable-stage default: 60% general English, 20% code, 10% math, 10% Chinese.
pub fn default_stable_mix() -> MixSpec {
    MixSpec::new([
        (Domain::Web, 0.45),
        (Domain::GeneralKnowledge, 0.15),
        (Domain::Code, 0.20),
        (Domain::Math, 0.10),
        (Domain::Chinese, 0.10),
    ])
    .unwrap()
}

pub fn default_start_mix() -> MixSpec {
    default_stable_mix().with_fractions(0.01, 0.0).unwrap()
}

pub fn default_anneal_mix() -> MixSpec {
    MixSpec::new([
        (Domain::Web, 0.40),
        (Domain::GeneralKnowledge, 0.15),
        (Domain::Code, 0.23),
        (Domain::Math, 0.12),
        (Domain::Chinese, 0.10),
    ])
    .unwrap()
    .with_fractions(ANNEAL_INSTRUCTION_FRACTION, ANNEAL_LONG_CONTEXT_FRACTION)
    .unwrap()
}

pub fn default_targets() -> BTreeMap<Stage, MixSpec> {
    BTreeMap::from([
        (Stage::Stable, default_stable_mix().with_fractions(STABLE_INSTRUCTION_CAP, 0.0).unwrap()),
        (Stage::Annealing, default_anneal_mix()),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub domain: Domain,
    pub delta_points: f64,
}

/// Domains whose proportion moves by more than `cap_points` percentage points.
pub fn validate_shift(a: &MixSpec, b: &MixSpec, cap_points: f64) -> Vec<Violation> {
    a.domains_with(b)
        .into_iter()
        .filter_map(|d| {
            let delta = (b.get(d) - a.get(d)) * 100.0;
            (delta.abs() > cap_points + CAP_EPS).then_some(Violation {
                domain: d,
                delta_points: delta,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adjustment {
    pub phase: usize,
    pub domain: Domain,
    /// Change in proportion (0.02 = two points); other domains rescale.
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageTokens {
    pub warmup: u64,
    pub stable: u64,
    pub annealing: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub index: usize,
    pub tokens: u64,
    pub stage: Stage,
    pub stage_tokens: StageTokens,
    pub mix: MixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub budget: StageBudget,
    pub cap_points: f64,
    pub phases: Vec<Phase>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanOptions {
    pub cap_points: f64,
    pub stable_instruction_cap: f64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            cap_points: DEFAULT_CAP_POINTS,
            stable_instruction_cap: STABLE_INSTRUCTION_CAP,
        }
    }
}

fn overlap(a: (u64, u64), b: (u64, u64)) -> u64 {
    a.1.min(b.1).saturating_sub(a.0.max(b.0))
}

fn split_phases(budget: &StageBudget) -> Vec<(u64, Stage, StageTokens)> {
    let w = budget.warmup_tokens;
    let s = w + budget.stable_tokens;
    let total = budget.total();
    (0..budget.phase_count)
        .map(|i| {
            let span = (i * budget.phase_size_tokens, ((i + 1) * budget.phase_size_tokens).min(total));
            let st = StageTokens {
                warmup: overlap(span, (0, w)),
                stable: overlap(span, (w, s)),
                annealing: overlap(span, (s, total)),
            };
            // majority stage; ties go to the later stage
            let stage = [
                (st.warmup, Stage::Warmup),
                (st.stable, Stage::Stable),
                (st.annealing, Stage::Annealing),
            ]
            .into_iter()
            .max_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)))
            .unwrap()
            .1;
            (span.1 - span.0, stage, st)
        })
        .collect()
}

fn step_toward(prev: &MixSpec, target: &MixSpec, remaining: usize, cap_points: f64) -> MixSpec {
    let r = remaining.max(1) as f64;
    let domains = prev.domains_with(target);
    let deltas: Vec<f64> = domains.iter().map(|&d| (target.get(d) - prev.get(d)) / r).collect();
    let max_pts = deltas.iter().fold(0.0f64, |m, d| m.max(d.abs())) * 100.0;
    let scale = if max_pts > cap_points { cap_points / max_pts } else { 1.0 };
    let proportions = domains
        .iter()
        .zip(&deltas)
        .map(|(&d, &dx)| (d, (prev.get(d) + dx * scale).clamp(0.0, 1.0)))
        .collect();
    MixSpec {
        proportions,
        instruction_fraction: prev.instruction_fraction + (target.instruction_fraction - prev.instruction_fraction) / r,
        long_context_fraction: prev.long_context_fraction
            + (target.long_context_fraction - prev.long_context_fraction) / r,
    }
}

fn apply_adjustment(mix: &mut MixSpec, a: &Adjustment) -> Result<()> {
    let old = mix.get(a.domain);
    let new = old + a.delta;
    if !(0.0..=1.0).contains(&new) {
        return Err(Error::invalid("adjustment", format!("phase {}: {} would become {new}", a.phase, a.domain)));
    }
    let rest_old = 1.0 - old;
    let rest_new = 1.0 - new;
    if rest_old <= 0.0 && rest_new > 0.0 {
        return Err(Error::invalid("adjustment", format!("phase {}: no other domains to rescale", a.phase)));
    }
    for (d, p) in mix.proportions.iter_mut() {
        if *d != a.domain {
            *p *= rest_new / rest_old;
        }
    }
    mix.proportions.insert(a.domain, new);
    Ok(())
}

pub fn plan_phases(
    budget: &StageBudget,
    start_mix: &MixSpec,
    targets: &BTreeMap<Stage, MixSpec>,
    adjustments: &[Adjustment],
) -> Result<PhasePlan> {
    plan_phases_with(budget, start_mix, targets, adjustments, &PlanOptions::default())
}

/// Interpolates each stage linearly toward its target, reaching it at the
/// stage's last phase unless the shift cap slows it down. Every consecutive
/// pair of phases, including stage transitions, respects the cap.
pub fn plan_phases_with(
    budget: &StageBudget,
    start_mix: &MixSpec,
    targets: &BTreeMap<Stage, MixSpec>,
    adjustments: &[Adjustment],
    opts: &PlanOptions,
) -> Result<PhasePlan> {
    start_mix.validate()?;
    for t in targets.values() {
        t.validate()?;
    }
    if let Some(t) = targets.get(&Stage::Stable) {
        if t.instruction_fraction > opts.stable_instruction_cap + CAP_EPS {
            return Err(Error::invalid(
                "stable mix",
                format!("instruction fraction {} exceeds {}", t.instruction_fraction, opts.stable_instruction_cap),
            ));
        }
        if t.instruction_fraction + CAP_EPS < start_mix.instruction_fraction {
            return Err(Error::invalid("stable mix", "instruction fraction would decrease during the stable stage"));
        }
    }
    if start_mix.instruction_fraction > opts.stable_instruction_cap + CAP_EPS {
        return Err(Error::invalid("start mix", "instruction fraction above the stable-stage cap"));
    }

    let layout = split_phases(budget);
    for a in adjustments {
        if a.phase >= layout.len() {
            return Err(Error::invalid("adjustment", format!("phase {} out of range", a.phase)));
        }
    }
    let mut phases: Vec<Phase> = Vec::with_capacity(layout.len());
    let mut current_target = start_mix.clone();
    for (i, &(tokens, stage, stage_tokens)) in layout.iter().enumerate() {
        let mut mix = if i == 0 {
            start_mix.clone()
        } else {
            if let Some(t) = targets.get(&stage) {
                current_target = t.clone();
            }
            let remaining = layout[i..].iter().take_while(|p| p.1 == stage).count();
            step_toward(&phases[i - 1].mix, &current_target, remaining, opts.cap_points)
        };
        for a in adjustments.iter().filter(|a| a.phase == i) {
            apply_adjustment(&mut mix, a)?;
        }
        if i > 0 {
            let prev = &phases[i - 1].mix;
            let mut v = validate_shift(prev, &mix, opts.cap_points);
            // report an adjusted domain first when it is the culprit
            v.sort_by_key(|x| !adjustments.iter().any(|a| a.phase == i && a.domain == x.domain));
            if let Some(x) = v.first() {
                return Err(Error::ShiftViolation {
                    phase: i,
                    domain: x.domain.to_string(),
                    delta_points: x.delta_points,
                    cap_points: opts.cap_points,
                });
            }
        }
        mix.validate()?;
        phases.push(Phase {
            index: i,
            tokens,
            stage,
            stage_tokens,
            mix,
        });
    }
    Ok(PhasePlan {
        budget: *budget,
        cap_points: opts.cap_points,
        phases,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AnnealOverrides {
    pub instruction_fraction: Option<f64>,
    pub long_context_fraction: Option<f64>,
}

/// The mix of the final annealing phase, with optional fraction overrides.
pub fn annealing_mix(plan: &PhasePlan, overrides: &AnnealOverrides) -> Result<MixSpec> {
    let last = plan
        .phases
        .iter()
        .rev()
        .find(|p| p.stage == Stage::Annealing)
        .ok_or_else(|| Error::invalid("plan", "no annealing phases"))?;
    let mut mix = last.mix.clone();
    if let Some(f) = overrides.instruction_fraction {
        mix.instruction_fraction = f;
    }
    if let Some(f) = overrides.long_context_fraction {
        mix.long_context_fraction = f;
    }
    mix.validate()?;
    Ok(mix)
}

/// Per-phase composition table, one row per phase, percentages of tokens.
pub fn phase_table(plan: &PhasePlan) -> String {
    let mut domains: Vec<Domain> = plan.phases.iter().flat_map(|p| p.mix.proportions.keys().copied()).collect();
    domains.sort();
    domains.dedup();
    let mut out = String::from("| phase | stage | tokens |");
    for d in &domains {
        let _ = write!(out, " {d} |");
    }
    out.push_str(" instruction | long_context |\n|---|---|---|");
    out.push_str(&"---|".repeat(domains.len() + 2));
    out.push('\n');
    for p in &plan.phases {
        let _ = write!(out, "| {} | {} | {} |", p.index, p.stage.as_str(), p.tokens);
        for &d in &domains {
            let _ = write!(out, " {:.2} |", p.mix.get(d) * 100.0);
        }
        let _ = writeln!(
            out,
            " {:.2} | {:.2} |",
            p.mix.instruction_fraction * 100.0,
            p.mix.long_context_fraction * 100.0
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default_budget() -> StageBudget {
        stage_budgets(1080, 10, 0.0808, 40).unwrap()
    }

    #[test]
    fn budget_examples() {
        let b = default_budget();
        assert_eq!((b.stable_tokens, b.anneal_tokens, b.phase_count), (990, 80, 27));
        let b = stage_budgets(100, 10, 0.1, 10).unwrap();
        assert_eq!((b.stable_tokens, b.anneal_tokens, b.phase_count), (82, 8, 10));
        let b = stage_budgets(100, 10, 0.0, 10).unwrap();
        assert_eq!((b.stable_tokens, b.anneal_tokens), (90, 0));
        assert!(stage_budgets(10, 10, 0.1, 1).is_err());
        assert!(stage_budgets(100, 10, 1.0, 10).is_err());
        assert!(stage_budgets(100, 10, 0.1, 0).is_err());
    }

    #[test]
    fn infeasible_split_is_an_error() {
        // s + round(s/2) takes the values 0, 2, 3, 5, ... and never 4
        assert!(stage_budgets(5, 1, 0.5, 1).is_err());
    }

    #[test]
    fn default_phase_layout() {
        let plan = plan_phases(&default_budget(), &default_start_mix(), &default_targets(), &[]).unwrap();
        assert_eq!(plan.phases.len(), 27);
        let stages: Vec<Stage> = plan.phases.iter().map(|p| p.stage).collect();
        assert_eq!(stages[0], Stage::Stable);
        assert_eq!(stages.iter().filter(|&&s| s == Stage::Annealing).count(), 2);
        let sum = |f: fn(&StageTokens) -> u64| plan.phases.iter().map(|p| f(&p.stage_tokens)).sum::<u64>();
        assert_eq!(sum(|s| s.warmup), 10);
        assert_eq!(sum(|s| s.stable), 990);
        assert_eq!(sum(|s| s.annealing), 80);
        let a = annealing_mix(&plan, &AnnealOverrides::default()).unwrap();
        assert!((a.instruction_fraction - 0.1919).abs() < 1e-12);
        assert!((a.long_context_fraction - 0.1421).abs() < 1e-12);
        let z = annealing_mix(&plan, &AnnealOverrides { instruction_fraction: Some(0.0), ..Default::default() }).unwrap();
        assert_eq!(z.instruction_fraction, 0.0);
        assert!(phase_table(&plan).lines().count() == 29);
    }

    #[test]
    fn instruction_breakdown_consistent() {
        let s: f64 = ANNEAL_INSTRUCTION_BREAKDOWN.iter().map(|x| x.1).sum();
        assert!((s - ANNEAL_INSTRUCTION_FRACTION).abs() < 0.005);
    }

    #[test]
    fn constant_target_gives_identical_phases() {
        let m = default_stable_mix();
        let targets = BTreeMap::from([(Stage::Stable, m.clone()), (Stage::Annealing, m.clone())]);
        let plan = plan_phases(&default_budget(), &m, &targets, &[]).unwrap();
        assert!(plan.phases.iter().all(|p| p.mix == m));
    }

    #[test]
    fn adjustment_caps() {
        let m = default_stable_mix();
        let targets = BTreeMap::from([(Stage::Stable, m.clone())]);
        let b = stage_budgets(100, 10, 0.1, 10).unwrap();
        let ok = [Adjustment { phase: 1, domain: Domain::Web, delta: 0.02 }];
        let plan = plan_phases(&b, &m, &targets, &ok).unwrap();
        assert!((plan.phases[1].mix.get(Domain::Web) - 0.47).abs() < 1e-12);
        let bad = [Adjustment { phase: 1, domain: Domain::Web, delta: 0.04 }];
        match plan_phases(&b, &m, &targets, &bad) {
            Err(Error::ShiftViolation { phase, domain, .. }) => {
                assert_eq!(phase, 1);
                assert_eq!(domain, "web");
            }
            other => panic!("expected a shift violation, got {other:?}"),
        }
    }

    #[test]
    fn stable_instruction_cap_enforced() {
        let mut targets = default_targets();
        targets.get_mut(&Stage::Stable).unwrap().instruction_fraction = 0.06;
        assert!(plan_phases(&default_budget(), &default_start_mix(), &targets, &[]).is_err());
    }

    #[test]
    fn shift_examples() {
        let a = default_stable_mix();
        assert!(validate_shift(&a, &a, 3.0).is_empty());
        let mut b = a.clone();
        b.proportions.insert(Domain::Web, 0.48);
        b.proportions.insert(Domain::Code, 0.17);
        assert!(validate_shift(&a, &b, 3.0).is_empty());
        let mut c = a.clone();
        c.proportions.insert(Domain::Web, 0.49);
        c.proportions.insert(Domain::Code, 0.16);
        let v = validate_shift(&a, &c, 3.0);
        assert_eq!(v.len(), 2);
    }

    fn arb_mix() -> impl Strategy<Value = MixSpec> {
        prop::collection::vec(0.01f64..1.0, 5).prop_map(|w| {
            let s: f64 = w.iter().sum();
            let ds = [Domain::Web, Domain::GeneralKnowledge, Domain::Code, Domain::Math, Domain::Chinese];
            MixSpec::new(ds.into_iter().zip(w.iter().map(|x| x / s))).unwrap()
        })
    }

    proptest! {
        #[test]
        fn plans_respect_invariants(
            start in arb_mix(),
            stable in arb_mix(),
            anneal in arb_mix(),
            total in 50u64..5000,
            warm_pct in 0u64..20,
            ratio in 0.0f64..0.3,
            phase in 1u64..200,
            i0 in 0.0f64..0.05,
            i1 in 0.0f64..0.05,
        ) {
            let warm = total * warm_pct / 100;
            let Ok(b) = stage_budgets(total, warm, ratio, phase) else { return Ok(()) };
            let (lo, hi) = if i0 <= i1 { (i0, i1) } else { (i1, i0) };
            let start = start.with_fractions(lo, 0.0).unwrap();
            let targets = BTreeMap::from([
                (Stage::Stable, stable.with_fractions(hi, 0.0).unwrap()),
                (Stage::Annealing, anneal.with_fractions(0.1919, 0.1421).unwrap()),
            ]);
            let plan = plan_phases(&b, &start, &targets, &[]).unwrap();
            for w in plan.phases.windows(2) {
                prop_assert!(validate_shift(&w[0].mix, &w[1].mix, 3.0).is_empty());
                if w[0].stage == Stage::Stable && w[1].stage == Stage::Stable {
                    prop_assert!(w[1].mix.instruction_fraction + 1e-12 >= w[0].mix.instruction_fraction);
                }
            }
            for p in &plan.phases {
                let s: f64 = p.mix.proportions.values().sum();
                prop_assert!((s - 1.0).abs() <= 1e-9);
                if p.stage == Stage::Stable {
                    prop_assert!(p.mix.instruction_fraction <= 0.05 + 1e-12);
                }
            }
            let tot: u64 = plan.phases.iter().map(|p| p.tokens).sum();
            prop_assert_eq!(tot, b.total());
            prop_assert_eq!(plan.phases.iter().map(|p| p.stage_tokens.stable).sum::<u64>(), b.stable_tokens);
            prop_assert_eq!(plan.phases.iter().map(|p| p.stage_tokens.annealing).sum::<u64>(), b.anneal_tokens);
        }
    }
}
