//! Warmup-stable-decay learning-rate schedule and optimizer settings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ETA_MAX: f64 = 0.01;
pub const DEFAULT_WARMUP_STEPS: u64 = 2_433;
pub const DEFAULT_ANNEAL_STEPS: u64 = 18_802;
pub const DEFAULT_FLOOR_LR: f64 = 5.22e-5;
pub const DEFAULT_TAIL_STEPS: u64 = 772;
pub const DEFAULT_BATCH_TOKENS: u64 = 4_120_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnealShape {
    #[default]
    OneSqrt,
    Linear,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSpec {
    pub eta_max: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub anneal_steps: u64,
    pub floor_lr: f64,
    pub tail_constant_steps: u64,
    pub shape: AnnealShape,
}

impl Default for ScheduleSpec {
    /// 990B stable tokens at 4.12M tokens per step.
    fn default() -> Self {
        let stable = tokens_to_steps(990_000_000_000, DEFAULT_BATCH_TOKENS);
        ScheduleSpec {
            eta_max: DEFAULT_ETA_MAX,
            warmup_steps: DEFAULT_WARMUP_STEPS,
            total_steps: DEFAULT_WARMUP_STEPS + stable + DEFAULT_ANNEAL_STEPS + DEFAULT_TAIL_STEPS,
            anneal_steps: DEFAULT_ANNEAL_STEPS,
            floor_lr: DEFAULT_FLOOR_LR,
            tail_constant_steps: DEFAULT_TAIL_STEPS,
            shape: AnnealShape::OneSqrt,
        }
    }
}

impl ScheduleSpec {
    pub fn with_stable_steps(stable: u64) -> Self {
        ScheduleSpec {
            total_steps: DEFAULT_WARMUP_STEPS + stable + DEFAULT_ANNEAL_STEPS + DEFAULT_TAIL_STEPS,
            ..ScheduleSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.floor_lr > 0.0 && self.floor_lr < self.eta_max && self.eta_max.is_finite()) {
            return Err(Error::invalid(
                "schedule",
                format!("need 0 < floor_lr ({}) < eta_max ({})", self.floor_lr, self.eta_max),
            ));
        }
        self.checked_stable()?;
        Ok(())
    }

    fn checked_stable(&self) -> Result<u64> {
        self.total_steps
            .checked_sub(self.warmup_steps)
            .and_then(|r| r.checked_sub(self.anneal_steps))
            .and_then(|r| r.checked_sub(self.tail_constant_steps))
            .ok_or_else(|| Error::invalid("schedule", "warmup + anneal + tail exceed total_steps"))
    }

    pub fn stable_steps(&self) -> u64 {
        self.checked_stable().unwrap_or(0)
    }

    pub fn anneal_start(&self) -> u64 {
        self.warmup_steps + self.stable_steps()
    }

    pub fn anneal_end(&self) -> u64 {
        self.anneal_start() + self.anneal_steps
    }
}

/// `1 − √((n − (N − N_anneal)) / N_anneal)` on the annealing window.
pub fn one_sqrt(n: u64, total: u64, anneal: u64) -> Result<f64> {
    Ok(1.0 - progress(n, total, anneal)?.sqrt())
}

fn progress(n: u64, total: u64, anneal: u64) -> Result<f64> {
    let start = total
        .checked_sub(anneal)
        .ok_or_else(|| Error::invalid("annealing window", format!("{anneal} steps exceed total {total}")))?;
    if n < start || n > total {
        return Err(Error::invalid(
            "step",
            format!("{n} outside the annealing window [{start}, {total}]"),
        ));
    }
    if anneal == 0 {
        return Ok(1.0);
    }
    Ok((n - start) as f64 / anneal as f64)
}

pub fn anneal_factor(shape: AnnealShape, n: u64, total: u64, anneal: u64) -> Result<f64> {
    let p = progress(n, total, anneal)?;
    Ok(match shape {
        AnnealShape::OneSqrt => 1.0 - p.sqrt(),
        AnnealShape::Linear => 1.0 - p,
        AnnealShape::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * p).cos()),
    })
}

pub fn wsd_lr(n: u64, spec: &ScheduleSpec) -> Result<f64> {
    spec.validate()?;
    if n > spec.total_steps {
        return Err(Error::invalid("step", format!("{n} beyond total_steps {}", spec.total_steps)));
    }
    let (a0, a1) = (spec.anneal_start(), spec.anneal_end());
    Ok(if n < spec.warmup_steps {
        spec.eta_max * n as f64 / spec.warmup_steps as f64
    } else if n <= a0 {
        spec.eta_max
    } else if n <= a1 {
        let f = anneal_factor(spec.shape, n, a1, spec.anneal_steps)?;
        spec.floor_lr + (spec.eta_max - spec.floor_lr) * f
    } else {
        spec.floor_lr
    })
}

/// `step,lr` rows for every `stride`-th step, always including the last.
pub fn lr_curve_csv(spec: &ScheduleSpec, stride: u64) -> Result<String> {
    spec.validate()?;
    let stride = stride.max(1);
    let mut out = String::from("step,lr\n");
    let mut n = 0;
    loop {
        let _ = writeln!(out, "{n},{:e}", wsd_lr(n, spec)?);
        if n == spec.total_steps {
            break;
        }
        n = (n + stride).min(spec.total_steps);
    }
    Ok(out)
}

pub fn tokens_to_steps(tokens: u64, batch_tokens: u64) -> u64 {
    tokens.div_ceil(batch_tokens.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayCoefficients {
    pub eta: f64,
    /// Independent (learning-rate-free) weight decay.
    pub lambda: f64,
    /// Coupled coefficient η·λ as used by AdamW-style implementations.
    pub lambda_coupled: f64,
}

pub fn resolve_decay(eta: f64, lambda_independent: f64) -> Result<DecayCoefficients> {
    if !(eta > 0.0) {
        return Err(Error::invalid("eta", format!("{eta} must be positive")));
    }
    Ok(DecayCoefficients {
        eta,
        lambda: lambda_independent,
        lambda_coupled: eta * lambda_independent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub zloss: f64,
    pub grad_clip: f64,
    pub batch_tokens: u64,
    pub seq_len: u64,
}

impl Default for OptimizerHyper {
    fn default() -> Self {
        OptimizerHyper {
            beta1: 0.9,
            beta2: 0.95,
            epsilon: 1e-15,
            weight_decay: 0.1,
            zloss: 1e-4,
            grad_clip: 1.0,
            batch_tokens: DEFAULT_BATCH_TOKENS,
            seq_len: 4096,
        }
    }
}

impl OptimizerHyper {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::invalid("betas", "must lie in (0, 1)"));
        }
        if !(self.epsilon > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::invalid("optimizer", "epsilon and grad_clip must be positive"));
        }
        if self.batch_tokens == 0 || self.seq_len == 0 {
            return Err(Error::invalid("optimizer", "batch_tokens and seq_len must be positive"));
        }
        Ok(())
    }
}
