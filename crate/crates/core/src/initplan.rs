//! Initialization, learning-rate and scaling recipes.

use std::collections::BTreeMap;

use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCALE_EMBED: f64 = 10.0;
pub const RESIDUAL_NUMERATOR: f64 = 1.4;
pub const ROPE_THETA_STABLE: f64 = 10_000.0;
pub const ROPE_THETA_LONG: f64 = 490_000.0;
pub const CONTEXT_STABLE: usize = 4_096;
pub const CONTEXT_LONG: usize = 28_672;
pub const HF_DEFAULT_STD: f64 = 0.02;
pub const DEFAULT_MERGE_LAST: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub vocab_size: usize,
}

impl ModelShape {
    pub fn target_2_4b() -> Self {
        ModelShape {
            n_layers: 56,
            d_model: 1920,
            d_ffn: 4800,
            n_heads: 30,
            n_kv_heads: 6,
            vocab_size: 99_000,
        }
    }

    pub fn proxy_005b() -> Self {
        ModelShape {
            n_layers: 32,
            d_model: 256,
            d_ffn: 640,
            n_heads: 2,
            n_kv_heads: 2,
            vocab_size: 99_000,
        }
    }

    pub fn proxy_02b() -> Self {
        ModelShape {
            n_layers: 30,
            d_model: 576,
            d_ffn: 1536,
            n_heads: 9,
            n_kv_heads: 3,
            vocab_size: 99_000,
        }
    }

    pub fn proxy_04b() -> Self {
        ModelShape {
            n_layers: 56,
            ..Self::proxy_02b()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "target-2.4b" => Self::target_2_4b(),
            "proxy-0.05b" => Self::proxy_005b(),
            "proxy-0.2b" => Self::proxy_02b(),
            "proxy-0.4b" => Self::proxy_04b(),
            _ => return None,
        })
    }

    pub fn with_vocab(mut self, vocab_size: usize) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [self.n_layers, self.d_model, self.d_ffn, self.n_heads, self.n_kv_heads, self.vocab_size];
        if sizes.contains(&0) {
            return Err(Error::invalid("model shape", "all sizes must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::invalid("model shape", "d_model must be divisible by n_heads"));
        }
        if self.n_heads % self.n_kv_heads != 0 {
            return Err(Error::invalid("model shape", "n_heads must be divisible by n_kv_heads"));
        }
        Ok(())
    }
}

pub fn sigma_base(d_model: usize) -> f64 {
    (2.0 / (5.0 * d_model as f64)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixClass {
    Embedding,
    Qkv,
    O,
    /// Gate and up projections.
    FfnIn,
    FfnDown,
    Logits,
}

impl MatrixClass {
    pub const ALL: [MatrixClass; 6] = [
        MatrixClass::Embedding,
        MatrixClass::Qkv,
        MatrixClass::O,
        MatrixClass::FfnIn,
        MatrixClass::FfnDown,
        MatrixClass::Logits,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixInit {
    /// Standard deviation of the effective weight `α·W̃`.
    pub init_std: f64,
    pub learning_rate: f64,
    /// Std of the re-parametrized `W̃`; equals `init_std` when α = 1.
    pub wesar_tilde_std: f64,
    pub wesar_alpha: f64,
}

impl MatrixInit {
    fn plain(std: f64, lr: f64) -> Self {
        MatrixInit {
            init_std: std,
            learning_rate: lr,
            wesar_tilde_std: std,
            wesar_alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitPlan {
    pub name: String,
    pub sigma: f64,
    pub eta_base: f64,
    pub m_width: f64,
    pub n_layers: usize,
    pub scale_embed_output: f64,
    pub residual_scale: f64,
    pub attn_scale: f64,
    pub logits_scale: f64,
    pub classes: BTreeMap<MatrixClass, MatrixInit>,
}

impl InitPlan {
    pub fn class(&self, c: MatrixClass) -> &MatrixInit {
        &self.classes[&c]
    }

    /// Same std and learning rate everywhere, no extra scaling.
    pub fn uniform(shape: &ModelShape, std: f64, eta: f64) -> Result<Self> {
        shape.validate()?;
        Ok(InitPlan {
            name: format!("uniform-{std}"),
            sigma: std,
            eta_base: eta,
            m_width: 1.0,
            n_layers: shape.n_layers,
            scale_embed_output: 1.0,
            residual_scale: 1.0,
            attn_scale: 1.0 / (shape.d_head() as f64).sqrt(),
            logits_scale: 1.0,
            classes: MatrixClass::ALL.iter().map(|&c| (c, MatrixInit::plain(std, eta))).collect(),
        })
    }

    /// `σ_base = √(2/(5d))` everywhere, with output projections at
    /// `σ_base² / (2·n_layers)` variance.
    pub fn scaled_init(shape: &ModelShape, eta: f64) -> Result<Self> {
        let mut p = Self::uniform(shape, sigma_base(shape.d_model), eta)?;
        p.name = "scaled-init".into();
        let down = p.sigma / (2.0 * shape.n_layers as f64).sqrt();
        for c in [MatrixClass::O, MatrixClass::FfnDown] {
            p.classes.insert(c, MatrixInit::plain(down, eta));
        }
        Ok(p)
    }

    pub fn with_embed_scale(mut self, scale: f64) -> Self {
        self.scale_embed_output = scale;
        self
    }

    pub fn with_embedding_std(mut self, std: f64) -> Self {
        let lr = self.class(MatrixClass::Embedding).learning_rate;
        self.classes.insert(MatrixClass::Embedding, MatrixInit::plain(std, lr));
        self
    }

    /// Re-parametrizes every matrix except the embedding as `α·W̃` with a
    /// common `W̃` std (default: the plan's σ) and `α = 1/γ` chosen so the
    /// effective std is unchanged.
    pub fn with_wesar(mut self, tilde_std: Option<f64>) -> Result<Self> {
        let tilde = tilde_std.unwrap_or(self.sigma);
        if !(tilde > 0.0) {
            return Err(Error::invalid("wesar", "tilde std must be positive"));
        }
        for (c, m) in self.classes.iter_mut() {
            if *c == MatrixClass::Embedding {
                continue;
            }
            let gamma = tilde / m.init_std;
            let (t, alpha) = wesar(tilde, gamma)?;
            m.wesar_tilde_std = t;
            m.wesar_alpha = alpha;
        }
        self.name.push_str("+wesar");
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (c, m) in &self.classes {
            if !(m.init_std > 0.0 && m.wesar_tilde_std > 0.0 && m.learning_rate >= 0.0) {
                return Err(Error::invalid("init plan", format!("{c:?} has a non-positive std or negative LR")));
            }
        }
        if MatrixClass::ALL.iter().any(|c| !self.classes.contains_key(c)) {
            return Err(Error::invalid("init plan", "missing matrix class"));
        }
        Ok(())
    }
}

/// μP recipe transferring from `proxy` to `target`.
pub fn mup_plan(target: &ModelShape, proxy: &ModelShape, eta_base: f64, sigma: f64) -> Result<InitPlan> {
    target.validate()?;
    proxy.validate()?;
    if !(sigma > 0.0 && eta_base > 0.0) {
        return Err(Error::invalid("mup", "sigma and eta_base must be positive"));
    }
    let m = target.d_model as f64 / proxy.d_model as f64;
    let n = target.n_layers as f64;
    let wide = (sigma * sigma / m).sqrt();
    let out = (sigma * sigma / (2.0 * m * n)).sqrt();
    let lr = eta_base / m;
    let classes = BTreeMap::from([
        (MatrixClass::Embedding, MatrixInit::plain(sigma, eta_base)),
        (MatrixClass::Qkv, MatrixInit::plain(wide, lr)),
        (MatrixClass::O, MatrixInit::plain(out, lr)),
        (MatrixClass::FfnIn, MatrixInit::plain(wide, lr)),
        (MatrixClass::FfnDown, MatrixInit::plain(out, lr)),
        (MatrixClass::Logits, MatrixInit::plain(wide, lr)),
    ]);
    Ok(InitPlan {
        name: "mup".into(),
        sigma,
        eta_base,
        m_width: m,
        n_layers: target.n_layers,
        scale_embed_output: SCALE_EMBED,
        residual_scale: RESIDUAL_NUMERATOR / n.sqrt(),
        attn_scale: 1.0 / (target.d_head() as f64).sqrt(),
        logits_scale: 1.0,
        classes,
    })
}

/// `W = α·W̃` with `W̃ ~ N(0, σ²)` and `α = 1/γ`; returns `(σ, α)`.
pub fn wesar(sigma: f64, gamma: f64) -> Result<(f64, f64)> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::invalid("gamma", format!("{gamma} must be positive")));
    }
    Ok((sigma, 1.0 / gamma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RopeReport {
    pub theta_old: f64,
    pub theta_new: f64,
    pub freqs_old: Vec<f64>,
    pub freqs_new: Vec<f64>,
    /// Largest rotation angle per dimension pair seen in training.
    pub max_angle_old: Vec<f64>,
    /// Largest rotation angle per dimension pair at the new context length.
    pub max_angle_new: Vec<f64>,
    /// Pairs whose new angle exceeds anything seen in training while the old
    /// context never completed a full turn.
    pub out_of_range: Vec<usize>,
    pub lowest_wavelength_ratio: f64,
}

pub fn rope_frequencies(theta: f64, d_head: usize) -> Vec<f64> {
    (0..d_head / 2)
        .map(|i| theta.powf(-(2.0 * i as f64) / d_head as f64))
        .collect()
}

pub fn rope_retarget(theta_old: f64, theta_new: f64, d_head: usize, old_ctx: usize, new_ctx: usize) -> Result<RopeReport> {
    if !(theta_old > 0.0 && theta_new > 0.0) {
        return Err(Error::invalid("rope", "base frequencies must be positive"));
    }
    if d_head == 0 || d_head % 2 != 0 {
        return Err(Error::invalid("rope", format!("d_head {d_head} must be even and positive")));
    }
    let freqs_old = rope_frequencies(theta_old, d_head);
    let freqs_new = rope_frequencies(theta_new, d_head);
    let max_angle_old: Vec<f64> = freqs_old.iter().map(|f| f * old_ctx.saturating_sub(1) as f64).collect();
    let max_angle_new: Vec<f64> = freqs_new.iter().map(|f| f * new_ctx.saturating_sub(1) as f64).collect();
    let tau = std::f64::consts::TAU;
    let out_of_range = (0..freqs_old.len())
        .filter(|&i| max_angle_old[i] < tau && max_angle_new[i] > max_angle_old[i])
        .collect();
    let last = freqs_old.len() - 1;
    Ok(RopeReport {
        theta_old,
        theta_new,
        lowest_wavelength_ratio: freqs_old[last] / freqs_new[last],
        freqs_old,
        freqs_new,
        max_angle_old,
        max_angle_new,
        out_of_range,
    })
}

/// Elementwise weighted average; uniform when `weights` is `None`.
pub fn merge_checkpoints(checkpoints: &[ArrayD<f64>], weights: Option<&[f64]>) -> Result<ArrayD<f64>> {
    let first = checkpoints
        .first()
        .ok_or_else(|| Error::invalid("checkpoints", "nothing to merge"))?;
    if let Some(c) = checkpoints.iter().find(|c| c.shape() != first.shape()) {
        return Err(Error::Shape(format!("{:?} vs {:?}", first.shape(), c.shape())));
    }
    let uniform = vec![1.0 / checkpoints.len() as f64; checkpoints.len()];
    let w = match weights {
        Some(w) => {
            if w.len() != checkpoints.len() {
                return Err(Error::invalid("weights", format!("{} weights for {} checkpoints", w.len(), checkpoints.len())));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("weights", format!("sum to {s}")));
            }
            w
        }
        None => &uniform,
    };
    let mut out = ArrayD::zeros(first.raw_dim());
    for (c, &wi) in checkpoints.iter().zip(w) {
        Zip::from(&mut out).and(c).for_each(|o, &x| *o += wi * x);
    }
    Ok(out)
}

/// Uniform average of the last `k` checkpoints.
pub fn merge_last(checkpoints: &[ArrayD<f64>], k: usize) -> Result<ArrayD<f64>> {
    let k = k.clamp(1, checkpoints.len().max(1));
    merge_checkpoints(&checkpoints[checkpoints.len().saturating_sub(k)..], None)
}
