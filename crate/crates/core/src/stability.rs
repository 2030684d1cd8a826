//! Forward-only transformer simulator with per-layer indicator recording.
//!
//! Blocks are pre-RMSNorm with grouped-query attention and either a SwiGLU
//! or a plain two-matrix FFN:
//!
//! ```text
//! y = x + r·MHA(RMSNorm(x))
//! z = y + r·FFN(RMSNorm(y))
//! ```
//!
//! where `r` is the plan's residual scale. Layer 0 is the scaled embedding
//! output; layers `1..=n_layers` are block outputs.

use std::fmt::Write as _;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::initplan::{mup_plan, sigma_base, InitPlan, MatrixClass, MatrixInit, ModelShape, HF_DEFAULT_STD};

pub const RMS_EPS: f64 = 1e-6;
pub const DEFAULT_VAR_RATIO_CAP: f64 = 10.0;
pub const DEFAULT_SCORE_MEAN_CAP: f64 = 50.0;
pub const DEFAULT_ZLOSS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfnKind {
    #[default]
    Swiglu,
    /// `u·W1·W2` with no activation.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub shape: ModelShape,
    pub init: InitPlan,
    pub embed_tying: bool,
    pub qk_layernorm: bool,
    pub ffn: FfnKind,
    pub seed: u64,
    pub batch: usize,
    pub seq_len: usize,
    pub steps: usize,
    pub zloss: f64,
}

impl SimConfig {
    pub fn new(shape: ModelShape, init: InitPlan) -> Self {
        SimConfig {
            shape,
            init,
            embed_tying: true,
            qk_layernorm: false,
            ffn: FfnKind::Swiglu,
            seed: 0,
            batch: 2,
            seq_len: 32,
            steps: 1,
            zloss: DEFAULT_ZLOSS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        self.init.validate()?;
        if self.batch == 0 || self.seq_len == 0 || self.steps == 0 {
            return Err(Error::invalid("sim config", "batch, seq_len and steps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Module {
    AttentionOut,
    FfnOut,
    /// Output of the norm in front of attention.
    RmsnormOut,
    /// Output of the norm in front of the FFN.
    RmsnormFfnOut,
    /// `y`: after the attention residual add.
    ResidualMid,
    /// `z`: block output (layer 0 is the embedding output).
    ResidualStream,
    AttentionScores,
    Logits,
}

impl Module {
    pub fn as_str(self) -> &'static str {
        match self {
            Module::AttentionOut => "attention_out",
            Module::FfnOut => "ffn_out",
            Module::RmsnormOut => "rmsnorm_out",
            Module::RmsnormFfnOut => "rmsnorm_ffn_out",
            Module::ResidualMid => "residual_mid",
            Module::ResidualStream => "residual_stream",
            Module::AttentionScores => "attention_scores",
            Module::Logits => "logits",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Indicator {
    pub mean: f64,
    pub var: f64,
    pub rms: f64,
}

impl Indicator {
    pub fn of<'a>(values: impl IntoIterator<Item = &'a f64> + Clone) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for &v in values.clone() {
            n += 1;
            sum += v;
            sq += v * v;
        }
        if n == 0 {
            return Indicator { mean: 0.0, var: 0.0, rms: 0.0 };
        }
        let mean = sum / n as f64;
        let var = values.into_iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Indicator {
            mean,
            var,
            rms: (sq / n as f64).sqrt(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mean.is_finite() && self.var.is_finite() && self.rms.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub step: usize,
    pub layer: usize,
    pub module: Module,
    #[serde(flatten)]
    pub value: Indicator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplosionEvent {
    pub step: usize,
    pub layer: usize,
    pub module: Module,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IndicatorTrace {
    pub records: Vec<Record>,
    pub events: Vec<ExplosionEvent>,
    /// Mean per-token z-loss for each completed step.
    pub zloss: Vec<f64>,
}

impl IndicatorTrace {
    pub fn get(&self, step: usize, layer: usize, module: Module) -> Option<&Indicator> {
        self.records
            .iter()
            .find(|r| r.step == step && r.layer == layer && r.module == module)
            .map(|r| &r.value)
    }

    /// Per-layer variance of `module`, averaged over steps; `None` for layers
    /// without records.
    pub fn layer_variances(&self, module: Module) -> Vec<Option<f64>> {
        let max_layer = self.records.iter().map(|r| r.layer).max().unwrap_or(0);
        let mut acc = vec![(0.0, 0usize); max_layer + 1];
        for r in self.records.iter().filter(|r| r.module == module) {
            acc[r.layer].0 += r.value.var;
            acc[r.layer].1 += 1;
        }
        acc.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect()
    }

    /// `var(z_L) − var(x_0)` averaged over steps.
    pub fn residual_growth(&self) -> Option<f64> {
        let v = self.layer_variances(Module::ResidualStream);
        let first = (*v.first()?)?;
        let last = v.iter().rev().find_map(|x| *x)?;
        Some(last - first)
    }

    /// `var(z_l) / var(z_1)` for every block output.
    pub fn variance_ratios(&self) -> Vec<f64> {
        let v: Vec<f64> = self
            .layer_variances(Module::ResidualStream)
            .into_iter()
            .skip(1)
            .map_while(|x| x)
            .collect();
        match v.first() {
            Some(&base) if base > 0.0 => v.iter().map(|x| x / base).collect(),
            _ => Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,layer,module,mean,var,rms\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{:e},{:e},{:e}",
                r.step,
                r.layer,
                r.module.as_str(),
                r.value.mean,
                r.value.var,
                r.value.rms
            );
        }
        out
    }
}

/// Scales `x` to unit RMS, then applies `gain` elementwise.
pub fn rmsnorm(x: ArrayView1<f64>, gain: ArrayView1<f64>, eps: f64) -> Array1<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    let inv = 1.0 / (ms + eps).sqrt();
    x.iter().zip(gain.iter()).map(|(v, g)| v * inv * g).collect()
}

fn rmsnorm_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
        let inv = 1.0 / (ms + RMS_EPS).sqrt();
        row.mapv_inplace(|v| v * inv);
    }
    out
}

fn check_cols(what: &str, w: &ArrayView2<f64>, d: usize) -> Result<()> {
    if w.ncols() != d {
        return Err(Error::Shape(format!("{what} has {} columns, expected {d}", w.ncols())));
    }
    Ok(())
}

/// `S = scale · Xᵀ Wqᵀ Wk X` with tokens as the columns of `X` (d × T).
pub fn attn_scores(x: ArrayView2<f64>, wq: ArrayView2<f64>, wk: ArrayView2<f64>, scale: f64) -> Result<Array2<f64>> {
    let d = x.nrows();
    check_cols("Wq", &wq, d)?;
    check_cols("Wk", &wk, d)?;
    if wq.nrows() != wk.nrows() {
        return Err(Error::Shape(format!("Wq has {} rows but Wk has {}", wq.nrows(), wk.nrows())));
    }
    let q = wq.dot(&x);
    let k = wk.dot(&x);
    Ok(q.t().dot(&k) * scale)
}

/// Gradients of `Σᵢⱼ Sᵢⱼ` with respect to `Wq` and `Wk`.
pub fn attn_score_grads(
    x: ArrayView2<f64>,
    wq: ArrayView2<f64>,
    wk: ArrayView2<f64>,
    scale: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    attn_scores(x, wq, wk, scale)?;
    let u = x.sum_axis(Axis(1));
    let outer = |a: Array1<f64>| {
        let (n, m) = (a.len(), u.len());
        Array2::from_shape_fn((n, m), |(i, j)| scale * a[i] * u[j])
    };
    Ok((outer(wk.dot(&u)), outer(wq.dot(&u))))
}

/// Largest deviation between analytic gradients and central differences,
/// relative to the largest analytic entry.
pub fn attn_score_grad_check(x: ArrayView2<f64>, wq: ArrayView2<f64>, wk: ArrayView2<f64>, h: f64) -> Result<f64> {
    let (gq, gk) = attn_score_grads(x, wq, wk, 1.0)?;
    let total = |q: &Array2<f64>, k: &Array2<f64>| attn_scores(x, q.view(), k.view(), 1.0).map(|s| s.sum());
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let (mut q, mut k) = (wq.to_owned(), wk.to_owned());
    for idx in ndarray::indices(wq.raw_dim()) {
        let orig = q[idx];
        q[idx] = orig + h;
        let plus = total(&q, &k)?;
        q[idx] = orig - h;
        let minus = total(&q, &k)?;
        q[idx] = orig;
        worst = worst.max(((plus - minus) / (2.0 * h) - gq[idx]).abs());
        scale = scale.max(gq[idx].abs());
    }
    for idx in ndarray::indices(wk.raw_dim()) {
        let orig = k[idx];
        k[idx] = orig + h;
        let plus = total(&q, &k)?;
        k[idx] = orig - h;
        let minus = total(&q, &k)?;
        k[idx] = orig;
        worst = worst.max(((plus - minus) / (2.0 * h) - gk[idx]).abs());
        scale = scale.max(gk[idx].abs());
    }
    Ok(if scale > 0.0 { worst / scale } else { worst })
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + logits.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// `ζ · (log Σ exp(logit))²`.
pub fn zloss(logits: &[f64], zeta: f64) -> f64 {
    let lz = log_sum_exp(logits);
    zeta * lz * lz
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// FFN on the rows of `u`. For [`FfnKind::Linear`] the gate is ignored.
pub fn ffn_forward(
    u: &Array2<f64>,
    gate: Option<&Array2<f64>>,
    up: &Array2<f64>,
    down: &Array2<f64>,
    kind: FfnKind,
) -> Array2<f64> {
    let h = u.dot(up);
    let h = match (kind, gate) {
        (FfnKind::Swiglu, Some(g)) => {
            let gg = u.dot(g);
            h * gg.mapv(silu)
        }
        _ => h,
    };
    h.dot(down)
}

fn sample(rng: &mut ChaCha8Rng, rows: usize, cols: usize, m: &MatrixInit) -> Array2<f64> {
    let n = Normal::new(0.0, m.wesar_tilde_std).expect("positive std");
    let alpha = m.wesar_alpha;
    Array2::from_shape_simple_fn((rows, cols), || alpha * n.sample(rng))
}

struct Layer {
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
    gate: Option<Array2<f64>>,
    up: Array2<f64>,
    down: Array2<f64>,
}

/// Weights are regenerated per layer from independent streams of the seed,
/// so memory stays at one layer's worth regardless of depth.
pub struct Simulator {
    cfg: SimConfig,
    embed: Array2<f64>,
    unembed: Option<Array2<f64>>,
}

struct Overflow(usize, Module);

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let s = cfg.shape;
        let p = &cfg.init;
        let mut rng = Self::stream(cfg.seed, 0);
        let embed = sample(&mut rng, s.vocab_size, s.d_model, p.class(MatrixClass::Embedding));
        let unembed = (!cfg.embed_tying).then(|| {
            let mut rng = Self::stream(cfg.seed, s.n_layers as u64 + 1);
            sample(&mut rng, s.vocab_size, s.d_model, p.class(MatrixClass::Logits))
        });
        Ok(Simulator { cfg, embed, unembed })
    }

    fn stream(seed: u64, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        rng
    }

    fn layer(&self, l: usize) -> Layer {
        let s = self.cfg.shape;
        let p = &self.cfg.init;
        let dh = s.d_head();
        let mut rng = Self::stream(self.cfg.seed, l as u64);
        Layer {
            wq: sample(&mut rng, s.d_model, s.n_heads * dh, p.class(MatrixClass::Qkv)),
            wk: sample(&mut rng, s.d_model, s.n_kv_heads * dh, p.class(MatrixClass::Qkv)),
            wv: sample(&mut rng, s.d_model, s.n_kv_heads * dh, p.class(MatrixClass::Qkv)),
            wo: sample(&mut rng, s.n_heads * dh, s.d_model, p.class(MatrixClass::O)),
            gate: (self.cfg.ffn == FfnKind::Swiglu)
                .then(|| sample(&mut rng, s.d_model, s.d_ffn, p.class(MatrixClass::FfnIn))),
            up: sample(&mut rng, s.d_model, s.d_ffn, p.class(MatrixClass::FfnIn)),
            down: sample(&mut rng, s.d_ffn, s.d_model, p.class(MatrixClass::FfnDown)),
        }
    }

    pub fn run(&self) -> IndicatorTrace {
        let mut trace = IndicatorTrace::default();
        let mut rng = Self::stream(self.cfg.seed, u64::MAX);
        for step in 0..self.cfg.steps {
            let tokens: Vec<usize> = (0..self.cfg.batch * self.cfg.seq_len)
                .map(|_| rng.gen_range(0..self.cfg.shape.vocab_size))
                .collect();
            if let Err(Overflow(layer, module)) = self.forward(step, &tokens, &mut trace) {
                trace.events.push(ExplosionEvent { step, layer, module });
            }
        }
        trace
    }

    fn forward(&self, step: usize, tokens: &[usize], trace: &mut IndicatorTrace) -> std::result::Result<(), Overflow> {
        let s = self.cfg.shape;
        let p = &self.cfg.init;
        let (dh, t_len) = (s.d_head(), self.cfg.seq_len);
        let group = s.n_heads / s.n_kv_heads;
        let mut record = |layer: usize, module: Module, values: &[f64]| {
            let value = Indicator::of(values);
            trace.records.push(Record { step, layer, module, value });
            if value.is_finite() {
                Ok(())
            } else {
                Err(Overflow(layer, module))
            }
        };

        let mut x = Array2::from_shape_fn((tokens.len(), s.d_model), |(i, j)| {
            p.scale_embed_output * self.embed[[tokens[i], j]]
        });
        record(0, Module::ResidualStream, x.as_slice().unwrap())?;

        for l in 1..=s.n_layers {
            let w = self.layer(l);
            let v = rmsnorm_rows(&x);
            record(l, Module::RmsnormOut, v.as_slice().unwrap())?;
            let q = v.dot(&w.wq);
            let k = v.dot(&w.wk);
            let vv = v.dot(&w.wv);
            let mut heads = Array2::<f64>::zeros((tokens.len(), s.n_heads * dh));
            let mut scores = Vec::with_capacity(self.cfg.batch * s.n_heads * t_len * (t_len + 1) / 2);
            for b in 0..self.cfg.batch {
                let rows = b * t_len..(b + 1) * t_len;
                for h in 0..s.n_heads {
                    let g = h / group;
                    let mut qh = q.slice(s![rows.clone(), h * dh..(h + 1) * dh]).to_owned();
                    let mut kh = k.slice(s![rows.clone(), g * dh..(g + 1) * dh]).to_owned();
                    if self.cfg.qk_layernorm {
                        qh = rmsnorm_rows(&qh);
                        kh = rmsnorm_rows(&kh);
                    }
                    let vh = vv.slice(s![rows.clone(), g * dh..(g + 1) * dh]);
                    let sc = qh.dot(&kh.t()) * p.attn_scale;
                    let mut probs = Array2::<f64>::zeros((t_len, t_len));
                    for i in 0..t_len {
                        let row = &sc.row(i).to_vec()[..=i];
                        scores.extend_from_slice(row);
                        let lz = log_sum_exp(row);
                        for (j, &x) in row.iter().enumerate() {
                            probs[[i, j]] = (x - lz).exp();
                        }
                    }
                    let out = probs.dot(&vh);
                    heads.slice_mut(s![rows.clone(), h * dh..(h + 1) * dh]).assign(&out);
                }
            }
            record(l, Module::AttentionScores, &scores)?;
            let attn = heads.dot(&w.wo) * p.residual_scale;
            record(l, Module::AttentionOut, attn.as_slice().unwrap())?;
            let y = &x + &attn;
            record(l, Module::ResidualMid, y.as_slice().unwrap())?;

            let u = rmsnorm_rows(&y);
            record(l, Module::RmsnormFfnOut, u.as_slice().unwrap())?;
            let f = ffn_forward(&u, w.gate.as_ref(), &w.up, &w.down, self.cfg.ffn) * p.residual_scale;
            record(l, Module::FfnOut, f.as_slice().unwrap())?;
            x = y + f;
            record(l, Module::ResidualStream, x.as_slice().unwrap())?;
        }

        let out_w = self.unembed.as_ref().unwrap_or(&self.embed);
        let logits = rmsnorm_rows(&x).dot(&out_w.t()) * p.logits_scale;
        record(s.n_layers + 1, Module::Logits, logits.as_standard_layout().as_slice().unwrap())?;
        let z = logits
            .rows()
            .into_iter()
            .map(|r| zloss(&r.to_vec(), self.cfg.zloss))
            .sum::<f64>()
            / logits.nrows() as f64;
        trace.zloss.push(z);
        Ok(())
    }
}

pub fn simulate_forward(cfg: &SimConfig) -> Result<IndicatorTrace> {
    Ok(Simulator::new(cfg.clone())?.run())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    VarianceRatio,
    ScoreMean,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub step: usize,
    pub layer: usize,
    pub kind: AlertKind,
    pub value: f64,
}

/// Alerts where `var(z_l)/var(z_1)` or the attention-score mean exceed
/// their caps, plus one per recorded overflow. Ordered by step, then layer.
pub fn explosion_check(trace: &IndicatorTrace, var_ratio_cap: f64, score_mean_cap: f64) -> Result<Vec<Alert>> {
    if trace.records.is_empty() && trace.events.is_empty() {
        return Err(Error::invalid("trace", "no records"));
    }
    let mut alerts = Vec::new();
    let steps = trace.records.iter().map(|r| r.step).max().map_or(0, |m| m + 1);
    for step in 0..steps {
        let base = trace.get(step, 1, Module::ResidualStream).map(|i| i.var);
        for r in trace.records.iter().filter(|r| r.step == step) {
            match r.module {
                Module::ResidualStream if r.layer >= 1 => {
                    if let Some(b) = base.filter(|&b| b > 0.0) {
                        let ratio = r.value.var / b;
                        if ratio > var_ratio_cap {
                            alerts.push(Alert { step, layer: r.layer, kind: AlertKind::VarianceRatio, value: ratio });
                        }
                    }
                }
                Module::AttentionScores if r.value.mean > score_mean_cap => {
                    alerts.push(Alert { step, layer: r.layer, kind: AlertKind::ScoreMean, value: r.value.mean });
                }
                _ => {}
            }
        }
    }
    for e in &trace.events {
        alerts.push(Alert { step: e.step, layer: e.layer, kind: AlertKind::NonFinite, value: f64::NAN });
    }
    alerts.sort_by_key(|a| (a.step, a.layer));
    Ok(alerts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// The same std everywhere (0.02 unless `std` is given).
    #[default]
    Uniform,
    Scaled,
    Mup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub init: InitKind,
    pub std: Option<f64>,
    #[serde(default)]
    pub wesar: bool,
    #[serde(default)]
    pub qk_layernorm: bool,
    pub embed_scale: Option<f64>,
    pub embed_std: Option<f64>,
    pub ffn: Option<FfnKind>,
}

fn default_shape() -> String {
    "proxy-0.05b".into()
}
fn default_proxy() -> String {
    "proxy-0.05b".into()
}
fn default_vocab() -> usize {
    4096
}
fn default_eta() -> f64 {
    0.01
}
fn default_batch() -> usize {
    2
}
fn default_seq() -> usize {
    32
}
fn default_steps() -> usize {
    1
}

/// Sweep description read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationManifest {
    #[serde(default = "default_shape")]
    pub shape: String,
    #[serde(default = "default_proxy")]
    pub proxy: String,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "default_eta")]
    pub eta_base: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_seq")]
    pub seq_len: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub ffn: FfnKind,
    #[serde(rename = "variant", default)]
    pub variants: Vec<Variant>,
}

impl AblationManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid("ablation manifest", e.to_string()))
    }

    fn preset(name: &str) -> Result<ModelShape> {
        ModelShape::preset(name).ok_or_else(|| Error::invalid("shape", format!("unknown preset {name:?}")))
    }

    pub fn config_for(&self, v: &Variant) -> Result<SimConfig> {
        let shape = Self::preset(&self.shape)?.with_vocab(self.vocab_size);
        let mut plan = match v.init {
            InitKind::Uniform => InitPlan::uniform(&shape, v.std.unwrap_or(HF_DEFAULT_STD), self.eta_base)?,
            InitKind::Scaled => InitPlan::scaled_init(&shape, self.eta_base)?,
            InitKind::Mup => {
                let proxy = Self::preset(&self.proxy)?;
                mup_plan(&shape, &proxy, self.eta_base, v.std.unwrap_or(sigma_base(proxy.d_model)))?
            }
        };
        if let Some(s) = v.embed_std {
            plan = plan.with_embedding_std(s);
        }
        if let Some(s) = v.embed_scale {
            plan = plan.with_embed_scale(s);
        }
        if v.wesar {
            plan = plan.with_wesar(None)?;
        }
        Ok(SimConfig {
            qk_layernorm: v.qk_layernorm,
            ffn: v.ffn.unwrap_or(self.ffn),
            seed: self.seed,
            batch: self.batch,
            seq_len: self.seq_len,
            steps: self.steps,
            ..SimConfig::new(shape, plan)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub name: String,
    pub residual_growth: f64,
    pub last_first_ratio: f64,
    pub first_ln_input_var: f64,
    pub max_score_mean: f64,
    pub mean_zloss: f64,
    pub alerts: usize,
    pub explosions: usize,
}

/// Runs every variant in parallel; results keep manifest order.
pub fn run_ablation(manifest: &AblationManifest) -> Result<Vec<(AblationResult, IndicatorTrace)>> {
    manifest
        .variants
        .par_iter()
        .map(|v| {
            let trace = simulate_forward(&manifest.config_for(v)?)?;
            let alerts = explosion_check(&trace, DEFAULT_VAR_RATIO_CAP, DEFAULT_SCORE_MEAN_CAP)?;
            let first_ln = trace.layer_variances(Module::ResidualStream).first().copied().flatten();
            let max_score = trace
                .records
                .iter()
                .filter(|r| r.module == Module::AttentionScores)
                .map(|r| r.value.mean)
                .fold(f64::NEG_INFINITY, f64::max);
            let zl = if trace.zloss.is_empty() {
                f64::NAN
            } else {
                trace.zloss.iter().sum::<f64>() / trace.zloss.len() as f64
            };
            let result = AblationResult {
                name: v.name.clone(),
                residual_growth: trace.residual_growth().unwrap_or(f64::NAN),
                last_first_ratio: trace.variance_ratios().last().copied().unwrap_or(f64::NAN),
                first_ln_input_var: first_ln.unwrap_or(f64::NAN),
                max_score_mean: max_score,
                mean_zloss: zl,
                alerts: alerts.len(),
                explosions: trace.events.len(),
            };
            Ok((result, trace))
        })
        .collect()
}
