//! Seeded single-head attention decoder used as the exact-recompute oracle.
//!
//! Vision tokens contribute keys and values at every layer; the language
//! tokens are the queries and carry the residual stream. The sequence is
//! `[vision ‖ language]` with rotary phases by sequence position, applied
//! before keys enter the cache.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cache::{attention_entropy, splice, KvCacheState, LayerKv};
use crate::error::{Error, Result};
use crate::geometry::RemapResult;
use crate::semantics::vision_block;

/// Discrete action readout: forward, turn left, turn right, stop.
pub const ACTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub layers: usize,
    pub feature_dim: usize,
    pub kv_dim: usize,
    pub lang_tokens: usize,
    pub seed: u64,
    pub rope_base: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { layers: 4, feature_dim: 32, kv_dim: 16, lang_tokens: 6, seed: 7, rope_base: 10_000.0 }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 || self.lang_tokens < 1 || self.kv_dim < 1 || self.feature_dim < self.kv_dim {
            return Err(Error::Config(format!(
                "model requires layers >= 1, lang_tokens >= 1 and feature_dim >= kv_dim >= 1 (got L={}, L_q={}, D={}, d_kv={})",
                self.layers, self.lang_tokens, self.feature_dim, self.kv_dim
            )));
        }
        if self.kv_dim % 2 != 0 {
            return Err(Error::Config(format!("model.kv_dim = {} must be even for rotary embedding", self.kv_dim)));
        }
        if !(self.rope_base > 0.0 && self.rope_base.is_finite()) {
            return Err(Error::Config(format!("model.rope_base = {} must be positive", self.rope_base)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub spec: ModelSpec,
    pub layers: Vec<LayerWeights>,
    /// Instruction token embeddings, `[L_q, D]`.
    pub language: Array2<f64>,
    pub action_head: Array2<f64>,
}

#[derive(Clone, Copy)]
enum MatrixId {
    Query = 0,
    Key = 1,
    Value = 2,
    Output = 3,
    Language = 4,
    ActionHead = 5,
}

/// Gaussian matrix drawn from an independent ChaCha stream per `(seed, layer, matrix)`.
fn seeded_matrix(seed: u64, layer: u64, id: MatrixId, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((layer << 8) | id as u64);
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    })
}

pub fn init_weights(spec: &ModelSpec) -> Result<WeightSet> {
    spec.validate()?;
    let (d, dkv) = (spec.feature_dim, spec.kv_dim);
    let scale = 1.0 / (d as f64).sqrt();
    let layers = (0..spec.layers as u64)
        .map(|l| LayerWeights {
            w_q: seeded_matrix(spec.seed, l, MatrixId::Query, d, dkv, scale),
            w_k: seeded_matrix(spec.seed, l, MatrixId::Key, d, dkv, scale),
            w_v: seeded_matrix(spec.seed, l, MatrixId::Value, d, dkv, scale),
            w_o: seeded_matrix(spec.seed, l, MatrixId::Output, dkv, d, scale),
        })
        .collect();
    let shared = u64::from(u32::MAX);
    Ok(WeightSet {
        spec: *spec,
        layers,
        language: seeded_matrix(spec.seed, shared, MatrixId::Language, spec.lang_tokens, d, 1.0),
        action_head: seeded_matrix(spec.seed, shared, MatrixId::ActionHead, d, ACTIONS, scale),
    })
}

/// Rotate consecutive coordinate pairs `(2j, 2j+1)` by `position / base^(2j/d)`.
pub fn apply_rope(vec: &[f64], position: usize, rope_base: f64) -> Result<Vec<f64>> {
    let d = vec.len();
    if d % 2 != 0 {
        return Err(Error::Dimension { context: "rotary embedding (even width)", expected: d + 1, found: d });
    }
    let mut out = vec.to_vec();
    rope_in_place(&mut out, position, rope_base);
    Ok(out)
}

fn rope_in_place(v: &mut [f64], position: usize, rope_base: f64) {
    let d = v.len();
    for j in 0..d / 2 {
        let theta = position as f64 / rope_base.powf(2.0 * j as f64 / d as f64);
        let (sin, cos) = theta.sin_cos();
        let (a, b) = (v[2 * j], v[2 * j + 1]);
        v[2 * j] = a * cos - b * sin;
        v[2 * j + 1] = a * sin + b * cos;
    }
}

fn rope_rows(block: &mut Array2<f64>, offset: usize, rope_base: f64) {
    for (i, mut row) in block.axis_iter_mut(Axis(0)).enumerate() {
        rope_in_place(row.as_slice_mut().expect("row-major block"), offset + i, rope_base);
    }
}

fn rms_norm(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len().max(1) as f64;
        let inv = 1.0 / (ms + 1e-12).sqrt();
        row.mapv_inplace(|v| v * inv);
    }
    out
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Which cached rows each layer should reuse. `masks` holds one (budget-trimmed) mask per layer.
#[derive(Debug, Clone, Copy)]
pub struct CachePlan<'a> {
    pub masks: &'a [Vec<bool>],
    pub remap: &'a [RemapResult],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub action_scores: Vec<f64>,
    /// Per layer, `[L_q, M + L_q]` attention of the language queries.
    pub attention: Vec<Array2<f64>>,
    /// Per layer, the vision-token key/value blocks the step actually attended to.
    pub kv: Vec<LayerKv>,
    /// Per layer normalized entropy of the (renormalized) vision attention block.
    pub entropy: Vec<f64>,
}

impl StepOutput {
    /// Layer-averaged language-to-vision attention, rows renormalized over the `m` vision keys.
    pub fn vision_attention(&self, m: usize) -> Array2<f64> {
        let mut acc: Option<Array2<f64>> = None;
        for a in &self.attention {
            let block = vision_block(a.view(), m);
            acc = Some(match acc {
                None => block,
                Some(sum) => sum + block,
            });
        }
        acc.map(|sum| sum / self.attention.len() as f64).unwrap_or_else(|| Array2::zeros((0, m)))
    }
}

impl WeightSet {
    /// Post-rotary keys and values of every vision token at every layer.
    pub fn fresh_kv(&self, tokens: ArrayView2<'_, f64>) -> Result<Vec<LayerKv>> {
        if tokens.ncols() != self.spec.feature_dim {
            return Err(Error::Dimension { context: "vision token width", expected: self.spec.feature_dim, found: tokens.ncols() });
        }
        let x = rms_norm(tokens);
        Ok(self
            .layers
            .iter()
            .map(|w| {
                let mut keys = x.dot(&w.w_k);
                rope_rows(&mut keys, 0, self.spec.rope_base);
                LayerKv { keys, values: x.dot(&w.w_v) }
            })
            .collect())
    }

    /// One decoder pass. Without a plan every vision key/value is recomputed.
    pub fn forward_step(
        &self,
        tokens: ArrayView2<'_, f64>,
        plan: Option<CachePlan<'_>>,
        cache: Option<&KvCacheState>,
        epsilon: f64,
    ) -> Result<StepOutput> {
        let m = tokens.nrows();
        let fresh = self.fresh_kv(tokens)?;
        let vision: Vec<LayerKv> = match plan {
            None => fresh,
            Some(plan) => {
                let cache = cache.ok_or_else(|| Error::Invariant("cache plan given without a cache".into()))?;
                if plan.masks.len() != self.spec.layers {
                    return Err(Error::Dimension { context: "plan layers", expected: self.spec.layers, found: plan.masks.len() });
                }
                fresh
                    .iter()
                    .enumerate()
                    .map(|(l, kv)| splice(&plan.masks[l], plan.remap, cache, kv.keys.view(), kv.values.view(), l))
                    .collect::<Result<_>>()?
            }
        };

        let scale = 1.0 / (self.spec.kv_dim as f64).sqrt();
        let mut hidden = self.language.clone();
        let mut attention = Vec::with_capacity(self.spec.layers);
        let mut entropy = Vec::with_capacity(self.spec.layers);
        for (w, kv) in self.layers.iter().zip(&vision) {
            let hn = rms_norm(hidden.view());
            let mut q = hn.dot(&w.w_q);
            let mut k_lang = hn.dot(&w.w_k);
            rope_rows(&mut q, m, self.spec.rope_base);
            rope_rows(&mut k_lang, m, self.spec.rope_base);
            let v_lang = hn.dot(&w.w_v);
            let keys = concatenate(Axis(0), &[kv.keys.view(), k_lang.view()]).expect("matching widths");
            let values = concatenate(Axis(0), &[kv.values.view(), v_lang.view()]).expect("matching widths");
            let mut attn = q.dot(&keys.t()) * scale;
            softmax_rows(&mut attn);
            entropy.push(attention_entropy(vision_block(attn.view(), m).view(), epsilon)?);
            hidden = hidden + attn.dot(&values).dot(&w.w_o);
            attention.push(attn);
        }
        let pooled = rms_norm(hidden.view()).mean_axis(Axis(0)).expect("at least one query");
        let action_scores = pooled.dot(&self.action_head).to_vec();
        Ok(StepOutput { action_scores, attention, kv: vision, entropy })
    }
}

/// Largest absolute elementwise difference between two action vectors.
pub fn max_abs_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
