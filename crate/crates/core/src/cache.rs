//! Per-layer key/value store, cross-frame token splice and the
//! entropy-adaptive reuse budget.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RemapResult;
use crate::semantics::check_rows;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// One budget per layer from that layer's attention entropy.
    #[default]
    PerLayer,
    /// A single cap of `rho_max` on every layer, for models that do not expose attention.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub rho_min: f64,
    pub rho_max: f64,
    pub alpha: f64,
    pub mode: BudgetMode,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self { rho_min: 0.0, rho_max: 0.90, alpha: 0.5, mode: BudgetMode::PerLayer }
    }
}

impl BudgetConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rho_min.is_finite()
            && self.rho_max.is_finite()
            && 0.0 <= self.rho_min
            && self.rho_min <= self.rho_max
            && self.rho_max <= 1.0;
        if !ok {
            return Err(Error::Config(format!(
                "budget requires 0 <= rho_min <= rho_max <= 1 (got rho_min={}, rho_max={})",
                self.rho_min, self.rho_max
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("budget.alpha = {} must be non-negative", self.alpha)));
        }
        Ok(())
    }

    /// Budget for a layer whose normalized attention entropy was `entropy`.
    pub fn budget(&self, entropy: f64) -> f64 {
        match self.mode {
            BudgetMode::PerLayer => layer_budget(entropy, self),
            BudgetMode::Global => self.rho_max,
        }
    }
}

/// `clip(rho_max - alpha * H, rho_min, rho_max)`.
pub fn layer_budget(entropy: f64, cfg: &BudgetConfig) -> f64 {
    (cfg.rho_max - cfg.alpha * entropy).clamp(cfg.rho_min, cfg.rho_max)
}

/// Mean row entropy of an attention block over `M` keys, normalized by `ln M`.
pub fn attention_entropy(attn: ArrayView2<'_, f64>, epsilon: f64) -> Result<f64> {
    check_rows(&attn)?;
    let m = attn.ncols();
    if m <= 1 || attn.nrows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = attn
        .axis_iter(Axis(0))
        .map(|row| -row.iter().map(|&p| p * (p + epsilon).ln()).sum::<f64>())
        .sum();
    let mean = total / attn.nrows() as f64;
    Ok((mean / (m as f64).ln()).clamp(0.0, 1.0))
}

/// Maximum number of reused tokens allowed by budget `rho` over `m` tokens.
pub fn budget_capacity(rho: f64, m: usize) -> usize {
    // Guard against products like 0.29 * 100 = 28.999999999999996.
    ((rho * m as f64) + 1e-9).floor().max(0.0) as usize
}

/// Trim a fused mask to at most `floor(rho * M)` tokens, keeping the highest
/// aligned similarities (ties to the lower index).
pub fn enforce_budget(mask: &[bool], align_scores: &[f64], rho: f64) -> Vec<bool> {
    let cap = budget_capacity(rho, mask.len());
    let mut reused: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if reused.len() <= cap {
        return mask.to_vec();
    }
    reused.sort_by(|&a, &b| align_scores[b].total_cmp(&align_scores[a]).then(a.cmp(&b)));
    let mut out = vec![false; mask.len()];
    for &i in reused.iter().take(cap) {
        out[i] = true;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerKv {
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
}

impl LayerKv {
    pub fn new(keys: Array2<f64>, values: Array2<f64>) -> Result<Self> {
        if keys.dim() != values.dim() {
            return Err(Error::Dimension { context: "key/value block", expected: keys.nrows(), found: values.nrows() });
        }
        Ok(Self { keys, values })
    }
}

/// Cached key/value blocks of the vision tokens plus the encoder features they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCacheState {
    pub layers: Vec<LayerKv>,
    pub feature_cache: Array2<f64>,
    pub step: u64,
}

/// How [`KvCacheState::update`] writes the spliced blocks.
#[derive(Debug, Clone, Copy)]
pub enum WritePolicy<'a> {
    /// Overwrite every row.
    All,
    /// Skip rows that were reused in place (`m = 1` and `remap = i`); their
    /// stored value is already the spliced one. Masks are per layer.
    RefreshedOnly { masks: &'a [Vec<bool>], remap: &'a [RemapResult] },
}

impl KvCacheState {
    pub fn new(layers: Vec<LayerKv>, feature_cache: Array2<f64>, step: u64) -> Result<Self> {
        let state = Self { layers, feature_cache, step };
        state.check_shapes()?;
        Ok(state)
    }

    pub fn tokens(&self) -> usize {
        self.feature_cache.nrows()
    }

    pub fn kv_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.keys.ncols())
    }

    fn check_shapes(&self) -> Result<()> {
        let m = self.tokens();
        let d = self.kv_dim();
        for layer in &self.layers {
            for block in [&layer.keys, &layer.values] {
                if block.nrows() != m {
                    return Err(Error::Dimension { context: "cached block tokens", expected: m, found: block.nrows() });
                }
                if block.ncols() != d {
                    return Err(Error::Dimension { context: "cached block width", expected: d, found: block.ncols() });
                }
            }
        }
        Ok(())
    }

    /// Next cache state after step `step` produced `spliced` blocks from `features`.
    pub fn update(
        &self,
        spliced: &[LayerKv],
        features: ArrayView2<'_, f64>,
        step: u64,
        policy: WritePolicy<'_>,
    ) -> Result<KvCacheState> {
        if step <= self.step {
            return Err(Error::StaleWrite { current: self.step, attempted: step });
        }
        if spliced.len() != self.layers.len() {
            return Err(Error::Dimension { context: "cache layers", expected: self.layers.len(), found: spliced.len() });
        }
        if features.dim() != self.feature_cache.dim() {
            return Err(Error::Dimension {
                context: "feature cache",
                expected: self.feature_cache.ncols(),
                found: features.ncols(),
            });
        }
        let layers = match policy {
            WritePolicy::All => spliced.to_vec(),
            WritePolicy::RefreshedOnly { masks, remap } => {
                if masks.len() != self.layers.len() {
                    return Err(Error::Dimension { context: "layer masks", expected: self.layers.len(), found: masks.len() });
                }
                let mut layers = self.layers.clone();
                for ((dst, src), mask) in layers.iter_mut().zip(spliced).zip(masks) {
                    for i in 0..self.tokens() {
                        let in_place = mask[i] && remap[i] == RemapResult::Aligned(i);
                        if !in_place {
                            dst.keys.row_mut(i).assign(&src.keys.row(i));
                            dst.values.row_mut(i).assign(&src.values.row(i));
                        }
                    }
                }
                layers
            }
        };
        let next = KvCacheState { layers, feature_cache: features.to_owned(), step };
        next.check_shapes()?;
        Ok(next)
    }

    /// Serialize as a JSON header followed by little-endian f32 blocks:
    /// `b"VLNC"`, header length (u32 LE), header, then per layer K then V
    /// (row-major `[M, d_kv]`), then the feature cache (`[M, D]`).
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        let header = SnapshotHeader {
            format: SNAPSHOT_FORMAT.to_string(),
            version: 1,
            layers: self.layers.len(),
            tokens: self.tokens(),
            kv_dim: self.kv_dim(),
            feature_dim: self.feature_cache.ncols(),
            step: self.step,
            dtype: "f32le".to_string(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Snapshot(e.to_string()))?;
        let io = |e: std::io::Error| Error::Snapshot(e.to_string());
        w.write_all(SNAPSHOT_MAGIC).map_err(io)?;
        w.write_all(&(json.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        let mut buf = Vec::new();
        for layer in &self.layers {
            for block in [&layer.keys, &layer.values] {
                block.iter().for_each(|&v| buf.extend_from_slice(&(v as f32).to_le_bytes()));
            }
        }
        self.feature_cache.iter().for_each(|&v| buf.extend_from_slice(&(v as f32).to_le_bytes()));
        w.write_all(&buf).map_err(io)
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<KvCacheState> {
        let io = |e: std::io::Error| Error::Snapshot(e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(io)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json).map_err(io)?;
        let header: SnapshotHeader = serde_json::from_slice(&json).map_err(|e| Error::Snapshot(e.to_string()))?;
        if header.format != SNAPSHOT_FORMAT || header.version != 1 || header.dtype != "f32le" {
            return Err(Error::Snapshot(format!("unsupported snapshot {} v{} {}", header.format, header.version, header.dtype)));
        }
        let mut read_block = |rows: usize, cols: usize| -> Result<Array2<f64>> {
            let mut raw = vec![0u8; rows * cols * 4];
            r.read_exact(&mut raw).map_err(io)?;
            let vals: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            Array2::from_shape_vec((rows, cols), vals).map_err(|e| Error::Snapshot(e.to_string()))
        };
        let mut layers = Vec::with_capacity(header.layers);
        for _ in 0..header.layers {
            let keys = read_block(header.tokens, header.kv_dim)?;
            let values = read_block(header.tokens, header.kv_dim)?;
            layers.push(LayerKv { keys, values });
        }
        let feature_cache = read_block(header.tokens, header.feature_dim)?;
        KvCacheState::new(layers, feature_cache, header.step)
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"VLNC";
const SNAPSHOT_FORMAT: &str = "vln-cache-kv";

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotHeader {
    format: String,
    version: u32,
    layers: usize,
    tokens: usize,
    kv_dim: usize,
    feature_dim: usize,
    step: u64,
    dtype: String,
}

/// Assemble one layer's key/value blocks: cached rows at the remap target
/// where `mask` is set, fresh rows elsewhere.
pub fn splice(
    mask: &[bool],
    remap: &[RemapResult],
    cache: &KvCacheState,
    fresh_k: ArrayView2<'_, f64>,
    fresh_v: ArrayView2<'_, f64>,
    layer: usize,
) -> Result<LayerKv> {
    let cached = cache.layers.get(layer).ok_or(Error::Dimension {
        context: "cache layer index",
        expected: cache.layers.len(),
        found: layer,
    })?;
    if fresh_k.dim() != cached.keys.dim() || fresh_v.dim() != cached.values.dim() {
        return Err(Error::Dimension { context: "fresh key/value block", expected: cached.keys.nrows(), found: fresh_k.nrows() });
    }
    if mask.len() != fresh_k.nrows() || remap.len() != fresh_k.nrows() {
        return Err(Error::Dimension { context: "splice mask", expected: fresh_k.nrows(), found: mask.len() });
    }
    let mut keys = fresh_k.to_owned();
    let mut values = fresh_v.to_owned();
    for (i, &reuse) in mask.iter().enumerate() {
        if reuse {
            let j = remap[i].index().ok_or(Error::MaskRemapInconsistency(i))?;
            keys.row_mut(i).assign(&cached.keys.row(j));
            values.row_mut(i).assign(&cached.values.row(j));
        }
    }
    Ok(LayerKv { keys, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    const EPS: f64 = 1e-6;

    fn cfg(rho_min: f64, rho_max: f64, alpha: f64) -> BudgetConfig {
        BudgetConfig { rho_min, rho_max, alpha, mode: BudgetMode::PerLayer }
    }

    #[test]
    fn layer_budget_examples() {
        assert_eq!(layer_budget(0.0, &cfg(0.0, 0.90, 0.5)), 0.90);
        assert_eq!(layer_budget(1.0, &cfg(0.0, 0.90, 10.0)), 0.0);
        assert!((layer_budget(0.5, &cfg(0.1, 0.90, 0.6)) - 0.60).abs() < 1e-12);
        let global = BudgetConfig { mode: BudgetMode::Global, ..cfg(0.0, 0.9, 0.5) };
        assert_eq!(global.budget(1.0), 0.9);
    }

    #[test]
    fn budget_config_validation() {
        assert!(cfg(0.5, 0.4, 0.1).validate().is_err());
        assert!(cfg(0.0, 1.1, 0.1).validate().is_err());
        assert!(cfg(0.0, 0.9, -0.1).validate().is_err());
        assert!(BudgetConfig::default().validate().is_ok());
    }

    #[test]
    fn entropy_examples() {
        let uniform = Array2::from_elem((3, 16), 1.0 / 16.0);
        assert!((attention_entropy(uniform.view(), EPS).unwrap() - 1.0).abs() < 1e-4);
        let mut one_hot = Array2::zeros((2, 16));
        one_hot[(0, 3)] = 1.0;
        one_hot[(1, 9)] = 1.0;
        assert!(attention_entropy(one_hot.view(), EPS).unwrap() < 1e-5);
        let half = array![[0.5, 0.5, 0.0, 0.0]];
        let h = attention_entropy(half.view(), EPS).unwrap();
        assert!((h - 0.5).abs() < 1e-5, "{h}");
        // Exact value with the epsilon inside the log.
        let exact = -(0.5f64 * (0.5f64 + EPS).ln()) * 2.0 / 4f64.ln();
        assert!((h - exact).abs() < 1e-15);
        let bad = array![[0.5, 0.6]];
        assert!(matches!(attention_entropy(bad.view(), EPS), Err(Error::AttentionNormalization { .. })));
    }

    #[test]
    fn enforce_budget_examples() {
        let mut m = vec![false; 196];
        m.iter_mut().take(50).for_each(|b| *b = true);
        let scores = vec![0.5; 196];
        assert_eq!(enforce_budget(&m, &scores, 0.90), m);
        let trimmed = enforce_budget(&[true; 4], &[0.9, 0.7, 0.8, 0.6], 0.5);
        assert_eq!(trimmed, vec![true, false, true, false]);
        assert_eq!(enforce_budget(&[true; 4], &[0.9; 4], 0.0), vec![false; 4]);
        // ties keep the lower index
        assert_eq!(enforce_budget(&[true; 4], &[0.5; 4], 0.5), vec![true, true, false, false]);
    }

    #[test]
    fn capacity_is_robust_to_rounding() {
        assert_eq!(budget_capacity(0.29, 100), 29);
        assert_eq!(budget_capacity(0.9, 64), 57);
        assert_eq!(budget_capacity(1.0, 64), 64);
        assert_eq!(budget_capacity(0.0, 64), 0);
    }

    fn random_block(rng: &mut impl Rng, m: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((m, d), |_| rng.random_range(-1.0..1.0))
    }

    fn random_state(seed: u64, layers: usize, m: usize, d: usize) -> KvCacheState {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..layers)
            .map(|_| LayerKv { keys: random_block(&mut rng, m, d), values: random_block(&mut rng, m, d) })
            .collect();
        KvCacheState::new(layers, random_block(&mut rng, m, 5), 0).unwrap()
    }

    #[test]
    fn splice_degenerate_masks() {
        let cache = random_state(1, 2, 8, 4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let fk = random_block(&mut rng, 8, 4);
        let fv = random_block(&mut rng, 8, 4);
        let identity: Vec<_> = (0..8).map(RemapResult::Aligned).collect();
        let none = splice(&[false; 8], &identity, &cache, fk.view(), fv.view(), 1).unwrap();
        assert_eq!(none.keys, fk);
        assert_eq!(none.values, fv);
        let all = splice(&[true; 8], &identity, &cache, fk.view(), fv.view(), 1).unwrap();
        assert_eq!(all, cache.layers[1]);
    }

    #[test]
    fn splice_mixed_mask_matches_elementwise_oracle() {
        let cache = random_state(3, 3, 8, 4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for trial in 0..50 {
            let fk = random_block(&mut rng, 8, 4);
            let fv = random_block(&mut rng, 8, 4);
            let remap: Vec<_> = (0..8)
                .map(|_| if rng.random_bool(0.8) { RemapResult::Aligned(rng.random_range(0..8)) } else { RemapResult::OutOfView })
                .collect();
            let mask: Vec<bool> = remap.iter().map(|r| r.is_in_view() && rng.random_bool(0.5)).collect();
            let layer = trial % 3;
            let out = splice(&mask, &remap, &cache, fk.view(), fv.view(), layer).unwrap();
            for i in 0..8 {
                for d in 0..4 {
                    let (ek, ev) = match (mask[i], remap[i]) {
                        (true, RemapResult::Aligned(j)) => (cache.layers[layer].keys[(j, d)], cache.layers[layer].values[(j, d)]),
                        _ => (fk[(i, d)], fv[(i, d)]),
                    };
                    assert_eq!(out.keys[(i, d)].to_bits(), ek.to_bits());
                    assert_eq!(out.values[(i, d)].to_bits(), ev.to_bits());
                }
            }
        }
    }

    #[test]
    fn splice_rejects_reuse_without_remap() {
        let cache = random_state(5, 1, 4, 2);
        let f = Array2::zeros((4, 2));
        let remap = vec![RemapResult::Aligned(0), RemapResult::OutOfView, RemapResult::Aligned(2), RemapResult::Aligned(3)];
        let err = splice(&[false, true, false, false], &remap, &cache, f.view(), f.view(), 0).unwrap_err();
        assert_eq!(err, Error::MaskRemapInconsistency(1));
    }

    #[test]
    fn splice_leaves_no_holes() {
        // Poison the fresh blocks with NaN sentinels where reuse happens and the
        // cache with NaN elsewhere: every output row must come from a clean source.
        let mut cache = random_state(6, 1, 16, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let remap: Vec<_> = (0..16).map(|i| RemapResult::Aligned((i + 3) % 16)).collect();
        let mask: Vec<bool> = (0..16).map(|_| rng.random_bool(0.5)).collect();
        let mut fk = random_block(&mut rng, 16, 3);
        let mut fv = fk.clone();
        for i in 0..16 {
            if mask[i] {
                fk.row_mut(i).fill(f64::NAN);
                fv.row_mut(i).fill(f64::NAN);
            } else {
                let j = (i + 3) % 16;
                if !mask.iter().enumerate().any(|(t, &m)| m && (t + 3) % 16 == j) {
                    cache.layers[0].keys.row_mut(j).fill(f64::NAN);
                    cache.layers[0].values.row_mut(j).fill(f64::NAN);
                }
            }
        }
        let out = splice(&mask, &remap, &cache, fk.view(), fv.view(), 0).unwrap();
        assert!(out.keys.iter().chain(out.values.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn write_policies_agree() {
        let cache = random_state(8, 2, 10, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let remap: Vec<_> = (0..10)
            .map(|i| match i % 3 {
                0 => RemapResult::Aligned(i),
                1 => RemapResult::Aligned((i + 1) % 10),
                _ => RemapResult::OutOfView,
            })
            .collect();
        let masks: Vec<Vec<bool>> = (0..2)
            .map(|_| remap.iter().map(|r| r.is_in_view() && rng.random_bool(0.7)).collect())
            .collect();
        let spliced: Vec<LayerKv> = (0..2)
            .map(|l| {
                let fk = random_block(&mut rng, 10, 3);
                let fv = random_block(&mut rng, 10, 3);
                splice(&masks[l], &remap, &cache, fk.view(), fv.view(), l).unwrap()
            })
            .collect();
        let feats = random_block(&mut rng, 10, 5);
        let a = cache.update(&spliced, feats.view(), 1, WritePolicy::All).unwrap();
        let b = cache
            .update(&spliced, feats.view(), 1, WritePolicy::RefreshedOnly { masks: &masks, remap: &remap })
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.step, 1);
        assert_eq!(a.feature_cache, feats);
    }

    #[test]
    fn update_rejects_stale_step() {
        let cache = random_state(10, 1, 4, 2);
        let spliced = cache.layers.clone();
        let next = cache.update(&spliced, cache.feature_cache.view(), 3, WritePolicy::All).unwrap();
        assert_eq!(
            next.update(&spliced, cache.feature_cache.view(), 3, WritePolicy::All),
            Err(Error::StaleWrite { current: 3, attempted: 3 })
        );
    }

    #[test]
    fn snapshot_round_trip_rounds_to_f32() {
        let cache = random_state(11, 3, 6, 4);
        let mut bytes = Vec::new();
        cache.write_snapshot(&mut bytes).unwrap();
        let back = KvCacheState::read_snapshot(bytes.as_slice()).unwrap();
        assert_eq!(back.step, cache.step);
        for (a, b) in back.layers.iter().zip(&cache.layers) {
            assert_eq!(a.keys, b.keys.mapv(|v| v as f32 as f64));
            assert_eq!(a.values, b.values.mapv(|v| v as f32 as f64));
        }
        assert_eq!(back.feature_cache, cache.feature_cache.mapv(|v| v as f32 as f64));
        // header length + magic + 4 bytes per scalar
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 8 + hlen + 4 * (3 * 2 * 6 * 4 + 6 * 5));
        assert!(KvCacheState::read_snapshot(&b"XXXX"[..]).is_err());
    }

    proptest! {
        #[test]
        fn enforce_budget_caps_and_is_subset(
            bits in proptest::collection::vec((any::<bool>(), 0.0f64..1.0), 1..200),
            rho in 0.0f64..=1.0,
        ) {
            let (mask, scores): (Vec<bool>, Vec<f64>) = bits.into_iter().unzip();
            let out = enforce_budget(&mask, &scores, rho);
            let cap = budget_capacity(rho, mask.len());
            let count = out.iter().filter(|&&b| b).count();
            prop_assert!(count <= cap);
            prop_assert_eq!(count, mask.iter().filter(|&&b| b).count().min(cap));
            for i in 0..mask.len() { prop_assert!(out[i] <= mask[i]); }
        }

        #[test]
        fn budget_monotone_in_entropy(h1 in 0.0f64..=1.0, h2 in 0.0f64..=1.0, alpha in 0.0f64..5.0, lo in 0.0f64..0.5, hi in 0.5f64..=1.0) {
            let c = cfg(lo, hi, alpha);
            let (a, b) = if h1 < h2 { (h1, h2) } else { (h2, h1) };
            prop_assert!(layer_budget(a, &c) >= layer_budget(b, &c));
            let r = layer_budget(h1, &c);
            prop_assert!(r >= lo && r <= hi);
        }

        #[test]
        fn entropy_in_unit_interval(raw in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 2..20), 1..6)) {
            let m = raw.iter().map(Vec::len).min().unwrap();
            let rows: Vec<f64> = raw.iter().flat_map(|r| {
                let r = &r[..m];
                let s: f64 = r.iter().sum::<f64>() + 1e-3;
                let mut v: Vec<f64> = r.iter().map(|x| (x + 1e-3 / m as f64) / s).collect();
                let fix: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= fix);
                v
            }).collect();
            let attn = Array2::from_shape_vec((raw.len(), m), rows).unwrap();
            let h = attention_entropy(attn.view(), EPS).unwrap();
            prop_assert!((0.0..=1.0).contains(&h));
        }
    }
}
