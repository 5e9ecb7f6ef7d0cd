//! Cross-frame similarity metrics and analytic cost models.

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gating::cosine_slices;
use crate::geometry::RemapResult;

/// Reference figures reported for the 7B-scale system. Printed next to desk-scale
/// results for context only; none of them is reproduced here.
pub mod reference {
    pub const MEAN_REUSE_GAP: f64 = 0.103;
    pub const REUSE_RATIO: f64 = 0.31;
    pub const FLOPS_SAVED_PER_STEP: f64 = 12.3e9;
    pub const FOOTPRINT_BYTES_PER_FRAME: f64 = 85.8e6;
    pub const ENCODER_BYPASS_RATE: f64 = 0.83;
    pub const LATENCY_BASELINE_MS: f64 = 637.0;
    pub const LATENCY_CACHED_MS: f64 = 419.0;
    pub const LAYERS: usize = 28;
    pub const TOKENS: usize = 196;
    pub const FEATURE_DIM: usize = 3584;
    pub const KV_DIM: usize = 512;
    /// Instruction length assumed when pricing selection at reference dims.
    pub const LANG_TOKENS: usize = 20;
}

/// Mean position-wise and view-aligned similarity between consecutive frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReuseGap {
    pub r_pos_mean: f64,
    pub r_align_mean: f64,
    pub delta_r: f64,
}

/// Out-of-view tokens contribute their position-wise similarity to the aligned
/// mean, so identity motion yields a gap of exactly zero.
pub fn reuse_gap(
    current: ArrayView2<'_, f64>,
    previous: ArrayView2<'_, f64>,
    remaps: &[RemapResult],
    epsilon: f64,
) -> Result<ReuseGap> {
    if current.dim() != previous.dim() {
        return Err(Error::Dimension { context: "reuse gap frames", expected: current.nrows(), found: previous.nrows() });
    }
    if remaps.len() != current.nrows() {
        return Err(Error::Dimension { context: "reuse gap remaps", expected: current.nrows(), found: remaps.len() });
    }
    let m = current.nrows();
    if m == 0 {
        return Ok(ReuseGap { r_pos_mean: 0.0, r_align_mean: 0.0, delta_r: 0.0 });
    }
    let row = |a: &ArrayView2<'_, f64>, i: usize| a.row(i).to_slice().map(<[f64]>::to_vec).unwrap_or_else(|| a.row(i).to_vec());
    let (mut pos, mut align) = (0.0, 0.0);
    for (i, r) in remaps.iter().enumerate() {
        let v = row(&current, i);
        let rp = cosine_slices(&v, &row(&previous, i), epsilon);
        let ra = match r {
            RemapResult::Aligned(j) => cosine_slices(&v, &row(&previous, *j), epsilon),
            RemapResult::OutOfView => rp,
        };
        pos += rp;
        align += ra;
    }
    let (r_pos_mean, r_align_mean) = (pos / m as f64, align / m as f64);
    Ok(ReuseGap { r_pos_mean, r_align_mean, delta_r: r_align_mean - r_pos_mean })
}

/// `4 * rho * L * M * D * d_kv`: key/value projection work skipped per step.
pub fn flop_savings(rho: f64, layers: usize, tokens: usize, feature_dim: usize, kv_dim: usize) -> f64 {
    4.0 * rho * layers as f64 * tokens as f64 * feature_dim as f64 * kv_dim as f64
}

/// Selection cost with each of the `k_window^2` neighbor comparisons charged a
/// full `D`-wide cosine: `M * (D + k^2 * D + L_q * D)`.
pub fn selection_overhead(tokens: usize, feature_dim: usize, k_window: usize, lang_tokens: usize) -> f64 {
    let (m, d, k, lq) = (tokens as f64, feature_dim as f64, k_window as f64, lang_tokens as f64);
    m * (d + k * k * d + lq * d)
}

/// The literal `M * (D + k^2 + L_q * D)` count, neighbor comparisons at unit cost.
pub fn selection_overhead_literal(tokens: usize, feature_dim: usize, k_window: usize, lang_tokens: usize) -> f64 {
    let (m, d, k, lq) = (tokens as f64, feature_dim as f64, k_window as f64, lang_tokens as f64);
    m * (d + k * k + lq * d)
}

/// Bytes held per frame: K and V blocks for every layer plus the feature cache.
pub fn memory_footprint(layers: usize, tokens: usize, kv_dim: usize, feature_dim: usize, bytes_per_scalar: usize) -> u64 {
    let (l, m, dkv, d, b) = (layers as u64, tokens as u64, kv_dim as u64, feature_dim as u64, bytes_per_scalar as u64);
    2 * l * m * dkv * b + m * d * b
}

/// Metrics of one navigation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub phase: String,
    pub r_pos: f64,
    pub r_align: f64,
    pub delta_r: f64,
    pub d_sem: f64,
    pub reuse_ratio: f64,
    pub flops_saved: f64,
    pub bypass: bool,
    /// False for the first step of an episode, which has no predecessor frame.
    pub has_previous: bool,
}

impl StepMetrics {
    pub fn check(&self) -> Result<()> {
        if (self.delta_r - (self.r_align - self.r_pos)).abs() > 1e-12 {
            return Err(Error::Invariant(format!("step {}: delta_r != r_align - r_pos", self.step)));
        }
        if !(0.0..=1.0).contains(&self.reuse_ratio) || !(0.0..=1.0).contains(&self.d_sem) {
            return Err(Error::Invariant(format!("step {}: ratio outside [0, 1]", self.step)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub steps: usize,
    pub r_pos: f64,
    pub r_align: f64,
    pub delta_r: f64,
    pub d_sem: f64,
    pub reuse_ratio: f64,
    pub bypass_rate: f64,
}

impl MetricMeans {
    fn of<'a>(rows: impl Iterator<Item = &'a StepMetrics>) -> Self {
        let mut acc = MetricMeans::default();
        for r in rows {
            acc.steps += 1;
            acc.r_pos += r.r_pos;
            acc.r_align += r.r_align;
            acc.delta_r += r.delta_r;
            acc.d_sem += r.d_sem;
            acc.reuse_ratio += r.reuse_ratio;
            acc.bypass_rate += if r.bypass { 1.0 } else { 0.0 };
        }
        if acc.steps > 0 {
            let n = acc.steps as f64;
            for v in [&mut acc.r_pos, &mut acc.r_align, &mut acc.delta_r, &mut acc.d_sem, &mut acc.reuse_ratio, &mut acc.bypass_rate] {
                *v /= n;
            }
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub overall: MetricMeans,
    pub per_phase: BTreeMap<String, MetricMeans>,
    pub total_flops_saved: f64,
    pub d_sem_trace: Vec<f64>,
}

/// Means over steps that have a predecessor frame (all steps if none do);
/// the FLOP total covers every step.
pub fn aggregate_episode(steps: &[StepMetrics]) -> Result<EpisodeReport> {
    if steps.is_empty() {
        return Err(Error::EmptyEpisode);
    }
    let with_prev: Vec<&StepMetrics> = steps.iter().filter(|s| s.has_previous).collect();
    let rows: Vec<&StepMetrics> = if with_prev.is_empty() { steps.iter().collect() } else { with_prev };
    let mut phases: Vec<&str> = Vec::new();
    for r in &rows {
        if !phases.contains(&r.phase.as_str()) {
            phases.push(&r.phase);
        }
    }
    let per_phase = phases
        .into_iter()
        .map(|p| (p.to_string(), MetricMeans::of(rows.iter().copied().filter(|r| r.phase == p))))
        .collect();
    Ok(EpisodeReport {
        overall: MetricMeans::of(rows.iter().copied()),
        per_phase,
        total_flops_saved: steps.iter().map(|s| s.flops_saved).sum(),
        d_sem_trace: steps.iter().map(|s| s.d_sem).collect(),
    })
}

pub const CSV_HEADER: &str = "step,phase,r_pos,r_align,delta_r,d_sem,reuse_ratio,flops_saved,bypass";

/// Per-step CSV with the fixed header. Floats use shortest round-trip formatting.
pub fn to_csv(steps: &[StepMetrics]) -> String {
    let mut out = String::with_capacity(64 * (steps.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in steps {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            s.step,
            s.phase,
            s.r_pos,
            s.r_align,
            s.delta_r,
            s.d_sem,
            s.reuse_ratio,
            s.flops_saved,
            u8::from(s.bypass)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn metrics(step: usize, phase: &str, r_pos: f64, r_align: f64, reuse: f64) -> StepMetrics {
        StepMetrics {
            step,
            phase: phase.into(),
            r_pos,
            r_align,
            delta_r: r_align - r_pos,
            d_sem: 0.1,
            reuse_ratio: reuse,
            flops_saved: 100.0 * reuse,
            bypass: false,
            has_previous: true,
        }
    }

    #[test]
    fn reuse_gap_identity_is_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let f = Array2::from_shape_fn((10, 4), |_| rng.random_range(-1.0..1.0));
        let remap: Vec<_> = (0..10).map(RemapResult::Aligned).collect();
        let g = reuse_gap(f.view(), f.view(), &remap, 1e-6).unwrap();
        assert_eq!(g.delta_r, 0.0);
        let oov = vec![RemapResult::OutOfView; 10];
        let g2 = reuse_gap(f.view(), f.view(), &oov, 1e-6).unwrap();
        assert_eq!(g2.delta_r, 0.0);
    }

    proptest! {
        #[test]
        fn reuse_gap_is_mean_of_per_token_differences(seed in any::<u64>(), m in 1usize..30) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cur = Array2::from_shape_fn((m, 5), |_| rng.random_range(-1.0..1.0));
            let prev = Array2::from_shape_fn((m, 5), |_| rng.random_range(-1.0..1.0));
            let remap: Vec<_> = (0..m)
                .map(|_| if rng.random_bool(0.8) { RemapResult::Aligned(rng.random_range(0..m)) } else { RemapResult::OutOfView })
                .collect();
            let g = reuse_gap(cur.view(), prev.view(), &remap, 1e-6).unwrap();
            let cos = |a: usize, b: usize| {
                let (x, y) = (cur.row(a), prev.row(b));
                let dot: f64 = x.iter().zip(y.iter()).map(|(p, q)| p * q).sum();
                let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                dot / (nx * ny + 1e-6)
            };
            let per_token: f64 = (0..m).map(|i| {
                let rp = cos(i, i);
                let ra = remap[i].index().map_or(rp, |j| cos(i, j));
                ra - rp
            }).sum::<f64>() / m as f64;
            prop_assert!((g.delta_r - per_token).abs() <= 1e-12);
            prop_assert!((g.delta_r - (g.r_align_mean - g.r_pos_mean)).abs() <= 1e-12);
        }

        #[test]
        fn flop_savings_linear(rho in 0.0f64..1.0, l in 1usize..50, m in 1usize..300, d in 1usize..100, k in 1usize..100, c in 1usize..5) {
            let base = flop_savings(rho, l, m, d, k);
            prop_assert!((flop_savings(rho, l * c, m, d, k) - base * c as f64).abs() <= 1e-6 * base.max(1.0));
            prop_assert!((flop_savings(rho, l, m * c, d, k) - base * c as f64).abs() <= 1e-6 * base.max(1.0));
            prop_assert!((flop_savings(rho / c as f64, l, m, d, k) * c as f64 - base).abs() <= 1e-6 * base.max(1.0));
        }

        #[test]
        fn footprint_closed_form(l in 0usize..64, m in 0usize..400, dkv in 0usize..1024, d in 0usize..4096, b in 1usize..8) {
            let expected = (2 * l * m * dkv * b + m * d * b) as u64;
            prop_assert_eq!(memory_footprint(l, m, dkv, d, b), expected);
        }
    }

    #[test]
    fn flop_savings_examples() {
        assert_eq!(flop_savings(0.0, 28, 196, 3584, 512), 0.0);
        assert_eq!(flop_savings(1.0, 1, 1, 1, 1), 4.0);
        let reference = flop_savings(0.31, 28, 196, 3584, 512);
        // 4 * 0.31 * 28 * 196 * 3584 * 512 = 12,487,449,640.96
        assert!((reference - 12_487_449_640.96).abs() < 1e-3);
        assert!((reference - 12.3e9).abs() / 12.3e9 < 0.03);
    }

    #[test]
    fn selection_overhead_examples() {
        assert_eq!(selection_overhead(196, 3584, 3, 20), 21_073_920.0);
        assert_eq!(selection_overhead(0, 3584, 3, 20), 0.0);
        assert_eq!(selection_overhead_literal(196, 3584, 3, 20), 196.0 * (3584.0 + 9.0 + 20.0 * 3584.0));
        let ratio = selection_overhead(196, 3584, 3, 20) / flop_savings(0.31, 28, 196, 3584, 512);
        assert!(ratio < 0.002, "{ratio}");
    }

    #[test]
    fn overhead_ratio_vanishes_with_depth() {
        let ratio = |l: usize| selection_overhead(196, 3584, 3, 20) / flop_savings(0.31, l, 196, 3584, 512);
        let mut last = f64::INFINITY;
        for l in [1, 2, 4, 8, 16, 32, 64, 128, 1024] {
            let r = ratio(l);
            assert!(r < last);
            last = r;
        }
        assert!(ratio(1 << 20) < 1e-6);
    }

    #[test]
    fn footprint_examples() {
        assert_eq!(memory_footprint(0, 0, 0, 0, 4), 0);
        assert_eq!(memory_footprint(4, 64, 16, 32, 4), 40_960);
        let reference = memory_footprint(28, 196, 512, 3584, 2);
        // 2*28*196*512*2 + 196*3584*2 = 11,239,424 + 1,404,928
        assert_eq!(reference, 12_644_352);
        assert_eq!(2 * 28 * 196 * 512 * 2, 11_239_424);
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_episode(&[]), Err(Error::EmptyEpisode));
        let one = metrics(0, "cruising", 0.5, 0.7, 0.4);
        let rep = aggregate_episode(std::slice::from_ref(&one)).unwrap();
        assert_eq!(rep.overall.r_pos, 0.5);
        assert_eq!(rep.overall.r_align, 0.7);
        assert_eq!(rep.overall.reuse_ratio, 0.4);
        assert_eq!(rep.total_flops_saved, one.flops_saved);
        let steps = vec![
            StepMetrics { has_previous: false, ..metrics(0, "exploration", 0.0, 0.0, 0.0) },
            metrics(1, "exploration", 0.2, 0.6, 0.2),
            metrics(2, "exploration", 0.4, 0.6, 0.4),
            metrics(3, "cruising", 0.8, 0.9, 0.6),
        ];
        let rep = aggregate_episode(&steps).unwrap();
        assert_eq!(rep.overall.steps, 3);
        assert!((rep.per_phase["exploration"].delta_r - 0.3).abs() < 1e-12);
        assert!((rep.per_phase["cruising"].delta_r - 0.1).abs() < 1e-12);
        assert_eq!(rep.d_sem_trace.len(), 4);
    }

    #[test]
    fn csv_has_fixed_header() {
        let csv = to_csv(&[metrics(1, "goal", 0.25, 0.5, 0.5)]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.next(), Some("1,goal,0.25,0.5,0.25,0.1,0.5,50,0"));
    }
}
