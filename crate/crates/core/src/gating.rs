//! Per-token reuse gates: visual stability, semantic refresh veto, their
//! fusion, and the whole-frame encoder bypass.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RemapResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub tau_vis: f64,
    pub tau_abs: f64,
    pub tau_delta: f64,
    pub tau_frame: f64,
    pub epsilon: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self { tau_vis: 0.85, tau_abs: 0.70, tau_delta: 0.30, tau_frame: 0.95, epsilon: 1e-6 }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        let in_range = |name: &str, v: f64, lo: f64, hi: f64| {
            if v.is_finite() && (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("gates.{name} = {v} must lie in [{lo}, {hi}]")))
            }
        };
        in_range("tau_vis", self.tau_vis, -1.0, 1.0)?;
        in_range("tau_abs", self.tau_abs, 0.0, 1.0)?;
        in_range("tau_delta", self.tau_delta, 0.0, 1.0)?;
        in_range("tau_frame", self.tau_frame, -1.0, 1.0)?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("gates.epsilon = {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

/// Cosine similarity without the dimension check. Callers guarantee equal lengths.
pub fn cosine_slices(a: &[f64], b: &[f64], epsilon: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < epsilon || nb < epsilon {
        return 0.0;
    }
    dot / (na * nb + epsilon)
}

pub fn cosine(a: &[f64], b: &[f64], epsilon: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension { context: "cosine", expected: a.len(), found: b.len() });
    }
    Ok(cosine_slices(a, b, epsilon))
}

fn check_grids(current: &ArrayView2<'_, f64>, cached: &ArrayView2<'_, f64>, remaps: usize) -> Result<()> {
    if current.ncols() != cached.ncols() {
        return Err(Error::Dimension { context: "feature dimension", expected: current.ncols(), found: cached.ncols() });
    }
    if current.nrows() != cached.nrows() {
        return Err(Error::Dimension { context: "token count", expected: current.nrows(), found: cached.nrows() });
    }
    if remaps != current.nrows() {
        return Err(Error::Dimension { context: "remap count", expected: current.nrows(), found: remaps });
    }
    Ok(())
}

/// `r_align` for every token: cosine between the current feature and the cached
/// feature at its remap target, `None` when out of view.
pub fn aligned_similarity(
    current: ArrayView2<'_, f64>,
    cached: ArrayView2<'_, f64>,
    remaps: &[RemapResult],
    epsilon: f64,
) -> Result<Vec<Option<f64>>> {
    check_grids(&current, &cached, remaps.len())?;
    Ok(remaps
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.index().map(|j| {
                let a = current.row(i);
                let b = cached.row(j);
                cosine_slices(a.as_slice().expect("row-major"), b.as_slice().expect("row-major"), epsilon)
            })
        })
        .collect())
}

pub fn visual_gate(
    current: ArrayView2<'_, f64>,
    cached: ArrayView2<'_, f64>,
    remaps: &[RemapResult],
    tau_vis: f64,
    epsilon: f64,
) -> Result<Vec<bool>> {
    Ok(aligned_similarity(current, cached, remaps, epsilon)?
        .into_iter()
        .map(|s| s.is_some_and(|s| s > tau_vis))
        .collect())
}

pub fn semantic_gate(s_t: &[f64], s_prev: &[f64], tau_abs: f64, tau_delta: f64) -> Result<Vec<bool>> {
    if s_t.len() != s_prev.len() {
        return Err(Error::Dimension { context: "relevance scores", expected: s_t.len(), found: s_prev.len() });
    }
    for (index, &value) in s_t.iter().chain(s_prev).enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::ScoreRange { index: index % s_t.len().max(1), value });
        }
    }
    Ok(s_t
        .iter()
        .zip(s_prev)
        .map(|(&s, &p)| s > tau_abs || (s - p).abs() > tau_delta)
        .collect())
}

/// `m = m_vis * (1 - m_sem)`.
pub fn fuse(m_vis: &[bool], m_sem: &[bool]) -> Result<Vec<bool>> {
    if m_vis.len() != m_sem.len() {
        return Err(Error::Dimension { context: "mask fusion", expected: m_vis.len(), found: m_sem.len() });
    }
    Ok(m_vis.iter().zip(m_sem).map(|(&v, &s)| v && !s).collect())
}

/// Mean token feature, the input of the frame-level gate.
pub fn pooled(features: ArrayView2<'_, f64>) -> Vec<f64> {
    let m = features.nrows().max(1) as f64;
    features.sum_axis(ndarray::Axis(0)).iter().map(|v| v / m).collect()
}

/// True when the whole frame may skip the visual encoder.
pub fn frame_gate(frame_feat_t: &[f64], frame_feat_prev: &[f64], tau_frame: f64, epsilon: f64) -> Result<bool> {
    Ok(cosine(frame_feat_t, frame_feat_prev, epsilon)? > tau_frame)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReuseMasks {
    pub m_vis: Vec<bool>,
    pub m_sem: Vec<bool>,
    pub m: Vec<bool>,
    pub remap: Vec<RemapResult>,
}

impl ReuseMasks {
    pub fn new(m_vis: Vec<bool>, m_sem: Vec<bool>, remap: Vec<RemapResult>) -> Result<Self> {
        let m = fuse(&m_vis, &m_sem)?;
        let masks = Self { m_vis, m_sem, m, remap };
        masks.check()?;
        Ok(masks)
    }

    /// Nothing reused; every token refreshed.
    pub fn refresh_all(remap: Vec<RemapResult>) -> Self {
        let n = remap.len();
        Self { m_vis: vec![false; n], m_sem: vec![false; n], m: vec![false; n], remap }
    }

    pub fn check(&self) -> Result<()> {
        let n = self.m.len();
        for (name, len) in [("m_vis", self.m_vis.len()), ("m_sem", self.m_sem.len()), ("remap", self.remap.len())] {
            if len != n {
                return Err(Error::Invariant(format!("{name} has {len} entries, fused mask has {n}")));
            }
        }
        for i in 0..n {
            if self.m[i] != (self.m_vis[i] && !self.m_sem[i]) {
                return Err(Error::Invariant(format!("fused mask disagrees with m_vis*(1-m_sem) at token {i}")));
            }
            if self.m[i] && !self.remap[i].is_in_view() {
                return Err(Error::MaskRemapInconsistency(i));
            }
        }
        Ok(())
    }

    pub fn reuse_count(&self) -> usize {
        self.m.iter().filter(|&&b| b).count()
    }
}
