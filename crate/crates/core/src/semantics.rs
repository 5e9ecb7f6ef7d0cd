//! Instruction-conditioned relevance, top-k focus sets and the Jaccard focus shift.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) const ROW_SUM_TOL: f64 = 1e-6;

pub(crate) fn check_rows(attn: &ArrayView2<'_, f64>) -> Result<()> {
    for (row, r) in attn.axis_iter(Axis(0)).enumerate() {
        let sum: f64 = r.sum();
        if !((sum - 1.0).abs() <= ROW_SUM_TOL) || r.iter().any(|&p| p < 0.0) {
            return Err(Error::AttentionNormalization { row, sum });
        }
    }
    Ok(())
}

/// Restrict attention rows to their first `m` keys and renormalize each row.
///
/// Rows whose mass on those keys is zero become uniform.
pub fn vision_block(attn: ArrayView2<'_, f64>, m: usize) -> Array2<f64> {
    let mut out = attn.slice(ndarray::s![.., ..m]).to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let sum: f64 = row.sum();
        if sum > 0.0 {
            row.mapv_inplace(|p| p / sum);
        } else {
            row.fill(1.0 / m as f64);
        }
    }
    out
}

/// Per-token relevance `s` in [0, 1] from a language-to-vision attention block
/// of shape `[L_q, M]`: column means normalized by their maximum.
pub fn relevance_from_attention(attn: ArrayView2<'_, f64>, epsilon: f64) -> Result<Vec<f64>> {
    check_rows(&attn)?;
    let means = attn.mean_axis(Axis(0)).ok_or(Error::Dimension {
        context: "attention rows",
        expected: 1,
        found: 0,
    })?;
    let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(means.iter().map(|v| (v / (max + epsilon)).clamp(0.0, 1.0)).collect())
}

/// Indices of the `k` largest scores, ties broken by lower index. `k` is clipped to `M`.
pub fn top_k_set(scores: &[f64], k: usize) -> BTreeSet<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.into_iter().take(k.min(scores.len())).collect()
}

/// Jaccard distance between two focus sets; 0 when both are empty.
pub fn focus_shift(current: &BTreeSet<usize>, previous: &BTreeSet<usize>) -> f64 {
    let union = current.union(previous).count();
    if union == 0 {
        return 0.0;
    }
    let inter = current.intersection(previous).count();
    1.0 - inter as f64 / union as f64
}

/// Default focus-set size: ten percent of the tokens, rounded up.
pub fn default_focus_k(m: usize) -> usize {
    m.div_ceil(10).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceFrame {
    pub scores: Vec<f64>,
    pub focus_k: usize,
    pub focus_set: BTreeSet<usize>,
}

impl RelevanceFrame {
    pub fn new(scores: Vec<f64>, focus_k: usize) -> Self {
        let scores: Vec<f64> = scores.into_iter().map(|s| if s.is_nan() { 0.0 } else { s.clamp(0.0, 1.0) }).collect();
        let focus_set = top_k_set(&scores, focus_k);
        Self { scores, focus_k, focus_set }
    }

    pub fn shift_from(&self, previous: &RelevanceFrame) -> f64 {
        focus_shift(&self.focus_set, &previous.focus_set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    const EPS: f64 = 1e-6;

    #[test]
    fn relevance_uniform() {
        let m = 10;
        let attn = Array2::from_elem((3, m), 1.0 / m as f64);
        let s = relevance_from_attention(attn.view(), EPS).unwrap();
        let expected = 1.0 / (1.0 + EPS * m as f64);
        for v in s {
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn relevance_one_hot() {
        let mut attn = Array2::zeros((4, 12));
        attn.column_mut(7).fill(1.0);
        let s = relevance_from_attention(attn.view(), EPS).unwrap();
        assert!((s[7] - 1.0).abs() < 1e-5);
        assert!(s.iter().enumerate().all(|(i, &v)| i == 7 || v == 0.0));
    }

    #[test]
    fn relevance_hand_computed() {
        let attn = array![[0.5, 0.3, 0.2], [0.1, 0.6, 0.3]];
        let s = relevance_from_attention(attn.view(), EPS).unwrap();
        // means (0.3, 0.45, 0.25) divided by 0.45 + eps
        let expected = [0.3 / (0.45 + EPS), 0.45 / (0.45 + EPS), 0.25 / (0.45 + EPS)];
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((s[0] - 0.667).abs() < 1e-3 && (s[2] - 0.556).abs() < 1e-3);
    }

    #[test]
    fn relevance_rejects_unnormalized_rows() {
        let attn = array![[0.5, 0.3, 0.3]];
        assert!(matches!(
            relevance_from_attention(attn.view(), EPS),
            Err(Error::AttentionNormalization { row: 0, .. })
        ));
    }

    #[test]
    fn vision_block_renormalizes() {
        let attn = array![[0.2, 0.2, 0.6], [0.0, 0.0, 1.0]];
        let v = vision_block(attn.view(), 2);
        assert_eq!(v, array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_set(&[0.1, 0.9, 0.5], 2), BTreeSet::from([1, 2]));
        assert_eq!(top_k_set(&[0.4; 5], 2), BTreeSet::from([0, 1]));
        assert_eq!(top_k_set(&[0.3, 0.2, 0.1], 3), BTreeSet::from([0, 1, 2]));
        assert_eq!(top_k_set(&[0.3, 0.2], 9).len(), 2);
    }

    #[test]
    fn focus_shift_examples() {
        let s: BTreeSet<usize> = (0..10).collect();
        assert_eq!(focus_shift(&s, &s), 0.0);
        let t: BTreeSet<usize> = (10..20).collect();
        assert_eq!(focus_shift(&s, &t), 1.0);
        // |∩| = 5, |∪| = 15
        let a: BTreeSet<usize> = (0..10).collect();
        let b: BTreeSet<usize> = (5..15).collect();
        assert!((focus_shift(&a, &b) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(focus_shift(&BTreeSet::new(), &BTreeSet::new()), 0.0);
    }

    #[test]
    fn default_focus_k_rounds_up() {
        assert_eq!(default_focus_k(64), 7);
        assert_eq!(default_focus_k(196), 20);
        assert_eq!(default_focus_k(10), 1);
    }

    #[test]
    fn relevance_frame_clamps() {
        let f = RelevanceFrame::new(vec![1.5, -0.2, 0.4], 1);
        assert_eq!(f.scores, vec![1.0, 0.0, 0.4]);
        assert_eq!(f.focus_set, BTreeSet::from([0]));
    }

    fn arb_set() -> impl Strategy<Value = BTreeSet<usize>> {
        proptest::collection::btree_set(0usize..50, 0..20)
    }

    proptest! {
        #[test]
        fn focus_shift_properties(a in arb_set(), b in arb_set()) {
            let d = focus_shift(&a, &b);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, focus_shift(&b, &a));
            prop_assert_eq!(focus_shift(&a, &a), 0.0);
            if !(a.is_empty() && b.is_empty()) {
                prop_assert_eq!(d == 1.0, a.is_disjoint(&b));
            }
        }

        #[test]
        fn top_k_permutation_consistent(
            scores in proptest::collection::vec(0.0f64..1.0, 1..40),
            k in 1usize..50,
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut perm: Vec<usize> = (0..scores.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            // permuted[perm[i]] = scores[i]
            let mut permuted = vec![0.0; scores.len()];
            for (i, &p) in perm.iter().enumerate() {
                permuted[p] = scores[i];
            }
            let base = top_k_set(&scores, k);
            let moved: BTreeSet<usize> = base.iter().map(|&i| perm[i]).collect();
            let direct = top_k_set(&permuted, k);
            // Equal scores may be tie-broken differently; compare score multisets then.
            let mut a: Vec<f64> = moved.iter().map(|&i| permuted[i]).collect();
            let mut b: Vec<f64> = direct.iter().map(|&i| permuted[i]).collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
            let distinct = {
                let mut s = scores.clone();
                s.sort_by(f64::total_cmp);
                s.windows(2).all(|w| w[0] != w[1])
            };
            if distinct {
                prop_assert_eq!(moved, direct);
            }
        }

        #[test]
        fn top_k_members_dominate(scores in proptest::collection::vec(0.0f64..1.0, 1..40), k in 1usize..50) {
            let set = top_k_set(&scores, k);
            prop_assert_eq!(set.len(), k.min(scores.len()));
            let min_in = set.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
            for (i, &s) in scores.iter().enumerate() {
                if !set.contains(&i) { prop_assert!(s <= min_in); }
            }
        }

        #[test]
        fn relevance_invariant_to_duplicated_rows(
            raw in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 6), 1..5),
        ) {
            let rows: Vec<Vec<f64>> = raw.iter().map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            }).collect();
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let attn = Array2::from_shape_vec((rows.len(), 6), flat).unwrap();
            let base = relevance_from_attention(attn.view(), EPS).unwrap();
            // Duplicating every row leaves the column means unchanged.
            let doubled = ndarray::concatenate(Axis(0), &[attn.view(), attn.view()]).unwrap();
            let again = relevance_from_attention(doubled.view(), EPS).unwrap();
            for (a, b) in base.iter().zip(&again) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
