use std::collections::{BTreeMap, BTreeSet};

use super::{rank_hits, HitSource, RetrievalHit};
use crate::num::Scalar;

pub const DEFAULT_RRF_C: f64 = 60.0;

/// Reciprocal rank fusion: each chunk scores `Σ 1/(c + rank)` over the lists
/// that contain it. A chunk listed twice in one list counts once.
///
/// Per-chunk contributions are summed in sorted order, so the result does not
/// depend on the order of `lists`.
pub fn fuse<F: Scalar>(lists: &[Vec<RetrievalHit<F>>], c: f64) -> Vec<RetrievalHit<F>> {
    let mut contributions: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for list in lists {
        let mut seen = BTreeSet::new();
        for hit in list {
            if seen.insert(hit.chunk_id.as_str()) {
                contributions.entry(&hit.chunk_id).or_default().push(1.0 / (c + hit.rank as f64));
            }
        }
    }
    let mut fused: Vec<RetrievalHit<F>> = contributions
        .into_iter()
        .map(|(id, mut parts)| {
            parts.sort_by(f64::total_cmp);
            RetrievalHit {
                chunk_id: id.to_string(),
                score: F::lit(parts.iter().sum()),
                source: HitSource::Fused,
                rank: 0,
            }
        })
        .collect();
    rank_hits(&mut fused);
    fused
}
