//! Pseudo rank labels from strategy annotations: candidates whose aspect
//! matches the gold turn's aspects come first, then higher embedding
//! similarity to the gold utterance wins.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dialogue::{AspectId, TopicCandidate};
use crate::error::Result;
use crate::gateway::{similarity, Gateway};

/// A candidate reduced to what labeling needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelItem {
    pub aspect_id: AspectId,
    pub candidate_index: usize,
    /// Inner product with the gold utterance embedding.
    pub similarity: f64,
}

impl LabelItem {
    fn key(&self) -> (AspectId, usize) {
        (self.aspect_id, self.candidate_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankLabel {
    pub aspect_id: AspectId,
    pub candidate_index: usize,
    /// 1 = best.
    pub position: usize,
}

/// Total order used for labels: aspect match, then similarity (desc), then
/// (aspect_id, candidate_index) for ties.
fn order(a: &LabelItem, b: &LabelItem, gt_aspects: &BTreeSet<AspectId>) -> Ordering {
    let ma = gt_aspects.contains(&a.aspect_id);
    let mb = gt_aspects.contains(&b.aspect_id);
    mb.cmp(&ma)
        .then_with(|| b.similarity.total_cmp(&a.similarity))
        .then_with(|| a.key().cmp(&b.key()))
}

/// True iff `c1` ranks strictly above `c2`.
pub fn pseudo_label_compare(
    c1: &LabelItem,
    c2: &LabelItem,
    gt_aspects: &BTreeSet<AspectId>,
) -> bool {
    order(c1, c2, gt_aspects) == Ordering::Less
}

/// Position of every item (same order as the input), 1-based.
pub fn build_rank_labels(items: &[LabelItem], gt_aspects: &BTreeSet<AspectId>) -> Vec<RankLabel> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&a, &b| order(&items[a], &items[b], gt_aspects));
    let mut positions = vec![0; items.len()];
    for (pos, &i) in idx.iter().enumerate() {
        positions[i] = pos + 1;
    }
    items
        .iter()
        .zip(positions)
        .map(|(it, position)| RankLabel {
            aspect_id: it.aspect_id,
            candidate_index: it.candidate_index,
            position,
        })
        .collect()
}

/// Embeds the gold utterance and each candidate, then labels them.
pub fn label_candidates(
    candidates: &[TopicCandidate],
    gt_utterance: &str,
    gt_aspects: &BTreeSet<AspectId>,
    gateway: &Gateway,
) -> Result<(Vec<LabelItem>, Vec<RankLabel>)> {
    let gold = gateway.embed_text(gt_utterance)?;
    let items = candidates
        .iter()
        .map(|c| {
            let e = gateway.embed_text(&c.text)?;
            Ok(LabelItem {
                aspect_id: c.aspect_id,
                candidate_index: c.candidate_index,
                similarity: similarity(&e, &gold)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = build_rank_labels(&items, gt_aspects);
    Ok((items, labels))
}
