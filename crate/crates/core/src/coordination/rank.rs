use crate::dialogue::TopicCandidate;
use crate::error::{Error, Result};

/// Sorts candidates ascending by score (lower is better), ties broken by
/// (aspect_id, candidate_index). Fills `score` and `rank` on every
/// candidate and returns (top-K, full ranked list).
pub fn rank_candidates(
    candidates: &[TopicCandidate],
    scores: &[f64],
    k: usize,
) -> Result<(Vec<TopicCandidate>, Vec<TopicCandidate>)> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates to rank"));
    }
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if scores.len() != candidates.len() {
        return Err(Error::DimensionMismatch {
            expected: candidates.len(),
            got: scores.len(),
        });
    }
    let mut all: Vec<TopicCandidate> = candidates
        .iter()
        .zip(scores)
        .map(|(c, &s)| TopicCandidate {
            score: Some(s),
            ..c.clone()
        })
        .collect();
    all.sort_by(|a, b| {
        a.score
            .unwrap()
            .total_cmp(&b.score.unwrap())
            .then_with(|| a.key().cmp(&b.key()))
    });
    for (i, c) in all.iter_mut().enumerate() {
        c.rank = Some(i + 1);
    }
    let top = all.iter().take(k).cloned().collect();
    Ok((top, all))
}

/// Indices of `scores` in ranked order (ascending score, index ties).
pub fn argsort(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx
}
