//! Per-round distribution of prioritized aspects.

use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, StrategyMap};
use crate::dialogue::{AspectId, Speaker};

use super::interactive::SessionTranscript;

pub const DEFAULT_ANALYSIS_ROUNDS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub round: usize,
    /// Index `i` holds the share of aspect `i + 1`.
    pub proportions: Vec<f64>,
    pub observations: usize,
}

/// `(round, aspect)` observations → per-round shares for rounds
/// `1..=max_rounds`. Rounds without observations are omitted.
pub fn aspect_distribution(
    observations: &[(usize, AspectId)],
    n_aspects: usize,
    max_rounds: usize,
) -> Vec<DistributionRow> {
    let mut counts = vec![vec![0usize; n_aspects]; max_rounds];
    for &(round, aspect) in observations {
        if (1..=max_rounds).contains(&round) && (1..=n_aspects).contains(&aspect) {
            counts[round - 1][aspect - 1] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .filter_map(|(i, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| DistributionRow {
                round: i + 1,
                proportions: row.iter().map(|&c| c as f64 / total as f64).collect(),
                observations: total,
            })
        })
        .collect()
}

/// Rank-1 aspect of every traced system turn.
pub fn transcript_observations(transcripts: &[SessionTranscript]) -> Vec<(usize, AspectId)> {
    transcripts
        .iter()
        .flat_map(|t| t.traces.iter().map(|tr| (tr.round, tr.prioritized_aspect)))
        .collect()
}

/// Strategy-mapped aspects of every system turn in the corpus; a turn
/// with several aspects contributes one observation per aspect.
pub fn corpus_observations(dialogues: &[&Dialogue], map: &StrategyMap) -> Vec<(usize, AspectId)> {
    let mut out = Vec::new();
    for d in dialogues {
        let mut round = 0;
        for t in &d.turns {
            if t.speaker != Speaker::System {
                continue;
            }
            round += 1;
            out.extend(
                map.aspects_for(&t.strategies)
                    .into_iter()
                    .map(|a| (round, a)),
            );
        }
    }
    out
}
