//! Offline target-state clustering and inference-time progression signals.

mod attention;
mod kmeans;
mod silhouette;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::track_state;
use crate::corpus::Dialogue;
use crate::dialogue::{AspectConfig, AspectId};
use crate::error::{Error, Result};
use crate::gateway::Gateway;

pub(crate) use attention::outer;
pub use attention::{
    estimate_target, estimate_target_backward, softmax, AttentionCache, AttentionParams,
    ProgressionSignal,
};
pub use kmeans::{
    distinct_rows, inertia, kmeans, kmeans_restarts, kmeans_single, KMeansResult, DEFAULT_RESTARTS,
    MAX_ITERATIONS,
};
pub use silhouette::silhouette;

/// Default k search range.
pub const DEFAULT_K_MIN: usize = 5;
pub const DEFAULT_K_MAX: usize = 50;

/// Maximum tolerated fraction of dialogues whose tracker call fails.
pub const MAX_SKIP_FRACTION: f64 = 0.10;

/// End-of-dialogue state embeddings E_i for one aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStateCorpus {
    pub aspect_id: AspectId,
    /// N_D × n_d.
    pub embeddings: Array2<f64>,
    pub source_dialogue_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet {
    pub aspect_id: AspectId,
    pub k: usize,
    /// k × n_d.
    pub centroids: Array2<f64>,
    pub silhouette: f64,
    pub seed: u64,
}

impl CentroidSet {
    pub fn n_d(&self) -> usize {
        self.centroids.ncols()
    }
}

/// Runs the aspect's tracker over each full dialogue and embeds the
/// summary. Rows are ordered by dialogue id; failing dialogues are skipped
/// unless more than [`MAX_SKIP_FRACTION`] of them fail.
pub fn build_target_corpus(
    dialogues: &[Dialogue],
    task: crate::dialogue::Task,
    aspect: &AspectConfig,
    gateway: &Gateway,
) -> Result<TargetStateCorpus> {
    let mut ordered: Vec<&Dialogue> = dialogues.iter().collect();
    ordered.sort_by(|a, b| a.dialogue_id.cmp(&b.dialogue_id));
    let results: Vec<(String, Result<Vec<f64>>)> = ordered
        .par_iter()
        .map(|d| {
            let out = d
                .history(task)
                .and_then(|h| track_state(aspect, &h, gateway))
                .map(|s| s.embedding.expect("tracker always embeds"));
            (d.dialogue_id.clone(), out)
        })
        .collect();
    let total = results.len();
    let mut ids = Vec::with_capacity(total);
    let mut rows = Vec::with_capacity(total * gateway.dim());
    let mut failed = 0;
    for (id, r) in results {
        match r {
            Ok(v) => {
                ids.push(id);
                rows.extend(v);
            }
            Err(e) => {
                tracing::warn!(dialogue = %id, aspect = aspect.aspect_id, error = %e, "skipping dialogue");
                failed += 1;
            }
        }
    }
    if total > 0 && failed as f64 > MAX_SKIP_FRACTION * total as f64 {
        return Err(Error::TooManyFailures { failed, total });
    }
    let embeddings = Array2::from_shape_vec((ids.len(), gateway.dim()), rows)
        .map_err(|e| Error::invalid(e.to_string()))?;
    Ok(TargetStateCorpus {
        aspect_id: aspect.aspect_id,
        embeddings,
        source_dialogue_ids: ids,
    })
}

/// The k range actually searched for `n` points. When the corpus is too
/// small for `k_min`, the range shrinks to `2..=n-1`.
pub fn effective_k_range(n: usize, k_min: usize, k_max: usize) -> Result<(usize, usize)> {
    if k_min < 2 || k_max < k_min {
        return Err(Error::invalid(format!("bad k range {k_min}..={k_max}")));
    }
    if n < 3 {
        return Err(Error::DegenerateK { k: 2, distinct: n });
    }
    if n < k_min + 1 {
        return Ok((2, n - 1));
    }
    Ok((k_min, k_max.min(n - 1)))
}

/// Clusters for every k in range and keeps the best silhouette; ties go to
/// the smaller k.
pub fn select_k(
    points: ArrayView2<f64>,
    k_min: usize,
    k_max: usize,
    seed: u64,
) -> Result<(usize, KMeansResult, f64)> {
    let (lo, hi) = effective_k_range(points.nrows(), k_min, k_max)?;
    let runs: Vec<Result<(usize, KMeansResult, f64)>> = (lo..=hi)
        .into_par_iter()
        .map(|k| {
            let r = kmeans(points, k, seed.wrapping_add(k as u64))?;
            let s = silhouette(points, &r.labels)?;
            Ok((k, r, s))
        })
        .collect();
    let mut best: Option<(usize, KMeansResult, f64)> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.2 > b.2) {
            best = Some(run);
        }
    }
    best.ok_or_else(|| Error::invalid("empty k range"))
}

/// [`select_k`] packaged as a centroid set for one aspect.
pub fn cluster_aspect(
    corpus: &TargetStateCorpus,
    k_min: usize,
    k_max: usize,
    seed: u64,
) -> Result<CentroidSet> {
    if corpus.embeddings.nrows() == 0 {
        return Err(Error::EmptyCorpus("target-state corpus"));
    }
    let (k, run, silhouette) = select_k(corpus.embeddings.view(), k_min, k_max, seed)?;
    Ok(CentroidSet {
        aspect_id: corpus.aspect_id,
        k,
        centroids: run.centroids,
        silhouette,
        seed,
    })
}
