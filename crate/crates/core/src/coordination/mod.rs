//! Global coordination: score every topic candidate against the dialogue
//! context and the fused progression signals, rank, and train the scorer.

mod loss;
mod model;
mod pseudo;
mod rank;
mod train;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dialogue::{
    render_history, DialogueHistory, SpeakerLabels, StateSummary, TopicCandidate,
};
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::progression::{CentroidSet, ProgressionSignal};

pub use loss::{
    combined_loss, combined_loss_grad, pointwise_loss, pointwise_loss_grad, soft_rank,
    triplet_loss, triplet_loss_grad,
};
pub use model::{CandidateCache, ForwardCache, Params, RankerConfig, RankerModel};
pub use pseudo::{build_rank_labels, label_candidates, pseudo_label_compare, LabelItem, RankLabel};
pub use rank::{argsort, rank_candidates};
pub use train::{
    batch_loss_grad, evaluate_precision, train_ranker, AdamW, EpochStats, TrainConfig,
    TrainExample, TrainOutcome,
};

/// Separator between the history and the candidate when building the
/// candidate-context text.
pub const TOPIC_SEPARATOR: &str = " [TOPIC] ";

/// Text whose embedding feeds the candidate projection.
pub fn candidate_context_text(
    history: &DialogueHistory,
    labels: &SpeakerLabels,
    candidate: &TopicCandidate,
) -> Result<String> {
    if candidate.text.trim().is_empty() {
        return Err(Error::invalid("candidate text is empty"));
    }
    Ok(format!(
        "{}{TOPIC_SEPARATOR}{}",
        render_history(history, labels)?,
        candidate.text
    ))
}

/// b̃ for one candidate: embed the history-plus-topic text and project it.
pub fn encode_candidate_context(
    history: &DialogueHistory,
    labels: &SpeakerLabels,
    candidate: &TopicCandidate,
    model: &RankerModel,
    gateway: &Gateway,
) -> Result<Array1<f64>> {
    let e = gateway.embed_text(&candidate_context_text(history, labels, candidate)?)?;
    model.project_candidate(Array1::from(e.into_vec()).view())
}

/// A trained ranker with the centroid sets it was trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coordinator {
    pub model: RankerModel,
    /// One per aspect, ordered by aspect id.
    pub centroids: Vec<CentroidSet>,
}

/// Everything the coordinator computed for one turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationResult {
    pub signals: Vec<ProgressionSignal>,
    pub top_k: Vec<TopicCandidate>,
    pub ranked: Vec<TopicCandidate>,
}

impl Coordinator {
    pub fn new(model: RankerModel, centroids: Vec<CentroidSet>) -> Result<Self> {
        model.validate()?;
        if centroids.len() != model.config.n_t {
            return Err(Error::SignalCountMismatch {
                expected: model.config.n_t,
                got: centroids.len(),
            });
        }
        for (i, c) in centroids.iter().enumerate() {
            if c.aspect_id != i + 1 {
                return Err(Error::invalid("centroid sets must be ordered by aspect id"));
            }
            if c.n_d() != model.config.n_d {
                return Err(Error::DimensionMismatch {
                    expected: model.config.n_d,
                    got: c.n_d(),
                });
            }
        }
        Ok(Self { model, centroids })
    }

    pub fn centroid_views(&self) -> Vec<ArrayView2<'_, f64>> {
        self.centroids.iter().map(|c| c.centroids.view()).collect()
    }

    /// Ranks candidates given per-aspect state summaries (with embeddings)
    /// and candidate-context embeddings (one row per candidate).
    pub fn rank(
        &self,
        summaries: &[StateSummary],
        candidates: &[TopicCandidate],
        candidate_embeddings: ArrayView2<f64>,
        k: usize,
    ) -> Result<CoordinationResult> {
        let n_d = self.model.config.n_d;
        if summaries.len() != self.model.config.n_t {
            return Err(Error::SignalCountMismatch {
                expected: self.model.config.n_t,
                got: summaries.len(),
            });
        }
        let mut states = Array2::zeros((summaries.len(), n_d));
        for (i, s) in summaries.iter().enumerate() {
            let e = s.embedding.as_ref().ok_or_else(|| {
                Error::invalid(format!("summary {} has no embedding", s.aspect_id))
            })?;
            if e.len() != n_d {
                return Err(Error::DimensionMismatch {
                    expected: n_d,
                    got: e.len(),
                });
            }
            states.row_mut(i).assign(&Array1::from(e.clone()));
        }
        let cache = self.model.forward(
            &self.centroid_views(),
            states.view(),
            candidate_embeddings,
            false,
        )?;
        let (top_k, ranked) = rank_candidates(candidates, &cache.scores, k)?;
        Ok(CoordinationResult {
            signals: cache.signals,
            top_k,
            ranked,
        })
    }
}
