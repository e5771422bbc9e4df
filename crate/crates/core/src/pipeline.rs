//! One system turn end to end: agents → coordination → generation.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::run_all_agents;
use crate::coordination::{candidate_context_text, Coordinator, RankerConfig, RankerModel};
use crate::dialogue::{
    AspectId, DialogueHistory, Speaker, StateSummary, Task, TopicCandidate, Utterance,
};
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::generation::{generate_utterance, prioritized_aspect, GenerationInput};
use crate::profile::TaskProfile;
use crate::progression::{CentroidSet, ProgressionSignal};

/// Monotonic milliseconds since an arbitrary origin.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> f64;
}

pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

/// Advances by one millisecond per reading; makes traces reproducible.
#[derive(Default)]
pub struct TickClock(AtomicU64);

impl Clock for TickClock {
    fn now_ms(&self) -> f64 {
        self.0.fetch_add(1, Ordering::SeqCst) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub start_ms: f64,
    pub end_ms: f64,
}

/// Everything computed for one system turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnTrace {
    pub round: usize,
    pub summaries: Vec<StateSummary>,
    pub progression: Vec<ProgressionSignal>,
    /// Every candidate with its score and rank, in rank order.
    pub candidates: Vec<TopicCandidate>,
    pub top_k: Vec<TopicCandidate>,
    pub prioritized_aspect: AspectId,
    pub utterance: Utterance,
    pub timings: Vec<StageTiming>,
}

impl TurnTrace {
    pub fn validate(&self) -> Result<()> {
        let ones: Vec<&TopicCandidate> = self
            .candidates
            .iter()
            .filter(|c| c.rank == Some(1))
            .collect();
        if ones.len() != 1 {
            return Err(Error::invalid(
                "trace must have exactly one rank-1 candidate",
            ));
        }
        if ones[0].aspect_id != self.prioritized_aspect {
            return Err(Error::invalid(
                "prioritized aspect differs from the rank-1 candidate",
            ));
        }
        Ok(())
    }
}

pub struct TurnPipeline {
    pub profile: TaskProfile,
    pub coordinator: Coordinator,
    pub gateway: Gateway,
    clock: Arc<dyn Clock>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.at_stage(name))
}

impl TurnPipeline {
    pub fn new(profile: TaskProfile, coordinator: Coordinator, gateway: Gateway) -> Result<Self> {
        profile.validate()?;
        if coordinator.model.config.n_t != profile.n_aspects() {
            return Err(Error::SignalCountMismatch {
                expected: profile.n_aspects(),
                got: coordinator.model.config.n_t,
            });
        }
        if coordinator.model.config.n_d != gateway.dim() {
            return Err(Error::DimensionMismatch {
                expected: coordinator.model.config.n_d,
                got: gateway.dim(),
            });
        }
        Ok(Self {
            profile,
            coordinator,
            gateway,
            clock: Arc::new(SystemClock::default()),
        })
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn task(&self) -> Task {
        self.profile.task
    }

    /// Produces the next system turn for a history that ends with a user
    /// turn. Errors carry the failing stage.
    pub fn run_turn(&self, history: &DialogueHistory) -> Result<TurnTrace> {
        match history.last() {
            None => return Err(Error::EmptyHistory),
            Some(u) if u.speaker != Speaker::User => {
                return Err(Error::invalid("history must end with a user turn"))
            }
            _ => {}
        }
        let mut timings = Vec::with_capacity(3);
        let mut timed = |name: &str, start: f64| {
            timings.push(StageTiming {
                stage: name.into(),
                start_ms: start,
                end_ms: self.clock.now_ms(),
            })
        };

        let t0 = self.clock.now_ms();
        let outputs = stage(
            "agents",
            run_all_agents(&self.profile.aspects, history, &self.gateway),
        )?;
        timed("agents", t0);

        let t1 = self.clock.now_ms();
        let summaries: Vec<StateSummary> = outputs.iter().map(|o| o.summary.clone()).collect();
        let candidates: Vec<TopicCandidate> =
            outputs.into_iter().flat_map(|o| o.candidates).collect();
        let coord = stage(
            "coordination",
            self.coordinate(history, &summaries, &candidates),
        )?;
        timed("coordination", t1);

        let t2 = self.clock.now_ms();
        let input = GenerationInput {
            history: history.clone(),
            top_candidates: coord.top_k.clone(),
            summaries: summaries.clone(),
        };
        let utterance = stage(
            "generation",
            generate_utterance(
                &self.profile.templates.generate,
                &self.profile.labels,
                &input,
                &self.gateway,
            ),
        )?;
        timed("generation", t2);

        let prioritized = prioritized_aspect(&coord.top_k).expect("top_k is non-empty");
        Ok(TurnTrace {
            round: history.round(),
            summaries,
            progression: coord.signals,
            candidates: coord.ranked,
            top_k: coord.top_k,
            prioritized_aspect: prioritized,
            utterance,
            timings,
        })
    }

    fn coordinate(
        &self,
        history: &DialogueHistory,
        summaries: &[StateSummary],
        candidates: &[TopicCandidate],
    ) -> Result<crate::coordination::CoordinationResult> {
        let rows: Vec<Vec<f64>> = candidates
            .par_iter()
            .map(|c| {
                let text = candidate_context_text(history, &self.profile.labels, c)?;
                Ok(self.gateway.embed_text(&text)?.into_vec())
            })
            .collect::<Result<_>>()?;
        let mut emb = Array2::zeros((rows.len(), self.gateway.dim()));
        for (i, r) in rows.iter().enumerate() {
            emb.row_mut(i).assign(&ArrayView1::from(r.as_slice()));
        }
        self.coordinator
            .rank(summaries, candidates, emb.view(), self.profile.top_k)
    }
}

/// An untrained ranker with seeded random unit centroids, for demos and
/// tests against the mock provider.
pub fn demo_coordinator(n_t: usize, n_d: usize, k: usize, seed: u64) -> Result<Coordinator> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids = (1..=n_t)
        .map(|aspect_id| {
            let mut c = Array2::from_shape_fn((k, n_d), |_| rng.random::<f64>() * 2.0 - 1.0);
            for mut row in c.rows_mut() {
                let n = row.dot(&row).sqrt().max(1e-12);
                row.mapv_inplace(|v| v / n);
            }
            CentroidSet {
                aspect_id,
                k,
                centroids: c,
                silhouette: 0.0,
                seed,
            }
        })
        .collect();
    let d = n_d.min(32);
    let model = RankerModel::new(
        RankerConfig::new(n_t, n_d)
            .with_widths(d, d)
            .with_seed(seed),
    );
    Coordinator::new(model, centroids)
}

/// Mock provider, builtin templates and a demo coordinator, with a tick
/// clock so traces are byte-for-byte reproducible.
pub fn mock_pipeline(task: Task, n_d: usize) -> Result<TurnPipeline> {
    let profile = TaskProfile::builtin(task);
    let coordinator = demo_coordinator(profile.n_aspects(), n_d, 5, 7)?;
    Ok(TurnPipeline::new(profile, coordinator, Gateway::mock(n_d))?
        .with_clock(Arc::new(TickClock::default())))
}
