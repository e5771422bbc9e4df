//! Evaluation: text metrics, ranking precision, simulated sessions and
//! prioritized-aspect analytics.

mod analysis;
mod interactive;
mod metrics;

pub use analysis::{
    aspect_distribution, corpus_observations, transcript_observations, DistributionRow,
    DEFAULT_ANALYSIS_ROUNDS,
};
pub use interactive::{
    extract_cot_response, run_baseline, run_interactive_session, should_terminate, simulate_seeker,
    strip_strategy_tag, BaselineContext, BaselineKind, BaselineResponder, Responder, Seeker,
    SessionTranscript, TerminationReason, MAX_ROUNDS, REPETITION_THRESHOLD,
};
pub use metrics::{
    bleu_n, distinct_n, meteor_alignment, meteor_simplified, rouge_l, tokenize, MetricReport,
    ROUGE_BETA,
};

/// Share of relevant items among the first `n` of `order`; the
/// denominator is always `n`.
pub fn precision_at_n(order: &[usize], relevant: impl Fn(usize) -> bool, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    order.iter().take(n).filter(|&&i| relevant(i)).count() as f64 / n as f64
}
