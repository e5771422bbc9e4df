//! Prompt-based utterance generation from the history and the top-K topics.

use serde::{Deserialize, Serialize};

use crate::agents::PromptTemplate;
use crate::dialogue::{
    render_history, AspectId, DialogueHistory, Speaker, SpeakerLabels, StateSummary,
    TopicCandidate, Utterance,
};
use crate::error::{Error, Result};
use crate::gateway::{ChatRequest, Gateway, PromptKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationInput {
    pub history: DialogueHistory,
    /// Ranked top-K candidates.
    pub top_candidates: Vec<TopicCandidate>,
    /// Kept for the turn trace; the generation template does not use them.
    pub summaries: Vec<StateSummary>,
}

/// "1. text" lines in rank order.
pub fn render_candidates(candidates: &[TopicCandidate]) -> String {
    let mut sorted: Vec<&TopicCandidate> = candidates.iter().collect();
    sorted.sort_by_key(|c| c.rank.unwrap_or(usize::MAX));
    sorted
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {}", i + 1, c.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Removes a leading `Label:` (case-insensitive) and surrounding whitespace.
pub fn strip_speaker_label(text: &str, labels: &[&str]) -> String {
    let t = text.trim();
    for label in labels {
        let n = label.len();
        if t.len() > n
            && t.is_char_boundary(n)
            && t[..n].eq_ignore_ascii_case(label)
            && t[n..].starts_with(':')
        {
            return t[n + 1..].trim().to_string();
        }
    }
    t.to_string()
}

/// Fills the generation template, calls the provider and returns the new
/// system utterance (label stripped).
pub fn generate_utterance(
    template: &PromptTemplate,
    labels: &SpeakerLabels,
    input: &GenerationInput,
    gateway: &Gateway,
) -> Result<Utterance> {
    if input.top_candidates.is_empty() {
        return Err(Error::invalid("generation needs at least one candidate"));
    }
    let prompt = generation_prompt(template, labels, input)?;
    let raw = gateway.chat_complete(&ChatRequest::new(prompt, PromptKind::Generation))?;
    let text = strip_speaker_label(&raw, &[&labels.system]);
    if text.is_empty() {
        return Err(Error::EmptyGeneration);
    }
    let turn_index = input.history.last().map_or(0, |u| u.turn_index + 1);
    Utterance::new(Speaker::System, text, turn_index)
}

pub fn generation_prompt(
    template: &PromptTemplate,
    labels: &SpeakerLabels,
    input: &GenerationInput,
) -> Result<String> {
    let history = render_history(&input.history, labels)?;
    template.render(&[
        ("history", &history),
        ("candidates", &render_candidates(&input.top_candidates)),
    ])
}

/// Aspect of the rank-1 candidate.
pub fn prioritized_aspect(top_candidates: &[TopicCandidate]) -> Option<AspectId> {
    top_candidates
        .iter()
        .find(|c| c.rank == Some(1))
        .or_else(|| top_candidates.first())
        .map(|c| c.aspect_id)
}
