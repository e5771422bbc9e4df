//! Domain types shared by every stage of the turn pipeline, plus the
//! one-line-per-turn history rendering that all prompt templates embed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on candidate text length. Templates ask for short topics; this
/// guards against runaway generations.
pub const MAX_CANDIDATE_CHARS: usize = 400;

pub type AspectId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    /// The engine's side: supporter or persuader.
    System,
    /// The other party: seeker or persuadee.
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Esc,
    Persuasion,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Esc => "esc",
            Task::Persuasion => "persuasion",
        }
    }

    pub fn all() -> [Task; 2] {
        [Task::Esc, Task::Persuasion]
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "esc" | "esconv" => Ok(Task::Esc),
            "persuasion" | "p4g" => Ok(Task::Persuasion),
            other => Err(Error::invalid(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerLabels {
    pub system: String,
    pub user: String,
}

impl SpeakerLabels {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            user: user.into(),
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Esc => Self::new("Supporter", "Seeker"),
            Task::Persuasion => Self::new("Persuader", "Persuadee"),
        }
    }

    pub fn label(&self, speaker: Speaker) -> &str {
        match speaker {
            Speaker::System => &self.system,
            Speaker::User => &self.user,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub turn_index: usize,
    /// Annotated dialogue strategies; only present on corpus system turns.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strategies: Vec<String>,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>, turn_index: usize) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::invalid("utterance text is empty"));
        }
        Ok(Self {
            speaker,
            text,
            turn_index,
            strategies: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueHistory {
    pub task: Task,
    utterances: Vec<Utterance>,
}

impl DialogueHistory {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            utterances: Vec::new(),
        }
    }

    /// Builds a history from already-indexed utterances, checking the
    /// non-empty text and strictly increasing index invariants.
    pub fn from_utterances(task: Task, utterances: Vec<Utterance>) -> Result<Self> {
        for (i, u) in utterances.iter().enumerate() {
            if u.text.trim().is_empty() {
                return Err(Error::invalid(format!("utterance {i} has empty text")));
            }
            if i > 0 && u.turn_index <= utterances[i - 1].turn_index {
                return Err(Error::invalid(format!(
                    "turn_index must increase strictly (position {i})"
                )));
            }
        }
        Ok(Self { task, utterances })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn last(&self) -> Option<&Utterance> {
        self.utterances.last()
    }

    /// 1 + number of completed system turns.
    pub fn round(&self) -> usize {
        1 + self
            .utterances
            .iter()
            .filter(|u| u.speaker == Speaker::System)
            .count()
    }

    /// Appends a turn with the next turn index.
    pub fn push(&mut self, speaker: Speaker, text: impl Into<String>) -> Result<&Utterance> {
        let idx = self.utterances.last().map_or(0, |u| u.turn_index + 1);
        self.utterances.push(Utterance::new(speaker, text, idx)?);
        Ok(self.utterances.last().expect("just pushed"))
    }

    pub fn push_utterance(&mut self, mut utterance: Utterance) -> Result<()> {
        if utterance.text.trim().is_empty() {
            return Err(Error::invalid("utterance text is empty"));
        }
        let idx = self.utterances.last().map_or(0, |u| u.turn_index + 1);
        if utterance.turn_index < idx {
            utterance.turn_index = idx;
        }
        self.utterances.push(utterance);
        Ok(())
    }

    /// The prefix strictly before position `end`.
    pub fn prefix(&self, end: usize) -> DialogueHistory {
        DialogueHistory {
            task: self.task,
            utterances: self.utterances[..end.min(self.utterances.len())].to_vec(),
        }
    }
}

fn flatten_line(text: &str) -> String {
    text.trim().replace(['\r', '\n'], " ")
}

fn render_line(u: &Utterance, labels: &SpeakerLabels) -> String {
    format!("{}: {}", labels.label(u.speaker), flatten_line(&u.text))
}

/// One `Label: text` line per utterance, newline-joined.
pub fn render_history(history: &DialogueHistory, labels: &SpeakerLabels) -> Result<String> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    Ok(history
        .utterances
        .iter()
        .map(|u| render_line(u, labels))
        .collect::<Vec<_>>()
        .join("\n"))
}

/// Drops the oldest utterances until the rendered history fits in
/// `max_chars` characters. The final utterance is always kept.
pub fn truncate_history(
    history: &DialogueHistory,
    labels: &SpeakerLabels,
    max_chars: usize,
) -> Result<DialogueHistory> {
    if max_chars == 0 {
        return Err(Error::invalid("max_chars must be positive"));
    }
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let lens: Vec<usize> = history
        .utterances
        .iter()
        .map(|u| render_line(u, labels).chars().count())
        .collect();
    let last_len = lens[lens.len() - 1];
    if last_len > max_chars {
        return Err(Error::OversizeTurn {
            len: last_len,
            limit: max_chars,
        });
    }
    // Walk backwards accumulating line lengths plus joining newlines.
    let mut total = last_len;
    let mut start = lens.len() - 1;
    while start > 0 {
        let next = total + 1 + lens[start - 1];
        if next > max_chars {
            break;
        }
        total = next;
        start -= 1;
    }
    Ok(DialogueHistory {
        task: history.task,
        utterances: history.utterances[start..].to_vec(),
    })
}

/// One goal aspect pursued by a dedicated agent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AspectConfig {
    pub aspect_id: AspectId,
    pub name: String,
    pub tracker_template: crate::agents::PromptTemplate,
    pub promoter_template: crate::agents::PromptTemplate,
    pub candidate_count: usize,
    pub speaker_labels: SpeakerLabels,
}

/// Checks that aspect ids are distinct and contiguous from 1.
pub fn validate_aspects(aspects: &[AspectConfig]) -> Result<()> {
    if aspects.is_empty() {
        return Err(Error::invalid("at least one aspect is required"));
    }
    for (i, a) in aspects.iter().enumerate() {
        if a.aspect_id != i + 1 {
            return Err(Error::invalid(format!(
                "aspect ids must be contiguous from 1; position {i} has id {}",
                a.aspect_id
            )));
        }
        if a.candidate_count == 0 {
            return Err(Error::invalid(format!(
                "aspect {} has candidate_count 0",
                a.aspect_id
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub aspect_id: AspectId,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicCandidate {
    pub aspect_id: AspectId,
    /// 1-based position in the producing promoter's list.
    pub candidate_index: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

impl TopicCandidate {
    pub fn new(aspect_id: AspectId, candidate_index: usize, text: &str) -> Self {
        let text: String = text.trim().chars().take(MAX_CANDIDATE_CHARS).collect();
        Self {
            aspect_id,
            candidate_index,
            text,
            score: None,
            rank: None,
        }
    }

    pub fn key(&self) -> (AspectId, usize) {
        (self.aspect_id, self.candidate_index)
    }
}
