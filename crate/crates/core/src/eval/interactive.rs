//! Simulated-seeker sessions and the prompt-only baseline systems.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::TaskTemplates;
use crate::dialogue::{render_history, DialogueHistory, Speaker, SpeakerLabels, Task, Utterance};
use crate::error::{Error, Result};
use crate::gateway::{ChatRequest, Gateway, PromptKind};
use crate::generation::strip_speaker_label;
use crate::pipeline::{TurnPipeline, TurnTrace};

pub const MAX_ROUNDS: usize = 10;
/// Normalized edit similarity at or above which two utterances repeat.
pub const REPETITION_THRESHOLD: f64 = 0.9;

/// Shown to the seeker template before anyone has spoken.
const EMPTY_HISTORY: &str = "(no messages yet)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Repetition,
    MaxRounds,
    /// A provider failure ended the session early.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub system: String,
    pub problem_summary: String,
    pub turns: Vec<Utterance>,
    pub termination_reason: TerminationReason,
    /// One per system turn when the system produces traces.
    pub traces: Vec<TurnTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SessionTranscript {
    pub fn system_rounds(&self) -> usize {
        self.turns
            .iter()
            .filter(|u| u.speaker == Speaker::System)
            .count()
    }
}

/// Next utterance of the simulated help-seeker.
pub fn simulate_seeker(
    templates: &TaskTemplates,
    problem: &str,
    history: &DialogueHistory,
    gateway: &Gateway,
) -> Result<Utterance> {
    let template = templates
        .seeker
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("no seeker template for {}", templates.task)))?;
    let labels = SpeakerLabels::for_task(templates.task);
    let rendered = if history.is_empty() {
        EMPTY_HISTORY.to_string()
    } else {
        render_history(history, &labels)?
    };
    let prompt = template.render(&[("problem", problem), ("history", &rendered)])?;
    let raw = gateway.chat_complete(&ChatRequest::new(prompt, PromptKind::Seeker))?;
    let text = strip_speaker_label(&raw, &[&labels.user]);
    if text.is_empty() {
        return Err(Error::EmptyGeneration);
    }
    let idx = history.last().map_or(0, |u| u.turn_index + 1);
    Utterance::new(Speaker::User, text, idx)
}

fn repeats(a: &str, b: &str) -> bool {
    strsim::normalized_levenshtein(a.trim(), b.trim()) >= REPETITION_THRESHOLD
}

/// Repetition if either speaker's last two utterances are near-identical;
/// otherwise max_rounds once `max_rounds` system turns exist.
pub fn should_terminate(turns: &[Utterance], max_rounds: usize) -> Option<TerminationReason> {
    for speaker in [Speaker::System, Speaker::User] {
        let mut last = turns.iter().rev().filter(|u| u.speaker == speaker);
        if let (Some(a), Some(b)) = (last.next(), last.next()) {
            if repeats(&a.text, &b.text) {
                return Some(TerminationReason::Repetition);
            }
        }
    }
    let rounds = turns
        .iter()
        .filter(|u| u.speaker == Speaker::System)
        .count();
    (rounds >= max_rounds).then_some(TerminationReason::MaxRounds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Gpt35,
    Gpt35Cot,
    Mixinit,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::Gpt35 => "gpt35",
            BaselineKind::Gpt35Cot => "gpt35_cot",
            BaselineKind::Mixinit => "mixinit",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gpt35" => Ok(Self::Gpt35),
            "gpt35_cot" => Ok(Self::Gpt35Cot),
            "mixinit" => Ok(Self::Mixinit),
            other => Err(Error::invalid(format!("unknown baseline `{other}`"))),
        }
    }
}

/// Background the MixInit template conditions on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineContext {
    pub emotion: String,
    pub problem_type: String,
    pub problem: String,
}

/// Text between `[Response]` and the next `[...]` marker.
pub fn extract_cot_response(raw: &str) -> Option<String> {
    let start = raw.find("[Response]")? + "[Response]".len();
    let rest = &raw[start..];
    let end = rest
        .find("[end]")
        .or_else(|| rest.find("\n["))
        .unwrap_or(rest.len());
    let text = rest[..end].trim().trim_start_matches(':').trim();
    (!text.is_empty()).then(|| text.to_string())
}

/// Drops a leading speaker label and `[Strategy: ...]` tag.
pub fn strip_strategy_tag(raw: &str, labels: &[&str]) -> String {
    let t = strip_speaker_label(raw, labels);
    let lower = t.to_lowercase();
    if lower.starts_with("[strategy") {
        if let Some(end) = t.find(']') {
            return t[end + 1..].trim().to_string();
        }
    }
    t
}

pub fn run_baseline(
    kind: BaselineKind,
    templates: &TaskTemplates,
    history: &DialogueHistory,
    ctx: &BaselineContext,
    gateway: &Gateway,
) -> Result<Utterance> {
    let task = templates.task;
    let labels = SpeakerLabels::for_task(task);
    let (template, prompt_kind, render_labels) = match kind {
        BaselineKind::Gpt35 => (
            &templates.baselines.plain,
            PromptKind::BaselinePlain,
            labels.clone(),
        ),
        BaselineKind::Gpt35Cot => (
            &templates.baselines.cot,
            PromptKind::BaselineCot,
            labels.clone(),
        ),
        BaselineKind::Mixinit => (
            &templates.baselines.mixinit,
            PromptKind::BaselineMixInit,
            match task {
                Task::Esc => SpeakerLabels::new("Therapist", "Patient"),
                Task::Persuasion => labels.clone(),
            },
        ),
    };
    let rendered = render_history(history, &render_labels)?;
    let prompt = template.render(&[
        ("history", &rendered),
        ("emotion", &ctx.emotion),
        ("problem_type", &ctx.problem_type),
        ("problem", &ctx.problem),
    ])?;
    let raw = gateway.chat_complete(&ChatRequest::new(prompt, prompt_kind))?;
    let text = match kind {
        BaselineKind::Gpt35 => strip_speaker_label(&raw, &[&labels.system]),
        BaselineKind::Gpt35Cot => match extract_cot_response(&raw) {
            Some(t) => strip_speaker_label(&t, &[&labels.system]),
            None => {
                tracing::warn!(
                    "no [Response] segment in chain-of-thought output; using it verbatim"
                );
                raw.trim().to_string()
            }
        },
        BaselineKind::Mixinit => strip_strategy_tag(&raw, &[&render_labels.system, &labels.system]),
    };
    if text.is_empty() {
        return Err(Error::EmptyGeneration);
    }
    let idx = history.last().map_or(0, |u| u.turn_index + 1);
    Utterance::new(Speaker::System, text, idx)
}

/// A system under evaluation.
pub trait Responder: Sync {
    fn name(&self) -> String;
    fn respond(&self, history: &DialogueHistory) -> Result<(Utterance, Option<TurnTrace>)>;
}

impl Responder for TurnPipeline {
    fn name(&self) -> String {
        "cooper".into()
    }

    fn respond(&self, history: &DialogueHistory) -> Result<(Utterance, Option<TurnTrace>)> {
        let trace = self.run_turn(history)?;
        Ok((trace.utterance.clone(), Some(trace)))
    }
}

pub struct BaselineResponder {
    pub kind: BaselineKind,
    pub templates: TaskTemplates,
    pub context: BaselineContext,
    pub gateway: Gateway,
}

impl Responder for BaselineResponder {
    fn name(&self) -> String {
        self.kind.to_string()
    }

    fn respond(&self, history: &DialogueHistory) -> Result<(Utterance, Option<TurnTrace>)> {
        Ok((
            run_baseline(
                self.kind,
                &self.templates,
                history,
                &self.context,
                &self.gateway,
            )?,
            None,
        ))
    }
}

/// Seeker side of a session.
pub struct Seeker<'a> {
    pub templates: &'a TaskTemplates,
    pub gateway: &'a Gateway,
}

/// Alternates seeker and system turns, starting with the seeker, until a
/// termination rule fires. A failing call ends the session as aborted
/// with the turns produced so far.
pub fn run_interactive_session(
    system: &dyn Responder,
    seeker: &Seeker<'_>,
    problem: &str,
    max_rounds: usize,
) -> SessionTranscript {
    let mut history = DialogueHistory::new(seeker.templates.task);
    let mut traces = Vec::new();
    let finish = |history: &DialogueHistory, traces, reason, error| SessionTranscript {
        system: system.name(),
        problem_summary: problem.to_string(),
        turns: history.utterances().to_vec(),
        termination_reason: reason,
        traces,
        error,
    };
    loop {
        let user = match simulate_seeker(seeker.templates, problem, &history, seeker.gateway) {
            Ok(u) => u,
            Err(e) => {
                return finish(
                    &history,
                    traces,
                    TerminationReason::Aborted,
                    Some(e.to_string()),
                )
            }
        };
        if let Err(e) = history.push_utterance(user) {
            return finish(
                &history,
                traces,
                TerminationReason::Aborted,
                Some(e.to_string()),
            );
        }
        if let Some(r) = should_terminate(history.utterances(), max_rounds) {
            return finish(&history, traces, r, None);
        }
        match system.respond(&history) {
            Ok((u, trace)) => {
                if let Err(e) = history.push_utterance(u) {
                    return finish(
                        &history,
                        traces,
                        TerminationReason::Aborted,
                        Some(e.to_string()),
                    );
                }
                traces.extend(trace);
            }
            Err(e) => {
                return finish(
                    &history,
                    traces,
                    TerminationReason::Aborted,
                    Some(e.to_string()),
                )
            }
        }
        if let Some(r) = should_terminate(history.utterances(), max_rounds) {
            return finish(&history, traces, r, None);
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::gateway::{FnChat, MockChat};
    use crate::pipeline::mock_pipeline;

    fn utt(s: Speaker, t: &str, i: usize) -> Utterance {
        Utterance::new(s, t, i).unwrap()
    }

    #[test]
    fn termination_rules() {
        let same = vec![
            utt(Speaker::User, "hi", 0),
            utt(Speaker::System, "How are you?", 1),
            utt(Speaker::User, "bad", 2),
            utt(Speaker::System, "How are you?", 3),
        ];
        assert_eq!(
            should_terminate(&same, 10),
            Some(TerminationReason::Repetition)
        );
        let fresh = vec![
            utt(Speaker::User, "hi", 0),
            utt(Speaker::System, "How are you?", 1),
            utt(Speaker::User, "Not great honestly", 2),
            utt(Speaker::System, "What happened this week?", 3),
        ];
        assert_eq!(should_terminate(&fresh, 10), None);
        assert_eq!(
            should_terminate(&fresh, 2),
            Some(TerminationReason::MaxRounds)
        );
    }

    #[test]
    fn seeker_strips_label() {
        let t = TaskTemplates::builtin(Task::Esc);
        let g = Gateway::mock(8);
        let u = simulate_seeker(&t, "lost job", &DialogueHistory::new(Task::Esc), &g).unwrap();
        assert!(!u.text.starts_with("Seeker:"));
        assert_eq!(u.speaker, Speaker::User);
        assert_eq!(u.turn_index, 0);
        let again = simulate_seeker(&t, "lost job", &DialogueHistory::new(Task::Esc), &g).unwrap();
        assert_eq!(u, again);
    }

    #[test]
    fn baseline_extraction() {
        let raw = "[start]\n[Progression Analysis] x\n[Determine Aspect] Comforting\n[Response] I hear you.\n[end]";
        assert_eq!(extract_cot_response(raw).as_deref(), Some("I hear you."));
        assert_eq!(
            strip_strategy_tag(
                "Therapist: [Strategy: Question] How can I help you today?",
                &["Therapist"]
            ),
            "How can I help you today?"
        );
        assert_eq!(
            strip_strategy_tag(
                "[Strategy: Question] How can I help you today?",
                &["Therapist"]
            ),
            "How can I help you today?"
        );
    }

    fn run(kind: BaselineKind, reply: &'static str) -> String {
        let g = Gateway::mock(8).with_chat(Arc::new(FnChat::new(move |_| Ok(reply.into()))));
        let mut h = DialogueHistory::new(Task::Esc);
        h.push(Speaker::User, "hello").unwrap();
        run_baseline(
            kind,
            &TaskTemplates::builtin(Task::Esc),
            &h,
            &BaselineContext::default(),
            &g,
        )
        .unwrap()
        .text
    }

    #[test]
    fn baselines() {
        assert_eq!(
            run(BaselineKind::Gpt35, "Sure, tell me more."),
            "Sure, tell me more."
        );
        assert_eq!(
            run(BaselineKind::Gpt35Cot, "[start]\n[Response] Okay.\n[end]"),
            "Okay."
        );
        assert_eq!(
            run(BaselineKind::Gpt35Cot, "no markers here"),
            "no markers here"
        );
        assert_eq!(
            run(
                BaselineKind::Mixinit,
                "Therapist: [Strategy: Question] How can I help you today?"
            ),
            "How can I help you today?"
        );
    }

    #[test]
    fn session_caps_at_max_rounds() {
        let p = mock_pipeline(Task::Esc, 8).unwrap();
        let t = TaskTemplates::builtin(Task::Esc);
        let g = Gateway::mock(8);
        let s = run_interactive_session(
            &p,
            &Seeker {
                templates: &t,
                gateway: &g,
            },
            "lost job",
            3,
        );
        assert!(s.system_rounds() <= 3);
        assert!(matches!(
            s.termination_reason,
            TerminationReason::MaxRounds | TerminationReason::Repetition
        ));
        assert_eq!(s.traces.len(), s.system_rounds());
    }

    #[test]
    fn forced_repetition() {
        let p = mock_pipeline(Task::Esc, 8).unwrap();
        let t = TaskTemplates::builtin(Task::Esc);
        let g = Gateway::mock(8).with_chat(Arc::new(
            MockChat::default().with_canned(PromptKind::Seeker, "Seeker: I just feel stuck."),
        ));
        let s = run_interactive_session(
            &p,
            &Seeker {
                templates: &t,
                gateway: &g,
            },
            "x",
            10,
        );
        assert_eq!(s.termination_reason, TerminationReason::Repetition);
        assert_eq!(s.system_rounds(), 1);
    }

    #[test]
    fn aborted_keeps_partial_turns() {
        let p = mock_pipeline(Task::Esc, 8).unwrap();
        let t = TaskTemplates::builtin(Task::Esc);
        let g = Gateway::mock(8);
        let broken = BaselineResponder {
            kind: BaselineKind::Gpt35,
            templates: t.clone(),
            context: BaselineContext::default(),
            gateway: Gateway::mock(8).with_chat(Arc::new(FnChat::new(|_| {
                Err(Error::ProviderRejected {
                    status: 400,
                    body: String::new(),
                })
            }))),
        };
        let s = run_interactive_session(
            &broken,
            &Seeker {
                templates: &t,
                gateway: &g,
            },
            "x",
            10,
        );
        assert_eq!(s.termination_reason, TerminationReason::Aborted);
        assert_eq!(s.turns.len(), 1);
        assert!(s.error.is_some());
        drop(p);
    }
}
