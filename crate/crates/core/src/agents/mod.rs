//! Specialized agents: one state tracker and one aspect promoter per goal
//! aspect, both prompt programs over the gateway.

mod template;

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dialogue::{
    render_history, AspectConfig, AspectId, DialogueHistory, StateSummary, TopicCandidate,
};
use crate::error::{Error, Result};
use crate::gateway::{ChatRequest, Gateway, PromptKind};

pub use template::{
    aspect_names, count_word, AspectTemplates, BaselineTemplates, PromptTemplate, TaskTemplates,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutput {
    pub aspect_id: AspectId,
    pub summary: StateSummary,
    pub candidates: Vec<TopicCandidate>,
    pub raw_promoter_text: String,
}

/// Summarizes the current state of one aspect and embeds the summary.
pub fn track_state(
    aspect: &AspectConfig,
    history: &DialogueHistory,
    gateway: &Gateway,
) -> Result<StateSummary> {
    let run = || -> Result<StateSummary> {
        let rendered = render_history(history, &aspect.speaker_labels)?;
        let prompt = aspect.tracker_template.render(&[
            ("history", &rendered),
            ("m", &count_word(aspect.candidate_count)),
        ])?;
        let text = gateway
            .chat_complete(&ChatRequest::new(prompt, PromptKind::StateTracking))?
            .trim()
            .to_string();
        let embedding = gateway.embed_text(&text)?.into_vec();
        Ok(StateSummary {
            aspect_id: aspect.aspect_id,
            text,
            embedding: Some(embedding),
        })
    };
    run().map_err(|e| e.for_aspect(aspect.aspect_id))
}

/// Asks the promoter for topic candidates and parses its numbered list.
/// At most `candidate_count` items are kept, in listed order.
pub fn promote_aspect(
    aspect: &AspectConfig,
    history: &DialogueHistory,
    summary: &StateSummary,
    gateway: &Gateway,
) -> Result<(Vec<TopicCandidate>, String)> {
    let run = || -> Result<(Vec<TopicCandidate>, String)> {
        if summary.aspect_id != aspect.aspect_id {
            return Err(Error::invalid(format!(
                "summary belongs to aspect {}, promoter is aspect {}",
                summary.aspect_id, aspect.aspect_id
            )));
        }
        let rendered = render_history(history, &aspect.speaker_labels)?;
        let prompt = aspect.promoter_template.render(&[
            ("history", &rendered),
            ("m", &count_word(aspect.candidate_count)),
            ("summary", &summary.text),
        ])?;
        let raw = gateway.chat_complete(&ChatRequest::new(prompt, PromptKind::AspectPromotion))?;
        let items = parse_numbered_list(&raw);
        if items.is_empty() {
            return Err(Error::UnparseableCandidates {
                aspect_id: aspect.aspect_id,
            });
        }
        let candidates = items
            .iter()
            .take(aspect.candidate_count)
            .enumerate()
            .map(|(j, text)| TopicCandidate::new(aspect.aspect_id, j + 1, text))
            .collect();
        Ok((candidates, raw))
    };
    run().map_err(|e| e.for_aspect(aspect.aspect_id))
}

fn item_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:[-*•]\s*)?\d{1,3}[.)]\s*(.+?)\s*$").expect("valid"))
}

fn group_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s*(\[[^\]]*\]|\([^)]*\))").expect("valid"))
}

const STRATEGY_WORDS: [&str; 16] = [
    "strategy",
    "reflection of feelings",
    "sharing personal",
    "self-disclosure",
    "affirmation",
    "reassurance",
    "restatement",
    "paraphras",
    "credibility",
    "donation information",
    "logical appeal",
    "emotion appeal",
    "emotional appeal",
    "foot-in-the-door",
    "self-modeling",
    "personal story",
];

fn strip_strategy_tags(item: &str) -> String {
    let stripped = group_pattern().replace_all(item, |caps: &regex::Captures<'_>| {
        let group = &caps[1];
        let inner = group[1..group.len() - 1].to_lowercase();
        if group.starts_with('[') || STRATEGY_WORDS.iter().any(|w| inner.contains(w)) {
            String::new()
        } else {
            caps[0].to_string()
        }
    });
    stripped
        .trim()
        .trim_matches(|c: char| c == '"' || c == '-' || c == ':' || c == '–')
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Extracts items from lines that start with `<n>.` or `<n>)`, optionally
/// after a bullet dash. Strategy tags in brackets or parentheses are removed.
pub fn parse_numbered_list(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|line| item_pattern().captures(line))
        .map(|caps| strip_strategy_tags(&caps[1]))
        .filter(|s| !s.is_empty())
        .collect()
}

/// Runs every agent for one turn. Agents execute concurrently; inside an
/// agent the tracker strictly precedes the promoter. Output is ordered by
/// aspect id; the first failing aspect (by id) fails the turn.
pub fn run_all_agents(
    aspects: &[AspectConfig],
    history: &DialogueHistory,
    gateway: &Gateway,
) -> Result<Vec<AgentOutput>> {
    if aspects.is_empty() {
        return Err(Error::invalid("at least one aspect is required"));
    }
    let run_one = |aspect: &AspectConfig| -> Result<AgentOutput> {
        let summary = track_state(aspect, history, gateway)?;
        let (candidates, raw) = promote_aspect(aspect, history, &summary, gateway)?;
        Ok(AgentOutput {
            aspect_id: aspect.aspect_id,
            summary,
            candidates,
            raw_promoter_text: raw,
        })
    };
    let results: Vec<Result<AgentOutput>> = std::thread::scope(|s| {
        let handles: Vec<_> = aspects
            .iter()
            .map(|a| s.spawn(move || run_one(a)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("agent thread panicked"))
            .collect()
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use std::sync::{Arc, Mutex};

    use super::*;
    use crate::dialogue::{Speaker, Task};
    use crate::gateway::FnChat;
    use crate::profile::TaskProfile;

    fn history(task: Task) -> DialogueHistory {
        let mut h = DialogueHistory::new(task);
        h.push(Speaker::User, "I feel overwhelmed at work.")
            .unwrap();
        h
    }

    #[test]
    fn parses_simple_list() {
        assert_eq!(
            parse_numbered_list("1. ask about work\n2. ask about family"),
            vec!["ask about work", "ask about family"]
        );
    }

    #[test]
    fn strips_strategy_tag() {
        assert_eq!(
            parse_numbered_list("1) X (strategy: reflection of feelings)"),
            vec!["X"]
        );
        assert_eq!(
            parse_numbered_list("- 2. [Affirmation] You are doing your best"),
            vec!["You are doing your best"]
        );
        assert_eq!(
            parse_numbered_list("3. Ask how they slept (e.g. last night)"),
            vec!["Ask how they slept (e.g. last night)"]
        );
    }

    #[test]
    fn no_list_gives_empty() {
        assert!(parse_numbered_list("no list here").is_empty());
        assert!(parse_numbered_list("").is_empty());
    }

    #[test]
    fn exploration_tracker_prompt_is_verbatim() {
        let profile = TaskProfile::builtin(Task::Esc);
        let seen = Arc::new(Mutex::new(String::new()));
        let s = seen.clone();
        let g = Gateway::mock(8).with_chat(Arc::new(FnChat::new(move |r| {
            *s.lock().unwrap() = r.prompt.clone();
            Ok("summary".into())
        })));
        track_state(&profile.aspects[0], &history(Task::Esc), &g).unwrap();
        let prompt = seen.lock().unwrap().clone();
        assert!(prompt.starts_with("Seeker: I feel overwhelmed at work."));
        assert!(prompt.contains("Summarize the seeker's experience"));
    }

    #[test]
    fn action_tracker_reports_no_suggestions_yet() {
        let profile = TaskProfile::builtin(Task::Esc);
        let g = Gateway::mock(8);
        let s = track_state(&profile.aspects[2], &history(Task::Esc), &g).unwrap();
        assert!(s.text.contains("No suggestions have been given yet"));
        assert_eq!(s.embedding.as_ref().unwrap().len(), 8);
    }

    #[test]
    fn tracker_is_deterministic_on_mock() {
        let profile = TaskProfile::builtin(Task::Esc);
        let g = Gateway::mock(8);
        let a = track_state(&profile.aspects[0], &history(Task::Esc), &g).unwrap();
        let b = track_state(&profile.aspects[0], &history(Task::Esc), &g).unwrap();
        assert_eq!(a, b);
    }

    fn promote_with(completion: &'static str, m: usize) -> Result<Vec<TopicCandidate>> {
        let mut profile = TaskProfile::builtin(Task::Esc);
        profile.aspects[0].candidate_count = m;
        let g = Gateway::mock(8).with_chat(Arc::new(FnChat::new(move |_| Ok(completion.into()))));
        let summary = StateSummary {
            aspect_id: 1,
            text: "s".into(),
            embedding: None,
        };
        promote_aspect(&profile.aspects[0], &history(Task::Esc), &summary, &g).map(|(c, _)| c)
    }

    #[test]
    fn promoter_parses_m_items() {
        let c = promote_with("1. A\n2. B\n3. C\n4. D", 4).unwrap();
        assert_eq!(c.len(), 4);
        assert!(c.iter().all(|c| c.aspect_id == 1));
        assert_eq!(
            c.iter().map(|c| c.candidate_index).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
    }

    #[test]
    fn promoter_tolerates_drift() {
        assert_eq!(promote_with("1. A\n2. B\n3. C", 4).unwrap().len(), 3);
    }

    #[test]
    fn promoter_keeps_first_m() {
        let c = promote_with("1. A\n2. B\n3. C\n4. D\n5. E", 3).unwrap();
        assert_eq!(
            c.iter().map(|c| c.text.as_str()).collect::<Vec<_>>(),
            vec!["A", "B", "C"]
        );
    }

    #[test]
    fn promoter_without_digits_fails() {
        let err = promote_with("just some prose", 4).unwrap_err();
        assert_eq!(err.code(), "unparseable_candidates");
        assert!(matches!(err, Error::Agent { aspect_id: 1, .. }));
    }

    #[test]
    fn esc_yields_up_to_twelve_candidates() {
        let profile = TaskProfile::builtin(Task::Esc);
        let out = run_all_agents(&profile.aspects, &history(Task::Esc), &Gateway::mock(8)).unwrap();
        assert_eq!(out.len(), 3);
        let total: usize = out.iter().map(|o| o.candidates.len()).sum();
        assert!(total <= 12 && total >= 3);
        for o in &out {
            assert!(o.candidates.iter().all(|c| c.aspect_id == o.aspect_id));
            assert_eq!(o.summary.aspect_id, o.aspect_id);
        }
    }

    #[test]
    fn persuasion_yields_up_to_nine_candidates() {
        let profile = TaskProfile::builtin(Task::Persuasion);
        let out = run_all_agents(
            &profile.aspects,
            &history(Task::Persuasion),
            &Gateway::mock(8),
        )
        .unwrap();
        let total: usize = out.iter().map(|o| o.candidates.len()).sum();
        assert_eq!(total, 9);
    }

    #[test]
    fn single_aspect_config() {
        let profile = TaskProfile::builtin(Task::Esc);
        let out = run_all_agents(
            &profile.aspects[..1],
            &history(Task::Esc),
            &Gateway::mock(8),
        )
        .unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn tracker_precedes_promoter_within_each_agent() {
        let profile = TaskProfile::builtin(Task::Esc);
        let log = Arc::new(Mutex::new(Vec::<String>::new()));
        let l = log.clone();
        let g = Gateway::mock(8).with_chat(Arc::new(FnChat::new(move |r| {
            l.lock().unwrap().push(r.prompt.clone());
            Ok(match r.kind {
                PromptKind::StateTracking => "state".into(),
                _ => "1. a\n2. b".into(),
            })
        })));
        let h = history(Task::Esc);
        run_all_agents(&profile.aspects, &h, &g).unwrap();
        let log = log.lock().unwrap();
        assert_eq!(log.len(), 6);
        for aspect in &profile.aspects {
            let rendered = render_history(&h, &aspect.speaker_labels).unwrap();
            let m = count_word(aspect.candidate_count);
            let vars = [
                ("history", rendered.as_str()),
                ("m", m.as_str()),
                ("summary", "state"),
            ];
            let tracker = aspect.tracker_template.render(&vars[..2]).unwrap();
            let promoter = aspect.promoter_template.render(&vars).unwrap();
            let t = log.iter().position(|p| *p == tracker).unwrap();
            let p = log.iter().position(|p| *p == promoter).unwrap();
            assert!(t < p);
        }
    }

    #[test]
    fn agent_failure_is_attributed() {
        let profile = TaskProfile::builtin(Task::Esc);
        let g = Gateway::mock(8).with_chat(Arc::new(FnChat::new(|r| {
            if r.prompt.contains("List four suggestions") {
                Ok("nothing numbered".into())
            } else {
                Ok("1. fine".into())
            }
        })));
        let err = run_all_agents(&profile.aspects, &history(Task::Esc), &g).unwrap_err();
        assert!(matches!(err, Error::Agent { aspect_id: 3, .. }));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn numbered_render_round_trips(items in proptest::collection::vec("[A-Za-z][A-Za-z ,']{0,30}[A-Za-z]", 1..=20)) {
                let text = items.iter().enumerate()
                    .map(|(i, s)| format!("{}. {}", i + 1, s))
                    .collect::<Vec<_>>()
                    .join("\n");
                let parsed = parse_numbered_list(&text);
                prop_assert_eq!(parsed.len(), items.len());
            }
        }
    }
}
