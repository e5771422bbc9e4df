use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dialogue::{AspectId, Task};

/// Annotated dialogue strategy → goal aspects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyMap {
    pub task: Task,
    entries: BTreeMap<String, BTreeSet<AspectId>>,
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

const ESC: &[(&str, AspectId)] = &[
    ("Question", 1),
    ("Reflection of feelings", 2),
    ("Affirmation and Reassurance", 2),
    ("Restatement or Paraphrasing", 2),
    ("Self-disclosure", 2),
    ("Providing Suggestions or Information", 3),
    // The public ESConv release splits the last row into two labels.
    ("Providing Suggestions", 3),
    ("Information", 3),
];

const P4G: &[(&str, AspectId)] = &[
    ("greeting", 1),
    ("personal-related-inquiry", 1),
    ("neutral-to-inquiry", 1),
    ("source-related-inquiry", 1),
    ("task-related-inquiry", 1),
    ("praise-user", 1),
    ("off-task", 1),
    ("credibility-appeal", 2),
    ("self-modeling", 2),
    ("logical-appeal", 2),
    ("foot-in-the-door", 2),
    ("donation-information", 2),
    ("emotion-appeal", 2),
    ("personal-story", 2),
    ("proposition-of-donation", 3),
    ("ask-donation-amount", 3),
    ("ask-not-donate-reason", 3),
    ("ask-donate-more", 3),
    ("confirm-donation", 3),
];

impl StrategyMap {
    pub fn builtin(task: Task) -> Self {
        let table = match task {
            Task::Esc => ESC,
            Task::Persuasion => P4G,
        };
        let mut entries: BTreeMap<String, BTreeSet<AspectId>> = BTreeMap::new();
        for (name, aspect) in table {
            entries.entry(normalize(name)).or_default().insert(*aspect);
        }
        Self { task, entries }
    }

    pub fn insert(&mut self, strategy: &str, aspects: impl IntoIterator<Item = AspectId>) {
        self.entries
            .entry(normalize(strategy))
            .or_default()
            .extend(aspects);
    }

    /// Aspects promoted by one strategy; unknown strategies map to the
    /// empty set with a warning.
    pub fn strategy_to_aspects(&self, strategy: &str) -> BTreeSet<AspectId> {
        match self.entries.get(&normalize(strategy)) {
            Some(s) => s.clone(),
            None => {
                tracing::warn!(strategy, task = %self.task, "unknown strategy");
                BTreeSet::new()
            }
        }
    }

    /// Union over all strategies annotated on one utterance.
    pub fn aspects_for(&self, strategies: &[String]) -> BTreeSet<AspectId> {
        strategies
            .iter()
            .flat_map(|s| self.strategy_to_aspects(s))
            .collect()
    }

    pub fn strategies_for(&self, aspect: AspectId) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, a)| a.contains(&aspect))
            .map(|(s, _)| s.as_str())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_lookups() {
        let esc = StrategyMap::builtin(Task::Esc);
        assert_eq!(esc.strategy_to_aspects("Question"), BTreeSet::from([1]));
        assert_eq!(
            esc.strategy_to_aspects("  reflection OF feelings "),
            BTreeSet::from([2])
        );
        assert_eq!(
            esc.strategy_to_aspects("Providing Suggestions"),
            BTreeSet::from([3])
        );
        let p4g = StrategyMap::builtin(Task::Persuasion);
        assert_eq!(
            p4g.strategy_to_aspects("self-modeling"),
            BTreeSet::from([2])
        );
        assert!(p4g.strategy_to_aspects("unknown-tag").is_empty());
    }

    #[test]
    fn every_aspect_has_a_strategy() {
        for task in Task::all() {
            let m = StrategyMap::builtin(task);
            for a in 1..=3 {
                assert!(!m.strategies_for(a).is_empty());
            }
        }
    }

    #[test]
    fn union_of_strategies() {
        let esc = StrategyMap::builtin(Task::Esc);
        let s = esc.aspects_for(&["Question".into(), "Self-disclosure".into(), "Others".into()]);
        assert_eq!(s, BTreeSet::from([1, 2]));
    }
}
